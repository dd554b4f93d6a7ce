#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace testsupport {

namespace {

cplx horner(const std::vector<cplx>& monic, cplx z) {
    // monic[k] multiplies z^k, leading 1 implied.
    cplx acc = 1.0;
    for (std::size_t k = monic.size(); k-- > 0;) acc = acc * z + monic[k];
    return acc;
}

} // namespace

std::vector<cplx> polynomial_roots(std::vector<cplx> coeffs) {
    while (!coeffs.empty() && std::abs(coeffs.back()) == 0.0) coeffs.pop_back();
    if (coeffs.size() < 2) throw std::invalid_argument("polynomial_roots: degree < 1");
    const std::size_t n = coeffs.size() - 1;
    const cplx lead = coeffs.back();
    std::vector<cplx> monic(n);
    for (std::size_t k = 0; k < n; ++k) monic[k] = coeffs[k] / lead;

    // Cauchy-style radius bound keeps the start ring around all roots.
    double radius = 0.0;
    for (std::size_t k = 0; k < n; ++k)
        radius = std::max(radius, std::pow(std::abs(monic[k]), 1.0 / double(n - k)));
    radius = 2.0 * radius + 1.0;

    std::vector<cplx> z(n);
    const cplx seed(0.4, 0.9); // standard non-real seed avoids symmetry traps
    cplx p = 1.0;
    for (std::size_t k = 0; k < n; ++k) {
        p *= seed;
        z[k] = radius * p / std::abs(p);
    }

    for (int iter = 0; iter < 500; ++iter) {
        double worst = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            cplx denom = 1.0;
            for (std::size_t j = 0; j < n; ++j)
                if (j != k) denom *= z[k] - z[j];
            const cplx step = horner(monic, z[k]) / denom;
            z[k] -= step;
            worst = std::max(worst, std::abs(step));
        }
        if (worst < 1e-14 * radius) break;
    }
    return z;
}

LineOracle dressed_lines_oracle(const penning::CoolingCoefficients& cool,
                                const penning::AxializationDrive& drive,
                                const penning::ModeSet& modes) {
    const double beta = cool.beta;
    const double alpha = cool.alpha;
    const double delta = drive.delta;
    const double w1 = modes.omega_1;
    const double wr = 0.5 * drive.omega_a;
    const double re_c = w1 * w1 - delta * delta;
    const double im_c = wr * beta - alpha;

    // P(w) Q(w) - eps^2 expanded into a monic quartic in w.
    std::vector<cplx> coeffs(5);
    coeffs[4] = 1.0;
    coeffs[3] = cplx(0.0, -2.0 * beta);
    coeffs[2] = -(2.0 * re_c + beta * beta + 4.0 * delta * delta);
    coeffs[1] = cplx(0.0, 2.0 * (beta * re_c + 2.0 * delta * im_c));
    coeffs[0] = re_c * re_c + im_c * im_c - drive.epsilon * drive.epsilon;

    const std::vector<cplx> roots = polynomial_roots(coeffs);
    LineOracle out;
    for (std::size_t k = 0; k < 4; ++k) out.lab[k] = roots[k] + wr;
    // Ascending lab frequency: mag lower, mag upper, cyc lower, cyc upper.
    std::sort(out.lab.begin(), out.lab.end(),
              [](cplx a, cplx b) { return a.real() < b.real(); });
    return out;
}

} // namespace testsupport
