#include "penning/modes.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>

#include "penning/constants.hpp"
#include "penning/errors.hpp"

namespace penning {

namespace {

void check_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw ConfigError(std::string("non-finite value: ") + what);
}

// Central difference with Richardson refinement (Ridders): shrink the step
// until extrapolated estimates stop improving. f must be smooth near x.
template <typename F>
double refined_central_derivative(F f, double x, double h0) {
    constexpr int max_rows = 10;
    constexpr double shrink = 2.0;
    double table[max_rows][max_rows];
    double best = std::numeric_limits<double>::quiet_NaN();
    double best_err = std::numeric_limits<double>::infinity();
    double h = h0;
    for (int i = 0; i < max_rows; ++i) {
        table[i][0] = (f(x + h) - f(x - h)) / (2.0 * h);
        double fac = shrink * shrink;
        for (int j = 1; j <= i; ++j) {
            table[i][j] = (fac * table[i][j - 1] - table[i - 1][j - 1]) / (fac - 1.0);
            fac *= shrink * shrink;
            const double err = std::abs(table[i][j] - table[i][j - 1]) +
                               std::abs(table[i][j] - table[i - 1][j - 1]);
            if (err <= best_err) {
                best_err = err;
                best = table[i][j];
            }
        }
        // Higher rows only add roundoff once the tableau has converged.
        if (i > 2 && std::abs(table[i][i] - table[i - 1][i - 1]) >= 2.0 * best_err) break;
        h /= shrink;
    }
    return best;
}

} // namespace

CoolingCoefficients make_cooling(double alpha, double beta, const ModeSet& modes,
                                 double validity_threshold) {
    check_finite(alpha, "alpha");
    check_finite(beta, "beta");
    if (!(validity_threshold > 0.0))
        throw ConfigError("cooling: validity threshold must be positive");
    CoolingCoefficients c;
    c.alpha = alpha;
    c.beta = beta;
    c.alpha_ratio = std::abs(alpha) / (modes.omega_z * modes.omega_z);
    c.beta_ratio = std::abs(beta) / modes.omega_c;
    c.alpha_small = c.alpha_ratio < validity_threshold;
    c.beta_small = c.beta_ratio < validity_threshold;
    return c;
}

CoolingCoefficients beam_linearization(const LaserBeam& beam, const IonSpecies& ion,
                                       const ModeSet& modes, double validity_threshold) {
    validate(beam);
    const double k = beam.wavenumber();
    const double hbar_k = constants::hbar * k;
    const double m = ion.mass_kg();

    // F(y, xdot) = hbar k S(y, xdot); matching F = -2 alpha m y - 2 beta m xdot.
    auto force_of_y = [&](double y) { return hbar_k * scattering_rate(beam, y, 0.0); };
    auto force_of_v = [&](double v) { return hbar_k * scattering_rate(beam, 0.0, v); };

    // Step scales: a fraction of the waist, and the velocity whose Doppler
    // shift is a fraction of the linewidth.
    const double df_dy = refined_central_derivative(force_of_y, 0.0, 0.25 * beam.waist_m);
    const double df_dv =
        refined_central_derivative(force_of_v, 0.0, 0.25 * beam.linewidth / k);

    const double alpha = -df_dy / (2.0 * m);
    const double beta = -df_dv / (2.0 * m);
    return make_cooling(alpha, beta, modes, validity_threshold);
}

UnaxializedRates unaxialized_rates(const CoolingCoefficients& cool, const ModeSet& modes) {
    check_finite(cool.alpha, "alpha");
    check_finite(cool.beta, "beta");
    UnaxializedRates r;
    r.gamma_cyclotron = (cool.beta * modes.omega_cp - cool.alpha) / (2.0 * modes.omega_1);
    r.gamma_magnetron = (cool.alpha - cool.beta * modes.omega_m) / (2.0 * modes.omega_1);
    return r;
}

CoolingWindow cooling_window(const CoolingCoefficients& cool, const ModeSet& modes) {
    if (cool.beta == 0.0)
        throw ConfigError("cooling window: alpha/beta undefined for beta = 0");
    CoolingWindow w;
    w.lower = modes.omega_m;
    w.upper = modes.omega_cp;
    w.ratio = cool.alpha / cool.beta;
    w.both_cooled = cool.beta > 0.0 && w.ratio > w.lower && w.ratio < w.upper;
    return w;
}

AxializationDrive AxializationDrive::from_epsilon(double epsilon, double delta,
                                                  const ModeSet& modes) {
    check_finite(epsilon, "epsilon");
    check_finite(delta, "delta");
    if (epsilon < 0.0) throw ConfigError("drive: epsilon must be >= 0");
    AxializationDrive d;
    d.epsilon = epsilon;
    d.delta = delta;
    d.omega_a = modes.omega_c + 2.0 * delta;
    if (d.omega_a <= 0.0) throw ConfigError("drive: omega_a must be positive");
    return d;
}

AxializationDrive AxializationDrive::from_voltage(double v0_volts, double r0_m,
                                                  const IonSpecies& ion, double delta,
                                                  const ModeSet& modes) {
    check_finite(v0_volts, "V0");
    if (v0_volts < 0.0) throw ConfigError("drive: V0 must be >= 0");
    if (!(std::isfinite(r0_m) && r0_m > 0.0))
        throw ConfigError("drive: r0 must be positive");
    const double eps = ion.charge_coulomb() * v0_volts / (2.0 * ion.mass_kg() * r0_m * r0_m);
    AxializationDrive d = from_epsilon(eps, delta, modes);
    d.v0_volts = v0_volts;
    d.r0_m = r0_m;
    return d;
}

Regime regime_classify(const CoolingCoefficients& cool, const AxializationDrive& drive,
                       const ModeSet& modes, double k_threshold) {
    if (!(k_threshold > 1.0)) throw ConfigError("regime: threshold K must exceed 1");
    const double g = drive.epsilon / modes.omega_1; // coupling as a rate, s^-1
    const double m = (2.0 * cool.alpha - cool.beta * modes.omega_c) / (2.0 * modes.omega_1);
    const double g2 = g * g, m2 = m * m;
    if (g2 > k_threshold * m2) return Regime::strong;
    if (g2 < m2 / k_threshold) return Regime::weak;
    return Regime::intermediate;
}

const char* regime_name(Regime r) {
    switch (r) {
    case Regime::weak: return "weak";
    case Regime::intermediate: return "intermediate";
    case Regime::strong: return "strong";
    }
    return "?";
}

const DressedLine& DressedModeTable::line(bool near_magnetron, int branch) const {
    for (const auto& l : lines)
        if (l.near_magnetron == near_magnetron && l.branch == branch) return l;
    throw Error("dressed table: no such line");
}

DressedModeTable dressed_modes(const CoolingCoefficients& cool,
                               const AxializationDrive& drive, const ModeSet& modes) {
    const double w1 = modes.omega_1;
    const double delta = drive.delta;
    const double m_coeff = (2.0 * cool.alpha - cool.beta * modes.omega_c) / (2.0 * w1);
    const double n_coeff = delta * delta - 0.25 * m_coeff * m_coeff +
                           drive.epsilon * drive.epsilon / (4.0 * w1 * w1);

    // delta0^2 = (N + sqrt(N^2 + Delta^2 M^2)) / 2, computed without the
    // N < 0 cancellation: N + sqrt(N^2 + D) = D / (sqrt(N^2 + D) - N).
    const double dm = delta * m_coeff;
    const double d_term = dm * dm;
    const double root = std::sqrt(n_coeff * n_coeff + d_term);
    double sum;
    if (n_coeff >= 0.0)
        sum = n_coeff + root;
    else
        sum = (d_term > 0.0) ? d_term / (root - n_coeff) : 0.0;

    if (sum <= 0.0) {
        throw DegenerateBranchError(
            "dressed modes: delta0 = 0 (coincident branches at Delta M = 0 with N <= 0); "
            "the closed-form damping split does not apply here");
    }

    DressedModeTable t;
    t.m_coeff = m_coeff;
    t.n_coeff = n_coeff;
    t.delta0 = std::sqrt(0.5 * sum);
    t.gamma0[0] = 0.5 * cool.beta + dm / (2.0 * t.delta0);
    t.gamma0[1] = 0.5 * cool.beta - dm / (2.0 * t.delta0);

    const double base_cyc = modes.omega_cp + delta;
    const double base_mag = modes.omega_m + delta;
    t.lines[0] = {base_cyc + t.delta0, t.gamma0[0], +1, false};
    t.lines[1] = {base_cyc - t.delta0, t.gamma0[1], -1, false};
    t.lines[2] = {base_mag - t.delta0, t.gamma0[0], +1, true};
    t.lines[3] = {base_mag + t.delta0, t.gamma0[1], -1, true};
    return t;
}

double resonant_magnetron_rate(const CoolingCoefficients& cool, double epsilon,
                               const ModeSet& modes) {
    if (epsilon < 0.0)
        throw ConfigError("resonant rate: epsilon must be >= 0");
    const double w1 = modes.omega_1;
    const double m_coeff = (2.0 * cool.alpha - cool.beta * modes.omega_c) / (2.0 * w1);
    const double g = epsilon / w1;
    // On resonance the branch pair obeys (gamma - beta/2)^2 = (M^2 - g^2)/4:
    // below g = |M| the frequencies coincide and the rates split; above it
    // the split moves into the frequencies and both rates are beta/2. The
    // magnetron branch is the one continuous from gamma_magnetron =
    // (beta + M)/2 at g = 0 -- the less-damped one only when M < 0 (the
    // usual case, cyclotron cooled harder).
    const double sq = m_coeff * m_coeff - g * g;
    const double split = sq > 0.0 ? std::sqrt(sq) : 0.0;
    return 0.5 * (cool.beta + std::copysign(split, m_coeff));
}

AvoidedCrossingCurve avoided_crossing_curve(const CoolingCoefficients& cool,
                                            double epsilon, const ModeSet& modes,
                                            const std::vector<double>& omega_a_grid) {
    if (omega_a_grid.empty())
        throw ConfigError("avoided crossing: empty drive-frequency grid");
    AvoidedCrossingCurve c;
    c.omega_a.reserve(omega_a_grid.size());
    for (auto& v : c.mag_freq) v.reserve(omega_a_grid.size());

    // Candidate pair per family in (+, -) branch order; the running swap flag
    // keeps each output index a continuous curve through the crossing.
    bool swapped = false;
    for (std::size_t i = 0; i < omega_a_grid.size(); ++i) {
        const double wa = omega_a_grid[i];
        const double delta = 0.5 * (wa - modes.omega_c);
        const auto table =
            dressed_modes(cool, AxializationDrive::from_epsilon(epsilon, delta, modes), modes);

        const DressedLine mag[2] = {table.line(true, +1), table.line(true, -1)};
        const DressedLine cyc[2] = {table.line(false, +1), table.line(false, -1)};

        if (i == 0) {
            swapped = mag[0].omega > mag[1].omega; // branch 0 starts as the lower line
        } else {
            const auto cost = [&](bool sw) {
                const int a = sw ? 1 : 0, b = sw ? 0 : 1;
                return std::abs(mag[a].omega - c.mag_freq[0].back()) +
                       std::abs(mag[b].omega - c.mag_freq[1].back()) +
                       std::abs(cyc[a].omega - c.cyc_freq[0].back()) +
                       std::abs(cyc[b].omega - c.cyc_freq[1].back());
            };
            swapped = cost(true) < cost(false);
        }

        const int a = swapped ? 1 : 0, b = swapped ? 0 : 1;
        c.omega_a.push_back(wa);
        c.delta.push_back(delta);
        c.mag_freq[0].push_back(mag[a].omega);
        c.mag_freq[1].push_back(mag[b].omega);
        c.mag_gamma[0].push_back(mag[a].gamma);
        c.mag_gamma[1].push_back(mag[b].gamma);
        c.cyc_freq[0].push_back(cyc[a].omega);
        c.cyc_freq[1].push_back(cyc[b].omega);
        c.cyc_gamma[0].push_back(cyc[a].gamma);
        c.cyc_gamma[1].push_back(cyc[b].gamma);
    }
    return c;
}

std::array<ResonancePole, 4> response_poles(const CoolingCoefficients& cool,
                                            const AxializationDrive& drive,
                                            const ModeSet& modes) {
    using cplx = std::complex<double>;
    const double w1 = modes.omega_1;
    const double delta = drive.delta;
    const double w_r = 0.5 * drive.omega_a;
    const cplx i{0.0, 1.0};
    // Same P(nu) = -nu^2 + i a nu + c and Q = conj-coefficient twin as the
    // closed-form probe response; poles solve P Q = eps^2.
    const cplx a{cool.beta, 2.0 * delta};
    const cplx c{w1 * w1 - delta * delta, w_r * cool.beta - cool.alpha};
    const std::array<cplx, 5> coef = {
        cplx{1.0, 0.0},
        -i * (a + std::conj(a)),
        -(c + std::conj(c) + a * std::conj(a)),
        i * (a * std::conj(c) + std::conj(a) * c),
        c * std::conj(c) - cplx{drive.epsilon * drive.epsilon, 0.0},
    };
    const auto eval = [&coef](cplx z) {
        cplx v = coef[0];
        for (int k = 1; k < 5; ++k) v = v * z + coef[k];
        return v;
    };

    // Durand-Kerner from a generic spread at the natural scale omega_1; the
    // quartic's roots are well separated relative to that scale.
    std::array<cplx, 4> z;
    const cplx seed{0.4, 0.9};
    cplx p{1.0, 0.0};
    for (auto& zk : z) {
        p *= seed;
        zk = w1 * p;
    }
    const double tol = 1e-14 * w1;
    for (int it = 0; it < 200; ++it) {
        double moved = 0.0;
        for (int k = 0; k < 4; ++k) {
            cplx den{1.0, 0.0};
            for (int j = 0; j < 4; ++j)
                if (j != k) den *= z[k] - z[j];
            const cplx step = eval(z[k]) / den;
            z[k] -= step;
            moved = std::max(moved, std::abs(step));
        }
        if (moved < tol) break;
    }

    std::array<ResonancePole, 4> poles;
    for (int k = 0; k < 4; ++k) poles[k] = {w_r + z[k].real(), z[k].imag()};
    std::sort(poles.begin(), poles.end(),
              [](const ResonancePole& lhs, const ResonancePole& rhs) {
                  return lhs.omega < rhs.omega;
              });
    return poles;
}

} // namespace penning
