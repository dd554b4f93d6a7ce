#include "penning/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "penning/constants.hpp"
#include "penning/errors.hpp"

namespace penning {

namespace {

// Cholesky solve of (A + lambda diag(A)) x = b for small dense SPD systems.
// Returns false when the factorization breaks down.
bool damped_cholesky_solve(const std::vector<double>& a_in, double lambda,
                           const std::vector<double>& b, std::size_t n,
                           std::vector<double>& x) {
    std::vector<double> a(a_in);
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, a[i * n + i]);
    if (!(max_diag > 0.0)) return false;
    const double floor = 1e-30 * max_diag;
    for (std::size_t i = 0; i < n; ++i)
        a[i * n + i] += lambda * std::max(a[i * n + i], floor);

    std::vector<double> l(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
            if (i == j) {
                if (!(s > 0.0)) return false;
                l[i * n + i] = std::sqrt(s);
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    x.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) { // forward
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * x[k];
        x[i] = s / l[i * n + i];
    }
    for (std::size_t ii = n; ii-- > 0;) { // backward
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l[k * n + ii] * x[k];
        x[ii] = s / l[ii * n + ii];
    }
    return true;
}

bool invert_spd(const std::vector<double>& a, std::size_t n, std::vector<double>& inv) {
    inv.assign(n * n, 0.0);
    std::vector<double> col(n), e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        if (!damped_cholesky_solve(a, 0.0, e, n, col)) return false;
        for (std::size_t i = 0; i < n; ++i) inv[i * n + j] = col[i];
    }
    return true;
}

} // namespace

FitResult least_squares(const FitProblem& problem) {
    const std::size_t n = problem.initial.size();
    const std::size_t m = problem.residual_size;
    if (n == 0 || m == 0) throw ConfigError("least_squares: empty problem");
    if (m < n) throw ConfigError("least_squares: fewer residuals than parameters");
    if (!problem.residual) throw ConfigError("least_squares: missing residual callback");
    if (!problem.weights.empty() && problem.weights.size() != m)
        throw ConfigError("least_squares: weights size mismatch");
    for (double w : problem.weights)
        if (!(w > 0.0)) throw ConfigError("least_squares: weights must be positive");
    const bool bounded = !problem.lower.empty() || !problem.upper.empty();
    if (bounded && (problem.lower.size() != n || problem.upper.size() != n))
        throw ConfigError("least_squares: bounds size mismatch");

    auto weight = [&](std::size_t i) {
        return problem.weights.empty() ? 1.0 : problem.weights[i];
    };
    auto scale = [&](std::size_t j) {
        return problem.scales.empty() ? 1.0 : problem.scales[j];
    };
    auto clip = [&](std::vector<double>& p) {
        if (!bounded) return;
        for (std::size_t j = 0; j < n; ++j)
            p[j] = std::min(std::max(p[j], problem.lower[j]), problem.upper[j]);
    };

    std::vector<double> p = problem.initial;
    clip(p);
    std::vector<double> r(m), r_trial(m), jac(m * n);

    auto cost_of = [&](const std::vector<double>& rr) {
        double c = 0.0;
        for (std::size_t i = 0; i < m; ++i) c += weight(i) * rr[i] * rr[i];
        return c;
    };

    problem.residual(p, r);
    double cost = cost_of(r);

    // Central-difference Jacobian, relative step 1e-6 against |p| or the
    // caller-provided typical scale.
    auto numeric_jacobian = [&](const std::vector<double>& pp) {
        std::vector<double> hi(m), lo(m), pt(pp);
        for (std::size_t j = 0; j < n; ++j) {
            const double h = 1e-6 * std::max(std::abs(pp[j]), scale(j));
            pt[j] = pp[j] + h;
            problem.residual(pt, hi);
            pt[j] = pp[j] - h;
            problem.residual(pt, lo);
            pt[j] = pp[j];
            const double inv = 1.0 / (2.0 * h);
            for (std::size_t i = 0; i < m; ++i) jac[i * n + j] = (hi[i] - lo[i]) * inv;
        }
    };

    double lambda = 1e-3;
    int iter = 0;
    bool converged = false;
    std::vector<double> a(n * n), g(n), step(n), p_trial(n);

    for (; iter < problem.max_iterations; ++iter) {
        if (problem.jacobian)
            problem.jacobian(p, jac);
        else
            numeric_jacobian(p);

        // Normal equations: A = J^T W J, g = J^T W r.
        std::fill(a.begin(), a.end(), 0.0);
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double w = weight(i);
            const double* ji = &jac[i * n];
            for (std::size_t j = 0; j < n; ++j) {
                g[j] += w * ji[j] * r[i];
                for (std::size_t k = j; k < n; ++k) a[j * n + k] += w * ji[j] * ji[k];
            }
        }
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = 0; k < j; ++k) a[j * n + k] = a[k * n + j];

        bool accepted = false;
        bool any_solved = false;
        while (lambda <= 1e14) {
            std::vector<double> neg_g(n);
            for (std::size_t j = 0; j < n; ++j) neg_g[j] = -g[j];
            if (!damped_cholesky_solve(a, lambda, neg_g, n, step)) {
                lambda *= 10.0;
                continue;
            }
            any_solved = true;
            for (std::size_t j = 0; j < n; ++j) p_trial[j] = p[j] + step[j];
            clip(p_trial);
            problem.residual(p_trial, r_trial);
            const double trial_cost = cost_of(r_trial);
            if (trial_cost <= cost) {
                const double decrease = cost - trial_cost;
                double step_scaled = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    step_scaled = std::max(step_scaled,
                                           std::abs(p_trial[j] - p[j]) /
                                               std::max(std::abs(p[j]), scale(j)));
                p = p_trial;
                r = r_trial;
                const double prev_cost = cost;
                cost = trial_cost;
                lambda = std::max(lambda / 3.0, 1e-14);
                accepted = true;
                if (step_scaled < problem.step_tol ||
                    decrease <= problem.cost_tol * std::max(prev_cost, 1e-300))
                    converged = true;
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            if (!any_solved)
                throw SingularJacobianError(
                    "least_squares: damped normal equations unsolvable");
            // No damping level could reduce the cost: numerical minimum.
            converged = true;
            break;
        }
        if (converged) break;
    }

    FitResult out;
    out.params = p;
    out.iterations = iter + 1;
    out.converged = converged;
    out.residual_norm = std::sqrt(cost);

    // Covariance from the linearized normal equations at the optimum, scaled
    // by the residual variance estimate.
    if (problem.jacobian)
        problem.jacobian(p, jac);
    else
        numeric_jacobian(p);
    std::fill(a.begin(), a.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double w = weight(i);
        const double* ji = &jac[i * n];
        for (std::size_t j = 0; j < n; ++j)
            for (std::size_t k = j; k < n; ++k) a[j * n + k] += w * ji[j] * ji[k];
    }
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t k = 0; k < j; ++k) a[j * n + k] = a[k * n + j];

    const double sigma2 = m > n ? cost / static_cast<double>(m - n) : 0.0;
    std::vector<double> inv;
    bool ok = invert_spd(a, n, inv);
    if (!ok) {
        // Unidentifiable direction (e.g. phase of a vanishing amplitude):
        // regularize progressively instead of failing the whole fit.
        double max_diag = 0.0;
        for (std::size_t j = 0; j < n; ++j) max_diag = std::max(max_diag, a[j * n + j]);
        for (double ridge = 1e-12; !ok && ridge <= 1e-3; ridge *= 100.0) {
            std::vector<double> ar(a);
            for (std::size_t j = 0; j < n; ++j)
                ar[j * n + j] += ridge * std::max(max_diag, 1e-300);
            ok = invert_spd(ar, n, inv);
        }
    }
    out.covariance.assign(n * n, std::numeric_limits<double>::quiet_NaN());
    if (ok)
        for (std::size_t i = 0; i < n * n; ++i) out.covariance[i] = sigma2 * inv[i];
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct CrossingModel {
    double lower(double wa, double wc, double wm, double g) const {
        const double d = 0.5 * (wa - wc);
        return wm + d - std::sqrt(d * d + 0.25 * g * g);
    }
    double upper(double wa, double wc, double wm, double g) const {
        const double d = 0.5 * (wa - wc);
        return wm + d + std::sqrt(d * d + 0.25 * g * g);
    }
};

} // namespace

CrossingFit fit_avoided_crossing(const std::vector<CrossingPointDatum>& data) {
    if (data.size() < 4)
        throw ScanFitError("crossing fit: need at least 4 points");
    for (const auto& d : data)
        if (!(std::isfinite(d.omega_a) && std::isfinite(d.omega)))
            throw ConfigError("crossing fit: non-finite data");

    // Group by drive frequency to find the minimum pair separation, which
    // seeds (omega_c, gap, omega_m).
    std::map<double, std::vector<double>> by_wa;
    for (const auto& d : data) by_wa[d.omega_a].push_back(d.omega);
    double init_wc = 0.0, init_gap = 0.0, init_wm = 0.0;
    double best_sep = std::numeric_limits<double>::infinity();
    for (const auto& [wa, vals] : by_wa) {
        if (vals.size() < 2) continue;
        const auto [lo, hi] = std::minmax_element(vals.begin(), vals.end());
        const double sep = *hi - *lo;
        if (sep < best_sep) {
            best_sep = sep;
            init_wc = wa;
            init_gap = sep;
            init_wm = 0.5 * (*hi + *lo); // Delta = 0 at the crossing
        }
    }
    if (!std::isfinite(best_sep)) {
        // No drive frequency carries both branches; fall back to data medians.
        init_wc = data.front().omega_a;
        init_wm = data.front().omega;
        init_gap = 0.0;
        for (const auto& d : data) init_gap = std::max(init_gap, std::abs(d.omega - init_wm));
    }

    CrossingModel model;
    auto residual = [&](const std::vector<double>& p, std::vector<double>& r) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double lo = model.lower(data[i].omega_a, p[0], p[1], p[2]);
            const double hi = model.upper(data[i].omega_a, p[0], p[1], p[2]);
            const double rl = data[i].omega - lo, rh = data[i].omega - hi;
            r[i] = std::abs(rl) <= std::abs(rh) ? rl : rh;
        }
    };

    FitProblem prob;
    prob.residual = residual;
    prob.residual_size = data.size();
    prob.initial = {init_wc, init_wm, std::abs(init_gap)};
    prob.scales = {std::abs(init_wc) + 1.0, std::abs(init_wm) + 1.0,
                   std::abs(init_gap) + 1e-3 * std::abs(init_wm) + 1.0};
    FitResult res = least_squares(prob);

    CrossingFit out;
    out.omega_c = res.params[0];
    out.omega_m = res.params[1];
    out.gap = std::abs(res.params[2]);
    out.covariance = res.covariance;
    out.residual_norm = res.residual_norm;
    out.converged = res.converged;

    // Final branch assignment; flag points that sit equally close to both
    // branches while the branches are genuinely separated there.
    const double rms = res.residual_norm / std::sqrt(static_cast<double>(data.size()));
    const double tol = std::max(3.0 * rms, 1e-9 * std::abs(out.omega_m));
    out.branch.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double lo = model.lower(data[i].omega_a, out.omega_c, out.omega_m, out.gap);
        const double hi = model.upper(data[i].omega_a, out.omega_c, out.omega_m, out.gap);
        const double rl = std::abs(data[i].omega - lo), rh = std::abs(data[i].omega - hi);
        out.branch[i] = rl <= rh ? 0 : 1;
        if (std::abs(rl - rh) <= tol && hi - lo > 2.0 * tol)
            throw BranchAssignmentError("crossing fit: point fits both branches");
    }
    return out;
}

PhaseCurveFit fit_phase_curve(std::vector<PhasePointDatum> data) {
    if (data.size() < 5)
        throw ScanFitError("phase curve fit needs at least 5 points");
    std::sort(data.begin(), data.end(),
              [](const PhasePointDatum& a, const PhasePointDatum& b) { return a.omega < b.omega; });
    for (std::size_t i = 1; i < data.size(); ++i)
        if (!(data[i].omega > data[i - 1].omega))
            throw ScanFitError("phase curve fit: probe frequencies must be distinct");

    // Unwrap by nearest 2 pi so the step is continuous.
    for (std::size_t i = 1; i < data.size(); ++i) {
        const double jump = data[i].phase - data[i - 1].phase;
        data[i].phase -= constants::two_pi * std::round(jump / constants::two_pi);
    }
    double lo = data[0].phase, hi = data[0].phase;
    for (const PhasePointDatum& d : data) {
        lo = std::min(lo, d.phase);
        hi = std::max(hi, d.phase);
    }

    PhaseCurveFit out;
    out.sign = data.back().phase >= data.front().phase ? +1 : -1;
    out.span = hi - lo;
    const double s = static_cast<double>(out.sign);

    // Seeds: centre where the unwrapped curve crosses its midpoint, width from
    // the quarter-phase points on either side.
    const double mid = 0.5 * (lo + hi);
    double omega0 = 0.5 * (data.front().omega + data.back().omega);
    for (std::size_t i = 1; i < data.size(); ++i) {
        const double a = data[i - 1].phase - mid, b = data[i].phase - mid;
        if (a == 0.0 || a * b < 0.0) {
            const double f = a / (a - b);
            omega0 = data[i - 1].omega + f * (data[i].omega - data[i - 1].omega);
            break;
        }
    }
    auto omega_at_phase = [&](double target, double fallback) {
        for (std::size_t i = 1; i < data.size(); ++i) {
            const double a = data[i - 1].phase - target, b = data[i].phase - target;
            if (a == 0.0 || a * b < 0.0)
                return data[i - 1].omega +
                       a / (a - b) * (data[i].omega - data[i - 1].omega);
        }
        return fallback;
    };
    const double omega_span = data.back().omega - data.front().omega;
    const double wq1 = omega_at_phase(mid - s * constants::pi / 4.0, omega0 - omega_span / 8.0);
    const double wq2 = omega_at_phase(mid + s * constants::pi / 4.0, omega0 + omega_span / 8.0);
    double gamma0 = 0.5 * std::abs(wq2 - wq1);
    if (!(gamma0 > 0.0))
        gamma0 = omega_span / 8.0;

    FitProblem prob;
    prob.residual_size = data.size();
    prob.initial = {omega0, gamma0, mid};
    prob.scales = {std::max(std::abs(omega0), omega_span), gamma0, 1.0};
    const double huge = 1e300;
    prob.lower = {-huge, 1e-9 * omega_span, -huge};
    prob.upper = {huge, huge, huge};
    prob.residual = [&data, s](const std::vector<double>& p, std::vector<double>& r) {
        for (std::size_t i = 0; i < data.size(); ++i)
            r[i] = data[i].phase - (p[2] + s * std::atan((data[i].omega - p[0]) / p[1]));
    };
    const FitResult res = least_squares(prob);

    out.omega0 = res.params[0];
    out.gamma = std::abs(res.params[1]);
    out.phi0 = res.params[2];
    out.covariance = res.covariance;
    out.residual_norm = res.residual_norm;
    out.converged = res.converged;
    out.unwrapped = std::move(data);
    return out;
}

} // namespace penning
