#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <vector>

#include "penning/constants.hpp"
#include "penning/errors.hpp"
#include "penning/fitting.hpp"

using namespace penning;

namespace {

constexpr double kTwoPi = constants::two_pi;

double wrap_pi(double phi) {
    phi = std::remainder(phi, kTwoPi);
    if (phi <= -constants::pi) phi += kTwoPi;
    return phi;
}

// y = A exp(-k t) + c sampled exactly; the workhorse recovery problem.
struct DecayData {
    std::vector<double> t, y;
    DecayData() {
        for (int i = 0; i < 40; ++i) {
            t.push_back(0.1 * i);
            y.push_back(2.5 * std::exp(-1.7 * t.back()) + 0.3);
        }
    }
    FitProblem problem(bool analytic) const {
        FitProblem p;
        p.residual_size = t.size();
        p.initial = {1.0, 1.0, 0.0};
        p.residual = [this](const std::vector<double>& q, std::vector<double>& r) {
            for (std::size_t i = 0; i < t.size(); ++i)
                r[i] = q[0] * std::exp(-q[1] * t[i]) + q[2] - y[i];
        };
        if (analytic) {
            p.jacobian = [this](const std::vector<double>& q, std::vector<double>& jac) {
                for (std::size_t i = 0; i < t.size(); ++i) {
                    const double e = std::exp(-q[1] * t[i]);
                    jac[i * 3 + 0] = e;
                    jac[i * 3 + 1] = -q[0] * t[i] * e;
                    jac[i * 3 + 2] = 1.0;
                }
            };
        }
        return p;
    }
};

} // namespace

TEST_CASE("damped least squares recovers an exponential decay") {
    const DecayData data;
    for (bool analytic : {false, true}) {
        CAPTURE(analytic);
        const FitResult res = least_squares(data.problem(analytic));
        REQUIRE(res.converged);
        CHECK(res.params[0] == doctest::Approx(2.5).epsilon(1e-9));
        CHECK(res.params[1] == doctest::Approx(1.7).epsilon(1e-9));
        CHECK(res.params[2] == doctest::Approx(0.3).epsilon(1e-9));
        CHECK(res.residual_norm < 1e-9);
        // Covariance: finite, symmetric, non-negative diagonal.
        REQUIRE(res.covariance.size() == 9);
        for (int i = 0; i < 3; ++i) {
            CHECK(std::isfinite(res.covariance[i * 3 + i]));
            CHECK(res.covariance[i * 3 + i] >= 0.0);
            for (int j = 0; j < 3; ++j)
                CHECK(res.covariance[i * 3 + j] ==
                      doctest::Approx(res.covariance[j * 3 + i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("analytic and differenced Jacobians land on the same optimum") {
    const DecayData data;
    const FitResult num = least_squares(data.problem(false));
    const FitResult ana = least_squares(data.problem(true));
    for (int j = 0; j < 3; ++j)
        CHECK(num.params[j] == doctest::Approx(ana.params[j]).epsilon(1e-9));
}

TEST_CASE("residual weights shift a constant fit to the weighted mean") {
    FitProblem p;
    p.residual_size = 20;
    p.initial = {0.5};
    p.weights.assign(20, 1.0);
    std::vector<double> y(20, 0.0);
    for (int i = 10; i < 20; ++i) {
        y[i] = 1.0;
        p.weights[i] = 9.0;
    }
    p.residual = [&y](const std::vector<double>& q, std::vector<double>& r) {
        for (std::size_t i = 0; i < y.size(); ++i) r[i] = q[0] - y[i];
    };
    const FitResult res = least_squares(p);
    CHECK(res.converged);
    CHECK(res.params[0] == doctest::Approx(0.9).epsilon(1e-12)); // 90/100
}

TEST_CASE("box bounds pin parameters at their limits") {
    FitProblem p;
    p.residual_size = 10;
    p.initial = {1.0};
    p.lower = {0.0};
    p.upper = {1.5};
    p.residual = [](const std::vector<double>& q, std::vector<double>& r) {
        for (int i = 0; i < 10; ++i) {
            const double t = 0.1 * (i + 1);
            r[i] = q[0] * t - 2.0 * t; // optimum a = 2 lies outside the box
        }
    };
    const FitResult res = least_squares(p);
    CHECK(res.params[0] == doctest::Approx(1.5).epsilon(1e-12));

    p.lower = {2.5};
    p.upper = {4.0};
    const FitResult res2 = least_squares(p);
    CHECK(res2.params[0] == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("flat residuals raise a singular-Jacobian error") {
    FitProblem p;
    p.residual_size = 2;
    p.initial = {1.0};
    p.residual = [](const std::vector<double>&, std::vector<double>& r) {
        r[0] = 1.0;
        r[1] = 2.0;
    };
    CHECK_THROWS_AS(least_squares(p), SingularJacobianError);
}

TEST_CASE("iteration cap reports non-convergence instead of throwing") {
    const DecayData data;
    FitProblem p = data.problem(false);
    p.max_iterations = 1;
    const FitResult res = least_squares(p);
    CHECK_FALSE(res.converged);
    for (double v : res.params) CHECK(std::isfinite(v));
}

TEST_CASE("malformed least-squares problems are rejected") {
    FitProblem p;
    CHECK_THROWS_AS(least_squares(p), ConfigError); // empty
    p.residual_size = 2;
    p.initial = {1.0, 2.0, 3.0};
    p.residual = [](const std::vector<double>&, std::vector<double>& r) {
        std::fill(r.begin(), r.end(), 0.0);
    };
    CHECK_THROWS_AS(least_squares(p), ConfigError); // m < n
    p.initial = {1.0};
    p.weights = {1.0, -1.0};
    CHECK_THROWS_AS(least_squares(p), ConfigError); // bad weight
}

// ---------------------------------------------------------------------------

namespace {

std::vector<CrossingPointDatum> crossing_data(double wc, double wm, double g) {
    std::vector<CrossingPointDatum> data;
    for (int i = -10; i <= 10; ++i) {
        const double wa = wc + kTwoPi * 1500.0 * i;
        const double d = 0.5 * (wa - wc);
        const double s = std::sqrt(d * d + 0.25 * g * g);
        data.push_back({wa, wm + d - s});
        data.push_back({wa, wm + d + s});
    }
    std::reverse(data.begin(), data.end()); // order must not matter
    return data;
}

} // namespace

TEST_CASE("avoided-crossing fit recovers its generating parameters") {
    const double wc = kTwoPi * 379.5e3, wm = kTwoPi * 23.9e3, g = kTwoPi * 5.6e3;
    const CrossingFit fit = fit_avoided_crossing(crossing_data(wc, wm, g));
    REQUIRE(fit.converged);
    CHECK(fit.omega_c == doctest::Approx(wc).epsilon(1e-9));
    CHECK(fit.omega_m == doctest::Approx(wm).epsilon(1e-9));
    CHECK(fit.gap == doctest::Approx(g).epsilon(1e-9));
    CHECK(fit.residual_norm < 1e-6 * wm);

    // Each datum was generated on a known branch; labels must alternate the
    // same way after the reversal (upper pushed last => first in data).
    REQUIRE(fit.branch.size() == 42);
    for (std::size_t i = 0; i < fit.branch.size(); ++i)
        CHECK(fit.branch[i] == (i % 2 == 0 ? 1 : 0));
}

TEST_CASE("avoided-crossing fit rejects unusable inputs") {
    const double wc = kTwoPi * 379.5e3, wm = kTwoPi * 23.9e3, g = kTwoPi * 5.6e3;
    const auto full = crossing_data(wc, wm, g);
    std::vector<CrossingPointDatum> three(full.begin(), full.begin() + 3);
    CHECK_THROWS_AS(fit_avoided_crossing(three), ScanFitError);

    auto bad = crossing_data(wc, wm, g);
    bad[0].omega = std::nan("");
    CHECK_THROWS_AS(fit_avoided_crossing(bad), ConfigError);

    // A point on the midline between well-separated branches is ambiguous.
    auto ambiguous = crossing_data(wc, wm, g);
    ambiguous.push_back({wc, wm});
    CHECK_THROWS_AS(fit_avoided_crossing(ambiguous), BranchAssignmentError);
}

// ---------------------------------------------------------------------------

TEST_CASE("phase curve fit recovers centre, width and sense") {
    const double w0 = kTwoPi * 28.6e3, gamma = 41.7;
    for (int sign : {+1, -1}) {
        CAPTURE(sign);
        const double phi0 = sign > 0 ? 2.9 : -2.0; // wraps across the branch cut
        std::vector<PhasePointDatum> data;
        for (int i = -6; i <= 6; ++i) {
            const double w = w0 + gamma * (25.0 / 6.0) * i;
            data.push_back({w, wrap_pi(phi0 + sign * std::atan((w - w0) / gamma))});
        }
        const PhaseCurveFit fit = fit_phase_curve(data);
        REQUIRE(fit.converged);
        CHECK(fit.sign == sign);
        CHECK(fit.omega0 == doctest::Approx(w0).epsilon(1e-10));
        CHECK(fit.gamma == doctest::Approx(gamma).epsilon(1e-8));
        CHECK(wrap_pi(fit.phi0 - phi0) == doctest::Approx(0.0).epsilon(1e-8));
        // Full step is pi; +-25 widths capture 2 atan(25) of it.
        CHECK(fit.span == doctest::Approx(2.0 * std::atan(25.0)).epsilon(1e-12));
        CHECK(fit.unwrapped.size() == data.size());
        // Unwrapped phases are monotone in the step sense for exact data.
        for (std::size_t i = 1; i < fit.unwrapped.size(); ++i)
            CHECK((fit.unwrapped[i].phase - fit.unwrapped[i - 1].phase) * sign > 0.0);
    }
}

TEST_CASE("phase curve fit absorbs small measurement noise") {
    const double w0 = kTwoPi * 28.6e3, gamma = 41.7, phi0 = 0.4;
    std::vector<PhasePointDatum> data;
    for (int i = -6; i <= 6; ++i) {
        const double w = w0 + gamma * 4.0 * i;
        const double wiggle = 0.03 * (i % 2 == 0 ? 1.0 : -1.0);
        data.push_back({w, wrap_pi(phi0 + std::atan((w - w0) / gamma) + wiggle)});
    }
    const PhaseCurveFit fit = fit_phase_curve(data);
    REQUIRE(fit.converged);
    CHECK(fit.omega0 == doctest::Approx(w0).epsilon(2e-4));
    CHECK(fit.gamma == doctest::Approx(gamma).epsilon(0.05));
}

TEST_CASE("phase curve fit rejects unusable inputs") {
    std::vector<PhasePointDatum> four = {{1.0, 0.1}, {2.0, 0.2}, {3.0, 0.3}, {4.0, 0.4}};
    CHECK_THROWS_AS(fit_phase_curve(four), ScanFitError);
    std::vector<PhasePointDatum> dup = {
        {1.0, 0.1}, {2.0, 0.2}, {2.0, 0.3}, {4.0, 0.4}, {5.0, 0.5}};
    CHECK_THROWS_AS(fit_phase_curve(dup), ScanFitError);
}
