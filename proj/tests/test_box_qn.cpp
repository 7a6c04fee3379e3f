#include <random>

#include "doctest.h"
#include "thermoforge/box_qn.hpp"

using namespace thermoforge;

TEST_CASE("separable quadratic converges to the clamped minimizer") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-2.0, 2.0), w(0.5, 20.0);
    const int n = 12;
    Eigen::VectorXd a(n), c(n), lo(n), hi(n);
    for (int i = 0; i < n; ++i) {
        a(i) = w(gen);
        c(i) = 2.0 * u(gen);
        lo(i) = -1.0;
        hi(i) = 1.0;
    }
    lo(3) = hi(3) = 0.25;  // fixed
    const GradientFunction f = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        g = a.cwiseProduct(x - c);
        return 0.5 * (x - c).dot(g);
    };
    const auto r = minimize_box(f, Eigen::VectorXd::Zero(n).cwiseMax(lo).cwiseMin(hi), lo, hi);
    CHECK(r.converged);
    const Eigen::VectorXd expected = c.cwiseMax(lo).cwiseMin(hi);
    CHECK((r.x - expected).lpNorm<Eigen::Infinity>() < 1e-5);
    CHECK(r.x(3) == 0.25);
}

TEST_CASE("Rosenbrock inside a loose box") {
    const GradientFunction f = [](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        const double a = 1.0 - x(0), b = x(1) - x(0) * x(0);
        g.resize(2);
        g(0) = -2.0 * a - 400.0 * x(0) * b;
        g(1) = 200.0 * b;
        return a * a + 100.0 * b * b;
    };
    Eigen::VectorXd x0(2), lo(2), hi(2);
    x0 << -1.2, 1.0;
    lo << -5, -5;
    hi << 5, 5;
    BoxQnOptions opt;
    opt.max_iterations = 500;
    const auto r = minimize_box(f, x0, lo, hi, opt);
    CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-4));

    // optimum cut off by the box: x0 <= 0.5 gives the active-bound solution (0.5, 0.25)
    hi(0) = 0.5;
    const auto rb = minimize_box(f, x0, lo, hi, opt);
    CHECK(rb.x(0) == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(rb.x(1) == doctest::Approx(0.25).epsilon(1e-4));
}
