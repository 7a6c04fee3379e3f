#include "thermoforge/box_qn.hpp"

#include <cmath>
#include <deque>

namespace thermoforge {

namespace {

struct Pair {
    Eigen::VectorXd s, y;
    double rho;
};

Eigen::VectorXd project(const Eigen::VectorXd& x, const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

// Two-loop recursion restricted to the free variables.
Eigen::VectorXd lbfgs_direction(const Eigen::VectorXd& g, const std::deque<Pair>& mem,
                                const Eigen::Array<bool, Eigen::Dynamic, 1>& free) {
    Eigen::VectorXd q = free.select(g, 0.0);
    std::vector<double> alpha(mem.size());
    for (int i = static_cast<int>(mem.size()) - 1; i >= 0; --i) {
        alpha[i] = mem[i].rho * mem[i].s.dot(q);
        q -= alpha[i] * free.select(mem[i].y, 0.0);
    }
    if (!mem.empty()) {
        const auto& last = mem.back();
        q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (std::size_t i = 0; i < mem.size(); ++i) {
        const double beta = mem[i].rho * free.select(mem[i].y, 0.0).dot(q);
        q += (alpha[i] - beta) * free.select(mem[i].s, 0.0);
    }
    return -free.select(q, 0.0);
}

}  // namespace

BoxQnResult minimize_box(const GradientFunction& fun, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, const BoxQnOptions& opt) {
    const Eigen::Index n = x0.size();
    BoxQnResult res;
    res.x = project(x0, lo, hi);
    Eigen::VectorXd g(n);
    res.f = fun(res.x, g);
    res.evaluations = 1;

    std::deque<Pair> mem;
    int stalls = 0;
    Eigen::VectorXd g_new(n);

    for (res.iterations = 0; res.iterations < opt.max_iterations; ++res.iterations) {
        res.pg_norm = (project(res.x - g, lo, hi) - res.x).lpNorm<Eigen::Infinity>();
        if (res.pg_norm <= opt.pg_tolerance) {
            res.converged = true;
            break;
        }
        Eigen::Array<bool, Eigen::Dynamic, 1> free(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const bool at_lo = res.x(i) <= lo(i) && g(i) > 0.0;
            const bool at_hi = res.x(i) >= hi(i) && g(i) < 0.0;
            free(i) = !(at_lo || at_hi) && lo(i) < hi(i);
        }
        Eigen::VectorXd d = lbfgs_direction(g, mem, free);
        double slope = g.dot(d);
        if (!(slope < -1e-14 * g.norm() * d.norm())) {
            mem.clear();
            d = -free.select(g, 0.0);
            slope = g.dot(d);
            if (!(slope < 0.0)) break;
        }
        double step = mem.empty() ? std::min(1.0, 1.0 / std::max(1e-12, d.lpNorm<Eigen::Infinity>())) : 1.0;

        bool accepted = false;
        Eigen::VectorXd x_new;
        double f_new = 0.0;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = project(res.x + step * d, lo, hi);
            f_new = fun(x_new, g_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * g.dot(x_new - res.x)) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            if (mem.empty()) break;
            mem.clear();
            continue;
        }

        Eigen::VectorXd s = x_new - res.x;
        Eigen::VectorXd y = g_new - g;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.squaredNorm()) {
            mem.push_back({std::move(s), std::move(y), 1.0 / sy});
            if (static_cast<int>(mem.size()) > opt.memory) mem.pop_front();
        }
        const double decrease = res.f - f_new;
        stalls = decrease <= opt.f_tolerance * std::max(1.0, std::abs(res.f)) ? stalls + 1 : 0;
        res.x = std::move(x_new);
        res.f = f_new;
        g = g_new;
        if (stalls >= 5) break;
    }
    return res;
}

}  // namespace thermoforge
