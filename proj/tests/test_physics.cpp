#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "thermoforge/config_graph.hpp"
#include "thermoforge/physics.hpp"

using namespace thermoforge;

namespace {

std::vector<ConfigGraph> random_configs(int count, std::mt19937_64& gen) {
    std::vector<ConfigGraph> pool;
    for (int n = 1; n <= 5; ++n)
        for (auto& g : enumerate_all(n, n + 1)) pool.push_back(g);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<ConfigGraph> out;
    for (int i = 0; i < count; ++i) out.push_back(pool[pick(gen)]);
    return out;
}

// Independent flows that keep every branch flow inside [0, pump_flow]:
// random shares at each junction.
Eigen::VectorXd random_split(const PhysicsGraph& pg, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(0.2, 1.0);
    const ConfigGraph& g = pg.config();
    std::vector<double> inflow(g.size(), 0.0);
    std::function<void(int, double)> distribute = [&](int v, double total) {
        const auto kids = g.children(v);
        if (kids.empty()) return;
        std::vector<double> w(kids.size());
        double sum = 0.0;
        for (auto& x : w) sum += (x = u(gen));
        for (std::size_t c = 0; c < kids.size(); ++c) {
            inflow[kids[c]] = total * w[c] / sum;
            distribute(kids[c], inflow[kids[c]]);
        }
    };
    distribute(kTank, pg.params().pump_flow);
    Eigen::VectorXd q(pg.flow_dof());
    for (int k = 0; k < pg.flow_dof(); ++k) q(k) = inflow[pg.layout().independent_edges()[k]];
    return q;
}

Eigen::VectorXd random_state(const PhysicsGraph& pg, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(10.0, 60.0);
    Eigen::VectorXd T(pg.state_size());
    for (int i = 0; i < T.size(); ++i) T(i) = u(gen);
    return T;
}

std::vector<double> random_loads(int n, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(4.0, 16.0);
    std::vector<double> d(n);
    for (auto& x : d) x = u(gen);
    return d;
}

}  // namespace

TEST_CASE("energy identity holds at the derivative level") {
    std::mt19937_64 gen(11);
    const ThermalParams p;
    double worst = 0.0;
    for (const auto& g : random_configs(20, gen)) {
        const PhysicsGraph pg(g, p);
        for (int s = 0; s < 50; ++s) {
            const auto T = random_state(pg, gen);
            const auto q = random_split(pg, gen);
            const auto d = random_loads(g.size(), gen);
            const Eigen::VectorXd dT = pg.derivative(T, q, d);
            double stored = 0.0, injected = 0.0;
            for (int i = 0; i < pg.state_size(); ++i) stored += pg.capacity()(i) * dT(i);
            for (double x : d) injected += 1000.0 * x;
            const double sink = p.sink_flow * p.c_fluid * (p.sink_temp - T(pg.llhx_cold()));
            worst = std::max(worst, std::abs(stored - injected - sink) / injected);
        }
    }
    CHECK(worst <= 1e-9);
}

TEST_CASE("operator form reproduces the derivative") {
    std::mt19937_64 gen(12);
    const ThermalParams p;
    for (const auto& g : random_configs(10, gen)) {
        const PhysicsGraph pg(g, p);
        const DynamicsOperators op = pg.operators();
        for (int s = 0; s < 5; ++s) {
            const auto T = random_state(pg, gen);
            const auto q = random_split(pg, gen);
            const auto d = random_loads(g.size(), gen);
            Eigen::VectorXd x(T.size() + 1);
            x << T, p.sink_temp;
            Eigen::VectorXd w(q.size() + 2);
            w << p.pump_flow, q, p.sink_flow;
            Eigen::VectorXd P(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) P(i) = 1000.0 * d[i];
            const Eigen::VectorXd zw = op.Z * w;
            const Eigen::VectorXd via_ops =
                op.A * x + op.B1 * (zw.asDiagonal() * (op.B2 * x)) + (op.D * P).cwiseQuotient(op.capacity);
            CHECK((via_ops - pg.derivative(T, q, d)).lpNorm<Eigen::Infinity>() < 1e-9);
        }
    }
}

TEST_CASE("analytic Jacobians match central differences") {
    std::mt19937_64 gen(13);
    const ThermalParams p;
    for (const auto& g : random_configs(8, gen)) {
        const PhysicsGraph pg(g, p);
        const auto T = random_state(pg, gen);
        const auto q = random_split(pg, gen);
        const auto d = random_loads(g.size(), gen);
        Eigen::VectorXd f;
        Eigen::MatrixXd JT, Jq;
        pg.derivative_jacobian(T, q, d, f, JT, Jq);
        const double h = 1e-6;
        for (int j = 0; j < T.size(); ++j) {
            Eigen::VectorXd a = T, b = T;
            a(j) += h;
            b(j) -= h;
            const Eigen::VectorXd col = (pg.derivative(a, q, d) - pg.derivative(b, q, d)) / (2 * h);
            CHECK((col - JT.col(j)).lpNorm<Eigen::Infinity>() < 1e-5);
        }
        for (int j = 0; j < q.size(); ++j) {
            Eigen::VectorXd a = q, b = q;
            a(j) += h;
            b(j) -= h;
            const Eigen::VectorXd col = (pg.derivative(T, a, d) - pg.derivative(T, b, d)) / (2 * h);
            CHECK((col - Jq.col(j)).lpNorm<Eigen::Infinity>() < 1e-3);
        }
    }
}

TEST_CASE("flow layout conserves mass") {
    const PhysicsGraph par(enumerate_single_split(3).back(), ThermalParams{});
    CHECK(par.flow_dof() == 2);
    const Eigen::VectorXd eq = par.equal_split_flows();
    const Eigen::VectorXd m = par.layout().edge_flows(eq, 0.4);
    for (int i = 0; i < 3; ++i) CHECK(m(i) == doctest::Approx(0.4 / 3));

    const Eigen::VectorXd lp = par.load_proportional_flows({2, 4, 6});
    const Eigen::VectorXd ml = par.layout().edge_flows(lp, 0.4);
    CHECK(ml(0) == doctest::Approx(0.4 / 6));
    CHECK(ml(2) == doctest::Approx(0.2));

    const PhysicsGraph split(ConfigGraph({-1, 0, 0}), ThermalParams{});
    const Eigen::VectorXd ms = split.layout().edge_flows(Eigen::VectorXd::Constant(1, 0.1), 0.4);
    CHECK(ms(0) == doctest::Approx(0.4));
    CHECK(ms(1) == doctest::Approx(0.1));
    CHECK(ms(2) == doctest::Approx(0.3));
}

TEST_CASE("RK4 converges at fourth order") {
    const PhysicsGraph pg(enumerate_single_split(3)[4], ThermalParams{});
    const std::vector<double> d{6, 9, 12};
    const auto pol = constant_policy(pg.equal_split_flows());
    auto final_state = [&](double dt) {
        return simulate(pg, d, pol, {10.0, dt, false}).temps.back();
    };
    const auto a = final_state(0.4), b = final_state(0.2), c = final_state(0.1);
    const double ratio = (a - b).norm() / (b - c).norm();
    CHECK(std::log2(ratio) > 3.5);
    CHECK(std::log2(ratio) < 4.5);
}

TEST_CASE("all-parallel response is symmetric under load permutation") {
    const PhysicsGraph pg(enumerate_single_split(3).back(), ThermalParams{});
    const auto pol = constant_policy(pg.equal_split_flows());
    const auto A = simulate(pg, {4, 8, 12}, pol, {20.0, 0.02, false}).temps.back();
    const auto B = simulate(pg, {12, 4, 8}, pol, {20.0, 0.02, false}).temps.back();
    CHECK(A(pg.wall(0)) == doctest::Approx(B(pg.wall(1))).epsilon(1e-12));
    CHECK(A(pg.wall(2)) == doctest::Approx(B(pg.wall(0))).epsilon(1e-12));
    CHECK(A(pg.tank()) == doctest::Approx(B(pg.tank())).epsilon(1e-12));
}

TEST_CASE("endurance is interpolated between bracketing steps") {
    Trajectory tr;
    for (int k = 0; k < 4; ++k) {
        tr.times.push_back(k);
        tr.temps.push_back(Eigen::VectorXd::Constant(2, 40.0 + 2.0 * k));
    }
    const Eigen::VectorXd ub = Eigen::VectorXd::Constant(2, 45.0);
    REQUIRE(endurance_from_trajectory(tr, ub).has_value());
    CHECK(*endurance_from_trajectory(tr, ub) == doctest::Approx(2.5));
    CHECK_FALSE(endurance_from_trajectory(tr, Eigen::VectorXd::Constant(2, 50.0)).has_value());
}

TEST_CASE("single node endurance is stable under step refinement") {
    const PhysicsGraph pg(ConfigGraph({-1}), ThermalParams{});
    const auto pol = constant_policy(pg.equal_split_flows());
    const auto coarse = simulate_endurance(pg, {8.0}, pol, 500.0, 0.02);
    const auto fine = simulate_endurance(pg, {8.0}, pol, 500.0, 0.001);
    REQUIRE(coarse.has_value());
    REQUIRE(fine.has_value());
    CHECK(*coarse == doctest::Approx(*fine).epsilon(1e-3));
    CHECK(*fine > 10.0);
    // no load: everything relaxes toward the sink and never trips a bound
    CHECK_FALSE(simulate_endurance(pg, {0.0}, pol, 100.0, 0.05).has_value());
}

TEST_CASE("physics input validation") {
    ThermalParams p;
    p.pump_flow = -1.0;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    const PhysicsGraph pg(ConfigGraph({-1, 0}), ThermalParams{});
    const auto pol = constant_policy(pg.equal_split_flows());
    CHECK_THROWS(simulate(pg, {1.0}, pol, {}));
    CHECK_THROWS(simulate(pg, {1.0, -2.0}, pol, {}));
    CHECK(params_from_json(to_json(ThermalParams{})).hA_cphx == 500.0);
}
