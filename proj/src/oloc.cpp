#include "thermoforge/oloc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "thermoforge/box_qn.hpp"

namespace thermoforge {

void SolveOptions::validate() const {
    if (segments < 8) throw ValidationError("at least 8 collocation segments are required");
    if (max_outer < 1 || max_inner < 1) throw ValidationError("iteration limits must be positive");
    if (!(defect_tolerance > 0.0) || !(path_tolerance > 0.0)) throw ValidationError("tolerances must be positive");
    if (!(t_end_min > 0.0) || !(t_end_max > t_end_min)) throw ValidationError("invalid horizon range");
    if (!(screen_dt > 0.0) || !(verify_dt > 0.0) || !(series_dt > 0.0)) throw ValidationError("steps must be positive");
}

#define TF_SOLVE_FIELDS(X)                                                                              \
    X(segments) X(max_outer) X(max_inner) X(defect_tolerance) X(path_tolerance) X(t_end_min) X(t_end_max) \
        X(screen_dt) X(verify_dt) X(series_dt) X(seed)

nlohmann::json to_json(const SolveOptions& o) {
    nlohmann::json j;
#define X(f) j[#f] = o.f;
    TF_SOLVE_FIELDS(X)
#undef X
    return j;
}

SolveOptions solve_options_from_json(const nlohmann::json& j) {
    SolveOptions o;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
#define X(f)                                         \
    if (it.key() == #f) {                            \
        o.f = it.value().get<decltype(o.f)>();       \
        known = true;                                \
    }
        TF_SOLVE_FIELDS(X)
#undef X
        if (!known) throw ValidationError("unknown solver option '" + it.key() + "'");
    }
    o.validate();
    return o;
}

// ---------------------------------------------------------------------------
// Transcription

Transcription::Transcription(const PhysicsGraph& pg, std::vector<double> loads_kw, int segments, double t_end_min,
                             double t_end_max)
    : pg_(&pg), loads_(std::move(loads_kw)), segments_(segments) {
    if (segments < 8) throw ValidationError("at least 8 collocation segments are required");
    pg.check_loads(loads_);
    const auto& p = pg.params();
    temp_offset_ = p.sink_temp;
    temp_scale_ = pg.upper_bounds().maxCoeff() - p.sink_temp;
    if (!(temp_scale_ > 0.0)) throw ValidationError("temperature bounds must lie above the sink temperature");
    v_gain_ = kTimeScale * p.slew_limit / p.pump_flow;
    dep_rows_ = pg.layout().dependent_matrix();
    dep_offset_ = pg.layout().dependent_offset();

    const int nT = state_count(), q = flow_count();
    lo_.resize(variable_count());
    hi_.resize(variable_count());
    const Eigen::VectorXd theta_hi = (pg.upper_bounds().array() - temp_offset_) / temp_scale_;
    const Eigen::VectorXd theta0 = (pg.initial_temperatures().array() - temp_offset_) / temp_scale_;
    for (int k = 0; k < node_count(); ++k) {
        lo_.segment(theta_index(k), nT).setConstant(-0.5);
        hi_.segment(theta_index(k), nT) = theta_hi;
        lo_.segment(mu_index(k), q).setZero();
        hi_.segment(mu_index(k), q).setOnes();
        lo_.segment(v_index(k), q).setConstant(-1.0);
        hi_.segment(v_index(k), q).setOnes();
    }
    lo_.segment(theta_index(0), nT) = theta0;
    hi_.segment(theta_index(0), nT) = theta0;
    lo_(s_index()) = t_end_min / kTimeScale;
    hi_(s_index()) = t_end_max / kTimeScale;
}

Eigen::VectorXd Transcription::unscale_temps(const Eigen::VectorXd& theta) const {
    return (temp_offset_ + temp_scale_ * theta.array()).matrix();
}

Eigen::VectorXd Transcription::dependent_fraction(const Eigen::VectorXd& mu) const {
    return dep_rows_ * mu + dep_offset_;
}

void Transcription::node_dynamics(const Eigen::VectorXd& z, int k, Eigen::VectorXd& G, Eigen::MatrixXd& J) const {
    const int nT = state_count(), q = flow_count();
    const double mp = pg_->params().pump_flow;
    const Eigen::VectorXd T = unscale_temps(z.segment(theta_index(k), nT));
    const Eigen::VectorXd m = mp * z.segment(mu_index(k), q);
    Eigen::VectorXd f;
    Eigen::MatrixXd dT, dq;
    pg_->derivative_jacobian(T, m, loads_, f, dT, dq);

    G.resize(node_width());
    G.head(nT) = (kTimeScale / temp_scale_) * f;
    G.tail(q) = v_gain_ * z.segment(v_index(k), q);
    J.setZero(node_width(), node_width());
    J.topLeftCorner(nT, nT) = kTimeScale * dT;
    J.topRightCorner(nT, q) = (kTimeScale * mp / temp_scale_) * dq;
}

void Transcription::residuals(const Eigen::VectorXd& z, Eigen::VectorXd& defects, Eigen::VectorXd& path) const {
    const int w = node_width(), q = flow_count();
    const double hs2 = 0.5 * z(s_index()) / segments_;
    defects.resize(defect_count());
    Eigen::VectorXd G0, G1;
    Eigen::MatrixXd J;
    node_dynamics(z, 0, G0, J);
    for (int k = 0; k < segments_; ++k) {
        node_dynamics(z, k + 1, G1, J);
        defects.segment(k * w, w) = z.segment(theta_index(k + 1), w) - z.segment(theta_index(k), w) - hs2 * (G0 + G1);
        std::swap(G0, G1);
    }
    const int nd = static_cast<int>(dep_rows_.rows());
    path.resize(path_count());
    for (int k = 0; k < node_count(); ++k) {
        const Eigen::VectorXd psi = dependent_fraction(z.segment(mu_index(k), q));
        path.segment(2 * nd * k, nd) = -psi;
        path.segment(2 * nd * k + nd, nd) = psi.array() - 1.0;
    }
}

Eigen::VectorXd Transcription::residual_vector(const Eigen::VectorXd& z) const {
    Eigen::VectorXd c, g;
    residuals(z, c, g);
    Eigen::VectorXd out(c.size() + g.size());
    out << c, g;
    return out;
}

Eigen::MatrixXd Transcription::residual_jacobian(const Eigen::VectorXd& z) const {
    const int w = node_width(), q = flow_count();
    const double s = z(s_index()), h = 1.0 / segments_, hs2 = 0.5 * h * s;
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(defect_count() + path_count(), variable_count());
    std::vector<Eigen::VectorXd> G(node_count());
    std::vector<Eigen::MatrixXd> J(node_count());
    for (int k = 0; k < node_count(); ++k) node_dynamics(z, k, G[k], J[k]);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(w, w);
    for (int k = 0; k < segments_; ++k) {
        auto rows = R.middleRows(k * w, w);
        rows.middleCols(theta_index(k), w) = -I - hs2 * J[k];
        rows.middleCols(theta_index(k + 1), w) = I - hs2 * J[k + 1];
        for (int j = 0; j < q; ++j) {
            rows(w - q + j, v_index(k) + j) = -hs2 * v_gain_;
            rows(w - q + j, v_index(k + 1) + j) = -hs2 * v_gain_;
        }
        rows.col(s_index()) = -0.5 * h * (G[k] + G[k + 1]);
    }
    const int nd = static_cast<int>(dep_rows_.rows());
    for (int k = 0; k < node_count(); ++k) {
        const int r = defect_count() + 2 * nd * k;
        R.block(r, mu_index(k), nd, q) = -dep_rows_;
        R.block(r + nd, mu_index(k), nd, q) = dep_rows_;
    }
    return R;
}

double Transcription::max_defect(const Eigen::VectorXd& z) const {
    Eigen::VectorXd c, g;
    residuals(z, c, g);
    return c.size() ? c.lpNorm<Eigen::Infinity>() : 0.0;
}

double Transcription::max_path_violation(const Eigen::VectorXd& z) const {
    Eigen::VectorXd c, g;
    residuals(z, c, g);
    double v = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
    v = std::max(v, (lo_ - z).maxCoeff());
    v = std::max(v, (z - hi_).maxCoeff());
    return v;
}

double Transcription::augmented_lagrangian(const Eigen::VectorXd& z, const Eigen::VectorXd& lambda,
                                           const Eigen::VectorXd& nu, double rho, Eigen::VectorXd& grad) const {
    const int w = node_width(), q = flow_count();
    const double s = z(s_index()), h = 1.0 / segments_, hs2 = 0.5 * h * s;
    grad.setZero(variable_count());
    double L = -s;
    grad(s_index()) = -1.0;

    Eigen::VectorXd G0, G1;
    Eigen::MatrixXd J0, J1;
    node_dynamics(z, 0, G0, J0);
    for (int k = 0; k < segments_; ++k) {
        node_dynamics(z, k + 1, G1, J1);
        const Eigen::VectorXd c =
            z.segment(theta_index(k + 1), w) - z.segment(theta_index(k), w) - hs2 * (G0 + G1);
        const auto lam = lambda.segment(k * w, w);
        L += lam.dot(c) + 0.5 * rho * c.squaredNorm();
        const Eigen::VectorXd wk = lam + rho * c;
        grad.segment(theta_index(k + 1), w) += wk - hs2 * J1.transpose() * wk;
        grad.segment(theta_index(k), w) += -wk - hs2 * J0.transpose() * wk;
        grad.segment(v_index(k), q) -= hs2 * v_gain_ * wk.tail(q);
        grad.segment(v_index(k + 1), q) -= hs2 * v_gain_ * wk.tail(q);
        grad(s_index()) -= 0.5 * h * wk.dot(G0 + G1);
        std::swap(G0, G1);
        std::swap(J0, J1);
    }

    const int nd = static_cast<int>(dep_rows_.rows());
    for (int k = 0; k < node_count() && nd > 0; ++k) {
        const Eigen::VectorXd psi = dependent_fraction(z.segment(mu_index(k), q));
        for (int r = 0; r < 2 * nd; ++r) {
            const int idx = 2 * nd * k + r;
            const double g = r < nd ? -psi(r) : psi(r - nd) - 1.0;
            const double sigma = std::max(0.0, nu(idx) + rho * g);
            L += (sigma * sigma - nu(idx) * nu(idx)) / (2.0 * rho);
            if (sigma > 0.0) {
                const double sign = r < nd ? -1.0 : 1.0;
                grad.segment(mu_index(k), q) += sigma * sign * dep_rows_.row(r % nd).transpose();
            }
        }
    }
    return L;
}

Eigen::VectorXd Transcription::constant_flow_guess(const Eigen::VectorXd& indep_flows) const {
    const int nT = state_count(), q = flow_count();
    const auto& p = pg_->params();
    const Eigen::VectorXd base = Eigen::VectorXd::Constant(nT, temp_offset_);
    Eigen::VectorXd f;
    Eigen::MatrixXd A, dq;
    pg_->derivative_jacobian(base, indep_flows, loads_, f, A, dq);
    const Eigen::VectorXd c0 = f / temp_scale_;
    const Eigen::VectorXd theta0 = lo_.segment(theta_index(0), nT);
    const Eigen::VectorXd theta_hi = hi_.segment(theta_index(1), nT);
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(nT, nT);

    auto integrate = [&](double s, std::vector<Eigen::VectorXd>* out) {
        const double a = 0.5 * kTimeScale * s / segments_;
        const Eigen::PartialPivLU<Eigen::MatrixXd> lu(I - a * A);
        const Eigen::MatrixXd M = I + a * A;
        Eigen::VectorXd th = theta0;
        bool ok = true;
        if (out) out->push_back(th);
        for (int k = 0; k < segments_; ++k) {
            th = lu.solve(M * th + 2.0 * a * c0);
            if ((th.array() > theta_hi.array()).any()) ok = false;
            if (out) out->push_back(th);
        }
        return ok;
    };

    double s_lo = lo_(s_index()), s_hi = hi_(s_index());
    double s = s_hi;
    if (!integrate(s_hi, nullptr)) {
        for (int it = 0; it < 60; ++it) {
            const double mid = 0.5 * (s_lo + s_hi);
            (integrate(mid, nullptr) ? s_lo : s_hi) = mid;
        }
        s = s_lo;
    }
    std::vector<Eigen::VectorXd> thetas;
    integrate(s, &thetas);

    Eigen::VectorXd z = Eigen::VectorXd::Zero(variable_count());
    const Eigen::VectorXd mu = indep_flows / p.pump_flow;
    for (int k = 0; k < node_count(); ++k) {
        z.segment(theta_index(k), nT) = thetas[k];
        z.segment(mu_index(k), q) = mu;
    }
    z(s_index()) = s;
    return z;
}

Transcription transcribe(const PhysicsGraph& pg, const std::vector<double>& loads_kw, int segments) {
    return Transcription(pg, loads_kw, segments);
}

// ---------------------------------------------------------------------------
// Solve

namespace {

struct AlRun {
    Eigen::VectorXd z;
    bool converged = false;
    int outer = 0;
    std::vector<double> history;
};

AlRun run_augmented_lagrangian(const Transcription& tr, Eigen::VectorXd z, const SolveOptions& opt) {
    AlRun run;
    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(tr.defect_count());
    Eigen::VectorXd nu = Eigen::VectorXd::Zero(tr.path_count());
    double rho = 10.0;
    double prev_violation = std::numeric_limits<double>::infinity();
    double prev_s = z(tr.s_index());
    BoxQnOptions inner;
    inner.max_iterations = opt.max_inner;
    inner.memory = 10;
    inner.pg_tolerance = 1e-7;

    for (run.outer = 1; run.outer <= opt.max_outer; ++run.outer) {
        auto fun = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
            return tr.augmented_lagrangian(x, lambda, nu, rho, g);
        };
        const BoxQnResult res = minimize_box(fun, z, tr.lower(), tr.upper(), inner);
        z = res.x;
        Eigen::VectorXd c, g;
        tr.residuals(z, c, g);
        const double defect = c.size() ? c.lpNorm<Eigen::Infinity>() : 0.0;
        const double path = g.size() ? std::max(0.0, g.maxCoeff()) : 0.0;
        const double violation = std::max(defect / opt.defect_tolerance, path / opt.path_tolerance);
        const double s = z(tr.s_index());
        run.history.push_back(tr.t_end(z));
        if (violation <= 1.0 && (res.converged || std::abs(s - prev_s) <= 1e-5 * s)) {
            run.converged = true;
            break;
        }
        lambda += rho * c;
        for (Eigen::Index i = 0; i < nu.size(); ++i) nu(i) = std::max(0.0, nu(i) + rho * g(i));
        if (violation > 0.25 * prev_violation) rho = std::min(rho * 10.0, 1e9);
        prev_violation = violation;
        prev_s = s;
    }
    run.outer = std::min(run.outer, opt.max_outer);
    run.z = std::move(z);
    return run;
}

OlocSolution unpack(const Transcription& tr, const Eigen::VectorXd& z) {
    OlocSolution sol;
    const int nT = tr.state_count(), q = tr.flow_count();
    const auto& p = tr.physics().params();
    sol.t_end = tr.t_end(z);
    sol.max_defect = tr.max_defect(z);
    sol.max_path_violation = tr.max_path_violation(z);
    for (int k = 0; k < tr.node_count(); ++k) {
        sol.grid.push_back(sol.t_end * k / tr.segments());
        sol.temps.push_back(tr.unscale_temps(z.segment(tr.theta_index(k), nT)));
        sol.flows.push_back(p.pump_flow * z.segment(tr.mu_index(k), q));
        sol.controls.push_back(p.slew_limit * z.segment(tr.v_index(k), q));
    }
    return sol;
}

double screened_endurance(const OlocSolution& sol, const PhysicsGraph& pg, const std::vector<double>& loads,
                          const SolveOptions& opt) {
    const auto e = simulate_endurance(pg, loads, control_policy(sol), opt.t_end_max, opt.screen_dt);
    return e.value_or(opt.t_end_max);
}

OlocSolution solve_series(const PhysicsGraph& pg, const std::vector<double>& loads, const SolveOptions& opt) {
    const Eigen::VectorXd none(0);
    const auto e = simulate_endurance(pg, loads, constant_policy(none), opt.t_end_max, opt.series_dt);
    OlocSolution sol;
    sol.t_end = std::clamp(e.value_or(opt.t_end_max), opt.t_end_min, opt.t_end_max);
    sol.converged = true;
    sol.objective_history = {sol.t_end};

    SimulateOptions so;
    so.t_max = sol.t_end;
    so.dt = std::min(opt.series_dt, sol.t_end / opt.segments);
    const Trajectory traj = simulate(pg, loads, constant_policy(none), so);
    std::size_t j = 0;
    for (int k = 0; k <= opt.segments; ++k) {
        const double t = sol.t_end * k / opt.segments;
        while (j + 2 < traj.times.size() && traj.times[j + 1] < t) ++j;
        const double t0 = traj.times[j], t1 = traj.times[j + 1];
        const double a = std::clamp((t - t0) / (t1 - t0), 0.0, 1.0);
        sol.grid.push_back(t);
        sol.temps.push_back((1.0 - a) * traj.temps[j] + a * traj.temps[j + 1]);
        sol.flows.push_back(none);
        sol.controls.push_back(none);
    }
    double over = 0.0;
    for (const auto& T : sol.temps) over = std::max(over, (T - pg.upper_bounds()).maxCoeff());
    const double scale = pg.upper_bounds().maxCoeff() - pg.params().sink_temp;
    sol.max_path_violation = std::max(0.0, over / scale);
    sol.report = verify_feasibility(sol, pg, loads, opt.verify_dt);
    return sol;
}

}  // namespace

OlocSolution solve(const PhysicsGraph& pg, const std::vector<double>& loads_kw, const SolveOptions& opt) {
    opt.validate();
    pg.check_loads(loads_kw);
    if (pg.flow_dof() == 0) return solve_series(pg, loads_kw, opt);

    const Transcription tr(pg, loads_kw, opt.segments, opt.t_end_min, opt.t_end_max);
    std::vector<Eigen::VectorXd> starts{pg.equal_split_flows()};
    const Eigen::VectorXd lp = pg.load_proportional_flows(loads_kw);
    if ((lp - starts[0]).lpNorm<Eigen::Infinity>() > 1e-12) starts.push_back(lp);

    struct Candidate {
        OlocSolution sol;
        bool feasible;
        double violation;
        double score;
    };
    std::vector<Candidate> candidates;
    std::vector<AlRun> runs;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        const Eigen::VectorXd z0 = tr.constant_flow_guess(starts[i]);
        AlRun run = run_augmented_lagrangian(tr, z0, opt);
        for (const Eigen::VectorXd* z : {&z0, static_cast<const Eigen::VectorXd*>(&run.z)}) {
            Candidate c{unpack(tr, *z), false, 0.0, 0.0};
            c.sol.start_index = static_cast<int>(i);
            c.sol.outer_iterations = run.outer;
            c.sol.objective_history = run.history;
            c.feasible = c.sol.max_defect <= opt.defect_tolerance && c.sol.max_path_violation <= opt.path_tolerance;
            c.violation = std::max(c.sol.max_defect / opt.defect_tolerance,
                                   c.sol.max_path_violation / opt.path_tolerance);
            c.score = screened_endurance(c.sol, pg, loads_kw, opt);
            candidates.push_back(std::move(c));
        }
        runs.push_back(std::move(run));
    }

    auto better = [](const Candidate& a, const Candidate& b) {
        if (a.feasible != b.feasible) return a.feasible;
        if (a.score != b.score) return a.score > b.score;
        return a.violation < b.violation;
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (better(candidates[i], candidates[best])) best = i;

    OlocSolution sol = std::move(candidates[best].sol);
    sol.converged = candidates[best].feasible && runs[sol.start_index].converged;
    sol.report = verify_feasibility(sol, pg, loads_kw, opt.verify_dt);
    return sol;
}

FlowPolicy control_policy(const OlocSolution& sol) {
    const std::size_t nodes = sol.grid.size();
    if (nodes == 0) throw ValidationError("solution has no grid");
    std::vector<Eigen::VectorXd> cumulative{sol.flows[0]};
    for (std::size_t k = 0; k + 1 < nodes; ++k) {
        const double dt = sol.grid[k + 1] - sol.grid[k];
        cumulative.push_back(cumulative.back() + 0.5 * dt * (sol.controls[k] + sol.controls[k + 1]));
    }
    return [grid = sol.grid, u = sol.controls, cumulative = std::move(cumulative)](double t) -> Eigen::VectorXd {
        if (t <= grid.front()) return cumulative.front();
        if (t >= grid.back()) return cumulative.back();
        const auto it = std::upper_bound(grid.begin(), grid.end(), t);
        const std::size_t k = static_cast<std::size_t>(it - grid.begin()) - 1;
        const double span = grid[k + 1] - grid[k];
        const double tau = t - grid[k];
        return cumulative[k] + tau * u[k] + (tau * tau / (2.0 * span)) * (u[k + 1] - u[k]);
    };
}

FeasibilityReport verify_feasibility(const OlocSolution& sol, const PhysicsGraph& pg,
                                     const std::vector<double>& loads_kw, double dt) {
    FeasibilityReport rep;
    const FlowPolicy policy = control_policy(sol);
    const double t_cap = std::max(500.0, sol.t_end);
    const auto& ub = pg.upper_bounds();
    const double mp = pg.params().pump_flow;

    SimulateOptions so;
    so.dt = dt;
    so.t_max = t_cap;
    so.stop_at_bound = true;
    Trajectory traj = simulate(pg, loads_kw, policy, so);
    const auto crossing = endurance_from_trajectory(traj, ub);
    rep.reached_bound = crossing.has_value();
    rep.resimulated_endurance = crossing.value_or(t_cap);
    if (crossing && *crossing < sol.t_end) {
        so.t_max = sol.t_end;
        so.stop_at_bound = false;
        traj = simulate(pg, loads_kw, policy, so);
    }
    for (std::size_t k = 0; k < traj.times.size() && traj.times[k] <= sol.t_end + 1e-12; ++k) {
        rep.max_overshoot = std::max(rep.max_overshoot, (traj.temps[k] - ub).maxCoeff());
        const Eigen::VectorXd m = pg.layout().edge_flows(traj.indep_flows[k], mp);
        rep.max_flow_violation = std::max({rep.max_flow_violation, -m.minCoeff(), m.maxCoeff() - mp});
    }
    rep.max_overshoot = std::max(0.0, rep.max_overshoot);
    rep.max_flow_violation = std::max(0.0, rep.max_flow_violation);
    rep.mismatch = std::abs(rep.resimulated_endurance - sol.t_end) / sol.t_end;
    rep.mismatch_flag = rep.mismatch > 0.02;
    return rep;
}

// ---------------------------------------------------------------------------
// Piecewise-constant oracle

FlowPolicy piecewise_policy(const PhysicsGraph& pg, const std::vector<Eigen::VectorXd>& levels,
                            double segment_length) {
    const double slew = pg.params().slew_limit;
    return [levels, segment_length, slew](double t) -> Eigen::VectorXd {
        const int K = static_cast<int>(levels.size());
        const int j = std::clamp(static_cast<int>(std::floor(t / segment_length)), 0, K - 1);
        if (j == 0) return levels[0];
        const Eigen::VectorXd step = levels[j] - levels[j - 1];
        const double ramp = step.lpNorm<Eigen::Infinity>() / slew;
        if (ramp <= 0.0) return levels[j];
        const double frac = std::clamp((t - j * segment_length) / ramp, 0.0, 1.0);
        return levels[j - 1] + frac * step;
    };
}

OracleResult brute_force_piecewise_oracle(const PhysicsGraph& pg, const std::vector<double>& loads_kw,
                                          const OracleOptions& opt) {
    if (opt.segments < 1 || opt.levels < 2) throw ValidationError("oracle needs >= 1 segment and >= 2 levels");
    const int q = pg.flow_dof();
    const int digits = q * opt.segments;
    if (digits * std::log10(static_cast<double>(opt.levels)) > 6.0 + 1e-12)
        throw RangeError("oracle search space exceeds 1e6 profiles");

    const auto& p = pg.params();
    const auto ref = simulate_endurance(pg, loads_kw, constant_policy(pg.equal_split_flows()), opt.t_max, opt.dt);
    OracleResult out;
    out.segment_length = ref.value_or(opt.t_max) / opt.segments;

    if (q == 0) {
        out.levels.assign(opt.segments, Eigen::VectorXd(0));
        out.t_end = simulate_endurance(pg, loads_kw, constant_policy(Eigen::VectorXd(0)), opt.t_max, opt.dt)
                        .value_or(opt.t_max);
        out.profiles = 1;
        return out;
    }

    // Level vectors whose dependent flows stay within [0, pump_flow].
    const Eigen::MatrixXd Mc = pg.layout().dependent_matrix();
    const Eigen::VectorXd m0 = pg.layout().dependent_offset() * p.pump_flow;
    std::vector<Eigen::VectorXd> admissible;
    long combos = 1;
    for (int i = 0; i < q; ++i) combos *= opt.levels;
    for (long c = 0; c < combos; ++c) {
        Eigen::VectorXd a(q);
        long rest = c;
        for (int i = q - 1; i >= 0; --i) {
            a(i) = p.pump_flow * static_cast<double>(rest % opt.levels) / (opt.levels - 1);
            rest /= opt.levels;
        }
        const Eigen::VectorXd dep = Mc * a + m0;
        if (dep.size() == 0 || (dep.minCoeff() >= -1e-12 && dep.maxCoeff() <= p.pump_flow + 1e-12))
            admissible.push_back(a);
    }

    const int K = opt.segments;
    std::vector<std::size_t> idx(K, 0);
    out.t_end = -1.0;
    const double max_step = p.slew_limit * out.segment_length;
    while (true) {
        bool slew_ok = true;
        for (int j = 1; j < K && slew_ok; ++j)
            slew_ok = (admissible[idx[j]] - admissible[idx[j - 1]]).lpNorm<Eigen::Infinity>() <= max_step + 1e-12;
        if (slew_ok) {
            std::vector<Eigen::VectorXd> levels;
            for (int j = 0; j < K; ++j) levels.push_back(admissible[idx[j]]);
            const double e = simulate_endurance(pg, loads_kw, piecewise_policy(pg, levels, out.segment_length),
                                                opt.t_max, opt.dt)
                                 .value_or(opt.t_max);
            ++out.profiles;
            if (e > out.t_end) {
                out.t_end = e;
                out.levels = std::move(levels);
            }
        }
        int pos = K - 1;
        while (pos >= 0 && ++idx[pos] == admissible.size()) idx[pos--] = 0;
        if (pos < 0) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Export

nlohmann::json to_json(const OlocSolution& sol) {
    auto rows = [](const std::vector<Eigen::VectorXd>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& x : v) a.push_back(std::vector<double>(x.data(), x.data() + x.size()));
        return a;
    };
    nlohmann::json j;
    j["t_end"] = sol.t_end;
    j["endurance"] = sol.endurance();
    j["converged"] = sol.converged;
    j["start_index"] = sol.start_index;
    j["outer_iterations"] = sol.outer_iterations;
    j["objective_history"] = sol.objective_history;
    j["grid"] = sol.grid;
    j["states"] = rows(sol.temps);
    j["flows"] = rows(sol.flows);
    j["controls"] = rows(sol.controls);
    const auto& r = sol.report;
    j["violations"] = {{"max_defect", sol.max_defect},
                       {"max_path", sol.max_path_violation},
                       {"max_overshoot", r.max_overshoot},
                       {"max_flow_violation", r.max_flow_violation},
                       {"resimulated_endurance", r.resimulated_endurance},
                       {"reached_bound", r.reached_bound},
                       {"mismatch", r.mismatch},
                       {"mismatch_flag", r.mismatch_flag}};
    return j;
}

Trajectory solution_trajectory(const OlocSolution& sol) {
    Trajectory t;
    t.times = sol.grid;
    t.temps = sol.temps;
    t.indep_flows = sol.flows;
    return t;
}

}  // namespace thermoforge
