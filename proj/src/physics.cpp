#include "thermoforge/physics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace thermoforge {

namespace {

constexpr double kMixGuard = 1e-9;

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError(std::string(name) + " must be positive and finite");
}

}  // namespace

void ThermalParams::validate() const {
    require_positive(cphx_wall_mass, "cphx_wall_mass");
    require_positive(llhx_wall_mass, "llhx_wall_mass");
    require_positive(tank_fluid_mass, "tank_fluid_mass");
    require_positive(cphx_fluid_mass, "cphx_fluid_mass");
    require_positive(llhx_hot_fluid_mass, "llhx_hot_fluid_mass");
    require_positive(llhx_cold_fluid_mass, "llhx_cold_fluid_mass");
    require_positive(c_fluid, "c_fluid");
    require_positive(c_wall, "c_wall");
    require_positive(hA_cphx, "hA_cphx");
    require_positive(hA_llhx_hot, "hA_llhx_hot");
    require_positive(hA_llhx_cold, "hA_llhx_cold");
    require_positive(pump_flow, "pump_flow");
    require_positive(sink_flow, "sink_flow");
    require_positive(slew_limit, "slew_limit");
    if (!(wall_temp_max > wall_temp0)) throw ValidationError("wall_temp_max must exceed wall_temp0");
    if (!(fluid_temp_max > fluid_temp0)) throw ValidationError("fluid_temp_max must exceed fluid_temp0");
    if (!(sink_side_temp_max > sink_side_temp0))
        throw ValidationError("sink_side_temp_max must exceed sink_side_temp0");
}

#define TF_PARAM_FIELDS(X)                                                                                    \
    X(cphx_wall_mass) X(llhx_wall_mass) X(tank_fluid_mass) X(cphx_fluid_mass) X(llhx_hot_fluid_mass)           \
        X(llhx_cold_fluid_mass) X(c_fluid) X(c_wall) X(hA_cphx) X(hA_llhx_hot) X(hA_llhx_cold) X(sink_temp)   \
            X(pump_flow) X(sink_flow) X(slew_limit) X(wall_temp0) X(fluid_temp0) X(sink_side_temp0)            \
                X(wall_temp_max) X(fluid_temp_max) X(sink_side_temp_max)

nlohmann::json to_json(const ThermalParams& p) {
    nlohmann::json j;
#define X(f) j[#f] = p.f;
    TF_PARAM_FIELDS(X)
#undef X
    return j;
}

ThermalParams params_from_json(const nlohmann::json& j) {
    ThermalParams p;
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
#define X(f)                                 \
    if (it.key() == #f) {                    \
        p.f = it.value().get<double>();      \
        known = true;                        \
    }
        TF_PARAM_FIELDS(X)
#undef X
        if (!known) throw ValidationError("unknown thermal parameter '" + it.key() + "'");
    }
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// FlowLayout

FlowLayout::FlowLayout(const ConfigGraph& g) {
    const int n = g.size();
    // Decide which edges are independent: all but the last child at every split.
    std::vector<int> indep_slot(n, -1);
    auto mark = [&](const std::vector<int>& kids) {
        if (kids.size() < 2) return;
        for (std::size_t k = 0; k + 1 < kids.size(); ++k) {
            indep_slot[kids[k]] = static_cast<int>(independent_edges_.size());
            independent_edges_.push_back(kids[k]);
        }
    };
    mark(g.roots());
    for (int v = 0; v < n; ++v) mark(g.children(v));

    const int q = independent_count();
    E_ = Eigen::MatrixXd::Zero(n, q);
    offset_ = Eigen::VectorXd::Zero(n);

    // Top-down: each vertex's flow row is known before its children's.
    std::vector<int> order = g.roots();
    for (std::size_t head = 0; head < order.size(); ++head) {
        auto kids = g.children(order[head]);
        order.insert(order.end(), kids.begin(), kids.end());
    }
    auto assign = [&](const std::vector<int>& kids, const Eigen::RowVectorXd& parent_row, double parent_off) {
        Eigen::RowVectorXd rest = parent_row;
        double rest_off = parent_off;
        for (int c : kids) {
            if (indep_slot[c] >= 0) {
                E_(c, indep_slot[c]) = 1.0;
                rest(indep_slot[c]) -= 1.0;
            }
        }
        for (int c : kids) {
            if (indep_slot[c] < 0) {
                E_.row(c) = rest;
                offset_(c) = rest_off;
            }
        }
    };
    assign(g.roots(), Eigen::RowVectorXd::Zero(q), 1.0);
    for (int v : order) assign(g.children(v), E_.row(v), offset_(v));

    for (int i = 0; i < n; ++i) {
        if (indep_slot[i] < 0 && E_.row(i).cwiseAbs().sum() > 0.0) dependent_edges_.push_back(i);
        if (g.children(i).empty()) leaves_.push_back(i);
    }
}

Eigen::VectorXd FlowLayout::edge_flows(const Eigen::VectorXd& indep, double pump_flow) const {
    return E_ * indep + offset_ * pump_flow;
}

Eigen::MatrixXd FlowLayout::dependent_matrix() const {
    Eigen::MatrixXd M(dependent_edges_.size(), independent_count());
    for (std::size_t r = 0; r < dependent_edges_.size(); ++r) M.row(r) = E_.row(dependent_edges_[r]);
    return M;
}

Eigen::VectorXd FlowLayout::dependent_offset() const {
    Eigen::VectorXd m0(dependent_edges_.size());
    for (std::size_t r = 0; r < dependent_edges_.size(); ++r) m0(r) = offset_(dependent_edges_[r]);
    return m0;
}

Eigen::MatrixXd FlowLayout::routing() const {
    const int n = edge_count(), q = independent_count();
    const int leaves = static_cast<int>(leaves_.size());
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n + leaves + 2, q + 2);
    for (int i = 0; i < n; ++i) {
        Z(i, 0) = offset_(i);
        Z.block(i, 1, 1, q) = E_.row(i);
    }
    for (int l = 0; l < leaves; ++l) Z.row(n + l) = Z.row(leaves_[l]);
    Z(n + leaves, 0) = 1.0;
    Z(n + leaves + 1, q + 1) = 1.0;
    return Z;
}

// ---------------------------------------------------------------------------
// PhysicsGraph

PhysicsGraph::PhysicsGraph(ConfigGraph g, ThermalParams p)
    : config_(canonicalize(g)), params_(p), layout_(config_) {
    params_.validate();
    const int n = cphx_count();
    upstream_.resize(n);
    for (int i = 0; i < n; ++i) upstream_[i] = config_.parent(i) == kTank ? tank() : fluid(config_.parent(i));

    const int m = state_size();
    capacity_.resize(m);
    upper_.resize(m);
    initial_.resize(m);
    for (int i = 0; i < n; ++i) {
        capacity_(wall(i)) = p.cphx_wall_mass * p.c_wall;
        capacity_(fluid(i)) = p.cphx_fluid_mass * p.c_fluid;
        upper_(wall(i)) = p.wall_temp_max;
        upper_(fluid(i)) = p.fluid_temp_max;
        initial_(wall(i)) = p.wall_temp0;
        initial_(fluid(i)) = p.fluid_temp0;
    }
    capacity_(tank()) = p.tank_fluid_mass * p.c_fluid;
    capacity_(llhx_wall()) = p.llhx_wall_mass * p.c_wall;
    capacity_(llhx_hot()) = p.llhx_hot_fluid_mass * p.c_fluid;
    capacity_(llhx_cold()) = p.llhx_cold_fluid_mass * p.c_fluid;
    upper_(tank()) = p.fluid_temp_max;
    upper_(llhx_wall()) = p.wall_temp_max;
    upper_(llhx_hot()) = p.fluid_temp_max;
    upper_(llhx_cold()) = p.sink_side_temp_max;
    initial_(tank()) = p.fluid_temp0;
    initial_(llhx_wall()) = p.wall_temp0;
    initial_(llhx_hot()) = p.fluid_temp0;
    initial_(llhx_cold()) = p.sink_side_temp0;
}

NodeKind PhysicsGraph::kind(int node) const {
    const int n = cphx_count();
    if (node < n) return NodeKind::cphx_wall;
    if (node < 2 * n) return NodeKind::cphx_fluid;
    switch (node - 2 * n) {
        case 0: return NodeKind::tank_fluid;
        case 1: return NodeKind::llhx_wall;
        case 2: return NodeKind::llhx_hot;
        default: return NodeKind::llhx_cold;
    }
}

std::string PhysicsGraph::node_name(int node) const {
    const int n = cphx_count();
    if (node < n) return "w" + std::to_string(node + 1);
    if (node < 2 * n) return "f" + std::to_string(node - n + 1);
    static const char* names[] = {"tank", "llhx_wall", "llhx_hot", "llhx_cold"};
    return names[node - 2 * n];
}

int PhysicsGraph::upstream(int fluid_node) const {
    if (fluid_node == tank()) return llhx_hot();
    if (kind(fluid_node) != NodeKind::cphx_fluid) throw std::out_of_range("upstream() needs a CPHX fluid or tank node");
    return upstream_[fluid_node - cphx_count()];
}

Eigen::VectorXd PhysicsGraph::equal_split_flows() const {
    return load_proportional_flows(std::vector<double>(cphx_count(), 1.0));
}

Eigen::VectorXd PhysicsGraph::load_proportional_flows(const std::vector<double>& loads_kw) const {
    check_loads(loads_kw);
    const int n = cphx_count();
    std::vector<double> subtree(loads_kw.begin(), loads_kw.end());
    // children have larger depth; accumulate deepest first
    std::vector<int> by_depth(n);
    for (int i = 0; i < n; ++i) by_depth[i] = i;
    std::sort(by_depth.begin(), by_depth.end(),
              [&](int a, int b) { return config_.depth_of(a) > config_.depth_of(b); });
    for (int v : by_depth)
        if (config_.parent(v) != kTank) subtree[config_.parent(v)] += subtree[v];

    std::vector<double> flow(n, 0.0);
    auto share = [&](const std::vector<int>& kids, double parent_flow) {
        double total = 0.0;
        for (int c : kids) total += subtree[c];
        for (int c : kids)
            flow[c] = total > 0.0 ? parent_flow * subtree[c] / total : parent_flow / kids.size();
    };
    std::vector<int> order = config_.roots();
    share(order, params_.pump_flow);
    for (std::size_t head = 0; head < order.size(); ++head) {
        auto kids = config_.children(order[head]);
        share(kids, flow[order[head]]);
        order.insert(order.end(), kids.begin(), kids.end());
    }
    Eigen::VectorXd out(flow_dof());
    for (int k = 0; k < flow_dof(); ++k) out(k) = flow[layout_.independent_edges()[k]];
    return out;
}

void PhysicsGraph::check_loads(const std::vector<double>& loads_kw) const {
    if (static_cast<int>(loads_kw.size()) != cphx_count())
        throw ValidationError("load vector length " + std::to_string(loads_kw.size()) + " does not match " +
                              std::to_string(cphx_count()) + " CPHX nodes");
    for (double d : loads_kw)
        if (!(d >= 0.0) || !std::isfinite(d)) throw ValidationError("loads must be finite and non-negative");
}

double PhysicsGraph::mixed_exit(const Eigen::VectorXd& temps, const Eigen::VectorXd& edge) const {
    double total = 0.0, weighted = 0.0, plain = 0.0;
    for (int l : layout_.leaves()) {
        total += edge(l);
        weighted += edge(l) * temps(fluid(l));
        plain += temps(fluid(l));
    }
    if (std::abs(total) < kMixGuard) return plain / layout_.leaves().size();
    return weighted / total;
}

Eigen::VectorXd PhysicsGraph::derivative(const Eigen::VectorXd& T, const Eigen::VectorXd& indep_flows,
                                         const std::vector<double>& loads_kw) const {
    const auto& p = params_;
    const int n = cphx_count();
    const Eigen::VectorXd m = layout_.edge_flows(indep_flows, p.pump_flow);
    Eigen::VectorXd d(state_size());
    for (int i = 0; i < n; ++i) {
        const double tw = T(wall(i)), tf = T(fluid(i));
        const double conv = p.hA_cphx * (tw - tf);
        d(wall(i)) = (loads_kw[i] * 1000.0 - conv) / capacity_(wall(i));
        d(fluid(i)) = (m(i) * p.c_fluid * (T(upstream_[i]) - tf) + conv) / capacity_(fluid(i));
    }
    const double mix = mixed_exit(T, m);
    const double th = T(llhx_hot()), tlw = T(llhx_wall()), tlc = T(llhx_cold());
    const double q_hot = p.hA_llhx_hot * (th - tlw);
    const double q_cold = p.hA_llhx_cold * (tlw - tlc);
    d(llhx_hot()) = (p.pump_flow * p.c_fluid * (mix - th) - q_hot) / capacity_(llhx_hot());
    d(llhx_wall()) = (q_hot - q_cold) / capacity_(llhx_wall());
    d(llhx_cold()) = (p.sink_flow * p.c_fluid * (p.sink_temp - tlc) + q_cold) / capacity_(llhx_cold());
    d(tank()) = p.pump_flow * p.c_fluid * (th - T(tank())) / capacity_(tank());
    return d;
}

void PhysicsGraph::derivative_jacobian(const Eigen::VectorXd& T, const Eigen::VectorXd& indep_flows,
                                       const std::vector<double>& loads_kw, Eigen::VectorXd& d,
                                       Eigen::MatrixXd& dT, Eigen::MatrixXd& dq) const {
    const auto& p = params_;
    const int n = cphx_count(), s = state_size();
    const Eigen::VectorXd m = layout_.edge_flows(indep_flows, p.pump_flow);
    d = derivative(T, indep_flows, loads_kw);
    dT.setZero(s, s);
    Eigen::MatrixXd dm = Eigen::MatrixXd::Zero(s, n);  // w.r.t. physical edge flows

    for (int i = 0; i < n; ++i) {
        const double cw = capacity_(wall(i)), cf = capacity_(fluid(i));
        dT(wall(i), wall(i)) = -p.hA_cphx / cw;
        dT(wall(i), fluid(i)) = p.hA_cphx / cw;
        dT(fluid(i), wall(i)) += p.hA_cphx / cf;
        dT(fluid(i), fluid(i)) += (-m(i) * p.c_fluid - p.hA_cphx) / cf;
        dT(fluid(i), upstream_[i]) += m(i) * p.c_fluid / cf;
        dm(fluid(i), i) = p.c_fluid * (T(upstream_[i]) - T(fluid(i))) / cf;
    }
    const double ch = capacity_(llhx_hot());
    const double adv = p.pump_flow * p.c_fluid / ch;
    double total = 0.0;
    for (int l : layout_.leaves()) total += m(l);
    const double mix = mixed_exit(T, m);
    const double nleaves = static_cast<double>(layout_.leaves().size());
    for (int l : layout_.leaves()) {
        if (std::abs(total) < kMixGuard) {
            dT(llhx_hot(), fluid(l)) += adv / nleaves;
        } else {
            dT(llhx_hot(), fluid(l)) += adv * m(l) / total;
            dm(llhx_hot(), l) = adv * (T(fluid(l)) - mix) / total;
        }
    }
    dT(llhx_hot(), llhx_hot()) = -adv - p.hA_llhx_hot / ch;
    dT(llhx_hot(), llhx_wall()) = p.hA_llhx_hot / ch;
    const double clw = capacity_(llhx_wall());
    dT(llhx_wall(), llhx_hot()) = p.hA_llhx_hot / clw;
    dT(llhx_wall(), llhx_wall()) = -(p.hA_llhx_hot + p.hA_llhx_cold) / clw;
    dT(llhx_wall(), llhx_cold()) = p.hA_llhx_cold / clw;
    const double clc = capacity_(llhx_cold());
    dT(llhx_cold(), llhx_wall()) = p.hA_llhx_cold / clc;
    dT(llhx_cold(), llhx_cold()) = -(p.sink_flow * p.c_fluid + p.hA_llhx_cold) / clc;
    const double ct = capacity_(tank());
    dT(tank(), llhx_hot()) = p.pump_flow * p.c_fluid / ct;
    dT(tank(), tank()) = -p.pump_flow * p.c_fluid / ct;

    dq = dm * layout_.edge_matrix();
}

DynamicsOperators PhysicsGraph::operators() const {
    const auto& p = params_;
    const int n = cphx_count(), s = state_size();
    const auto& leaves = layout_.leaves();
    const int streams = n + static_cast<int>(leaves.size()) + 2;
    const int sink_col = s;  // column of the boundary temperature in [T; Ts]

    DynamicsOperators op;
    op.capacity = capacity_;
    op.Z = layout_.routing();
    op.A = Eigen::MatrixXd::Zero(s, s + 1);
    op.B1 = Eigen::MatrixXd::Zero(s, streams);
    op.B2 = Eigen::MatrixXd::Zero(streams, s + 1);
    op.D = Eigen::MatrixXd::Zero(s, n);

    auto couple = [&](int a, int b, double hA) {
        op.A(a, a) -= hA / capacity_(a);
        op.A(a, b) += hA / capacity_(a);
        op.A(b, b) -= hA / capacity_(b);
        op.A(b, a) += hA / capacity_(b);
    };
    for (int i = 0; i < n; ++i) couple(wall(i), fluid(i), p.hA_cphx);
    couple(llhx_hot(), llhx_wall(), p.hA_llhx_hot);
    couple(llhx_wall(), llhx_cold(), p.hA_llhx_cold);

    auto stream = [&](int k, int from, int to) {
        op.B2(k, from) += 1.0;
        op.B2(k, to) -= 1.0;
        op.B1(to, k) = p.c_fluid / capacity_(to);
    };
    for (int i = 0; i < n; ++i) stream(i, upstream_[i], fluid(i));
    for (std::size_t l = 0; l < leaves.size(); ++l) stream(n + static_cast<int>(l), fluid(leaves[l]), llhx_hot());
    stream(streams - 2, llhx_hot(), tank());
    stream(streams - 1, sink_col, llhx_cold());

    for (int i = 0; i < n; ++i) op.D(wall(i), i) = 1.0;
    return op;
}

PhysicsGraph build_physics_graph(const ConfigGraph& g, const ThermalParams& p) { return PhysicsGraph(g, p); }

// ---------------------------------------------------------------------------
// Simulation

FlowPolicy constant_policy(Eigen::VectorXd flows) {
    return [flows = std::move(flows)](double) { return flows; };
}

Trajectory simulate(const PhysicsGraph& pg, const std::vector<double>& loads_kw, const FlowPolicy& policy,
                    const SimulateOptions& opt) {
    if (!(opt.dt > 0.0)) throw ValidationError("dt must be positive");
    if (!(opt.t_max >= 0.0)) throw ValidationError("t_max must be non-negative");
    pg.check_loads(loads_kw);
    const long steps = static_cast<long>(std::ceil(opt.t_max / opt.dt - 1e-9));
    const auto& ub = pg.upper_bounds();

    Trajectory traj;
    Eigen::VectorXd T = pg.initial_temperatures();
    traj.times.push_back(0.0);
    traj.temps.push_back(T);
    traj.indep_flows.push_back(policy(0.0));

    const double h = opt.dt;
    for (long k = 0; k < steps; ++k) {
        const double t = k * h;
        const Eigen::VectorXd q0 = policy(t), qh = policy(t + 0.5 * h), q1 = policy(t + h);
        const Eigen::VectorXd k1 = pg.derivative(T, q0, loads_kw);
        const Eigen::VectorXd k2 = pg.derivative(T + 0.5 * h * k1, qh, loads_kw);
        const Eigen::VectorXd k3 = pg.derivative(T + 0.5 * h * k2, qh, loads_kw);
        const Eigen::VectorXd k4 = pg.derivative(T + h * k3, q1, loads_kw);
        T += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!T.allFinite()) throw DivergenceError("non-finite state at step " + std::to_string(k + 1), k + 1);
        traj.times.push_back((k + 1) * h);
        traj.temps.push_back(T);
        traj.indep_flows.push_back(q1);
        if (opt.stop_at_bound && (T.array() > ub.array()).any()) break;
    }
    return traj;
}

std::optional<double> endurance_from_trajectory(const Trajectory& traj, const Eigen::VectorXd& ub) {
    if (traj.temps.empty()) return std::nullopt;
    if ((traj.temps[0].array() > ub.array()).any()) return traj.times[0];
    for (std::size_t k = 1; k < traj.temps.size(); ++k) {
        const auto& cur = traj.temps[k];
        if (!(cur.array() > ub.array()).any()) continue;
        const auto& prev = traj.temps[k - 1];
        const double t0 = traj.times[k - 1], t1 = traj.times[k];
        double best = t1;
        for (int i = 0; i < cur.size(); ++i) {
            if (cur(i) <= ub(i)) continue;
            const double frac = (ub(i) - prev(i)) / (cur(i) - prev(i));
            best = std::min(best, t0 + std::clamp(frac, 0.0, 1.0) * (t1 - t0));
        }
        return best;
    }
    return std::nullopt;
}

std::optional<double> simulate_endurance(const PhysicsGraph& pg, const std::vector<double>& loads_kw,
                                         const FlowPolicy& policy, double t_max, double dt) {
    SimulateOptions opt;
    opt.t_max = t_max;
    opt.dt = dt;
    opt.stop_at_bound = true;
    return endurance_from_trajectory(simulate(pg, loads_kw, policy, opt), pg.upper_bounds());
}

void write_trajectory_csv(std::ostream& os, const PhysicsGraph& pg, const Trajectory& traj) {
    os << "t";
    for (int i = 0; i < pg.state_size(); ++i) os << ",T_" << pg.node_name(i);
    for (int i = 0; i < pg.cphx_count(); ++i) os << ",mdot_" << i + 1;
    os << "\n";
    char buf[64];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.10g", v);
        os << buf;
    };
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
        put(traj.times[k]);
        for (int i = 0; i < traj.temps[k].size(); ++i) {
            os << ',';
            put(traj.temps[k](i));
        }
        const Eigen::VectorXd m = pg.layout().edge_flows(traj.indep_flows[k], pg.params().pump_flow);
        for (int i = 0; i < m.size(); ++i) {
            os << ',';
            put(m(i));
        }
        os << "\n";
    }
}

}  // namespace thermoforge
