#pragma once

#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "thermoforge/config_graph.hpp"

namespace thermoforge {

// Lumped-parameter constants of the coolant loop. Masses in kg, heat
// capacities in J/(kg K), conductances in W/K, flows in kg/s, slew in kg/s^2,
// temperatures in degC.
struct ThermalParams {
    double cphx_wall_mass = 1.15;
    double llhx_wall_mass = 1.2;
    double tank_fluid_mass = 2.01;
    double cphx_fluid_mass = 0.2;
    double llhx_hot_fluid_mass = 0.5;
    double llhx_cold_fluid_mass = 0.5;
    double c_fluid = 3680.0;  // 50/50 water-glycol
    double c_wall = 900.0;    // aluminium
    double hA_cphx = 500.0;
    double hA_llhx_hot = 1000.0;
    double hA_llhx_cold = 1000.0;
    double sink_temp = 15.0;
    double pump_flow = 0.4;
    double sink_flow = 0.2;
    double slew_limit = 0.05;
    double wall_temp0 = 20.0;
    double fluid_temp0 = 20.0;
    double sink_side_temp0 = 15.0;
    double wall_temp_max = 45.0;
    double fluid_temp_max = 45.0;
    double sink_side_temp_max = 45.0;

    void validate() const;  // throws ValidationError
};

nlohmann::json to_json(const ThermalParams& p);
ThermalParams params_from_json(const nlohmann::json& j);

struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& what, long step) : std::runtime_error(what), step(step) {}
    long step;
};

// Branch-flow routing for one configuration. Every CPHX inflow is affine in
// the independent flows: flow = E * m_indp + offset * pump_flow. The first
// children (ascending id) of each split are independent, the last one takes
// the remainder.
class FlowLayout {
public:
    FlowLayout() = default;
    explicit FlowLayout(const ConfigGraph& g);

    int edge_count() const { return static_cast<int>(offset_.size()); }
    int independent_count() const { return static_cast<int>(independent_edges_.size()); }

    // CPHX index owning each independent flow.
    const std::vector<int>& independent_edges() const { return independent_edges_; }
    // Edges whose flow is not a decision variable but varies with one.
    const std::vector<int>& dependent_edges() const { return dependent_edges_; }
    const std::vector<int>& leaves() const { return leaves_; }

    const Eigen::MatrixXd& edge_matrix() const { return E_; }
    const Eigen::VectorXd& edge_offset() const { return offset_; }

    // Physical CPHX inflows (kg/s) from independent flows (kg/s).
    Eigen::VectorXd edge_flows(const Eigen::VectorXd& indep, double pump_flow) const;

    // Dependent-flow map: m_dp = M_c m_indp + m_0 pump_flow over dependent_edges().
    Eigen::MatrixXd dependent_matrix() const;
    Eigen::VectorXd dependent_offset() const;

    // Routing operator Z: [pump_flow; m_indp; sink_flow] -> every physical
    // stream, ordered as CPHX inflows (n), leaf exits (#leaves), tank return,
    // sink stream.
    Eigen::MatrixXd routing() const;

private:
    Eigen::MatrixXd E_;
    Eigen::VectorXd offset_;
    std::vector<int> independent_edges_;
    std::vector<int> dependent_edges_;
    std::vector<int> leaves_;
};

enum class NodeKind { cphx_wall, cphx_fluid, tank_fluid, llhx_wall, llhx_hot, llhx_cold };

// Explicit operator form of the dynamics,
//   dT/dt = A [T; Ts] + B1 diag(Z w) B2 [T; Ts] + C^-1 D P,
// with w = [pump_flow; m_indp; sink_flow] and P the wall loads in W.
struct DynamicsOperators {
    Eigen::MatrixXd A;
    Eigen::MatrixXd B1;
    Eigen::MatrixXd B2;
    Eigen::MatrixXd Z;
    Eigen::VectorXd capacity;  // diagonal of C, J/K
    Eigen::MatrixXd D;
};

// Thermal network of one configuration. Dynamic temperatures are laid out as
// [walls 1..n, CPHX fluids 1..n, tank, LLHX wall, LLHX hot, LLHX cold].
class PhysicsGraph {
public:
    PhysicsGraph(ConfigGraph g, ThermalParams p);

    const ConfigGraph& config() const { return config_; }
    const ThermalParams& params() const { return params_; }
    const FlowLayout& layout() const { return layout_; }

    int cphx_count() const { return config_.size(); }
    int state_size() const { return 2 * cphx_count() + 4; }
    int flow_dof() const { return layout_.independent_count(); }

    int wall(int i) const { return i; }
    int fluid(int i) const { return cphx_count() + i; }
    int tank() const { return 2 * cphx_count(); }
    int llhx_wall() const { return tank() + 1; }
    int llhx_hot() const { return tank() + 2; }
    int llhx_cold() const { return tank() + 3; }

    NodeKind kind(int node) const;
    std::string node_name(int node) const;
    // Dynamic node feeding fluid node `node` by advection.
    int upstream(int fluid_node) const;

    const Eigen::VectorXd& capacity() const { return capacity_; }
    const Eigen::VectorXd& upper_bounds() const { return upper_; }
    const Eigen::VectorXd& initial_temperatures() const { return initial_; }

    // Independent flows for constant splits: equal shares at every junction,
    // or shares proportional to the downstream load.
    Eigen::VectorXd equal_split_flows() const;
    Eigen::VectorXd load_proportional_flows(const std::vector<double>& loads_kw) const;

    // dT/dt in K/s. `indep_flows` in kg/s, loads in kW.
    Eigen::VectorXd derivative(const Eigen::VectorXd& temps, const Eigen::VectorXd& indep_flows,
                               const std::vector<double>& loads_kw) const;

    // Same as derivative() plus d(dT/dt)/dT and d(dT/dt)/d(indep_flows).
    void derivative_jacobian(const Eigen::VectorXd& temps, const Eigen::VectorXd& indep_flows,
                             const std::vector<double>& loads_kw, Eigen::VectorXd& dTdt,
                             Eigen::MatrixXd& d_temps, Eigen::MatrixXd& d_flows) const;

    DynamicsOperators operators() const;

    // Throws ValidationError on a wrong-length, negative or non-finite load vector.
    void check_loads(const std::vector<double>& loads_kw) const;

private:
    double mixed_exit(const Eigen::VectorXd& temps, const Eigen::VectorXd& edge) const;

    ConfigGraph config_;
    ThermalParams params_;
    FlowLayout layout_;
    std::vector<int> upstream_;  // per CPHX: dynamic node feeding its fluid
    Eigen::VectorXd capacity_;
    Eigen::VectorXd upper_;
    Eigen::VectorXd initial_;
};

PhysicsGraph build_physics_graph(const ConfigGraph& g, const ThermalParams& p);

// Independent flows (kg/s) as a function of time (s).
using FlowPolicy = std::function<Eigen::VectorXd(double)>;

FlowPolicy constant_policy(Eigen::VectorXd flows);

struct Trajectory {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> temps;
    std::vector<Eigen::VectorXd> indep_flows;
};

struct SimulateOptions {
    double t_max = 500.0;
    double dt = 0.02;
    bool stop_at_bound = false;  // end one step after the first bound violation
};

// Fixed-step classical RK4. Throws DivergenceError on a non-finite state.
Trajectory simulate(const PhysicsGraph& pg, const std::vector<double>& loads_kw, const FlowPolicy& policy,
                    const SimulateOptions& opt);

// First time any temperature exceeds its bound, linearly interpolated
// between the bracketing steps; nullopt if never within the trajectory.
std::optional<double> endurance_from_trajectory(const Trajectory& traj, const Eigen::VectorXd& upper_bounds);

std::optional<double> simulate_endurance(const PhysicsGraph& pg, const std::vector<double>& loads_kw,
                                         const FlowPolicy& policy, double t_max, double dt);

// Header `t,T_<node>...,mdot_<cphx id>...`; flows are the physical CPHX inflows.
void write_trajectory_csv(std::ostream& os, const PhysicsGraph& pg, const Trajectory& traj);

}  // namespace thermoforge
