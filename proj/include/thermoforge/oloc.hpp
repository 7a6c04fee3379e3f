#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "thermoforge/physics.hpp"

namespace thermoforge {

struct SolveOptions {
    int segments = 24;
    int max_outer = 30;
    int max_inner = 200;
    double defect_tolerance = 1e-4;  // scaled units
    double path_tolerance = 1e-3;    // scaled units
    double t_end_min = 1.0;
    double t_end_max = 500.0;
    double screen_dt = 0.01;   // re-simulation step used to rank candidates
    double verify_dt = 0.001;  // re-simulation step of the final report
    double series_dt = 0.02;   // integrator step of the no-control fast path
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const SolveOptions& o);
SolveOptions solve_options_from_json(const nlohmann::json& j);

// Trapezoidal direct transcription on a normalized grid tau in [0, 1].
// Per grid node the decision vector holds scaled temperatures
// theta = (T - T_sink) / (T_max - T_sink) and scaled independent flows
// mu = m / pump_flow; then the scaled controls v = u / slew_limit at every
// node; last the scaled horizon s = t_end / 100.
class Transcription {
public:
    static constexpr double kTimeScale = 100.0;

    Transcription(const PhysicsGraph& pg, std::vector<double> loads_kw, int segments, double t_end_min = 1.0,
                  double t_end_max = 500.0);

    const PhysicsGraph& physics() const { return *pg_; }
    const std::vector<double>& loads() const { return loads_; }
    int segments() const { return segments_; }
    int node_count() const { return segments_ + 1; }
    int state_count() const { return pg_->state_size(); }
    int flow_count() const { return pg_->flow_dof(); }
    int node_width() const { return state_count() + flow_count(); }
    int control_count() const { return flow_count() * node_count(); }
    int variable_count() const { return node_width() * node_count() + control_count() + 1; }
    int defect_count() const { return node_width() * segments_; }
    int path_count() const { return 2 * static_cast<int>(dep_rows_.rows()) * node_count(); }

    int theta_index(int k) const { return k * node_width(); }
    int mu_index(int k) const { return k * node_width() + state_count(); }
    int v_index(int k) const { return node_width() * node_count() + k * flow_count(); }
    int s_index() const { return variable_count() - 1; }

    const Eigen::VectorXd& lower() const { return lo_; }
    const Eigen::VectorXd& upper() const { return hi_; }

    double temp_scale() const { return temp_scale_; }
    double temp_offset() const { return temp_offset_; }
    Eigen::VectorXd unscale_temps(const Eigen::VectorXd& theta) const;
    double t_end(const Eigen::VectorXd& z) const { return z(s_index()) * kTimeScale; }

    // Defects followed by path inequalities (feasible when <= 0).
    void residuals(const Eigen::VectorXd& z, Eigen::VectorXd& defects, Eigen::VectorXd& path) const;
    Eigen::VectorXd residual_vector(const Eigen::VectorXd& z) const;
    Eigen::MatrixXd residual_jacobian(const Eigen::VectorXd& z) const;

    double max_defect(const Eigen::VectorXd& z) const;
    // Largest violation of path inequalities and variable bounds.
    double max_path_violation(const Eigen::VectorXd& z) const;

    // Augmented Lagrangian of -s with multipliers lambda (defects) and nu
    // (path inequalities); writes the gradient into grad.
    double augmented_lagrangian(const Eigen::VectorXd& z, const Eigen::VectorXd& lambda, const Eigen::VectorXd& nu,
                                double rho, Eigen::VectorXd& grad) const;

    // Feasible start: constant flows, zero controls, trapezoidal integration
    // and the longest horizon keeping every node temperature within bounds.
    Eigen::VectorXd constant_flow_guess(const Eigen::VectorXd& indep_flows) const;

private:
    void node_dynamics(const Eigen::VectorXd& z, int k, Eigen::VectorXd& G, Eigen::MatrixXd& J) const;
    Eigen::VectorXd dependent_fraction(const Eigen::VectorXd& mu) const;

    const PhysicsGraph* pg_;
    std::vector<double> loads_;
    int segments_;
    double temp_offset_, temp_scale_;
    double v_gain_;  // d mu / d tau per unit v and unit s
    Eigen::MatrixXd dep_rows_;
    Eigen::VectorXd dep_offset_;
    Eigen::VectorXd lo_, hi_;
};

Transcription transcribe(const PhysicsGraph& pg, const std::vector<double>& loads_kw, int segments);

struct FeasibilityReport {
    double max_overshoot = 0.0;  // K above any temperature bound within [0, t_end]
    double max_flow_violation = 0.0;  // kg/s outside [0, pump_flow] on any branch
    double resimulated_endurance = 0.0;
    bool reached_bound = false;  // false when the horizon cap was hit first
    double mismatch = 0.0;  // |resimulated - t_end| / t_end
    bool mismatch_flag = false;
};

struct OlocSolution {
    double t_end = 0.0;  // transcription horizon, s
    bool converged = false;
    double max_defect = 0.0;
    double max_path_violation = 0.0;
    std::vector<double> objective_history;  // t_end after each outer iteration
    int start_index = 0;
    int outer_iterations = 0;

    std::vector<double> grid;               // s
    std::vector<Eigen::VectorXd> temps;     // degC per grid node
    std::vector<Eigen::VectorXd> flows;     // independent flows, kg/s
    std::vector<Eigen::VectorXd> controls;  // kg/s^2

    FeasibilityReport report;

    // Endurance of the returned controls on the continuous-time model.
    double endurance() const { return report.resimulated_endurance; }
};

OlocSolution solve(const PhysicsGraph& pg, const std::vector<double>& loads_kw, const SolveOptions& opt = {});

// Flows of a solution as a function of time: initial flows plus the
// integral of the linearly interpolated controls; controls are zero past t_end.
FlowPolicy control_policy(const OlocSolution& sol);

FeasibilityReport verify_feasibility(const OlocSolution& sol, const PhysicsGraph& pg,
                                     const std::vector<double>& loads_kw, double dt = 0.001);

struct OracleResult {
    double t_end = 0.0;
    double segment_length = 0.0;
    std::vector<Eigen::VectorXd> levels;  // independent flows per segment, kg/s
    long profiles = 0;                    // slew- and flow-feasible profiles evaluated
};

struct OracleOptions {
    int segments = 3;
    int levels = 5;
    double dt = 0.02;
    double t_max = 500.0;
};

// Exhaustive search over piecewise-constant independent flows on equal
// segments spanning the equal-split endurance. Changes between segments
// ramp at the slew limit and must complete within one segment.
OracleResult brute_force_piecewise_oracle(const PhysicsGraph& pg, const std::vector<double>& loads_kw,
                                          const OracleOptions& opt = {});

FlowPolicy piecewise_policy(const PhysicsGraph& pg, const std::vector<Eigen::VectorXd>& levels, double segment_length);

nlohmann::json to_json(const OlocSolution& sol);
Trajectory solution_trajectory(const OlocSolution& sol);

}  // namespace thermoforge
