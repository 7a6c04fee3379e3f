#pragma once

#include <functional>

#include <Eigen/Dense>

namespace thermoforge {

// Objective returning f(x) and writing the gradient into g.
using GradientFunction = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& g)>;

struct BoxQnOptions {
    int max_iterations = 200;
    int memory = 8;
    double pg_tolerance = 1e-6;  // infinity norm of the projected gradient step
    double f_tolerance = 1e-12;  // relative decrease below which we count a stall
};

struct BoxQnResult {
    Eigen::VectorXd x;
    double f = 0.0;
    double pg_norm = 0.0;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

// Projected limited-memory BFGS for lo <= x <= hi. Variables pinned at a
// bound with the gradient pushing outward are frozen for the quasi-Newton
// step; the step itself is projected back onto the box with Armijo
// backtracking. Fixed variables are expressed as lo == hi.
BoxQnResult minimize_box(const GradientFunction& fun, const Eigen::VectorXd& x0, const Eigen::VectorXd& lo,
                         const Eigen::VectorXd& hi, const BoxQnOptions& opt = {});

}  // namespace thermoforge
