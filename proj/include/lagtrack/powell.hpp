#pragma once

#include <functional>

#include <Eigen/Core>

namespace lagtrack {

struct PowellOptions {
  // Stop when the relative objective decrease of an outer iteration falls
  // below this.
  double relative_tolerance = 1e-10;
  int max_iterations = 200;
  double line_tolerance = 1e-10;
};

struct PowellResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

using Objective = std::function<double(const Eigen::VectorXd&)>;

/// Powell's direction-set method with Brent line minimization.
PowellResult minimize_powell(const Objective& f, const Eigen::VectorXd& start,
                             const PowellOptions& options = {});

/// Brent's method on the line x + t d; returns (t, f(x + t d)).
std::pair<double, double> line_minimize(const Objective& f, const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& direction, double f_at_x,
                                        double tolerance);

}  // namespace lagtrack
