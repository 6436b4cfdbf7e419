#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace effid {

enum class Termination { gradient_small, max_iters, line_search_failed };

/// Initial trial step of each line search after the first iteration.
enum class StepRule { barzilai_borwein_long, barzilai_borwein_short, alternating, doubling };

std::string to_string(Termination t);

struct DescentOptions {
  double armijo = 0.1;          // sufficient-decrease parameter m
  double backtrack = 0.5;
  double max_step_fraction = 0.1;  // |x_{k+1} - x_k| <= fraction * |x_k|
  double gradient_rtol = 1e-8;  // relative to the initial gradient norm
  double gradient_atol = 1e-14;  // absolute floor, scaled by 1 + f
  int max_iterations = 200;
  int max_backtracks = 60;
  StepRule step_rule = StepRule::alternating;
};

struct DescentTrace {
  std::vector<Eigen::VectorXd> iterates;
  std::vector<double> values;
  std::vector<double> steps;  // accepted step sizes, one per iteration
  std::vector<bool> feasible;
  Termination termination = Termination::max_iters;
  int evaluations = 0;
  int gradient_evaluations = 0;

  int iterations() const { return static_cast<int>(steps.size()); }
  const Eigen::VectorXd& final_point() const { return iterates.back(); }
  double final_value() const { return values.back(); }
};

/// Objective value; fills *grad when grad is non-null.
using ScalarObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;
using Feasibility = std::function<bool(const Eigen::VectorXd& x)>;
using StepNorm = std::function<double(const Eigen::VectorXd& x)>;

/// Gradient descent x <- x - t grad f with Armijo backtracking.
///
/// The first trial step of every iteration is the Barzilai-Borwein step
/// (2x the previous step when the curvature estimate is unusable; the
/// largest allowed step on the first iteration), capped so the update moves x
/// by at most max_step_fraction of its norm. Infeasible trial points are
/// treated like failed Armijo tests.
DescentTrace gradient_descent(const ScalarObjective& f, const Eigen::VectorXd& x0, const DescentOptions& opts = {},
                              const Feasibility& feasible = {}, const StepNorm& norm = {});

/// Central differences with per-coordinate step h.
Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double h);

}  // namespace effid
