#include "effid/descent.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace effid {

std::string to_string(Termination t) {
  switch (t) {
    case Termination::gradient_small: return "gradient_small";
    case Termination::max_iters: return "max_iters";
    case Termination::line_search_failed: return "line_search_failed";
  }
  return "unknown";
}

DescentTrace gradient_descent(const ScalarObjective& f, const Eigen::VectorXd& x0, const DescentOptions& opts,
                              const Feasibility& feasible, const StepNorm& norm) {
  const auto measure = [&](const Eigen::VectorXd& v) { return norm ? norm(v) : v.norm(); };
  const auto ok = [&](const Eigen::VectorXd& v) { return !feasible || feasible(v); };
  if (!ok(x0)) throw std::invalid_argument("gradient_descent: infeasible initial point");

  DescentTrace trace;
  Eigen::VectorXd x = x0;
  Eigen::VectorXd g;
  double fx = f(x, &g);
  ++trace.evaluations;
  ++trace.gradient_evaluations;
  trace.iterates.push_back(x);
  trace.values.push_back(fx);
  trace.feasible.push_back(true);

  const double g0 = g.norm();
  const double rtol = opts.gradient_rtol * g0;
  Eigen::VectorXd x_prev, g_prev;
  double t_prev = 0.0;

  for (int k = 0;; ++k) {
    const double gn = g.norm();
    if (gn == 0.0 || fx == 0.0 || gn <= rtol || gn <= opts.gradient_atol * (1.0 + fx)) {
      trace.termination = Termination::gradient_small;
      return trace;
    }
    if (k >= opts.max_iterations) {
      trace.termination = Termination::max_iters;
      return trace;
    }
    const double cap = opts.max_step_fraction * measure(x) / measure(g);
    double t = cap;
    if (k > 0) {
      const Eigen::VectorXd s = x - x_prev;
      const Eigen::VectorXd y = g - g_prev;
      const double sy = s.dot(y);
      bool use_long = opts.step_rule == StepRule::barzilai_borwein_long ||
                      (opts.step_rule == StepRule::alternating && k % 2 == 1);
      if (opts.step_rule == StepRule::doubling || sy <= 0.0) t = 2.0 * t_prev;
      else t = use_long ? s.squaredNorm() / sy : sy / y.squaredNorm();
      t = std::min(t, cap);
    }

    bool accepted = false;
    Eigen::VectorXd xt;
    double ft = 0.0;
    for (int j = 0; j < opts.max_backtracks; ++j, t *= opts.backtrack) {
      xt = x - t * g;
      if (!ok(xt)) continue;
      ft = f(xt, nullptr);
      ++trace.evaluations;
      if (ft <= fx - opts.armijo * t * gn * gn) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      trace.termination = Termination::line_search_failed;
      return trace;
    }
    x_prev = x;
    g_prev = g;
    t_prev = t;
    x = xt;
    fx = f(x, &g);
    ++trace.evaluations;
    ++trace.gradient_evaluations;
    trace.iterates.push_back(x);
    trace.values.push_back(fx);
    trace.steps.push_back(t);
    trace.feasible.push_back(true);
    (void)ft;
  }
}

Eigen::VectorXd central_difference_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                            const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

}  // namespace effid
