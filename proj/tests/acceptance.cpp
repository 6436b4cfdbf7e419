// Acceptance run: one PASS/FAIL line per criterion. Exit status 1 if any fail.

#include "effid/config.hpp"
#include "effid/experiments.hpp"
#include "effid/homogenization.hpp"
#include "effid/identify.hpp"
#include "effid/modes.hpp"
#include "effid/rng.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace effid;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failed = 0;
int g_workers = 1;

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++g_failed;
  std::printf("%s [%2d] %s | %s | %.1f s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(), s);
  std::fflush(stdout);
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

SymMat random_spd(SplitMix64& rng, double lo, double hi) {
  const double l1 = rng.uniform(lo, hi), l2 = rng.uniform(lo, hi), t = rng.uniform(0.0, std::numbers::pi);
  const double c = std::cos(t), s = std::sin(t);
  return {l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c};
}

RunResult run(const std::string& json) { return run_experiment(parse_config(json), g_workers); }

std::vector<const Record*> select(const RunResult& r, const std::function<bool(const Record&)>& pred) {
  std::vector<const Record*> out;
  for (const Record& rec : r.records)
    if (pred(rec)) out.push_back(&rec);
  return out;
}

std::string csv_without_wall_ms(std::vector<Record> records) {
  for (Record& r : records) r.wall_ms = 0.0;
  std::ostringstream os;
  write_csv(os, records);
  return os.str();
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LinearFit fit(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LinearFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ss_res += std::pow(y[i] - f.intercept - f.slope * x[i], 2);
    ss_tot += std::pow(y[i] - sy / n, 2);
  }
  f.r2 = 1.0 - ss_res / ss_tot;
  return f;
}

// Dense Dirichlet-to-Neumann Schur complement on the boundary, inverted on
// the zero-mean subspace through the generalized problem S x = mu M x.
struct DenseNtD {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
};

DenseNtD dense_ntd(const TriMesh& mesh, int count) {
  const Eigen::MatrixXd k = Eigen::MatrixXd(assemble_stiffness(mesh, CoefficientField::constant(SymMat::identity())));
  const int nb = mesh.num_boundary_dofs();
  std::vector<int> interior;
  for (int v = 0; v < mesh.num_nodes(); ++v)
    if (mesh.boundary_index[v] < 0) interior.push_back(v);
  const int ni = static_cast<int>(interior.size());
  Eigen::MatrixXd kbb(nb, nb), kbi(nb, ni), kii(ni, ni);
  for (int a = 0; a < nb; ++a) {
    for (int b = 0; b < nb; ++b) kbb(a, b) = k(mesh.boundary_nodes[a], mesh.boundary_nodes[b]);
    for (int j = 0; j < ni; ++j) kbi(a, j) = k(mesh.boundary_nodes[a], interior[j]);
  }
  for (int i = 0; i < ni; ++i)
    for (int j = 0; j < ni; ++j) kii(i, j) = k(interior[i], interior[j]);
  Eigen::MatrixXd s = kbb - kbi * kii.ldlt().solve(kbi.transpose());
  s = 0.5 * (s + s.transpose()).eval();
  const Eigen::MatrixXd mb = Eigen::MatrixXd(boundary_mass_matrix(mesh));
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(s, mb);
  DenseNtD out;
  out.values.resize(count);
  out.vectors.resize(nb, count);
  for (int i = 0; i < count; ++i) {
    out.values[i] = 1.0 / es.eigenvalues()[i + 1];
    out.vectors.col(i) = es.eigenvectors().col(i + 1);
  }
  return out;
}

const char* kSweep = R"({"schema_version": 1, "experiment": "sweep", "coefficient": "periodic_paper",
  "epsilons": [0.2, 0.1, 0.05], "P": 3, "Q": 11, "r": 20, "cell_n": 512, "strategies": ["ME", "A_star"]})";

}  // namespace

int main() {
  g_workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));

  criterion(1, "periodic homogenized reference (cell n = 512)", [] {
    const SymMat a = homogenized_matrix(512, periodic_reference_field()).matrix;
    const bool ok = a.a11 >= 19.24 && a.a11 <= 19.43 && a.a22 >= 11.77 && a.a22 <= 11.89 && std::abs(a.a12) <= 5e-3;
    return Outcome{ok, "a11=" + fmt(a.a11, 8) + " a12=" + fmt(a.a12, 3) + " a22=" + fmt(a.a22, 8)};
  });

  criterion(2, "constant-field identity, 20 random SPD", [] {
    SplitMix64 rng(2);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      const SymMat m = random_spd(rng, 0.5, 50.0);
      const SymMat h = homogenized_matrix(16, CoefficientField::constant(m)).matrix;
      worst = std::max({worst, std::abs(h.a11 - m.a11), std::abs(h.a12 - m.a12), std::abs(h.a22 - m.a22)});
    }
    return Outcome{worst <= 1e-10, "max entry deviation " + fmt(worst, 3)};
  });

  criterion(3, "1D harmonic mean and profile argmin", [] {
    const auto a = [](double y) { return 2.0 + std::cos(2.0 * std::numbers::pi * y); };
    const double h = harmonic_mean_1d(a);
    const OneDProfile p = one_d_profile([&](double x) { return a(x / 0.1); }, uniform_grid(1.0, 3.0, 1e-3));
    const double argmin = p.points[p.argmin].abar;
    const double dh = std::abs(h - std::sqrt(3.0)), da = std::abs(argmin - std::sqrt(3.0));
    return Outcome{dh <= 1e-8 && da <= 2e-3, "|hm - sqrt3|=" + fmt(dh, 3) + " argmin=" + fmt(argmin, 8)};
  });

  // Criteria 4, 5 and 13 share the periodic sweep; the first user runs it.
  RunResult sweep;
  std::string sweep_error;
  bool sweep_done = false;
  const auto sweep_row = [&](const std::string& strategy, double eps) -> const Record& {
    if (!sweep_done) {
      sweep_done = true;
      try {
        sweep = run(kSweep);
      } catch (const std::exception& e) {
        sweep_error = e.what();
      }
    }
    const auto rows = select(sweep, [&](const Record& r) {
      return r.strategy == strategy && std::abs(r.epsilon - eps) < 1e-12 && r.status.rfind("error", 0) != 0;
    });
    if (rows.empty()) throw std::runtime_error("no " + strategy + " row at eps " + fmt(eps) + " " + sweep_error);
    return *rows.front();
  };

  criterion(4, "homogenization consistency: ME err_star vs eps (P=3, r=20)", [&] {
    const std::vector<double> eps{0.2, 0.1, 0.05};
    std::vector<double> err, lx, ly;
    for (double e : eps) {
      err.push_back(sweep_row("ME", e).err_star);
      lx.push_back(std::log(e));
      ly.push_back(std::log(err.back()));
    }
    const bool monotone = err[0] > err[1] && err[1] > err[2];
    const double slope = fit(lx, ly).slope;
    const bool ok = monotone && err[2] <= 0.01 && slope >= 1.5 && slope <= 2.6;
    return Outcome{ok, "err_star=" + fmt(err[0], 4) + "/" + fmt(err[1], 4) + "/" + fmt(err[2], 4) +
                           " slope=" + fmt(slope, 3) + " (need <=0.01 at 0.05, slope in [1.5,2.6])"};
  });

  criterion(5, "operator accuracy err_eps_q (Q=11)", [&] {
    const double me05 = sweep_row("ME", 0.05).err_eps_q;
    const double me2 = sweep_row("ME", 0.2).err_eps_q;
    const double st2 = sweep_row("A_star", 0.2).err_eps_q;
    const bool ok = me05 <= 0.10 && st2 > me2 - 0.02;
    return Outcome{ok, "ME(0.05)=" + fmt(me05, 4) + " ME(0.2)=" + fmt(me2, 4) + " A_star(0.2)=" + fmt(st2, 4)};
  });

  criterion(6, "ME = MS/2 identity (eps=0.2, n=128, 5 SPD)", [] {
    const RunResult r = run(R"({"schema_version": 1, "experiment": "me_ms_check", "epsilons": [0.2],
      "me_ms": {"fine_n": 128, "samples": 5}})");
    double worst = 0.0;
    int checked = 0;
    for (const Record& rec : r.records)
      if (rec.strategy == "MS") {
        worst = std::max(worst, std::isfinite(rec.err_ref) ? rec.err_ref : 1.0);
        ++checked;
      }
    return Outcome{checked == 5 && worst <= 1e-6, fmt(checked) + " samples, max |ms - 2 me|/ms=" + fmt(worst, 3)};
  });

  criterion(7, "adjoint gradients vs central differences", [] {
    const double eps = 0.2;
    const MeshPtr coarse = make_unit_square_mesh(subdivisions_for_size(0.05));
    const ModeBasis basis = compute_r_modes(coarse, 3);
    const MeshPtr fine = make_unit_square_mesh(fine_subdivisions(eps, 20, coarse->n));
    const Measurements meas = simulate_measurements(scale_epsilon(periodic_reference_field(), eps), fine, basis);
    const CoarseModel model(coarse, basis);
    SplitMix64 rng(7);
    double worst = 0.0;
    int points = 0, skipped = 0;
    while (points < 10) {
      const SymMat a = random_spd(rng, 8.0, 30.0);
      // psi_max is not differentiable where the two largest |eigenvalues| of M meet.
      const Eigen::MatrixXd m = assemble_m(meas, model.evaluate(a)).m;
      Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m).eigenvalues().cwiseAbs();
      std::sort(ev.data(), ev.data() + ev.size(), std::greater<>());
      if (ev[0] - ev[1] < 1e-2 * ev[0]) {
        ++skipped;
        continue;
      }
      for (const ObjectiveKind kind : {ObjectiveKind::psi_sigma, ObjectiveKind::psi_max}) {
        Eigen::Vector3d g;
        objective(kind, meas, model, a, &g);
        const Eigen::VectorXd fd = central_difference_gradient(
            [&](const Eigen::VectorXd& x) { return objective(kind, meas, model, SymMat::from_vec(x)); }, a.vec(),
            1e-4);
        worst = std::max(worst, (g - fd).norm() / fd.norm());
      }
      ++points;
    }
    return Outcome{worst <= 1e-4, "10 points (" + fmt(skipped) + " near crossings skipped), max rel diff " +
                                      fmt(worst, 3)};
  });

  criterion(8, "descent monotone, constant-field recovery (P=5, 5 inits)", [] {
    const MeshPtr coarse = make_unit_square_mesh(subdivisions_for_size(0.05));
    const ModeBasis basis = compute_r_modes(coarse, 5);
    const CoarseModel model(coarse, basis);
    const SymMat a0{14.0, 2.5, 9.0};
    const Measurements exact = simulate_measurements(CoefficientField::constant(a0), coarse, basis);
    DescentOptions opts;
    opts.max_iterations = 1000;
    opts.gradient_rtol = 1e-10;
    SplitMix64 rng(8);
    bool monotone = true;
    double worst = 0.0;
    for (int k = 0; k < 5; ++k) {
      const SymMat init = random_spd(rng, 4.0, 30.0);
      const OptimizerTrace t = descend(exact, init, ObjectiveKind::psi_sigma, model, opts);
      monotone = monotone && t.monotone();
      worst = std::max(worst, err_star(t.final_matrix(), a0));
    }
    // A periodic-field run as well, so the monotonicity check covers noisy residuals.
    const ModeBasis b3 = compute_r_modes(coarse, 3);
    const MeshPtr fine = make_unit_square_mesh(fine_subdivisions(0.2, 20, coarse->n));
    const Measurements per = simulate_measurements(scale_epsilon(periodic_reference_field(), 0.2), fine, b3);
    const OptimizerTrace tp = descend(per, mean_over_cell(periodic_reference_field()), ObjectiveKind::psi_sigma,
                                      CoarseModel(coarse, b3));
    monotone = monotone && tp.monotone();
    return Outcome{monotone && worst <= 1e-5,
                   std::string(monotone ? "all traces monotone" : "non-monotone trace") + ", max err_star " +
                       fmt(worst, 3)};
  });

  criterion(9, "random checkerboard (eps=0.1, r=10, P=3, M1=10)", [] {
    const RunResult r = run(R"({"schema_version": 1, "experiment": "identify", "coefficient": "checkerboard",
      "epsilons": [0.1], "P": 3, "r": 10, "M1": 10, "M2": 1, "strategies": ["ME", "MS"]})");
    const auto me = select(r, [](const Record& x) { return x.strategy == "ME" && x.status.rfind("error", 0) != 0; });
    const auto ms = select(r, [](const Record& x) { return x.strategy == "MS" && x.status.rfind("error", 0) != 0; });
    if (me.empty() || ms.empty()) return Outcome{false, "missing ME or MS row"};
    const double gap = std::abs(me.front()->err_star - ms.front()->err_star);
    return Outcome{me.front()->err_star <= 0.10 && gap <= 0.01,
                   "err_star ME=" + fmt(me.front()->err_star, 4) + " MS=" + fmt(ms.front()->err_star, 4)};
  });

  criterion(10, "measurement noise (eps=0.05, 40 draws)", [] {
    const RunResult r = run(R"({"schema_version": 1, "experiment": "noise_measurement", "epsilons": [0.05],
      "sigma": [0.01, 0.05, 0.1], "noise_draws": 40})");
    std::vector<double> s, e;
    for (const Record* rec : select(r, [](const Record& x) { return x.batch == "mean"; })) {
      s.push_back(rec->sigma);
      e.push_back(rec->err_ref);
    }
    if (s.size() != 3) return Outcome{false, "expected 3 summary rows, got " + fmt(s.size())};
    const LinearFit f = fit(s, e);
    const bool ok = e[0] < e[1] && e[1] < e[2] && f.r2 >= 0.9 && f.slope >= 1.0 && f.slope <= 10.0;
    return Outcome{ok, "mean err " + fmt(e[0], 4) + "/" + fmt(e[1], 4) + "/" + fmt(e[2], 4) + " slope=" +
                           fmt(f.slope, 4) + " R2=" + fmt(f.r2, 4)};
  });

  criterion(11, "coefficient noise: 1D optimum and 2D sigma=2", [] {
    const double exact = one_d_noise_optimum(8.0, 2.0, 4.0);
    const DescentTrace t = one_d_noise_descent(8.0, 2.0, 4.0, 8.0);
    const double found = t.iterates.back()[0];
    const std::vector<double> grid = uniform_grid(3.0, 8.0, 1e-4);
    double best = grid.front(), best_val = one_d_noise_objective(best, 8.0, 2.0, 4.0);
    for (double x : grid)
      if (const double v = one_d_noise_objective(x, 8.0, 2.0, 4.0); v < best_val) {
        best = x;
        best_val = v;
      }
    const bool one_d = std::abs(found - exact) <= 1e-3 && std::abs(best - exact) <= 1e-3;

    const RunResult r = run(R"({"schema_version": 1, "experiment": "noise_coefficient", "epsilons": [0.05],
      "sigma": [2], "M1": 10, "M2": 1})");
    const auto rows = select(r, [](const Record& x) { return x.sigma == 2.0 && x.status.rfind("error", 0) != 0; });
    const double rel = rows.empty() ? 1.0 : rows.back()->err_ref;
    return Outcome{one_d && rel <= 0.08, "1D formula=" + fmt(exact, 6) + " descent=" + fmt(found, 6) +
                                             " grid=" + fmt(best, 6) + "; 2D rel shift=" + fmt(rel, 4)};
  });

  criterion(12, "NtD operator invariants and Lanczos vs dense (n=16)", [] {
    const MeshPtr mesh = make_unit_square_mesh(16);
    const LaplaceNtD r(mesh);
    const Eigen::VectorXd c = r.constant();
    SplitMix64 rng(12);
    double sym = 0.0, pos = 1.0;
    for (int k = 0; k < 10; ++k) {
      Eigen::VectorXd f(r.mass().rows()), g(r.mass().rows());
      for (auto& x : f) x = rng.normal();
      for (auto& x : g) x = rng.normal();
      f -= c * c.dot(r.mass() * f);
      g -= c * c.dot(r.mass() * g);
      const Eigen::VectorXd rf = r.apply(f), rg = r.apply(g);
      const double nf = std::sqrt(f.dot(r.mass() * f)), ng = std::sqrt(g.dot(r.mass() * g));
      sym = std::max(sym, std::abs(rf.dot(r.mass() * g) - f.dot(r.mass() * rg)) / (nf * ng));
      pos = std::min(pos, f.dot(r.mass() * rf) / (nf * nf));
    }

    const int p = 7;
    const ModeBasis basis = compute_r_modes(mesh, p);
    const DenseNtD ref = dense_ntd(*mesh, p);
    const Eigen::MatrixXd vecs = nodal_values(basis);
    const SparseMatrix mb = boundary_mass_matrix(*mesh);
    double dval = 0.0, dvec = 0.0;
    for (int i = 0; i < p; ++i) dval = std::max(dval, std::abs(basis.eigenvalues[i] - ref.values[i]));
    // Degenerate pairs are compared through their spectral projector.
    for (int start = 0; start < p;) {
      int end = start + 1;
      while (end < p && std::abs(ref.values[end] - ref.values[start]) < 1e-8 * ref.values[start]) ++end;
      const Eigen::MatrixXd a = vecs.middleCols(start, end - start);
      const Eigen::MatrixXd b = ref.vectors.middleCols(start, end - start);
      if (end - start == 1) {
        const double sign = a.col(0).dot(mb * b.col(0)) >= 0.0 ? 1.0 : -1.0;
        dvec = std::max(dvec, (a.col(0) - sign * b.col(0)).cwiseAbs().maxCoeff());
      } else {
        dvec = std::max(dvec, (a * a.transpose() * mb - b * b.transpose() * mb).cwiseAbs().maxCoeff());
      }
      start = end;
    }
    const bool ok = sym <= 1e-9 && pos > 0.0 && dval <= 1e-8 && dvec <= 1e-6;
    return Outcome{ok, "symmetry defect " + fmt(sym, 3) + ", min Rayleigh " + fmt(pos, 3) + ", value diff " +
                           fmt(dval, 3) + ", vector diff " + fmt(dvec, 3)};
  });

  criterion(13, "sweep determinism (rerun with 1 worker)", [&] {
    if (!sweep_done || !sweep_error.empty()) return Outcome{false, "periodic sweep unavailable " + sweep_error};
    const int saved = g_workers;
    g_workers = 1;
    const RunResult again = run(kSweep);
    g_workers = saved;
    const std::string a = csv_without_wall_ms(sweep.records), b = csv_without_wall_ms(again.records);
    return Outcome{a == b, a == b ? "CSV identical (" + fmt(sweep.records.size()) + " rows)" : "CSV differs"};
  });

  std::printf("%d of 13 criteria failed\n", g_failed);
  return g_failed == 0 ? 0 : 1;
}
