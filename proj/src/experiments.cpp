#include "effid/experiments.hpp"

#include "effid/homogenization.hpp"
#include "effid/rng.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <type_traits>
#include <variant>

namespace effid {

double err_star(const SymMat& a, const SymMat& a_star) {
  const double d = a_star.upper_norm();
  if (d == 0.0) throw std::invalid_argument("err_star: zero reference matrix");
  return (a - a_star).upper_norm() / d;
}

RelativeError worst_relative_error(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& approx,
                                   const SparseMatrix& weight) {
  if (reference.rows() != approx.rows() || reference.cols() != approx.cols() || reference.rows() != weight.rows())
    throw std::invalid_argument("worst_relative_error: shape mismatch");
  const Eigen::MatrixXd diff = reference - approx;
  Eigen::MatrixXd d = diff.transpose() * (weight * diff);
  Eigen::MatrixXd n = reference.transpose() * (weight * reference);
  d = 0.5 * (d + d.transpose());
  n = 0.5 * (n + n.transpose());

  RelativeError out;
  const Eigen::Index q = n.rows();
  const double ridge = 1e-12 * n.trace() / static_cast<double>(q);
  const Eigen::VectorXd nev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(n, Eigen::EigenvaluesOnly).eigenvalues();
  if (nev[0] <= ridge) {
    n += ridge * Eigen::MatrixXd::Identity(q, q);
    out.regularized = true;
  }
  const Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(d, n, Eigen::EigenvaluesOnly);
  out.value = std::sqrt(std::max(0.0, ges.eigenvalues().maxCoeff()));
  return out;
}

Eigen::MatrixXd constant_coefficient_fields(const SymMat& a, const ModeBasis& basis, const MeshPtr& fine,
                                            const SolverOptions& opts) {
  if (fine->n % basis.mesh_n != 0)
    throw std::invalid_argument("constant_coefficient_fields: fine mesh must refine the basis mesh");
  const NeumannSolver solver(fine, CoefficientField::constant(a), opts);
  const auto u = solver.solve_all(basis.transfer(fine->n).modes);
  Eigen::MatrixXd out(fine->num_nodes(), basis.size());
  for (int i = 0; i < basis.size(); ++i) out.col(i) = u[i].values;
  return out;
}

RelativeError err_eps_q(const SymMat& a, const Measurements& reference, const MeshPtr& fine,
                        const SolverOptions& opts) {
  if (!reference.has_volume()) throw std::invalid_argument("err_eps_q: reference has no volume fields");
  if (reference.fine_n != fine->n) throw std::invalid_argument("err_eps_q: reference recorded on another mesh");
  const Eigen::MatrixXd u = constant_coefficient_fields(a, reference.basis, fine, opts);
  return worst_relative_error(reference.volume_fields, u, volume_mass_matrix(*fine));
}

RelativeError err_eps_q_expect(const SymMat& a, const std::vector<Measurements>& realizations, const MeshPtr& fine,
                               const SolverOptions& opts) {
  return err_eps_q(a, average_measurements(realizations), fine, opts);
}

EnsembleStat summarize(const std::vector<double>& estimates, int m1) {
  if (estimates.empty()) throw std::invalid_argument("summarize: no estimates");
  EnsembleStat s;
  s.m1 = m1;
  s.m2 = static_cast<int>(estimates.size());
  s.estimates = estimates;
  s.mean = std::accumulate(estimates.begin(), estimates.end(), 0.0) / s.m2;
  double ss = 0.0;
  for (double e : estimates) ss += (e - s.mean) * (e - s.mean);
  s.sd = s.m2 > 1 ? std::sqrt(ss / (s.m2 - 1)) : 0.0;
  const double half = 1.96 * s.sd / std::sqrt(static_cast<double>(s.m2));
  s.ci95_low = s.mean - half;
  s.ci95_high = s.mean + half;
  return s;
}

std::vector<std::uint64_t> batch_seeds(std::uint64_t base_seed, int batch, int m1) {
  std::vector<std::uint64_t> out(m1);
  for (int i = 0; i < m1; ++i)
    out[i] = base_seed + static_cast<std::uint64_t>(batch) * static_cast<std::uint64_t>(m1) + i;
  return out;
}

EnsembleStat ensemble(const BatchEstimate& estimate, int m1, int m2, std::uint64_t base_seed, int workers) {
  if (m1 < 1 || m2 < 2) throw std::invalid_argument("ensemble: need M1 >= 1 and M2 >= 2");
  std::vector<double> est(m2);
  parallel_for(m2, workers, [&](int b) { est[b] = estimate(batch_seeds(base_seed, b, m1)); });
  return summarize(est, m1);
}

void parallel_for(int count, int workers, const std::function<void(int)>& body) {
  if (count <= 0) return;
  const int threads = std::min(count, std::max(1, workers));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::mutex mu;
  int failed_index = count;
  std::exception_ptr failure;
  auto worker = [&] {
    for (int i = next++; i < count; i = next++) {
      try {
        body(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(mu);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

// ---- one-dimensional studies

OneDProfile one_d_profile(const std::function<double(double)>& a_eps, const std::vector<double>& grid,
                          int quadrature_points) {
  if (quadrature_points < 1) throw std::invalid_argument("one_d_profile: need quadrature points");
  double inv = 0.0;
  for (int i = 0; i < quadrature_points; ++i) {
    const double a = a_eps((i + 0.5) / quadrature_points);
    if (!(a > 0.0)) throw std::invalid_argument("one_d_profile: coefficient is not coercive");
    inv += 1.0 / a;
  }
  inv /= quadrature_points;

  OneDProfile out;
  out.harmonic_mean = 1.0 / inv;
  out.points.reserve(grid.size());
  for (double abar : grid) {
    if (!(abar > 0.0)) throw std::invalid_argument("one_d_profile: grid values must be positive");
    out.points.push_back({abar, 0.25 * std::abs(inv - 1.0 / abar)});
  }
  if (out.points.empty()) throw std::invalid_argument("one_d_profile: empty grid");
  const auto it = std::min_element(out.points.begin(), out.points.end(),
                                   [](const ProfilePoint& x, const ProfilePoint& y) { return x.psi < y.psi; });
  out.argmin = static_cast<std::size_t>(it - out.points.begin());
  return out;
}

std::vector<double> uniform_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || hi < lo) throw std::invalid_argument("uniform_grid: bad range");
  const auto count = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = lo + static_cast<double>(i) * step;
  return g;
}

double one_d_noise_objective(double abar, double a_star, double alpha1, double alpha2, double* grad) {
  if (!(alpha2 > alpha1)) throw std::invalid_argument("one_d_noise_objective: need alpha2 > alpha1");
  if (!(abar + alpha1 > 0.0)) throw std::invalid_argument("one_d_noise_objective: abar + eta must stay positive");
  using Rule = boost::math::quadrature::gauss<double, 30>;
  const double l = alpha2 - alpha1;
  const double mean = Rule::integrate([&](double eta) { return 1.0 / (abar + eta); }, alpha1, alpha2) / l;
  const double r = 1.0 / a_star - mean;
  if (grad) {
    const double dmean =
        -Rule::integrate([&](double eta) { return 1.0 / ((abar + eta) * (abar + eta)); }, alpha1, alpha2) / l;
    *grad = -2.0 * r * dmean;
  }
  return r * r;
}

double one_d_noise_optimum(double a_star, double alpha1, double alpha2) {
  const double e = std::exp((alpha2 - alpha1) / a_star);
  return (alpha2 - alpha1 * e) / (e - 1.0);
}

DescentTrace one_d_noise_descent(double a_star, double alpha1, double alpha2, double init, const DescentOptions& opts) {
  const ScalarObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    double d = 0.0;
    const double v = one_d_noise_objective(x[0], a_star, alpha1, alpha2, g ? &d : nullptr);
    if (g) *g = Eigen::VectorXd::Constant(1, d);
    return v;
  };
  const Feasibility ok = [&](const Eigen::VectorXd& x) { return x[0] > 0.0 && x[0] + alpha1 > 0.0; };
  return gradient_descent(f, Eigen::VectorXd::Constant(1, init), opts, ok);
}

// ---- mesh planning

int fine_subdivisions(double epsilon, int r, int n_coarse) {
  if (!(epsilon > 0.0) || r < 1 || n_coarse < 1) throw std::invalid_argument("fine_subdivisions: bad arguments");
  const int need = subdivisions_for_size(epsilon / r);
  long long step = n_coarse;
  const double cells = 1.0 / epsilon;
  if (std::abs(cells - std::round(cells)) < 1e-9) step = std::lcm(step, static_cast<long long>(std::round(cells)));
  const long long n = step * ((need + step - 1) / step);
  if (n > 1000000) throw std::invalid_argument("fine_subdivisions: mesh too large");
  return static_cast<int>(n);
}

// ---- names

namespace {

template <typename E, std::size_t N>
E parse_name(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
  for (const auto& [e, name] : table)
    if (s == name) return e;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

template <typename E, std::size_t N>
std::string name_of(E e, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [k, name] : table)
    if (k == e) return name;
  return "unknown";
}

constexpr std::array<std::pair<ExperimentKind, const char*>, 7> kExperiments{{
    {ExperimentKind::homogenize, "homogenize"},
    {ExperimentKind::identify, "identify"},
    {ExperimentKind::sweep, "sweep"},
    {ExperimentKind::noise_measurement, "noise_measurement"},
    {ExperimentKind::noise_coefficient, "noise_coefficient"},
    {ExperimentKind::one_d_profile, "one_d_profile"},
    {ExperimentKind::me_ms_check, "me_ms_check"},
}};

constexpr std::array<std::pair<Strategy, const char*>, 5> kStrategies{{
    {Strategy::me, "ME"},
    {Strategy::ms, "MS"},
    {Strategy::mv, "MV"},
    {Strategy::a_star, "A_star"},
    {Strategy::me_affine, "ME-affine"},
}};

constexpr std::array<std::pair<CoefficientKind, const char*>, 4> kCoefficients{{
    {CoefficientKind::periodic_paper, "periodic_paper"},
    {CoefficientKind::checkerboard, "checkerboard"},
    {CoefficientKind::constant, "constant"},
    {CoefficientKind::layered, "layered"},
}};

constexpr std::array<std::pair<Profile, const char*>, 2> kProfiles{{
    {Profile::desk, "desk"},
    {Profile::full, "full"},
}};

}  // namespace

std::string to_string(ExperimentKind k) { return name_of(k, kExperiments); }
std::string to_string(Strategy s) { return name_of(s, kStrategies); }
std::string to_string(CoefficientKind k) { return name_of(k, kCoefficients); }
std::string to_string(Profile p) { return name_of(p, kProfiles); }
ExperimentKind parse_experiment(const std::string& s) { return parse_name(s, kExperiments, "experiment"); }
Strategy parse_strategy(const std::string& s) { return parse_name(s, kStrategies, "strategy"); }
CoefficientKind parse_coefficient(const std::string& s) { return parse_name(s, kCoefficients, "coefficient"); }
Profile parse_profile(const std::string& s) { return parse_name(s, kProfiles, "profile"); }

// ---- coefficients

namespace {

CoefficientField layered_field(const CoefficientSpec& spec) {
  const double lo = spec.mean - std::abs(spec.amplitude), hi = spec.mean + std::abs(spec.amplitude);
  if (!(lo > 0.0)) throw std::invalid_argument("layered coefficient must stay positive");
  const double mean = spec.mean, amp = spec.amplitude;
  return CoefficientField::layered(
      "layered", [mean, amp](double y) { return mean + amp * std::cos(2.0 * std::numbers::pi * y); }, lo, hi);
}

}  // namespace

CoefficientField make_field(const CoefficientSpec& spec, double epsilon, std::uint64_t seed) {
  switch (spec.kind) {
    case CoefficientKind::periodic_paper: return scale_epsilon(periodic_reference_field(), epsilon);
    case CoefficientKind::checkerboard: return sample_checkerboard(seed, epsilon);
    case CoefficientKind::constant: return CoefficientField::constant(spec.value);
    case CoefficientKind::layered: return scale_epsilon(layered_field(spec), epsilon);
  }
  throw std::invalid_argument("make_field: unknown coefficient");
}

SymMat reference_matrix(const CoefficientSpec& spec, int cell_n) {
  switch (spec.kind) {
    case CoefficientKind::periodic_paper: return homogenized_matrix(cell_n, periodic_reference_field()).matrix;
    case CoefficientKind::checkerboard: return checkerboard_exact().matrix;
    case CoefficientKind::constant: return spec.value;
    case CoefficientKind::layered: return homogenized_matrix(cell_n, layered_field(spec)).matrix;
  }
  throw std::invalid_argument("reference_matrix: unknown coefficient");
}

SymMat default_init(const CoefficientSpec& spec) {
  switch (spec.kind) {
    case CoefficientKind::periodic_paper: return mean_over_cell(periodic_reference_field());
    case CoefficientKind::checkerboard: return SymMat::identity(10.0);
    case CoefficientKind::constant: return spec.value;
    case CoefficientKind::layered: return mean_over_cell(layered_field(spec));
  }
  throw std::invalid_argument("default_init: unknown coefficient");
}

std::vector<ResolvedEpsilon> resolve(const RunConfig& config) {
  std::vector<ResolvedEpsilon> out;
  if (config.experiment == ExperimentKind::homogenize || config.experiment == ExperimentKind::one_d_profile)
    return out;
  for (double eps : config.epsilons) {
    if (!(eps > 0.0) || eps > 1.0) throw std::invalid_argument("epsilon must lie in (0, 1]");
    ResolvedEpsilon re;
    re.epsilon = eps;
    if (config.experiment == ExperimentKind::me_ms_check) {
      re.n_fine = config.me_ms_fine_n;
    } else {
      re.p = config.p ? *config.p : choose_p(eps);
      re.q = config.q;
      if (re.p < 1) throw std::invalid_argument("P must be at least 1");
      if (re.q > 0 && re.q < re.p)
        throw std::invalid_argument("Q = " + std::to_string(re.q) + " is smaller than P = " + std::to_string(re.p));
      re.n_coarse = subdivisions_for_size(config.coarse_h);
      re.n_fine = fine_subdivisions(eps, config.r, re.n_coarse);
    }
    re.fine_dofs = static_cast<long long>(re.n_fine + 1) * (re.n_fine + 1);
    out.push_back(re);
  }
  return out;
}

int RunResult::failures() const {
  return static_cast<int>(std::count_if(records.begin(), records.end(),
                                        [](const Record& r) { return r.status.rfind("error", 0) == 0; }));
}

// ---- runs

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string format_eps(double eps) {
  std::ostringstream os;
  os << eps;
  return os.str();
}

std::string status_of(Termination t) { return t == Termination::gradient_small ? "ok" : to_string(t); }

/// Mean measurements over the realizations `seeds` (one for deterministic fields).
Measurements simulate_mean(const RunConfig& config, double eps, const std::vector<std::uint64_t>& seeds,
                           const MeshPtr& fine, const ModeBasis& basis, bool keep,
                           std::vector<RealizationRecord>* log) {
  Measurements acc;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const Measurements m = simulate_measurements(make_field(config.coefficient, eps, seeds[k]), fine, basis, keep);
    if (log) log->push_back({eps, seeds[k], std::vector<double>(m.energies.data(), m.energies.data() + m.size())});
    if (k == 0) {
      acc = m;
      continue;
    }
    acc.energies += m.energies;
    if (acc.cross && m.cross) *acc.cross += *m.cross;
    if (acc.has_traces()) acc.boundary_traces += m.boundary_traces;
    if (acc.has_volume()) acc.volume_fields += m.volume_fields;
  }
  const double w = 1.0 / static_cast<double>(seeds.size());
  acc.energies *= w;
  if (acc.cross) *acc.cross *= w;
  acc.boundary_traces *= w;
  acc.volume_fields *= w;
  acc.realizations = static_cast<int>(seeds.size());
  acc.seed = seeds.front();
  return acc;
}

bool is_random(const RunConfig& c) { return c.coefficient.kind == CoefficientKind::checkerboard; }

SymMat init_of(const RunConfig& c) { return c.init ? *c.init : default_init(c.coefficient); }

Record base_record(const RunConfig& c, const ResolvedEpsilon& re) {
  Record r;
  r.experiment = to_string(c.experiment);
  r.epsilon = re.epsilon;
  r.p = re.p;
  r.q = re.q;
  r.r = c.r;
  r.seed = c.base_seed;
  r.n_fine = re.n_fine;
  r.n_coarse = re.n_coarse;
  r.m1 = 1;
  return r;
}

/// Mean of the rows with status "ok" (or non-error), as one summary row.
Record summary_row(const std::vector<Record>& rows, const RunConfig& c, bool over_err_ref) {
  std::vector<double> metric;
  Record s;
  SymMat a{0.0, 0.0, 0.0};
  double eq = 0.0, psi = 0.0, es = 0.0;
  int iters = 0, used = 0;
  for (const Record& r : rows) {
    if (r.status.rfind("error", 0) == 0) continue;
    if (used == 0) s = r;
    metric.push_back(over_err_ref ? r.err_ref : r.err_star);
    a += r.a;
    eq += r.err_eps_q;
    psi += r.psi_final;
    es += r.err_star;
    iters += r.iters;
    ++used;
  }
  if (used == 0) {
    s = rows.front();
    s.status = "error: no successful batches";
    s.batch = "mean";
    return s;
  }
  const EnsembleStat st = summarize(metric, s.m1);
  s.a = a * (1.0 / used);
  s.err_star = over_err_ref ? es / used : st.mean;
  s.err_ref = over_err_ref ? st.mean : kNaN;
  s.err_eps_q = eq / used;
  s.psi_final = psi / used;
  s.iters = iters;
  s.ci95_low = st.ci95_low;
  s.ci95_high = st.ci95_high;
  s.batch = "mean";
  s.seed = c.base_seed;
  s.wall_ms = 0.0;
  for (const Record& r : rows) s.wall_ms += r.wall_ms;
  s.status = used == static_cast<int>(rows.size()) ? "ok" : "partial";
  return s;
}

struct Setup {
  MeshPtr coarse;
  MeshPtr fine;
  ModeBasis basis;  // max(P, Q) modes
};

Setup make_setup(const ResolvedEpsilon& re) {
  Setup s;
  s.coarse = make_unit_square_mesh(re.n_coarse);
  s.fine = make_unit_square_mesh(re.n_fine);
  s.basis = compute_r_modes(s.coarse, std::max(re.p, re.q));
  return s;
}

/// One (epsilon, batch) identification task: every configured strategy.
std::vector<Record> identify_task(const RunConfig& c, const ResolvedEpsilon& re, int batch, const SymMat& a_star,
                                  std::vector<RealizationRecord>* realizations, const Logger& log) {
  const bool random = is_random(c);
  const std::vector<std::uint64_t> seeds =
      random ? batch_seeds(c.base_seed, batch, c.m1) : std::vector<std::uint64_t>{c.base_seed};
  const auto has = [&](Strategy s) { return std::find(c.strategies.begin(), c.strategies.end(), s) != c.strategies.end(); };
  const bool keep = re.q > 0 || has(Strategy::ms) || has(Strategy::mv);

  std::vector<Record> rows;
  for (Strategy s : c.strategies) {
    Record r = base_record(c, re);
    r.strategy = to_string(s);
    r.seed = seeds.front();
    r.m1 = static_cast<int>(seeds.size());
    if (random) r.batch = std::to_string(batch);
    rows.push_back(r);
  }

  const auto t_setup = Clock::now();
  Setup st;
  Measurements full, meas, affine;
  try {
    st = make_setup(re);
    full = simulate_mean(c, re.epsilon, seeds, st.fine, st.basis, keep, realizations);
    meas = re.p < full.size() ? full.truncated(re.p) : full;
    if (has(Strategy::me_affine))
      affine = simulate_mean(c, re.epsilon, seeds, st.fine, affine_modes(re.n_coarse), false, nullptr);
  } catch (const std::exception& e) {
    for (Record& r : rows) r.status = std::string("error: ") + e.what();
    return rows;
  }
  const double setup_ms = elapsed_ms(t_setup);
  const CoarseModel model(st.coarse, meas.basis);
  const SymMat init = init_of(c);

  for (std::size_t k = 0; k < rows.size(); ++k) {
    Record& r = rows[k];
    const Strategy s = c.strategies[k];
    const auto t0 = Clock::now();
    try {
      OptimizerTrace t;
      switch (s) {
        case Strategy::me: t = descend(meas, init, c.objective, model, c.descent); break;
        case Strategy::me_affine: {
          const CoarseModel am(st.coarse, affine.basis);
          t = descend(affine, init, c.objective, am, c.descent);
          break;
        }
        case Strategy::ms: t = descend_fields(meas, init, FieldNorm::boundary, model, c.descent); break;
        case Strategy::mv: t = descend_fields(meas, init, FieldNorm::volume, model, c.descent); break;
        case Strategy::a_star:
          t.iterates.push_back(a_star);
          t.objective_values.push_back(objective(c.objective, meas, model, a_star));
          t.termination = Termination::gradient_small;
          break;
      }
      r.a = t.final_matrix();
      r.psi_final = t.final_value();
      r.iters = t.iterations();
      r.status = status_of(t.termination);
      r.err_star = err_star(r.a, a_star);
      if (re.q > 0) r.err_eps_q = err_eps_q(r.a, full, st.fine).value;
    } catch (const std::exception& e) {
      r.status = std::string("error: ") + e.what();
    }
    r.wall_ms = elapsed_ms(t0) + setup_ms / static_cast<double>(rows.size());
    if (log) {
      std::ostringstream os;
      os << r.experiment << " eps " << format_eps(re.epsilon) << (r.batch.empty() ? "" : " batch " + r.batch) << " "
         << r.strategy << ": " << r.status << ", iters " << r.iters << ", err_star " << r.err_star;
      log(os.str());
    }
  }
  return rows;
}

RunResult run_identify(const RunConfig& c, const std::vector<ResolvedEpsilon>& res, int workers, const Logger& log) {
  RunResult out;
  if (res.empty()) return out;
  const SymMat a_star = reference_matrix(c.coefficient, c.cell_n);
  const int batches = is_random(c) ? std::max(1, c.m2) : 1;
  const int tasks = static_cast<int>(res.size()) * batches;
  std::vector<std::vector<Record>> rows(tasks);
  std::vector<std::vector<RealizationRecord>> reals(tasks);
  parallel_for(tasks, workers, [&](int t) {
    rows[t] = identify_task(c, res[t / batches], t % batches, a_star, &reals[t], log);
  });
  for (std::size_t e = 0; e < res.size(); ++e) {
    for (int b = 0; b < batches; ++b) {
      const int t = static_cast<int>(e) * batches + b;
      out.records.insert(out.records.end(), rows[t].begin(), rows[t].end());
      out.realizations.insert(out.realizations.end(), reals[t].begin(), reals[t].end());
    }
    if (batches < 2) continue;
    for (std::size_t k = 0; k < c.strategies.size(); ++k) {
      std::vector<Record> per;
      for (int b = 0; b < batches; ++b) per.push_back(rows[e * batches + b][k]);
      out.records.push_back(summary_row(per, c, false));
    }
  }
  return out;
}

/// Noiseless ME optimizer for one epsilon, shared by the noise studies.
struct NoiseBase {
  Setup setup;
  Measurements meas;
  Record clean;
};

NoiseBase noise_base(const RunConfig& c, const ResolvedEpsilon& re, const SymMat& a_star) {
  NoiseBase nb;
  const auto t0 = Clock::now();
  nb.setup = make_setup(re);
  nb.meas = simulate_mean(c, re.epsilon, {c.base_seed}, nb.setup.fine, nb.setup.basis, false, nullptr);
  if (re.p < nb.meas.size()) nb.meas = nb.meas.truncated(re.p);
  const CoarseModel model(nb.setup.coarse, nb.meas.basis);
  const OptimizerTrace t = descend(nb.meas, init_of(c), c.objective, model, c.descent);
  nb.clean = base_record(c, re);
  nb.clean.strategy = "ME";
  nb.clean.sigma = 0.0;
  nb.clean.a = t.final_matrix();
  nb.clean.psi_final = t.final_value();
  nb.clean.iters = t.iterations();
  nb.clean.err_star = err_star(nb.clean.a, a_star);
  nb.clean.err_ref = 0.0;
  nb.clean.status = status_of(t.termination);
  nb.clean.wall_ms = elapsed_ms(t0);
  return nb;
}

RunResult run_noise(const RunConfig& c, const std::vector<ResolvedEpsilon>& res, int workers, const Logger& log) {
  RunResult out;
  if (res.empty()) return out;
  const bool measurement = c.experiment == ExperimentKind::noise_measurement;
  const SymMat a_star = reference_matrix(c.coefficient, c.cell_n);
  const int per_sigma = measurement ? c.noise_draws : c.m2;

  for (const ResolvedEpsilon& re : res) {
    NoiseBase nb;
    try {
      nb = noise_base(c, re, a_star);
    } catch (const std::exception& e) {
      Record r = base_record(c, re);
      r.strategy = "ME";
      r.status = std::string("error: ") + e.what();
      out.records.push_back(r);
      continue;
    }
    out.records.push_back(nb.clean);
    out.realizations.push_back({re.epsilon, c.base_seed,
                                std::vector<double>(nb.meas.energies.data(), nb.meas.energies.data() + nb.meas.size())});
    const CoarseModel model(nb.setup.coarse, nb.meas.basis);
    const SymMat init = init_of(c);

    const int tasks = static_cast<int>(c.sigmas.size()) * per_sigma;
    std::vector<Record> rows(tasks);
    parallel_for(tasks, workers, [&](int t) {
      const double sigma = c.sigmas[t / per_sigma];
      const int k = t % per_sigma;
      Record r = base_record(c, re);
      r.strategy = "ME";
      r.sigma = sigma;
      r.batch = std::to_string(k);
      const auto t0 = Clock::now();
      try {
        OptimizerTrace tr;
        if (measurement) {
          r.seed = c.base_seed + static_cast<std::uint64_t>(k);
          const Measurements noisy = apply_measurement_noise(nb.meas, sigma, r.seed);
          tr = descend(noisy, init, ObjectiveKind::psi_sigma, model, c.descent);
        } else {
          CoefficientNoise spec;
          spec.sigma = sigma;
          spec.draws = c.m1;
          spec.seed = batch_seeds(c.base_seed, k, c.m1).front();
          r.seed = spec.seed;
          r.m1 = c.m1;
          tr = descend_coefficient_noise(nb.meas, init, model, spec, c.descent);
        }
        r.a = tr.final_matrix();
        r.psi_final = tr.final_value();
        r.iters = tr.iterations();
        r.status = status_of(tr.termination);
        r.err_star = err_star(r.a, a_star);
        r.err_ref = err_star(r.a, nb.clean.a);
      } catch (const std::exception& e) {
        r.status = std::string("error: ") + e.what();
      }
      r.wall_ms = elapsed_ms(t0);
      rows[t] = r;
      if (log) {
        std::ostringstream os;
        os << r.experiment << " eps " << format_eps(re.epsilon) << " sigma " << sigma << " #" << k << ": "
           << r.status << ", err_ref " << r.err_ref;
        log(os.str());
      }
    });
    for (std::size_t s = 0; s < c.sigmas.size(); ++s) {
      const std::vector<Record> per(rows.begin() + static_cast<long>(s) * per_sigma,
                                    rows.begin() + static_cast<long>(s + 1) * per_sigma);
      out.records.insert(out.records.end(), per.begin(), per.end());
      if (per_sigma >= 2) out.records.push_back(summary_row(per, c, true));
    }
  }
  return out;
}

RunResult run_me_ms(const RunConfig& c, const std::vector<ResolvedEpsilon>& res, int workers, const Logger& log) {
  RunResult out;
  for (const ResolvedEpsilon& re : res) {
    const MeshPtr fine = make_unit_square_mesh(re.n_fine);
    const CoefficientField field = make_field(c.coefficient, re.epsilon, c.base_seed);
    std::vector<Record> rows(2 * c.me_ms_samples);
    parallel_for(c.me_ms_samples, workers, [&](int k) {
      SplitMix64 rng(derive_seed(c.base_seed, static_cast<std::uint64_t>(k)));
      const double l1 = rng.uniform(4.0, 30.0), l2 = rng.uniform(4.0, 30.0), th = rng.uniform(0.0, std::numbers::pi);
      const double co = std::cos(th), si = std::sin(th);
      const SymMat a{l1 * co * co + l2 * si * si, (l1 - l2) * co * si, l1 * si * si + l2 * co * co};
      Record me = base_record(c, re);
      me.seed = c.base_seed + static_cast<std::uint64_t>(k);
      me.batch = std::to_string(k);
      me.a = a;
      Record ms = me;
      me.strategy = "ME";
      ms.strategy = "MS";
      const auto t0 = Clock::now();
      try {
        const MeMsCheck chk = me_ms_identity_check(field, a, fine, {}, me.seed);
        me.psi_final = chk.psi_me;
        ms.psi_final = chk.psi_ms;
        me.iters = ms.iters = chk.operator_applications;
        me.err_ref = ms.err_ref = std::abs(chk.psi_ms - 2.0 * chk.psi_me) / chk.psi_ms;
      } catch (const std::exception& e) {
        me.status = ms.status = std::string("error: ") + e.what();
      }
      me.wall_ms = ms.wall_ms = elapsed_ms(t0);
      rows[2 * k] = me;
      rows[2 * k + 1] = ms;
      if (log) log("me_ms_check eps " + format_eps(re.epsilon) + " #" + std::to_string(k) + ": " + me.status);
    });
    out.records.insert(out.records.end(), rows.begin(), rows.end());
  }
  return out;
}

RunResult run_homogenize(const RunConfig& c) {
  RunResult out;
  Record r;
  r.experiment = "homogenize";
  r.strategy = "A_star";
  r.seed = c.base_seed;
  r.n_cell = c.cell_n;
  const auto t0 = Clock::now();
  try {
    r.a = reference_matrix(c.coefficient, c.cell_n);
  } catch (const std::exception& e) {
    r.status = std::string("error: ") + e.what();
  }
  r.wall_ms = elapsed_ms(t0);
  out.records.push_back(r);
  return out;
}

RunResult run_one_d(const RunConfig& c) {
  RunResult out;
  const double eps = c.profile_epsilon;
  const auto t0 = Clock::now();
  const OneDProfile prof = one_d_profile(
      [eps](double x) { return 2.0 + std::cos(2.0 * std::numbers::pi * x / eps); },
      uniform_grid(c.grid_lo, c.grid_hi, c.grid_step));
  const double ms = elapsed_ms(t0);
  Record base;
  base.experiment = "one_d_profile";
  base.epsilon = eps;
  base.seed = c.base_seed;
  for (const ProfilePoint& p : prof.points) {
    Record r = base;
    r.strategy = "profile";
    r.a = {p.abar, kNaN, kNaN};
    r.psi_final = p.psi;
    out.records.push_back(r);
  }
  Record h = base;
  h.strategy = "harmonic_mean";
  h.a = {prof.harmonic_mean, kNaN, kNaN};
  out.records.push_back(h);
  Record m = base;
  m.strategy = "argmin";
  m.a = {prof.points[prof.argmin].abar, kNaN, kNaN};
  m.psi_final = prof.points[prof.argmin].psi;
  m.err_ref = std::abs(m.a.a11 - prof.harmonic_mean) / prof.harmonic_mean;
  m.wall_ms = ms;
  out.records.push_back(m);
  return out;
}

}  // namespace

RunResult run_experiment(const RunConfig& config, int workers, const Logger& log) {
  const std::vector<ResolvedEpsilon> res = resolve(config);
  switch (config.experiment) {
    case ExperimentKind::homogenize: return run_homogenize(config);
    case ExperimentKind::one_d_profile: return run_one_d(config);
    case ExperimentKind::identify:
    case ExperimentKind::sweep: return run_identify(config, res, workers, log);
    case ExperimentKind::noise_measurement:
    case ExperimentKind::noise_coefficient: return run_noise(config, res, workers, log);
    case ExperimentKind::me_ms_check: return run_me_ms(config, res, workers, log);
  }
  throw std::invalid_argument("run_experiment: unknown experiment");
}

// ---- output

namespace {

using Cell = std::variant<std::monostate, std::string, long long, std::uint64_t, double>;

std::vector<Cell> cells(const Record& r) {
  const auto num = [](double v) -> Cell { return std::isfinite(v) ? Cell(v) : Cell(); };
  const auto count = [](int v) -> Cell { return v > 0 ? Cell(static_cast<long long>(v)) : Cell(); };
  const auto text = [](const std::string& s) -> Cell { return s.empty() ? Cell() : Cell(s); };
  return {text(r.experiment), text(r.strategy), num(r.epsilon), count(r.p), count(r.q), count(r.r),
          Cell(r.seed), num(r.a.a11), num(r.a.a12), num(r.a.a22), num(r.err_star), num(r.err_eps_q),
          num(r.psi_final), Cell(static_cast<long long>(r.iters)), num(r.wall_ms), count(r.n_cell),
          count(r.n_fine), count(r.n_coarse), num(r.sigma), count(r.m1), text(r.batch), num(r.err_ref),
          num(r.ci95_low), num(r.ci95_high), text(r.status)};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// Shortest representation that reads back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols{
      "experiment", "strategy", "epsilon", "P",      "Q",     "r",      "seed",     "a11",      "a12",
      "a22",        "err_star", "err_eps_q", "psi_final", "iters", "wall_ms", "n_cell", "n_fine", "n_coarse",
      "sigma",      "M1",       "batch",   "err_ref", "ci95_low", "ci95_high", "status"};
  return cols;
}

void write_csv(std::ostream& os, const std::vector<Record>& records) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  for (const Record& r : records) {
    const std::vector<Cell> row = cells(r);
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::string>) os << csv_escape(v);
            else if constexpr (std::is_same_v<T, double>) os << format_double(v);
            else if constexpr (!std::is_same_v<T, std::monostate>) os << v;
          },
          row[i]);
    }
    os << '\n';
  }
}

void write_json(std::ostream& os, const RunResult& result, const std::string& config_echo) {
  nlohmann::ordered_json doc;
  doc["schema_version"] = 1;
  doc["config"] = nlohmann::ordered_json::parse(config_echo);
  doc["columns"] = csv_columns();
  nlohmann::ordered_json recs = nlohmann::ordered_json::array();
  const auto& cols = csv_columns();
  for (const Record& r : result.records) {
    nlohmann::ordered_json j;
    const std::vector<Cell> row = cells(r);
    for (std::size_t i = 0; i < row.size(); ++i)
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, std::monostate>) j[cols[i]] = nullptr;
            else j[cols[i]] = v;
          },
          row[i]);
    recs.push_back(std::move(j));
  }
  doc["records"] = std::move(recs);
  nlohmann::ordered_json reals = nlohmann::ordered_json::array();
  for (const RealizationRecord& r : result.realizations)
    reals.push_back({{"epsilon", r.epsilon}, {"seed", r.seed}, {"energies", r.energies}});
  doc["realizations"] = std::move(reals);
  os << doc.dump(2) << '\n';
}

void write_file_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp." + std::to_string(static_cast<unsigned long long>(
                       std::chrono::steady_clock::now().time_since_epoch().count()));
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot move " + tmp.string() + " to " + path + ": " + ec.message());
  }
}

}  // namespace effid
