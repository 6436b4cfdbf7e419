#pragma once

#include "effid/coefficients.hpp"
#include "effid/descent.hpp"
#include "effid/identify.hpp"
#include "effid/mesh.hpp"
#include "effid/modes.hpp"
#include "effid/solver.hpp"
#include "effid/sym_mat.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace effid {

// ---- error metrics

/// |a - a_star| / |a_star| in the upper-triangle norm.
double err_star(const SymMat& a, const SymMat& a_star);

struct RelativeError {
  double value = 0.0;
  bool regularized = false;  // N was singular and got a ridge
};

/// sup over c of |U_ref c - U c|_W / |U_ref c|_W: square root of the largest
/// eigenvalue of (D, N), D = (U_ref - U)^T W (U_ref - U), N = U_ref^T W U_ref.
RelativeError worst_relative_error(const Eigen::MatrixXd& reference, const Eigen::MatrixXd& approx,
                                   const SparseMatrix& weight);

/// Nodal fields u(a, phi_q) on `fine` for every mode of `basis`.
Eigen::MatrixXd constant_coefficient_fields(const SymMat& a, const ModeBasis& basis, const MeshPtr& fine,
                                            const SolverOptions& opts = {});

/// Worst relative L2(D) error of u(a, g) against the recorded volume fields
/// of `reference` over the span of its modes. Averaged measurements give the
/// error against the mean field.
RelativeError err_eps_q(const SymMat& a, const Measurements& reference, const MeshPtr& fine,
                        const SolverOptions& opts = {});
RelativeError err_eps_q_expect(const SymMat& a, const std::vector<Measurements>& realizations, const MeshPtr& fine,
                               const SolverOptions& opts = {});

// ---- ensembles

struct EnsembleStat {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation of the batch estimates
  double ci95_low = 0.0;
  double ci95_high = 0.0;
  int m1 = 0;
  int m2 = 0;
  std::vector<double> estimates;
};

/// Mean and normal-approximation 95% interval mean +- 1.96 sd / sqrt(m2).
EnsembleStat summarize(const std::vector<double>& estimates, int m1);

/// base_seed + batch * m1 + i for i < m1.
std::vector<std::uint64_t> batch_seeds(std::uint64_t base_seed, int batch, int m1);

using BatchEstimate = std::function<double(const std::vector<std::uint64_t>& seeds)>;

/// m2 independent estimates, each from m1 fresh seeds.
EnsembleStat ensemble(const BatchEstimate& estimate, int m1, int m2, std::uint64_t base_seed, int workers = 1);

/// Runs body(0..count-1) on up to `workers` threads; rethrows the first exception.
void parallel_for(int count, int workers, const std::function<void(int)>& body);

// ---- one-dimensional studies

struct ProfilePoint {
  double abar = 0.0;
  double psi = 0.0;
};

struct OneDProfile {
  std::vector<ProfilePoint> points;
  double harmonic_mean = 0.0;
  std::size_t argmin = 0;
};

/// Psi(abar) = 1/4 |int_0^1 1/a_eps - 1/abar| on the grid; the integral uses
/// `quadrature_points` midpoints.
OneDProfile one_d_profile(const std::function<double(double)>& a_eps, const std::vector<double>& grid,
                          int quadrature_points = 200000);

/// lo, lo + step, ... up to hi (inclusive within rounding).
std::vector<double> uniform_grid(double lo, double hi, double step);

/// |1/a_star - E[1/(abar + eta)]|^2 for eta uniform on [alpha1, alpha2],
/// expectation by Gauss-Legendre quadrature.
double one_d_noise_objective(double abar, double a_star, double alpha1, double alpha2, double* grad = nullptr);

/// (alpha2 - alpha1 e^{l/a_star}) / (e^{l/a_star} - 1), l = alpha2 - alpha1.
double one_d_noise_optimum(double a_star, double alpha1, double alpha2);

DescentTrace one_d_noise_descent(double a_star, double alpha1, double alpha2, double init,
                                 const DescentOptions& opts = {});

// ---- mesh planning

/// Smallest n that is a multiple of n_coarse (and of 1/eps when that is an
/// integer, so checkerboard cells align with the mesh) with sqrt(2)/n <= eps/r.
int fine_subdivisions(double epsilon, int r, int n_coarse);

// ---- configured runs

enum class ExperimentKind { homogenize, identify, sweep, noise_measurement, noise_coefficient, one_d_profile, me_ms_check };
enum class Strategy { me, ms, mv, a_star, me_affine };
enum class CoefficientKind { periodic_paper, checkerboard, constant, layered };
enum class Profile { desk, full };

std::string to_string(ExperimentKind k);
std::string to_string(Strategy s);
std::string to_string(CoefficientKind k);
std::string to_string(Profile p);
ExperimentKind parse_experiment(const std::string& s);
Strategy parse_strategy(const std::string& s);
CoefficientKind parse_coefficient(const std::string& s);
Profile parse_profile(const std::string& s);

struct CoefficientSpec {
  CoefficientKind kind = CoefficientKind::periodic_paper;
  SymMat value{1.0, 0.0, 1.0};  // constant
  double mean = 2.0;            // layered: (mean + amplitude cos 2 pi y) Id
  double amplitude = 1.0;
};

/// The unscaled field (checkerboard: one realization at `epsilon`).
CoefficientField make_field(const CoefficientSpec& spec, double epsilon, std::uint64_t seed = 0);
/// Homogenized matrix; cell problems on a cell_n mesh where needed.
SymMat reference_matrix(const CoefficientSpec& spec, int cell_n);
/// Cell mean for deterministic fields, 10 Id (phase mean) for the checkerboard.
SymMat default_init(const CoefficientSpec& spec);

struct RunConfig {
  ExperimentKind experiment = ExperimentKind::sweep;
  CoefficientSpec coefficient;
  std::vector<double> epsilons;
  std::optional<int> p;  // empty: choose_p per epsilon
  int q = 0;             // 0: no solution-error metric
  int r = 20;
  double coarse_h = 0.05;
  int m1 = 1;
  int m2 = 1;
  std::vector<double> sigmas;
  int noise_draws = 40;
  std::uint64_t base_seed = 1;
  Profile profile = Profile::desk;
  std::vector<Strategy> strategies{Strategy::me};
  ObjectiveKind objective = ObjectiveKind::psi_sigma;
  std::optional<SymMat> init;
  int cell_n = 512;
  DescentOptions descent;

  // one_d_profile
  double profile_epsilon = 1e-3;
  double grid_lo = 0.5;
  double grid_hi = 4.0;
  double grid_step = 1e-3;

  // me_ms_check
  int me_ms_fine_n = 128;
  int me_ms_samples = 5;

  std::string output_dir = ".";
  std::string csv_name;   // default <experiment>.csv
  std::string json_name;  // default <experiment>.json
};

struct ResolvedEpsilon {
  double epsilon = 0.0;
  int p = 0;
  int q = 0;
  int n_coarse = 0;
  int n_fine = 0;
  long long fine_dofs = 0;
};

/// Mesh sizes and mode counts the run would use, one entry per epsilon.
std::vector<ResolvedEpsilon> resolve(const RunConfig& config);

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One output row. NaN and empty strings print as empty CSV fields.
struct Record {
  std::string experiment;
  std::string strategy;
  double epsilon = kNaN;
  int p = 0;
  int q = 0;
  int r = 0;
  std::uint64_t seed = 0;
  SymMat a{kNaN, kNaN, kNaN};
  double err_star = kNaN;
  double err_eps_q = kNaN;
  double psi_final = kNaN;
  int iters = 0;
  double wall_ms = 0.0;

  int n_cell = 0;
  int n_fine = 0;
  int n_coarse = 0;
  double sigma = kNaN;
  int m1 = 0;
  std::string batch;  // batch or draw index, "mean" for ensemble summaries
  /// Relative error to the experiment's own reference: the noiseless
  /// optimizer in noise studies, |psi_ms - 2 psi_me| / psi_ms in me_ms_check,
  /// |argmin - harmonic mean| / harmonic mean for the 1D profile.
  double err_ref = kNaN;
  /// 95% interval of the summarized metric (err_star for sweeps, err_ref for
  /// noise studies); summary rows only.
  double ci95_low = kNaN;
  double ci95_high = kNaN;
  /// "ok", a non-converged termination reason, or "error: ..." for failures.
  std::string status = "ok";
};

struct RealizationRecord {
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> energies;
};

struct RunResult {
  std::vector<Record> records;
  std::vector<RealizationRecord> realizations;
  /// Records whose status starts with "error".
  int failures() const;
};

using Logger = std::function<void(const std::string&)>;

RunResult run_experiment(const RunConfig& config, int workers = 1, const Logger& log = {});

/// Column order of the CSV output.
const std::vector<std::string>& csv_columns();
void write_csv(std::ostream& os, const std::vector<Record>& records);
/// `config_echo` is a JSON document embedded under "config".
void write_json(std::ostream& os, const RunResult& result, const std::string& config_echo = "{}");

/// Writes to a temporary file next to `path` and renames it into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace effid
