#include "effid/config.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace effid {

std::string to_string(ConfigErrorKind k) {
  switch (k) {
    case ConfigErrorKind::not_found: return "config_not_found";
    case ConfigErrorKind::parse: return "config_parse_error";
    case ConfigErrorKind::schema: return "schema_violation";
    case ConfigErrorKind::dof_cap: return "dof_cap_exceeded";
  }
  return "unknown";
}

namespace {

using json = nlohmann::json;

[[noreturn]] void schema(const std::string& msg) { throw ConfigError(ConfigErrorKind::schema, msg); }

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) schema(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) schema("unknown key '" + k + "' in " + where);
}

template <typename T>
T get(const json& j, const std::string& key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    schema("bad value for '" + key + "' in " + where);
  }
}

int get_positive(const json& j, const std::string& key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1) schema("'" + key + "' in " + where + " must be a positive integer");
  return v.get<int>();
}

double get_number(const json& j, const std::string& key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_number()) schema("'" + key + "' in " + where + " must be a number");
  return v.get<double>();
}

std::vector<double> get_numbers(const json& j, const std::string& key) {
  const json& v = j.at(key);
  if (!v.is_array()) schema("'" + key + "' must be a list of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) schema("'" + key + "' must be a list of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

SymMat get_matrix(const json& v, const std::string& key) {
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
    schema("'" + key + "' must be [a11, a12, a22]");
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

template <typename F>
auto parse_enum(F&& f, const json& v, const std::string& key) {
  if (!v.is_string()) schema("'" + key + "' must be a string");
  try {
    return f(v.get<std::string>());
  } catch (const std::invalid_argument& e) {
    schema(e.what());
  }
}

CoefficientSpec parse_coefficient_spec(const json& v) {
  CoefficientSpec spec;
  if (v.is_string()) {
    spec.kind = parse_enum(parse_coefficient, v, "coefficient");
    if (spec.kind == CoefficientKind::constant) schema("constant coefficient needs its entries");
    return spec;
  }
  check_keys(v, {"type", "a11", "a12", "a22", "mean", "amplitude"}, "coefficient");
  if (!v.contains("type")) schema("coefficient needs a 'type'");
  spec.kind = parse_enum(parse_coefficient, v.at("type"), "coefficient.type");
  if (spec.kind == CoefficientKind::constant) {
    for (const char* k : {"a11", "a12", "a22"})
      if (!v.contains(k)) schema(std::string("constant coefficient needs '") + k + "'");
    spec.value = {get_number(v, "a11", "coefficient"), get_number(v, "a12", "coefficient"),
                  get_number(v, "a22", "coefficient")};
    if (!spec.value.is_spd()) schema("constant coefficient must be positive definite");
  }
  if (v.contains("mean")) spec.mean = get_number(v, "mean", "coefficient");
  if (v.contains("amplitude")) spec.amplitude = get_number(v, "amplitude", "coefficient");
  if (spec.kind == CoefficientKind::layered && !(spec.mean - std::abs(spec.amplitude) > 0.0))
    schema("layered coefficient must stay positive");
  return spec;
}

std::vector<double> default_epsilons(ExperimentKind k, Profile p) {
  switch (k) {
    case ExperimentKind::sweep: return {0.2, 0.1, 0.05};
    case ExperimentKind::identify: return {0.1};
    case ExperimentKind::noise_measurement: return {p == Profile::full ? 0.025 : 0.05};
    case ExperimentKind::noise_coefficient: return {0.05};
    case ExperimentKind::me_ms_check: return {0.2};
    default: return {};
  }
}

std::vector<double> default_sigmas(ExperimentKind k) {
  if (k == ExperimentKind::noise_measurement) return {0.01, 0.05, 0.1};
  if (k == ExperimentKind::noise_coefficient) return {0.5, 1.0, 2.0};
  return {};
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(ConfigErrorKind::parse, std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"schema_version", "experiment", "profile", "coefficient", "epsilons", "P", "Q", "r", "coarse_H", "M1",
              "M2", "sigma", "noise_draws", "base_seed", "strategies", "objective", "init", "cell_n", "descent",
              "one_d", "me_ms", "output"},
             "config");
  if (!j.contains("schema_version")) schema("missing 'schema_version'");
  if (!j.at("schema_version").is_number_integer() || j.at("schema_version").get<int>() != kConfigSchemaVersion)
    schema("unsupported schema_version (expected " + std::to_string(kConfigSchemaVersion) + ")");
  if (!j.contains("experiment")) schema("missing 'experiment'");

  RunConfig c;
  c.experiment = parse_enum(parse_experiment, j.at("experiment"), "experiment");
  if (j.contains("profile")) c.profile = parse_enum(parse_profile, j.at("profile"), "profile");
  if (j.contains("coefficient")) c.coefficient = parse_coefficient_spec(j.at("coefficient"));

  const bool random = c.coefficient.kind == CoefficientKind::checkerboard;
  const bool full = c.profile == Profile::full;
  c.r = full ? (random ? 20 : 40) : (random ? 10 : 20);
  c.m1 = full ? 40 : 10;
  c.m2 = full ? 40 : 4;
  c.epsilons = default_epsilons(c.experiment, c.profile);
  c.sigmas = default_sigmas(c.experiment);

  if (j.contains("epsilons")) c.epsilons = get_numbers(j, "epsilons");
  for (double e : c.epsilons)
    if (!(e > 0.0) || e > 1.0) schema("epsilons must lie in (0, 1]");
  if (c.experiment == ExperimentKind::identify && c.epsilons.size() != 1)
    schema("identify takes exactly one epsilon (use sweep for several)");
  if (j.contains("P")) {
    const json& p = j.at("P");
    if (p.is_string() && p.get<std::string>() == "auto") c.p.reset();
    else c.p = get_positive(j, "P", "config");
  }
  if (j.contains("Q")) {
    if (j.at("Q").is_number_integer() && j.at("Q").get<int>() == 0) c.q = 0;
    else c.q = get_positive(j, "Q", "config");
  }
  if (j.contains("r")) c.r = get_positive(j, "r", "config");
  if (j.contains("coarse_H")) {
    c.coarse_h = get_number(j, "coarse_H", "config");
    if (!(c.coarse_h > 0.0) || c.coarse_h > 1.5) schema("coarse_H must lie in (0, 1.5]");
  }
  if (j.contains("M1")) c.m1 = get_positive(j, "M1", "config");
  if (j.contains("M2")) c.m2 = get_positive(j, "M2", "config");
  if (j.contains("sigma")) c.sigmas = get_numbers(j, "sigma");
  for (double s : c.sigmas)
    if (!(s >= 0.0)) schema("sigma values must be nonnegative");
  if (j.contains("noise_draws")) c.noise_draws = get_positive(j, "noise_draws", "config");
  if (j.contains("base_seed")) {
    if (!j.at("base_seed").is_number_unsigned()) schema("'base_seed' must be a nonnegative integer");
    c.base_seed = j.at("base_seed").get<std::uint64_t>();
  }
  if (j.contains("strategies")) {
    const json& s = j.at("strategies");
    if (!s.is_array() || s.empty()) schema("'strategies' must be a nonempty list");
    c.strategies.clear();
    for (const json& x : s) c.strategies.push_back(parse_enum(parse_strategy, x, "strategies"));
  }
  if (j.contains("objective")) c.objective = parse_enum(parse_objective, j.at("objective"), "objective");
  if (j.contains("init")) {
    c.init = get_matrix(j.at("init"), "init");
    if (!c.init->is_spd()) schema("'init' must be positive definite");
  }
  if (j.contains("cell_n")) c.cell_n = get_positive(j, "cell_n", "config");
  if (j.contains("descent")) {
    const json& d = j.at("descent");
    check_keys(d, {"armijo", "backtrack", "max_step_fraction", "gradient_rtol", "gradient_atol", "max_iterations"},
               "descent");
    if (d.contains("armijo")) c.descent.armijo = get_number(d, "armijo", "descent");
    if (d.contains("backtrack")) c.descent.backtrack = get_number(d, "backtrack", "descent");
    if (d.contains("max_step_fraction")) c.descent.max_step_fraction = get_number(d, "max_step_fraction", "descent");
    if (d.contains("gradient_rtol")) c.descent.gradient_rtol = get_number(d, "gradient_rtol", "descent");
    if (d.contains("gradient_atol")) c.descent.gradient_atol = get_number(d, "gradient_atol", "descent");
    if (d.contains("max_iterations")) c.descent.max_iterations = get_positive(d, "max_iterations", "descent");
    if (!(c.descent.armijo > 0.0 && c.descent.armijo < 1.0)) schema("descent.armijo must lie in (0, 1)");
    if (!(c.descent.backtrack > 0.0 && c.descent.backtrack < 1.0)) schema("descent.backtrack must lie in (0, 1)");
    if (!(c.descent.max_step_fraction > 0.0)) schema("descent.max_step_fraction must be positive");
  }
  if (j.contains("one_d")) {
    const json& o = j.at("one_d");
    check_keys(o, {"epsilon", "grid"}, "one_d");
    if (o.contains("epsilon")) c.profile_epsilon = get_number(o, "epsilon", "one_d");
    if (o.contains("grid")) {
      const std::vector<double> g = get_numbers(o, "grid");
      if (g.size() != 3 || !(g[0] > 0.0) || !(g[1] >= g[0]) || !(g[2] > 0.0))
        schema("one_d.grid must be [lo, hi, step] with 0 < lo <= hi and step > 0");
      c.grid_lo = g[0];
      c.grid_hi = g[1];
      c.grid_step = g[2];
    }
    if (!(c.profile_epsilon > 0.0)) schema("one_d.epsilon must be positive");
  }
  if (j.contains("me_ms")) {
    const json& m = j.at("me_ms");
    check_keys(m, {"fine_n", "samples"}, "me_ms");
    if (m.contains("fine_n")) c.me_ms_fine_n = get_positive(m, "fine_n", "me_ms");
    if (m.contains("samples")) c.me_ms_samples = get_positive(m, "samples", "me_ms");
  }
  if (j.contains("output")) {
    const json& o = j.at("output");
    check_keys(o, {"dir", "csv", "json"}, "output");
    if (o.contains("dir")) c.output_dir = get<std::string>(o, "dir", "output");
    if (o.contains("csv")) c.csv_name = get<std::string>(o, "csv", "output");
    if (o.contains("json")) c.json_name = get<std::string>(o, "json", "output");
  }
  if (c.csv_name.empty()) c.csv_name = to_string(c.experiment) + ".csv";
  if (c.json_name.empty()) c.json_name = to_string(c.experiment) + ".json";
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!std::filesystem::is_regular_file(path) || !f)
    throw ConfigError(ConfigErrorKind::not_found, "config not found: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

std::vector<ResolvedEpsilon> validate(const RunConfig& config) {
  std::vector<ResolvedEpsilon> res;
  try {
    res = resolve(config);
  } catch (const std::invalid_argument& e) {
    schema(e.what());
  }
  if (config.profile == Profile::desk) {
    for (const ResolvedEpsilon& re : res)
      if (re.fine_dofs > kDeskDofCap)
        throw ConfigError(ConfigErrorKind::dof_cap,
                          "eps = " + std::to_string(re.epsilon) + " needs " + std::to_string(re.fine_dofs) +
                              " fine-mesh dofs, above the desk cap of " + std::to_string(kDeskDofCap));
    if (config.experiment == ExperimentKind::homogenize &&
        static_cast<long long>(config.cell_n) * config.cell_n > kDeskDofCap)
      throw ConfigError(ConfigErrorKind::dof_cap, "cell_n exceeds the desk dof cap");
  }
  return res;
}

std::string config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["experiment"] = to_string(c.experiment);
  j["profile"] = to_string(c.profile);
  nlohmann::ordered_json coef;
  coef["type"] = to_string(c.coefficient.kind);
  if (c.coefficient.kind == CoefficientKind::constant) {
    coef["a11"] = c.coefficient.value.a11;
    coef["a12"] = c.coefficient.value.a12;
    coef["a22"] = c.coefficient.value.a22;
  }
  if (c.coefficient.kind == CoefficientKind::layered) {
    coef["mean"] = c.coefficient.mean;
    coef["amplitude"] = c.coefficient.amplitude;
  }
  j["coefficient"] = coef;
  j["epsilons"] = c.epsilons;
  if (c.p) j["P"] = *c.p;
  else j["P"] = "auto";
  j["Q"] = c.q;
  j["r"] = c.r;
  j["coarse_H"] = c.coarse_h;
  j["M1"] = c.m1;
  j["M2"] = c.m2;
  j["sigma"] = c.sigmas;
  j["noise_draws"] = c.noise_draws;
  j["base_seed"] = c.base_seed;
  std::vector<std::string> strategies;
  for (Strategy s : c.strategies) strategies.push_back(to_string(s));
  j["strategies"] = strategies;
  j["objective"] = to_string(c.objective);
  const SymMat init = c.init ? *c.init : default_init(c.coefficient);
  j["init"] = {init.a11, init.a12, init.a22};
  j["cell_n"] = c.cell_n;
  j["descent"] = {{"armijo", c.descent.armijo},
                  {"backtrack", c.descent.backtrack},
                  {"max_step_fraction", c.descent.max_step_fraction},
                  {"gradient_rtol", c.descent.gradient_rtol},
                  {"gradient_atol", c.descent.gradient_atol},
                  {"max_iterations", c.descent.max_iterations}};
  j["one_d"] = {{"epsilon", c.profile_epsilon}, {"grid", {c.grid_lo, c.grid_hi, c.grid_step}}};
  j["me_ms"] = {{"fine_n", c.me_ms_fine_n}, {"samples", c.me_ms_samples}};
  j["output"] = {{"dir", c.output_dir}, {"csv", c.csv_name}, {"json", c.json_name}};
  return j.dump(2);
}

std::string validation_report(const RunConfig& config) {
  const std::vector<ResolvedEpsilon> res = validate(config);
  nlohmann::ordered_json j;
  j["valid"] = true;
  j["config"] = nlohmann::ordered_json::parse(config_to_json(config));
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const ResolvedEpsilon& re : res) {
    nlohmann::ordered_json r;
    r["epsilon"] = re.epsilon;
    if (re.p > 0) r["P"] = re.p;
    if (re.q > 0) r["Q"] = re.q;
    if (re.n_coarse > 0) r["n_coarse"] = re.n_coarse;
    r["n_fine"] = re.n_fine;
    r["fine_dofs"] = re.fine_dofs;
    rows.push_back(r);
  }
  j["resolved"] = rows;
  if (config.profile == Profile::desk) j["dof_cap"] = kDeskDofCap;
  else j["dof_cap"] = nullptr;
  return j.dump(2);
}

}  // namespace effid
