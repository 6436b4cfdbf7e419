// Runs the effid binary end to end.

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef EFFID_CLI
#error "EFFID_CLI must name the effid executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

class Sandbox {
 public:
  Sandbox() : dir_(fs::temp_directory_path() / ("effid_cli_" + std::to_string(counter_++))) {
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Sandbox() { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  Run run(const std::string& args, const std::string& env = "") const {
    const fs::path out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
    const std::string cmd = env + " " + std::string(EFFID_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  const fs::path& dir() const { return dir_; }

 private:
  static inline int counter_ = 0;
  fs::path dir_;
};

// CSV text with the wall_ms column emptied.
std::string strip_wall_ms(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  int col = -1;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (col < 0)
      for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] == "wall_ms") col = static_cast<int>(i);
    if (col >= 0 && col < static_cast<int>(f.size())) f[col].clear();
    for (std::size_t i = 0; i < f.size(); ++i) out += (i ? "," : "") + f[i];
    out += '\n';
  }
  return out;
}

}  // namespace

TEST_CASE("missing config") {
  const Sandbox sb;
  const Run r = sb.run((sb.dir() / "absent.json").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("config not found") != std::string::npos);
  CHECK(r.err.find("\"error\":\"config_not_found\"") != std::string::npos);
}

TEST_CASE("validate resolves P and rejects bad configs") {
  const Sandbox sb;
  const auto p05 = sb.write("a.json", R"({"schema_version": 1, "experiment": "sweep", "epsilons": [0.05], "P": "auto"})");
  Run r = sb.run("--validate " + p05.string());
  REQUIRE(r.code == 0);
  auto doc = nlohmann::json::parse(r.out);
  CHECK(doc["resolved"][0]["P"] == 3);
  CHECK(!fs::exists(sb.dir() / "sweep.csv"));

  const auto p25 = sb.write("b.json", R"({"schema_version": 1, "experiment": "sweep", "epsilons": [0.25]})");
  r = sb.run("--validate " + p25.string());
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["resolved"][0]["P"] == 5);

  const auto bad_q = sb.write("c.json", R"({"schema_version": 1, "experiment": "sweep", "epsilons": [0.25], "Q": 3})");
  r = sb.run("--validate " + bad_q.string());
  CHECK(r.code == 4);
  CHECK(r.err.find("schema_violation") != std::string::npos);

  CHECK(sb.run(sb.write("d.json", "{oops").string()).code == 3);
  const auto big = sb.write("e.json", R"({"schema_version": 1, "experiment": "sweep", "epsilons": [0.004]})");
  r = sb.run(big.string());
  CHECK(r.code == 5);
  CHECK(r.err.find("dof_cap_exceeded") != std::string::npos);
  CHECK(sb.run("--profile full --validate " + big.string()).code == 0);
}

TEST_CASE("homogenize the reference field") {
  const Sandbox sb;
  const auto cfg = sb.write("h.json", R"({"schema_version": 1, "experiment": "homogenize", "cell_n": 512})");
  const Run r = sb.run(cfg.string() + " --out " + (sb.dir() / "out").string());
  REQUIRE(r.code == 0);
  std::istringstream csv(slurp(sb.dir() / "out" / "homogenize.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  std::vector<std::string> f;
  std::string cell;
  std::istringstream rs(row);
  while (std::getline(rs, cell, ',')) f.push_back(cell);
  REQUIRE(f.size() > 9);
  CHECK(std::abs(std::stod(f[7]) / 19.3378 - 1.0) <= 5e-3);
  CHECK(std::abs(std::stod(f[9]) / 11.8312 - 1.0) <= 5e-3);
  CHECK(fs::exists(sb.dir() / "out" / "homogenize.json"));
}

TEST_CASE("one_d_profile defaults") {
  const Sandbox sb;
  const auto cfg = sb.write("p.json", R"({"schema_version": 1, "experiment": "one_d_profile"})");
  const Run r = sb.run(cfg.string(), "EFFID_OUTPUT_DIR=" + (sb.dir() / "env").string());
  REQUIRE(r.code == 0);
  const auto doc = nlohmann::json::parse(slurp(sb.dir() / "env" / "one_d_profile.json"));
  const auto& last = doc["records"].back();
  CHECK(last["strategy"] == "argmin");
  CHECK(std::abs(last["a11"].get<double>() - std::sqrt(3.0)) <= 2e-3);
}

TEST_CASE("sweep output is reproducible") {
  const Sandbox sb;
  const auto cfg = sb.write("s.json", R"({"schema_version": 1, "experiment": "sweep", "coefficient": "checkerboard",
    "epsilons": [0.5, 0.25], "P": 3, "Q": 3, "r": 3, "coarse_H": 0.25, "M1": 2, "M2": 2, "base_seed": 5,
    "strategies": ["ME", "MS"]})");
  const Run a = sb.run(cfg.string() + " --out " + (sb.dir() / "a").string());
  const Run b = sb.run(cfg.string() + " --workers 2 --out " + (sb.dir() / "b").string());
  REQUIRE(a.code == 0);
  REQUIRE(b.code == 0);
  const std::string ca = slurp(sb.dir() / "a" / "sweep.csv");
  CHECK(!ca.empty());
  CHECK(strip_wall_ms(ca) == strip_wall_ms(slurp(sb.dir() / "b" / "sweep.csv")));

  const Run c = sb.run(cfg.string() + " --seed 9 --out " + (sb.dir() / "c").string());
  REQUIRE(c.code == 0);
  const auto doc = nlohmann::json::parse(slurp(sb.dir() / "c" / "sweep.json"));
  CHECK(doc["config"]["base_seed"] == 9);
  CHECK(doc["records"][0]["seed"] == 9);
  CHECK(strip_wall_ms(slurp(sb.dir() / "c" / "sweep.csv")) != strip_wall_ms(ca));
}
