#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string err;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Workspace {
 public:
  Workspace() {
    dir_ = fs::temp_directory_path() / ("sfv_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(dir_);
  }
  ~Workspace() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
  }
  const fs::path& dir() const { return dir_; }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  Outcome run(const std::string& args) const {
    const auto out = dir_ / "stdout.txt";
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string(SFV_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = slurp(out);
    o.err = slurp(err);
    return o;
  }

 private:
  static inline int counter_ = 0;
  fs::path dir_;
};

std::string config(const std::string& name) { return std::string(SFV_CONFIG_DIR) + "/" + name; }

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

const std::string kSmallPureDeath =
    R"({"N": 1000, "theta": 0.5, "T": 3.0, "seed": 4, "replicas": 6, "model": {"type": "pure_death", "rate": 1.0}})";

}  // namespace

TEST_CASE("simulate writes one record per replica") {
  Workspace ws;
  const auto cfg = ws.write("pd.json", kSmallPureDeath);
  const auto o = ws.run("simulate --config " + cfg.string() + " --out " + ws.dir().string());
  REQUIRE(o.code == 0);
  CHECK(o.out.find("replicas=6") != std::string::npos);
  CHECK(o.out.find("mean_p_hat=") != std::string::npos);
  CHECK(o.out.find("resample_counts=") != std::string::npos);
  const auto records = nlohmann::json::parse(slurp(ws.dir() / "records.json"));
  CHECK(records.size() == 6);
  CHECK(csv_rows(slurp(ws.dir() / "records.csv")).size() == 7);
}

TEST_CASE("identical configs give byte-identical outputs") {
  Workspace ws;
  const auto cfg = ws.write("pd.json", kSmallPureDeath);
  fs::create_directories(ws.dir() / "a");
  fs::create_directories(ws.dir() / "b");
  REQUIRE(ws.run("simulate --config " + cfg.string() + " --out " + (ws.dir() / "a").string()).code == 0);
  REQUIRE(ws.run("simulate --threads 2 --config " + cfg.string() + " --out " + (ws.dir() / "b").string()).code == 0);
  CHECK(slurp(ws.dir() / "a" / "records.json") == slurp(ws.dir() / "b" / "records.json"));
  CHECK(slurp(ws.dir() / "a" / "records.csv") == slurp(ws.dir() / "b" / "records.csv"));
  REQUIRE(ws.run("oracle --config " + cfg.string() + " --out " + (ws.dir() / "a").string()).code == 0);
  REQUIRE(ws.run("oracle --config " + cfg.string() + " --out " + (ws.dir() / "b").string()).code == 0);
  CHECK(slurp(ws.dir() / "a" / "oracle_report.json") == slurp(ws.dir() / "b" / "oracle_report.json"));
  CHECK(slurp(ws.dir() / "a" / "survival_curve.csv") == slurp(ws.dir() / "b" / "survival_curve.csv"));
}

TEST_CASE("configuration errors exit with 1") {
  Workspace ws;
  const auto k_too_big = ws.write(
      "k.json", R"({"N": 10, "K": 10, "T": 1, "seed": 1, "model": {"type": "pure_death", "rate": 1}})");
  auto o = ws.run("simulate --config " + k_too_big.string() + " --out " + ws.dir().string());
  CHECK(o.code == 1);
  CHECK(o.err.find("K < N") != std::string::npos);

  const auto no_seed = ws.write("s.json", R"({"N": 10, "K": 2, "T": 1, "model": {"type": "pure_death", "rate": 1}})");
  o = ws.run("simulate --config " + no_seed.string() + " --out " + ws.dir().string());
  CHECK(o.code == 1);
  CHECK(o.err.find("seed") != std::string::npos);

  o = ws.run("simulate --config " + (ws.dir() / "missing.json").string() + " --out " + ws.dir().string());
  CHECK(o.code == 1);

  CHECK(ws.run("simulate").code == 1);
  CHECK(ws.run("frobnicate --config x").code == 1);
  CHECK(ws.run("--help").code == 0);
}

TEST_CASE("engine errors exit with 2") {
  Workspace ws;
  const auto cfg = ws.write("e.json", R"({"N": 10, "K": 1, "T": 50, "seed": 1, "replicas": 2, "max_branchings": 20,
                                          "model": {"type": "pure_death", "rate": 1}})");
  const auto o = ws.run("simulate --config " + cfg.string() + " --out " + ws.dir().string());
  CHECK(o.code == 2);
  CHECK(o.err.find("replica") != std::string::npos);
}

TEST_CASE("oracle on the pure-death benchmark") {
  Workspace ws;
  const auto o = ws.run("oracle --config " + config("pure_death.json") + " --out " + ws.dir().string());
  REQUIRE(o.code == 0);
  const auto report = nlohmann::json::parse(slurp(ws.dir() / "oracle_report.json"));
  CHECK(report.at("j_max") == 4);
  for (int j = 0; j < 4; ++j) CHECK(report.at("t_levels")[j].get<double>() == doctest::Approx((j + 1) * std::log(2.0)));
  CHECK(csv_rows(slurp(ws.dir() / "survival_curve.csv"))[0] == std::vector<std::string>{"t", "p_t"});
}

TEST_CASE("oracle on the 2-state benchmark reports equal formulations") {
  Workspace ws;
  REQUIRE(ws.run("oracle --config " + config("two_state.json") + " --out " + ws.dir().string()).code == 0);
  const auto report = nlohmann::json::parse(slurp(ws.dir() / "oracle_report.json"));
  for (const auto& f : report.at("functions")) {
    const double a = f.at("sigma2_sync").get<double>();
    const double b = f.at("sigma2_sync_alt").get<double>();
    CHECK(std::abs(a - b) <= 1e-10 * a);
  }
}

TEST_CASE("diffusion has no oracle") {
  Workspace ws;
  auto o = ws.run("oracle --config " + config("diffusion_box.json") + " --out " + ws.dir().string());
  CHECK(o.code == 3);
  CHECK(o.err.find("no exact oracle") != std::string::npos);
  o = ws.run("validate --config " + config("diffusion_box.json") + " --out " + ws.dir().string());
  CHECK(o.code == 3);
}

TEST_CASE("validate with a deliberately wrong theta fails") {
  Workspace ws;
  const auto cfg = ws.write("w.json", R"({"N": 2000, "theta": 0.5, "oracle_theta": 0.3, "T": 3.0, "seed": 8,
                                          "replicas": 100, "model": {"type": "pure_death", "rate": 1.0}})");
  const auto o = ws.run("validate --config " + cfg.string() + " --out " + ws.dir().string());
  CHECK(o.code == 4);
  CHECK(o.out.find("validation FAILED") != std::string::npos);
  CHECK(fs::exists(ws.dir() / "validation_summary.json"));
}

TEST_CASE("validate with ten replicas skips variance criteria") {
  Workspace ws;
  const auto cfg = ws.write("few.json", R"({"N": 2000, "theta": 0.5, "T": 3.0, "seed": 8, "replicas": 10,
                                            "model": {"type": "pure_death", "rate": 1.0}})");
  const auto o = ws.run("validate --config " + cfg.string() + " --out " + ws.dir().string());
  CHECK(o.err.find("replicas") != std::string::npos);
  const auto summary = nlohmann::json::parse(slurp(ws.dir() / "validation_summary.json"));
  bool found = false;
  for (const auto& c : summary.at("criteria")) {
    if (c.at("name") == "variance_p_hat") {
      found = true;
      CHECK(c.at("status") == "skipped");
    }
  }
  CHECK(found);
}

TEST_CASE("validate passes on the pure-death acceptance config") {
  Workspace ws;
  const auto o = ws.run("validate --config " + config("pure_death.json") + " --out " + ws.dir().string());
  CHECK(o.code == 0);
  CHECK(o.out.find("validation PASSED") != std::string::npos);
}

TEST_CASE("theta sweep") {
  Workspace ws;
  REQUIRE(ws.run("sweep-theta --config " + config("pure_death.json") + " --out " + ws.dir().string()).code == 0);
  const auto rows = csv_rows(slurp(ws.dir() / "theta_sweep.csv"));
  REQUIRE(rows.size() == 10);
  const auto& header = rows[0];
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  double previous = INFINITY;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double h = std::stod(rows[i][col("h")]);
    CHECK(h <= previous);
    previous = h;
    if (rows[i][col("theta")] == "0.5") CHECK(std::stod(rows[i][col("cost_sync_over_N")]) == doctest::Approx(3.0));
  }

  const auto cfg = ws.write("ni.json", R"({"N": 100, "theta": 0.5, "T": 3.0, "seed": 1,
                                           "sweep": {"values": [0.22313016014842982, 0.5]},
                                           "model": {"type": "pure_death", "rate": 1.0}})");
  REQUIRE(ws.run("sweep-theta --config " + cfg.string() + " --out " + ws.dir().string()).code == 0);
  const auto flagged = csv_rows(slurp(ws.dir() / "theta_sweep.csv"));
  REQUIRE(flagged.size() == 3);
  CHECK(flagged[1][col("flagged")] == "1");
  CHECK(flagged[1][col("flag_reason")].find("near_integer") != std::string::npos);
  CHECK(flagged[2][col("flagged")] == "0");
}

TEST_CASE("unwritable output directory is a configuration error") {
  Workspace ws;
  const auto cfg = ws.write("pd.json", kSmallPureDeath);
  const auto o = ws.run("simulate --config " + cfg.string() + " --out /proc/sfv_cannot_write_here");
  CHECK(o.code == 1);
}
