// sfv: command-line front end over the libsfv C interface.
//
//   sfv simulate    --config run.json [--out DIR] [--threads N]
//   sfv oracle      --config run.json [--out DIR]
//   sfv validate    --config run.json [--out DIR] [--threads N]
//   sfv sweep-theta --config run.json [--out DIR]
//
// Exit codes: 0 ok, 1 invalid configuration, 2 engine error, 3 model has no
// exact oracle, 4 validation criterion failed, 5 oracle numerical failure,
// 6 other errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "sfv/sfv.h"

namespace {

namespace fs = std::filesystem;

constexpr int kExitInvalidConfig = 1;
constexpr int kExitValidationFailed = 4;
constexpr int kExitOther = 6;

struct Options {
  std::string config;
  std::string out = ".";
  unsigned threads = 0;  // 0: keep the configuration's value
};

class CliError : public std::runtime_error {
 public:
  CliError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

int exit_code(sfv_status s) {
  switch (s) {
    case SFV_OK: return 0;
    case SFV_ERR_INVALID_CONFIG: return kExitInvalidConfig;
    case SFV_ERR_ENGINE: return 2;
    case SFV_ERR_NO_ORACLE: return 3;
    case SFV_ERR_ORACLE: return 5;
    case SFV_ERR_INVALID_ARGUMENT: return kExitInvalidConfig;
    default: return kExitOther;
  }
}

void check(sfv_status s, const char* what) {
  if (s != SFV_OK) throw CliError(exit_code(s), std::string(what) + ": " + sfv_last_error());
}

// Owning wrappers over the C handles.
struct ExperimentDeleter { void operator()(sfv_experiment* p) const { sfv_experiment_free(p); } };
struct RecordsDeleter { void operator()(sfv_records* p) const { sfv_records_free(p); } };
struct OracleDeleter { void operator()(sfv_oracle* p) const { sfv_oracle_free(p); } };
struct ValidationDeleter { void operator()(sfv_validation* p) const { sfv_validation_free(p); } };
struct StringDeleter { void operator()(char* p) const { sfv_string_free(p); } };

using Experiment = std::unique_ptr<sfv_experiment, ExperimentDeleter>;
using Records = std::unique_ptr<sfv_records, RecordsDeleter>;
using Oracle = std::unique_ptr<sfv_oracle, OracleDeleter>;
using Validation = std::unique_ptr<sfv_validation, ValidationDeleter>;
using CString = std::unique_ptr<char, StringDeleter>;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(kExitInvalidConfig, "cannot read config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CliError(kExitInvalidConfig, "output directory " + dir + " is not writable");
  return fs::path(dir);
}

void write_file(const fs::path& path, const char* text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw CliError(kExitInvalidConfig, "cannot write " + path.string());
}

Experiment load(const Options& opt) {
  const std::string text = read_file(opt.config);
  sfv_experiment* raw = nullptr;
  check(sfv_experiment_create(text.c_str(), &raw), "invalid configuration");
  Experiment exp(raw);
  if (opt.threads > 0) check(sfv_experiment_set_threads(exp.get(), opt.threads), "threads");
  return exp;
}

Records simulate(const sfv_experiment* exp) {
  sfv_records* raw = nullptr;
  check(sfv_simulate(exp, &raw), "simulation failed");
  return Records(raw);
}

Oracle oracle(const sfv_experiment* exp) {
  sfv_oracle* raw = nullptr;
  check(sfv_oracle_compute(exp, &raw), "oracle unavailable");
  return Oracle(raw);
}

void write_records(const fs::path& dir, const sfv_records* records) {
  char* json = nullptr;
  check(sfv_records_to_json(records, &json), "serializing records");
  CString json_owned(json);
  write_file(dir / "records.json", json);
  char* csv = nullptr;
  check(sfv_records_to_csv(records, &csv), "serializing records");
  CString csv_owned(csv);
  write_file(dir / "records.csv", csv);
}

int cmd_simulate(const Options& opt) {
  auto exp = load(opt);
  const fs::path dir = prepare_out_dir(opt.out);
  auto records = simulate(exp.get());
  write_records(dir, records.get());

  const std::size_t m = sfv_records_count(records.get());
  double sum = 0.0;
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t i = 0; i < m; ++i) {
    double p = 0.0;
    std::size_t b = 0;
    check(sfv_records_p_hat(records.get(), i, &p), "records");
    check(sfv_records_resample_count(records.get(), i, &b), "records");
    sum += p;
    ++counts[b];
  }
  std::printf("replicas=%zu mean_p_hat=%.10g resample_counts=", m, sum / static_cast<double>(m));
  bool first = true;
  for (const auto& [b, c] : counts) {
    std::printf("%s%zu:%zu", first ? "" : ",", b, c);
    first = false;
  }
  std::printf("\n");
  return 0;
}

int cmd_oracle(const Options& opt) {
  auto exp = load(opt);
  const fs::path dir = prepare_out_dir(opt.out);
  auto report = oracle(exp.get());
  char* json = nullptr;
  check(sfv_oracle_to_json(report.get(), &json), "serializing oracle report");
  CString json_owned(json);
  write_file(dir / "oracle_report.json", json);
  char* csv = nullptr;
  check(sfv_oracle_survival_csv(exp.get(), 0, &csv), "survival curve");
  CString csv_owned(csv);
  write_file(dir / "survival_curve.csv", csv);

  double p_T = 0.0;
  std::size_t j_max = 0;
  check(sfv_oracle_p_T(report.get(), &p_T), "oracle");
  check(sfv_oracle_j_max(report.get(), &j_max), "oracle");
  std::printf("p_T=%.10g j_max=%zu\n", p_T, j_max);
  return 0;
}

int cmd_validate(const Options& opt) {
  auto exp = load(opt);
  const fs::path dir = prepare_out_dir(opt.out);
  auto report = oracle(exp.get());
  auto records = simulate(exp.get());
  sfv_validation* raw = nullptr;
  check(sfv_validate(exp.get(), records.get(), report.get(), &raw), "validation");
  Validation validation(raw);

  for (std::size_t i = 0; i < sfv_validation_warning_count(validation.get()); ++i) {
    std::fprintf(stderr, "warning: %s\n", sfv_validation_warning(validation.get(), i));
  }
  char* json = nullptr;
  check(sfv_validation_to_json(validation.get(), &json), "serializing summary");
  CString json_owned(json);
  write_file(dir / "validation_summary.json", json);
  write_records(dir, records.get());

  const bool passed = sfv_validation_passed(validation.get()) == 1;
  std::printf("validation %s (see %s)\n", passed ? "PASSED" : "FAILED", (dir / "validation_summary.json").c_str());
  return passed ? 0 : kExitValidationFailed;
}

int cmd_sweep(const Options& opt) {
  auto exp = load(opt);
  const fs::path dir = prepare_out_dir(opt.out);
  char* csv = nullptr;
  check(sfv_sweep_theta(exp.get(), &csv), "theta sweep");
  CString csv_owned(csv);
  write_file(dir / "theta_sweep.csv", csv);
  std::printf("wrote %s\n", (dir / "theta_sweep.csv").c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synchronized Fleming-Viot particle systems: simulation and exact-oracle validation"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub, bool threads) {
    sub->add_option("--config", opt.config, "Experiment configuration (JSON)")->required();
    sub->add_option("--out", opt.out, "Output directory")->capture_default_str();
    if (threads) sub->add_option("--threads", opt.threads, "Worker threads (replica-level)")->check(CLI::PositiveNumber);
  };
  auto* simulate_cmd = app.add_subcommand("simulate", "Run replicas and write records.json / records.csv");
  auto* oracle_cmd = app.add_subcommand("oracle", "Write the exact oracle report and survival curve");
  auto* validate_cmd = app.add_subcommand("validate", "Run replicas and check them against the oracle");
  auto* sweep_cmd = app.add_subcommand("sweep-theta", "Tabulate h(theta), bounds, variance and cost over theta");
  add_common(simulate_cmd, true);
  add_common(oracle_cmd, false);
  add_common(validate_cmd, true);
  add_common(sweep_cmd, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // --help exits 0; usage errors share the configuration exit code.
    return app.exit(e) == 0 ? 0 : kExitInvalidConfig;
  }

  try {
    if (simulate_cmd->parsed()) return cmd_simulate(opt);
    if (oracle_cmd->parsed()) return cmd_oracle(opt);
    if (validate_cmd->parsed()) return cmd_validate(opt);
    if (sweep_cmd->parsed()) return cmd_sweep(opt);
  } catch (const CliError& e) {
    std::fprintf(stderr, "sfv: %s\n", e.what());
    return e.code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "sfv: %s\n", e.what());
    return kExitOther;
  }
  return kExitOther;
}
