#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "classo/pipeline.hpp"

namespace {

struct Flags {
  std::string config_file;
  std::map<std::string, std::string> set;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config_file, "key = value settings file (flags override it)");
  cmd->add_option_function<std::string>("--output-dir", [&f](const std::string& v) { f.set["output_dir"] = v; },
                                        "directory for reports");
  cmd->add_option_function<std::string>("--seed", [&f](const std::string& v) { f.set["seed"] = v; }, "random seed");
  cmd->add_option_function<std::string>("--threads", [&f](const std::string& v) { f.set["threads"] = v; },
                                        "worker threads");
  cmd->add_option_function<std::string>("--format", [&f](const std::string& v) { f.set["format"] = v; },
                                        "report format: csv or json");
  cmd->add_option_function<std::vector<std::string>>(
      "--set",
      [&f](const std::vector<std::string>& kvs) {
        for (const auto& kv : kvs) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got " + kv);
          f.set[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
      },
      "extra key=value setting (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent group structure in binary-choice panels via the classifier-lasso"};
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "write a simulated panel and its true groups");
  add_common(sim, f);
  sim->add_option_function<std::string>("--scenario", [&f](const std::string& v) { f.set["scenario"] = v; },
                                        "default or employment");

  auto* fit = app.add_subcommand("select-fit", "filter, select (K, lambda), refit, jackknife and report");
  add_common(fit, f);
  fit->add_option_function<std::string>("--input", [&f](const std::string& v) { f.set["input"] = v; }, "input CSV");
  fit->add_option_function<std::string>("--k-max", [&f](const std::string& v) { f.set["k_max"] = v; },
                                        "largest number of groups");
  fit->add_option_function<std::string>("--c-grid", [&f](const std::string& v) { f.set["c_grid"] = v; },
                                        "comma-separated tuning constants");
  fit->add_option_function<std::string>("--window-start", [&f](const std::string& v) { f.set["window_start"] = v; },
                                        "first likelihood period (earlier periods condition only)");
  fit->add_option_function<std::string>("--design", [&f](const std::string& v) {
    f.set["design"] = v;
    f.set["input_kind"] = "histories";
  }, "build the design from raw histories: benchmark, mixed or full");

  auto* cmp = app.add_subcommand("compare", "compare phase predictions of two fitted runs");
  add_common(cmp, f);
  cmp->add_option_function<std::string>("--control", [&f](const std::string& v) { f.set["control"] = v; },
                                        "control run directory")->required();
  cmp->add_option_function<std::string>("--treatment", [&f](const std::string& v) { f.set["treatment"] = v; },
                                        "treatment run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  classo::RunConfig cfg;
  cfg.command = app.get_subcommands().front()->get_name();
  try {
    if (!f.config_file.empty()) {
      std::ifstream in(f.config_file);
      if (!in) classo::fail(classo::ErrorKind::InvalidArgument, "cannot read config file " + f.config_file);
      classo::apply_settings(cfg, classo::read_settings(in));
    }
    classo::apply_settings(cfg, f.set);
  } catch (const classo::Error& e) {
    std::cerr << "classo: " << e.what() << '\n';
    return classo::exit_code(e);
  }
  return classo::run_command(cfg);
}
