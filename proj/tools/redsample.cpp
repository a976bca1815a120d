#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "redsample/app.hpp"

using namespace redsample;

namespace {

struct Overrides {
  std::string config_path;
  std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "key = value configuration file");
  for (const auto& k : config_keys()) {
    cmd->add_option("--" + k.name, o.values[k.name], k.help);
  }
}

// Precedence: defaults < config file < RED_LWSGS_SEED < flags.
RunConfig resolve(CLI::App* cmd, const Overrides& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  apply_seed_env(c);
  if (cmd->count("--preset")) set_config_value(c, "preset", o.values.at("preset"));
  for (const auto& k : config_keys()) {
    if (k.name == "preset" || cmd->count("--" + k.name) == 0) continue;
    k.set(c, o.values.at(k.name));
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Posterior sampling with denoiser-based priors"};
  app.require_subcommand(1);

  Overrides sim_o, sample_o, verify_o, oracle_o;
  auto* sim = app.add_subcommand("simulate", "degrade an image and write the observation");
  add_config_flags(sim, sim_o);
  auto* sample = app.add_subcommand("sample", "simulate, run a sampler and write estimates, metrics, traces");
  add_config_flags(sample, sample_o);
  auto* verify = app.add_subcommand("verify-denoiser", "measure RED-condition metrics on image patches");
  add_config_flags(verify, verify_o);
  auto* oracle_cmd = app.add_subcommand("oracle-check", "exact bias and coupling sweeps on a small linear problem");
  add_config_flags(oracle_cmd, oracle_o);

  app::MetricsArgs margs;
  auto* metrics = app.add_subcommand("metrics", "score a test image against a reference");
  metrics->add_option("--reference", margs.reference, "reference image (.png or RFI1)")->required();
  metrics->add_option("--test", margs.test, "test image (.png or RFI1)")->required();
  metrics->add_option("--trace", margs.traces, "trace CSV written by sample");
  metrics->add_option("--csv", margs.csv, "output CSV (default stdout)");
  metrics->add_option("--peak", margs.peak, "PSNR peak value");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) return app::run_simulate(resolve(sim, sim_o));
    if (*sample) return app::run_sample(resolve(sample, sample_o));
    if (*verify) return app::run_verify_denoiser(resolve(verify, verify_o));
    if (*oracle_cmd) return app::run_oracle_check(resolve(oracle_cmd, oracle_o));
    if (*metrics) return app::run_metrics(margs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
