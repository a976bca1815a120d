#pragma once

// Run configuration: flat "key = value" lines, '#' starts a comment.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "redsample/errors.hpp"

namespace redsample {

struct RunConfig {
  // task and data
  std::string task = "deblur";  // deblur | inpaint | superres
  std::string input;            // PNG or RFI1; empty selects the synthetic scene
  std::size_t synthetic_size = 64;
  std::size_t synthetic_channels = 1;
  std::size_t kernel_size = 25;
  double kernel_std = 1.6;
  double mask_fraction = 0.8;
  std::size_t sr_factor = 4;
  double snr_db = 30.0;
  double sigma = 0.0;  // > 0 overrides the SNR rule

  // sampler
  std::string sampler = "lwsgs";  // lwsgs | red-ula | pnp-ula | sr-split
  double beta = 0.08;
  double rho2 = 6e-8;
  double rho1_2 = 0.2;
  double rho2_2 = 1.0;
  double gamma = 0.0;  // 0: gamma_factor / (2 beta + 1 / rho2)
  double gamma_factor = 0.99;
  std::size_t n_mc = 5000;
  std::size_t n_bi = 2000;
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  bool store_samples = false;
  bool track_z = false;
  std::size_t chains = 1;
  double box_lo = -1.0;
  double box_hi = 2.0;
  double box_lambda = 0.0;  // 0 disables the projection drift

  // denoiser
  std::string denoiser = "conv";  // conv | dct | plugin
  std::size_t denoiser_size = 5;
  double denoiser_std = 1.0;  // conv: kernel std; dct: low-pass strength
  double denoiser_eps0 = 0.05;
  std::string denoiser_exec;
  std::string denoiser_args;  // whitespace separated
  double nu_start = 0.0;      // both > 0 enable the strength schedule
  double nu_end = 0.0;

  // diagnostics and outputs
  std::size_t probe_count = 256;  // images up to this many pixels trace every pixel
  std::size_t patch_size = 16;
  std::size_t patch_count = 100;
  std::size_t oracle_size = 8;
  std::size_t oracle_steps = 6;
  std::string output = "run";
  std::string preset;

  std::vector<std::string> denoiser_argv() const {
    std::istringstream in(denoiser_args);
    std::vector<std::string> out;
    for (std::string a; in >> a;) out.push_back(a);
    return out;
  }

  /// gamma as configured, or gamma_factor / (2 beta + L): L is 1/rho2 (1/rho2_2 for the
  /// triple split) for split samplers, and the data-term Lipschitz constant for ULA.
  double effective_gamma(double data_lipschitz) const {
    if (gamma > 0.0) return gamma;
    if (sampler == "red-ula" || sampler == "pnp-ula") return gamma_factor / (2.0 * beta + data_lipschitz);
    const double coupling = sampler == "sr-split" ? rho2_2 : rho2;
    return gamma_factor / (2.0 * beta + 1.0 / coupling);
  }

  void validate() const;
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || !std::isfinite(d)) throw RejectedInput("config: " + key + " expects a number, got '" + v + "'");
  return d;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw RejectedInput("config: " + key + " expects a nonnegative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw RejectedInput("config: " + key + " expects true/false, got '" + v + "'");
}

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

void apply_preset(RunConfig& c, const std::string& name);

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
#define RS_STR(field, help) \
  ConfigKey{#field, help, [](RunConfig& c, const std::string& v) { c.field = v; }, [](const RunConfig& c) { return c.field; }}
#define RS_DBL(field, help)                                                                        \
  ConfigKey{#field, help, [](RunConfig& c, const std::string& v) { c.field = parse_double(#field, v); }, \
            [](const RunConfig& c) { return fmt(c.field); }}
#define RS_INT(field, help)                                                                                          \
  ConfigKey{#field, help, [](RunConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(parse_u64(#field, v)); }, \
            [](const RunConfig& c) { return std::to_string(c.field); }}
#define RS_BOOL(field, help)                                                                     \
  ConfigKey{#field, help, [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }, \
            [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}
  static const std::vector<ConfigKey> keys = {
      ConfigKey{"preset", "named hyperparameter preset (applied where it appears)",
                [](RunConfig& c, const std::string& v) { apply_preset(c, v); }, [](const RunConfig& c) { return c.preset; }},
      RS_STR(task, "deblur | inpaint | superres"),
      RS_STR(input, "input image (.png or RFI1); empty uses a synthetic scene"),
      RS_INT(synthetic_size, "side of the synthetic scene"),
      RS_INT(synthetic_channels, "channels of the synthetic scene (1 or 3)"),
      RS_INT(kernel_size, "blur kernel side (odd)"),
      RS_DBL(kernel_std, "blur kernel standard deviation"),
      RS_DBL(mask_fraction, "inpainting: fraction of masked pixels per channel"),
      RS_INT(sr_factor, "super-resolution subsampling factor"),
      RS_DBL(snr_db, "observation SNR in dB, power of Ax over noise power"),
      RS_DBL(sigma, "noise std; > 0 overrides snr_db"),
      RS_STR(sampler, "lwsgs | red-ula | pnp-ula | sr-split"),
      RS_DBL(beta, "regularization weight"),
      RS_DBL(rho2, "coupling variance"),
      RS_DBL(rho1_2, "triple split: blur coupling variance"),
      RS_DBL(rho2_2, "triple split: prior coupling variance"),
      RS_DBL(gamma, "step size; 0 selects gamma_factor / (2 beta + 1 / rho2)"),
      RS_DBL(gamma_factor, "numerator of the default step-size rule"),
      RS_INT(n_mc, "total iterations"),
      RS_INT(n_bi, "burn-in iterations"),
      RS_INT(thin, "stride of stored samples"),
      RS_INT(seed, "master seed"),
      RS_BOOL(store_samples, "write thinned samples"),
      RS_BOOL(track_z, "also accumulate auxiliary-variable moments"),
      RS_INT(chains, "independent chains, run concurrently and merged"),
      RS_DBL(box_lo, "pnp-ula: box lower bound"),
      RS_DBL(box_hi, "pnp-ula: box upper bound"),
      RS_DBL(box_lambda, "pnp-ula: projection weight; 0 disables"),
      RS_STR(denoiser, "conv | dct | plugin"),
      RS_INT(denoiser_size, "conv: kernel side"),
      RS_DBL(denoiser_std, "conv: kernel std; dct: low-pass strength"),
      RS_DBL(denoiser_eps0, "shrink factor eps0 in (0, 1)"),
      RS_STR(denoiser_exec, "plugin executable"),
      RS_STR(denoiser_args, "plugin arguments, whitespace separated"),
      RS_DBL(nu_start, "strength schedule start (0 disables)"),
      RS_DBL(nu_end, "strength schedule end (0 disables)"),
      RS_INT(probe_count, "number of traced pixels on large images"),
      RS_INT(patch_size, "verify-denoiser: patch side"),
      RS_INT(patch_count, "verify-denoiser: number of patches"),
      RS_INT(oracle_size, "oracle-check: image side"),
      RS_INT(oracle_steps, "oracle-check: dyadic step sizes swept"),
      RS_STR(output, "output directory"),
  };
#undef RS_STR
#undef RS_DBL
#undef RS_INT
#undef RS_BOOL
  return keys;
}

inline const ConfigKey* find_config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw RejectedInput("config: unknown key '" + key + "'");
  k->set(c, value);
}

/// Hyperparameters of the FFHQ / ImageNet experiments (tuned for a neural denoiser).
inline void apply_preset(RunConfig& c, const std::string& name) {
  struct Row {
    const char* name;
    const char* task;
    double beta;
  };
  static const Row rows[] = {
      {"ffhq-deblur", "deblur", 8.0e-2},       {"ffhq-inpaint", "inpaint", 1.25e-1},       {"ffhq-superres", "superres", 1.0},
      {"imagenet-deblur", "deblur", 4.89e-3}, {"imagenet-inpaint", "inpaint", 1.167e-1}, {"imagenet-superres", "superres", 4.966e-2},
  };
  for (const Row& r : rows) {
    if (name != r.name) continue;
    c.preset = name;
    c.task = r.task;
    c.beta = r.beta;
    c.gamma = 0.0;
    if (c.task == "deblur") {
      c.sampler = "lwsgs";
      c.n_mc = 5000;
      c.n_bi = 2000;
      c.rho2 = 6e-8;
      c.gamma_factor = 0.99;
    } else if (c.task == "inpaint") {
      c.sampler = "lwsgs";
      c.n_mc = 10000;
      c.n_bi = 4500;
      c.rho2 = 1.5;
      c.gamma_factor = 0.99;
    } else {
      c.sampler = "sr-split";
      c.n_mc = 12500;
      c.n_bi = 3500;
      c.rho1_2 = 0.2;
      c.rho2_2 = 1.0;
      c.gamma_factor = 0.8;
    }
    return;
  }
  throw RejectedInput("config: unknown preset '" + name + "'");
}

/// Parses key = value lines into `c`, in order.
inline void parse_config(std::istream& in, RunConfig& c, const std::string& origin = "config") {
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw RejectedInput(origin + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    const std::string value = config_detail::trim(line.substr(eq + 1));
    try {
      set_config_value(c, key, value);
    } catch (const RejectedInput& e) {
      throw RejectedInput(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RejectedInput("cannot open config " + path);
  RunConfig c;
  parse_config(in, c, path);
  return c;
}

/// Seed from RED_LWSGS_SEED when set; an explicit --seed flag is applied after this.
inline void apply_seed_env(RunConfig& c) {
  const char* env = std::getenv("RED_LWSGS_SEED");
  if (env && *env) c.seed = config_detail::parse_u64("RED_LWSGS_SEED", env);
}

inline void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw RejectedInput("config: " + m); };
  if (task != "deblur" && task != "inpaint" && task != "superres") fail("task must be deblur, inpaint or superres");
  if (sampler != "lwsgs" && sampler != "red-ula" && sampler != "pnp-ula" && sampler != "sr-split") {
    fail("sampler must be lwsgs, red-ula, pnp-ula or sr-split");
  }
  if (task == "superres" && sampler != "sr-split") fail("superres requires sampler = sr-split");
  if (sampler == "sr-split" && task != "superres") fail("sr-split only handles the superres task");
  if (denoiser != "conv" && denoiser != "dct" && denoiser != "plugin") fail("denoiser must be conv, dct or plugin");
  if (denoiser == "plugin" && denoiser_exec.empty()) fail("denoiser = plugin needs denoiser_exec");
  if (!(denoiser_eps0 > 0.0 && denoiser_eps0 < 1.0)) fail("denoiser_eps0 must lie in (0, 1)");
  if (denoiser_size % 2 == 0) fail("denoiser_size must be odd");
  if (!(denoiser_std > 0.0)) fail("denoiser_std must be positive");
  if (kernel_size % 2 == 0) fail("kernel_size must be odd");
  if (!(kernel_std > 0.0)) fail("kernel_std must be positive");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0)) fail("mask_fraction must lie in [0, 1)");
  if (sr_factor == 0) fail("sr_factor must be positive");
  if (!(sigma >= 0.0)) fail("sigma must be nonnegative");
  if (!(beta > 0.0) || !(rho2 > 0.0) || !(rho1_2 > 0.0) || !(rho2_2 > 0.0)) fail("beta and couplings must be positive");
  if (!(gamma >= 0.0) || !(gamma_factor > 0.0)) fail("gamma must be nonnegative and gamma_factor positive");
  if (n_mc == 0 || !(n_bi < n_mc)) fail("need 0 <= n_bi < n_mc");
  if (thin == 0 || chains == 0) fail("thin and chains must be positive");
  if (!(box_lo < box_hi) || !(box_lambda >= 0.0)) fail("need box_lo < box_hi and box_lambda >= 0");
  if ((nu_start > 0.0) != (nu_end > 0.0)) fail("nu_start and nu_end must both be set");
  if (synthetic_size < 11 || (synthetic_channels != 1 && synthetic_channels != 3)) {
    fail("synthetic_size must be >= 11 and synthetic_channels 1 or 3");
  }
  if (patch_size == 0 || patch_count == 0) fail("patch_size and patch_count must be positive");
  if (oracle_size < 2 || oracle_size > 16 || oracle_steps == 0) fail("oracle_size must lie in [2, 16] and oracle_steps be positive");
  if (output.empty()) fail("output must be set");
}

}  // namespace redsample
