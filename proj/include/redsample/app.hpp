#pragma once

// Run orchestration behind the redsample command line: simulation, sampling,
// denoiser verification, oracle sweeps and standalone scoring.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "redsample/config.hpp"
#include "redsample/denoiser.hpp"
#include "redsample/diagnostics.hpp"
#include "redsample/errors.hpp"
#include "redsample/image.hpp"
#include "redsample/io.hpp"
#include "redsample/operators.hpp"
#include "redsample/oracle.hpp"
#include "redsample/png_io.hpp"
#include "redsample/red.hpp"
#include "redsample/rng.hpp"
#include "redsample/samplers.hpp"
#include "redsample/summary.hpp"

namespace redsample::app {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// Stream ids reserved for simulation so they never collide with chain streams.
inline constexpr std::uint64_t kMaskStream = 0xA000'0001ULL;
inline constexpr std::uint64_t kNoiseStream = 0xA000'0002ULL;
inline constexpr std::uint64_t kProbeStream = 0xA000'0003ULL;
inline constexpr std::uint64_t kPatchStream = 0xA000'0004ULL;

inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline ImageField load_image(const std::string& path) { return io::has_png_suffix(path) ? io::load_png(path) : io::load_rfi(path); }

inline ImageField ground_truth(const RunConfig& cfg) {
  if (!cfg.input.empty()) return load_image(cfg.input);
  return synthetic_image(cfg.synthetic_size, cfg.synthetic_size, cfg.synthetic_channels);
}

struct Simulation {
  ImageField truth;
  InverseProblem problem;
  ImageField observation_view;  // y mapped onto the x grid for scoring
};

/// Nearest-neighbour upsampling of a low-resolution field by `factor`.
inline ImageField upsample_nearest(const ImageField& y, std::size_t factor) {
  ImageField out(Shape{y.height() * factor, y.width() * factor, y.channels()});
  for (std::size_t i = 0; i < out.height(); ++i)
    for (std::size_t j = 0; j < out.width(); ++j)
      for (std::size_t c = 0; c < out.channels(); ++c) out.at(i, j, c) = y.at(i / factor, j / factor, c);
  return out;
}

inline DegradationOp make_operator(const RunConfig& cfg, Shape shape) {
  if (cfg.task == "deblur") return ops::Circulant{Kernel::gaussian(cfg.kernel_size, cfg.kernel_std)};
  if (cfg.task == "inpaint") {
    RngStream rng(cfg.seed, kMaskStream);
    return random_mask(shape, cfg.mask_fraction, rng);
  }
  return ops::BlurThenDownsample{Kernel::gaussian(cfg.kernel_size, cfg.kernel_std), cfg.sr_factor};
}

inline Simulation simulate(const RunConfig& cfg) {
  ImageField truth = ground_truth(cfg);
  DegradationOp op = make_operator(cfg, truth.shape());
  const double sigma = cfg.sigma > 0.0 ? cfg.sigma : sigma_from_snr(truth, op, cfg.snr_db);
  NoiseModel noise(sigma);
  RngStream rng(cfg.seed, kNoiseStream);
  ImageField y = degrade(truth, op, noise, rng);
  ImageField view = cfg.task == "deblur" ? y : cfg.task == "inpaint" ? adjoint_op(op, y) : upsample_nearest(y, cfg.sr_factor);
  return Simulation{std::move(truth), InverseProblem{std::move(y), std::move(op), noise}, std::move(view)};
}

inline Denoiser make_denoiser(const RunConfig& cfg, Shape shape) {
  if (cfg.denoiser == "conv") return SymmetricConv::gaussian(cfg.denoiser_size, cfg.denoiser_std, cfg.denoiser_eps0);
  if (cfg.denoiser == "dct") return TransformShrink::lowpass(shape.height, shape.width, cfg.denoiser_std, cfg.denoiser_eps0);
  return PluginDenoiser(cfg.denoiser_exec, cfg.denoiser_std, cfg.denoiser_argv());
}

/// All pixels when the image has at most probe_count entries, otherwise a seeded sorted subset.
inline std::vector<std::size_t> choose_probes(const RunConfig& cfg, Shape shape) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
  if (idx.size() <= cfg.probe_count) return idx;
  RngStream rng(cfg.seed, kProbeStream);
  for (std::size_t k = 0; k < cfg.probe_count; ++k) std::swap(idx[k], idx[k + rng.below(idx.size() - k)]);
  idx.resize(cfg.probe_count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SampleRun {
  ChainSummary summary;
  double gamma = 0.0;
  std::optional<double> gamma_bound;
};

/// Contraction bound on gamma for the configured sampler and a linear denoiser.
inline std::optional<double> gamma_bound(const RunConfig& cfg, const Denoiser& d, Shape shape, double sigma) {
  const auto b = d.spectral_bounds(shape);
  if (!b) return std::nullopt;
  if (cfg.sampler == "lwsgs") return max_step_size(cfg.beta, b->M_g(), cfg.rho2);
  if (cfg.sampler == "sr-split") return max_step_size(cfg.beta, b->M_g(), cfg.rho2_2);
  return 1.0 / (cfg.beta * b->M_g() + 1.0 / (sigma * sigma));
}

inline SampleRun run_sampler(const RunConfig& cfg, const InverseProblem& problem) {
  const Shape shape = problem.x_shape();
  const Denoiser d = make_denoiser(cfg, shape);
  SamplerConfig sc;
  sc.beta = cfg.beta;
  sc.rho2 = cfg.rho2;
  sc.rho1_2 = cfg.rho1_2;
  sc.rho2_2 = cfg.rho2_2;
  sc.gamma = cfg.effective_gamma(1.0 / (problem.sigma() * problem.sigma()));
  sc.n_mc = cfg.n_mc;
  sc.n_bi = cfg.n_bi;
  sc.thin = cfg.thin;
  sc.seed = cfg.seed;
  sc.store_samples = cfg.store_samples;
  sc.track_z = cfg.track_z;
  sc.probe_pixels = choose_probes(cfg, shape);
  if (cfg.nu_start > 0.0) sc.nu_schedule = NuSchedule{cfg.nu_start, cfg.nu_end};
  sc.validate();

  std::optional<BoxProjection> box;
  if (cfg.box_lambda > 0.0) box = BoxProjection{cfg.box_lo, cfg.box_hi, cfg.box_lambda};
  auto one = [&](std::uint64_t stream) {
    SamplerConfig c = sc;
    c.stream = stream;
    if (cfg.sampler == "lwsgs") return run_lwsgs(c, problem, d);
    if (cfg.sampler == "red-ula") return run_red_ula(c, problem, d);
    if (cfg.sampler == "pnp-ula") return run_pnp_ula(c, problem, d, box);
    return run_sr_split(c, problem, d);
  };

  SampleRun out;
  out.gamma = sc.gamma;
  out.gamma_bound = gamma_bound(cfg, d, shape, problem.sigma());
  if (cfg.chains == 1) {
    out.summary = one(0);
    return out;
  }
  // Chain i draws from stream i + 1; results are merged in chain order.
  std::vector<std::optional<ChainSummary>> parts(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < cfg.chains; ++i) {
    pool.emplace_back([&, i] {
      try {
        parts[i] = one(i + 1);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  out.summary = *parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out.summary = merge_summaries(out.summary, *parts[i]);
  return out;
}

inline ImageField stddev(const ImageField& var) {
  ImageField s = var;
  for (double& v : s.values()) v = std::sqrt(v);
  return s;
}

using MetricRows = std::vector<std::pair<std::string, std::string>>;

inline void write_metrics_csv(const std::string& path, const MetricRows& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "metric,value\n";
  for (const auto& [k, v] : rows) f << k << ',' << v << '\n';
}

inline std::string metric_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return num(v);
}

inline ordered_json config_json(const RunConfig& cfg) {
  ordered_json j = ordered_json::object();
  for (const auto& k : config_keys()) j[k.name] = k.get(cfg);
  return j;
}

/// Records the outcome of a subcommand; wall_seconds is the only non-deterministic field.
class Manifest {
 public:
  Manifest(std::string command, const RunConfig& cfg) {
    j_["command"] = std::move(command);
    j_["config"] = config_json(cfg);
    j_["seed"] = cfg.seed;
    j_["status"] = "running";
  }
  ordered_json& json() { return j_; }

  void fail(const std::exception& e) {
    j_["status"] = "error";
    ordered_json err;
    err["type"] = error_type(e);
    err["message"] = e.what();
    if (const auto* d = dynamic_cast<const DivergenceError*>(&e)) err["iteration"] = d->iteration();
    j_["error"] = err;
  }

  void write(const fs::path& dir, double wall_seconds) {
    j_["wall_seconds"] = wall_seconds;
    std::ofstream f(dir / "manifest.json", std::ios::binary);
    f << j_.dump(2) << '\n';
  }

  static std::string error_type(const std::exception& e) {
    if (dynamic_cast<const DivergenceError*>(&e)) return "divergence";
    if (dynamic_cast<const DenoiserFailure*>(&e)) return "denoiser_failure";
    if (dynamic_cast<const BoundWindowError*>(&e)) return "bound_window";
    if (dynamic_cast<const OracleError*>(&e)) return "oracle";
    if (dynamic_cast<const DegenerateSeries*>(&e)) return "degenerate_series";
    if (dynamic_cast<const RejectedInput*>(&e)) return "rejected_input";
    return "internal";
  }

 private:
  ordered_json j_ = ordered_json::object();
};

/// Runs `body` with a manifest in `cfg.output`; any exception becomes an error
/// record and exit status 1. Config validation happens before any artifact.
inline int with_manifest(const std::string& command, const RunConfig& cfg, const std::function<void(Manifest&, const fs::path&)>& body) {
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir = cfg.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    std::cerr << "error: cannot create output directory " << dir << ": " << ec.message() << '\n';
    return 2;
  }
  Manifest m(command, cfg);
  int status = 0;
  try {
    cfg.validate();
    body(m, dir);
    m.json()["status"] = "ok";
  } catch (const std::exception& e) {
    m.fail(e);
    std::cerr << "error: " << e.what() << '\n';
    status = 1;
  }
  m.write(dir, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return status;
}

inline void save_both(const fs::path& dir, const std::string& stem, const ImageField& f, bool rescale = false) {
  io::save_rfi((dir / (stem + ".rfi")).string(), f);
  if (f.channels() == 1 || f.channels() == 3) io::save_png((dir / (stem + ".png")).string(), rescale ? rescale_unit(f) : f);
}

inline int run_simulate(const RunConfig& cfg) {
  return with_manifest("simulate", cfg, [&](Manifest& m, const fs::path& dir) {
    const Simulation sim = simulate(cfg);
    save_both(dir, "truth", sim.truth);
    io::save_rfi((dir / "observation.rfi").string(), sim.problem.y);
    save_both(dir, "observation_view", sim.observation_view);
    m.json()["sigma"] = sim.problem.sigma();
    m.json()["observation_shape"] = sim.problem.y.shape().str();
  });
}

inline void write_traces(const fs::path& path, const ChainSummary& s, std::size_t n_bi) {
  std::ofstream f(path, std::ios::binary);
  f << "iteration";
  for (std::size_t p : s.probe_pixels) f << ",p" << p;
  f << '\n';
  const std::size_t len = s.probe_traces.empty() ? 0 : s.probe_traces.front().size();
  for (std::size_t t = 0; t < len; ++t) {
    f << (n_bi + t + 1);
    for (const auto& tr : s.probe_traces) f << ',' << num(tr[t]);
    f << '\n';
  }
}

inline int run_sample(const RunConfig& cfg) {
  return with_manifest("sample", cfg, [&](Manifest& m, const fs::path& dir) {
    const Simulation sim = simulate(cfg);
    m.json()["sigma"] = sim.problem.sigma();
    const SampleRun run = run_sampler(cfg, sim.problem);
    const ChainSummary& s = run.summary;
    m.json()["gamma"] = run.gamma;
    m.json()["gamma_bound"] = run.gamma_bound ? ordered_json(*run.gamma_bound) : ordered_json(nullptr);
    m.json()["step_size_verified"] = s.step_size_verified;

    const ImageField mean = s.mean_x();
    const ImageField sd = stddev(s.var_x());
    save_both(dir, "mean", mean);
    save_both(dir, "std", sd, true);
    save_both(dir, "truth", sim.truth);
    save_both(dir, "observation_view", sim.observation_view);

    MetricRows rows;
    rows.emplace_back("psnr_mean_vs_truth", metric_value(psnr(sim.truth, mean)));
    rows.emplace_back("psnr_observation_vs_truth", metric_value(psnr(sim.truth, sim.observation_view)));
    if (mean.height() >= 11 && mean.width() >= 11) {
      rows.emplace_back("ssim_mean_vs_truth", metric_value(ssim(sim.truth, mean)));
      rows.emplace_back("ssim_observation_vs_truth", metric_value(ssim(sim.truth, sim.observation_view)));
    }
    rows.emplace_back("psnr_mean_vs_observation", metric_value(psnr(sim.observation_view, mean)));
    if (!s.probe_traces.empty() && s.probe_traces.front().size() >= 2) {
      const std::size_t k = median_variance_probe(s.probe_traces);
      rows.emplace_back("median_probe_pixel", std::to_string(s.probe_pixels[k]));
      try {
        rows.emplace_back("iat_median_probe", metric_value(iat(s.probe_traces[k])));
      } catch (const RejectedInput&) {
        rows.emplace_back("iat_median_probe", "nan");  // fewer than 1000 samples
      } catch (const DegenerateSeries&) {
        rows.emplace_back("iat_median_probe", "nan");
      }
    }
    rows.emplace_back("mean_posterior_std", metric_value(std::accumulate(sd.values().begin(), sd.values().end(), 0.0) /
                                                         static_cast<double>(sd.size())));
    rows.emplace_back("samples", std::to_string(s.sample_count()));
    rows.emplace_back("projection_fraction", metric_value(s.projection_fraction()));
    rows.emplace_back("gamma", metric_value(run.gamma));
    write_metrics_csv((dir / "metrics.csv").string(), rows);
    write_traces(dir / "traces.csv", s, cfg.n_bi);

    if (cfg.store_samples) {
      fs::create_directories(dir / "samples");
      for (std::size_t k = 0; k < s.stored_samples.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%06zu.rfi", k);
        io::save_rfi((dir / "samples" / name).string(), s.stored_samples[k]);
      }
    }
    m.json()["samples"] = s.sample_count();
  });
}

inline int run_verify_denoiser(const RunConfig& cfg) {
  return with_manifest("verify-denoiser", cfg, [&](Manifest& m, const fs::path& dir) {
    const ImageField img = ground_truth(cfg);
    RngStream rng(cfg.seed, kPatchStream);
    const auto patches = extract_patches(img, cfg.patch_size, cfg.patch_count, rng);
    const Denoiser d = make_denoiser(cfg, patches.front().shape());
    const RedConditionReport r = verify_red_conditions(d, patches);
    MetricRows rows = {{"nmse_lh1", metric_value(r.nmse_lh1)},   {"nmse_lh2", metric_value(r.nmse_lh2)},
                       {"nmse_js", metric_value(r.nmse_js)},     {"msr", metric_value(r.msr)},
                       {"patch_count", std::to_string(r.patch_count)}, {"skipped_patches", std::to_string(r.skipped_patches)},
                       {"probe_epsilon", metric_value(r.probe_epsilon)}};
    write_metrics_csv((dir / "red_conditions.csv").string(), rows);
    m.json()["patch_count"] = r.patch_count;
  });
}

/// Dense small-problem sweeps: analytic bias W2^2(pi_rho, pi_{rho,gamma}) against the
/// bias bound over dyadic step sizes, then W2^2(pi, pi_rho) over coupling strengths.
inline int run_oracle_check(const RunConfig& cfg) {
  return with_manifest("oracle-check", cfg, [&](Manifest& m, const fs::path& dir) {
    RunConfig small = cfg;
    small.input.clear();
    small.synthetic_size = cfg.oracle_size;
    small.synthetic_channels = 1;
    if (cfg.task == "superres") small.task = "deblur";
    small.kernel_size = std::min<std::size_t>(cfg.kernel_size, cfg.oracle_size % 2 ? cfg.oracle_size : cfg.oracle_size - 1);
    small.denoiser_size = std::min<std::size_t>(cfg.denoiser_size, small.kernel_size);
    if (small.denoiser == "plugin") throw RejectedInput("oracle-check needs a linear denoiser (conv or dct)");
    ImageField truth = synthetic_image(small.oracle_size, small.oracle_size, 1);
    DegradationOp op = make_operator(small, truth.shape());
    const double sigma = small.sigma > 0.0 ? small.sigma : sigma_from_snr(truth, op, small.snr_db);
    RngStream rng(small.seed, kNoiseStream);
    const ImageField y = degrade(truth, op, NoiseModel(sigma), rng);
    const Denoiser d = make_denoiser(small, truth.shape());
    const auto a = oracle::dense_operator(op, truth.shape());
    const auto w = oracle::dense_denoiser(d, truth.shape());
    const auto yv = oracle::to_vector(y);
    const auto bounds = *d.spectral_bounds(truth.shape());
    const auto solver = make_conditional_solver(op, truth.shape(), sigma, cfg.rho2);

    std::ofstream f(dir / "oracle.csv", std::ios::binary);
    f << "sweep,rho2,gamma,w2_sq,bias_bound,contraction_rate\n";
    const oracle::AxdaLaw axda = oracle::axda_marginal(w, cfg.beta, cfg.rho2, a, sigma, yv);
    const double gmax = max_step_size(cfg.beta, bounds.M_g(), cfg.rho2);
    for (std::size_t k = 0; k < cfg.oracle_steps; ++k) {
      const double g = gmax / std::pow(2.0, static_cast<double>(k));
      const auto stat = oracle::lwsgs_stationary(w, cfg.beta, cfg.rho2, g, a, sigma, yv);
      const double w2 = oracle::w2_gaussians(axda.joint, stat);
      oracle::BoundInputs in{truth.size(), cfg.beta, cfg.rho2, g, bounds.m_g(), bounds.M_g(), solver.inverse_norm()};
      const auto b = oracle::evaluate_bounds(in, 1, 0.0);
      f << "gamma," << num(cfg.rho2) << ',' << num(g) << ',' << num(w2 * w2) << ',' << num(b.bias_rhs) << ',' << num(b.rate) << '\n';
    }
    const oracle::GaussianDist post = oracle::linear_posterior(w, cfg.beta, a, sigma, yv);
    for (double r2 : {1.0, 1e-1, 1e-2, 1e-3}) {
      const oracle::AxdaLaw law = oracle::axda_marginal(w, cfg.beta, r2, a, sigma, yv);
      const double w2 = oracle::w2_gaussians(post, law.x);
      f << "rho2," << num(r2) << ",," << num(w2 * w2) << ",,\n";
    }
    m.json()["sigma"] = sigma;
    m.json()["gamma_max"] = gmax;
  });
}

struct MetricsArgs {
  std::string reference;
  std::string test;
  std::vector<std::string> traces;
  std::string csv;  // empty: stdout
  double peak = 1.0;
};

/// Reads a trace CSV written by `sample` (header row, first column iteration).
inline std::vector<std::pair<std::string, std::vector<double>>> read_trace_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RejectedInput("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw RejectedInput(path + ": empty trace file");
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  {
    std::istringstream hs(line);
    std::string name;
    std::getline(hs, name, ',');
    while (std::getline(hs, name, ',')) cols.emplace_back(name, std::vector<double>{});
  }
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, ',');
    for (auto& c : cols) {
      if (!std::getline(ls, cell, ',')) throw RejectedInput(path + ": short row");
      c.second.push_back(config_detail::parse_double(c.first, cell));
    }
  }
  return cols;
}

inline int run_metrics(const MetricsArgs& args) {
  try {
    const ImageField ref = load_image(args.reference);
    const ImageField test = load_image(args.test);
    MetricRows rows;
    rows.emplace_back("psnr", metric_value(psnr(ref, test, args.peak)));
    if (ref.height() >= 11 && ref.width() >= 11) rows.emplace_back("ssim", metric_value(ssim(ref, test)));
    for (const auto& path : args.traces) {
      const auto cols = read_trace_csv(path);
      if (cols.empty()) continue;
      std::vector<std::vector<double>> series;
      for (const auto& c : cols) series.push_back(c.second);
      const std::size_t k = median_variance_probe(series);
      rows.emplace_back("median_probe", cols[k].first);
      rows.emplace_back("iat_median_probe", metric_value(iat(series[k])));
    }
    if (args.csv.empty()) {
      std::cout << "metric,value\n";
      for (const auto& [k, v] : rows) std::cout << k << ',' << v << '\n';
    } else {
      write_metrics_csv(args.csv, rows);
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace redsample::app
