#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <concepts>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "redsample/denoiser.hpp"
#include "redsample/errors.hpp"
#include "redsample/fft.hpp"
#include "redsample/image.hpp"
#include "redsample/operators.hpp"
#include "redsample/rng.hpp"
#include "redsample/solver.hpp"
#include "redsample/summary.hpp"

namespace redsample {

/// Logarithmic decay of the denoiser strength from `start` to `end` over the
/// burn-in, then frozen at `end`.
struct NuSchedule {
  double start = 0.0;
  double end = 0.0;

  double at(std::size_t t, std::size_t n_bi) const {
    if (n_bi <= 1 || t + 1 >= n_bi) return end;
    const double frac = static_cast<double>(t) / static_cast<double>(n_bi - 1);
    return start * std::pow(end / start, frac);
  }
};

struct SamplerConfig {
  double beta = 1.0;
  double rho2 = 1.0;    // coupling variance of the single split
  double rho1_2 = 0.0;  // blur split coupling (triple split only)
  double rho2_2 = 0.0;  // prior split coupling (triple split only)
  double gamma = 0.0;
  std::size_t n_mc = 1000;
  std::size_t n_bi = 0;
  std::size_t thin = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // independent chains use distinct streams of one seed
  bool store_samples = false;
  bool track_z = false;
  std::vector<std::size_t> probe_pixels;
  std::optional<NuSchedule> nu_schedule;

  void validate() const {
    if (!(beta > 0.0)) throw RejectedInput("config: beta must be positive");
    if (!(gamma > 0.0)) throw RejectedInput("config: gamma must be positive");
    if (n_mc == 0) throw RejectedInput("config: n_mc must be positive");
    if (!(n_bi < n_mc)) throw RejectedInput("config: n_bi must be smaller than n_mc");
    if (thin == 0) throw RejectedInput("config: thin must be positive");
    if (nu_schedule && !(nu_schedule->start > 0.0 && nu_schedule->end > 0.0)) {
      throw RejectedInput("config: nu schedule endpoints must be positive");
    }
  }
};

/// Observation y of x through A with Gaussian noise.
struct InverseProblem {
  ImageField y;
  DegradationOp op;
  NoiseModel noise;

  Shape x_shape() const { return input_shape(op, y.shape()); }
  double sigma() const noexcept { return noise.sigma; }
};

/// Largest step with a contraction guarantee: 1 / (beta M_g + 1 / rho2).
inline double max_step_size(double beta, double M_g, double rho2) {
  if (!(beta > 0.0) || !(M_g > 0.0) || !(rho2 > 0.0)) throw RejectedInput("max_step_size: arguments must be positive");
  return 1.0 / (beta * M_g + 1.0 / rho2);
}

/// Two-sided window 2 / (beta m_g + beta M_g + 1 / rho2).
inline double max_step_size_two_sided(double beta, double m_g, double M_g, double rho2) {
  if (!(beta > 0.0) || !(m_g > 0.0) || !(M_g > 0.0) || !(rho2 > 0.0)) {
    throw RejectedInput("max_step_size: arguments must be positive");
  }
  return 2.0 / (beta * m_g + beta * M_g + 1.0 / rho2);
}

/// Step size rule used for real images: 0.99 of the bound with the universal
/// RED constant M_g = 2.
inline double default_step_size(double beta, double rho2) { return 0.99 * max_step_size(beta, 2.0, rho2); }

/// Checks gamma against the bound for the denoiser's exact M_g. Returns false
/// when the bound cannot be evaluated (plugin denoiser or strength schedule).
inline bool check_step_size(double gamma, double beta, double rho2, const Denoiser& d, Shape shape, bool scheduled) {
  if (scheduled) return false;
  const auto bounds = d.spectral_bounds(shape);
  if (!bounds) return false;
  const double limit = max_step_size(beta, bounds->M_g(), rho2);
  if (gamma > limit * (1.0 + 1e-12)) {
    throw RejectedInput("config: gamma " + std::to_string(gamma) + " exceeds the step-size bound " + std::to_string(limit));
  }
  return true;
}

/// One Langevin step on -log p(z | x) = beta g_red(z) + ||x - z||^2 / (2 rho2):
/// z+ = (1 - gamma beta - gamma/rho2) z + gamma beta D(z) + (gamma/rho2) x + sqrt(2 gamma) w.
template <GaussianSource Noise>
ImageField lmc_z_step(const ImageField& z, const ImageField& x, const Denoiser& d, double beta, double rho2, double gamma,
                      Noise& noise) {
  z.check_same(x, "lmc_z_step");
  const ImageField dz = d.apply(z);
  std::vector<double> w(z.size());
  noise.fill_gaussian(w);
  const double keep = 1.0 - gamma * beta - gamma / rho2;
  const double prior = gamma * beta, tie = gamma / rho2, scale = std::sqrt(2.0 * gamma);
  ImageField out(z.shape());
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = keep * z[k] + prior * dz[k] + tie * x[k] + scale * w[k];
  return out;
}

/// Rescaled back-projection A^T y, used as the starting point of every chain.
inline ImageField initial_state(const InverseProblem& p) { return rescale_unit(adjoint_op(p.op, p.y)); }

namespace detail {

inline void require_finite(const ImageField& f, std::size_t t, const char* name) {
  if (!f.all_finite()) throw DivergenceError(t, std::string("non-finite entry in ") + name);
}

/// A^T A x, through the Fourier spectrum for circulant operators.
class GramOperator {
 public:
  GramOperator(const DegradationOp& op, Shape shape) : op_(op) {
    if (const auto* c = std::get_if<ops::Circulant>(&op)) {
      const auto tf = transfer_function(c->kernel, shape.height, shape.width);
      power_.resize(tf.size());
      for (std::size_t k = 0; k < tf.size(); ++k) power_[k] = std::norm(tf[k]);
    }
  }

  ImageField apply(const ImageField& x, Fft2& fft) const {
    if (power_.empty()) return adjoint_op(op_, apply_op(op_, x));
    ImageField out(x.shape());
    std::vector<Complex> spec;
    std::vector<double> plane(x.shape().plane());
    for (std::size_t c = 0; c < x.channels(); ++c) {
      fft.forward(x.plane(c), spec);
      for (std::size_t k = 0; k < spec.size(); ++k) spec[k] *= power_[k];
      fft.inverse_real(spec, plane);
      out.set_plane(c, plane);
    }
    return out;
  }

 private:
  DegradationOp op_;
  std::vector<double> power_;
};

}  // namespace detail

/// Langevin-within-split-Gibbs chain: each step draws z by one LMC step given
/// the current x, then x exactly from N(mu(z), Q^{-1}).
template <GaussianSource Noise>
class LwsgsChain {
 public:
  LwsgsChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise, ImageField x0, ImageField z0)
      : cfg_(cfg),
        d_(std::move(d)),
        noise_(noise),
        solver_(make_conditional_solver(problem.op, problem.x_shape(), problem.sigma(), cfg.rho2)),
        data_rhs_(adjoint_op(problem.op, problem.y)),
        fft_(problem.x_shape().height, problem.x_shape().width),
        x_(std::move(x0)),
        z_(std::move(z0)) {
    data_rhs_ *= 1.0 / (problem.sigma() * problem.sigma());
    x_.check_same(data_rhs_, "LwsgsChain initial x");
    z_.check_same(data_rhs_, "LwsgsChain initial z");
  }

  LwsgsChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise)
      : LwsgsChain(cfg, problem, std::move(d), noise, initial_state(problem), initial_state(problem)) {}

  void step() {
    ++t_;
    z_ = lmc_z_step(z_, x_, d_, cfg_.beta, cfg_.rho2, cfg_.gamma, noise_);
    detail::require_finite(z_, t_, "z");
    ImageField rhs = z_;
    rhs *= 1.0 / cfg_.rho2;
    rhs += data_rhs_;
    x_ = solver_.solve_and_sample(rhs, noise_, fft_);
    detail::require_finite(x_, t_, "x");
  }

  void set_denoiser(Denoiser d) { d_ = std::move(d); }
  const ImageField& x() const noexcept { return x_; }
  const ImageField& z() const noexcept { return z_; }
  std::size_t iteration() const noexcept { return t_; }
  const ConditionalGaussianSolver& solver() const noexcept { return solver_; }

 private:
  SamplerConfig cfg_;
  Denoiser d_;
  Noise& noise_;
  ConditionalGaussianSolver solver_;
  ImageField data_rhs_;
  Fft2 fft_;
  ImageField x_, z_;
  std::size_t t_ = 0;
};

/// Optional box-projection drift of PnP-ULA.
struct BoxProjection {
  double lo = 0.0;
  double hi = 1.0;
  double lambda = 1.0;
};

/// ULA on the RED posterior:
/// x+ = x - gamma grad f(x) + gamma beta (D(x) - x) + sqrt(2 gamma) w,
/// optionally plus (gamma / lambda)(clamp(x, lo, hi) - x) (PnP-ULA).
template <GaussianSource Noise>
class UlaChain {
 public:
  UlaChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise, ImageField x0,
           std::optional<BoxProjection> box = std::nullopt)
      : cfg_(cfg),
        d_(std::move(d)),
        noise_(noise),
        gram_(problem.op, problem.x_shape()),
        data_rhs_(adjoint_op(problem.op, problem.y)),
        fft_(problem.x_shape().height, problem.x_shape().width),
        inv_var_(1.0 / (problem.sigma() * problem.sigma())),
        box_(box),
        x_(std::move(x0)),
        last_projection_(x_.shape()) {
    if (box_ && !(box_->lo < box_->hi)) throw RejectedInput("PnP-ULA: box requires lo < hi");
    if (box_ && !(box_->lambda > 0.0)) throw RejectedInput("PnP-ULA: lambda must be positive");
    x_.check_same(data_rhs_, "UlaChain initial x");
  }

  UlaChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise,
           std::optional<BoxProjection> box = std::nullopt)
      : UlaChain(cfg, problem, std::move(d), noise, initial_state(problem), box) {}

  /// Advances one step; returns whether the projection term was active.
  bool step() {
    ++t_;
    const ImageField dx = d_.apply(x_);
    const ImageField ata = gram_.apply(x_, fft_);
    std::vector<double> w(x_.size());
    noise_.fill_gaussian(w);
    const double g = cfg_.gamma, gb = cfg_.gamma * cfg_.beta, scale = std::sqrt(2.0 * cfg_.gamma);

    bool active = false;
    if (box_) {
      const double coef = g / box_->lambda;
      for (std::size_t k = 0; k < x_.size(); ++k) {
        const double clamped = std::clamp(x_[k], box_->lo, box_->hi);
        last_projection_[k] = coef * (clamped - x_[k]);
        active = active || clamped != x_[k];
      }
    }
    ImageField next(x_.shape());
    for (std::size_t k = 0; k < x_.size(); ++k) {
      const double grad_f = inv_var_ * (ata[k] - data_rhs_[k]);
      next[k] = x_[k] - g * grad_f + gb * (dx[k] - x_[k]);
      if (active) next[k] += last_projection_[k];
      next[k] += scale * w[k];
    }
    x_ = std::move(next);
    detail::require_finite(x_, t_, "x");
    return active;
  }

  void set_denoiser(Denoiser d) { d_ = std::move(d); }
  const ImageField& x() const noexcept { return x_; }
  const ImageField& z() const noexcept { return x_; }
  std::size_t iteration() const noexcept { return t_; }
  /// Projection drift applied by the last step (zero when inactive or disabled).
  const ImageField& last_projection() const noexcept { return last_projection_; }

 private:
  SamplerConfig cfg_;
  Denoiser d_;
  Noise& noise_;
  detail::GramOperator gram_;
  ImageField data_rhs_;
  Fft2 fft_;
  double inv_var_;
  std::optional<BoxProjection> box_;
  ImageField x_;
  ImageField last_projection_;
  std::size_t t_ = 0;
};

/// Triple-split chain for A = S B. One sweep draws, in order,
///   z1 | x, y   with diagonal precision S^T S / sigma^2 + I / rho1^2,
///   x  | z1, z2 with Fourier precision B^T B / rho1^2 + I / rho2^2,
///   z2 | x      by one LMC step on beta g_red(z2) + ||x - z2||^2 / (2 rho2^2).
template <GaussianSource Noise>
class SrSplitChain {
 public:
  SrSplitChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise, ImageField x0, ImageField z2_0)
      : cfg_(cfg), d_(std::move(d)), noise_(noise), fft_(problem.x_shape().height, problem.x_shape().width) {
    const auto* bd = std::get_if<ops::BlurThenDownsample>(&problem.op);
    if (!bd) throw RejectedInput("run_sr_split: operator must be BlurThenDownsample");
    if (!(cfg.rho1_2 > 0.0) || !(cfg.rho2_2 > 0.0)) throw RejectedInput("run_sr_split: rho1_2 and rho2_2 must be positive");
    const Shape shape = problem.x_shape();
    blur_ = bd->kernel;
    const DegradationOp subsample = ops::Downsample{bd->factor};
    const double s2 = problem.sigma() * problem.sigma();
    z1_solver_ = std::make_unique<ConditionalGaussianSolver>(make_conditional_solver(subsample, shape, problem.sigma(), cfg.rho1_2));
    const auto tf = transfer_function(blur_, shape.height, shape.width);
    std::vector<double> q(tf.size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::norm(tf[k]) / cfg.rho1_2 + 1.0 / cfg.rho2_2;
    x_solver_ = std::make_unique<ConditionalGaussianSolver>(ConditionalGaussianSolver::fourier(shape, std::move(q)));
    sty_ = adjoint_op(subsample, problem.y);
    sty_ *= 1.0 / s2;
    x_ = std::move(x0);
    z2_ = std::move(z2_0);
    x_.check_same(sty_, "SrSplitChain initial x");
    z2_.check_same(sty_, "SrSplitChain initial z2");
    z1_ = detail::convolve_periodic(blur_, x_);
  }

  SrSplitChain(const SamplerConfig& cfg, const InverseProblem& problem, Denoiser d, Noise& noise)
      : SrSplitChain(cfg, problem, std::move(d), noise, initial_state(problem), initial_state(problem)) {}

  void step() {
    ++t_;
    ImageField rhs1 = detail::convolve_periodic(blur_, x_);
    rhs1 *= 1.0 / cfg_.rho1_2;
    rhs1 += sty_;
    z1_ = z1_solver_->solve_and_sample(rhs1, noise_, fft_);
    detail::require_finite(z1_, t_, "z1");

    ImageField rhs2 = detail::convolve_periodic(blur_.flipped(), z1_);
    rhs2 *= 1.0 / cfg_.rho1_2;
    ImageField tz = z2_;
    tz *= 1.0 / cfg_.rho2_2;
    rhs2 += tz;
    x_ = x_solver_->solve_and_sample(rhs2, noise_, fft_);
    detail::require_finite(x_, t_, "x");

    z2_ = lmc_z_step(z2_, x_, d_, cfg_.beta, cfg_.rho2_2, cfg_.gamma, noise_);
    detail::require_finite(z2_, t_, "z2");
  }

  void set_denoiser(Denoiser d) { d_ = std::move(d); }
  const ImageField& x() const noexcept { return x_; }
  const ImageField& z() const noexcept { return z2_; }
  const ImageField& z1() const noexcept { return z1_; }
  std::size_t iteration() const noexcept { return t_; }

 private:
  SamplerConfig cfg_;
  Denoiser d_;
  Noise& noise_;
  Fft2 fft_;
  Kernel blur_;
  std::unique_ptr<ConditionalGaussianSolver> z1_solver_, x_solver_;
  ImageField sty_;
  ImageField x_, z1_, z2_;
  std::size_t t_ = 0;
};

namespace detail {

/// Runs n_mc steps and accumulates post-burn-in statistics. The chain type
/// provides step(), x(), z() and set_denoiser().
template <class Chain>
ChainSummary drive(Chain& chain, const SamplerConfig& cfg, const Denoiser& base) {
  const auto start = std::chrono::steady_clock::now();
  ChainSummary s;
  const Shape shape = chain.x().shape();
  for (std::size_t p : cfg.probe_pixels)
    if (p >= shape.size()) throw RejectedInput("config: probe pixel " + std::to_string(p) + " out of range");
  s.probe_pixels = cfg.probe_pixels;
  s.probe_traces.assign(cfg.probe_pixels.size(), {});
  if (cfg.track_z) s.z_moments.emplace();

  for (std::size_t t = 0; t < cfg.n_mc; ++t) {
    if (cfg.nu_schedule) chain.set_denoiser(base.with_strength(cfg.nu_schedule->at(t, cfg.n_bi)));
    bool active = false;
    if constexpr (requires { { chain.step() } -> std::same_as<bool>; }) {
      active = chain.step();
    } else {
      chain.step();
    }
    if (active) ++s.projection_active;
    ++s.iterations;
    if (t + 1 <= cfg.n_bi) continue;
    const std::size_t sample_index = t - cfg.n_bi;
    s.x_moments.push(chain.x());
    if (s.z_moments) s.z_moments->push(chain.z());
    if (cfg.store_samples && sample_index % cfg.thin == 0) s.stored_samples.push_back(chain.x());
    for (std::size_t p = 0; p < cfg.probe_pixels.size(); ++p) s.probe_traces[p].push_back(chain.x()[cfg.probe_pixels[p]]);
  }
  s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

}  // namespace detail

/// Langevin-within-split-Gibbs sampler for Mask, Downsample or Circulant operators.
inline ChainSummary run_lwsgs(const SamplerConfig& cfg, const InverseProblem& problem, const Denoiser& d) {
  cfg.validate();
  const bool verified = check_step_size(cfg.gamma, cfg.beta, cfg.rho2, d, problem.x_shape(), cfg.nu_schedule.has_value());
  RngStream rng(cfg.seed, cfg.stream);
  LwsgsChain<RngStream> chain(cfg, problem, d, rng);
  ChainSummary s = detail::drive(chain, cfg, d);
  s.step_size_verified = verified;
  return s;
}

/// ULA on the RED posterior.
inline ChainSummary run_red_ula(const SamplerConfig& cfg, const InverseProblem& problem, const Denoiser& d) {
  cfg.validate();
  RngStream rng(cfg.seed, cfg.stream);
  UlaChain<RngStream> chain(cfg, problem, d, rng);
  return detail::drive(chain, cfg, d);
}

/// PnP-ULA: the RED-ULA recursion plus the optional box-projection drift.
/// A disabled box reduces exactly to run_red_ula.
inline ChainSummary run_pnp_ula(const SamplerConfig& cfg, const InverseProblem& problem, const Denoiser& d,
                                std::optional<BoxProjection> box) {
  cfg.validate();
  RngStream rng(cfg.seed, cfg.stream);
  UlaChain<RngStream> chain(cfg, problem, d, rng, box);
  return detail::drive(chain, cfg, d);
}

/// Triple-split sampler for super-resolution operators A = S B.
inline ChainSummary run_sr_split(const SamplerConfig& cfg, const InverseProblem& problem, const Denoiser& d) {
  cfg.validate();
  if (!(cfg.rho2_2 > 0.0)) throw RejectedInput("run_sr_split: rho2_2 must be positive");
  const bool verified = check_step_size(cfg.gamma, cfg.beta, cfg.rho2_2, d, problem.x_shape(), cfg.nu_schedule.has_value());
  RngStream rng(cfg.seed, cfg.stream);
  SrSplitChain<RngStream> chain(cfg, problem, d, rng);
  ChainSummary s = detail::drive(chain, cfg, d);
  s.step_size_verified = verified;
  return s;
}

}  // namespace redsample
