#pragma once

// Exact reference laws for linear denoisers D(x) = W x, where the RED prior,
// the augmented model and the sampler's stationary law are all Gaussian.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "redsample/denoiser.hpp"
#include "redsample/errors.hpp"
#include "redsample/image.hpp"
#include "redsample/operators.hpp"
#include "redsample/red.hpp"

namespace redsample::oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline void check_dense_dim(Eigen::Index n, const char* who) {
  if (n > static_cast<Eigen::Index>(kMaxDenseDim)) {
    throw RejectedInput(std::string(who) + ": dimension " + std::to_string(n) + " exceeds dense limit 4096");
  }
}

/// Dense matrix of a linear operator, column j = A e_j.
inline MatrixXd dense_operator(const DegradationOp& op, Shape x_shape) {
  check_dense_dim(static_cast<Eigen::Index>(x_shape.size()), "dense_operator");
  const Shape y_shape = output_shape(op, x_shape);
  MatrixXd a(y_shape.size(), x_shape.size());
  ImageField e(x_shape);
  for (std::size_t j = 0; j < x_shape.size(); ++j) {
    e[j] = 1.0;
    const ImageField col = apply_op(op, e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  return a;
}

/// Dense matrix of a linear denoiser, by probing basis vectors.
inline MatrixXd dense_denoiser(const Denoiser& d, Shape shape) {
  if (!d.is_linear()) throw RejectedInput("dense_denoiser: plugin denoisers have no closed form");
  check_dense_dim(static_cast<Eigen::Index>(shape.size()), "dense_denoiser");
  MatrixXd w(shape.size(), shape.size());
  ImageField e(shape);
  for (std::size_t j = 0; j < shape.size(); ++j) {
    e[j] = 1.0;
    const ImageField col = d.apply(e);
    e[j] = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
  }
  return w;
}

inline VectorXd to_vector(const ImageField& f) {
  return Eigen::Map<const VectorXd>(f.values().data(), static_cast<Eigen::Index>(f.size()));
}

inline ImageField to_image(const VectorXd& v, Shape shape) {
  return ImageField(shape, std::vector<double>(v.data(), v.data() + v.size()));
}

/// Mean and covariance of a Gaussian law.
class GaussianDist {
 public:
  GaussianDist(VectorXd mean, MatrixXd cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
    if (cov_.rows() != cov_.cols() || cov_.rows() != mean_.size()) throw RejectedInput("GaussianDist: dimension mismatch");
    const double scale = std::max(1.0, cov_.cwiseAbs().maxCoeff());
    if ((cov_ - cov_.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
      throw RejectedInput("GaussianDist: covariance is not symmetric");
    }
    cov_ = 0.5 * (cov_ + cov_.transpose());
  }

  const VectorXd& mean() const noexcept { return mean_; }
  const MatrixXd& cov() const noexcept { return cov_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }

  /// Marginal over the index block [offset, offset + size).
  GaussianDist block(Eigen::Index offset, Eigen::Index size) const {
    return GaussianDist(mean_.segment(offset, size), cov_.block(offset, offset, size, size));
  }

 private:
  VectorXd mean_;
  MatrixXd cov_;
};

/// Symmetric PSD square root; eigenvalues below zero are clipped, with a
/// warning when they are more negative than -1e-10 relative to the spectrum.
inline MatrixXd psd_sqrt(const MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  if (ev.minCoeff() < -1e-10 * scale) {
    std::cerr << "warning: clipping indefinite covariance eigenvalue " << ev.minCoeff() << '\n';
  }
  ev = ev.cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Wasserstein-2 distance between Gaussians:
/// sqrt(||m1 - m2||^2 + tr(S1 + S2 - 2 (S2^1/2 S1 S2^1/2)^1/2)).
inline double w2_gaussians(const GaussianDist& g1, const GaussianDist& g2) {
  if (g1.dim() != g2.dim()) throw RejectedInput("w2_gaussians: dimension mismatch");
  const MatrixXd s2h = psd_sqrt(g2.cov());
  const MatrixXd cross = psd_sqrt(s2h * g1.cov() * s2h);
  const double w2sq =
      (g1.mean() - g2.mean()).squaredNorm() + g1.cov().trace() + g2.cov().trace() - 2.0 * cross.trace();
  return std::sqrt(std::max(0.0, w2sq));
}

/// Precision of x | z: Q = A^T A / sigma^2 + I / rho2.
inline MatrixXd conditional_precision(const MatrixXd& a, double sigma, double rho2) {
  const Eigen::Index n = a.cols();
  return a.transpose() * a / (sigma * sigma) + MatrixXd::Identity(n, n) / rho2;
}

inline MatrixXd spd_inverse(const MatrixXd& p, const char* who) {
  Eigen::LLT<MatrixXd> llt(p);
  if (llt.info() != Eigen::Success) throw OracleError(std::string(who) + ": precision is not positive definite");
  return llt.solve(MatrixXd::Identity(p.rows(), p.cols()));
}

inline void check_linear_inputs(const MatrixXd& w, const MatrixXd& a, const VectorXd& y, double sigma) {
  check_dense_dim(w.rows(), "oracle");
  if (w.rows() != w.cols() || a.cols() != w.rows() || a.rows() != y.size()) throw RejectedInput("oracle: dimension mismatch");
  if (!(sigma > 0.0)) throw RejectedInput("oracle: sigma must be positive");
  if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw RejectedInput("oracle: W must be symmetric");
}

/// RED posterior for D(x) = W x: Gaussian with precision
/// P = A^T A / sigma^2 + beta (I - W) and mean P^{-1} A^T y / sigma^2.
inline GaussianDist linear_posterior(const MatrixXd& w, double beta, const MatrixXd& a, double sigma, const VectorXd& y) {
  check_linear_inputs(w, a, y, sigma);
  const Eigen::Index n = w.rows();
  const MatrixXd p = a.transpose() * a / (sigma * sigma) + beta * (MatrixXd::Identity(n, n) - w);
  const MatrixXd cov = spd_inverse(p, "linear_posterior");
  return GaussianDist(cov * (a.transpose() * y) / (sigma * sigma), cov);
}

/// Exact augmented law pi_rho over (x, z) and its two marginals.
struct AxdaLaw {
  GaussianDist joint;  // ordered (x, z)
  GaussianDist x;
  GaussianDist z;
};

/// pi_rho(x, z) ~ exp(-||Ax - y||^2/(2 sigma^2) - beta/2 z^T (I - W) z - ||x - z||^2/(2 rho2)),
/// assembled from its block precision.
inline AxdaLaw axda_marginal(const MatrixXd& w, double beta, double rho2, const MatrixXd& a, double sigma, const VectorXd& y) {
  check_linear_inputs(w, a, y, sigma);
  if (!(rho2 > 0.0) || !(beta >= 0.0)) throw RejectedInput("axda_marginal: need rho2 > 0 and beta >= 0");
  const Eigen::Index n = w.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  MatrixXd p(2 * n, 2 * n);
  p.topLeftCorner(n, n) = conditional_precision(a, sigma, rho2);
  p.topRightCorner(n, n) = -id / rho2;
  p.bottomLeftCorner(n, n) = -id / rho2;
  p.bottomRightCorner(n, n) = beta * (id - w) + id / rho2;
  VectorXd h = VectorXd::Zero(2 * n);
  h.head(n) = a.transpose() * y / (sigma * sigma);
  const MatrixXd cov = spd_inverse(p, "axda_marginal");
  GaussianDist joint(cov * h, cov);
  return AxdaLaw{joint, joint.block(0, n), joint.block(n, n)};
}

/// Solves S = T S T^T + N for spectral radius(T) < 1 by the doubling form of
/// the fixed-point iteration, stopping when the increment is below 1e-12 (max abs,
/// relative to max(1, |S|)).
inline MatrixXd solve_discrete_lyapunov(const MatrixXd& t, const MatrixXd& noise) {
  MatrixXd s = noise, ak = t;
  for (int it = 0; it < 80; ++it) {
    const MatrixXd inc = ak * s * ak.transpose();
    s += inc;
    if (inc.cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, s.cwiseAbs().maxCoeff())) return 0.5 * (s + s.transpose());
    ak = ak * ak;
  }
  throw OracleError("solve_discrete_lyapunov: no convergence");
}

inline double spectral_radius(const MatrixXd& m) {
  Eigen::EigenSolver<MatrixXd> es(m, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Stationary law of s+ = T s + c + e, e ~ N(0, N).
inline GaussianDist affine_stationary(const MatrixXd& t, const VectorXd& c, const MatrixXd& noise) {
  const double r = spectral_radius(t);
  if (!(r < 1.0)) throw OracleError("recursion is not contractive: spectral radius " + std::to_string(r));
  const Eigen::Index n = t.rows();
  const VectorXd mean = (MatrixXd::Identity(n, n) - t).partialPivLu().solve(c);
  return GaussianDist(mean, solve_discrete_lyapunov(t, noise));
}

/// Linear-Gaussian description of one LwSGS sweep restricted to z:
/// z+ = G z + c + xi, with x drawn from N(mu(z), Q^{-1}) in between.
struct LwsgsRecursion {
  MatrixXd q_inv;  // Q^{-1}
  MatrixXd g;      // (1 - gamma/rho2) I - gamma beta (I - W) + (gamma/rho2^2) Q^{-1}
  VectorXd c;      // (gamma/rho2) Q^{-1} A^T y / sigma^2
  MatrixXd noise;  // 2 gamma I + (gamma/rho2)^2 Q^{-1}
  VectorXd data;   // A^T y / sigma^2
  double gamma, beta, rho2;
  MatrixXd prior;  // I - W
};

inline LwsgsRecursion lwsgs_recursion(const MatrixXd& w, double beta, double rho2, double gamma, const MatrixXd& a,
                                      double sigma, const VectorXd& y) {
  check_linear_inputs(w, a, y, sigma);
  if (!(rho2 > 0.0) || !(gamma > 0.0) || !(beta > 0.0)) throw RejectedInput("lwsgs oracle: beta, rho2, gamma must be positive");
  const Eigen::Index n = w.rows();
  const MatrixXd id = MatrixXd::Identity(n, n);
  LwsgsRecursion r;
  r.gamma = gamma;
  r.beta = beta;
  r.rho2 = rho2;
  r.prior = id - w;
  r.q_inv = spd_inverse(conditional_precision(a, sigma, rho2), "lwsgs oracle");
  r.data = a.transpose() * y / (sigma * sigma);
  const double tie = gamma / rho2;
  r.g = (1.0 - tie) * id - gamma * beta * r.prior + (tie / rho2) * r.q_inv;
  r.c = tie * r.q_inv * r.data;
  r.noise = 2.0 * gamma * id + tie * tie * r.q_inv;
  return r;
}

/// Joint law over (x, z) when z ~ N(mz, Sz) and x | z ~ N(mu(z), Q^{-1}).
inline GaussianDist lift_to_joint(const LwsgsRecursion& r, const VectorXd& mz, const MatrixXd& sz) {
  const Eigen::Index n = mz.size();
  const MatrixXd k = r.q_inv / r.rho2;  // d mu / d z
  VectorXd mean(2 * n);
  mean.head(n) = r.q_inv * r.data + k * mz;
  mean.tail(n) = mz;
  MatrixXd cov(2 * n, 2 * n);
  cov.topLeftCorner(n, n) = k * sz * k.transpose() + r.q_inv;
  cov.topRightCorner(n, n) = k * sz;
  cov.bottomLeftCorner(n, n) = sz * k.transpose();
  cov.bottomRightCorner(n, n) = sz;
  return GaussianDist(mean, 0.5 * (cov + cov.transpose()));
}

/// Stationary law pi_{rho,gamma} of the LwSGS chain over (x, z), exact for linear denoisers.
inline GaussianDist lwsgs_stationary(const MatrixXd& w, double beta, double rho2, double gamma, const MatrixXd& a, double sigma,
                                     const VectorXd& y) {
  const LwsgsRecursion r = lwsgs_recursion(w, beta, rho2, gamma, a, sigma, y);
  const double radius = spectral_radius(r.g);
  if (!(radius < 1.0)) {
    throw OracleError("lwsgs_stationary: z recursion not contractive (spectral radius " + std::to_string(radius) +
                      ") at gamma " + std::to_string(gamma));
  }
  const GaussianDist z = affine_stationary(r.g, r.c, r.noise);
  return lift_to_joint(r, z.mean(), z.cov());
}

/// Law of (x^(t), z^(t)) for a chain started at the point (x0, z0); t = 0 is the Dirac mass.
inline GaussianDist lwsgs_transient(const LwsgsRecursion& r, const VectorXd& x0, const VectorXd& z0, std::size_t t) {
  const Eigen::Index n = z0.size();
  if (t == 0) {
    VectorXd m(2 * n);
    m << x0, z0;
    return GaussianDist(m, MatrixXd::Zero(2 * n, 2 * n));
  }
  const MatrixXd id = MatrixXd::Identity(n, n);
  const double tie = r.gamma / r.rho2;
  VectorXd mz = ((1.0 - tie) * id - r.gamma * r.beta * r.prior) * z0 + tie * x0;
  MatrixXd sz = 2.0 * r.gamma * id;
  for (std::size_t s = 1; s < t; ++s) {
    mz = r.g * mz + r.c;
    sz = r.g * sz * r.g.transpose() + r.noise;
  }
  return lift_to_joint(r, mz, sz);
}

/// Stationary law of the triple-split chain over the state (z1, x, z2) for a
/// linear denoiser, built by composing the three affine Gaussian updates of one sweep.
inline GaussianDist sr_split_stationary(const MatrixXd& w, double beta, double rho1_2, double rho2_2, double gamma,
                                        const MatrixXd& blur, const MatrixXd& subsample, double sigma, const VectorXd& y) {
  const Eigen::Index n = w.rows();
  check_dense_dim(3 * n, "sr_split_stationary");
  if (blur.rows() != n || blur.cols() != n || subsample.cols() != n || subsample.rows() != y.size()) {
    throw RejectedInput("sr_split_stationary: dimension mismatch");
  }
  const MatrixXd id = MatrixXd::Identity(n, n);
  const double s2 = sigma * sigma;
  const MatrixXd p1_inv = spd_inverse(subsample.transpose() * subsample / s2 + id / rho1_2, "sr z1 step");
  const MatrixXd p2_inv = spd_inverse(blur.transpose() * blur / rho1_2 + id / rho2_2, "sr x step");

  const Eigen::Index m = 3 * n;
  MatrixXd e1 = MatrixXd::Identity(m, m), e2 = MatrixXd::Identity(m, m), e3 = MatrixXd::Identity(m, m);
  e1.block(0, 0, n, n).setZero();
  e1.block(0, n, n, n) = p1_inv * blur / rho1_2;
  VectorXd d1 = VectorXd::Zero(m);
  d1.head(n) = p1_inv * subsample.transpose() * y / s2;
  MatrixXd n1 = MatrixXd::Zero(m, m);
  n1.block(0, 0, n, n) = p1_inv;

  e2.block(n, n, n, n).setZero();
  e2.block(n, 0, n, n) = p2_inv * blur.transpose() / rho1_2;
  e2.block(n, 2 * n, n, n) = p2_inv / rho2_2;
  MatrixXd n2 = MatrixXd::Zero(m, m);
  n2.block(n, n, n, n) = p2_inv;

  const double tie = gamma / rho2_2;
  e3.block(2 * n, n, n, n) = tie * id;
  e3.block(2 * n, 2 * n, n, n) = (1.0 - tie) * id - gamma * beta * (id - w);
  MatrixXd n3 = MatrixXd::Zero(m, m);
  n3.block(2 * n, 2 * n, n, n) = 2.0 * gamma * id;

  const MatrixXd e32 = e3 * e2;
  const MatrixXd t = e32 * e1;
  const VectorXd c = e32 * d1;
  MatrixXd noise = e32 * n1 * e32.transpose() + e3 * n2 * e3.transpose() + n3;
  noise = 0.5 * (noise + noise.transpose());
  return affine_stationary(t, c, noise);
}

/// Inputs of the convergence and bias bounds.
struct BoundInputs {
  std::size_t n = 1;
  double beta = 1.0;
  double rho2 = 1.0;
  double gamma = 0.0;
  double m_g = 0.0;
  double M_g = 0.0;
  double q_inv_norm = 0.0;
};

struct BoundValues {
  double contraction_rhs;
  double bias_rhs;
  double c1;
  double c2;
  double m_tilde;
  double M_tilde;
  double rate;  // 1 - gamma beta m_g
};

/// Contraction: C1 (1 - gamma beta m_g)^{2(t-1)} W2^2(delta_v, pi_{rho,gamma}), with w2_sq_init the last factor.
/// Bias: n gamma C2 M~^2 (1 + gamma^2 M~^2 / 12 + gamma M~^2 / (2 m~)), where
/// C1 = 1 + ||Q^{-1}||^2 / rho2, C2 = 2 C1 / (beta m_g), m~ = beta m_g + 1/rho2, M~ = beta M_g + 1/rho2.
inline BoundValues evaluate_bounds(const BoundInputs& in, std::size_t t, double w2_sq_init) {
  if (!(in.m_g > 0.0) || !(in.m_g <= in.M_g)) throw RejectedInput("evaluate_bounds: need 0 < m_g <= M_g");
  if (!(in.beta > 0.0) || !(in.rho2 > 0.0) || !(in.gamma > 0.0) || in.n == 0 || !(in.q_inv_norm >= 0.0)) {
    throw RejectedInput("evaluate_bounds: invalid inputs");
  }
  if (t < 1) throw RejectedInput("evaluate_bounds: t must be at least 1");
  const double two_sided = 2.0 / (in.beta * in.m_g + in.beta * in.M_g + 1.0 / in.rho2);
  if (in.gamma > two_sided * (1.0 + 1e-12)) {
    throw BoundWindowError("evaluate_bounds: gamma exceeds the bias-bound window 2/(beta m_g + beta M_g + 1/rho2) = " +
                           std::to_string(two_sided));
  }
  const double one_sided = 1.0 / (in.beta * in.M_g + 1.0 / in.rho2);
  if (in.gamma > one_sided * (1.0 + 1e-12)) {
    throw BoundWindowError("evaluate_bounds: gamma exceeds the contraction window 1/(beta M_g + 1/rho2) = " +
                           std::to_string(one_sided));
  }
  BoundValues b{};
  b.c1 = 1.0 + in.q_inv_norm * in.q_inv_norm / in.rho2;
  b.c2 = 2.0 / (in.beta * in.m_g) * b.c1;
  b.m_tilde = in.beta * in.m_g + 1.0 / in.rho2;
  b.M_tilde = in.beta * in.M_g + 1.0 / in.rho2;
  b.rate = 1.0 - in.gamma * in.beta * in.m_g;
  b.contraction_rhs = b.c1 * std::pow(b.rate, 2.0 * static_cast<double>(t - 1)) * w2_sq_init;
  const double mt2 = b.M_tilde * b.M_tilde;
  b.bias_rhs = static_cast<double>(in.n) * in.gamma * b.c2 * mt2 *
               (1.0 + in.gamma * in.gamma * mt2 / 12.0 + in.gamma * mt2 / (2.0 * b.m_tilde));
  return b;
}

}  // namespace redsample::oracle
