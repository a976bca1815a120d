#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "redsample/denoiser.hpp"
#include "redsample/errors.hpp"
#include "redsample/operators.hpp"
#include "redsample/oracle.hpp"
#include "redsample/samplers.hpp"
#include "test_util.hpp"

using namespace redsample;
using namespace redsample::oracle;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct Problem8 {
  MatrixXd w, a;
  VectorXd y;
  double sigma;
};

Problem8 problem8(double eps0 = 0.05, double sigma = 0.1) {
  const Shape s{8, 8, 1};
  const DegradationOp op = ops::Circulant{Kernel::gaussian(3, 1.0)};
  RngStream rng(41);
  const ImageField y = degrade(synthetic_image(8, 8), op, NoiseModel(sigma), rng);
  return Problem8{dense_denoiser(SymmetricConv::gaussian(3, 1.0, eps0), s), dense_operator(op, s), to_vector(y), sigma};
}

BoundInputs bound_inputs(const Problem8& p, double beta, double rho2, double gamma) {
  const Eigen::Index n = p.w.rows();
  const VectorXd ev = Eigen::SelfAdjointEigenSolver<MatrixXd>(MatrixXd::Identity(n, n) - p.w).eigenvalues();
  const VectorXd qev = Eigen::SelfAdjointEigenSolver<MatrixXd>(conditional_precision(p.a, p.sigma, rho2)).eigenvalues();
  return BoundInputs{static_cast<std::size_t>(n), beta, rho2, gamma, ev.minCoeff(), ev.maxCoeff(), 1.0 / qev.minCoeff()};
}

double gamma_max(const BoundInputs& in) {
  return std::min(2.0 / (in.beta * in.m_g + in.beta * in.M_g + 1.0 / in.rho2), 1.0 / (in.beta * in.M_g + 1.0 / in.rho2));
}

double bias_sq(const Problem8& p, double beta, double rho2, double gamma) {
  const AxdaLaw exact = axda_marginal(p.w, beta, rho2, p.a, p.sigma, p.y);
  const double d = w2_gaussians(exact.joint, lwsgs_stationary(p.w, beta, rho2, gamma, p.a, p.sigma, p.y));
  return d * d;
}

}  // namespace

TEST(LinearPosterior, NoPriorIdentityOperator) {
  const VectorXd y = (VectorXd(3) << 1.0, -2.0, 0.5).finished();
  const MatrixXd id = MatrixXd::Identity(3, 3);
  const GaussianDist g = linear_posterior(MatrixXd::Zero(3, 3), 1.0, id, 1.0, y);
  EXPECT_LT((g.mean() - y / 2).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((g.cov() - id / 2).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LinearPosterior, ZeroDataZeroMean) {
  Problem8 p = problem8();
  p.y.setZero();
  EXPECT_EQ(linear_posterior(p.w, 3.0, p.a, p.sigma, p.y).mean().cwiseAbs().maxCoeff(), 0.0);
}

TEST(LinearPosterior, TwoPixelQuadrature) {
  MatrixXd w(2, 2), a(2, 2);
  w << 0.5, 0.2, 0.2, 0.4;
  a << 1.0, 0.3, 0.3, 0.8;
  const VectorXd y = (VectorXd(2) << 0.4, -0.2).finished();
  const double sigma = 0.5, beta = 2.0;
  const GaussianDist g = linear_posterior(w, beta, a, sigma, y);
  const MatrixXd prior = MatrixXd::Identity(2, 2) - w;
  const int m = 801;
  const double half = 8.0 * std::sqrt(g.cov().diagonal().maxCoeff());
  double z = 0, m0 = 0, m1 = 0;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) {
      const VectorXd x = (VectorXd(2) << g.mean()[0] - half + 2 * half * i / (m - 1), g.mean()[1] - half + 2 * half * j / (m - 1)).finished();
      const double f = (a * x - y).squaredNorm() / (2 * sigma * sigma) + 0.5 * beta * x.dot(prior * x);
      const double e = std::exp(-f);
      z += e;
      m0 += e * x[0];
      m1 += e * x[1];
    }
  EXPECT_NEAR(m0 / z, g.mean()[0], 1e-3);
  EXPECT_NEAR(m1 / z, g.mean()[1], 1e-3);
}

TEST(LinearPosterior, RejectsAsymmetricW) {
  MatrixXd w(2, 2);
  w << 0.5, 0.2, 0.1, 0.4;
  EXPECT_THROW(linear_posterior(w, 1.0, MatrixXd::Identity(2, 2), 1.0, VectorXd::Zero(2)), RejectedInput);
}

TEST(LwsgsStationary, ScalarLyapunov) {
  const MatrixXd w = MatrixXd::Constant(1, 1, 0.5), a = MatrixXd::Identity(1, 1);
  const VectorXd y = VectorXd::Constant(1, 0.7);
  const GaussianDist joint = lwsgs_stationary(w, 1.0, 1.0, 0.1, a, 1.0, y);
  // Q = 2, G = 0.9 - 0.05 + 0.05 = 0.9, noise = 0.2 + 0.01 * 0.5, c = 0.1 * 0.5 * 0.7.
  const double g = 0.9, noise = 0.205, c = 0.035;
  const double sz = noise / (1 - g * g), mz = c / (1 - g);
  EXPECT_NEAR(joint.cov()(1, 1), sz, 1e-12);
  EXPECT_NEAR(joint.mean()[1], mz, 1e-12);
  EXPECT_NEAR(joint.mean()[0], 0.5 * (0.7 + mz), 1e-12);
  EXPECT_NEAR(joint.cov()(0, 0), 0.25 * sz + 0.5, 1e-12);
  EXPECT_NEAR(joint.cov()(0, 1), 0.5 * sz, 1e-12);
}

TEST(LwsgsStationary, NonContractiveStepRejected) {
  const MatrixXd w = MatrixXd::Constant(1, 1, 0.5), a = MatrixXd::Identity(1, 1);
  try {
    lwsgs_stationary(w, 1.0, 1.0, 5.0, a, 1.0, VectorXd::Zero(1));
    FAIL();
  } catch (const OracleError& e) {
    EXPECT_NE(std::string(e.what()).find("gamma"), std::string::npos);
  }
}

TEST(LwsgsStationary, HalvingStepReducesBias) {
  const Problem8 p = problem8();
  const double beta = 1.0, rho2 = 0.5;
  const double g0 = gamma_max(bound_inputs(p, beta, rho2, 1.0));
  EXPECT_LT(bias_sq(p, beta, rho2, g0 / 2), bias_sq(p, beta, rho2, g0));
}

TEST(LwsgsStationary, MonteCarloCovariance) {
  const Shape s{8, 8, 1};
  const DegradationOp op = ops::Circulant{Kernel::gaussian(3, 1.0)};
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.2);
  RngStream rng(42);
  const InverseProblem prob{degrade(synthetic_image(8, 8), op, NoiseModel(0.2), rng), op, NoiseModel(0.2)};
  SamplerConfig cfg;
  cfg.beta = 5.0;
  cfg.rho2 = 0.5;
  cfg.gamma = 0.9 * max_step_size(cfg.beta, d.spectral_bounds(s)->M_g(), cfg.rho2);
  const GaussianDist joint = lwsgs_stationary(dense_denoiser(d, s), cfg.beta, cfg.rho2, cfg.gamma, dense_operator(op, s), 0.2,
                                              to_vector(prob.y));
  const GaussianDist x = joint.block(0, 64);
  LwsgsChain<RngStream> chain(cfg, prob, d, rng);
  for (int t = 0; t < 2000; ++t) chain.step();
  testutil::BatchMeans bm(64 * 64, 1000);
  std::vector<double> prod(64 * 64);
  for (int t = 0; t < 100000; ++t) {
    chain.step();
    const VectorXd c = to_vector(chain.x()) - x.mean();
    for (int i = 0; i < 64; ++i)
      for (int j = 0; j < 64; ++j) prod[static_cast<std::size_t>(i * 64 + j)] = c[i] * c[j];
    bm.push(prod);
  }
  double worst = 0.0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j) {
      const std::size_t k = static_cast<std::size_t>(i * 64 + j);
      worst = std::max(worst, std::abs(bm.mean(k) - x.cov()(i, j)) / bm.se(k));
    }
  EXPECT_LT(worst, 5.0);
}

TEST(AxdaMarginal, SmallCouplingRecoversPosterior) {
  const Problem8 p = problem8();
  const AxdaLaw law = axda_marginal(p.w, 2.0, 1e-4, p.a, p.sigma, p.y);
  const GaussianDist post = linear_posterior(p.w, 2.0, p.a, p.sigma, p.y);
  EXPECT_LT((law.x.mean() - post.mean()).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(AxdaMarginal, NoPriorGivesLikelihoodLaw) {
  MatrixXd a(2, 2);
  a << 1.0, 0.3, 0.2, 0.9;
  const VectorXd y = (VectorXd(2) << 0.5, 1.0).finished();
  const double sigma = 0.3, rho2 = 0.7;
  const AxdaLaw law = axda_marginal(MatrixXd::Zero(2, 2), 0.0, rho2, a, sigma, y);
  const MatrixXd cov = sigma * sigma * (a.transpose() * a).inverse();
  EXPECT_LT((law.x.mean() - a.inverse() * y).norm(), 1e-10);
  EXPECT_LT((law.x.cov() - cov).norm(), 1e-10);
  EXPECT_LT((law.z.cov() - cov - rho2 * MatrixXd::Identity(2, 2)).norm(), 1e-10);
}

TEST(AxdaMarginal, JointCovarianceSymmetric) {
  const Problem8 p = problem8();
  const AxdaLaw law = axda_marginal(p.w, 1.0, 0.3, p.a, p.sigma, p.y);
  EXPECT_LT((law.joint.cov() - law.joint.cov().transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_EQ(law.joint.dim(), 128);
}

TEST(W2Gaussians, Examples) {
  RngStream rng(43);
  MatrixXd b(4, 4);
  for (int i = 0; i < 16; ++i) b.data()[i] = rng.normal();
  const MatrixXd cov = b * b.transpose() + MatrixXd::Identity(4, 4);
  const VectorXd m = VectorXd::LinSpaced(4, -1, 2), delta = (VectorXd(4) << 0.3, -1.0, 0.0, 2.0).finished();
  const GaussianDist g(m, cov);
  EXPECT_NEAR(w2_gaussians(g, g), 0.0, 1e-6);
  EXPECT_NEAR(w2_gaussians(g, GaussianDist(m + delta, cov)), delta.norm(), 1e-6);
  const MatrixXd id = MatrixXd::Identity(5, 5);
  EXPECT_NEAR(w2_gaussians(GaussianDist(VectorXd::Zero(5), 0.25 * id), GaussianDist(VectorXd::Zero(5), 2.25 * id)),
              std::sqrt(5.0) * 1.0, 1e-12);
  EXPECT_THROW(w2_gaussians(g, GaussianDist(VectorXd::Zero(5), id)), RejectedInput);
}

TEST(GaussianDist, Invariants) {
  MatrixXd c(2, 2);
  c << 1.0, 0.5, 0.4, 1.0;
  EXPECT_THROW(GaussianDist(VectorXd::Zero(2), c), RejectedInput);
  c << 1.0, 0.0, 0.0, -1e-13;
  EXPECT_NEAR(psd_sqrt(c)(1, 1), 0.0, 1e-15);
  EXPECT_THROW(check_dense_dim(4097, "test"), RejectedInput);
}

TEST(Lyapunov, MatchesVectorizedSolve) {
  RngStream rng(44);
  MatrixXd t(3, 3), b(3, 3);
  for (int i = 0; i < 9; ++i) {
    t.data()[i] = 0.3 * rng.normal();
    b.data()[i] = rng.normal();
  }
  const MatrixXd noise = b * b.transpose();
  const MatrixXd s = solve_discrete_lyapunov(t, noise);
  // vec(S) = (I - T kron T)^{-1} vec(N)
  MatrixXd k(9, 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k.block(3 * i, 3 * j, 3, 3) = t(i, j) * t;
  const VectorXd vec = (MatrixXd::Identity(9, 9) - k).lu().solve(Eigen::Map<const VectorXd>(noise.data(), 9));
  EXPECT_LT((s - Eigen::Map<const MatrixXd>(vec.data(), 3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(EvaluateBounds, FirstStepHasNoContraction) {
  const BoundInputs in{4, 1.0, 1.0, 0.1, 0.2, 0.9, 0.5};
  const BoundValues b = evaluate_bounds(in, 1, 3.0);
  EXPECT_DOUBLE_EQ(b.contraction_rhs, 1.25 * 3.0);
  EXPECT_NEAR(evaluate_bounds(in, 3, 3.0).contraction_rhs, 1.25 * std::pow(1 - 0.1 * 0.2, 4) * 3.0, 1e-14);
}

TEST(EvaluateBounds, HalvingStep) {
  BoundInputs in{64, 2.0, 0.5, 0.2, 0.1, 0.9, 0.4};
  const BoundValues full = evaluate_bounds(in, 1, 1.0);
  in.gamma = 0.1;
  const BoundValues halved = evaluate_bounds(in, 1, 1.0);
  EXPECT_LT(halved.bias_rhs, full.bias_rhs);
  const double lead = 64 * full.c2 * full.M_tilde * full.M_tilde;
  EXPECT_NEAR(0.2 * lead, 2 * 0.1 * lead, 1e-12);
  EXPECT_GT(halved.bias_rhs, 0.1 * lead);
  EXPECT_LT(halved.bias_rhs / full.bias_rhs, 0.5);
}

TEST(EvaluateBounds, ScalarSanity) {
  const BoundInputs in{1, 1.0, 1.0, 0.2, 1.0, 1.0, 0.5};
  const BoundValues b = evaluate_bounds(in, 1, 1.0);
  EXPECT_DOUBLE_EQ(b.m_tilde, 2.0);
  EXPECT_DOUBLE_EQ(b.M_tilde, 2.0);
  EXPECT_DOUBLE_EQ(b.c1, 1.25);
  EXPECT_DOUBLE_EQ(b.c2, 2.5);
  // 0.2 * 2.5 * 4 * (1 + 0.16/12 + 0.2) = 2 * 1.21333... = 2.42666...
  EXPECT_NEAR(b.bias_rhs, 2.0 + 0.16 / 6.0 + 0.4, 1e-12);
  EXPECT_NEAR(b.bias_rhs, 2.426666666667, 1e-12);
}

TEST(EvaluateBounds, WindowsAndInputs) {
  BoundInputs in{1, 1.0, 1.0, 0.51, 1.0, 1.0, 0.5};
  EXPECT_THROW(evaluate_bounds(in, 1, 1.0), BoundWindowError);
  in.gamma = 0.7;
  try {
    evaluate_bounds(in, 1, 1.0);
    FAIL();
  } catch (const BoundWindowError& e) {
    EXPECT_NE(std::string(e.what()).find("2/(beta m_g + beta M_g + 1/rho2)"), std::string::npos);
  }
  in.gamma = 0.5;
  EXPECT_NO_THROW(evaluate_bounds(in, 1, 1.0));
  EXPECT_THROW(evaluate_bounds(in, 0, 1.0), RejectedInput);
  in.m_g = 2.0;
  EXPECT_THROW(evaluate_bounds(in, 1, 1.0), RejectedInput);
}

TEST(OracleInvariants, TransientContraction) {
  const Problem8 p = problem8();
  for (double rho2 : {1.0, 0.5}) {
    const double beta = 1.0;
    BoundInputs in = bound_inputs(p, beta, rho2, 1.0);
    in.gamma = gamma_max(in);
    const LwsgsRecursion r = lwsgs_recursion(p.w, beta, rho2, in.gamma, p.a, p.sigma, p.y);
    const GaussianDist stat = lwsgs_stationary(p.w, beta, rho2, in.gamma, p.a, p.sigma, p.y);
    RngStream rng(45);
    VectorXd x0(64), z0(64);
    for (int k = 0; k < 64; ++k) {
      x0[k] = 3.0 * rng.normal();
      z0[k] = 3.0 * rng.normal();
    }
    const double init = std::pow(w2_gaussians(lwsgs_transient(r, x0, z0, 0), stat), 2);
    for (std::size_t t = 1; t <= 40; ++t) {
      const double w = std::pow(w2_gaussians(lwsgs_transient(r, x0, z0, t), stat), 2);
      ASSERT_LE(w, evaluate_bounds(in, t, init).contraction_rhs * (1 + 1e-9)) << "rho2 " << rho2 << " t " << t;
    }
  }
}

TEST(OracleInvariants, TransientConvergesToStationary) {
  const Problem8 p = problem8(0.3);
  const LwsgsRecursion r = lwsgs_recursion(p.w, 3.0, 0.5, 0.2, p.a, p.sigma, p.y);
  const GaussianDist stat = lwsgs_stationary(p.w, 3.0, 0.5, 0.2, p.a, p.sigma, p.y);
  const GaussianDist late = lwsgs_transient(r, VectorXd::Zero(64), VectorXd::Zero(64), 2000);
  EXPECT_LT(w2_gaussians(late, stat), 1e-6);
}

TEST(OracleInvariants, BiasBoundAndMonotonicity) {
  const Problem8 p = problem8();
  for (double beta : {0.5, 2.0})
    for (double rho2 : {1.0, 0.1}) {
      BoundInputs in = bound_inputs(p, beta, rho2, 1.0);
      const double g0 = gamma_max(in);
      double prev = std::numeric_limits<double>::infinity();
      for (int k = 0; k < 5; ++k) {
        in.gamma = g0 / std::pow(2.0, k);
        const double b = bias_sq(p, beta, rho2, in.gamma);
        EXPECT_LE(b, evaluate_bounds(in, 1, 0.0).bias_rhs) << beta << " " << rho2 << " " << k;
        EXPECT_LE(b, prev);
        prev = b;
      }
    }
}

TEST(OracleInvariants, AxdaConvergesAsCouplingVanishes) {
  const Problem8 p = problem8();
  const GaussianDist post = linear_posterior(p.w, 1.0, p.a, p.sigma, p.y);
  double prev = std::numeric_limits<double>::infinity(), first = 0.0;
  for (double rho2 : {1.0, 1e-1, 1e-2, 1e-3}) {
    const double d = w2_gaussians(post, axda_marginal(p.w, 1.0, rho2, p.a, p.sigma, p.y).x);
    if (rho2 == 1.0) first = d;
    EXPECT_LT(d, prev);
    prev = d;
  }
  EXPECT_LT(prev, 0.01 * first);
}

TEST(OracleInvariants, TweedieIdentity) {
  const std::size_t h = 6, w = 5, n = h * w;
  auto dct = [](std::size_t m) {
    MatrixXd c(m, m);
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < m; ++i)
        c(k, i) = std::sqrt((k == 0 ? 1.0 : 2.0) / m) * std::cos(M_PI * (2.0 * i + 1.0) * k / (2.0 * m));
    return c;
  };
  const MatrixXd ch = dct(h), cw = dct(w);
  MatrixXd c(n, n);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) c.block(i * w, j * w, w, w) = ch(i, j) * cw;
  RngStream rng(46);
  std::vector<double> var(n);
  for (double& v : var) v = std::exp(rng.normal());
  const double eps = 0.3;
  const MatrixXd sigma = c.transpose() * Eigen::Map<const VectorXd>(var.data(), n).asDiagonal() * c;
  const MatrixXd id = MatrixXd::Identity(n, n);
  const TransformShrink d = TransformShrink::gaussian_mmse(h, w, var, eps);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageField x = testutil::random_field(Shape{h, w, 1}, rng, 2.0);
    const VectorXd xv = to_vector(x);
    const VectorXd score = -(sigma + eps * id).ldlt().solve(xv);  // grad log N(0, Sigma + eps I)
    const VectorXd dstar = sigma * (sigma + eps * id).ldlt().solve(xv);
    EXPECT_LT((eps * score - (dstar - xv)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((to_vector(d.apply(x)) - dstar).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SrSplitOracle, IdentityFactorMatchesThreeBlockRecursion) {
  const std::size_t n = 4;
  MatrixXd w = MatrixXd::Identity(n, n) * 0.5, blur = MatrixXd::Identity(n, n) * 0.8;
  const GaussianDist g = sr_split_stationary(w, 1.0, 0.5, 1.0, 0.2, blur, MatrixXd::Identity(n, n), 0.5, VectorXd::Ones(n));
  EXPECT_EQ(g.dim(), 12);
  // per-pixel fixed point: z1 = (4 y + 2 b x)/(4 + 2), x = (2 b z1 + z2)/(2 b^2 + 1), z2 = z2 - 0.2(0.5 z2) + 0.2(x - z2)
  const double b = 0.8;
  MatrixXd m(3, 3);
  m << 6, -2 * b, 0, -2 * b, 2 * b * b + 1, -1, 0, -0.2, 0.2 * 0.5 + 0.2;
  const Eigen::Vector3d sol = m.lu().solve(Eigen::Vector3d(4, 0, 0));
  EXPECT_NEAR(g.mean()[0], sol[0], 1e-10);
  EXPECT_NEAR(g.mean()[n], sol[1], 1e-10);
  EXPECT_NEAR(g.mean()[2 * n], sol[2], 1e-10);
}
