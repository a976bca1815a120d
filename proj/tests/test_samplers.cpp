#include <cmath>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "redsample/denoiser.hpp"
#include "redsample/errors.hpp"
#include "redsample/operators.hpp"
#include "redsample/oracle.hpp"
#include "redsample/samplers.hpp"
#include "redsample/solver.hpp"
#include "redsample/summary.hpp"
#include "test_util.hpp"

using namespace redsample;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::BatchMeans;
using testutil::random_field;
using testutil::ZeroNoise;

namespace {

Denoiser half() { return SymmetricConv(Kernel::identity(), 0.5); }

InverseProblem small_deblur(std::size_t n, double sigma, std::uint64_t seed) {
  const ImageField x = synthetic_image(n, n);
  const DegradationOp op = ops::Circulant{Kernel::gaussian(3, 1.0)};
  RngStream rng(seed);
  return InverseProblem{degrade(x, op, NoiseModel(sigma), rng), op, NoiseModel(sigma)};
}

MatrixXd dense(const DegradationOp& op, Shape s) { return oracle::dense_operator(op, s); }

}  // namespace

TEST(ConditionalMuQ, IdentityOperator) {
  RngStream rng(1);
  const ImageField z = random_field(Shape{4, 4, 1}, rng), y = random_field(Shape{4, 4, 1}, rng);
  const auto [mu, solver] = conditional_mu_Q(z, y, ops::Circulant{Kernel::identity()}, 1.0, 1.0);
  EXPECT_LT(max_abs_diff(mu, 0.5 * (y + z)), 1e-15);
  for (double q : solver.precision()) EXPECT_NEAR(q, 2.0, 1e-15);
}

TEST(ConditionalMuQ, MaskedPixelsKeepZ) {
  RngStream rng(2);
  const Shape s{3, 3, 2};
  const auto m = random_mask(s, 0.5, rng);
  const ImageField z = random_field(s, rng), y = random_field(output_shape(m, s), rng);
  const auto [mu, solver] = conditional_mu_Q(z, y, m, 0.1, 0.25);
  EXPECT_TRUE(solver.is_diagonal());
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (m.keep[k]) {
      EXPECT_DOUBLE_EQ(solver.precision()[k], 100.0 + 4.0);
    } else {
      EXPECT_EQ(mu[k], z[k]);
      EXPECT_EQ(solver.precision()[k], 4.0);
    }
  }
}

TEST(ConditionalMuQ, FourierSolveMatchesDenseSolve) {
  RngStream rng(3);
  const Shape s{8, 8, 1};
  const DegradationOp op = ops::Circulant{Kernel::box(3)};
  const ImageField z = random_field(s, rng), y = random_field(s, rng);
  const double sigma = 0.3, rho2 = 0.7;
  const auto [mu, solver] = conditional_mu_Q(z, y, op, sigma, rho2);
  EXPECT_FALSE(solver.is_diagonal());
  const MatrixXd a = dense(op, s);
  const MatrixXd q = a.transpose() * a / (sigma * sigma) + MatrixXd::Identity(64, 64) / rho2;
  const VectorXd rhs = a.transpose() * oracle::to_vector(y) / (sigma * sigma) + oracle::to_vector(z) / rho2;
  const VectorXd expected = q.ldlt().solve(rhs);
  EXPECT_LT((oracle::to_vector(mu) - expected).norm() / expected.norm(), 1e-10);
  EXPECT_NEAR(solver.inverse_norm(), 1.0 / Eigen::SelfAdjointEigenSolver<MatrixXd>(q).eigenvalues().minCoeff(), 1e-10);
}

TEST(ConditionalMuQ, DownsampleIsDiagonal) {
  RngStream rng(4);
  const Shape s{4, 4, 1};
  const ImageField z = random_field(s, rng), y = random_field(Shape{2, 2, 1}, rng);
  const auto [mu, solver] = conditional_mu_Q(z, y, ops::Downsample{2}, 1.0, 1.0);
  EXPECT_TRUE(solver.is_diagonal());
  EXPECT_NEAR(mu.at(0, 0, 0), 0.5 * (y.at(0, 0, 0) + z.at(0, 0, 0)), 1e-15);
  EXPECT_EQ(mu.at(0, 1, 0), z.at(0, 1, 0));
}

TEST(ConditionalMuQ, RejectsBlurThenDownsample) {
  const ImageField z(Shape{4, 4, 1});
  EXPECT_THROW(conditional_mu_Q(z, ImageField(Shape{2, 2, 1}), ops::BlurThenDownsample{Kernel::box(3), 2}, 1.0, 1.0),
               RejectedInput);
  EXPECT_THROW(conditional_mu_Q(z, z, ops::Circulant{Kernel::box(3)}, 0.0, 1.0), RejectedInput);
}

TEST(SampleXCond, ZeroNoiseReturnsMean) {
  RngStream rng(5);
  const Shape s{6, 6, 2};
  const ImageField z = random_field(s, rng), y = random_field(s, rng);
  for (const DegradationOp& op : {DegradationOp(ops::Circulant{Kernel::gaussian(3, 1.0)}), DegradationOp(random_mask(s, 0.5, rng))}) {
    const ImageField yy = std::holds_alternative<ops::Mask>(op) ? apply_op(op, y) : y;
    const auto [mu, solver] = conditional_mu_Q(z, yy, op, 0.5, 0.5);
    ZeroNoise zero;
    EXPECT_EQ(sample_x_cond(mu, solver, zero), mu);
  }
}

TEST(SampleXCond, DiagonalVariance) {
  const Shape s{1, 1, 1};
  const auto solver = ConditionalGaussianSolver::diagonal(s, {2.0});
  RngStream rng(6);
  const ImageField mu(s);
  double sum = 0, sum2 = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_x_cond(mu, solver, rng)[0];
    sum += v;
    sum2 += v * v;
  }
  const double var = sum2 / n - (sum / n) * (sum / n);
  EXPECT_GE(var, 0.48);
  EXPECT_LE(var, 0.52);
}

TEST(SampleXCond, FourierCovarianceMatchesDenseInverse) {
  const Shape s{8, 8, 1};
  const DegradationOp op = ops::Circulant{Kernel::gaussian(3, 1.0)};
  const double sigma = 0.8, rho2 = 0.5;
  const auto solver = make_conditional_solver(op, s, sigma, rho2);
  const MatrixXd a = dense(op, s);
  const MatrixXd cov = (a.transpose() * a / (sigma * sigma) + MatrixXd::Identity(64, 64) / rho2).inverse();
  RngStream rng(7);
  const ImageField mu(s);
  const int n = 100000;
  MatrixXd acc = MatrixXd::Zero(64, 64);
  VectorXd mean = VectorXd::Zero(64);
  Fft2 fft(8, 8);
  for (int i = 0; i < n; ++i) {
    const VectorXd v = oracle::to_vector(solver.sample(mu, rng, fft));
    acc.noalias() += v * v.transpose();
    mean += v;
  }
  mean /= n;
  const MatrixXd emp = acc / n - mean * mean.transpose();
  EXPECT_LT((emp - cov).cwiseAbs().maxCoeff(), 0.01);
}

TEST(SolveAndSample, AgreesWithSolvePlusSample) {
  RngStream rng(8);
  const Shape s{6, 8, 2};
  const auto solver = make_conditional_solver(ops::Circulant{Kernel::gaussian(3, 1.2)}, s, 0.4, 0.9);
  const ImageField rhs = random_field(s, rng);
  RngStream a(77), b(77);
  Fft2 fft(6, 8);
  const ImageField joint = solver.solve_and_sample(rhs, a, fft);
  const ImageField split = solver.sample(solver.solve(rhs, fft), b, fft);
  EXPECT_LT(max_abs_diff(joint, split), 1e-12);
}

TEST(LmcZStep, ScalarExample) {
  ZeroNoise zero;
  const ImageField z(Shape{1, 1, 1}, 1.0), x(Shape{1, 1, 1}, 0.0);
  EXPECT_NEAR(lmc_z_step(z, x, half(), 1.0, 1.0, 0.1, zero)[0], 0.85, 1e-15);
}

TEST(LmcZStep, ZeroStepLeavesZ) {
  RngStream rng(9);
  const ImageField z = random_field(Shape{4, 4, 1}, rng), x = random_field(Shape{4, 4, 1}, rng);
  EXPECT_EQ(lmc_z_step(z, x, SymmetricConv::gaussian(3, 1.0, 0.05), 1.0, 1.0, 0.0, rng), z);
}

TEST(LmcZStep, StationaryMeanForFixedX) {
  const Shape s{4, 4, 1};
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const double beta = 2.0, rho2 = 0.5, gamma = 0.05;
  RngStream rng(10);
  const ImageField x = random_field(s, rng);
  const MatrixXd w = oracle::dense_denoiser(d, s);
  const MatrixXd p = beta * (MatrixXd::Identity(16, 16) - w) + MatrixXd::Identity(16, 16) / rho2;
  const VectorXd expected = p.ldlt().solve(oracle::to_vector(x) / rho2);
  ImageField z(s);
  for (int t = 0; t < 2000; ++t) z = lmc_z_step(z, x, d, beta, rho2, gamma, rng);
  BatchMeans bm(16, 1000);
  for (int t = 0; t < 100000; ++t) {
    z = lmc_z_step(z, x, d, beta, rho2, gamma, rng);
    bm.push(z.values());
  }
  for (std::size_t k = 0; k < 16; ++k) EXPECT_LE(std::abs(bm.mean(k) - expected[k]), 3.0 * bm.se(k) + 1e-12) << k;
}

TEST(StepSize, Formulas) {
  EXPECT_DOUBLE_EQ(max_step_size(1.0, 2.0, 1.0), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(max_step_size_two_sided(1.0, 0.5, 2.0, 1.0), 2.0 / 3.5);
  EXPECT_DOUBLE_EQ(default_step_size(0.08, 6e-8), 0.99 / (2 * 0.08 + 1 / 6e-8));
  EXPECT_THROW(max_step_size(0.0, 2.0, 1.0), RejectedInput);
  EXPECT_THROW(max_step_size(1.0, -1.0, 1.0), RejectedInput);
  const auto b = *half().spectral_bounds(Shape{3, 3, 1});
  EXPECT_DOUBLE_EQ(max_step_size(1.0, b.M_g(), 1.0), 1.0 / 1.5);
}

TEST(StepSize, ConfigAboveBoundRejected) {
  const InverseProblem p = small_deblur(8, 0.1, 11);
  SamplerConfig cfg;
  cfg.beta = 1.0;
  cfg.rho2 = 1.0;
  cfg.gamma = 0.7;  // bound for the half denoiser is 1 / 1.5
  cfg.n_mc = 3;
  EXPECT_THROW(run_lwsgs(cfg, p, half()), RejectedInput);
  cfg.gamma = 0.6;
  EXPECT_TRUE(run_lwsgs(cfg, p, half()).step_size_verified);
  cfg.nu_schedule = NuSchedule{1.0, 0.5};
  EXPECT_FALSE(run_lwsgs(cfg, p, SymmetricConv::gaussian(3, 1.0, 0.5)).step_size_verified);
}

TEST(SamplerConfig, Validation) {
  SamplerConfig c;
  c.gamma = 0.1;
  c.n_mc = 10;
  c.n_bi = 10;
  EXPECT_THROW(c.validate(), RejectedInput);
  c.n_bi = 2;
  c.thin = 0;
  EXPECT_THROW(c.validate(), RejectedInput);
  c.thin = 1;
  c.beta = -1;
  EXPECT_THROW(c.validate(), RejectedInput);
  c.beta = 1;
  EXPECT_NO_THROW(c.validate());
}

TEST(NuSchedule, LogDecayThenFrozen) {
  const NuSchedule s{10.0, 0.1};
  EXPECT_DOUBLE_EQ(s.at(0, 5), 10.0);
  EXPECT_NEAR(s.at(2, 5), 1.0, 1e-14);
  EXPECT_DOUBLE_EQ(s.at(4, 5), 0.1);
  EXPECT_DOUBLE_EQ(s.at(100, 5), 0.1);
}

TEST(RunLwsgs, SeedDeterminism) {
  const InverseProblem p = small_deblur(8, 0.1, 12);
  SamplerConfig cfg;
  cfg.beta = 1.0;
  cfg.rho2 = 0.5;
  cfg.gamma = 0.2;
  cfg.n_mc = 300;
  cfg.n_bi = 100;
  cfg.thin = 20;
  cfg.store_samples = true;
  cfg.probe_pixels = {0, 5, 63};
  cfg.seed = 9;
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const ChainSummary a = run_lwsgs(cfg, p, d), b = run_lwsgs(cfg, p, d);
  EXPECT_TRUE(a.same_statistics(b));
  EXPECT_EQ(a.stored_samples.size(), 10u);
  EXPECT_EQ(a.probe_traces[0].size(), 200u);
  cfg.seed = 10;
  EXPECT_FALSE(a.same_statistics(run_lwsgs(cfg, p, d)));
}

TEST(RunLwsgs, SingleSampleHasZeroVariance) {
  const InverseProblem p = small_deblur(8, 0.1, 13);
  SamplerConfig cfg;
  cfg.gamma = 0.1;
  cfg.n_mc = 6;
  cfg.n_bi = 5;
  const ChainSummary s = run_lwsgs(cfg, p, SymmetricConv::gaussian(3, 1.0, 0.05));
  EXPECT_EQ(s.sample_count(), 1u);
  EXPECT_EQ(max_abs(s.var_x()), 0.0);
  EXPECT_EQ(s.iterations, 6u);
}

TEST(RunLwsgs, InitialStateIsRescaledBackProjection) {
  const InverseProblem p = small_deblur(8, 0.1, 14);
  RngStream rng(0);
  SamplerConfig cfg;
  cfg.gamma = 0.1;
  LwsgsChain<RngStream> chain(cfg, p, half(), rng);
  EXPECT_EQ(chain.x(), rescale_unit(adjoint_op(p.op, p.y)));
  EXPECT_EQ(chain.z(), chain.x());
}

TEST(RunLwsgs, StationaryMeanMatchesDenseOracleSmall) {
  const std::size_t n = 6;
  const InverseProblem p = small_deblur(n, 0.2, 15);
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  SamplerConfig cfg;
  cfg.beta = 2.0;
  cfg.rho2 = 0.3;
  cfg.gamma = 0.8 * max_step_size(cfg.beta, d.spectral_bounds(p.x_shape())->M_g(), cfg.rho2);
  const Shape s = p.x_shape();
  // Independent dense evaluation of the stationary mean of the linear z-recursion:
  // m_z = (I - G)^{-1} c, m_x = Q^{-1}(A^T y / sigma^2 + m_z / rho2).
  const MatrixXd a = dense(p.op, s), w = oracle::dense_denoiser(d, s), id = MatrixXd::Identity(36, 36);
  const double s2 = p.sigma() * p.sigma();
  const MatrixXd qi = (a.transpose() * a / s2 + id / cfg.rho2).inverse();
  const VectorXd b = a.transpose() * oracle::to_vector(p.y) / s2;
  const MatrixXd g = (1 - cfg.gamma / cfg.rho2) * id - cfg.gamma * cfg.beta * (id - w) + cfg.gamma / (cfg.rho2 * cfg.rho2) * qi;
  const VectorXd mz = (id - g).lu().solve(cfg.gamma / cfg.rho2 * qi * b);
  const VectorXd mx = qi * (b + mz / cfg.rho2);

  RngStream rng(16);
  LwsgsChain<RngStream> chain(cfg, p, d, rng);
  for (int t = 0; t < 2000; ++t) chain.step();
  BatchMeans bm(36, 400);
  for (int t = 0; t < 40000; ++t) {
    chain.step();
    bm.push(chain.x().values());
  }
  int outside = 0;
  for (std::size_t k = 0; k < 36; ++k) outside += std::abs(bm.mean(k) - mx[k]) > 3.0 * bm.se(k);
  EXPECT_LE(outside, 2);  // about 0.1 expected at the 3-sigma level
}

TEST(RunLwsgs, DivergenceIsReported) {
  const InverseProblem p = small_deblur(8, 0.1, 17);
  SamplerConfig cfg;
  cfg.gamma = 50.0;
  cfg.rho2 = 1.0;
  cfg.n_mc = 5000;
  try {
    run_red_ula(cfg, p, half());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.iteration(), 0u);
    EXPECT_LT(e.iteration(), 5000u);
  }
}

TEST(RunRedUla, StationaryMeanSolvesNormalEquations) {
  const std::size_t n = 6;
  const InverseProblem p = small_deblur(n, 0.3, 18);
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const Shape s = p.x_shape();
  SamplerConfig cfg;
  cfg.beta = 3.0;
  const MatrixXd a = dense(p.op, s), w = oracle::dense_denoiser(d, s), id = MatrixXd::Identity(36, 36);
  const double s2 = p.sigma() * p.sigma();
  const MatrixXd h = a.transpose() * a / s2 + cfg.beta * (id - w);
  cfg.gamma = 0.5 / Eigen::SelfAdjointEigenSolver<MatrixXd>(h).eigenvalues().maxCoeff();
  // Fixed point of the mean recursion m = m - gamma (H m - b): H m = b.
  const VectorXd m = h.ldlt().solve(a.transpose() * oracle::to_vector(p.y) / s2);

  RngStream rng(19);
  UlaChain<RngStream> chain(cfg, p, d, rng);
  for (int t = 0; t < 3000; ++t) chain.step();
  BatchMeans bm(36, 500);
  for (int t = 0; t < 60000; ++t) {
    chain.step();
    bm.push(chain.x().values());
  }
  int outside = 0;
  for (std::size_t k = 0; k < 36; ++k) outside += std::abs(bm.mean(k) - m[k]) > 3.0 * bm.se(k);
  EXPECT_LE(outside, 2);
}

TEST(RunRedUla, ZeroDataZeroNoiseStaysAtOrigin) {
  const Shape s{6, 6, 1};
  InverseProblem p{ImageField(s), ops::Circulant{Kernel::gaussian(3, 1.0)}, NoiseModel(0.1)};
  SamplerConfig cfg;
  cfg.gamma = 0.001;
  ZeroNoise zero;
  UlaChain<ZeroNoise> chain(cfg, p, SymmetricConv::gaussian(3, 1.0, 0.05), zero, ImageField(s));
  for (int t = 0; t < 100; ++t) chain.step();
  EXPECT_EQ(max_abs(chain.x()), 0.0);
}

TEST(RunRedUla, SeedDeterminism) {
  const InverseProblem p = small_deblur(8, 0.1, 20);
  SamplerConfig cfg;
  cfg.gamma = 0.002;
  cfg.n_mc = 200;
  cfg.n_bi = 50;
  cfg.probe_pixels = {3};
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  EXPECT_TRUE(run_red_ula(cfg, p, d).same_statistics(run_red_ula(cfg, p, d)));
}

TEST(RunPnpUla, WideBoxIsIdenticalToRedUla) {
  const InverseProblem p = small_deblur(8, 0.05, 21);
  SamplerConfig cfg;
  cfg.beta = 100.0;  // posterior std well below the box margin
  cfg.gamma = 0.001;
  cfg.n_mc = 500;
  cfg.n_bi = 100;
  cfg.store_samples = true;
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const ChainSummary red = run_red_ula(cfg, p, d);
  const ChainSummary boxed = run_pnp_ula(cfg, p, d, BoxProjection{-1.0, 2.0, 1.0});
  EXPECT_TRUE(red.same_statistics(boxed));
  EXPECT_EQ(boxed.projection_fraction(), 0.0);
  EXPECT_TRUE(red.same_statistics(run_pnp_ula(cfg, p, d, std::nullopt)));
}

TEST(RunPnpUla, TightBoxActivatesWithStatedDrift) {
  const InverseProblem p = small_deblur(8, 0.1, 22);
  SamplerConfig cfg;
  cfg.gamma = 0.002;
  const BoxProjection box{0.0, 1.0, 0.5};
  RngStream rng(23);
  UlaChain<RngStream> chain(cfg, p, SymmetricConv::gaussian(3, 1.0, 0.05), rng, box);
  std::size_t active = 0;
  for (int t = 0; t < 300; ++t) {
    const ImageField prev = chain.x();
    const bool on = chain.step();
    active += on;
    bool outside = false;
    for (std::size_t k = 0; k < prev.size(); ++k) {
      const double expected = cfg.gamma / box.lambda * (std::clamp(prev[k], 0.0, 1.0) - prev[k]);
      ASSERT_EQ(chain.last_projection()[k], expected);
      outside = outside || prev[k] < 0.0 || prev[k] > 1.0;
    }
    ASSERT_EQ(on, outside);
  }
  EXPECT_GT(active, 0u);
  cfg.n_mc = 300;
  cfg.seed = 23;
  EXPECT_GT(run_pnp_ula(cfg, p, SymmetricConv::gaussian(3, 1.0, 0.05), box).projection_fraction(), 0.0);
}

TEST(RunPnpUla, InvalidBoxRejected) {
  const InverseProblem p = small_deblur(8, 0.1, 24);
  SamplerConfig cfg;
  cfg.gamma = 0.001;
  EXPECT_THROW(run_pnp_ula(cfg, p, half(), BoxProjection{1.0, 0.0, 1.0}), RejectedInput);
}

TEST(RunSrSplit, Z1ConditionalMean) {
  const Shape s{6, 6, 1};
  RngStream rng(25);
  const Kernel k = Kernel::gaussian(3, 1.0);
  InverseProblem p{random_field(s, rng), ops::BlurThenDownsample{k, 1}, NoiseModel(1.0)};
  SamplerConfig cfg;
  cfg.rho1_2 = 1.0;
  cfg.rho2_2 = 1.0;
  cfg.gamma = 0.1;
  const ImageField x0 = random_field(s, rng);
  ZeroNoise zero;
  SrSplitChain<ZeroNoise> chain(cfg, p, half(), zero, x0, x0);
  chain.step();
  const ImageField expected = 0.5 * (p.y + apply_op(ops::Circulant{k}, x0));
  EXPECT_LT(max_abs_diff(chain.z1(), expected), 1e-14);
}

TEST(RunSrSplit, SeedDeterminismAndShapes) {
  const ImageField x = synthetic_image(16, 16);
  const DegradationOp op = ops::BlurThenDownsample{Kernel::gaussian(5, 1.6), 4};
  RngStream rng(26);
  const InverseProblem p{degrade(x, op, NoiseModel(0.05), rng), op, NoiseModel(0.05)};
  SamplerConfig cfg;
  cfg.beta = 1.0;
  cfg.rho1_2 = 0.2;
  cfg.rho2_2 = 1.0;
  cfg.gamma = 0.8 / (2.0 + 1.0);
  cfg.n_mc = 200;
  cfg.n_bi = 50;
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const ChainSummary a = run_sr_split(cfg, p, d);
  EXPECT_EQ(a.mean_x().shape(), (Shape{16, 16, 1}));
  EXPECT_TRUE(a.same_statistics(run_sr_split(cfg, p, d)));
  EXPECT_TRUE(a.step_size_verified);
  cfg.rho1_2 = 0.0;
  EXPECT_THROW(run_sr_split(cfg, p, d), RejectedInput);
  cfg.rho1_2 = 0.2;
  EXPECT_THROW(run_sr_split(cfg, small_deblur(8, 0.1, 1), d), RejectedInput);
}

TEST(Contraction, CoupledChainsShrinkGeometrically) {
  const InverseProblem p = small_deblur(8, 0.1, 27);
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  SamplerConfig cfg;
  cfg.beta = 1.0;
  cfg.rho2 = 0.5;
  const auto b = *d.spectral_bounds(p.x_shape());
  cfg.gamma = max_step_size(cfg.beta, b.M_g(), cfg.rho2);
  std::vector<double> variates(1000 * 128);
  RngStream rng(28);
  rng.fill_gaussian(variates);
  testutil::Replay r1{&variates}, r2{&variates};
  RngStream init(29);
  LwsgsChain<testutil::Replay> c1(cfg, p, d, r1, random_field(p.x_shape(), init), random_field(p.x_shape(), init));
  LwsgsChain<testutil::Replay> c2(cfg, p, d, r2, random_field(p.x_shape(), init), random_field(p.x_shape(), init));
  const double rate = 1.0 - cfg.gamma * cfg.beta * b.m_g();
  const double link = c1.solver().inverse_norm() / cfg.rho2;
  double prev = norm(c1.z() - c2.z());
  for (int t = 0; t < 1000; ++t) {
    c1.step();
    c2.step();
    const double dz = norm(c1.z() - c2.z());
    ASSERT_LE(dz, rate * prev + 1e-9) << t;
    ASSERT_LE(norm(c1.x() - c2.x()), link * dz + 1e-9) << t;
    prev = dz;
  }
}

TEST(Summary, RunningMomentsMatchTwoPass) {
  RngStream rng(30);
  const Shape s{3, 3, 1};
  std::vector<ImageField> xs;
  RunningMoments m;
  for (int i = 0; i < 500; ++i) {
    xs.push_back(random_field(s, rng, 3.0) + ImageField(s, 100.0));
    m.push(xs.back());
  }
  for (std::size_t k = 0; k < s.size(); ++k) {
    double mean = 0, var = 0;
    for (const auto& x : xs) mean += x[k];
    mean /= 500;
    for (const auto& x : xs) var += (x[k] - mean) * (x[k] - mean);
    var /= 500;
    EXPECT_NEAR(m.mean()[k], mean, 1e-12);
    EXPECT_NEAR(m.variance()[k], var, 1e-10);
  }
}

TEST(Summary, MergeIsAssociative) {
  RngStream rng(31);
  const Shape s{2, 2, 1};
  RunningMoments a, b, c;
  for (int i = 0; i < 50; ++i) a.push(random_field(s, rng));
  for (int i = 0; i < 70; ++i) b.push(random_field(s, rng, 2.0));
  for (int i = 0; i < 30; ++i) c.push(random_field(s, rng, 0.5) + ImageField(s, 1.0));
  RunningMoments left = a, bc = b;
  left.merge(b);
  left.merge(c);
  bc.merge(c);
  RunningMoments right = a;
  right.merge(bc);
  RunningMoments swapped = c;
  swapped.merge(a);
  swapped.merge(b);
  EXPECT_EQ(left.count(), 150u);
  EXPECT_LT(max_abs_diff(left.mean(), right.mean()), 1e-14);
  EXPECT_LT(max_abs_diff(left.variance(), right.variance()), 1e-13);
  EXPECT_LT(max_abs_diff(left.variance(), swapped.variance()), 1e-13);
}

TEST(Summary, MergeSummariesAddsCounters) {
  const InverseProblem p = small_deblur(8, 0.1, 32);
  SamplerConfig cfg;
  cfg.gamma = 0.1;
  cfg.n_mc = 40;
  cfg.n_bi = 10;
  cfg.probe_pixels = {1};
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const ChainSummary a = run_lwsgs(cfg, p, d);
  cfg.stream = 1;
  const ChainSummary b = run_lwsgs(cfg, p, d);
  const ChainSummary m = merge_summaries(a, b);
  EXPECT_EQ(m.sample_count(), 60u);
  EXPECT_EQ(m.iterations, 80u);
  EXPECT_EQ(m.probe_traces, a.probe_traces);
  EXPECT_FALSE(a.same_statistics(b));
}
