// Exact stationary bias of LwSGS on an 8x8 linear problem as the step size halves,
// printed next to the analytic upper bound.
#include <cmath>
#include <cstdio>

#include "redsample/oracle.hpp"
#include "redsample/samplers.hpp"

using namespace redsample;

int main() {
  const Shape s{8, 8, 1};
  const DegradationOp op = ops::Circulant{Kernel::gaussian(3, 1.0)};
  const ImageField truth = synthetic_image(8, 8);
  const double sigma = 0.05;
  RngStream rng(3);
  const ImageField y = degrade(truth, op, NoiseModel(sigma), rng);
  const Denoiser d = SymmetricConv::gaussian(3, 1.0, 0.05);
  const auto bounds = *d.spectral_bounds(s);

  const auto a = oracle::dense_operator(op, s);
  const auto w = oracle::dense_denoiser(d, s);
  const auto yv = oracle::to_vector(y);
  const double beta = 1.0, rho2 = 0.5;
  const double q_inv = make_conditional_solver(op, s, sigma, rho2).inverse_norm();
  const oracle::AxdaLaw target = oracle::axda_marginal(w, beta, rho2, a, sigma, yv);

  std::printf("%12s %14s %14s %10s\n", "gamma", "W2^2", "bound", "ratio");
  double prev = NAN;
  const double gmax = max_step_size(beta, bounds.M_g(), rho2);
  for (int k = 0; k < 8; ++k) {
    const double g = gmax / std::pow(2.0, k);
    const double w2 = oracle::w2_gaussians(target.joint, oracle::lwsgs_stationary(w, beta, rho2, g, a, sigma, yv));
    const oracle::BoundInputs in{s.size(), beta, rho2, g, bounds.m_g(), bounds.M_g(), q_inv};
    std::printf("%12.5g %14.6e %14.6e %10.3f\n", g, w2 * w2, oracle::evaluate_bounds(in, 1, 0.0).bias_rhs, prev / (w2 * w2));
    prev = w2 * w2;
  }
}
