#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>

#include "valen/autodiff.hpp"
#include "valen/matrix.hpp"
#include "valen/rng.hpp"
#include "valen/special.hpp"

namespace valen {

constexpr double kAlphaFloor = 1e-4;

// Per-example Dirichlet concentration vectors (n x c, strictly positive).
struct DirichletParams {
  Matrix alphas;

  void validate() const {
    for (double a : alphas.data)
      if (!(a >= kAlphaFloor) || !std::isfinite(a))
        throw std::invalid_argument("DirichletParams: entries must be finite and >= floor");
  }
};

// Rows on the simplex (n x c).
struct LabelDistributionMatrix {
  Matrix dist;

  void validate() const {
    for (int i = 0; i < dist.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < dist.cols; ++j) {
        if (dist(i, j) < 0.0) throw std::invalid_argument("label distribution < 0");
        s += dist(i, j);
      }
      if (std::fabs(s - 1.0) > 1e-9)
        throw std::invalid_argument("label distribution row does not sum to 1");
    }
  }
};

// Symmetric prior Dir(epsilon, ..., epsilon).
struct DirichletPrior {
  double epsilon = 0.01;
};

inline LabelDistributionMatrix dirichlet_mean(const DirichletParams& params) {
  const Matrix& a = params.alphas;
  Matrix d = a;
  for (int i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) s += a(i, j);
    for (int j = 0; j < a.cols; ++j) d(i, j) = a(i, j) / s;
  }
  return {std::move(d)};
}

namespace detail {

// One Dirichlet row via normalized Gamma draws; retries with floored shapes
// if the whole row underflows. The threshold keeps 1/s and the normalization
// backward away from overflow; draws at non-degenerate shapes are O(1).
inline void sample_dirichlet_row(const double* alpha, int c, RngState& rng,
                                 double* z_out, double* d_out) {
  for (int attempt = 0; attempt < 8; ++attempt) {
    double s = 0.0;
    double floor_shape = attempt == 0 ? 0.0 : 0.1;
    for (int j = 0; j < c; ++j) {
      z_out[j] = rng.gamma(std::max(alpha[j], floor_shape));
      s += z_out[j];
    }
    if (s > 1e-12) {
      for (int j = 0; j < c; ++j) d_out[j] = z_out[j] / s;
      return;
    }
  }
  throw std::runtime_error("sample_dirichlet: persistent gamma underflow");
}

}  // namespace detail

inline LabelDistributionMatrix sample_dirichlet(const DirichletParams& params,
                                                RngState& rng) {
  params.validate();
  const Matrix& a = params.alphas;
  Matrix d(a.rows, a.cols);
  std::vector<double> z(a.cols);
  for (int i = 0; i < a.rows; ++i)
    detail::sample_dirichlet_row(a.row(i), a.cols, rng, z.data(), d.row(i));
  return {std::move(d)};
}

// Sample plus the implicit-reparameterization backward rule. For each
// underlying Gamma draw, dz/dalpha = -(dF/dalpha)/(dF/dz) with F the
// regularized Gamma CDF and dF/dz the Gamma density; the normalization is
// then chained analytically.
struct DirichletSampleGrad {
  Matrix sample;     // d, rows on the simplex
  Matrix z;          // raw Gamma draws
  Matrix dz_dalpha;  // per-entry implicit derivative

  // dL/dalpha from dL/dsample
  Matrix backward(const Matrix& grad_sample) const {
    check_same_shape(grad_sample, sample, "DirichletSampleGrad::backward");
    Matrix ga(sample.rows, sample.cols);
    for (int i = 0; i < sample.rows; ++i) {
      double s = 0.0;
      double gd = 0.0;  // sum_j g_ij * d_ij
      for (int j = 0; j < sample.cols; ++j) s += z(i, j);
      for (int j = 0; j < sample.cols; ++j) gd += grad_sample(i, j) * sample(i, j);
      for (int j = 0; j < sample.cols; ++j) {
        // d(z_j/s)/dz_j chained: (g_j - sum_k g_k d_k) / s, written via the
        // normalized sample to avoid squaring a small s
        double dd = (grad_sample(i, j) - gd) / s;
        ga(i, j) = dz_dalpha(i, j) * dd;
      }
    }
    return ga;
  }
};

inline DirichletSampleGrad sample_dirichlet_with_grad(const DirichletParams& params,
                                                      RngState& rng) {
  params.validate();
  const Matrix& a = params.alphas;
  DirichletSampleGrad out;
  out.sample = Matrix(a.rows, a.cols);
  out.z = Matrix(a.rows, a.cols);
  out.dz_dalpha = Matrix(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    detail::sample_dirichlet_row(a.row(i), a.cols, rng, out.z.row(i), out.sample.row(i));
    for (int j = 0; j < a.cols; ++j) {
      double shape = a(i, j);
      double zv = out.z(i, j);
      if (zv <= 0.0) {  // underflowed draw: no usable pathwise derivative
        out.dz_dalpha(i, j) = 0.0;
        continue;
      }
      double logpdf = gamma_log_pdf(zv, shape);
      if (logpdf < -690.0) {
        out.dz_dalpha(i, j) = 0.0;
        continue;
      }
      double dF_dshape = gamma_cdf_shape_derivative(zv, shape);
      out.dz_dalpha(i, j) = -dF_dshape / std::exp(logpdf);
    }
  }
  return out;
}

// Eq-style analytic KL( prod Dir(alpha_i) || prod Dir(eps,...,eps) ).
inline double kl_dirichlet_to_prior(const DirichletParams& params,
                                    const DirichletPrior& prior) {
  params.validate();
  if (!(prior.epsilon > 0.0)) throw std::domain_error("prior epsilon must be positive");
  const Matrix& a = params.alphas;
  const int c = a.cols;
  const double eps = prior.epsilon;
  const double const_term = -log_gamma(c * eps) + c * log_gamma(eps);
  double total = 0.0;
  for (int i = 0; i < a.rows; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += a(i, j);
    double term = log_gamma(s) + const_term;
    double psi_s = digamma(s);
    for (int j = 0; j < c; ++j)
      term += -log_gamma(a(i, j)) + (a(i, j) - eps) * (digamma(a(i, j)) - psi_s);
    total += term;
  }
  return total;
}

// Tape node wrapping sample_dirichlet_with_grad.
inline ad::Var dirichlet_sample_node(ad::Tape& tape, ad::Var alpha, RngState& rng) {
  DirichletParams params{tape.val(alpha)};
  auto sg = std::make_shared<DirichletSampleGrad>(sample_dirichlet_with_grad(params, rng));
  ad::Var out = tape.push(sg->sample, tape.needs(alpha));
  tape.set_backward(out, [&tape, alpha, out, sg] {
    if (tape.needs(alpha)) tape.acc(alpha, sg->backward(tape.grad(out)));
  });
  return out;
}

// KL to the symmetric prior as a differentiable tape expression (sum over
// the rows of alpha).
inline ad::Var kl_to_prior_node(ad::Tape& tape, ad::Var alpha, double eps) {
  const Matrix& a = tape.val(alpha);
  const int n = a.rows, c = a.cols;
  ad::Var s = tape.row_sums(alpha);                       // n x 1
  ad::Var t1 = tape.sum(tape.lgamma(s));                  // sum lgamma(sum alpha)
  ad::Var t2 = tape.sum(tape.lgamma(alpha));              // sum lgamma(alpha)
  ad::Var centered = tape.add_scalar(alpha, -eps);        // alpha - eps
  ad::Var psi_diff = tape.sub_colvec(tape.digamma(alpha), tape.digamma(s));
  ad::Var t3 = tape.sum(tape.mul(centered, psi_diff));
  double const_term = n * (-log_gamma(c * eps) + c * log_gamma(eps));
  return tape.add_scalar(tape.add(tape.sub(t1, t2), t3), const_term);
}

}  // namespace valen
