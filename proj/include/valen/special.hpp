#pragma once

#include <cmath>
#include <stdexcept>

namespace valen {

// ln Gamma(x) by the Lanczos approximation (g = 607/128, 15 terms),
// good to ~1e-14 relative over the positive axis.
inline double log_gamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("log_gamma: x must be positive");
  static const double c[15] = {
      0.99999999999999709182,     57.156235665862923517,
      -59.597960355475491248,     14.136097974741747174,
      -0.49191381609762019978,    0.33994649984811888699e-4,
      0.46523628927048575665e-4,  -0.98374475304879564677e-4,
      0.15808870322491248884e-3,  -0.21026444172410488319e-3,
      0.21743961811521264320e-3,  -0.16431810653676389022e-3,
      0.84418223983852743293e-4,  -0.26190838401581408670e-4,
      0.36899182659531622704e-5};
  double s = c[0];
  for (int k = 1; k < 15; ++k) s += c[k] / (x + k - 1);
  double t = x + 607.0 / 128.0 - 0.5;
  return (x - 0.5) * std::log(t) - t + std::log(2.5066282746310005 * s);
}

// psi(x): recurrence up to x >= 6, then the asymptotic series.
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: x must be positive");
  double result = 0.0;
  while (x < 6.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  result += std::log(x) - 0.5 * inv;
  result -= inv2 * (1.0 / 12.0 -
                    inv2 * (1.0 / 120.0 -
                            inv2 * (1.0 / 252.0 -
                                    inv2 * (1.0 / 240.0 -
                                            inv2 * (1.0 / 132.0 -
                                                    inv2 * 691.0 / 32760.0)))));
  return result;
}

// psi'(x), needed as the derivative of digamma in backward passes.
inline double trigamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("trigamma: x must be positive");
  double result = 0.0;
  while (x < 6.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  double inv = 1.0 / x;
  double inv2 = inv * inv;
  result += inv * (1.0 + 0.5 * inv +
                   inv2 * (1.0 / 6.0 -
                           inv2 * (1.0 / 30.0 -
                                   inv2 * (1.0 / 42.0 - inv2 * 1.0 / 30.0))));
  return result;
}

// Regularized lower incomplete gamma P(shape, x): series for x < shape + 1,
// Lentz continued fraction otherwise.
inline double gamma_cdf(double x, double shape) {
  if (!(shape > 0.0)) throw std::domain_error("gamma_cdf: shape must be positive");
  if (x < 0.0) throw std::domain_error("gamma_cdf: x must be nonnegative");
  if (x == 0.0) return 0.0;
  const double lg = log_gamma(shape);
  if (x < shape + 1.0) {
    double ap = shape;
    double term = 1.0 / shape;
    double total = term;
    for (int n = 0; n < 10000; ++n) {
      ap += 1.0;
      term *= x / ap;
      total += term;
      if (std::fabs(term) < std::fabs(total) * 1e-16) break;
    }
    return total * std::exp(-x + shape * std::log(x) - lg);
  }
  // continued fraction for Q(shape, x)
  const double tiny = 1e-300;
  double b = x + 1.0 - shape;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 10000; ++i) {
    double an = -static_cast<double>(i) * (i - shape);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  double q = std::exp(-x + shape * std::log(x) - lg) * h;
  return 1.0 - q;
}

inline double gamma_log_pdf(double x, double shape) {
  if (!(x > 0.0)) throw std::domain_error("gamma_log_pdf: x must be positive");
  return (shape - 1.0) * std::log(x) - x - log_gamma(shape);
}

// dF(z; shape)/dshape by central differences with a relative step.
inline double gamma_cdf_shape_derivative(double z, double shape,
                                         double rel_step = 1e-4) {
  if (!(z > 0.0)) throw std::domain_error("gamma_cdf_shape_derivative: z must be positive");
  if (!(shape > 0.0))
    throw std::domain_error("gamma_cdf_shape_derivative: shape must be positive");
  double h = rel_step * std::max(1.0, shape);
  if (shape - h <= 0.0) h = 0.5 * shape;
  return (gamma_cdf(z, shape + h) - gamma_cdf(z, shape - h)) / (2.0 * h);
}

}  // namespace valen
