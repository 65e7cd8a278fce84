#pragma once

#include <cmath>
#include <map>
#include <string>

#include "valen/autodiff.hpp"
#include "valen/dirichlet.hpp"
#include "valen/matrix.hpp"

namespace valen {

// Per-step loss breakdown; total is the configured weighted combination of
// the components present.
struct LossReport {
  double total = 0.0;
  std::map<std::string, double> components;
};

// zeta_j(x_i) = f_j / sum_{k in S_i} f_k on candidates, 0 elsewhere.
// Falls back to uniform over S_i when the candidate mass underflows.
inline Matrix candidate_confidence(const Matrix& preds, const Matrix& candidates) {
  check_same_shape(preds, candidates, "candidate_confidence");
  Matrix zeta(preds.rows, preds.cols);
  for (int i = 0; i < preds.rows; ++i) {
    double mass = 0.0;
    int cset = 0;
    for (int j = 0; j < preds.cols; ++j)
      if (candidates(i, j) == 1.0) {
        mass += preds(i, j);
        ++cset;
      }
    if (cset == 0)
      throw std::invalid_argument("candidate_confidence: empty candidate row " +
                                  std::to_string(i));
    for (int j = 0; j < preds.cols; ++j)
      if (candidates(i, j) == 1.0)
        zeta(i, j) = mass < 1e-12 ? 1.0 / cset : preds(i, j) / mass;
  }
  return zeta;
}

// Candidate weights from a (detached) label distribution:
// w_ij = d_ij / sum_{k in S_i} d_ik on candidates, uniform fallback.
inline Matrix candidate_weights_from_distribution(const Matrix& d,
                                                  const Matrix& candidates) {
  return candidate_confidence(d, candidates);
}

// --- tape-level objectives -------------------------------------------------
// Each objective has a tape form (the training path) and a plain wrapper
// that evaluates it on raw matrices for reporting and tests.

// (1/n) sum_i sum_{j in S_i} zeta_ij * CE(f(x_i), e_j) with zeta detached.
inline ad::Var weighted_min_loss_node(ad::Tape& tape, ad::Var log_preds,
                                      const Matrix& zeta) {
  const Matrix& lp = tape.val(log_preds);
  check_same_shape(lp, zeta, "weighted_min_loss");
  return tape.dot_const(log_preds, scaled(zeta, -1.0 / lp.rows));
}

inline double weighted_min_loss(const Matrix& preds, const Matrix& candidates) {
  Matrix zeta = candidate_confidence(preds, candidates);
  double loss = 0.0;
  for (int i = 0; i < preds.rows; ++i)
    for (int j = 0; j < preds.cols; ++j)
      if (zeta(i, j) > 0.0) loss -= zeta(i, j) * std::log(preds(i, j));
  return loss / preds.rows;
}

// MC reconstruction log-likelihood (higher is better):
//   sum (1-l) ln(1-tau) + sum l ln tau - graph_weight * ||A - sigmoid(D D^T)||_F^2
// averaged over the M samples provided. graph_weight rebalances the pairwise
// graph penalty (n^2 terms) against the per-example Bernoulli sums.
inline ad::Var reconstruction_term_node(ad::Tape& tape, const Matrix& logical,
                                        const std::vector<ad::Var>& taus,
                                        const Matrix& adjacency,
                                        const std::vector<ad::Var>& d_samples,
                                        double graph_weight = 1.0) {
  if (taus.empty() || taus.size() != d_samples.size())
    throw std::invalid_argument("reconstruction_term: need matching tau/d samples");
  Matrix ones_minus_l = map(logical, [](double v) { return 1.0 - v; });
  ad::Var total = tape.constant(Matrix::scalar(0.0));
  for (size_t m = 0; m < taus.size(); ++m) {
    const Matrix& tau_v = tape.val(taus[m]);
    check_same_shape(tau_v, logical, "reconstruction_term");
    for (double t : tau_v.data)
      if (!(t > 0.0 && t < 1.0))
        throw std::invalid_argument("reconstruction_term: tau outside (0,1)");
    ad::Var bern_pos = tape.dot_const(tape.log(taus[m]), logical);
    ad::Var one_minus_tau = tape.add_scalar(tape.scale(taus[m], -1.0), 1.0);
    ad::Var bern_neg = tape.dot_const(tape.log(one_minus_tau), ones_minus_l);
    ad::Var gram = tape.sigmoid(tape.matmul_nt(d_samples[m], d_samples[m]));
    ad::Var graph_term = tape.scale(tape.frob_sq_diff(adjacency, gram), graph_weight);
    ad::Var sample_val = tape.sub(tape.add(bern_pos, bern_neg), graph_term);
    total = tape.add(total, sample_val);
  }
  return tape.scale(total, 1.0 / static_cast<double>(taus.size()));
}

inline double reconstruction_term(const Matrix& logical, const Matrix& tau,
                                  const Matrix& adjacency, const Matrix& d_sample,
                                  int mc_samples = 1) {
  (void)mc_samples;  // single provided sample: the M-average of one term
  ad::Tape tape;
  ad::Var t = tape.constant(tau);
  ad::Var d = tape.constant(d_sample);
  return tape.scalar(reconstruction_term_node(tape, logical, {t}, adjacency, {d}));
}

// L_o = -(1/n) sum_i sum_j zeta_ij ln d_ij, with d floored inside the log.
inline ad::Var compatibility_loss_node(ad::Tape& tape, ad::Var d, const Matrix& zeta) {
  const Matrix& dv = tape.val(d);
  check_same_shape(dv, zeta, "compatibility_loss");
  return tape.dot_const(tape.log_floored(d, 1e-12), scaled(zeta, -1.0 / dv.rows));
}

inline double compatibility_loss(const LabelDistributionMatrix& d, const Matrix& zeta) {
  ad::Tape tape;
  return tape.scalar(compatibility_loss_node(tape, tape.constant(d.dist), zeta));
}

// L_LE = lambda * L_o - (recon - kl)
inline double le_objective(double kl, double recon, double compat, double lambda) {
  return lambda * compat - (recon - kl);
}

inline ad::Var le_objective_node(ad::Tape& tape, ad::Var kl, ad::Var recon,
                                 ad::Var compat, double lambda) {
  return tape.add(tape.scale(compat, lambda), tape.sub(kl, recon));
}

// Risk estimator: (1/n) sum_i sum_{j in S_i} w_ij * CE(f(x_i), e_j), with
// w_ij the candidate-renormalized (detached) label distribution weights.
inline ad::Var risk_estimator_node(ad::Tape& tape, ad::Var log_preds,
                                   const Matrix& candidates, const Matrix& d_detached) {
  Matrix w = candidate_weights_from_distribution(d_detached, candidates);
  const Matrix& lp = tape.val(log_preds);
  check_same_shape(lp, w, "risk_estimator");
  return tape.dot_const(log_preds, scaled(w, -1.0 / lp.rows));
}

inline double risk_estimator(const Matrix& preds, const Matrix& candidates,
                             const LabelDistributionMatrix& d) {
  Matrix w = candidate_weights_from_distribution(d.dist, candidates);
  double loss = 0.0;
  for (int i = 0; i < preds.rows; ++i)
    for (int j = 0; j < preds.cols; ++j)
      if (w(i, j) > 0.0) loss -= w(i, j) * std::log(preds(i, j));
  return loss / preds.rows;
}

}  // namespace valen
