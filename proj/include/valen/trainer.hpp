#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "valen/data.hpp"
#include "valen/dirichlet.hpp"
#include "valen/graph.hpp"
#include "valen/matrix.hpp"
#include "valen/models.hpp"
#include "valen/objectives.hpp"
#include "valen/optim.hpp"
#include "valen/rng.hpp"

namespace valen {

enum class GraphRefresh { Once, PerEpoch };

struct TrainConfig {
  int warmup_epochs = 10;
  int total_epochs = 100;
  int batch_size = 256;  // <= 0 means full batch
  double lr_pred = 1e-2;
  double wd_pred = 1e-4;
  double lr_inf = 1e-2;
  double wd_inf = 1e-4;
  double lr_obs = 1e-2;
  double wd_obs = 1e-4;
  double lambda = 5.0;   // weight of the classifier-compatibility anchor
  double epsilon = 0.5;  // prior concentration; sparsity-inducing but not extreme
  int k = 3;              // k-NN graph
  int mc_samples = 1;
  uint64_t seed = 0;
  GraphRefresh graph_refresh = GraphRefresh::Once;
  int eval_every = 1;
  std::vector<int> pred_hidden;  // empty -> linear predictive model
  int gcn_hidden = 64;
  int obs_hidden = 64;

  void validate() const {
    if (warmup_epochs < 0 || total_epochs < warmup_epochs)
      throw std::invalid_argument("TrainConfig: need 0 <= warmup_epochs <= total_epochs");
    if (mc_samples < 1) throw std::invalid_argument("TrainConfig: mc_samples >= 1");
  }

  nlohmann::json to_json() const {
    return {{"warmup_epochs", warmup_epochs},
            {"total_epochs", total_epochs},
            {"batch_size", batch_size},
            {"lr_pred", lr_pred},
            {"wd_pred", wd_pred},
            {"lr_inf", lr_inf},
            {"wd_inf", wd_inf},
            {"lr_obs", lr_obs},
            {"wd_obs", wd_obs},
            {"lambda", lambda},
            {"epsilon", epsilon},
            {"k", k},
            {"mc_samples", mc_samples},
            {"seed", seed},
            {"graph_refresh", graph_refresh == GraphRefresh::Once ? "once" : "per_epoch"},
            {"eval_every", eval_every},
            {"pred_hidden", pred_hidden},
            {"gcn_hidden", gcn_hidden},
            {"obs_hidden", obs_hidden}};
  }
};

struct EpochMetrics {
  int epoch = 0;
  LossReport loss;
  double test_acc = std::numeric_limits<double>::quiet_NaN();
  double le_quality = std::numeric_limits<double>::quiet_NaN();
  double d_convergence = std::numeric_limits<double>::quiet_NaN();
};

struct TrainState {
  int epoch = 0;
  PredictiveModel predictive;
  InferenceModel inference;
  ObservationModel observation;
  Matrix phi;  // cached extracted features over the full training set
  std::optional<AffinityGraph> graph;
  std::optional<Matrix> current_d;   // full-set label distribution matrix
  std::optional<Matrix> previous_d;  // previous epoch, for the convergence metric
  std::vector<EpochMetrics> history;
  bool inf_lr_halved_this_epoch = false;
  double inf_lr_factor = 1.0;
};

struct EvalMetrics {
  double accuracy = 0.0;
  std::optional<double> le_quality;
};

// top-1 accuracy on a test split; LE quality is computed separately from
// the recovered distributions when hidden true labels exist.
inline EvalMetrics evaluate(PredictiveModel& model, const PllDataset& test) {
  if (!test.true_labels) throw std::invalid_argument("evaluate: test needs true labels");
  Matrix probs = model.predict(test.features);
  int correct = 0;
  for (int i = 0; i < test.n(); ++i)
    correct += argmax_row(probs, i) == (*test.true_labels)[i];
  return {test.n() ? static_cast<double>(correct) / test.n() : 0.0, std::nullopt};
}

inline double le_quality(const Matrix& d, const std::vector<int>& true_labels) {
  int correct = 0;
  for (int i = 0; i < d.rows; ++i) correct += argmax_row(d, i) == true_labels[i];
  return d.rows ? static_cast<double>(correct) / d.rows : 0.0;
}

// ||D_t - D_{t-1}||_F / n
inline double convergence_metric(const TrainState& state) {
  if (!state.current_d || !state.previous_d)
    throw std::logic_error("convergence_metric: need two epochs of D");
  Matrix diff = sub(*state.current_d, *state.previous_d);
  return std::sqrt(frob_norm_sq(diff)) / diff.rows;
}

namespace detail {

inline std::vector<std::vector<int>> make_batches(int n, int batch_size,
                                                  RngState& rng) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  shuffle_vec(order, rng);
  if (batch_size <= 0 || batch_size >= n) return {order};
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + start,
                         order.begin() + std::min(n, start + batch_size));
  return batches;
}

}  // namespace detail

class Trainer {
 public:
  Trainer(const PllDataset& train_set, TrainConfig config)
      : data_(train_set), config_(std::move(config)) {
    config_.validate();
    data_.validate();
  }

  TrainState& state() { return state_; }
  const TrainConfig& config() const { return config_; }

  void init_models() {
    RngState rng = derive_stream(config_.seed, "init");
    state_.predictive =
        PredictiveModel(data_.q(), data_.class_count, config_.pred_hidden);
    state_.predictive.init(rng);
    state_.inference = InferenceModel(state_.predictive.feature_dim(),
                                      data_.class_count, config_.gcn_hidden);
    state_.inference.init(rng);
    state_.observation =
        ObservationModel(data_.class_count, config_.obs_hidden, config_.obs_hidden);
    state_.observation.init(rng);
  }

  // warm-up: mini-batch optimization of the weighted minimal loss on the
  // predictive model only.
  void warmup() {
    RngState shuffle_rng = derive_stream(config_.seed, "warmup-shuffle");
    for (int e = 0; e < config_.warmup_epochs; ++e) {
      double loss = run_min_loss_epoch(shuffle_rng);
      if (!std::isfinite(loss))
        throw std::runtime_error("warmup: non-finite loss at epoch " + std::to_string(e));
      ++state_.epoch;
    }
  }

  // Extract Phi over the full training set and (re)build the affinity graph.
  void build_epoch_context() {
    state_.phi = state_.predictive.extract_features(data_.features);
    state_.graph = build_knn_graph(state_.phi, config_.k);
  }

  LossReport train_epoch(RngState& shuffle_rng, RngState& sample_rng) {
    if (!state_.graph) throw std::logic_error("train_epoch: epoch context not built");
    if (config_.graph_refresh == GraphRefresh::PerEpoch) build_epoch_context();
    state_.inf_lr_halved_this_epoch = false;

    auto batches = detail::make_batches(data_.n(), config_.batch_size, shuffle_rng);
    LossReport report;
    int counted = 0;
    for (const auto& idx : batches) {
      LossReport step = train_step(idx, sample_rng);
      if (step.components.empty()) continue;  // skipped batch
      for (const auto& [k, v] : step.components) report.components[k] += v;
      report.total += step.total;
      ++counted;
    }
    if (counted > 0) {
      report.total /= counted;
      for (auto& [_, v] : report.components) v /= counted;
    }

    // full-set recovered label distributions for diagnostics / risk re-use
    state_.previous_d = state_.current_d;
    state_.current_d = full_set_distribution();
    ++state_.epoch;
    return report;
  }

  // Full pipeline. Returns the metric history.
  std::vector<EpochMetrics> fit(const PllDataset* test = nullptr) {
    init_models();
    warmup();
    build_epoch_context();
    RngState shuffle_rng = derive_stream(config_.seed, "shuffle");
    RngState sample_rng = derive_stream(config_.seed, "sampling");
    for (int e = config_.warmup_epochs; e < config_.total_epochs; ++e) {
      EpochMetrics m;
      m.loss = train_epoch(shuffle_rng, sample_rng);
      m.epoch = state_.epoch;
      if (state_.previous_d) m.d_convergence = convergence_metric(state_);
      if (data_.true_labels)
        m.le_quality = le_quality(*state_.current_d, *data_.true_labels);
      if (test && config_.eval_every > 0 &&
          ((e + 1 - config_.warmup_epochs) % config_.eval_every == 0 ||
           e + 1 == config_.total_epochs))
        m.test_acc = evaluate(state_.predictive, *test).accuracy;
      state_.history.push_back(std::move(m));
    }
    return state_.history;
  }

  // No-label-enhancement baseline: the weighted minimal loss only, same
  // epoch budget and evaluation protocol.
  std::vector<EpochMetrics> fit_no_le(const PllDataset* test = nullptr) {
    init_models();
    RngState shuffle_rng = derive_stream(config_.seed, "warmup-shuffle");
    for (int e = 0; e < config_.total_epochs; ++e) {
      EpochMetrics m;
      double loss = run_min_loss_epoch(shuffle_rng);
      if (!std::isfinite(loss))
        throw std::runtime_error("fit_no_le: non-finite loss at epoch " +
                                 std::to_string(e));
      ++state_.epoch;
      m.epoch = state_.epoch;
      m.loss.total = loss;
      m.loss.components["min_loss"] = loss;
      if (test && config_.eval_every > 0 &&
          ((e + 1) % config_.eval_every == 0 || e + 1 == config_.total_epochs))
        m.test_acc = evaluate(state_.predictive, *test).accuracy;
      state_.history.push_back(std::move(m));
    }
    return state_.history;
  }

  Matrix full_set_distribution() {
    ad::Tape tape;
    TapeBinder binder;
    DirichletParams params =
        state_.inference.infer(tape, binder, state_.phi, data_.candidates, *state_.graph);
    return dirichlet_mean(params).dist;
  }

 private:
  double run_min_loss_epoch(RngState& shuffle_rng) {
    auto batches = detail::make_batches(data_.n(), config_.batch_size, shuffle_rng);
    double total = 0.0;
    for (const auto& idx : batches) {
      Matrix x = select_rows(data_.features, idx);
      Matrix cand = select_rows(data_.candidates, idx);
      Matrix zeta = candidate_confidence(state_.predictive.predict(x), cand);
      ad::Tape tape;
      TapeBinder binder;
      ad::Var lp = state_.predictive.log_probs(tape, binder, tape.constant(x));
      ad::Var loss = weighted_min_loss_node(tape, lp, zeta);
      total += tape.scalar(loss);
      tape.backward(loss);
      binder.collect(tape);
      adam_step(state_.predictive.params, config_.lr_pred, config_.wd_pred);
    }
    return total / batches.size();
  }

  LossReport train_step(const std::vector<int>& idx, RngState& sample_rng) {
    const double nb = static_cast<double>(idx.size());
    ad::Tape tape;
    TapeBinder binder;

    // full-set GCN forward, batch-row selection for the losses
    ad::Var phi = tape.constant(state_.phi);
    ad::Var logical = tape.constant(data_.candidates);
    ad::Var alpha_full =
        state_.inference.alphas(tape, binder, phi, logical, *state_.graph);
    ad::Var alpha = tape.select_rows(alpha_full, idx);

    Matrix cand_b = select_rows(data_.candidates, idx);
    Matrix adj_b = select_rows_cols(state_.graph->adjacency, idx);

    // analytic mean of the posterior (differentiable) for the compatibility
    // loss, detached copy for the risk weights
    ad::Var d_mean = tape.div_colvec(alpha, tape.row_sums(alpha));
    Matrix d_mean_detached = tape.val(d_mean);

    std::vector<ad::Var> d_samples, taus;
    for (int m = 0; m < config_.mc_samples; ++m) {
      ad::Var d = dirichlet_sample_node(tape, alpha, sample_rng);
      d_samples.push_back(d);
      taus.push_back(state_.observation.tau(tape, binder, d));
    }
    // graph penalty averaged per pair (combined with the 1/nb below) so it
    // stays comparable to the per-example terms at any batch size
    ad::Var recon =
        reconstruction_term_node(tape, cand_b, taus, adj_b, d_samples, 1.0 / nb);
    ad::Var kl = kl_to_prior_node(tape, alpha, config_.epsilon);

    Matrix x_b = select_rows(data_.features, idx);
    Matrix zeta = candidate_confidence(state_.predictive.predict(x_b), cand_b);
    ad::Var compat = compatibility_loss_node(tape, d_mean, zeta);

    ad::Var lp = state_.predictive.log_probs(tape, binder, tape.constant(x_b));
    ad::Var risk = risk_estimator_node(tape, lp, cand_b, d_mean_detached);

    // ELBO terms are per-example sums; scale to per-example means so the
    // mini-batch size does not change the balance against compat/risk
    ad::Var kl_s = tape.scale(kl, 1.0 / nb);
    ad::Var recon_s = tape.scale(recon, 1.0 / nb);
    ad::Var le = le_objective_node(tape, kl_s, recon_s, compat, config_.lambda);
    ad::Var total = tape.add(le, risk);

    if (!std::isfinite(tape.scalar(total))) {
      if (!state_.inf_lr_halved_this_epoch) {
        state_.inf_lr_factor *= 0.5;
        state_.inf_lr_halved_this_epoch = true;
      }
      std::fprintf(stderr, "train_step: non-finite loss, skipping batch (epoch %d)\n",
                   state_.epoch);
      return {};
    }

    tape.backward(total);
    binder.collect(tape);
    adam_step(state_.predictive.params, config_.lr_pred, config_.wd_pred);
    adam_step(state_.inference.params, config_.lr_inf * state_.inf_lr_factor,
              config_.wd_inf);
    adam_step(state_.observation.params, config_.lr_obs, config_.wd_obs);

    LossReport report;
    report.components["min_loss"] = 0.0;
    report.components["kl"] = tape.scalar(kl_s);
    report.components["recon"] = tape.scalar(recon_s);
    report.components["compat"] = tape.scalar(compat);
    report.components["risk"] = tape.scalar(risk);
    report.total = tape.scalar(total);
    return report;
  }

  PllDataset data_;
  TrainConfig config_;
  TrainState state_;
};

// --- checkpoint directory layout: config.json, models.bin, metrics.csv ----

namespace detail {

inline void atomic_write(const std::string& path,
                         const std::function<void(std::ofstream&)>& writer,
                         bool binary = false) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, binary ? std::ios::binary : std::ios::out);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    writer(out);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

// include_le=false drops the enhancement columns (ablation runs never fill
// them in)
inline void write_metrics_csv(const std::vector<EpochMetrics>& history,
                              const std::string& path, bool include_le = true) {
  detail::atomic_write(path, [&](std::ofstream& out) {
    if (include_le)
      out << "epoch,total,min_loss,kl,recon,compat,risk,test_acc,le_quality,"
             "d_convergence\n";
    else
      out << "epoch,total,min_loss,test_acc\n";
    out.precision(10);
    for (const auto& m : history) {
      auto comp = [&](const char* k) {
        auto it = m.loss.components.find(k);
        return it == m.loss.components.end() ? 0.0 : it->second;
      };
      out << m.epoch << "," << m.loss.total << "," << comp("min_loss") << ",";
      if (include_le)
        out << comp("kl") << "," << comp("recon") << "," << comp("compat") << ","
            << comp("risk") << ",";
      if (std::isfinite(m.test_acc)) out << m.test_acc;
      if (include_le) {
        out << ",";
        if (std::isfinite(m.le_quality)) out << m.le_quality;
        out << ",";
        if (std::isfinite(m.d_convergence)) out << m.d_convergence;
      }
      out << "\n";
    }
  });
}

inline void save_checkpoint(const std::string& dir, const TrainConfig& config,
                            TrainState& state, bool include_le = true) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["config"] = config.to_json();
  manifest["architecture"] = {{"pred_in", state.predictive.in_dim()},
                              {"pred_out", state.predictive.out_dim()},
                              {"pred_hidden", state.predictive.hidden()},
                              {"gcn_hidden", state.inference.hidden_size()},
                              {"phi_dim", state.inference.phi_dim()}};
  std::string bin_path = dir + "/models.bin";
  {
    std::string tmp = bin_path + ".tmp";
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    save_param_store(out, "pred", state.predictive.params, manifest);
    save_param_store(out, "inf", state.inference.params, manifest);
    save_param_store(out, "obs", state.observation.params, manifest);
    out.close();
    std::filesystem::rename(tmp, bin_path);
  }
  detail::atomic_write(dir + "/config.json",
                       [&](std::ofstream& out) { out << manifest.dump(2) << "\n"; });
  write_metrics_csv(state.history, dir + "/metrics.csv", include_le);
}

inline void load_checkpoint(const std::string& dir, TrainState& state) {
  std::ifstream jf(dir + "/config.json");
  if (!jf) throw std::runtime_error("load_checkpoint: missing config.json in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(jf);
  std::ifstream in(dir + "/models.bin", std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: missing models.bin in " + dir);
  load_param_store(in, "pred", state.predictive.params, manifest);
  load_param_store(in, "inf", state.inference.params, manifest);
  load_param_store(in, "obs", state.observation.params, manifest);
}

// Five-fold cross-validation harness. Returns per-fold test accuracies.
inline std::vector<double> run_cross_validation(const PllDataset& dataset,
                                                const TrainConfig& config,
                                                int folds = 5, bool no_le = false) {
  RngState fold_rng = derive_stream(config.seed, "folds");
  auto fold_idx = kfold_indices(dataset.n(), folds, fold_rng);
  std::vector<double> accs;
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train_idx, test_idx = fold_idx[f];
    for (int g = 0; g < folds; ++g)
      if (g != f) train_idx.insert(train_idx.end(), fold_idx[g].begin(), fold_idx[g].end());
    PllDataset train = dataset.subset(train_idx);
    PllDataset test = dataset.subset(test_idx);
    test.split_tag = "test";
    Trainer trainer(train, config);
    auto history = no_le ? trainer.fit_no_le(&test) : trainer.fit(&test);
    accs.push_back(evaluate(trainer.state().predictive, test).accuracy);
  }
  return accs;
}

}  // namespace valen
