#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "valen/autodiff.hpp"
#include "valen/dirichlet.hpp"
#include "valen/graph.hpp"
#include "valen/matrix.hpp"
#include "valen/optim.hpp"
#include "valen/rng.hpp"

namespace valen {

namespace detail {

// Kaiming-uniform for ReLU layers: bound sqrt(6 / fan_in)
inline Matrix kaiming_uniform(int fan_in, int fan_out, RngState& rng) {
  double bound = std::sqrt(6.0 / fan_in);
  Matrix w(fan_in, fan_out);
  for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

// Xavier-uniform for output layers: bound sqrt(6 / (fan_in + fan_out))
inline Matrix xavier_uniform(int fan_in, int fan_out, RngState& rng) {
  double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (double& v : w.data) v = (2.0 * rng.uniform() - 1.0) * bound;
  return w;
}

}  // namespace detail

// Softmax classifier: linear when hidden is empty, otherwise an MLP with
// ReLU activations. The penultimate layer defines the extracted features
// (identity for the linear case).
class PredictiveModel {
 public:
  ParamStore params;

  PredictiveModel() = default;
  PredictiveModel(int in_dim, int out_dim, std::vector<int> hidden)
      : in_dim_(in_dim), out_dim_(out_dim), hidden_(std::move(hidden)) {}

  void init(RngState& rng) {
    params = ParamStore();
    int prev = in_dim_;
    for (size_t l = 0; l < hidden_.size(); ++l) {
      params.add(layer_name("W", l), detail::kaiming_uniform(prev, hidden_[l], rng));
      params.add(layer_name("b", l), Matrix(1, hidden_[l]));
      prev = hidden_[l];
    }
    params.add("out.W", detail::xavier_uniform(prev, out_dim_, rng));
    params.add("out.b", Matrix(1, out_dim_));
  }

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  int feature_dim() const { return hidden_.empty() ? in_dim_ : hidden_.back(); }

  // tape forward to logits; trainable iff train=true
  ad::Var logits(ad::Tape& tape, TapeBinder& binder, ad::Var x, bool train = true) {
    ad::Var h = features(tape, binder, x, train);
    ad::Var w = bindp(tape, binder, "out.W", train);
    ad::Var b = bindp(tape, binder, "out.b", train);
    return tape.add_rowvec(tape.matmul(h, w), b);
  }

  ad::Var log_probs(ad::Tape& tape, TapeBinder& binder, ad::Var x, bool train = true) {
    return tape.log_softmax_rows(logits(tape, binder, x, train));
  }

  // penultimate activations (raw input for the linear model)
  ad::Var features(ad::Tape& tape, TapeBinder& binder, ad::Var x, bool train = true) {
    ad::Var h = x;
    for (size_t l = 0; l < hidden_.size(); ++l) {
      ad::Var w = bindp(tape, binder, layer_name("W", l), train);
      ad::Var b = bindp(tape, binder, layer_name("b", l), train);
      h = tape.relu(tape.add_rowvec(tape.matmul(h, w), b));
    }
    return h;
  }

  // plain forward: softmax probabilities, rows sum to 1
  Matrix predict(const Matrix& x) {
    if (x.cols != in_dim_)
      throw std::invalid_argument("predict: expected " + std::to_string(in_dim_) +
                                  " feature columns");
    ad::Tape tape;
    TapeBinder binder;
    ad::Var lp = log_probs(tape, binder, tape.constant(x), false);
    return map(tape.val(lp), [](double v) { return std::exp(v); });
  }

  Matrix extract_features(const Matrix& x) {
    ad::Tape tape;
    TapeBinder binder;
    ad::Var f = features(tape, binder, tape.constant(x), false);
    return tape.val(f);
  }

 private:
  static std::string layer_name(const char* kind, size_t l) {
    return "h" + std::to_string(l) + "." + kind;
  }
  ad::Var bindp(ad::Tape& tape, TapeBinder& binder, const std::string& name,
                bool train) {
    return train ? binder.bind(tape, params, name)
                 : binder.bind_const(tape, params, name);
  }

  int in_dim_ = 0;
  int out_dim_ = 0;
  std::vector<int> hidden_;
};

// Two-layer GCN mapping [Phi ; L] and the normalized adjacency to Dirichlet
// concentrations: alpha = softplus(At ReLU(At Z W0) W1) + floor.
class InferenceModel {
 public:
  ParamStore params;

  InferenceModel() = default;
  InferenceModel(int phi_dim, int class_count, int hidden = 64)
      : phi_dim_(phi_dim), class_count_(class_count), hidden_(hidden) {}

  void init(RngState& rng) {
    params = ParamStore();
    params.add("W0", detail::kaiming_uniform(phi_dim_ + class_count_, hidden_, rng));
    params.add("W1", detail::xavier_uniform(hidden_, class_count_, rng));
  }

  int hidden_size() const { return hidden_; }
  int phi_dim() const { return phi_dim_; }

  ad::Var alphas(ad::Tape& tape, TapeBinder& binder, ad::Var phi, ad::Var logical,
                 const AffinityGraph& graph, bool train = true) {
    if (tape.val(phi).cols != phi_dim_)
      throw std::invalid_argument("infer_alphas: feature dim mismatch");
    if (tape.val(logical).cols != class_count_)
      throw std::invalid_argument("infer_alphas: class count mismatch");
    if (tape.val(phi).rows != graph.normalized.rows)
      throw std::invalid_argument("infer_alphas: graph size mismatch");
    ad::Var at = tape.constant(graph.normalized);
    ad::Var z = tape.concat_cols(phi, logical);
    ad::Var w0 = train ? binder.bind(tape, params, "W0")
                       : binder.bind_const(tape, params, "W0");
    ad::Var w1 = train ? binder.bind(tape, params, "W1")
                       : binder.bind_const(tape, params, "W1");
    ad::Var h = tape.relu(tape.matmul(tape.matmul(at, z), w0));
    ad::Var gcn = tape.matmul(tape.matmul(at, h), w1);
    return tape.add_scalar(tape.softplus(gcn), kAlphaFloor);
  }

  DirichletParams infer(ad::Tape& tape, TapeBinder& binder, const Matrix& phi,
                        const Matrix& logical, const AffinityGraph& graph) {
    ad::Var a = alphas(tape, binder, tape.constant(phi), tape.constant(logical),
                       graph, false);
    return DirichletParams{tape.val(a)};
  }

 private:
  int phi_dim_ = 0;
  int class_count_ = 0;
  int hidden_ = 64;
};

// Three-layer MLP with sigmoid output: maps a sampled label distribution to
// per-label Bernoulli probabilities tau in (0,1)^c.
class ObservationModel {
 public:
  ParamStore params;

  ObservationModel() = default;
  ObservationModel(int class_count, int h1 = 64, int h2 = 64)
      : class_count_(class_count), h1_(h1), h2_(h2) {}

  void init(RngState& rng) {
    params = ParamStore();
    params.add("l0.W", detail::kaiming_uniform(class_count_, h1_, rng));
    params.add("l0.b", Matrix(1, h1_));
    params.add("l1.W", detail::kaiming_uniform(h1_, h2_, rng));
    params.add("l1.b", Matrix(1, h2_));
    params.add("l2.W", detail::xavier_uniform(h2_, class_count_, rng));
    params.add("l2.b", Matrix(1, class_count_));
  }

  ad::Var tau(ad::Tape& tape, TapeBinder& binder, ad::Var d, bool train = true) {
    auto bindp = [&](const std::string& name) {
      return train ? binder.bind(tape, params, name)
                   : binder.bind_const(tape, params, name);
    };
    ad::Var h = tape.relu(tape.add_rowvec(tape.matmul(d, bindp("l0.W")), bindp("l0.b")));
    h = tape.relu(tape.add_rowvec(tape.matmul(h, bindp("l1.W")), bindp("l1.b")));
    return tape.sigmoid(tape.add_rowvec(tape.matmul(h, bindp("l2.W")), bindp("l2.b")));
  }

 private:
  int class_count_ = 0;
  int h1_ = 64;
  int h2_ = 64;
};

// --- checkpoint serialization: flat named-tensor binary + JSON manifest ---

inline void save_param_store(std::ofstream& out, const std::string& prefix,
                             const ParamStore& store, nlohmann::json& manifest) {
  for (const auto& [name, e] : store.params) {
    std::string full = prefix + "." + name;
    manifest["tensors"][full] = {e.value.rows, e.value.cols};
    out.write(reinterpret_cast<const char*>(e.value.data.data()),
              static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  }
}

inline void load_param_store(std::ifstream& in, const std::string& prefix,
                             ParamStore& store, const nlohmann::json& manifest) {
  for (auto& [name, e] : store.params) {
    std::string full = prefix + "." + name;
    if (!manifest["tensors"].contains(full))
      throw std::runtime_error("checkpoint missing tensor " + full);
    auto shape = manifest["tensors"][full];
    if (shape[0] != e.value.rows || shape[1] != e.value.cols)
      throw std::runtime_error("checkpoint shape mismatch for " + full);
    in.read(reinterpret_cast<char*>(e.value.data.data()),
            static_cast<std::streamsize>(e.value.size() * sizeof(double)));
  }
}

}  // namespace valen
