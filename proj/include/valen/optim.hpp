#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>

#include "valen/autodiff.hpp"
#include "valen/matrix.hpp"

namespace valen {

// Named parameter tensors with paired gradient buffers and Adam moments.
// std::map keeps iteration order deterministic.
struct ParamStore {
  struct Entry {
    Matrix value;
    Matrix grad;
    Matrix m;
    Matrix v;
  };

  std::map<std::string, Entry> params;
  long step_count = 0;

  Matrix& add(const std::string& name, Matrix init) {
    auto [it, inserted] = params.emplace(
        name, Entry{init, Matrix(init.rows, init.cols), Matrix(init.rows, init.cols),
                    Matrix(init.rows, init.cols)});
    if (!inserted) throw std::invalid_argument("ParamStore: duplicate name " + name);
    return it->second.value;
  }

  Entry& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end())
      throw std::out_of_range("ParamStore: unknown parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, e] : params)
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& [_, e] : params) n += e.value.size();
    return n;
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled-weight-decay Adam. Gradient buffers are zeroed after the step.
inline void adam_step(ParamStore& store, double lr, double weight_decay,
                      const AdamConfig& cfg = {}) {
  store.step_count += 1;
  const double t = static_cast<double>(store.step_count);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, e] : store.params) {
    for (size_t i = 0; i < e.grad.size(); ++i)
      if (!std::isfinite(e.grad.data[i]))
        throw std::runtime_error("adam_step: non-finite gradient in parameter " + name);
    for (size_t i = 0; i < e.value.size(); ++i) {
      double g = e.grad.data[i];
      e.value.data[i] -= lr * weight_decay * e.value.data[i];
      e.m.data[i] = cfg.beta1 * e.m.data[i] + (1.0 - cfg.beta1) * g;
      e.v.data[i] = cfg.beta2 * e.v.data[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = e.m.data[i] / bc1;
      double vhat = e.v.data[i] / bc2;
      e.value.data[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }
}

// Binds ParamStore entries to tape leaves and copies tape gradients back
// after backward(). One binder per forward pass.
struct TapeBinder {
  std::vector<std::pair<ad::Var, ParamStore::Entry*>> bound;

  ad::Var bind(ad::Tape& tape, ParamStore& store, const std::string& name) {
    ParamStore::Entry& e = store.at(name);
    ad::Var v = tape.leaf(e.value);
    bound.emplace_back(v, &e);
    return v;
  }

  // read-only binding: no gradients flow
  ad::Var bind_const(ad::Tape& tape, ParamStore& store, const std::string& name) {
    return tape.constant(store.at(name).value);
  }

  void collect(const ad::Tape& tape) {
    for (auto& [v, e] : bound) {
      const Matrix& g = tape.grad(v);
      for (size_t i = 0; i < g.size(); ++i) e->grad.data[i] += g.data[i];
    }
  }
};

// f(store, compute_grads): evaluates the scalar loss; when compute_grads is
// true it must also accumulate analytic gradients into the store (grads are
// zeroed here beforehand). Returns the max relative disagreement with
// central differences.
inline double grad_check(
    const std::function<double(ParamStore&, bool)>& f, ParamStore& store,
    double eps = 1e-5) {
  store.zero_grad();
  f(store, true);
  std::map<std::string, Matrix> analytic;
  for (auto& [name, e] : store.params) analytic[name] = e.grad;
  double worst = 0.0;
  for (auto& [name, e] : store.params) {
    for (size_t i = 0; i < e.value.size(); ++i) {
      double saved = e.value.data[i];
      e.value.data[i] = saved + eps;
      double fp = f(store, false);
      e.value.data[i] = saved - eps;
      double fm = f(store, false);
      e.value.data[i] = saved;
      double numeric = (fp - fm) / (2.0 * eps);
      double err = std::fabs(analytic[name].data[i] - numeric) /
                   std::max(1.0, std::fabs(numeric));
      worst = std::max(worst, err);
    }
  }
  store.zero_grad();
  return worst;
}

}  // namespace valen
