#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "valen/matrix.hpp"
#include "valen/models.hpp"
#include "valen/optim.hpp"
#include "valen/rng.hpp"

namespace valen {

// Partially labeled dataset: features, binary candidate matrix (the logical
// label matrix), and optionally the hidden true labels for evaluation.
struct PllDataset {
  Matrix features;                        // n x q
  Matrix candidates;                      // n x c, entries {0,1}
  std::optional<std::vector<int>> true_labels;
  int class_count = 0;
  std::string split_tag = "train";

  int n() const { return features.rows; }
  int q() const { return features.cols; }

  void validate() const {
    if (candidates.rows != features.rows)
      throw std::invalid_argument("PllDataset: row count mismatch");
    if (candidates.cols != class_count)
      throw std::invalid_argument("PllDataset: class count mismatch");
    for (int i = 0; i < candidates.rows; ++i) {
      int ones = 0;
      for (int j = 0; j < candidates.cols; ++j) {
        double v = candidates(i, j);
        if (v != 0.0 && v != 1.0)
          throw std::invalid_argument("PllDataset: non-binary candidate entry at row " +
                                      std::to_string(i));
        ones += v == 1.0;
      }
      if (ones == 0)
        throw std::invalid_argument("PllDataset: empty candidate set at row " +
                                    std::to_string(i));
    }
    if (true_labels) {
      if (static_cast<int>(true_labels->size()) != features.rows)
        throw std::invalid_argument("PllDataset: true label count mismatch");
      for (int i = 0; i < features.rows; ++i) {
        int y = (*true_labels)[i];
        if (y < 0 || y >= class_count)
          throw std::invalid_argument("PllDataset: true label out of range at row " +
                                      std::to_string(i));
        if (candidates(i, y) != 1.0)
          throw std::invalid_argument(
              "PllDataset: candidate set omits true label at row " + std::to_string(i));
      }
    }
  }

  bool singleton_candidates() const {
    for (int i = 0; i < candidates.rows; ++i) {
      double s = 0.0;
      for (int j = 0; j < candidates.cols; ++j) s += candidates(i, j);
      if (s != 1.0) return false;
    }
    return true;
  }

  double avg_candidates() const {
    if (candidates.rows == 0) return 0.0;
    return sum(candidates) / candidates.rows;
  }

  PllDataset subset(const std::vector<int>& idx) const {
    PllDataset out;
    out.features = select_rows(features, idx);
    out.candidates = select_rows(candidates, idx);
    out.class_count = class_count;
    out.split_tag = split_tag;
    if (true_labels) {
      std::vector<int> t;
      t.reserve(idx.size());
      for (int i : idx) t.push_back((*true_labels)[i]);
      out.true_labels = std::move(t);
    }
    return out;
  }
};

struct CsvSchema {
  bool standardize = false;  // z-score per feature column
};

enum class CorruptionMode { Uniform, InstanceDependent };

struct CorruptionConfig {
  CorruptionMode mode = CorruptionMode::Uniform;
  double xi_uniform = 0.5;
  uint64_t seed = 0;
};

struct CorruptionReport {
  double avg_candidates = 0.0;
  std::vector<double> per_class_flip_rate;  // fraction of eligible flips realized
  double true_label_coverage = 0.0;         // must be 1.0

  nlohmann::json to_json() const {
    return {{"avg_candidates", avg_candidates},
            {"per_class_flip_rate", per_class_flip_rate},
            {"true_label_coverage", true_label_coverage}};
  }
};

// ---------------------------------------------------------------------------
// CSV format: header "f0,...,f{q-1},candidates,true"; candidates is a
// semicolon-separated list of zero-based class indices; true is a single
// index or empty.
// ---------------------------------------------------------------------------

inline PllDataset load_csv(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file");

  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) header.push_back(tok);
  }
  if (header.size() < 3 || header[header.size() - 2] != "candidates" ||
      header.back() != "true")
    throw std::runtime_error("load_csv: expected header f0,...,candidates,true");
  const int q = static_cast<int>(header.size()) - 2;

  std::vector<std::vector<double>> feats;
  std::vector<std::vector<int>> cand_lists;
  std::vector<int> trues;
  bool any_true = false;
  int max_class = -1;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::stringstream ss(line);
    std::string tok;
    std::vector<std::string> cells;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (line.back() == ',') cells.push_back("");
    if (static_cast<int>(cells.size()) != q + 2)
      throw std::runtime_error("load_csv: wrong column count at data row " +
                               std::to_string(row));
    std::vector<double> f(q);
    for (int j = 0; j < q; ++j) f[j] = std::stod(cells[j]);
    std::vector<int> cl;
    {
      std::stringstream cs(cells[q]);
      std::string c;
      while (std::getline(cs, c, ';')) {
        if (c.empty()) continue;
        size_t pos = 0;
        int v = std::stoi(c, &pos);
        if (pos != c.size() || v < 0)
          throw std::runtime_error("load_csv: non-binary candidate entry '" + c +
                                   "' at data row " + std::to_string(row));
        cl.push_back(v);
        max_class = std::max(max_class, v);
      }
    }
    if (cl.empty())
      throw std::runtime_error("load_csv: empty candidate set at data row " +
                               std::to_string(row));
    int t = -1;
    if (!cells[q + 1].empty()) {
      t = std::stoi(cells[q + 1]);
      any_true = true;
      max_class = std::max(max_class, t);
    }
    feats.push_back(std::move(f));
    cand_lists.push_back(std::move(cl));
    trues.push_back(t);
  }

  PllDataset ds;
  ds.class_count = max_class + 1;
  int n = static_cast<int>(feats.size());
  ds.features = Matrix(n, q);
  ds.candidates = Matrix(n, ds.class_count);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < q; ++j) ds.features(i, j) = feats[i][j];
    for (int c : cand_lists[i]) ds.candidates(i, c) = 1.0;
  }
  if (any_true) {
    for (int i = 0; i < n; ++i)
      if (trues[i] < 0)
        throw std::runtime_error("load_csv: missing true label at data row " +
                                 std::to_string(i + 1) +
                                 " while others have one");
    ds.true_labels = trues;
    for (int i = 0; i < n; ++i)
      if (ds.candidates(i, trues[i]) != 1.0)
        throw std::runtime_error("load_csv: candidate set omits true label at data row " +
                                 std::to_string(i + 1));
  }

  if (schema.standardize) {
    for (int j = 0; j < q; ++j) {
      double mean = 0.0;
      for (int i = 0; i < n; ++i) mean += ds.features(i, j);
      mean /= n;
      double var = 0.0;
      for (int i = 0; i < n; ++i) {
        double d = ds.features(i, j) - mean;
        var += d * d;
      }
      double sd = std::sqrt(var / std::max(1, n - 1));
      if (sd < 1e-12) sd = 1.0;
      for (int i = 0; i < n; ++i) ds.features(i, j) = (ds.features(i, j) - mean) / sd;
    }
  }

  ds.validate();
  return ds;
}

inline void save_csv(const PllDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_csv: cannot open " + path);
  out.precision(17);
  for (int j = 0; j < ds.q(); ++j) out << "f" << j << ",";
  out << "candidates,true\n";
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.q(); ++j) out << ds.features(i, j) << ",";
    bool first = true;
    for (int j = 0; j < ds.class_count; ++j)
      if (ds.candidates(i, j) == 1.0) {
        if (!first) out << ";";
        out << j;
        first = false;
      }
    out << ",";
    if (ds.true_labels) out << (*ds.true_labels)[i];
    out << "\n";
  }
}

// ---------------------------------------------------------------------------
// Corruption procedures
// ---------------------------------------------------------------------------

namespace detail {

inline CorruptionReport finish_report(const PllDataset& corrupted,
                                      const Matrix& flip_counts,
                                      const Matrix& eligible_counts) {
  CorruptionReport rep;
  rep.avg_candidates = corrupted.avg_candidates();
  rep.per_class_flip_rate.resize(corrupted.class_count);
  for (int j = 0; j < corrupted.class_count; ++j)
    rep.per_class_flip_rate[j] =
        eligible_counts(0, j) > 0 ? flip_counts(0, j) / eligible_counts(0, j) : 0.0;
  int covered = 0;
  for (int i = 0; i < corrupted.n(); ++i)
    covered += corrupted.candidates(i, (*corrupted.true_labels)[i]) == 1.0;
  rep.true_label_coverage = corrupted.n() ? static_cast<double>(covered) / corrupted.n() : 1.0;
  return rep;
}

}  // namespace detail

// Each incorrect label flips into the candidate set independently with
// probability xi; the true label is always retained.
inline std::pair<PllDataset, CorruptionReport> corrupt_uniform(const PllDataset& clean,
                                                               double xi,
                                                               RngState& rng) {
  if (!(xi >= 0.0 && xi <= 1.0)) throw std::invalid_argument("corrupt_uniform: bad xi");
  if (!clean.true_labels)
    throw std::invalid_argument("corrupt_uniform: clean dataset needs true labels");
  if (!clean.singleton_candidates())
    throw std::invalid_argument("corrupt_uniform: expected singleton candidate sets");
  PllDataset out = clean;
  Matrix flips(1, clean.class_count), eligible(1, clean.class_count);
  for (int i = 0; i < clean.n(); ++i) {
    int y = (*clean.true_labels)[i];
    for (int j = 0; j < clean.class_count; ++j) {
      if (j == y) continue;
      eligible(0, j) += 1.0;
      if (rng.bernoulli(xi)) {
        out.candidates(i, j) = 1.0;
        flips(0, j) += 1.0;
      }
    }
  }
  out.validate();
  return {out, detail::finish_report(out, flips, eligible)};
}

// Instance-dependent corruption: flip probability of each incorrect label is
// its clean-model confidence divided by the maximum confidence among the
// incorrect labels of that example.
inline std::pair<PllDataset, CorruptionReport> corrupt_instance_dependent(
    const PllDataset& clean, PredictiveModel& clean_model, RngState& rng) {
  if (!clean.true_labels)
    throw std::invalid_argument("corrupt_instance_dependent: need true labels");
  if (!clean.singleton_candidates())
    throw std::invalid_argument("corrupt_instance_dependent: expected singleton sets");
  Matrix probs = clean_model.predict(clean.features);
  if (probs.cols != clean.class_count)
    throw std::invalid_argument("corrupt_instance_dependent: model class count mismatch");
  PllDataset out = clean;
  Matrix flips(1, clean.class_count), eligible(1, clean.class_count);
  for (int i = 0; i < clean.n(); ++i) {
    int y = (*clean.true_labels)[i];
    double max_incorrect = 0.0;
    for (int j = 0; j < clean.class_count; ++j)
      if (j != y) max_incorrect = std::max(max_incorrect, probs(i, j));
    for (int j = 0; j < clean.class_count; ++j) {
      if (j == y) continue;
      eligible(0, j) += 1.0;
      // degenerate model output: retain only the true label
      double xi = max_incorrect > 0.0 ? probs(i, j) / max_incorrect : 0.0;
      if (rng.bernoulli(xi)) {
        out.candidates(i, j) = 1.0;
        flips(0, j) += 1.0;
      }
    }
  }
  out.validate();
  return {out, detail::finish_report(out, flips, eligible)};
}

// ---------------------------------------------------------------------------
// Clean-model training (supervised cross-entropy on the true labels) and
// synthetic data for tests/benchmarks.
// ---------------------------------------------------------------------------

struct CleanModelSpec {
  std::vector<int> hidden;  // empty -> linear
  int epochs = 50;
  int batch_size = 256;
  double lr = 1e-2;
  double weight_decay = 1e-4;
};

inline PredictiveModel train_clean_model(const PllDataset& clean,
                                         const CleanModelSpec& spec, RngState& rng) {
  if (!clean.true_labels)
    throw std::invalid_argument("train_clean_model: need true labels");
  PredictiveModel model(clean.q(), clean.class_count, spec.hidden);
  model.init(rng);
  Matrix onehot(clean.n(), clean.class_count);
  for (int i = 0; i < clean.n(); ++i) onehot(i, (*clean.true_labels)[i]) = 1.0;

  std::vector<int> order(clean.n());
  for (int i = 0; i < clean.n(); ++i) order[i] = i;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle_vec(order, rng);
    for (int start = 0; start < clean.n(); start += spec.batch_size) {
      int end = std::min(clean.n(), start + spec.batch_size);
      std::vector<int> idx(order.begin() + start, order.begin() + end);
      ad::Tape tape;
      TapeBinder binder;
      ad::Var x = tape.constant(select_rows(clean.features, idx));
      ad::Var lp = model.log_probs(tape, binder, x);
      Matrix w = scaled(select_rows(onehot, idx), -1.0 / static_cast<double>(idx.size()));
      ad::Var loss = tape.dot_const(lp, std::move(w));
      if (!std::isfinite(tape.scalar(loss)))
        throw std::runtime_error("train_clean_model: non-finite loss at epoch " +
                                 std::to_string(epoch));
      tape.backward(loss);
      binder.collect(tape);
      adam_step(model.params, spec.lr, spec.weight_decay);
    }
  }
  return model;
}

// Gaussian blobs with singleton candidate sets (clean supervised data).
inline PllDataset make_blobs(const std::vector<std::vector<double>>& centers,
                             int per_class, double stddev, RngState& rng) {
  int c = static_cast<int>(centers.size());
  int dim = static_cast<int>(centers[0].size());
  int n = c * per_class;
  PllDataset ds;
  ds.class_count = c;
  ds.features = Matrix(n, dim);
  ds.candidates = Matrix(n, c);
  std::vector<int> labels(n);
  int i = 0;
  for (int k = 0; k < c; ++k)
    for (int s = 0; s < per_class; ++s, ++i) {
      for (int j = 0; j < dim; ++j)
        ds.features(i, j) = centers[k][j] + stddev * rng.normal();
      ds.candidates(i, k) = 1.0;
      labels[i] = k;
    }
  ds.true_labels = std::move(labels);
  ds.validate();
  return ds;
}

inline std::vector<std::vector<int>> kfold_indices(int n, int folds, RngState& rng) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  shuffle_vec(order, rng);
  std::vector<std::vector<int>> out(folds);
  for (int i = 0; i < n; ++i) out[i % folds].push_back(order[i]);
  return out;
}

}  // namespace valen
