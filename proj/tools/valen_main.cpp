// Batch experimentation tool: corrupt clean datasets into partially labeled
// versions, train / evaluate models, and run numerical verification oracles.
//
// Exit codes: 0 success, 2 validation failure, 3 numerical failure.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "valen/valen.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

// thrown by paths that detect a numerical (not input) problem
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string output_root() {
  const char* env = std::getenv("VALEN_OUTPUT_ROOT");
  return env && *env ? env : ".";
}

// ---------------------------------------------------------------------------
// corrupt
// ---------------------------------------------------------------------------

struct CorruptArgs {
  std::string input, output, report;
  std::string mode = "uniform";
  double xi = 0.5;
  uint64_t seed = 0;
  bool standardize = false;
  int clean_epochs = 200;
  double clean_lr = 0.05;
  std::vector<int> clean_hidden;
};

int run_corrupt(const CorruptArgs& a) {
  valen::CsvSchema schema{a.standardize};
  valen::PllDataset clean = valen::load_csv(a.input, schema);
  if (!clean.true_labels)
    throw std::invalid_argument("corrupt: input has no true-label column");

  valen::RngState rng = valen::derive_stream(a.seed, "corruption");
  std::pair<valen::PllDataset, valen::CorruptionReport> result = [&] {
    if (a.mode == "uniform") return valen::corrupt_uniform(clean, a.xi, rng);
    // instance mode: train the clean model first, cache it next to the output
    valen::CleanModelSpec spec;
    spec.hidden = a.clean_hidden;
    spec.epochs = a.clean_epochs;
    spec.lr = a.clean_lr;
    valen::RngState model_rng = valen::derive_stream(a.seed, "clean-model");
    valen::PredictiveModel model = valen::train_clean_model(clean, spec, model_rng);
    nlohmann::json manifest;
    manifest["architecture"] = {{"in", model.in_dim()},
                                {"out", model.out_dim()},
                                {"hidden", model.hidden()}};
    {
      std::ofstream bin(a.output + ".clean_model.bin", std::ios::binary);
      valen::save_param_store(bin, "clean", model.params, manifest);
    }
    {
      std::ofstream mf(a.output + ".clean_model.json");
      mf << manifest.dump(2) << "\n";
    }
    return valen::corrupt_instance_dependent(clean, model, rng);
  }();

  valen::save_csv(result.first, a.output);
  std::string report_path = a.report.empty() ? a.output + ".report.json" : a.report;
  {
    std::ofstream rf(report_path);
    if (!rf) throw std::invalid_argument("corrupt: cannot open " + report_path);
    rf << result.second.to_json().dump(2) << "\n";
  }
  std::cout << "wrote " << a.output << " (avg candidates "
            << result.second.avg_candidates << ", coverage "
            << result.second.true_label_coverage << ")\n";
  if (result.second.true_label_coverage != 1.0)
    throw NumericalFailure("corrupt: true-label coverage below 1");
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, test, out;
  bool standardize = false;
  bool ablate_no_le = false;
  std::string graph_refresh = "once";
  valen::TrainConfig cfg;
};

int run_train(const TrainArgs& a) {
  valen::TrainConfig cfg = a.cfg;
  cfg.graph_refresh = a.graph_refresh == "per_epoch" ? valen::GraphRefresh::PerEpoch
                                                     : valen::GraphRefresh::Once;
  cfg.validate();
  valen::CsvSchema schema{a.standardize};
  valen::PllDataset train = valen::load_csv(a.data, schema);
  std::optional<valen::PllDataset> test;
  if (!a.test.empty()) {
    test = valen::load_csv(a.test, schema);
    test->split_tag = "test";
    if (test->class_count != train.class_count)
      throw std::invalid_argument("train: class count mismatch between splits");
  }

  std::string out_dir = a.out.empty() ? output_root() + "/run" : a.out;
  std::filesystem::create_directories(out_dir);

  valen::Trainer trainer(train, cfg);
  std::vector<valen::EpochMetrics> history;
  try {
    history = a.ablate_no_le ? trainer.fit_no_le(test ? &*test : nullptr)
                             : trainer.fit(test ? &*test : nullptr);
  } catch (const std::runtime_error& e) {
    throw NumericalFailure(e.what());
  }
  valen::save_checkpoint(out_dir, cfg, trainer.state(), !a.ablate_no_le);

  std::cout << "checkpoint: " << out_dir << "\n";
  if (!history.empty()) {
    std::cout << "final train loss: " << history.back().loss.total << "\n";
    if (std::isfinite(history.back().test_acc))
      std::cout << "final test accuracy: " << history.back().test_acc << "\n";
    if (std::isfinite(history.back().le_quality))
      std::cout << "final distribution quality: " << history.back().le_quality << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data;
  bool standardize = false;
};

int run_eval(const EvalArgs& a) {
  std::ifstream jf(a.checkpoint + "/config.json");
  if (!jf) throw std::invalid_argument("eval: missing config.json in " + a.checkpoint);
  nlohmann::json manifest = nlohmann::json::parse(jf);
  const auto& arch = manifest["architecture"];

  valen::TrainState state;
  state.predictive = valen::PredictiveModel(arch["pred_in"], arch["pred_out"],
                                            arch["pred_hidden"].get<std::vector<int>>());
  state.inference = valen::InferenceModel(arch["phi_dim"], arch["pred_out"],
                                          arch["gcn_hidden"]);
  int obs_hidden = manifest["config"]["obs_hidden"];
  state.observation = valen::ObservationModel(arch["pred_out"], obs_hidden, obs_hidden);
  valen::RngState rng(0);
  state.predictive.init(rng);
  state.inference.init(rng);
  state.observation.init(rng);
  valen::load_checkpoint(a.checkpoint, state);

  valen::PllDataset test = valen::load_csv(a.data, valen::CsvSchema{a.standardize});
  valen::EvalMetrics m = valen::evaluate(state.predictive, test);
  std::cout << "accuracy: " << m.accuracy << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// verify: self-contained numerical oracles
// ---------------------------------------------------------------------------

// Gamma quantile by Newton iteration on the CDF; independent of the
// implicit-gradient code path it is used to check.
double gamma_quantile(double u, double shape, double z0) {
  double z = z0;
  for (int it = 0; it < 200; ++it) {
    double f = valen::gamma_cdf(z, shape) - u;
    double pdf = std::exp(valen::gamma_log_pdf(z, shape));
    double step = f / std::max(pdf, 1e-300);
    step = std::max(-0.5 * z, std::min(0.5 * z, step));
    z -= step;
    if (std::fabs(step) < 1e-14 * std::max(1.0, z)) break;
  }
  return z;
}

struct OracleResult {
  std::string name;
  double tolerance;
  double achieved;  // must stay below tolerance
};

// Analytic prior KL against a Monte-Carlo estimate, reported in standard
// errors of the estimate.
OracleResult oracle_kl(bool inject_fault) {
  valen::RngState rng(12345);
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    int c = 2 + trial;
    valen::Matrix alpha(1, c);
    for (int j = 0; j < c; ++j) alpha(0, j) = 0.3 + 2.5 * rng.uniform();
    valen::DirichletParams p{alpha};
    double eps = 0.05 + 0.5 * rng.uniform();
    double analytic = valen::kl_dirichlet_to_prior(p, valen::DirichletPrior{eps});
    if (inject_fault) analytic += 0.25;

    const int trials = 40000;
    double acc = 0.0, acc2 = 0.0;
    for (int t = 0; t < trials; ++t) {
      auto d = valen::sample_dirichlet(p, rng);
      double sum_a = 0.0, lq = 0.0, lp = 0.0;
      for (int j = 0; j < c; ++j) sum_a += alpha(0, j);
      lq = valen::log_gamma(sum_a);
      lp = valen::log_gamma(c * eps);
      for (int j = 0; j < c; ++j) {
        double dj = std::max(d.dist(0, j), 1e-300);
        lq += -valen::log_gamma(alpha(0, j)) + (alpha(0, j) - 1.0) * std::log(dj);
        lp += -valen::log_gamma(eps) + (eps - 1.0) * std::log(dj);
      }
      double v = lq - lp;
      acc += v;
      acc2 += v * v;
    }
    double mean = acc / trials;
    double se = std::sqrt(std::max(acc2 / trials - mean * mean, 0.0) / trials);
    worst = std::max(worst, std::fabs(analytic - mean) / std::max(se, 1e-12));
  }
  return {"kl", 4.0, worst};
}

// Implicit sample-path derivative against finite differences of the quantile
// function at the fixed underlying uniform.
OracleResult oracle_implicit_grad(bool inject_fault) {
  double worst = 0.0;
  for (double shape : {0.5, 0.9, 1.7, 4.0, 9.0}) {
    valen::RngState rng(77 + static_cast<uint64_t>(shape * 100));
    double z = rng.gamma(shape);
    double dzda = -valen::gamma_cdf_shape_derivative(z, shape) /
                  std::exp(valen::gamma_log_pdf(z, shape));
    if (inject_fault) dzda *= 1.05;
    double u = valen::gamma_cdf(z, shape);
    double h = 1e-5 * std::max(1.0, shape);
    double fd = (gamma_quantile(u, shape + h, z) - gamma_quantile(u, shape - h, z)) /
                (2.0 * h);
    worst = std::max(worst, std::fabs(dzda - fd) / std::max(1.0, std::fabs(fd)));
  }
  return {"implicit-grad", 1e-3, worst};
}

// Graph normalization against a dense brute-force evaluation.
OracleResult oracle_graph(bool inject_fault) {
  valen::RngState rng(99);
  valen::Matrix f(50, 4);
  for (double& v : f.data) v = rng.normal();
  valen::AffinityGraph g = valen::build_knn_graph(f, 5);
  double worst = 0.0;
  std::vector<double> deg(50, 0.0);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) deg[i] += g.adjacency(i, j);
  for (int i = 0; i < 50; ++i)
    for (int j = 0; j < 50; ++j) {
      double expect = g.adjacency(i, j) / (std::sqrt(deg[i]) * std::sqrt(deg[j]));
      if (inject_fault) expect += 1e-6;
      worst = std::max(worst, std::fabs(g.normalized(i, j) - expect));
    }
  return {"graph", 1e-12, worst};
}

int run_verify(const std::string& only, bool inject_fault) {
  std::vector<OracleResult> results;
  if (only.empty() || only == "kl") results.push_back(oracle_kl(inject_fault));
  if (only.empty() || only == "implicit-grad")
    results.push_back(oracle_implicit_grad(inject_fault));
  if (only.empty() || only == "graph") results.push_back(oracle_graph(inject_fault));
  if (results.empty())
    throw std::invalid_argument("verify: unknown oracle '" + only +
                                "' (choose kl, implicit-grad, graph)");
  bool ok = true;
  for (const auto& r : results) {
    bool pass = r.achieved < r.tolerance;
    ok = ok && pass;
    std::cout << "oracle " << r.name << ": tolerance=" << r.tolerance
              << " achieved=" << r.achieved << (pass ? " PASS" : " FAIL") << "\n";
  }
  if (!ok) throw NumericalFailure("verify: oracle failure");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Partial-label learning via variational label enhancement"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "TOML experiment config with per-command sections ([train], ...); "
                 "command-line flags override it");

  CorruptArgs ca;
  CLI::App* corrupt = app.add_subcommand(
      "corrupt", "Turn a clean dataset into a partially labeled one");
  corrupt->add_option("input", ca.input, "clean PLL CSV (singleton candidates)")
      ->required();
  corrupt->add_option("output", ca.output, "corrupted CSV to write")->required();
  corrupt->add_option("--mode", ca.mode, "uniform or instance")
      ->check(CLI::IsMember({"uniform", "instance"}));
  corrupt->add_option("--xi", ca.xi, "uniform flip probability")
      ->check(CLI::Range(0.0, 1.0));
  corrupt->add_option("--seed", ca.seed, "root seed");
  corrupt->add_option("--report", ca.report, "JSON report path");
  corrupt->add_flag("--standardize", ca.standardize, "z-score features on load");
  corrupt->add_option("--clean-epochs", ca.clean_epochs, "clean-model epochs");
  corrupt->add_option("--clean-lr", ca.clean_lr, "clean-model learning rate");
  corrupt->add_option("--clean-hidden", ca.clean_hidden, "clean-model hidden sizes");

  TrainArgs ta;
  CLI::App* train = app.add_subcommand("train", "Train on a partially labeled CSV");
  train->add_option("--data", ta.data, "training CSV")->required();
  train->add_option("--test", ta.test, "held-out CSV for accuracy reporting");
  train->add_option("--out", ta.out, "checkpoint directory (default $VALEN_OUTPUT_ROOT/run)");
  train->add_flag("--standardize", ta.standardize, "z-score features on load");
  train->add_flag("--ablate-no-le", ta.ablate_no_le,
                  "baseline without label enhancement");
  train->add_option("--warmup-epochs", ta.cfg.warmup_epochs);
  train->add_option("--total-epochs", ta.cfg.total_epochs);
  train->add_option("--batch-size", ta.cfg.batch_size);
  train->add_option("--lr-pred", ta.cfg.lr_pred);
  train->add_option("--wd-pred", ta.cfg.wd_pred);
  train->add_option("--lr-inf", ta.cfg.lr_inf);
  train->add_option("--wd-inf", ta.cfg.wd_inf);
  train->add_option("--lr-obs", ta.cfg.lr_obs);
  train->add_option("--wd-obs", ta.cfg.wd_obs);
  train->add_option("--lambda", ta.cfg.lambda);
  train->add_option("--epsilon", ta.cfg.epsilon);
  train->add_option("--knn", ta.cfg.k);
  train->add_option("--mc-samples", ta.cfg.mc_samples);
  train->add_option("--seed", ta.cfg.seed);
  train->add_option("--graph-refresh", ta.graph_refresh)
      ->check(CLI::IsMember({"once", "per_epoch"}));
  train->add_option("--eval-every", ta.cfg.eval_every);
  train->add_option("--pred-hidden", ta.cfg.pred_hidden);
  train->add_option("--gcn-hidden", ta.cfg.gcn_hidden);
  train->add_option("--obs-hidden", ta.cfg.obs_hidden);

  EvalArgs ea;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a CSV");
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint directory")->required();
  eval->add_option("--data", ea.data, "labeled CSV")->required();
  eval->add_flag("--standardize", ea.standardize, "z-score features on load");

  std::string verify_only;
  bool inject_fault = false;
  CLI::App* verify = app.add_subcommand("verify", "Run the numerical oracles");
  verify->add_option("--only", verify_only, "run a single oracle: kl, implicit-grad, graph");
  verify->add_flag("--inject-fault", inject_fault)->group("");  // hidden: detector test

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitValidation;
  }

  try {
    if (corrupt->parsed()) return run_corrupt(ca);
    if (train->parsed()) return run_train(ta);
    if (eval->parsed()) return run_eval(ea);
    if (verify->parsed()) return run_verify(verify_only, inject_fault);
  } catch (const NumericalFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitValidation;
}
