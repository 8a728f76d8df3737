// cpmtml: command-line front end for training and evaluating coupled projections.

#include "cpmtml/experiment.hpp"
#include "cpmtml/io.hpp"
#include "cpmtml/pairs.hpp"
#include "cpmtml/wpca.hpp"

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <fstream>
#include <iostream>

using namespace cpmtml;

namespace {

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::from_file(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorKind::kConfig, "--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::kIo, "cannot write " + path.string());
  return os;
}

void print_rows(const std::vector<ReportRow>& rows) { write_report_csv(std::cout, rows); }

int cmd_synth(const std::string& out_dir, const std::vector<std::string>& overrides, Index distractors, bool f32) {
  ExperimentConfig cfg = load_config("", overrides);
  const SynthData data = gen_multitask(cfg.synth);
  const std::filesystem::path dir(out_dir);
  std::filesystem::create_directories(dir);
  const Dtype dtype = f32 ? Dtype::kF32 : Dtype::kF64;

  YAML::Emitter conf;
  conf << YAML::BeginMap << YAML::Key << "data" << YAML::Value << "files";
  conf << YAML::Key << "task" << YAML::Value << YAML::BeginMap;
  for (std::size_t t = 0; t < data.tasks.size(); ++t) {
    const std::string stem = "task" + std::to_string(t);
    const auto& task = data.tasks[t];
    save_features(task.train, dir / (stem + "_train.fvec"), dtype);
    save_labels(task.train_labels, dir / (stem + "_train.labels"));
    save_features(task.queries, dir / (stem + "_queries.fvec"), dtype);
    save_labels(task.query_labels, dir / (stem + "_queries.labels"));
    conf << YAML::Key << stem << YAML::Value << YAML::BeginMap;
    conf << YAML::Key << "role" << YAML::Value << (t == 0 ? "main" : "aux");
    conf << YAML::Key << "features" << YAML::Value << stem + "_train.fvec";
    conf << YAML::Key << "labels" << YAML::Value << stem + "_train.labels";
    if (t == 0) {
      conf << YAML::Key << "queries" << YAML::Value << stem + "_queries.fvec";
      conf << YAML::Key << "query_labels" << YAML::Value << stem + "_queries.labels";
    }
    conf << YAML::EndMap;
  }
  conf << YAML::EndMap;
  if (distractors > 0) {
    save_features(gen_distractors(distractors, cfg.synth.D, marginal_std(data), derive_seed(cfg.synth.seed, 4000)),
                  dir / "distractors.fvec", dtype);
    conf << YAML::Key << "eval" << YAML::Value << YAML::BeginMap << YAML::Key << "distractors" << YAML::Value
         << "distractors.fvec" << YAML::EndMap;
  }
  conf << YAML::EndMap;
  std::ofstream os = open_out(dir / "experiment.yaml");
  os << conf.c_str() << '\n';
  std::cout << "wrote " << data.tasks.size() << " tasks to " << dir.string() << '\n';
  return 0;
}

int cmd_pairs(const std::string& labels_path, std::size_t n_pos, std::size_t n_neg, std::uint64_t seed,
              const std::string& out) {
  Rng rng(seed);
  const PairSet ps = generate_pairs(load_labels(labels_path), n_pos, n_neg, rng);
  save_pairs(ps, out);
  std::cout << "wrote " << ps.size() << " pairs to " << out << '\n';
  return 0;
}

int cmd_wpca(const std::string& features, Index d, double epsilon, const std::string& out) {
  const WpcaResult fit = fit_wpca(load_features(features), d, epsilon);
  save_model(single_projection_model(fit.projection), out);
  std::cout << "eigenvalues:";
  for (Index k = 0; k < fit.eigenvalues.size(); ++k) std::cout << ' ' << fit.eigenvalues[k];
  std::cout << '\n';
  return 0;
}

int cmd_train(const std::string& config, const std::vector<std::string>& overrides, const std::string& model_out,
              const std::string& log_out) {
  const ExperimentConfig cfg = load_config(config, overrides);
  const ExperimentData data = load_experiment_data(cfg);
  const auto it = std::find_if(cfg.methods.begin(), cfg.methods.end(), [](const Method& m) { return !m.wpca; });
  const Method method = it == cfg.methods.end() ? cfg.methods.front() : *it;
  const TrainResult tr = train_method(method, data, cfg.train);
  save_model(tr.model, model_out);
  if (!log_out.empty()) {
    std::ofstream os = open_out(log_out);
    tr.log.write_csv(os);
  }
  std::cout << "trained " << method.name() << " (eta " << tr.log.eta << ") -> " << model_out << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, Index task, const std::string& queries, const std::string& query_labels,
             const std::string& gallery, const std::string& gallery_labels, const std::string& distractors,
             const std::vector<Index>& ks, Index n, const std::string& method, const std::string& aux,
             const std::string& report) {
  const CoupledModel m = load_model(model_path);
  EvalOptions opt;
  opt.ks = ks;
  opt.n_call = n;
  RetrievalIndex idx(task_encoder(m, task));
  const FeatureSet q = load_features(queries);
  const Labels ql = load_labels(query_labels);
  idx.add(load_features(gallery), load_labels(gallery_labels));
  std::vector<ReportRow> rows = report_rows(evaluate(idx, q, ql, opt), method, aux);
  if (!distractors.empty()) {
    const FeatureSet dx = load_features(distractors);
    idx.add(dx, Labels(static_cast<std::size_t>(dx.count()), kDistractorLabel));
    for (auto& r : report_rows(evaluate(idx, q, ql, opt), method, aux)) rows.push_back(r);
  }
  if (!report.empty()) {
    std::ofstream os = open_out(report);
    write_report_csv(os, rows);
  }
  print_rows(rows);
  return 0;
}

int cmd_grid(const std::string& config, const std::vector<std::string>& overrides) {
  const ExperimentConfig cfg = load_config(config, overrides);
  const GridResult g = run_grid_search(cfg);
  g.write_csv(std::cout);
  std::cout << "best eta=" << g.best_eta << " gamma=" << g.best_gamma << " score=" << g.best_score << '\n';
  return 0;
}

int cmd_run(const std::string& config, const std::vector<std::string>& overrides) {
  const ExperimentConfig cfg = load_config(config, overrides);
  print_rows(run_experiment(cfg).rows);
  return 0;
}

int cmd_inspect(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.rfind("FVEC", 0) == 0) {
    const FeatureHeader h = read_feature_header(path);
    std::cout << "feature file version=" << h.version << " count=" << h.count << " dim=" << h.dim
              << " dtype=" << (h.dtype == Dtype::kF32 ? "f32" : "f64") << '\n';
    return 0;
  }
  const CoupledModel m = decode_model(bytes);
  std::cout << "model variant=" << to_string(m.variant) << " T=" << m.num_tasks() << " d=" << m.proj_dim()
            << " D=" << m.input_dim() << " gamma=" << m.gamma << " biases=";
  for (std::size_t t = 0; t < m.biases.size(); ++t) std::cout << (t ? "," : "") << m.biases[t];
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Coupled projection multi-task metric learning"};
  app.require_subcommand(1);

  std::string config, out, model, log, labels, features, queries, query_labels, gallery, gallery_labels,
      distractors_path, report, method = "model", aux = "n/a", path;
  std::vector<std::string> overrides;
  std::size_t n_pos = 0, n_neg = 0;
  std::uint64_t seed = 0;
  Index d = 32, task = 0, n = 1, distractor_count = 0;
  double epsilon = 1e-5;
  bool f32 = false;
  std::vector<Index> ks{1, 2, 5, 10, 20};

  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-task dataset and config");
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--set", overrides, "Override synth.* keys (key=value)");
  synth->add_option("--distractors", distractor_count, "Also write this many distractors");
  synth->add_flag("--f32", f32, "Store features as 32-bit floats");

  auto* pairs = app.add_subcommand("pairs", "Sample pairwise constraints from labels");
  pairs->add_option("--labels", labels)->required();
  pairs->add_option("--n-pos", n_pos)->required();
  pairs->add_option("--n-neg", n_neg)->required();
  pairs->add_option("--seed", seed);
  pairs->add_option("--out", out)->required();

  auto* wpca = app.add_subcommand("wpca", "Fit the whitened PCA baseline");
  wpca->add_option("--features", features)->required();
  wpca->add_option("--d", d)->required();
  wpca->add_option("--epsilon", epsilon);
  wpca->add_option("--out", out, "Model file")->required();

  auto* train = app.add_subcommand("train", "Train the first configured method");
  train->add_option("--config", config)->required();
  train->add_option("--set", overrides, "Config override key=value");
  train->add_option("--model", model, "Model output path")->required();
  train->add_option("--log", log, "Train log CSV path");

  auto* eval = app.add_subcommand("eval", "Evaluate a model by n-call@K retrieval");
  eval->add_option("--model", model)->required();
  eval->add_option("--task", task);
  eval->add_option("--queries", queries)->required();
  eval->add_option("--query-labels", query_labels)->required();
  eval->add_option("--gallery", gallery)->required();
  eval->add_option("--gallery-labels", gallery_labels)->required();
  eval->add_option("--distractors", distractors_path);
  eval->add_option("--ks", ks)->delimiter(',');
  eval->add_option("--n", n);
  eval->add_option("--method", method);
  eval->add_option("--aux", aux);
  eval->add_option("--report", report);

  auto* grid = app.add_subcommand("grid", "Validation grid search over eta and gamma");
  grid->add_option("--config", config)->required();
  grid->add_option("--set", overrides, "Config override key=value");

  auto* run = app.add_subcommand("run", "Run a full experiment from a config file");
  run->add_option("--config", config);
  run->add_option("--set", overrides, "Config override key=value");

  auto* inspect = app.add_subcommand("inspect", "Print the header of a feature or model file");
  inspect->add_option("path", path)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(out, overrides, distractor_count, f32);
    if (*pairs) return cmd_pairs(labels, n_pos, n_neg, seed, out);
    if (*wpca) return cmd_wpca(features, d, epsilon, out);
    if (*train) return cmd_train(config, overrides, model, log);
    if (*eval)
      return cmd_eval(model, task, queries, query_labels, gallery, gallery_labels, distractors_path, ks, n, method,
                      aux, report);
    if (*grid) return cmd_grid(config, overrides);
    if (*run) return cmd_run(config, overrides);
    if (*inspect) return cmd_inspect(path);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
