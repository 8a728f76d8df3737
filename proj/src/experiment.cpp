#include "cpmtml/experiment.hpp"

#include "cpmtml/io.hpp"
#include "cpmtml/pairs.hpp"
#include "cpmtml/wpca.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace cpmtml {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto pos = s.find(',');
    const auto item = trim(s.substr(0, pos));
    if (!item.empty()) out.push_back(item);
    if (pos == std::string_view::npos) break;
    s.remove_prefix(pos + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  fail(ErrorKind::kConfig, "config key '" + std::string(key) + "': expected " + expected + ", got '" +
                               std::string(value) + "'");
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
  value = trim(value);
  T v{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || value.empty())
    bad_value(key, value, std::is_floating_point_v<T> ? "a number" : "an integer");
  return v;
}

template <typename T>
std::vector<T> parse_number_list(std::string_view key, std::string_view value) {
  std::vector<T> out;
  for (auto item : split_list(value)) out.push_back(parse_number<T>(key, item));
  if (out.empty()) bad_value(key, value, "a non-empty list");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

Method parse_method(std::string_view key, std::string_view name) {
  if (name == "wpca") return Method{true, Variant::kStml};
  try {
    return Method{false, parse_variant(name)};
  } catch (const Error&) {
    bad_value(key, name, "one of wpca, stml, utml, cpmtml, mtlmca");
  }
}

std::string aux_label(const Method& m, const ExperimentData& data) {
  if (m.wpca || m.variant == Variant::kStml || data.task_names.size() < 2) return "n/a";
  std::string s;
  for (std::size_t t = 1; t < data.task_names.size(); ++t) {
    if (!s.empty()) s += '+';
    s += data.task_names[t];
  }
  return s;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
  value = trim(value);
  const std::string k(trim(key));
  auto path = [&](std::string_view v) {
    std::filesystem::path p{std::string(v)};
    return (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  };
  auto count = [&](std::string_view v) { return parse_number<std::size_t>(k, v); };
  auto index = [&](std::string_view v) { return parse_number<Index>(k, v); };
  auto real = [&](std::string_view v) { return parse_number<double>(k, v); };

  if (k == "data") {
    if (value != "synth" && value != "files") bad_value(k, value, "'synth' or 'files'");
    data = std::string(value);
  } else if (k == "synth.D") {
    synth.D = index(value);
  } else if (k == "synth.k_shared") {
    synth.k_shared = index(value);
  } else if (k == "synth.k_task") {
    synth.k_task = index(value);
  } else if (k == "synth.classes") {
    synth.classes_per_task = index(value);
  } else if (k == "synth.samples_per_class") {
    synth.samples_per_class = index(value);
  } else if (k == "synth.noise_sigma") {
    synth.noise_sigma = real(value);
  } else if (k == "synth.T") {
    synth.T = index(value);
  } else if (k == "synth.seed") {
    synth.seed = parse_number<std::uint64_t>(k, value);
  } else if (k == "synth.center_scale") {
    synth.center_scale = real(value);
  } else if (k == "synth.nuisance_scale") {
    synth.nuisance_scale = real(value);
  } else if (k.rfind("task.", 0) == 0) {
    const auto dot = k.find('.', 5);
    if (dot == std::string::npos || dot == 5) fail(ErrorKind::kConfig, "config key '" + k + "': expected task.<name>.<field>");
    const std::string name = k.substr(5, dot - 5);
    const std::string field = k.substr(dot + 1);
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskSpec& t) { return t.name == name; });
    if (it == tasks.end()) {
      tasks.push_back(TaskSpec{});
      tasks.back().name = name;
      it = std::prev(tasks.end());
    }
    if (field == "role") {
      if (value != "main" && value != "aux") bad_value(k, value, "'main' or 'aux'");
      it->role = std::string(value);
    } else if (field == "features") {
      it->features = path(value);
    } else if (field == "labels") {
      it->labels = path(value);
    } else if (field == "pairs") {
      it->pairs = path(value);
    } else if (field == "queries") {
      it->queries = path(value);
    } else if (field == "query_labels") {
      it->query_labels = path(value);
    } else if (field == "n_pos") {
      it->n_pos = count(value);
    } else if (field == "n_neg") {
      it->n_neg = count(value);
    } else {
      fail(ErrorKind::kConfig, "unknown config key '" + k + "'");
    }
  } else if (k == "pairs.main_pos") {
    main_pos = count(value);
  } else if (k == "pairs.main_neg") {
    main_neg = count(value);
  } else if (k == "pairs.aux_pos") {
    aux_pos = count(value);
  } else if (k == "pairs.aux_neg") {
    aux_neg = count(value);
  } else if (k == "eta") {
    if (value == "auto")
      train.eta.reset();
    else
      train.eta = real(value);
  } else if (k == "gamma") {
    train.gamma = real(value);
  } else if (k == "niters") {
    train.niters = parse_number<std::int64_t>(k, value);
  } else if (k == "d") {
    train.d = index(value);
  } else if (k == "seed") {
    train.seed = parse_number<std::uint64_t>(k, value);
  } else if (k == "bias_factor") {
    train.bias_factor = real(value);
  } else if (k == "wpca_epsilon") {
    train.wpca_epsilon = real(value);
  } else if (k == "wpca_sample_cap") {
    train.wpca_sample_cap = index(value);
  } else if (k == "log_every") {
    train.log_every = parse_number<std::int64_t>(k, value);
  } else if (k == "methods" || k == "variant") {
    methods.clear();
    for (auto name : split_list(value)) methods.push_back(parse_method(k, name));
    if (methods.empty()) bad_value(k, value, "at least one method");
  } else if (k == "eval.ks") {
    eval.ks = parse_number_list<Index>(k, value);
  } else if (k == "eval.n") {
    eval.n_call = index(value);
  } else if (k == "eval.shards") {
    eval.num_shards = index(value);
  } else if (k == "eval.distractors") {
    distractors = path(value);
  } else if (k == "eval.synthetic_distractors") {
    synthetic_distractors = index(value);
  } else if (k == "out.dir") {
    out_dir = path(value);
  } else if (k == "grid.eta") {
    grid_eta = parse_number_list<double>(k, value);
  } else if (k == "grid.gamma") {
    grid_gamma = parse_number_list<double>(k, value);
  } else if (k == "grid.queries") {
    grid_queries = index(value);
  } else {
    fail(ErrorKind::kConfig, "unknown config key '" + k + "'");
  }
}

namespace {

// Nested maps flatten to dotted keys; sequences of scalars become comma lists.
void apply_node(ExperimentConfig& cfg, const YAML::Node& node, const std::string& key, const std::string& source) {
  if (node.IsMap()) {
    for (const auto& kv : node) {
      const std::string child = kv.first.as<std::string>();
      apply_node(cfg, kv.second, key.empty() ? child : key + "." + child, source);
    }
  } else if (node.IsSequence()) {
    std::string joined;
    for (const auto& item : node) {
      if (!item.IsScalar()) fail(ErrorKind::kConfig, source + ": '" + key + "' must be a list of scalars");
      joined += (joined.empty() ? "" : ",") + item.as<std::string>();
    }
    cfg.set(key, joined);
  } else if (node.IsScalar()) {
    cfg.set(key, node.as<std::string>());
  } else {
    fail(ErrorKind::kConfig, source + ": '" + key + "' has no value");
  }
}

void parse_into(ExperimentConfig& cfg, std::string_view text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(text));
  } catch (const YAML::Exception& e) {
    fail(ErrorKind::kConfig, source + ": " + e.what());
  }
  if (root.IsNull()) return;
  if (!root.IsMap()) fail(ErrorKind::kConfig, source + ": expected a mapping of config keys");
  apply_node(cfg, root, "", source);
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig cfg;
  parse_into(cfg, text, "config");
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  ExperimentConfig cfg;
  cfg.base_dir = path.parent_path();
  parse_into(cfg, read_file(path), path.string());
  return cfg;
}

void ExperimentConfig::validate() const {
  train.validate();
  if (methods.empty()) fail(ErrorKind::kConfig, "no methods configured");
  if (eval.ks.empty()) fail(ErrorKind::kConfig, "eval.ks is empty");
  if (data == "synth") {
    synth.validate();
    if (!tasks.empty()) fail(ErrorKind::kConfig, "task.* keys require data = files");
    return;
  }
  std::size_t mains = 0;
  for (const auto& t : tasks) {
    if (t.features.empty()) fail(ErrorKind::kConfig, "task." + t.name + ".features is required");
    if (t.labels.empty() && t.pairs.empty())
      fail(ErrorKind::kConfig, "task." + t.name + " needs labels or a pairs file");
    if (t.role == "main") {
      ++mains;
      if (t.labels.empty()) fail(ErrorKind::kConfig, "task." + t.name + ".labels is required for the main task");
      if (t.queries.empty() || t.query_labels.empty())
        fail(ErrorKind::kConfig, "task." + t.name + ".queries and .query_labels are required for the main task");
    }
  }
  if (mains != 1) fail(ErrorKind::kConfig, "exactly one task must have role = main");
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentData out;

  auto make_pairs = [&](const Labels& labels, std::size_t n_pos, std::size_t n_neg, std::size_t t) {
    Rng rng(derive_seed(cfg.train.seed, 1000 + t));
    PairSet ps = generate_pairs(labels, n_pos, n_neg, rng);
    ps.task_id = static_cast<int>(t);
    return ps;
  };

  if (cfg.data == "synth") {
    SynthData synth = gen_multitask(cfg.synth);
    for (std::size_t t = 0; t < synth.tasks.size(); ++t) {
      auto& st = synth.tasks[t];
      const bool main = t == 0;
      Task task;
      task.pairs = make_pairs(st.train_labels, main ? cfg.main_pos : cfg.aux_pos, main ? cfg.main_neg : cfg.aux_neg, t);
      task.pairs.feature_ref = "synth:task" + std::to_string(t);
      task.features = std::make_shared<const FeatureSet>(std::move(st.train));
      out.task_names.push_back(main ? "main" : "aux" + std::to_string(t));
      out.tasks.push_back(std::move(task));
      out.labels.push_back(std::move(st.train_labels));
      if (main) {
        out.queries = std::move(st.queries);
        out.query_labels = std::move(st.query_labels);
      }
    }
    return out;
  }

  std::vector<const TaskSpec*> order;
  for (const auto& t : cfg.tasks)
    if (t.role == "main") order.push_back(&t);
  for (const auto& t : cfg.tasks)
    if (t.role != "main") order.push_back(&t);

  for (std::size_t t = 0; t < order.size(); ++t) {
    const TaskSpec& spec = *order[t];
    const bool main = t == 0;
    Task task;
    auto features = std::make_shared<const FeatureSet>(load_features(spec.features));
    Labels labels;
    if (!spec.labels.empty()) {
      labels = load_labels(spec.labels);
      if (static_cast<Index>(labels.size()) != features->count())
        fail(ErrorKind::kInvalidArgument, "task " + spec.name + ": label count does not match feature count");
    }
    if (!spec.pairs.empty()) {
      task.pairs = load_pairs(spec.pairs);
      validate_pairs(task.pairs, features->count());
      task.pairs.task_id = static_cast<int>(t);
    } else {
      const std::size_t n_pos = spec.n_pos.value_or(main ? cfg.main_pos : cfg.aux_pos);
      const std::size_t n_neg = spec.n_neg.value_or(main ? cfg.main_neg : cfg.aux_neg);
      task.pairs = make_pairs(labels, n_pos, n_neg, t);
      task.pairs.feature_ref = spec.features.string();
    }
    if (!out.tasks.empty() && features->dim() != out.tasks.front().features->dim())
      fail(ErrorKind::kDimensionMismatch, "task " + spec.name + " has a different feature dimension");
    task.features = std::move(features);
    if (main) {
      out.queries = load_features(spec.queries);
      out.query_labels = load_labels(spec.query_labels);
      if (static_cast<Index>(out.query_labels.size()) != out.queries.count())
        fail(ErrorKind::kInvalidArgument, "query label count does not match query count");
      if (out.queries.dim() != task.features->dim())
        fail(ErrorKind::kDimensionMismatch, "queries and gallery differ in dimension");
    }
    out.task_names.push_back(spec.name);
    out.tasks.push_back(std::move(task));
    out.labels.push_back(std::move(labels));
  }
  return out;
}

TrainResult train_method(const Method& method, const ExperimentData& data, const TrainConfig& base) {
  TrainConfig cfg = base;
  if (method.wpca) {
    Rng rng(cfg.seed);
    const auto fit = fit_wpca(wpca_samples(data.tasks.front(), cfg.wpca_sample_cap, rng), cfg.d, cfg.wpca_epsilon);
    return {single_projection_model(fit.projection), {}};
  }
  cfg.variant = method.variant;
  switch (method.variant) {
    case Variant::kStml:
      return train(std::span(data.tasks.data(), 1), cfg);
    case Variant::kUtml: {
      const Task pooled = pool_tasks(data.tasks);
      return train(std::span(&pooled, 1), cfg);
    }
    case Variant::kCpMtml:
    case Variant::kMtLmca:
      return train(data.tasks, cfg);
  }
  fail(ErrorKind::kInvalidArgument, "unknown method");
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, load_experiment_data(cfg)); }

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  if (data.labels.empty() || data.labels.front().empty())
    fail(ErrorKind::kInvalidArgument, "main task needs labels for evaluation");
  const Task& main = data.tasks.front();
  const Labels& main_labels = data.labels.front();

  std::optional<FeatureSet> file_distractors;
  if (!cfg.distractors.empty()) file_distractors = load_features(cfg.distractors);
  const bool distract = file_distractors.has_value() || cfg.synthetic_distractors > 0;
  double distractor_sigma = 0.0;
  if (cfg.synthetic_distractors > 0) {
    const Matrix& x = main.features->matrix();
    const Vector mean = x.colwise().mean().transpose();
    distractor_sigma = std::sqrt((x.rowwise() - mean.transpose()).squaredNorm() /
                                 static_cast<double>(std::max<Index>(x.rows() - 1, 1) * x.cols()));
  }

  ExperimentResult result;
  for (const auto& method : cfg.methods) {
    TrainResult tr = train_method(method, data, cfg.train);
    MethodRun run{method, std::move(tr.model), std::move(tr.log), {}, std::nullopt};
    const Matrix encoder = task_encoder(run.model, 0);

    RetrievalIndex idx(encoder);
    idx.add(*main.features, main_labels);
    run.clean = evaluate(idx, data.queries, data.query_labels, cfg.eval);
    const std::string aux = aux_label(method, data);
    for (auto& row : report_rows(run.clean, method.name(), aux)) result.rows.push_back(row);

    if (distract) {
      if (file_distractors)
        idx.add(*file_distractors, Labels(static_cast<std::size_t>(file_distractors->count()), kDistractorLabel));
      if (cfg.synthetic_distractors > 0)
        append_distractors(idx, cfg.synthetic_distractors, distractor_sigma, derive_seed(cfg.train.seed, 3000));
      run.with_distractors = evaluate(idx, data.queries, data.query_labels, cfg.eval);
      for (auto& row : report_rows(*run.with_distractors, method.name(), aux)) result.rows.push_back(row);
    }
    result.runs.push_back(std::move(run));
  }

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    for (const auto& run : result.runs) {
      save_model(run.model, cfg.out_dir / ("model_" + run.method.name() + ".cpml"));
      if (!run.method.wpca) {
        std::ofstream log(cfg.out_dir / ("trainlog_" + run.method.name() + ".csv"));
        if (!log) fail(ErrorKind::kIo, "cannot write train log under " + cfg.out_dir.string());
        run.log.write_csv(log);
      }
    }
    std::ofstream report(cfg.out_dir / "report.csv");
    if (!report) fail(ErrorKind::kIo, "cannot write report under " + cfg.out_dir.string());
    write_report_csv(report, result.rows);
  }
  return result;
}

void GridResult::write_csv(std::ostream& os) const {
  os << "eta_index,gamma_index,eta,gamma,score,status\n";
  for (const auto& r : table)
    os << r.eta_index << ',' << r.gamma_index << ',' << format_double(r.eta) << ',' << format_double(r.gamma) << ','
       << (std::isnan(r.score) ? std::string("nan") : format_double(r.score)) << ',' << r.status << '\n';
}

GridResult run_grid_search(const ExperimentConfig& cfg) { return run_grid_search(cfg, load_experiment_data(cfg)); }

GridResult run_grid_search(const ExperimentConfig& cfg, const ExperimentData& data) {
  cfg.validate();
  std::vector<double> etas = cfg.grid_eta;
  if (etas.empty()) {
    if (!cfg.train.eta) fail(ErrorKind::kConfig, "grid search needs grid.eta or a fixed eta");
    etas.push_back(*cfg.train.eta);
  }
  std::vector<double> gammas = cfg.grid_gamma;
  if (gammas.empty()) gammas.push_back(cfg.train.gamma);

  const auto method_it = std::find_if(cfg.methods.begin(), cfg.methods.end(), [](const Method& m) { return !m.wpca; });
  if (method_it == cfg.methods.end()) fail(ErrorKind::kConfig, "grid search needs a trainable method");
  if (data.labels.front().empty()) fail(ErrorKind::kInvalidArgument, "grid search needs main-task labels");

  Rng split_rng(derive_seed(cfg.train.seed, 2000));
  auto [fit_pairs, val_pairs] = split_pairs(data.tasks.front().pairs, split_rng);
  ExperimentData fit_data = data;
  fit_data.tasks.front().pairs = std::move(fit_pairs);

  // Leave-one-out retrieval among the items the validation half references.
  const Labels& labels = data.labels.front();
  const std::vector<Index> items = referenced_indices(val_pairs);
  std::map<Label, Index> label_count;
  for (Index i : items) ++label_count[labels[static_cast<std::size_t>(i)]];
  std::vector<Index> queries;
  for (Index i : items)
    if (label_count[labels[static_cast<std::size_t>(i)]] >= 2) queries.push_back(i);
  if (queries.empty()) fail(ErrorKind::kInvalidArgument, "validation split has no item with a same-label partner");
  if (static_cast<Index>(queries.size()) > cfg.grid_queries) {
    Rng qrng(derive_seed(cfg.train.seed, 2001));
    std::shuffle(queries.begin(), queries.end(), qrng);
    queries.resize(static_cast<std::size_t>(cfg.grid_queries));
    std::sort(queries.begin(), queries.end());
  }
  const FeatureSet val_items = data.tasks.front().features->subset(items);
  Labels val_labels;
  for (Index i : items) val_labels.push_back(labels[static_cast<std::size_t>(i)]);
  constexpr Index kValidationK = 10;

  GridResult out;
  out.best_score = -1.0;
  bool found = false;
  for (std::size_t ei = 0; ei < etas.size(); ++ei) {
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
      GridRow row{ei, gi, etas[ei], gammas[gi], std::nan(""), "ok"};
      TrainConfig tc = cfg.train;
      tc.eta = etas[ei];
      tc.gamma = gammas[gi];
      try {
        const auto tr = train_method(*method_it, fit_data, tc);
        RetrievalIndex idx(task_encoder(tr.model, 0));
        idx.add(val_items, val_labels, items);
        double hits = 0.0;
        for (Index q : queries) {
          auto nn = idx.search(idx.encode(data.tasks.front().features->row(q)), kValidationK + 1);
          std::vector<std::uint8_t> rel;
          for (const auto& n : nn) {
            if (n.id == q) continue;
            rel.push_back(idx.label(n.row) == labels[static_cast<std::size_t>(q)] ? 1 : 0);
          }
          hits += n_call_at_k(rel, 1, kValidationK);
        }
        row.score = hits / static_cast<double>(queries.size());
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::kDivergence) throw;
        row.status = "diverged";
      }
      if (row.status == "ok") {
        const bool better = !found || row.score > out.best_score ||
                            (row.score == out.best_score &&
                             (row.eta < out.best_eta || (row.eta == out.best_eta && row.gamma < out.best_gamma)));
        if (better) {
          found = true;
          out.best_score = row.score;
          out.best_eta = row.eta;
          out.best_gamma = row.gamma;
        }
      }
      out.table.push_back(row);
    }
  }
  if (!found) fail(ErrorKind::kDivergence, "every grid candidate diverged; lower the eta candidates");

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream os(cfg.out_dir / "grid.csv");
    if (!os) fail(ErrorKind::kIo, "cannot write grid table under " + cfg.out_dir.string());
    out.write_csv(os);
  }
  return out;
}

}  // namespace cpmtml
