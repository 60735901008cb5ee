// Command-line front end. Every subcommand reads and writes the file formats
// of the library; tables carry a one-line metadata header.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "audfer/audfer.hpp"

namespace fs = std::filesystem;
using namespace audfer;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

std::string require_out(const Globals& g, const char* what) {
  if (g.out.empty()) throw ContractError(std::string("--out is required (") + what + ")");
  return g.out;
}

fs::path out_dir(const Globals& g) {
  const fs::path dir = require_out(g, "output directory");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
  return dir;
}

nlohmann::json read_json(const std::string& path) {
  auto in = csv::open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError("malformed JSON in " + path + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  auto out = csv::open_out(path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

TrainConfig load_config(const Globals& g) {
  TrainConfig c = g.config.empty() ? TrainConfig{} : train_config_from_json(read_json(g.config));
  if (g.seed) c.seed = *g.seed;
  return c;
}

void print_warnings(const Diagnostics& d) {
  for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
}

std::vector<FrameAURecord> load_frames(const std::string& path, Diagnostics* diag) {
  if (fs::is_directory(path)) return ingest_openface_directory(path, diag);
  auto in = csv::open_in(path);
  return read_frame_store(in);
}

std::vector<VideoAULabel> load_labels(const std::string& path) {
  if (path.empty()) throw ContractError("a label file is required");
  auto in = csv::open_in(path);
  return read_video_labels(in);
}

Dataset load_dataset(const std::string& features, const std::string& labels) {
  if (features.empty() || labels.empty()) throw ContractError("features and labels paths are both required");
  const auto lab = load_labels(labels);
  return make_dataset(read_features(features), lab);
}

/// Video id to expression, from "video_id,expression" rows.
std::map<std::string, Expression> load_annotations(const std::string& path) {
  auto in = csv::open_in(path);
  std::map<std::string, Expression> out;
  std::string line;
  bool header = false;
  std::size_t row = 0;
  while (csv::read_line(in, line)) {
    ++row;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = csv::split(line);
    if (!header) {
      if (cells.size() < 2 || cells[0] != "video_id" || cells[1] != "expression")
        throw ContractError("annotations must start with header video_id,expression");
      header = true;
      continue;
    }
    if (cells.size() != 2) throw ContractError("annotations row " + std::to_string(row) + " must have 2 cells");
    out[std::string(cells[0])] = to_expression(expression_index(cells[1]));
  }
  if (!header) throw ContractError("annotations file is empty");
  return out;
}

KnowledgeMatrix load_training_knowledge(const std::string& path) {
  if (path.empty()) throw ContractError("a knowledge file is required (--knowledge or config \"knowledge\")");
  KnowledgeMatrix k = import_knowledge(path);
  switch (k.stage) {
    case KnowledgeStage::LossScaled: return k;
    case KnowledgeStage::Aggregate: return scale_for_loss(k);
    case KnowledgeStage::PerDataset:
      throw ContractError("knowledge in " + path + " is per-dataset; aggregate it first");
  }
  return k;
}

std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> g;
  for (const auto& cell : csv::split(s)) g.push_back(csv::parse_double(cell, "lambda grid"));
  return g;
}

SynthSpec load_spec(const std::string& path, const Globals& g) {
  SynthSpec s = path.empty() ? SynthSpec{} : synth_spec_from_json(read_json(path));
  if (g.seed) s.seed = *g.seed;
  return s;
}

std::vector<Benchmark> make_replicates(const SynthSpec& spec, std::size_t replicates, std::size_t test_size) {
  if (replicates == 0) throw ContractError("replicates must be positive");
  std::vector<Benchmark> reps;
  for (std::size_t r = 0; r < replicates; ++r) reps.push_back(make_synthetic_benchmark(spec, spec.seed + r, test_size));
  return reps;
}

/// Replicates for sweep and comparison: file data from the config when
/// present, otherwise the synthetic benchmark.
std::vector<Benchmark> experiment_data(const TrainConfig& cfg, const std::string& spec_path, const Globals& g,
                                       std::size_t replicates, std::size_t test_size) {
  if (!cfg.train_features.empty()) {
    Benchmark b;
    b.train_labels = load_labels(cfg.train_labels);
    b.train = make_dataset(read_features(cfg.train_features), b.train_labels);
    b.test = load_dataset(cfg.test_features, cfg.test_labels);
    b.knowledge = load_training_knowledge(cfg.knowledge_path);
    return {b};
  }
  return make_replicates(load_spec(spec_path, g), replicates, test_size);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-weighted AU loss toolkit for facial expression recognition"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON training configuration");
  app.add_option("--seed", g.seed, "seed override");
  app.add_option("--out", g.out, "output file or directory");

  // ingest
  std::string frames_path;
  auto* ingest = app.add_subcommand("ingest", "Parse a directory of per-video OpenFace CSVs into a frame store");
  ingest->add_option("--frames", frames_path, "directory of per-video CSV files")->required();

  // extract-knowledge
  std::string preds_path;
  double theta = 0.5;
  double min_conf = 0.8;
  bool allow_empty = false;
  std::string dataset_id = "dataset";
  auto* extract = app.add_subcommand("extract-knowledge", "Per-dataset AU-expression knowledge matrix");
  extract->add_option("--frames", frames_path, "OpenFace CSV directory or frame store")->required();
  extract->add_option("--preds", preds_path, "frame-level expression predictions")->required();
  extract->add_option("--theta", theta, "reliability threshold");
  extract->add_option("--min-confidence", min_conf, "minimum face-tracking confidence");
  extract->add_flag("--allow-empty-classes", allow_empty, "fill classes without reliable frames with 0.5");
  extract->add_option("--dataset-id", dataset_id, "name used in diagnostics");

  // aggregate-knowledge
  std::vector<std::string> knowledge_inputs;
  std::string midpoint = "general";
  bool also_scale = false;
  auto* aggregate = app.add_subcommand("aggregate-knowledge", "Combine per-dataset matrices");
  aggregate->add_option("inputs", knowledge_inputs, "per-dataset knowledge files")->required();
  aggregate->add_option("--midpoint", midpoint, "compat (2.5) or general (D/2)")
      ->check(CLI::IsMember({"compat", "general"}));
  aggregate->add_flag("--scale", also_scale, "write the loss-scaled (x5) matrix instead");

  // pseudo-label
  std::string annotations_path;
  auto* pseudo = app.add_subcommand("pseudo-label", "Video-level AU labels by frame majority");
  pseudo->add_option("--frames", frames_path, "OpenFace CSV directory or frame store")->required();
  pseudo->add_option("--annotations", annotations_path, "video_id,expression file")->required();

  // pos-weights
  std::string labels_path;
  std::string strategy = "distinct";
  std::string split = "train";
  auto* posw = app.add_subcommand("pos-weights", "Positive-class weights from training labels");
  posw->add_option("--labels", labels_path, "video label file")->required();
  posw->add_option("--strategy", strategy, "none, global, distinct or minor")
      ->check(CLI::IsMember({"none", "global", "distinct", "minor"}));
  posw->add_option("--split", split, "split name recorded in the metadata");

  // synth-gen
  std::string spec_path;
  std::size_t test_size = 2000;
  auto* synth = app.add_subcommand("synth-gen", "Generate the synthetic benchmark");
  synth->add_option("--spec", spec_path, "JSON generator specification");
  synth->add_option("--test-size", test_size, "samples in the test split");

  // train
  std::string knowledge_path, pw_path, train_features, train_labels, test_features, test_labels;
  std::optional<double> lambda_override;
  std::optional<std::string> strategy_override;
  std::optional<std::size_t> epochs_override;
  bool timing = false;
  auto* trn = app.add_subcommand("train", "Train the dual-head classifier");
  trn->add_option("--knowledge", knowledge_path, "aggregate or loss-scaled knowledge");
  trn->add_option("--pos-weights", pw_path, "positive-class weight file");
  trn->add_option("--train-features", train_features);
  trn->add_option("--train-labels", train_labels);
  trn->add_option("--test-features", test_features);
  trn->add_option("--test-labels", test_labels);
  trn->add_option("--lambda", lambda_override);
  trn->add_option("--strategy", strategy_override)->check(CLI::IsMember({"none", "global", "distinct", "minor"}));
  trn->add_option("--epochs", epochs_override);
  trn->add_flag("--timing", timing, "add wall-clock seconds to the training log");

  // eval, export-confusion, export-embeddings
  std::string checkpoint_path, features_path, confusion_path;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--checkpoint", checkpoint_path)->required();
  ev->add_option("--features", features_path)->required();
  ev->add_option("--labels", labels_path)->required();
  auto* conf = app.add_subcommand("export-confusion", "Confusion matrix as CSV and SVG heatmap");
  conf->add_option("--checkpoint", checkpoint_path);
  conf->add_option("--features", features_path);
  conf->add_option("--labels", labels_path);
  conf->add_option("--confusion", confusion_path, "existing confusion CSV to render");
  auto* emb = app.add_subcommand("export-embeddings", "Shared-pathway embeddings per sample");
  emb->add_option("--checkpoint", checkpoint_path)->required();
  emb->add_option("--features", features_path)->required();
  emb->add_option("--labels", labels_path)->required();

  // sweep, compare-strategies
  std::string grid_text;
  std::size_t replicates = 5;
  std::string strategies_text = "none,global,distinct,minor";
  auto* sweep = app.add_subcommand("sweep", "Lambda sweep");
  sweep->add_option("--grid", grid_text, "comma-separated lambda values");
  sweep->add_option("--replicates", replicates);
  sweep->add_option("--spec", spec_path);
  sweep->add_option("--test-size", test_size);
  auto* cmp = app.add_subcommand("compare-strategies", "Weighting strategy comparison");
  cmp->add_option("--strategies", strategies_text);
  cmp->add_option("--replicates", replicates);
  cmp->add_option("--spec", spec_path);
  cmp->add_option("--test-size", test_size);

  // gradcheck
  std::size_t batch = 4;
  double eps = 1e-5;
  auto* gc = app.add_subcommand("gradcheck", "Analytic versus finite-difference gradients");
  gc->add_option("--batch", batch);
  gc->add_option("--eps", eps);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::Contract);
  }

  try {
    Diagnostics diag;
    if (*ingest) {
      const auto records = ingest_openface_directory(frames_path, &diag);
      print_warnings(diag);
      auto out = csv::open_out(require_out(g, "frame store path"));
      write_frame_store(out, records);
      if (!out) throw IoError("failed writing " + g.out);
    } else if (*extract) {
      const auto records = load_frames(frames_path, &diag);
      auto pin = csv::open_in(preds_path);
      const auto preds = load_frame_predictions(pin);
      const auto reliable = filter_reliable_frames(preds, theta, &diag, dataset_id);
      ExtractionOptions opts;
      opts.min_confidence = min_conf;
      opts.empty_classes = allow_empty ? EmptyClassPolicy::Neutral : EmptyClassPolicy::Reject;
      const auto k = compute_dataset_knowledge(records, reliable, theta, opts, &diag);
      print_warnings(diag);
      export_knowledge(k, require_out(g, "knowledge file"));
    } else if (*aggregate) {
      std::vector<KnowledgeMatrix> mats;
      for (const auto& p : knowledge_inputs) mats.push_back(import_knowledge(p));
      auto s = aggregate_knowledge(mats, midpoint == "compat" ? MidpointPolicy::FixedCompat : MidpointPolicy::Generalized);
      export_knowledge(also_scale ? scale_for_loss(s) : s, require_out(g, "knowledge file"));
    } else if (*pseudo) {
      const auto ann = load_annotations(annotations_path);
      const auto videos = group_by_video(load_frames(frames_path, &diag));
      std::vector<VideoAULabel> labels;
      for (const auto& [id, frames] : videos) {
        const auto it = ann.find(id);
        if (it == ann.end()) {
          diag.warn("video " + id + " has no annotation; skipped");
          continue;
        }
        labels.push_back(derive_video_au_labels(frames, it->second));
      }
      for (const auto& [id, e] : ann)
        if (!videos.count(id)) diag.warn("annotated video " + id + " has no frames");
      print_warnings(diag);
      auto out = csv::open_out(require_out(g, "label file"));
      write_video_labels(out, labels);
      if (!out) throw IoError("failed writing " + g.out);
    } else if (*posw) {
      const auto labels = load_labels(labels_path);
      auto spec = compute_pos_weights(labels, parse_strategy(strategy));
      spec.split = split;
      for (const auto& w : spec.warnings) std::cerr << "warning: " << w << '\n';
      auto out = csv::open_out(require_out(g, "pos-weight file"));
      write_pos_weights(out, spec);
      if (!out) throw IoError("failed writing " + g.out);
    } else if (*synth) {
      const SynthSpec spec = load_spec(spec_path, g);
      const fs::path dir = out_dir(g);
      SynthSpec test_spec = spec;
      test_spec.total = test_size;
      const auto tr = generate_dataset(spec, 0);
      const auto te = generate_dataset(test_spec, 1);
      write_features(tr.features, (dir / "train_features.bin").string());
      write_features(te.features, (dir / "test_features.bin").string());
      {
        auto out = csv::open_out((dir / "train_labels.csv").string());
        write_video_labels(out, tr.labels);
      }
      {
        auto out = csv::open_out((dir / "test_labels.csv").string());
        write_video_labels(out, te.labels);
      }
      {
        auto out = csv::open_out((dir / "train_frames.ndjson").string());
        write_frame_store(out, to_frame_records(tr));
      }
      {
        auto out = csv::open_out((dir / "train_preds.csv").string());
        write_frame_predictions(out, to_oracle_predictions(tr));
      }
      {
        auto out = csv::open_out((dir / "train_annotations.csv").string());
        out << "# audfer-annotations version=1\nvideo_id,expression\n";
        for (const auto& l : tr.labels) out << l.video_id << ',' << expression_name(l.expression) << '\n';
      }
      export_knowledge(spec.ground_truth, (dir / "ground_truth.csv").string());
      export_knowledge(aggregate_knowledge(std::vector<KnowledgeMatrix>{[&] {
                                             const auto frames = to_frame_records(tr);
                                             const auto preds = to_oracle_predictions(tr);
                                             const auto rel = filter_reliable_frames(preds, 0.5);
                                             return compute_dataset_knowledge(frames, rel, 0.5);
                                           }()}),
                       (dir / "knowledge.csv").string());
      write_text(dir / "spec.json", synth_spec_to_json(spec).dump(2) + "\n");
    } else if (*trn) {
      TrainConfig cfg = load_config(g);
      if (!knowledge_path.empty()) cfg.knowledge_path = knowledge_path;
      if (!pw_path.empty()) cfg.pos_weight_path = pw_path;
      if (!train_features.empty()) cfg.train_features = train_features;
      if (!train_labels.empty()) cfg.train_labels = train_labels;
      if (!test_features.empty()) cfg.test_features = test_features;
      if (!test_labels.empty()) cfg.test_labels = test_labels;
      if (lambda_override) cfg.lambda = *lambda_override;
      if (strategy_override) cfg.strategy = parse_strategy(*strategy_override);
      if (epochs_override) cfg.epochs = *epochs_override;
      const fs::path dir = out_dir(g);
      if (cfg.train_features.empty()) throw ContractError("training features are required");
      const auto labels = load_labels(cfg.train_labels);
      const Dataset data = make_dataset(read_features(cfg.train_features), labels);
      const KnowledgeMatrix k = load_training_knowledge(cfg.knowledge_path);
      PosWeightSpec pw;
      if (!cfg.pos_weight_path.empty()) {
        auto in = csv::open_in(cfg.pos_weight_path);
        pw = read_pos_weights(in);
        cfg.strategy = pw.strategy;
      } else {
        pw = compute_pos_weights(labels, cfg.strategy);
      }
      std::optional<Dataset> test;
      if (!cfg.test_features.empty()) test = load_dataset(cfg.test_features, cfg.test_labels);
      const std::string ckpt = (dir / "checkpoint.bin").string();
      const auto result = train(cfg, data, k, pw, test ? &*test : nullptr, ckpt);
      save_checkpoint(result.params, &result.optimizer, ckpt);
      {
        auto out = csv::open_out((dir / "train_log.csv").string());
        write_epoch_logs(out, result.logs, cfg.lambda, timing);
      }
      {
        auto out = csv::open_out((dir / "pos_weights.csv").string());
        write_pos_weights(out, pw);
      }
      if (test) {
        auto out = csv::open_out((dir / "eval.csv").string());
        write_eval_report(out, evaluate(result.params, *test));
      }
      write_text(dir / "config.json", train_config_to_json(cfg).dump(2) + "\n");
    } else if (*ev) {
      const auto ck = load_checkpoint(checkpoint_path);
      const auto report = evaluate(ck.params, load_dataset(features_path, labels_path));
      const fs::path dir = out_dir(g);
      {
        auto out = csv::open_out((dir / "eval.csv").string());
        write_eval_report(out, report);
      }
      auto out = csv::open_out((dir / "confusion.csv").string());
      write_confusion_csv(out, report);
    } else if (*conf) {
      EvalReport report;
      if (!confusion_path.empty()) {
        auto in = csv::open_in(confusion_path);
        report = report_from_confusion(read_confusion_csv(in));
      } else {
        if (checkpoint_path.empty()) throw ContractError("export-confusion needs --confusion or --checkpoint");
        report = evaluate(load_checkpoint(checkpoint_path).params, load_dataset(features_path, labels_path));
      }
      export_confusion(report, require_out(g, "artifact prefix"));
    } else if (*emb) {
      const auto ck = load_checkpoint(checkpoint_path);
      export_embeddings(ck.params, load_dataset(features_path, labels_path), require_out(g, "embedding file"));
    } else if (*sweep) {
      const TrainConfig cfg = load_config(g);
      const auto grid = grid_text.empty() ? default_lambda_grid() : parse_grid(grid_text);
      const auto reps = experiment_data(cfg, spec_path, g, replicates, test_size);
      const auto rows = lambda_sweep(cfg, grid, reps);
      auto out = csv::open_out((out_dir(g) / "sweep.csv").string());
      write_result_rows(out, rows, "sweep");
    } else if (*cmp) {
      const TrainConfig cfg = load_config(g);
      std::vector<PosWeightStrategy> strategies;
      for (const auto& s : csv::split(strategies_text)) strategies.push_back(parse_strategy(s));
      const auto reps = experiment_data(cfg, spec_path, g, replicates, test_size);
      const auto rows = strategy_compare(cfg, strategies, reps);
      auto out = csv::open_out((out_dir(g) / "strategies.csv").string());
      write_result_rows(out, rows, "strategies");
    } else if (*gc) {
      const auto r = gradcheck_instance(g.seed.value_or(0), batch, eps);
      const double worst = std::max({r.expression.max_relative_error, r.au.max_relative_error,
                                     r.model.max_relative_error});
      nlohmann::json j{{"seed", g.seed.value_or(0)},
                       {"batch", batch},
                       {"epsilon", eps},
                       {"expression_max_rel", r.expression.max_relative_error},
                       {"au_max_rel", r.au.max_relative_error},
                       {"model_max_rel", r.model.max_relative_error},
                       {"parameters_checked",
                        r.expression.parameters_checked + r.au.parameters_checked + r.model.parameters_checked},
                       {"max_relative_error", worst}};
      std::cout << j.dump() << '\n';
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::Contract);
  }
}
