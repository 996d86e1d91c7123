// Experiment runner CLI: pretrain base models, estimate Fisher importance,
// generate shifted streams, and execute adaptation experiments from
// declarative JSON configs. Flags override individual config fields; the
// TTA_OUTPUT_DIR environment variable overrides the configured output
// directory (flag > env > config).
//
// Exit codes: 0 success, 2 config error, 3 numeric divergence, 4 I/O error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tta/checkpoint.hpp"
#include "tta/engine.hpp"
#include "tta/errors.hpp"
#include "tta/experiment.hpp"
#include "tta/fisher.hpp"
#include "tta/network.hpp"
#include "tta/shiftgen.hpp"
#include "tta/stream_io.hpp"

namespace {

using tta::OrderedJson;

OrderedJson load_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw tta::IoError("cannot open config: " + path);
  OrderedJson j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw tta::ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw tta::IoError("cannot write: " + path);
  os << text;
}

tta::SourceSpec source_from_json(const OrderedJson& j) {
  tta::SourceSpec s;
  if (j.contains("class_count")) s.class_count = j.at("class_count").get<std::size_t>();
  if (j.contains("input_dim")) s.input_dim = j.at("input_dim").get<std::size_t>();
  if (j.contains("samples_per_class"))
    s.samples_per_class = j.at("samples_per_class").get<std::size_t>();
  if (j.contains("center_scale")) s.center_scale = j.at("center_scale").get<double>();
  if (j.contains("within_stddev")) s.within_stddev = j.at("within_stddev").get<double>();
  return s;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string config_path;
  std::string checkpoint_out = "base.ckpt";
  std::string report_out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> input_groups;
};

int cmd_pretrain(const PretrainArgs& args) {
  tta::SourceSpec source;
  std::vector<std::size_t> hidden = {64, 32};
  double bn_epsilon = 1e-5;
  tta::TrainHyper hyper;
  std::uint64_t seed = 0;
  std::string checkpoint_out = args.checkpoint_out;
  std::string report_out = args.report_out;

  std::size_t input_groups = 1;
  if (!args.config_path.empty()) {
    OrderedJson j = load_json_file(args.config_path);
    if (j.contains("source")) source = source_from_json(j.at("source"));
    if (j.contains("hidden_dims")) hidden = j.at("hidden_dims").get<std::vector<std::size_t>>();
    if (j.contains("bn_epsilon")) bn_epsilon = j.at("bn_epsilon").get<double>();
    if (j.contains("input_groups")) input_groups = j.at("input_groups").get<std::size_t>();
    if (j.contains("train")) {
      const auto& t = j.at("train");
      if (t.contains("lr")) hyper.lr = t.at("lr").get<double>();
      if (t.contains("momentum")) hyper.momentum = t.at("momentum").get<double>();
      if (t.contains("epochs")) hyper.epochs = t.at("epochs").get<std::size_t>();
      if (t.contains("batch_size")) hyper.batch_size = t.at("batch_size").get<std::size_t>();
      if (t.contains("label_smoothing"))
        hyper.label_smoothing = t.at("label_smoothing").get<double>();
    }
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("checkpoint_out")) checkpoint_out = j.at("checkpoint_out").get<std::string>();
    if (j.contains("report_out")) report_out = j.at("report_out").get<std::string>();
  }
  if (args.seed) seed = *args.seed;
  if (args.epochs) hyper.epochs = *args.epochs;
  if (args.input_groups) input_groups = *args.input_groups;

  // Hierarchical seed split: one top-level seed, fixed namespace tags.
  source.seed = tta::Rng::derive_seed(seed, "data");
  hyper.seed = tta::Rng::derive_seed(seed, "pretrain");

  auto [train, test] = tta::make_source(source);
  tta::ArchSpec arch{source.input_dim, hidden, source.class_count, bn_epsilon, input_groups};
  tta::ParamSet params = tta::train_base(arch, train, hyper);
  tta::save_params(checkpoint_out, params);

  const double train_acc = tta::accuracy(params, train, tta::BnMode::kRunningStats);
  const double test_acc = tta::accuracy(params, test, tta::BnMode::kRunningStats);

  OrderedJson report;
  report["schema"] = "tta-pretrain/1";
  report["seed"] = seed;
  report["arch"] = {{"input_dim", arch.input_dim},
                    {"hidden_dims", arch.hidden_dims},
                    {"class_count", arch.class_count},
                    {"bn_epsilon", arch.bn_epsilon},
                    {"input_groups", arch.input_groups}};
  report["train_accuracy"] = train_acc;
  report["test_accuracy"] = test_acc;
  report["checkpoint"] = checkpoint_out;
  const std::string text = report.dump(2) + "\n";
  if (!report_out.empty())
    write_text(report_out, text);
  else
    std::cout << text;
  return 0;
}

// ---------------------------------------------------------------------------
// make-data
// ---------------------------------------------------------------------------

struct MakeDataArgs {
  std::string config_path;
  std::string stream_out = "stream.bin";
  std::string csv_out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> length;
};

int cmd_make_data(const MakeDataArgs& args) {
  tta::StreamManifest manifest;
  std::uint64_t seed = 0;
  std::string stream_out = args.stream_out;
  std::string csv_out = args.csv_out;
  std::vector<std::pair<std::string, int>> shift_list;

  if (!args.config_path.empty()) {
    OrderedJson j = load_json_file(args.config_path);
    if (j.contains("source")) manifest.source = source_from_json(j.at("source"));
    if (j.contains("shifts"))
      for (const auto& sj : j.at("shifts"))
        shift_list.emplace_back(sj.at("kind").get<std::string>(), sj.at("severity").get<int>());
    if (j.contains("order"))
      manifest.order = tta::stream_order_from(j.at("order").get<std::string>());
    if (j.contains("length")) manifest.length = j.at("length").get<std::size_t>();
    if (j.contains("batch")) manifest.batch = j.at("batch").get<std::size_t>();
    if (j.contains("allow_repeats")) manifest.allow_repeats = j.at("allow_repeats").get<bool>();
    if (j.contains("seed")) seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("stream_out")) stream_out = j.at("stream_out").get<std::string>();
    if (j.contains("csv_out")) csv_out = j.at("csv_out").get<std::string>();
  }
  if (args.seed) seed = *args.seed;
  if (args.length) manifest.length = *args.length;
  if (manifest.length == 0) manifest.length = 10000;

  manifest.source.seed = tta::Rng::derive_seed(seed, "data");
  manifest.seed = tta::Rng::derive_seed(seed, "stream");
  for (std::size_t i = 0; i < shift_list.size(); ++i) {
    tta::ShiftSpec spec;
    spec.kind = tta::shift_kind_from(shift_list[i].first);
    spec.severity = shift_list[i].second;
    spec.seed = tta::Rng::derive_seed(seed, "shift", i);
    manifest.shifts.push_back(spec);
  }

  tta::ShiftStream stream = tta::make_stream(manifest);
  tta::save_stream(stream_out, stream);
  if (!csv_out.empty()) tta::export_stream_csv(csv_out, stream);
  if (stream.dropped_remainder())
    std::cerr << "warning: dropped a trailing 1-sample batch (" << stream.raw_sample_count()
              << " -> " << stream.sample_count() << " usable samples)\n";
  std::cout << "wrote " << stream_out << " (" << stream.sample_count() << " samples, "
            << stream.batch_count() << " batches)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fisher
// ---------------------------------------------------------------------------

struct FisherArgs {
  std::string checkpoint;
  std::string id_samples;
  std::string out = "fisher.bin";
  std::size_t q = 500;
  std::string bn_mode = "batch";
};

int cmd_fisher(const FisherArgs& args) {
  if (args.checkpoint.empty() || args.id_samples.empty())
    throw tta::ConfigError("fisher: --checkpoint and --id-samples are required");
  tta::ParamSet params = tta::load_params(args.checkpoint);
  tta::ShiftStream id_stream = tta::load_stream(args.id_samples);
  if (args.q > id_stream.raw_sample_count())
    throw tta::ConfigError("fisher: Q=" + std::to_string(args.q) + " exceeds the " +
                           std::to_string(id_stream.raw_sample_count()) + " samples in " +
                           args.id_samples);
  if (args.q < 2) throw tta::ConfigError("fisher: Q must be >= 2");
  const tta::BnMode mode = args.bn_mode == "running" ? tta::BnMode::kRunningStats
                          : args.bn_mode == "batch"  ? tta::BnMode::kBatchStats
                                                     : throw tta::ConfigError(
                                                           "fisher: bn mode must be batch|running");

  tta::Matrix id(args.q, id_stream.input_dim());
  for (std::size_t i = 0; i < args.q; ++i)
    std::copy(id_stream.sample(i).begin(), id_stream.sample(i).end(), id.row(i).begin());

  tta::PseudoLabeledSet dset = tta::pseudo_label(params, id, mode);
  tta::FisherDiag fisher = tta::estimate_fisher(params, dset, mode);
  tta::save_fisher(args.out, params.arch(), fisher);
  std::cout << "wrote " << args.out << " (Q=" << fisher.sample_count << ", "
            << fisher.omega.size() << " scalars)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// adapt / partition-study / sweep (experiment configs)
// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string config_path;
  std::optional<std::string> kind;
  std::optional<std::string> checkpoint;
  std::optional<std::string> fisher;
  std::vector<std::string> streams;
  std::optional<std::string> output_dir;
  std::optional<std::string> method;
  std::optional<double> lr;
  std::optional<double> beta;
  std::optional<std::size_t> batch_size;
  std::optional<std::string> reset_policy;
  std::optional<std::size_t> window_len;
  std::optional<double> entropy_threshold;
  std::optional<double> cos_threshold;
  std::optional<std::size_t> repetitions;
  std::optional<std::uint64_t> seed;
  std::vector<double> percents;
  std::vector<double> lr_grid;
  std::vector<std::size_t> length_grid;
};

tta::ExperimentConfig build_experiment_config(const ExperimentArgs& args,
                                              const std::string& default_kind) {
  tta::ExperimentConfig cfg;
  cfg.kind = default_kind;
  if (!args.config_path.empty()) cfg = tta::load_experiment_config(args.config_path);

  if (args.kind) cfg.kind = *args.kind;
  if (args.checkpoint) cfg.checkpoint = *args.checkpoint;
  if (args.fisher) cfg.fisher = *args.fisher;
  if (!args.streams.empty()) cfg.streams = args.streams;
  if (const char* env = std::getenv("TTA_OUTPUT_DIR")) cfg.output_dir = env;
  if (args.output_dir) cfg.output_dir = *args.output_dir;
  if (args.method) cfg.adapt.method = tta::method_from(*args.method);
  if (args.lr) cfg.adapt.lr = *args.lr;
  if (args.beta) {
    cfg.adapt.beta = *args.beta;
    cfg.adapt.beta_auto = false;
  }
  if (args.batch_size) cfg.adapt.batch_size = *args.batch_size;
  if (args.reset_policy) cfg.adapt.reset_policy = tta::reset_policy_from(*args.reset_policy);
  if (args.window_len) cfg.adapt.window_len = *args.window_len;
  if (args.entropy_threshold) cfg.adapt.selection.entropy_threshold = *args.entropy_threshold;
  if (args.cos_threshold) cfg.adapt.selection.cos_threshold = *args.cos_threshold;
  if (args.repetitions) cfg.repetitions = *args.repetitions;
  if (args.seed) {
    cfg.seed = *args.seed;
    cfg.adapt.seed = tta::Rng::derive_seed(*args.seed, "engine");
  }
  if (!args.percents.empty()) cfg.percents = args.percents;
  if (!args.lr_grid.empty()) cfg.lr_grid = args.lr_grid;
  if (!args.length_grid.empty()) cfg.length_grid = args.length_grid;
  return cfg;
}

int run_experiment(const tta::ExperimentConfig& cfg) {
  tta::ExperimentRunner runner(cfg);
  tta::ExperimentOutput out = runner.run();
  tta::write_experiment_output(cfg.output_dir, out);
  std::cout << "wrote " << cfg.output_dir << "/metrics.json and " << out.csv_files.size()
            << " csv file(s)\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming test-time adaptation experiments"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* pretrain = app.add_subcommand("pretrain", "Train a base classifier on synthetic blobs");
  pretrain->add_option("--config", pre.config_path, "JSON config");
  pretrain->add_option("--out", pre.checkpoint_out, "Checkpoint output path");
  pretrain->add_option("--report-out", pre.report_out, "Write the JSON report here (default: stdout)");
  pretrain->add_option("--seed", pre.seed, "Top-level seed");
  pretrain->add_option("--epochs", pre.epochs, "Override training epochs");
  pretrain->add_option("--input-groups", pre.input_groups,
                       "Receptive-field groups for the first layer");

  MakeDataArgs mk;
  auto* makedata = app.add_subcommand("make-data", "Generate a shifted test stream file");
  makedata->add_option("--config", mk.config_path, "JSON config");
  makedata->add_option("--out", mk.stream_out, "Stream output path");
  makedata->add_option("--csv-out", mk.csv_out, "Optional CSV export path");
  makedata->add_option("--seed", mk.seed, "Top-level seed");
  makedata->add_option("--length", mk.length, "Stream length");

  FisherArgs fi;
  auto* fisher = app.add_subcommand("fisher", "Estimate the diagonal importance of BN affine parameters");
  fisher->add_option("--checkpoint", fi.checkpoint, "Base model checkpoint")->required();
  fisher->add_option("--id-samples", fi.id_samples, "Clean stream file providing ID samples")->required();
  fisher->add_option("--q", fi.q, "Number of ID samples to use");
  fisher->add_option("--out", fi.out, "Fisher output path");
  fisher->add_option("--bn-mode", fi.bn_mode, "batch | running");

  ExperimentArgs ad;
  auto* adapt = app.add_subcommand("adapt", "Run an adaptation experiment");
  auto* part = app.add_subcommand("partition-study", "Adapt on lowest/highest entropy subsets");
  auto* sweep = app.add_subcommand("sweep", "Run a learning-rate or stream-length grid");
  for (CLI::App* sub : {adapt, part, sweep}) {
    sub->add_option("--config", ad.config_path, "Experiment JSON config");
    sub->add_option("--kind", ad.kind, "Experiment kind override");
    sub->add_option("--checkpoint", ad.checkpoint, "Base model checkpoint");
    sub->add_option("--fisher", ad.fisher, "Fisher importance file");
    sub->add_option("--stream", ad.streams, "Stream file (repeatable)");
    sub->add_option("--output-dir", ad.output_dir, "Output directory");
    sub->add_option("--method", ad.method, "source | tent | eta | eata");
    sub->add_option("--lr", ad.lr, "Learning rate");
    sub->add_option("--beta", ad.beta, "Regularizer trade-off (disables auto scaling)");
    sub->add_option("--batch-size", ad.batch_size, "Adaptation batch size");
    sub->add_option("--reset-policy", ad.reset_policy, "per-stream | lifelong | episodic");
    sub->add_option("--window-len", ad.window_len, "Sliding window length (single-sample mode)");
    sub->add_option("--entropy-threshold", ad.entropy_threshold, "Selection E0 (nats)");
    sub->add_option("--cos-threshold", ad.cos_threshold, "Selection cosine threshold");
    sub->add_option("--repetitions", ad.repetitions, "Repetitions");
    sub->add_option("--seed", ad.seed, "Top-level seed");
  }
  part->add_option("--percents", ad.percents, "Entropy percentiles, e.g. 10 30 50");
  sweep->add_option("--lr-grid", ad.lr_grid, "Learning-rate grid");
  sweep->add_option("--length-grid", ad.length_grid, "Stream-length grid");

  try {
    app.parse(argc, argv);
    if (pretrain->parsed()) return cmd_pretrain(pre);
    if (makedata->parsed()) return cmd_make_data(mk);
    if (fisher->parsed()) return cmd_fisher(fi);
    if (adapt->parsed()) return run_experiment(build_experiment_config(ad, "single-stream"));
    if (part->parsed()) return run_experiment(build_experiment_config(ad, "entropy-partition"));
    if (sweep->parsed()) return run_experiment(build_experiment_config(ad, "lr-sweep"));
    return 2;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  } catch (const tta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tta::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tta::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const tta::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const tta::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
