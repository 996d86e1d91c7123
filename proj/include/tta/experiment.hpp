#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tta/checkpoint.hpp"
#include "tta/engine.hpp"
#include "tta/errors.hpp"
#include "tta/fisher.hpp"
#include "tta/network.hpp"
#include "tta/shiftgen.hpp"
#include "tta/stream_io.hpp"

namespace tta {

// Declarative experiment runner shared by the CLI and the test suites. Every
// command is deterministic given its config; reruns produce byte-identical
// outputs.

inline constexpr std::string_view kMetricsSchemaId = "tta-metrics/1";

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string kind = "single-stream";
  std::string checkpoint;
  std::string fisher;  // optional
  std::vector<std::string> streams;
  std::string output_dir = ".";
  std::size_t repetitions = 1;
  std::uint64_t seed = 0;
  AdaptConfig adapt;
  std::vector<double> percents;          // entropy-partition
  std::vector<double> lr_grid;           // lr-sweep
  std::vector<std::size_t> length_grid;  // stream-length-sweep
};

inline const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {
      "single-stream",       "sequential-forgetting", "lifelong-forgetting",
      "entropy-partition",   "lr-sweep",              "stream-length-sweep"};
  return kinds;
}

inline OrderedJson adapt_config_to_json(const AdaptConfig& a) {
  OrderedJson j;
  j["method"] = std::string(method_name(a.method));
  j["lr"] = a.lr;
  j["momentum"] = a.momentum;
  j["beta"] = a.beta;
  j["beta_auto"] = a.beta_auto;
  j["batch_size"] = a.batch_size;
  j["reset_policy"] = std::string(reset_policy_name(a.reset_policy));
  if (a.window_len)
    j["window_len"] = *a.window_len;
  else
    j["window_len"] = nullptr;
  j["selection"] = {{"entropy_threshold", a.selection.entropy_threshold},
                    {"cos_threshold", a.selection.cos_threshold},
                    {"ema_alpha", a.selection.ema_alpha}};
  j["seed"] = a.seed;
  return j;
}

inline AdaptConfig adapt_config_from_json(const OrderedJson& j) {
  AdaptConfig a;
  if (j.contains("method")) a.method = method_from(j.at("method").get<std::string>());
  if (j.contains("lr")) a.lr = j.at("lr").get<double>();
  if (j.contains("momentum")) a.momentum = j.at("momentum").get<double>();
  if (j.contains("beta")) a.beta = j.at("beta").get<double>();
  if (j.contains("beta_auto")) a.beta_auto = j.at("beta_auto").get<bool>();
  if (j.contains("batch_size")) a.batch_size = j.at("batch_size").get<std::size_t>();
  if (j.contains("reset_policy"))
    a.reset_policy = reset_policy_from(j.at("reset_policy").get<std::string>());
  if (j.contains("window_len") && !j.at("window_len").is_null())
    a.window_len = j.at("window_len").get<std::size_t>();
  if (j.contains("selection")) {
    const auto& s = j.at("selection");
    if (s.contains("entropy_threshold"))
      a.selection.entropy_threshold = s.at("entropy_threshold").get<double>();
    if (s.contains("cos_threshold")) a.selection.cos_threshold = s.at("cos_threshold").get<double>();
    if (s.contains("ema_alpha")) a.selection.ema_alpha = s.at("ema_alpha").get<double>();
  }
  if (j.contains("seed")) a.seed = j.at("seed").get<std::uint64_t>();
  return a;
}

inline OrderedJson experiment_config_to_json(const ExperimentConfig& c) {
  OrderedJson j;
  j["kind"] = c.kind;
  j["checkpoint"] = c.checkpoint;
  j["fisher"] = c.fisher;
  j["streams"] = c.streams;
  j["output_dir"] = c.output_dir;
  j["repetitions"] = c.repetitions;
  j["seed"] = c.seed;
  j["adapt"] = adapt_config_to_json(c.adapt);
  j["percents"] = c.percents;
  j["lr_grid"] = c.lr_grid;
  j["length_grid"] = c.length_grid;
  return j;
}

inline ExperimentConfig experiment_config_from_json(const OrderedJson& j) {
  ExperimentConfig c;
  if (j.contains("kind")) c.kind = j.at("kind").get<std::string>();
  if (std::find(experiment_kinds().begin(), experiment_kinds().end(), c.kind) ==
      experiment_kinds().end())
    throw ConfigError("unknown experiment kind: " + c.kind);
  if (j.contains("checkpoint")) c.checkpoint = j.at("checkpoint").get<std::string>();
  if (j.contains("fisher")) c.fisher = j.at("fisher").get<std::string>();
  if (j.contains("streams")) c.streams = j.at("streams").get<std::vector<std::string>>();
  if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
  if (j.contains("repetitions")) c.repetitions = j.at("repetitions").get<std::size_t>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("adapt")) c.adapt = adapt_config_from_json(j.at("adapt"));
  if (j.contains("percents")) c.percents = j.at("percents").get<std::vector<double>>();
  if (j.contains("lr_grid")) c.lr_grid = j.at("lr_grid").get<std::vector<double>>();
  if (j.contains("length_grid"))
    c.length_grid = j.at("length_grid").get<std::vector<std::size_t>>();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open: " + path);
  OrderedJson j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Shared evaluation helpers
// ---------------------------------------------------------------------------

// Accuracy of frozen parameters over the stream, normalized with each test
// batch's own statistics (the way adaptive methods predict) but with no
// parameter updates.
inline double eval_stream_accuracy(const ParamSet& params, const ShiftStream& stream) {
  std::size_t hits = 0;
  for (std::size_t b = 0; b < stream.batch_count(); ++b) {
    StreamBatch sb = stream.batch(b);
    Matrix logits = forward(params, sb.features, BnMode::kBatchStats);
    const auto labels = stream.eval_labels(sb.begin, sb.end);
    for (std::size_t i = 0; i < logits.rows(); ++i)
      if (static_cast<std::uint32_t>(argmax(logits.row(i))) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(stream.sample_count());
}

// Clean probe for forgetting measurements: the full clean test split once,
// shuffled under a seed derived from the stream seed.
inline StreamManifest clean_probe_manifest(const StreamManifest& base, std::size_t batch) {
  StreamManifest probe;
  probe.source = base.source;
  probe.shifts.clear();
  probe.order = StreamOrder::kSequential;
  probe.length = base.source.class_count * base.source.samples_per_class;
  probe.batch = batch;
  probe.allow_repeats = false;
  probe.seed = Rng::derive_seed(base.seed, "clean-probe");
  return probe;
}

struct CleanAccuracy {
  double frozen = 0.0;   // running-stats inference, no updates
  double readapt = 0.0;  // online accuracy while the method (re)adapts on clean data
};

// Measures clean accuracy of the given parameters both ways. The readapt
// probe runs on a throwaway engine so the caller's state is untouched.
inline CleanAccuracy measure_clean_accuracy(const ParamSet& params, const LabeledSet& clean_test,
                                            const ShiftStream& probe, const AdaptConfig& adapt,
                                            const std::optional<FisherDiag>& fisher) {
  CleanAccuracy out;
  out.frozen = accuracy(params, clean_test, BnMode::kRunningStats, adapt.batch_size);
  AdaptConfig probe_cfg = adapt;
  probe_cfg.reset_policy = ResetPolicy::kPerStream;
  probe_cfg.window_len.reset();
  Engine probe_engine(params.snapshot(), probe_cfg, fisher);
  out.readapt = probe_engine.run_stream(probe).stream_accuracy;
  return out;
}

inline std::string trace_to_csv(const std::vector<BatchTrace>& traces) {
  std::ostringstream os;
  os.precision(17);
  os << "batch_index,shift_tag,batch_rows,n_active,entropy_mean,entropy_min,entropy_max,"
        "weight_mean,loss,reg_term,accuracy\n";
  for (const auto& t : traces) {
    os << t.batch_index << "," << t.shift_tag << "," << t.batch_rows << "," << t.n_active << ","
       << t.entropy_mean << "," << t.entropy_min << "," << t.entropy_max << "," << t.weight_mean
       << "," << t.loss << "," << t.reg_term << "," << t.accuracy << "\n";
  }
  return os.str();
}

inline OrderedJson metrics_to_json(const RunMetrics& m) {
  OrderedJson j;
  j["n_forward_samples"] = m.n_forward_samples;
  j["n_backward_samples"] = m.n_backward_samples;
  j["n_skipped_samples"] = m.n_skipped_samples;
  j["stream_accuracy"] = m.stream_accuracy;
  j["beta_used"] = m.beta_used;
  OrderedJson shifts = OrderedJson::object();
  for (const auto& [tag, acc] : m.per_shift_accuracy) shifts[tag] = acc;
  j["per_shift_accuracy"] = shifts;
  j["per_batch_accuracy"] = m.per_batch_accuracy;
  return j;
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

struct ExperimentOutput {
  OrderedJson metrics;
  // filename -> contents, written under output_dir
  std::vector<std::pair<std::string, std::string>> csv_files;
};

class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig config) : config_(std::move(config)) {
    if (config_.checkpoint.empty()) throw ConfigError("experiment: checkpoint path required");
    params_ = load_params(config_.checkpoint);
    if (!config_.fisher.empty()) {
      auto [arch, fisher] = load_fisher(config_.fisher);
      if (arch != params_.arch())
        throw ConfigError("experiment: fisher file does not match the checkpoint architecture");
      fisher_ = std::move(fisher);
    }
    if (config_.adapt.selection.entropy_threshold <= 0.0)
      config_.adapt.selection =
          resolve_selection(config_.adapt.selection, params_.arch().class_count);
    config_.adapt.validate(fisher_.has_value());
    for (const auto& path : config_.streams) streams_.push_back(load_stream(path));
  }

  // In-process alternative to the file-based constructor, used by tests.
  ExperimentRunner(ExperimentConfig config, ParamSet params, std::optional<FisherDiag> fisher,
                   std::vector<ShiftStream> streams)
      : config_(std::move(config)),
        params_(std::move(params)),
        fisher_(std::move(fisher)),
        streams_(std::move(streams)) {
    if (config_.adapt.selection.entropy_threshold <= 0.0)
      config_.adapt.selection =
          resolve_selection(config_.adapt.selection, params_.arch().class_count);
    config_.adapt.validate(fisher_.has_value());
  }

  static SelectionConfig resolve_selection(SelectionConfig s, std::size_t class_count) {
    SelectionConfig out = SelectionConfig::defaults_for(class_count);
    out.cos_threshold = s.cos_threshold;
    out.ema_alpha = s.ema_alpha;
    return out;
  }

  ExperimentOutput run() {
    if (config_.kind == "single-stream") return run_single_stream();
    if (config_.kind == "sequential-forgetting") return run_forgetting(ResetPolicy::kPerStream);
    if (config_.kind == "lifelong-forgetting") return run_forgetting(ResetPolicy::kLifelong);
    if (config_.kind == "entropy-partition") return run_partition();
    if (config_.kind == "lr-sweep") return run_lr_sweep();
    if (config_.kind == "stream-length-sweep") return run_length_sweep();
    throw ConfigError("unknown experiment kind: " + config_.kind);
  }

  const ParamSet& base_params() const { return params_; }
  const std::vector<ShiftStream>& streams() const { return streams_; }

 private:
  OrderedJson base_metrics() const {
    OrderedJson j;
    j["schema"] = std::string(kMetricsSchemaId);
    j["kind"] = config_.kind;
    j["config"] = experiment_config_to_json(config_);
    j["runs"] = OrderedJson::array();
    j["aggregate"] = OrderedJson::object();
    return j;
  }

  void require_streams() const {
    if (streams_.empty()) throw ConfigError("experiment: at least one stream required");
  }

  LabeledSet clean_test_for(const ShiftStream& stream) const {
    auto [train, test] = make_source(stream.manifest().source);
    (void)train;
    return std::move(test);
  }

  ExperimentOutput run_single_stream() {
    require_streams();
    ExperimentOutput out;
    OrderedJson top = base_metrics();
    std::vector<double> accs;
    for (std::size_t rep = 0; rep < config_.repetitions; ++rep) {
      Engine engine(params_.snapshot(), config_.adapt, fisher_);
      for (std::size_t s = 0; s < streams_.size(); ++s) {
        const ShiftStream& stream = streams_[s];
        ParamSet adapted = params_.snapshot();
        RunMetrics metrics = engine.run_stream(
            stream, [&](const ParamSet& p) { adapted = p.snapshot(); });
        const LabeledSet clean_test = clean_test_for(stream);
        const ShiftStream probe =
            make_stream(clean_probe_manifest(stream.manifest(), config_.adapt.batch_size));
        const CleanAccuracy clean =
            measure_clean_accuracy(adapted, clean_test, probe, config_.adapt, fisher_);
        OrderedJson run;
        run["repetition"] = rep;
        run["stream"] = s < config_.streams.size() ? config_.streams[s] : ("stream-" + std::to_string(s));
        run["results"] = metrics_to_json(metrics);
        run["clean_accuracy"] = {{"frozen", clean.frozen},
                                 {"readapt", clean.readapt},
                                 {"primary", "readapt"}};
        top["runs"].push_back(std::move(run));
        accs.push_back(metrics.stream_accuracy);
        out.csv_files.emplace_back(
            "trace_rep" + std::to_string(rep) + "_stream" + std::to_string(s) + ".csv",
            trace_to_csv(metrics.traces));
      }
    }
    top["aggregate"] = {{"stream_accuracy_mean", mean(accs)}};
    out.metrics = std::move(top);
    return out;
  }

  ExperimentOutput run_forgetting(ResetPolicy policy) {
    require_streams();
    // Clean accuracy is measured against the first stream's source split, so
    // every stage must come from the same source distribution.
    for (const auto& s : streams_)
      if (!(s.manifest().source == streams_.front().manifest().source))
        throw ConfigError("forgetting experiments need streams from one source spec");
    ExperimentOutput out;
    OrderedJson top = base_metrics();
    std::vector<double> final_clean_frozen;
    for (std::size_t rep = 0; rep < config_.repetitions; ++rep) {
      AdaptConfig adapt = config_.adapt;
      adapt.reset_policy = policy;
      Engine engine(params_.snapshot(), adapt, fisher_);

      const LabeledSet clean_test = clean_test_for(streams_.front());
      const ShiftStream probe =
          make_stream(clean_probe_manifest(streams_.front().manifest(), adapt.batch_size));
      const CleanAccuracy baseline =
          measure_clean_accuracy(params_, clean_test, probe, adapt, fisher_);

      OrderedJson run;
      run["repetition"] = rep;
      run["baseline_clean"] = {{"frozen", baseline.frozen},
                               {"readapt", baseline.readapt},
                               {"primary", "readapt"}};
      run["stages"] = OrderedJson::array();
      for (std::size_t s = 0; s < streams_.size(); ++s) {
        const ShiftStream& stream = streams_[s];
        ParamSet adapted = params_.snapshot();
        RunMetrics metrics = engine.run_stream(
            stream, [&](const ParamSet& p) { adapted = p.snapshot(); });
        const CleanAccuracy clean =
            measure_clean_accuracy(adapted, clean_test, probe, adapt, fisher_);
        OrderedJson stage;
        stage["stream"] =
            s < config_.streams.size() ? config_.streams[s] : ("stream-" + std::to_string(s));
        stage["shift"] = stream.manifest().shifts.empty()
                             ? std::string("clean")
                             : stream.manifest().shifts.front().tag();
        stage["results"] = metrics_to_json(metrics);
        stage["clean_accuracy"] = {{"frozen", clean.frozen},
                                   {"readapt", clean.readapt},
                                   {"primary", "readapt"}};
        run["stages"].push_back(std::move(stage));
        out.csv_files.emplace_back(
            "trace_rep" + std::to_string(rep) + "_stage" + std::to_string(s) + ".csv",
            trace_to_csv(metrics.traces));
        if (s + 1 == streams_.size()) final_clean_frozen.push_back(clean.frozen);
      }
      top["runs"].push_back(std::move(run));
    }
    top["aggregate"] = {{"final_clean_frozen_mean", mean(final_clean_frozen)}};
    out.metrics = std::move(top);
    return out;
  }

  // Entropy-partition study: adapt on the lowest-p% / highest-p% entropy
  // samples (entropy under the frozen base model, batch statistics), then
  // score the adapted model on the full stream.
  ExperimentOutput run_partition() {
    require_streams();
    if (config_.percents.empty()) throw ConfigError("entropy-partition: percents required");
    for (double p : config_.percents)
      if (p <= 0.0 || p > 100.0) throw ConfigError("entropy-partition: percents must be in (0,100]");

    const ShiftStream& stream = streams_.front();
    const std::size_t n = stream.sample_count();

    Vector entropies(n);
    for (std::size_t b = 0; b < stream.batch_count(); ++b) {
      StreamBatch sb = stream.batch(b);
      Matrix logits = forward(params_, sb.features, BnMode::kBatchStats);
      Matrix probs = softmax_rows(logits);
      for (std::size_t i = 0; i < probs.rows(); ++i)
        entropies[sb.begin + i] = entropy(probs.row(i));
    }
    std::vector<std::size_t> by_entropy(n);
    std::iota(by_entropy.begin(), by_entropy.end(), std::size_t{0});
    std::stable_sort(by_entropy.begin(), by_entropy.end(),
                     [&](std::size_t a, std::size_t b) { return entropies[a] < entropies[b]; });

    ExperimentOutput out;
    OrderedJson top = base_metrics();
    std::ostringstream csv;
    csv.precision(17);
    csv << "percent,subset_count,lowest_accuracy,highest_accuracy\n";
    for (double p : config_.percents) {
      std::size_t count = static_cast<std::size_t>(std::llround(p / 100.0 * static_cast<double>(n)));
      count = std::clamp<std::size_t>(count, 2, n);
      const double low = adapt_on_subset({by_entropy.begin(), by_entropy.begin() + count}, stream);
      const double high = adapt_on_subset({by_entropy.end() - count, by_entropy.end()}, stream);
      OrderedJson row;
      row["percent"] = p;
      row["subset_count"] = count;
      row["lowest_accuracy"] = low;
      row["highest_accuracy"] = high;
      top["runs"].push_back(std::move(row));
      csv << p << "," << count << "," << low << "," << high << "\n";
    }
    top["aggregate"] = {{"percent_count", config_.percents.size()}};
    out.metrics = std::move(top);
    out.csv_files.emplace_back("partition_study.csv", csv.str());
    return out;
  }

  double adapt_on_subset(std::vector<std::size_t> subset, const ShiftStream& stream) {
    std::sort(subset.begin(), subset.end());  // keep stream order within the subset
    AdaptConfig adapt = config_.adapt;
    adapt.reset_policy = ResetPolicy::kLifelong;  // adapted params are read back directly
    adapt.window_len.reset();
    Engine engine(params_.snapshot(), adapt, fisher_);
    const std::size_t bsz = adapt.batch_size;
    std::size_t begin = 0;
    while (begin < subset.size()) {
      std::size_t end = std::min(begin + bsz, subset.size());
      if (subset.size() - end == 1) end = subset.size();  // avoid a 1-row remainder
      Matrix batch(end - begin, stream.input_dim());
      for (std::size_t i = begin; i < end; ++i) {
        const auto row = stream.sample(subset[i]);
        std::copy(row.begin(), row.end(), batch.row(i - begin).begin());
      }
      engine.adapt_batch(batch);
      begin = end;
    }
    return eval_stream_accuracy(engine.params(), stream);
  }

  ExperimentOutput run_lr_sweep() {
    require_streams();
    if (config_.lr_grid.empty()) throw ConfigError("lr-sweep: lr_grid required");
    ExperimentOutput out;
    OrderedJson top = base_metrics();
    std::ostringstream csv;
    csv.precision(17);
    csv << "lr,stream_accuracy,n_backward_samples\n";
    for (double lr : config_.lr_grid) {
      AdaptConfig adapt = config_.adapt;
      adapt.lr = lr;
      Engine engine(params_.snapshot(), adapt, fisher_);
      RunMetrics metrics = engine.run_stream(streams_.front());
      OrderedJson row;
      row["lr"] = lr;
      row["results"] = metrics_to_json(metrics);
      top["runs"].push_back(std::move(row));
      csv << lr << "," << metrics.stream_accuracy << "," << metrics.n_backward_samples << "\n";
    }
    top["aggregate"] = {{"grid_size", config_.lr_grid.size()}};
    out.metrics = std::move(top);
    out.csv_files.emplace_back("lr_sweep.csv", csv.str());
    return out;
  }

  ExperimentOutput run_length_sweep() {
    require_streams();
    if (config_.length_grid.empty()) throw ConfigError("stream-length-sweep: length_grid required");
    ExperimentOutput out;
    OrderedJson top = base_metrics();
    std::ostringstream csv;
    csv.precision(17);
    csv << "length,stream_accuracy,n_backward_samples\n";
    for (std::size_t len : config_.length_grid) {
      StreamManifest manifest = streams_.front().manifest();
      manifest.length = len;
      const ShiftStream stream = make_stream(manifest);
      Engine engine(params_.snapshot(), config_.adapt, fisher_);
      RunMetrics metrics = engine.run_stream(stream);
      OrderedJson row;
      row["length"] = len;
      row["results"] = metrics_to_json(metrics);
      top["runs"].push_back(std::move(row));
      csv << len << "," << metrics.stream_accuracy << "," << metrics.n_backward_samples << "\n";
    }
    top["aggregate"] = {{"grid_size", config_.length_grid.size()}};
    out.metrics = std::move(top);
    out.csv_files.emplace_back("length_sweep.csv", csv.str());
    return out;
  }

  static double mean(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  }

  ExperimentConfig config_;
  ParamSet params_;
  std::optional<FisherDiag> fisher_;
  std::vector<ShiftStream> streams_;
};

inline void write_experiment_output(const std::string& output_dir, const ExperimentOutput& out,
                                    const std::string& metrics_name = "metrics.json") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec) throw IoError("cannot create output dir " + output_dir + ": " + ec.message());
  {
    std::ofstream os(fs::path(output_dir) / metrics_name, std::ios::trunc);
    if (!os) throw IoError("cannot write metrics to " + output_dir);
    os << out.metrics.dump(2) << "\n";
  }
  for (const auto& [name, contents] : out.csv_files) {
    std::ofstream os(fs::path(output_dir) / name, std::ios::trunc);
    if (!os) throw IoError("cannot write " + name + " to " + output_dir);
    os << contents;
  }
}

// ---------------------------------------------------------------------------
// Schema validation (subset of JSON Schema: type/required/properties/items/
// enum/const); enough to machine-check the published metrics schema.
// ---------------------------------------------------------------------------

inline bool validate_against_schema(const OrderedJson& value, const OrderedJson& schema,
                                    std::string* error, const std::string& path = "$") {
  auto fail = [&](const std::string& why) {
    if (error) *error = path + ": " + why;
    return false;
  };
  if (schema.contains("const") && value != schema.at("const")) return fail("const mismatch");
  if (schema.contains("enum")) {
    bool ok = false;
    for (const auto& v : schema.at("enum")) ok = ok || value == v;
    if (!ok) return fail("not in enum");
  }
  if (schema.contains("type")) {
    const std::string t = schema.at("type").get<std::string>();
    const bool ok = (t == "object" && value.is_object()) || (t == "array" && value.is_array()) ||
                    (t == "string" && value.is_string()) ||
                    (t == "number" && value.is_number()) ||
                    (t == "integer" && value.is_number_integer()) ||
                    (t == "boolean" && value.is_boolean()) || (t == "null" && value.is_null());
    if (!ok) return fail("expected type " + t);
  }
  if (schema.contains("required")) {
    for (const auto& k : schema.at("required")) {
      const std::string key = k.get<std::string>();
      if (!value.contains(key)) return fail("missing required field " + key);
    }
  }
  if (schema.contains("properties") && value.is_object()) {
    for (const auto& [key, sub] : schema.at("properties").items()) {
      if (!value.contains(key)) continue;
      if (!validate_against_schema(value.at(key), sub, error, path + "." + key)) return false;
    }
  }
  if (schema.contains("items") && value.is_array()) {
    std::size_t i = 0;
    for (const auto& item : value) {
      if (!validate_against_schema(item, schema.at("items"), error,
                                   path + "[" + std::to_string(i) + "]"))
        return false;
      ++i;
    }
  }
  return true;
}

}  // namespace tta
