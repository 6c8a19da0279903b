#pragma once

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "infip/attacks.hpp"
#include "infip/dataset.hpp"
#include "infip/error.hpp"
#include "infip/fingerprint.hpp"
#include "infip/model.hpp"
#include "infip/model_io.hpp"
#include "infip/similarity.hpp"
#include "infip/train.hpp"

namespace infip {

namespace fs = std::filesystem;

inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr const char* kModelFile = "model.infm";
inline constexpr const char* kReportFile = "report.json";

/// Where instances come from: a PGM directory or the seeded synthetic generator.
struct DataSource {
  std::optional<fs::path> directory;
  bool synthetic = false;
  std::uint64_t seed = 1;  // generator seed, or split seed for a flat directory
  SyntheticSpec synthetic_spec;

  bool present() const noexcept { return synthetic || directory.has_value(); }
};

inline DatasetSplits load_data(const DataSource& source) {
  if (source.synthetic && source.directory) throw UsageError("give either --synthetic or --dataset, not both");
  if (source.synthetic) {
    SyntheticSpec spec = source.synthetic_spec;
    spec.seed = source.seed;
    return make_synthetic(spec);
  }
  if (source.directory) return load_dataset_splits(*source.directory, source.seed);
  throw UsageError("a dataset is required (--synthetic or --dataset DIR)");
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file_bytes(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  DataSource data;
  TrainConfig config;
  fs::path out;
};

struct TrainResult {
  Model model;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

inline nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"batch_size", c.batch_size},
          {"seed", c.seed}, {"momentum", c.momentum}};
}

/// Trains the preset architecture; writes model.infm and metrics.json.
inline TrainResult cmd_train(const TrainOptions& opts) {
  const DatasetSplits data = load_data(opts.data);
  Model initial = make_preset_model(opts.config.seed, data.train.input_shape, data.train.num_classes);
  Model trained = train_sgd(initial, data.train, opts.config);
  trained = trained.with_lineage(nlohmann::json::array({nlohmann::json{
      {"op", "train"}, {"dataset_id", data.train.id}, {"config", train_config_json(opts.config)}}}).dump());
  TrainResult result{trained, accuracy(trained, data.train), accuracy(trained, data.test)};
  fs::create_directories(opts.out);
  save_model(trained, opts.out / kModelFile);
  write_json(opts.out / "metrics.json", {{"schema_version", kMetricsSchemaVersion},
                                         {"model_hash", trained.hash()},
                                         {"dataset_id", data.train.id},
                                         {"train_instances", data.train.size()},
                                         {"test_instances", data.test.size()},
                                         {"train_accuracy", result.train_accuracy},
                                         {"test_accuracy", result.test_accuracy},
                                         {"config", train_config_json(opts.config)}});
  return result;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOptions {
  fs::path model;
  DataSource data;
  std::optional<fs::path> keys;      // existing key set; otherwise selected from the test split
  std::optional<fs::path> keys_out;  // where to save a freshly selected key set
  std::optional<std::size_t> n;      // unset means the default, scaled down to the pool
  double lambda = kDefaultLambda;
  std::uint64_t seed = 0;
  fs::path out;
};

struct ExtractResult {
  FingerprintSet set;
  KeyInstanceSet keys;
  bool low_visibility = false;
  std::vector<std::string> warnings;
};

/// Selects keys from a pool. An explicit count larger than the pool is an
/// error; the default count shrinks to the pool size with a warning.
inline KeyInstanceSet choose_keys(const LabeledDataset& pool, std::optional<std::size_t> n, std::uint64_t seed,
                                  std::vector<std::string>& warnings) {
  std::size_t count = n.value_or(kDefaultKeyCount);
  if (!n && count > pool.size()) {
    warnings.push_back("default key count " + std::to_string(count) + " exceeds the " + std::to_string(pool.size()) +
                       " available instances; using " + std::to_string(pool.size()));
    count = pool.size();
  }
  KeyInstanceSet keys = select_key_instances(pool, count, seed);
  if (!keys.stratified) warnings.push_back("some class has no instances; keys were sampled uniformly without stratification");
  return keys;
}

inline ExtractResult cmd_extract(const ExtractOptions& opts) {
  validate_lambda(opts.lambda);
  const Model model = load_model(opts.model);
  ExtractResult result;
  if (opts.keys) {
    if (opts.data.present()) throw UsageError("give either --keys or a dataset for key selection, not both");
    result.keys = load_key_set(*opts.keys);
  } else {
    result.keys = choose_keys(load_data(opts.data).test, opts.n, opts.seed, result.warnings);
  }
  result.set = extract_fingerprint_set(model, result.keys, opts.lambda);
  result.low_visibility = low_visibility(result.set);
  if (result.low_visibility)
    result.warnings.push_back("low visibility: median fingerprint peak is " +
                              std::to_string(static_cast<int>(median_peak_intensity(result.set))) + "/255");
  save_fingerprint_set(result.set, opts.out);
  if (opts.keys_out) save_key_set(result.keys, *opts.keys_out);
  return result;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyOptions {
  fs::path reference;
  fs::path suspect;
  double threshold = kDefaultThreshold;
  std::optional<fs::path> out;
};

inline VerificationReport cmd_verify(const VerifyOptions& opts) {
  validate_threshold(opts.threshold);
  const FingerprintSet s = load_fingerprint_set(opts.reference);
  const FingerprintSet s_prime = load_fingerprint_set(opts.suspect);
  VerificationReport report = verify(s, s_prime, opts.threshold);
  if (opts.out) {
    fs::create_directories(*opts.out);
    write_json(*opts.out / kReportFile, report_to_json(report));
  }
  return report;
}

inline std::string format_report(const VerificationReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "reference model  " << r.reference.model_hash.substr(0, 16) << "  lambda " << r.reference.lambda << "\n"
     << "suspect model    " << r.suspect.model_hash.substr(0, 16) << "  lambda " << r.suspect.lambda << "\n"
     << "key set          " << r.reference.key_set_hash.substr(0, 16) << "  N = " << r.per_instance_ssim.size() << "\n";
  double lo = 1.0, hi = -1.0;
  for (double v : r.per_instance_ssim) lo = std::min(lo, v), hi = std::max(hi, v);
  os << "SSIM min / max   " << lo << " / " << hi << "\n"
     << "ASSIM            " << r.assim << "\n"
     << "threshold        " << r.threshold << "\n"
     << "decision         " << verdict_name(r.decision) << "\n";
  if (!r.mismatch_notes.empty()) os << "notes            " << r.mismatch_notes.size() << " (see report)\n";
  return os.str();
}

// ---------------------------------------------------------------------------
// attack

struct AttackOptions {
  fs::path model;
  AttackSpec spec;
  DataSource data;
  fs::path out;
};

struct AttackResult {
  Model model;
  std::optional<double> watermark_accuracy;
  std::optional<double> test_accuracy;
};

inline bool attack_needs_data(AttackKind kind) { return kind != AttackKind::Prune; }

/// Runs one attack on the attacker's share (the train split) and writes the
/// attacked model with its lineage plus attack.json.
inline AttackResult cmd_attack(const AttackOptions& opts) {
  const Model original = load_model(opts.model);
  std::optional<DatasetSplits> data;
  if (attack_needs_data(opts.spec.kind) || opts.data.present()) data = load_data(opts.data);
  const LabeledDataset empty{};
  AttackOutcome outcome = run_attack(original, data ? data->train : empty, opts.spec);
  AttackResult result{std::move(outcome.model), outcome.watermark_accuracy, std::nullopt};
  if (data) result.test_accuracy = accuracy(result.model, data->test);

  fs::create_directories(opts.out);
  save_model(result.model, opts.out / kModelFile);
  nlohmann::json j = {{"schema_version", kMetricsSchemaVersion},
                      {"attack", attack_spec_to_json(opts.spec)},
                      {"parent_hash", original.hash()},
                      {"model_hash", result.model.hash()}};
  if (result.watermark_accuracy) j["watermark_accuracy"] = *result.watermark_accuracy;
  if (result.test_accuracy) j["test_accuracy"] = *result.test_accuracy;
  if (opts.spec.kind == AttackKind::Prune || opts.spec.kind == AttackKind::Adaptive)
    j["pruned_weights"] = static_cast<std::size_t>(std::floor(opts.spec.prune_rate * static_cast<double>(original.weight_count())));
  write_json(opts.out / "attack.json", j);
  return result;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepOptions {
  fs::path model;
  DataSource data;
  std::vector<std::string> attacks{"none", "finetune", "prune", "watermark"};
  std::vector<double> lambdas;
  std::vector<std::size_t> ns;
  double lambda = kDefaultLambda;          // held fixed during the N sweep
  std::optional<std::size_t> n;            // held fixed during the lambda sweep
  std::optional<std::size_t> attack_epochs;  // overrides the per-kind default
  double prune_rate = 0.4;
  std::size_t target_class = 0;
  std::uint64_t attack_seed = 0;
  std::uint64_t seed = 0;                  // key selection
  std::size_t montage_columns = 8;
  bool color = false;
  fs::path out;
};

struct SweepRow {
  std::string attack;
  std::string parameter;  // "lambda" or "n"
  double value = 0.0;
  double assim = 0.0;
};

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(15) << v;
  return os.str();
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "attack,parameter,value,assim\n";
  for (const auto& r : rows)
    os << r.attack << ',' << r.parameter << ',' << format_number(r.value) << ',' << std::fixed << std::setprecision(10)
       << r.assim << std::defaultfloat << '\n';
  return os.str();
}

/// ASSIM of the original versus each attacked model over a lambda grid and
/// a key-count grid. Writes sweep.csv and, per cell, a two-row montage
/// (reference fingerprints above, suspect below).
inline std::vector<SweepRow> cmd_sweep(const SweepOptions& opts) {
  if (opts.attacks.empty()) throw UsageError("sweep: attack list is empty");
  if (opts.lambdas.empty() && opts.ns.empty()) throw UsageError("sweep: parameter grid is empty (give --lambdas and/or --ns)");
  for (double l : opts.lambdas) validate_lambda(l);
  validate_lambda(opts.lambda);
  for (std::size_t n : opts.ns)
    if (n == 0) throw UsageError("sweep: key counts must be positive");
  for (const auto& a : opts.attacks) {
    if (a == "none") continue;
    try {
      parse_attack_kind(a);
    } catch (const InvalidArgument& e) {
      throw UsageError(std::string("sweep: ") + e.what());
    }
  }

  const Model original = load_model(opts.model);
  const DatasetSplits data = load_data(opts.data);
  std::vector<std::string> warnings;
  const KeyInstanceSet default_keys = choose_keys(data.test, opts.n, opts.seed, warnings);
  fs::create_directories(opts.out);

  // Reference sets depend only on the cell, not on the attack.
  std::map<std::pair<std::string, double>, FingerprintSet> references;
  auto reference = [&](const KeyInstanceSet& keys, double lambda) -> const FingerprintSet& {
    const auto key = std::make_pair(keys.set_hash, lambda);
    auto it = references.find(key);
    if (it == references.end()) it = references.emplace(key, extract_fingerprint_set(original, keys, lambda)).first;
    return it->second;
  };

  std::vector<SweepRow> rows;
  for (const auto& name : opts.attacks) {
    Model suspect = original;
    if (name != "none") {
      AttackSpec spec = AttackSpec::defaults(parse_attack_kind(name));
      if (opts.attack_epochs) spec.epochs = *opts.attack_epochs;
      spec.prune_rate = opts.prune_rate;
      spec.target_class = opts.target_class;
      spec.seed = opts.attack_seed;
      suspect = run_attack(original, data.train, spec).model;
    }
    auto cell = [&](const KeyInstanceSet& keys, double lambda, const std::string& parameter, double value) {
      const FingerprintSet& s = reference(keys, lambda);
      const FingerprintSet s_prime = name == "none" ? s : extract_fingerprint_set(suspect, keys, lambda);
      rows.push_back({name, parameter, value, assim(s, s_prime)});
      std::vector<const GrayImage*> top, bottom;
      for (std::size_t i = 0; i < std::min(opts.montage_columns, s.size()); ++i) {
        top.push_back(&s.fingerprints[i].image);
        bottom.push_back(&s_prime.fingerprints[i].image);
      }
      const GrayImage montage = make_montage({top, bottom});
      const std::string stem = "montage_" + name + "_" + parameter + "_" + format_number(value);
      write_pgm(opts.out / (stem + ".pgm"), montage);
      if (opts.color) write_file_bytes(opts.out / (stem + ".ppm"), encode_ppm(colorize(montage)));
    };
    for (double lambda : opts.lambdas) cell(default_keys, lambda, "lambda", lambda);
    for (std::size_t n : opts.ns) {
      if (n > data.test.size())
        throw UsageError("sweep: key count " + std::to_string(n) + " exceeds the " + std::to_string(data.test.size()) +
                         " test instances");
      cell(select_key_instances(data.test, n, opts.seed), opts.lambda, "n", static_cast<double>(n));
    }
  }
  write_file_bytes(opts.out / "sweep.csv", sweep_csv(rows));
  return rows;
}

}  // namespace infip
