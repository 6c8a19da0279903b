#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "infip/dataset.hpp"
#include "infip/error.hpp"
#include "infip/model.hpp"
#include "infip/rng.hpp"
#include "infip/train.hpp"

namespace infip {

enum class AttackKind { FineTune, Prune, WatermarkOverwrite, Adaptive };

inline const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::FineTune: return "finetune";
    case AttackKind::Prune: return "prune";
    case AttackKind::WatermarkOverwrite: return "watermark";
    case AttackKind::Adaptive: return "adaptive";
  }
  return "unknown";
}

inline AttackKind parse_attack_kind(const std::string& name) {
  if (name == "finetune" || name == "fine-tune" || name == "fine_tune") return AttackKind::FineTune;
  if (name == "prune") return AttackKind::Prune;
  if (name == "watermark" || name == "watermark-overwrite" || name == "watermark_overwrite") return AttackKind::WatermarkOverwrite;
  if (name == "adaptive") return AttackKind::Adaptive;
  throw InvalidArgument("unknown attack kind '" + name + "' (expected finetune, prune, watermark or adaptive)");
}

/// Attack parameters. Fields irrelevant to a kind are ignored by it.
struct AttackSpec {
  AttackKind kind = AttackKind::FineTune;
  std::size_t epochs = 10;
  double learning_rate = 0.005;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double prune_rate = 0.4;
  std::size_t target_class = 0;
  double trigger_amplitude = 0.3;   // std of the Gaussian trigger, in [0,1] pixel units
  double watermark_fraction = 0.2;  // share of attacker data copied as trigger instances
  double holdout_fraction = 0.2;    // share of attacker data kept back to measure WA
  std::uint64_t seed = 0;

  // Per-kind defaults.
  static AttackSpec defaults(AttackKind kind) {
    AttackSpec s;
    s.kind = kind;
    if (kind == AttackKind::WatermarkOverwrite) {
      s.epochs = 5;
      s.learning_rate = 0.002;
      s.watermark_fraction = 0.1;
    }
    return s;
  }

  TrainConfig train_config() const { return {learning_rate, epochs, batch_size, seed, momentum}; }

  void validate(std::size_t num_classes) const {
    if (!(prune_rate >= 0.0 && prune_rate <= 1.0)) throw InvalidArgument("attack: prune rate must lie in [0, 1]");
    if (target_class >= num_classes)
      throw InvalidArgument("attack: target class " + std::to_string(target_class) + " outside [0, " + std::to_string(num_classes) + ")");
    if (!(trigger_amplitude >= 0.0) || !std::isfinite(trigger_amplitude)) throw InvalidArgument("attack: trigger amplitude must be >= 0");
    if (!(watermark_fraction > 0.0 && watermark_fraction <= 1.0)) throw InvalidArgument("attack: watermark fraction must lie in (0, 1]");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) throw InvalidArgument("attack: holdout fraction must lie in (0, 1)");
    if (epochs > 0) train_config().validate();
  }
};

inline nlohmann::json attack_spec_to_json(const AttackSpec& s) {
  return {{"kind", attack_kind_name(s.kind)},       {"epochs", s.epochs},
          {"learning_rate", s.learning_rate},       {"batch_size", s.batch_size},
          {"momentum", s.momentum},                 {"prune_rate", s.prune_rate},
          {"target_class", s.target_class},         {"trigger_amplitude", s.trigger_amplitude},
          {"watermark_fraction", s.watermark_fraction}, {"holdout_fraction", s.holdout_fraction},
          {"seed", s.seed}};
}

// Missing fields take the per-kind defaults.
inline AttackSpec attack_spec_from_json(const nlohmann::json& j) {
  try {
    AttackSpec s = AttackSpec::defaults(parse_attack_kind(j.at("kind").get<std::string>()));
    for (const auto& [key, value] : j.items()) {
      if (key == "kind") continue;
      else if (key == "epochs") s.epochs = value.get<std::size_t>();
      else if (key == "learning_rate") s.learning_rate = value.get<double>();
      else if (key == "batch_size") s.batch_size = value.get<std::size_t>();
      else if (key == "momentum") s.momentum = value.get<double>();
      else if (key == "prune_rate") s.prune_rate = value.get<double>();
      else if (key == "target_class") s.target_class = value.get<std::size_t>();
      else if (key == "trigger_amplitude") s.trigger_amplitude = value.get<double>();
      else if (key == "watermark_fraction") s.watermark_fraction = value.get<double>();
      else if (key == "holdout_fraction") s.holdout_fraction = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else throw InvalidArgument("attack spec: unknown field '" + key + "'");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("attack spec: ") + e.what());
  }
}

// Appends one entry, tagged with the parent's hash, to the JSON-array
// lineage note carried by `model`.
inline Model append_lineage(const Model& model, const Model& parent, nlohmann::json entry) {
  nlohmann::json lineage = nlohmann::json::array();
  if (!model.lineage().empty()) {
    try {
      lineage = nlohmann::json::parse(model.lineage());
    } catch (const nlohmann::json::exception&) {
      lineage = nlohmann::json::array({model.lineage()});
    }
    if (!lineage.is_array()) lineage = nlohmann::json::array({lineage});
  }
  entry["parent_hash"] = parent.hash();
  lineage.push_back(std::move(entry));
  return model.with_lineage(lineage.dump());
}

inline Model fine_tune_attack(const Model& model, const LabeledDataset& data, const AttackSpec& spec) {
  spec.validate(model.num_classes());
  Model tuned = train_sgd(model, data, spec.train_config());
  nlohmann::json note = {{"op", "finetune"}, {"spec", attack_spec_to_json(spec)}};
  return append_lineage(tuned, model, note);
}

/// Global unstructured magnitude pruning over all Dense/Conv weights
/// (biases excluded). Exactly floor(p * total) weights with the smallest
/// |w| become zero; ties go to the lower flat index.
inline Model prune_attack(const Model& model, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw InvalidArgument("prune: rate must lie in [0, 1]");
  auto layers = model.layers();
  std::vector<double*> weights;
  for (Layer& l : layers)
    if (l.weighted())
      for (double& w : l.weights->values()) weights.push_back(&w);
  const auto count = static_cast<std::size_t>(std::floor(p * static_cast<double>(weights.size())));
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(*weights[a]) < std::abs(*weights[b]); });
  for (std::size_t k = 0; k < count; ++k) *weights[order[k]] = 0.0;
  Model pruned = model.with_layers(std::move(layers));
  if (count == 0) return pruned;
  return append_lineage(pruned, model, {{"op", "prune"}, {"rate", p}, {"pruned_weights", count}});
}

// Seeded Gaussian trigger shared by every watermark instance.
inline Tensor make_trigger(const Shape& shape, double amplitude, std::uint64_t seed) {
  Rng rng(seed ^ 0x7752494747455253ULL);
  Tensor pattern(shape);
  for (double& v : pattern.values()) v = amplitude * rng.normal();
  return pattern;
}

inline Tensor apply_trigger(const Tensor& x, const Tensor& pattern) {
  Tensor out = add(x, pattern);
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

struct WatermarkResult {
  Model model;
  double watermark_accuracy = 0.0;
  std::size_t trigger_instances = 0;
  std::size_t holdout_instances = 0;
};

/// Embeds a noise-trigger watermark: copies of attacker images with the
/// trigger added are labelled as the target class and the model is
/// fine-tuned on the clean plus triggered union. WA is measured on
/// triggered copies of a held-out share of the attacker data, excluding
/// images whose true class already is the target.
inline WatermarkResult watermark_overwrite_attack(const Model& model, const LabeledDataset& data, const AttackSpec& spec) {
  spec.validate(model.num_classes());
  if (data.size() < 2) throw InvalidArgument("watermark: need at least two attacker instances");
  data.validate();
  const Tensor pattern = make_trigger(model.input_shape(), spec.trigger_amplitude, spec.seed);
  Rng rng(spec.seed);
  const auto order = rng.permutation(data.size());
  const std::size_t holdout =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::floor(spec.holdout_fraction * data.size())), 1, data.size() - 1);

  LabeledDataset train{data.id + "+watermark", data.input_shape, data.num_classes, {}, {}, {}};
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
  for (std::size_t i : train_idx) {
    train.images.push_back(data.images[i]);
    train.labels.push_back(data.labels[i]);
    train.ids.push_back(data.ids[i]);
  }
  const auto triggers = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(spec.watermark_fraction * train_idx.size())));
  for (std::size_t k = 0; k < triggers; ++k) {
    const std::size_t i = train_idx[k];
    train.images.push_back(apply_trigger(data.images[i], pattern));
    train.labels.push_back(spec.target_class);
    train.ids.push_back(data.ids[i] + "+trigger");
  }

  WatermarkResult result{train_sgd(model, train, spec.train_config()), 0.0, triggers, 0};
  std::size_t hits = 0;
  for (std::size_t k = 0; k < holdout; ++k) {
    const std::size_t i = order[k];
    if (data.labels[i] == spec.target_class) continue;
    ++result.holdout_instances;
    hits += predict(result.model, apply_trigger(data.images[i], pattern)) == spec.target_class;
  }
  if (result.holdout_instances > 0)
    result.watermark_accuracy = static_cast<double>(hits) / static_cast<double>(result.holdout_instances);
  result.model = append_lineage(result.model, model, {{"op", "watermark"},
                                               {"spec", attack_spec_to_json(spec)},
                                               {"watermark_accuracy", result.watermark_accuracy}});
  return result;
}

/// Prune, then fine-tune to recover accuracy.
inline Model adaptive_attack(const Model& model, const LabeledDataset& data, const AttackSpec& spec) {
  spec.validate(model.num_classes());
  AttackSpec tune = spec;
  tune.kind = AttackKind::FineTune;
  return fine_tune_attack(prune_attack(model, spec.prune_rate), data, tune);
}

struct AttackOutcome {
  Model model;
  std::optional<double> watermark_accuracy;
};

inline AttackOutcome run_attack(const Model& model, const LabeledDataset& data, const AttackSpec& spec) {
  switch (spec.kind) {
    case AttackKind::FineTune: return {fine_tune_attack(model, data, spec), std::nullopt};
    case AttackKind::Prune: spec.validate(model.num_classes()); return {prune_attack(model, spec.prune_rate), std::nullopt};
    case AttackKind::WatermarkOverwrite: {
      auto r = watermark_overwrite_attack(model, data, spec);
      return {std::move(r.model), r.watermark_accuracy};
    }
    case AttackKind::Adaptive: return {adaptive_attack(model, data, spec), std::nullopt};
  }
  throw InvalidArgument("unknown attack kind");
}

}  // namespace infip
