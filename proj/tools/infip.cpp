// infip: fingerprint extraction, attack simulation and ownership verification.

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "infip/pipeline.hpp"

namespace {

using namespace infip;

struct DataFlags {
  std::string dataset;
  bool synthetic = false;
  std::uint64_t data_seed = 1;

  void add(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "Dataset directory (labels.csv + PGM files, optional train/ test/)");
    cmd->add_flag("--synthetic", synthetic, "Use the built-in seeded synthetic dataset");
    cmd->add_option("--data-seed", data_seed, "Synthetic generator seed (or split seed for a flat directory)");
  }

  DataSource source() const {
    DataSource s;
    s.synthetic = synthetic;
    if (!dataset.empty()) s.directory = dataset;
    s.seed = data_seed;
    return s;
  }
};

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* flag) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw UsageError(std::string(flag) + ": cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"infip - explainable model fingerprints for ownership verification"};
  app.require_subcommand(1);

  // train
  DataFlags train_data;
  TrainOptions train_opts;
  std::string train_out;
  auto* train = app.add_subcommand("train", "Train the preset model");
  train_data.add(train);
  train->add_option("--epochs", train_opts.config.epochs, "Training epochs")->capture_default_str();
  train->add_option("--lr", train_opts.config.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--batch-size", train_opts.config.batch_size, "Mini-batch size")->capture_default_str();
  train->add_option("--momentum", train_opts.config.momentum, "SGD momentum in [0,1)")->capture_default_str();
  train->add_option("--seed", train_opts.config.seed, "Initialisation and shuffling seed")->capture_default_str();
  train->add_option("--out", train_out, "Output directory")->required();

  // extract
  DataFlags extract_data;
  ExtractOptions extract_opts;
  std::string extract_model, extract_keys, extract_keys_out, extract_out;
  std::size_t extract_n = 0;
  auto* extract = app.add_subcommand("extract", "Extract a fingerprint set from a model");
  extract->add_option("--model", extract_model, "Model file")->required();
  extract_data.add(extract);
  extract->add_option("--keys", extract_keys, "Existing key set file (keys.json)");
  extract->add_option("--keys-out", extract_keys_out, "Save the selected key set here");
  auto* n_opt = extract->add_option("--n", extract_n, "Number of key instances (default 400)");
  extract->add_option("--lambda", extract_opts.lambda, "Magnification factor")->capture_default_str();
  extract->add_option("--seed", extract_opts.seed, "Key selection seed")->capture_default_str();
  extract->add_option("--out", extract_out, "Fingerprint directory")->required();

  // verify
  VerifyOptions verify_opts;
  std::string verify_ref, verify_sus, verify_out;
  auto* verify_cmd = app.add_subcommand("verify", "Compare two fingerprint sets and decide ownership");
  verify_cmd->add_option("--reference", verify_ref, "Owner's fingerprint directory")->required();
  verify_cmd->add_option("--suspect", verify_sus, "Suspect model's fingerprint directory")->required();
  verify_cmd->add_option("--threshold", verify_opts.threshold, "ASSIM threshold")->capture_default_str();
  verify_cmd->add_option("--out", verify_out, "Directory for report.json");

  // attack
  DataFlags attack_data;
  std::string attack_model, attack_kind, attack_config, attack_out;
  AttackSpec attack_overrides;
  auto* attack = app.add_subcommand("attack", "Apply a model-modification attack");
  attack->add_option("--model", attack_model, "Model file")->required();
  attack->add_option("--attack", attack_kind, "finetune | prune | watermark | adaptive")
      ->check(CLI::IsMember({"finetune", "prune", "watermark", "adaptive"}));
  attack->add_option("--config", attack_config, "Attack spec JSON file");
  attack_data.add(attack);
  auto* a_epochs = attack->add_option("--epochs", attack_overrides.epochs, "Fine-tuning / embedding epochs");
  auto* a_lr = attack->add_option("--lr", attack_overrides.learning_rate, "Learning rate");
  auto* a_rate = attack->add_option("--rate", attack_overrides.prune_rate, "Pruning rate p in [0,1]");
  auto* a_target = attack->add_option("--target", attack_overrides.target_class, "Watermark target class");
  auto* a_amp = attack->add_option("--amplitude", attack_overrides.trigger_amplitude, "Watermark trigger amplitude");
  auto* a_seed = attack->add_option("--seed", attack_overrides.seed, "Attack seed");
  attack->add_option("--out", attack_out, "Output directory")->required();

  // sweep
  DataFlags sweep_data;
  SweepOptions sweep_opts;
  std::string sweep_model, sweep_attacks = "none,finetune,prune,watermark",
                           sweep_lambdas = "1000,5000,7500,10000,12500,15000", sweep_ns = "50,200,275,350,425,500",
                           sweep_out;
  std::size_t sweep_n = 0, sweep_epochs = 0;
  auto* sweep = app.add_subcommand("sweep", "ASSIM over lambda and key-count grids for a list of attacks");
  sweep->add_option("--model", sweep_model, "Model file")->required();
  sweep_data.add(sweep);
  sweep->add_option("--attacks", sweep_attacks, "Comma-separated attacks (none, finetune, prune, watermark, adaptive)")
      ->capture_default_str();
  sweep->add_option("--lambdas", sweep_lambdas, "Comma-separated lambda grid")->capture_default_str();
  sweep->add_option("--ns", sweep_ns, "Comma-separated key-count grid")->capture_default_str();
  sweep->add_option("--lambda", sweep_opts.lambda, "Lambda used for the key-count sweep")->capture_default_str();
  auto* s_n = sweep->add_option("--n", sweep_n, "Key count used for the lambda sweep (default 400)");
  auto* s_epochs = sweep->add_option("--epochs", sweep_epochs, "Override attack epochs");
  sweep->add_option("--rate", sweep_opts.prune_rate, "Pruning rate")->capture_default_str();
  sweep->add_option("--seed", sweep_opts.seed, "Key selection seed")->capture_default_str();
  sweep->add_option("--attack-seed", sweep_opts.attack_seed, "Attack seed")->capture_default_str();
  sweep->add_flag("--color", sweep_opts.color, "Also write colorized PPM montages");
  sweep->add_option("--out", sweep_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      train_opts.data = train_data.source();
      train_opts.out = train_out;
      const auto r = cmd_train(train_opts);
      std::cout << "model " << r.model.hash() << "\n"
                << "train accuracy " << r.train_accuracy << "\n"
                << "test accuracy " << r.test_accuracy << "\n";
    } else if (*extract) {
      extract_opts.model = extract_model;
      extract_opts.data = extract_data.source();
      if (!extract_keys.empty()) extract_opts.keys = extract_keys;
      if (!extract_keys_out.empty()) extract_opts.keys_out = extract_keys_out;
      if (n_opt->count()) extract_opts.n = extract_n;
      extract_opts.out = extract_out;
      const auto r = cmd_extract(extract_opts);
      print_warnings(r.warnings);
      std::cout << "fingerprints " << r.set.size() << "\n"
                << "model " << r.set.model_hash << "\n"
                << "key set " << r.set.key_set_hash << "\n"
                << "lambda " << r.set.lambda << "\n"
                << "median peak " << median_peak_intensity(r.set) << "/255" << (r.low_visibility ? " (low visibility)" : "") << "\n"
                << "directory digest " << directory_digest(extract_out) << "\n";
    } else if (*verify_cmd) {
      verify_opts.reference = verify_ref;
      verify_opts.suspect = verify_sus;
      if (!verify_out.empty()) verify_opts.out = verify_out;
      const auto report = cmd_verify(verify_opts);
      std::cout << format_report(report);
      if (verify_out.empty()) std::cout << report_to_json(report).dump(2) << "\n";
    } else if (*attack) {
      AttackOptions opts;
      opts.model = attack_model;
      opts.data = attack_data.source();
      opts.out = attack_out;
      if (!attack_config.empty()) {
        try {
          opts.spec = attack_spec_from_json(read_json(attack_config));
        } catch (const InvalidArgument& e) {
          throw UsageError(e.what());
        }
        if (!attack_kind.empty() && parse_attack_kind(attack_kind) != opts.spec.kind)
          throw UsageError("--attack disagrees with the kind in --config");
      } else if (!attack_kind.empty()) {
        opts.spec = AttackSpec::defaults(parse_attack_kind(attack_kind));
      } else {
        throw UsageError("attack: give --attack KIND or --config FILE");
      }
      if (a_epochs->count()) opts.spec.epochs = attack_overrides.epochs;
      if (a_lr->count()) opts.spec.learning_rate = attack_overrides.learning_rate;
      if (a_rate->count()) opts.spec.prune_rate = attack_overrides.prune_rate;
      if (a_target->count()) opts.spec.target_class = attack_overrides.target_class;
      if (a_amp->count()) opts.spec.trigger_amplitude = attack_overrides.trigger_amplitude;
      if (a_seed->count()) opts.spec.seed = attack_overrides.seed;
      const auto r = cmd_attack(opts);
      std::cout << "attack " << attack_kind_name(opts.spec.kind) << "\n"
                << "model " << r.model.hash() << "\n";
      if (r.test_accuracy) std::cout << "test accuracy " << *r.test_accuracy << "\n";
      if (r.watermark_accuracy) std::cout << "watermark accuracy " << *r.watermark_accuracy << "\n";
    } else if (*sweep) {
      sweep_opts.model = sweep_model;
      sweep_opts.data = sweep_data.source();
      sweep_opts.attacks.clear();
      std::stringstream ss(sweep_attacks);
      for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) sweep_opts.attacks.push_back(item);
      sweep_opts.lambdas = parse_list<double>(sweep_lambdas, "--lambdas");
      sweep_opts.ns = parse_list<std::size_t>(sweep_ns, "--ns");
      if (s_n->count()) sweep_opts.n = sweep_n;
      if (s_epochs->count()) sweep_opts.attack_epochs = sweep_epochs;
      sweep_opts.out = sweep_out;
      std::cout << sweep_csv(cmd_sweep(sweep_opts));
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
