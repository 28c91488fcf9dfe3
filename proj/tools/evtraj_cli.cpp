// Command-line front end: dataset generation, training, evaluation and experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "evtraj/evtraj.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

evtraj::KeyValueConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  return evtraj::KeyValueConfig::load(path);
}

void apply_seed_override(evtraj::KeyValueConfig& kv) {
  if (auto s = evtraj::seed_override()) {
    kv.set("seed", std::to_string(*s));
    kv.set("init_seed", std::to_string(*s));
  }
}

int cmd_generate(const std::string& config_path, const std::string& out) {
  auto kv = load_config(config_path);
  apply_seed_override(kv);
  const auto cfg = evtraj::GeneratorConfig::from(kv);
  kv.require_all_used();
  const auto records = evtraj::generate(cfg);
  evtraj::write_dataset(records, out);
  std::cout << "wrote " << records.size() << " records to " << out << '\n';
  return 0;
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& out) {
  auto kv = load_config(config_path);
  apply_seed_override(kv);
  const auto mc = evtraj::ModelConfig::from(kv);
  const auto tc = evtraj::TrainConfig::from(kv);
  kv.require_all_used();

  const auto records = evtraj::read_dataset(data);
  std::vector<evtraj::TrajectoryRecord> train_set, val_set;
  for (const auto& r : records) {
    if (r.in_training()) train_set.push_back(r);
    else if (r.split == evtraj::Split::kVal) val_set.push_back(r);
  }
  const auto train_samples = evtraj::make_samples(train_set, mc);
  const auto val_samples = evtraj::make_samples(val_set, mc);
  const auto result = evtraj::train(evtraj::init_params(mc), train_samples, val_samples, tc);
  for (std::size_t e = 0; e < result.history.size(); ++e)
    std::cout << "epoch " << e << " train " << std::setprecision(6) << result.history[e].train_loss << " val "
              << result.history[e].val_loss << '\n';
  std::cout << "best epoch " << result.best_epoch << (result.stopped_early ? " (early stop)" : "") << '\n';
  evtraj::save_checkpoint(result.params, out);
  return 0;
}

int cmd_evaluate(const std::string& model, const std::string& data, const std::string& out, const std::string& channel) {
  evtraj::EvalOptions opts;
  opts.curve_channel = evtraj::parse_error_channel(channel);
  const auto report = evtraj::evaluate(model, data, out, opts);
  std::cout << evtraj::to_json(report).dump(2) << '\n';
  return 0;
}

int cmd_reject_curve(const std::string& model_path, const std::string& data, const std::string& out,
                     const std::string& channel) {
  evtraj::EvalOptions opts;
  opts.curve_channel = evtraj::parse_error_channel(channel);
  const evtraj::Model model(evtraj::load_checkpoint(model_path));
  const auto records = evtraj::read_dataset(data);
  const auto test = evtraj::eval_split(records);
  const auto ev = evtraj::evaluate_records(evtraj::model_predictor(model), test, opts);
  evtraj::write_curve_csv(ev.curve, out);
  std::cout << "wrote " << ev.curve.size() << " curve points to " << out << '\n';
  return 0;
}

int cmd_importance_sampling(const std::string& config_path, const std::string& out) {
  auto kv = load_config(config_path);
  const auto cfg = evtraj::ExperimentConfig::from(kv);
  kv.require_all_used();
  if (cfg.dataset.empty()) throw evtraj::ConfigError("config must name a dataset");
  const auto records = evtraj::read_dataset(cfg.dataset);
  const auto result = evtraj::importance_sampling_experiment(
      records, cfg, [](const std::string& msg) { std::cerr << msg << '\n'; });
  std::filesystem::create_directories(out);
  const std::filesystem::path dir(out);
  evtraj::write_json(evtraj::to_json(result), (dir / "importance_sampling.json").string());
  const std::string table = evtraj::format_table(result);
  std::ofstream(dir / "importance_sampling.txt") << table;
  std::cout << table;
  return 0;
}

int cmd_density_check(const std::string& model_path, const std::string& data) {
  const evtraj::Model model(evtraj::load_checkpoint(model_path));
  const auto records = evtraj::read_dataset(data);
  const auto check = evtraj::density_uncertainty_check(model, records);
  std::cout << evtraj::to_json(check).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidential multi-modal trajectory prediction toolkit"};
  app.require_subcommand(1);

  std::string config, out, data, model, channel = "minade";

  auto* gen = app.add_subcommand("generate", "Generate a synthetic JSON-lines dataset");
  gen->add_option("--config", config, "Generator config file");
  gen->add_option("--out", out, "Output dataset path")->required();

  auto* tr = app.add_subcommand("train", "Train a predictor on the train_a/train_b splits");
  tr->add_option("--data", data, "Dataset path")->required();
  tr->add_option("--config", config, "Model/training config file");
  tr->add_option("--out", out, "Checkpoint path")->required();

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
  ev->add_option("--model", model, "Checkpoint path")->required();
  ev->add_option("--data", data, "Dataset path")->required();
  ev->add_option("--out", out, "Output directory")->required();
  ev->add_option("--rauc-error", channel, "Error channel of the exported curve")
      ->check(CLI::IsMember({"minade", "wade"}));

  auto* rc = app.add_subcommand("reject-curve", "Write the rejection curve as CSV");
  rc->add_option("--model", model, "Checkpoint path")->required();
  rc->add_option("--data", data, "Dataset path")->required();
  rc->add_option("--out", out, "CSV path")->required();
  rc->add_option("--rauc-error", channel, "Error channel")->check(CLI::IsMember({"minade", "wade"}));

  auto* is = app.add_subcommand("importance-sampling", "Run the uncertainty-driven data selection experiment");
  is->add_option("--config", config, "Experiment config file")->required();
  is->add_option("--out", out, "Output directory")->required();

  auto* dc = app.add_subcommand("density-check", "Correlate maneuver frequency with predicted uncertainty");
  dc->add_option("--model", model, "Checkpoint path")->required();
  dc->add_option("--data", data, "Dataset path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*gen) return cmd_generate(config, out);
    if (*tr) return cmd_train(data, config, out);
    if (*ev) return cmd_evaluate(model, data, out, channel);
    if (*rc) return cmd_reject_curve(model, data, out, channel);
    if (*is) return cmd_importance_sampling(config, out);
    if (*dc) return cmd_density_check(model, data);
  } catch (const evtraj::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const evtraj::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const evtraj::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const evtraj::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const evtraj::ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
