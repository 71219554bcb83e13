// Command line entry points: pretrain, evaluate, probability, export-logits.
// Exit codes: 0 success, 1 configuration/validation, 2 I/O, 3 numeric.
#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dmeta/checkpoint.hpp"
#include "dmeta/config.hpp"
#include "dmeta/errors.hpp"
#include "dmeta/evaluate.hpp"
#include "dmeta/jsonl.hpp"
#include "dmeta/meta_loop.hpp"
#include "dmeta/probability.hpp"
#include "dmeta/samplers.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigCli {
  std::string config_path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--set", overrides, "override, e.g. --set meta.iterations=50")
        ->take_all();
  }

  dmeta::RunConfig resolve() const {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = dmeta::read_config_file(config_path);
    for (const std::string& s : overrides) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("--set expects key=value, got: " + s);
      }
      kv[s.substr(0, eq)] = s.substr(eq + 1);
    }
    dmeta::RunConfig cfg = dmeta::config_from_keys(kv);
    if (cfg.data.kind != "synthetic" && cfg.data.root.empty()) {
      if (const char* env = std::getenv("DMETA_DATA_ROOT")) {
        const fs::path base(env);
        cfg.data.root = fs::is_directory(base / cfg.data.kind)
                            ? (base / cfg.data.kind).string()
                            : base.string();
      }
    }
    return cfg;
  }
};

std::string checkpoint_name(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "checkpoint_%06d.dmeta", iteration);
  return buf;
}

int cmd_pretrain(const ConfigCli& cli) {
  const dmeta::RunConfig cfg = cli.resolve();
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "resolved.cfg");
    if (!out) throw dmeta::IoError("cannot write resolved config in " + cfg.out_dir);
    out << dmeta::serialize_config(cfg);
  }

  const dmeta::DatasetPair data = dmeta::load_dataset(cfg.data);
  const dmeta::Model model(cfg.network_spec());

  dmeta::JsonlWriter metrics((fs::path(cfg.out_dir) / "metrics.jsonl").string());
  dmeta::JsonlWriter inner_log((fs::path(cfg.out_dir) / "inner.jsonl").string());
  dmeta::MetaHooks hooks;
  hooks.on_meta_row = [&](const nlohmann::json& row) { metrics.write(row); };
  hooks.on_inner_row = [&](const nlohmann::json& row) { inner_log.write(row); };
  hooks.on_checkpoint = [&](int iteration, const dmeta::ParameterSet& params) {
    dmeta::save_checkpoint((fs::path(cfg.out_dir) / checkpoint_name(iteration)).string(),
                           model.spec(), params);
  };

  const dmeta::ParameterSet final_params =
      dmeta::run_pretraining(model, data.pretraining, cfg.meta, cfg.inner, &hooks);
  const std::string final_path = (fs::path(cfg.out_dir) / "checkpoint_final.dmeta").string();
  dmeta::save_checkpoint(final_path, model.spec(), final_params);
  std::cout << "pretrained mode=" << dmeta::to_string(cfg.meta.mode)
            << " iterations=" << cfg.meta.meta_iterations << " -> " << final_path
            << "\n";
  return 0;
}

int cmd_evaluate(const ConfigCli& cli, const std::string& checkpoint_path,
                 std::string out_path, const std::string& label) {
  const dmeta::RunConfig cfg = cli.resolve();
  dmeta::Checkpoint ckpt;
  try {
    ckpt = dmeta::load_checkpoint(checkpoint_path);
  } catch (const dmeta::IoError& e) {
    // a checkpoint that cannot be parsed is a usage error for evaluate
    throw std::invalid_argument(e.what());
  }
  if (ckpt.spec.num_logits != cfg.eval.way) {
    throw std::invalid_argument("checkpoint head width " +
                                std::to_string(ckpt.spec.num_logits) +
                                " does not match eval way " + std::to_string(cfg.eval.way));
  }

  const dmeta::DatasetPair data = dmeta::load_dataset(cfg.data);
  const dmeta::Model model(ckpt.spec);
  dmeta::EvalReport report =
      dmeta::evaluate(model, ckpt.params, data.evaluation, cfg.eval, cfg.seed);
  report.mode = label.empty() ? "checkpoint" : label;

  const nlohmann::json j = report.to_json();
  std::cout << j.dump(2) << "\n";
  if (out_path.empty()) {
    out_path = (fs::path(checkpoint_path).parent_path() / "eval_report.json").string();
  }
  std::ofstream out(out_path);
  if (!out) throw dmeta::IoError("cannot write report: " + out_path);
  out << j.dump(2) << "\n";
  return 0;
}

int cmd_probability(long long classes, long long per_class, long long sample) {
  const double p = dmeta::unique_class_probability(classes, per_class, sample);
  std::printf("%.6f\n", p);
  return 0;
}

int cmd_export_logits(const ConfigCli& cli, const std::string& checkpoint_path,
                      const std::string& out_path, std::uint64_t task_seed,
                      int query_per_class) {
  const dmeta::RunConfig cfg = cli.resolve();
  dmeta::Checkpoint ckpt;
  try {
    ckpt = dmeta::load_checkpoint(checkpoint_path);
  } catch (const dmeta::IoError& e) {
    throw std::invalid_argument(e.what());
  }
  const dmeta::DatasetPair data = dmeta::load_dataset(cfg.data);
  const dmeta::Model model(ckpt.spec);

  dmeta::RngStream rng = dmeta::RngStream::from_label(task_seed, "export/task");
  dmeta::EvalTask task = dmeta::sample_class_task(data.evaluation, cfg.eval.way,
                                                  cfg.eval.shot, query_per_class, rng);
  const dmeta::ParameterSet tuned =
      dmeta::fine_tune(model, ckpt.params, task, cfg.eval.fine_tune);

  std::ofstream out(out_path);
  if (!out) throw dmeta::IoError("cannot write logits CSV: " + out_path);
  dmeta::export_logits(model, tuned, task, 0, cfg.eval.fine_tune.transductive, out);
  std::cout << "wrote " << task.query_labels.size() << " query rows to " << out_path
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divergent-search meta-learning for few-shot image classification"};
  app.require_subcommand(1);

  ConfigCli pretrain_cfg;
  CLI::App* pretrain = app.add_subcommand("pretrain", "run a pretraining mode");
  pretrain_cfg.attach(pretrain);

  ConfigCli eval_cfg;
  std::string eval_checkpoint, eval_out, eval_label;
  CLI::App* evaluate = app.add_subcommand("evaluate", "N-way K-shot evaluation");
  eval_cfg.attach(evaluate);
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  evaluate->add_option("--out", eval_out, "report path (default: beside the checkpoint)");
  evaluate->add_option("--label", eval_label, "mode label stored in the report");

  long long p_classes = 0, p_per_class = 0, p_sample = 0;
  CLI::App* probability =
      app.add_subcommand("probability", "unique-class probability of a uniform sample");
  probability->add_option("--classes", p_classes, "number of classes")->required();
  probability->add_option("--images-per-class", p_per_class, "images per class")->required();
  probability->add_option("--sample-size", p_sample, "sample size")->required();

  ConfigCli export_cfg;
  std::string export_checkpoint, export_out = "logits.csv";
  std::uint64_t export_seed = 0;
  int export_query = 10;
  CLI::App* export_logits =
      app.add_subcommand("export-logits", "fine-tune on one task and dump query logits");
  export_cfg.attach(export_logits);
  export_logits->add_option("--checkpoint", export_checkpoint, "checkpoint file")->required();
  export_logits->add_option("--out", export_out, "CSV path");
  export_logits->add_option("--task-seed", export_seed, "task sampling seed");
  export_logits->add_option("--query-per-class", export_query, "query images per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(pretrain_cfg);
    if (evaluate->parsed()) return cmd_evaluate(eval_cfg, eval_checkpoint, eval_out, eval_label);
    if (probability->parsed()) return cmd_probability(p_classes, p_per_class, p_sample);
    if (export_logits->parsed()) {
      return cmd_export_logits(export_cfg, export_checkpoint, export_out, export_seed,
                               export_query);
    }
  } catch (const dmeta::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const dmeta::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
