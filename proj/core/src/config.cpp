#include "dmeta/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "dmeta/errors.hpp"

namespace dmeta {

namespace {

long long to_int(const std::string& v) {
  std::size_t pos = 0;
  const long long out = std::stoll(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not an integer: " + v);
  return out;
}

double to_real(const std::string& v) {
  std::size_t pos = 0;
  const double out = std::stod(v, &pos);
  if (pos != v.size()) throw std::invalid_argument("not a number: " + v);
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("not a boolean: " + v);
}

std::string bool_str(bool v) { return v ? "true" : "false"; }

std::string real_str(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

}  // namespace

NetworkSpec RunConfig::network_spec() const {
  NetworkSpec spec;
  if (data.kind == "mini-imagenet") {
    spec = NetworkSpec::mini_imagenet(way, model_channels > 0 ? model_channels : 32);
  } else {
    spec = NetworkSpec::omniglot(way, model_channels > 0 ? model_channels : 64);
  }
  return spec;
}

void RunConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("config: workers must be >= 1");
  if (way < 2) throw std::invalid_argument("config: way must be >= 2");
  network_spec().validate();
  meta.validate();
  inner.validate();
  eval.validate();
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

RunConfig config_from_keys(const std::map<std::string, std::string>& kv) {
  RunConfig cfg;
  int ambiguous_batch = 0;  // 0: dataset default

  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"seed", [&](const std::string& v) { cfg.seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"workers", [&](const std::string& v) { cfg.workers = static_cast<int>(to_int(v)); }},
      {"out", [&](const std::string& v) { cfg.out_dir = v; }},
      {"way", [&](const std::string& v) { cfg.way = static_cast<int>(to_int(v)); }},
      {"model.channels", [&](const std::string& v) { cfg.model_channels = static_cast<int>(to_int(v)); }},
      {"data.kind", [&](const std::string& v) { cfg.data.kind = v; }},
      {"data.root", [&](const std::string& v) { cfg.data.root = v; }},
      {"data.synth_pretrain_classes", [&](const std::string& v) { cfg.data.synth_pretrain_classes = static_cast<int>(to_int(v)); }},
      {"data.synth_eval_classes", [&](const std::string& v) { cfg.data.synth_eval_classes = static_cast<int>(to_int(v)); }},
      {"data.synth_per_class", [&](const std::string& v) { cfg.data.synth_per_class = static_cast<int>(to_int(v)); }},
      {"data.synth_seed", [&](const std::string& v) { cfg.data.synth_seed = static_cast<std::uint64_t>(to_int(v)); }},
      {"data.synth_control_jitter", [&](const std::string& v) { cfg.data.synth_params.control_jitter_px = to_real(v); }},
      {"data.synth_rotation_deg", [&](const std::string& v) { cfg.data.synth_params.rotation_deg = to_real(v); }},
      {"data.synth_translate", [&](const std::string& v) { cfg.data.synth_params.translate_px = to_real(v); }},
      {"data.synth_noise_sigma", [&](const std::string& v) { cfg.data.synth_params.noise_sigma = to_real(v); }},
      {"meta.mode", [&](const std::string& v) { cfg.meta.mode = parse_meta_mode(v); }},
      {"meta.iterations", [&](const std::string& v) { cfg.meta.meta_iterations = static_cast<int>(to_int(v)); }},
      {"meta.tasks_per_step", [&](const std::string& v) { cfg.meta.tasks_per_step = static_cast<int>(to_int(v)); }},
      {"meta.step_start", [&](const std::string& v) { cfg.meta.meta_step_start = static_cast<float>(to_real(v)); }},
      {"meta.step_end", [&](const std::string& v) { cfg.meta.meta_step_end = static_cast<float>(to_real(v)); }},
      {"meta.ambiguous_batch_size", [&](const std::string& v) { ambiguous_batch = static_cast<int>(to_int(v)); }},
      {"meta.pseudo_task_size", [&](const std::string& v) { cfg.meta.pseudo_task_size = static_cast<int>(to_int(v)); }},
      {"meta.supervised_shots", [&](const std::string& v) { cfg.meta.supervised_shots = static_cast<int>(to_int(v)); }},
      {"meta.umtra_variants", [&](const std::string& v) { cfg.meta.umtra_variants = static_cast<int>(to_int(v)); }},
      {"meta.checkpoint_every", [&](const std::string& v) { cfg.meta.checkpoint_every = static_cast<int>(to_int(v)); }},
      {"inner.joint_steps", [&](const std::string& v) { cfg.inner.joint_steps = static_cast<int>(to_int(v)); }},
      {"inner.learner_steps", [&](const std::string& v) { cfg.inner.learner_steps = static_cast<int>(to_int(v)); }},
      {"inner.teacher_lr", [&](const std::string& v) { cfg.inner.teacher_lr = static_cast<float>(to_real(v)); }},
      {"inner.index_lr", [&](const std::string& v) { cfg.inner.index_lr = static_cast<float>(to_real(v)); }},
      {"inner.robust_lr", [&](const std::string& v) { cfg.inner.robust_lr = static_cast<float>(to_real(v)); }},
      {"inner.learner_lr", [&](const std::string& v) { cfg.inner.learner_lr = static_cast<float>(to_real(v)); }},
      {"inner.sigma_init", [&](const std::string& v) { cfg.inner.sigma_init = static_cast<float>(to_real(v)); }},
      {"inner.sigma_growth", [&](const std::string& v) { cfg.inner.sigma_growth = static_cast<float>(to_real(v)); }},
      {"inner.sigma_cap", [&](const std::string& v) { cfg.inner.sigma_cap = static_cast<float>(to_real(v)); }},
      {"inner.dropout_rate", [&](const std::string& v) { cfg.inner.dropout_rate = static_cast<float>(to_real(v)); }},
      {"inner.learner_minibatch", [&](const std::string& v) { cfg.inner.learner_minibatch = static_cast<int>(to_int(v)); }},
      {"eval.shot", [&](const std::string& v) { cfg.eval.shot = static_cast<int>(to_int(v)); }},
      {"eval.query_per_class", [&](const std::string& v) { cfg.eval.query_per_class = static_cast<int>(to_int(v)); }},
      {"eval.num_tasks", [&](const std::string& v) { cfg.eval.num_tasks = static_cast<int>(to_int(v)); }},
      {"eval.steps", [&](const std::string& v) { cfg.eval.fine_tune.steps = static_cast<int>(to_int(v)); }},
      {"eval.lr", [&](const std::string& v) { cfg.eval.fine_tune.lr = static_cast<float>(to_real(v)); }},
      {"eval.transductive", [&](const std::string& v) { cfg.eval.fine_tune.transductive = to_bool(v); }},
      {"eval.keep_per_task", [&](const std::string& v) { cfg.eval.keep_per_task = to_bool(v); }},
  };

  for (const auto& [key, value] : kv) {
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw std::invalid_argument("unknown config key: " + key);
    }
    try {
      it->second(value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config key " + key + ": " + e.what());
    }
  }

  cfg.eval.way = cfg.way;
  cfg.meta.seed = cfg.seed;
  cfg.meta.workers = cfg.workers;
  cfg.eval.workers = cfg.workers;
  if (ambiguous_batch > 0) {
    cfg.meta.ambiguous_batch_size = ambiguous_batch;
  } else {
    cfg.meta.ambiguous_batch_size = cfg.data.kind == "mini-imagenet" ? 20 : 90;
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::map<std::string, std::string> kv{
      {"seed", std::to_string(cfg.seed)},
      {"workers", std::to_string(cfg.workers)},
      {"out", cfg.out_dir},
      {"way", std::to_string(cfg.way)},
      {"model.channels", std::to_string(cfg.model_channels)},
      {"data.kind", cfg.data.kind},
      {"data.root", cfg.data.root},
      {"data.synth_pretrain_classes", std::to_string(cfg.data.synth_pretrain_classes)},
      {"data.synth_eval_classes", std::to_string(cfg.data.synth_eval_classes)},
      {"data.synth_per_class", std::to_string(cfg.data.synth_per_class)},
      {"data.synth_seed", std::to_string(cfg.data.synth_seed)},
      {"data.synth_control_jitter", real_str(cfg.data.synth_params.control_jitter_px)},
      {"data.synth_rotation_deg", real_str(cfg.data.synth_params.rotation_deg)},
      {"data.synth_translate", real_str(cfg.data.synth_params.translate_px)},
      {"data.synth_noise_sigma", real_str(cfg.data.synth_params.noise_sigma)},
      {"meta.mode", to_string(cfg.meta.mode)},
      {"meta.iterations", std::to_string(cfg.meta.meta_iterations)},
      {"meta.tasks_per_step", std::to_string(cfg.meta.tasks_per_step)},
      {"meta.step_start", real_str(cfg.meta.meta_step_start)},
      {"meta.step_end", real_str(cfg.meta.meta_step_end)},
      {"meta.ambiguous_batch_size", std::to_string(cfg.meta.ambiguous_batch_size)},
      {"meta.pseudo_task_size", std::to_string(cfg.meta.pseudo_task_size)},
      {"meta.supervised_shots", std::to_string(cfg.meta.supervised_shots)},
      {"meta.umtra_variants", std::to_string(cfg.meta.umtra_variants)},
      {"meta.checkpoint_every", std::to_string(cfg.meta.checkpoint_every)},
      {"inner.joint_steps", std::to_string(cfg.inner.joint_steps)},
      {"inner.learner_steps", std::to_string(cfg.inner.learner_steps)},
      {"inner.teacher_lr", real_str(cfg.inner.teacher_lr)},
      {"inner.index_lr", real_str(cfg.inner.index_lr)},
      {"inner.robust_lr", real_str(cfg.inner.robust_lr)},
      {"inner.learner_lr", real_str(cfg.inner.learner_lr)},
      {"inner.sigma_init", real_str(cfg.inner.sigma_init)},
      {"inner.sigma_growth", real_str(cfg.inner.sigma_growth)},
      {"inner.sigma_cap", real_str(cfg.inner.sigma_cap)},
      {"inner.dropout_rate", real_str(cfg.inner.dropout_rate)},
      {"inner.learner_minibatch", std::to_string(cfg.inner.learner_minibatch)},
      {"eval.shot", std::to_string(cfg.eval.shot)},
      {"eval.query_per_class", std::to_string(cfg.eval.query_per_class)},
      {"eval.num_tasks", std::to_string(cfg.eval.num_tasks)},
      {"eval.steps", std::to_string(cfg.eval.fine_tune.steps)},
      {"eval.lr", real_str(cfg.eval.fine_tune.lr)},
      {"eval.transductive", bool_str(cfg.eval.fine_tune.transductive)},
      {"eval.keep_per_task", bool_str(cfg.eval.keep_per_task)},
  };
  std::string out;
  for (const auto& [key, value] : kv) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace dmeta
