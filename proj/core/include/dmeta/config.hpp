#pragma once

#include <map>
#include <string>

#include "dmeta/dataset.hpp"
#include "dmeta/evaluate.hpp"
#include "dmeta/meta_loop.hpp"

namespace dmeta {

/// Everything one run needs: dataset, model width, pretraining and inner
/// loop settings, evaluation protocol, output location. A saved resolved
/// config re-runs to bit-identical results.
struct RunConfig {
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out_dir = "runs/run";
  int model_channels = 0;  ///< 0: dataset default (64 Omniglot, 32 Mini-ImageNet)
  int way = 5;             ///< logit count during pretraining == evaluation way
  DatasetSpec data;
  MetaConfig meta;
  InnerLoopConfig inner;
  EvalSpec eval;

  /// Network for this config's dataset kind.
  NetworkSpec network_spec() const;

  void validate() const;
};

/// Line-oriented key=value text with dotted sections; '#' starts a comment.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies keys onto defaults. Unknown keys or unparsable values are
/// invalid-argument errors.
RunConfig config_from_keys(const std::map<std::string, std::string>& kv);

/// Sorted key=value serialization; parsing it back reproduces the config.
std::string serialize_config(const RunConfig& config);

}  // namespace dmeta
