#pragma once

#include <string>

#include "dmeta/model.hpp"
#include "dmeta/params.hpp"

namespace dmeta {

/// Checkpoint file: the magic string "DMETA1", a length-prefixed key=value
/// text header carrying the NetworkSpec fields and the total value count,
/// then every parameter tensor as little-endian 32-bit reals in the fixed
/// ParameterSet item order (conv0..conv3 with batchnorm affine and running
/// statistics, then fc).
void save_checkpoint(const std::string& path, const NetworkSpec& spec,
                     const ParameterSet& params);

struct Checkpoint {
  NetworkSpec spec;
  ParameterSet params;
};

/// Throws IoError on missing files or malformed content.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dmeta
