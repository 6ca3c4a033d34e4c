#pragma once

#include "effcl/encoder.hpp"

#include <filesystem>

namespace effcl {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Encoder checkpoint layout:
///   uint64 little-endian  header byte count
///   header                UTF-8 JSON {"format", "version", "config", "tensors": [{"name", "shape"}]}
///   payload               little-endian float32 tensors in header order, column-major
void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& cfg,
                     const EncoderWeights<double>& weights);

struct Checkpoint {
  EncoderConfig config;
  EncoderWeights<double> weights;  // float32 values widened
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace effcl
