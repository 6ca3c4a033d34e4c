#pragma once

#include "effcl/curriculum.hpp"
#include "effcl/encoder.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace effcl {

struct TrainConfig {
  int batch_size = 4;
  double temperature = 0.05;
  double learning_rate = 5e-5;
  double weight_decay = 0.1;
  double max_grad_norm = 1.0;
  int epochs = 1;
  int anchor_len = 64;
  CurriculumPolicy curriculum;
  std::uint64_t seed = 0;
  double warmup_frac = 0.1;
  double mask_prob = 0.15;
  EncoderConfig encoder;
  std::string corpus_path;
  std::string output_dir;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const TrainConfig& cfg);
/// Strict: unknown keys and mistyped values raise ConfigError. Omitted keys
/// keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const TrainConfig& cfg);

}  // namespace effcl
