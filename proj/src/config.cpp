#include "effcl/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace effcl {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) throw ConfigError("unknown key '" + item.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
      if (!it->is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer");
      if constexpr (std::is_same_v<T, std::uint64_t>)
        if (!it->is_number_unsigned()) throw ConfigError(std::string("'") + key + "' must be nonnegative");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!it->is_number()) throw ConfigError(std::string("'") + key + "' must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!it->is_string()) throw ConfigError(std::string("'") + key + "' must be a string");
    }
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

bool is_default_policy_shape(const CurriculumPolicy& p) {
  const CurriculumPolicy d;
  return p.min_level == d.min_level && p.max_level == d.max_level && p.num_stages == d.num_stages;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
  if (!(max_grad_norm > 0)) throw ConfigError("max_grad_norm must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (anchor_len < 1) throw ConfigError("anchor_len must be positive");
  if (!(warmup_frac > 0 && warmup_frac < 1)) throw ConfigError("warmup_frac must lie in (0, 1)");
  if (!(mask_prob >= 0 && mask_prob <= 1)) throw ConfigError("mask_prob must lie in [0, 1]");
  curriculum.validate();
  encoder.validate();
  if (anchor_len > encoder.max_len) throw ConfigError("anchor_len exceeds encoder.max_len");
}

json to_json(const EncoderConfig& cfg) {
  return json{{"num_layers", cfg.num_layers}, {"hidden_dim", cfg.hidden_dim},
              {"num_heads", cfg.num_heads},   {"ffn_dim", cfg.ffn_dim},
              {"vocab_size", cfg.vocab_size}, {"max_len", cfg.max_len},
              {"hook_layer_choices", cfg.hook_layer_choices}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  reject_unknown(j,
                 {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "vocab_size", "max_len",
                  "hook_layer_choices"},
                 "encoder");
  EncoderConfig cfg;
  read(j, "num_layers", cfg.num_layers);
  read(j, "hidden_dim", cfg.hidden_dim);
  read(j, "num_heads", cfg.num_heads);
  read(j, "ffn_dim", cfg.ffn_dim);
  read(j, "vocab_size", cfg.vocab_size);
  read(j, "max_len", cfg.max_len);
  if (const auto it = j.find("hook_layer_choices"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("'hook_layer_choices' must be an array of integers");
    cfg.hook_layer_choices.clear();
    for (const auto& v : *it) {
      if (!v.is_number_integer()) throw ConfigError("'hook_layer_choices' must be an array of integers");
      cfg.hook_layer_choices.push_back(v.get<int>());
    }
  }
  return cfg;
}

json to_json(const TrainConfig& cfg) {
  json curriculum;
  if (is_default_policy_shape(cfg.curriculum)) {
    curriculum = to_string(cfg.curriculum.mode);
  } else {
    curriculum = json{{"mode", to_string(cfg.curriculum.mode)},
                      {"min_level", cfg.curriculum.min_level},
                      {"max_level", cfg.curriculum.max_level},
                      {"num_stages", cfg.curriculum.num_stages}};
  }
  return json{{"batch_size", cfg.batch_size},
              {"temperature", cfg.temperature},
              {"learning_rate", cfg.learning_rate},
              {"weight_decay", cfg.weight_decay},
              {"max_grad_norm", cfg.max_grad_norm},
              {"epochs", cfg.epochs},
              {"anchor_len", cfg.anchor_len},
              {"curriculum", curriculum},
              {"seed", cfg.seed},
              {"warmup_frac", cfg.warmup_frac},
              {"mask_prob", cfg.mask_prob},
              {"encoder", to_json(cfg.encoder)},
              {"corpus_path", cfg.corpus_path},
              {"output_dir", cfg.output_dir}};
}

TrainConfig train_config_from_json(const json& j) {
  reject_unknown(j,
                 {"batch_size", "temperature", "learning_rate", "weight_decay", "max_grad_norm", "epochs",
                  "anchor_len", "curriculum", "seed", "warmup_frac", "mask_prob", "encoder", "corpus_path",
                  "output_dir"},
                 "config");
  TrainConfig cfg;
  read(j, "batch_size", cfg.batch_size);
  read(j, "temperature", cfg.temperature);
  read(j, "learning_rate", cfg.learning_rate);
  read(j, "weight_decay", cfg.weight_decay);
  read(j, "max_grad_norm", cfg.max_grad_norm);
  read(j, "epochs", cfg.epochs);
  read(j, "anchor_len", cfg.anchor_len);
  read(j, "seed", cfg.seed);
  read(j, "warmup_frac", cfg.warmup_frac);
  read(j, "mask_prob", cfg.mask_prob);
  read(j, "corpus_path", cfg.corpus_path);
  read(j, "output_dir", cfg.output_dir);
  if (const auto it = j.find("curriculum"); it != j.end()) {
    if (it->is_string()) {
      cfg.curriculum.mode = parse_curriculum_mode(it->get<std::string>());
    } else if (it->is_object()) {
      reject_unknown(*it, {"mode", "min_level", "max_level", "num_stages"}, "curriculum");
      std::string mode = to_string(cfg.curriculum.mode);
      read(*it, "mode", mode);
      cfg.curriculum.mode = parse_curriculum_mode(mode);
      read(*it, "min_level", cfg.curriculum.min_level);
      read(*it, "max_level", cfg.curriculum.max_level);
      read(*it, "num_stages", cfg.curriculum.num_stages);
    } else {
      throw ConfigError("'curriculum' must be a string or an object");
    }
  }
  if (const auto it = j.find("encoder"); it != j.end()) cfg.encoder = encoder_config_from_json(*it);
  cfg.validate();
  return cfg;
}

TrainConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  return train_config_from_json(j);
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string serialize_config(const TrainConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

}  // namespace effcl
