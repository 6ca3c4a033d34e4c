#include "effcl/checkpoint.hpp"

#include "effcl/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace effcl {

namespace {

constexpr const char* kFormat = "effcl.encoder";
constexpr int kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw CheckpointError("truncated checkpoint header");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

float get_f32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw CheckpointError("truncated checkpoint payload");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return std::bit_cast<float>(v);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const EncoderConfig& cfg,
                     const EncoderWeights<double>& weights) {
  nlohmann::json tensors = nlohmann::json::array();
  zip_tensors(
      [&](const std::string& name, const auto& t) {
        tensors.push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
      },
      weights);
  const nlohmann::json header{
      {"format", kFormat}, {"version", kVersion}, {"config", to_json(cfg)}, {"tensors", tensors}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  put_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  zip_tensors(
      [&](const std::string&, const auto& t) {
        for (Eigen::Index i = 0; i < t.size(); ++i)
          put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(t.data()[i])));
      },
      weights);
  if (!out) throw CheckpointError("I/O error while writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  const std::uint64_t n = get_u64(in);
  if (n > (1u << 26)) throw CheckpointError("implausible checkpoint header size");
  std::string text(n, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
  }
  if (header.value("format", "") != kFormat || header.value("version", 0) != kVersion)
    throw CheckpointError("unsupported checkpoint format in " + path.string());

  Checkpoint ck;
  ck.config = encoder_config_from_json(header.at("config"));
  ck.config.validate();
  ck.weights = EncoderWeights<double>::zeros(ck.config);
  const auto& tensors = header.at("tensors");
  std::size_t index = 0;
  zip_tensors(
      [&](const std::string& name, auto& t) {
        if (index >= tensors.size()) throw CheckpointError("checkpoint lists too few tensors");
        const auto& entry = tensors[index++];
        if (entry.at("name") != name || entry.at("shape")[0] != t.rows() || entry.at("shape")[1] != t.cols())
          throw CheckpointError("checkpoint tensor '" + name + "' does not match its configuration");
        for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = get_f32(in);
      },
      ck.weights);
  if (index != tensors.size()) throw CheckpointError("checkpoint lists unexpected tensors");
  return ck;
}

}  // namespace effcl
