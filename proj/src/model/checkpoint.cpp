#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "etd/error.hpp"
#include "etd/model.hpp"

namespace etd::model {

namespace {

constexpr const char* kFormat = "etd-checkpoint";
constexpr int kVersion = 1;

std::uint64_t to_little_endian(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap64(v);
  return v;
}

std::filesystem::path with_suffix(const std::filesystem::path& prefix, const char* suffix) {
  return std::filesystem::path(prefix.string() + suffix);
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& prefix) {
  const auto params = model.parameters();
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream bin(with_suffix(prefix, ".bin"), std::ios::binary | std::ios::trunc);
  if (!bin) fail(ErrorCode::io, "cannot write checkpoint " + with_suffix(prefix, ".bin").string());
  std::size_t offset = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", offset}});
    for (double v : p.tensor.data()) {
      std::uint64_t bits = to_little_endian(std::bit_cast<std::uint64_t>(v));
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += p.tensor.numel() * sizeof(double);
  }
  if (!bin) fail(ErrorCode::io, "short write to " + with_suffix(prefix, ".bin").string());

  const auto& cfg = model.config();
  nlohmann::json meta = {
      {"format", kFormat},
      {"version", kVersion},
      {"architecture", std::string(to_string(cfg.arch))},
      {"weeks", cfg.weeks},
      {"hidden", cfg.hidden},
      {"dtype", "float64-le"},
      {"total_bytes", offset},
      {"tensors", tensors},
  };
  std::ofstream json(with_suffix(prefix, ".json"), std::ios::trunc);
  if (!json) fail(ErrorCode::io, "cannot write checkpoint " + with_suffix(prefix, ".json").string());
  json << meta.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& prefix) {
  const auto json_path = with_suffix(prefix, ".json");
  const auto bin_path = with_suffix(prefix, ".bin");
  std::ifstream json(json_path);
  if (!json) fail(ErrorCode::io, "cannot open checkpoint " + json_path.string());
  nlohmann::json meta;
  try {
    json >> meta;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::checkpoint, json_path.string() + ": " + e.what());
  }
  ModelConfig cfg;
  std::vector<nlohmann::json> entries;
  try {
    if (meta.at("format") != kFormat || meta.at("version") != kVersion) {
      fail(ErrorCode::checkpoint, json_path.string() + ": unsupported checkpoint format");
    }
    cfg.arch = parse_architecture(meta.at("architecture").get<std::string>());
    cfg.weeks = meta.at("weeks").get<std::size_t>();
    cfg.hidden = meta.at("hidden").get<std::size_t>();
    entries = meta.at("tensors").get<std::vector<nlohmann::json>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::checkpoint, json_path.string() + ": " + e.what());
  }

  Model model = Model::init(cfg, 0);
  auto params = model.parameters();
  if (entries.size() != params.size()) {
    fail(ErrorCode::checkpoint, json_path.string() + ": expected " + std::to_string(params.size()) +
                                    " tensors, found " + std::to_string(entries.size()));
  }
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) fail(ErrorCode::io, "cannot open checkpoint " + bin_path.string());
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::string name;
    Shape shape;
    std::size_t offset = 0;
    try {
      name = entries[i].at("name").get<std::string>();
      shape = entries[i].at("shape").get<Shape>();
      offset = entries[i].at("offset").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::checkpoint, json_path.string() + ": " + e.what());
    }
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      fail(ErrorCode::checkpoint, "checkpoint tensor " + name + " " + shape_str(shape) + " does not match model " +
                                      params[i].name + " " + shape_str(params[i].tensor.shape()));
    }
    bin.seekg(static_cast<std::streamoff>(offset));
    auto data = params[i].tensor.mutable_data();
    for (auto& v : data) {
      std::uint64_t bits = 0;
      bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
      v = std::bit_cast<double>(to_little_endian(bits));
    }
    if (!bin) fail(ErrorCode::checkpoint, bin_path.string() + ": truncated at tensor " + name);
  }
  return model;
}

}  // namespace etd::model
