#include "specalign/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "specalign/errors.hpp"

namespace specalign {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'M', 'S', 'A', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

json config_to_json(const ModelConfig& c) {
  return json{
      {"ms_in_dim", c.ms_in_dim},
      {"mol_in_dim", c.mol_in_dim},
      {"hidden_layers", c.hidden_layers},
      {"hidden_dim", c.hidden_dim},
      {"shared_dim", c.shared_dim},
      {"dropout", c.dropout},
      {"layernorm_eps", c.layernorm_eps},
      {"metadata_enabled", c.metadata_enabled},
      {"tower", to_string(c.tower)},
      {"ce_bounds", {c.ce_min, c.ce_max}},
      {"init_temperature", c.init_temperature},
      {"seed", c.seed},
      {"adduct_vocabulary", c.adduct_vocabulary},
      {"tag", c.tag},
  };
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.ms_in_dim = j.at("ms_in_dim").get<Index>();
  c.mol_in_dim = j.at("mol_in_dim").get<Index>();
  c.hidden_layers = j.at("hidden_layers").get<Index>();
  c.hidden_dim = j.at("hidden_dim").get<Index>();
  c.shared_dim = j.at("shared_dim").get<Index>();
  c.dropout = j.at("dropout").get<double>();
  c.layernorm_eps = j.at("layernorm_eps").get<double>();
  c.metadata_enabled = j.at("metadata_enabled").get<bool>();
  c.tower = tower_from_string(j.at("tower").get<std::string>());
  c.ce_min = j.at("ce_bounds").at(0).get<double>();
  c.ce_max = j.at("ce_bounds").at(1).get<double>();
  c.init_temperature = j.at("init_temperature").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.adduct_vocabulary = j.at("adduct_vocabulary").get<std::vector<std::string>>();
  c.tag = j.value("tag", std::string());
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const AlignmentModel& model) {
  auto& mutable_model = const_cast<AlignmentModel&>(model);
  json header;
  header["format"] = "MSA1";
  header["config"] = config_to_json(model.config);
  json tensors = json::array();
  std::size_t total = 0;
  auto views = tensor_views(mutable_model);
  for (const auto& v : views) {
    tensors.push_back({{"name", v.name}, {"size", v.values.size()}});
    total += v.values.size();
  }
  header["tensors"] = tensors;
  header["parameter_count"] = total;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + 4 * total);
  for (const auto& v : views) {
    for (double x : v.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

AlignmentModel decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::bad_magic, "expected leading bytes \"MSA1\"");
  }
  const std::size_t header_len = get_u32(bytes, 4);
  if (bytes.size() < 8 + header_len) throw Error(ErrorCode::truncated_file, "checkpoint header truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("checkpoint header: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg = config_from_json(header.at("config"));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("checkpoint config: ") + e.what());
  }
  AlignmentModel model = init_model(cfg);
  auto views = tensor_views(model);
  const auto& tensors = header.at("tensors");
  if (tensors.size() != views.size()) throw Error(ErrorCode::shape_mismatch, "checkpoint tensor count differs");
  std::size_t offset = 8 + header_len;
  for (std::size_t t = 0; t < views.size(); ++t) {
    if (tensors[t].at("name").get<std::string>() != views[t].name ||
        tensors[t].at("size").get<std::size_t>() != views[t].values.size()) {
      throw Error(ErrorCode::shape_mismatch, "checkpoint tensor " + views[t].name + " does not match config");
    }
    if (bytes.size() < offset + 4 * views[t].values.size()) {
      throw Error(ErrorCode::truncated_file, "checkpoint payload truncated at " + views[t].name);
    }
    for (double& x : views[t].values) {
      const float f = std::bit_cast<float>(get_u32(bytes, offset));
      if (!std::isfinite(f)) throw Error(ErrorCode::non_finite, "checkpoint tensor " + views[t].name);
      x = f;
      offset += 4;
    }
  }
  if (offset != bytes.size()) throw Error(ErrorCode::parse_error, "trailing bytes after checkpoint payload");
  return model;
}

void save_checkpoint(const AlignmentModel& model, const std::filesystem::path& path) {
  auto bytes = encode_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_error, "short write to " + path.string());
}

AlignmentModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

AlignmentModel round_to_storage_precision(const AlignmentModel& model) {
  AlignmentModel out = model;
  for (auto& v : tensor_views(out)) {
    for (double& x : v.values) x = static_cast<float>(x);
  }
  return out;
}

}  // namespace specalign
