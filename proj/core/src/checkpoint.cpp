#include "voxseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

namespace voxseg {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'C', 'K', 'P', '0', '0', '0', '1'};
constexpr int kVersion = 1;

struct DirEntry {
  std::string name;
  Shape shape;
  uint64_t offset = 0;
  uint64_t length = 0;
};

json shape_to_json(const Shape& shape) {
  json a = json::array();
  for (int64_t d : shape) a.push_back(d);
  return a;
}

uint32_t payload_crc(const std::vector<char>& payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  size_t off = 0;
  while (off < payload.size()) {
    const size_t chunk = std::min<size_t>(payload.size() - off, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data() + off),
                static_cast<uInt>(chunk));
    off += chunk;
  }
  return static_cast<uint32_t>(crc);
}

void append_tensor(std::vector<char>& payload, json& dir,
                   const std::string& name, const Tensor<float>& t) {
  const auto values = t.values();
  const uint64_t offset = payload.size();
  const uint64_t length = values.size() * sizeof(float);
  payload.resize(payload.size() + length);
  std::memcpy(payload.data() + offset, values.data(), length);
  dir.push_back({{"name", name},
                 {"shape", shape_to_json(t.shape())},
                 {"dtype", "f32"},
                 {"offset", offset},
                 {"length", length}});
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  json dir = json::array();
  std::vector<char> payload;
  int64_t total = 0;
  for (const auto& e : c.params.entries) total += numel(e.tensor.shape());
  for (const auto& s : c.adam.slots) {
    total += 2 * numel(s.m.shape());
  }
  payload.reserve(static_cast<size_t>(total) * sizeof(float));

  for (const auto& e : c.params.entries) {
    append_tensor(payload, dir, e.name, e.tensor);
  }
  for (const auto& s : c.adam.slots) {
    append_tensor(payload, dir, "adam.m." + s.name, s.m);
    append_tensor(payload, dir, "adam.v." + s.name, s.v);
  }

  json header{
      {"version", kVersion},
      {"step", c.step},
      {"best_val_dsc", c.best_val_dsc},
      {"adam_t", c.adam.t},
      {"patch_size", c.patch_size},
      {"model",
       {{"num_classes", c.model.num_classes},
        {"base_filters", c.model.base_filters},
        {"num_scales", c.model.num_scales},
        {"units_per_scale", c.model.units_per_scale},
        {"arch", arch_name(c.model.arch)},
        {"norm", norm_name(c.model.norm)}}},
      {"hyper",
       {{"learning_rate", c.hyper.learning_rate},
        {"beta1", c.hyper.beta1},
        {"beta2", c.hyper.beta2},
        {"epsilon", c.hyper.epsilon},
        {"max_steps", c.hyper.max_steps},
        {"batch_size", c.hyper.batch_size},
        {"val_every", c.hyper.val_every},
        {"seed", c.hyper.seed}}},
      {"normalization",
       {{"clip", c.normalization.clip},
        {"clip_lo_pct", c.normalization.clip_lo_pct},
        {"clip_hi_pct", c.normalization.clip_hi_pct}}},
      {"tensors", std::move(dir)},
      {"crc32", payload_crc(payload)}};

  const std::string header_text = header.dump();
  if (header_text.size() > UINT32_MAX) {
    throw Error("save_checkpoint: header too large");
  }
  const uint32_t header_len = static_cast<uint32_t>(header_text.size());

  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("save_checkpoint: cannot open '" + path.string() +
                "' for writing");
  }
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw Error("save_checkpoint: failed writing '" + path.string() + "'");
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("load_checkpoint: cannot open '" + path.string() + "'");
  }
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (raw.size() < sizeof kMagic + sizeof(uint32_t)) {
    throw Error("load_checkpoint: truncated file '" + path.string() + "'");
  }
  if (std::memcmp(raw.data(), kMagic, sizeof kMagic) != 0) {
    throw Error("load_checkpoint: bad magic in '" + path.string() + "'");
  }
  uint32_t header_len = 0;
  std::memcpy(&header_len, raw.data() + sizeof kMagic, sizeof header_len);
  const size_t payload_start = sizeof kMagic + sizeof(uint32_t) + header_len;
  if (payload_start > raw.size()) {
    throw Error("load_checkpoint: truncated header in '" + path.string() + "'");
  }

  json header;
  try {
    header = json::parse(raw.data() + sizeof kMagic + sizeof(uint32_t),
                         raw.data() + payload_start);
  } catch (const json::exception& e) {
    throw Error("load_checkpoint: malformed header in '" + path.string() +
                "': " + e.what());
  }

  Checkpoint c;
  try {
    const int version = header.at("version").get<int>();
    if (version != kVersion) {
      throw Error("load_checkpoint: unsupported version " +
                  std::to_string(version));
    }
    c.step = header.at("step").get<int64_t>();
    c.best_val_dsc = header.at("best_val_dsc").get<double>();
    c.adam.t = header.at("adam_t").get<int64_t>();
    c.patch_size = header.at("patch_size").get<int64_t>();

    const json& m = header.at("model");
    c.model.num_classes = m.at("num_classes").get<int>();
    c.model.base_filters = m.at("base_filters").get<int>();
    c.model.num_scales = m.at("num_scales").get<int>();
    c.model.units_per_scale = m.at("units_per_scale").get<int>();
    c.model.arch = parse_arch(m.at("arch").get<std::string>());
    c.model.norm = parse_norm(m.at("norm").get<std::string>());

    const json& h = header.at("hyper");
    c.hyper.learning_rate = h.at("learning_rate").get<double>();
    c.hyper.beta1 = h.at("beta1").get<double>();
    c.hyper.beta2 = h.at("beta2").get<double>();
    c.hyper.epsilon = h.at("epsilon").get<double>();
    c.hyper.max_steps = h.at("max_steps").get<int64_t>();
    c.hyper.batch_size = h.at("batch_size").get<int64_t>();
    c.hyper.val_every = h.at("val_every").get<int64_t>();
    c.hyper.seed = h.at("seed").get<uint64_t>();

    const json& n = header.at("normalization");
    c.normalization.clip = n.at("clip").get<bool>();
    c.normalization.clip_lo_pct = n.at("clip_lo_pct").get<double>();
    c.normalization.clip_hi_pct = n.at("clip_hi_pct").get<double>();
  } catch (const json::exception& e) {
    throw Error("load_checkpoint: malformed header in '" + path.string() +
                "': " + e.what());
  }
  c.model.validate();

  std::vector<DirEntry> dir;
  try {
    for (const json& t : header.at("tensors")) {
      DirEntry e;
      e.name = t.at("name").get<std::string>();
      for (const json& d : t.at("shape")) e.shape.push_back(d.get<int64_t>());
      if (t.at("dtype").get<std::string>() != "f32") {
        throw Error("load_checkpoint: unsupported dtype for tensor '" +
                    e.name + "'");
      }
      e.offset = t.at("offset").get<uint64_t>();
      e.length = t.at("length").get<uint64_t>();
      dir.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error("load_checkpoint: malformed tensor directory in '" +
                path.string() + "': " + e.what());
  }

  const std::vector<char> payload(raw.begin() + static_cast<std::ptrdiff_t>(
                                                    payload_start),
                                  raw.end());
  const uint32_t stored_crc = header.at("crc32").get<uint32_t>();
  if (payload_crc(payload) != stored_crc) {
    throw Error("load_checkpoint: payload checksum mismatch in '" +
                path.string() + "'");
  }

  auto read_tensor = [&](const DirEntry& e) {
    const int64_t count = numel(e.shape);
    if (e.length != static_cast<uint64_t>(count) * sizeof(float) ||
        e.offset + e.length > payload.size()) {
      throw Error("load_checkpoint: tensor '" + e.name +
                  "' payload out of bounds");
    }
    std::vector<float> values(static_cast<size_t>(count));
    std::memcpy(values.data(), payload.data() + e.offset, e.length);
    return Tensor<float>::from_values(e.shape, std::move(values));
  };

  const std::vector<ParamSpec> specs = param_specs(c.model);
  size_t trainable = 0;
  for (const auto& s : specs) trainable += s.trainable ? 1 : 0;
  if (dir.size() != specs.size() + 2 * trainable) {
    throw Error("load_checkpoint: tensor directory holds " +
                std::to_string(dir.size()) + " entries, expected " +
                std::to_string(specs.size() + 2 * trainable));
  }

  for (size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& spec = specs[i];
    const DirEntry& e = dir[i];
    if (e.name != spec.name || e.shape != spec.shape) {
      throw Error("load_checkpoint: parameter '" + spec.name +
                  "' mismatch: checkpoint has '" + e.name + "' with shape " +
                  shape_str(e.shape) + ", model config expects " +
                  shape_str(spec.shape));
    }
    Tensor<float> t = read_tensor(e);
    if (spec.trainable) t.set_requires_grad(true);
    c.params.add(spec.name, std::move(t), spec.trainable);
  }

  size_t di = specs.size();
  for (const auto& spec : specs) {
    if (!spec.trainable) continue;
    typename AdamState<float>::Slot slot;
    slot.name = spec.name;
    for (const char* kind : {"m", "v"}) {
      const DirEntry& e = dir[di++];
      const std::string expect = std::string("adam.") + kind + "." + spec.name;
      if (e.name != expect || e.shape != spec.shape) {
        throw Error("load_checkpoint: optimizer buffer '" + expect +
                    "' mismatch: checkpoint has '" + e.name + "' with shape " +
                    shape_str(e.shape));
      }
      (kind[0] == 'm' ? slot.m : slot.v) = read_tensor(e);
    }
    c.adam.slots.push_back(std::move(slot));
  }
  return c;
}

}  // namespace voxseg
