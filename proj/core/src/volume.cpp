#include "voxseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace voxseg {

static_assert(std::endian::native == std::endian::little,
              "volume payloads are little-endian and read/written raw");

namespace {

constexpr char kMagic[8] = {'M', 'V', 'O', 'L', '0', '0', '0', '1'};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open volume file: " + path.string());
  }
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot open file for writing: " + path.string());
  }
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw Error("failed writing file: " + path.string());
  }
}

VoxelType parse_dtype(const std::string& name, const std::filesystem::path& path) {
  if (name == "f32") return VoxelType::kF32;
  if (name == "i16") return VoxelType::kI16;
  if (name == "u8") return VoxelType::kU8;
  throw Error("unsupported dtype '" + name + "' in " + path.string());
}

size_t dtype_size(VoxelType t) {
  switch (t) {
    case VoxelType::kF32: return 4;
    case VoxelType::kI16: return 2;
    case VoxelType::kU8: return 1;
  }
  return 0;
}

struct Header {
  std::array<int64_t, 3> dims{};
  int64_t channels = 1;
  VoxelType dtype = VoxelType::kF32;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  bool is_label = false;
};

Header parse_header(const std::string& data, const std::filesystem::path& path,
                    size_t& payload_offset) {
  if (data.size() < 12 || std::memcmp(data.data(), kMagic, 8) != 0) {
    throw Error("not an MVOL file (bad magic): " + path.string());
  }
  uint32_t header_len = 0;
  std::memcpy(&header_len, data.data() + 8, 4);
  if (data.size() < 12 + static_cast<size_t>(header_len)) {
    throw Error("truncated MVOL header in " + path.string());
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(data.substr(12, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid MVOL header JSON in " + path.string() + ": " +
                e.what());
  }
  Header h;
  try {
    const auto& dims = j.at("dims");
    if (!dims.is_array() || dims.size() != 3) {
      throw Error("dims must be a 3-element array");
    }
    for (int i = 0; i < 3; ++i) h.dims[static_cast<size_t>(i)] = dims[static_cast<size_t>(i)].get<int64_t>();
    h.channels = j.at("channels").get<int64_t>();
    h.dtype = parse_dtype(j.at("dtype").get<std::string>(), path);
    const auto& spacing = j.at("spacing");
    if (!spacing.is_array() || spacing.size() != 3) {
      throw Error("spacing must be a 3-element array");
    }
    for (int i = 0; i < 3; ++i) {
      h.spacing[static_cast<size_t>(i)] = spacing[static_cast<size_t>(i)].get<double>();
    }
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "label") {
      h.is_label = true;
    } else if (kind != "image") {
      throw Error("unsupported kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid MVOL header in " + path.string() + ": " + e.what());
  }
  for (int64_t d : h.dims) {
    if (d < 1) throw Error("non-positive dims in " + path.string());
  }
  if (h.channels < 1) {
    throw Error("non-positive channel count in " + path.string());
  }
  for (double s : h.spacing) {
    if (!(s > 0.0)) throw Error("non-positive spacing in " + path.string());
  }
  payload_offset = 12 + header_len;
  const size_t expected = static_cast<size_t>(h.channels * h.dims[0] *
                                              h.dims[1] * h.dims[2]) *
                          dtype_size(h.dtype);
  if (data.size() - payload_offset != expected) {
    throw Error("payload size mismatch in " + path.string() + ": expected " +
                std::to_string(expected) + " bytes, found " +
                std::to_string(data.size() - payload_offset));
  }
  return h;
}

std::string serialize_header(const std::array<int64_t, 3>& dims,
                             int64_t channels, VoxelType dtype,
                             const std::array<double, 3>& spacing,
                             bool is_label) {
  nlohmann::json j;
  j["dims"] = {dims[0], dims[1], dims[2]};
  j["channels"] = channels;
  j["dtype"] = voxel_type_name(dtype);
  j["spacing"] = {spacing[0], spacing[1], spacing[2]};
  j["kind"] = is_label ? "label" : "image";
  return j.dump();
}

std::string frame(const std::string& header, const std::string& payload) {
  std::string out;
  out.reserve(12 + header.size() + payload.size());
  out.append(kMagic, 8);
  const uint32_t len = static_cast<uint32_t>(header.size());
  out.append(reinterpret_cast<const char*>(&len), 4);
  out += header;
  out += payload;
  return out;
}

}  // namespace

const char* voxel_type_name(VoxelType t) {
  switch (t) {
    case VoxelType::kF32: return "f32";
    case VoxelType::kI16: return "i16";
    case VoxelType::kU8: return "u8";
  }
  return "?";
}

std::variant<Volume, LabelVolume> read_volume(
    const std::filesystem::path& path) {
  const std::string data = read_file(path);
  size_t offset = 0;
  const Header h = parse_header(data, path, offset);
  const char* payload = data.data() + offset;
  const int64_t count = h.channels * h.dims[0] * h.dims[1] * h.dims[2];
  if (h.is_label) {
    if (h.dtype != VoxelType::kU8) {
      throw Error("label volume must use dtype u8: " + path.string());
    }
    if (h.channels != 1) {
      throw Error("label volume must have one channel: " + path.string());
    }
    LabelVolume label;
    label.dims = h.dims;
    label.spacing = h.spacing;
    label.values.resize(static_cast<size_t>(count));
    std::memcpy(label.values.data(), payload, static_cast<size_t>(count));
    return label;
  }
  Volume v;
  v.dims = h.dims;
  v.channels = h.channels;
  v.dtype = h.dtype;
  v.spacing = h.spacing;
  v.values.resize(static_cast<size_t>(count));
  switch (h.dtype) {
    case VoxelType::kF32:
      std::memcpy(v.values.data(), payload,
                  static_cast<size_t>(count) * sizeof(float));
      break;
    case VoxelType::kI16: {
      const int16_t* p = reinterpret_cast<const int16_t*>(payload);
      for (int64_t i = 0; i < count; ++i) {
        v.values[static_cast<size_t>(i)] = static_cast<float>(p[i]);
      }
      break;
    }
    case VoxelType::kU8: {
      const uint8_t* p = reinterpret_cast<const uint8_t*>(payload);
      for (int64_t i = 0; i < count; ++i) {
        v.values[static_cast<size_t>(i)] = static_cast<float>(p[i]);
      }
      break;
    }
  }
  return v;
}

Volume read_image(const std::filesystem::path& path) {
  auto var = read_volume(path);
  if (std::holds_alternative<LabelVolume>(var)) {
    throw Error("expected an image volume but found labels: " + path.string());
  }
  return std::get<Volume>(std::move(var));
}

LabelVolume read_label(const std::filesystem::path& path) {
  auto var = read_volume(path);
  if (std::holds_alternative<Volume>(var)) {
    throw Error("expected a label volume but found an image: " + path.string());
  }
  return std::get<LabelVolume>(std::move(var));
}

void write_volume(const std::filesystem::path& path, const Volume& volume) {
  const int64_t count = volume.channels * volume.voxels();
  if (std::ssize(volume.values) != count) {
    throw Error("volume value count does not match dims: " + path.string());
  }
  std::string payload;
  switch (volume.dtype) {
    case VoxelType::kF32:
      payload.assign(reinterpret_cast<const char*>(volume.values.data()),
                     static_cast<size_t>(count) * sizeof(float));
      break;
    case VoxelType::kI16: {
      payload.resize(static_cast<size_t>(count) * 2);
      int16_t* p = reinterpret_cast<int16_t*>(payload.data());
      for (int64_t i = 0; i < count; ++i) {
        const float v = volume.values[static_cast<size_t>(i)];
        const long r = std::lround(v);
        if (r < INT16_MIN || r > INT16_MAX || static_cast<float>(r) != v) {
          throw Error("value " + std::to_string(v) +
                      " does not fit dtype i16: " + path.string());
        }
        p[i] = static_cast<int16_t>(r);
      }
      break;
    }
    case VoxelType::kU8: {
      payload.resize(static_cast<size_t>(count));
      uint8_t* p = reinterpret_cast<uint8_t*>(payload.data());
      for (int64_t i = 0; i < count; ++i) {
        const float v = volume.values[static_cast<size_t>(i)];
        const long r = std::lround(v);
        if (r < 0 || r > 255 || static_cast<float>(r) != v) {
          throw Error("value " + std::to_string(v) +
                      " does not fit dtype u8: " + path.string());
        }
        p[i] = static_cast<uint8_t>(r);
      }
      break;
    }
  }
  write_file(path, frame(serialize_header(volume.dims, volume.channels,
                                          volume.dtype, volume.spacing, false),
                         payload));
}

void write_volume(const std::filesystem::path& path, const LabelVolume& label) {
  if (std::ssize(label.values) != label.voxels()) {
    throw Error("label value count does not match dims: " + path.string());
  }
  std::string payload(reinterpret_cast<const char*>(label.values.data()),
                      label.values.size());
  write_file(path, frame(serialize_header(label.dims, 1, VoxelType::kU8,
                                          label.spacing, true),
                         payload));
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open manifest: " + path.string());
  }
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= content.size()) {
    size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    std::string line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines[0] != "id,image,label") {
    throw Error("manifest must start with header 'id,image,label': " +
                path.string());
  }
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&base](const std::string& field) {
    std::filesystem::path p(field);
    if (p.is_relative()) p = base / p;
    return p.lexically_normal();
  };
  Manifest manifest;
  std::vector<std::string> seen;
  for (size_t i = 1; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t pos = 0;
    while (true) {
      size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        fields.push_back(line.substr(pos));
        break;
      }
      fields.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() ||
        fields[1].empty()) {
      throw Error("malformed manifest row " + std::to_string(i + 1) + " in " +
                  path.string());
    }
    ManifestRecord rec;
    rec.id = fields[0];
    if (std::find(seen.begin(), seen.end(), rec.id) != seen.end()) {
      throw Error("duplicate id '" + rec.id + "' in manifest " + path.string());
    }
    seen.push_back(rec.id);
    rec.image = resolve(fields[1]);
    if (fields.size() == 3 && !fields[2].empty()) {
      rec.label = resolve(fields[2]);
      rec.has_label = true;
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void NormalizationConfig::validate() const {
  if (clip && !(clip_lo_pct >= 0.0 && clip_lo_pct < clip_hi_pct &&
                clip_hi_pct <= 100.0)) {
    throw ConfigError(
        "normalization.clip_lo_pct/clip_hi_pct must satisfy "
        "0 <= lo < hi <= 100");
  }
}

Volume normalize_intensity(const Volume& v, const NormalizationConfig& cfg) {
  cfg.validate();
  Volume out = v;
  out.dtype = VoxelType::kF32;
  const int64_t voxels = v.voxels();
  for (int64_t c = 0; c < v.channels; ++c) {
    float* chan = out.values.data() + c * voxels;
    if (cfg.clip) {
      std::vector<float> sorted(chan, chan + voxels);
      std::sort(sorted.begin(), sorted.end());
      auto percentile = [&sorted](double pct) {
        const double pos =
            pct / 100.0 * static_cast<double>(sorted.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, sorted.size() - 1);
        const double frac = pos - static_cast<double>(lo);
        return static_cast<float>((1.0 - frac) * sorted[lo] +
                                  frac * sorted[hi]);
      };
      const float lo = percentile(cfg.clip_lo_pct);
      const float hi = percentile(cfg.clip_hi_pct);
      for (int64_t i = 0; i < voxels; ++i) {
        chan[i] = std::clamp(chan[i], lo, hi);
      }
    }
    double sum = 0.0;
    for (int64_t i = 0; i < voxels; ++i) sum += static_cast<double>(chan[i]);
    const double mean = sum / static_cast<double>(voxels);
    double var_sum = 0.0;
    for (int64_t i = 0; i < voxels; ++i) {
      const double d = static_cast<double>(chan[i]) - mean;
      var_sum += d * d;
    }
    const double sd = std::sqrt(var_sum / static_cast<double>(voxels));
    if (sd == 0.0) {
      std::fill(chan, chan + voxels, 0.0f);
    } else {
      const double inv = 1.0 / sd;
      for (int64_t i = 0; i < voxels; ++i) {
        chan[i] = static_cast<float>((static_cast<double>(chan[i]) - mean) * inv);
      }
    }
  }
  return out;
}

}  // namespace voxseg
