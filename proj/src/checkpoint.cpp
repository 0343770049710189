#include "leafcam/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "json.hpp"

#include "leafcam/fileio.hpp"

namespace leafcam {

using ordered_json = nlohmann::ordered_json;

const char* to_string(CheckpointFault fault) {
  switch (fault) {
    case CheckpointFault::bad_magic: return "bad magic";
    case CheckpointFault::version_mismatch: return "version mismatch";
    case CheckpointFault::truncated_header: return "truncated header";
    case CheckpointFault::malformed_header: return "malformed header";
    case CheckpointFault::truncated_payload: return "truncated payload";
    case CheckpointFault::count_mismatch: return "count mismatch";
  }
  return "?";
}

namespace {

constexpr char kMagic[4] = {'L', 'F', 'C', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
}

ordered_json spec_to_json(const ModelSpec& s) {
  ordered_json j;
  j["backbone"] = to_string(s.backbone);
  j["attention"] = to_string(s.attention);
  j["classes"] = s.classes;
  j["hidden"] = s.hidden;
  j["dropout"] = s.dropout;
  j["channels"] = s.channels;
  j["height"] = s.height;
  j["width"] = s.width;
  j["attention_ratio"] = s.attention_ratio;
  return j;
}

ModelSpec spec_from_json(const ordered_json& j) {
  ModelSpec s;
  s.backbone = parse_backbone(j.at("backbone").get<std::string>());
  s.attention = parse_attention(j.at("attention").get<std::string>());
  s.classes = j.at("classes").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.dropout = j.at("dropout").get<double>();
  s.channels = j.at("channels").get<int>();
  s.height = j.at("height").get<int>();
  s.width = j.at("width").get<int>();
  s.attention_ratio = j.at("attention_ratio").get<int>();
  s.validate();
  return s;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ordered_json header;
  header["spec"] = spec_to_json(ckpt.spec);
  header["class_names"] = ckpt.class_names;
  ordered_json table = ordered_json::array();
  std::uint64_t offset = 0;
  for (const Parameter& p : ckpt.params.items()) {
    const std::uint64_t length = p.value.size() * sizeof(float);
    table.push_back({{"name", p.name}, {"shape", p.value.shape()}, {"offset", offset}, {"length", length},
                     {"frozen", p.frozen}});
    offset += length;
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const Parameter& p : ckpt.params.items()) {
    for (float f : p.value.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(CheckpointFault::bad_magic, "file does not start with LFC1");
  }
  if (bytes.size() < 12) throw CheckpointError(CheckpointFault::truncated_header, "file ends inside the preamble");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointFault::version_mismatch,
                          "format version " + std::to_string(version) + ", expected " +
                              std::to_string(kCheckpointVersion));
  }
  const std::uint32_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() - 12 < header_len) {
    throw CheckpointError(CheckpointFault::truncated_header, "header needs " + std::to_string(header_len) +
                                                                 " bytes, " + std::to_string(bytes.size() - 12) +
                                                                 " available");
  }

  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset, length;
    bool frozen;
  };
  std::vector<Entry> entries;
  try {
    const ordered_json header =
        ordered_json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    ckpt.spec = spec_from_json(header.at("spec"));
    ckpt.class_names = header.at("class_names").get<std::vector<std::string>>();
    for (const auto& t : header.at("tensors")) {
      entries.push_back({t.at("name").get<std::string>(), t.at("shape").get<Shape>(),
                         t.at("offset").get<std::uint64_t>(), t.at("length").get<std::uint64_t>(),
                         t.value("frozen", false)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(CheckpointFault::malformed_header, e.what());
  } catch (const Error& e) {
    throw CheckpointError(CheckpointFault::malformed_header, e.what());
  }
  if (static_cast<int>(ckpt.class_names.size()) != ckpt.spec.classes) {
    throw CheckpointError(CheckpointFault::count_mismatch, "class table has " +
                                                               std::to_string(ckpt.class_names.size()) +
                                                               " names for a " + std::to_string(ckpt.spec.classes) +
                                                               "-class model");
  }

  // The tensor table must describe exactly the parameters the spec builds.
  const ModelParams expected = build_model(ckpt.spec, 0);
  if (entries.size() != expected.size()) {
    throw CheckpointError(CheckpointFault::count_mismatch, "header lists " + std::to_string(entries.size()) +
                                                               " tensors, model has " +
                                                               std::to_string(expected.size()));
  }

  const std::size_t payload_start = 12 + static_cast<std::size_t>(header_len);
  const std::span<const std::uint8_t> payload = bytes.subspan(payload_start);
  std::uint64_t cursor = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Entry& e = entries[i];
    const Parameter& want = expected.items()[i];
    if (e.name != want.name || e.shape != want.value.shape()) {
      throw CheckpointError(CheckpointFault::count_mismatch, "tensor " + std::to_string(i) + " is " + e.name + " " +
                                                                 shape_str(e.shape) + ", model expects " + want.name +
                                                                 " " + shape_str(want.value.shape()));
    }
    const std::uint64_t numel = shape_numel(e.shape);
    if (e.offset != cursor || e.length != numel * sizeof(float)) {
      throw CheckpointError(CheckpointFault::malformed_header, "tensor " + e.name + " has an inconsistent byte range");
    }
    if (payload.size() < e.offset + e.length) {
      throw CheckpointError(CheckpointFault::truncated_payload,
                            "tensor " + e.name + " needs bytes [" + std::to_string(e.offset) + ", " +
                                std::to_string(e.offset + e.length) + "), payload has " +
                                std::to_string(payload.size()),
                            e.name);
    }
    Tensor value(e.shape);
    for (std::size_t k = 0; k < numel; ++k) {
      value[k] = std::bit_cast<float>(get_u32(payload.data() + e.offset + 4 * k));
    }
    ckpt.params.add(e.name, std::move(value), e.frozen);
    cursor += e.length;
  }
  if (payload.size() != cursor) {
    throw CheckpointError(CheckpointFault::count_mismatch, std::to_string(payload.size() - cursor) +
                                                               " trailing payload bytes");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace leafcam
