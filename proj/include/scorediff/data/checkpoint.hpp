#pragma once

#include <map>
#include <string>
#include <vector>

#include "scorediff/data/tensor_io.hpp"
#include "scorediff/nn/params.hpp"

namespace scorediff::data {

inline constexpr char kCheckpointMagic[4] = {'H', 'P', 'M', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Versioned container: "HPMC", u32 version, u64 config digest, config JSON
/// text, then tagged sections of named tensors in the tensor format.
struct Checkpoint {
  std::uint64_t digest = 0;
  std::string config_json;
  std::map<std::string, std::map<std::string, Tensor<float>>> sections;

  bool has(const std::string& section) const { return sections.count(section) > 0; }
  const std::map<std::string, Tensor<float>>& section(const std::string& name) const {
    auto it = sections.find(name);
    if (it == sections.end()) throw FormatError("checkpoint has no section '" + name + "'");
    return it->second;
  }
};

inline std::string encode_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, 4);
  detail_io::put_u32(out, kCheckpointVersion);
  detail_io::put_u64(out, c.digest);
  detail_io::put_u32(out, std::uint32_t(c.config_json.size()));
  out += c.config_json;
  detail_io::put_u32(out, std::uint32_t(c.sections.size()));
  for (const auto& [tag, tensors] : c.sections) {
    detail_io::put_u32(out, std::uint32_t(tag.size()));
    out += tag;
    detail_io::put_u32(out, std::uint32_t(tensors.size()));
    for (const auto& [name, t] : tensors) {
      detail_io::put_u32(out, std::uint32_t(name.size()));
      out += name;
      append_tensor(out, t);
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail_io::Reader r(bytes, "checkpoint");
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw FormatError("not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.digest = r.u64();
  c.config_json = r.str();
  const auto n_sections = r.u32();
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::string tag = r.str();
    auto& sec = c.sections[tag];
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      sec.emplace(std::move(name), read_tensor_from<float>(r));
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint sections");
  return c;
}

inline void write_checkpoint(const std::string& path, const Checkpoint& c) { write_file_atomic(path, encode_checkpoint(c)); }
inline Checkpoint read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

/// Copies parameters whose names start with `prefix` into a section.
template <class T>
void store_section(Checkpoint& c, const std::string& tag, const nn::ParamStore<T>& store, const std::string& prefix) {
  auto& sec = c.sections[tag];
  store.for_each([&](const nn::Param<T>& p) {
    if (p.name.rfind(prefix, 0) == 0) sec[p.name] = p.value.template cast<float>();
  });
}

/// Loads a section into existing parameters; every tensor must match a
/// parameter of the same name and shape.
template <class T>
void load_section(const Checkpoint& c, const std::string& tag, nn::ParamStore<T>& store) {
  for (const auto& [name, t] : c.section(tag)) {
    if (!store.contains(name)) throw FormatError("checkpoint tensor " + name + " has no matching parameter");
    auto& p = store.get(name);
    if (p.value.shape() != t.shape())
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(t.shape()) + ", model expects " + shape_str(p.value.shape()));
    p.value = t.template cast<T>();
  }
}

}  // namespace scorediff::data
