#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "selfboost/parameters.hpp"

namespace selfboost {

/// One named tensor of an MDCK1 file.
struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

/// Layout: magic "MDCK1", then records up to end of file, each
/// u32 name length, name bytes, u32 rank, rank x u32 extents, f32 data.
/// All integers and floats are little-endian.
void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

template <typename S>
void append_entries(std::vector<CheckpointEntry>& out, const ParameterSet<S>& params, const std::string& prefix) {
  for (const auto& p : params) {
    CheckpointEntry e{prefix + p.name, p.value.shape(), {}};
    e.data.reserve(p.value.size());
    for (auto v : p.value.data()) e.data.push_back(static_cast<float>(v));
    out.push_back(std::move(e));
  }
}

bool has_prefix(const std::vector<CheckpointEntry>& entries, const std::string& prefix);

/// Overwrites every parameter from `prefix + name`. Missing entries and
/// shape differences raise DimensionError.
template <typename S>
void load_entries(const std::vector<CheckpointEntry>& entries, ParameterSet<S>& params, const std::string& prefix) {
  for (auto& p : params) {
    const std::string key = prefix + p.name;
    const CheckpointEntry* hit = nullptr;
    for (const auto& e : entries)
      if (e.name == key) hit = &e;
    if (!hit) throw DimensionError("checkpoint has no tensor '" + key + "'");
    if (hit->shape != p.value.shape()) {
      throw DimensionError("checkpoint tensor '" + key + "' has shape " + to_string(hit->shape) + ", model expects " +
                           to_string(p.value.shape()));
    }
    std::vector<S> values(hit->data.begin(), hit->data.end());
    p.value = Tensor<S>(hit->shape, std::move(values));
  }
}

}  // namespace selfboost
