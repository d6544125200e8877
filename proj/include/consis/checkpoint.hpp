#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "consis/model.hpp"
#include "consis/serialize.hpp"

namespace consis {

inline constexpr char kCheckpointMagic[9] = "CCKP0001";

// Self-describing checkpoint: JSON header with the layer specs plus raw
// little-endian f32 parameter blobs in layer order (w then b). Round trips
// are bitwise.
inline void save_checkpoint(const ClassifierModel<float>& model,
                            const std::string& path,
                            const std::string& config_hash = "") {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const auto& lp = model.params.layers[i];
    if (!lp.has_params()) continue;
    tensors.push_back({{"layer", i},
                       {"w_shape", lp.w.shape},
                       {"b_shape", lp.b.shape}});
  }
  nlohmann::json header{{"format", 1},
                        {"scalar", "f32"},
                        {"spec", model.spec.to_json()},
                        {"seed", model.init_seed},
                        {"config_hash", config_hash},
                        {"tensors", tensors}};
  ContainerWriter out(path, kCheckpointMagic);
  out.write_header(header);
  for (const auto& lp : model.params.layers) {
    if (!lp.has_params()) continue;
    out.write_vector(lp.w.data);
    out.write_vector(lp.b.data);
  }
  out.close();
}

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::string config_hash;
};

inline ClassifierModel<float> load_checkpoint(const std::string& path,
                                              CheckpointMeta* meta = nullptr) {
  ContainerReader in(path, kCheckpointMagic, ErrorCode::corrupt_checkpoint);
  const auto& header = in.header();
  ModelSpec spec;
  try {
    require(header.value("scalar", "") == std::string("f32"),
            ErrorCode::corrupt_checkpoint, "unsupported scalar type");
    spec = ModelSpec::from_json(header.at("spec"));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::corrupt_checkpoint, std::string("header: ") + e.what());
  }

  auto model = ClassifierModel<float>::zeros(spec);
  model.init_seed = header.value("seed", 0ull);
  if (meta != nullptr) {
    meta->seed = model.init_seed;
    meta->config_hash = header.value("config_hash", "");
  }
  for (auto& lp : model.params.layers) {
    if (!lp.has_params()) continue;
    in.read_vector(lp.w.data, lp.w.size());
    in.read_vector(lp.b.data, lp.b.size());
  }
  return model;
}

// Loading against a required architecture; a well-formed checkpoint for a
// different spec is SpecMismatch, not corruption.
inline ClassifierModel<float> load_checkpoint(const std::string& path,
                                              const ModelSpec& expected,
                                              CheckpointMeta* meta = nullptr) {
  auto model = load_checkpoint(path, meta);
  require(model.spec == expected, ErrorCode::spec_mismatch,
          "checkpoint architecture does not match the expected spec");
  return model;
}

}  // namespace consis
