#pragma once

// Common checkpoint container shared by the audio codec, the motion VAE and
// the denoiser. Byte layout (all integers little-endian):
//
//   magic   "BFCK"            4 bytes
//   version u32               currently 1
//   kind    u32 len + bytes   e.g. "denoiser"
//   meta    u32 len + bytes   UTF-8 JSON object
//   count   u32               number of tensors
//   tensor  u32 name len + name bytes, u32 rows, u32 cols,
//           rows*cols float64 values in row-major order
//
// Tensors are written in name order so identical contents give identical files.

#include "beatflow/nn.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace beatflow {

struct Checkpoint {
    std::string kind;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, nn::Mat> tensors;

    void put(const nn::ParamSet& params, const std::string& prefix = "");
    /// Copies tensors into params; every parameter must be present with a matching shape.
    void get(nn::ParamSet& params, const std::string& prefix = "") const;
    const nn::Mat& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace beatflow
