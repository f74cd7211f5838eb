#pragma once

#include <filesystem>
#include <string>

#include "s2i/nn/module.hpp"

namespace s2i {

inline constexpr uint32_t kCheckpointVersion = 1;

// Binary container: "S2IC", u32 version, module name, u64 record count, then
// per record name, dtype tag, rank, dims and raw little-endian values.
struct Checkpoint {
    uint32_t version = kCheckpointVersion;
    std::string module;
    nn::NamedTensors records;

    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;
    // Records whose names start with prefix, with the prefix stripped.
    nn::NamedTensors with_prefix(const std::string& prefix) const;
};

void save_checkpoint(const std::filesystem::path& path, const std::string& module, const nn::NamedTensors& records);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies saved values into `targets` by name. Any missing, unexpected or
// mis-shaped entry aborts with a ConfigError listing every difference.
void restore(const nn::NamedTensors& saved, const nn::NamedTensors& targets, const std::string& what);

void save_module(const std::filesystem::path& path, const std::string& module_name, const nn::Module& m);
void load_module(const std::filesystem::path& path, const std::string& module_name, nn::Module& m);

} // namespace s2i
