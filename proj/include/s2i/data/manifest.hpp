#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "s2i/data/audio.hpp"

namespace s2i::data {

namespace fs = std::filesystem;

struct Record {
    std::string split;      // "train" or "test"
    int64_t label = 0;
    std::string image;      // PNG, relative to the manifest directory
    std::string speech;     // feature record (.feat) or 16-bit PCM (.wav)
    std::string caption_id; // unique within a split
};

inline constexpr const char* kManifestHeader = "split\tclass\timage\tspeech\tcaption_id";

// Tab-separated, one record per line, header first.
struct Manifest {
    fs::path root;
    std::vector<Record> records;

    fs::path resolve(const std::string& rel) const { return root / rel; }
    std::vector<Record> split(const std::string& name) const;
    int64_t n_classes() const;
};

// Parses and, when `validate` is set, opens every referenced file: images
// must decode and share one size, feature headers must match their file size.
Manifest load_manifest(const fs::path& path, bool validate = true, const MelConfig& mel = {});
void save_manifest(const fs::path& path, const std::vector<Record>& records);

// Feature record or WAV (converted with log_mel) -> [T,F].
Tensor load_speech(const fs::path& path, const MelConfig& mel);

} // namespace s2i::data
