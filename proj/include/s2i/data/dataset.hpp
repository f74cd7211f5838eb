#pragma once

#include <cstdint>
#include <vector>

#include "s2i/data/manifest.hpp"

namespace s2i::data {

struct Batch {
    std::vector<int64_t> items;    // image indices
    std::vector<int64_t> captions; // caption indices, captions[i] describes items[i]
};

// One split held in memory: distinct images (in manifest order) and their
// captions.
class SplitData {
public:
    SplitData(const Manifest& m, const std::string& split, const MelConfig& mel = {});

    int64_t size() const { return static_cast<int64_t>(labels_.size()); }
    int64_t caption_count() const { return static_cast<int64_t>(speech_.size()); }
    int64_t resolution() const { return images_.size(2); }
    int64_t n_mels() const { return speech_.front().size(1); }

    const Tensor& images() const { return images_; } // [N,3,R,R] in [-1,1]
    const std::vector<int64_t>& labels() const { return labels_; }
    const std::vector<std::vector<int64_t>>& item_captions() const { return item_captions_; }
    int64_t caption_item(int64_t c) const { return caption_item_[c]; }
    const Tensor& speech(int64_t c) const { return speech_[c]; }
    const std::string& caption_id(int64_t c) const { return caption_ids_[c]; }

    Tensor image_batch(const std::vector<int64_t>& items) const;
    // [B,T,F]; shorter sequences repeat their last frame.
    Tensor speech_batch(const std::vector<int64_t>& captions) const;

    // Permutation of images from (seed, epoch); trailing partial batch is
    // dropped. Each image takes caption epoch mod k of its k captions.
    std::vector<Batch> batches(int64_t batch, uint64_t seed, int64_t epoch) const;

private:
    Tensor images_;
    std::vector<int64_t> labels_;
    std::vector<std::vector<int64_t>> item_captions_;
    std::vector<int64_t> caption_item_;
    std::vector<Tensor> speech_;
    std::vector<std::string> caption_ids_;
};

} // namespace s2i::data
