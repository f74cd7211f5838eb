#include "s2i/data/dataset.hpp"

#include <cstring>
#include <map>

#include "s2i/core/rng.hpp"
#include "s2i/data/io.hpp"

namespace s2i::data {

namespace {

constexpr uint64_t kBatchStream = 0xba7c4;

} // namespace

SplitData::SplitData(const Manifest& m, const std::string& split, const MelConfig& mel)
{
    auto recs = m.split(split);
    if (recs.empty())
        throw DataError("split '" + split + "' is empty");
    std::map<std::string, int64_t> index;
    std::vector<Tensor> imgs;
    for (const auto& r : recs) {
        auto [it, fresh] = index.emplace(r.image, static_cast<int64_t>(imgs.size()));
        if (fresh) {
            imgs.push_back(read_png(m.resolve(r.image)));
            labels_.push_back(r.label);
            item_captions_.emplace_back();
        } else if (labels_[it->second] != r.label) {
            throw DataError(r.image + " appears with classes " + std::to_string(labels_[it->second]) + " and " +
                            std::to_string(r.label));
        }
        const int64_t c = static_cast<int64_t>(speech_.size());
        item_captions_[it->second].push_back(c);
        caption_item_.push_back(it->second);
        speech_.push_back(load_speech(m.resolve(r.speech), mel));
        caption_ids_.push_back(r.caption_id);
    }
    const Shape one = imgs.front().shape();
    images_ = Tensor::empty({static_cast<int64_t>(imgs.size()), one[0], one[1], one[2]});
    const int64_t per = shape_numel(one);
    for (size_t i = 0; i < imgs.size(); ++i) {
        if (imgs[i].shape() != one)
            throw DataError("images in split '" + split + "' differ in size");
        std::memcpy(images_.data<float>() + i * per, imgs[i].data<float>(), sizeof(float) * per);
    }
}

Tensor SplitData::image_batch(const std::vector<int64_t>& items) const
{
    const int64_t per = images_.numel() / images_.size(0);
    Tensor out = Tensor::empty({static_cast<int64_t>(items.size()), 3, images_.size(2), images_.size(3)});
    for (size_t i = 0; i < items.size(); ++i) {
        if (items[i] < 0 || items[i] >= size())
            throw ContractError("image index " + std::to_string(items[i]) + " out of range");
        std::memcpy(out.data<float>() + i * per, images_.data<float>() + items[i] * per, sizeof(float) * per);
    }
    return out;
}

Tensor SplitData::speech_batch(const std::vector<int64_t>& captions) const
{
    int64_t T = 0;
    const int64_t F = n_mels();
    for (int64_t c : captions)
        T = std::max(T, speech_.at(c).size(0));
    Tensor out = Tensor::empty({static_cast<int64_t>(captions.size()), T, F});
    float* d = out.data<float>();
    for (size_t i = 0; i < captions.size(); ++i) {
        const Tensor& s = speech_[captions[i]];
        const int64_t t = s.size(0);
        for (int64_t k = 0; k < T; ++k)
            std::memcpy(d + (i * T + k) * F, s.data<float>() + std::min(k, t - 1) * F, sizeof(float) * F);
    }
    return out;
}

std::vector<Batch> SplitData::batches(int64_t batch, uint64_t seed, int64_t epoch) const
{
    if (batch < 1 || batch > size())
        throw ConfigError("batch " + std::to_string(batch) + " does not fit a split of " + std::to_string(size()) +
                          " images");
    Rng rng(mix_seed(seed, static_cast<uint64_t>(epoch), kBatchStream));
    auto perm = rng.permutation(size());
    std::vector<Batch> out;
    for (int64_t b = 0; b + batch <= size(); b += batch) {
        Batch bt;
        for (int64_t i = b; i < b + batch; ++i) {
            const auto& caps = item_captions_[perm[i]];
            bt.items.push_back(perm[i]);
            bt.captions.push_back(caps[static_cast<size_t>(epoch) % caps.size()]);
        }
        out.push_back(std::move(bt));
    }
    return out;
}

} // namespace s2i::data
