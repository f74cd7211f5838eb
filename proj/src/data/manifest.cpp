#include "s2i/data/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "s2i/data/io.hpp"

namespace s2i::data {

std::vector<Record> Manifest::split(const std::string& name) const
{
    std::vector<Record> out;
    for (const auto& r : records)
        if (r.split == name)
            out.push_back(r);
    return out;
}

int64_t Manifest::n_classes() const
{
    int64_t k = 0;
    for (const auto& r : records)
        k = std::max(k, r.label + 1);
    return k;
}

Tensor load_speech(const fs::path& path, const MelConfig& mel)
{
    if (path.extension() == ".wav") {
        Wav w = read_wav(path);
        return log_mel(w.samples, static_cast<double>(w.sample_rate), mel);
    }
    return read_features(path);
}

namespace {

std::vector<std::string> split_tabs(const std::string& line)
{
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t'))
        cols.push_back(c);
    return cols;
}

} // namespace

Manifest load_manifest(const fs::path& path, bool validate, const MelConfig& mel)
{
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open manifest " + path.string());
    Manifest m;
    m.root = path.parent_path();
    std::string line;
    if (!std::getline(in, line) || line != kManifestHeader)
        throw DataError(path.string() + ": first line must be the header '" + std::string(kManifestHeader) + "'");
    std::set<std::pair<std::string, std::string>> ids;
    int64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto where = path.string() + ":" + std::to_string(lineno);
        auto cols = split_tabs(line);
        if (cols.size() != 5)
            throw DataError(where + ": expected 5 tab-separated fields, got " + std::to_string(cols.size()));
        Record r{cols[0], 0, cols[2], cols[3], cols[4]};
        if (r.split != "train" && r.split != "test")
            throw DataError(where + ": split must be train or test, got '" + r.split + "'");
        auto [p, ec] = std::from_chars(cols[1].data(), cols[1].data() + cols[1].size(), r.label);
        if (ec != std::errc{} || p != cols[1].data() + cols[1].size() || r.label < 0)
            throw DataError(where + ": bad class '" + cols[1] + "'");
        if (!ids.emplace(r.split, r.caption_id).second)
            throw DataError(where + ": duplicate caption id '" + r.caption_id + "' in split " + r.split);
        m.records.push_back(std::move(r));
    }
    if (m.records.empty())
        throw DataError(path.string() + ": no records");
    if (!validate)
        return m;

    std::set<std::string> seen_images;
    int64_t width = -1, height = -1, n_feat = -1;
    for (const auto& r : m.records) {
        if (seen_images.insert(r.image).second) {
            Tensor img = read_png(m.resolve(r.image));
            if (width < 0) {
                width = img.size(2);
                height = img.size(1);
            } else if (img.size(2) != width || img.size(1) != height) {
                throw DataError(r.image + ": " + std::to_string(img.size(2)) + "x" + std::to_string(img.size(1)) +
                                " differs from " + std::to_string(width) + "x" + std::to_string(height));
            }
        }
        const fs::path sp = m.resolve(r.speech);
        const int64_t f = sp.extension() == ".wav" ? load_speech(sp, mel).size(1) : probe_features(sp).second;
        if (n_feat < 0)
            n_feat = f;
        else if (f != n_feat)
            throw DataError(r.speech + ": " + std::to_string(f) + " feature bands, others have " + std::to_string(n_feat));
    }
    return m;
}

void save_manifest(const fs::path& path, const std::vector<Record>& records)
{
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write " + path.string());
    out << kManifestHeader << '\n';
    for (const auto& r : records)
        out << r.split << '\t' << r.label << '\t' << r.image << '\t' << r.speech << '\t' << r.caption_id << '\n';
}

} // namespace s2i::data
