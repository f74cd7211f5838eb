#include "s2i/core/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace s2i {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', '2', 'I', 'C'};

template <class T>
void put(std::ostream& os, T v)
{
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_str(std::ostream& os, const std::string& s)
{
    put<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& is, const std::string& where)
{
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
        throw DataError("truncated checkpoint while reading " + where);
    return v;
}

std::string get_str(std::istream& is, const std::string& where)
{
    uint32_t n = get<uint32_t>(is, where);
    if (n > (1u << 20))
        throw DataError("implausible string length in checkpoint at " + where);
    std::string s(n, '\0');
    if (!is.read(s.data(), n))
        throw DataError("truncated checkpoint while reading " + where);
    return s;
}

} // namespace

const Tensor& Checkpoint::get(const std::string& name) const
{
    for (const auto& [n, t] : records)
        if (n == name)
            return t;
    throw ConfigError("checkpoint '" + module + "' has no record '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const
{
    for (const auto& [n, t] : records)
        if (n == name)
            return true;
    return false;
}

nn::NamedTensors Checkpoint::with_prefix(const std::string& prefix) const
{
    nn::NamedTensors out;
    for (const auto& [n, t] : records)
        if (n.compare(0, prefix.size(), prefix) == 0)
            out.emplace_back(n.substr(prefix.size()), t);
    return out;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& module, const nn::NamedTensors& records)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw DataError("cannot write checkpoint " + tmp.string());
        os.write(kMagic, 4);
        put<uint32_t>(os, kCheckpointVersion);
        put_str(os, module);
        put<uint64_t>(os, records.size());
        for (const auto& [name, t] : records) {
            put_str(os, name);
            put<uint8_t>(os, static_cast<uint8_t>(t.dtype()));
            put<uint32_t>(os, static_cast<uint32_t>(t.dim()));
            for (int64_t d : t.shape())
                put<uint64_t>(os, static_cast<uint64_t>(d));
            dispatch(t.dtype(), [&]<class T>() {
                os.write(reinterpret_cast<const char*>(t.data<T>()), static_cast<std::streamsize>(sizeof(T) * t.numel()));
            });
        }
        if (!os)
            throw DataError("write failed for checkpoint " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError("cannot open checkpoint " + path.string());
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError(path.string() + " is not a checkpoint (bad magic)");
    Checkpoint ck;
    ck.version = get<uint32_t>(is, "version");
    if (ck.version != kCheckpointVersion)
        throw ConfigError("checkpoint " + path.string() + " has format version " + std::to_string(ck.version) +
                          ", this build reads version " + std::to_string(kCheckpointVersion));
    ck.module = get_str(is, "module name");
    const uint64_t count = get<uint64_t>(is, "record count");
    for (uint64_t r = 0; r < count; ++r) {
        std::string name = get_str(is, "record name");
        uint8_t tag = get<uint8_t>(is, name);
        if (tag > 1)
            throw DataError("unknown dtype tag " + std::to_string(tag) + " for record " + name);
        uint32_t nd = get<uint32_t>(is, name);
        if (nd > 8)
            throw DataError("implausible rank for record " + name);
        Shape shape(nd);
        for (auto& d : shape)
            d = static_cast<int64_t>(get<uint64_t>(is, name));
        Tensor t = Tensor::zeros(shape, static_cast<DType>(tag));
        dispatch(t.dtype(), [&]<class T>() {
            if (!is.read(reinterpret_cast<char*>(t.data<T>()), static_cast<std::streamsize>(sizeof(T) * t.numel())))
                throw DataError("truncated values for record " + name);
        });
        ck.records.emplace_back(std::move(name), t);
    }
    return ck;
}

void restore(const nn::NamedTensors& saved, const nn::NamedTensors& targets, const std::string& what)
{
    std::map<std::string, Tensor> by_name(saved.begin(), saved.end());
    std::ostringstream diff;
    int problems = 0;
    for (const auto& [name, t] : targets) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            diff << "\n  missing: " << name << " " << t.shape_str();
            ++problems;
        } else if (it->second.shape() != t.shape()) {
            diff << "\n  shape: " << name << " saved " << it->second.shape_str() << " expected " << t.shape_str();
            ++problems;
        }
    }
    std::map<std::string, bool> wanted;
    for (const auto& [name, t] : targets)
        wanted[name] = true;
    for (const auto& [name, t] : saved)
        if (!wanted.count(name)) {
            diff << "\n  unexpected: " << name << " " << t.shape_str();
            ++problems;
        }
    if (problems)
        throw ConfigError("checkpoint does not match " + what + " (" + std::to_string(problems) + " differences):" +
                          diff.str());
    for (const auto& [name, t] : targets) {
        Tensor dst = t;
        dst.copy_from(by_name.at(name));
    }
}

void save_module(const std::filesystem::path& path, const std::string& module_name, const nn::Module& m)
{
    save_checkpoint(path, module_name, m.state());
}

void load_module(const std::filesystem::path& path, const std::string& module_name, nn::Module& m)
{
    Checkpoint ck = load_checkpoint(path);
    if (ck.module != module_name)
        throw ConfigError("checkpoint " + path.string() + " holds '" + ck.module + "', expected '" + module_name + "'");
    restore(ck.records, m.state(), module_name);
}

} // namespace s2i
