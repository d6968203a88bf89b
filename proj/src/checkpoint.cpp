#include "relpos/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "relpos/errors.hpp"

namespace relpos {

namespace {

constexpr char kMagic[8] = {'R', 'P', 'E', 'M', 'B', 'C', 'K', '\0'};

template <class T>
void put_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("checkpoint truncated");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto n = get_le<std::uint32_t>(in);
    if (n > (1u << 20)) throw FormatError("checkpoint string too long");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw FormatError("checkpoint truncated");
    return s;
}

}  // namespace

void save_checkpoint(const Encoder& model, std::uint64_t seed, std::ostream& out) {
    out.write(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    auto kv = model.config().to_kv();
    kv["seed"] = std::to_string(seed);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(kv.size()));
    for (const auto& [k, v] : kv) {
        put_string(out, k);
        put_string(out, v);
    }
    const auto params = model.parameters();
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        put_string(out, p->name);
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.ndim()));
        for (auto e : p->value.shape()) put_le<std::uint64_t>(out, e);
        for (double v : p->value.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw FormatError("failed writing checkpoint");
}

void save_checkpoint(const Encoder& model, std::uint64_t seed, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open " + path.string() + " for writing");
    save_checkpoint(model, seed, out);
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not a checkpoint file");
    const auto version = get_le<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
    std::map<std::string, std::string> kv;
    const auto entries = get_le<std::uint32_t>(in);
    for (std::uint32_t i = 0; i < entries; ++i) {
        auto key = get_string(in);
        kv[key] = get_string(in);
    }
    auto seed_it = kv.find("seed");
    if (seed_it == kv.end()) throw FormatError("checkpoint header lacks seed");
    const std::uint64_t seed = std::stoull(seed_it->second);
    kv.erase(seed_it);

    Encoder model(EncoderConfig::from_kv(kv), seed);
    const auto blocks = get_le<std::uint32_t>(in);
    const auto params = model.parameters();
    if (blocks != params.size())
        throw FormatError("checkpoint has " + std::to_string(blocks) + " parameter blocks, model expects " +
                          std::to_string(params.size()));
    std::set<std::string> seen;
    for (std::uint32_t b = 0; b < blocks; ++b) {
        const auto name = get_string(in);
        Parameter* p = model.find_parameter(name);
        if (p == nullptr) throw FormatError("checkpoint block '" + name + "' does not match any parameter");
        if (!seen.insert(name).second) throw FormatError("duplicate checkpoint block '" + name + "'");
        const auto ndim = get_le<std::uint32_t>(in);
        Shape shape(ndim);
        for (auto& e : shape) e = static_cast<std::size_t>(get_le<std::uint64_t>(in));
        if (shape != p->value.shape())
            throw FormatError("block '" + name + "' has shape " + shape_str(shape) + ", expected " +
                              shape_str(p->value.shape()));
        for (auto& v : p->value.data()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
    }
    return {std::move(model), seed};
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    return load_checkpoint(in);
}

}  // namespace relpos
