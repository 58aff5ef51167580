#pragma once

// Binary checkpoint, all integers little-endian:
//
//   "XCNN" | u32 version (1) | u32 len, arch id bytes | u64 seed | u64 epoch
//   | u32 tensor count | per tensor: u32 len, name bytes | u32 rank
//   | rank x u64 dims | f64 payload | u64 checksum
//
// The checksum is the sum of all f64 payload bytes modulo 2^64.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "model.hpp"

namespace xcnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'X', 'C', 'N', 'N'};

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    // Returns the byte sum of the encoded value.
    std::uint64_t f64(double v) {
        const auto bits = std::bit_cast<std::uint64_t>(v);
        std::uint64_t sum = 0;
        for (int i = 0; i < 8; ++i) {
            const auto b = static_cast<std::uint8_t>(bits >> (8 * i));
            bytes_.push_back(b);
            sum += b;
        }
        return sum;
    }
    const std::vector<std::uint8_t>& bytes() const { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n)
            throw CorruptionError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes_[pos_++]} << (8 * i);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    double f64(std::uint64_t& sum) {
        need(8);
        for (int i = 0; i < 8; ++i) sum += bytes_[pos_ + i];
        return std::bit_cast<double>(u64());
    }
    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const Network& net) {
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(net.spec().id);
    w.u64(net.seed());
    w.u64(net.epoch());
    const auto tensors = net.persistent_tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    std::uint64_t checksum = 0;
    for (const auto& [name, t] : tensors) {
        w.str(name);
        w.u32(static_cast<std::uint32_t>(t->rank()));
        for (auto d : t->shape()) w.u64(d);
        for (double v : t->data()) checksum += w.f64(v);
    }
    w.u64(checksum);
    return w.bytes();
}

/// Rebuilds a network from checkpoint bytes. When expected_arch is given the
/// stored architecture id must match it.
inline Network deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                      std::optional<std::string_view> expected_arch = std::nullopt) {
    if (bytes.size() < 4) throw CorruptionError("checkpoint truncated inside the header");
    if (!std::equal(kCheckpointMagic, kCheckpointMagic + 4, bytes.begin()))
        throw FormatError("not a checkpoint: bad magic");
    detail::ByteReader body(bytes);
    body.skip(4);
    const std::uint32_t version = body.u32();
    if (version != kCheckpointVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    const std::string arch = body.str();
    const std::uint64_t seed = body.u64();
    const std::uint64_t epoch = body.u64();
    const std::uint32_t count = body.u32();

    struct Entry {
        std::string name;
        Tensor tensor;
    };
    std::vector<Entry> entries;
    std::uint64_t checksum = 0;
    for (std::uint32_t k = 0; k < count; ++k) {
        Entry e;
        e.name = body.str();
        const std::uint32_t rank = body.u32();
        if (rank > 8) throw CorruptionError("implausible rank " + std::to_string(rank) + " for " + e.name);
        Shape shape(rank);
        std::size_t n = 1;
        for (auto& d : shape) {
            d = body.u64();
            if (d == 0 || n > body.remaining() / 8 / d)
                throw CorruptionError("tensor " + e.name + " extends past the end of the checkpoint");
            n *= d;
        }
        std::vector<double> data(n);
        for (auto& v : data) v = body.f64(checksum);
        e.tensor = Tensor(std::move(shape), std::move(data));
        entries.push_back(std::move(e));
    }
    const std::uint64_t stored = body.u64();
    if (body.remaining() != 0) throw CorruptionError("trailing bytes after checkpoint checksum");
    if (stored != checksum) throw CorruptionError("checkpoint checksum mismatch");

    if (expected_arch && *expected_arch != arch)
        throw CompatibilityError("checkpoint holds architecture '" + arch + "' but '" + std::string(*expected_arch) +
                                 "' was requested");
    ArchitectureSpec spec;
    try {
        spec = build_architecture(arch);
    } catch (const ParameterError&) {
        throw CompatibilityError("checkpoint holds unknown architecture '" + arch + "'");
    }
    Network net(std::move(spec), seed);
    net.set_epoch(epoch);
    const auto expected = net.persistent_tensors();
    if (expected.size() != entries.size())
        throw CompatibilityError("checkpoint has " + std::to_string(entries.size()) + " tensors, architecture " + arch +
                                 " needs " + std::to_string(expected.size()));
    for (auto& e : entries) {
        Tensor* dst = net.find_persistent(e.name);
        if (!dst) throw CompatibilityError("checkpoint tensor " + e.name + " is not part of " + arch);
        if (dst->shape() != e.tensor.shape())
            throw CompatibilityError("checkpoint tensor " + e.name + " has shape " + shape_str(e.tensor.shape()) +
                                     ", expected " + shape_str(dst->shape()));
        *dst = std::move(e.tensor);
    }
    return net;
}

inline void save_checkpoint(const Network& net, const std::filesystem::path& path) {
    const auto bytes = serialize_checkpoint(net);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline Network load_checkpoint(const std::filesystem::path& path,
                               std::optional<std::string_view> expected_arch = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes, expected_arch);
}

} // namespace xcnn
