#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "uwseg/errors.hpp"
#include "uwseg/grid.hpp"
#include "uwseg/tensor.hpp"

namespace uwseg {

// Tensor file layout (little-endian):
//   magic "UWTN", u16 version = 1, u8 dtype (0 = f32), u8 ndim (2 or 3),
//   ndim x u32 dims (C,H,W for ndim=3; H,W for ndim=2), row-major f32 payload.
inline constexpr char kTensorMagic[4] = {'U', 'W', 'T', 'N'};
inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

class ByteReader {
public:
    ByteReader(const std::string& bytes, const std::string& path)
        : bytes_(bytes), path_(path) {}

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(bytes_[pos_++]);
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(bytes_[pos_]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_ + 1])) << 8);
        pos_ += 2;
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) {
        if (bytes_.size() - pos_ < n)
            throw CorruptFileError("truncated tensor file: " + path_);
    }

    const std::string& bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failure: " + path);
    return bytes;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failure: " + path);
}

inline std::string tensor_bytes(const std::vector<std::uint32_t>& dims,
                                const std::vector<double>& values) {
    std::string out;
    out.reserve(8 + 4 * dims.size() + 4 * values.size());
    out.append(kTensorMagic, 4);
    put_u16(out, kTensorVersion);
    out.push_back(static_cast<char>(kDtypeF32));
    out.push_back(static_cast<char>(dims.size()));
    for (std::uint32_t d : dims) put_u32(out, d);
    for (double v : values) put_f32(out, static_cast<float>(v));
    return out;
}

}  // namespace detail

/// A 2-D tensor reads as an UncertaintyMap, a 3-D one as a ChwTensor whose
/// role (logits vs probabilities) is decided by the caller.
using TensorVariant = std::variant<UncertaintyMap, ChwTensor>;

inline TensorVariant read_tensor(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    detail::ByteReader r(bytes, path);
    if (r.remaining() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0)
        throw FormatError("bad magic, not a tensor file: " + path);
    r.u32();  // skip magic
    if (r.u16() != kTensorVersion) throw FormatError("unsupported tensor version: " + path);
    if (r.u8() != kDtypeF32) throw FormatError("unsupported dtype: " + path);
    const int ndim = r.u8();
    if (ndim != 2 && ndim != 3) throw FormatError("unsupported ndim: " + path);

    std::uint64_t total = 1;
    std::vector<std::uint32_t> dims(static_cast<std::size_t>(ndim));
    for (auto& d : dims) {
        d = r.u32();
        if (d == 0) throw CorruptFileError("zero dimension in tensor file: " + path);
        total *= d;
        if (total > (1ull << 31)) throw CorruptFileError("dimension overflow in tensor file: " + path);
    }
    if (r.remaining() != total * 4)
        throw CorruptFileError("payload size mismatch in tensor file: " + path);

    std::vector<double> values(static_cast<std::size_t>(total));
    for (auto& v : values) v = static_cast<double>(r.f32());

    if (ndim == 2)
        return UncertaintyMap(static_cast<int>(dims[0]), static_cast<int>(dims[1]), std::move(values));
    return ChwTensor(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                     static_cast<int>(dims[2]), std::move(values));
}

inline void write_tensor(const ChwTensor& t, const std::string& path) {
    detail::write_file(path, detail::tensor_bytes(
        {static_cast<std::uint32_t>(t.classes()), static_cast<std::uint32_t>(t.height()),
         static_cast<std::uint32_t>(t.width())}, t.data()));
}

inline void write_tensor(const UncertaintyMap& m, const std::string& path) {
    detail::write_file(path, detail::tensor_bytes(
        {static_cast<std::uint32_t>(m.height()), static_cast<std::uint32_t>(m.width())}, m.data()));
}

inline UncertaintyMap read_uncertainty_map(const std::string& path) {
    TensorVariant v = read_tensor(path);
    if (auto* m = std::get_if<UncertaintyMap>(&v)) return std::move(*m);
    ChwTensor& t = std::get<ChwTensor>(v);
    require(t.classes() == 1, "expected a 2-D tensor (or C=1): " + path);
    return UncertaintyMap(t.height(), t.width(), std::move(t.data()));
}

inline ChwTensor read_chw(const std::string& path) {
    TensorVariant v = read_tensor(path);
    require(std::holds_alternative<ChwTensor>(v), "expected a 3-D tensor: " + path);
    return std::move(std::get<ChwTensor>(v));
}

// Label masks travel as binary PGM (P5, maxval 255); value 255 is the ignore label.

inline LabelMask read_mask_pgm(const std::string& path) {
    const std::string bytes = detail::read_file(path);
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            char c = bytes[pos];
            if (c == '#') {  // comment to end of line
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++pos;
            } else {
                break;
            }
        }
        std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
               bytes[pos] != '#')
            ++pos;
        if (start == pos) throw CorruptFileError("truncated PGM header: " + path);
        return bytes.substr(start, pos - start);
    };

    if (next_token() != "P5") throw FormatError("not a binary (P5) PGM: " + path);
    long width = 0, height = 0, maxval = 0;
    try {
        width = std::stol(next_token());
        height = std::stol(next_token());
        maxval = std::stol(next_token());
    } catch (const std::exception&) {
        throw FormatError("malformed PGM header: " + path);
    }
    if (maxval != 255) throw FormatError("PGM maxval must be 255: " + path);
    if (width <= 0 || height <= 0 || width > (1 << 20) || height > (1 << 20))
        throw CorruptFileError("bad PGM dimensions: " + path);
    ++pos;  // single whitespace after maxval
    const std::size_t total = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos < total) throw CorruptFileError("truncated PGM payload: " + path);

    std::vector<std::uint8_t> data(total);
    std::memcpy(data.data(), bytes.data() + pos, total);
    return LabelMask(static_cast<int>(height), static_cast<int>(width), std::move(data));
}

inline void write_mask_pgm(const LabelMask& mask, const std::string& path) {
    std::string out = "P5\n" + std::to_string(mask.width()) + " " +
                      std::to_string(mask.height()) + "\n255\n";
    out.append(reinterpret_cast<const char*>(mask.data().data()), mask.size());
    detail::write_file(path, out);
}

/// Snap every value to its f32 representation so in-memory data matches what a
/// tensor-file round trip would produce.
inline void quantize_to_f32(std::vector<double>& values) {
    for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace uwseg
