#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "lors/grad_check.hpp"
#include "lors/tensor.hpp"

namespace lors {

/// Flat binary container for named tensors.
///
/// Layout (all integers little-endian):
///   magic "LORS1"
///   u32 tensor count
///   per tensor: u32 name length, name bytes,
///               u32 rank, u32 extents[rank],
///               f64 data[product of extents]  (IEEE-754, little-endian)
namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ContractError("truncated tensor container");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ContractError("truncated tensor container");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace io

inline constexpr char kTensorMagic[5] = {'L', 'O', 'R', 'S', '1'};

inline void save_tensors(std::ostream& os, const ParamList& tensors) {
    os.write(kTensorMagic, 5);
    io::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const NamedTensor& nt : tensors) {
        io::write_u32(os, static_cast<std::uint32_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        const Shape& s = nt.tensor.shape();
        io::write_u32(os, static_cast<std::uint32_t>(s.size()));
        for (int e : s) io::write_u32(os, static_cast<std::uint32_t>(e));
        for (double v : nt.tensor.data()) io::write_f64(os, v);
    }
}

inline void save_tensors(const std::string& path, const ParamList& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ContractError("cannot open '" + path + "' for writing");
    save_tensors(os, tensors);
}

inline ParamList load_tensors(std::istream& is) {
    char magic[5];
    is.read(magic, 5);
    if (!is || std::memcmp(magic, kTensorMagic, 5) != 0) {
        throw ContractError("bad magic: not a LORS1 tensor container");
    }
    const std::uint32_t count = io::read_u32(is);
    ParamList out;
    out.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = io::read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t rank = io::read_u32(is);
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(io::read_u32(is));
        Tensor tensor = Tensor::zeros(shape);
        for (double& v : tensor.data()) v = io::read_f64(is);
        if (!is) throw ContractError("truncated tensor container");
        out.push_back({std::move(name), std::move(tensor)});
    }
    return out;
}

inline ParamList load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ContractError("cannot open '" + path + "' for reading");
    return load_tensors(is);
}

/// Copies saved values into an existing parameter list, matching by name and
/// shape. Every destination parameter must be present in the container.
inline void restore_into(const ParamList& saved, ParamList& params) {
    for (NamedTensor& p : params) {
        const NamedTensor* found = nullptr;
        for (const NamedTensor& s : saved) {
            if (s.name == p.name) {
                found = &s;
                break;
            }
        }
        if (!found) throw ContractError("container has no tensor named '" + p.name + "'");
        if (found->tensor.shape() != p.tensor.shape()) {
            throw ShapeError("tensor '" + p.name + "' saved as " +
                             shape_str(found->tensor.shape()) + " but expected " +
                             shape_str(p.tensor.shape()));
        }
        p.tensor.data() = found->tensor.data();
    }
}

}  // namespace lors
