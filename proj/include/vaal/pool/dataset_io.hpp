#pragma once

// Binary dataset container, little-endian throughout:
//
//   "VAALDSET"            8-byte magic
//   u32 version           currently 1
//   u8  dtype             0 = float64, 1 = float32, 2 = uint8
//   u32 rank              rank of the data tensor (>= 2)
//   u64 dims[rank]        dims[0] = sample count, the rest are the sample shape
//   data                  row-major
//   u32 labels[n]
//   u32 class_count
//   u8  has_superclass    followed by u32 superclass[class_count] when 1
//   u32 name_count        followed by (u32 length, bytes) per class name
//   3 x (u64 count, u64 indices[count])   train, validation, test

#include "vaal/error.hpp"
#include "vaal/pool/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

namespace vaal {

enum class DType : std::uint8_t { Float64 = 0, Float32 = 1, UInt8 = 2 };

namespace detail {

inline constexpr std::array<char, 8> kDatasetMagic{'V', 'A', 'A', 'L', 'D', 'S', 'E', 'T'};
inline constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<unsigned char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
    std::array<unsigned char, sizeof(T)> bytes{};
    if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) throw IoError("dataset: truncated file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void put_indices(std::ostream& out, const IndexList& idx) {
    put_le<std::uint64_t>(out, idx.size());
    for (Index i : idx) put_le<std::uint64_t>(out, i);
}

inline IndexList get_indices(std::istream& in, std::size_t n) {
    const auto count = get_le<std::uint64_t>(in);
    if (count > n) throw IoError("dataset: split larger than sample count");
    IndexList idx(count);
    for (auto& i : idx) i = get_le<std::uint64_t>(in);
    return idx;
}

}  // namespace detail

inline void write_dataset(const Dataset& ds, const std::string& path, DType dtype = DType::Float64) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(detail::kDatasetMagic.data(), detail::kDatasetMagic.size());
    detail::put_le<std::uint32_t>(out, detail::kDatasetVersion);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));

    std::vector<std::size_t> shape = ds.shape.empty() ? std::vector<std::size_t>{ds.feature_dim()} : ds.shape;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size() + 1));
    detail::put_le<std::uint64_t>(out, ds.size());
    for (auto s : shape) detail::put_le<std::uint64_t>(out, s);

    const Eigen::Index total = ds.samples.size();
    const double* data = ds.samples.data();
    for (Eigen::Index k = 0; k < total; ++k) {
        switch (dtype) {
            case DType::Float64: detail::put_le<double>(out, data[k]); break;
            case DType::Float32: detail::put_le<float>(out, static_cast<float>(data[k])); break;
            case DType::UInt8: {
                const double v = std::clamp(std::round(data[k]), 0.0, 255.0);
                detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(v));
                break;
            }
        }
    }
    for (int y : ds.true_labels) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(y));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.class_count));
    detail::put_le<std::uint8_t>(out, ds.superclass_map ? 1 : 0);
    if (ds.superclass_map) {
        for (int s : *ds.superclass_map) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s));
    }
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ds.class_names.size()));
    for (const auto& name : ds.class_names) {
        detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    detail::put_indices(out, ds.split.train);
    detail::put_indices(out, ds.split.validation);
    detail::put_indices(out, ds.split.test);
    if (!out) throw IoError("write failed: " + path);
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset: " + path);
    std::array<char, 8> magic{};
    if (!in.read(magic.data(), magic.size()) || magic != detail::kDatasetMagic)
        throw IoError("not a dataset container: " + path);
    const auto version = detail::get_le<std::uint32_t>(in);
    if (version != detail::kDatasetVersion) throw IoError("unsupported dataset version " + std::to_string(version));
    const auto dtype = static_cast<DType>(detail::get_le<std::uint8_t>(in));
    if (dtype != DType::Float64 && dtype != DType::Float32 && dtype != DType::UInt8)
        throw IoError("unknown dtype in " + path);
    const auto rank = detail::get_le<std::uint32_t>(in);
    if (rank < 2) throw IoError("dataset rank must be >= 2");

    Dataset ds;
    const auto n = detail::get_le<std::uint64_t>(in);
    std::size_t features = 1;
    for (std::uint32_t r = 1; r < rank; ++r) {
        ds.shape.push_back(detail::get_le<std::uint64_t>(in));
        features *= ds.shape.back();
    }
    ds.samples.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features));
    double* data = ds.samples.data();
    for (std::size_t k = 0; k < n * features; ++k) {
        switch (dtype) {
            case DType::Float64: data[k] = detail::get_le<double>(in); break;
            case DType::Float32: data[k] = detail::get_le<float>(in); break;
            case DType::UInt8: data[k] = detail::get_le<std::uint8_t>(in); break;
        }
    }
    ds.true_labels.resize(n);
    for (auto& y : ds.true_labels) y = static_cast<int>(detail::get_le<std::uint32_t>(in));
    ds.class_count = static_cast<int>(detail::get_le<std::uint32_t>(in));
    if (detail::get_le<std::uint8_t>(in) != 0) {
        std::vector<int> map(static_cast<std::size_t>(ds.class_count));
        for (auto& s : map) s = static_cast<int>(detail::get_le<std::uint32_t>(in));
        ds.superclass_map = std::move(map);
    }
    const auto names = detail::get_le<std::uint32_t>(in);
    for (std::uint32_t k = 0; k < names; ++k) {
        const auto len = detail::get_le<std::uint32_t>(in);
        std::string name(len, '\0');
        if (!in.read(name.data(), len)) throw IoError("dataset: truncated class name");
        ds.class_names.push_back(std::move(name));
    }
    ds.split.train = detail::get_indices(in, n);
    ds.split.validation = detail::get_indices(in, n);
    ds.split.test = detail::get_indices(in, n);
    validate(ds);
    return ds;
}

}  // namespace vaal
