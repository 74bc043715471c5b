#pragma once

// Parameter checkpoint, little-endian:
//   "VAALCKPT", u32 version,
//   u32 tensor count, then per tensor: u32 name length, name, u32 rows, u32 cols   (manifest)
//   float64 blobs for every tensor in manifest order, row-major

#include "vaal/error.hpp"
#include "vaal/nn/models.hpp"
#include "vaal/pool/dataset_io.hpp"

#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace vaal::nn {

using NamedParameters = std::vector<std::pair<std::string, Var>>;

inline NamedParameters named_parameters(const ModelTriple& m) {
    NamedParameters out;
    auto add_module = [&](const std::string& prefix, const std::vector<Var>& params) {
        for (std::size_t k = 0; k < params.size(); ++k)
            out.emplace_back(prefix + "." + std::to_string(k / 2) + (k % 2 == 0 ? ".weight" : ".bias"), params[k]);
    };
    add_module("encoder", m.vae.encoder().parameters());
    add_module("decoder", m.vae.decoder().parameters());
    add_module("disc", m.disc.parameters());
    add_module("task", m.task.parameters());
    return out;
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const NamedParameters& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write("VAALCKPT", 8);
    vaal::detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    vaal::detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, p] : params) {
        vaal::detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        vaal::detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.rows()));
        vaal::detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.cols()));
    }
    for (const auto& [name, p] : params) {
        const double* d = p.value().data();
        for (Eigen::Index k = 0; k < p.value().size(); ++k) vaal::detail::put_le<double>(out, d[k]);
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

/// Loads into existing parameters; the file's manifest must match exactly.
inline void load_checkpoint(const NamedParameters& params, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::string(magic, 8) != "VAALCKPT") throw IoError("not a checkpoint: " + path);
    if (vaal::detail::get_le<std::uint32_t>(in) != kCheckpointVersion) throw IoError("unsupported checkpoint version");
    const auto count = vaal::detail::get_le<std::uint32_t>(in);
    if (count != params.size()) throw IoError("checkpoint: tensor count mismatch");
    for (const auto& [name, p] : params) {
        const auto len = vaal::detail::get_le<std::uint32_t>(in);
        std::string file_name(len, '\0');
        in.read(file_name.data(), len);
        const auto rows = vaal::detail::get_le<std::uint32_t>(in);
        const auto cols = vaal::detail::get_le<std::uint32_t>(in);
        if (file_name != name || rows != p.rows() || cols != p.cols())
            throw IoError("checkpoint: manifest mismatch at " + name + " (file has " + file_name + ")");
    }
    for (const auto& [name, p] : params) {
        Matrix& v = Var(p).mutable_value();
        for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = vaal::detail::get_le<double>(in);
    }
}

inline void save_checkpoint(const ModelTriple& m, const std::string& path) { save_checkpoint(named_parameters(m), path); }
inline void load_checkpoint(ModelTriple& m, const std::string& path) { load_checkpoint(named_parameters(m), path); }

}  // namespace vaal::nn
