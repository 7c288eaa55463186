// Copyright (c) 2026, smoe-stereo contributors
// SPDX-License-Identifier: Apache-2.0

#include "harness/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "core/errors.hpp"

namespace smoe {

namespace {

constexpr std::array<char, 5> kMagic{'S', 'M', 'O', 'E', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
    return std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) | (std::uint32_t{p[2]} << 16) |
           (std::uint32_t{p[3]} << 24);
}

std::uint32_t crc_of(const char* data, std::size_t n) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for large payloads.
    while (n > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
    nlohmann::json manifest;
    manifest["format"] = "SMOE1";
    manifest["config"] = file.config;
    manifest["tensors"] = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& t : file.tensors) {
        if (shape_numel(t.shape) != t.values.size()) throw ShapeError("checkpoint tensor " + t.name + " size mismatch");
        manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.values.size();
    }
    const std::string text = manifest.dump();

    std::string payload(offset * sizeof(float), '\0');
    char* dst = payload.data();
    for (const auto& t : file.tensors) {
        std::memcpy(dst, t.values.data(), t.values.size() * sizeof(float));
        dst += t.values.size() * sizeof(float);
    }

    std::string blob(kMagic.begin(), kMagic.end());
    put_u32(blob, static_cast<std::uint32_t>(text.size()));
    blob += text;
    blob += payload;
    put_u32(blob, crc_of(payload.data(), payload.size()));

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!f) throw IoError("failed writing " + path.string());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint " + path.string());
    std::string blob((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < kMagic.size() + 8 || std::memcmp(blob.data(), kMagic.data(), kMagic.size()) != 0) {
        throw CorruptCheckpointError(path.string() + ": not an SMOE1 checkpoint");
    }
    const std::size_t text_len = get_u32(bytes + kMagic.size());
    const std::size_t header = kMagic.size() + 4 + text_len;
    if (header + 4 > blob.size()) throw CorruptCheckpointError(path.string() + ": truncated manifest");
    const std::size_t payload_len = blob.size() - header - 4;
    if (payload_len % sizeof(float) != 0) throw CorruptCheckpointError(path.string() + ": ragged payload");

    const std::uint32_t stored_crc = get_u32(bytes + blob.size() - 4);
    if (crc_of(blob.data() + header, payload_len) != stored_crc) {
        throw CorruptCheckpointError(path.string() + ": payload CRC mismatch");
    }

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(blob.begin() + static_cast<std::ptrdiff_t>(kMagic.size() + 4),
                                         blob.begin() + static_cast<std::ptrdiff_t>(header));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpointError(path.string() + ": bad manifest: " + e.what());
    }

    CheckpointFile out;
    const std::size_t floats = payload_len / sizeof(float);
    try {
        out.config = manifest.at("config");
        for (const auto& entry : manifest.at("tensors")) {
            StoredTensor t;
            t.name = entry.at("name").get<std::string>();
            t.shape = entry.at("shape").get<Shape>();
            const auto offset = entry.at("offset").get<std::size_t>();
            const auto n = shape_numel(t.shape);
            if (offset > floats || n > floats - offset) {
                throw CorruptCheckpointError(path.string() + ": tensor " + t.name + " exceeds payload");
            }
            t.values.resize(n);
            std::memcpy(t.values.data(), blob.data() + header + offset * sizeof(float), n * sizeof(float));
            out.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCheckpointError(path.string() + ": bad manifest: " + e.what());
    }
    return out;
}

void round_to_f32(StereoModel& model) {
    for (auto& [name, t] : named_tensors(model)) {
        for (double& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
    }
}

void save_model(const std::filesystem::path& path, StereoModel& model, const RunConfig& config) {
    CheckpointFile file;
    file.config = config_to_json(config);
    for (auto& [name, t] : named_tensors(model)) {
        StoredTensor s{name, t.shape(), {}};
        s.values.reserve(t.numel());
        for (double v : t.data()) s.values.push_back(static_cast<float>(v));
        file.tensors.push_back(std::move(s));
    }
    write_checkpoint(path, file);
}

namespace {

void assign(Tensor& dst, const StoredTensor& src, const std::string& where) {
    if (dst.shape() != src.shape) {
        throw CorruptCheckpointError(where + ": tensor " + src.name + " has shape " + shape_str(src.shape) +
                                     ", model expects " + shape_str(dst.shape()));
    }
    auto out = dst.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(src.values[i]);
}

}  // namespace

LoadedModel load_model(const std::filesystem::path& path) {
    auto file = read_checkpoint(path);
    RunConfig config;
    try {
        config = config_from_json(file.config);
    } catch (const ConfigError& e) {
        throw CorruptCheckpointError(path.string() + ": embedded config rejected: " + e.what());
    }
    // Weights come entirely from the file; skip the pretrained-backbone lookup.
    StereoModel model = make_stereo_model(config.model, config.seed);
    auto named = named_tensors(model);
    if (named.size() != file.tensors.size()) {
        throw CorruptCheckpointError(path.string() + ": tensor count " + std::to_string(file.tensors.size()) +
                                     " does not match the model's " + std::to_string(named.size()));
    }
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : file.tensors) by_name[t.name] = &t;
    for (auto& [name, t] : named) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw CorruptCheckpointError(path.string() + ": missing tensor " + name);
        assign(t, *it->second, path.string());
    }
    return {std::move(config), std::move(model)};
}

std::size_t load_backbone_weights(StereoModel& model, const std::filesystem::path& path) {
    auto file = read_checkpoint(path);
    std::map<std::string, const StoredTensor*> by_name;
    for (const auto& t : file.tensors) by_name[t.name] = &t;
    std::size_t replaced = 0;
    for (auto& [name, t] : named_tensors(model)) {
        if (name.rfind("backbone.", 0) != 0 || t.requires_grad()) continue;
        auto it = by_name.find(name);
        if (it == by_name.end()) continue;
        assign(t, *it->second, path.string());
        ++replaced;
    }
    if (replaced == 0) throw CorruptCheckpointError(path.string() + ": no backbone tensors found");
    return replaced;
}

StereoModel build_model(const RunConfig& config) {
    StereoModel model = make_stereo_model(config.model, config.seed);
    if (!config.backbone_checkpoint.empty()) load_backbone_weights(model, config.backbone_checkpoint);
    round_to_f32(model);
    return model;
}

}  // namespace smoe
