#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinyqe/error.hpp"
#include "tinyqe/model.hpp"

namespace tinyqe {

// Checkpoint container (.qeck): an 8-digit ASCII decimal header giving the
// manifest length, the UTF-8 JSON manifest, then the raw parameter buffers as
// little-endian float32, at the offsets the manifest declares (relative to
// the end of the manifest).

namespace detail {

inline void append_le_floats(std::string& out, const std::vector<float>& values) {
    for (float v : values) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        out.push_back(static_cast<char>(bits & 0xff));
        out.push_back(static_cast<char>((bits >> 8) & 0xff));
        out.push_back(static_cast<char>((bits >> 16) & 0xff));
        out.push_back(static_cast<char>((bits >> 24) & 0xff));
    }
}

inline std::vector<float> read_le_floats(const std::string& blob, std::size_t offset, std::size_t count) {
    std::vector<float> values(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset + 4 * i);
        std::uint32_t bits = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
        std::memcpy(&values[i], &bits, 4);
    }
    return values;
}

inline nlohmann::json config_to_json(const EncoderConfig& c) {
    return nlohmann::json{{"d_model", c.d_model},   {"n_heads", c.n_heads},       {"n_layers", c.n_layers},
                          {"d_ff", c.d_ff},         {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
                          {"dropout_rate", c.dropout_rate}};
}

inline EncoderConfig config_from_json(const nlohmann::json& j) {
    EncoderConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.dropout_rate = j.at("dropout_rate").get<float>();
    return c;
}

}  // namespace detail

inline constexpr const char* kCheckpointFormat = "qeck/1";

// Returns the total number of bytes written.
inline std::uint64_t save_checkpoint(const QEModel& model, const std::filesystem::path& path) {
    model.validate();
    nlohmann::json tensors = nlohmann::json::array();
    std::string blob;
    model.for_each_parameter([&](const std::string& name, const Tensor& t) {
        tensors.push_back({{"name", name},
                           {"shape", t.shape},
                           {"offset", blob.size()},
                           {"count", t.numel()}});
        detail::append_le_floats(blob, t.data);
    });
    nlohmann::json manifest{{"format", kCheckpointFormat},
                            {"config", detail::config_to_json(model.config)},
                            {"pooling", to_string(model.pooling)},
                            {"tensors", std::move(tensors)}};
    const std::string manifest_text = manifest.dump();
    char header[9];
    std::snprintf(header, sizeof header, "%08zu", manifest_text.size());

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("checkpoint: cannot open '" + path.string() + "' for writing");
    out.write(header, 8);
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.flush();
    if (!out) throw io_error("checkpoint: failed writing '" + path.string() + "'");
    return 8 + manifest_text.size() + blob.size();
}

inline QEModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("checkpoint: cannot open '" + path.string() + "'");
    std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (contents.size() < 8) throw parse_error("checkpoint: file shorter than the 8-digit header");
    std::size_t manifest_len = 0;
    for (int i = 0; i < 8; ++i) {
        const char c = contents[i];
        if (c < '0' || c > '9') throw parse_error("checkpoint: header is not 8 ASCII decimal digits");
        manifest_len = manifest_len * 10 + static_cast<std::size_t>(c - '0');
    }
    if (contents.size() < 8 + manifest_len) throw corruption_error("checkpoint: manifest extends past end of file");

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(contents.substr(8, manifest_len));
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: malformed manifest: ") + e.what());
    }

    QEModel model;
    try {
        if (manifest.at("format").get<std::string>() != kCheckpointFormat)
            throw parse_error("checkpoint: unknown format '" + manifest.at("format").get<std::string>() + "'");
        model.config = detail::config_from_json(manifest.at("config"));
        model.pooling = pooling_from_string(manifest.at("pooling").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    model.config.validate();

    // Index the declared tensors, then check each expected parameter against
    // its entry before touching the payload.
    struct Entry {
        std::vector<std::size_t> shape;
        std::size_t offset = 0;
        std::size_t count = 0;
    };
    std::map<std::string, Entry> index;
    try {
        for (const auto& t : manifest.at("tensors")) {
            Entry e;
            e.shape = t.at("shape").get<std::vector<std::size_t>>();
            e.offset = t.at("offset").get<std::size_t>();
            e.count = t.at("count").get<std::size_t>();
            if (!index.emplace(t.at("name").get<std::string>(), std::move(e)).second)
                throw corruption_error("checkpoint: duplicate tensor '" + t.at("name").get<std::string>() + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("checkpoint: malformed tensor index: ") + e.what());
    }

    RandomSource unused_rng(0);
    model.weights = EncoderWeights::init(model.config, unused_rng);
    model.head_weight = Tensor({model.config.d_model, 1});
    model.head_bias = Tensor({1, 1});

    const std::string blob = contents.substr(8 + manifest_len);
    std::size_t consumed = 0;
    model.for_each_parameter([&](const std::string& name, Tensor& t) {
        auto it = index.find(name);
        if (it == index.end()) throw corruption_error("checkpoint: missing tensor '" + name + "'");
        const Entry& e = it->second;
        if (e.shape != t.shape)
            throw corruption_error("checkpoint: tensor '" + name + "' has shape " + detail::shape_str(e.shape) +
                                   ", expected " + detail::shape_str(t.shape));
        if (e.count != t.numel())
            throw corruption_error("checkpoint: tensor '" + name + "' declares " + std::to_string(e.count) +
                                   " elements, expected " + std::to_string(t.numel()));
        if (e.offset + 4 * e.count > blob.size())
            throw corruption_error("checkpoint: tensor '" + name + "' is truncated");
        t.data = detail::read_le_floats(blob, e.offset, e.count);
        ++consumed;
    });
    if (consumed != index.size()) throw corruption_error("checkpoint: manifest declares unexpected extra tensors");
    return model;
}

inline std::uint64_t file_size_bytes(const std::filesystem::path& path) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) throw io_error("footprint: cannot stat '" + path.string() + "': " + ec.message());
    return static_cast<std::uint64_t>(size);
}

// Disk footprint of a submission: a .qeck checkpoint is its file size; any
// other file is read as an ensemble manifest (one checkpoint path per line,
// relative paths resolved against the manifest) and the member sizes summed.
inline std::uint64_t footprint_bytes(const std::filesystem::path& path) {
    if (path.extension() == ".qeck") return file_size_bytes(path);
    std::ifstream in(path);
    if (!in) throw io_error("footprint: cannot open '" + path.string() + "'");
    std::uint64_t total = 0;
    std::string line;
    bool any = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::filesystem::path member(line);
        if (member.is_relative()) member = path.parent_path() / member;
        total += file_size_bytes(member);
        any = true;
    }
    if (!any) throw parse_error("footprint: manifest '" + path.string() + "' lists no checkpoints");
    return total;
}

}  // namespace tinyqe
