#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "innpar/layers.hpp"

namespace innpar {

// Checkpoint layout:
//   magic "INNPAR01" (8 bytes)
//   u32 little-endian JSON header length
//   JSON header {config, tensors: [{name, shape, offset, count}], metadata}
//   concatenated 32-bit little-endian float payloads
// Offsets are byte offsets into the payload region. Round-trips are bit-exact.

inline constexpr char kCheckpointMagic[8] = {'I', 'N', 'N', 'P', 'A', 'R', '0', '1'};

struct CheckpointMeta {
    std::uint64_t epoch = 0;
    std::string loss_digest;
};

template <class T>
void save_checkpoint(InnParModel<T>& model, const std::string& path,
                     const CheckpointMeta& meta = {}) {
    auto params = model.params();
    nlohmann::json dir = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (Param<T>* p : params) {
        dir.push_back({{"name", p->name},
                       {"shape", {p->value.batch(), p->value.channels(), p->value.length()}},
                       {"offset", offset},
                       {"count", p->value.size()}});
        offset += p->value.size() * sizeof(float);
    }
    nlohmann::json header = {{"config", model.config()},
                             {"tensors", dir},
                             {"metadata", {{"epoch", meta.epoch},
                                           {"loss_digest", meta.loss_digest}}}};
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("checkpoint save: cannot open " + path);
    out.write(kCheckpointMagic, 8);
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    std::vector<float> buf;
    for (Param<T>* p : params) {
        buf.assign(p->value.flat().begin(), p->value.flat().end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("checkpoint save: write failed for " + path);
}

template <class T>
InnParModel<T> load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint load: cannot open " + path);

    char magic[8];
    if (!in.read(magic, 8))
        throw FormatError("checkpoint load: truncated before magic at byte 0");
    if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("checkpoint load: bad magic at byte 0");
    std::uint32_t hlen = 0;
    if (!in.read(reinterpret_cast<char*>(&hlen), 4))
        throw FormatError("checkpoint load: truncated header length at byte 8");
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen))
        throw FormatError("checkpoint load: truncated header at byte 12");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint load: invalid header JSON at byte 12: ") +
                          e.what());
    }
    ModelConfig cfg = header.at("config").get<ModelConfig>();
    InnParModel<T> model(cfg);
    if (meta) {
        meta->epoch = header.at("metadata").value("epoch", std::uint64_t{0});
        meta->loss_digest = header.at("metadata").value("loss_digest", std::string{});
    }

    const std::uint64_t payload_start = 12 + hlen;
    auto params = model.params();
    const auto& dir = header.at("tensors");
    if (dir.size() != params.size())
        throw FormatError("checkpoint load: tensor directory has " +
                          std::to_string(dir.size()) + " entries, model expects " +
                          std::to_string(params.size()));
    std::vector<float> buf;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = dir.at(i);
        Param<T>* p = params[i];
        if (e.at("name").get<std::string>() != p->name)
            throw FormatError("checkpoint load: tensor " + std::to_string(i) + " is '" +
                              e.at("name").get<std::string>() + "', model expects '" +
                              p->name + "'");
        const auto shape = e.at("shape").get<std::vector<std::size_t>>();
        if (shape.size() != 3 || shape[0] != p->value.batch() ||
            shape[1] != p->value.channels() || shape[2] != p->value.length())
            throw FormatError("checkpoint load: shape mismatch for '" + p->name + "'");
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        const std::uint64_t count = e.at("count").get<std::uint64_t>();
        if (count != p->value.size())
            throw FormatError("checkpoint load: element count mismatch for '" + p->name + "'");
        in.seekg(static_cast<std::streamoff>(payload_start + off));
        buf.resize(count);
        if (!in.read(reinterpret_cast<char*>(buf.data()),
                     static_cast<std::streamsize>(count * sizeof(float))))
            throw FormatError("checkpoint load: truncated payload for '" + p->name +
                              "' at byte " + std::to_string(payload_start + off));
        for (std::size_t j = 0; j < count; ++j)
            p->value.data()[j] = static_cast<T>(buf[j]);
    }
    for (auto& ic : model.invconvs()) {
        const double det = ic.determinant();
        if (std::abs(det) <= 1e-12)
            throw NumericError("checkpoint load: non-invertible 1x1 weight, |det| = " +
                               std::to_string(std::abs(det)));
    }
    return model;
}

} // namespace innpar
