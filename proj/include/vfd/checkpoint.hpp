#pragma once

// Checkpoint file: a text manifest followed by the raw little-endian
// parameter payload.
//
//   vfd-checkpoint 1
//   arch cnn-small
//   input 1,8,8
//   classes 3
//   widths 8,16
//   dtype f64
//   seed 7
//   epoch 10
//   param block1.conv.weight 8,1,3,3 0        (name, shape, byte offset into payload)
//   ...
//   config train.method trades+vfd            (resolved configuration snapshot)
//   log 10,0.31,0.12,1.9,1.08                 (training-log tail)
//   payload_bytes 12345
//   end
//   <payload>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vfd/data.hpp"
#include "vfd/io.hpp"
#include "vfd/models.hpp"

namespace vfd {

template <class T = double>
struct Checkpoint {
    TappedModel<T> model;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::string> log_tail;
};

template <class T>
std::string encode_checkpoint(const Checkpoint<T>& ck)
{
    const auto& desc = ck.model.descriptor();
    io::Manifest m;
    m.magic = "vfd-checkpoint";
    m.version = 1;
    m.set("arch", desc.arch);
    m.set("input", io::join_shape(desc.input));
    m.set("classes", std::to_string(desc.num_classes));
    m.set("widths", io::join_shape(desc.widths));
    m.set("dtype", dtype_name<T>());
    m.set("seed", std::to_string(ck.seed));
    m.set("epoch", std::to_string(ck.epoch));
    std::size_t offset = 0;
    for (const auto& e : ck.model.params()) {
        m.set("param", e.name + " " + io::join_shape(e.tensor.shape()) + " " + std::to_string(offset));
        offset += e.tensor.numel() * sizeof(T);
    }
    for (const auto& [k, v] : ck.config)
        m.set("config", k + " " + v);
    for (const auto& row : ck.log_tail)
        m.set("log", row);
    m.set("payload_bytes", std::to_string(offset));
    std::string out = m.render();
    for (const auto& e : ck.model.params())
        for (T v : e.tensor.data())
            io::put_le(out, v);
    return out;
}

template <class T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path)
{
    io::write_file(path, encode_checkpoint(ck));
}

/// Reads the architecture recorded in a checkpoint without decoding it.
inline ArchDescriptor peek_architecture(const std::string& path, std::string* dtype = nullptr)
{
    const std::string bytes = io::read_file(path);
    auto [m, payload] = io::parse_container<CheckpointError>(bytes, "vfd-checkpoint");
    ArchDescriptor d;
    d.arch = m.get("arch");
    d.input = io::parse_shape(m.get("input"));
    d.num_classes = std::stoull(m.get("classes"));
    d.widths = io::parse_shape(m.get("widths"));
    if (dtype)
        *dtype = m.get("dtype");
    return d;
}

/// Loads a checkpoint. A non-empty `expected_arch` must match the stored
/// architecture id exactly.
template <class T = double>
Checkpoint<T> decode_checkpoint(const std::string& bytes, const std::string& expected_arch = "");

namespace detail {

template <class T>
Checkpoint<T> decode_checkpoint_fields(const std::string& bytes, const std::string& expected_arch)
{
    auto [m, payload] = io::parse_container<CheckpointError>(bytes, "vfd-checkpoint");
    if (m.version != 1)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(m.version));
    if (m.get("dtype") != dtype_name<T>())
        throw CheckpointError("checkpoint dtype " + m.get("dtype") + " does not match requested " + dtype_name<T>());
    ArchDescriptor d;
    d.arch = m.get("arch");
    if (!expected_arch.empty() && d.arch != expected_arch)
        throw CheckpointError("checkpoint architecture '" + d.arch + "' does not match expected '" + expected_arch + "'");
    d.input = io::parse_shape(m.get("input"));
    d.num_classes = std::stoull(m.get("classes"));
    d.widths = io::parse_shape(m.get("widths"));

    const std::size_t declared = std::stoull(m.get("payload_bytes"));
    if (payload.size() != declared)
        throw CheckpointError("checkpoint payload has " + std::to_string(payload.size()) +
                              " bytes, manifest declares " + std::to_string(declared));

    Checkpoint<T> ck{TappedModel<T>::skeleton(d), 0, 0, {}, {}};
    ck.seed = std::stoull(m.get("seed"));
    ck.epoch = std::stoull(m.get("epoch"));
    std::size_t k = 0;
    for (const auto& [key, value] : m.entries) {
        if (key == "config") {
            const auto sp = value.find(' ');
            ck.config.emplace_back(value.substr(0, sp), sp == std::string::npos ? "" : value.substr(sp + 1));
        } else if (key == "log") {
            ck.log_tail.push_back(value);
        } else if (key == "param") {
            std::istringstream ss(value);
            std::string name, shape_text;
            std::size_t offset = 0;
            ss >> name >> shape_text >> offset;
            if (k >= ck.model.params().size())
                throw CheckpointError("checkpoint lists more parameters than architecture " + d.arch + " has");
            auto& e = ck.model.params()[k++];
            if (e.name != name || e.tensor.shape() != io::parse_shape(shape_text))
                throw CheckpointError("checkpoint parameter '" + name + "' " + shape_text +
                                      " does not match architecture entry '" + e.name + "' " +
                                      to_string(e.tensor.shape()));
            const std::size_t bytes_needed = e.tensor.numel() * sizeof(T);
            if (offset + bytes_needed > payload.size())
                throw CheckpointError("parameter '" + name + "' needs bytes [" + std::to_string(offset) + ", " +
                                      std::to_string(offset + bytes_needed) + ") but payload has " +
                                      std::to_string(payload.size()));
            auto dst = e.tensor.mutable_data();
            for (std::size_t i = 0; i < dst.size(); ++i)
                dst[i] = io::get_le<T>(payload.data() + offset + i * sizeof(T));
        }
    }
    if (k != ck.model.params().size())
        throw CheckpointError("checkpoint lists " + std::to_string(k) + " parameters, architecture " + d.arch +
                              " has " + std::to_string(ck.model.params().size()));
    return ck;
}

}  // namespace detail

template <class T>
Checkpoint<T> decode_checkpoint(const std::string& bytes, const std::string& expected_arch)
{
    try {
        return detail::decode_checkpoint_fields<T>(bytes, expected_arch);
    } catch (const std::logic_error& e) {
        throw CheckpointError(std::string("malformed checkpoint manifest (") + e.what() + ")");
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint describes an invalid architecture: ") + e.what());
    }
}

template <class T = double>
Checkpoint<T> load_checkpoint(const std::string& path, const std::string& expected_arch = "")
{
    try {
        return decode_checkpoint<T>(io::read_file(path), expected_arch);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path + ": " + e.what());
    }
}

}  // namespace vfd
