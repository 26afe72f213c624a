#pragma once

// Manifest + payload container shared by checkpoints and datasets:
//
//   <magic> <version>\n
//   key value...\n          (one entry per line, value is the rest of the line)
//   end\n
//   <little-endian payload bytes>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vfd/errors.hpp"
#include "vfd/tensor.hpp"

namespace vfd::io {

template <class T>
void put_le(std::string& out, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    out.append(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(const char* p)
{
    unsigned char b[sizeof(T)];
    std::memcpy(b, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big)
        std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

/// Shortest decimal that reads back to the same double.
inline std::string format_double(double v)
{
    std::ostringstream os;
    os << std::setprecision(17) << v;
    std::string s = os.str();
    for (int prec = 1; prec < 17; ++prec) {
        std::ostringstream t;
        t << std::setprecision(prec) << v;
        if (std::stod(t.str()) == v) {
            s = t.str();
            break;
        }
    }
    return s;
}

inline std::string join_shape(const Shape& s)
{
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i)
        out += (i ? "," : "") + std::to_string(s[i]);
    return out;
}

inline Shape parse_shape(const std::string& text)
{
    Shape s;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            s.push_back(static_cast<std::size_t>(std::stoull(item)));
    return s;
}

struct Manifest {
    std::string magic;
    int version = 0;
    std::vector<std::pair<std::string, std::string>> entries;

    void set(std::string key, std::string value) { entries.emplace_back(std::move(key), std::move(value)); }

    const std::string* find(const std::string& key) const
    {
        for (const auto& [k, v] : entries)
            if (k == key)
                return &v;
        return nullptr;
    }

    template <class Err = CheckpointError>
    const std::string& get(const std::string& key) const
    {
        if (auto* v = find(key))
            return *v;
        throw Err("manifest is missing '" + key + "'");
    }

    std::string render() const
    {
        std::string out = magic + " " + std::to_string(version) + "\n";
        for (const auto& [k, v] : entries)
            out += k + " " + v + "\n";
        out += "end\n";
        return out;
    }
};

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open '" + path + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("short write to '" + path + "'");
}

/// Splits `bytes` into a manifest and the payload that follows "end\n".
template <class Err>
std::pair<Manifest, std::string_view> parse_container(const std::string& bytes, const std::string& expected_magic)
{
    Manifest m;
    std::size_t pos = 0;
    auto next_line = [&](std::string& line) {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos)
            throw Err("manifest truncated at byte " + std::to_string(pos));
        line.assign(bytes, pos, nl - pos);
        pos = nl + 1;
    };
    std::string line;
    next_line(line);
    {
        std::istringstream head(line);
        head >> m.magic >> m.version;
        if (m.magic != expected_magic)
            throw Err("bad magic '" + m.magic + "', expected '" + expected_magic + "'");
    }
    while (true) {
        next_line(line);
        if (line == "end")
            break;
        const auto sp = line.find(' ');
        if (sp == std::string::npos)
            m.set(line, "");
        else
            m.set(line.substr(0, sp), line.substr(sp + 1));
    }
    return {std::move(m), std::string_view(bytes).substr(pos)};
}

}  // namespace vfd::io
