#pragma once

#include "sgdlab/error.hpp"
#include "sgdlab/types.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace sgdlab::cli {

using json = nlohmann::ordered_json;

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view data) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : data) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    auto [end, ec] = std::to_chars(buf, buf + 16, v, 16);
    std::string s(buf, end);
    return std::string(16 - s.size(), '0') + s;
}

/// Shortest round-trip decimal form; identical on every run.
inline void append_number(std::string& out, double v)
{
    if (std::isnan(v)) {
        out += "nan";
        return;
    }
    if (std::isinf(v)) {
        out += v > 0 ? "inf" : "-inf";
        return;
    }
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, end);
}

inline void append_number(std::string& out, std::uint64_t v)
{
    char buf[24];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.append(buf, end);
}

/// Row-oriented CSV builder.
class CsvTable {
  public:
    explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns))
    {
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) text_ += ',';
            text_ += columns_[i];
        }
        text_ += '\n';
    }

    template <class... Ts>
    void row(const Ts&... values)
    {
        bool first = true;
        (cell(values, first), ...);
        text_ += '\n';
    }

    void row(const std::vector<double>& values)
    {
        bool first = true;
        for (double v : values) cell(v, first);
        text_ += '\n';
    }

    const std::vector<std::string>& columns() const noexcept { return columns_; }
    const std::string& text() const noexcept { return text_; }

  private:
    void cell(double v, bool& first)
    {
        sep(first);
        append_number(text_, v);
    }
    void cell(std::uint64_t v, bool& first)
    {
        sep(first);
        append_number(text_, v);
    }
    void cell(int v, bool& first) { cell(static_cast<double>(v), first); }
    void cell(const std::string& v, bool& first)
    {
        sep(first);
        text_ += v;
    }
    void cell(const Vector& v, bool& first)
    {
        for (Eigen::Index i = 0; i < v.size(); ++i) cell(v[i], first);
    }
    void sep(bool& first)
    {
        if (!first) text_ += ',';
        first = false;
    }

    std::vector<std::string> columns_;
    std::string text_;
};

/// Writes to `path.tmp` and renames over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::string& content)
{
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot open '" + tmp.string() + "' for writing");
        f << content;
        if (!f.flush()) throw Error("write to '" + tmp.string() + "' failed");
    }
    std::filesystem::rename(tmp, path);
}

inline json to_json(const Vector& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json to_json(const PointList& pts)
{
    json a = json::array();
    for (const auto& p : pts) a.push_back(to_json(p));
    return a;
}

} // namespace sgdlab::cli
