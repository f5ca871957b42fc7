#pragma once

// Minimal RFC 4180 style CSV: quoted fields where needed, no embedded newlines.

#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "feedshift/common.hpp"

namespace feedshift::csv {

inline std::string field(std::string_view s) {
    if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

inline std::vector<std::string> parse_line(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ValidationError("unterminated quoted CSV field");
    out.push_back(std::move(cur));
    return out;
}

class Writer {
public:
    Writer& row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_.push_back(',');
            out_ += field(cells[i]);
        }
        out_.push_back('\n');
        return *this;
    }

    const std::string& str() const { return out_; }
    void save(const std::string& path) const { write_file(path, out_); }

private:
    std::string out_;
};

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw ValidationError("CSV column missing: " + std::string(name));
    }
};

inline Table parse(std::string_view text, const std::string& source = "<csv>") {
    Table t;
    std::size_t start = 0;
    bool first = true;
    while (start < text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        start = nl + 1;
        if (line.empty()) continue;
        auto cells = parse_line(line);
        if (first) {
            t.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != t.header.size())
            throw ValidationError(source + ": row has " + std::to_string(cells.size()) + " fields, expected " +
                                  std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
    }
    if (first) throw ValidationError(source + ": empty CSV");
    return t;
}

inline Table read(const std::string& path) { return parse(read_file(path), path); }

}  // namespace feedshift::csv
