#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "feedshift/common.hpp"

using feedshift::read_file;
using feedshift::write_file;

namespace fstest {

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("feedshift-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path_.string(); }
    std::string operator/(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline std::string source_path(const std::string& rel) { return std::string(FEEDSHIFT_SOURCE_DIR) + "/" + rel; }

inline std::string mini_lexicon_path() { return source_path("data/test-lex-mini.lex"); }

}  // namespace fstest
