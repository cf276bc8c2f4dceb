#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "cellbloom/image.hpp"
#include "cellbloom/manifest.hpp"

namespace cellbloom::test_support {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("cellbloom-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline ImageRecord cell_record(const std::string& id, CellClass cls, Split split = Split::unassigned,
                               fs::path path = {}) {
    ImageRecord r;
    r.id = id;
    r.path = path.empty() ? fs::path("/nonexistent/" + id + ".png") : std::move(path);
    r.domain = Domain::cell;
    r.label = cls;
    r.split = split;
    return r;
}

// `per_class[k]` labeled cell records for class k, ids "<class>-<n>".
inline DatasetManifest cell_manifest(const std::array<std::size_t, kNumClasses>& per_class, std::uint64_t seed = 0) {
    DatasetManifest m(Domain::cell, seed);
    for (std::size_t k = 0; k < kNumClasses; ++k) {
        const CellClass cls = cell_class_at(static_cast<int>(k));
        for (std::size_t i = 0; i < per_class[k]; ++i) {
            m.add(cell_record(std::string(to_string(cls)) + "-" + std::to_string(i), cls));
        }
    }
    return m;
}

inline ImageU8 solid_u8(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    ImageU8 img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    return img;
}

}  // namespace cellbloom::test_support
