#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cola/ingestion.hpp"

namespace test {

namespace fs = std::filesystem;

inline fs::path data_dir() { return COLA_TEST_DATA_DIR; }

// Fresh directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("cola-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream(path) << text;
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

inline std::span<const std::byte> as_span(const std::vector<std::uint8_t>& v) {
  return std::as_bytes(std::span(v.data(), v.size()));
}

struct KittiPoint {
  float x, y, z, r;
  std::uint32_t label;
};

// Writes a SemanticKITTI-style dataset (scan + label per frame) under
// dir/name and its manifest at dir/name.json; returns the manifest path.
inline fs::path write_kitti_dataset(const fs::path& dir, const std::string& name,
                                    const std::vector<std::vector<KittiPoint>>& frames,
                                    const std::string& labelset = "semantickitti") {
  nlohmann::ordered_json doc;
  doc["name"] = name;
  doc["format"] = "kitti_bin";
  doc["root"] = name;
  doc["labelset"] = labelset;
  doc["sensor"] = {{"model", "Velodyne HDL-64E"}, {"fiber_count", 64}, {"vertical_fov_deg", {-24.8, 2.0}}};
  auto list = nlohmann::ordered_json::array();
  for (std::size_t f = 0; f < frames.size(); ++f) {
    char id[16];
    std::snprintf(id, sizeof id, "%06zu", f);
    std::vector<std::uint8_t> scan, label;
    for (const auto& p : frames[f]) {
      put(scan, p.x);
      put(scan, p.y);
      put(scan, p.z);
      put(scan, p.r);
      put(label, p.label);
    }
    const std::string scan_rel = std::string("sequences/00/velodyne/") + id + ".bin";
    const std::string label_rel = std::string("sequences/00/labels/") + id + ".label";
    write_bytes(dir / name / scan_rel, scan);
    write_bytes(dir / name / label_rel, label);
    list.push_back({{"sequence", "00"}, {"frame", id}, {"scan", scan_rel}, {"label", label_rel}});
  }
  doc["frames"] = list;
  const fs::path path = dir / (name + ".json");
  write_text(path, doc.dump(2));
  return path;
}

inline cola::PointCloud random_cloud(std::mt19937_64& rng, std::size_t n, bool reflectivity, bool ring) {
  std::uniform_real_distribution<float> coord(-80.0f, 80.0f);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::uniform_int_distribution<int> ring_dist(0, 63);
  cola::PointCloud c;
  c.xyz.resize(3 * n);
  for (auto& v : c.xyz) v = coord(rng);
  if (reflectivity) {
    c.reflectivity.emplace(n);
    for (auto& v : *c.reflectivity) v = unit(rng);
  }
  if (ring) {
    c.ring.emplace(n);
    for (auto& v : *c.ring) v = static_cast<std::uint16_t>(ring_dist(rng));
  }
  return c;
}

}  // namespace test
