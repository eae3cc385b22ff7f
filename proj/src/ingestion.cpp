#include "cola/ingestion.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <memory>
#include <thread>

#include <zlib.h>

#include "cola/error.hpp"

namespace cola {

static_assert(std::endian::native == std::endian::little,
              "binary formats are read by direct copy on little-endian hosts");

namespace fs = std::filesystem;

void PointCloud::validate() const {
  if (xyz.size() % 3 != 0) {
    throw ValidationError("point cloud xyz length " + std::to_string(xyz.size()) +
                          " is not a multiple of 3");
  }
  const std::size_t n = size();
  if (reflectivity && reflectivity->size() != n) {
    throw ValidationError("reflectivity channel has " + std::to_string(reflectivity->size()) +
                          " values for " + std::to_string(n) + " points");
  }
  if (ring && ring->size() != n) {
    throw ValidationError("ring channel has " + std::to_string(ring->size()) + " values for " +
                          std::to_string(n) + " points");
  }
}

// ---------------------------------------------------------------------------
// File helpers

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

template <typename T>
T load(const std::byte* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

template <typename T>
void store(std::byte*& p, const T& v) {
  std::memcpy(p, &v, sizeof(T));
  p += sizeof(T);
}

}  // namespace

std::vector<std::byte> read_file(const fs::path& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw IoError("cannot open " + path.string());
  if (std::fseek(f.get(), 0, SEEK_END) != 0) throw IoError("cannot seek " + path.string());
  const long size = std::ftell(f.get());
  if (size < 0) throw IoError("cannot stat " + path.string());
  std::rewind(f.get());
  std::vector<std::byte> bytes(static_cast<std::size_t>(size));
  if (!bytes.empty() && std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw IoError("short read on " + path.string());
  }
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(tid % 1000003);
  {
    FilePtr f(std::fopen(tmp.c_str(), "wb"));
    if (!f) throw IoError("cannot create " + tmp.string());
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
      throw IoError("short write on " + tmp.string());
    }
    if (std::fflush(f.get()) != 0) throw IoError("cannot flush " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string());
  }
}

std::uint32_t crc32(std::span<const std::byte> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

// ---------------------------------------------------------------------------
// Native scans

namespace {

// Deinterleaves `stride`-float records; drops points with non-finite xyz.
PointCloud parse_float_records(std::span<const std::byte> bytes, std::size_t floats_per_point,
                               bool with_ring, const char* what) {
  const std::size_t record = floats_per_point * sizeof(float);
  if (bytes.size() % record != 0) {
    throw FormatError(std::string(what) + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(record) + " bytes");
  }
  const std::size_t n = bytes.size() / record;
  PointCloud cloud;
  cloud.xyz.resize(3 * n);
  cloud.reflectivity.emplace(n);
  if (with_ring) cloud.ring.emplace(n);

  float* xyz = cloud.xyz.data();
  float* refl = cloud.reflectivity->data();
  std::uint16_t* ring = with_ring ? cloud.ring->data() : nullptr;
  std::size_t kept = 0;
  const std::byte* p = bytes.data();
  for (std::size_t i = 0; i < n; ++i, p += record) {
    float v[5];
    std::memcpy(v, p, record);
    if (!std::isfinite(v[0]) || !std::isfinite(v[1]) || !std::isfinite(v[2])) {
      cloud.dropped.push_back(static_cast<std::uint32_t>(i));
      continue;
    }
    xyz[3 * kept] = v[0];
    xyz[3 * kept + 1] = v[1];
    xyz[3 * kept + 2] = v[2];
    refl[kept] = v[3];
    if (ring) {
      const float r = std::nearbyint(v[4]);
      ring[kept] = std::isfinite(r) && r >= 0.0f && r <= 65535.0f ? static_cast<std::uint16_t>(r) : 0;
    }
    ++kept;
  }
  if (kept != n) {
    cloud.xyz.resize(3 * kept);
    cloud.reflectivity->resize(kept);
    if (ring) cloud.ring->resize(kept);
  }
  return cloud;
}

// Copies per-point labels, skipping the records of dropped points.
template <typename Record, typename Extract>
LabelArray parse_label_records(std::span<const std::byte> bytes, const PointCloud& paired,
                               std::string labelset, const char* what, Extract extract) {
  if (bytes.size() % sizeof(Record) != 0) {
    throw FormatError(std::string(what) + ": size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(sizeof(Record)) + " bytes");
  }
  const std::size_t records = bytes.size() / sizeof(Record);
  const std::size_t expected = paired.size() + paired.dropped.size();
  if (records != expected) {
    throw ValidationError(std::string(what) + ": " + std::to_string(records) +
                          " label records for a scan of " + std::to_string(expected) + " points");
  }
  LabelArray out{std::vector<LabelId>(paired.size()), std::move(labelset)};
  auto drop = paired.dropped.begin();
  std::size_t k = 0;
  for (std::size_t i = 0; i < records; ++i) {
    if (drop != paired.dropped.end() && *drop == i) {
      ++drop;
      continue;
    }
    out.values[k++] = extract(load<Record>(bytes.data() + i * sizeof(Record)));
  }
  return out;
}

}  // namespace

PointCloud parse_kitti_bin(std::span<const std::byte> bytes) {
  return parse_float_records(bytes, 4, false, "kitti scan");
}

PointCloud read_kitti_bin(const fs::path& path) {
  try {
    return parse_kitti_bin(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PointCloud parse_nuscenes_bin(std::span<const std::byte> bytes) {
  return parse_float_records(bytes, 5, true, "nuscenes scan");
}

PointCloud read_nuscenes_bin(const fs::path& path) {
  try {
    return parse_nuscenes_bin(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

LabelArray parse_kitti_label(std::span<const std::byte> bytes, const PointCloud& paired,
                             std::string labelset) {
  return parse_label_records<std::uint32_t>(
      bytes, paired, std::move(labelset), "kitti label",
      [](std::uint32_t r) { return static_cast<LabelId>(r & 0xFFFFu); });
}

LabelArray read_kitti_label(const fs::path& path, const PointCloud& paired, std::string labelset) {
  try {
    return parse_kitti_label(read_file(path), paired, std::move(labelset));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

LabelArray parse_nuscenes_label(std::span<const std::byte> bytes, const PointCloud& paired,
                                std::string labelset) {
  return parse_label_records<std::uint8_t>(bytes, paired, std::move(labelset), "nuscenes label",
                                           [](std::uint8_t r) { return static_cast<LabelId>(r); });
}

LabelArray read_nuscenes_label(const fs::path& path, const PointCloud& paired,
                               std::string labelset) {
  try {
    return parse_nuscenes_label(read_file(path), paired, std::move(labelset));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

LabelArray read_u16_labels(const fs::path& path, std::string labelset) {
  const auto bytes = read_file(path);
  if (bytes.size() % 2 != 0) {
    throw FormatError(path.string() + ": odd size for a uint16 label file");
  }
  LabelArray out{std::vector<LabelId>(bytes.size() / 2), std::move(labelset)};
  if (!bytes.empty()) std::memcpy(out.values.data(), bytes.data(), bytes.size());
  return out;
}

void write_u16_labels(const LabelArray& labels, const fs::path& path) {
  write_file_atomic(path, std::as_bytes(std::span(labels.values)));
}

// ---------------------------------------------------------------------------
// Interchange container

std::vector<std::byte> encode_cola_frame(const PointCloud& cloud, const LabelArray* labels) {
  cloud.validate();
  const std::uint64_t n = cloud.size();
  if (labels && labels->size() != n) {
    throw ValidationError("cola frame: " + std::to_string(labels->size()) + " labels for " +
                          std::to_string(n) + " points");
  }
  std::uint16_t flags = 0;
  std::size_t payload = n * 3 * sizeof(float);
  if (cloud.reflectivity) {
    flags |= cola_frame::kHasReflectivity;
    payload += n * sizeof(float);
  }
  if (cloud.ring) {
    flags |= cola_frame::kHasRing;
    payload += n * sizeof(std::uint16_t);
  }
  if (labels) {
    flags |= cola_frame::kHasLabels;
    payload += n * sizeof(LabelId);
  }

  std::vector<std::byte> out(cola_frame::kHeaderSize + payload + cola_frame::kTrailerSize);
  std::byte* p = out.data();
  std::memcpy(p, cola_frame::kMagic, 4);
  p += 4;
  store(p, cola_frame::kVersion);
  store(p, flags);
  store(p, n);
  auto put = [&p](const auto& vec) {
    const std::size_t bytes = vec.size() * sizeof(vec[0]);
    if (bytes) std::memcpy(p, vec.data(), bytes);
    p += bytes;
  };
  put(cloud.xyz);
  if (cloud.reflectivity) put(*cloud.reflectivity);
  if (cloud.ring) put(*cloud.ring);
  if (labels) put(labels->values);
  const std::uint32_t crc =
      crc32(std::span(out.data() + cola_frame::kHeaderSize, payload));
  store(p, crc);
  return out;
}

ColaFrame decode_cola_frame(std::span<const std::byte> bytes) {
  using namespace cola_frame;
  if (bytes.size() < kHeaderSize + kTrailerSize) {
    throw FormatError("cola frame: truncated header (" + std::to_string(bytes.size()) + " bytes)");
  }
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("cola frame: bad magic");
  const auto version = load<std::uint16_t>(bytes.data() + 4);
  if (version != kVersion) {
    throw FormatError("cola frame: unsupported version " + std::to_string(version));
  }
  const auto flags = load<std::uint16_t>(bytes.data() + 6);
  if (flags & ~(kHasReflectivity | kHasRing | kHasLabels)) {
    throw FormatError("cola frame: unknown flag bits " + std::to_string(flags));
  }
  const auto n = load<std::uint64_t>(bytes.data() + 8);

  // Per-point byte count is at most 20, so guard the multiplication first.
  const std::size_t available = bytes.size() - kHeaderSize - kTrailerSize;
  std::uint64_t per_point = 12;
  if (flags & kHasReflectivity) per_point += 4;
  if (flags & kHasRing) per_point += 2;
  if (flags & kHasLabels) per_point += 2;
  if (n > available / per_point || n * per_point != available) {
    throw FormatError("cola frame: payload of " + std::to_string(available) + " bytes does not hold " +
                      std::to_string(n) + " points with flags " + std::to_string(flags));
  }

  const std::span<const std::byte> payload = bytes.subspan(kHeaderSize, available);
  const auto stored = load<std::uint32_t>(bytes.data() + kHeaderSize + available);
  if (crc32(payload) != stored) throw FormatError("cola frame: checksum mismatch");

  ColaFrame frame;
  const std::byte* p = payload.data();
  auto take = [&p](auto& vec, std::size_t count) {
    vec.resize(count);
    const std::size_t bytes = count * sizeof(vec[0]);
    if (bytes) std::memcpy(vec.data(), p, bytes);
    p += bytes;
  };
  take(frame.cloud.xyz, 3 * n);
  if (flags & kHasReflectivity) take(frame.cloud.reflectivity.emplace(), n);
  if (flags & kHasRing) take(frame.cloud.ring.emplace(), n);
  if (flags & kHasLabels) take(frame.labels.emplace().values, n);
  return frame;
}

void write_cola_frame(const PointCloud& cloud, const LabelArray* labels, const fs::path& path) {
  const auto bytes = encode_cola_frame(cloud, labels);
  write_file_atomic(path, bytes);
}

ColaFrame read_cola_frame(const fs::path& path) {
  try {
    return decode_cola_frame(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace cola
