#pragma once

// Single-channel thermal video data model and its on-disk format.
//
// Binary layout (little-endian): magic "TOBV", version u16, N/H/W u32,
// frame_rate f64, then N*H*W float32 intensities, row-major within a frame,
// frame-major overall. Ground truth lives in a sibling plain-text metadata
// file with `key: value` lines.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tob/common.hpp"

namespace tob {

inline constexpr char kVideoMagic[4] = {'T', 'O', 'B', 'V'};
inline constexpr std::uint16_t kVideoFormatVersion = 1;
// guards against absurd headers before allocating
inline constexpr std::uint64_t kMaxVideoElements = 1ull << 33;

struct ThermalVideo {
  int n_frames = 0;
  int height = 0;
  int width = 0;
  double frame_rate = 0.0;
  std::string video_id;
  std::vector<float> data;  // n_frames * height * width

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }

  std::span<const float> frame(int n) const {
    return {data.data() + static_cast<std::size_t>(n) * frame_size(), frame_size()};
  }
  std::span<float> frame(int n) {
    return {data.data() + static_cast<std::size_t>(n) * frame_size(), frame_size()};
  }

  float at(int n, int y, int x) const {
    return data[(static_cast<std::size_t>(n) * height + y) * width + x];
  }
};

// Same container as ThermalVideo but intensities are in [0,1]; carries the
// skin-anchored mean it was rescaled around.
struct NormalizedVideo {
  int n_frames = 0;
  int height = 0;
  int width = 0;
  double frame_rate = 0.0;
  std::string video_id;
  std::vector<float> data;
  double mu_hat = 0.0;  // provenance: selected skin-mode mean in raw units
  double delta_lo = 0.0;
  double delta_hi = 0.0;

  std::size_t frame_size() const { return static_cast<std::size_t>(height) * width; }

  std::span<const float> frame(int n) const {
    return {data.data() + static_cast<std::size_t>(n) * frame_size(), frame_size()};
  }

  float at(int n, int y, int x) const {
    return data[(static_cast<std::size_t>(n) * height + y) * width + x];
  }
};

namespace detail {

inline void write_video_payload(const std::filesystem::path& path, int n_frames, int height,
                                int width, double frame_rate, const std::vector<float>& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::path, "cannot open for writing: " + path.string());
  os.write(kVideoMagic, 4);
  write_le<std::uint16_t>(os, kVideoFormatVersion);
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(n_frames));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(height));
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(width));
  write_le<double>(os, frame_rate);
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!os) throw Error(ErrorCode::path, "short write: " + path.string());
}

}  // namespace detail

inline void save_video(const ThermalVideo& v, const std::filesystem::path& path) {
  if (v.n_frames < 1 || v.height < 1 || v.width < 1)
    throw Error(ErrorCode::dimension_mismatch, "save_video: empty dimensions");
  if (v.data.size() != static_cast<std::size_t>(v.n_frames) * v.frame_size())
    throw Error(ErrorCode::dimension_mismatch, "save_video: data size does not match header dims");
  detail::write_video_payload(path, v.n_frames, v.height, v.width, v.frame_rate, v.data);
}

inline void save_video(const NormalizedVideo& v, const std::filesystem::path& path) {
  if (v.data.size() != static_cast<std::size_t>(v.n_frames) * v.frame_size())
    throw Error(ErrorCode::dimension_mismatch, "save_video: data size does not match header dims");
  detail::write_video_payload(path, v.n_frames, v.height, v.width, v.frame_rate, v.data);
}

inline ThermalVideo load_video(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::path, "cannot open video file: " + path.string());

  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kVideoMagic, 4) != 0)
    throw Error(ErrorCode::malformed_header, "bad magic in " + path.string());
  std::uint16_t version = 0;
  if (!read_le(is, version) || version != kVideoFormatVersion)
    throw Error(ErrorCode::malformed_header, "unsupported format version in " + path.string());

  std::uint32_t n = 0, h = 0, w = 0;
  double fr = 0.0;
  if (!read_le(is, n) || !read_le(is, h) || !read_le(is, w) || !read_le(is, fr))
    throw Error(ErrorCode::malformed_header, "header too short in " + path.string());
  const std::uint64_t total = static_cast<std::uint64_t>(n) * h * w;
  if (n == 0 || h == 0 || w == 0 || total > kMaxVideoElements)
    throw Error(ErrorCode::dimension_mismatch, "implausible dimensions in " + path.string());

  ThermalVideo v;
  v.n_frames = static_cast<int>(n);
  v.height = static_cast<int>(h);
  v.width = static_cast<int>(w);
  v.frame_rate = fr;
  v.video_id = path.stem().string();
  v.data.resize(total);
  is.read(reinterpret_cast<char*>(v.data.data()),
          static_cast<std::streamsize>(total * sizeof(float)));
  if (static_cast<std::uint64_t>(is.gcount()) != total * sizeof(float))
    throw Error(ErrorCode::truncated_payload, "payload shorter than header promises in " + path.string());
  is.peek();
  if (!is.eof())
    throw Error(ErrorCode::dimension_mismatch, "trailing bytes after payload in " + path.string());
  return v;
}

// Treats a stored video as normalized intensities (values must already be in [0,1]).
inline NormalizedVideo load_normalized_video(const std::filesystem::path& path) {
  ThermalVideo raw = load_video(path);
  NormalizedVideo v;
  v.n_frames = raw.n_frames;
  v.height = raw.height;
  v.width = raw.width;
  v.frame_rate = raw.frame_rate;
  v.video_id = std::move(raw.video_id);
  v.data = std::move(raw.data);
  return v;
}

// ---- ground-truth metadata sidecar ----

struct VideoMeta {
  double tob_s = 0.0;
  std::vector<std::uint8_t> vnb_mask;  // one flag per whole second
};

inline void save_meta(const VideoMeta& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::path, "cannot open for writing: " + path.string());
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", m.tob_s);
  os << "tob_s: " << buf << "\n";
  os << "vnb_mask: ";
  for (std::size_t i = 0; i < m.vnb_mask.size(); ++i) {
    if (i) os << ",";
    os << (m.vnb_mask[i] ? 1 : 0);
  }
  os << "\n";
}

inline VideoMeta load_meta(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::path, "cannot open metadata file: " + path.string());
  VideoMeta m;
  bool have_tob = false, have_mask = false;
  std::string line;
  while (std::getline(is, line)) {
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    const std::string key = line.substr(0, colon);
    std::string value = line.substr(colon + 1);
    if (key == "tob_s") {
      m.tob_s = std::strtod(value.c_str(), nullptr);
      have_tob = true;
    } else if (key == "vnb_mask") {
      std::stringstream ss(value);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        const auto pos = tok.find_first_of("01");
        if (pos == std::string::npos)
          throw Error(ErrorCode::malformed_header, "bad vnb_mask entry in " + path.string());
        m.vnb_mask.push_back(tok[pos] == '1' ? 1 : 0);
      }
      have_mask = true;
    }
  }
  if (!have_tob || !have_mask)
    throw Error(ErrorCode::malformed_header, "metadata missing tob_s or vnb_mask: " + path.string());
  return m;
}

}  // namespace tob
