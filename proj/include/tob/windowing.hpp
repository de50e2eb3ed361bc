#pragma once

// Clip construction and per-second clip sampling. A clip at frame index n
// holds the F preceding frames (stored oldest-first); the sampled series
// walks timestamps t0, t0+tau, ..., T with end frame floor(f_r * t).

#include <cmath>
#include <vector>

#include "tob/common.hpp"
#include "tob/thermal_io.hpp"

namespace tob {

struct Clip {
  int end_frame_index = 0;
  double timestamp_s = 0.0;
  int f = 0;  // frames in the clip
  int height = 0;
  int width = 0;
  std::vector<float> frames;  // oldest-first, frame-major

  std::span<const float> frame(int i) const {
    const std::size_t fs = static_cast<std::size_t>(height) * width;
    return {frames.data() + static_cast<std::size_t>(i) * fs, fs};
  }
};

inline Clip clip_at(const NormalizedVideo& video, int n, int f) {
  if (f < 1) throw Error(ErrorCode::invalid_argument, "clip_at: F must be >= 1");
  if (n >= video.n_frames) throw Error(ErrorCode::boundary, "clip_at: end frame beyond video");
  if (n < f - 1)
    throw Error(ErrorCode::boundary, "clip_at: fewer than F frames precede index n");
  Clip c;
  c.end_frame_index = n;
  c.timestamp_s = std::floor(n / video.frame_rate);
  c.f = f;
  c.height = video.height;
  c.width = video.width;
  const std::size_t fs = video.frame_size();
  c.frames.assign(video.data.begin() + static_cast<std::size_t>(n - f + 1) * fs,
                  video.data.begin() + (static_cast<std::size_t>(n) + 1) * fs);
  return c;
}

// The timestamp axis: t0 = floor(F/f_r) through T = floor(N/f_r) in steps of
// tau, keeping only timestamps whose end frame floor(f_r*t) is a valid clip
// end (>= F-1 and <= N-1).
inline std::vector<double> clip_timestamps(int n_frames, double frame_rate, int f, double tau) {
  if (f < 1) throw Error(ErrorCode::invalid_argument, "clip_timestamps: F must be >= 1");
  if (!(tau > 0)) throw Error(ErrorCode::invalid_argument, "clip_timestamps: tau must be > 0");
  if (n_frames < f) throw Error(ErrorCode::video_too_short, "video has fewer than F frames");
  const double t0 = std::floor(f / frame_rate);
  const double t_end = std::floor(n_frames / frame_rate);
  std::vector<double> ts;
  for (int k = 0;; ++k) {
    const double t = t0 + k * tau;
    if (t > t_end) break;
    const int end = static_cast<int>(std::floor(frame_rate * t));
    if (end > n_frames - 1) break;  // floor edge case at the tail
    if (end < f - 1) continue;      // excluded to avoid boundary problems
    ts.push_back(t);
  }
  return ts;
}

inline int end_frame_for(double t, double frame_rate) {
  return static_cast<int>(std::floor(frame_rate * t));
}

struct ClipSeries {
  double t0 = 0.0;
  double t_end = 0.0;  // T
  double stride_s = 0.0;
  std::vector<double> timestamps;
  std::vector<Clip> clips;
};

inline ClipSeries sample_clips(const NormalizedVideo& video, int f, double tau) {
  ClipSeries series;
  series.timestamps = clip_timestamps(video.n_frames, video.frame_rate, f, tau);
  series.stride_s = tau;
  series.t0 = std::floor(f / video.frame_rate);
  series.t_end = std::floor(video.n_frames / video.frame_rate);
  series.clips.reserve(series.timestamps.size());
  for (double t : series.timestamps)
    series.clips.push_back(clip_at(video, end_frame_for(t, video.frame_rate), f));
  return series;
}

}  // namespace tob
