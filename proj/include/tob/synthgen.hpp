#pragma once

// Synthetic thermal birth episodes with known ground truth.
//
// Scene model: a cool background plane plus warm blobs (flat core, Gaussian
// skirt) composited by maximum intensity. A static mother torso and moving
// clinician blobs sit at adult skin temperature, equipment distractors run
// cooler, and the newborn blob appears at tob_s at skin_temp_mean (newborns
// image hotter than adults) growing from zero to full size over the
// emergence ramp. Transient occluders at adult temperature can cover the
// newborn after birth; those seconds are marked not-visible.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tob/common.hpp"
#include "tob/thermal_io.hpp"

namespace tob {

enum class SceneStyle { delivery_room, operating_theater };

inline const char* to_string(SceneStyle s) {
  return s == SceneStyle::delivery_room ? "delivery_room" : "operating_theater";
}

inline SceneStyle scene_style_from_string(const std::string& s) {
  if (s == "delivery_room") return SceneStyle::delivery_room;
  if (s == "operating_theater") return SceneStyle::operating_theater;
  throw Error(ErrorCode::config, "scene_style must be delivery_room or operating_theater, got '" + s + "'");
}

struct SceneConfig {
  double duration_s = 120.0;
  double frame_rate = 8.33;
  int height = 252;
  int width = 336;
  double tob_s = 60.0;
  double background_temp_mean = 300.0;
  double skin_temp_mean = 700.0;   // newborn skin; adults run adult_temp_offset cooler
  double noise_sigma = 5.0;
  SceneStyle scene_style = SceneStyle::delivery_room;
  double newborn_emergence_ramp_s = 3.0;
  double occlusion_rate = 0.01;  // probability per second of a transient occluder, post-birth

  // secondary scene knobs (sensible defaults; not part of the primary contract)
  double adult_temp_offset = 50.0;      // adults image this much below newborn skin
  double equipment_temp_mean = 560.0;   // warm non-skin distractors

  void validate() const {
    if (!(duration_s > 0)) throw Error(ErrorCode::config, "duration_s must be > 0");
    if (!(frame_rate > 0)) throw Error(ErrorCode::config, "frame_rate must be > 0");
    if (height < 8 || width < 8) throw Error(ErrorCode::config, "height/width must be >= 8");
    if (!(tob_s > 0) || !(tob_s < duration_s))
      throw Error(ErrorCode::config, "tob_s must satisfy 0 < tob_s < duration_s");
    if (!(skin_temp_mean > background_temp_mean))
      throw Error(ErrorCode::config, "skin_temp_mean must exceed background_temp_mean");
    if (!(noise_sigma > 0)) throw Error(ErrorCode::config, "noise_sigma must be > 0");
    if (newborn_emergence_ramp_s < 0)
      throw Error(ErrorCode::config, "newborn_emergence_ramp_s must be >= 0");
    if (occlusion_rate < 0 || occlusion_rate > 1)
      throw Error(ErrorCode::config, "occlusion_rate must be in [0,1]");
  }
};

struct GroundTruth {
  double tob_s = 0.0;
  std::vector<std::uint8_t> vnb_mask;  // per second; visible newborn
  // nominal newborn blob placement, for region-based checks on generated scenes
  double newborn_center_y = 0.0;
  double newborn_center_x = 0.0;
  double newborn_core_radius = 0.0;

  VideoMeta meta() const { return VideoMeta{tob_s, vnb_mask}; }
};

namespace detail {

// flat core of radius `core_r`, Gaussian skirt of scale `sigma`, max-composited
inline void render_blob(std::vector<double>& img, int h, int w, double cy, double cx,
                        double core_r, double sigma, double amp) {
  const double reach = core_r + 3.0 * sigma;
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + reach)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - reach)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + reach)));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dy = y - cy, dx = x - cx;
      const double r = std::sqrt(dy * dy + dx * dx);
      double v;
      if (r <= core_r) {
        v = amp;
      } else {
        const double d = r - core_r;
        v = amp * std::exp(-d * d * inv2s2);
      }
      double& px = img[static_cast<std::size_t>(y) * w + x];
      if (v > px) px = v;
    }
  }
}

struct MovingBlob {
  double cy, cx;        // lane anchor
  double amp_y, amp_x;  // drift amplitudes
  double period_s, phase;
  double core_r, sigma;
};

}  // namespace detail

inline std::pair<ThermalVideo, GroundTruth> generate_video(const SceneConfig& cfg,
                                                           std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);

  const int h = cfg.height, w = cfg.width;
  const double scale = static_cast<double>(std::min(h, w));
  const int n_frames = static_cast<int>(std::floor(cfg.duration_s * cfg.frame_rate));
  const int n_seconds = static_cast<int>(std::floor(cfg.duration_s));
  const double adult_temp = cfg.skin_temp_mean - cfg.adult_temp_offset;

  // layout
  const double mother_cy = 0.55 * h + rng.uniform(-2.0, 2.0);
  const double mother_cx = 0.30 * w + rng.uniform(-2.0, 2.0);
  const double mother_core = 0.14 * scale, mother_sigma = 0.06 * scale;

  const double nb_cy = 0.60 * h + rng.uniform(-2.0, 2.0);
  const double nb_cx = 0.72 * w + rng.uniform(-2.0, 2.0);
  const double nb_core = 0.08 * scale, nb_sigma = 0.045 * scale;

  const bool theater = cfg.scene_style == SceneStyle::operating_theater;
  const int n_clinicians = theater ? 4 : 2;
  const int n_equipment = theater ? 3 : 1;

  std::vector<detail::MovingBlob> clinicians;
  for (int i = 0; i < n_clinicians; ++i) {
    detail::MovingBlob b;
    b.cy = rng.uniform(0.08, 0.22) * h;  // lane strip away from the newborn region
    b.cx = rng.uniform(0.10, 0.90) * w;
    b.amp_y = rng.uniform(2.0, 5.0);
    b.amp_x = rng.uniform(2.0, 5.0);
    b.period_s = rng.uniform(15.0, 40.0);
    b.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    b.core_r = rng.uniform(0.05, 0.08) * scale;
    b.sigma = 0.5 * b.core_r;
    clinicians.push_back(b);
  }
  struct StaticBlob {
    double cy, cx, core_r, sigma;
  };
  std::vector<StaticBlob> equipment;
  for (int i = 0; i < n_equipment; ++i) {
    StaticBlob b;
    b.cy = rng.uniform(0.80, 0.95) * h;
    b.cx = rng.uniform(0.05, 0.40) * w;
    b.core_r = rng.uniform(0.04, 0.07) * scale;
    b.sigma = 0.5 * b.core_r;
    equipment.push_back(b);
  }

  // occlusion schedule: transient occluders over the newborn, post-emergence only
  std::vector<std::uint8_t> occluded(static_cast<std::size_t>(n_seconds), 0);
  {
    int s = static_cast<int>(std::ceil(cfg.tob_s + cfg.newborn_emergence_ramp_s)) + 2;
    while (s < n_seconds) {
      if (rng.uniform() < cfg.occlusion_rate) {
        const int len = 1 + static_cast<int>(rng.below(3));
        for (int k = 0; k < len && s + k < n_seconds; ++k) occluded[s + k] = 1;
        s += len + 2;
      } else {
        ++s;
      }
    }
  }

  GroundTruth truth;
  truth.tob_s = cfg.tob_s;
  truth.newborn_center_y = nb_cy;
  truth.newborn_center_x = nb_cx;
  truth.newborn_core_radius = nb_core;
  truth.vnb_mask.resize(static_cast<std::size_t>(n_seconds));
  for (int s = 0; s < n_seconds; ++s)
    truth.vnb_mask[s] = (s >= cfg.tob_s && !occluded[s]) ? 1 : 0;

  ThermalVideo video;
  video.n_frames = n_frames;
  video.height = h;
  video.width = w;
  video.frame_rate = cfg.frame_rate;
  video.data.resize(static_cast<std::size_t>(n_frames) * h * w);

  std::vector<double> img(static_cast<std::size_t>(h) * w);
  double jitter_y = 0.0, jitter_x = 0.0;  // small newborn random walk, re-drawn every 8 frames
  for (int n = 0; n < n_frames; ++n) {
    const double ts = n / cfg.frame_rate;
    std::fill(img.begin(), img.end(), cfg.background_temp_mean);

    detail::render_blob(img, h, w, mother_cy, mother_cx, mother_core, mother_sigma, adult_temp);
    for (const auto& b : clinicians) {
      const double ang = 2.0 * 3.14159265358979323846 * ts / b.period_s + b.phase;
      detail::render_blob(img, h, w, b.cy + b.amp_y * std::sin(ang),
                          b.cx + b.amp_x * std::cos(0.7 * ang), b.core_r, b.sigma, adult_temp);
    }
    for (const auto& b : equipment)
      detail::render_blob(img, h, w, b.cy, b.cx, b.core_r, b.sigma, cfg.equipment_temp_mean);

    if (ts >= cfg.tob_s) {
      const int sec = std::min(static_cast<int>(ts), n_seconds - 1);
      if (!occluded[sec]) {
        const double prog = cfg.newborn_emergence_ramp_s > 0
                                ? std::min(1.0, (ts - cfg.tob_s) / cfg.newborn_emergence_ramp_s)
                                : 1.0;
        detail::render_blob(img, h, w, nb_cy + jitter_y, nb_cx + jitter_x,
                            std::max(0.7, nb_core * prog), std::max(0.5, nb_sigma * prog),
                            cfg.skin_temp_mean);
      } else {
        detail::render_blob(img, h, w, nb_cy, nb_cx, 1.6 * nb_core, nb_sigma, adult_temp);
      }
    }

    float* out = video.data.data() + static_cast<std::size_t>(n) * h * w;
    for (std::size_t i = 0; i < img.size(); ++i)
      out[i] = static_cast<float>(img[i] + cfg.noise_sigma * rng.normal());

    if (n % 8 == 0) {
      jitter_y = std::clamp(jitter_y + 0.6 * rng.normal(), -1.2, 1.2);
      jitter_x = std::clamp(jitter_x + 0.6 * rng.normal(), -1.2, 1.2);
    }
  }
  return {std::move(video), std::move(truth)};
}

struct Episode {
  ThermalVideo video;
  GroundTruth truth;
  SceneConfig config;
};

// `style_mix` is the fraction of operating-theater episodes. The birth time
// is drawn uniformly within the middle 60% of each episode.
inline std::vector<Episode> generate_corpus(int n_videos, double style_mix,
                                            const SceneConfig& base_config, std::uint64_t seed) {
  if (n_videos < 1) throw Error(ErrorCode::config, "n_videos must be >= 1");
  if (style_mix < 0.0 || style_mix > 1.0)
    throw Error(ErrorCode::config, "style_mix must be in [0,1]");
  const int n_theater = static_cast<int>(std::llround(style_mix * n_videos));

  std::vector<Episode> episodes;
  episodes.reserve(static_cast<std::size_t>(n_videos));
  for (int i = 0; i < n_videos; ++i) {
    const std::uint64_t vid_seed = substream(seed, "episode", static_cast<std::uint64_t>(i));
    Rng draw(vid_seed);
    SceneConfig cfg = base_config;
    cfg.scene_style =
        i < n_videos - n_theater ? SceneStyle::delivery_room : SceneStyle::operating_theater;
    cfg.tob_s = cfg.duration_s * draw.uniform(0.2, 0.8);
    auto [video, truth] = generate_video(cfg, substream(vid_seed, "frames"));
    char id[16];
    std::snprintf(id, sizeof(id), "v%03d", i);
    video.video_id = id;
    episodes.push_back({std::move(video), std::move(truth), cfg});
  }
  return episodes;
}

}  // namespace tob
