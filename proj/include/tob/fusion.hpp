#pragma once

// Two-stream scoring: per-frame static features and per-clip temporal
// features stand in for the deep image/video backbones behind a pluggable
// extractor seam. Each stream passes a refinement layer, the refined vectors
// are concatenated and classified into p_fusion; independently, per-frame
// features pass a frozen image head whose per-frame probabilities average
// into p_vnb.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "tob/common.hpp"
#include "tob/nn.hpp"
#include "tob/thermal_io.hpp"
#include "tob/windowing.hpp"

namespace tob {

inline constexpr int kStaticFeatureDim = 16;
inline constexpr int kTemporalFeatureDim = 9;
inline constexpr double kHotThreshold = 0.8;  // on normalized intensities

enum class ExtractorKind : std::uint8_t { handcrafted_v1 = 0, external = 1 };

struct FeatureExtractorSpec {
  int static_dim = kStaticFeatureDim;
  int temporal_dim = kTemporalFeatureDim;
  ExtractorKind kind = ExtractorKind::handcrafted_v1;
};

// ---- static (per-frame) features ----
//
// layout: [0] mean, [1] variance, [2..9] 8-bin histogram, [10] hot fraction,
// [11] hot centroid row, [12] hot centroid col, [13] hot bbox area fraction,
// [14] hot second moment rows, [15] hot second moment cols.
// With no hot pixels the centroid sits at the frame center and the moment /
// bbox features are zero.

inline nn::Vec extract_static_features(std::span<const float> frame, int height, int width) {
  if (frame.size() != static_cast<std::size_t>(height) * width)
    throw Error(ErrorCode::shape_mismatch, "extract_static_features: frame size mismatch");
  nn::Vec f(kStaticFeatureDim, 0.0);
  const double inv_n = 1.0 / static_cast<double>(frame.size());

  double sum = 0.0;
  for (float v : frame) sum += v;
  const double mean = sum * inv_n;

  double var = 0.0;
  std::array<double, 8> hist{};
  std::int64_t hot_count = 0;
  double cy = 0.0, cx = 0.0;
  int ymin = height, ymax = -1, xmin = width, xmax = -1;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = frame[static_cast<std::size_t>(y) * width + x];
      var += (v - mean) * (v - mean);
      int bin = static_cast<int>(v * 8.0);
      bin = std::clamp(bin, 0, 7);
      hist[static_cast<std::size_t>(bin)] += 1.0;
      if (v > kHotThreshold) {
        ++hot_count;
        cy += y;
        cx += x;
        ymin = std::min(ymin, y); ymax = std::max(ymax, y);
        xmin = std::min(xmin, x); xmax = std::max(xmax, x);
      }
    }
  }
  f[0] = mean;
  f[1] = var * inv_n;
  for (int b = 0; b < 8; ++b) f[2 + b] = hist[static_cast<std::size_t>(b)] * inv_n;
  f[10] = static_cast<double>(hot_count) * inv_n;
  if (hot_count > 0) {
    cy /= static_cast<double>(hot_count);
    cx /= static_cast<double>(hot_count);
    f[11] = cy;
    f[12] = cx;
    f[13] = static_cast<double>(ymax - ymin + 1) * (xmax - xmin + 1) * inv_n;
    double my = 0.0, mx = 0.0;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double v = frame[static_cast<std::size_t>(y) * width + x];
        if (v > kHotThreshold) {
          my += (y - cy) * (y - cy);
          mx += (x - cx) * (x - cx);
        }
      }
    }
    f[14] = my / static_cast<double>(hot_count);
    f[15] = mx / static_cast<double>(hot_count);
  } else {
    f[11] = (height - 1) / 2.0;
    f[12] = (width - 1) / 2.0;
  }
  return f;
}

// ---- per-video feature cache ----
//
// Clip features reduce over cached per-frame and per-consecutive-pair
// quantities so scoring a whole video stays linear in pixels. The reductions
// match extract_temporal_features term for term.

struct VideoFeatureCache {
  int n_frames = 0;
  int height = 0;
  int width = 0;
  std::vector<nn::Vec> frame_static;           // per frame, kStaticFeatureDim
  std::vector<std::array<double, 4>> quadrant; // per frame: TL, TR, BL, BR means
  std::vector<double> pair_mad;                // per pair n,n+1: mean |diff|
  std::vector<double> pair_msd;                // per pair: mean squared diff
};

namespace detail {

inline std::array<double, 4> quadrant_means(std::span<const float> frame, int height, int width) {
  const int h2 = height / 2, w2 = width / 2;
  std::array<double, 4> sums{};
  for (int y = 0; y < height; ++y) {
    const float* row = frame.data() + static_cast<std::size_t>(y) * width;
    const int qy = y < h2 ? 0 : 1;
    for (int x = 0; x < width; ++x) sums[static_cast<std::size_t>(qy * 2 + (x < w2 ? 0 : 1))] += row[x];
  }
  const std::array<double, 4> counts = {
      static_cast<double>(h2) * w2, static_cast<double>(h2) * (width - w2),
      static_cast<double>(height - h2) * w2, static_cast<double>(height - h2) * (width - w2)};
  std::array<double, 4> out{};
  for (int q = 0; q < 4; ++q)
    out[static_cast<std::size_t>(q)] =
        counts[static_cast<std::size_t>(q)] > 0
            ? sums[static_cast<std::size_t>(q)] / counts[static_cast<std::size_t>(q)]
            : 0.0;
  return out;
}

inline void pair_diffs(std::span<const float> a, std::span<const float> b, double& mad,
                       double& msd) {
  double sa = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(b[i]) - static_cast<double>(a[i]);
    sa += std::abs(d);
    ss += d * d;
  }
  const double inv = 1.0 / static_cast<double>(a.size());
  mad = sa * inv;
  msd = ss * inv;
}

// population variance of a window of values
inline double window_variance(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

inline double window_slope(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double ibar = (n - 1.0) / 2.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= n;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double di = static_cast<double>(i) - ibar;
    num += di * (v[i] - m);
    den += di * di;
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace detail

inline VideoFeatureCache build_feature_cache(const NormalizedVideo& video) {
  VideoFeatureCache cache;
  cache.n_frames = video.n_frames;
  cache.height = video.height;
  cache.width = video.width;
  cache.frame_static.reserve(static_cast<std::size_t>(video.n_frames));
  cache.quadrant.reserve(static_cast<std::size_t>(video.n_frames));
  for (int n = 0; n < video.n_frames; ++n) {
    cache.frame_static.push_back(extract_static_features(video.frame(n), video.height, video.width));
    cache.quadrant.push_back(detail::quadrant_means(video.frame(n), video.height, video.width));
  }
  if (video.n_frames > 1) {
    cache.pair_mad.resize(static_cast<std::size_t>(video.n_frames) - 1);
    cache.pair_msd.resize(static_cast<std::size_t>(video.n_frames) - 1);
    for (int n = 0; n + 1 < video.n_frames; ++n)
      detail::pair_diffs(video.frame(n), video.frame(n + 1), cache.pair_mad[n], cache.pair_msd[n]);
  }
  return cache;
}

// temporal features for the clip ending at frame `end` from cached
// per-frame/per-pair quantities
inline nn::Vec temporal_features_from_cache(const VideoFeatureCache& cache, int end, int f) {
  if (f < 2) throw Error(ErrorCode::clip_too_short, "temporal features need at least 2 frames");
  if (end < f - 1 || end >= cache.n_frames)
    throw Error(ErrorCode::boundary, "temporal_features_from_cache: clip out of range");
  const int first = end - f + 1;
  nn::Vec out(kTemporalFeatureDim, 0.0);
  double mad_sum = 0.0, msd_max = 0.0;
  for (int p = first; p < end; ++p) {
    mad_sum += cache.pair_mad[p];
    msd_max = std::max(msd_max, cache.pair_msd[p]);
  }
  out[0] = mad_sum / static_cast<double>(f - 1);
  out[1] = msd_max;
  const nn::Vec& sf_first = cache.frame_static[first];
  const nn::Vec& sf_last = cache.frame_static[end];
  out[2] = sf_last[10] - sf_first[10];
  out[3] = std::hypot(sf_last[11] - sf_first[11], sf_last[12] - sf_first[12]);
  nn::Vec series(static_cast<std::size_t>(f));
  for (int q = 0; q < 4; ++q) {
    for (int i = 0; i < f; ++i)
      series[static_cast<std::size_t>(i)] = cache.quadrant[first + i][static_cast<std::size_t>(q)];
    out[4 + q] = detail::window_variance(series);
  }
  for (int i = 0; i < f; ++i) series[static_cast<std::size_t>(i)] = cache.frame_static[first + i][0];
  out[8] = detail::window_slope(series);
  return out;
}

inline nn::Vec static_average_from_cache(const VideoFeatureCache& cache, int end, int f) {
  nn::Vec avg(kStaticFeatureDim, 0.0);
  for (int i = end - f + 1; i <= end; ++i)
    for (int d = 0; d < kStaticFeatureDim; ++d) avg[static_cast<std::size_t>(d)] += cache.frame_static[i][static_cast<std::size_t>(d)];
  for (double& v : avg) v /= static_cast<double>(f);
  return avg;
}

// reference single-clip path; identical arithmetic to the cached path
inline nn::Vec extract_temporal_features(const Clip& clip) {
  if (clip.f < 2) throw Error(ErrorCode::clip_too_short, "extract_temporal_features: F must be >= 2");
  VideoFeatureCache cache;
  cache.n_frames = clip.f;
  cache.height = clip.height;
  cache.width = clip.width;
  for (int i = 0; i < clip.f; ++i) {
    cache.frame_static.push_back(extract_static_features(clip.frame(i), clip.height, clip.width));
    cache.quadrant.push_back(detail::quadrant_means(clip.frame(i), clip.height, clip.width));
  }
  cache.pair_mad.resize(static_cast<std::size_t>(clip.f) - 1);
  cache.pair_msd.resize(static_cast<std::size_t>(clip.f) - 1);
  for (int i = 0; i + 1 < clip.f; ++i)
    detail::pair_diffs(clip.frame(i), clip.frame(i + 1), cache.pair_mad[i], cache.pair_msd[i]);
  return temporal_features_from_cache(cache, clip.f - 1, clip.f);
}

// ---- feature standardization ----
//
// The handcrafted features span wildly different scales (fractions vs pixel
// coordinates); dense layers at the configured learning rates need them
// standardized. Statistics come from the training set and are frozen into
// the model.

struct FeatureScaler {
  nn::Vec mean;
  nn::Vec inv_sd;

  void fit(const std::vector<nn::Vec>& rows) {
    if (rows.empty()) throw Error(ErrorCode::degenerate_data, "FeatureScaler: no rows");
    const std::size_t d = rows[0].size();
    mean.assign(d, 0.0);
    inv_sd.assign(d, 0.0);
    for (const auto& r : rows)
      for (std::size_t i = 0; i < d; ++i) mean[i] += r[i];
    for (double& m : mean) m /= static_cast<double>(rows.size());
    nn::Vec var(d, 0.0);
    for (const auto& r : rows)
      for (std::size_t i = 0; i < d; ++i) var[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
    for (std::size_t i = 0; i < d; ++i)
      inv_sd[i] = 1.0 / std::max(std::sqrt(var[i] / static_cast<double>(rows.size())), 1e-8);
  }

  nn::Vec apply(std::span<const double> row) const {
    nn::Vec out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean[i]) * inv_sd[i];
    return out;
  }
};

// ---- image head (frame-level VNB classifier) ----

struct ImageHead {
  FeatureScaler scaler;
  nn::DenseLayer fc;  // static_dim -> 1, sigmoid

  double score(std::span<const double> raw_features) const {
    const nn::Vec x = scaler.apply(raw_features);
    return nn::dense_forward(fc, x)[0];
  }
};

// ---- fusion model ----

struct FusionModel {
  FeatureExtractorSpec extractor;
  FeatureScaler static_scaler;
  FeatureScaler temporal_scaler;
  nn::DenseLayer refine_static;    // static_dim -> 16, relu
  nn::DenseLayer refine_temporal;  // temporal_dim -> 16, relu
  nn::DenseLayer shared;           // 32 -> 16, relu
  nn::DenseLayer classifier;       // 16 -> 1, sigmoid
  ImageHead head;                  // frozen during fusion training

  nn::ParamList trainable_params() {
    nn::ParamList out;
    for (auto* l : {&refine_static, &refine_temporal, &shared, &classifier})
      for (auto& p : l->params()) out.push_back(p);
    return out;
  }

  // p_fusion from raw (unscaled) clip features
  double fuse(std::span<const double> static_avg, std::span<const double> temporal) const {
    const nn::Vec xs = static_scaler.apply(static_avg);
    const nn::Vec xt = temporal_scaler.apply(temporal);
    const nn::Vec a = nn::dense_forward(refine_static, xs);
    const nn::Vec b = nn::dense_forward(refine_temporal, xt);
    nn::Vec cat(a.size() + b.size());
    std::copy(a.begin(), a.end(), cat.begin());
    std::copy(b.begin(), b.end(), cat.begin() + static_cast<std::ptrdiff_t>(a.size()));
    const nn::Vec z = nn::dense_forward(shared, cat);
    return nn::dense_forward(classifier, z)[0];
  }
};

struct FusionScores {
  double p_fusion = 0.0;
  double p_vnb = 0.0;
};

inline FusionScores fusion_forward(const FusionModel& model, const Clip& clip) {
  if (clip.f < 2) throw Error(ErrorCode::clip_too_short, "fusion_forward: F must be >= 2");
  std::vector<nn::Vec> per_frame;
  per_frame.reserve(static_cast<std::size_t>(clip.f));
  for (int i = 0; i < clip.f; ++i)
    per_frame.push_back(extract_static_features(clip.frame(i), clip.height, clip.width));

  nn::Vec static_avg(kStaticFeatureDim, 0.0);
  for (const auto& f : per_frame)
    for (int d = 0; d < kStaticFeatureDim; ++d) static_avg[static_cast<std::size_t>(d)] += f[static_cast<std::size_t>(d)];
  for (double& v : static_avg) v /= static_cast<double>(clip.f);

  FusionScores s;
  s.p_fusion = model.fuse(static_avg, extract_temporal_features(clip));
  double acc = 0.0;
  for (const auto& f : per_frame) acc += model.head.score(f);
  s.p_vnb = acc / static_cast<double>(clip.f);
  return s;
}

// ---- score series ----

struct ScoreSeries {
  std::vector<double> t;  // seconds, ascending
  std::vector<double> p_fusion;
  std::vector<double> p_vnb;

  std::size_t size() const { return t.size(); }
};

inline ScoreSeries score_video(const FusionModel& model, const NormalizedVideo& video, int f,
                               double tau) {
  const auto ts = clip_timestamps(video.n_frames, video.frame_rate, f, tau);
  const VideoFeatureCache cache = build_feature_cache(video);
  ScoreSeries series;
  series.t = ts;
  series.p_fusion.reserve(ts.size());
  series.p_vnb.reserve(ts.size());
  for (double t : ts) {
    const int end = end_frame_for(t, video.frame_rate);
    series.p_fusion.push_back(
        model.fuse(static_average_from_cache(cache, end, f), temporal_features_from_cache(cache, end, f)));
    double acc = 0.0;
    for (int i = end - f + 1; i <= end; ++i) acc += model.head.score(cache.frame_static[i]);
    series.p_vnb.push_back(acc / static_cast<double>(f));
  }
  return series;
}

// clip/frame labeling rule shared by training and evaluation: positive once
// birth has occurred and the newborn is visible at t
inline bool clip_label(double t, double tob_s, const std::vector<std::uint8_t>& vnb_mask) {
  if (t < tob_s || vnb_mask.empty()) return false;
  const std::size_t idx =
      std::min(static_cast<std::size_t>(std::max(0.0, std::floor(t))), vnb_mask.size() - 1);
  return vnb_mask[idx] != 0;
}

// ---- training ----

struct LabeledFrameSet {
  std::vector<nn::Vec> features;  // raw static features
  std::vector<double> labels;    // 0/1 VNB
};

struct LabeledClipSet {
  std::vector<nn::Vec> static_avg;
  std::vector<nn::Vec> temporal;
  std::vector<double> labels;  // 0/1 birth-evidence
};

namespace detail {

inline void require_both_classes(std::span<const double> labels, const char* who) {
  if (labels.empty()) throw Error(ErrorCode::degenerate_data, std::string(who) + ": empty dataset");
  bool pos = false, neg = false;
  for (double y : labels) (y >= 0.5 ? pos : neg) = true;
  if (!pos || !neg)
    throw Error(ErrorCode::degenerate_data, std::string(who) + ": training set has a single class");
}

}  // namespace detail

struct HeadTrainOptions {
  nn::TrainOptions train{.max_epochs = 100, .patience = 10, .batch_size = 8, .lr = 0.01,
                         .epoch_decay = 0.97, .seed = 0};
};

inline ImageHead train_image_head(const LabeledFrameSet& train_set, const LabeledFrameSet& val_set,
                                  const HeadTrainOptions& opts) {
  detail::require_both_classes(train_set.labels, "train_image_head");
  ImageHead head;
  head.scaler.fit(train_set.features);
  head.fc = nn::DenseLayer(static_cast<int>(train_set.features[0].size()), 1, nn::Activation::sigmoid);
  Rng init_rng(substream(opts.train.seed, "head-init"));
  head.fc.init(init_rng);

  std::vector<nn::Vec> xs;
  xs.reserve(train_set.features.size());
  for (const auto& f : train_set.features) xs.push_back(head.scaler.apply(f));
  std::vector<nn::Vec> xv;
  xv.reserve(val_set.features.size());
  for (const auto& f : val_set.features) xv.push_back(head.scaler.apply(f));

  nn::ParamList params = head.fc.params();
  nn::AdamState adam;
  adam.cfg.lr = opts.train.lr;
  adam.cfg.epoch_decay = opts.train.epoch_decay;
  adam.init(params);

  auto run_batch = [&](std::span<const int> idx) {
    nn::zero_grads(params);
    double loss = 0.0;
    for (int i : idx) {
      nn::DenseCache cache;
      const double p = nn::dense_forward(head.fc, xs[static_cast<std::size_t>(i)], &cache)[0];
      const double y = train_set.labels[static_cast<std::size_t>(i)];
      loss += nn::bce_scalar(y, p);
      const double dp[1] = {nn::bce_grad_element(y, p) / static_cast<double>(idx.size())};
      nn::dense_backward(head.fc, cache, dp);
    }
    nn::adam_step(params, adam);
    return loss / static_cast<double>(idx.size());
  };
  auto eval_val = [&]() {
    const auto& feats = xv.empty() ? xs : xv;
    const auto& labels = xv.empty() ? train_set.labels : val_set.labels;
    double loss = 0.0;
    for (std::size_t i = 0; i < feats.size(); ++i)
      loss += nn::bce_scalar(labels[i], nn::dense_forward(head.fc, feats[i])[0]);
    return loss / static_cast<double>(feats.size());
  };
  nn::train_loop(static_cast<int>(xs.size()), params, adam, opts.train, run_batch, eval_val);
  return head;
}

struct FusionTrainOptions {
  nn::TrainOptions train{.max_epochs = 100, .patience = 10, .batch_size = 8, .lr = 0.0001,
                         .epoch_decay = 0.97, .seed = 0};
  int refine_width = 16;
  int shared_width = 16;
};

struct FusionTrainResult {
  FusionModel model;
  nn::TrainLog log;
};

inline FusionTrainResult train_fusion(const LabeledClipSet& train_set,
                                      const LabeledClipSet& val_set, const ImageHead& head,
                                      const FusionTrainOptions& opts) {
  detail::require_both_classes(train_set.labels, "train_fusion");
  FusionTrainResult result;
  FusionModel& m = result.model;
  m.extractor.static_dim = static_cast<int>(train_set.static_avg[0].size());
  m.extractor.temporal_dim = static_cast<int>(train_set.temporal[0].size());
  m.head = head;
  m.static_scaler.fit(train_set.static_avg);
  m.temporal_scaler.fit(train_set.temporal);
  m.refine_static = nn::DenseLayer(m.extractor.static_dim, opts.refine_width, nn::Activation::relu);
  m.refine_temporal = nn::DenseLayer(m.extractor.temporal_dim, opts.refine_width, nn::Activation::relu);
  m.shared = nn::DenseLayer(2 * opts.refine_width, opts.shared_width, nn::Activation::relu);
  m.classifier = nn::DenseLayer(opts.shared_width, 1, nn::Activation::sigmoid);
  Rng init_rng(substream(opts.train.seed, "fusion-init"));
  m.refine_static.init(init_rng);
  m.refine_temporal.init(init_rng);
  m.shared.init(init_rng);
  m.classifier.init(init_rng);

  auto scale_set = [&](const LabeledClipSet& set) {
    std::pair<std::vector<nn::Vec>, std::vector<nn::Vec>> out;
    out.first.reserve(set.static_avg.size());
    out.second.reserve(set.temporal.size());
    for (const auto& r : set.static_avg) out.first.push_back(m.static_scaler.apply(r));
    for (const auto& r : set.temporal) out.second.push_back(m.temporal_scaler.apply(r));
    return out;
  };
  const auto [xs, xt] = scale_set(train_set);
  const auto [vs, vt] = scale_set(val_set);

  struct ForwardCaches {
    nn::DenseCache rs, rt, sh, clf;
  };
  auto forward = [&](const nn::Vec& s, const nn::Vec& t, ForwardCaches* c) {
    const nn::Vec a = nn::dense_forward(m.refine_static, s, c ? &c->rs : nullptr);
    const nn::Vec b = nn::dense_forward(m.refine_temporal, t, c ? &c->rt : nullptr);
    nn::Vec cat(a.size() + b.size());
    std::copy(a.begin(), a.end(), cat.begin());
    std::copy(b.begin(), b.end(), cat.begin() + static_cast<std::ptrdiff_t>(a.size()));
    const nn::Vec z = nn::dense_forward(m.shared, cat, c ? &c->sh : nullptr);
    return nn::dense_forward(m.classifier, z, c ? &c->clf : nullptr)[0];
  };

  nn::ParamList params = m.trainable_params();
  nn::AdamState adam;
  adam.cfg.lr = opts.train.lr;
  adam.cfg.epoch_decay = opts.train.epoch_decay;
  adam.init(params);

  auto run_batch = [&](std::span<const int> idx) {
    nn::zero_grads(params);
    double loss = 0.0;
    for (int ii : idx) {
      const auto i = static_cast<std::size_t>(ii);
      ForwardCaches c;
      const double p = forward(xs[i], xt[i], &c);
      const double y = train_set.labels[i];
      loss += nn::bce_scalar(y, p);
      const double dp[1] = {nn::bce_grad_element(y, p) / static_cast<double>(idx.size())};
      const nn::Vec dz = nn::dense_backward(m.classifier, c.clf, dp);
      const nn::Vec dcat = nn::dense_backward(m.shared, c.sh, dz);
      const std::span<const double> da(dcat.data(), static_cast<std::size_t>(opts.refine_width));
      const std::span<const double> db(dcat.data() + opts.refine_width,
                                       static_cast<std::size_t>(opts.refine_width));
      nn::dense_backward(m.refine_static, c.rs, da);
      nn::dense_backward(m.refine_temporal, c.rt, db);
    }
    nn::adam_step(params, adam);
    return loss / static_cast<double>(idx.size());
  };
  auto eval_val = [&]() {
    const auto& fs = vs.empty() ? xs : vs;
    const auto& ft = vs.empty() ? xt : vt;
    const auto& labels = vs.empty() ? train_set.labels : val_set.labels;
    double loss = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i)
      loss += nn::bce_scalar(labels[i], forward(fs[i], ft[i], nullptr));
    return loss / static_cast<double>(fs.size());
  };
  result.log = nn::train_loop(static_cast<int>(xs.size()), params, adam, opts.train, run_batch,
                              eval_val);
  return result;
}

// ---- checkpoints ----

inline constexpr std::uint32_t kImageHeadKind = 1;
inline constexpr std::uint32_t kFusionModelKind = 2;

namespace detail {

inline void write_scaler(nn::CheckpointWriter& wtr, const FeatureScaler& s) {
  wtr.values(s.mean);
  wtr.values(s.inv_sd);
}

inline FeatureScaler read_scaler(nn::CheckpointReader& rdr, const nn::ManifestEntry& e) {
  FeatureScaler s;
  s.mean.resize(e.dim0);
  s.inv_sd.resize(e.dim0);
  rdr.values(s.mean);
  rdr.values(s.inv_sd);
  return s;
}

inline nn::ManifestEntry scaler_entry(const FeatureScaler& s) {
  return {nn::LayerKind::scaler, 0, static_cast<std::uint32_t>(s.mean.size()), 2};
}

inline nn::ManifestEntry dense_entry(const nn::DenseLayer& l) {
  return {nn::LayerKind::dense, static_cast<std::uint8_t>(l.act),
          static_cast<std::uint32_t>(l.in_dim), static_cast<std::uint32_t>(l.out_dim)};
}

inline nn::ManifestEntry lstm_entry(const nn::LstmLayer& l) {
  return {nn::LayerKind::lstm, 0, static_cast<std::uint32_t>(l.in_dim),
          static_cast<std::uint32_t>(l.hidden)};
}

}  // namespace detail

inline void save_image_head(const ImageHead& head, const std::filesystem::path& path) {
  nn::CheckpointWriter wtr(path, kImageHeadKind, 2);
  wtr.manifest(detail::scaler_entry(head.scaler));
  wtr.manifest(detail::dense_entry(head.fc));
  detail::write_scaler(wtr, head.scaler);
  nn::write_dense(wtr, head.fc);
  wtr.finish();
}

inline ImageHead load_image_head(const std::filesystem::path& path) {
  nn::CheckpointReader rdr(path, kImageHeadKind);
  if (rdr.entries() != 2) throw Error(ErrorCode::malformed_header, "image head: bad entry count");
  const auto e0 = rdr.manifest();
  const auto e1 = rdr.manifest();
  ImageHead head;
  head.scaler = detail::read_scaler(rdr, e0);
  head.fc = nn::read_dense(rdr, e1);
  return head;
}

inline void save_fusion_model(const FusionModel& m, const std::filesystem::path& path) {
  nn::CheckpointWriter wtr(path, kFusionModelKind, 8);
  wtr.manifest(detail::scaler_entry(m.static_scaler));
  wtr.manifest(detail::scaler_entry(m.temporal_scaler));
  wtr.manifest(detail::dense_entry(m.refine_static));
  wtr.manifest(detail::dense_entry(m.refine_temporal));
  wtr.manifest(detail::dense_entry(m.shared));
  wtr.manifest(detail::dense_entry(m.classifier));
  wtr.manifest(detail::scaler_entry(m.head.scaler));
  wtr.manifest(detail::dense_entry(m.head.fc));
  detail::write_scaler(wtr, m.static_scaler);
  detail::write_scaler(wtr, m.temporal_scaler);
  nn::write_dense(wtr, m.refine_static);
  nn::write_dense(wtr, m.refine_temporal);
  nn::write_dense(wtr, m.shared);
  nn::write_dense(wtr, m.classifier);
  detail::write_scaler(wtr, m.head.scaler);
  nn::write_dense(wtr, m.head.fc);
  wtr.finish();
}

inline FusionModel load_fusion_model(const std::filesystem::path& path) {
  nn::CheckpointReader rdr(path, kFusionModelKind);
  if (rdr.entries() != 8) throw Error(ErrorCode::malformed_header, "fusion model: bad entry count");
  std::vector<nn::ManifestEntry> entries;
  for (int i = 0; i < 8; ++i) entries.push_back(rdr.manifest());
  FusionModel m;
  m.static_scaler = detail::read_scaler(rdr, entries[0]);
  m.temporal_scaler = detail::read_scaler(rdr, entries[1]);
  m.refine_static = nn::read_dense(rdr, entries[2]);
  m.refine_temporal = nn::read_dense(rdr, entries[3]);
  m.shared = nn::read_dense(rdr, entries[4]);
  m.classifier = nn::read_dense(rdr, entries[5]);
  m.head.scaler = detail::read_scaler(rdr, entries[6]);
  m.head.fc = nn::read_dense(rdr, entries[7]);
  m.extractor.static_dim = m.refine_static.in_dim;
  m.extractor.temporal_dim = m.refine_temporal.in_dim;
  return m;
}

}  // namespace tob
