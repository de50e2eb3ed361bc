#pragma once

// Score aggregation: builds the event/transition/joint supervision signals,
// runs the T x 2 score matrix through an auxiliary LSTM model in overlapping
// windows, assembles full-length predictions by averaging, and estimates the
// time of birth as the argmax of the joint prediction above a confidence
// threshold. Also hosts the smoothing/threshold baselines.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "tob/common.hpp"
#include "tob/fusion.hpp"
#include "tob/nn.hpp"

namespace tob {

// ---- supervision signals ----

struct SupervisionSignals {
  std::vector<double> y_evt;    // single 1 at the rounded birth second
  std::vector<double> y_tr;     // 0 before, 1 from the rounded birth second on
  std::vector<double> y_joint;  // elementwise sum, in {0,1,2}
  bool peak_clamped = false;    // birth fell outside the axis; peak moved to the nearest point
};

inline SupervisionSignals build_labels(double t_birth, std::span<const double> t_axis) {
  if (t_axis.empty()) throw Error(ErrorCode::invalid_argument, "build_labels: empty axis");
  SupervisionSignals s;
  const std::size_t n = t_axis.size();
  s.y_evt.assign(n, 0.0);
  s.y_tr.assign(n, 0.0);
  s.y_joint.assign(n, 0.0);

  const double rounded = round_half_even(t_birth);
  std::size_t peak = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::abs(t_axis[i] - rounded);
    if (d < best - 1e-12) {
      best = d;
      peak = i;
    }
  }
  s.peak_clamped = best > 1e-9;
  s.y_evt[peak] = 1.0;
  for (std::size_t i = 0; i < n; ++i) s.y_tr[i] = t_axis[i] >= rounded ? 1.0 : 0.0;
  for (std::size_t i = 0; i < n; ++i) s.y_joint[i] = s.y_evt[i] + s.y_tr[i];
  return s;
}

// ---- windowed segments of the T x 2 score matrix ----

struct ScoreSegment {
  int start_index = 0;
  double start_t = 0.0;
  std::vector<std::array<double, 2>> rows;  // [p_fusion, p_vnb] per step
};

inline std::vector<ScoreSegment> window_segments(const ScoreSeries& scores, int w = 10,
                                                 int stride = 1) {
  if (w < 1 || stride < 1)
    throw Error(ErrorCode::invalid_argument, "window_segments: w and stride must be >= 1");
  const int n = static_cast<int>(scores.size());
  if (n < w) throw Error(ErrorCode::insufficient_data, "window_segments: series shorter than window");
  std::vector<ScoreSegment> out;
  for (int s = 0; s + w <= n; s += stride) {
    ScoreSegment seg;
    seg.start_index = s;
    seg.start_t = scores.t[static_cast<std::size_t>(s)];
    seg.rows.resize(static_cast<std::size_t>(w));
    for (int i = 0; i < w; ++i)
      seg.rows[static_cast<std::size_t>(i)] = {scores.p_fusion[static_cast<std::size_t>(s + i)],
                                               scores.p_vnb[static_cast<std::size_t>(s + i)]};
    out.push_back(std::move(seg));
  }
  return out;
}

// ---- auxiliary model ----

struct AuxModel {
  nn::LstmLayer lstm1;  // 2 -> 16
  nn::LstmLayer lstm2;  // 16 -> 16
  nn::DenseLayer fc1;   // 16 -> 8, relu
  nn::DenseLayer fc2;   // 8 -> 2, sigmoid: [event, transition]

  nn::ParamList params() {
    nn::ParamList out;
    for (auto& p : lstm1.params()) out.push_back(p);
    for (auto& p : lstm2.params()) out.push_back(p);
    for (auto& p : fc1.params()) out.push_back(p);
    for (auto& p : fc2.params()) out.push_back(p);
    return out;
  }
};

inline AuxModel make_aux_model(int hidden1 = 16, int hidden2 = 16, int fc_width = 8,
                               std::uint64_t seed = 0) {
  AuxModel m;
  m.lstm1 = nn::LstmLayer(2, hidden1);
  m.lstm2 = nn::LstmLayer(hidden1, hidden2);
  m.fc1 = nn::DenseLayer(hidden2, fc_width, nn::Activation::relu);
  m.fc2 = nn::DenseLayer(fc_width, 2, nn::Activation::sigmoid);
  Rng rng(substream(seed, "aux-init"));
  m.lstm1.init(rng);
  m.lstm2.init(rng);
  m.fc1.init(rng);
  m.fc2.init(rng);
  return m;
}

struct AuxOutput {
  std::vector<double> y_evt;
  std::vector<double> y_tr;
  std::vector<double> y_joint;  // y_evt + y_tr, unit coefficients
};

struct AuxCaches {
  nn::LstmCache l1, l2;
  std::vector<nn::DenseCache> fc1, fc2;
};

inline AuxOutput aux_forward(const AuxModel& model, const ScoreSegment& segment,
                             AuxCaches* caches = nullptr) {
  const std::size_t w = segment.rows.size();
  std::vector<nn::Vec> xs(w);
  for (std::size_t i = 0; i < w; ++i) xs[i] = {segment.rows[i][0], segment.rows[i][1]};
  const auto h1 = nn::lstm_forward(model.lstm1, xs, caches ? &caches->l1 : nullptr);
  const auto h2 = nn::lstm_forward(model.lstm2, h1, caches ? &caches->l2 : nullptr);
  if (caches) {
    caches->fc1.resize(w);
    caches->fc2.resize(w);
  }
  AuxOutput out;
  out.y_evt.resize(w);
  out.y_tr.resize(w);
  out.y_joint.resize(w);
  for (std::size_t i = 0; i < w; ++i) {
    const nn::Vec z = nn::dense_forward(model.fc1, h2[i], caches ? &caches->fc1[i] : nullptr);
    const nn::Vec y = nn::dense_forward(model.fc2, z, caches ? &caches->fc2[i] : nullptr);
    out.y_evt[i] = y[0];
    out.y_tr[i] = y[1];
    out.y_joint[i] = y[0] + y[1];
  }
  return out;
}

// ---- assembly of overlapping window outputs ----

struct AssembledPredictions {
  std::vector<double> y_evt;
  std::vector<double> y_tr;
  std::vector<double> y_joint;
};

// each timestep's value is the arithmetic mean over all segments covering it
inline AssembledPredictions assemble_predictions(int series_length,
                                                 const std::vector<ScoreSegment>& segments,
                                                 const std::vector<AuxOutput>& outputs) {
  if (segments.size() != outputs.size())
    throw Error(ErrorCode::shape_mismatch, "assemble_predictions: segment/output count mismatch");
  AssembledPredictions a;
  a.y_evt.assign(static_cast<std::size_t>(series_length), 0.0);
  a.y_tr.assign(static_cast<std::size_t>(series_length), 0.0);
  std::vector<double> count(static_cast<std::size_t>(series_length), 0.0);
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const int start = segments[s].start_index;
    for (std::size_t i = 0; i < outputs[s].y_evt.size(); ++i) {
      const std::size_t pos = static_cast<std::size_t>(start) + i;
      a.y_evt[pos] += outputs[s].y_evt[i];
      a.y_tr[pos] += outputs[s].y_tr[i];
      count[pos] += 1.0;
    }
  }
  for (std::size_t i = 0; i < a.y_evt.size(); ++i) {
    if (count[i] > 0.0) {
      a.y_evt[i] /= count[i];
      a.y_tr[i] /= count[i];
    }
  }
  a.y_joint.resize(a.y_evt.size());
  for (std::size_t i = 0; i < a.y_evt.size(); ++i) a.y_joint[i] = a.y_evt[i] + a.y_tr[i];
  return a;
}

// streaming variant: only segments that END at or before `now_index`
// contribute, as a real-time system would see them
inline AssembledPredictions assemble_predictions_streaming(
    int series_length, const std::vector<ScoreSegment>& segments,
    const std::vector<AuxOutput>& outputs, int now_index) {
  std::vector<ScoreSegment> past;
  std::vector<AuxOutput> past_out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const int end = segments[s].start_index + static_cast<int>(segments[s].rows.size()) - 1;
    if (end <= now_index) {
      past.push_back(segments[s]);
      past_out.push_back(outputs[s]);
    }
  }
  return assemble_predictions(series_length, past, past_out);
}

// ---- loss (weighted BCE + BCE + MSE over a window) ----

struct AggLossWeights {
  double alpha1 = 0.4;  // event BCE
  double alpha2 = 0.4;  // transition BCE
  double alpha3 = 0.2;  // joint MSE
};

inline double aggregation_loss(std::span<const double> y_evt, std::span<const double> y_tr,
                               const AuxOutput& pred, const AggLossWeights& w = {}) {
  if (y_evt.size() != pred.y_evt.size() || y_tr.size() != pred.y_tr.size())
    throw Error(ErrorCode::shape_mismatch, "aggregation_loss: length mismatch");
  if (w.alpha1 < 0 || w.alpha2 < 0 || w.alpha3 < 0)
    throw Error(ErrorCode::invalid_argument, "aggregation_loss: weights must be >= 0");
  std::vector<double> y_joint(y_evt.size());
  for (std::size_t i = 0; i < y_evt.size(); ++i) y_joint[i] = y_evt[i] + y_tr[i];
  return w.alpha1 * nn::bce(y_evt, pred.y_evt) + w.alpha2 * nn::bce(y_tr, pred.y_tr) +
         w.alpha3 * nn::mse(y_joint, pred.y_joint);
}

// ---- aux training ----

struct AuxTrainOptions {
  nn::TrainOptions train{.max_epochs = 100, .patience = 10, .batch_size = 8, .lr = 0.001,
                         .epoch_decay = 0.97, .seed = 0};
  AggLossWeights weights;
  int window_s = 10;
  int stride_s = 1;
  // fraction of training windows with one input channel zeroed, teaching the
  // model to fall back on the surviving score when the other fails
  double channel_dropout = 0.10;
  double val_fraction = 0.15;
  int hidden1 = 16, hidden2 = 16, fc_width = 8;
};

struct AuxTrainData {
  ScoreSeries scores;
  double tob_s = 0.0;
};

struct AuxWindow {
  ScoreSegment segment;
  std::vector<double> y_evt, y_tr;
};

namespace detail {

inline void backprop_window(AuxModel& model, const AuxWindow& win, const AuxOutput& pred,
                            const AuxCaches& caches, const AggLossWeights& weights,
                            double batch_scale) {
  const std::size_t w = win.segment.rows.size();
  const double inv_w = 1.0 / static_cast<double>(w);
  std::vector<nn::Vec> dh(w);
  for (std::size_t i = 0; i < w; ++i) {
    const double yj = win.y_evt[i] + win.y_tr[i];
    const double djoint = weights.alpha3 * 2.0 * (pred.y_joint[i] - yj) * inv_w;
    const double de =
        weights.alpha1 * nn::bce_grad_element(win.y_evt[i], pred.y_evt[i]) * inv_w + djoint;
    const double dt =
        weights.alpha2 * nn::bce_grad_element(win.y_tr[i], pred.y_tr[i]) * inv_w + djoint;
    const double dout[2] = {de * batch_scale, dt * batch_scale};
    const nn::Vec dz = nn::dense_backward(model.fc2, caches.fc2[i], dout);
    dh[i] = nn::dense_backward(model.fc1, caches.fc1[i], dz);
  }
  const auto dh1 = nn::lstm_backward(model.lstm2, caches.l2, dh);
  nn::lstm_backward(model.lstm1, caches.l1, dh1);
}

}  // namespace detail

struct AuxTrainResult {
  AuxModel model;
  nn::TrainLog log;
};

inline AuxTrainResult train_aux(const std::vector<AuxTrainData>& videos,
                                const AuxTrainOptions& opts) {
  int usable = 0;
  for (const auto& v : videos) {
    if (v.scores.size() == 0) continue;
    if (v.tob_s > v.scores.t.front() && v.tob_s < v.scores.t.back()) ++usable;
  }
  if (usable < 2)
    throw Error(ErrorCode::insufficient_data,
                "train_aux: need at least 2 videos covering both pre- and post-birth seconds");

  std::vector<AuxWindow> windows;
  for (const auto& v : videos) {
    const auto labels = build_labels(v.tob_s, v.scores.t);
    const auto segments = window_segments(v.scores, opts.window_s, opts.stride_s);
    for (const auto& seg : segments) {
      AuxWindow win;
      win.segment = seg;
      const auto s = static_cast<std::size_t>(seg.start_index);
      win.y_evt.assign(labels.y_evt.begin() + s, labels.y_evt.begin() + s + seg.rows.size());
      win.y_tr.assign(labels.y_tr.begin() + s, labels.y_tr.begin() + s + seg.rows.size());
      windows.push_back(std::move(win));
    }
  }

  // held-out windows for early stopping, then channel dropout on the rest
  Rng split_rng(substream(opts.train.seed, "aux-split"));
  std::vector<int> order(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) order[i] = static_cast<int>(i);
  for (std::size_t i = windows.size() - 1; i > 0; --i)
    std::swap(order[i], order[static_cast<std::size_t>(split_rng.below(i + 1))]);
  const std::size_t n_val =
      std::min(windows.size() - 1,
               static_cast<std::size_t>(std::llround(opts.val_fraction * windows.size())));
  std::vector<AuxWindow> train_windows, val_windows;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto& dst = i < n_val ? val_windows : train_windows;
    dst.push_back(std::move(windows[static_cast<std::size_t>(order[i])]));
  }
  Rng drop_rng(substream(opts.train.seed, "aux-dropout"));
  for (auto& win : train_windows) {
    if (drop_rng.uniform() < opts.channel_dropout) {
      const std::size_t ch = drop_rng.below(2);
      for (auto& row : win.segment.rows) row[ch] = 0.0;
    }
  }

  AuxTrainResult result;
  result.model = make_aux_model(opts.hidden1, opts.hidden2, opts.fc_width, opts.train.seed);
  AuxModel& model = result.model;
  nn::ParamList params = model.params();
  nn::AdamState adam;
  adam.cfg.lr = opts.train.lr;
  adam.cfg.epoch_decay = opts.train.epoch_decay;
  adam.init(params);

  auto run_batch = [&](std::span<const int> idx) {
    nn::zero_grads(params);
    double loss = 0.0;
    const double batch_scale = 1.0 / static_cast<double>(idx.size());
    for (int ii : idx) {
      const AuxWindow& win = train_windows[static_cast<std::size_t>(ii)];
      AuxCaches caches;
      const AuxOutput pred = aux_forward(model, win.segment, &caches);
      loss += aggregation_loss(win.y_evt, win.y_tr, pred, opts.weights);
      detail::backprop_window(model, win, pred, caches, opts.weights, batch_scale);
    }
    nn::adam_step(params, adam);
    return loss * batch_scale;
  };
  auto eval_val = [&]() {
    const auto& set = val_windows.empty() ? train_windows : val_windows;
    double loss = 0.0;
    for (const auto& win : set)
      loss += aggregation_loss(win.y_evt, win.y_tr, aux_forward(model, win.segment), opts.weights);
    return loss / static_cast<double>(set.size());
  };
  result.log = nn::train_loop(static_cast<int>(train_windows.size()), params, adam, opts.train,
                              run_batch, eval_val);
  return result;
}

// score a whole series: window, run the aux model, assemble
inline AssembledPredictions aggregate_series(const AuxModel& model, const ScoreSeries& scores,
                                             int window_s = 10, int stride_s = 1) {
  const auto segments = window_segments(scores, window_s, stride_s);
  std::vector<AuxOutput> outputs;
  outputs.reserve(segments.size());
  for (const auto& seg : segments) outputs.push_back(aux_forward(model, seg));
  return assemble_predictions(static_cast<int>(scores.size()), segments, outputs);
}

// ---- ToB estimation and baselines ----

struct TobEstimate {
  bool found = false;
  double t_hat = 0.0;
  double peak = 0.0;
  double threshold = 0.0;  // the gamma / theta the decision used
};

// argmax of the joint prediction if it clears gamma; earliest index wins ties
inline TobEstimate estimate_tob(std::span<const double> y_joint, std::span<const double> t_axis,
                                double gamma = 0.95) {
  if (y_joint.empty() || y_joint.size() != t_axis.size())
    throw Error(ErrorCode::invalid_argument, "estimate_tob: empty or misaligned sequence");
  std::size_t best = 0;
  for (std::size_t i = 1; i < y_joint.size(); ++i)
    if (y_joint[i] > y_joint[best]) best = i;
  TobEstimate e;
  e.threshold = gamma;
  e.peak = y_joint[best];
  if (e.peak >= gamma) {
    e.found = true;
    e.t_hat = t_axis[best];
  }
  return e;
}

// centered moving average with edge replication
inline std::vector<double> fir_filter(std::span<const double> x, int taps) {
  if (taps < 1 || taps % 2 == 0)
    throw Error(ErrorCode::invalid_argument, "fir_filter: taps must be odd and >= 1");
  const int n = static_cast<int>(x.size());
  const int half = taps / 2;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int k = -half; k <= half; ++k) s += x[static_cast<std::size_t>(std::clamp(i + k, 0, n - 1))];
    out[static_cast<std::size_t>(i)] = s / taps;
  }
  return out;
}

// earliest crossing of a high-confidence threshold
inline TobEstimate hct_detect(std::span<const double> filtered, std::span<const double> t_axis,
                              double theta) {
  if (!(theta > 0.0) || !(theta < 1.0))
    throw Error(ErrorCode::invalid_argument, "hct_detect: theta must be in (0,1)");
  TobEstimate e;
  e.threshold = theta;
  for (std::size_t i = 0; i < filtered.size(); ++i) {
    e.peak = std::max(e.peak, filtered[i]);
    if (filtered[i] >= theta) {
      e.found = true;
      e.t_hat = t_axis[i];
      e.peak = filtered[i];
      return e;
    }
  }
  return e;
}

// earliest p_fusion >= 0.5
inline TobEstimate threshold_first(std::span<const double> p_fusion,
                                   std::span<const double> t_axis) {
  if (p_fusion.empty()) throw Error(ErrorCode::invalid_argument, "threshold_first: empty sequence");
  TobEstimate e;
  e.threshold = 0.5;
  for (std::size_t i = 0; i < p_fusion.size(); ++i) {
    e.peak = std::max(e.peak, p_fusion[i]);
    if (p_fusion[i] >= 0.5) {
      e.found = true;
      e.t_hat = t_axis[i];
      e.peak = p_fusion[i];
      return e;
    }
  }
  return e;
}

// ---- checkpoint ----

inline constexpr std::uint32_t kAuxModelKind = 3;

inline void save_aux_model(const AuxModel& m, const std::filesystem::path& path) {
  nn::CheckpointWriter wtr(path, kAuxModelKind, 4);
  wtr.manifest(detail::lstm_entry(m.lstm1));
  wtr.manifest(detail::lstm_entry(m.lstm2));
  wtr.manifest(detail::dense_entry(m.fc1));
  wtr.manifest(detail::dense_entry(m.fc2));
  nn::write_lstm(wtr, m.lstm1);
  nn::write_lstm(wtr, m.lstm2);
  nn::write_dense(wtr, m.fc1);
  nn::write_dense(wtr, m.fc2);
  wtr.finish();
}

inline AuxModel load_aux_model(const std::filesystem::path& path) {
  nn::CheckpointReader rdr(path, kAuxModelKind);
  if (rdr.entries() != 4) throw Error(ErrorCode::malformed_header, "aux model: bad entry count");
  std::vector<nn::ManifestEntry> entries;
  for (int i = 0; i < 4; ++i) entries.push_back(rdr.manifest());
  AuxModel m;
  m.lstm1 = nn::read_lstm(rdr, entries[0]);
  m.lstm2 = nn::read_lstm(rdr, entries[1]);
  m.fc1 = nn::read_dense(rdr, entries[2]);
  m.fc2 = nn::read_dense(rdr, entries[3]);
  return m;
}

}  // namespace tob
