#pragma once

// Minimal neural-network kernel: dense and LSTM layers with analytic
// gradients, sigmoid/relu activations, BCE/MSE losses, Adam with per-epoch
// learning-rate decay, seeded initialization, and a bit-exact checkpoint
// format. All math is in 64-bit floats so gradient checks are crisp.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tob/common.hpp"

namespace tob::nn {

using Vec = std::vector<double>;

enum class Activation : std::uint8_t { identity = 0, relu = 1, sigmoid = 2 };

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? z : 0.0;
    case Activation::sigmoid: return sigmoid(z);
    default: return z;
  }
}

// derivative w.r.t. preactivation, expressed from preactivation and output
inline double activate_grad(Activation a, double z, double y) {
  switch (a) {
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    default: return 1.0;
  }
}

// ---- parameter plumbing ----

struct ParamRef {
  Vec* value;
  Vec* grad;
};
using ParamList = std::vector<ParamRef>;

inline void zero_grads(const ParamList& params) {
  for (const auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

inline void scale_grads(const ParamList& params, double s) {
  for (const auto& p : params)
    for (double& g : *p.grad) g *= s;
}

inline std::vector<Vec> snapshot_params(const ParamList& params) {
  std::vector<Vec> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(*p.value);
  return out;
}

inline void restore_params(const ParamList& params, const std::vector<Vec>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = snap[i];
}

// ---- dense ----

struct DenseLayer {
  int in_dim = 0;
  int out_dim = 0;
  Activation act = Activation::identity;
  Vec w;  // out x in, row-major
  Vec b;
  Vec gw, gb;

  DenseLayer() = default;
  DenseLayer(int in, int out, Activation a) : in_dim(in), out_dim(out), act(a) {
    w.assign(static_cast<std::size_t>(in) * out, 0.0);
    b.assign(out, 0.0);
    gw.assign(w.size(), 0.0);
    gb.assign(b.size(), 0.0);
  }

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (double& x : w) x = rng.uniform(-bound, bound);
    std::fill(b.begin(), b.end(), 0.0);
  }

  ParamList params() { return {{&w, &gw}, {&b, &gb}}; }
};

struct DenseCache {
  Vec input;
  Vec preact;
  Vec output;
};

inline Vec dense_forward(const DenseLayer& layer, std::span<const double> x,
                         DenseCache* cache = nullptr) {
  if (static_cast<int>(x.size()) != layer.in_dim)
    throw Error(ErrorCode::shape_mismatch, "dense_forward: input size mismatch");
  Vec pre(layer.out_dim);
  for (int o = 0; o < layer.out_dim; ++o) {
    const double* wr = layer.w.data() + static_cast<std::size_t>(o) * layer.in_dim;
    double s = layer.b[o];
    for (int i = 0; i < layer.in_dim; ++i) s += wr[i] * x[i];
    pre[o] = s;
  }
  Vec out(layer.out_dim);
  for (int o = 0; o < layer.out_dim; ++o) out[o] = activate(layer.act, pre[o]);
  if (cache) {
    cache->input.assign(x.begin(), x.end());
    cache->preact = pre;
    cache->output = out;
  }
  return out;
}

// accumulates into gw/gb; returns gradient w.r.t. the input
inline Vec dense_backward(DenseLayer& layer, const DenseCache& cache, std::span<const double> dy) {
  if (static_cast<int>(dy.size()) != layer.out_dim)
    throw Error(ErrorCode::shape_mismatch, "dense_backward: grad size mismatch");
  if (cache.input.empty()) throw Error(ErrorCode::state, "dense_backward: no cached forward");
  Vec dx(layer.in_dim, 0.0);
  for (int o = 0; o < layer.out_dim; ++o) {
    const double dz = dy[o] * activate_grad(layer.act, cache.preact[o], cache.output[o]);
    double* gwr = layer.gw.data() + static_cast<std::size_t>(o) * layer.in_dim;
    const double* wr = layer.w.data() + static_cast<std::size_t>(o) * layer.in_dim;
    for (int i = 0; i < layer.in_dim; ++i) {
      gwr[i] += dz * cache.input[i];
      dx[i] += dz * wr[i];
    }
    layer.gb[o] += dz;
  }
  return dx;
}

// ---- LSTM ----
//
// Standard formulation, gate order i, f, g, o within the stacked weight
// matrices: i = sig(Wxi x + Whi h + bi), f = sig(...), g = tanh(...),
// o = sig(...), c = f*c' + i*g, h = o*tanh(c). Zero initial state.

struct LstmLayer {
  int in_dim = 0;
  int hidden = 0;
  Vec wx;  // 4h x in
  Vec wh;  // 4h x h
  Vec b;   // 4h
  Vec gwx, gwh, gb;

  LstmLayer() = default;
  LstmLayer(int in, int h) : in_dim(in), hidden(h) {
    wx.assign(static_cast<std::size_t>(4 * h) * in, 0.0);
    wh.assign(static_cast<std::size_t>(4 * h) * h, 0.0);
    b.assign(static_cast<std::size_t>(4) * h, 0.0);
    gwx.assign(wx.size(), 0.0);
    gwh.assign(wh.size(), 0.0);
    gb.assign(b.size(), 0.0);
  }

  void init(Rng& rng) {
    const double bx = 1.0 / std::sqrt(static_cast<double>(in_dim));
    const double bh = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& x : wx) x = rng.uniform(-bx, bx);
    for (double& x : wh) x = rng.uniform(-bh, bh);
    std::fill(b.begin(), b.end(), 0.0);
    for (int j = 0; j < hidden; ++j) b[hidden + j] = 1.0;  // forget-gate bias
  }

  ParamList params() { return {{&wx, &gwx}, {&wh, &gwh}, {&b, &gb}}; }
};

struct LstmCache {
  int steps = 0;
  std::vector<Vec> x, gi, gf, gg, go, c, h, tanh_c;  // per step; gates post-activation
};

inline std::vector<Vec> lstm_forward(const LstmLayer& layer, const std::vector<Vec>& xs,
                                     LstmCache* cache = nullptr) {
  const int h = layer.hidden;
  std::vector<Vec> hs;
  hs.reserve(xs.size());
  Vec h_prev(h, 0.0), c_prev(h, 0.0);
  if (cache) {
    cache->steps = static_cast<int>(xs.size());
    cache->x = xs;
    cache->gi.clear(); cache->gf.clear(); cache->gg.clear(); cache->go.clear();
    cache->c.clear(); cache->h.clear(); cache->tanh_c.clear();
  }
  Vec pre(static_cast<std::size_t>(4) * h);
  for (const Vec& x : xs) {
    if (static_cast<int>(x.size()) != layer.in_dim)
      throw Error(ErrorCode::shape_mismatch, "lstm_forward: input size mismatch");
    for (int r = 0; r < 4 * h; ++r) {
      const double* wxr = layer.wx.data() + static_cast<std::size_t>(r) * layer.in_dim;
      const double* whr = layer.wh.data() + static_cast<std::size_t>(r) * h;
      double s = layer.b[r];
      for (int i = 0; i < layer.in_dim; ++i) s += wxr[i] * x[i];
      for (int j = 0; j < h; ++j) s += whr[j] * h_prev[j];
      pre[r] = s;
    }
    Vec gi(h), gf(h), gg(h), go(h), c(h), ht(h), tc(h);
    for (int j = 0; j < h; ++j) {
      gi[j] = sigmoid(pre[j]);
      gf[j] = sigmoid(pre[h + j]);
      gg[j] = std::tanh(pre[2 * h + j]);
      go[j] = sigmoid(pre[3 * h + j]);
      c[j] = gf[j] * c_prev[j] + gi[j] * gg[j];
      tc[j] = std::tanh(c[j]);
      ht[j] = go[j] * tc[j];
    }
    if (cache) {
      cache->gi.push_back(gi); cache->gf.push_back(gf); cache->gg.push_back(gg);
      cache->go.push_back(go); cache->c.push_back(c); cache->h.push_back(ht);
      cache->tanh_c.push_back(tc);
    }
    hs.push_back(ht);
    h_prev = hs.back();
    c_prev = std::move(c);
  }
  return hs;
}

// backpropagation through time; accumulates parameter grads, returns dX
inline std::vector<Vec> lstm_backward(LstmLayer& layer, const LstmCache& cache,
                                      const std::vector<Vec>& dh_out) {
  if (cache.steps == 0) throw Error(ErrorCode::state, "lstm_backward: no cached forward");
  if (dh_out.size() != static_cast<std::size_t>(cache.steps))
    throw Error(ErrorCode::shape_mismatch, "lstm_backward: grad length mismatch");
  const int h = layer.hidden;
  std::vector<Vec> dx(cache.steps, Vec(layer.in_dim, 0.0));
  Vec dh_next(h, 0.0), dc_next(h, 0.0);
  Vec dpre(static_cast<std::size_t>(4) * h);
  for (int t = cache.steps - 1; t >= 0; --t) {
    const Vec& gi = cache.gi[t];
    const Vec& gf = cache.gf[t];
    const Vec& gg = cache.gg[t];
    const Vec& go = cache.go[t];
    const Vec& tc = cache.tanh_c[t];
    const Vec* c_prev = t > 0 ? &cache.c[t - 1] : nullptr;
    const Vec* h_prev = t > 0 ? &cache.h[t - 1] : nullptr;
    for (int j = 0; j < h; ++j) {
      const double dh = dh_out[t][j] + dh_next[j];
      const double dc = dh * go[j] * (1.0 - tc[j] * tc[j]) + dc_next[j];
      const double cp = c_prev ? (*c_prev)[j] : 0.0;
      dpre[j] = dc * gg[j] * gi[j] * (1.0 - gi[j]);              // d input gate
      dpre[h + j] = dc * cp * gf[j] * (1.0 - gf[j]);             // d forget gate
      dpre[2 * h + j] = dc * gi[j] * (1.0 - gg[j] * gg[j]);      // d cell candidate
      dpre[3 * h + j] = dh * tc[j] * go[j] * (1.0 - go[j]);      // d output gate
      dc_next[j] = dc * gf[j];
    }
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    for (int r = 0; r < 4 * h; ++r) {
      const double dz = dpre[r];
      double* gwxr = layer.gwx.data() + static_cast<std::size_t>(r) * layer.in_dim;
      double* gwhr = layer.gwh.data() + static_cast<std::size_t>(r) * h;
      const double* wxr = layer.wx.data() + static_cast<std::size_t>(r) * layer.in_dim;
      const double* whr = layer.wh.data() + static_cast<std::size_t>(r) * h;
      const Vec& xt = cache.x[t];
      for (int i = 0; i < layer.in_dim; ++i) {
        gwxr[i] += dz * xt[i];
        dx[t][i] += dz * wxr[i];
      }
      if (h_prev) {
        for (int j = 0; j < h; ++j) {
          gwhr[j] += dz * (*h_prev)[j];
          dh_next[j] += dz * whr[j];
        }
      }
      layer.gb[r] += dz;
    }
  }
  return dx;
}

// ---- losses ----

inline constexpr double kProbClamp = 1e-7;

inline double clamp_prob(double p) {
  return std::clamp(p, kProbClamp, 1.0 - kProbClamp);
}

inline double bce(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorCode::shape_mismatch, "bce: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double p = clamp_prob(yhat[i]);
    s += -(y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p));
  }
  return s / static_cast<double>(y.size());
}

inline double mse(std::span<const double> y, std::span<const double> yhat) {
  if (y.size() != yhat.size()) throw Error(ErrorCode::shape_mismatch, "mse: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = yhat[i] - y[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

// d/dyhat of a single BCE element (before any mean scaling); the clamp has
// zero derivative in its saturation region, so exact-match 0/1 targets
// produce no pull
inline double bce_grad_element(double y, double yhat) {
  if (yhat <= kProbClamp || yhat >= 1.0 - kProbClamp) return 0.0;
  return -(y / yhat) + (1.0 - y) / (1.0 - yhat);
}

inline double bce_scalar(double y, double yhat) {
  const double p = clamp_prob(yhat);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

// ---- Adam ----

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double epoch_decay = 0.97;
};

struct AdamState {
  AdamConfig cfg;
  std::int64_t step = 0;
  int epoch = 0;
  std::vector<Vec> m, v;

  void init(const ParamList& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.value->size(), 0.0);
      v.emplace_back(p.value->size(), 0.0);
    }
  }

  double current_lr() const { return cfg.lr * std::pow(cfg.epoch_decay, epoch); }
};

inline void adam_step(const ParamList& params, AdamState& state) {
  if (state.m.size() != params.size()) state.init(params);
  ++state.step;
  const double lr = state.current_lr();
  const double bc1 = 1.0 - std::pow(state.cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Vec& w = *params[k].value;
    const Vec& g = *params[k].grad;
    Vec& m = state.m[k];
    Vec& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.cfg.beta1 * m[i] + (1.0 - state.cfg.beta1) * g[i];
      v[i] = state.cfg.beta2 * v[i] + (1.0 - state.cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.cfg.eps);
    }
  }
}

// ---- training loop with early stopping ----

struct TrainOptions {
  int max_epochs = 100;
  int patience = 10;  // epochs without validation improvement before stopping
  int batch_size = 8;
  double lr = 0.001;
  double epoch_decay = 0.97;
  std::uint64_t seed = 0;
};

struct TrainLog {
  int epochs_run = 0;
  double best_val_loss = 0.0;
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch (index 0 = before any update)
};

// Generic skeleton: shuffles indices each epoch, calls `run_batch` per
// mini-batch (forward+backward+step), tracks validation loss, and restores
// the best-validation parameters at the end.
template <typename RunBatch, typename EvalVal>
TrainLog train_loop(int n_train, const ParamList& params, AdamState& adam,
                    const TrainOptions& opts, RunBatch&& run_batch, EvalVal&& eval_val) {
  TrainLog log;
  Rng shuffle_rng(substream(opts.seed, "shuffle"));
  std::vector<int> order(static_cast<std::size_t>(n_train));
  for (int i = 0; i < n_train; ++i) order[i] = i;

  double best = eval_val();
  log.val_loss.push_back(best);
  log.best_val_loss = best;
  auto best_snap = snapshot_params(params);
  int since_best = 0;

  for (int epoch = 0; epoch < opts.max_epochs; ++epoch) {
    adam.epoch = epoch;
    // Fisher-Yates with the run's own stream
    for (int i = n_train - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng.below(i + 1))]);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < n_train; start += opts.batch_size) {
      const int end = std::min(n_train, start + opts.batch_size);
      epoch_loss += run_batch(std::span<const int>(order.data() + start, end - start));
      ++batches;
    }
    log.train_loss.push_back(batches > 0 ? epoch_loss / batches : 0.0);
    log.epochs_run = epoch + 1;

    const double val = eval_val();
    log.val_loss.push_back(val);
    if (val < best - 1e-12) {
      best = val;
      best_snap = snapshot_params(params);
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      break;
    }
  }
  restore_params(params, best_snap);
  log.best_val_loss = best;
  return log;
}

// ---- checkpoint io ----
//
// "TOBM", version u16, model kind u32, layer count u32; per layer a manifest
// entry (type u8, activation u8, dims u32 x2), then for every layer its
// parameter vectors as raw little-endian f64 in declaration order.

inline constexpr char kModelMagic[4] = {'T', 'O', 'B', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

enum class LayerKind : std::uint8_t { dense = 0, lstm = 1, scaler = 2 };

struct ManifestEntry {
  LayerKind kind;
  std::uint8_t activation;
  std::uint32_t dim0, dim1;
};

class CheckpointWriter {
 public:
  CheckpointWriter(const std::filesystem::path& path, std::uint32_t model_kind,
                   std::uint32_t n_entries)
      : os_(path, std::ios::binary) {
    if (!os_) throw Error(ErrorCode::path, "cannot open for writing: " + path.string());
    os_.write(kModelMagic, 4);
    write_le<std::uint16_t>(os_, kModelFormatVersion);
    write_le<std::uint32_t>(os_, model_kind);
    write_le<std::uint32_t>(os_, n_entries);
  }

  void manifest(const ManifestEntry& e) {
    write_le<std::uint8_t>(os_, static_cast<std::uint8_t>(e.kind));
    write_le<std::uint8_t>(os_, e.activation);
    write_le<std::uint32_t>(os_, e.dim0);
    write_le<std::uint32_t>(os_, e.dim1);
  }

  void values(const Vec& v) {
    os_.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
  }

  void finish() {
    if (!os_) throw Error(ErrorCode::path, "short checkpoint write");
  }

 private:
  std::ofstream os_;
};

class CheckpointReader {
 public:
  CheckpointReader(const std::filesystem::path& path, std::uint32_t expected_kind)
      : is_(path, std::ios::binary) {
    if (!is_) throw Error(ErrorCode::path, "cannot open checkpoint: " + path.string());
    char magic[4] = {};
    is_.read(magic, 4);
    std::uint16_t version = 0;
    if (!is_ || std::memcmp(magic, kModelMagic, 4) != 0 || !read_le(is_, version) ||
        version != kModelFormatVersion)
      throw Error(ErrorCode::malformed_header, "bad checkpoint header: " + path.string());
    std::uint32_t kind = 0;
    if (!read_le(is_, kind) || kind != expected_kind)
      throw Error(ErrorCode::malformed_header, "checkpoint holds a different model kind: " + path.string());
    if (!read_le(is_, n_entries_))
      throw Error(ErrorCode::malformed_header, "bad checkpoint header: " + path.string());
  }

  std::uint32_t entries() const { return n_entries_; }

  ManifestEntry manifest() {
    std::uint8_t kind = 0, act = 0;
    std::uint32_t d0 = 0, d1 = 0;
    if (!read_le(is_, kind) || !read_le(is_, act) || !read_le(is_, d0) || !read_le(is_, d1))
      throw Error(ErrorCode::truncated_payload, "checkpoint manifest truncated");
    return {static_cast<LayerKind>(kind), act, d0, d1};
  }

  void values(Vec& v) {
    is_.read(reinterpret_cast<char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<std::size_t>(is_.gcount()) != v.size() * sizeof(double))
      throw Error(ErrorCode::truncated_payload, "checkpoint parameters truncated");
  }

 private:
  std::ifstream is_;
  std::uint32_t n_entries_ = 0;
};

inline void write_dense(CheckpointWriter& wtr, const DenseLayer& l) {
  wtr.values(l.w);
  wtr.values(l.b);
}

inline DenseLayer read_dense(CheckpointReader& rdr, const ManifestEntry& e) {
  DenseLayer l(static_cast<int>(e.dim0), static_cast<int>(e.dim1),
               static_cast<Activation>(e.activation));
  rdr.values(l.w);
  rdr.values(l.b);
  return l;
}

inline void write_lstm(CheckpointWriter& wtr, const LstmLayer& l) {
  wtr.values(l.wx);
  wtr.values(l.wh);
  wtr.values(l.b);
}

inline LstmLayer read_lstm(CheckpointReader& rdr, const ManifestEntry& e) {
  LstmLayer l(static_cast<int>(e.dim0), static_cast<int>(e.dim1));
  rdr.values(l.wx);
  rdr.values(l.wh);
  rdr.values(l.b);
  return l;
}

}  // namespace tob::nn
