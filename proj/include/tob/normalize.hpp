#pragma once

// Video-specific intensity normalization: fit a Gaussian mixture to sampled
// intensities, select the skin-temperature mode under band constraints, then
// clip to the range of interest around it and rescale to [0,1]. Anchoring at
// the fitted mode keeps relative temperature variations regardless of the
// sensor's absolute calibration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "tob/common.hpp"
#include "tob/thermal_io.hpp"

namespace tob {

struct GmmFit {
  int k = 0;
  std::vector<double> means;
  std::vector<double> variances;
  std::vector<double> weights;
  double selected_mean = 0.0;  // filled by select_skin_mode; defaults to largest mean
  double log_likelihood = 0.0;
  int iterations_used = 0;
  std::vector<double> log_likelihood_trace;  // one entry per EM iteration
};

struct NormalizationParams {
  // range of interest half-widths around the selected mean, in raw units
  double delta_lo = 61.44;
  double delta_hi = 61.44;
  // absolute band constraining skin-mode selection, in raw units
  double skin_band_lo = 512.0;   // 0.5 * 1024
  double skin_band_hi = 921.6;   // 0.9 * 1024

  void validate() const {
    if (!(delta_lo > 0) || !(delta_hi > 0))
      throw Error(ErrorCode::config, "delta_lo and delta_hi must be > 0");
    if (!(skin_band_lo < skin_band_hi))
      throw Error(ErrorCode::config, "skin_band_lo must be < skin_band_hi");
  }
};

// Deterministic EM for a 1-D Gaussian mixture. Means start at sample
// quantiles (k+1)/(K+1), variances at the sample variance, weights uniform.
// The seed only breaks ties when init quantiles coincide.
inline GmmFit fit_gmm(const std::vector<double>& samples, int k, double tol = 1e-6,
                      int max_iter = 200, std::uint64_t seed = 0) {
  if (k < 1) throw Error(ErrorCode::invalid_argument, "fit_gmm: k must be >= 1");
  const std::size_t n = samples.size();
  if (n < static_cast<std::size_t>(10 * k))
    throw Error(ErrorCode::invalid_argument, "fit_gmm: need at least 10*k samples");

  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double x : samples) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  if (var < 1e-12) throw Error(ErrorCode::degenerate_fit, "fit_gmm: samples have zero variance");

  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());

  GmmFit fit;
  fit.k = k;
  fit.means.resize(k);
  fit.variances.assign(k, var);
  fit.weights.assign(k, 1.0 / k);
  for (int j = 0; j < k; ++j) {
    const double q = static_cast<double>(j + 1) / (k + 1);
    fit.means[j] = sorted[static_cast<std::size_t>(q * static_cast<double>(n - 1))];
  }
  // coincident init means would never separate; jitter them apart
  Rng rng(seed);
  const double span = sorted.back() - sorted.front();
  for (int j = 1; j < k; ++j) {
    if (fit.means[j] - fit.means[j - 1] < 1e-9 * (span + 1.0))
      fit.means[j] += (1e-4 * span + 1e-9) * (1.0 + rng.uniform());
  }

  std::vector<double> resp(static_cast<std::size_t>(n) * k);
  double ll_prev = -std::numeric_limits<double>::infinity();
  const double log2pi = std::log(2.0 * 3.14159265358979323846);

  for (int iter = 1; iter <= max_iter; ++iter) {
    // E step (also yields the log-likelihood at current parameters)
    double ll = 0.0;
    std::vector<double> log_w(k), log_var(k), inv2v(k);
    for (int j = 0; j < k; ++j) {
      log_w[j] = std::log(fit.weights[j] + 1e-300);
      log_var[j] = std::log(fit.variances[j]);
      inv2v[j] = 0.5 / fit.variances[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      double* r = &resp[i * k];
      double mx = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < k; ++j) {
        const double d = samples[i] - fit.means[j];
        r[j] = log_w[j] - 0.5 * (log2pi + log_var[j]) - d * d * inv2v[j];
        mx = std::max(mx, r[j]);
      }
      double sum = 0.0;
      for (int j = 0; j < k; ++j) sum += std::exp(r[j] - mx);
      const double lse = mx + std::log(sum);
      ll += lse;
      for (int j = 0; j < k; ++j) r[j] = std::exp(r[j] - lse);
    }
    fit.log_likelihood = ll;
    fit.log_likelihood_trace.push_back(ll);
    fit.iterations_used = iter;
    if (iter > 1 && ll - ll_prev < tol * std::abs(ll_prev)) break;
    ll_prev = ll;

    // M step
    for (int j = 0; j < k; ++j) {
      double nk = 0.0, sx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nk += resp[i * k + j];
        sx += resp[i * k + j] * samples[i];
      }
      if (nk < 1e-300) throw Error(ErrorCode::degenerate_fit, "fit_gmm: component collapsed to zero weight");
      const double mu = sx / nk;
      double sv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = samples[i] - mu;
        sv += resp[i * k + j] * d * d;
      }
      fit.weights[j] = nk / static_cast<double>(n);
      fit.means[j] = mu;
      fit.variances[j] = sv / nk;
      if (fit.variances[j] < 1e-12)
        throw Error(ErrorCode::degenerate_fit, "fit_gmm: component variance collapsed");
    }
  }

  fit.selected_mean = *std::max_element(fit.means.begin(), fit.means.end());
  return fit;
}

struct SkinModeSelection {
  double mean = 0.0;
  bool fallback = false;  // no component mean fell inside the band
};

// Largest component mean inside the skin band; falls back to the largest
// mean overall when none qualifies.
inline SkinModeSelection select_skin_mode(const GmmFit& fit, const NormalizationParams& params) {
  params.validate();
  SkinModeSelection sel;
  double best_in_band = -std::numeric_limits<double>::infinity();
  double best_overall = -std::numeric_limits<double>::infinity();
  for (double m : fit.means) {
    best_overall = std::max(best_overall, m);
    if (m >= params.skin_band_lo && m <= params.skin_band_hi) best_in_band = std::max(best_in_band, m);
  }
  if (std::isfinite(best_in_band)) {
    sel.mean = best_in_band;
  } else {
    sel.mean = best_overall;
    sel.fallback = true;
  }
  return sel;
}

// phi: x -> (clamp(x, mu-dlo, mu+dhi) - (mu-dlo)) / (dlo+dhi)
inline double normalize_intensity(double x, double mu_hat, const NormalizationParams& params) {
  const double lo = mu_hat - params.delta_lo;
  const double hi = mu_hat + params.delta_hi;
  const double c = std::clamp(x, lo, hi);
  return (c - lo) / (params.delta_lo + params.delta_hi);
}

inline NormalizedVideo normalize_video(const ThermalVideo& video, double mu_hat,
                                       const NormalizationParams& params) {
  params.validate();
  if (!std::isfinite(mu_hat)) throw Error(ErrorCode::invalid_argument, "mu_hat must be finite");
  NormalizedVideo out;
  out.n_frames = video.n_frames;
  out.height = video.height;
  out.width = video.width;
  out.frame_rate = video.frame_rate;
  out.video_id = video.video_id;
  out.mu_hat = mu_hat;
  out.delta_lo = params.delta_lo;
  out.delta_hi = params.delta_hi;
  out.data.resize(video.data.size());
  const double lo = mu_hat - params.delta_lo;
  const double inv_range = 1.0 / (params.delta_lo + params.delta_hi);
  for (std::size_t i = 0; i < video.data.size(); ++i) {
    const double x = static_cast<double>(video.data[i]);
    const double c = std::clamp(x, lo, mu_hat + params.delta_hi);
    out.data[i] = static_cast<float>((c - lo) * inv_range);
  }
  return out;
}

// Deterministic subsampling: every stride_frames-th frame, every
// stride_pixels-th pixel along both axes.
inline std::vector<double> sample_intensities(const ThermalVideo& video, int stride_frames,
                                              int stride_pixels) {
  if (stride_frames < 1 || stride_pixels < 1)
    throw Error(ErrorCode::invalid_argument, "strides must be >= 1");
  std::vector<double> out;
  const std::size_t per_frame =
      (static_cast<std::size_t>(video.height) + stride_pixels - 1) / stride_pixels *
      ((static_cast<std::size_t>(video.width) + stride_pixels - 1) / stride_pixels);
  out.reserve((static_cast<std::size_t>(video.n_frames) / stride_frames + 1) * per_frame);
  for (int n = 0; n < video.n_frames; n += stride_frames) {
    const float* f = video.data.data() + static_cast<std::size_t>(n) * video.frame_size();
    for (int y = 0; y < video.height; y += stride_pixels)
      for (int x = 0; x < video.width; x += stride_pixels)
        out.push_back(static_cast<double>(f[static_cast<std::size_t>(y) * video.width + x]));
  }
  return out;
}

// convenience used by the CLI and the pipeline: full fit + selection + rescale
struct NormalizeResult {
  NormalizedVideo video;
  GmmFit fit;
  SkinModeSelection selection;
};

inline NormalizeResult normalize_with_gmm(const ThermalVideo& video, int k,
                                          const NormalizationParams& params, int stride_frames,
                                          int stride_pixels, double tol = 1e-6, int max_iter = 200,
                                          std::uint64_t seed = 0) {
  NormalizeResult result;
  const auto samples = sample_intensities(video, stride_frames, stride_pixels);
  result.fit = fit_gmm(samples, k, tol, max_iter, seed);
  result.selection = select_skin_mode(result.fit, params);
  result.fit.selected_mean = result.selection.mean;
  result.video = normalize_video(video, result.selection.mean, params);
  return result;
}

}  // namespace tob
