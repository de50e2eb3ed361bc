#pragma once

// Run configuration and the file-based pipeline stages. Every stage reads
// and writes artifacts on disk, so a full run and a manually chained
// sequence of CLI invocations produce identical bytes. All randomness
// derives from the single run seed through named substreams.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tob/aggregation.hpp"
#include "tob/common.hpp"
#include "tob/eval.hpp"
#include "tob/fusion.hpp"
#include "tob/normalize.hpp"
#include "tob/synthgen.hpp"
#include "tob/thermal_io.hpp"
#include "tob/windowing.hpp"

namespace tob {

namespace fs = std::filesystem;

struct RunConfig {
  std::uint64_t seed = 42;

  // scene (desk-scale defaults; the generator type itself defaults to full
  // sensor resolution)
  double duration_s = 120.0;
  double frame_rate = 8.33;
  int height = 63;
  int width = 84;
  double background_temp_mean = 300.0;
  double skin_temp_mean = 700.0;
  double noise_sigma = 5.0;
  double newborn_emergence_ramp_s = 3.0;
  double occlusion_rate = 0.01;
  double adult_temp_offset = 50.0;
  double equipment_temp_mean = 560.0;

  // corpus
  int n_train_videos = 100;
  int n_test_videos = 35;
  double style_mix = 10.0 / 35.0;  // fraction of operating-theater episodes
  double val_fraction = 0.15;

  // normalization
  int gmm_k = 3;
  double gmm_tol = 1e-6;
  int gmm_max_iter = 200;
  double skin_band_lo = 512.0;
  double skin_band_hi = 921.6;
  double delta_lo = 61.44;
  double delta_hi = 61.44;
  int sample_stride_frames = 10;
  int sample_stride_pixels = 3;

  // windowing
  int clip_frames = 25;
  double clip_stride_s = 1.0;

  // training
  int batch_size = 8;
  int max_epochs = 100;
  int patience = 10;
  double lr_head = 0.01;
  double lr_fusion = 0.0001;
  double lr_aux = 0.001;
  double lr_epoch_decay = 0.97;

  // aggregation
  int agg_window_s = 10;
  int agg_stride_s = 1;
  double alpha1 = 0.4;
  double alpha2 = 0.4;
  double alpha3 = 0.2;
  double gamma = 0.95;
  double aux_channel_dropout = 0.10;

  // baselines / evaluation
  int fir_taps = 21;
  double hct_theta = 0.9;
  double clf_threshold = 0.5;

  SceneConfig scene_config() const {
    SceneConfig cfg;
    cfg.duration_s = duration_s;
    cfg.frame_rate = frame_rate;
    cfg.height = height;
    cfg.width = width;
    cfg.tob_s = duration_s / 2.0;  // corpus generation draws per-video values
    cfg.background_temp_mean = background_temp_mean;
    cfg.skin_temp_mean = skin_temp_mean;
    cfg.noise_sigma = noise_sigma;
    cfg.newborn_emergence_ramp_s = newborn_emergence_ramp_s;
    cfg.occlusion_rate = occlusion_rate;
    cfg.adult_temp_offset = adult_temp_offset;
    cfg.equipment_temp_mean = equipment_temp_mean;
    return cfg;
  }

  NormalizationParams normalization_params() const {
    NormalizationParams p;
    p.delta_lo = delta_lo;
    p.delta_hi = delta_hi;
    p.skin_band_lo = skin_band_lo;
    p.skin_band_hi = skin_band_hi;
    return p;
  }

  void validate() const {
    scene_config().validate();
    normalization_params().validate();
    if (n_train_videos < 1 || n_test_videos < 1)
      throw Error(ErrorCode::config, "corpus sizes must be >= 1");
    if (style_mix < 0 || style_mix > 1) throw Error(ErrorCode::config, "style_mix must be in [0,1]");
    if (val_fraction <= 0 || val_fraction >= 1)
      throw Error(ErrorCode::config, "val_fraction must be in (0,1)");
    if (gmm_k < 1) throw Error(ErrorCode::config, "gmm_k must be >= 1");
    if (sample_stride_frames < 1 || sample_stride_pixels < 1)
      throw Error(ErrorCode::config, "sample strides must be >= 1");
    if (clip_frames < 2) throw Error(ErrorCode::config, "clip_frames must be >= 2");
    if (!(clip_stride_s > 0)) throw Error(ErrorCode::config, "clip_stride_s must be > 0");
    if (batch_size < 1 || max_epochs < 1 || patience < 1)
      throw Error(ErrorCode::config, "batch_size, max_epochs, patience must be >= 1");
    if (agg_window_s < 1 || agg_stride_s < 1)
      throw Error(ErrorCode::config, "agg_window_s and agg_stride_s must be >= 1");
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0)
      throw Error(ErrorCode::config, "loss weights must be >= 0");
    if (!(gamma > 0)) throw Error(ErrorCode::config, "gamma must be > 0");
    if (fir_taps < 1 || fir_taps % 2 == 0)
      throw Error(ErrorCode::config, "fir_taps must be odd and >= 1");
    if (!(hct_theta > 0) || !(hct_theta < 1))
      throw Error(ErrorCode::config, "hct_theta must be in (0,1)");
    if (aux_channel_dropout < 0 || aux_channel_dropout > 1)
      throw Error(ErrorCode::config, "aux_channel_dropout must be in [0,1]");
  }
};

// ---- flat key = value config files ----

namespace detail {

template <typename T>
void parse_into(const std::string& key, const std::string& value, T& out) {
  std::istringstream ss(value);
  ss >> out;
  if (ss.fail()) throw Error(ErrorCode::config, "bad value for key '" + key + "': " + value);
}

}  // namespace detail

inline void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_into;
  if (key == "seed") parse_into(key, value, cfg.seed);
  else if (key == "duration_s") parse_into(key, value, cfg.duration_s);
  else if (key == "frame_rate") parse_into(key, value, cfg.frame_rate);
  else if (key == "height") parse_into(key, value, cfg.height);
  else if (key == "width") parse_into(key, value, cfg.width);
  else if (key == "background_temp_mean") parse_into(key, value, cfg.background_temp_mean);
  else if (key == "skin_temp_mean") parse_into(key, value, cfg.skin_temp_mean);
  else if (key == "noise_sigma") parse_into(key, value, cfg.noise_sigma);
  else if (key == "newborn_emergence_ramp_s") parse_into(key, value, cfg.newborn_emergence_ramp_s);
  else if (key == "occlusion_rate") parse_into(key, value, cfg.occlusion_rate);
  else if (key == "adult_temp_offset") parse_into(key, value, cfg.adult_temp_offset);
  else if (key == "equipment_temp_mean") parse_into(key, value, cfg.equipment_temp_mean);
  else if (key == "n_train_videos") parse_into(key, value, cfg.n_train_videos);
  else if (key == "n_test_videos") parse_into(key, value, cfg.n_test_videos);
  else if (key == "style_mix") parse_into(key, value, cfg.style_mix);
  else if (key == "val_fraction") parse_into(key, value, cfg.val_fraction);
  else if (key == "gmm_k") parse_into(key, value, cfg.gmm_k);
  else if (key == "gmm_tol") parse_into(key, value, cfg.gmm_tol);
  else if (key == "gmm_max_iter") parse_into(key, value, cfg.gmm_max_iter);
  else if (key == "skin_band_lo") parse_into(key, value, cfg.skin_band_lo);
  else if (key == "skin_band_hi") parse_into(key, value, cfg.skin_band_hi);
  else if (key == "delta_lo") parse_into(key, value, cfg.delta_lo);
  else if (key == "delta_hi") parse_into(key, value, cfg.delta_hi);
  else if (key == "sample_stride_frames") parse_into(key, value, cfg.sample_stride_frames);
  else if (key == "sample_stride_pixels") parse_into(key, value, cfg.sample_stride_pixels);
  else if (key == "clip_frames") parse_into(key, value, cfg.clip_frames);
  else if (key == "clip_stride_s") parse_into(key, value, cfg.clip_stride_s);
  else if (key == "batch_size") parse_into(key, value, cfg.batch_size);
  else if (key == "max_epochs") parse_into(key, value, cfg.max_epochs);
  else if (key == "patience") parse_into(key, value, cfg.patience);
  else if (key == "lr_head") parse_into(key, value, cfg.lr_head);
  else if (key == "lr_fusion") parse_into(key, value, cfg.lr_fusion);
  else if (key == "lr_aux") parse_into(key, value, cfg.lr_aux);
  else if (key == "lr_epoch_decay") parse_into(key, value, cfg.lr_epoch_decay);
  else if (key == "agg_window_s") parse_into(key, value, cfg.agg_window_s);
  else if (key == "agg_stride_s") parse_into(key, value, cfg.agg_stride_s);
  else if (key == "alpha1") parse_into(key, value, cfg.alpha1);
  else if (key == "alpha2") parse_into(key, value, cfg.alpha2);
  else if (key == "alpha3") parse_into(key, value, cfg.alpha3);
  else if (key == "gamma") parse_into(key, value, cfg.gamma);
  else if (key == "aux_channel_dropout") parse_into(key, value, cfg.aux_channel_dropout);
  else if (key == "fir_taps") parse_into(key, value, cfg.fir_taps);
  else if (key == "hct_theta") parse_into(key, value, cfg.hct_theta);
  else if (key == "clf_threshold") parse_into(key, value, cfg.clf_threshold);
  else throw Error(ErrorCode::config, "unknown config key: " + key);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::path, "cannot open config file: " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::config, path.string() + ":" + std::to_string(lineno) +
                                         ": expected key = value");
    apply_config_entry(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw Error(ErrorCode::config, "override must look like key=value: " + assignment);
  apply_config_entry(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

inline void write_resolved_config(const RunConfig& cfg, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::path, "cannot write config: " + path.string());
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  os << "seed = " << cfg.seed << "\n";
  os << "duration_s = " << num(cfg.duration_s) << "\n";
  os << "frame_rate = " << num(cfg.frame_rate) << "\n";
  os << "height = " << cfg.height << "\n";
  os << "width = " << cfg.width << "\n";
  os << "background_temp_mean = " << num(cfg.background_temp_mean) << "\n";
  os << "skin_temp_mean = " << num(cfg.skin_temp_mean) << "\n";
  os << "noise_sigma = " << num(cfg.noise_sigma) << "\n";
  os << "newborn_emergence_ramp_s = " << num(cfg.newborn_emergence_ramp_s) << "\n";
  os << "occlusion_rate = " << num(cfg.occlusion_rate) << "\n";
  os << "adult_temp_offset = " << num(cfg.adult_temp_offset) << "\n";
  os << "equipment_temp_mean = " << num(cfg.equipment_temp_mean) << "\n";
  os << "n_train_videos = " << cfg.n_train_videos << "\n";
  os << "n_test_videos = " << cfg.n_test_videos << "\n";
  os << "style_mix = " << num(cfg.style_mix) << "\n";
  os << "val_fraction = " << num(cfg.val_fraction) << "\n";
  os << "gmm_k = " << cfg.gmm_k << "\n";
  os << "gmm_tol = " << num(cfg.gmm_tol) << "\n";
  os << "gmm_max_iter = " << cfg.gmm_max_iter << "\n";
  os << "skin_band_lo = " << num(cfg.skin_band_lo) << "\n";
  os << "skin_band_hi = " << num(cfg.skin_band_hi) << "\n";
  os << "delta_lo = " << num(cfg.delta_lo) << "\n";
  os << "delta_hi = " << num(cfg.delta_hi) << "\n";
  os << "sample_stride_frames = " << cfg.sample_stride_frames << "\n";
  os << "sample_stride_pixels = " << cfg.sample_stride_pixels << "\n";
  os << "clip_frames = " << cfg.clip_frames << "\n";
  os << "clip_stride_s = " << num(cfg.clip_stride_s) << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  os << "max_epochs = " << cfg.max_epochs << "\n";
  os << "patience = " << cfg.patience << "\n";
  os << "lr_head = " << num(cfg.lr_head) << "\n";
  os << "lr_fusion = " << num(cfg.lr_fusion) << "\n";
  os << "lr_aux = " << num(cfg.lr_aux) << "\n";
  os << "lr_epoch_decay = " << num(cfg.lr_epoch_decay) << "\n";
  os << "agg_window_s = " << cfg.agg_window_s << "\n";
  os << "agg_stride_s = " << cfg.agg_stride_s << "\n";
  os << "alpha1 = " << num(cfg.alpha1) << "\n";
  os << "alpha2 = " << num(cfg.alpha2) << "\n";
  os << "alpha3 = " << num(cfg.alpha3) << "\n";
  os << "gamma = " << num(cfg.gamma) << "\n";
  os << "aux_channel_dropout = " << num(cfg.aux_channel_dropout) << "\n";
  os << "fir_taps = " << cfg.fir_taps << "\n";
  os << "hct_theta = " << num(cfg.hct_theta) << "\n";
  os << "clf_threshold = " << num(cfg.clf_threshold) << "\n";
}

// ---- score CSV formats ----

inline void write_scores_csv(const ScoreSeries& s, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::path, "cannot write scores: " + path.string());
  os << "t,p_fusion,p_vnb\n";
  char buf[128];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.9f,%.9f\n", s.t[i], s.p_fusion[i], s.p_vnb[i]);
    os << buf;
  }
}

inline void write_detect_csv(const ScoreSeries& s, const AssembledPredictions& pred,
                             const fs::path& path) {
  if (pred.y_evt.size() != s.size())
    throw Error(ErrorCode::shape_mismatch, "write_detect_csv: prediction length mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::path, "cannot write scores: " + path.string());
  os << "t,p_fusion,p_vnb,y_evt_hat,y_tr_hat,y_joint_hat\n";
  char buf[192];
  for (std::size_t i = 0; i < s.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.9f,%.9f,%.9f,%.9f,%.9f\n", s.t[i], s.p_fusion[i],
                  s.p_vnb[i], pred.y_evt[i], pred.y_tr[i], pred.y_joint[i]);
    os << buf;
  }
}

struct DetectCsv {
  ScoreSeries scores;
  AssembledPredictions predictions;  // empty when the file has score columns only
};

inline DetectCsv read_scores_csv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::path, "cannot open scores: " + path.string());
  std::string header;
  if (!std::getline(is, header)) throw Error(ErrorCode::malformed_header, "empty CSV: " + path.string());
  const bool extended = header.find("y_evt_hat") != std::string::npos;
  DetectCsv out;
  std::string line;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) row.push_back(std::strtod(cell.c_str(), nullptr));
    if (row.size() < 3 || (extended && row.size() < 6))
      throw Error(ErrorCode::malformed_header, "short CSV row in " + path.string());
    out.scores.t.push_back(row[0]);
    out.scores.p_fusion.push_back(row[1]);
    out.scores.p_vnb.push_back(row[2]);
    if (extended) {
      out.predictions.y_evt.push_back(row[3]);
      out.predictions.y_tr.push_back(row[4]);
      out.predictions.y_joint.push_back(row[5]);
    }
  }
  return out;
}

// ---- corpus helpers ----

inline std::vector<fs::path> list_videos(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::path, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".tobv") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorCode::path, "no .tobv videos in " + dir.string());
  return out;
}

inline std::vector<fs::path> list_files(const fs::path& dir, const std::string& extension) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::path, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == extension) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> val;
};

// deterministic split by sorted position: leading share trains, tail validates
inline SplitIndices split_train_val(int n, double val_fraction) {
  SplitIndices s;
  int n_val = static_cast<int>(std::llround(val_fraction * n));
  n_val = std::clamp(n_val, n >= 2 ? 1 : 0, n - 1);
  for (int i = 0; i < n - n_val; ++i) s.train.push_back(i);
  for (int i = n - n_val; i < n; ++i) s.val.push_back(i);
  return s;
}

// ---- stages ----

inline void stage_generate(const RunConfig& cfg, int n_videos, double style_mix,
                           std::uint64_t seed, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const auto episodes = generate_corpus(n_videos, style_mix, cfg.scene_config(), seed);
  for (const auto& ep : episodes) {
    save_video(ep.video, out_dir / (ep.video.video_id + ".tobv"));
    save_meta(ep.truth.meta(), out_dir / (ep.video.video_id + ".meta"));
  }
}

struct NormalizeOutcome {
  GmmFit fit;
  SkinModeSelection selection;
};

inline void write_fit_file(const NormalizeOutcome& out, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::path, "cannot write fit file: " + path.string());
  auto line = [&](const char* key, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    os << key << ": " << buf << "\n";
  };
  os << "k: " << out.fit.k << "\n";
  for (int j = 0; j < out.fit.k; ++j) {
    line(("mean_" + std::to_string(j)).c_str(), out.fit.means[static_cast<std::size_t>(j)]);
    line(("variance_" + std::to_string(j)).c_str(), out.fit.variances[static_cast<std::size_t>(j)]);
    line(("weight_" + std::to_string(j)).c_str(), out.fit.weights[static_cast<std::size_t>(j)]);
  }
  line("selected_mean", out.selection.mean);
  os << "fallback: " << (out.selection.fallback ? 1 : 0) << "\n";
  line("log_likelihood", out.fit.log_likelihood);
  os << "iterations_used: " << out.fit.iterations_used << "\n";
}

// normalizes one video; copies the ground-truth sidecar when present
inline NormalizeOutcome stage_normalize(const RunConfig& cfg, const fs::path& in_video,
                                        const fs::path& out_video) {
  const ThermalVideo raw = load_video(in_video);
  auto result = normalize_with_gmm(raw, cfg.gmm_k, cfg.normalization_params(),
                                   cfg.sample_stride_frames, cfg.sample_stride_pixels, cfg.gmm_tol,
                                   cfg.gmm_max_iter, /*seed=*/0);
  fs::create_directories(out_video.parent_path().empty() ? "." : out_video.parent_path());
  save_video(result.video, out_video);
  NormalizeOutcome outcome{std::move(result.fit), result.selection};
  fs::path fit_path = out_video;
  fit_path.replace_extension(".fit");
  write_fit_file(outcome, fit_path);
  fs::path in_meta = in_video;
  in_meta.replace_extension(".meta");
  if (fs::exists(in_meta)) {
    fs::path out_meta = out_video;
    out_meta.replace_extension(".meta");
    fs::copy_file(in_meta, out_meta, fs::copy_options::overwrite_existing);
  }
  return outcome;
}

namespace detail {

struct CorpusVideo {
  NormalizedVideo video;
  VideoMeta meta;
};

inline CorpusVideo load_corpus_video(const fs::path& video_path) {
  CorpusVideo cv;
  cv.video = load_normalized_video(video_path);
  fs::path meta_path = video_path;
  meta_path.replace_extension(".meta");
  cv.meta = load_meta(meta_path);
  return cv;
}

}  // namespace detail

inline void stage_train_image_head(const RunConfig& cfg, const fs::path& norm_dir,
                                   const fs::path& out_model, std::uint64_t seed) {
  const auto videos = list_videos(norm_dir);
  const auto split = split_train_val(static_cast<int>(videos.size()), cfg.val_fraction);
  LabeledFrameSet train_set, val_set;
  auto collect = [&](const std::vector<int>& idx, LabeledFrameSet& set) {
    for (int i : idx) {
      const auto cv = detail::load_corpus_video(videos[static_cast<std::size_t>(i)]);
      const auto ts =
          clip_timestamps(cv.video.n_frames, cv.video.frame_rate, cfg.clip_frames, cfg.clip_stride_s);
      for (double t : ts) {
        const int end = end_frame_for(t, cv.video.frame_rate);
        set.features.push_back(
            extract_static_features(cv.video.frame(end), cv.video.height, cv.video.width));
        const std::size_t sec = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(t))),
                                         cv.meta.vnb_mask.size() - 1);
        set.labels.push_back(cv.meta.vnb_mask[sec] ? 1.0 : 0.0);
      }
    }
  };
  collect(split.train, train_set);
  collect(split.val, val_set);
  HeadTrainOptions opts;
  opts.train.max_epochs = cfg.max_epochs;
  opts.train.patience = cfg.patience;
  opts.train.batch_size = cfg.batch_size;
  opts.train.lr = cfg.lr_head;
  opts.train.epoch_decay = cfg.lr_epoch_decay;
  opts.train.seed = seed;
  const ImageHead head = train_image_head(train_set, val_set, opts);
  fs::create_directories(out_model.parent_path().empty() ? "." : out_model.parent_path());
  save_image_head(head, out_model);
}

inline void stage_train_fusion(const RunConfig& cfg, const fs::path& norm_dir,
                               const fs::path& head_model, const fs::path& out_model,
                               std::uint64_t seed) {
  const ImageHead head = load_image_head(head_model);
  const auto videos = list_videos(norm_dir);
  const auto split = split_train_val(static_cast<int>(videos.size()), cfg.val_fraction);
  LabeledClipSet train_set, val_set;
  auto collect = [&](const std::vector<int>& idx, LabeledClipSet& set) {
    for (int i : idx) {
      const auto cv = detail::load_corpus_video(videos[static_cast<std::size_t>(i)]);
      const auto cache = build_feature_cache(cv.video);
      const auto ts =
          clip_timestamps(cv.video.n_frames, cv.video.frame_rate, cfg.clip_frames, cfg.clip_stride_s);
      for (double t : ts) {
        const int end = end_frame_for(t, cv.video.frame_rate);
        set.static_avg.push_back(static_average_from_cache(cache, end, cfg.clip_frames));
        set.temporal.push_back(temporal_features_from_cache(cache, end, cfg.clip_frames));
        set.labels.push_back(clip_label(t, cv.meta.tob_s, cv.meta.vnb_mask) ? 1.0 : 0.0);
      }
    }
  };
  collect(split.train, train_set);
  collect(split.val, val_set);
  FusionTrainOptions opts;
  opts.train.max_epochs = cfg.max_epochs;
  opts.train.patience = cfg.patience;
  opts.train.batch_size = cfg.batch_size;
  opts.train.lr = cfg.lr_fusion;
  opts.train.epoch_decay = cfg.lr_epoch_decay;
  opts.train.seed = seed;
  const auto result = train_fusion(train_set, val_set, head, opts);
  fs::create_directories(out_model.parent_path().empty() ? "." : out_model.parent_path());
  save_fusion_model(result.model, out_model);
}

inline ScoreSeries stage_score(const RunConfig& cfg, const fs::path& model_path,
                               const fs::path& video_path, const fs::path& out_csv,
                               bool pre_normalized) {
  const FusionModel model = load_fusion_model(model_path);
  NormalizedVideo video;
  if (pre_normalized) {
    video = load_normalized_video(video_path);
  } else {
    const ThermalVideo raw = load_video(video_path);
    video = normalize_with_gmm(raw, cfg.gmm_k, cfg.normalization_params(), cfg.sample_stride_frames,
                               cfg.sample_stride_pixels, cfg.gmm_tol, cfg.gmm_max_iter, 0)
                .video;
  }
  const ScoreSeries series = score_video(model, video, cfg.clip_frames, cfg.clip_stride_s);
  if (!out_csv.empty()) {
    fs::create_directories(out_csv.parent_path().empty() ? "." : out_csv.parent_path());
    write_scores_csv(series, out_csv);
  }
  return series;
}

inline void stage_train_agg(const RunConfig& cfg, const fs::path& scores_dir,
                            const fs::path& truth_dir, const fs::path& out_model,
                            std::uint64_t seed) {
  const auto csvs = list_files(scores_dir, ".csv");
  if (csvs.empty()) throw Error(ErrorCode::path, "no score CSVs in " + scores_dir.string());
  std::vector<AuxTrainData> data;
  for (const auto& p : csvs) {
    AuxTrainData d;
    d.scores = read_scores_csv(p).scores;
    const fs::path meta = truth_dir / (p.stem().string() + ".meta");
    d.tob_s = load_meta(meta).tob_s;
    data.push_back(std::move(d));
  }
  AuxTrainOptions opts;
  opts.train.max_epochs = cfg.max_epochs;
  opts.train.patience = cfg.patience;
  opts.train.batch_size = cfg.batch_size;
  opts.train.lr = cfg.lr_aux;
  opts.train.epoch_decay = cfg.lr_epoch_decay;
  opts.train.seed = seed;
  opts.weights = {cfg.alpha1, cfg.alpha2, cfg.alpha3};
  opts.window_s = cfg.agg_window_s;
  opts.stride_s = cfg.agg_stride_s;
  opts.channel_dropout = cfg.aux_channel_dropout;
  opts.val_fraction = cfg.val_fraction;
  const auto result = train_aux(data, opts);
  fs::create_directories(out_model.parent_path().empty() ? "." : out_model.parent_path());
  save_aux_model(result.model, out_model);
}

inline TobEstimate stage_detect(const RunConfig& cfg, const fs::path& fusion_path,
                                const fs::path& agg_path, const fs::path& video_path,
                                const fs::path& out_csv, bool pre_normalized) {
  const ScoreSeries series = stage_score(cfg, fusion_path, video_path, fs::path{}, pre_normalized);
  const AuxModel aux = load_aux_model(agg_path);
  const AssembledPredictions pred =
      aggregate_series(aux, series, cfg.agg_window_s, cfg.agg_stride_s);
  if (!out_csv.empty()) {
    fs::create_directories(out_csv.parent_path().empty() ? "." : out_csv.parent_path());
    write_detect_csv(series, pred, out_csv);
  }
  return estimate_tob(pred.y_joint, series.t, cfg.gamma);
}

// evaluation over a directory of detect CSVs plus ground truth
inline void stage_evaluate(const RunConfig& cfg, const fs::path& detect_dir,
                           const fs::path& truth_dir, const fs::path& out_report) {
  const auto csvs = list_files(detect_dir, ".csv");
  if (csvs.empty()) throw Error(ErrorCode::path, "no detect CSVs in " + detect_dir.string());

  std::vector<double> vnb_probs, vnb_labels, clip_probs, clip_labels_v;
  std::vector<TobError> err_threshold, err_fir, err_fir_hct, err_agg;
  for (const auto& p : csvs) {
    const DetectCsv csv = read_scores_csv(p);
    if (csv.predictions.y_joint.empty())
      throw Error(ErrorCode::malformed_header, "detect CSV lacks prediction columns: " + p.string());
    const VideoMeta meta = load_meta(truth_dir / (p.stem().string() + ".meta"));

    for (std::size_t i = 0; i < csv.scores.size(); ++i) {
      const double t = csv.scores.t[i];
      const std::size_t sec = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(t))),
                                       meta.vnb_mask.size() - 1);
      vnb_probs.push_back(csv.scores.p_vnb[i]);
      vnb_labels.push_back(meta.vnb_mask[sec] ? 1.0 : 0.0);
      clip_probs.push_back(csv.scores.p_fusion[i]);
      clip_labels_v.push_back(clip_label(t, meta.tob_s, meta.vnb_mask) ? 1.0 : 0.0);
    }

    err_threshold.push_back(
        tob_error(threshold_first(csv.scores.p_fusion, csv.scores.t), meta.tob_s));
    const auto smoothed = fir_filter(csv.scores.p_fusion, cfg.fir_taps);
    err_fir.push_back(tob_error(threshold_first(smoothed, csv.scores.t), meta.tob_s));
    err_fir_hct.push_back(tob_error(hct_detect(smoothed, csv.scores.t, cfg.hct_theta), meta.tob_s));
    err_agg.push_back(
        tob_error(estimate_tob(csv.predictions.y_joint, csv.scores.t, cfg.gamma), meta.tob_s));
  }

  std::vector<ClassificationRow> cls = {
      {"image_vnb", confusion(vnb_probs, vnb_labels, cfg.clf_threshold)},
      {"two_stream", confusion(clip_probs, clip_labels_v, cfg.clf_threshold)},
  };
  std::vector<TobRow> tob_rows = {
      {"threshold_first", error_stats(err_threshold)},
      {"fir", error_stats(err_fir)},
      {"fir_hct", error_stats(err_fir_hct)},
      {"two_stream_agg", error_stats(err_agg)},
  };
  write_report(out_report, cls, tob_rows);
}

// ---- full pipeline ----

struct PipelineResult {
  fs::path report;
  std::vector<std::pair<std::string, TobEstimate>> detections;
};

// Runs generate -> normalize -> train-image-head -> train-fusion -> score ->
// train-agg -> detect -> evaluate, writing every intermediate artifact under
// `out_dir` and a stages.txt log of equivalent per-stage CLI invocations.
inline PipelineResult run_pipeline(const RunConfig& cfg, const fs::path& out_dir,
                                   std::ostream* progress = nullptr) {
  cfg.validate();
  fs::create_directories(out_dir);
  std::ofstream stages(out_dir / "stages.txt", std::ios::binary);
  auto note = [&](const std::string& line) {
    stages << line << "\n";
    if (progress) *progress << line << "\n";
  };
  write_resolved_config(cfg, out_dir / "config_resolved.txt");

  auto stage_wrap = [&](const char* stage, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      throw Error(e.code(), std::string("stage ") + stage + ": " + e.what());
    }
  };

  char mix[32];
  std::snprintf(mix, sizeof(mix), "%.17g", cfg.style_mix);
  const std::uint64_t seed_gen_train = substream(cfg.seed, "generate/train");
  const std::uint64_t seed_gen_test = substream(cfg.seed, "generate/test");
  const std::uint64_t seed_head = substream(cfg.seed, "train-image-head");
  const std::uint64_t seed_fusion = substream(cfg.seed, "train-fusion");
  const std::uint64_t seed_agg = substream(cfg.seed, "train-agg");

  stage_wrap("generate", [&] {
    note("tob generate --config config_resolved.txt --n " + std::to_string(cfg.n_train_videos) +
         " --style-mix " + mix + " --seed " + std::to_string(seed_gen_train) +
         " --out corpus_train");
    stage_generate(cfg, cfg.n_train_videos, cfg.style_mix, seed_gen_train, out_dir / "corpus_train");
    note("tob generate --config config_resolved.txt --n " + std::to_string(cfg.n_test_videos) +
         " --style-mix " + mix + " --seed " + std::to_string(seed_gen_test) + " --out corpus_test");
    stage_generate(cfg, cfg.n_test_videos, cfg.style_mix, seed_gen_test, out_dir / "corpus_test");
  });

  stage_wrap("normalize", [&] {
    for (const char* which : {"train", "test"}) {
      const fs::path in_dir = out_dir / (std::string("corpus_") + which);
      const fs::path norm_dir = out_dir / (std::string("norm_") + which);
      for (const auto& v : list_videos(in_dir)) {
        const fs::path out = norm_dir / v.filename();
        note("tob normalize --config config_resolved.txt --in " +
             fs::relative(v, out_dir).string() + " --out " + fs::relative(out, out_dir).string());
        stage_normalize(cfg, v, out);
      }
    }
  });

  stage_wrap("train-image-head", [&] {
    note("tob train-image-head --config config_resolved.txt --corpus norm_train --out "
         "models/image_head.tobm --seed " +
         std::to_string(seed_head));
    stage_train_image_head(cfg, out_dir / "norm_train", out_dir / "models/image_head.tobm",
                           seed_head);
  });

  stage_wrap("train-fusion", [&] {
    note("tob train-fusion --config config_resolved.txt --corpus norm_train --head "
         "models/image_head.tobm --out models/fusion.tobm --seed " +
         std::to_string(seed_fusion));
    stage_train_fusion(cfg, out_dir / "norm_train", out_dir / "models/image_head.tobm",
                       out_dir / "models/fusion.tobm", seed_fusion);
  });

  stage_wrap("score", [&] {
    const auto videos = list_videos(out_dir / "norm_train");
    const auto split = split_train_val(static_cast<int>(videos.size()), cfg.val_fraction);
    for (int i : split.val) {
      const fs::path& v = videos[static_cast<std::size_t>(i)];
      const fs::path csv = out_dir / "scores_val" / (v.stem().string() + ".csv");
      note("tob score --config config_resolved.txt --model models/fusion.tobm --video " +
           fs::relative(v, out_dir).string() + " --scores-out " +
           fs::relative(csv, out_dir).string() + " --pre-normalized");
      stage_score(cfg, out_dir / "models/fusion.tobm", v, csv, /*pre_normalized=*/true);
    }
  });

  stage_wrap("train-agg", [&] {
    note("tob train-agg --config config_resolved.txt --scores scores_val --truth corpus_train "
         "--out models/agg.tobm --seed " +
         std::to_string(seed_agg));
    stage_train_agg(cfg, out_dir / "scores_val", out_dir / "corpus_train",
                    out_dir / "models/agg.tobm", seed_agg);
  });

  PipelineResult result;
  stage_wrap("detect", [&] {
    for (const auto& v : list_videos(out_dir / "norm_test")) {
      const fs::path csv = out_dir / "detect_test" / (v.stem().string() + ".csv");
      note("tob detect --config config_resolved.txt --model models/fusion.tobm --agg "
           "models/agg.tobm --video " +
           fs::relative(v, out_dir).string() + " --scores-out " +
           fs::relative(csv, out_dir).string() + " --pre-normalized");
      const TobEstimate est = stage_detect(cfg, out_dir / "models/fusion.tobm",
                                           out_dir / "models/agg.tobm", v, csv, true);
      result.detections.emplace_back(v.stem().string(), est);
    }
  });

  stage_wrap("evaluate", [&] {
    note("tob evaluate --config config_resolved.txt --runs . --out report.csv");
    stage_evaluate(cfg, out_dir / "detect_test", out_dir / "corpus_test", out_dir / "report.csv");
  });

  result.report = out_dir / "report.csv";
  return result;
}

}  // namespace tob
