// Command-line front end for the thermal time-of-birth detection pipeline.
// Every subcommand is a thin wrapper over one pipeline stage; `run-all`
// chains them and logs the equivalent per-stage invocations to stages.txt.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tob/pipeline.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& common) {
  cmd->add_option("--config", common.config_path, "flat key = value config file");
  cmd->add_option("--set", common.overrides, "config override, key=value (repeatable)")
      ->take_all();
}

tob::RunConfig resolve_config(const CommonOpts& common) {
  tob::RunConfig cfg;
  if (!common.config_path.empty()) tob::load_config_file(cfg, common.config_path);
  for (const auto& o : common.overrides) tob::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

void print_fit(const tob::NormalizeOutcome& outcome) {
  const auto& fit = outcome.fit;
  std::printf("k: %d\n", fit.k);
  for (int j = 0; j < fit.k; ++j) {
    std::printf("mean_%d: %.9f\n", j, fit.means[static_cast<std::size_t>(j)]);
    std::printf("variance_%d: %.9f\n", j, fit.variances[static_cast<std::size_t>(j)]);
    std::printf("weight_%d: %.9f\n", j, fit.weights[static_cast<std::size_t>(j)]);
  }
  std::printf("selected_mean: %.9f\n", outcome.selection.mean);
  std::printf("fallback: %d\n", outcome.selection.fallback ? 1 : 0);
  std::printf("log_likelihood: %.9f\n", fit.log_likelihood);
  std::printf("iterations_used: %d\n", fit.iterations_used);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"thermal time-of-birth detection pipeline"};
  app.require_subcommand(1);

  // generate
  CommonOpts gen_common;
  int gen_n = 0;
  double gen_mix = -1.0;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "generate a synthetic corpus with ground truth");
  add_common(gen, gen_common);
  gen->add_option("--n", gen_n, "number of episodes (default: n_train_videos)");
  gen->add_option("--style-mix", gen_mix, "fraction of operating-theater episodes");
  gen->add_option("--seed", gen_seed, "corpus seed")->each([&](const std::string&) {
    gen_seed_set = true;
  });
  gen->add_option("--out", gen_out, "output directory")->required();

  // normalize
  CommonOpts norm_common;
  std::string norm_in, norm_out, norm_band;
  int norm_k = 0;
  auto* norm = app.add_subcommand("normalize", "GMM-normalize one thermal video");
  add_common(norm, norm_common);
  norm->add_option("--in", norm_in, "input raw video (.tobv)")->required();
  norm->add_option("--out", norm_out, "output normalized video (.tobv)")->required();
  norm->add_option("--k", norm_k, "mixture components");
  norm->add_option("--band", norm_band, "skin band as lo,hi in raw units");

  // train-image-head
  CommonOpts head_common;
  std::string head_corpus, head_out;
  std::uint64_t head_seed = 0;
  bool head_seed_set = false;
  auto* head = app.add_subcommand("train-image-head", "train the frame-level VNB head");
  add_common(head, head_common);
  head->add_option("--corpus", head_corpus, "normalized corpus directory")->required();
  head->add_option("--out", head_out, "output model path")->required();
  head->add_option("--seed", head_seed, "training seed")->each([&](const std::string&) {
    head_seed_set = true;
  });

  // train-fusion
  CommonOpts fus_common;
  std::string fus_corpus, fus_head, fus_out;
  std::uint64_t fus_seed = 0;
  bool fus_seed_set = false;
  auto* fus = app.add_subcommand("train-fusion", "train the two-stream fusion model");
  add_common(fus, fus_common);
  fus->add_option("--corpus", fus_corpus, "normalized corpus directory")->required();
  fus->add_option("--head", fus_head, "trained image head model")->required();
  fus->add_option("--out", fus_out, "output model path")->required();
  fus->add_option("--seed", fus_seed, "training seed")->each([&](const std::string&) {
    fus_seed_set = true;
  });

  // score
  CommonOpts score_common;
  std::string score_model, score_video, score_csv;
  bool score_prenorm = false;
  auto* score = app.add_subcommand("score", "produce per-second p_fusion/p_vnb traces");
  add_common(score, score_common);
  score->add_option("--model", score_model, "fusion model")->required();
  score->add_option("--video", score_video, "video to score")->required();
  score->add_option("--scores-out", score_csv, "output CSV")->required();
  score->add_flag("--pre-normalized", score_prenorm, "input video is already normalized");

  // train-agg
  CommonOpts agg_common;
  std::string agg_scores, agg_truth, agg_out;
  std::uint64_t agg_seed = 0;
  bool agg_seed_set = false;
  auto* agg = app.add_subcommand("train-agg", "train the score-aggregation model");
  add_common(agg, agg_common);
  agg->add_option("--scores", agg_scores, "directory of score CSVs")->required();
  agg->add_option("--truth", agg_truth, "directory with matching .meta ground truth")->required();
  agg->add_option("--out", agg_out, "output model path")->required();
  agg->add_option("--seed", agg_seed, "training seed")->each([&](const std::string&) {
    agg_seed_set = true;
  });

  // detect
  CommonOpts det_common;
  std::string det_model, det_agg, det_video, det_csv;
  bool det_prenorm = false;
  auto* det = app.add_subcommand("detect", "estimate the time of birth for one video");
  add_common(det, det_common);
  det->add_option("--model", det_model, "fusion model")->required();
  det->add_option("--agg", det_agg, "aggregation model")->required();
  det->add_option("--video", det_video, "video to analyze")->required();
  det->add_option("--scores-out", det_csv, "output CSV with scores and predictions")->required();
  det->add_flag("--pre-normalized", det_prenorm, "input video is already normalized");

  // evaluate
  CommonOpts eval_common;
  std::string eval_runs, eval_detect_dir, eval_truth_dir, eval_out;
  auto* eval = app.add_subcommand("evaluate", "write the metrics report for a finished run");
  add_common(eval, eval_common);
  eval->add_option("--runs", eval_runs, "run directory (expects detect_test/ and corpus_test/)");
  eval->add_option("--detect-dir", eval_detect_dir, "directory of detect CSVs (overrides --runs)");
  eval->add_option("--truth-dir", eval_truth_dir, "directory of .meta ground truth (overrides --runs)");
  eval->add_option("--out", eval_out, "report path")->required();

  // run-all
  CommonOpts run_common;
  std::string run_out;
  auto* run = app.add_subcommand("run-all", "run the whole pipeline end to end");
  add_common(run, run_common);
  run->add_option("--out", run_out, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve_config(gen_common);
      const int n = gen_n > 0 ? gen_n : cfg.n_train_videos;
      const double mix = gen_mix >= 0 ? gen_mix : cfg.style_mix;
      const std::uint64_t seed = gen_seed_set ? gen_seed : tob::substream(cfg.seed, "generate");
      tob::stage_generate(cfg, n, mix, seed, gen_out);
      std::printf("generated %d episodes in %s\n", n, gen_out.c_str());
    } else if (*norm) {
      auto cfg = resolve_config(norm_common);
      if (norm_k > 0) cfg.gmm_k = norm_k;
      if (!norm_band.empty()) {
        const auto comma = norm_band.find(',');
        if (comma == std::string::npos)
          throw tob::Error(tob::ErrorCode::config, "--band expects lo,hi");
        cfg.skin_band_lo = std::strtod(norm_band.substr(0, comma).c_str(), nullptr);
        cfg.skin_band_hi = std::strtod(norm_band.substr(comma + 1).c_str(), nullptr);
      }
      print_fit(tob::stage_normalize(cfg, norm_in, norm_out));
    } else if (*head) {
      const auto cfg = resolve_config(head_common);
      const std::uint64_t seed =
          head_seed_set ? head_seed : tob::substream(cfg.seed, "train-image-head");
      tob::stage_train_image_head(cfg, head_corpus, head_out, seed);
      std::printf("image head written to %s\n", head_out.c_str());
    } else if (*fus) {
      const auto cfg = resolve_config(fus_common);
      const std::uint64_t seed = fus_seed_set ? fus_seed : tob::substream(cfg.seed, "train-fusion");
      tob::stage_train_fusion(cfg, fus_corpus, fus_head, fus_out, seed);
      std::printf("fusion model written to %s\n", fus_out.c_str());
    } else if (*score) {
      const auto cfg = resolve_config(score_common);
      tob::stage_score(cfg, score_model, score_video, score_csv, score_prenorm);
      std::printf("scores written to %s\n", score_csv.c_str());
    } else if (*agg) {
      const auto cfg = resolve_config(agg_common);
      const std::uint64_t seed = agg_seed_set ? agg_seed : tob::substream(cfg.seed, "train-agg");
      tob::stage_train_agg(cfg, agg_scores, agg_truth, agg_out, seed);
      std::printf("aggregation model written to %s\n", agg_out.c_str());
    } else if (*det) {
      const auto cfg = resolve_config(det_common);
      const tob::TobEstimate est =
          tob::stage_detect(cfg, det_model, det_agg, det_video, det_csv, det_prenorm);
      if (est.found)
        std::printf("tob_estimate: %g\n", est.t_hat);
      else
        std::printf("tob_estimate: none\n");
    } else if (*eval) {
      const auto cfg = resolve_config(eval_common);
      std::filesystem::path detect_dir = eval_detect_dir;
      std::filesystem::path truth_dir = eval_truth_dir;
      if (detect_dir.empty() || truth_dir.empty()) {
        if (eval_runs.empty())
          throw tob::Error(tob::ErrorCode::config,
                           "evaluate needs --runs or both --detect-dir and --truth-dir");
        if (detect_dir.empty()) detect_dir = std::filesystem::path(eval_runs) / "detect_test";
        if (truth_dir.empty()) truth_dir = std::filesystem::path(eval_runs) / "corpus_test";
      }
      tob::stage_evaluate(cfg, detect_dir, truth_dir, eval_out);
      std::printf("report written to %s\n", eval_out.c_str());
    } else if (*run) {
      const auto cfg = resolve_config(run_common);
      const auto result = tob::run_pipeline(cfg, run_out, &std::cout);
      for (const auto& [id, est] : result.detections) {
        if (est.found)
          std::printf("%s tob_estimate: %g\n", id.c_str(), est.t_hat);
        else
          std::printf("%s tob_estimate: none\n", id.c_str());
      }
      std::printf("report written to %s\n", result.report.string().c_str());
    }
  } catch (const tob::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
