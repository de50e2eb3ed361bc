#include "tob/windowing.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tob/common.hpp"

namespace {

tob::NormalizedVideo make_video(int n, int h, int w, double fr, std::uint64_t seed = 1) {
  tob::Rng rng(seed);
  tob::NormalizedVideo v;
  v.n_frames = n;
  v.height = h;
  v.width = w;
  v.frame_rate = fr;
  v.data.resize(static_cast<std::size_t>(n) * h * w);
  for (auto& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

TEST(ClipAt, TakesPrecedingFramesOldestFirst) {
  const auto v = make_video(30, 2, 2, 8.33);
  const auto clip = tob::clip_at(v, 24, 25);
  EXPECT_EQ(clip.f, 25);
  EXPECT_EQ(clip.end_frame_index, 24);
  // frames 0..24 in ascending order
  for (int i = 0; i < 25; ++i) {
    const auto expected = v.frame(i);
    const auto got = clip.frame(i);
    for (std::size_t p = 0; p < expected.size(); ++p) EXPECT_EQ(got[p], expected[p]);
  }
}

TEST(ClipAt, BoundaryErrorBeforeFirstValidIndex) {
  const auto v = make_video(30, 2, 2, 8.33);
  try {
    tob::clip_at(v, 23, 25);
    FAIL() << "expected boundary error";
  } catch (const tob::Error& e) {
    EXPECT_EQ(e.code(), tob::ErrorCode::boundary);
  }
}

TEST(ClipAt, SingleFrameClipEqualsThatFrame) {
  const auto v = make_video(5, 3, 3, 1.0);
  const auto clip = tob::clip_at(v, 2, 1);
  EXPECT_EQ(clip.f, 1);
  const auto expected = v.frame(2);
  for (std::size_t p = 0; p < expected.size(); ++p) EXPECT_EQ(clip.frame(0)[p], expected[p]);
}

TEST(ClipTimestamps, PaperParameterization) {
  // t0 = floor(25 / 8.33) = 3; T = floor(999 / 8.33) = 119
  const auto ts = tob::clip_timestamps(999, 8.33, 25, 1.0);
  ASSERT_FALSE(ts.empty());
  EXPECT_DOUBLE_EQ(ts.front(), 3.0);
  EXPECT_DOUBLE_EQ(ts.back(), 119.0);
  EXPECT_EQ(ts.size(), 117u);
  // end frame of the first valid timestamp
  EXPECT_EQ(tob::end_frame_for(3.0, 8.33), 24);
}

TEST(ClipTimestamps, VideoTooShort) {
  try {
    tob::clip_timestamps(10, 8.33, 25, 1.0);
    FAIL() << "expected video-too-short";
  } catch (const tob::Error& e) {
    EXPECT_EQ(e.code(), tob::ErrorCode::video_too_short);
  }
}

// brute-force enumerator as the oracle for the series length
TEST(ClipTimestamps, LengthMatchesBruteForceEnumeration) {
  tob::Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const int f = 2 + static_cast<int>(rng.below(40));
    const int n = f + static_cast<int>(rng.below(500));
    const double fr = rng.uniform(2.0, 30.0);
    const double tau = 1.0 + static_cast<double>(rng.below(3));

    const double t0 = std::floor(f / fr);
    const double t_end = std::floor(n / fr);
    std::size_t expected = 0;
    for (int k = 0;; ++k) {
      const double t = t0 + k * tau;
      if (t > t_end) break;
      const int end = static_cast<int>(std::floor(fr * t));
      if (end > n - 1) break;
      if (end < f - 1) continue;
      ++expected;
    }

    const auto ts = tob::clip_timestamps(n, fr, f, tau);
    EXPECT_EQ(ts.size(), expected) << "n=" << n << " f=" << f << " fr=" << fr << " tau=" << tau;
    if (!ts.empty()) {
      EXPECT_LE(tob::end_frame_for(ts.back(), fr), n - 1);
      EXPECT_GE(tob::end_frame_for(ts.front(), fr), f - 1);
    }
  }
}

TEST(SampleClips, EveryClipMatchesClipAt) {
  const auto v = make_video(60, 3, 4, 5.5, 8);
  const auto series = tob::sample_clips(v, 7, 1.0);
  ASSERT_FALSE(series.clips.empty());
  EXPECT_EQ(series.clips.size(), series.timestamps.size());
  double prev = -1.0;
  for (std::size_t i = 0; i < series.clips.size(); ++i) {
    const double t = series.timestamps[i];
    EXPECT_GT(t, prev);  // strictly increasing
    prev = t;
    const auto expected = tob::clip_at(v, tob::end_frame_for(t, v.frame_rate), 7);
    EXPECT_EQ(series.clips[i].end_frame_index, expected.end_frame_index);
    EXPECT_EQ(series.clips[i].frames, expected.frames);
  }
}

}  // namespace
