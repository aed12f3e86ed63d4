#include <gtest/gtest.h>

#include <random>

#include "oodtrack/tracker.hpp"

using namespace oodtrack;

namespace {

Segment disk(int id, int frame, double cv, double ch, double r) {
  std::vector<Pixel> px;
  for (int v = static_cast<int>(cv - r) - 1; v <= static_cast<int>(cv + r) + 1; ++v)
    for (int h = static_cast<int>(ch - r) - 1; h <= static_cast<int>(ch + r) + 1; ++h)
      if ((v - cv) * (v - cv) + (h - ch) * (h - ch) <= r * r) px.push_back({v, h});
  return make_segment(id, frame, PixelSet::from_pixels(px));
}

Segment dot(int id, int v, int h) { return make_segment(id, 0, PixelSet::from_pixels({{v, h}})); }

TrackerConfig absolute(double agg, double center, double minIoU = 0.35) {
  TrackerConfig c;
  c.relativeToDiagonal = false;
  c.aggregationDist = agg;
  c.centerDist = center;
  c.minIoU = minIoU;
  return c;
}

int track_of(const SequencePrediction& p, int frame, int segmentId) {
  return p.track_lookup().at(static_cast<std::size_t>(frame)).at(segmentId);
}

}  // namespace

TEST(TrackerConfig, Validation) {
  TrackerConfig c;
  EXPECT_NO_THROW(c.validate());
  c.regressionWindow = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.minIoU = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.centerDist = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.maxGap = 0;
  EXPECT_THROW(c.validate(), Error);
  const TrackerConfig r = TrackerConfig{}.resolved(30, 40);
  EXPECT_DOUBLE_EQ(r.aggregationDist, 0.5);
  EXPECT_DOUBLE_EQ(r.centerDist, 2.5);
}

TEST(Step1, FarApartUnchanged) {
  const std::vector<Segment> segs{dot(1, 0, 0), dot(2, 0, 100)};
  EXPECT_EQ(step1_aggregate(segs, 10.0), segs);
}

TEST(Step1, ChainMergesTransitively) {
  const std::vector<Segment> segs{dot(3, 0, 0), dot(1, 0, 5), dot(2, 0, 10)};
  const auto out = step1_aggregate(segs, 6.0);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].segmentId, 1);
  EXPECT_EQ(out[0].size, 3u);
  EXPECT_DOUBLE_EQ(out[0].center.h, 5.0);
  EXPECT_EQ(out[0].bbox.hMax, 10);
}

TEST(Step1, SingleSegmentUnchanged) {
  const std::vector<Segment> segs{disk(1, 0, 5, 5, 2)};
  EXPECT_EQ(step1_aggregate(segs, 10.0), segs);
}

TEST(Step23, IdenticalSegmentMatched) {
  const Segment s = disk(1, 0, 10, 10, 3);
  EXPECT_DOUBLE_EQ(mask_iou(s.pixels, s.pixels), 1.0);
  const auto ids = step23_match({{7, &s}}, {s}, absolute(1, 1));
  ASSERT_TRUE(ids[0]);
  EXPECT_EQ(*ids[0], 7);
}

TEST(Step23, EmptyCurrentFrame) {
  const Segment s = disk(1, 0, 10, 10, 3);
  EXPECT_TRUE(step23_match({{7, &s}}, {}, absolute(1, 1)).empty());
}

TEST(Step23, OverlapBeatsDistance) {
  // Previous A overlaps current X strongly; previous B is nearer to X by center but overlaps less.
  const Segment a = disk(1, 0, 10, 10, 4), b = disk(2, 0, 10, 13, 1);
  const Segment x = disk(1, 1, 10, 11, 4);
  const auto ids = step23_match({{1, &a}, {2, &b}}, {x}, absolute(1, 10));
  EXPECT_EQ(ids[0], std::optional<int>(1));
}

TEST(Step23, CrossingObjectsGreedyOracle) {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<int> coord(0, 30);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Segment> prevSegs, curr;
    for (int k = 0; k < 4; ++k) prevSegs.push_back(dot(k + 1, coord(rng), coord(rng)));
    for (int k = 0; k < 4; ++k) curr.push_back(dot(k + 1, coord(rng), coord(rng)));
    std::vector<TrackedSegment> prev;
    for (std::size_t k = 0; k < prevSegs.size(); ++k) prev.push_back({static_cast<int>(10 + k), &prevSegs[k]});
    const double cd = 12.0;
    const auto ids = step23_match(prev, curr, absolute(1, cd, 1.0));
    // Oracle: repeatedly take the globally best remaining admissible pair.
    std::vector<std::optional<int>> expect(curr.size());
    std::vector<bool> usedP(prev.size(), false);
    for (;;) {
      double best = 1e18;
      int bp = -1, bc = -1;
      for (std::size_t p = 0; p < prev.size(); ++p)
        for (std::size_t c = 0; c < curr.size(); ++c) {
          if (usedP[p] || expect[c]) continue;
          // 1-pixel segments overlap only when identical, which has distance 0 anyway.
          const double d = distance(prevSegs[p].center, curr[c].center);
          if (d > cd) continue;
          const bool better = d < best || (d == best && (prev[p].trackId < prev[bp].trackId ||
                                                         (prev[p].trackId == prev[bp].trackId &&
                                                          curr[c].segmentId < curr[bc].segmentId)));
          if (better) {
            best = d;
            bp = static_cast<int>(p);
            bc = static_cast<int>(c);
          }
        }
      if (bp < 0) break;
      usedP[bp] = true;
      expect[bc] = prev[bp].trackId;
    }
    EXPECT_EQ(ids, expect);
  }
}

TEST(Step4, ExactLine) {
  Track t;
  t.centers = {{1, {0, 0}}, {2, {1, 0}}};
  const auto c = step4_regress(t, 4, 5, 2);
  ASSERT_TRUE(c);
  EXPECT_NEAR(c->v, 3.0, 1e-12);
  EXPECT_NEAR(c->h, 0.0, 1e-12);
}

TEST(Step4, ConstantPosition) {
  Track t;
  t.centers = {{3, {5, 7}}, {4, {5, 7}}, {5, {5, 7}}};
  for (int f : {6, 7, 8}) {
    const auto c = step4_regress(t, f, 5, 2);
    ASSERT_TRUE(c);
    EXPECT_DOUBLE_EQ(c->v, 5.0);
    EXPECT_DOUBLE_EQ(c->h, 7.0);
  }
}

TEST(Step4, Preconditions) {
  Track t;
  t.centers = {{1, {0, 0}}};
  EXPECT_FALSE(step4_regress(t, 2, 5, 2));
  t.centers.push_back({2, {1, 1}});
  EXPECT_FALSE(step4_regress(t, 6, 5, 2));  // gap 3 > maxGap
  EXPECT_FALSE(step4_regress(t, 2, 5, 2));  // target not after the last observation
  t.centers = {{0, {0, 0}}, {8, {1, 1}}};
  EXPECT_FALSE(step4_regress(t, 9, 5, 2));  // only one observation in the window
}

TEST(Step4, MatchesNormalEquations) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> noise(0.0, 0.7);
  std::uniform_int_distribution<int> len(2, 6);
  for (int trial = 0; trial < 200; ++trial) {
    Track t;
    const int n = len(rng);
    for (int f = 0; f < n; ++f) t.centers.push_back({f, {2.0 + 1.5 * f + noise(rng), -3.0 + 0.5 * f + noise(rng)}});
    const int target = n + 1;
    const auto c = step4_regress(t, target, 10, 2);
    ASSERT_TRUE(c);
    // Solve [n sf; sf sff][a; b] = [sy; sfy] per coordinate.
    double sf = 0, sff = 0, sv = 0, sfv = 0, sh = 0, sfh = 0;
    for (const auto& [f, p] : t.centers) {
      sf += f;
      sff += f * f;
      sv += p.v;
      sfv += f * p.v;
      sh += p.h;
      sfh += f * p.h;
    }
    const double det = n * sff - sf * sf;
    const double bv = (n * sfv - sf * sv) / det, av = (sv - bv * sf) / n;
    const double bh = (n * sfh - sf * sh) / det, ah = (sh - bh * sf) / n;
    EXPECT_NEAR(c->v, av + bv * target, 1e-9);
    EXPECT_NEAR(c->h, ah + bh * target, 1e-9);
  }
}

TEST(TrackSequence, SingleMovingObjectOneTrack) {
  std::vector<std::vector<Segment>> frames;
  for (int t = 0; t < 10; ++t) frames.push_back({disk(1, t, 30, 10 + t, 5)});
  const SequencePrediction p = track_sequence(frames, 64, 64, TrackerConfig{}, 1);
  ASSERT_EQ(p.tracks.size(), 1u);
  EXPECT_EQ(p.tracks[0].length(), 10u);
  EXPECT_EQ(p.height, 64);
  EXPECT_NO_THROW(p.validate());
}

TEST(TrackSequence, GapBridgedByRegression) {
  // Small fast object: no overlap between frames, center step 2 px, gap jump 4 px > centerDist 3.
  std::vector<std::vector<Segment>> frames;
  for (int t = 0; t < 6; ++t) {
    if (t == 3) {
      frames.push_back({});
      continue;
    }
    frames.push_back({disk(1, t, 20, 5 + 2 * t, 1)});
  }
  const SequencePrediction p = track_sequence(frames, 64, 64, absolute(0.5, 3.0), 9);
  ASSERT_EQ(p.tracks.size(), 1u);
  EXPECT_EQ(p.tracks[0].length(), 5u);
}

TEST(TrackSequence, ClosedAfterMaxGap) {
  std::vector<std::vector<Segment>> frames;
  for (int t = 0; t < 8; ++t) frames.push_back(t >= 2 && t <= 4 ? std::vector<Segment>{} : std::vector<Segment>{disk(1, t, 20, 20, 2)});
  const SequencePrediction p = track_sequence(frames, 64, 64, absolute(0.5, 3.0), 9);
  EXPECT_EQ(p.tracks.size(), 2u);
}

TEST(TrackSequence, NewObjectInLastFrame) {
  std::vector<std::vector<Segment>> frames;
  for (int t = 0; t < 5; ++t) frames.push_back({disk(1, t, 10, 10, 3)});
  frames.back().push_back(disk(2, 4, 40, 40, 3));
  const SequencePrediction p = track_sequence(frames, 64, 64, TrackerConfig{}, 3);
  ASSERT_EQ(p.tracks.size(), 2u);
  const int newId = track_of(p, 4, 2);
  EXPECT_EQ(newId, 2);
  EXPECT_NE(track_of(p, 4, 1), newId);
}

TEST(TrackSequence, DeterministicAndIdsUniquePerFrame) {
  std::mt19937_64 rng(43);
  std::uniform_real_distribution<double> pos(5, 55);
  std::vector<std::vector<Segment>> frames(12);
  for (int t = 0; t < 12; ++t)
    for (int k = 0; k < 5; ++k) frames[t].push_back(disk(k + 1, t, pos(rng), pos(rng), 2));
  const SequencePrediction a = track_sequence(frames, 64, 64, TrackerConfig{}, 77);
  const SequencePrediction b = track_sequence(frames, 64, 64, TrackerConfig{}, 77);
  EXPECT_EQ(a.tracks, b.tracks);
  EXPECT_NO_THROW(a.validate());
  const auto lookup = a.track_lookup();
  for (int t = 0; t < 12; ++t) {
    std::set<int> ids;
    for (const auto& [sid, tid] : lookup[t]) EXPECT_TRUE(ids.insert(tid).second);
    EXPECT_EQ(lookup[t].size(), a.frames[t].size());
  }
}

TEST(TrackSequence, FrameZeroIdsConsecutive) {
  std::vector<std::vector<Segment>> frames{{disk(1, 0, 10, 10, 2), disk(2, 0, 30, 30, 2), disk(3, 0, 50, 50, 2)}};
  std::set<int> seen;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const SequencePrediction p = track_sequence(frames, 64, 64, TrackerConfig{}, seed);
    std::set<int> ids;
    for (const auto& t : p.tracks) ids.insert(t.trackId);
    EXPECT_EQ(ids, (std::set<int>{1, 2, 3}));
    seen.insert(track_of(p, 0, 1));
  }
  EXPECT_GT(seen.size(), 1u);
}

TEST(TrackSequence, NonOverlappingObjectsNoSwaps) {
  // Objects moving in parallel lanes with high frame-to-frame overlap.
  std::vector<std::vector<Segment>> frames;
  for (int t = 0; t < 20; ++t)
    frames.push_back({disk(1, t, 15, 10 + 0.8 * t, 4), disk(2, t, 35, 40 - 0.8 * t, 4), disk(3, t, 55, 20, 3)});
  const SequencePrediction p = track_sequence(frames, 70, 70, TrackerConfig{}, 5);
  ASSERT_EQ(p.tracks.size(), 3u);
  for (const auto& tr : p.tracks) EXPECT_EQ(tr.length(), 20u);
}
