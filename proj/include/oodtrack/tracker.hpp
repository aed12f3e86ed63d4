#pragma once

// Overlap/center based multi-frame tracking of OOD segments. Per frame:
//   1. aggregate nearby segments of the same frame
//   2/3. match against the previous frame by mask IoU, then by center distance
//   4. recover segments of recently lost tracks via linear extrapolation
//   5. give every remaining segment a fresh ID

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "oodtrack/core.hpp"

namespace oodtrack {

struct TrackerConfig {
  // Interpreted as fractions of the image diagonal when relativeToDiagonal is set.
  double aggregationDist = 0.01;
  double centerDist = 0.05;
  double minIoU = 0.35;
  int regressionWindow = 5;
  int maxGap = 2;
  bool relativeToDiagonal = true;

  void validate() const {
    if (!(aggregationDist > 0) || !(centerDist > 0))
      throw Error(ErrorCode::InvalidArgument, "tracker distances must be positive");
    if (!(minIoU > 0 && minIoU <= 1)) throw Error(ErrorCode::InvalidArgument, "minIoU must lie in (0,1]");
    if (regressionWindow < 2) throw Error(ErrorCode::InvalidArgument, "regressionWindow must be at least 2");
    if (maxGap < 1) throw Error(ErrorCode::InvalidArgument, "maxGap must be positive");
  }

  /// Absolute pixel thresholds for an image of the given size.
  TrackerConfig resolved(int height, int width) const {
    TrackerConfig out = *this;
    if (relativeToDiagonal) {
      const double diag = std::hypot(static_cast<double>(height), static_cast<double>(width));
      out.aggregationDist *= diag;
      out.centerDist *= diag;
      out.relativeToDiagonal = false;
    }
    return out;
  }
};

/// |a ∩ b| by merging the two run lists.
inline std::size_t intersection_size(const PixelSet& a, const PixelSet& b) {
  const auto& ra = a.runs();
  const auto& rb = b.runs();
  std::size_t i = 0, j = 0, total = 0;
  while (i < ra.size() && j < rb.size()) {
    if (ra[i].row != rb[j].row) {
      (ra[i].row < rb[j].row ? i : j)++;
      continue;
    }
    const int lo = std::max(ra[i].start, rb[j].start);
    const int hi = std::min(ra[i].start + ra[i].length, rb[j].start + rb[j].length);
    if (hi > lo) total += static_cast<std::size_t>(hi - lo);
    if (ra[i].start + ra[i].length < rb[j].start + rb[j].length) ++i;
    else ++j;
  }
  return total;
}

inline double mask_iou(const PixelSet& a, const PixelSet& b) {
  const std::size_t inter = intersection_size(a, b);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline Segment merge_segments(const std::vector<const Segment*>& parts) {
  std::vector<Pixel> pixels;
  double scoreSum = 0.0;
  int id = parts.front()->segmentId;
  for (const Segment* s : parts) {
    const auto px = s->pixels.decode();
    pixels.insert(pixels.end(), px.begin(), px.end());
    scoreSum += s->meanScore * static_cast<double>(s->size);
    id = std::min(id, s->segmentId);
  }
  Segment merged = make_segment(id, parts.front()->frameIndex, PixelSet::from_pixels(std::move(pixels)));
  merged.meanScore = scoreSum / static_cast<double>(merged.size);
  return merged;
}

/// Step 1: merges segments whose centers are closer than aggregationDist
/// (transitively). A merged segment keeps the smallest member id.
inline std::vector<Segment> step1_aggregate(const std::vector<Segment>& segs, double aggregationDist) {
  std::vector<std::size_t> parent(segs.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  bool merged = false;
  for (std::size_t i = 0; i < segs.size(); ++i)
    for (std::size_t j = i + 1; j < segs.size(); ++j)
      if (distance(segs[i].center, segs[j].center) < aggregationDist) {
        parent[find(i)] = find(j);
        merged = true;
      }
  if (!merged) return segs;
  std::map<std::size_t, std::vector<const Segment*>> groups;
  for (std::size_t i = 0; i < segs.size(); ++i) groups[find(i)].push_back(&segs[i]);
  std::vector<Segment> out;
  for (auto& [root, members] : groups) out.push_back(members.size() == 1 ? *members.front() : merge_segments(members));
  std::sort(out.begin(), out.end(), [](const Segment& a, const Segment& b) { return a.segmentId < b.segmentId; });
  return out;
}

/// A segment of the previous frame together with the track that owns it.
struct TrackedSegment {
  int trackId = 0;
  const Segment* segment = nullptr;
};

/// Steps 2/3: greedy one-to-one matching; IoU >= minIoU pairs first (by IoU
/// descending), then center distance <= centerDist (ascending). Returns the
/// trackId per current segment or nullopt.
inline std::vector<std::optional<int>> step23_match(const std::vector<TrackedSegment>& prev,
                                                    const std::vector<Segment>& curr, const TrackerConfig& cfg) {
  std::vector<std::optional<int>> assigned(curr.size());
  std::vector<bool> prevUsed(prev.size(), false);
  using Candidate = std::tuple<double, int, int, std::size_t, std::size_t>;  // key, trackId, segmentId, pi, ci

  auto take = [&](std::vector<Candidate>& cands) {
    std::sort(cands.begin(), cands.end());
    for (const auto& [key, tid, sid, pi, ci] : cands) {
      if (prevUsed[pi] || assigned[ci]) continue;
      prevUsed[pi] = true;
      assigned[ci] = prev[pi].trackId;
    }
  };

  std::vector<Candidate> overlap;
  for (std::size_t pi = 0; pi < prev.size(); ++pi)
    for (std::size_t ci = 0; ci < curr.size(); ++ci) {
      const double iou = mask_iou(prev[pi].segment->pixels, curr[ci].pixels);
      if (iou >= cfg.minIoU) overlap.emplace_back(-iou, prev[pi].trackId, curr[ci].segmentId, pi, ci);
    }
  take(overlap);

  std::vector<Candidate> near;
  for (std::size_t pi = 0; pi < prev.size(); ++pi) {
    if (prevUsed[pi]) continue;
    for (std::size_t ci = 0; ci < curr.size(); ++ci) {
      if (assigned[ci]) continue;
      const double d = distance(prev[pi].segment->center, curr[ci].center);
      if (d <= cfg.centerDist) near.emplace_back(d, prev[pi].trackId, curr[ci].segmentId, pi, ci);
    }
  }
  take(near);
  return assigned;
}

/// Ordinary least squares line through (frame, center) extrapolated to frame x.
inline Center ols_extrapolate(const std::vector<std::pair<int, Center>>& obs, double x) {
  double mf = 0, mv = 0, mh = 0;
  for (const auto& [f, c] : obs) {
    mf += f;
    mv += c.v;
    mh += c.h;
  }
  const double n = static_cast<double>(obs.size());
  mf /= n;
  mv /= n;
  mh /= n;
  double sff = 0, sfv = 0, sfh = 0;
  for (const auto& [f, c] : obs) {
    sff += (f - mf) * (f - mf);
    sfv += (f - mf) * (c.v - mv);
    sfh += (f - mf) * (c.h - mh);
  }
  if (sff == 0.0) return {mv, mh};
  return {mv + sfv / sff * (x - mf), mh + sfh / sff * (x - mf)};
}

/// Step 4: predicted center of a track at targetFrame, or nullopt when the
/// track has been gone for more than maxGap frames or has fewer than two
/// observations inside the regression window.
inline std::optional<Center> step4_regress(const Track& track, int targetFrame, int regressionWindow, int maxGap) {
  if (track.centers.empty()) return std::nullopt;
  const int gap = targetFrame - track.centers.back().first - 1;
  if (gap < 0 || gap > maxGap) return std::nullopt;
  std::vector<std::pair<int, Center>> obs;
  for (const auto& fc : track.centers)
    if (fc.first < targetFrame && fc.first >= targetFrame - regressionWindow) obs.push_back(fc);
  if (obs.size() < 2) return std::nullopt;
  return ols_extrapolate(obs, targetFrame);
}

/// Runs steps 1-5 over a whole sequence. Frame-0 IDs come from a seeded
/// generator and are remapped to 1..m; later new IDs count upwards.
inline SequencePrediction track_sequence(const std::vector<std::vector<Segment>>& frames, int height, int width,
                                         const TrackerConfig& config, std::uint64_t seed,
                                         const std::string& sequenceId = "") {
  config.validate();
  const TrackerConfig cfg = config.resolved(height, width);
  SequencePrediction out;
  out.sequenceId = sequenceId;
  out.frameCount = static_cast<int>(frames.size());
  out.height = height;
  out.width = width;
  out.frames.resize(frames.size());

  std::map<int, Track> tracks;
  std::map<int, const Segment*> previous;  // trackId -> segment in frame t-1
  int nextId = 1;
  std::mt19937_64 rng(seed);

  auto attach = [&](int trackId, const Segment& seg, int frame) {
    Track& t = tracks[trackId];
    t.trackId = trackId;
    t.entries.push_back({frame, seg.segmentId});
    t.centers.emplace_back(frame, seg.center);
  };

  for (int t = 0; t < out.frameCount; ++t) {
    std::vector<Segment>& segs = out.frames[static_cast<std::size_t>(t)];
    segs = step1_aggregate(frames[static_cast<std::size_t>(t)], cfg.aggregationDist);
    for (Segment& s : segs) s.frameIndex = t;
    std::vector<std::optional<int>> ids(segs.size());

    if (t == 0) {
      std::vector<std::pair<std::uint64_t, std::size_t>> keys;
      for (std::size_t i = 0; i < segs.size(); ++i) keys.emplace_back(rng(), i);
      std::sort(keys.begin(), keys.end());
      for (const auto& [key, i] : keys) ids[i] = nextId++;
    } else {
      std::vector<TrackedSegment> prev;
      for (const auto& [tid, seg] : previous) prev.push_back({tid, seg});
      ids = step23_match(prev, segs, cfg);

      std::map<int, bool> taken;
      for (const auto& id : ids)
        if (id) taken[*id] = true;
      using Candidate = std::tuple<double, int, int, std::size_t>;
      std::vector<Candidate> cands;
      for (const auto& [tid, track] : tracks) {
        if (taken.count(tid)) continue;
        const auto predicted = step4_regress(track, t, cfg.regressionWindow, cfg.maxGap);
        if (!predicted) continue;
        for (std::size_t ci = 0; ci < segs.size(); ++ci) {
          if (ids[ci]) continue;
          const double d = distance(*predicted, segs[ci].center);
          if (d <= cfg.centerDist) cands.emplace_back(d, tid, segs[ci].segmentId, ci);
        }
      }
      std::sort(cands.begin(), cands.end());
      for (const auto& [d, tid, sid, ci] : cands) {
        if (ids[ci] || taken.count(tid)) continue;
        ids[ci] = tid;
        taken[tid] = true;
      }
      for (auto& id : ids)
        if (!id) id = nextId++;
    }

    previous.clear();
    for (std::size_t i = 0; i < segs.size(); ++i) {
      attach(*ids[i], segs[i], t);
      previous[*ids[i]] = &segs[i];
    }
  }
  for (auto& [tid, track] : tracks) out.tracks.push_back(std::move(track));
  return out;
}

}  // namespace oodtrack
