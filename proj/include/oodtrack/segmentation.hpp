#pragma once

// Score thresholding inside the region of interest and 8-connected component
// extraction.

#include <array>
#include <vector>

#include "oodtrack/core.hpp"

namespace oodtrack {

inline constexpr double kDefaultTauSos = 0.72;
inline constexpr double kDefaultTauCwl = 0.81;

/// Marks pixels inside the ROI whose score is strictly greater than tau.
inline Mask threshold_mask(const ScoreMap& score, const Mask& roi, double tau) {
  if (!roi.same_shape(score)) throw Error(ErrorCode::SizeMismatch, "ROI and score map differ in size");
  if (!std::isfinite(tau)) throw Error(ErrorCode::InvalidArgument, "tau must be finite");
  Mask mask(score.height, score.width, 0);
  for (std::size_t i = 0; i < score.size(); ++i) mask[i] = (roi[i] != 0 && score[i] > tau) ? 1 : 0;
  return mask;
}

inline constexpr std::array<Pixel, 8> kNeighbors8{{{-1, -1}, {-1, 0}, {-1, 1}, {0, -1}, {0, 1}, {1, -1}, {1, 0}, {1, 1}}};

/// Maximal 8-connected components of at least minSize pixels, ids 1..m in
/// row-major order of each component's first pixel.
inline std::vector<Segment> connected_components(const Mask& mask, std::size_t minSize = 1, int frameIndex = 0) {
  if (minSize < 1) throw Error(ErrorCode::InvalidArgument, "minSize must be at least 1");
  std::vector<Segment> segments;
  std::vector<std::uint8_t> visited(mask.size(), 0);
  std::vector<Pixel> component;
  std::vector<Pixel> stack;
  for (int v = 0; v < mask.height; ++v) {
    for (int h = 0; h < mask.width; ++h) {
      const std::size_t idx = static_cast<std::size_t>(v) * mask.width + h;
      if (!mask[idx] || visited[idx]) continue;
      component.clear();
      stack.assign(1, {v, h});
      visited[idx] = 1;
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        component.push_back(p);
        for (const Pixel& d : kNeighbors8) {
          const int nv = p.v + d.v;
          const int nh = p.h + d.h;
          if (!mask.contains(nv, nh)) continue;
          const std::size_t nidx = static_cast<std::size_t>(nv) * mask.width + nh;
          if (mask[nidx] && !visited[nidx]) {
            visited[nidx] = 1;
            stack.push_back({nv, nh});
          }
        }
      }
      if (component.size() < minSize) continue;
      segments.push_back(make_segment(static_cast<int>(segments.size()) + 1, frameIndex,
                                      PixelSet::from_pixels(component)));
    }
  }
  return segments;
}

struct ScoreStats {
  double mean = 0.0;
  double variance = 0.0;
  double meanBoundary = 0.0;
  double meanInterior = 0.0;
};

/// Whole-segment mean and population variance plus boundary/interior means.
/// An empty interior or boundary falls back to the whole-segment mean.
inline ScoreStats segment_score_stats(const Segment& seg, const ScoreMap& score) {
  const std::vector<Pixel> pixels = seg.pixels.decode();
  if (pixels.empty()) throw Error(ErrorCode::EmptySegment, "segment without pixels");
  for (const Pixel& p : pixels)
    if (!score.contains(p.v, p.h)) throw Error(ErrorCode::OutOfBounds, "segment pixel outside the score map");
  const LocalBitmap bitmap(bounding_box(pixels), pixels);
  double sum = 0.0;
  double sumInterior = 0.0;
  std::size_t nInterior = 0;
  for (const Pixel& p : pixels) {
    const double s = score.at(p.v, p.h);
    sum += s;
    if (bitmap.interior(p.v, p.h)) {
      sumInterior += s;
      ++nInterior;
    }
  }
  const double n = static_cast<double>(pixels.size());
  ScoreStats stats;
  stats.mean = sum / n;
  double sq = 0.0;
  for (const Pixel& p : pixels) {
    const double d = score.at(p.v, p.h) - stats.mean;
    sq += d * d;
  }
  stats.variance = sq / n;
  const std::size_t nBoundary = pixels.size() - nInterior;
  stats.meanInterior = nInterior > 0 ? sumInterior / static_cast<double>(nInterior) : stats.mean;
  stats.meanBoundary = nBoundary > 0 ? (sum - sumInterior) / static_cast<double>(nBoundary) : stats.mean;
  return stats;
}

/// Threshold, extract components and fill in each segment's mean score.
inline std::vector<Segment> detect_segments(const ScoreMap& score, const Mask& roi, double tau, std::size_t minSize,
                                            int frameIndex) {
  std::vector<Segment> segs = connected_components(threshold_mask(score, roi, tau), minSize, frameIndex);
  for (Segment& s : segs) s.meanScore = segment_score_stats(s, score).mean;
  return segs;
}

}  // namespace oodtrack
