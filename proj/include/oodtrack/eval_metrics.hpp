#pragma once

// Pixel-level (AuPRC, FPR95) and segment-level (adjusted sIoU, TP/FN/FP, F1,
// mean F1 over a kappa grid) OOD segmentation metrics.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oodtrack/core.hpp"
#include "oodtrack/tracker.hpp"

namespace oodtrack {

// ---------------------------------------------------------------------------
// Pixel level

struct CurvePoint {
  double threshold = 0.0;  // a pixel is predicted OOD iff score > threshold
  double precision = 0.0;
  double recall = 0.0;
  double fpr = 0.0;
};

struct PixelEvalResult {
  double auprc = 0.0;
  double fpr95 = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<CurvePoint> curve;  // ascending threshold
};

struct ScoredPixel {
  float score = 0.0f;
  bool positive = false;
};

/// PR curve over every distinct score value. Thresholds sit strictly between
/// consecutive distinct values (and one unit outside the extremes). The
/// empty-prediction end point borrows the precision of its neighbour, AuPRC is
/// trapezoidal in recall and FPR95 is read at the highest threshold whose
/// TPR reaches 0.95.
inline PixelEvalResult pixel_metrics_from_samples(std::vector<ScoredPixel> samples) {
  PixelEvalResult r;
  for (const auto& s : samples) (s.positive ? r.positives : r.negatives)++;
  if (r.positives == 0) throw Error(ErrorCode::NoPositives, "no OOD pixels inside the ROI");
  if (r.negatives == 0) throw Error(ErrorCode::NoNegatives, "no non-OOD pixels inside the ROI");
  std::sort(samples.begin(), samples.end(), [](const ScoredPixel& a, const ScoredPixel& b) { return a.score > b.score; });

  const double P = static_cast<double>(r.positives);
  const double N = static_cast<double>(r.negatives);
  std::vector<CurvePoint> desc;  // descending threshold
  desc.push_back({static_cast<double>(samples.front().score) + 1.0, 0.0, 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < samples.size();) {
    const float value = samples[i].score;
    while (i < samples.size() && samples[i].score == value) {
      (samples[i].positive ? tp : fp)++;
      ++i;
    }
    const double next = i < samples.size() ? 0.5 * (static_cast<double>(value) + samples[i].score)
                                           : static_cast<double>(value) - 1.0;
    desc.push_back({next, static_cast<double>(tp) / static_cast<double>(tp + fp), tp / P, fp / N});
  }
  desc.front().precision = desc[1].precision;

  for (std::size_t k = 1; k < desc.size(); ++k)
    r.auprc += (desc[k].recall - desc[k - 1].recall) * 0.5 * (desc[k].precision + desc[k - 1].precision);
  for (const CurvePoint& p : desc)
    if (p.recall >= 0.95) {
      r.fpr95 = p.fpr;
      break;
    }
  r.curve.assign(desc.rbegin(), desc.rend());
  return r;
}

/// Selects which ROI pixels take part: returns nullopt to skip a pixel, or
/// whether it is a positive.
using PixelSelector = std::function<std::optional<bool>(std::size_t frame, std::size_t pixel)>;

inline PixelEvalResult pixel_metrics(const std::vector<const ScoreMap*>& scores,
                                     const std::vector<const FrameTruth*>& truths,
                                     const PixelSelector& select = nullptr) {
  if (scores.size() != truths.size()) throw Error(ErrorCode::SizeMismatch, "score/truth lists differ in length");
  std::vector<ScoredPixel> samples;
  for (std::size_t f = 0; f < scores.size(); ++f) {
    const ScoreMap& s = *scores[f];
    const FrameTruth& t = *truths[f];
    if (!t.semantic.same_shape(s)) throw Error(ErrorCode::SizeMismatch, "score map and truth differ in size");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (t.is_void(i)) continue;
      if (select) {
        if (auto pos = select(f, i)) samples.push_back({s[i], *pos});
      } else {
        samples.push_back({s[i], t.is_ood(i)});
      }
    }
  }
  return pixel_metrics_from_samples(std::move(samples));
}

// ---------------------------------------------------------------------------
// Ground-truth objects

struct GtObject {
  int instanceId = 0;
  int classId = 0;
  PixelSet pixels;
  Center center;
  std::optional<double> minDepth;
};

/// One object per instance id present in the frame, ordered by id.
inline std::vector<GtObject> gt_objects(const FrameTruth& truth) {
  std::map<int, std::vector<Pixel>> byInstance;
  std::map<int, int> cls;
  std::map<int, double> depth;
  for (int v = 0; v < truth.height(); ++v)
    for (int h = 0; h < truth.width(); ++h) {
      const int id = truth.instance.at(v, h);
      if (id == 0) continue;
      byInstance[id].push_back({v, h});
      cls.emplace(id, truth.classId.at(v, h));
      if (truth.depth) {
        const double d = truth.depth->at(v, h);
        auto [it, fresh] = depth.emplace(id, d);
        if (!fresh) it->second = std::min(it->second, d);
      }
    }
  std::vector<GtObject> out;
  for (auto& [id, pixels] : byInstance) {
    GtObject o;
    o.instanceId = id;
    o.classId = cls[id];
    o.center = geometric_center(pixels);
    o.pixels = PixelSet::from_pixels(std::move(pixels));
    if (truth.depth) o.minDepth = depth[id];
    out.push_back(std::move(o));
  }
  return out;
}

/// Object with the largest pixel overlap (smaller id on ties), or nullopt.
inline std::optional<std::size_t> dominant_object(const PixelSet& seg, const std::vector<GtObject>& objects) {
  std::optional<std::size_t> best;
  std::size_t bestOverlap = 0;
  for (std::size_t k = 0; k < objects.size(); ++k) {
    const std::size_t ov = intersection_size(seg, objects[k].pixels);
    if (ov > bestOverlap) {
      bestOverlap = ov;
      best = k;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Segment level

/// |gt ∩ K| / |(gt ∪ K) \ otherGt| with K the union of predictions touching gt.
inline double adjusted_siou(const PixelSet& gt, const std::vector<const PixelSet*>& preds, const PixelSet& otherGt) {
  if (gt.empty()) throw Error(ErrorCode::EmptyGt, "ground-truth segment without pixels");
  std::vector<Pixel> kPixels;
  for (const PixelSet* p : preds)
    if (intersection_size(*p, gt) > 0) {
      const auto px = p->decode();
      kPixels.insert(kPixels.end(), px.begin(), px.end());
    }
  const PixelSet K = PixelSet::from_pixels(std::move(kPixels));
  const std::size_t inter = intersection_size(gt, K);
  if (inter == 0) return 0.0;
  // |(gt ∪ K) \ other| = |gt| + |K \ other| - |gt ∩ K|, since gt and other are disjoint.
  const std::size_t kOutside = K.size() - intersection_size(K, otherGt);
  return static_cast<double>(inter) / static_cast<double>(gt.size() + kOutside - inter);
}

inline double adjusted_siou(const PixelSet& gt, const std::vector<Segment>& preds, const PixelSet& otherGt) {
  std::vector<const PixelSet*> sets;
  for (const auto& s : preds) sets.push_back(&s.pixels);
  return adjusted_siou(gt, sets, otherGt);
}

struct KappaRow {
  double kappa = 0.0;
  std::size_t tp = 0;
  std::size_t fn = 0;
  std::size_t fp = 0;
  double f1 = 0.0;
};

struct SegmentEvalResult {
  std::vector<KappaRow> perKappa;
  double f1Bar = 0.0;
  std::size_t gtSegments = 0;
  std::size_t predSegments = 0;
};

inline std::vector<double> default_kappa_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 10; ++k) grid.push_back(0.25 + 0.05 * k);
  return grid;
}

inline double f1_score(std::size_t tp, std::size_t fn, std::size_t fp) {
  const std::size_t denom = 2 * tp + fn + fp;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

/// Per-frame quantities the kappa sweep needs.
struct FrameSegmentScores {
  std::vector<double> gtSiou;  // one per counted GT object
  std::vector<double> predPrecision;  // one per counted prediction
};

/// Restricts which GT objects (and through them, which predictions) count.
using ObjectFilter = std::function<bool(std::size_t frame, const GtObject&)>;

/// Predictions count when they overlap no GT object or when their dominant
/// object passes the filter.
inline FrameSegmentScores frame_segment_scores(const std::vector<Segment>& preds, const FrameTruth& truth,
                                               const std::vector<GtObject>& objects, std::size_t frame,
                                               const ObjectFilter& filter) {
  FrameSegmentScores out;
  std::vector<const PixelSet*> predSets;
  for (const auto& p : preds) {
    p.pixels.for_each([&](Pixel px) {
      if (!truth.semantic.contains(px.v, px.h)) throw Error(ErrorCode::SizeMismatch, "prediction outside frame");
    });
    predSets.push_back(&p.pixels);
  }
  for (std::size_t k = 0; k < objects.size(); ++k) {
    if (filter && !filter(frame, objects[k])) continue;
    std::vector<Pixel> other;
    for (std::size_t j = 0; j < objects.size(); ++j)
      if (j != k) {
        const auto px = objects[j].pixels.decode();
        other.insert(other.end(), px.begin(), px.end());
      }
    out.gtSiou.push_back(adjusted_siou(objects[k].pixels, predSets, PixelSet::from_pixels(std::move(other))));
  }
  for (const auto& p : preds) {
    if (filter) {
      const auto dom = dominant_object(p.pixels, objects);
      if (dom && !filter(frame, objects[*dom])) continue;
    }
    std::size_t onOod = 0;
    p.pixels.for_each([&](Pixel px) { onOod += truth.is_ood(static_cast<std::size_t>(px.v) * truth.width() + px.h); });
    out.predPrecision.push_back(static_cast<double>(onOod) / static_cast<double>(p.size));
  }
  return out;
}

inline SegmentEvalResult sweep_kappa(const std::vector<FrameSegmentScores>& frames, const std::vector<double>& kappaGrid) {
  if (kappaGrid.empty()) throw Error(ErrorCode::InvalidArgument, "empty kappa grid");
  SegmentEvalResult r;
  for (const auto& f : frames) {
    r.gtSegments += f.gtSiou.size();
    r.predSegments += f.predPrecision.size();
  }
  for (double kappa : kappaGrid) {
    if (!(kappa >= 0.0 && kappa < 1.0)) throw Error(ErrorCode::InvalidArgument, "kappa must lie in [0,1)");
    KappaRow row;
    row.kappa = kappa;
    for (const auto& f : frames) {
      for (double s : f.gtSiou) (s > kappa ? row.tp : row.fn)++;
      for (double p : f.predPrecision) row.fp += p <= kappa ? 1 : 0;
    }
    row.f1 = f1_score(row.tp, row.fn, row.fp);
    r.f1Bar += row.f1;
    r.perKappa.push_back(row);
  }
  r.f1Bar /= static_cast<double>(kappaGrid.size());
  return r;
}

/// GT object is TP at kappa iff sIoU > kappa; a prediction is FP iff the
/// fraction of its pixels on GT OOD is <= kappa.
inline SegmentEvalResult segment_metrics(const std::vector<std::vector<Segment>>& preds,
                                         const std::vector<const FrameTruth*>& truths,
                                         const std::vector<double>& kappaGrid = default_kappa_grid(),
                                         const ObjectFilter& filter = nullptr) {
  if (preds.size() != truths.size()) throw Error(ErrorCode::SizeMismatch, "prediction/truth lists differ in length");
  std::vector<FrameSegmentScores> frames;
  for (std::size_t f = 0; f < preds.size(); ++f)
    frames.push_back(frame_segment_scores(preds[f], *truths[f], gt_objects(*truths[f]), f, filter));
  return sweep_kappa(frames, kappaGrid);
}

// ---------------------------------------------------------------------------
// Grouped reporting

enum class GroupBy { Class, DepthBin };

inline const std::vector<double>& depth_bin_edges() {
  static const std::vector<double> edges{0.0, 4.0, 8.0, 12.0, 16.0, 20.0, 40.0, 65.0};
  return edges;
}

/// Index of the half-open bin (lo, hi] containing depth, or nullopt.
inline std::optional<std::size_t> depth_bin(double depth) {
  const auto& e = depth_bin_edges();
  for (std::size_t i = 0; i + 1 < e.size(); ++i)
    if (depth > e[i] && depth <= e[i + 1]) return i;
  return std::nullopt;
}

inline std::string depth_bin_label(std::size_t bin) {
  const auto& e = depth_bin_edges();
  auto fmt = [](double x) {
    std::string s = std::to_string(static_cast<int>(x));
    return s;
  };
  return "(" + fmt(e[bin]) + "," + fmt(e[bin + 1]) + "]";
}

struct GroupResult {
  std::string key;
  SegmentEvalResult segment;
  std::optional<PixelEvalResult> pixel;
};

/// Metrics restricted to the GT objects of each group (class id or depth bin
/// of the object's minimum depth). Predictions overlapping no GT object count
/// in every group; other OOD pixels are left out of the group's pixel metrics.
inline std::vector<GroupResult> grouped_report(const std::vector<std::vector<Segment>>& preds,
                                               const std::vector<const FrameTruth*>& truths,
                                               const std::vector<const ScoreMap*>& scores, GroupBy groupBy,
                                               const std::vector<double>& kappaGrid = default_kappa_grid()) {
  if (preds.size() != truths.size() || scores.size() != truths.size())
    throw Error(ErrorCode::SizeMismatch, "grouped report inputs differ in length");
  std::vector<std::vector<GtObject>> objects;
  for (const FrameTruth* t : truths) {
    if (groupBy == GroupBy::DepthBin && !t->depth)
      throw Error(ErrorCode::MissingMetadata, "depth grouping needs depth rasters");
    objects.push_back(gt_objects(*t));
  }
  auto groupOf = [&](const GtObject& o) -> std::optional<std::string> {
    if (groupBy == GroupBy::Class) return "class:" + std::to_string(o.classId);
    if (const auto bin = depth_bin(*o.minDepth)) return depth_bin_label(*bin);
    return std::nullopt;
  };

  std::vector<std::string> keys;
  if (groupBy == GroupBy::DepthBin) {
    for (std::size_t b = 0; b + 1 < depth_bin_edges().size(); ++b) keys.push_back(depth_bin_label(b));
  } else {
    std::map<int, bool> seen;
    for (const auto& frame : objects)
      for (const auto& o : frame) seen[o.classId] = true;
    for (const auto& [c, unused] : seen) keys.push_back("class:" + std::to_string(c));
  }

  std::vector<GroupResult> out;
  for (const std::string& key : keys) {
    bool any = false;
    for (const auto& frame : objects)
      for (const auto& o : frame) any = any || groupOf(o) == key;
    if (!any) continue;
    GroupResult g;
    g.key = key;
    const ObjectFilter filter = [&](std::size_t, const GtObject& o) { return groupOf(o) == key; };
    std::vector<FrameSegmentScores> frames;
    for (std::size_t f = 0; f < preds.size(); ++f)
      frames.push_back(frame_segment_scores(preds[f], *truths[f], objects[f], f, filter));
    g.segment = sweep_kappa(frames, kappaGrid);

    // Instance raster lookup: positives are pixels of in-group objects.
    std::vector<std::map<int, bool>> inGroup(truths.size());
    for (std::size_t f = 0; f < truths.size(); ++f)
      for (const auto& o : objects[f]) inGroup[f][o.instanceId] = groupOf(o) == key;
    const PixelSelector select = [&](std::size_t f, std::size_t i) -> std::optional<bool> {
      const FrameTruth& t = *truths[f];
      if (!t.is_ood(i)) return false;
      if (inGroup[f][t.instance[i]]) return true;
      return std::nullopt;
    };
    try {
      g.pixel = pixel_metrics(scores, truths, select);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NoPositives && e.code() != ErrorCode::NoNegatives) throw;
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace oodtrack
