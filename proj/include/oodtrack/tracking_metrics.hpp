#pragma once

// CLEAR-MOT style tracking evaluation on labeled frames plus the tracking
// length l_t, which also credits unlabeled frames bracketed by labeled ones.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "oodtrack/core.hpp"
#include "oodtrack/eval_metrics.hpp"
#include "oodtrack/tracker.hpp"

namespace oodtrack {

struct TrackedPrediction {
  int trackId = 0;
  const Segment* segment = nullptr;
};

struct LabeledFrameInput {
  int frameIndex = 0;
  std::vector<GtObject> objects;
  std::vector<TrackedPrediction> predictions;
};

struct MatchPair {
  int instanceId = 0;
  int trackId = 0;
  int segmentId = 0;
  double iou = 0.0;
  double centerDistance = 0.0;
};

struct FrameMatch {
  int frameIndex = 0;
  std::vector<MatchPair> pairs;
  std::size_t gt = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t mme = 0;
};

/// Correspondence state carried from one labeled frame to the next.
struct MatchState {
  std::map<int, int> previous;  // instance -> trackId in the previous labeled frame
  std::map<int, int> lastTrack;  // instance -> most recent matched trackId
};

/// Matches one labeled frame. Pairs from the previous labeled frame persist
/// while they still overlap; the rest are matched greedily by descending IoU
/// (ties: smaller instance id, then smaller track id) with gate IoU > 0.
inline FrameMatch match_frame(const LabeledFrameInput& in, MatchState& state) {
  FrameMatch out;
  out.frameIndex = in.frameIndex;
  out.gt = in.objects.size();
  const std::size_t G = in.objects.size();
  const std::size_t P = in.predictions.size();
  std::vector<std::vector<double>> iou(G, std::vector<double>(P, 0.0));
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t p = 0; p < P; ++p) iou[g][p] = mask_iou(in.objects[g].pixels, in.predictions[p].segment->pixels);

  std::vector<int> gtTo(G, -1);
  std::vector<bool> predUsed(P, false);
  for (std::size_t g = 0; g < G; ++g) {
    const auto it = state.previous.find(in.objects[g].instanceId);
    if (it == state.previous.end()) continue;
    for (std::size_t p = 0; p < P; ++p)
      if (!predUsed[p] && in.predictions[p].trackId == it->second && iou[g][p] > 0.0) {
        gtTo[g] = static_cast<int>(p);
        predUsed[p] = true;
        break;
      }
  }
  std::vector<std::tuple<double, int, int, std::size_t, std::size_t>> cands;
  for (std::size_t g = 0; g < G; ++g) {
    if (gtTo[g] >= 0) continue;
    for (std::size_t p = 0; p < P; ++p)
      if (!predUsed[p] && iou[g][p] > 0.0)
        cands.emplace_back(-iou[g][p], in.objects[g].instanceId, in.predictions[p].trackId, g, p);
  }
  std::sort(cands.begin(), cands.end());
  for (const auto& [negIou, iid, tid, g, p] : cands) {
    if (gtTo[g] >= 0 || predUsed[p]) continue;
    gtTo[g] = static_cast<int>(p);
    predUsed[p] = true;
  }

  state.previous.clear();
  for (std::size_t g = 0; g < G; ++g) {
    if (gtTo[g] < 0) {
      ++out.fn;
      continue;
    }
    const auto& pred = in.predictions[static_cast<std::size_t>(gtTo[g])];
    const int iid = in.objects[g].instanceId;
    const auto last = state.lastTrack.find(iid);
    if (last != state.lastTrack.end() && last->second != pred.trackId) ++out.mme;
    state.lastTrack[iid] = pred.trackId;
    state.previous[iid] = pred.trackId;
    out.pairs.push_back({iid, pred.trackId, pred.segment->segmentId, iou[g][static_cast<std::size_t>(gtTo[g])],
                         distance(in.objects[g].center, pred.segment->center)});
  }
  for (std::size_t p = 0; p < P; ++p) out.fp += predUsed[p] ? 0 : 1;
  return out;
}

inline std::vector<FrameMatch> match_frames(const std::vector<LabeledFrameInput>& frames) {
  MatchState state;
  std::vector<FrameMatch> out;
  for (const auto& f : frames) out.push_back(match_frame(f, state));
  return out;
}

struct MotSummary {
  double mota = 0.0;
  double mmeRatio = 0.0;
  double motp = std::numeric_limits<double>::quiet_NaN();  // NaN without matched pairs
  std::size_t gtObjectFrames = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t mme = 0;
  std::size_t matches = 0;
};

inline MotSummary mota_motp(const std::vector<FrameMatch>& frames) {
  MotSummary s;
  double distSum = 0.0;
  for (const auto& f : frames) {
    s.gtObjectFrames += f.gt;
    s.fp += f.fp;
    s.fn += f.fn;
    s.mme += f.mme;
    for (const auto& p : f.pairs) distSum += p.centerDistance;
    s.matches += f.pairs.size();
  }
  if (s.gtObjectFrames == 0) throw Error(ErrorCode::NoGtObjects, "no ground-truth objects in labeled frames");
  const double g = static_cast<double>(s.gtObjectFrames);
  s.mota = 1.0 - static_cast<double>(s.fp + s.fn + s.mme) / g;
  s.mmeRatio = static_cast<double>(s.mme) / g;
  if (s.matches > 0) s.motp = distSum / static_cast<double>(s.matches);
  return s;
}

enum class Coverage { MostlyTracked, PartiallyTracked, MostlyLost };

inline Coverage classify_coverage(std::size_t matched, std::size_t occurrences) {
  const double fraction = occurrences == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(occurrences);
  if (fraction >= 0.8) return Coverage::MostlyTracked;
  if (fraction < 0.2) return Coverage::MostlyLost;
  return Coverage::PartiallyTracked;
}

struct CoverageCounts {
  std::size_t gt = 0, mt = 0, pt = 0, ml = 0;
  std::map<int, Coverage> perObject;
};

/// Classifies each GT instance by its matched fraction of labeled occurrences.
inline CoverageCounts coverage_classes(const std::vector<LabeledFrameInput>& frames,
                                       const std::vector<FrameMatch>& matches) {
  std::map<int, std::size_t> occurrences, matched;
  for (const auto& f : frames)
    for (const auto& o : f.objects) occurrences[o.instanceId]++;
  for (const auto& m : matches)
    for (const auto& p : m.pairs) matched[p.instanceId]++;
  CoverageCounts c;
  for (const auto& [iid, occ] : occurrences) {
    const Coverage cls = classify_coverage(matched[iid], occ);
    c.perObject[iid] = cls;
    ++c.gt;
    if (cls == Coverage::MostlyTracked) ++c.mt;
    else if (cls == Coverage::PartiallyTracked) ++c.pt;
    else ++c.ml;
  }
  return c;
}

struct TrackingLength {
  std::size_t numerator = 0;
  std::size_t denominator = 0;
  double value() const { return denominator == 0 ? 0.0 : static_cast<double>(numerator) / static_cast<double>(denominator); }
};

/// l_t of one GT instance. Counts its labeled occurrences plus the unlabeled
/// frames strictly between two consecutive labeled frames in which it occurs;
/// credits matched labeled frames plus those unlabeled frames in which the
/// track matched at the earlier labeled frame is present.
/// framesPresent[trackId] holds the frame indices where that track has a segment.
inline TrackingLength tracking_length(int instanceId, const std::vector<LabeledFrameInput>& frames,
                                      const std::vector<FrameMatch>& matches,
                                      const std::map<int, std::set<int>>& framesPresent,
                                      const std::set<int>& allFrames) {
  TrackingLength lt;
  auto occurs = [&](std::size_t k) {
    for (const auto& o : frames[k].objects)
      if (o.instanceId == instanceId) return true;
    return false;
  };
  auto matchedTrack = [&](std::size_t k) -> std::optional<int> {
    for (const auto& p : matches[k].pairs)
      if (p.instanceId == instanceId) return p.trackId;
    return std::nullopt;
  };
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (!occurs(k)) continue;
    ++lt.denominator;
    const auto track = matchedTrack(k);
    if (track) ++lt.numerator;
    if (k + 1 >= frames.size() || !occurs(k + 1)) continue;
    const int lo = frames[k].frameIndex;
    const int hi = frames[k + 1].frameIndex;
    const std::set<int>* present = nullptr;
    if (track) {
      const auto it = framesPresent.find(*track);
      if (it != framesPresent.end()) present = &it->second;
    }
    for (auto it = allFrames.upper_bound(lo); it != allFrames.end() && *it < hi; ++it) {
      ++lt.denominator;
      if (present && present->count(*it)) ++lt.numerator;
    }
  }
  return lt;
}

struct TrackingEvalResult {
  MotSummary mot;
  std::size_t gtCount = 0, mt = 0, pt = 0, ml = 0;
  std::map<std::string, double> ltPerObject;  // "<sequenceId>/<instanceId>"
  double ltMean = 0.0;
  std::size_t ltNumerator = 0, ltDenominator = 0;
};

/// Everything needed to evaluate one sequence.
struct SequenceTrackingInput {
  std::string sequenceId;
  const SequencePrediction* prediction = nullptr;
  std::vector<int> labeledFrames;  // ascending
  std::vector<const FrameTruth*> truths;  // aligned with labeledFrames
  std::set<int> allFrames;  // every frame index of the sequence
  std::function<bool(const GtObject&)> objectFilter;  // optional
};

struct SequenceTrackingDetail {
  std::vector<LabeledFrameInput> frames;
  std::vector<FrameMatch> matches;
};

inline SequenceTrackingDetail match_sequence(const SequenceTrackingInput& in) {
  SequenceTrackingDetail d;
  const auto lookup = in.prediction->track_lookup();
  for (std::size_t k = 0; k < in.labeledFrames.size(); ++k) {
    LabeledFrameInput f;
    f.frameIndex = in.labeledFrames[k];
    for (auto& o : gt_objects(*in.truths[k]))
      if (!in.objectFilter || in.objectFilter(o)) f.objects.push_back(std::move(o));
    const auto& segs = in.prediction->frames.at(static_cast<std::size_t>(f.frameIndex));
    const auto& ids = lookup.at(static_cast<std::size_t>(f.frameIndex));
    for (const Segment& s : segs) {
      const auto it = ids.find(s.segmentId);
      if (it == ids.end()) throw Error(ErrorCode::InvalidArgument, "segment without a track id");
      f.predictions.push_back({it->second, &s});
    }
    d.frames.push_back(std::move(f));
  }
  d.matches = match_frames(d.frames);
  return d;
}

inline TrackingEvalResult evaluate_tracking(const std::vector<SequenceTrackingInput>& sequences) {
  TrackingEvalResult r;
  std::vector<FrameMatch> allMatches;
  double ltSum = 0.0;
  for (const auto& seq : sequences) {
    const SequenceTrackingDetail d = match_sequence(seq);
    allMatches.insert(allMatches.end(), d.matches.begin(), d.matches.end());
    const CoverageCounts cov = coverage_classes(d.frames, d.matches);
    r.gtCount += cov.gt;
    r.mt += cov.mt;
    r.pt += cov.pt;
    r.ml += cov.ml;
    std::map<int, std::set<int>> present;
    for (const Track& t : seq.prediction->tracks)
      for (const TrackEntry& e : t.entries) present[t.trackId].insert(e.frameIndex);
    for (const auto& [iid, cls] : cov.perObject) {
      const TrackingLength lt = tracking_length(iid, d.frames, d.matches, present, seq.allFrames);
      r.ltPerObject[seq.sequenceId + "/" + std::to_string(iid)] = lt.value();
      r.ltNumerator += lt.numerator;
      r.ltDenominator += lt.denominator;
      ltSum += lt.value();
    }
  }
  r.mot = mota_motp(allMatches);
  r.ltMean = r.ltPerObject.empty() ? 0.0 : ltSum / static_cast<double>(r.ltPerObject.size());
  return r;
}

}  // namespace oodtrack
