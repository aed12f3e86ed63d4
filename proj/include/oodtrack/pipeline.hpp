#pragma once

// Dataset-level stages on top of the per-frame operations: detection over a
// manifest, meta classification, tracking, embedding, clustering and the
// evaluation report, plus the JSON/CSV forms the CLI writes.

#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oodtrack/cluster_metrics.hpp"
#include "oodtrack/core.hpp"
#include "oodtrack/eval_metrics.hpp"
#include "oodtrack/io.hpp"
#include "oodtrack/meta.hpp"
#include "oodtrack/parallel.hpp"
#include "oodtrack/retrieval.hpp"
#include "oodtrack/segmentation.hpp"
#include "oodtrack/tracker.hpp"
#include "oodtrack/tracking_metrics.hpp"

namespace oodtrack {

// ---------------------------------------------------------------------------
// Frame loading

/// Auto: ground-truth ROI on labeled frames, else the manifest's ROI mask,
/// else the whole frame. Predicted: the manifest's ROI mask only.
enum class RoiMode { Auto, Predicted, Full };

inline RoiMode parse_roi_mode(const std::string& s) {
  if (s == "auto") return RoiMode::Auto;
  if (s == "predicted") return RoiMode::Predicted;
  if (s == "full") return RoiMode::Full;
  throw Error(ErrorCode::InvalidArgument, "roi must be auto, predicted or full");
}

inline const char* roi_mode_name(RoiMode m) {
  switch (m) {
    case RoiMode::Auto: return "auto";
    case RoiMode::Predicted: return "predicted";
    case RoiMode::Full: return "full";
  }
  return "?";
}

inline std::optional<FrameTruth> load_truth(const DatasetManifest& m, const FrameEntry& f) {
  if (!f.labeled) return std::nullopt;
  std::optional<std::filesystem::path> cls, depth;
  if (f.classPath) cls = m.resolve(*f.classPath);
  if (f.depthPath) depth = m.resolve(*f.depthPath);
  return read_masks(m.resolve(*f.semanticPath), m.resolve(*f.instancePath), cls, depth);
}

inline Mask load_roi(const DatasetManifest& m, const FrameEntry& f, const ScoreMap& score, RoiMode mode,
                     const FrameTruth* truth) {
  Mask roi;
  if (mode == RoiMode::Auto && truth) {
    roi = truth->roi();
  } else if (mode != RoiMode::Full && f.roiPath) {
    roi = read_roi_mask(m.resolve(*f.roiPath));
  } else if (mode == RoiMode::Predicted) {
    throw Error(ErrorCode::MissingMetadata, "frame " + std::to_string(f.frameIndex) + " has no ROI mask");
  } else {
    roi = Mask(score.height, score.width, 1);
  }
  if (!roi.same_shape(score)) throw Error(ErrorCode::SizeMismatch, "ROI and score map differ in size");
  return roi;
}

struct FrameRef {
  std::size_t sequence = 0;
  std::size_t entry = 0;  // index into SequenceEntry::frames
};

inline std::vector<FrameRef> all_frames(const DatasetManifest& m, bool labeledOnly) {
  std::vector<FrameRef> refs;
  for (std::size_t s = 0; s < m.sequences.size(); ++s)
    for (std::size_t e = 0; e < m.sequences[s].frames.size(); ++e)
      if (!labeledOnly || m.sequences[s].frames[e].labeled) refs.push_back({s, e});
  return refs;
}

struct LoadedFrame {
  FrameRef ref;
  int frameIndex = 0;
  ScoreMap score;
  Mask roi;
  std::optional<FrameTruth> truth;
};

inline std::vector<LoadedFrame> load_frames(const DatasetManifest& m, const std::vector<FrameRef>& refs, RoiMode mode) {
  std::vector<LoadedFrame> out(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    const FrameEntry& f = m.sequences[refs[i].sequence].frames[refs[i].entry];
    LoadedFrame& lf = out[i];
    lf.ref = refs[i];
    lf.frameIndex = f.frameIndex;
    lf.score = read_score_map(m.resolve(f.scorePath));
    lf.truth = load_truth(m, f);
    if (lf.truth && !lf.truth->semantic.same_shape(lf.score))
      throw Error(ErrorCode::SizeMismatch, "truth and score map differ in size");
    lf.roi = load_roi(m, f, lf.score, mode, lf.truth ? &*lf.truth : nullptr);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Detection

struct DetectOptions {
  double tau = kDefaultTauSos;
  std::size_t minSize = 1;
  RoiMode roi = RoiMode::Auto;
};

inline std::vector<SequencePrediction> detect_dataset(const DatasetManifest& m, const DetectOptions& opts) {
  if (!std::isfinite(opts.tau)) throw Error(ErrorCode::InvalidArgument, "tau must be finite");
  if (opts.minSize < 1) throw Error(ErrorCode::InvalidArgument, "minSize must be at least 1");
  std::vector<SequencePrediction> out(m.sequences.size());
  for (std::size_t s = 0; s < m.sequences.size(); ++s) {
    out[s].sequenceId = m.sequences[s].sequenceId;
    out[s].frameCount = m.sequences[s].frameCount();
    out[s].frames.resize(static_cast<std::size_t>(out[s].frameCount));
  }
  const std::vector<FrameRef> refs = all_frames(m, false);
  std::vector<std::pair<int, int>> dims(refs.size());
  parallel_for(refs.size(), [&](std::size_t i) {
    const FrameEntry& f = m.sequences[refs[i].sequence].frames[refs[i].entry];
    const ScoreMap score = read_score_map(m.resolve(f.scorePath));
    std::optional<FrameTruth> truth;
    if (opts.roi == RoiMode::Auto) truth = load_truth(m, f);
    const Mask roi = load_roi(m, f, score, opts.roi, truth ? &*truth : nullptr);
    out[refs[i].sequence].frames[static_cast<std::size_t>(f.frameIndex)] =
        detect_segments(score, roi, opts.tau, opts.minSize, f.frameIndex);
    dims[i] = {score.height, score.width};
  });
  for (std::size_t i = 0; i < refs.size(); ++i) {
    SequencePrediction& seq = out[refs[i].sequence];
    if (seq.height == 0) {
      seq.height = dims[i].first;
      seq.width = dims[i].second;
    } else if (seq.height != dims[i].first || seq.width != dims[i].second) {
      throw Error(ErrorCode::SizeMismatch, "frames of sequence " + seq.sequenceId + " differ in size");
    }
  }
  return out;
}

inline const SequencePrediction& find_prediction(const std::vector<SequencePrediction>& preds, const std::string& id) {
  for (const auto& p : preds)
    if (p.sequenceId == id) return p;
  throw Error(ErrorCode::InvalidArgument, "no prediction for sequence " + id);
}

/// Segments of the labeled frames, aligned with the loaded frames.
inline std::vector<std::vector<Segment>> predictions_for(const DatasetManifest& m,
                                                         const std::vector<SequencePrediction>& preds,
                                                         const std::vector<LoadedFrame>& frames) {
  std::vector<std::vector<Segment>> out;
  for (const LoadedFrame& f : frames) {
    const SequencePrediction& p = find_prediction(preds, m.sequences[f.ref.sequence].sequenceId);
    if (f.frameIndex >= p.frameCount) throw Error(ErrorCode::OutOfBounds, "prediction lacks frame");
    out.push_back(p.frames[static_cast<std::size_t>(f.frameIndex)]);
  }
  return out;
}

struct TauSweepRow {
  double tau = 0.0;
  double f1Bar = 0.0;
};

/// F1-bar on the labeled frames for each candidate tau.
inline std::vector<TauSweepRow> sweep_tau(const DatasetManifest& m, const std::vector<double>& taus, std::size_t minSize,
                                          RoiMode mode) {
  const std::vector<LoadedFrame> frames = load_frames(m, all_frames(m, true), mode);
  std::vector<const FrameTruth*> truths;
  for (const auto& f : frames) truths.push_back(&*f.truth);
  std::vector<TauSweepRow> rows(taus.size());
  parallel_for(taus.size(), [&](std::size_t k) {
    std::vector<std::vector<Segment>> preds;
    for (const auto& f : frames) preds.push_back(detect_segments(f.score, f.roi, taus[k], minSize, f.frameIndex));
    rows[k] = {taus[k], segment_metrics(preds, truths).f1Bar};
  });
  return rows;
}

// ---------------------------------------------------------------------------
// Meta classification

inline MetaDataset build_meta_dataset(const DatasetManifest& m, const std::vector<SequencePrediction>& detections,
                                      RoiMode mode) {
  const std::vector<LoadedFrame> frames = load_frames(m, all_frames(m, true), mode);
  MetaDataset ds;
  for (const auto& s : m.sequences) ds.sequences.push_back({s.sequenceId, {}});
  std::vector<std::vector<MetaSample>> perFrame(frames.size());
  parallel_for(frames.size(), [&](std::size_t i) {
    const LoadedFrame& f = frames[i];
    const auto& segs = find_prediction(detections, m.sequences[f.ref.sequence].sequenceId)
                           .frames.at(static_cast<std::size_t>(f.frameIndex));
    const std::vector<bool> tp = label_segments_for_training(segs, *f.truth);
    for (std::size_t k = 0; k < segs.size(); ++k)
      perFrame[i].push_back({extract_meta_features(segs[k], f.score, f.roi), tp[k], f.frameIndex, segs[k].segmentId});
  });
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto& dst = ds.sequences[frames[i].ref.sequence].samples;
    dst.insert(dst.end(), perFrame[i].begin(), perFrame[i].end());
  }
  return ds;
}

/// Keeps the segments the sequence's model accepts, on every frame.
inline std::vector<SequencePrediction> apply_meta_dataset(const DatasetManifest& m,
                                                          const std::vector<SequencePrediction>& detections,
                                                          const ProtocolResult& models, RoiMode mode) {
  std::vector<SequencePrediction> out;
  for (const auto& s : m.sequences) {
    SequencePrediction p = find_prediction(detections, s.sequenceId);
    p.tracks.clear();
    out.push_back(std::move(p));
  }
  const std::vector<FrameRef> refs = all_frames(m, false);
  parallel_for(refs.size(), [&](std::size_t i) {
    const SequenceEntry& s = m.sequences[refs[i].sequence];
    const FrameEntry& f = s.frames[refs[i].entry];
    const ScoreMap score = read_score_map(m.resolve(f.scorePath));
    std::optional<FrameTruth> truth;
    if (mode == RoiMode::Auto) truth = load_truth(m, f);
    const Mask roi = load_roi(m, f, score, mode, truth ? &*truth : nullptr);
    auto& segs = out[refs[i].sequence].frames.at(static_cast<std::size_t>(f.frameIndex));
    segs = apply_meta(models.model_for(s.sequenceId), segs, score, roi);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Tracking

inline std::vector<SequencePrediction> track_dataset(const std::vector<SequencePrediction>& detections,
                                                     const TrackerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<SequencePrediction> out(detections.size());
  parallel_for(detections.size(), [&](std::size_t s) {
    const SequencePrediction& d = detections[s];
    if (d.height <= 0 || d.width <= 0) throw Error(ErrorCode::MissingMetadata, "sequence without image size");
    out[s] = track_sequence(d.frames, d.height, d.width, cfg, seed, d.sequenceId);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Embedding and clustering

struct EmbedOptions {
  std::size_t minTrackLength = 0;
  int pcaDims = 50;
  TsneConfig tsne;
  bool clampPerplexity = true;  // lower perplexity to (n-1)/3 when there are too few points
};

struct EmbeddingResult {
  std::vector<EmbeddingPoint> points;
  int descriptorDim = 0;
  int pcaDimsUsed = 0;
  double perplexityUsed = 0.0;
};

/// Descriptor rows for the retained segments. Sequences with a feature file
/// use it; all others use the built-in descriptor of the frame image crop.
inline EmbeddingResult embed_dataset(const DatasetManifest& m, const std::vector<SequencePrediction>& tracks,
                                     const EmbedOptions& opts) {
  struct Item {
    RetrievalItem r;
    const SequenceEntry* seq = nullptr;
    const FrameEntry* frame = nullptr;
    const FeatureTable* table = nullptr;
  };
  std::map<std::string, FeatureTable> tables;
  std::vector<Item> items;
  for (const SequenceEntry& s : m.sequences) {
    if (s.featurePath) tables[s.sequenceId] = read_feature_file(m.resolve(*s.featurePath));
    const SequencePrediction& p = find_prediction(tracks, s.sequenceId);
    for (const RetrievalItem& r : filter_by_track_length(p, opts.minTrackLength)) {
      Item it{r, &s, nullptr, s.featurePath ? &tables[s.sequenceId] : nullptr};
      for (const FrameEntry& f : s.frames)
        if (f.frameIndex == r.frameIndex) it.frame = &f;
      if (!it.frame) throw Error(ErrorCode::InvalidArgument, "tracked frame missing from manifest");
      items.push_back(it);
    }
  }
  const std::size_t n = items.size();
  if (n < 4) throw Error(ErrorCode::DegenerateData, "embedding needs at least four segments, got " + std::to_string(n));

  std::size_t dim = kDescriptorDim;
  for (const auto& [id, t] : tables) {
    if (dim != kDescriptorDim && t.dim != dim) throw Error(ErrorCode::DimMismatch, "feature files differ in dimension");
    dim = t.dim;
  }
  for (const auto& it : items)
    if (!it.table && dim != kDescriptorDim)
      throw Error(ErrorCode::DimMismatch, "mixing feature files with built-in descriptors of another size");

  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  std::vector<EmbeddingPoint> points(n);
  parallel_for(n, [&](std::size_t i) {
    const Item& it = items[i];
    std::vector<float> values;
    if (it.table) {
      const FeatureRecord* rec = it.table->find(it.r.frameIndex, it.r.segmentId);
      if (!rec) throw Error(ErrorCode::MissingMetadata, "no feature vector for segment " + std::to_string(it.r.segmentId) +
                                                            " in frame " + std::to_string(it.r.frameIndex));
      if (rec->values.size() != dim) throw Error(ErrorCode::DimMismatch, "feature vector of unexpected length");
      values = rec->values;
    } else {
      if (!it.frame->imagePath) throw Error(ErrorCode::MissingMetadata, "frame without image for the built-in descriptor");
      const RgbImage img = read_rgb_png(m.resolve(*it.frame->imagePath));
      values = builtin_descriptor(crop_image(img, crop_box(*it.r.segment)));
    }
    for (std::size_t j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[j];
    EmbeddingPoint& p = points[i];
    p.origin = {it.r.sequenceId, it.r.frameIndex, it.r.segmentId, it.r.trackId};
    if (const auto truth = load_truth(m, *it.frame)) {
      if (const auto gt = assign_gt(*it.r.segment, *truth)) {
        p.gtClass = gt->classId;
        p.gtInstance = gt->instanceId;
      }
    }
  });

  EmbeddingResult r;
  r.descriptorDim = static_cast<int>(dim);
  const PcaResult pca = pca_reduce(x, opts.pcaDims);
  r.pcaDimsUsed = static_cast<int>(pca.basis.cols());
  TsneConfig tsne = opts.tsne;
  if (opts.clampPerplexity && 3.0 * tsne.perplexity >= static_cast<double>(n))
    tsne.perplexity = (static_cast<double>(n) - 1.0) / 3.0;
  r.perplexityUsed = tsne.perplexity;
  const Eigen::MatrixXd y = tsne_embed(pca.reduced, tsne);
  for (std::size_t i = 0; i < n; ++i) {
    points[i].x = y(static_cast<Eigen::Index>(i), 0);
    points[i].y = y(static_cast<Eigen::Index>(i), 1);
  }
  r.points = std::move(points);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRequest {
  bool pixel = true;
  bool segment = true;
  bool tracking = true;
  bool clustering = true;
  std::optional<GroupBy> groupBy;
  std::vector<double> kappaGrid = default_kappa_grid();
  bool countFalsePositiveClass = false;
};

struct EvalInputs {
  const std::vector<SequencePrediction>* segments = nullptr;  // falls back to tracks
  const std::vector<SequencePrediction>* tracks = nullptr;
  const ClusterAssignment* clusters = nullptr;
  std::size_t minTrackLength = 0;
};

struct EvalOutput {
  std::optional<PixelEvalResult> pixel;
  std::optional<SegmentEvalResult> segment;
  std::optional<TrackingEvalResult> tracking;
  std::optional<ClusterScores> clustering;
  std::vector<GroupResult> groups;
};

inline EvalOutput evaluate_dataset(const DatasetManifest& m, const EvalInputs& in, const EvalRequest& req) {
  EvalOutput out;
  const std::vector<SequencePrediction>* segs = in.segments ? in.segments : in.tracks;
  const bool needFrames = req.pixel || (req.segment && segs) || (req.tracking && in.tracks) || req.groupBy;
  std::vector<LoadedFrame> frames;
  if (needFrames) frames = load_frames(m, all_frames(m, true), RoiMode::Full);
  std::vector<const FrameTruth*> truths;
  std::vector<const ScoreMap*> scores;
  for (const auto& f : frames) {
    truths.push_back(&*f.truth);
    scores.push_back(&f.score);
  }
  if (req.pixel) out.pixel = pixel_metrics(scores, truths);
  if ((req.segment || req.groupBy) && !segs) throw Error(ErrorCode::InvalidArgument, "segment metrics need predictions");
  if (req.segment) out.segment = segment_metrics(predictions_for(m, *segs, frames), truths, req.kappaGrid);
  if (req.groupBy) out.groups = grouped_report(predictions_for(m, *segs, frames), truths, scores, *req.groupBy, req.kappaGrid);
  if (req.tracking) {
    if (!in.tracks) throw Error(ErrorCode::InvalidArgument, "tracking metrics need tracks");
    std::vector<SequenceTrackingInput> seqs;
    for (std::size_t s = 0; s < m.sequences.size(); ++s) {
      SequenceTrackingInput t;
      t.sequenceId = m.sequences[s].sequenceId;
      t.prediction = &find_prediction(*in.tracks, t.sequenceId);
      for (const auto& fe : m.sequences[s].frames) t.allFrames.insert(fe.frameIndex);
      for (const auto& f : frames)
        if (f.ref.sequence == s) {
          t.labeledFrames.push_back(f.frameIndex);
          t.truths.push_back(&*f.truth);
        }
      seqs.push_back(std::move(t));
    }
    out.tracking = evaluate_tracking(seqs);
  }
  if (req.clustering) {
    if (!in.clusters) throw Error(ErrorCode::InvalidArgument, "clustering metrics need a cluster assignment");
    out.clustering = cluster_scores(*in.clusters, req.countFalsePositiveClass);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON and CSV forms

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline Json pixel_to_json(const PixelEvalResult& r) {
  Json j = Json::object();
  j["auprc"] = r.auprc;
  j["fpr95"] = r.fpr95;
  j["positives"] = r.positives;
  j["negatives"] = r.negatives;
  return j;
}

inline Json segment_eval_to_json(const SegmentEvalResult& r) {
  Json j = Json::object();
  j["f1Bar"] = r.f1Bar;
  j["gtSegments"] = r.gtSegments;
  j["predSegments"] = r.predSegments;
  Json rows = Json::array();
  for (const auto& k : r.perKappa) rows.push_back({{"kappa", k.kappa}, {"tp", k.tp}, {"fn", k.fn}, {"fp", k.fp}, {"f1", k.f1}});
  j["perKappa"] = std::move(rows);
  return j;
}

inline Json tracking_to_json(const TrackingEvalResult& r) {
  Json j = Json::object();
  j["mota"] = r.mot.mota;
  j["mmeRatio"] = r.mot.mmeRatio;
  j["motp"] = r.mot.motp;  // NaN serialises as null
  j["gtObjectFrames"] = r.mot.gtObjectFrames;
  j["fp"] = r.mot.fp;
  j["fn"] = r.mot.fn;
  j["mme"] = r.mot.mme;
  j["matches"] = r.mot.matches;
  j["gt"] = r.gtCount;
  j["mt"] = r.mt;
  j["pt"] = r.pt;
  j["ml"] = r.ml;
  j["ltMean"] = r.ltMean;
  j["ltNumerator"] = r.ltNumerator;
  j["ltDenominator"] = r.ltDenominator;
  j["ltPerObject"] = r.ltPerObject;
  j["ltDenominatorRule"] =
      "labeled occurrence frames plus unlabeled frames strictly between two consecutive labeled occurrences";
  return j;
}

inline Json cluster_scores_to_json(const ClusterScores& s, std::size_t minTrackLength, bool countFalsePositiveClass) {
  Json j = Json::object();
  j["minTrackLength"] = minTrackLength;
  j["csInst"] = s.csInst;
  j["csImp"] = s.csImp;
  j["csFrag"] = s.csFrag;
  j["clusters"] = s.clusters;
  j["instances"] = s.instances;
  j["classes"] = s.classes;
  j["classCountDefinition"] = "GT classes among clustered (non-noise) points";
  j["clusteredPoints"] = s.clusteredPoints;
  j["countFalsePositiveClass"] = countFalsePositiveClass;
  return j;
}

inline Json eval_output_to_json(const EvalOutput& o, const EvalRequest& req, std::size_t minTrackLength) {
  Json j = Json::object();
  j["schemaVersion"] = kSchemaVersion;
  j["stage"] = "evaluate";
  if (o.pixel) j["pixel"] = pixel_to_json(*o.pixel);
  if (o.segment) j["segment"] = segment_eval_to_json(*o.segment);
  if (o.tracking) j["tracking"] = tracking_to_json(*o.tracking);
  if (o.clustering) j["clustering"] = cluster_scores_to_json(*o.clustering, minTrackLength, req.countFalsePositiveClass);
  if (req.groupBy) {
    Json g = Json::object();
    g["groupBy"] = *req.groupBy == GroupBy::Class ? "class" : "depth";
    Json groups = Json::array();
    for (const auto& r : o.groups) {
      Json jr = Json::object();
      jr["key"] = r.key;
      jr["segment"] = segment_eval_to_json(r.segment);
      jr["pixel"] = r.pixel ? pixel_to_json(*r.pixel) : Json();
      groups.push_back(std::move(jr));
    }
    g["groups"] = std::move(groups);
    j["grouped"] = std::move(g);
  }
  return j;
}

inline std::string pr_curve_csv(const PixelEvalResult& r) {
  std::ostringstream os;
  os << "threshold,precision,recall,fpr\n";
  for (const auto& p : r.curve)
    os << format_double(p.threshold) << ',' << format_double(p.precision) << ',' << format_double(p.recall) << ','
       << format_double(p.fpr) << '\n';
  return os.str();
}

inline std::string tracking_length_csv(const TrackingEvalResult& r) {
  std::ostringstream os;
  os << "object,lt\n";
  for (const auto& [key, lt] : r.ltPerObject) os << key << ',' << format_double(lt) << '\n';
  return os.str();
}

inline Json embedding_point_to_json(const EmbeddingPoint& p) {
  Json j = Json::object();
  j["x"] = p.x;
  j["y"] = p.y;
  j["sequenceId"] = p.origin.sequenceId;
  j["frameIndex"] = p.origin.frameIndex;
  j["segmentId"] = p.origin.segmentId;
  j["trackId"] = p.origin.trackId;
  j["gtClass"] = p.gtClass ? Json(*p.gtClass) : Json();
  j["gtInstance"] = p.gtInstance ? Json(*p.gtInstance) : Json();
  return j;
}

inline EmbeddingPoint embedding_point_from_json(const Json& j) {
  EmbeddingPoint p;
  try {
    p.x = j.at("x").get<double>();
    p.y = j.at("y").get<double>();
    p.origin = {j.at("sequenceId").get<std::string>(), j.at("frameIndex").get<int>(), j.at("segmentId").get<int>(),
                j.at("trackId").get<int>()};
    if (j.contains("gtClass") && !j["gtClass"].is_null()) p.gtClass = j["gtClass"].get<int>();
    if (j.contains("gtInstance") && !j["gtInstance"].is_null()) p.gtInstance = j["gtInstance"].get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("embedding point: ") + e.what());
  }
  return p;
}

/// labels may be empty (embedding only), leaving the cluster column blank.
inline std::string embedding_csv(const std::vector<EmbeddingPoint>& points, const std::vector<int>& labels) {
  std::ostringstream os;
  os << "x,y,cluster,sequenceId,frameIndex,segmentId,trackId,gtClass,gtInstance\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    os << format_double(p.x) << ',' << format_double(p.y) << ',';
    if (!labels.empty()) os << labels[i];
    os << ',' << p.origin.sequenceId << ',' << p.origin.frameIndex << ',' << p.origin.segmentId << ','
       << p.origin.trackId << ',';
    if (p.gtClass) os << *p.gtClass;
    os << ',';
    if (p.gtInstance) os << *p.gtInstance;
    os << '\n';
  }
  return os.str();
}

}  // namespace oodtrack
