#pragma once

// Meta classification of predicted OOD segments: hand-crafted segment features
// and an L1-penalised logistic regression fitted by proximal gradient descent.

#include <array>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "oodtrack/core.hpp"
#include "oodtrack/io.hpp"
#include "oodtrack/segmentation.hpp"

namespace oodtrack {

inline constexpr std::size_t kMetaFeatureCount = 15;

using MetaFeatures = std::array<double, kMetaFeatureCount>;

inline constexpr std::array<const char*, kMetaFeatureCount> kMetaFeatureNames{
    "size",          "interiorSize",     "boundarySize",  "boundaryRatio",   "meanScore",
    "varScore",      "meanBoundaryScore", "meanInteriorScore", "interiorBoundaryGap", "centerV",
    "centerH",       "bboxWidth",        "bboxHeight",    "bboxAspect",      "touchesRoiBorder"};

/// True if any pixel has an 8-neighbour outside the image or outside the ROI.
inline bool touches_roi_border(const Segment& seg, const Mask& roi) {
  bool touches = false;
  seg.pixels.for_each([&](Pixel p) {
    if (touches) return;
    for (const Pixel& d : kNeighbors8) {
      const int v = p.v + d.v;
      const int h = p.h + d.h;
      if (!roi.contains(v, h) || roi.at(v, h) == 0) {
        touches = true;
        return;
      }
    }
  });
  return touches;
}

inline MetaFeatures extract_meta_features(const Segment& seg, const ScoreMap& score, const Mask& roi) {
  if (!roi.same_shape(score)) throw Error(ErrorCode::SizeMismatch, "ROI and score map differ in size");
  const ScoreStats stats = segment_score_stats(seg, score);
  const double size = static_cast<double>(seg.size);
  const double interior = static_cast<double>(seg.interiorSize);
  const double boundary = size - interior;
  const double H = score.height;
  const double W = score.width;
  return {size,
          interior,
          boundary,
          boundary / size,
          stats.mean,
          stats.variance,
          stats.meanBoundary,
          stats.meanInterior,
          stats.meanInterior - stats.meanBoundary,
          seg.center.v / H,
          seg.center.h / W,
          seg.bbox.width() / W,
          seg.bbox.height() / H,
          static_cast<double>(seg.bbox.width()) / seg.bbox.height(),
          touches_roi_border(seg, roi) ? 1.0 : 0.0};
}

/// TP iff the segment has at least one pixel on ground-truth OOD.
inline std::vector<bool> label_segments_for_training(const std::vector<Segment>& segs, const FrameTruth& truth) {
  std::vector<bool> labels;
  labels.reserve(segs.size());
  for (const Segment& s : segs) {
    bool tp = false;
    s.pixels.for_each([&](Pixel p) {
      if (!truth.semantic.contains(p.v, p.h)) throw Error(ErrorCode::SizeMismatch, "segment outside the truth frame");
      if (truth.is_ood(static_cast<std::size_t>(p.v) * truth.width() + p.h)) tp = true;
    });
    labels.push_back(tp);
  }
  return labels;
}

struct MetaSample {
  MetaFeatures features{};
  bool tp = false;
  int frameIndex = 0;
  int segmentId = 0;
};

struct Standardizer {
  MetaFeatures means{};
  MetaFeatures stds{};

  static Standardizer fit(const std::vector<MetaSample>& samples) {
    Standardizer st;
    const double n = static_cast<double>(samples.size());
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
      double m = 0.0;
      for (const auto& s : samples) m += s.features[j];
      m /= n;
      double var = 0.0;
      for (const auto& s : samples) var += (s.features[j] - m) * (s.features[j] - m);
      const double sd = std::sqrt(var / n);
      st.means[j] = m;
      st.stds[j] = sd > 1e-12 ? sd : 1.0;  // constant column
    }
    return st;
  }

  MetaFeatures apply(const MetaFeatures& x) const {
    MetaFeatures z{};
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) z[j] = (x[j] - means[j]) / stds[j];
    return z;
  }

  MetaFeatures invert(const MetaFeatures& z) const {
    MetaFeatures x{};
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) x[j] = z[j] * stds[j] + means[j];
    return x;
  }
};

struct MetaModel {
  MetaFeatures weights{};
  double intercept = 0.0;
  Standardizer standardizer;
  double lambda = 0.0;
  double decisionThreshold = 0.5;
  int iterations = 0;

  double probability(const MetaFeatures& x) const {
    const MetaFeatures z = standardizer.apply(x);
    double eta = intercept;
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) eta += weights[j] * z[j];
    return 1.0 / (1.0 + std::exp(-eta));
  }

  bool keep(const MetaFeatures& x) const { return probability(x) >= decisionThreshold; }
};

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// Mean logistic loss plus lambda*||w||_1 on already-standardised design rows.
struct LogisticObjective {
  const std::vector<MetaFeatures>& rows;
  const std::vector<double>& targets;  // 0 or 1
  double lambda;

  double smooth(const MetaFeatures& w, double b) const {
    double loss = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double eta = b;
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j) eta += w[j] * rows[i][j];
      loss += softplus(eta) - targets[i] * eta;
    }
    return loss / static_cast<double>(rows.size());
  }

  double penalty(const MetaFeatures& w) const {
    double s = 0.0;
    for (double x : w) s += std::abs(x);
    return lambda * s;
  }

  double value(const MetaFeatures& w, double b) const { return smooth(w, b) + penalty(w); }

  /// Gradient of the smooth part; the last output is d/db.
  void gradient(const MetaFeatures& w, double b, MetaFeatures& gw, double& gb) const {
    gw.fill(0.0);
    gb = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double eta = b;
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j) eta += w[j] * rows[i][j];
      const double r = sigmoid(eta) - targets[i];
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j) gw[j] += r * rows[i][j];
      gb += r;
    }
    const double n = static_cast<double>(rows.size());
    for (double& g : gw) g /= n;
    gb /= n;
  }

  /// Max violation of the optimality conditions of the penalised problem.
  double kkt_residual(const MetaFeatures& w, double b) const {
    MetaFeatures gw;
    double gb;
    gradient(w, b, gw, gb);
    double res = std::abs(gb);
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
      const double r = w[j] != 0.0 ? std::abs(gw[j] + lambda * (w[j] > 0 ? 1.0 : -1.0))
                                   : std::max(0.0, std::abs(gw[j]) - lambda);
      res = std::max(res, r);
    }
    return res;
  }
};

inline double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

struct TrainOptions {
  double tolerance = 1e-8;  // on objective decrease
  double kktTolerance = 1e-6;
  int maxIterations = 10000;
  double decisionThreshold = 0.5;
};

/// ISTA with backtracking on the standardised features; the intercept is not penalised.
inline MetaModel train_meta(const std::vector<MetaSample>& samples, double lambda, const TrainOptions& opts = {}) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw Error(ErrorCode::InvalidArgument, "lambda must be >= 0");
  std::size_t positives = 0;
  for (const auto& s : samples) positives += s.tp ? 1 : 0;
  if (positives == 0 || positives == samples.size())
    throw Error(ErrorCode::DegenerateData, "meta training needs both TP and FP samples");

  MetaModel model;
  model.lambda = lambda;
  model.decisionThreshold = opts.decisionThreshold;
  model.standardizer = Standardizer::fit(samples);

  std::vector<MetaFeatures> rows;
  std::vector<double> targets;
  rows.reserve(samples.size());
  for (const auto& s : samples) {
    rows.push_back(model.standardizer.apply(s.features));
    targets.push_back(s.tp ? 1.0 : 0.0);
  }
  const LogisticObjective objective{rows, targets, lambda};

  const double prior = static_cast<double>(positives) / static_cast<double>(samples.size());
  MetaFeatures w{};
  double b = std::log(prior / (1.0 - prior));
  double step = 1.0;
  double f = objective.value(w, b);
  MetaFeatures gw;
  double gb;
  for (int it = 1; it <= opts.maxIterations; ++it) {
    // Let the step grow again before backtracking shrinks it.
    step = std::min(step * 2.0, 1e6);
    objective.gradient(w, b, gw, gb);
    const double smoothAt = objective.smooth(w, b);
    MetaFeatures wNext{};
    double bNext = 0.0;
    double smoothNext = 0.0;
    for (;;) {
      double quad = 0.0;
      double lin = 0.0;
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
        wNext[j] = soft_threshold(w[j] - step * gw[j], step * lambda);
        const double d = wNext[j] - w[j];
        lin += gw[j] * d;
        quad += d * d;
      }
      bNext = b - step * gb;
      lin += gb * (bNext - b);
      quad += (bNext - b) * (bNext - b);
      smoothNext = objective.smooth(wNext, bNext);
      if (smoothNext <= smoothAt + lin + quad / (2.0 * step) + 1e-15) break;
      step *= 0.5;
      if (step < 1e-20) throw Error(ErrorCode::NoConvergence, "line search collapsed");
    }
    const double fNext = smoothNext + objective.penalty(wNext);
    const double decrease = f - fNext;
    w = wNext;
    b = bNext;
    f = fNext;
    if (decrease < opts.tolerance && objective.kkt_residual(w, b) < opts.kktTolerance) {
      model.weights = w;
      model.intercept = b;
      model.iterations = it;
      return model;
    }
  }
  throw Error(ErrorCode::NoConvergence, "ISTA hit the iteration cap of " + std::to_string(opts.maxIterations));
}

inline std::vector<Segment> apply_meta(const MetaModel& model, const std::vector<Segment>& segs,
                                       const ScoreMap& score, const Mask& roi) {
  std::vector<Segment> kept;
  for (const Segment& s : segs)
    if (model.keep(extract_meta_features(s, score, roi))) kept.push_back(s);
  return kept;
}

/// F1 of the TP class.
inline double classification_f1(const std::vector<bool>& truth, const std::vector<bool>& predicted) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (truth[i]) ++fn;
  }
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

inline const std::vector<double>& default_lambda_grid() {
  static const std::vector<double> grid{1e-4, 1e-3, 1e-2, 1e-1, 1.0};
  return grid;
}

/// Picks lambda by k-fold cross-validated F1; ties go to the larger lambda.
inline double select_lambda(const std::vector<MetaSample>& samples, const std::vector<double>& grid = default_lambda_grid(),
                            int folds = 5, const TrainOptions& opts = {}) {
  double best = grid.back();
  double bestScore = -1.0;
  for (double lambda : grid) {
    double total = 0.0;
    int used = 0;
    for (int k = 0; k < folds; ++k) {
      std::vector<MetaSample> train, test;
      for (std::size_t i = 0; i < samples.size(); ++i)
        (static_cast<int>(i % static_cast<std::size_t>(folds)) == k ? test : train).push_back(samples[i]);
      if (test.empty()) continue;
      try {
        const MetaModel m = train_meta(train, lambda, opts);
        std::vector<bool> truth, pred;
        for (const auto& s : test) {
          truth.push_back(s.tp);
          pred.push_back(m.keep(s.features));
        }
        total += classification_f1(truth, pred);
        ++used;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateData && e.code() != ErrorCode::NoConvergence) throw;
      }
    }
    if (used == 0) continue;
    const double score = total / used;
    if (score >= bestScore) {
      bestScore = score;
      best = lambda;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Training protocols

enum class Protocol { M1, M2 };

inline const char* protocol_name(Protocol p) { return p == Protocol::M1 ? "M1" : "M2"; }

inline Protocol parse_protocol(const std::string& s) {
  if (s == "M1" || s == "m1") return Protocol::M1;
  if (s == "M2" || s == "m2") return Protocol::M2;
  throw Error(ErrorCode::InvalidArgument, "unknown protocol " + s);
}

struct MetaSequence {
  std::string sequenceId;
  std::vector<MetaSample> samples;
};

struct MetaDataset {
  std::vector<MetaSequence> sequences;
};

struct FoldModel {
  std::string heldOut;  // M1: held-out sequence; M2: empty (applies to all)
  MetaModel model;
};

struct ProtocolResult {
  Protocol protocol = Protocol::M1;
  std::vector<FoldModel> models;
  std::map<std::string, std::vector<double>> probabilities;  // per sequence, aligned with its samples

  const MetaModel& model_for(const std::string& sequenceId) const {
    for (const auto& fm : models)
      if (fm.heldOut.empty() || fm.heldOut == sequenceId) return fm.model;
    throw Error(ErrorCode::InvalidArgument, "no model for sequence " + sequenceId);
  }
};

/// lambda: fixed strength, or nullopt for cross-validated selection.
inline ProtocolResult run_protocol(const MetaDataset& datasetA, const MetaDataset* datasetB, Protocol protocol,
                                   std::optional<double> lambda, const TrainOptions& opts = {}) {
  ProtocolResult result;
  result.protocol = protocol;
  auto fit = [&](const std::vector<MetaSample>& train) {
    return train_meta(train, lambda ? *lambda : select_lambda(train, default_lambda_grid(), 5, opts), opts);
  };
  auto predict = [](const MetaModel& m, const MetaSequence& seq) {
    std::vector<double> p;
    p.reserve(seq.samples.size());
    for (const auto& s : seq.samples) p.push_back(m.probability(s.features));
    return p;
  };
  if (protocol == Protocol::M1) {
    if (datasetA.sequences.size() < 2)
      throw Error(ErrorCode::TooFewSequences, "leave-one-out needs at least two sequences");
    for (const MetaSequence& held : datasetA.sequences) {
      std::vector<MetaSample> train;
      for (const MetaSequence& other : datasetA.sequences)
        if (&other != &held) train.insert(train.end(), other.samples.begin(), other.samples.end());
      FoldModel fm{held.sequenceId, fit(train)};
      result.probabilities[held.sequenceId] = predict(fm.model, held);
      result.models.push_back(std::move(fm));
    }
  } else {
    if (!datasetB || datasetB->sequences.empty())
      throw Error(ErrorCode::TooFewSequences, "cross-dataset training needs a second dataset");
    std::vector<MetaSample> train;
    for (const MetaSequence& s : datasetB->sequences) train.insert(train.end(), s.samples.begin(), s.samples.end());
    FoldModel fm{"", fit(train)};
    for (const MetaSequence& s : datasetA.sequences) result.probabilities[s.sequenceId] = predict(fm.model, s);
    result.models.push_back(std::move(fm));
  }
  return result;
}

// ---------------------------------------------------------------------------
// JSON

inline Json meta_model_to_json(const MetaModel& m) {
  Json j = Json::object();
  j["featureNames"] = Json::array();
  for (const char* n : kMetaFeatureNames) j["featureNames"].push_back(n);
  j["weights"] = m.weights;
  j["intercept"] = m.intercept;
  j["featureMeans"] = m.standardizer.means;
  j["featureStds"] = m.standardizer.stds;
  j["lambda"] = m.lambda;
  j["decisionThreshold"] = m.decisionThreshold;
  j["iterations"] = m.iterations;
  return j;
}

inline MetaModel meta_model_from_json(const Json& j) {
  MetaModel m;
  try {
    m.weights = j.at("weights").get<MetaFeatures>();
    m.intercept = j.at("intercept").get<double>();
    m.standardizer.means = j.at("featureMeans").get<MetaFeatures>();
    m.standardizer.stds = j.at("featureStds").get<MetaFeatures>();
    m.lambda = j.at("lambda").get<double>();
    m.decisionThreshold = j.at("decisionThreshold").get<double>();
    m.iterations = j.value("iterations", 0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("meta model: ") + e.what());
  }
  for (double s : m.standardizer.stds)
    if (!(s > 0)) throw Error(ErrorCode::ParseError, "meta model: feature stds must be positive");
  if (!(m.decisionThreshold > 0.0 && m.decisionThreshold < 1.0))
    throw Error(ErrorCode::ParseError, "meta model: decision threshold must lie in (0,1)");
  return m;
}

}  // namespace oodtrack
