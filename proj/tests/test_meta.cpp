#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oodtrack/meta.hpp"
#include "oodtrack/segmentation.hpp"
#include "oracles.hpp"

using namespace oodtrack;

namespace {

std::vector<MetaSample> random_samples(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<MetaSample> out(n);
  for (auto& s : out) {
    for (double& x : s.features) x = g(rng);
    const double eta = 1.5 * s.features[0] - s.features[3] + 0.5 * g(rng);
    s.tp = eta > 0;
  }
  out[0].tp = true;
  out[1].tp = false;
  return out;
}

double l1(const MetaFeatures& w) {
  double s = 0;
  for (double x : w) s += std::abs(x);
  return s;
}

}  // namespace

TEST(MetaFeatures, SinglePixel) {
  ScoreMap s(5, 5, 0.0f);
  s.at(2, 2) = 0.9f;
  const Segment seg = make_segment(1, 0, PixelSet::from_pixels({{2, 2}}));
  const MetaFeatures f = extract_meta_features(seg, s, Mask(5, 5, 1));
  EXPECT_EQ(f[0], 1.0);
  EXPECT_EQ(f[1], 0.0);
  EXPECT_EQ(f[2], 1.0);
  EXPECT_EQ(f[3], 1.0);
  EXPECT_EQ(f[14], 0.0);
}

TEST(MetaFeatures, FullRoiTouchesBorder) {
  const ScoreMap s(4, 4, 0.9f);
  std::vector<Pixel> px;
  for (int v = 0; v < 4; ++v)
    for (int h = 0; h < 4; ++h) px.push_back({v, h});
  const MetaFeatures f = extract_meta_features(make_segment(1, 0, PixelSet::from_pixels(px)), s, Mask(4, 4, 1));
  EXPECT_EQ(f[14], 1.0);
}

TEST(MetaFeatures, MatchesRecomputation) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 60; ++trial) {
    const int H = 12, W = 14;
    ScoreMap s(H, W);
    for (auto& x : s.data) x = u(rng);
    const Mask roi = oracle::random_mask(rng, H, W, 0.85);
    Mask m = oracle::random_mask(rng, H, W, 0.5);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] && roi[i];
    for (const Segment& seg : connected_components(m)) {
      const auto px = oracle::to_set(seg.pixels);
      const double n = px.size();
      double sum = 0, sumB = 0, sumI = 0, sv = 0, sh = 0;
      double nI = 0;
      int vMin = H, vMax = -1, hMin = W, hMax = -1;
      bool touches = false;
      for (const auto& [v, h] : px) {
        sum += s.at(v, h);
        sv += v;
        sh += h;
        vMin = std::min(vMin, v);
        vMax = std::max(vMax, v);
        hMin = std::min(hMin, h);
        hMax = std::max(hMax, h);
        bool interior = true;
        for (int dv = -1; dv <= 1; ++dv)
          for (int dh = -1; dh <= 1; ++dh) {
            if (!px.count({v + dv, h + dh})) interior = false;
            const int nv = v + dv, nh = h + dh;
            if (nv < 0 || nh < 0 || nv >= H || nh >= W || !roi.at(nv, nh)) touches = true;
          }
        if (interior) {
          sumI += s.at(v, h);
          ++nI;
        } else {
          sumB += s.at(v, h);
        }
      }
      const double mean = sum / n;
      double var = 0;
      for (const auto& [v, h] : px) var += (s.at(v, h) - mean) * (s.at(v, h) - mean);
      var /= n;
      const double nB = n - nI;
      const double mB = nB ? sumB / nB : mean, mI = nI ? sumI / nI : mean;
      const double bw = hMax - hMin + 1, bh = vMax - vMin + 1;
      const MetaFeatures expect{n,  nI, nB,         nB / n,         mean,      var,     mB,
                                mI, mI - mB, sv / n / H, sh / n / W, bw / W, bh / H, bw / bh,
                                touches ? 1.0 : 0.0};
      const MetaFeatures got = extract_meta_features(seg, s, roi);
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
        EXPECT_NEAR(got[j], expect[j], 1e-12) << kMetaFeatureNames[j];
        EXPECT_TRUE(std::isfinite(got[j]));
      }
      EXPECT_GE(got[3], 0.0);
      EXPECT_LE(got[3], 1.0);
    }
  }
}

TEST(MetaLabels, InsideAndOutside) {
  FrameTruth t;
  t.semantic = Grid<std::uint8_t>(4, 4, 1);
  t.instance = Grid<std::uint16_t>(4, 4, 0);
  t.classId = Grid<std::uint16_t>(4, 4, 0);
  for (int v = 0; v < 2; ++v)
    for (int h = 0; h < 2; ++h) {
      t.semantic.at(v, h) = 2;
      t.instance.at(v, h) = 1;
      t.classId.at(v, h) = 1;
    }
  const std::vector<Segment> segs{make_segment(1, 0, PixelSet::from_pixels({{0, 0}, {1, 1}})),
                                  make_segment(2, 0, PixelSet::from_pixels({{3, 3}})),
                                  make_segment(3, 0, PixelSet::from_pixels({{1, 1}, {1, 2}}))};
  EXPECT_EQ(label_segments_for_training(segs, t), (std::vector<bool>{true, false, true}));
  const std::vector<Segment> outside{make_segment(1, 0, PixelSet::from_pixels({{9, 9}}))};
  try {
    label_segments_for_training(outside, t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SizeMismatch);
  }
}

TEST(MetaLabels, MatchesIntersectionOracle) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 100; ++trial) {
    const FrameTruth t = oracle::random_truth(rng, 16, 16, 4);
    const auto segs = connected_components(oracle::random_mask(rng, 16, 16, 0.3));
    const auto labels = label_segments_for_training(segs, t);
    for (std::size_t k = 0; k < segs.size(); ++k) {
      bool hit = false;
      for (const auto& [v, h] : oracle::to_set(segs[k].pixels)) hit |= t.semantic.at(v, h) == 2;
      EXPECT_EQ(labels[k], hit);
    }
  }
}

TEST(Logistic, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto samples = random_samples(rng, 40);
  std::vector<MetaFeatures> rows;
  std::vector<double> targets;
  for (const auto& s : samples) {
    rows.push_back(s.features);
    targets.push_back(s.tp);
  }
  const LogisticObjective obj{rows, targets, 0.1};
  for (int trial = 0; trial < 20; ++trial) {
    MetaFeatures w;
    for (double& x : w) x = 0.5 * g(rng);
    const double b = g(rng);
    MetaFeatures gw;
    double gb;
    obj.gradient(w, b, gw, gb);
    const double eps = 1e-6;
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
      MetaFeatures wp = w, wm = w;
      wp[j] += eps;
      wm[j] -= eps;
      const double fd = (obj.smooth(wp, b) - obj.smooth(wm, b)) / (2 * eps);
      EXPECT_LE(std::abs(fd - gw[j]), 1e-5 * std::max(1.0, std::abs(fd)));
    }
    const double fdb = (obj.smooth(w, b + eps) - obj.smooth(w, b - eps)) / (2 * eps);
    EXPECT_LE(std::abs(fdb - gb), 1e-5 * std::max(1.0, std::abs(fdb)));
  }
}

TEST(TrainMeta, HugeLambdaZeroesWeights) {
  std::mt19937_64 rng(24);
  auto samples = random_samples(rng, 60);
  std::size_t pos = 0;
  for (const auto& s : samples) pos += s.tp;
  const MetaModel m = train_meta(samples, 1e3);
  for (double w : m.weights) EXPECT_EQ(w, 0.0);
  const double prior = static_cast<double>(pos) / samples.size();
  EXPECT_NEAR(m.intercept, std::log(prior / (1 - prior)), 1e-6);
}

TEST(TrainMeta, KktAtConvergence) {
  std::mt19937_64 rng(25);
  const auto samples = random_samples(rng, 120);
  for (double lambda : {1e-3, 1e-2, 1e-1}) {
    const MetaModel m = train_meta(samples, lambda);
    std::vector<MetaFeatures> rows;
    std::vector<double> targets;
    for (const auto& s : samples) {
      rows.push_back(m.standardizer.apply(s.features));
      targets.push_back(s.tp);
    }
    EXPECT_LT((LogisticObjective{rows, targets, lambda}.kkt_residual(m.weights, m.intercept)), 1e-6);
  }
}

TEST(TrainMeta, SeparableOneDimensionalAgreesWithGradientDescent) {
  std::vector<MetaSample> samples;
  const std::vector<double> xs{-3.0, -2.2, -1.5, -0.7, -0.2, 0.4, 0.9, 1.6, 2.3, 3.1};
  for (double x : xs) {
    MetaSample s;
    s.features[0] = x;
    s.tp = x > 0;
    samples.push_back(s);
  }
  const double lambda = 0.01;
  const MetaModel m = train_meta(samples, lambda);
  std::size_t correct = 0;
  for (const auto& s : samples) correct += m.keep(s.features) == s.tp;
  EXPECT_EQ(correct, samples.size());

  // Plain proximal gradient with a fixed small step on the standardised 1-D problem.
  double mean = 0;
  for (double x : xs) mean += x;
  mean /= xs.size();
  double sd = 0;
  for (double x : xs) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / xs.size());
  double w = 0, b = 0;
  for (int it = 0; it < 400000; ++it) {
    double gw = 0, gb = 0;
    for (double x : xs) {
      const double z = (x - mean) / sd;
      const double r = 1.0 / (1.0 + std::exp(-(w * z + b))) - (x > 0 ? 1.0 : 0.0);
      gw += r * z;
      gb += r;
    }
    const double step = 0.5;
    w -= step * gw / xs.size();
    b -= step * gb / xs.size();
    w = w > step * lambda ? w - step * lambda : (w < -step * lambda ? w + step * lambda : 0.0);
  }
  EXPECT_NEAR(m.weights[0], w, 1e-3);
  EXPECT_NEAR(m.intercept, b, 1e-3);
  for (std::size_t j = 1; j < kMetaFeatureCount; ++j) EXPECT_EQ(m.weights[j], 0.0);
}

TEST(TrainMeta, Errors) {
  std::vector<MetaSample> one(3);
  for (auto& s : one) s.tp = true;
  try {
    train_meta(one, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateData);
  }
  std::mt19937_64 rng(26);
  const auto samples = random_samples(rng, 30);
  EXPECT_THROW(train_meta(samples, -1.0), Error);
  TrainOptions tight;
  tight.maxIterations = 1;
  tight.kktTolerance = 0.0;
  try {
    train_meta(samples, 0.01, tight);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
}

TEST(TrainMeta, RegularisationPathMonotone) {
  std::mt19937_64 rng(27);
  const auto samples = random_samples(rng, 150);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0}) {
    const double norm = l1(train_meta(samples, lambda).weights);
    EXPECT_LE(norm, prev + 1e-6) << lambda;
    prev = norm;
  }
}

TEST(Standardizer, InvertIsIdentity) {
  std::mt19937_64 rng(28);
  const auto samples = random_samples(rng, 50);
  const Standardizer st = Standardizer::fit(samples);
  for (const auto& s : samples) {
    const MetaFeatures back = st.invert(st.apply(s.features));
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) EXPECT_NEAR(back[j], s.features[j], 1e-12);
  }
}

TEST(ApplyMeta, ZeroWeightPrior) {
  ScoreMap s(6, 6, 0.9f);
  const std::vector<Segment> segs{make_segment(1, 0, PixelSet::from_pixels({{0, 0}})),
                                  make_segment(4, 0, PixelSet::from_pixels({{3, 3}, {3, 4}}))};
  MetaModel m;
  m.standardizer.stds.fill(1.0);
  m.intercept = std::log(0.9 / 0.1);
  const auto kept = apply_meta(m, segs, s, Mask(6, 6, 1));
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[1].segmentId, 4);
  m.intercept = std::log(0.1 / 0.9);
  EXPECT_TRUE(apply_meta(m, segs, s, Mask(6, 6, 1)).empty());
}

TEST(ApplyMeta, MatchesSigmoidOracle) {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int trial = 0; trial < 30; ++trial) {
    ScoreMap s(16, 16);
    for (auto& x : s.data) x = u(rng);
    const Mask roi(16, 16, 1);
    const auto segs = connected_components(oracle::random_mask(rng, 16, 16, 0.4));
    MetaModel m;
    for (std::size_t j = 0; j < kMetaFeatureCount; ++j) {
      m.weights[j] = g(rng);
      m.standardizer.means[j] = g(rng);
      m.standardizer.stds[j] = 0.5 + std::abs(g(rng));
    }
    m.intercept = g(rng);
    std::vector<int> expect;
    for (const Segment& seg : segs) {
      const MetaFeatures f = extract_meta_features(seg, s, roi);
      double eta = m.intercept;
      for (std::size_t j = 0; j < kMetaFeatureCount; ++j)
        eta += m.weights[j] * (f[j] - m.standardizer.means[j]) / m.standardizer.stds[j];
      if (1.0 / (1.0 + std::exp(-eta)) >= 0.5) expect.push_back(seg.segmentId);
    }
    std::vector<int> got;
    for (const Segment& seg : apply_meta(m, segs, s, roi)) got.push_back(seg.segmentId);
    EXPECT_EQ(got, expect);
  }
}

TEST(Protocol, M1OneModelPerSequence) {
  std::mt19937_64 rng(30);
  MetaDataset a;
  for (const char* id : {"a", "b", "c"}) a.sequences.push_back({id, random_samples(rng, 40)});
  const ProtocolResult r = run_protocol(a, nullptr, Protocol::M1, 0.01);
  ASSERT_EQ(r.models.size(), 3u);
  for (const auto& seq : a.sequences) {
    ASSERT_EQ(r.probabilities.at(seq.sequenceId).size(), seq.samples.size());
    EXPECT_EQ(&r.model_for(seq.sequenceId), &r.models[&seq - &a.sequences[0]].model);
  }
}

TEST(Protocol, M2SingleModel) {
  std::mt19937_64 rng(31);
  MetaDataset a, b;
  a.sequences.push_back({"a", random_samples(rng, 30)});
  b.sequences.push_back({"b", random_samples(rng, 50)});
  const ProtocolResult r = run_protocol(a, &b, Protocol::M2, std::nullopt);
  EXPECT_EQ(r.models.size(), 1u);
  EXPECT_EQ(r.probabilities.size(), 1u);
  EXPECT_THROW(run_protocol(a, nullptr, Protocol::M2, 0.1), Error);
  try {
    run_protocol(a, nullptr, Protocol::M1, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooFewSequences);
  }
}

TEST(Protocol, M1HeldOutLabelsUnused) {
  std::mt19937_64 rng(32);
  MetaDataset a;
  for (const char* id : {"a", "b", "c", "d"}) a.sequences.push_back({id, random_samples(rng, 40)});
  const ProtocolResult clean = run_protocol(a, nullptr, Protocol::M1, std::nullopt);
  for (std::size_t k = 0; k < a.sequences.size(); ++k) {
    MetaDataset poisoned = a;
    for (auto& s : poisoned.sequences[k].samples) s.tp = !s.tp;
    const ProtocolResult r = run_protocol(poisoned, nullptr, Protocol::M1, std::nullopt);
    const std::string& id = a.sequences[k].sequenceId;
    EXPECT_EQ(r.probabilities.at(id), clean.probabilities.at(id));
  }
}

TEST(MetaModelJson, RoundTrip) {
  std::mt19937_64 rng(33);
  const MetaModel m = train_meta(random_samples(rng, 60), 0.01);
  const MetaModel back = meta_model_from_json(Json::parse(meta_model_to_json(m).dump()));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.intercept, m.intercept);
  EXPECT_EQ(back.standardizer.stds, m.standardizer.stds);
  Json bad = meta_model_to_json(m);
  bad["decisionThreshold"] = 1.5;
  EXPECT_THROW(meta_model_from_json(bad), Error);
}

TEST(ClassificationF1, Cases) {
  EXPECT_EQ(classification_f1({}, {}), 1.0);
  EXPECT_DOUBLE_EQ(classification_f1({true, true, false}, {true, false, true}), 0.5);
}
