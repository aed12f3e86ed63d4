#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oodtrack/retrieval.hpp"

using namespace oodtrack;

namespace {

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a[i][j] * a[i][j];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev;
  for (std::size_t i = 0; i < n; ++i) ev.push_back(a[i][i]);
  std::sort(ev.rbegin(), ev.rend());
  return ev;
}

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int n, int d) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

SequencePrediction tracks_of_lengths(const std::vector<int>& lengths) {
  SequencePrediction p;
  p.sequenceId = "s";
  int T = 0;
  for (int l : lengths) T = std::max(T, l);
  p.frameCount = T;
  p.frames.resize(T);
  int tid = 1;
  for (int l : lengths) {
    Track t;
    t.trackId = tid;
    for (int f = 0; f < l; ++f) {
      p.frames[f].push_back(make_segment(tid, f, PixelSet::from_pixels({{tid, f}})));
      t.entries.push_back({f, tid});
    }
    p.tracks.push_back(t);
    ++tid;
  }
  return p;
}

}  // namespace

TEST(CropBox, Examples) {
  const BBox a = crop_box(make_segment(1, 0, PixelSet::from_pixels({{3, 5}})));
  EXPECT_EQ((std::array<int, 4>{a.vMin, a.vMax, a.hMin, a.hMax}), (std::array<int, 4>{3, 3, 5, 5}));
  const BBox b = crop_box(make_segment(1, 0, PixelSet::from_pixels({{0, 0}, {2, 0}, {2, 3}})));
  EXPECT_EQ((std::array<int, 4>{b.vMin, b.vMax, b.hMin, b.hMax}), (std::array<int, 4>{0, 2, 0, 3}));
  std::vector<Pixel> full;
  for (int v = 0; v < 4; ++v)
    for (int h = 0; h < 7; ++h) full.push_back({v, h});
  const BBox c = crop_box(make_segment(1, 0, PixelSet::from_pixels(full)));
  EXPECT_EQ((std::array<int, 4>{c.vMin, c.vMax, c.hMin, c.hMax}), (std::array<int, 4>{0, 3, 0, 6}));
  Segment empty;
  try {
    crop_box(empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySegment);
  }
}

TEST(TrackLengthFilter, ZeroKeepsEverything) {
  const auto p = tracks_of_lengths({1, 4, 9});
  EXPECT_EQ(filter_by_track_length(p, 0).size(), 14u);
}

TEST(TrackLengthFilter, ShortTrackDropped) {
  const auto p = tracks_of_lengths({9, 10, 12});
  const auto kept = filter_by_track_length(p, 10);
  EXPECT_EQ(kept.size(), 22u);
  for (const auto& it : kept) EXPECT_NE(it.trackId, 1);
}

TEST(TrackLengthFilter, MatchesDirectFilterAndShrinks) {
  std::mt19937_64 rng(71);
  std::uniform_int_distribution<int> len(1, 15);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> lengths;
    for (int k = 0; k < 6; ++k) lengths.push_back(len(rng));
    const auto p = tracks_of_lengths(lengths);
    std::set<std::pair<int, int>> prev;
    for (std::size_t ell = 0; ell <= 16; ++ell) {
      std::set<std::pair<int, int>> kept, expect;
      for (const auto& it : filter_by_track_length(p, ell)) {
        kept.insert({it.frameIndex, it.segmentId});
        EXPECT_EQ(it.segment, p.find_segment(it.frameIndex, it.segmentId));
      }
      for (std::size_t k = 0; k < lengths.size(); ++k) {
        if (static_cast<std::size_t>(lengths[k]) >= ell)
          for (int f = 0; f < lengths[k]; ++f) expect.insert({f, static_cast<int>(k) + 1});
      }
      EXPECT_EQ(kept, expect);
      if (ell > 0) {
        EXPECT_TRUE(std::includes(prev.begin(), prev.end(), kept.begin(), kept.end()));
      }
      prev = kept;
    }
  }
}

TEST(Descriptor, ConstantPatch) {
  RgbImage img(5, 7);
  for (int v = 0; v < 5; ++v)
    for (int h = 0; h < 7; ++h) {
      img.at(v, h, 0) = 200;
      img.at(v, h, 1) = 10;
      img.at(v, h, 2) = 128;
    }
  const auto d = builtin_descriptor(img);
  ASSERT_EQ(d.size(), kDescriptorDim);
  for (std::size_t i = 0; i < 768; ++i) EXPECT_NEAR(d[i], 0.0f, 1e-6);
  const std::size_t base = 768;
  EXPECT_EQ(d[base + 200 * 8 / 256], 1.0f);
  EXPECT_EQ(d[base + 8 + 0], 1.0f);
  EXPECT_EQ(d[base + 16 + 4], 1.0f);
  float sum = 0;
  for (std::size_t i = base; i < d.size(); ++i) sum += d[i];
  EXPECT_FLOAT_EQ(sum, 3.0f);
}

TEST(Descriptor, DeterministicAndScaleInvariantHistogram) {
  std::mt19937_64 rng(72);
  std::uniform_int_distribution<int> px(0, 255);
  RgbImage img(6, 9);
  for (auto& x : img.rgb) x = static_cast<std::uint8_t>(px(rng));
  EXPECT_EQ(builtin_descriptor(img), builtin_descriptor(img));
  // Nearest-neighbour 3x upscaling keeps colour proportions.
  RgbImage big(18, 27);
  for (int v = 0; v < 18; ++v)
    for (int h = 0; h < 27; ++h)
      for (int c = 0; c < 3; ++c) big.at(v, h, c) = img.at(v / 3, h / 3, c);
  const auto a = builtin_descriptor(img), b = builtin_descriptor(big);
  for (std::size_t i = 768; i < kDescriptorDim; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  for (int c = 0; c < 3; ++c) {
    double mean = 0, sq = 0;
    for (int i = 0; i < 256; ++i) mean += a[c * 256 + i];
    mean /= 256;
    for (int i = 0; i < 256; ++i) sq += (a[c * 256 + i] - mean) * (a[c * 256 + i] - mean);
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(sq / 256, 1.0, 1e-4);
  }
}

TEST(Pca, AffineSubspaceReconstructsExactly) {
  std::mt19937_64 rng(73);
  for (int k = 1; k <= 4; ++k) {
    const Eigen::MatrixXd coeffs = random_matrix(rng, 30, k);
    const Eigen::MatrixXd dirs = random_matrix(rng, k, 12);
    Eigen::MatrixXd data = coeffs * dirs;
    data.rowwise() += random_matrix(rng, 1, 12).row(0);
    const PcaResult r = pca_reduce(data, k);
    ASSERT_EQ(r.reduced.cols(), k);
    const Eigen::MatrixXd back = (r.reduced * r.basis.transpose()).rowwise() + r.mean.transpose();
    EXPECT_LE((back - data).cwiseAbs().maxCoeff(), 1e-9);
    // More components requested than the rank: extras are dropped.
    EXPECT_EQ(pca_reduce(data, k + 3).reduced.cols(), k);
    // Pairwise distances preserved at full rank.
    for (int i = 0; i < 5; ++i)
      EXPECT_NEAR((data.row(i) - data.row(i + 1)).norm(), (r.reduced.row(i) - r.reduced.row(i + 1)).norm(), 1e-9);
  }
}

TEST(Pca, TwoPointsAlongDifference) {
  Eigen::MatrixXd data(2, 3);
  data << 1, 2, 3, 4, 6, 3;
  const PcaResult r = pca_reduce(data, 5);
  ASSERT_EQ(r.basis.cols(), 1);
  Eigen::Vector3d diff(3, 4, 0);
  diff.normalize();
  EXPECT_NEAR(std::abs(r.basis.col(0).dot(diff)), 1.0, 1e-12);
  EXPECT_GT(r.basis(1, 0), 0.0);  // sign convention
}

TEST(Pca, EigenvaluesMatchJacobiOracle) {
  std::mt19937_64 rng(74);
  for (const auto& [n, d] : std::vector<std::pair<int, int>>{{40, 6}, {25, 10}, {8, 20}}) {
    Eigen::MatrixXd data = random_matrix(rng, n, d);
    for (int j = 0; j < d; ++j) data.col(j) *= 1.0 + j;
    std::vector<double> mean(d, 0.0);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d; ++j) mean[j] += data(i, j) / n;
    std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) {
        for (int i = 0; i < n; ++i) cov[a][b] += (data(i, a) - mean[a]) * (data(i, b) - mean[b]);
        cov[a][b] /= n - 1;
      }
    const auto ev = jacobi_eigenvalues(cov);
    const int k = std::min(5, std::min(n - 1, d));
    const PcaResult r = pca_reduce(data, k);
    ASSERT_EQ(r.explainedVariance.size(), k);
    for (int j = 0; j < k; ++j) EXPECT_NEAR(r.explainedVariance(j), ev[j], 1e-9 * std::max(1.0, ev[0]));
    const Eigen::MatrixXd gram = r.basis.transpose() * r.basis;
    EXPECT_LE((gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff(), 1e-9);
    for (int j = 0; j < k; ++j) {
      Eigen::Index arg;
      r.basis.col(j).cwiseAbs().maxCoeff(&arg);
      EXPECT_GT(r.basis(arg, j), 0.0);
    }
  }
}

TEST(Pca, Errors) {
  EXPECT_THROW(pca_reduce(Eigen::MatrixXd::Zero(1, 3), 1), Error);
  EXPECT_THROW(pca_reduce(Eigen::MatrixXd::Zero(3, 3), 0), Error);
}

TEST(Tsne, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(75);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::MatrixXd x = random_matrix(rng, 10, 5);
    const Eigen::MatrixXd p = tsne_affinities(x, 3.0);
    const Eigen::MatrixXd y = random_matrix(rng, 10, 2);
    const Eigen::MatrixXd g = tsne_gradient(p, y);
    const double eps = 1e-6;
    for (int i = 0; i < 10; ++i)
      for (int c = 0; c < 2; ++c) {
        Eigen::MatrixXd yp = y, ym = y;
        yp(i, c) += eps;
        ym(i, c) -= eps;
        const double fd = (tsne_kl(p, yp) - tsne_kl(p, ym)) / (2 * eps);
        EXPECT_LE(std::abs(fd - g(i, c)), 1e-4 * std::max(std::abs(fd), 1e-3)) << i << "," << c;
      }
  }
}

TEST(Tsne, AffinityRowsHitPerplexity) {
  std::mt19937_64 rng(76);
  const Eigen::MatrixXd x = random_matrix(rng, 30, 4);
  const Eigen::MatrixXd p = tsne_affinities(x, 5.0);
  EXPECT_NEAR(p.sum(), 1.0, 1e-6);
  EXPECT_LE((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Tsne, SeparatesTwoBlobsAndIsDeterministic) {
  std::mt19937_64 rng(77);
  Eigen::MatrixXd x = 0.1 * random_matrix(rng, 40, 6);
  for (int i = 20; i < 40; ++i) x.row(i).array() += 10.0;
  TsneConfig cfg;
  // The default rate of 200 overshoots badly on only 40 points.
  cfg.perplexity = 5.0;
  cfg.iterations = 1000;
  cfg.learningRate = 10.0;
  cfg.seed = 3;
  const Eigen::MatrixXd y = tsne_embed(x, cfg);
  double within = 0, between = 1e18;
  for (int i = 0; i < 40; ++i)
    for (int j = i + 1; j < 40; ++j) {
      const double d = (y.row(i) - y.row(j)).norm();
      if ((i < 20) == (j < 20)) within = std::max(within, d);
      else between = std::min(between, d);
    }
  EXPECT_LT(within, between);
  EXPECT_EQ(y, tsne_embed(x, cfg));
}

TEST(Tsne, Preconditions) {
  TsneConfig cfg;
  cfg.perplexity = 2.0;
  EXPECT_THROW(tsne_embed(Eigen::MatrixXd::Zero(3, 2), cfg), Error);
  try {
    tsne_embed(Eigen::MatrixXd::Random(6, 2), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PerplexityTooLarge);
  }
}

TEST(Dbscan, AllFarApartIsNoise) {
  std::vector<std::array<double, 2>> pts;
  for (int i = 0; i < 10; ++i) pts.push_back({10.0 * i, 0.0});
  for (int l : dbscan(pts, {4.0, 2})) EXPECT_EQ(l, kNoise);
  EXPECT_EQ(dbscan({{0.0, 0.0}}, {4.0, 2}), std::vector<int>{kNoise});
  EXPECT_THROW(dbscan(pts, {0.0, 2}), Error);
}

TEST(Dbscan, TwoBlobsTwoClusters) {
  std::mt19937_64 rng(78);
  std::uniform_real_distribution<double> u(-1.4, 1.4);
  std::vector<std::array<double, 2>> pts;
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 20; ++i) pts.push_back({u(rng) + 20.0 * b, u(rng)});
  const auto labels = dbscan(pts, {4.0, 15});
  for (int i = 0; i < 20; ++i) EXPECT_EQ(labels[i], 1);
  for (int i = 20; i < 40; ++i) EXPECT_EQ(labels[i], 2);

  // Permutation invariance up to relabeling.
  std::vector<std::size_t> perm(pts.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::array<double, 2>> shuffled;
  for (auto i : perm) shuffled.push_back(pts[i]);
  const auto l2 = dbscan(shuffled, {4.0, 15});
  std::map<int, int> relabel;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    auto [it, fresh] = relabel.emplace(l2[k], labels[perm[k]]);
    EXPECT_EQ(it->second, labels[perm[k]]);
  }
}

TEST(Dbscan, BorderPointJoinsFirstCluster) {
  // Core chains at x=0 and x=6; the border point at x=3 is within eps=3 of both cores.
  std::vector<std::array<double, 2>> pts{{0, 0}, {0, 0.1}, {0, 0.2}, {3, 0}, {6, 0}, {6, 0.1}, {6, 0.2}};
  const auto labels = dbscan(pts, {3.0, 4});
  EXPECT_EQ(labels, (std::vector<int>{1, 1, 1, 1, 2, 2, 2}));
}

TEST(Dbscan, AssignmentRejectsNonFinite) {
  std::vector<EmbeddingPoint> pts(2);
  pts[1].x = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(dbscan_cluster(pts, {}), Error);
}
