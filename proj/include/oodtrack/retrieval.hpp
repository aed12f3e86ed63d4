#pragma once

// Retrieval of OOD objects: crops of tracked segments are described by
// feature vectors, reduced with PCA and t-SNE, and clustered with DBSCAN.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "oodtrack/core.hpp"
#include "oodtrack/io.hpp"

namespace oodtrack {

inline BBox crop_box(const Segment& seg) {
  if (seg.pixels.empty()) throw Error(ErrorCode::EmptySegment, "crop box of an empty segment");
  return bounding_box(seg.pixels.decode());
}

/// A segment selected for retrieval, identified by where it came from.
struct RetrievalItem {
  std::string sequenceId;
  int frameIndex = 0;
  int segmentId = 0;
  int trackId = 0;
  std::size_t trackLength = 0;
  const Segment* segment = nullptr;
};

/// Keeps segments whose track has at least minTrackLength entries (0 keeps all).
inline std::vector<RetrievalItem> filter_by_track_length(const SequencePrediction& seq, std::size_t minTrackLength) {
  std::vector<RetrievalItem> out;
  for (const Track& t : seq.tracks) {
    if (t.length() < minTrackLength) continue;
    for (const TrackEntry& e : t.entries)
      out.push_back({seq.sequenceId, e.frameIndex, e.segmentId, t.trackId, t.length(),
                     seq.find_segment(e.frameIndex, e.segmentId)});
  }
  std::sort(out.begin(), out.end(), [](const RetrievalItem& a, const RetrievalItem& b) {
    return std::tie(a.frameIndex, a.segmentId) < std::tie(b.frameIndex, b.segmentId);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Built-in descriptor

inline constexpr int kDescriptorSide = 16;
inline constexpr int kHistogramBins = 8;
inline constexpr std::size_t kDescriptorDim = kDescriptorSide * kDescriptorSide * 3 + 3 * kHistogramBins;  // 792

inline RgbImage crop_image(const RgbImage& image, const BBox& box) {
  if (box.vMin < 0 || box.hMin < 0 || box.vMax >= image.height || box.hMax >= image.width)
    throw Error(ErrorCode::OutOfBounds, "crop box outside the image");
  RgbImage out(box.height(), box.width());
  for (int v = 0; v < out.height; ++v)
    for (int h = 0; h < out.width; ++h)
      for (int c = 0; c < 3; ++c) out.at(v, h, c) = image.at(box.vMin + v, box.hMin + h, c);
  return out;
}

/// Bilinear sample with pixel-center alignment and edge clamping.
inline double bilinear(const RgbImage& img, double v, double h, int c) {
  v = std::clamp(v, 0.0, static_cast<double>(img.height - 1));
  h = std::clamp(h, 0.0, static_cast<double>(img.width - 1));
  const int v0 = static_cast<int>(std::floor(v));
  const int h0 = static_cast<int>(std::floor(h));
  const int v1 = std::min(v0 + 1, img.height - 1);
  const int h1 = std::min(h0 + 1, img.width - 1);
  const double fv = v - v0;
  const double fh = h - h0;
  return (1 - fv) * ((1 - fh) * img.at(v0, h0, c) + fh * img.at(v0, h1, c)) +
         fv * ((1 - fh) * img.at(v1, h0, c) + fh * img.at(v1, h1, c));
}

/// 16x16x3 bilinear thumbnail (each channel standardised) followed by an
/// 8-bin histogram per channel (each channel's bins sum to 1).
inline std::vector<float> builtin_descriptor(const RgbImage& patch) {
  if (patch.height < 1 || patch.width < 1) throw Error(ErrorCode::InvalidArgument, "empty patch");
  std::vector<float> out(kDescriptorDim, 0.0f);
  const double sv = static_cast<double>(patch.height) / kDescriptorSide;
  const double sh = static_cast<double>(patch.width) / kDescriptorSide;
  for (int c = 0; c < 3; ++c) {
    std::array<double, kDescriptorSide * kDescriptorSide> chan{};
    for (int v = 0; v < kDescriptorSide; ++v)
      for (int h = 0; h < kDescriptorSide; ++h)
        chan[v * kDescriptorSide + h] = bilinear(patch, (v + 0.5) * sv - 0.5, (h + 0.5) * sh - 0.5, c);
    double mean = 0.0;
    for (double x : chan) mean += x;
    mean /= chan.size();
    double var = 0.0;
    for (double x : chan) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / chan.size());
    for (std::size_t i = 0; i < chan.size(); ++i)
      out[c * chan.size() + i] = sd > 1e-9 ? static_cast<float>((chan[i] - mean) / sd) : 0.0f;
  }
  const std::size_t base = kDescriptorSide * kDescriptorSide * 3;
  const double n = static_cast<double>(patch.height) * patch.width;
  for (int c = 0; c < 3; ++c) {
    std::array<double, kHistogramBins> hist{};
    for (int v = 0; v < patch.height; ++v)
      for (int h = 0; h < patch.width; ++h) hist[patch.at(v, h, c) * kHistogramBins / 256] += 1.0;
    for (int b = 0; b < kHistogramBins; ++b) out[base + c * kHistogramBins + b] = static_cast<float>(hist[b] / n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

struct PcaResult {
  Eigen::MatrixXd reduced;  // n x k
  Eigen::MatrixXd basis;  // d x k, orthonormal columns
  Eigen::VectorXd mean;  // d
  Eigen::VectorXd explainedVariance;  // k, descending
};

/// Projects centred rows onto the top principal axes. Components with
/// (numerically) zero variance are dropped, so the result may have fewer than
/// pcaDims columns. Each axis is signed so its largest-magnitude entry is positive.
inline PcaResult pca_reduce(const Eigen::MatrixXd& data, int pcaDims) {
  const Eigen::Index n = data.rows();
  const Eigen::Index d = data.cols();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "PCA needs at least two vectors");
  if (pcaDims < 1) throw Error(ErrorCode::InvalidArgument, "pcaDims must be positive");
  const Eigen::Index k = std::min<Eigen::Index>(pcaDims, std::min(n - 1, d));

  PcaResult r;
  r.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centred = data.rowwise() - r.mean.transpose();
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;
  Eigen::MatrixXd axes;
  if (d <= n) {
    const Eigen::MatrixXd cov = (centred.transpose() * centred) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    values = es.eigenvalues().reverse();
    axes = es.eigenvectors().rowwise().reverse();
  } else {
    // Same spectrum through the n x n Gram matrix.
    const Eigen::MatrixXd gram = (centred * centred.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    values = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    axes = Eigen::MatrixXd::Zero(d, n);
    for (Eigen::Index j = 0; j < n; ++j)
      if (values(j) > 0) axes.col(j) = centred.transpose() * u.col(j) / std::sqrt(denom * values(j));
  }
  const double top = std::max(values(0), 0.0);
  Eigen::Index kept = 0;
  while (kept < k && values(kept) > 1e-10 * std::max(top, 1e-300)) ++kept;
  r.basis = axes.leftCols(kept);
  r.explainedVariance = values.head(kept);
  for (Eigen::Index j = 0; j < kept; ++j) {
    Eigen::Index arg = 0;
    r.basis.col(j).cwiseAbs().maxCoeff(&arg);
    if (r.basis(arg, j) < 0) r.basis.col(j) *= -1.0;
  }
  r.reduced = centred * r.basis;
  return r;
}

// ---------------------------------------------------------------------------
// t-SNE

struct TsneConfig {
  double perplexity = 30.0;
  int iterations = 1000;
  double earlyExaggeration = 12.0;
  int earlyExaggerationIters = 250;
  double learningRate = 200.0;
  int momentumSwitchIter = 250;
  double initialMomentum = 0.5;
  double finalMomentum = 0.8;
  std::uint64_t seed = 0;
};

/// Standard normal draws from a 64-bit Mersenne Twister (Box-Muller), so
/// results do not depend on the standard library's distribution code.
class GaussianSource {
 public:
  explicit GaussianSource(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return (static_cast<double>(rng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0); }

  double operator()() {
    if (cached_) {
      cached_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    cached_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  bool cached_ = false;
  double spare_ = 0.0;
};

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

/// Symmetrised joint probabilities with per-point Gaussian bandwidths found by
/// bisection so the conditional entropy matches log(perplexity) within 1e-5.
inline Eigen::MatrixXd tsne_affinities(const Eigen::MatrixXd& x, double perplexity) {
  const Eigen::Index n = x.rows();
  const Eigen::MatrixXd dist = squared_distances(x);
  const double target = std::log(perplexity);
  Eigen::MatrixXd cond = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
    Eigen::VectorXd row(n);
    for (int it = 0; it < 200; ++it) {
      double minD = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) minD = std::min(minD, dist(i, j));
      double sum = 0.0, weighted = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) {
        row(j) = j == i ? 0.0 : std::exp(-beta * (dist(i, j) - minD));
        sum += row(j);
        weighted += row(j) * (dist(i, j) - minD);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      row /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
      } else {
        hi = beta;
        beta = std::isinf(lo) ? beta / 2.0 : 0.5 * (beta + lo);
      }
    }
    cond.row(i) = row.transpose();
  }
  Eigen::MatrixXd p = (cond + cond.transpose()) / (2.0 * static_cast<double>(n));
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();
  return p;
}

/// Student-t kernel numerators (1 + |yi - yj|^2)^-1 with a zero diagonal.
inline Eigen::MatrixXd tsne_kernel(const Eigen::MatrixXd& y) {
  Eigen::MatrixXd num = (1.0 + squared_distances(y).array()).inverse().matrix();
  num.diagonal().setZero();
  return num;
}

/// KL(P || Q) for an embedding y.
inline double tsne_kl(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd num = tsne_kernel(y);
  const double z = num.sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i)
    for (Eigen::Index j = 0; j < p.cols(); ++j)
      if (i != j && p(i, j) > 0) kl += p(i, j) * std::log(p(i, j) / std::max(num(i, j) / z, 1e-300));
  return kl;
}

/// dKL/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1
inline Eigen::MatrixXd tsne_gradient(const Eigen::MatrixXd& p, const Eigen::MatrixXd& y) {
  const Eigen::MatrixXd num = tsne_kernel(y);
  const Eigen::MatrixXd q = num / num.sum();
  const Eigen::MatrixXd w = ((p - q).array() * num.array()).matrix();
  const Eigen::VectorXd rowSum = w.rowwise().sum();
  return 4.0 * (rowSum.asDiagonal() * y - w * y);
}

/// Exact t-SNE to two dimensions with early exaggeration, momentum and
/// per-coordinate gains.
inline Eigen::MatrixXd tsne_embed(const Eigen::MatrixXd& x, const TsneConfig& cfg) {
  const Eigen::Index n = x.rows();
  if (n < 4) throw Error(ErrorCode::InvalidArgument, "t-SNE needs at least four points");
  if (!(cfg.perplexity > 0) || 3.0 * cfg.perplexity >= static_cast<double>(n))
    throw Error(ErrorCode::PerplexityTooLarge,
                "perplexity " + std::to_string(cfg.perplexity) + " needs more than " +
                    std::to_string(static_cast<int>(3.0 * cfg.perplexity)) + " points, got " + std::to_string(n));
  const Eigen::MatrixXd p = tsne_affinities(x, cfg.perplexity);

  GaussianSource gauss(cfg.seed);
  Eigen::MatrixXd y(n, 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int c = 0; c < 2; ++c) y(i, c) = 1e-4 * gauss();
  Eigen::MatrixXd update = Eigen::MatrixXd::Zero(n, 2);
  Eigen::MatrixXd gains = Eigen::MatrixXd::Ones(n, 2);

  for (int it = 0; it < cfg.iterations; ++it) {
    const double exaggeration = it < cfg.earlyExaggerationIters ? cfg.earlyExaggeration : 1.0;
    const double momentum = it < cfg.momentumSwitchIter ? cfg.initialMomentum : cfg.finalMomentum;
    const Eigen::MatrixXd grad = tsne_gradient(exaggeration * p, y);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c) {
        const bool sameSign = (grad(i, c) > 0) == (update(i, c) > 0);
        gains(i, c) = sameSign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
        update(i, c) = momentum * update(i, c) - cfg.learningRate * gains(i, c) * grad(i, c);
      }
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

// ---------------------------------------------------------------------------
// DBSCAN

struct DbscanConfig {
  double epsilon = 4.0;
  int minPts = 15;
};

/// Labels are kNoise or 1..n. Points are visited in index order; a border
/// point joins the first cluster that reaches it. Neighbourhoods include the
/// point itself and use distance <= epsilon.
inline std::vector<int> dbscan(const std::vector<std::array<double, 2>>& pts, const DbscanConfig& cfg) {
  if (!(cfg.epsilon > 0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (cfg.minPts < 1) throw Error(ErrorCode::InvalidArgument, "minPts must be at least 1");
  constexpr int kUnvisited = -1;
  const std::size_t n = pts.size();
  const double eps2 = cfg.epsilon * cfg.epsilon;
  auto region = [&](std::size_t i) {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = pts[i][0] - pts[j][0];
      const double dy = pts[i][1] - pts[j][1];
      if (dx * dx + dy * dy <= eps2) out.push_back(j);
    }
    return out;
  };
  std::vector<int> labels(n, kUnvisited);
  int cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] != kUnvisited) continue;
    std::vector<std::size_t> seeds = region(i);
    if (static_cast<int>(seeds.size()) < cfg.minPts) {
      labels[i] = kNoise;
      continue;
    }
    ++cluster;
    labels[i] = cluster;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const std::size_t q = seeds[k];
      if (labels[q] == kNoise) labels[q] = cluster;
      if (labels[q] != kUnvisited) continue;
      labels[q] = cluster;
      const std::vector<std::size_t> more = region(q);
      if (static_cast<int>(more.size()) >= cfg.minPts) seeds.insert(seeds.end(), more.begin(), more.end());
    }
  }
  return labels;
}

inline ClusterAssignment dbscan_cluster(std::vector<EmbeddingPoint> points, const DbscanConfig& cfg) {
  std::vector<std::array<double, 2>> xy;
  xy.reserve(points.size());
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw Error(ErrorCode::NonFiniteValue, "non-finite embedding");
    xy.push_back({p.x, p.y});
  }
  ClusterAssignment a;
  a.labels = dbscan(xy, cfg);
  a.points = std::move(points);
  return a;
}

}  // namespace oodtrack
