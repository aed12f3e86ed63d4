#pragma once

// Cluster quality of retrieved OOD segments against ground truth:
//   CS_inst  mean over instances of the share of its segments in its largest cluster
//   CS_imp   mean over clusters of the number of distinct classes inside
//   CS_frag  mean over classes of the number of clusters containing the class
// NOISE points take part in none of them.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "oodtrack/core.hpp"

namespace oodtrack {

struct GtAssignment {
  int classId = 0;
  int instanceId = 0;
  friend bool operator==(const GtAssignment&, const GtAssignment&) = default;
};

/// Class and instance with the largest pixel overlap (smaller instance id on
/// ties), or nullopt when the segment touches no GT object.
inline std::optional<GtAssignment> assign_gt(const Segment& seg, const FrameTruth& truth) {
  std::map<int, std::size_t> overlap;
  std::map<int, int> cls;
  seg.pixels.for_each([&](Pixel p) {
    if (!truth.semantic.contains(p.v, p.h)) throw Error(ErrorCode::SizeMismatch, "segment outside the truth frame");
    const int id = truth.instance.at(p.v, p.h);
    if (id == 0) return;
    overlap[id]++;
    cls.emplace(id, truth.classId.at(p.v, p.h));
  });
  std::optional<GtAssignment> best;
  std::size_t bestCount = 0;
  for (const auto& [id, count] : overlap)
    if (count > bestCount) {
      bestCount = count;
      best = GtAssignment{cls[id], id};
    }
  return best;
}

struct ClusterScores {
  double csInst = 0.0;
  double csImp = 0.0;
  double csFrag = 0.0;
  int clusters = 0;
  int instances = 0;  // p
  int classes = 0;  // q
  std::size_t clusteredPoints = 0;
};

/// Instances are identified per sequence.
inline double cs_inst(const ClusterAssignment& a) {
  std::map<std::pair<std::string, int>, std::map<int, std::size_t>> perInstance;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.labels[i] == kNoise || !a.points[i].gtInstance) continue;
    perInstance[{a.points[i].origin.sequenceId, *a.points[i].gtInstance}][a.labels[i]]++;
  }
  if (perInstance.empty()) throw Error(ErrorCode::NoInstances, "no clustered point carries a GT instance");
  double sum = 0.0;
  for (const auto& [key, counts] : perInstance) {
    std::size_t total = 0, best = 0;
    for (const auto& [cluster, c] : counts) {
      total += c;
      best = std::max(best, c);
    }
    sum += static_cast<double>(best) / static_cast<double>(total);
  }
  return sum / static_cast<double>(perInstance.size());
}

/// Clusters without any GT-assigned point are skipped unless
/// countFalsePositiveClass is set, in which case unassigned points form one
/// extra pseudo-class.
inline double cs_imp(const ClusterAssignment& a, bool countFalsePositiveClass = false) {
  constexpr int kFalsePositiveClass = -1;
  std::map<int, std::set<int>> classesPerCluster;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.labels[i] == kNoise) continue;
    auto& set = classesPerCluster[a.labels[i]];
    if (a.points[i].gtClass) set.insert(*a.points[i].gtClass);
    else if (countFalsePositiveClass) set.insert(kFalsePositiveClass);
  }
  if (classesPerCluster.empty()) throw Error(ErrorCode::NoClusters, "no non-noise cluster");
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& [cluster, set] : classesPerCluster) {
    if (set.empty()) continue;
    sum += static_cast<double>(set.size());
    ++counted;
  }
  if (counted == 0) throw Error(ErrorCode::NoClasses, "no cluster contains a GT-assigned point");
  return sum / static_cast<double>(counted);
}

inline double cs_frag(const ClusterAssignment& a) {
  std::map<int, std::set<int>> clustersPerClass;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.labels[i] == kNoise || !a.points[i].gtClass) continue;
    clustersPerClass[*a.points[i].gtClass].insert(a.labels[i]);
  }
  if (clustersPerClass.empty()) throw Error(ErrorCode::NoClasses, "no clustered point carries a GT class");
  double sum = 0.0;
  for (const auto& [cls, clusters] : clustersPerClass) sum += static_cast<double>(clusters.size());
  return sum / static_cast<double>(clustersPerClass.size());
}

inline ClusterScores cluster_scores(const ClusterAssignment& a, bool countFalsePositiveClass = false) {
  ClusterScores s;
  s.csInst = cs_inst(a);
  s.csImp = cs_imp(a, countFalsePositiveClass);
  s.csFrag = cs_frag(a);
  std::set<int> clusters;
  std::set<std::pair<std::string, int>> instances;
  std::set<int> classes;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    if (a.labels[i] == kNoise) continue;
    ++s.clusteredPoints;
    clusters.insert(a.labels[i]);
    if (a.points[i].gtInstance) instances.insert({a.points[i].origin.sequenceId, *a.points[i].gtInstance});
    if (a.points[i].gtClass) classes.insert(*a.points[i].gtClass);
  }
  s.clusters = static_cast<int>(clusters.size());
  s.instances = static_cast<int>(instances.size());
  s.classes = static_cast<int>(classes.size());
  return s;
}

}  // namespace oodtrack
