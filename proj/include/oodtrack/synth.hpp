#pragma once

// Deterministic synthetic OOD video sequences with exact ground truth.
//
// Every frame gets a score map, an ROI mask and an RGB image; labeled frames
// additionally get semantic/instance/class masks and a depth raster. Objects
// are disks or rectangles moving linearly; the ROI is the frame minus a VOID
// border band; depth grows linearly towards the top row.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "oodtrack/core.hpp"
#include "oodtrack/io.hpp"
#include "oodtrack/parallel.hpp"
#include "oodtrack/retrieval.hpp"

namespace oodtrack {

enum class SynthShape { Disk, Rectangle };

struct SynthObject {
  int classId = 1;
  SynthShape shape = SynthShape::Disk;
  double radius = 5.0;  // disk
  double halfHeight = 5.0;  // rectangle
  double halfWidth = 5.0;
  Center initialCenter{32.0, 32.0};
  Center velocity{0.0, 0.0};  // px / frame
  std::array<std::uint8_t, 3> color{200, 40, 40};
  int entryFrame = 0;
  int exitFrame = -1;  // inclusive; -1 = until the end

  bool visible(int t) const { return t >= entryFrame && (exitFrame < 0 || t <= exitFrame); }
  Center center_at(int t) const { return {initialCenter.v + velocity.v * t, initialCenter.h + velocity.h * t}; }

  bool covers(int t, int v, int h) const {
    const Center c = center_at(t);
    const double dv = v - c.v;
    const double dh = h - c.h;
    if (shape == SynthShape::Disk) return dv * dv + dh * dh <= radius * radius;
    return std::abs(dv) <= halfHeight && std::abs(dh) <= halfWidth;
  }
};

struct SynthConfig {
  std::string sequenceId = "seq0";
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int frameCount = 10;
  std::vector<SynthObject> objects;
  double scoreNoiseSigma = 0.0;
  double fpBlobRate = 0.0;  // expected blobs per frame
  double dropDetectionProb = 0.0;
  int labeledEvery = 1;
  int voidBorder = 2;
  double tau = 0.72;  // on-object scores stay above this
  double imageNoiseSigma = 0.0;

  void validate() const {
    if (height < 1 || width < 1 || frameCount < 1) throw Error(ErrorCode::InvalidArgument, "synth dims must be positive");
    if (labeledEvery < 1) throw Error(ErrorCode::InvalidArgument, "labeledEvery must be at least 1");
    if (!(dropDetectionProb >= 0.0 && dropDetectionProb <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "dropDetectionProb must lie in [0,1]");
    if (!(scoreNoiseSigma >= 0.0) || !(fpBlobRate >= 0.0) || !(imageNoiseSigma >= 0.0))
      throw Error(ErrorCode::InvalidArgument, "noise parameters must be non-negative");
    if (voidBorder < 0 || 2 * voidBorder >= std::min(height, width))
      throw Error(ErrorCode::InvalidArgument, "void border leaves no ROI");
    for (const auto& o : objects) {
      if (o.classId < 1 || o.classId > 65535) throw Error(ErrorCode::InvalidArgument, "classId must lie in 1..65535");
      if (!std::isfinite(o.initialCenter.v) || !std::isfinite(o.initialCenter.h) || !std::isfinite(o.velocity.v) ||
          !std::isfinite(o.velocity.h))
        throw Error(ErrorCode::InvalidArgument, "object trajectory must be finite");
    }
    if (objects.size() > 65535) throw Error(ErrorCode::InvalidArgument, "too many objects");
  }
};

/// Depth in meters of image row v: 20 (1 - v/H) + 0.5.
inline float synth_depth(int v, int height) {
  return static_cast<float>(20.0 * (1.0 - static_cast<double>(v) / height) + 0.5);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

struct SynthFrame {
  ScoreMap score;
  FrameTruth truth;
  Mask roi;
  RgbImage image;
};

/// Renders frame t; independent of every other frame.
inline SynthFrame render_synth_frame(const SynthConfig& cfg, int t) {
  const int H = cfg.height;
  const int W = cfg.width;
  GaussianSource gauss(mix_seed(cfg.seed, static_cast<std::uint64_t>(t)));
  SynthFrame f;
  f.score = ScoreMap(H, W, 0.0f);
  f.roi = Mask(H, W, 0);
  f.truth.semantic = Grid<std::uint8_t>(H, W, 0);
  f.truth.instance = Grid<std::uint16_t>(H, W, 0);
  f.truth.classId = Grid<std::uint16_t>(H, W, 0);
  f.truth.depth = Grid<float>(H, W, 0.0f);
  f.image = RgbImage(H, W, 128);

  std::vector<bool> dropped(cfg.objects.size(), false);
  for (std::size_t k = 0; k < cfg.objects.size(); ++k) dropped[k] = gauss.uniform() < cfg.dropDetectionProb;

  const int b = cfg.voidBorder;
  const float onLow = std::nextafter(static_cast<float>(cfg.tau), 2.0f);
  const float offHigh = std::nextafter(1.0f, 0.0f);
  auto onScore = [&](double g) {
    return std::clamp(static_cast<float>(0.95 + cfg.scoreNoiseSigma / 4.0 * g), onLow, 1.0f);
  };
  for (int v = 0; v < H; ++v) {
    for (int h = 0; h < W; ++h) {
      const bool inRoi = v >= b && v < H - b && h >= b && h < W - b;
      f.roi.at(v, h) = inRoi ? 1 : 0;
      f.truth.depth->at(v, h) = synth_depth(v, H);
      int owner = -1;
      for (std::size_t k = 0; k < cfg.objects.size(); ++k)
        if (cfg.objects[k].visible(t) && cfg.objects[k].covers(t, v, h)) owner = static_cast<int>(k);
      const double g = gauss();
      float s = std::min(static_cast<float>(std::abs(cfg.scoreNoiseSigma * g)), offHigh);
      if (!inRoi) {
        f.truth.semantic.at(v, h) = static_cast<std::uint8_t>(Label::Void);
        for (int c = 0; c < 3; ++c) f.image.at(v, h, c) = 60;
      } else if (owner >= 0) {
        const auto& obj = cfg.objects[static_cast<std::size_t>(owner)];
        f.truth.semantic.at(v, h) = static_cast<std::uint8_t>(Label::Ood);
        f.truth.instance.at(v, h) = static_cast<std::uint16_t>(owner + 1);
        f.truth.classId.at(v, h) = static_cast<std::uint16_t>(obj.classId);
        if (!dropped[static_cast<std::size_t>(owner)]) s = onScore(g);
        for (int c = 0; c < 3; ++c) f.image.at(v, h, c) = obj.color[c];
      } else {
        f.truth.semantic.at(v, h) = static_cast<std::uint8_t>(Label::NotOod);
      }
      f.score.at(v, h) = s;
    }
  }

  // False-positive blobs on background ROI pixels.
  int blobs = static_cast<int>(std::floor(cfg.fpBlobRate));
  if (gauss.uniform() < cfg.fpBlobRate - blobs) ++blobs;
  for (int n = 0; n < blobs; ++n) {
    const int radius = 1 + static_cast<int>(gauss.uniform() * 3.0);
    const int cv = b + static_cast<int>(gauss.uniform() * (H - 2 * b));
    const int ch = b + static_cast<int>(gauss.uniform() * (W - 2 * b));
    for (int v = cv - radius; v <= cv + radius; ++v)
      for (int h = ch - radius; h <= ch + radius; ++h) {
        if (!f.roi.contains(v, h) || !f.roi.at(v, h)) continue;
        if ((v - cv) * (v - cv) + (h - ch) * (h - ch) > radius * radius) continue;
        if (f.truth.instance.at(v, h) != 0) continue;
        f.score.at(v, h) = onScore(gauss());
      }
  }

  if (cfg.imageNoiseSigma > 0) {
    for (auto& px : f.image.rgb)
      px = static_cast<std::uint8_t>(std::clamp(std::lround(px + cfg.imageNoiseSigma * gauss()), 0L, 255L));
  }
  return f;
}

inline std::string frame_file(const std::string& sequenceId, int t, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d", t);
  return sequenceId + "/" + buf + ext;
}

/// Writes all sequences under outDir and returns (and writes) the manifest
/// outDir/manifest.json. Paths inside are relative to outDir.
inline DatasetManifest generate_dataset(const std::vector<SynthConfig>& configs, const std::filesystem::path& outDir) {
  DatasetManifest manifest;
  manifest.baseDir = outDir;
  try {
    std::filesystem::create_directories(outDir);
  } catch (const std::filesystem::filesystem_error& e) {
    throw Error(ErrorCode::IoError, e.what());
  }
  for (const SynthConfig& cfg : configs) {
    cfg.validate();
    SequenceEntry seq;
    seq.sequenceId = cfg.sequenceId;
    seq.frames.resize(static_cast<std::size_t>(cfg.frameCount));
    try {
      for (const char* dir : {"scores", "roi", "images", "semantic", "instance", "class", "depth"})
        std::filesystem::create_directories(outDir / dir / cfg.sequenceId);
    } catch (const std::filesystem::filesystem_error& e) {
      throw Error(ErrorCode::IoError, e.what());
    }
    parallel_for(seq.frames.size(), [&](std::size_t i) {
      const int t = static_cast<int>(i);
      const SynthFrame f = render_synth_frame(cfg, t);
      FrameEntry& e = seq.frames[i];
      e.frameIndex = t;
      e.labeled = t % cfg.labeledEvery == 0;
      e.scorePath = "scores/" + frame_file(cfg.sequenceId, t, ".oods");
      e.roiPath = "roi/" + frame_file(cfg.sequenceId, t, ".png");
      e.imagePath = "images/" + frame_file(cfg.sequenceId, t, ".png");
      write_score_map(outDir / e.scorePath, f.score);
      write_roi_mask(outDir / *e.roiPath, f.roi);
      write_rgb_png(outDir / *e.imagePath, f.image);
      if (e.labeled) {
        e.semanticPath = "semantic/" + frame_file(cfg.sequenceId, t, ".png");
        e.instancePath = "instance/" + frame_file(cfg.sequenceId, t, ".png");
        e.classPath = "class/" + frame_file(cfg.sequenceId, t, ".png");
        e.depthPath = "depth/" + frame_file(cfg.sequenceId, t, ".oods");
        write_masks(f.truth, {outDir / *e.semanticPath, outDir / *e.instancePath, outDir / *e.classPath,
                              outDir / *e.depthPath});
      }
    });
    manifest.sequences.push_back(std::move(seq));
  }
  write_manifest(outDir / "manifest.json", manifest);
  return manifest;
}

inline DatasetManifest generate(const SynthConfig& cfg, const std::filesystem::path& outDir) {
  return generate_dataset({cfg}, outDir);
}

/// A ready-made scene: `objects` disks of alternating classes spread across the
/// frame, moving slowly so consecutive masks overlap heavily.
inline SynthConfig synth_preset(std::uint64_t seed, int objects, int frameCount, int size = 96) {
  SynthConfig cfg;
  cfg.seed = seed;
  cfg.height = size;
  cfg.width = size;
  cfg.frameCount = frameCount;
  static constexpr std::array<std::array<std::uint8_t, 3>, 6> kPalette{
      {{220, 40, 40}, {40, 200, 60}, {40, 80, 230}, {230, 200, 30}, {200, 40, 200}, {30, 200, 210}}};
  for (int k = 0; k < objects; ++k) {
    SynthObject o;
    o.classId = k % 3 + 1;
    o.shape = k % 2 == 0 ? SynthShape::Disk : SynthShape::Rectangle;
    o.radius = size / 12.0;
    o.halfHeight = size / 14.0;
    o.halfWidth = size / 10.0;
    const double lane = (k + 1.0) / (objects + 1.0);
    o.initialCenter = {size * (0.25 + 0.5 * ((k * 37) % 11) / 10.0), size * lane};
    o.velocity = {0.3, (k % 2 == 0 ? 0.2 : -0.2)};
    o.color = kPalette[static_cast<std::size_t>(k) % kPalette.size()];
    cfg.objects.push_back(o);
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Controlled corruptions

enum class PerturbOp { DropFrames, SwapTrackIds, JitterScores };

inline PerturbOp parse_perturb_op(const std::string& s) {
  if (s == "dropFrames") return PerturbOp::DropFrames;
  if (s == "swapTrackIds") return PerturbOp::SwapTrackIds;
  if (s == "jitterScores") return PerturbOp::JitterScores;
  throw Error(ErrorCode::UnknownOp, "unknown perturbation " + s);
}

/// Manifest copy whose paths are all absolute, so it can live anywhere.
inline DatasetManifest absolutized(const DatasetManifest& m, const std::filesystem::path& newBase) {
  DatasetManifest out = m;
  out.baseDir = newBase;
  auto abs = [&](std::optional<std::string>& p) {
    if (p) p = std::filesystem::absolute(m.resolve(*p)).string();
  };
  for (auto& s : out.sequences) {
    abs(s.featurePath);
    for (auto& f : s.frames) {
      f.scorePath = std::filesystem::absolute(m.resolve(f.scorePath)).string();
      abs(f.semanticPath);
      abs(f.instancePath);
      abs(f.classPath);
      abs(f.depthPath);
      abs(f.roiPath);
      abs(f.imagePath);
    }
  }
  return out;
}

struct DropSpec {
  std::string sequenceId;
  int frameIndex = 0;
  int instanceId = 0;
};

/// Replaces the scores of the given GT objects with backgroundScore, so they
/// are no longer detected. Needs the frames' instance masks.
inline DatasetManifest perturb_drop_detections(const DatasetManifest& m, const std::vector<DropSpec>& drops,
                                               const std::filesystem::path& outDir, float backgroundScore = 0.0f) {
  DatasetManifest out = absolutized(m, outDir);
  for (const DropSpec& d : drops) {
    FrameEntry* frame = nullptr;
    for (auto& s : out.sequences)
      if (s.sequenceId == d.sequenceId)
        for (auto& f : s.frames)
          if (f.frameIndex == d.frameIndex) frame = &f;
    if (!frame) throw Error(ErrorCode::InvalidArgument, "drop target frame not in manifest");
    if (!frame->instancePath) throw Error(ErrorCode::MissingMetadata, "drop target frame has no instance mask");
    ScoreMap score = read_score_map(frame->scorePath);
    const Grid<std::uint16_t> inst = read_gray16(*frame->instancePath);
    if (!inst.same_shape(score)) throw Error(ErrorCode::SizeMismatch, "instance mask and score map differ");
    for (std::size_t i = 0; i < score.size(); ++i)
      if (inst[i] == d.instanceId) score[i] = backgroundScore;
    const std::filesystem::path target = outDir / "scores" / frame_file(d.sequenceId, d.frameIndex, ".oods");
    write_score_map(target, score);
    frame->scorePath = std::filesystem::absolute(target).string();
  }
  write_manifest(outDir / "manifest.json", out);
  return out;
}

/// Adds N(0, sigma) to every score (sigma = 0 leaves values untouched).
inline DatasetManifest perturb_jitter_scores(const DatasetManifest& m, double sigma, std::uint64_t seed,
                                             const std::filesystem::path& outDir) {
  DatasetManifest out = absolutized(m, outDir);
  std::uint64_t stream = 0;
  for (auto& s : out.sequences)
    for (auto& f : s.frames) {
      ScoreMap score = read_score_map(f.scorePath);
      GaussianSource gauss(mix_seed(seed, stream++));
      if (sigma > 0)
        for (auto& v : score.data) v = static_cast<float>(v + sigma * gauss());
      const std::filesystem::path target = outDir / "scores" / frame_file(s.sequenceId, f.frameIndex, ".oods");
      write_score_map(target, score);
      f.scorePath = std::filesystem::absolute(target).string();
    }
  write_manifest(outDir / "manifest.json", out);
  return out;
}

/// Moves the entries of trackId from fromFrame onwards to a fresh track id.
/// Returns the new id.
inline int perturb_swap_track_id(SequencePrediction& seq, int trackId, int fromFrame) {
  int fresh = 1;
  for (const Track& t : seq.tracks) fresh = std::max(fresh, t.trackId + 1);
  for (Track& t : seq.tracks) {
    if (t.trackId != trackId) continue;
    Track moved;
    moved.trackId = fresh;
    Track kept;
    kept.trackId = trackId;
    for (std::size_t i = 0; i < t.entries.size(); ++i) {
      Track& dst = t.entries[i].frameIndex >= fromFrame ? moved : kept;
      dst.entries.push_back(t.entries[i]);
      if (i < t.centers.size()) dst.centers.push_back(t.centers[i]);
    }
    if (moved.entries.empty()) throw Error(ErrorCode::InvalidArgument, "track has no entries after fromFrame");
    t = std::move(kept);
    seq.tracks.push_back(std::move(moved));
    seq.tracks.erase(std::remove_if(seq.tracks.begin(), seq.tracks.end(),
                                    [](const Track& x) { return x.entries.empty(); }),
                     seq.tracks.end());
    return fresh;
  }
  throw Error(ErrorCode::InvalidArgument, "no track with id " + std::to_string(trackId));
}

// ---------------------------------------------------------------------------
// JSON config

inline SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c;
  try {
    c.sequenceId = j.value("sequenceId", c.sequenceId);
    c.seed = j.value("seed", c.seed);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.frameCount = j.value("frameCount", c.frameCount);
    c.scoreNoiseSigma = j.value("scoreNoiseSigma", c.scoreNoiseSigma);
    c.fpBlobRate = j.value("fpBlobRate", c.fpBlobRate);
    c.dropDetectionProb = j.value("dropDetectionProb", c.dropDetectionProb);
    c.labeledEvery = j.value("labeledEvery", c.labeledEvery);
    c.voidBorder = j.value("voidBorder", c.voidBorder);
    c.tau = j.value("tau", c.tau);
    c.imageNoiseSigma = j.value("imageNoiseSigma", c.imageNoiseSigma);
    for (const Json& jo : j.value("objects", Json::array())) {
      SynthObject o;
      o.classId = jo.value("classId", o.classId);
      const std::string shape = jo.value("shape", std::string("disk"));
      if (shape != "disk" && shape != "rectangle") throw Error(ErrorCode::ParseError, "shape must be disk or rectangle");
      o.shape = shape == "disk" ? SynthShape::Disk : SynthShape::Rectangle;
      o.radius = jo.value("radius", o.radius);
      o.halfHeight = jo.value("halfHeight", o.halfHeight);
      o.halfWidth = jo.value("halfWidth", o.halfWidth);
      if (jo.contains("initialCenter")) o.initialCenter = {jo["initialCenter"].at(0), jo["initialCenter"].at(1)};
      if (jo.contains("velocity")) o.velocity = {jo["velocity"].at(0), jo["velocity"].at(1)};
      if (jo.contains("color")) o.color = jo["color"].get<std::array<std::uint8_t, 3>>();
      o.entryFrame = jo.value("entryFrame", o.entryFrame);
      o.exitFrame = jo.value("exitFrame", o.exitFrame);
      c.objects.push_back(o);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

inline Json synth_config_to_json(const SynthConfig& c) {
  Json j = Json::object();
  j["sequenceId"] = c.sequenceId;
  j["seed"] = c.seed;
  j["height"] = c.height;
  j["width"] = c.width;
  j["frameCount"] = c.frameCount;
  j["scoreNoiseSigma"] = c.scoreNoiseSigma;
  j["fpBlobRate"] = c.fpBlobRate;
  j["dropDetectionProb"] = c.dropDetectionProb;
  j["labeledEvery"] = c.labeledEvery;
  j["voidBorder"] = c.voidBorder;
  j["tau"] = c.tau;
  j["imageNoiseSigma"] = c.imageNoiseSigma;
  j["objects"] = Json::array();
  for (const auto& o : c.objects) {
    Json jo = Json::object();
    jo["classId"] = o.classId;
    jo["shape"] = o.shape == SynthShape::Disk ? "disk" : "rectangle";
    jo["radius"] = o.radius;
    jo["halfHeight"] = o.halfHeight;
    jo["halfWidth"] = o.halfWidth;
    jo["initialCenter"] = {o.initialCenter.v, o.initialCenter.h};
    jo["velocity"] = {o.velocity.v, o.velocity.h};
    jo["color"] = o.color;
    jo["entryFrame"] = o.entryFrame;
    jo["exitFrame"] = o.exitFrame;
    j["objects"].push_back(std::move(jo));
  }
  return j;
}

}  // namespace oodtrack
