#pragma once

// Domain types shared across the OOD tracking pipeline. No I/O, no algorithms
// beyond the geometry needed to build a Segment.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oodtrack {

enum class ErrorCode {
  InvalidArgument,
  EmptySegment,
  BadMagic,
  DimMismatch,
  NonFiniteValue,
  SizeMismatch,
  IllegalLabel,
  OutOfBounds,
  ParseError,
  IoError,
  DegenerateData,
  NoConvergence,
  TooFewSequences,
  NoPositives,
  NoNegatives,
  EmptyGt,
  MissingMetadata,
  NoGtObjects,
  PerplexityTooLarge,
  NoInstances,
  NoClusters,
  NoClasses,
  UnknownOp,
};

inline const char* error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptySegment: return "EmptySegment";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::IllegalLabel: return "IllegalLabel";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::DegenerateData: return "DegenerateData";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::TooFewSequences: return "TooFewSequences";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::NoNegatives: return "NoNegatives";
    case ErrorCode::EmptyGt: return "EmptyGt";
    case ErrorCode::MissingMetadata: return "MissingMetadata";
    case ErrorCode::NoGtObjects: return "NoGtObjects";
    case ErrorCode::PerplexityTooLarge: return "PerplexityTooLarge";
    case ErrorCode::NoInstances: return "NoInstances";
    case ErrorCode::NoClusters: return "NoClusters";
    case ErrorCode::NoClasses: return "NoClasses";
    case ErrorCode::UnknownOp: return "UnknownOp";
  }
  return "Unknown";
}

/// Every failure in the toolkit is reported as an Error carrying a typed code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Pixel coordinate: row v, column h, origin top-left.
struct Pixel {
  int v = 0;
  int h = 0;
  friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Dense row-major raster.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

  std::size_t size() const { return data.size(); }
  bool contains(int v, int h) const { return v >= 0 && h >= 0 && v < height && h < width; }
  T& at(int v, int h) { return data[static_cast<std::size_t>(v) * width + h]; }
  const T& at(int v, int h) const { return data[static_cast<std::size_t>(v) * width + h]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }
  bool same_shape(int h, int w) const { return height == h && width == w; }
  template <typename U>
  bool same_shape(const Grid<U>& other) const {
    return height == other.height && width == other.width;
  }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Binary raster; nonzero means set.
using Mask = Grid<std::uint8_t>;

/// Per-pixel OOD score s. Higher means more likely OOD.
struct ScoreMap : Grid<float> {
  ScoreMap() = default;
  ScoreMap(int h, int w, float fill = 0.0f) : Grid<float>(h, w, fill) {}

  void validate() const {
    if (height < 1 || width < 1) throw Error(ErrorCode::DimMismatch, "score map must be at least 1x1");
    if (data.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width))
      throw Error(ErrorCode::DimMismatch, "score map value count does not match height*width");
    for (float value : data)
      if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteValue, "score map contains a non-finite value");
  }
};

enum class Label : std::uint8_t { Void = 0, NotOod = 1, Ood = 2 };

/// Ground truth for one labeled frame.
struct FrameTruth {
  Grid<std::uint8_t> semantic;  // Label codes
  Grid<std::uint16_t> instance;  // 0 = no instance
  Grid<std::uint16_t> classId;  // 0 where not OOD
  std::optional<Grid<float>> depth;  // meters

  int height() const { return semantic.height; }
  int width() const { return semantic.width; }

  bool is_ood(std::size_t i) const { return semantic[i] == static_cast<std::uint8_t>(Label::Ood); }
  bool is_void(std::size_t i) const { return semantic[i] == static_cast<std::uint8_t>(Label::Void); }

  /// Region of interest: every non-VOID pixel.
  Mask roi() const {
    Mask m(semantic.height, semantic.width, 0);
    for (std::size_t i = 0; i < semantic.size(); ++i) m[i] = is_void(i) ? 0 : 1;
    return m;
  }

  void validate() const {
    if (!instance.same_shape(semantic) || !classId.same_shape(semantic) ||
        (depth && !depth->same_shape(semantic)))
      throw Error(ErrorCode::SizeMismatch, "truth rasters differ in size");
    for (std::size_t i = 0; i < semantic.size(); ++i) {
      if (semantic[i] > 2) throw Error(ErrorCode::IllegalLabel, "semantic code outside {0,1,2}");
      const bool ood = is_ood(i);
      if ((instance[i] > 0) != ood)
        throw Error(ErrorCode::IllegalLabel, "instance id must be positive exactly on OOD pixels");
      if ((classId[i] > 0) != ood)
        throw Error(ErrorCode::IllegalLabel, "class id must be positive exactly on OOD pixels");
    }
  }
};

/// Horizontal run of pixels in one row.
struct Run {
  int row = 0;
  int start = 0;
  int length = 0;
  friend bool operator==(const Run&, const Run&) = default;
};

/// Run-length encoded pixel set, runs sorted by (row, start) and never touching.
class PixelSet {
 public:
  PixelSet() = default;

  static PixelSet from_pixels(std::vector<Pixel> pixels) {
    std::sort(pixels.begin(), pixels.end());
    pixels.erase(std::unique(pixels.begin(), pixels.end()), pixels.end());
    PixelSet set;
    for (const Pixel& p : pixels) {
      if (!set.runs_.empty()) {
        Run& last = set.runs_.back();
        if (last.row == p.v && last.start + last.length == p.h) {
          ++last.length;
          continue;
        }
      }
      set.runs_.push_back({p.v, p.h, 1});
    }
    set.count_ = pixels.size();
    return set;
  }

  /// Runs must already be canonical (sorted, non-overlapping, non-adjacent).
  static PixelSet from_runs(std::vector<Run> runs) {
    PixelSet set;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      const Run& r = runs[i];
      if (r.length < 1) throw Error(ErrorCode::InvalidArgument, "run length must be positive");
      if (i > 0) {
        const Run& prev = runs[i - 1];
        if (prev.row > r.row || (prev.row == r.row && prev.start + prev.length >= r.start))
          throw Error(ErrorCode::InvalidArgument, "runs are not canonical");
      }
      set.count_ += static_cast<std::size_t>(r.length);
    }
    set.runs_ = std::move(runs);
    return set;
  }

  std::vector<Pixel> decode() const {
    std::vector<Pixel> out;
    out.reserve(count_);
    for (const Run& r : runs_)
      for (int h = r.start; h < r.start + r.length; ++h) out.push_back({r.row, h});
    return out;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const Run& r : runs_)
      for (int h = r.start; h < r.start + r.length; ++h) fn(Pixel{r.row, h});
  }

  const std::vector<Run>& runs() const { return runs_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  bool contains(Pixel p) const {
    auto it = std::lower_bound(runs_.begin(), runs_.end(), p, [](const Run& r, const Pixel& q) {
      return r.row < q.v || (r.row == q.v && r.start + r.length <= q.h);
    });
    return it != runs_.end() && it->row == p.v && it->start <= p.h && p.h < it->start + it->length;
  }

  friend bool operator==(const PixelSet&, const PixelSet&) = default;

 private:
  std::vector<Run> runs_;
  std::size_t count_ = 0;
};

/// Inclusive bounds.
struct BBox {
  int vMin = 0;
  int vMax = 0;
  int hMin = 0;
  int hMax = 0;
  int height() const { return vMax - vMin + 1; }
  int width() const { return hMax - hMin + 1; }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Center {
  double v = 0.0;
  double h = 0.0;
  friend bool operator==(const Center&, const Center&) = default;
};

inline double distance(const Center& a, const Center& b) { return std::hypot(a.v - b.v, a.h - b.h); }

/// Arithmetic mean of the pixel coordinates.
inline Center geometric_center(std::span<const Pixel> pixels) {
  if (pixels.empty()) throw Error(ErrorCode::EmptySegment, "geometric center of an empty pixel set");
  double sv = 0.0;
  double sh = 0.0;
  for (const Pixel& p : pixels) {
    sv += p.v;
    sh += p.h;
  }
  const double n = static_cast<double>(pixels.size());
  return {sv / n, sh / n};
}

inline BBox bounding_box(std::span<const Pixel> pixels) {
  if (pixels.empty()) throw Error(ErrorCode::EmptySegment, "bounding box of an empty pixel set");
  BBox box{pixels[0].v, pixels[0].v, pixels[0].h, pixels[0].h};
  for (const Pixel& p : pixels) {
    box.vMin = std::min(box.vMin, p.v);
    box.vMax = std::max(box.vMax, p.v);
    box.hMin = std::min(box.hMin, p.h);
    box.hMax = std::max(box.hMax, p.h);
  }
  return box;
}

/// Local occupancy bitmap over a bounding box padded by one pixel on each side.
class LocalBitmap {
 public:
  LocalBitmap(const BBox& box, std::span<const Pixel> pixels)
      : v0_(box.vMin - 1), h0_(box.hMin - 1), rows_(box.height() + 2), cols_(box.width() + 2),
        bits_(static_cast<std::size_t>(rows_) * cols_, 0) {
    for (const Pixel& p : pixels) bits_[index(p.v, p.h)] = 1;
  }

  bool test(int v, int h) const {
    if (v < v0_ || h < h0_ || v >= v0_ + rows_ || h >= h0_ + cols_) return false;
    return bits_[index(v, h)] != 0;
  }

  bool interior(int v, int h) const {
    for (int dv = -1; dv <= 1; ++dv)
      for (int dh = -1; dh <= 1; ++dh)
        if (!test(v + dv, h + dh)) return false;
    return true;
  }

 private:
  std::size_t index(int v, int h) const {
    return static_cast<std::size_t>(v - v0_) * cols_ + static_cast<std::size_t>(h - h0_);
  }
  int v0_, h0_, rows_, cols_;
  std::vector<std::uint8_t> bits_;
};

/// One connected predicted OOD component in one frame.
struct Segment {
  int segmentId = 0;
  int frameIndex = 0;
  PixelSet pixels;
  BBox bbox;
  Center center;
  std::size_t size = 0;
  double meanScore = 0.0;
  std::size_t interiorSize = 0;

  std::size_t boundarySize() const { return size - interiorSize; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Builds a Segment with geometry (bbox, center, size, interior) filled in.
inline Segment make_segment(int segmentId, int frameIndex, PixelSet pixels, double meanScore = 0.0) {
  if (pixels.empty()) throw Error(ErrorCode::EmptySegment, "segment without pixels");
  const std::vector<Pixel> decoded = pixels.decode();
  Segment seg;
  seg.segmentId = segmentId;
  seg.frameIndex = frameIndex;
  seg.bbox = bounding_box(decoded);
  seg.center = geometric_center(decoded);
  seg.size = decoded.size();
  seg.meanScore = meanScore;
  LocalBitmap bitmap(seg.bbox, decoded);
  for (const Pixel& p : decoded)
    if (bitmap.interior(p.v, p.h)) ++seg.interiorSize;
  seg.pixels = std::move(pixels);
  return seg;
}

struct TrackEntry {
  int frameIndex = 0;
  int segmentId = 0;
  friend bool operator==(const TrackEntry&, const TrackEntry&) = default;
};

struct Track {
  int trackId = 0;
  std::vector<TrackEntry> entries;  // strictly increasing frameIndex
  std::vector<std::pair<int, Center>> centers;  // (frameIndex, center) history

  int lastFrame() const { return entries.empty() ? -1 : entries.back().frameIndex; }
  std::size_t length() const { return entries.size(); }
  friend bool operator==(const Track&, const Track&) = default;
};

struct SequencePrediction {
  std::string sequenceId;
  int frameCount = 0;
  int height = 0;  // image size; 0 when unknown
  int width = 0;
  std::vector<std::vector<Segment>> frames;  // indexed by frameIndex
  std::vector<Track> tracks;

  /// frame -> (segmentId -> trackId)
  std::vector<std::map<int, int>> track_lookup() const {
    std::vector<std::map<int, int>> lookup(static_cast<std::size_t>(frameCount));
    for (const Track& t : tracks)
      for (const TrackEntry& e : t.entries) lookup.at(static_cast<std::size_t>(e.frameIndex))[e.segmentId] = t.trackId;
    return lookup;
  }

  const Segment* find_segment(int frameIndex, int segmentId) const {
    if (frameIndex < 0 || frameIndex >= static_cast<int>(frames.size())) return nullptr;
    for (const Segment& s : frames[static_cast<std::size_t>(frameIndex)])
      if (s.segmentId == segmentId) return &s;
    return nullptr;
  }

  void validate() const {
    if (static_cast<int>(frames.size()) != frameCount)
      throw Error(ErrorCode::DimMismatch, "frame list length differs from frameCount");
    std::map<std::pair<int, int>, int> owner;
    for (const Track& t : tracks) {
      int prev = -1;
      for (const TrackEntry& e : t.entries) {
        if (e.frameIndex <= prev) throw Error(ErrorCode::InvalidArgument, "track frames must increase strictly");
        prev = e.frameIndex;
        if (e.frameIndex < 0 || e.frameIndex >= frameCount)
          throw Error(ErrorCode::OutOfBounds, "track frame outside the sequence");
        if (!find_segment(e.frameIndex, e.segmentId))
          throw Error(ErrorCode::InvalidArgument, "track references a missing segment");
        if (!owner.emplace(std::pair{e.frameIndex, e.segmentId}, t.trackId).second)
          throw Error(ErrorCode::InvalidArgument, "segment owned by two tracks");
      }
    }
  }
};

struct PointOrigin {
  std::string sequenceId;
  int frameIndex = 0;
  int segmentId = 0;
  int trackId = 0;
};

struct EmbeddingPoint {
  double x = 0.0;
  double y = 0.0;
  PointOrigin origin;
  std::optional<int> gtClass;
  std::optional<int> gtInstance;
};

inline constexpr int kNoise = 0;

/// labels[i] is kNoise or a cluster id in 1..clusterCount.
struct ClusterAssignment {
  std::vector<EmbeddingPoint> points;
  std::vector<int> labels;

  int clusterCount() const {
    int n = 0;
    for (int l : labels) n = std::max(n, l);
    return n;
  }
};

}  // namespace oodtrack
