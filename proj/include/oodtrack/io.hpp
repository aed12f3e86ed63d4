#pragma once

// Readers and writers for the toolkit's on-disk formats:
//   score maps / depth rasters  "OODS" u32 height, u32 width, f32[height*width]   (little endian)
//   feature files               "OODF" u32 count, u32 dim, {u32 frame, u32 segment, f32[dim]}*
//   semantic masks              8-bit gray PNG, 0=VOID 1=NOT_OOD 2=OOD
//   instance / class masks      16-bit gray PNG, 0=background
//   ROI masks                   8-bit gray PNG, nonzero=inside
//   frame images                8-bit RGB PNG
//   manifests, stage outputs    JSON with a fixed key order

#include <png.h>

#include <bit>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "oodtrack/core.hpp"

namespace oodtrack {

using Json = nlohmann::ordered_json;
using Bytes = std::vector<std::uint8_t>;

inline constexpr int kSchemaVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void put_u32(Bytes& out, std::uint32_t value) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

inline void put_f32(Bytes& out, float value) { put_u32(out, std::bit_cast<std::uint32_t>(value)); }

class ByteReader {
 public:
  explicit ByteReader(const Bytes& bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint32_t u32() {
    if (!has(4)) throw Error(ErrorCode::DimMismatch, "unexpected end of data");
    std::uint32_t value = 0;
    for (int i = 0; i < 4; ++i) value |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return value;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  bool magic(const char* tag) {
    if (!has(4)) return false;
    const bool ok = std::memcmp(bytes_.data() + pos_, tag, 4) == 0;
    pos_ += 4;
    return ok;
  }

 private:
  const Bytes& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline Bytes read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& path, const Bytes& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

inline std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_bytes(path);
  return std::string(b.begin(), b.end());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_bytes(path, Bytes(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Float rasters (score maps, depth)

inline Bytes encode_float_raster(const Grid<float>& grid) {
  Bytes out;
  out.reserve(12 + grid.size() * 4);
  for (char c : std::string_view("OODS")) out.push_back(static_cast<std::uint8_t>(c));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.height));
  detail::put_u32(out, static_cast<std::uint32_t>(grid.width));
  for (float v : grid.data) detail::put_f32(out, v);
  return out;
}

inline ScoreMap decode_score_map(const Bytes& bytes) {
  detail::ByteReader in(bytes);
  if (!in.magic("OODS")) throw Error(ErrorCode::BadMagic, "expected OODS header");
  const std::uint32_t height = in.u32();
  const std::uint32_t width = in.u32();
  if (height < 1 || width < 1) throw Error(ErrorCode::DimMismatch, "raster dimensions must be positive");
  const std::uint64_t count = static_cast<std::uint64_t>(height) * width;
  if (in.remaining() != count * 4) throw Error(ErrorCode::DimMismatch, "payload size does not match header dims");
  ScoreMap map(static_cast<int>(height), static_cast<int>(width));
  for (std::uint64_t i = 0; i < count; ++i) map[i] = in.f32();
  map.validate();
  return map;
}

inline ScoreMap read_score_map(const std::filesystem::path& path) { return decode_score_map(read_bytes(path)); }

inline void write_score_map(const std::filesystem::path& path, const Grid<float>& map) {
  write_bytes(path, encode_float_raster(map));
}

inline Grid<float> read_depth(const std::filesystem::path& path) {
  ScoreMap m = read_score_map(path);
  return static_cast<Grid<float>&&>(std::move(m));
}

// ---------------------------------------------------------------------------
// PNG

struct PngImage {
  int height = 0;
  int width = 0;
  int channels = 0;  // 1 or 3
  int bitDepth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;  // row-major, interleaved channels
};

namespace detail {

struct PngMemoryReader {
  const Bytes* bytes;
  std::size_t pos;
};

inline void png_read_memory(png_structp png, png_bytep out, png_size_t length) {
  auto* src = static_cast<PngMemoryReader*>(png_get_io_ptr(png));
  if (src->bytes->size() - src->pos < length) png_error(png, "truncated PNG");
  std::memcpy(out, src->bytes->data() + src->pos, length);
  src->pos += length;
}

inline void png_write_memory(png_structp png, png_bytep data, png_size_t length) {
  auto* dst = static_cast<Bytes*>(png_get_io_ptr(png));
  dst->insert(dst->end(), data, data + length);
}

inline void png_flush_noop(png_structp) {}

inline void png_silent_warning(png_structp, png_const_charp) {}

// The setjmp frames below hold only trivially destructible locals; all owned
// storage lives in caller-provided objects.
inline bool png_decode_raw(const Bytes& bytes, PngImage& image, std::vector<png_bytep>& rows,
                           std::vector<png_byte>& buffer) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) return false;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  PngMemoryReader reader{&bytes, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &reader, png_read_memory);
  png_read_info(png, info);
  const png_uint_32 width = png_get_image_width(png, info);
  const png_uint_32 height = png_get_image_height(png, info);
  const int colorType = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if ((colorType != PNG_COLOR_TYPE_GRAY && colorType != PNG_COLOR_TYPE_RGB) || (depth != 8 && depth != 16) ||
      png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  const int channels = colorType == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  const std::size_t rowBytes = static_cast<std::size_t>(width) * channels * (depth / 8);
  buffer.assign(rowBytes * height, 0);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * rowBytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  image.height = static_cast<int>(height);
  image.width = static_cast<int>(width);
  image.channels = channels;
  image.bitDepth = depth;
  return true;
}

inline bool png_encode_raw(Bytes& out, const png_bytep* rows, int height, int width, int channels, int depth) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &out, png_write_memory, png_flush_noop);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

inline PngImage decode_png(const Bytes& bytes) {
  PngImage image;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (!detail::png_decode_raw(bytes, image, rows, buffer))
    throw Error(ErrorCode::BadMagic, "not a supported PNG (8/16-bit gray or RGB, non-interlaced)");
  const std::size_t count = static_cast<std::size_t>(image.height) * image.width * image.channels;
  image.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i)
    image.samples[i] = image.bitDepth == 8
                           ? buffer[i]
                           : static_cast<std::uint16_t>((buffer[2 * i] << 8) | buffer[2 * i + 1]);
  return image;
}

inline Bytes encode_png(const PngImage& image) {
  const std::size_t bytesPerSample = image.bitDepth / 8;
  const std::size_t rowBytes = static_cast<std::size_t>(image.width) * image.channels * bytesPerSample;
  std::vector<png_byte> buffer(rowBytes * image.height);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    if (bytesPerSample == 1) {
      buffer[i] = static_cast<png_byte>(image.samples[i]);
    } else {
      buffer[2 * i] = static_cast<png_byte>(image.samples[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(image.samples[i] & 0xff);
    }
  }
  std::vector<png_bytep> rows(static_cast<std::size_t>(image.height));
  for (int r = 0; r < image.height; ++r) rows[r] = buffer.data() + r * rowBytes;
  Bytes out;
  if (!detail::png_encode_raw(out, rows.data(), image.height, image.width, image.channels, image.bitDepth))
    throw Error(ErrorCode::IoError, "PNG encoding failed");
  return out;
}

template <typename T>
Bytes encode_gray_png(const Grid<T>& grid, int bitDepth) {
  PngImage image{grid.height, grid.width, 1, bitDepth, {}};
  image.samples.assign(grid.data.begin(), grid.data.end());
  return encode_png(image);
}

inline Grid<std::uint8_t> read_gray8(const std::filesystem::path& path) {
  const PngImage img = decode_png(read_bytes(path));
  if (img.channels != 1 || img.bitDepth != 8)
    throw Error(ErrorCode::DimMismatch, path.string() + ": expected 8-bit single-channel PNG");
  Grid<std::uint8_t> grid(img.height, img.width);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<std::uint8_t>(img.samples[i]);
  return grid;
}

inline Grid<std::uint16_t> read_gray16(const std::filesystem::path& path) {
  const PngImage img = decode_png(read_bytes(path));
  if (img.channels != 1 || img.bitDepth != 16)
    throw Error(ErrorCode::DimMismatch, path.string() + ": expected 16-bit single-channel PNG");
  Grid<std::uint16_t> grid(img.height, img.width);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = img.samples[i];
  return grid;
}

/// Interleaved 8-bit RGB image.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  RgbImage() = default;
  RgbImage(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::uint8_t& at(int v, int h, int c) { return rgb[(static_cast<std::size_t>(v) * width + h) * 3 + c]; }
  std::uint8_t at(int v, int h, int c) const { return rgb[(static_cast<std::size_t>(v) * width + h) * 3 + c]; }
};

inline void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  PngImage png{image.height, image.width, 3, 8, {}};
  png.samples.assign(image.rgb.begin(), image.rgb.end());
  write_bytes(path, encode_png(png));
}

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  const PngImage img = decode_png(read_bytes(path));
  if (img.bitDepth != 8) throw Error(ErrorCode::DimMismatch, path.string() + ": expected 8-bit image");
  RgbImage out(img.height, img.width);
  for (std::size_t p = 0; p < static_cast<std::size_t>(img.height) * img.width; ++p)
    for (int c = 0; c < 3; ++c) out.rgb[p * 3 + c] = static_cast<std::uint8_t>(img.samples[p * img.channels + (img.channels == 3 ? c : 0)]);
  return out;
}

inline Mask read_roi_mask(const std::filesystem::path& path) {
  Mask m = read_gray8(path);
  for (auto& v : m.data) v = v ? 1 : 0;
  return m;
}

inline void write_roi_mask(const std::filesystem::path& path, const Mask& roi) {
  write_bytes(path, encode_gray_png(roi, 8));
}

/// Reads ground truth. Without a class mask every OOD pixel gets class 1.
inline FrameTruth read_masks(const std::filesystem::path& semanticPath, const std::filesystem::path& instancePath,
                             const std::optional<std::filesystem::path>& classPath = std::nullopt,
                             const std::optional<std::filesystem::path>& depthPath = std::nullopt) {
  FrameTruth truth;
  truth.semantic = read_gray8(semanticPath);
  truth.instance = read_gray16(instancePath);
  if (!truth.instance.same_shape(truth.semantic))
    throw Error(ErrorCode::SizeMismatch, "semantic and instance masks differ in size");
  if (classPath) {
    truth.classId = read_gray16(*classPath);
    if (!truth.classId.same_shape(truth.semantic))
      throw Error(ErrorCode::SizeMismatch, "class mask differs in size");
  } else {
    truth.classId = Grid<std::uint16_t>(truth.semantic.height, truth.semantic.width, 0);
    for (std::size_t i = 0; i < truth.semantic.size(); ++i)
      truth.classId[i] = truth.semantic[i] == static_cast<std::uint8_t>(Label::Ood) ? 1 : 0;
  }
  if (depthPath) {
    truth.depth = read_depth(*depthPath);
    if (!truth.depth->same_shape(truth.semantic)) throw Error(ErrorCode::SizeMismatch, "depth raster differs in size");
  }
  truth.validate();
  return truth;
}

struct TruthPaths {
  std::filesystem::path semantic;
  std::filesystem::path instance;
  std::optional<std::filesystem::path> classId;
  std::optional<std::filesystem::path> depth;
};

inline void write_masks(const FrameTruth& truth, const TruthPaths& paths) {
  truth.validate();
  write_bytes(paths.semantic, encode_gray_png(truth.semantic, 8));
  write_bytes(paths.instance, encode_gray_png(truth.instance, 16));
  if (paths.classId) write_bytes(*paths.classId, encode_gray_png(truth.classId, 16));
  if (paths.depth) {
    if (!truth.depth) throw Error(ErrorCode::MissingMetadata, "no depth raster to write");
    write_score_map(*paths.depth, *truth.depth);
  }
}

// ---------------------------------------------------------------------------
// Feature files

struct FeatureRecord {
  std::uint32_t frameIndex = 0;
  std::uint32_t segmentId = 0;
  std::vector<float> values;
  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

/// Externally computed per-segment features; record order is preserved.
struct FeatureTable {
  std::uint32_t dim = 0;
  std::vector<FeatureRecord> records;

  std::map<std::pair<int, int>, const std::vector<float>*> lookup() const {
    std::map<std::pair<int, int>, const std::vector<float>*> out;
    for (const FeatureRecord& r : records)
      out[{static_cast<int>(r.frameIndex), static_cast<int>(r.segmentId)}] = &r.values;
    return out;
  }

  const FeatureRecord* find(int frameIndex, int segmentId) const {
    for (const FeatureRecord& r : records)
      if (static_cast<int>(r.frameIndex) == frameIndex && static_cast<int>(r.segmentId) == segmentId) return &r;
    return nullptr;
  }
  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

inline Bytes encode_feature_table(const FeatureTable& table) {
  if (table.dim < 1) throw Error(ErrorCode::DimMismatch, "feature dim must be at least 1");
  Bytes out;
  for (char c : std::string_view("OODF")) out.push_back(static_cast<std::uint8_t>(c));
  detail::put_u32(out, static_cast<std::uint32_t>(table.records.size()));
  detail::put_u32(out, table.dim);
  for (const FeatureRecord& r : table.records) {
    if (r.values.size() != table.dim) throw Error(ErrorCode::DimMismatch, "record dimension differs from header");
    detail::put_u32(out, r.frameIndex);
    detail::put_u32(out, r.segmentId);
    for (float v : r.values) detail::put_f32(out, v);
  }
  return out;
}

inline FeatureTable decode_feature_table(const Bytes& bytes) {
  detail::ByteReader in(bytes);
  if (!in.magic("OODF")) throw Error(ErrorCode::BadMagic, "expected OODF header");
  const std::uint32_t count = in.u32();
  FeatureTable table;
  table.dim = in.u32();
  if (table.dim < 1) throw Error(ErrorCode::DimMismatch, "feature dim must be at least 1");
  const std::uint64_t recordBytes = 8ull + 4ull * table.dim;
  if (in.remaining() != recordBytes * count) throw Error(ErrorCode::DimMismatch, "record count does not match header");
  table.records.resize(count);
  for (FeatureRecord& r : table.records) {
    r.frameIndex = in.u32();
    r.segmentId = in.u32();
    r.values.resize(table.dim);
    for (float& v : r.values) v = in.f32();
  }
  return table;
}

inline FeatureTable read_feature_file(const std::filesystem::path& path) {
  return decode_feature_table(read_bytes(path));
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureTable& table) {
  write_bytes(path, encode_feature_table(table));
}

// ---------------------------------------------------------------------------
// Manifest

struct FrameEntry {
  int frameIndex = 0;
  std::string scorePath;
  std::optional<std::string> semanticPath;
  std::optional<std::string> instancePath;
  std::optional<std::string> classPath;
  std::optional<std::string> depthPath;
  std::optional<std::string> roiPath;
  std::optional<std::string> imagePath;
  bool labeled = false;
  friend bool operator==(const FrameEntry&, const FrameEntry&) = default;
};

struct SequenceEntry {
  std::string sequenceId;
  std::optional<double> fps;
  std::optional<std::string> featurePath;
  std::vector<FrameEntry> frames;

  int frameCount() const { return frames.empty() ? 0 : frames.back().frameIndex + 1; }
  friend bool operator==(const SequenceEntry&, const SequenceEntry&) = default;
};

/// Relative paths resolve against baseDir (the manifest's directory).
struct DatasetManifest {
  std::vector<SequenceEntry> sequences;
  std::filesystem::path baseDir;

  std::filesystem::path resolve(const std::string& p) const {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : baseDir / path;
  }

  const SequenceEntry* find(const std::string& id) const {
    for (const auto& s : sequences)
      if (s.sequenceId == id) return &s;
    return nullptr;
  }

  void validate() const {
    for (const SequenceEntry& s : sequences) {
      int prev = -1;
      for (const FrameEntry& f : s.frames) {
        if (f.frameIndex <= prev)
          throw Error(ErrorCode::ParseError, "frameIndex must increase strictly in sequence " + s.sequenceId);
        prev = f.frameIndex;
        if (f.labeled && (!f.semanticPath || !f.instancePath))
          throw Error(ErrorCode::ParseError, "labeled frame without semantic/instance masks in " + s.sequenceId);
      }
    }
  }

  bool operator==(const DatasetManifest& o) const { return sequences == o.sequences; }
};

namespace detail {

template <typename T>
void put_optional(Json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <typename T>
std::optional<T> get_optional(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace detail

inline Json manifest_to_json(const DatasetManifest& m) {
  Json root = Json::object();
  root["schemaVersion"] = kSchemaVersion;
  Json seqs = Json::array();
  for (const SequenceEntry& s : m.sequences) {
    Json js = Json::object();
    js["sequenceId"] = s.sequenceId;
    detail::put_optional(js, "fps", s.fps);
    detail::put_optional(js, "featurePath", s.featurePath);
    Json frames = Json::array();
    for (const FrameEntry& f : s.frames) {
      Json jf = Json::object();
      jf["frameIndex"] = f.frameIndex;
      jf["scorePath"] = f.scorePath;
      detail::put_optional(jf, "semanticPath", f.semanticPath);
      detail::put_optional(jf, "instancePath", f.instancePath);
      detail::put_optional(jf, "classPath", f.classPath);
      detail::put_optional(jf, "depthPath", f.depthPath);
      detail::put_optional(jf, "roiPath", f.roiPath);
      detail::put_optional(jf, "imagePath", f.imagePath);
      jf["labeled"] = f.labeled;
      frames.push_back(std::move(jf));
    }
    js["frames"] = std::move(frames);
    seqs.push_back(std::move(js));
  }
  root["sequences"] = std::move(seqs);
  return root;
}

inline DatasetManifest manifest_from_json(const Json& root, std::filesystem::path baseDir = {}) {
  DatasetManifest m;
  m.baseDir = std::move(baseDir);
  try {
    for (const Json& js : root.at("sequences")) {
      SequenceEntry s;
      s.sequenceId = js.at("sequenceId").get<std::string>();
      s.fps = detail::get_optional<double>(js, "fps");
      s.featurePath = detail::get_optional<std::string>(js, "featurePath");
      for (const Json& jf : js.at("frames")) {
        FrameEntry f;
        f.frameIndex = jf.at("frameIndex").get<int>();
        f.scorePath = jf.at("scorePath").get<std::string>();
        f.semanticPath = detail::get_optional<std::string>(jf, "semanticPath");
        f.instancePath = detail::get_optional<std::string>(jf, "instancePath");
        f.classPath = detail::get_optional<std::string>(jf, "classPath");
        f.depthPath = detail::get_optional<std::string>(jf, "depthPath");
        f.roiPath = detail::get_optional<std::string>(jf, "roiPath");
        f.imagePath = detail::get_optional<std::string>(jf, "imagePath");
        f.labeled = jf.at("labeled").get<bool>();
        s.frames.push_back(std::move(f));
      }
      m.sequences.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

inline std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, what + ": " + e.what());
  }
}

inline DatasetManifest read_manifest(const std::filesystem::path& path) {
  return manifest_from_json(parse_json(read_text(path), path.string()), path.parent_path());
}

inline void write_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  write_text(path, dump_json(manifest_to_json(m)));
}

// ---------------------------------------------------------------------------
// Segments and tracks

inline Json segment_to_json(const Segment& s) {
  Json j = Json::object();
  j["segmentId"] = s.segmentId;
  j["size"] = s.size;
  j["interiorSize"] = s.interiorSize;
  j["bbox"] = {s.bbox.vMin, s.bbox.vMax, s.bbox.hMin, s.bbox.hMax};
  j["center"] = {s.center.v, s.center.h};
  j["meanScore"] = s.meanScore;
  Json runs = Json::array();
  for (const Run& r : s.pixels.runs()) runs.push_back({r.row, r.start, r.length});
  j["runs"] = std::move(runs);
  return j;
}

inline Segment segment_from_json(const Json& j, int frameIndex) {
  std::vector<Run> runs;
  for (const Json& r : j.at("runs")) runs.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
  Segment s = make_segment(j.at("segmentId").get<int>(), frameIndex, PixelSet::from_runs(std::move(runs)),
                           j.at("meanScore").get<double>());
  if (s.size != j.at("size").get<std::size_t>())
    throw Error(ErrorCode::DimMismatch, "segment size disagrees with its runs");
  return s;
}

inline Json sequence_to_json(const SequencePrediction& seq, bool withTracks) {
  Json js = Json::object();
  js["sequenceId"] = seq.sequenceId;
  js["frameCount"] = seq.frameCount;
  js["height"] = seq.height;
  js["width"] = seq.width;
  Json frames = Json::array();
  for (int f = 0; f < seq.frameCount; ++f) {
    Json jf = Json::object();
    jf["frameIndex"] = f;
    Json segs = Json::array();
    for (const Segment& s : seq.frames[static_cast<std::size_t>(f)]) segs.push_back(segment_to_json(s));
    jf["segments"] = std::move(segs);
    frames.push_back(std::move(jf));
  }
  js["frames"] = std::move(frames);
  if (withTracks) {
    Json tracks = Json::array();
    for (const Track& t : seq.tracks) {
      Json jt = Json::object();
      jt["trackId"] = t.trackId;
      Json entries = Json::array();
      for (const TrackEntry& e : t.entries) entries.push_back({e.frameIndex, e.segmentId});
      jt["entries"] = std::move(entries);
      tracks.push_back(std::move(jt));
    }
    js["tracks"] = std::move(tracks);
  }
  return js;
}

inline SequencePrediction sequence_from_json(const Json& js) {
  SequencePrediction seq;
  try {
    seq.sequenceId = js.at("sequenceId").get<std::string>();
    seq.frameCount = js.at("frameCount").get<int>();
    seq.height = js.value("height", 0);
    seq.width = js.value("width", 0);
    seq.frames.resize(static_cast<std::size_t>(seq.frameCount));
    for (const Json& jf : js.at("frames")) {
      const int f = jf.at("frameIndex").get<int>();
      if (f < 0 || f >= seq.frameCount) throw Error(ErrorCode::OutOfBounds, "frameIndex outside sequence");
      for (const Json& s : jf.at("segments")) seq.frames[static_cast<std::size_t>(f)].push_back(segment_from_json(s, f));
    }
    if (js.contains("tracks")) {
      for (const Json& jt : js.at("tracks")) {
        Track t;
        t.trackId = jt.at("trackId").get<int>();
        for (const Json& e : jt.at("entries")) {
          TrackEntry entry{e.at(0).get<int>(), e.at(1).get<int>()};
          t.entries.push_back(entry);
          if (const Segment* s = seq.find_segment(entry.frameIndex, entry.segmentId))
            t.centers.emplace_back(entry.frameIndex, s->center);
        }
        seq.tracks.push_back(std::move(t));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("sequence: ") + e.what());
  }
  seq.validate();
  return seq;
}

}  // namespace oodtrack
