#include "finta/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "finta/error.hpp"

namespace finta::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::string read_file(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    throw Error(ErrorCode::kFileNotFound, "no such file: " + path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw Error(ErrorCode::kIoError, "read failed: " + path.string());
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "write failed: " + path.string());
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string format_float9(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const auto* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc() && res.ptr == end;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

// Line-oriented reader over a header block; tracks byte offsets for errors.
class LineCursor {
 public:
  explicit LineCursor(std::string_view bytes) : bytes_(bytes) {}

  std::optional<std::string_view> next() {
    if (pos_ >= bytes_.size()) return std::nullopt;
    line_start_ = pos_;
    const auto nl = bytes_.find('\n', pos_);
    if (nl == std::string_view::npos) return std::nullopt;  // header lines end in '\n'
    auto line = bytes_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    return line;
  }
  std::size_t pos() const { return pos_; }
  std::size_t line_start() const { return line_start_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::size_t line_start_ = 0;
};

void put_f32(std::string& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  char b[4];
  std::memcpy(b, &bits, 4);
  out.append(b, 4);
}

// Bounds-checked little-endian reader.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    if (bytes_.size() - pos_ < sizeof(T)) {
      throw CorruptFileError(std::string("truncated while reading ") + what, pos_);
    }
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw CorruptFileError(std::string("truncated while reading ") + what, pos_);
    }
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw CorruptFileError(std::string("malformed ") + what + ": " + e.what(), e.byte);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Tracks

namespace {
constexpr std::string_view kTrackMagic = "mrtrix tracks\n";
}

std::string encode_tracks(const Tractogram& t) {
  std::string body;
  std::size_t points = 0;
  for (const auto& s : t.streamlines) points += s.size() + 1;
  body.reserve((points + 1) * 12);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  for (const auto& s : t.streamlines) {
    for (const auto& p : s) {
      put_f32(body, static_cast<float>(p.x));
      put_f32(body, static_cast<float>(p.y));
      put_f32(body, static_cast<float>(p.z));
    }
    for (int i = 0; i < 3; ++i) put_f32(body, nan);
  }
  for (int i = 0; i < 3; ++i) put_f32(body, inf);

  // The offset is part of the header, so iterate until its width settles.
  std::string header;
  std::size_t offset = 0;
  for (;;) {
    header = std::string(kTrackMagic) + "count: " + std::to_string(t.size()) +
             "\ndatatype: Float32LE\nfile: . " + std::to_string(offset) + "\nEND\n";
    if (header.size() == offset) break;
    offset = header.size();
  }
  return header + body;
}

Tractogram decode_tracks(std::string_view bytes, std::vector<std::string>* warnings) {
  if (bytes.substr(0, kTrackMagic.size()) != kTrackMagic) {
    throw CorruptFileError("not a track file (bad magic)", 0);
  }
  LineCursor lines(bytes);
  lines.next();
  std::optional<std::size_t> count;
  std::optional<std::size_t> offset;
  bool have_datatype = false;
  bool ended = false;
  while (auto line = lines.next()) {
    if (*line == "END") {
      ended = true;
      break;
    }
    const auto colon = line->find(':');
    if (colon == std::string_view::npos) {
      throw CorruptFileError("header line without ':'", lines.line_start());
    }
    const auto key = trim(line->substr(0, colon));
    const auto value = trim(line->substr(colon + 1));
    if (key == "count") {
      std::size_t n = 0;
      if (!parse_number(value, n)) throw CorruptFileError("bad count", lines.line_start());
      count = n;
    } else if (key == "datatype") {
      if (value != "Float32LE") {
        throw CorruptFileError("unsupported datatype '" + std::string(value) + "'",
                               lines.line_start());
      }
      have_datatype = true;
    } else if (key == "file") {
      if (value.substr(0, 2) != ". ") throw CorruptFileError("bad file entry", lines.line_start());
      std::size_t off = 0;
      if (!parse_number(trim(value.substr(2)), off)) {
        throw CorruptFileError("bad data offset", lines.line_start());
      }
      offset = off;
    } else if (warnings) {
      warnings->push_back("ignoring unknown header key '" + std::string(key) + "'");
    }
  }
  if (!ended) throw CorruptFileError("header has no END line", lines.pos());
  if (!have_datatype) throw CorruptFileError("header has no datatype", lines.pos());
  if (!offset) throw CorruptFileError("header has no data offset", lines.pos());
  if (*offset < lines.pos() || *offset > bytes.size()) {
    throw CorruptFileError("data offset out of range", lines.pos());
  }

  Tractogram t;
  Streamline current;
  std::size_t pos = *offset;
  bool terminated = false;
  while (bytes.size() - pos >= 12) {
    float v[3];
    std::memcpy(v, bytes.data() + pos, 12);
    if (std::isnan(v[0]) && std::isnan(v[1]) && std::isnan(v[2])) {
      if (current.empty()) throw CorruptFileError("empty streamline", pos);
      t.streamlines.push_back(std::move(current));
      current.clear();
    } else if (std::isinf(v[0]) && std::isinf(v[1]) && std::isinf(v[2])) {
      if (!current.empty()) throw CorruptFileError("unterminated streamline", pos);
      terminated = true;
      break;
    } else {
      current.push_back({v[0], v[1], v[2]});
    }
    pos += 12;
  }
  if (!terminated) throw CorruptFileError("truncated track data", pos);
  if (count && *count != t.size()) {
    throw CorruptFileError("header count " + std::to_string(*count) + " but " +
                           std::to_string(t.size()) + " streamlines in body");
  }
  return t;
}

void write_tracks(const Tractogram& t, const fs::path& path) { write_file(path, encode_tracks(t)); }

Tractogram read_tracks(const fs::path& path, std::vector<std::string>* warnings) {
  return decode_tracks(read_file(path), warnings);
}

// ---------------------------------------------------------------------------
// Labels

std::string encode_labels(const Tractogram& t) {
  t.check_consistent();
  json doc;
  doc["format"] = "finta-labels";
  doc["version"] = kLabelsVersion;
  doc["count"] = t.size();
  json entries = json::array();
  for (std::size_t i = 0; i < t.size(); ++i) {
    json e;
    e["id"] = i;
    if (t.labels) e["label"] = (*t.labels)[i];
    if (t.group_ids) e["group_id"] = (*t.group_ids)[i];
    entries.push_back(std::move(e));
  }
  doc["streamlines"] = std::move(entries);
  return doc.dump(1) + "\n";
}

LabelSidecar decode_labels(std::string_view bytes) {
  const json doc = parse_json(bytes, "label file");
  try {
    if (!doc.is_object() || doc.value("format", "") != "finta-labels") {
      throw CorruptFileError("not a label file");
    }
    const int version = doc.at("version").get<int>();
    if (version != kLabelsVersion) {
      throw Error(ErrorCode::kUnsupportedVersion,
                  "label file version " + std::to_string(version) + " is not supported");
    }
    const auto& entries = doc.at("streamlines");
    LabelSidecar out;
    out.count = doc.at("count").get<std::size_t>();
    if (entries.size() != out.count) throw CorruptFileError("label count does not match entries");
    std::vector<std::string> labels, groups;
    std::size_t with_label = 0, with_group = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& e = entries[i];
      if (e.at("id").get<std::size_t>() != i) {
        throw CorruptFileError("label entry " + std::to_string(i) + " is out of order");
      }
      if (e.contains("label")) {
        labels.push_back(e["label"].get<std::string>());
        ++with_label;
      }
      if (e.contains("group_id")) {
        groups.push_back(e["group_id"].get<std::string>());
        ++with_group;
      }
    }
    if (with_label != 0 && with_label != out.count) throw CorruptFileError("some entries lack a label");
    if (with_group != 0 && with_group != out.count) {
      throw CorruptFileError("some entries lack a group_id");
    }
    if (with_label) out.labels = std::move(labels);
    if (with_group) out.group_ids = std::move(groups);
    return out;
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("malformed label file: ") + e.what());
  }
}

void write_labels(const Tractogram& t, const fs::path& path) { write_file(path, encode_labels(t)); }

LabelSidecar read_labels(const fs::path& path) { return decode_labels(read_file(path)); }

void attach_labels(Tractogram& t, const LabelSidecar& sidecar) {
  if (sidecar.count != t.size()) {
    throw Error(ErrorCode::kShapeMismatch, "label file lists " + std::to_string(sidecar.count) +
                                               " streamlines, tractogram has " +
                                               std::to_string(t.size()));
  }
  t.labels = sidecar.labels;
  t.group_ids = sidecar.group_ids;
}

// ---------------------------------------------------------------------------
// Model

namespace {
constexpr std::string_view kModelMagic = "FNTA";
}

std::string encode_model(const AutoencoderModel& model) {
  const auto& c = model.config();
  std::string out(kModelMagic);
  put<std::uint16_t>(out, kModelVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.input_points));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.input_channels));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.latent_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.kernel_size));
  put<std::uint8_t>(out, c.table_interpretation == TableInterpretation::kInputSize ? 0 : 1);
  put<std::uint64_t>(out, c.seed);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.encoder_features.size()));
  for (int f : c.encoder_features) put<std::uint32_t>(out, static_cast<std::uint32_t>(f));
  const auto& n = model.normalization;
  put<double>(out, n.center.x);
  put<double>(out, n.center.y);
  put<double>(out, n.center.z);
  put<double>(out, n.scale);
  put<std::uint8_t>(out, model.anchor ? 1 : 0);
  const Point3 a = model.anchor.value_or(Point3{});
  put<double>(out, a.x);
  put<double>(out, a.y);
  put<double>(out, a.z);
  const auto params = model.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.blocks().size()));
  for (const auto& b : model.blocks()) {
    put<std::uint32_t>(out, 2);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.rows));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(b.cols));
    const auto* raw = reinterpret_cast<const char*>(params.data() + b.offset);
    out.append(raw, b.size() * sizeof(float));
  }
  put<std::uint64_t>(out, fnv1a64(out));
  return out;
}

AutoencoderModel decode_model(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.take(kModelMagic.size(), "magic") != kModelMagic) {
    throw CorruptFileError("not a model file (bad magic)", 0);
  }
  const auto version = r.get<std::uint16_t>("version");
  if (version != kModelVersion) {
    throw Error(ErrorCode::kUnsupportedVersion,
                "model file version " + std::to_string(version) + " is not supported");
  }
  if (bytes.size() < 8) throw CorruptFileError("truncated model file", bytes.size());
  std::uint64_t stored_sum = 0;
  std::memcpy(&stored_sum, bytes.data() + bytes.size() - 8, 8);

  ModelConfig c;
  c.input_points = static_cast<int>(r.get<std::uint32_t>("input_points"));
  c.input_channels = static_cast<int>(r.get<std::uint32_t>("input_channels"));
  c.latent_dim = static_cast<int>(r.get<std::uint32_t>("latent_dim"));
  c.kernel_size = static_cast<int>(r.get<std::uint32_t>("kernel_size"));
  const auto interp = r.get<std::uint8_t>("interpretation");
  if (interp > 1) throw CorruptFileError("bad table interpretation", r.pos() - 1);
  c.table_interpretation = interp == 0 ? TableInterpretation::kInputSize
                                       : TableInterpretation::kOutputSize;
  c.seed = r.get<std::uint64_t>("seed");
  const auto layers = r.get<std::uint32_t>("layer count");
  if (layers > 64) throw CorruptFileError("implausible layer count", r.pos() - 4);
  c.encoder_features.clear();
  for (std::uint32_t i = 0; i < layers; ++i) {
    c.encoder_features.push_back(static_cast<int>(r.get<std::uint32_t>("features")));
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw CorruptFileError(std::string("invalid stored config: ") + e.what(), r.pos());
  }
  Normalization n;
  n.center.x = r.get<double>("normalization");
  n.center.y = r.get<double>("normalization");
  n.center.z = r.get<double>("normalization");
  n.scale = r.get<double>("normalization");
  const auto has_anchor = r.get<std::uint8_t>("anchor flag");
  Point3 a;
  a.x = r.get<double>("anchor");
  a.y = r.get<double>("anchor");
  a.z = r.get<double>("anchor");
  // The stored tensor shapes must match the layout the config implies.
  const AutoencoderModel layout(c);
  const auto tensors = r.get<std::uint32_t>("tensor count");
  if (tensors != layout.blocks().size()) {
    throw CorruptFileError("tensor count does not match config", r.pos() - 4);
  }
  std::vector<float> params(layout.parameter_count());
  for (const auto& b : layout.blocks()) {
    const std::size_t at = r.pos();
    const auto ndims = r.get<std::uint32_t>("tensor rank");
    if (ndims != 2) throw CorruptFileError("tensor " + b.name + " has rank " + std::to_string(ndims), at);
    const auto rows = r.get<std::uint32_t>("tensor shape");
    const auto cols = r.get<std::uint32_t>("tensor shape");
    if (rows != b.rows || cols != b.cols) {
      throw CorruptFileError("tensor " + b.name + " has an unexpected shape", at);
    }
    const auto raw = r.take(b.size() * sizeof(float), "tensor data");
    std::memcpy(params.data() + b.offset, raw.data(), raw.size());
  }
  const std::size_t payload_end = r.pos();
  r.get<std::uint64_t>("checksum");
  if (r.remaining() != 0) throw CorruptFileError("trailing bytes after model", r.pos());
  if (fnv1a64(bytes.substr(0, payload_end)) != stored_sum) {
    throw CorruptFileError("checksum mismatch", payload_end);
  }

  AutoencoderModel model;
  try {
    model = AutoencoderModel::from_parameters(c, std::move(params));
  } catch (const Error& e) {
    throw CorruptFileError(std::string("parameters do not match config: ") + e.what());
  }
  model.normalization = n;
  if (has_anchor) model.anchor = a;
  return model;
}

void write_model(const AutoencoderModel& model, const fs::path& path) {
  write_file(path, encode_model(model));
}

AutoencoderModel read_model(const fs::path& path) { return decode_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Mask

namespace {
constexpr std::string_view kMaskMagic = "finta mask\n";
}

std::string encode_mask(const MaskVolume& mask) {
  mask.validate();
  std::string out(kMaskMagic);
  out += "version: " + std::to_string(kMaskVersion) + "\n";
  out += "dims: " + std::to_string(mask.dims[0]) + " " + std::to_string(mask.dims[1]) + " " +
         std::to_string(mask.dims[2]) + "\n";
  out += "voxel_size: " + format_double(mask.voxel_size_mm[0]) + " " +
         format_double(mask.voxel_size_mm[1]) + " " + format_double(mask.voxel_size_mm[2]) + "\n";
  out += "origin: " + format_double(mask.origin_mm.x) + " " + format_double(mask.origin_mm.y) +
         " " + format_double(mask.origin_mm.z) + "\n";
  out +=
      "legend: 0=background 1=white_matter 2=gray_matter 3=csf 16+n=atlas_region_n\n"
      "END\n";
  out.append(reinterpret_cast<const char*>(mask.data.data()), mask.data.size());
  return out;
}

MaskVolume decode_mask(std::string_view bytes) {
  if (bytes.substr(0, kMaskMagic.size()) != kMaskMagic) {
    throw CorruptFileError("not a mask file (bad magic)", 0);
  }
  LineCursor lines(bytes);
  lines.next();
  MaskVolume m;
  bool have_dims = false, have_version = false, ended = false;
  auto triple = [&](std::string_view value, auto& a, auto& b, auto& c) {
    const auto parts = split(value, ' ');
    if (parts.size() != 3 || !parse_number(parts[0], a) || !parse_number(parts[1], b) ||
        !parse_number(parts[2], c)) {
      throw CorruptFileError("expected three numbers", lines.line_start());
    }
  };
  while (auto line = lines.next()) {
    if (*line == "END") {
      ended = true;
      break;
    }
    const auto colon = line->find(':');
    if (colon == std::string_view::npos) {
      throw CorruptFileError("header line without ':'", lines.line_start());
    }
    const auto key = trim(line->substr(0, colon));
    const auto value = trim(line->substr(colon + 1));
    if (key == "version") {
      int v = 0;
      if (!parse_number(value, v)) throw CorruptFileError("bad version", lines.line_start());
      if (v != kMaskVersion) {
        throw Error(ErrorCode::kUnsupportedVersion,
                    "mask file version " + std::to_string(v) + " is not supported");
      }
      have_version = true;
    } else if (key == "dims") {
      triple(value, m.dims[0], m.dims[1], m.dims[2]);
      have_dims = true;
    } else if (key == "voxel_size") {
      triple(value, m.voxel_size_mm[0], m.voxel_size_mm[1], m.voxel_size_mm[2]);
    } else if (key == "origin") {
      triple(value, m.origin_mm.x, m.origin_mm.y, m.origin_mm.z);
    }
  }
  if (!ended) throw CorruptFileError("mask header has no END line", lines.pos());
  if (!have_version) throw CorruptFileError("mask header has no version", lines.pos());
  if (!have_dims) throw CorruptFileError("mask header has no dims", lines.pos());
  const std::size_t start = lines.pos();
  const std::size_t n = m.voxel_count();
  if (bytes.size() - start != n) {
    throw CorruptFileError("mask payload has " + std::to_string(bytes.size() - start) +
                               " bytes, expected " + std::to_string(n),
                           std::min(bytes.size(), start + n));
  }
  m.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.end());
  try {
    m.validate();
  } catch (const Error& e) {
    throw CorruptFileError(std::string("invalid mask: ") + e.what());
  }
  return m;
}

void write_mask(const MaskVolume& mask, const fs::path& path) { write_file(path, encode_mask(mask)); }

MaskVolume read_mask(const fs::path& path) { return decode_mask(read_file(path)); }

// ---------------------------------------------------------------------------
// Latents

std::string encode_latents(const LatentTable& table) {
  if (table.ids.size() != table.latents.size() || table.labels.size() != table.latents.size()) {
    throw Error(ErrorCode::kShapeMismatch, "latent table columns differ in length");
  }
  const std::size_t dim = table.latents.empty() ? 0 : table.latents.front().size();
  std::string out = "id,label";
  for (std::size_t d = 0; d < dim; ++d) out += ",z" + std::to_string(d);
  out += "\n";
  for (std::size_t i = 0; i < table.latents.size(); ++i) {
    const auto& label = table.labels[i];
    if (label.find_first_of(",\"\n\r") != std::string::npos) {
      throw Error(ErrorCode::kInvalidConfig, "label '" + label + "' cannot be written to CSV");
    }
    if (table.latents[i].size() != dim) throw Error(ErrorCode::kShapeMismatch, "latent widths differ");
    out += std::to_string(table.ids[i]) + "," + label;
    for (float v : table.latents[i]) out += "," + format_float9(v);
    out += "\n";
  }
  return out;
}

LatentTable decode_latents(std::string_view text) {
  LineCursor lines(text);
  const auto header = lines.next();
  if (!header) throw CorruptFileError("empty latent file", 0);
  const auto cols = split(trim(*header), ',');
  if (cols.size() < 2 || cols[0] != "id" || cols[1] != "label") {
    throw CorruptFileError("latent header must start with id,label", 0);
  }
  const std::size_t dim = cols.size() - 2;
  for (std::size_t d = 0; d < dim; ++d) {
    if (cols[d + 2] != "z" + std::to_string(d)) throw CorruptFileError("bad latent column name", 0);
  }
  LatentTable table;
  while (auto line = lines.next()) {
    const auto row = trim(*line);
    if (row.empty()) continue;
    const auto fields = split(row, ',');
    if (fields.size() != dim + 2) {
      throw CorruptFileError("latent row has " + std::to_string(fields.size()) + " fields",
                             lines.line_start());
    }
    std::size_t id = 0;
    if (!parse_number(fields[0], id)) throw CorruptFileError("bad id", lines.line_start());
    LatentVector z(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      if (!parse_number(fields[d + 2], z[d])) {
        throw CorruptFileError("bad latent value", lines.line_start());
      }
    }
    table.ids.push_back(id);
    table.labels.emplace_back(fields[1]);
    table.latents.push_back(std::move(z));
  }
  return table;
}

void write_latents(const LatentTable& table, const fs::path& path) {
  write_file(path, encode_latents(table));
}

LatentTable read_latents(const fs::path& path) { return decode_latents(read_file(path)); }

// ---------------------------------------------------------------------------
// Reports

std::string encode_decisions(const std::vector<FilterDecision>& decisions) {
  std::string out = "index,nn_distance,nn_index,nn_label,verdict\n";
  for (const auto& d : decisions) {
    out += std::to_string(d.index) + "," + format_double(d.nn_distance) + "," +
           std::to_string(d.nn_index) + "," + d.nn_label + "," + d.verdict + "\n";
  }
  return out;
}

std::vector<FilterDecision> decode_decisions(std::string_view text) {
  LineCursor lines(text);
  const auto header = lines.next();
  if (!header || trim(*header) != "index,nn_distance,nn_index,nn_label,verdict") {
    throw CorruptFileError("bad decisions header", 0);
  }
  std::vector<FilterDecision> out;
  while (auto line = lines.next()) {
    const auto row = trim(*line);
    if (row.empty()) continue;
    const auto f = split(row, ',');
    FilterDecision d;
    if (f.size() != 5 || !parse_number(f[0], d.index) || !parse_number(f[1], d.nn_distance) ||
        !parse_number(f[2], d.nn_index)) {
      throw CorruptFileError("bad decisions row", lines.line_start());
    }
    d.nn_label = std::string(f[3]);
    d.verdict = std::string(f[4]);
    out.push_back(std::move(d));
  }
  return out;
}

std::string encode_threshold(const Threshold& threshold, std::size_t n_pos, std::size_t n_neg) {
  json doc;
  doc["format"] = "finta-threshold";
  doc["version"] = 1;
  doc["value"] = threshold.value;
  doc["criterion"] = threshold.criterion;
  doc["tpr"] = threshold.tpr;
  doc["fpr"] = threshold.fpr;
  doc["n_positive"] = n_pos;
  doc["n_negative"] = n_neg;
  return doc.dump(2) + "\n";
}

Threshold decode_threshold(std::string_view text) {
  const json doc = parse_json(text, "threshold file");
  try {
    if (doc.value("format", "") != "finta-threshold") throw CorruptFileError("not a threshold file");
    if (doc.at("version").get<int>() != 1) {
      throw Error(ErrorCode::kUnsupportedVersion, "unsupported threshold file version");
    }
    Threshold t;
    t.value = doc.at("value").get<double>();
    t.criterion = doc.at("criterion").get<std::string>();
    t.tpr = doc.value("tpr", 0.0);
    t.fpr = doc.value("fpr", 0.0);
    return t;
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("malformed threshold file: ") + e.what());
  }
}

std::string encode_roc(const Threshold& threshold) {
  std::string out = "threshold,tpr,fpr\n";
  for (const auto& p : threshold.curve) {
    out += format_double(p.threshold) + "," + format_double(p.tpr) + "," + format_double(p.fpr) + "\n";
  }
  return out;
}

std::string encode_train_report(const TrainReport& report, const ModelConfig& config) {
  json doc;
  doc["format"] = "finta-train-report";
  doc["model"] = {
      {"input_points", config.input_points},
      {"latent_dim", config.latent_dim},
      {"encoder_features", config.encoder_features},
      {"kernel_size", config.kernel_size},
      {"seed", config.seed},
      {"table_interpretation",
       config.table_interpretation == TableInterpretation::kInputSize ? "input-size"
                                                                      : "output-size"},
  };
  const auto& c = report.config;
  doc["train"] = {
      {"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
      {"batch_size", c.batch_size},       {"max_epochs", c.max_epochs},
      {"patience", c.patience},           {"seed", c.seed},
      {"beta1", c.beta1},                 {"beta2", c.beta2},
      {"epsilon", c.epsilon},
  };
  doc["train_size"] = report.train_size;
  doc["val_size"] = report.val_size;
  doc["initial_val_loss"] = report.initial_val_loss;
  json epochs = json::array();
  for (const auto& e : report.epochs) {
    // Wall-clock seconds stay out so identical runs give identical reports.
    epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  }
  doc["epochs"] = std::move(epochs);
  doc["best_epoch"] = report.best_epoch;
  doc["best_val_loss"] = report.best_val_loss;
  doc["steps"] = report.steps;
  doc["stop_reason"] = report.stop_reason;
  return doc.dump(2) + "\n";
}

namespace {

std::vector<std::pair<std::string, std::string>> eval_rows(const EvalReport& r) {
  std::vector<std::pair<std::string, std::string>> rows;
  rows.emplace_back("tp", std::to_string(r.counts.tp));
  rows.emplace_back("fp", std::to_string(r.counts.fp));
  rows.emplace_back("tn", std::to_string(r.counts.tn));
  rows.emplace_back("fn", std::to_string(r.counts.fn));
  for (const auto& [tag, m] : {std::pair{"macro", &r.macro}, std::pair{"weighted", &r.weighted}}) {
    const std::string t = tag;
    rows.emplace_back("accuracy_" + t, format_double(m->accuracy));
    rows.emplace_back("sensitivity_" + t, format_double(m->sensitivity));
    rows.emplace_back("precision_" + t, format_double(m->precision));
    rows.emplace_back("f1_" + t, format_double(m->f1));
  }
  rows.emplace_back("vgw_rate", format_double(r.vgw_rate));
  rows.emplace_back("success_rate_macro", format_double(r.success_rate_macro));
  rows.emplace_back("success_rate_weighted", format_double(r.success_rate_weighted));
  for (const auto& [group, s] : r.group_sensitivity) {
    rows.emplace_back("group_sensitivity." + group, format_double(s));
  }
  std::string flags;
  for (const auto& f : r.macro.flags) flags += (flags.empty() ? "" : " ") + f;
  rows.emplace_back("zero_denominator_flags", flags.empty() ? "none" : flags);
  return rows;
}

}  // namespace

std::string encode_eval_report(const EvalReport& report) {
  std::string out;
  for (const auto& [k, v] : eval_rows(report)) out += k + ": " + v + "\n";
  return out;
}

std::string encode_eval_table(const EvalReport& report) {
  std::string out = "metric,value\n";
  for (const auto& [k, v] : eval_rows(report)) out += k + "," + v + "\n";
  return out;
}

}  // namespace finta::io
