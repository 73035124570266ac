#include "occ4d/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "occ4d/metrics.hpp"
#include "occ4d/synth.hpp"

namespace occ4d {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr char kGridMagic[4] = {'C', '4', 'D', 'O'};
constexpr char kFlowMagic[4] = {'C', '4', 'D', 'F'};
constexpr char kBevMagic[4] = {'C', '4', 'D', 'B'};
constexpr std::size_t kBevHeaderBytes = 48;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, const char* what) : b_(b), what_(what) {}

  std::size_t offset() const { return pos_; }
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) {
      throw FormatError(std::string(what_) + " truncated at offset " +
                        std::to_string(pos_) + ": need " + std::to_string(n) +
                        " more bytes, " + std::to_string(b_.size() - pos_) +
                        " available");
    }
  }
  std::uint8_t u8() {
    need(1);
    return b_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = b_[pos_] | (b_[pos_ + 1] << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = b_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> b_;
  const char* what_;
  std::size_t pos_ = 0;
};

std::string printable(std::span<const std::uint8_t> b) {
  std::string s;
  for (std::uint8_t c : b) {
    if (c >= 0x20 && c < 0x7F) {
      s.push_back(static_cast<char>(c));
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02X", c);
      s += buf;
    }
  }
  return s;
}

void check_magic(Reader& r, const char (&magic)[4], const char* what) {
  const auto m = r.take(4);
  if (std::memcmp(m.data(), magic, 4) != 0) {
    throw FormatError(std::string(what) + ": bad magic at offset 0: expected \"" +
                      std::string(magic, 4) + "\", found \"" + printable(m) +
                      "\"");
  }
}

void check_version(Reader& r, const char* what) {
  const std::size_t at = r.offset();
  const std::uint32_t v = r.u32();
  if (v != kFormatVersion) {
    throw FormatError(std::string(what) + ": unsupported format version " +
                      std::to_string(v) + " at offset " + std::to_string(at) +
                      " (expected " + std::to_string(kFormatVersion) + ")");
  }
}

void write_header(Writer& w, const char (&magic)[4], const GridSpec& spec,
                  TaskMode mode, int n_future, std::uint32_t flags) {
  w.bytes(magic, 4);
  w.u32(kFormatVersion);
  w.u8(static_cast<std::uint8_t>(mode));
  w.u8(static_cast<std::uint8_t>(spec.n_past()));
  w.u8(static_cast<std::uint8_t>(n_future));
  w.u32(static_cast<std::uint32_t>(spec.nx()));
  w.u32(static_cast<std::uint32_t>(spec.ny()));
  w.u32(static_cast<std::uint32_t>(spec.nz()));
  w.f64(spec.x().min);
  w.f64(spec.y().min);
  w.f64(spec.z().min);
  w.f64(spec.resolution());
  w.u32(flags);
}

struct Header {
  TaskMode mode;
  GridSpec spec;
  std::uint32_t flags;
};

Header read_header(Reader& r, const char (&magic)[4], const char* what) {
  check_magic(r, magic, what);
  check_version(r, what);
  const std::size_t mode_at = r.offset();
  const std::uint8_t mode = r.u8();
  if (!is_valid_task_code(mode)) {
    throw FormatError(std::string(what) + ": invalid task mode " +
                      std::to_string(mode) + " at offset " +
                      std::to_string(mode_at));
  }
  const int np = r.u8();
  const int nf = r.u8();
  const std::uint32_t nx = r.u32(), ny = r.u32(), nz = r.u32();
  const double x0 = r.f64(), y0 = r.f64(), z0 = r.f64(), res = r.f64();
  const std::uint32_t flags = r.u32();
  constexpr auto kMaxDim = static_cast<std::uint32_t>(std::numeric_limits<int>::max());
  if (nx == 0 || ny == 0 || nz == 0 || nx > kMaxDim || ny > kMaxDim ||
      nz > kMaxDim) {
    throw FormatError(std::string(what) + ": invalid dimensions " +
                      std::to_string(nx) + "x" + std::to_string(ny) + "x" +
                      std::to_string(nz) + " at offset 11");
  }
  try {
    GridSpec spec = GridSpec::from_corner(Vec3(x0, y0, z0), res,
                                          static_cast<int>(nx), static_cast<int>(ny),
                                          static_cast<int>(nz), np, nf);
    return {static_cast<TaskMode>(mode), spec, flags};
  } catch (const SpecError& e) {
    throw FormatError(std::string(what) + ": invalid grid header: " + e.what());
  }
}

void check_length(std::size_t have, std::size_t expect, const GridSpec& spec,
                  const char* what) {
  if (have != expect) {
    throw FormatError(std::string(what) + ": payload length mismatch: header (" +
                      std::to_string(spec.nx()) + "x" + std::to_string(spec.ny()) +
                      "x" + std::to_string(spec.nz()) + ", Nf=" +
                      std::to_string(spec.n_future()) + ") implies " +
                      std::to_string(expect) + " bytes, file has " +
                      std::to_string(have));
  }
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(what + ": " + e.what());
  }
}

// Field access with descriptive errors.
const json& field(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + " must be an object");
  const auto it = obj.find(key);
  if (it == obj.end()) {
    throw FormatError(where + ": missing field \"" + key + "\"");
  }
  return *it;
}

double num(const json& v, const std::string& where) {
  if (!v.is_number()) throw FormatError(where + " must be a number");
  return v.get<double>();
}

std::int64_t integer(const json& v, const std::string& where) {
  if (!v.is_number_integer()) throw FormatError(where + " must be an integer");
  return v.get<std::int64_t>();
}

std::string str(const json& v, const std::string& where) {
  if (!v.is_string()) throw FormatError(where + " must be a string");
  return v.get<std::string>();
}

const json& arr(const json& v, const std::string& where) {
  if (!v.is_array()) throw FormatError(where + " must be an array");
  return v;
}

Vec3 vec3(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) {
    throw FormatError(where + " must be an array of 3 numbers");
  }
  return {num(v[0], where + "[0]"), num(v[1], where + "[1]"),
          num(v[2], where + "[2]")};
}

json to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_num(const json& v, const std::string& where) {
  if (v.is_null()) return std::nullopt;
  return num(v, where);
}

SemanticLabel parse_label_name(const std::string& s) {
  if (s == "Free") return SemanticLabel::Free;
  if (s == "GMO") return SemanticLabel::GMO;
  if (s == "GSO") return SemanticLabel::GSO;
  throw FormatError("unknown class \"" + s + "\"");
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> keys,
                         const std::string& where) {
  for (const auto& [k, _] : obj.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ConfigError(where + ": unknown field \"" + k + "\"");
  }
}

}  // namespace

// Grid and flow files ------------------------------------------------------

std::vector<std::uint8_t> encode_grid_file(const OccupancySequence& seq,
                                           TaskMode mode) {
  const GridSpec& spec = seq.spec();
  const bool ids = seq.has_instance_ids();
  const std::size_t n = spec.voxel_count();
  Writer w;
  w.out.reserve(kHeaderBytes + seq.frame_count() * n * (ids ? 3 : 1));
  write_header(w, kGridMagic, spec, mode, seq.n_future(),
               ids ? kFlagInstanceIds : 0u);
  for (const auto& frame : seq.frames()) {
    const auto labels = frame.labels();
    w.bytes(labels.data(), n);
    if (ids) {
      if constexpr (std::endian::native == std::endian::little) {
        w.bytes(frame.instance_ids().data(), 2 * n);
      } else {
        for (std::uint16_t id : frame.instance_ids()) w.u16(id);
      }
    }
  }
  return std::move(w.out);
}

GridFileData decode_grid_file(std::span<const std::uint8_t> bytes) {
  constexpr const char* what = "grid file";
  Reader r(bytes, what);
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(std::string(what) + " is " + std::to_string(bytes.size()) +
                      " bytes, shorter than the " + std::to_string(kHeaderBytes) +
                      "-byte header");
  }
  Header h = read_header(r, kGridMagic, what);
  if (h.flags & ~kFlagInstanceIds) {
    throw FormatError(std::string(what) + ": unknown flag bits " +
                      std::to_string(h.flags) + " at offset 55");
  }
  const bool ids = h.flags & kFlagInstanceIds;
  const std::size_t n = h.spec.voxel_count();
  const std::size_t frames = static_cast<std::size_t>(h.spec.n_future()) + 1;
  check_length(bytes.size(), kHeaderBytes + frames * n * (ids ? 3 : 1), h.spec,
               what);
  std::vector<OccupancyGrid> grids;
  grids.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    OccupancyGrid g(h.spec, ids);
    const std::size_t at = r.offset();
    const auto labels = r.take(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!is_valid_label_code(labels[i])) {
        throw FormatError(std::string(what) + ": invalid label code " +
                          std::to_string(labels[i]) + " at offset " +
                          std::to_string(at + i));
      }
    }
    std::memcpy(g.labels().data(), labels.data(), n);
    if (ids) {
      const std::size_t id_at = r.offset();
      const auto raw = r.take(2 * n);
      auto plane = g.instance_ids();
      for (std::size_t i = 0; i < n; ++i) {
        plane[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
        if (plane[i] != 0 && labels[i] != static_cast<std::uint8_t>(SemanticLabel::GMO)) {
          throw FormatError(std::string(what) + ": instance ID on a non-GMO voxel at offset " +
                            std::to_string(id_at + 2 * i));
        }
      }
    }
    grids.push_back(std::move(g));
  }
  return {h.mode, OccupancySequence(std::move(grids))};
}

std::vector<std::uint8_t> encode_flow_file(const std::vector<FlowVolume>& flows,
                                           TaskMode mode) {
  if (flows.empty()) throw SpecError("cannot encode an empty flow sequence");
  const GridSpec& spec = flows.front().spec();
  const std::size_t n = spec.voxel_count();
  Writer w;
  w.out.reserve(kHeaderBytes + flows.size() * n * 13);
  write_header(w, kFlowMagic, spec, mode, static_cast<int>(flows.size()) - 1, 0u);
  for (const auto& f : flows) {
    if (!f.spec().same_geometry(spec)) {
      throw SpecError("flow frames do not share one grid");
    }
    const std::size_t base = w.out.size();
    w.out.resize(base + n * 12, 0);
    const auto idx = f.valid_indices();
    const auto vec = f.valid_vectors();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      std::uint8_t* p = w.out.data() + base + static_cast<std::size_t>(idx[k]) * 12;
      for (int c = 0; c < 3; ++c) {
        const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(vec[k][c]));
        for (int b = 0; b < 4; ++b) p[4 * c + b] = static_cast<std::uint8_t>(bits >> (8 * b));
      }
    }
    w.bytes(f.mask().data(), n);
  }
  return std::move(w.out);
}

FlowFileData decode_flow_file(std::span<const std::uint8_t> bytes) {
  constexpr const char* what = "flow file";
  Reader r(bytes, what);
  if (bytes.size() < kHeaderBytes) {
    throw FormatError(std::string(what) + " is " + std::to_string(bytes.size()) +
                      " bytes, shorter than the " + std::to_string(kHeaderBytes) +
                      "-byte header");
  }
  Header h = read_header(r, kFlowMagic, what);
  if (h.flags != 0) {
    throw FormatError(std::string(what) + ": unknown flag bits " +
                      std::to_string(h.flags) + " at offset 55");
  }
  const std::size_t n = h.spec.voxel_count();
  const std::size_t frames = static_cast<std::size_t>(h.spec.n_future()) + 1;
  check_length(bytes.size(), kHeaderBytes + frames * n * 13, h.spec, what);
  FlowFileData out;
  out.mode = h.mode;
  out.flows.reserve(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const auto vecs = r.take(n * 12);
    const std::size_t mask_at = r.offset();
    const auto mask = r.take(n);
    FlowVolume f(h.spec);
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i] > 1) {
        throw FormatError(std::string(what) + ": invalid validity byte " +
                          std::to_string(mask[i]) + " at offset " +
                          std::to_string(mask_at + i));
      }
      if (!mask[i]) continue;
      Vec3 v;
      for (int c = 0; c < 3; ++c) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) {
          bits |= static_cast<std::uint32_t>(vecs[i * 12 + 4 * c + b]) << (8 * b);
        }
        v[c] = std::bit_cast<float>(bits);
      }
      try {
        f.push(i, v);
      } catch (const SpecError& e) {
        throw FormatError(std::string(what) + ": bad vector at offset " +
                          std::to_string(kHeaderBytes + t * n * 13 + i * 12) +
                          ": " + e.what());
      }
    }
    out.flows.push_back(std::move(f));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw FormatError("read failed for " + path.string());
  return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void save_grid_file(const fs::path& path, const OccupancySequence& seq,
                    TaskMode mode) {
  write_file_bytes(path, encode_grid_file(seq, mode));
}

GridFileData load_grid_file(const fs::path& path) {
  try {
    return decode_grid_file(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void save_flow_file(const fs::path& path, const std::vector<FlowVolume>& flows,
                    TaskMode mode) {
  write_file_bytes(path, encode_flow_file(flows, mode));
}

FlowFileData load_flow_file(const fs::path& path) {
  try {
    return decode_flow_file(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Samples ------------------------------------------------------------------

SamplePaths sample_paths(const fs::path& dir, const std::string& stem) {
  return {dir / (stem + ".c4do"), dir / (stem + ".c4df"), dir / (stem + ".json")};
}

SamplePaths sample_paths(const fs::path& any) {
  fs::path p = any;
  if (p.extension() == ".c4do" || p.extension() == ".c4df" ||
      p.extension() == ".json") {
    p.replace_extension();
  }
  return sample_paths(p.parent_path(), p.filename().string());
}

void save_sample(const SamplePaths& paths, const Sample& sample) {
  save_grid_file(paths.occupancy, sample.occupancy, sample.mode);
  save_flow_file(paths.flow, sample.flows, sample.mode);
  json meta;
  meta["scene_id"] = sample.meta.scene_id;
  meta["present_index"] = sample.meta.present_index;
  meta["task"] = task_mode_name(sample.mode);
  json inst = json::array();
  for (const auto& r : sample.meta.instances) {
    inst.push_back({{"id", r.id},
                    {"category", category_name(r.category)},
                    {"t_in", r.t_in},
                    {"t_out", r.t_out}});
  }
  meta["instances"] = std::move(inst);
  write_text(paths.meta, meta.dump(2) + "\n");
}

Sample load_sample(const SamplePaths& paths) {
  GridFileData grid = load_grid_file(paths.occupancy);
  FlowFileData flow = load_flow_file(paths.flow);
  Sample s;
  s.spec = grid.frames.spec();
  s.mode = grid.mode;
  s.occupancy = std::move(grid.frames);
  if (!flow.flows.front().spec().same_geometry(s.spec) ||
      flow.flows.size() != static_cast<std::size_t>(s.occupancy.frame_count())) {
    throw FormatError(paths.flow.string() + ": flow file does not match " +
                      paths.occupancy.string());
  }
  if (flow.mode != s.mode) {
    throw FormatError(paths.flow.string() + ": task mode differs from occupancy file");
  }
  s.flows = std::move(flow.flows);
  const std::string where = paths.meta.string();
  const json meta = parse_json(read_text(paths.meta), where);
  s.meta.scene_id = str(field(meta, "scene_id", where), where + ".scene_id");
  s.meta.present_index =
      static_cast<int>(integer(field(meta, "present_index", where), where + ".present_index"));
  const json& inst = arr(field(meta, "instances", where), where + ".instances");
  for (std::size_t i = 0; i < inst.size(); ++i) {
    const std::string w = where + ".instances[" + std::to_string(i) + "]";
    RetainedInstance r;
    r.id = static_cast<std::uint32_t>(integer(field(inst[i], "id", w), w + ".id"));
    try {
      r.category = parse_category(str(field(inst[i], "category", w), w + ".category"));
    } catch (const FormatError& e) {
      throw FormatError(w + ".category: " + e.what());
    }
    r.t_in = static_cast<int>(integer(field(inst[i], "t_in", w), w + ".t_in"));
    r.t_out = static_cast<int>(integer(field(inst[i], "t_out", w), w + ".t_out"));
    s.meta.instances.push_back(r);
  }
  return s;
}

// BEV files ----------------------------------------------------------------

std::vector<std::uint8_t> encode_bev_file(const std::vector<BevMap>& frames) {
  if (frames.empty()) throw SpecError("cannot encode an empty BEV sequence");
  const BevMap& first = frames.front();
  const bool ids = !first.instance_ids.empty();
  Writer w;
  w.bytes(kBevMagic, 4);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(first.nx));
  w.u32(static_cast<std::uint32_t>(first.ny));
  w.f64(first.x_min);
  w.f64(first.y_min);
  w.f64(first.resolution);
  w.u32(static_cast<std::uint32_t>(frames.size()));
  w.u32(ids ? kFlagInstanceIds : 0u);
  const std::size_t n = static_cast<std::size_t>(first.nx) * first.ny;
  for (const auto& f : frames) {
    if (f.nx != first.nx || f.ny != first.ny || f.x_min != first.x_min ||
        f.y_min != first.y_min || f.resolution != first.resolution ||
        f.occupied.size() != n || f.instance_ids.empty() == ids ||
        (ids && f.instance_ids.size() != n)) {
      throw SpecError("BEV frames do not share one layout");
    }
    w.bytes(f.occupied.data(), n);
    if (ids) {
      for (std::uint16_t id : f.instance_ids) w.u16(id);
    }
  }
  return std::move(w.out);
}

std::vector<BevMap> decode_bev_file(std::span<const std::uint8_t> bytes) {
  constexpr const char* what = "BEV file";
  if (bytes.size() < kBevHeaderBytes) {
    throw FormatError(std::string(what) + " is " + std::to_string(bytes.size()) +
                      " bytes, shorter than the " + std::to_string(kBevHeaderBytes) +
                      "-byte header");
  }
  Reader r(bytes, what);
  check_magic(r, kBevMagic, what);
  check_version(r, what);
  BevMap proto;
  proto.nx = static_cast<int>(r.u32());
  proto.ny = static_cast<int>(r.u32());
  proto.x_min = r.f64();
  proto.y_min = r.f64();
  proto.resolution = r.f64();
  const std::uint32_t frames = r.u32();
  const std::uint32_t flags = r.u32();
  if (proto.nx <= 0 || proto.ny <= 0 || !(proto.resolution > 0.0)) {
    throw FormatError(std::string(what) + ": invalid layout at offset 8");
  }
  if (flags & ~kFlagInstanceIds) {
    throw FormatError(std::string(what) + ": unknown flag bits at offset 44");
  }
  const bool ids = flags & kFlagInstanceIds;
  const std::size_t n = static_cast<std::size_t>(proto.nx) * proto.ny;
  const std::size_t expect = kBevHeaderBytes + frames * n * (ids ? 3 : 1);
  if (bytes.size() != expect) {
    throw FormatError(std::string(what) + ": payload length mismatch: header implies " +
                      std::to_string(expect) + " bytes, file has " +
                      std::to_string(bytes.size()));
  }
  std::vector<BevMap> out;
  for (std::uint32_t t = 0; t < frames; ++t) {
    BevMap m = proto;
    const auto occ = r.take(n);
    m.occupied.assign(occ.begin(), occ.end());
    if (ids) {
      m.instance_ids.resize(n);
      for (auto& id : m.instance_ids) id = r.u16();
    }
    out.push_back(std::move(m));
  }
  return out;
}

void save_bev_file(const fs::path& path, const std::vector<BevMap>& frames) {
  write_file_bytes(path, encode_bev_file(frames));
}

std::vector<BevMap> load_bev_file(const fs::path& path) {
  try {
    return decode_bev_file(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// Point clouds -------------------------------------------------------------

void save_point_cloud(const fs::path& path, const LabeledPointCloud& cloud) {
  if (cloud.points.size() != cloud.labels.size()) {
    throw SpecError("point cloud has mismatched label count");
  }
  std::ostringstream os;
  os << std::setprecision(17) << "x,y,z,label\n";
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Vec3& p = cloud.points[i];
    os << p.x() << ',' << p.y() << ',' << p.z() << ','
       << static_cast<int>(cloud.labels[i]) << '\n';
  }
  write_text(path, os.str());
}

LabeledPointCloud load_point_cloud(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "x,y,z,label") {
    throw FormatError(path.string() + ": line 1: expected header \"x,y,z,label\"");
  }
  LabeledPointCloud cloud;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    double v[3];
    const char* p = line.c_str();
    char* end = nullptr;
    for (int c = 0; c < 3; ++c) {
      v[c] = std::strtod(p, &end);
      if (end == p || *end != ',') {
        throw FormatError(path.string() + ": line " + std::to_string(lineno) +
                          ": malformed coordinate");
      }
      p = end + 1;
    }
    const long label = std::strtol(p, &end, 10);
    if (end == p || *end != '\0' || label < 0 || label > 2) {
      throw FormatError(path.string() + ": line " + std::to_string(lineno) +
                        ": label must be 0, 1 or 2");
    }
    cloud.points.emplace_back(v[0], v[1], v[2]);
    cloud.labels.push_back(static_cast<SemanticLabel>(label));
  }
  return cloud;
}

// Scene documents ----------------------------------------------------------

namespace {

json scene_core(const Scene& scene) {
  json doc;
  doc["schema_version"] = kSceneSchemaVersion;
  doc["scene_id"] = scene.id;
  doc["frames"] = scene.timestamps;
  json ego = json::array();
  for (std::size_t k = 0; k < scene.ego.size(); ++k) {
    const Pose& p = scene.ego[k];
    ego.push_back({{"frame", k},
                   {"quaternion", {p.rotation.w(), p.rotation.x(), p.rotation.y(),
                                   p.rotation.z()}},
                   {"translation", to_json(p.translation)}});
  }
  doc["ego"] = std::move(ego);
  json instances = json::array();
  for (const auto& track : scene.tracks) {
    json states = json::array();
    for (const auto& [frame, b] : track.states) {
      states.push_back({{"frame", frame},
                        {"center", to_json(b.center)},
                        {"size_lwh", to_json(b.size)},
                        {"yaw", b.yaw},
                        {"visibility", b.visibility}});
    }
    instances.push_back({{"id", track.id},
                         {"category", category_name(track.category)},
                         {"states", std::move(states)}});
  }
  doc["instances"] = std::move(instances);
  return doc;
}

Scene scene_from_json(const json& doc, const fs::path& base, const std::string& where) {
  const auto version = integer(field(doc, "schema_version", where), where + ".schema_version");
  if (version != kSceneSchemaVersion) {
    throw FormatError(where + ": unsupported schema_version " + std::to_string(version) +
                      " (expected " + std::to_string(kSceneSchemaVersion) + ")");
  }
  Scene scene;
  scene.id = str(field(doc, "scene_id", where), where + ".scene_id");
  const json& frames = arr(field(doc, "frames", where), where + ".frames");
  for (std::size_t k = 0; k < frames.size(); ++k) {
    scene.timestamps.push_back(num(frames[k], where + ".frames[" + std::to_string(k) + "]"));
  }
  const json& ego = arr(field(doc, "ego", where), where + ".ego");
  scene.ego.resize(ego.size());
  std::vector<bool> seen(ego.size(), false);
  for (std::size_t i = 0; i < ego.size(); ++i) {
    const std::string w = where + ".ego[" + std::to_string(i) + "]";
    const auto frame = integer(field(ego[i], "frame", w), w + ".frame");
    if (frame < 0 || static_cast<std::size_t>(frame) >= ego.size() || seen[frame]) {
      throw FormatError(w + ".frame: invalid or duplicate frame " + std::to_string(frame));
    }
    seen[frame] = true;
    const json& q = field(ego[i], "quaternion", w);
    if (!q.is_array() || q.size() != 4) {
      throw FormatError(w + ".quaternion must be an array of 4 numbers (w, x, y, z)");
    }
    Pose p;
    p.rotation = Eigen::Quaterniond(num(q[0], w + ".quaternion[0]"), num(q[1], w + ".quaternion[1]"),
                                    num(q[2], w + ".quaternion[2]"), num(q[3], w + ".quaternion[3]"));
    p.translation = vec3(field(ego[i], "translation", w), w + ".translation");
    scene.ego[frame] = p;
  }
  const json& instances = arr(field(doc, "instances", where), where + ".instances");
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::string w = where + ".instances[" + std::to_string(i) + "]";
    InstanceTrack track;
    const auto id = integer(field(instances[i], "id", w), w + ".id");
    if (id < 0 || id > std::numeric_limits<std::uint32_t>::max()) {
      throw FormatError(w + ".id out of range");
    }
    track.id = static_cast<std::uint32_t>(id);
    try {
      track.category = parse_category(str(field(instances[i], "category", w), w + ".category"));
    } catch (const FormatError& e) {
      throw FormatError(w + ".category: " + e.what());
    }
    const json& states = arr(field(instances[i], "states", w), w + ".states");
    for (std::size_t j = 0; j < states.size(); ++j) {
      const std::string sw = w + ".states[" + std::to_string(j) + "]";
      const int frame = static_cast<int>(integer(field(states[j], "frame", sw), sw + ".frame"));
      BoxState b;
      b.center = vec3(field(states[j], "center", sw), sw + ".center");
      b.size = vec3(field(states[j], "size_lwh", sw), sw + ".size_lwh");
      b.yaw = num(field(states[j], "yaw", sw), sw + ".yaw");
      b.visibility = num(field(states[j], "visibility", sw), sw + ".visibility");
      if (!track.states.emplace(frame, b).second) {
        throw FormatError(sw + ".frame: duplicate frame " + std::to_string(frame));
      }
    }
    scene.tracks.push_back(std::move(track));
  }

  auto file_list = [&](const char* key) -> std::vector<std::optional<fs::path>> {
    std::vector<std::optional<fs::path>> out;
    const auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return out;
    const std::string w = where + "." + key;
    arr(*it, w);
    if (it->size() != scene.timestamps.size()) {
      throw FormatError(w + " has " + std::to_string(it->size()) +
                        " entries, expected one per frame (" +
                        std::to_string(scene.timestamps.size()) + ")");
    }
    for (std::size_t k = 0; k < it->size(); ++k) {
      const json& e = (*it)[k];
      if (e.is_null()) {
        out.emplace_back();
        continue;
      }
      const fs::path p = base / str(e, w + "[" + std::to_string(k) + "]");
      if (!fs::exists(p)) {
        throw FormatError(w + "[" + std::to_string(k) + "]: referenced file " +
                          p.string() + " does not exist");
      }
      out.emplace_back(p);
    }
    return out;
  };
  for (const auto& p : file_list("fine_label_files")) {
    if (!p) {
      scene.fine_labels.emplace_back();
      continue;
    }
    GridFileData g = load_grid_file(*p);
    if (g.frames.frame_count() != 1) {
      throw FormatError(p->string() + ": fine label file must hold one frame");
    }
    scene.fine_labels.emplace_back(g.frames.frame(0));
  }
  for (const auto& p : file_list("cloud_files")) {
    if (!p) {
      scene.clouds.emplace_back();
      continue;
    }
    scene.clouds.emplace_back(load_point_cloud(*p));
  }
  scene.validate();
  return scene;
}

}  // namespace

std::string scene_to_json_text(const Scene& scene) {
  return scene_core(scene).dump(2) + "\n";
}

void save_scene_document(const fs::path& path, const Scene& scene) {
  json doc = scene_core(scene);
  const fs::path dir = path.parent_path();
  const std::string stem = path.stem().string();
  if (!scene.fine_labels.empty()) {
    json files = json::array();
    for (std::size_t k = 0; k < scene.fine_labels.size(); ++k) {
      const auto& g = scene.fine_labels[k];
      if (!g) {
        files.push_back(nullptr);
        continue;
      }
      const std::string name = stem + ".fine." + std::to_string(k) + ".c4do";
      save_grid_file(dir / name, OccupancySequence({g->with_horizons(0, 0)}),
                     TaskMode::InflatedGMO);
      files.push_back(name);
    }
    doc["fine_label_files"] = std::move(files);
  }
  if (!scene.clouds.empty()) {
    json files = json::array();
    for (std::size_t k = 0; k < scene.clouds.size(); ++k) {
      const auto& c = scene.clouds[k];
      if (!c) {
        files.push_back(nullptr);
        continue;
      }
      const std::string name = stem + ".cloud." + std::to_string(k) + ".csv";
      save_point_cloud(dir / name, *c);
      files.push_back(name);
    }
    doc["cloud_files"] = std::move(files);
  }
  write_text(path, doc.dump(2) + "\n");
}

Scene load_scene_document(const fs::path& path) {
  const std::string where = path.string();
  return scene_from_json(parse_json(read_text(path), where), path.parent_path(),
                         where);
}

// Reports ------------------------------------------------------------------

std::string report_to_json_text(const EvalReport& report) {
  json doc;
  doc["task"] = task_mode_name(report.mode);
  doc["n_future"] = report.n_future;
  doc["sample_count"] = report.sample_count;
  doc["vpq_threshold"] = report.vpq_threshold;
  json classes = json::array();
  for (const auto& c : report.classes) {
    json steps = json::array();
    for (const auto& v : c.iou_per_step) steps.push_back(opt(v));
    json counts = json::array();
    for (std::size_t t = 0; t < c.counts.size(); ++t) {
      counts.push_back({{"t", t},
                        {"intersection", c.counts[t].intersection},
                        {"pred", c.counts[t].pred},
                        {"gt", c.counts[t].gt}});
    }
    classes.push_back({{"class", label_name(c.label)},
                       {"iou_current", opt(c.iou_current)},
                       {"iou_per_step", std::move(steps)},
                       {"iou_future", opt(c.iou_future)},
                       {"iou_discounted", opt(c.iou_discounted)},
                       {"counts", std::move(counts)}});
  }
  doc["classes"] = std::move(classes);
  doc["mean_iou_current"] = opt(report.mean_iou_current);
  doc["mean_iou_future"] = opt(report.mean_iou_future);
  doc["vpq"] = opt(report.vpq);
  json vpq_counts = json::array();
  for (std::size_t t = 0; t < report.vpq_counts.size(); ++t) {
    const auto& v = report.vpq_counts[t];
    vpq_counts.push_back({{"t", t},
                          {"sum_iou", v.sum_iou},
                          {"tp", v.tp},
                          {"fp", v.fp},
                          {"fn", v.fn}});
  }
  doc["vpq_counts"] = std::move(vpq_counts);
  return doc.dump(2) + "\n";
}

EvalReport report_from_json_text(const std::string& text) {
  const std::string where = "report";
  const json doc = parse_json(text, where);
  EvalReport r;
  try {
    r.mode = parse_task_mode(str(field(doc, "task", where), where + ".task"));
  } catch (const ConfigError& e) {
    throw FormatError(where + ".task: " + e.what());
  }
  r.n_future = static_cast<int>(integer(field(doc, "n_future", where), where + ".n_future"));
  r.sample_count = static_cast<std::uint64_t>(
      integer(field(doc, "sample_count", where), where + ".sample_count"));
  r.vpq_threshold = num(field(doc, "vpq_threshold", where), where + ".vpq_threshold");
  const json& classes = arr(field(doc, "classes", where), where + ".classes");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const std::string w = where + ".classes[" + std::to_string(i) + "]";
    const json& c = classes[i];
    ClassReport cr;
    cr.label = parse_label_name(str(field(c, "class", w), w + ".class"));
    cr.iou_current = opt_num(field(c, "iou_current", w), w + ".iou_current");
    const json& steps = arr(field(c, "iou_per_step", w), w + ".iou_per_step");
    for (std::size_t k = 0; k < steps.size(); ++k) {
      cr.iou_per_step.push_back(opt_num(steps[k], w + ".iou_per_step[" + std::to_string(k) + "]"));
    }
    cr.iou_future = opt_num(field(c, "iou_future", w), w + ".iou_future");
    cr.iou_discounted = opt_num(field(c, "iou_discounted", w), w + ".iou_discounted");
    const json& counts = arr(field(c, "counts", w), w + ".counts");
    for (std::size_t k = 0; k < counts.size(); ++k) {
      const std::string cw = w + ".counts[" + std::to_string(k) + "]";
      ClassCounts cc;
      cc.intersection = static_cast<std::uint64_t>(integer(field(counts[k], "intersection", cw), cw));
      cc.pred = static_cast<std::uint64_t>(integer(field(counts[k], "pred", cw), cw));
      cc.gt = static_cast<std::uint64_t>(integer(field(counts[k], "gt", cw), cw));
      cr.counts.push_back(cc);
    }
    r.classes.push_back(std::move(cr));
  }
  r.mean_iou_current = opt_num(field(doc, "mean_iou_current", where), where + ".mean_iou_current");
  r.mean_iou_future = opt_num(field(doc, "mean_iou_future", where), where + ".mean_iou_future");
  r.vpq = opt_num(field(doc, "vpq", where), where + ".vpq");
  const json& vc = arr(field(doc, "vpq_counts", where), where + ".vpq_counts");
  for (std::size_t k = 0; k < vc.size(); ++k) {
    const std::string w = where + ".vpq_counts[" + std::to_string(k) + "]";
    VpqTally t;
    t.sum_iou = num(field(vc[k], "sum_iou", w), w + ".sum_iou");
    t.tp = static_cast<std::uint64_t>(integer(field(vc[k], "tp", w), w + ".tp"));
    t.fp = static_cast<std::uint64_t>(integer(field(vc[k], "fp", w), w + ".fp"));
    t.fn = static_cast<std::uint64_t>(integer(field(vc[k], "fn", w), w + ".fn"));
    r.vpq_counts.push_back(t);
  }
  return r;
}

void save_report_json(const fs::path& path, const EvalReport& report) {
  write_text(path, report_to_json_text(report));
}

EvalReport load_report_json(const fs::path& path) {
  try {
    return report_from_json_text(read_text(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string report_to_csv_text(const EvalReport& report) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "class,t,intersection,pred,gt,iou,vpq_sum_iou,vpq_tp,vpq_fp,vpq_fn\n";
  for (const auto& c : report.classes) {
    for (std::size_t t = 0; t < c.counts.size(); ++t) {
      const auto& n = c.counts[t];
      os << label_name(c.label) << ',' << t << ',' << n.intersection << ','
         << n.pred << ',' << n.gt << ',';
      if (const auto v = n.iou()) os << *v;
      os << ',';
      if (c.label == SemanticLabel::GMO && t < report.vpq_counts.size()) {
        const auto& v = report.vpq_counts[t];
        os << v.sum_iou << ',' << v.tp << ',' << v.fp << ',' << v.fn;
      } else {
        os << ",,";
      }
      os << '\n';
    }
  }
  return os.str();
}

void save_report_csv(const fs::path& path, const EvalReport& report) {
  write_text(path, report_to_csv_text(report));
}

// Synth config -------------------------------------------------------------

namespace {

Range range_of(const json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 2) {
    throw ConfigError(where + " must be [min, max]");
  }
  if (!v[0].is_number() || !v[1].is_number()) {
    throw ConfigError(where + " must hold numbers");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

// Schema errors in a config are configuration errors.
template <typename Fn>
auto as_config(Fn&& fn) {
  try {
    return fn();
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

SynthConfig synth_config_from_json_text(const std::string& text) {
  const std::string where = "synth config";
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(where + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(where + " must be a JSON object");
  reject_unknown_keys(doc,
                      {"seed", "scene_id", "frames", "dt", "instances", "motion",
                       "speed", "yaw_rate", "length", "width", "height", "spawn_x",
                       "spawn_y", "spawn_z", "ego", "grid", "extent_margin",
                       "clearance", "min_center_distance", "max_attempts",
                       "fine_labels", "clouds", "fine_erosion", "ground_z",
                       "obstacles", "scripted"},
                      where);
  return as_config([&] {
    SynthConfig c;
    auto get = [&](const char* key) -> const json* {
      const auto it = doc.find(key);
      return it == doc.end() ? nullptr : &*it;
    };
    const std::string w = where;
    if (auto v = get("seed")) c.seed = static_cast<std::uint64_t>(integer(*v, w + ".seed"));
    if (auto v = get("scene_id")) c.scene_id = str(*v, w + ".scene_id");
    if (auto v = get("frames")) c.frame_count = static_cast<int>(integer(*v, w + ".frames"));
    if (auto v = get("dt")) c.dt = num(*v, w + ".dt");
    if (auto v = get("instances")) c.instance_count = static_cast<int>(integer(*v, w + ".instances"));
    if (auto v = get("motion")) c.random_motion = parse_motion_kind(str(*v, w + ".motion"));
    if (auto v = get("speed")) c.speed = range_of(*v, w + ".speed");
    if (auto v = get("yaw_rate")) c.yaw_rate = range_of(*v, w + ".yaw_rate");
    if (auto v = get("length")) c.length = range_of(*v, w + ".length");
    if (auto v = get("width")) c.width = range_of(*v, w + ".width");
    if (auto v = get("height")) c.height = range_of(*v, w + ".height");
    if (auto v = get("spawn_x")) {
      const Range r = range_of(*v, w + ".spawn_x");
      c.spawn_x = {r.min, r.max};
    }
    if (auto v = get("spawn_y")) {
      const Range r = range_of(*v, w + ".spawn_y");
      c.spawn_y = {r.min, r.max};
    }
    if (auto v = get("spawn_z")) c.spawn_z = num(*v, w + ".spawn_z");
    if (auto v = get("extent_margin")) c.extent_margin = num(*v, w + ".extent_margin");
    if (auto v = get("clearance")) c.clearance = num(*v, w + ".clearance");
    if (auto v = get("min_center_distance")) c.min_center_distance = num(*v, w + ".min_center_distance");
    if (auto v = get("max_attempts")) c.max_attempts = static_cast<int>(integer(*v, w + ".max_attempts"));
    if (auto v = get("fine_labels")) {
      if (!v->is_boolean()) throw ConfigError(w + ".fine_labels must be true or false");
      c.fine_labels = v->get<bool>();
    }
    if (auto v = get("clouds")) {
      if (!v->is_boolean()) throw ConfigError(w + ".clouds must be true or false");
      c.clouds = v->get<bool>();
    }
    if (auto v = get("fine_erosion")) c.fine_erosion = num(*v, w + ".fine_erosion");
    if (auto v = get("ground_z")) c.ground_z = num(*v, w + ".ground_z");
    if (auto v = get("obstacles")) c.obstacle_count = static_cast<int>(integer(*v, w + ".obstacles"));
    if (auto v = get("ego")) {
      const std::string ew = w + ".ego";
      if (!v->is_object()) throw ConfigError(ew + " must be an object");
      reject_unknown_keys(*v, {"motion", "start", "velocity", "yaw"}, ew);
      if (auto it = v->find("motion"); it != v->end()) c.ego.motion = parse_motion_kind(str(*it, ew + ".motion"));
      if (auto it = v->find("start"); it != v->end()) c.ego.start = vec3(*it, ew + ".start");
      if (auto it = v->find("velocity"); it != v->end()) c.ego.velocity = vec3(*it, ew + ".velocity");
      if (auto it = v->find("yaw"); it != v->end()) c.ego.yaw = num(*it, ew + ".yaw");
    }
    if (auto v = get("grid")) {
      const std::string gw = w + ".grid";
      if (!v->is_object()) throw ConfigError(gw + " must be an object");
      reject_unknown_keys(*v, {"x_range", "y_range", "z_range", "res"}, gw);
      const GridSpec d;
      auto axis = [&](const char* key, AxisRange def) {
        const auto it = v->find(key);
        if (it == v->end()) return def;
        const Range r = range_of(*it, gw + "." + key);
        return AxisRange{r.min, r.max};
      };
      const double res = v->contains("res") ? num((*v)["res"], gw + ".res") : d.resolution();
      try {
        c.grid = GridSpec(axis("x_range", d.x()), axis("y_range", d.y()),
                          axis("z_range", d.z()), res, d.n_past(), d.n_future());
      } catch (const SpecError& e) {
        throw ConfigError(gw + ": " + e.what());
      }
    }
    if (auto v = get("scripted")) {
      arr(*v, w + ".scripted");
      for (std::size_t i = 0; i < v->size(); ++i) {
        const std::string sw = w + ".scripted[" + std::to_string(i) + "]";
        const json& s = (*v)[i];
        if (!s.is_object()) throw ConfigError(sw + " must be an object");
        reject_unknown_keys(s,
                            {"motion", "category", "start", "velocity", "yaw_rate",
                             "size", "yaw", "appear", "vanish", "visibility"},
                            sw);
        InstanceScript is;
        if (auto it = s.find("motion"); it != s.end()) is.motion = parse_motion_kind(str(*it, sw + ".motion"));
        if (auto it = s.find("category"); it != s.end()) is.category = parse_category(str(*it, sw + ".category"));
        if (auto it = s.find("start"); it != s.end()) is.start = vec3(*it, sw + ".start");
        if (auto it = s.find("velocity"); it != s.end()) is.velocity = vec3(*it, sw + ".velocity");
        if (auto it = s.find("yaw_rate"); it != s.end()) is.yaw_rate = num(*it, sw + ".yaw_rate");
        if (auto it = s.find("size"); it != s.end()) is.size = vec3(*it, sw + ".size");
        if (auto it = s.find("yaw"); it != s.end()) is.yaw = num(*it, sw + ".yaw");
        if (auto it = s.find("appear"); it != s.end()) is.appear = static_cast<int>(integer(*it, sw + ".appear"));
        if (auto it = s.find("vanish"); it != s.end()) is.vanish = static_cast<int>(integer(*it, sw + ".vanish"));
        if (auto it = s.find("visibility"); it != s.end()) {
          arr(*it, sw + ".visibility");
          for (std::size_t k = 0; k < it->size(); ++k) {
            is.visibility.push_back(num((*it)[k], sw + ".visibility[" + std::to_string(k) + "]"));
          }
        }
        c.scripted.push_back(std::move(is));
      }
    }
    return c;
  });
}

SynthConfig load_synth_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return synth_config_from_json_text(text);
}

// Voxel export -------------------------------------------------------------

std::string export_voxels_csv(const OccupancySequence& seq) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "t,ix,iy,iz,x,y,z,label,instance\n";
  const GridSpec& spec = seq.spec();
  for (int t = 0; t < seq.frame_count(); ++t) {
    const OccupancyGrid& g = seq.frame(t);
    const auto labels = g.labels();
    for (std::size_t li = 0; li < labels.size(); ++li) {
      if (labels[li] == SemanticLabel::Free) continue;
      const VoxelIndex v = voxel_from_linear(spec, li);
      const Vec3 c = voxel_center_unchecked(v, spec);
      os << t << ',' << v.ix << ',' << v.iy << ',' << v.iz << ',' << c.x() << ','
         << c.y() << ',' << c.z() << ',' << label_name(labels[li]) << ','
         << g.instance_id(li) << '\n';
    }
  }
  return os.str();
}

}  // namespace occ4d
