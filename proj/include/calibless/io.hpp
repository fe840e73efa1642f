#pragma once

#include "calibrate.hpp"
#include "geometry.hpp"
#include "kspace.hpp"

#include <json.hpp>

#include <array>
#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>

namespace calibless::io {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

/// On-disk dataset: meta.json plus one raw little-endian array per pipeline product.
///
/// kspace holds the fully sampled acquisition; mask describes the undersampling that later
/// stages apply to it. recon has one channel.
struct Dataset
{
  Dims dims;
  Geometry geometry;
  int acceleration = 1;
  int offset = 0;
  Index acs_lines = 24;
  std::uint64_t seed = 0;
  double slice_spacing = 1.0;

  std::optional<KSpaceVolume> kspace;
  std::optional<SamplingMask> mask;
  std::optional<ImageVolume> maps_ref;
  std::optional<ImageVolume> maps_trans;
  std::optional<ImageVolume> maps_est;
  std::optional<RealVolume> eigval;
  std::optional<ImageVolume> recon;

  /// Stage records appended by the CLI, oldest first.
  json provenance = json::array();
  /// Free-form stage parameters (calibration settings, recon method, ...).
  json extra = json::object();
};

namespace detail {

inline void put_u32(std::string &out, std::uint32_t v)
{
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline void put_u64(std::string &out, std::uint64_t v)
{
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

inline std::uint32_t get_u32(unsigned char const *p)
{
  std::uint32_t v = 0;
  for (int b = 3; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline std::uint64_t get_u64(unsigned char const *p)
{
  std::uint64_t v = 0;
  for (int b = 7; b >= 0; --b) v = (v << 8) | p[b];
  return v;
}

inline void put_f32(std::string &out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }
inline double get_f32(unsigned char const *p) { return static_cast<double>(std::bit_cast<float>(get_u32(p))); }
inline void put_f64(std::string &out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline double get_f64(unsigned char const *p) { return std::bit_cast<double>(get_u64(p)); }

inline std::string read_file(fs::path const &p, std::string const &field)
{
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(field, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(fs::path const &p, std::string const &bytes, std::string const &field)
{
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(field, "cannot create " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(field, "write failed for " + p.string());
}

template <class Tag>
std::string encode_c64(Volume<cplx, Tag> const &v)
{
  std::string out;
  out.reserve(static_cast<std::size_t>(v.size()) * 8);
  for (auto const &z : v.data()) {
    put_f32(out, z.real());
    put_f32(out, z.imag());
  }
  return out;
}

template <class Tag>
Volume<cplx, Tag> decode_c64(std::string const &bytes, Dims d)
{
  Volume<cplx, Tag> v(d);
  auto const *p = reinterpret_cast<unsigned char const *>(bytes.data());
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = cplx(get_f32(p + 8 * i), get_f32(p + 8 * i + 4));
  return v;
}

inline std::string encode_f32(RealVolume const &v)
{
  std::string out;
  out.reserve(static_cast<std::size_t>(v.size()) * 4);
  for (double x : v.data()) put_f32(out, x);
  return out;
}

inline RealVolume decode_f32(std::string const &bytes, Dims d)
{
  RealVolume v(d);
  auto const *p = reinterpret_cast<unsigned char const *>(bytes.data());
  for (Index i = 0; i < v.size(); ++i) v.data()[i] = get_f32(p + 4 * i);
  return v;
}

struct ArraySpec
{
  char const *file;
  Dims dims;
  std::size_t bytes_per_element;
};

inline std::array<ArraySpec, 7> array_specs(Dims const &d)
{
  Dims const one{d.slices, 1, d.ny, d.nx};
  return {{{"kspace.c64", d, 8},
           {"mask.u8", Dims{1, 1, d.ny, 1}, 1},
           {"maps_ref.c64", d, 8},
           {"maps_trans.c64", d, 8},
           {"maps_est.c64", d, 8},
           {"eigval.f32", one, 4},
           {"recon.c64", one, 8}}};
}

inline std::size_t expected_bytes(ArraySpec const &a)
{
  return static_cast<std::size_t>(a.dims.size()) * a.bytes_per_element;
}

template <class T>
T field_as(json const &j, char const *key, std::string const &field)
{
  if (!j.contains(key)) throw IoError(field, std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (json::exception const &e) {
    throw IoError(field, std::string("bad value for '") + key + "': " + e.what());
  }
}

} // namespace detail

/// Names of the arrays present in a dataset.
inline std::vector<std::string> present_arrays(Dataset const &ds)
{
  std::vector<std::string> names;
  if (ds.kspace) names.emplace_back("kspace.c64");
  if (ds.mask) names.emplace_back("mask.u8");
  if (ds.maps_ref) names.emplace_back("maps_ref.c64");
  if (ds.maps_trans) names.emplace_back("maps_trans.c64");
  if (ds.maps_est) names.emplace_back("maps_est.c64");
  if (ds.eigval) names.emplace_back("eigval.f32");
  if (ds.recon) names.emplace_back("recon.c64");
  return names;
}

inline json meta_json(Dataset const &ds)
{
  json j;
  j["format_version"] = kFormatVersion;
  j["dims"] = {{"nslices", ds.dims.slices}, {"nchannels", ds.dims.channels}, {"ny", ds.dims.ny}, {"nx", ds.dims.nx}};
  j["geometry"] = {{"alpha_deg", ds.geometry.alpha}, {"beta_deg", ds.geometry.beta}, {"gamma_deg", ds.geometry.gamma},
                   {"m_px", ds.geometry.m},         {"n_px", ds.geometry.n},         {"t_px", ds.geometry.t}};
  j["acceleration"] = ds.acceleration;
  j["offset"] = ds.offset;
  j["acs_lines"] = ds.acs_lines;
  j["seed"] = ds.seed;
  j["slice_spacing"] = ds.slice_spacing;
  json arrays = json::object();
  for (auto const &a : detail::array_specs(ds.dims))
    for (auto const &n : present_arrays(ds))
      if (n == a.file) arrays[n] = detail::expected_bytes(a);
  j["arrays"] = arrays;
  j["provenance"] = ds.provenance;
  j["extra"] = ds.extra;
  return j;
}

/// Write meta.json and every present array; stale array files from earlier runs are removed.
inline void save_dataset(Dataset const &ds, fs::path const &dir)
{
  if (!ds.dims.valid()) throw IoError("dims", "invalid dims " + ds.dims.str());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("meta.json", "cannot create directory " + dir.string() + ": " + ec.message());
  auto check = [&](auto const &v, Dims want, char const *field) {
    if (v.dims() != want) throw IoError(field, "dims " + v.dims().str() + " do not match dataset dims " + want.str());
  };
  Dims const one{ds.dims.slices, 1, ds.dims.ny, ds.dims.nx};
  auto const names = present_arrays(ds);
  for (auto const &a : detail::array_specs(ds.dims))
    if (std::find(names.begin(), names.end(), a.file) == names.end()) fs::remove(dir / a.file, ec);

  if (ds.kspace) {
    check(*ds.kspace, ds.dims, "kspace.c64");
    detail::write_file(dir / "kspace.c64", detail::encode_c64(*ds.kspace), "kspace.c64");
  }
  if (ds.mask) {
    if (ds.mask->ny != ds.dims.ny || static_cast<Index>(ds.mask->sampled.size()) != ds.dims.ny)
      throw IoError("mask.u8", "mask length " + std::to_string(ds.mask->sampled.size()) + " != ny " + std::to_string(ds.dims.ny));
    detail::write_file(dir / "mask.u8", std::string(ds.mask->sampled.begin(), ds.mask->sampled.end()), "mask.u8");
  }
  auto write_maps = [&](std::optional<ImageVolume> const &m, Dims want, char const *field) {
    if (!m) return;
    check(*m, want, field);
    detail::write_file(dir / field, detail::encode_c64(*m), field);
  };
  write_maps(ds.maps_ref, ds.dims, "maps_ref.c64");
  write_maps(ds.maps_trans, ds.dims, "maps_trans.c64");
  write_maps(ds.maps_est, ds.dims, "maps_est.c64");
  write_maps(ds.recon, one, "recon.c64");
  if (ds.eigval) {
    check(*ds.eigval, one, "eigval.f32");
    detail::write_file(dir / "eigval.f32", detail::encode_f32(*ds.eigval), "eigval.f32");
  }
  detail::write_file(dir / "meta.json", meta_json(ds).dump(2) + "\n", "meta.json");
}

inline Dataset load_dataset(fs::path const &dir)
{
  std::string const text = detail::read_file(dir / "meta.json", "meta.json");
  json j;
  try {
    j = json::parse(text);
  } catch (json::exception const &e) {
    throw IoError("meta.json", std::string("parse error: ") + e.what());
  }
  if (!j.is_object()) throw IoError("meta.json", "top level must be an object");
  int const version = detail::field_as<int>(j, "format_version", "format_version");
  if (version != kFormatVersion)
    throw IoError("format_version", "unsupported format_version " + std::to_string(version) + " (expected " +
                                        std::to_string(kFormatVersion) + ")");

  Dataset ds;
  if (!j.contains("dims") || !j["dims"].is_object()) throw IoError("dims", "missing dims object");
  auto const &jd = j["dims"];
  ds.dims = Dims{detail::field_as<Index>(jd, "nslices", "dims"), detail::field_as<Index>(jd, "nchannels", "dims"),
                 detail::field_as<Index>(jd, "ny", "dims"), detail::field_as<Index>(jd, "nx", "dims")};
  if (!ds.dims.valid()) throw IoError("dims", "invalid dims " + ds.dims.str());
  if (!j.contains("geometry") || !j["geometry"].is_object()) throw IoError("geometry", "missing geometry object");
  auto const &jg = j["geometry"];
  ds.geometry = Geometry{detail::field_as<double>(jg, "alpha_deg", "geometry"), detail::field_as<double>(jg, "beta_deg", "geometry"),
                         detail::field_as<double>(jg, "gamma_deg", "geometry"), detail::field_as<double>(jg, "m_px", "geometry"),
                         detail::field_as<double>(jg, "n_px", "geometry"),      detail::field_as<double>(jg, "t_px", "geometry")};
  ds.acceleration = detail::field_as<int>(j, "acceleration", "acceleration");
  ds.offset = detail::field_as<int>(j, "offset", "offset");
  ds.acs_lines = detail::field_as<Index>(j, "acs_lines", "acs_lines");
  ds.seed = detail::field_as<std::uint64_t>(j, "seed", "seed");
  ds.slice_spacing = j.contains("slice_spacing") ? detail::field_as<double>(j, "slice_spacing", "slice_spacing") : 1.0;
  if (j.contains("provenance")) ds.provenance = j["provenance"];
  if (j.contains("extra")) ds.extra = j["extra"];

  json const arrays = j.contains("arrays") ? j["arrays"] : json::object();
  if (!arrays.is_object()) throw IoError("arrays", "must be an object");
  auto const specs = detail::array_specs(ds.dims);
  for (auto const &[name, value] : arrays.items()) {
    auto it = std::find_if(specs.begin(), specs.end(), [&](auto const &a) { return name == a.file; });
    if (it == specs.end()) throw IoError(name, "unknown array");
  }
  for (auto const &a : specs) {
    if (!arrays.contains(a.file)) continue;
    std::string const field = a.file;
    auto const declared = detail::field_as<std::size_t>(arrays, a.file, field);
    auto const expected = detail::expected_bytes(a);
    if (declared != expected)
      throw IoError(field, "declared " + std::to_string(declared) + " bytes but dims " + ds.dims.str() + " require " +
                               std::to_string(expected));
    fs::path const p = dir / a.file;
    std::error_code ec;
    auto const actual = fs::file_size(p, ec);
    if (ec) throw IoError(field, "declared but missing");
    if (actual != declared)
      throw IoError(field, "file has " + std::to_string(actual) + " bytes, meta.json declares " + std::to_string(declared));
    std::string const bytes = detail::read_file(p, field);
    if (bytes.size() != declared) throw IoError(field, "truncated read");

    if (field == "kspace.c64") ds.kspace = detail::decode_c64<KSpaceTag>(bytes, a.dims);
    else if (field == "mask.u8") {
      SamplingMask m{ds.dims.ny, ds.acceleration, ds.offset, std::vector<std::uint8_t>(bytes.begin(), bytes.end())};
      for (auto b : m.sampled)
        if (b > 1) throw IoError(field, "entries must be 0 or 1");
      ds.mask = std::move(m);
    } else if (field == "maps_ref.c64") ds.maps_ref = detail::decode_c64<ImageTag>(bytes, a.dims);
    else if (field == "maps_trans.c64") ds.maps_trans = detail::decode_c64<ImageTag>(bytes, a.dims);
    else if (field == "maps_est.c64") ds.maps_est = detail::decode_c64<ImageTag>(bytes, a.dims);
    else if (field == "eigval.f32") ds.eigval = detail::decode_f32(bytes, a.dims);
    else if (field == "recon.c64") ds.recon = detail::decode_c64<ImageTag>(bytes, a.dims);
  }
  return ds;
}

/// Values as they come back from disk (binary32 round to nearest).
template <class Tag>
Volume<cplx, Tag> quantize(Volume<cplx, Tag> v)
{
  for (auto &z : v.data()) z = cplx(static_cast<float>(z.real()), static_cast<float>(z.imag()));
  return v;
}

inline RealVolume quantize(RealVolume v)
{
  for (auto &x : v.data()) x = static_cast<float>(x);
  return v;
}

// ---------------------------------------------------------------------------------------
// Checkpoints
//
//   bytes 0..7    magic "CLBLCKPT"
//   u32           format version (1)
//   u32           config text length L, then L bytes of UTF-8 "key = value" lines
//   u32           tensor count N, then per tensor:
//                   u32 name length, name bytes, u32 rank, rank x u64 extents,
//                   prod(extents) x binary64 values
// All integers and floats little-endian.
// ---------------------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'B', 'L', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor
{
  std::string name;
  std::vector<Index> shape;
  std::vector<double> values;
};

struct Checkpoint
{
  std::string config;
  std::vector<NamedTensor> tensors;
};

inline void save_checkpoint(Checkpoint const &ck, fs::path const &path)
{
  std::string out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(ck.config.size()));
  out += ck.config;
  detail::put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (auto const &t : ck.tensors) {
    Index n = 1;
    for (auto e : t.shape) n *= e;
    if (n != static_cast<Index>(t.values.size())) throw IoError(t.name, "shape does not match value count");
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::put_u64(out, static_cast<std::uint64_t>(e));
    for (double v : t.values) detail::put_f64(out, v);
  }
  detail::write_file(path, out, "checkpoint");
}

inline Checkpoint load_checkpoint(fs::path const &path)
{
  std::string const bytes = detail::read_file(path, "checkpoint");
  auto const *p = reinterpret_cast<unsigned char const *>(bytes.data());
  std::size_t pos = 0;
  auto need = [&](std::size_t n, std::string const &field) {
    if (bytes.size() - pos < n) throw IoError(field, "truncated checkpoint");
  };
  auto u32 = [&](std::string const &field) {
    need(4, field);
    auto v = detail::get_u32(p + pos);
    pos += 4;
    return v;
  };
  need(8, "magic");
  if (!std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.begin())) throw IoError("magic", "not a checkpoint file");
  pos = 8;
  auto const version = u32("version");
  if (version != kCheckpointVersion) throw IoError("version", "unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  auto const clen = u32("config");
  need(clen, "config");
  ck.config = bytes.substr(pos, clen);
  pos += clen;
  auto const count = u32("tensors");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    auto const nlen = u32("tensor name");
    need(nlen, "tensor name");
    t.name = bytes.substr(pos, nlen);
    pos += nlen;
    auto const rank = u32(t.name);
    Index n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      need(8, t.name);
      t.shape.push_back(static_cast<Index>(detail::get_u64(p + pos)));
      pos += 8;
      n *= t.shape.back();
    }
    if (n < 0 || static_cast<std::size_t>(n) > (bytes.size() - pos) / 8) throw IoError(t.name, "truncated checkpoint");
    t.values.resize(static_cast<std::size_t>(n));
    for (auto &v : t.values) {
      v = detail::get_f64(p + pos);
      pos += 8;
    }
    ck.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw IoError("checkpoint", "trailing bytes after last tensor");
  return ck;
}

// ---------------------------------------------------------------------------------------
// Flat "key = value" config files. '#' starts a comment; blank lines are ignored.
// ---------------------------------------------------------------------------------------

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(std::string const &s)
{
  auto const b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  auto const e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::string const &text, std::string const &source = "config")
{
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    auto const eq = line.find('=');
    if (eq == std::string::npos)
      throw IoError(source, "line " + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw IoError(source, "line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw IoError(key, "duplicate key in " + source);
    kv[key] = value;
  }
  return kv;
}

inline KeyValues read_key_values(fs::path const &path)
{
  return parse_key_values(detail::read_file(path, path.filename().string()), path.string());
}

/// Consumes known keys from a KeyValues map; finish() rejects whatever is left over.
class KeyReader
{
public:
  KeyReader(KeyValues kv, std::string source)
      : kv_(std::move(kv)), source_(std::move(source))
  {
  }

  template <class T>
  void get(std::string const &key, T &out)
  {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    std::string const v = it->second;
    kv_.erase(it);
    try {
      std::size_t used = 0;
      if constexpr (std::is_same_v<T, bool>) {
        if (v == "true" || v == "1") out = true;
        else if (v == "false" || v == "0") out = false;
        else throw std::invalid_argument(v);
        used = v.size();
      } else if constexpr (std::is_same_v<T, std::string>) {
        out = v;
        used = v.size();
      } else if constexpr (std::is_floating_point_v<T>) {
        out = static_cast<T>(std::stod(v, &used));
      } else if constexpr (std::is_unsigned_v<T>) {
        if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
        out = static_cast<T>(std::stoull(v, &used));
      } else {
        out = static_cast<T>(std::stoll(v, &used));
      }
      if (used != v.size()) throw std::invalid_argument(v);
    } catch (std::exception const &) {
      throw IoError(key, "invalid value '" + v + "' in " + source_);
    }
  }

  void finish() const
  {
    if (!kv_.empty()) throw IoError(kv_.begin()->first, "unknown key in " + source_);
  }

private:
  KeyValues kv_;
  std::string source_;
};

/// FNV-1a 64-bit, printed as 16 hex digits.
inline std::string hash_hex(std::string const &s)
{
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

} // namespace calibless::io
