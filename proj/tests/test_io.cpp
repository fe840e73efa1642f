#include <calibless/config.hpp>
#include <calibless/io.hpp>
#include <calibless/simulate.hpp>

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <unistd.h>

using namespace calibless;
using namespace calibless::io;

namespace {

fs::path scratch(std::string const &name)
{
  auto p = fs::temp_directory_path() / ("calibless_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

void write_bytes(fs::path const &p, std::string const &b)
{
  std::ofstream(p, std::ios::binary).write(b.data(), static_cast<std::streamsize>(b.size()));
}

Dataset generated_dataset()
{
  ScanConfig cfg;
  cfg.dims = {3, 4, 16, 16};
  cfg.noise_sigma = 0.01;
  auto scan = simulate_scan(cfg, 21);
  Dataset ds;
  ds.dims = cfg.dims;
  ds.geometry = scan.geometry;
  ds.acceleration = 2;
  ds.offset = 1;
  ds.acs_lines = 12;
  ds.seed = 21;
  ds.kspace = scan.kspace;
  ds.mask = make_uniform_mask(16, 2, 1);
  ds.maps_ref = scan.coils.sensitivities;
  ds.maps_trans = scan.coils.sensitivities;
  RealVolume ev(Dims{3, 1, 16, 16});
  Rng rng(1);
  for (auto &v : ev.data()) v = rng.uniform();
  ds.eigval = ev;
  ImageVolume rec(Dims{3, 1, 16, 16});
  for (auto &v : rec.data()) v = cplx(rng.normal(), rng.normal());
  ds.recon = rec;
  ds.provenance.push_back({{"subcommand", "test"}});
  ds.extra["note"] = "x";
  return ds;
}

template <class V>
void expect_bit_identical(V const &a, V const &b)
{
  ASSERT_EQ(a.dims(), b.dims());
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data().data(), b.data().data(), sizeof(a.data()[0]) * a.size()), 0);
}

} // namespace

TEST(Dataset, RoundtripBitIdentity)
{
  auto ds = generated_dataset();
  auto const dir = scratch("rt");
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  EXPECT_EQ(back.dims, ds.dims);
  EXPECT_EQ(back.geometry.alpha, ds.geometry.alpha);
  EXPECT_EQ(back.geometry.t, ds.geometry.t);
  EXPECT_EQ(back.acceleration, 2);
  EXPECT_EQ(back.offset, 1);
  EXPECT_EQ(back.acs_lines, 12);
  EXPECT_EQ(back.seed, 21u);
  EXPECT_EQ(back.provenance, ds.provenance);
  EXPECT_EQ(back.extra, ds.extra);
  expect_bit_identical(*back.kspace, quantize(*ds.kspace));
  expect_bit_identical(*back.maps_ref, quantize(*ds.maps_ref));
  expect_bit_identical(*back.maps_trans, quantize(*ds.maps_trans));
  expect_bit_identical(*back.eigval, quantize(*ds.eigval));
  expect_bit_identical(*back.recon, quantize(*ds.recon));
  EXPECT_EQ(back.mask->sampled, ds.mask->sampled);
  EXPECT_FALSE(back.maps_est.has_value());

  // A second save of the loaded data reproduces identical bytes.
  auto const dir2 = scratch("rt2");
  save_dataset(back, dir2);
  for (auto f : {"kspace.c64", "maps_ref.c64", "eigval.f32", "recon.c64", "mask.u8", "meta.json"})
    EXPECT_EQ(io::detail::read_file(dir / f, f), io::detail::read_file(dir2 / f, f)) << f;
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST(Dataset, HandEncodedLittleEndianFixture)
{
  auto const dir = scratch("fixture");
  fs::create_directories(dir);
  // 1.0f = 0x3F800000, -2.0f = 0xC0000000, stored low byte first.
  std::string const bytes{'\x00', '\x00', '\x80', '\x3F', '\x00', '\x00', '\x00', '\xC0'};
  write_bytes(dir / "kspace.c64", bytes);
  write_bytes(dir / "meta.json", R"({"format_version": 1,
    "dims": {"nslices": 1, "nchannels": 1, "ny": 1, "nx": 1},
    "geometry": {"alpha_deg": 0, "beta_deg": 0, "gamma_deg": 0, "m_px": 0, "n_px": 0, "t_px": 0},
    "acceleration": 1, "offset": 0, "acs_lines": 1, "seed": 0,
    "arrays": {"kspace.c64": 8}})");
  auto ds = load_dataset(dir);
  ASSERT_TRUE(ds.kspace.has_value());
  EXPECT_EQ((*ds.kspace)(0, 0, 0, 0), cplx(1.0, -2.0));
  fs::remove_all(dir);
}

TEST(Dataset, ElementOrderIsSliceChannelRowColumn)
{
  KSpaceVolume v(Dims{2, 3, 4, 5});
  for (Index s = 0; s < 2; ++s)
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 4; ++y)
        for (Index x = 0; x < 5; ++x) v(s, c, y, x) = cplx(1000.0 * s + 100.0 * c + 10.0 * y + x, 0.0);
  auto const bytes = io::detail::encode_c64(v);
  auto const *p = reinterpret_cast<unsigned char const *>(bytes.data());
  double expect = 0.0;
  for (std::size_t i = 0; i < bytes.size() / 8; ++i) {
    std::size_t const x = i % 5, y = i / 5 % 4, c = i / 20 % 3, s = i / 60;
    expect = 1000.0 * s + 100.0 * c + 10.0 * y + x;
    EXPECT_EQ(io::detail::get_f32(p + 8 * i), expect);
    EXPECT_EQ(io::detail::get_f32(p + 8 * i + 4), 0.0);
  }
}

namespace {
json read_meta(fs::path const &dir) { return json::parse(io::detail::read_file(dir / "meta.json", "meta.json")); }
void write_meta(fs::path const &dir, json const &j) { write_bytes(dir / "meta.json", j.dump()); }

std::string load_error_field(fs::path const &dir)
{
  try {
    load_dataset(dir);
  } catch (IoError const &e) {
    return e.field;
  }
  return "<no error>";
}
} // namespace

TEST(Dataset, RejectsDimsInconsistentWithBytes)
{
  auto const dir = scratch("dims");
  save_dataset(generated_dataset(), dir);
  auto j = read_meta(dir);
  j["dims"]["nchannels"] = 5;
  write_meta(dir, j);
  EXPECT_EQ(load_error_field(dir), "kspace.c64");
  fs::remove_all(dir);
}

TEST(Dataset, RejectsFileSizeMismatchAndTruncation)
{
  auto const dir = scratch("trunc");
  save_dataset(generated_dataset(), dir);
  auto bytes = io::detail::read_file(dir / "maps_ref.c64", "maps_ref.c64");
  write_bytes(dir / "maps_ref.c64", bytes.substr(0, bytes.size() - 3));
  EXPECT_EQ(load_error_field(dir), "maps_ref.c64");
  write_bytes(dir / "maps_ref.c64", bytes + "x");
  EXPECT_EQ(load_error_field(dir), "maps_ref.c64");
  fs::remove(dir / "maps_ref.c64");
  try {
    load_dataset(dir);
    FAIL();
  } catch (IoError const &e) {
    EXPECT_NE(std::string(e.what()).find("maps_ref.c64"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("missing"), std::string::npos);
  }
  fs::remove_all(dir);
}

TEST(Dataset, RejectsUnknownVersionArrayAndMaskByte)
{
  auto const dir = scratch("meta");
  save_dataset(generated_dataset(), dir);
  auto const good = read_meta(dir);

  auto j = good;
  j["format_version"] = 2;
  write_meta(dir, j);
  EXPECT_EQ(load_error_field(dir), "format_version");

  j = good;
  j["arrays"]["weights.bin"] = 4;
  write_meta(dir, j);
  EXPECT_EQ(load_error_field(dir), "weights.bin");

  j = good;
  j.erase("dims");
  write_meta(dir, j);
  EXPECT_EQ(load_error_field(dir), "dims");

  write_meta(dir, good);
  auto mask = io::detail::read_file(dir / "mask.u8", "mask.u8");
  mask[3] = 2;
  write_bytes(dir / "mask.u8", mask);
  EXPECT_EQ(load_error_field(dir), "mask.u8");

  write_bytes(dir / "meta.json", "{not json");
  EXPECT_EQ(load_error_field(dir), "meta.json");
  fs::remove_all(dir);
  EXPECT_EQ(load_error_field(dir), "meta.json");
}

TEST(Dataset, SaveRemovesStaleArrays)
{
  auto const dir = scratch("stale");
  auto ds = generated_dataset();
  save_dataset(ds, dir);
  ds.recon.reset();
  save_dataset(ds, dir);
  EXPECT_FALSE(fs::exists(dir / "recon.c64"));
  EXPECT_FALSE(load_dataset(dir).recon.has_value());
  fs::remove_all(dir);
}

TEST(Mask, LineCountGrid)
{
  for (Index ny : {8, 16, 128})
    for (int R : {1, 2, 3, 4})
      for (int off : {0, 1}) {
        if (off >= R) {
          EXPECT_THROW(make_uniform_mask(ny, R, off), ParameterError);
          continue;
        }
        Index expect = 0;
        for (Index k = 0; k < ny; ++k) expect += (k % R) == off;
        auto m = make_uniform_mask(ny, R, off);
        EXPECT_EQ(m.count(), expect) << ny << " " << R << " " << off;
        EXPECT_EQ(m.count(), (ny - off + R - 1) / R);
      }
}

TEST(Checkpoint, Roundtrip)
{
  Checkpoint ck;
  ck.config = "levels = 2\n";
  ck.tensors.push_back({"a.w", {2, 3}, {1, -2, 3.5, 1e-300, -0.0, 7}});
  ck.tensors.push_back({"lambda", {}, {0.25}});
  auto const p = scratch("ck.bin");
  save_checkpoint(ck, p);
  auto back = load_checkpoint(p);
  EXPECT_EQ(back.config, ck.config);
  ASSERT_EQ(back.tensors.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back.tensors[i].name, ck.tensors[i].name);
    EXPECT_EQ(back.tensors[i].shape, ck.tensors[i].shape);
    ASSERT_EQ(back.tensors[i].values.size(), ck.tensors[i].values.size());
    EXPECT_EQ(std::memcmp(back.tensors[i].values.data(), ck.tensors[i].values.data(), 8 * ck.tensors[i].values.size()), 0);
  }

  auto const bytes = io::detail::read_file(p, "checkpoint");
  EXPECT_EQ(bytes.substr(0, 8), "CLBLCKPT");
  write_bytes(p, bytes.substr(0, bytes.size() - 1));
  EXPECT_THROW(load_checkpoint(p), IoError);
  write_bytes(p, bytes + '\0');
  EXPECT_THROW(load_checkpoint(p), IoError);
  write_bytes(p, "XXXXXXXX" + bytes.substr(8));
  EXPECT_THROW(load_checkpoint(p), IoError);
  fs::remove(p);

  ck.tensors[0].shape = {4};
  EXPECT_THROW(save_checkpoint(ck, p), IoError);
}

TEST(Checkpoint, EstimatorRoundtrip)
{
  NetworkConfig nc;
  nc.levels = 2;
  nc.base_filters = 4;
  nc.io_channels = 4;
  nc.seed = 3;
  Estimator est(nc);
  est.lambda_raw.value[0] = 0.7;
  auto const p = scratch("est.ckpt");
  save_checkpoint(to_checkpoint(est), p);
  auto back = from_checkpoint(load_checkpoint(p));
  EXPECT_EQ(back.net.config().levels, 2);
  EXPECT_EQ(back.net.config().base_filters, 4);
  auto a = est.params(), b = back.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;

  auto ck = to_checkpoint(est);
  ck.tensors[0].shape.push_back(1);
  EXPECT_THROW(from_checkpoint(ck), IoError);
  ck = to_checkpoint(est);
  ck.tensors.pop_back();
  EXPECT_THROW(from_checkpoint(ck), IoError);
  fs::remove(p);
}

TEST(Config, KeyValueParsing)
{
  auto kv = parse_key_values("# comment\n levels = 3 \n\nbase_filters=8 # trailing\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv["levels"], "3");
  EXPECT_EQ(kv["base_filters"], "8");
  EXPECT_THROW(parse_key_values("a = 1\na = 2\n"), IoError);
  EXPECT_THROW(parse_key_values("no equals sign\n"), IoError);
}

TEST(Config, UnknownKeyIsError)
{
  try {
    read_network_config(parse_key_values("levels = 2\nlevles = 3\n"));
    FAIL();
  } catch (IoError const &e) {
    EXPECT_EQ(e.field, "levles");
  }
  EXPECT_THROW(read_network_config(parse_key_values("levels = two\n")), IoError);
  EXPECT_THROW(read_network_config(parse_key_values("padding = mirror\n")), IoError);
  EXPECT_THROW(read_training_config(parse_key_values("epochs = 3\nlearning_rte = 1\n")), IoError);
}

TEST(Config, NetworkConfigTextRoundtrip)
{
  NetworkConfig c;
  c.levels = 2;
  c.base_filters = 6;
  c.attention = false;
  c.padding = nn::Padding::cyclic;
  auto back = read_network_config(parse_key_values(network_config_text(c)));
  EXPECT_EQ(back.levels, 2);
  EXPECT_EQ(back.base_filters, 6);
  EXPECT_FALSE(back.attention);
  EXPECT_EQ(back.padding, nn::Padding::cyclic);
  EXPECT_EQ(back.io_channels, c.io_channels);
}

TEST(Config, GeometryRanges)
{
  auto g = read_geometry_ranges(parse_key_values("alpha = -5, 5\nt = 0,2\n"));
  EXPECT_EQ(g.alpha.lo, -5.0);
  EXPECT_EQ(g.alpha.hi, 5.0);
  EXPECT_EQ(g.t.lo, 0.0);
  EXPECT_EQ(g.t.hi, 2.0);
  EXPECT_EQ(g.m.lo, GeometryRanges{}.m.lo);
  EXPECT_THROW(read_geometry_ranges(parse_key_values("alpha = 5, -5\n")), IoError);
  EXPECT_THROW(read_geometry_ranges(parse_key_values("alpha = 5\n")), IoError);
  EXPECT_THROW(read_geometry_ranges(parse_key_values("delta = 0, 1\n")), IoError);
}
