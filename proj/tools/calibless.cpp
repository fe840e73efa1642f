// Command-line driver: simulate -> undersample -> calibrate -> maps-transform -> train ->
// estimate -> recon -> eval -> report, all through on-disk dataset containers.

#include <calibless/config.hpp>
#include <calibless/io.hpp>
#include <calibless/metrics.hpp>
#include <calibless/recon.hpp>
#include <calibless/report.hpp>
#include <calibless/training_data.hpp>
#include <calibless/transformed_maps.hpp>

#include <CLI11.hpp>
#include <fftw3.h>
#include <fnmatch.h>

#include <iostream>

namespace cl = calibless;
namespace io = calibless::io;
namespace report = calibless::report;
namespace fs = std::filesystem;
using cl::Index;

namespace {

constexpr char const *kVersion = "0.1.0";

/// A stage input that is not in the container yet.
struct MissingInput : std::runtime_error
{
  explicit MissingInput(std::string artifact)
      : std::runtime_error(artifact + " missing"), artifact(std::move(artifact))
  {
  }
  std::string artifact;
};

template <class T>
T const &need(std::optional<T> const &v, char const *artifact)
{
  if (!v) throw MissingInput(artifact);
  return *v;
}

io::Dataset open_dataset(fs::path const &dir)
{
  if (!fs::exists(dir / "meta.json")) throw MissingInput((dir / "meta.json").string());
  return io::load_dataset(dir);
}

void add_provenance(io::Dataset &ds, std::string const &sub, std::string const &canonical_args, std::uint64_t seed)
{
  io::json rec;
  rec["subcommand"] = sub;
  rec["config_hash"] = io::hash_hex(sub + "\n" + canonical_args);
  rec["seed"] = seed;
  rec["versions"] = {{"calibless", kVersion},
                     {"format_version", io::kFormatVersion},
                     {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                   std::to_string(EIGEN_MINOR_VERSION)},
                     {"fftw", std::string(fftw_version)}};
  ds.provenance.push_back(rec);
}

cl::Dims parse_dims(std::string const &s)
{
  std::vector<Index> v;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    auto const x = s.find('x', pos);
    std::string const tok = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    try {
      std::size_t used = 0;
      v.push_back(std::stoll(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (std::exception const &) {
      throw cl::ParameterError("--dims: expected SxCxHxW, got '" + s + "'");
    }
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  if (v.size() != 4) throw cl::ParameterError("--dims: expected SxCxHxW, got '" + s + "'");
  cl::Dims d{v[0], v[1], v[2], v[3]};
  if (!d.valid()) throw cl::ParameterError("--dims: all extents must be >= 1");
  return d;
}

/// Directories matching a pattern whose last component may contain shell wildcards.
std::vector<fs::path> expand_glob(std::string const &pattern)
{
  fs::path const p(pattern);
  fs::path const parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  std::string const leaf = p.filename().string();
  std::vector<fs::path> out;
  if (leaf.find_first_of("*?[") == std::string::npos) {
    if (fs::is_directory(p)) out.push_back(p);
    return out;
  }
  std::error_code ec;
  for (auto const &e : fs::directory_iterator(parent, ec))
    if (e.is_directory() && fnmatch(leaf.c_str(), e.path().filename().c_str(), 0) == 0) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

cl::CalibConfig calib_from_extra(io::Dataset const &ds)
{
  cl::CalibConfig c;
  if (ds.extra.contains("calibrate")) {
    auto const &j = ds.extra["calibrate"];
    c.kernel = j.value("kernel", c.kernel);
    c.sv_rel_threshold = j.value("sv_rel_threshold", c.sv_rel_threshold);
  }
  return c;
}

// ----------------------------------------------------------------------------- stages

struct SimulateArgs
{
  std::string out, dims = "4x4x32x32", ranges;
  int coils = 4;
  double noise = 0.0, slice_spacing = 1.0;
  std::uint64_t seed = 1, coil_seed = 7;
};

void run_simulate(SimulateArgs const &a)
{
  cl::Dims const d = parse_dims(a.dims);
  if (a.coils < d.channels)
    throw cl::ParameterError("--coils (" + std::to_string(a.coils) + ") must be >= the channel count in --dims (" +
                             std::to_string(d.channels) + ")");
  cl::ScanConfig sc;
  sc.dims = d;
  sc.dims.channels = a.coils;
  sc.noise_sigma = a.noise;
  sc.slice_spacing = a.slice_spacing;
  sc.coil_seed = a.coil_seed;
  if (!a.ranges.empty()) sc.ranges = io::read_geometry_ranges(io::read_key_values(a.ranges), a.ranges);
  auto scan = cl::simulate_scan(sc, a.seed);

  io::Dataset ds;
  ds.dims = d;
  ds.geometry = scan.geometry;
  ds.seed = a.seed;
  ds.slice_spacing = a.slice_spacing;
  io::json sim = {{"coils", a.coils}, {"noise_sigma", a.noise}, {"coil_seed", a.coil_seed}};
  if (a.coils > d.channels) {
    auto cc = cl::coil_compress(scan.kspace, d.channels);
    ds.kspace = std::move(cc.kspace);
    sim["compressed_to"] = d.channels;
    sim["retained_energy"] = cc.retained_energy;
  } else {
    ds.kspace = std::move(scan.kspace);
  }
  ds.extra["simulate"] = sim;
  add_provenance(ds, "simulate", a.dims + " " + std::to_string(a.coils) + " " + report::fmt(a.noise) + " " + a.ranges, a.seed);
  io::save_dataset(ds, a.out);
}

struct UndersampleArgs
{
  std::string in;
  int R = 1, offset = 0;
};

void run_undersample(UndersampleArgs const &a)
{
  auto ds = open_dataset(a.in);
  ds.mask = cl::make_uniform_mask(ds.dims.ny, a.R, a.offset);
  ds.acceleration = a.R;
  ds.offset = a.offset;
  add_provenance(ds, "undersample", std::to_string(a.R) + " " + std::to_string(a.offset), ds.seed);
  io::save_dataset(ds, a.in);
}

struct CalibrateArgs
{
  std::string in;
  Index acs = 24;
  int kernel = 6;
  std::optional<double> eig_crop;
  double sv_threshold = cl::CalibConfig{}.sv_rel_threshold;
};

void run_calibrate(CalibrateArgs const &a)
{
  auto ds = open_dataset(a.in);
  auto const &k = need(ds.kspace, "kspace.c64");
  cl::CalibConfig c;
  c.kernel = a.kernel;
  c.sv_rel_threshold = a.sv_threshold;
  c.eig_crop = a.eig_crop;
  auto maps = cl::espirit_maps(cl::extract_acs(k, a.acs), ds.dims.ny, ds.dims.nx, c);
  ds.maps_ref = std::move(maps.maps);
  ds.eigval = std::move(maps.eigval);
  ds.acs_lines = a.acs;
  ds.extra["calibrate"] = {{"acs_lines", a.acs},
                           {"kernel", a.kernel},
                           {"sv_rel_threshold", a.sv_threshold},
                           {"eig_crop", a.eig_crop ? io::json(*a.eig_crop) : io::json(nullptr)},
                           {"degenerate_pixels", maps.degeneracies.size()}};
  add_provenance(ds, "calibrate",
                 std::to_string(a.acs) + " " + std::to_string(a.kernel) + " " + report::fmt(a.sv_threshold) + " " +
                     (a.eig_crop ? report::fmt(*a.eig_crop) : "none"),
                 ds.seed);
  io::save_dataset(ds, a.in);
}

void run_maps_transform(std::string const &in)
{
  auto ds = open_dataset(in);
  auto const &k = need(ds.kspace, "kspace.c64");
  auto const calib = calib_from_extra(ds);
  std::vector<Index> empty;
  auto maps = cl::compute_transformed_maps(k, ds.geometry, calib, ds.acs_lines, ds.slice_spacing, &empty);
  if (!empty.empty()) {
    auto const &ref = need(ds.maps_ref, "maps_ref.c64");
    for (Index s : empty) maps.maps.set_slice(s, ref.slice(s));
  }
  ds.maps_trans = std::move(maps.maps);
  ds.extra["maps_transform"] = {{"empty_slices_filled_from_ref", empty}};
  add_provenance(ds, "maps-transform", std::to_string(ds.acs_lines), ds.seed);
  io::save_dataset(ds, in);
}

struct TrainArgs
{
  std::string data, net, train, out, lambda_mode;
};

void run_train(TrainArgs const &a)
{
  auto const dirs = expand_glob(a.data);
  if (dirs.empty()) throw MissingInput("datasets matching " + a.data);
  auto const net = io::read_network_config(io::read_key_values(a.net), a.net);
  auto plan = io::read_training_config(io::read_key_values(a.train), a.train);
  if (!a.lambda_mode.empty()) plan.training.lambda_mode = io::parse_lambda_mode(a.lambda_mode);
  if (plan.training.lambda_mode == cl::LambdaMode::fixed) plan.training.validate();

  std::vector<cl::Sample> samples;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    auto ds = open_dataset(dirs[i]);
    cl::PreparedScan p;
    p.scan.kspace = need(ds.kspace, "kspace.c64");
    p.maps_orig.maps = need(ds.maps_ref, "maps_ref.c64");
    p.maps_trans.maps = need(ds.maps_trans, "maps_trans.c64");
    if (2 * ds.dims.channels != net.io_channels)
      throw cl::ParameterError(dirs[i].string() + ": " + std::to_string(ds.dims.channels) + " channels, network expects " +
                               std::to_string(net.io_channels / 2));
    std::vector<cl::SamplingMask> masks;
    if (plan.accelerations.empty()) masks.push_back(need(ds.mask, "mask.u8"));
    for (int R : plan.accelerations) masks.push_back(cl::make_uniform_mask(ds.dims.ny, R, static_cast<int>(i % R)));
    for (auto const &m : masks)
      for (auto &s : cl::make_samples(p, m, net.input_norm)) samples.push_back(std::move(s));
  }

  cl::Estimator est(net, plan.training.lambda_init);
  std::ofstream log(a.out + ".log.csv", std::ios::trunc);
  if (!log) throw cl::IoError("log", "cannot write " + a.out + ".log.csv");
  log << "epoch,loss,loss_orig,loss_trans,lambda,one_minus_lambda\n";
  auto res = cl::train(est, samples, plan.training, [&](cl::EpochLog const &e) {
    log << e.epoch << "," << report::fmt(e.loss, 10) << "," << report::fmt(e.loss_orig, 10) << "," << report::fmt(e.loss_trans, 10)
        << "," << report::fmt(e.lambda, 10) << "," << report::fmt(e.one_minus_lambda, 10) << "\n";
  });
  io::save_checkpoint(io::to_checkpoint(est), a.out);
  if (res.diverged)
    throw cl::DivergenceError("training diverged; checkpoint holds epoch " + std::to_string(res.last_finite_epoch),
                              res.last_finite_epoch);
}

void run_estimate(std::string const &in, std::string const &ckpt)
{
  auto ds = open_dataset(in);
  auto const &k = need(ds.kspace, "kspace.c64");
  auto const &mask = need(ds.mask, "mask.u8");
  if (!fs::exists(ckpt)) throw MissingInput(ckpt);
  auto est = io::from_checkpoint(io::load_checkpoint(ckpt));
  ds.maps_est = cl::estimate_maps(est, cl::zero_fill_images(k, mask)).maps;
  ds.extra["estimate"] = {{"checkpoint", fs::path(ckpt).filename().string()}, {"network", est.net.describe()}};
  add_provenance(ds, "estimate", io::hash_hex(io::detail::read_file(ckpt, "checkpoint")), ds.seed);
  io::save_dataset(ds, in);
}

struct ReconArgs
{
  std::string in, method = "l1-espirit", maps = "ref";
  bool mask_maps = false;
  double crop = 0.9;
  double reg_weight = -1.0;
  int iters = 0;
};

void run_recon(ReconArgs const &a)
{
  auto ds = open_dataset(a.in);
  auto const &k = need(ds.kspace, "kspace.c64");
  auto const &mask = need(ds.mask, "mask.u8");
  auto const y = cl::apply_mask(k, mask);
  cl::ReconConfig rc;
  rc.reg_weight = a.reg_weight;
  if (a.iters > 0) rc.fista_iters = rc.cg_max_iters = a.iters;
  cl::ImageVolume recon(cl::Dims{ds.dims.slices, 1, ds.dims.ny, ds.dims.nx});
  std::ostringstream tel;
  tel << "slice,iteration,quantity,value\n";

  if (a.method == "zero-fill") {
    auto const rss = cl::rss_combine(cl::ifft2c(y));
    for (Index i = 0; i < rss.size(); ++i) recon.data()[i] = rss.data()[i];
  } else {
    cl::CoilMaps m;
    if (a.maps == "ref") {
      m.maps = need(ds.maps_ref, "maps_ref.c64");
      if (a.mask_maps) m.eigval = need(ds.eigval, "eigval.f32");
    } else {
      m = cl::unit_normalize(cl::CoilMaps{need(ds.maps_est, "maps_est.c64"), {}, cl::MapRole::estimated, {}});
      if (a.mask_maps) {
        // Estimated maps carry no eigenvalues; the raw per-pixel norm stands in.
        auto const &raw = *ds.maps_est;
        m.eigval = cl::RealVolume(cl::Dims{ds.dims.slices, 1, ds.dims.ny, ds.dims.nx});
        for (Index s = 0; s < ds.dims.slices; ++s)
          for (Index i = 0; i < ds.dims.plane(); ++i) {
            double n = 0.0;
            for (Index c = 0; c < ds.dims.channels; ++c) n += std::norm(raw.plane(s, c)[i]);
            m.eigval.plane(s, 0)[i] = std::min(1.0, std::sqrt(n));
          }
      }
    }
    if (a.mask_maps) m = cl::crop_maps(std::move(m), a.crop);
    for (Index s = 0; s < ds.dims.slices; ++s) {
      auto const ys = y.slice(s);
      auto const ms = m.maps.slice(s);
      if (a.method == "sense") {
        auto r = cl::sense_cg(ys, ms, mask, rc);
        for (std::size_t i = 0; i < r.residuals.size(); ++i)
          tel << s << "," << i << ",relative_residual," << report::fmt(r.residuals[i], 12) << "\n";
        recon.set_slice(s, r.image);
      } else if (a.method == "l1-espirit") {
        auto r = cl::l1_espirit(ys, ms, mask, rc);
        for (std::size_t i = 0; i < r.objective.size(); ++i)
          tel << s << "," << i << ",objective," << report::fmt(r.objective[i], 12) << "\n";
        tel << s << ",0,reg_weight," << report::fmt(r.reg_weight, 12) << "\n";
        tel << s << ",0,lipschitz," << report::fmt(r.lipschitz, 12) << "\n";
        recon.set_slice(s, r.image);
      } else {
        throw cl::ParameterError("--method: expected zero-fill, sense or l1-espirit");
      }
    }
  }
  ds.recon = std::move(recon);
  ds.extra["recon"] = {{"method", a.method},
                       {"maps", a.method == "zero-fill" ? "none" : a.maps},
                       {"mask_maps", a.mask_maps},
                       {"map_crop", a.crop},
                       {"acceleration", ds.acceleration},
                       {"offset", ds.offset}};
  add_provenance(ds, "recon", a.method + " " + a.maps + " " + (a.mask_maps ? "masked" : "unmasked") + " " + report::fmt(a.crop) +
                                  " " + report::fmt(a.reg_weight) + " " + std::to_string(a.iters),
                 ds.seed);
  io::save_dataset(ds, a.in);
  report::write_text(fs::path(a.in) / "recon_telemetry.csv", tel.str());
}

void run_eval(std::string const &in, std::string const &against, Index window)
{
  if (against != "full") throw cl::ParameterError("--against: only 'full' is supported");
  auto ds = open_dataset(in);
  auto const &k = need(ds.kspace, "kspace.c64");
  auto const &recon = need(ds.recon, "recon.c64");
  auto const ref = cl::rss_combine(cl::ifft2c(k));
  auto const mag = cl::magnitude(recon);
  auto const lem = cl::local_error_map(mag, ref, window);

  bool const have_maps = ds.maps_est && ds.maps_ref;
  std::vector<std::vector<double>> pear(static_cast<std::size_t>(ds.dims.slices));
  if (have_maps) {
    auto const a = cl::magnitude(*ds.maps_est), b = cl::magnitude(*ds.maps_ref);
    for (Index s = 0; s < ds.dims.slices; ++s) {
      std::vector<std::uint8_t> sup(static_cast<std::size_t>(ds.dims.plane()), 1);
      if (ds.eigval)
        for (Index i = 0; i < ds.dims.plane(); ++i) sup[i] = ds.eigval->plane(s, 0)[i] >= 0.9;
      for (Index c = 0; c < ds.dims.channels; ++c) {
        double r = std::numeric_limits<double>::quiet_NaN();
        try {
          r = cl::pearson(a.plane(s, c), b.plane(s, c), sup);
        } catch (cl::ParameterError const &) {
        }
        pear[s].push_back(r);
      }
    }
  }

  io::json rep;
  rep["config"] = {{"against", against},
                   {"recon", ds.extra.value("recon", io::json::object())},
                   {"nrmse_definition", "||recon - ref||_2 / ||ref||_2 on magnitude images"},
                   {"reference", "RSS of the fully sampled k-space"},
                   {"pearson_support", ds.eigval ? "eigval >= 0.9" : "all pixels"},
                   {"local_error_window", window}};
  std::ostringstream csv;
  csv << "slice,nrmse,psnr_db";
  for (Index c = 0; have_maps && c < ds.dims.channels; ++c) csv << ",pearson_c" << c;
  csv << "\n";
  io::json slices = io::json::array();
  for (Index s = 0; s < ds.dims.slices; ++s) {
    auto const rs = mag.slice(s), fs_ = ref.slice(s);
    double const n = cl::nrmse(rs.data(), fs_.data()), p = cl::psnr(rs.data(), fs_.data());
    csv << s << "," << report::fmt(n, 10) << "," << report::fmt(p, 10);
    for (double r : pear[s]) csv << "," << report::fmt(r, 10);
    csv << "\n";
    io::json js = {{"slice", s}, {"nrmse", n}, {"psnr_db", std::isinf(p) ? io::json("inf") : io::json(p)}};
    if (have_maps) js["pearson"] = pear[s];
    slices.push_back(js);
  }
  double const n_all = cl::nrmse(mag.data(), ref.data()), p_all = cl::psnr(mag.data(), ref.data());
  io::json agg = {{"nrmse", n_all}, {"psnr_db", std::isinf(p_all) ? io::json("inf") : io::json(p_all)}};
  if (have_maps) {
    double sum = 0.0;
    int cnt = 0;
    std::vector<double> per_channel(static_cast<std::size_t>(ds.dims.channels), 0.0);
    std::vector<int> per_count(per_channel.size(), 0);
    for (auto const &row : pear)
      for (std::size_t c = 0; c < row.size(); ++c)
        if (std::isfinite(row[c])) {
          sum += row[c];
          ++cnt;
          per_channel[c] += row[c];
          ++per_count[c];
        }
    for (std::size_t c = 0; c < per_channel.size(); ++c) per_channel[c] = per_count[c] ? per_channel[c] / per_count[c] : 0.0;
    agg["pearson_mean"] = cnt ? sum / cnt : 0.0;
    agg["pearson_per_channel"] = per_channel;
  }
  rep["aggregate"] = agg;
  rep["slices"] = slices;
  rep["local_error_map"] = {{"file", "local_error.f32"},
                            {"dims", {lem.dims().slices, lem.dims().channels, lem.dims().ny, lem.dims().nx}},
                            {"encoding", "little-endian binary32, slice-major"}};
  csv << "all," << report::fmt(n_all, 10) << "," << report::fmt(p_all, 10) << "\n";

  fs::path const dir(in);
  report::write_text(dir / "eval.csv", csv.str());
  report::write_text(dir / "eval.json", rep.dump(2) + "\n");
  io::detail::write_file(dir / "local_error.f32", io::detail::encode_f32(lem), "local_error.f32");
  add_provenance(ds, "eval", against + " " + std::to_string(window), ds.seed);
  io::save_dataset(ds, in);
}

void run_report(std::vector<std::string> const &ins, std::string const &out)
{
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "dataset,method,maps,acceleration,nrmse,psnr_db,pearson_mean\n";
  std::vector<std::string> labels;
  std::vector<double> nrmses, pearsons;
  std::vector<std::string> plabels;
  for (auto const &in : ins) {
    fs::path const dir(in);
    if (!fs::exists(dir / "eval.json")) throw MissingInput((dir / "eval.json").string());
    auto const rep = io::json::parse(io::detail::read_file(dir / "eval.json", "eval.json"));
    auto const ds = io::load_dataset(dir);
    std::string const name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    auto const rc = rep["config"].value("recon", io::json::object());
    auto const &agg = rep["aggregate"];
    double const n = agg["nrmse"].get<double>();
    double const p = agg["psnr_db"].is_number() ? agg["psnr_db"].get<double>() : std::numeric_limits<double>::infinity();
    double const pm = agg.contains("pearson_mean") ? agg["pearson_mean"].get<double>() : std::numeric_limits<double>::quiet_NaN();
    csv << name << "," << rc.value("method", std::string("?")) << "," << rc.value("maps", std::string("?")) << ","
        << rc.value("acceleration", 0) << "," << report::fmt(n, 8) << "," << report::fmt(p, 8) << "," << report::fmt(pm, 8)
        << "\n";
    labels.push_back(name);
    nrmses.push_back(n);
    if (agg.contains("pearson_per_channel")) {
      auto const pc = agg["pearson_per_channel"].get<std::vector<double>>();
      for (std::size_t c = 0; c < pc.size(); ++c) {
        plabels.push_back(name + " c" + std::to_string(c));
        pearsons.push_back(pc[c]);
      }
    }
    // Error map of the middle slice.
    auto const lem_bytes = io::detail::read_file(dir / "local_error.f32", "local_error.f32");
    cl::Dims const ld{ds.dims.slices, 1, ds.dims.ny, ds.dims.nx};
    if (lem_bytes.size() != static_cast<std::size_t>(ld.size()) * 4)
      throw cl::IoError("local_error.f32", "size does not match dataset dims");
    auto const lem = io::detail::decode_f32(lem_bytes, ld);
    double vmax = 0.0;
    for (double v : lem.data()) vmax = std::max(vmax, v);
    report::write_text(fs::path(out) / ("error_map_" + name + ".svg"),
                       report::svg_image("local error, " + name + ", slice " + std::to_string(ld.slices / 2), lem,
                                         ld.slices / 2, 0, vmax));
  }
  report::write_text(fs::path(out) / "summary.csv", csv.str());
  double nmax = 0.0;
  for (double v : nrmses) nmax = std::max(nmax, std::isfinite(v) ? v : 0.0);
  report::write_text(fs::path(out) / "nrmse.svg", report::svg_bars("NRMSE", labels, nrmses, 0.0, nmax > 0 ? nmax * 1.1 : 1.0));
  if (!pearsons.empty())
    report::write_text(fs::path(out) / "correlation.svg",
                       report::svg_bars("map magnitude correlation", plabels, pearsons, 0.0, 1.0));
}

} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Calibrationless ESPIRiT map estimation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  SimulateArgs sim;
  auto *s_sim = app.add_subcommand("simulate", "Simulate a multi-coil acquisition into a new container");
  s_sim->add_option("--out", sim.out, "Output directory")->required();
  s_sim->add_option("--dims", sim.dims, "SxCxHxW (C = stored channels)")->capture_default_str();
  s_sim->add_option("--coils", sim.coils, "Physical coils; compressed to C when larger")->capture_default_str();
  s_sim->add_option("--noise", sim.noise, "Complex noise sigma per k-space sample")->capture_default_str();
  s_sim->add_option("--seed", sim.seed, "Scan seed")->capture_default_str();
  s_sim->add_option("--coil-seed", sim.coil_seed, "Coil system seed")->capture_default_str();
  s_sim->add_option("--slice-spacing", sim.slice_spacing, "Slice spacing in pixels")->capture_default_str();
  s_sim->add_option("--geometry-ranges", sim.ranges, "key = lo, hi file (alpha beta gamma m n t)");

  UndersampleArgs us;
  auto *s_us = app.add_subcommand("undersample", "Attach a uniform ky sampling mask");
  s_us->add_option("--in", us.in)->required();
  s_us->add_option("--R", us.R, "Acceleration")->required();
  s_us->add_option("--offset", us.offset, "First sampled line")->capture_default_str();

  CalibrateArgs cal;
  double eig_crop = -1.0;
  auto *s_cal = app.add_subcommand("calibrate", "Reference ESPIRiT maps from the central lines of the full data");
  s_cal->add_option("--in", cal.in)->required();
  s_cal->add_option("--acs", cal.acs, "ACS lines")->capture_default_str();
  s_cal->add_option("--kernel", cal.kernel, "Kernel side length")->capture_default_str();
  s_cal->add_option("--sv-threshold", cal.sv_threshold, "Relative singular-value cutoff")->capture_default_str();
  auto *o_crop = s_cal->add_option("--eig-crop", eig_crop, "Zero maps where the eigenvalue is below this");

  std::string mt_in;
  auto *s_mt = app.add_subcommand("maps-transform", "Maps of the scan in the standard reference stack");
  s_mt->add_option("--in", mt_in)->required();

  TrainArgs tr;
  auto *s_tr = app.add_subcommand("train", "Train the map estimator");
  s_tr->add_option("--data", tr.data, "Dataset directory glob")->required();
  s_tr->add_option("--net", tr.net, "Network config file")->required();
  s_tr->add_option("--train", tr.train, "Training config file")->required();
  s_tr->add_option("--out", tr.out, "Checkpoint path")->required();
  s_tr->add_option("--lambda-mode", tr.lambda_mode, "trainable|linear_decay|fixed");

  std::string es_in, es_ckpt;
  auto *s_es = app.add_subcommand("estimate", "Estimate maps from the undersampled data");
  s_es->add_option("--in", es_in)->required();
  s_es->add_option("--ckpt", es_ckpt)->required();

  ReconArgs rc;
  auto *s_rc = app.add_subcommand("recon", "Reconstruct the undersampled data");
  s_rc->add_option("--in", rc.in)->required();
  s_rc->add_option("--method", rc.method)->check(CLI::IsMember({"zero-fill", "sense", "l1-espirit"}))->capture_default_str();
  s_rc->add_option("--maps", rc.maps)->check(CLI::IsMember({"ref", "est"}))->capture_default_str();
  s_rc->add_flag("--mask-maps", rc.mask_maps, "Zero maps where the eigenvalue is below --crop");
  s_rc->add_option("--crop", rc.crop, "Map mask threshold")->capture_default_str();
  s_rc->add_option("--reg-weight", rc.reg_weight, "L1 weight (negative: automatic)")->capture_default_str();
  s_rc->add_option("--iters", rc.iters, "Iteration count override");

  std::string ev_in, ev_against = "full";
  Index ev_window = 7;
  auto *s_ev = app.add_subcommand("eval", "Compare the reconstruction with the fully sampled data");
  s_ev->add_option("--in", ev_in)->required();
  s_ev->add_option("--against", ev_against)->capture_default_str();
  s_ev->add_option("--window", ev_window, "Local error window")->capture_default_str();

  std::vector<std::string> rp_in;
  std::string rp_out;
  auto *s_rp = app.add_subcommand("report", "Summary tables and SVG figures for evaluated containers");
  s_rp->add_option("--in", rp_in)->required()->expected(1, -1);
  s_rp->add_option("--out", rp_out)->required();

  try {
    app.parse(argc, argv);
  } catch (CLI::ParseError const &e) {
    return app.exit(e);
  }

  auto fail = [](int code, io::json j) {
    j["code"] = code;
    std::cerr << j.dump() << std::endl;
    return code;
  };
  try {
    if (*s_sim) run_simulate(sim);
    else if (*s_us) run_undersample(us);
    else if (*s_cal) {
      if (*o_crop) cal.eig_crop = eig_crop;
      run_calibrate(cal);
    } else if (*s_mt) run_maps_transform(mt_in);
    else if (*s_tr) run_train(tr);
    else if (*s_es) run_estimate(es_in, es_ckpt);
    else if (*s_rc) run_recon(rc);
    else if (*s_ev) run_eval(ev_in, ev_against, ev_window);
    else if (*s_rp) run_report(rp_in, rp_out);
  } catch (MissingInput const &e) {
    return fail(2, {{"error", "missing_input"}, {"artifact", e.artifact}, {"message", e.what()}});
  } catch (cl::IoError const &e) {
    return fail(1, {{"error", "io"}, {"field", e.field}, {"message", e.what()}});
  } catch (cl::DivergenceError const &e) {
    return fail(1, {{"error", "diverged"}, {"last_good_epoch", e.last_good_epoch}, {"message", e.what()}});
  } catch (cl::ParameterError const &e) {
    return fail(1, {{"error", "parameter"}, {"message", e.what()}});
  } catch (std::exception const &e) {
    return fail(1, {{"error", "failure"}, {"message", e.what()}});
  }
  return 0;
}
