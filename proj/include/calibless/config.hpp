#pragma once

#include "estimator.hpp"
#include "io.hpp"
#include "simulate.hpp"

namespace calibless::io {

/// Network file keys: levels, base_filters, coils, attention, padding (zero|cyclic),
/// input_norm (slice_percentile|pixel), seed.
inline NetworkConfig read_network_config(KeyValues kv, std::string const &source = "network config")
{
  NetworkConfig c;
  KeyReader r(std::move(kv), source);
  int coils = c.io_channels / 2;
  std::string padding = c.padding == nn::Padding::cyclic ? "cyclic" : "zero";
  std::string input_norm = nn::to_string(c.input_norm);
  r.get("levels", c.levels);
  r.get("base_filters", c.base_filters);
  r.get("coils", coils);
  r.get("attention", c.attention);
  r.get("padding", padding);
  r.get("input_norm", input_norm);
  r.get("seed", c.seed);
  r.finish();
  c.io_channels = 2 * coils;
  if (padding == "zero") c.padding = nn::Padding::zero;
  else if (padding == "cyclic") c.padding = nn::Padding::cyclic;
  else throw IoError("padding", "expected zero or cyclic, got '" + padding + "'");
  if (input_norm == "slice_percentile") c.input_norm = nn::InputNorm::slice_percentile;
  else if (input_norm == "pixel") c.input_norm = nn::InputNorm::pixel;
  else throw IoError("input_norm", "expected slice_percentile or pixel, got '" + input_norm + "'");
  try {
    c.validate();
  } catch (ParameterError const &e) {
    throw IoError(source, e.what());
  }
  return c;
}

inline std::string network_config_text(NetworkConfig const &c)
{
  std::ostringstream os;
  os << "levels = " << c.levels << "\n"
     << "base_filters = " << c.base_filters << "\n"
     << "coils = " << c.io_channels / 2 << "\n"
     << "attention = " << (c.attention ? "true" : "false") << "\n"
     << "padding = " << (c.padding == nn::Padding::cyclic ? "cyclic" : "zero") << "\n"
     << "input_norm = " << nn::to_string(c.input_norm) << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

inline LambdaMode parse_lambda_mode(std::string const &s)
{
  if (s == "trainable") return LambdaMode::trainable;
  if (s == "linear_decay") return LambdaMode::linear_decay;
  if (s == "fixed") return LambdaMode::fixed;
  throw IoError("lambda_mode", "expected trainable, linear_decay or fixed, got '" + s + "'");
}

/// Training settings plus the acceleration factors to draw samples at.
struct TrainingPlan
{
  TrainingConfig training;
  /// Empty: use each dataset's own mask.
  std::vector<int> accelerations;
};

inline std::vector<int> parse_int_list(std::string const &s, std::string const &field)
{
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (std::exception const &) {
      throw IoError(field, "invalid integer '" + tok + "'");
    }
  }
  return out;
}

/// Training file keys: lr, beta1, beta2, batch_size, epochs, lambda_init,
/// lambda_mode (trainable|linear_decay|fixed), seed, accelerations (comma list).
inline TrainingPlan read_training_config(KeyValues kv, std::string const &source = "training config")
{
  TrainingPlan p;
  auto &c = p.training;
  KeyReader r(std::move(kv), source);
  std::string mode = to_string(c.lambda_mode), accel;
  r.get("lr", c.lr);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("batch_size", c.batch_size);
  r.get("epochs", c.epochs);
  r.get("lambda_init", c.lambda_init);
  r.get("lambda_mode", mode);
  r.get("seed", c.seed);
  r.get("accelerations", accel);
  r.finish();
  c.lambda_mode = parse_lambda_mode(mode);
  p.accelerations = parse_int_list(accel, "accelerations");
  for (int R : p.accelerations)
    if (R < 1) throw IoError("accelerations", "factors must be >= 1");
  try {
    c.validate();
  } catch (ParameterError const &e) {
    throw IoError(source, e.what());
  }
  return p;
}

/// Geometry range file keys: alpha, beta, gamma (degrees), m, n, t (pixels), each "lo, hi".
inline GeometryRanges read_geometry_ranges(KeyValues kv, std::string const &source = "geometry ranges")
{
  GeometryRanges g;
  std::pair<char const *, Interval *> const keys[] = {{"alpha", &g.alpha}, {"beta", &g.beta}, {"gamma", &g.gamma},
                                                       {"m", &g.m},         {"n", &g.n},       {"t", &g.t}};
  for (auto [name, iv] : keys) {
    auto it = kv.find(name);
    if (it == kv.end()) continue;
    std::string const v = it->second;
    kv.erase(it);
    auto const comma = v.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument(v);
      std::size_t u1 = 0, u2 = 0;
      std::string const a = trim(v.substr(0, comma)), b = trim(v.substr(comma + 1));
      iv->lo = std::stod(a, &u1);
      iv->hi = std::stod(b, &u2);
      if (u1 != a.size() || u2 != b.size()) throw std::invalid_argument(v);
    } catch (std::exception const &) {
      throw IoError(name, "expected 'lo, hi', got '" + v + "'");
    }
    if (!(iv->lo <= iv->hi)) throw IoError(name, "inverted range");
  }
  KeyReader(std::move(kv), source).finish();
  return g;
}

inline Checkpoint to_checkpoint(Estimator &est)
{
  Checkpoint ck;
  ck.config = network_config_text(est.net.config());
  for (auto *p : est.params()) ck.tensors.push_back({p->name, p->shape, p->value});
  return ck;
}

/// Rebuild an estimator; every parameter must be present with its exact shape.
inline Estimator from_checkpoint(Checkpoint const &ck)
{
  Estimator est(read_network_config(parse_key_values(ck.config, "checkpoint config"), "checkpoint config"));
  auto params = est.params();
  if (ck.tensors.size() != params.size())
    throw IoError("tensors", "checkpoint has " + std::to_string(ck.tensors.size()) + " tensors, network needs " +
                                 std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto const &t = ck.tensors[i];
    if (t.name != params[i]->name) throw IoError(t.name, "expected tensor '" + params[i]->name + "'");
    if (t.shape != params[i]->shape) throw IoError(t.name, "shape mismatch");
    for (double v : t.values)
      if (!std::isfinite(v)) throw IoError(t.name, "non-finite value");
    params[i]->value = t.values;
  }
  return est;
}

} // namespace calibless::io
