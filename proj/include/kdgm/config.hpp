#pragma once

// Run configuration for the command-line tool. A config is resolved in three
// layers: built-in defaults for the chosen model, then the JSON config file,
// then "path.to.field=value" overrides from flags. Unknown keys are errors.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdgm/density.hpp"
#include "kdgm/error.hpp"
#include "kdgm/oracles.hpp"
#include "kdgm/pde_models.hpp"
#include "kdgm/quad_pricer.hpp"
#include "kdgm/trainer.hpp"

namespace kdgm {

using nlohmann::json;

/// Evenly spaced points lo..hi; n = 1 gives just lo.
struct GridSpec {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t n = 201;

  std::vector<double> points() const {
    if (n == 0) throw ConfigError("grid: n must be positive");
    std::vector<double> out(n, lo);
    for (std::size_t i = 1; i < n; ++i) out[i] = lo + (hi - lo) * double(i) / double(n - 1);
    return out;
  }
};

struct DensityRequest {
  DensityConfig cfg;
  double t = 0.0;
  double x = 0.0;
  double v = 0.04;
  double T = 1.0;
  double sigma = 0.25;
  HestonParams params{1.0, 0.2, 0.2, 0.2};
  GridSpec y;
  GridSpec z{0.04, 0.04, 1};
  bool exact = false;
};

/// One pricing case. GBM uses sigma; the Heston family uses v0 and params.
struct PriceCase {
  OptionType type = OptionType::Call;
  double K = 1.0;
  double T = 1.0;
  double S0 = 1.0;
  double sigma = 0.25;
  double v0 = 0.2;
  HestonParams params{1.0, 0.2, 0.2, 0.2};
};

struct RunConfig {
  std::optional<ModelKind> model;
  std::optional<Domain> domain;
  double td_kappa = 3.0;
  PiecewiseSchedule schedule = PiecewiseSchedule::standard();
  TrainConfig train;
  std::string base_model;
  std::string model_file;
  DensityRequest density;
  QuadSpec quad;
  McConfig mc;
  std::string engine = "network";
  std::vector<PriceCase> cases;
  std::string out_model = "model.kdgm";
  std::string out_loss_log = "loss.csv";
  std::string out_csv;  // empty: stdout
  json resolved;        // the fully resolved JSON, echoed into outputs

  ModelKind require_model() const {
    if (!model) throw ConfigError("missing required config field 'model' (gbm, heston or td_heston)");
    return *model;
  }

  PdeModel pde_model() const {
    const ModelKind k = require_model();
    switch (k) {
      case ModelKind::Gbm: return PdeModel::gbm(*domain);
      case ModelKind::Heston: return PdeModel::heston(*domain);
      case ModelKind::TdHeston: return PdeModel::td_heston(*domain, td_kappa, schedule);
    }
    return {};
  }

  std::string echo() const { return resolved.dump(); }
};

namespace detail {

inline json domain_json(const Domain& d) {
  json j = json::object();
  for (std::size_t i = 0; i < d.dim(); ++i) j[d.names()[i]] = {d[i].lo, d[i].hi};
  return j;
}

inline json heston_json(const HestonParams& p) {
  return {{"kappa", p.kappa}, {"theta", p.theta}, {"xi", p.xi}, {"rho", p.rho}};
}

/// Defaults for every field; model-dependent ones follow `kind` when known.
inline json default_config(std::optional<ModelKind> kind) {
  const TrainConfig tc;
  json lr = json::array();
  const auto lr_default = LrSchedule::standard();
  for (const auto& p : lr_default.pieces()) {
    lr.push_back({p.threshold == LrSchedule::kForever ? json(nullptr) : json(p.threshold), p.alpha});
  }
  const auto sched = PiecewiseSchedule::standard();
  const DensityRequest dr;
  const McConfig mc;
  json j = {
      {"model", kind ? json(model_kind_name(*kind)) : json(nullptr)},
      {"domain", kind ? domain_json(PdeModel::default_domain(*kind)) : json::object()},
      {"td_heston",
       {{"kappa", 3.0},
        {"breakpoints", sched.breakpoints()},
        {"theta", sched.theta()},
        {"xi", sched.xi()},
        {"rho", sched.rho()}}},
      {"train",
       {{"lambda", kind && *kind != ModelKind::Gbm ? 100.0 : 10.0},
        {"epochs", tc.epochs},
        {"points_per_epoch", tc.batch.points_per_epoch},
        {"minibatches_per_epoch", tc.batch.minibatches_per_epoch},
        {"fd_step", tc.fd_step},
        {"seed", tc.seed},
        {"width", tc.width},
        {"layers", tc.layers},
        {"lr_schedule", lr},
        {"adam",
         {{"beta1", tc.adam.beta1},
          {"beta2", tc.adam.beta2},
          {"epsilon", tc.adam.epsilon},
          {"bias_correction", tc.adam.bias_correction}}},
        {"checkpoint", "lowest_loss"},
        {"early_stop_loss", tc.early_stop_loss},
        {"divergence_limit", tc.divergence_limit}}},
      {"transfer", {{"base_model", ""}}},
      {"model_file", ""},
      {"density",
       {{"delta", dr.cfg.delta},
        {"clamp_negative", dr.cfg.clamp_negative},
        {"t", dr.t},
        {"x", dr.x},
        {"v", dr.v},
        {"T", dr.T},
        {"sigma", dr.sigma},
        {"params", heston_json(dr.params)},
        {"y", {{"lo", dr.y.lo}, {"hi", dr.y.hi}, {"n", dr.y.n}}},
        {"z", {{"lo", dr.z.lo}, {"hi", dr.z.hi}, {"n", dr.z.n}}},
        {"exact", dr.exact}}},
      {"quad", {{"mesh_points", 51}, {"q", 6.0}, {"align_to_strike", true}, {"clip_to_engine", false}}},
      {"mc", {{"paths", mc.paths}, {"steps_per_year", mc.steps_per_year}, {"seed", mc.seed}}},
      {"price", {{"engine", "network"}, {"cases", json::array()}}},
      {"output", {{"model", "model.kdgm"}, {"loss_log", "loss.csv"}, {"csv", ""}}},
  };
  return j;
}

/// Rejects keys of `given` that the defaults do not have; arrays and
/// free-form objects (domain, cases) are checked by the parser instead.
inline void check_keys(const json& given, const json& defaults, const std::string& path) {
  if (!given.is_object()) return;
  for (const auto& [k, v] : given.items()) {
    const std::string p = path.empty() ? k : path + "." + k;
    if (!defaults.is_object() || !defaults.contains(k)) throw ConfigError("unknown config field '" + p + "'");
    if (p == "domain") continue;
    check_keys(v, defaults[k], p);
  }
}

template <class T>
T field(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key) || (*cur)[key].is_null()) {
      throw ConfigError("missing required config field '" + path + "'");
    }
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    return cur->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + path + "' has the wrong type: " + cur->dump());
  }
}

inline HestonParams heston_from(const json& j, const std::string& path) {
  return {field<double>(j, path + ".kappa"), field<double>(j, path + ".theta"), field<double>(j, path + ".xi"),
          field<double>(j, path + ".rho")};
}

inline GridSpec grid_from(const json& j, const std::string& path) {
  return {field<double>(j, path + ".lo"), field<double>(j, path + ".hi"), field<std::size_t>(j, path + ".n")};
}

inline OptionType option_from(const std::string& s) {
  if (s == "call") return OptionType::Call;
  if (s == "put") return OptionType::Put;
  throw ConfigError("option type must be 'call' or 'put', got '" + s + "'");
}

/// Parses "a.b.c=value"; value is read as JSON when it parses, else as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* cur = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      break;
    }
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

}  // namespace detail

/// Resolves defaults + file + overrides into a RunConfig.
inline RunConfig resolve_config(const json& file, const std::vector<std::string>& overrides = {}) {
  if (!file.is_null() && !file.is_object()) throw ConfigError("config file must hold a JSON object");
  json user = file.is_null() ? json::object() : file;
  for (const auto& o : overrides) detail::apply_override(user, o);

  std::optional<ModelKind> kind;
  if (user.contains("model") && !user["model"].is_null()) {
    if (!user["model"].is_string()) throw ConfigError("config field 'model' must be a string");
    kind = parse_model_kind(user["model"].get<std::string>());
  }
  json j = detail::default_config(kind);
  detail::check_keys(user, j, "");
  // Domain overrides are merged per coordinate so a partial domain keeps the other defaults.
  json domain = j["domain"];
  if (user.contains("domain")) {
    if (!user["domain"].is_object()) throw ConfigError("config field 'domain' must be an object");
    for (const auto& [k, v] : user["domain"].items()) {
      if (!kind) throw ConfigError("config field 'domain' needs 'model' to be set");
      if (!domain.contains(k)) throw ConfigError("unknown domain coordinate '" + k + "' for model " + model_kind_name(*kind));
      domain[k] = v;
    }
    user.erase("domain");
  }
  j.merge_patch(user);
  j["domain"] = domain;

  RunConfig rc;
  rc.model = kind;
  if (kind) {
    const auto names = model_layout(*kind);
    std::vector<Interval> bounds;
    for (const auto& n : names) {
      const auto& b = j["domain"][n];
      if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
        throw ConfigError("config field 'domain." + n + "' must be [lo, hi]");
      }
      bounds.push_back({b[0].get<double>(), b[1].get<double>()});
    }
    rc.domain = Domain(names, bounds);
  }
  using detail::field;
  rc.td_kappa = field<double>(j, "td_heston.kappa");
  rc.schedule = PiecewiseSchedule(field<std::vector<double>>(j, "td_heston.breakpoints"),
                                  field<std::vector<double>>(j, "td_heston.theta"),
                                  field<std::vector<double>>(j, "td_heston.xi"),
                                  field<std::vector<double>>(j, "td_heston.rho"));

  TrainConfig& tc = rc.train;
  tc.lambda = field<double>(j, "train.lambda");
  tc.epochs = field<std::size_t>(j, "train.epochs");
  tc.batch.points_per_epoch = field<std::size_t>(j, "train.points_per_epoch");
  tc.batch.minibatches_per_epoch = field<std::size_t>(j, "train.minibatches_per_epoch");
  tc.fd_step = field<double>(j, "train.fd_step");
  tc.seed = field<std::uint64_t>(j, "train.seed");
  tc.width = field<std::size_t>(j, "train.width");
  tc.layers = field<std::size_t>(j, "train.layers");
  std::vector<LrSchedule::Piece> pieces;
  const auto& lr = j["train"]["lr_schedule"];
  if (!lr.is_array() || lr.empty()) throw ConfigError("config field 'train.lr_schedule' must be a list of [step, rate]");
  for (const auto& p : lr) {
    if (!p.is_array() || p.size() != 2 || !p[1].is_number() || !(p[0].is_null() || (p[0].is_number_integer() && p[0].get<std::int64_t>() > 0))) {
      throw ConfigError("config field 'train.lr_schedule' entries must be [step or null, rate], got " + p.dump());
    }
    pieces.push_back({p[0].is_null() ? LrSchedule::kForever : p[0].get<std::size_t>(), p[1].get<double>()});
  }
  tc.lr_schedule = LrSchedule(pieces);
  tc.adam.beta1 = field<double>(j, "train.adam.beta1");
  tc.adam.beta2 = field<double>(j, "train.adam.beta2");
  tc.adam.epsilon = field<double>(j, "train.adam.epsilon");
  tc.adam.bias_correction = field<bool>(j, "train.adam.bias_correction");
  const auto cp = field<std::string>(j, "train.checkpoint");
  if (cp == "lowest_loss") {
    tc.checkpoint = CheckpointPolicy::LowestLoss;
  } else if (cp == "last") {
    tc.checkpoint = CheckpointPolicy::Last;
  } else {
    throw ConfigError("config field 'train.checkpoint' must be 'lowest_loss' or 'last'");
  }
  tc.early_stop_loss = field<double>(j, "train.early_stop_loss");
  tc.divergence_limit = field<double>(j, "train.divergence_limit");
  tc.validate();

  rc.base_model = field<std::string>(j, "transfer.base_model");
  rc.model_file = field<std::string>(j, "model_file");

  DensityRequest& dr = rc.density;
  dr.cfg.delta = field<double>(j, "density.delta");
  dr.cfg.clamp_negative = field<bool>(j, "density.clamp_negative");
  dr.cfg.validate();
  dr.t = field<double>(j, "density.t");
  dr.x = field<double>(j, "density.x");
  dr.v = field<double>(j, "density.v");
  dr.T = field<double>(j, "density.T");
  dr.sigma = field<double>(j, "density.sigma");
  dr.params = detail::heston_from(j, "density.params");
  dr.y = detail::grid_from(j, "density.y");
  dr.z = detail::grid_from(j, "density.z");
  dr.exact = field<bool>(j, "density.exact");

  rc.quad.mesh_points = field<std::size_t>(j, "quad.mesh_points");
  rc.quad.q = field<double>(j, "quad.q");
  rc.quad.align_to_strike = field<bool>(j, "quad.align_to_strike");
  rc.quad.clip_to_engine = field<bool>(j, "quad.clip_to_engine");
  rc.quad.validate();

  rc.mc.paths = field<std::size_t>(j, "mc.paths");
  rc.mc.steps_per_year = field<std::size_t>(j, "mc.steps_per_year");
  rc.mc.seed = field<std::uint64_t>(j, "mc.seed");
  rc.mc.validate();

  rc.engine = field<std::string>(j, "price.engine");
  if (rc.engine != "network" && rc.engine != "oracle") {
    throw ConfigError("config field 'price.engine' must be 'network' or 'oracle'");
  }
  const auto& cases = j["price"]["cases"];
  if (!cases.is_array()) throw ConfigError("config field 'price.cases' must be a list");
  static const std::set<std::string> case_keys{"type", "K", "T", "S0", "sigma", "v0", "kappa", "theta", "xi", "rho"};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    const std::string p = "price.cases[" + std::to_string(i) + "]";
    if (!c.is_object()) throw ConfigError("config field '" + p + "' must be an object");
    for (const auto& [k, v] : c.items()) {
      if (!case_keys.count(k)) throw ConfigError("unknown config field '" + p + "." + k + "'");
    }
    PriceCase pc;
    auto num = [&](const char* k, double& out) {
      if (!c.contains(k)) return;
      if (!c[k].is_number()) throw ConfigError("config field '" + p + "." + k + "' must be a number");
      out = c[k].get<double>();
    };
    if (!c.contains("K")) throw ConfigError("missing required config field '" + p + ".K'");
    if (c.contains("type")) {
      if (!c["type"].is_string()) throw ConfigError("config field '" + p + ".type' must be a string");
      pc.type = detail::option_from(c["type"].get<std::string>());
    }
    num("K", pc.K);
    num("T", pc.T);
    num("S0", pc.S0);
    num("sigma", pc.sigma);
    num("v0", pc.v0);
    num("kappa", pc.params.kappa);
    num("theta", pc.params.theta);
    num("xi", pc.params.xi);
    num("rho", pc.params.rho);
    if (!(pc.K > 0.0) || !(pc.T > 0.0) || !(pc.S0 > 0.0)) throw ConfigError(p + ": K, T and S0 must be positive");
    rc.cases.push_back(pc);
  }

  rc.out_model = field<std::string>(j, "output.model");
  rc.out_loss_log = field<std::string>(j, "output.loss_log");
  rc.out_csv = field<std::string>(j, "output.csv");
  rc.resolved = std::move(j);
  return rc;
}

inline json read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  try {
    // Comments are allowed so example configs can be annotated.
    return json::parse(is, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

}  // namespace kdgm
