// kdgm: train, transfer, evaluate and price with learned transition CDFs.
//
// Exit codes: 0 success, 1 runtime failure (divergence, failed bench
// criterion), 2 configuration error, 3 query outside the trained domain,
// 4 unreadable or corrupted model file.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kdgm/bench.hpp"
#include "kdgm/config.hpp"
#include "kdgm/density.hpp"
#include "kdgm/oracles.hpp"
#include "kdgm/persistence.hpp"
#include "kdgm/quad_pricer.hpp"
#include "kdgm/trainer.hpp"

namespace {

using namespace kdgm;

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDomain = 3;
constexpr int kExitFile = 4;

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string model;
  std::string model_file;
  std::string csv;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("-c,--config", f.config_path, "JSON config file");
  cmd->add_option("--set", f.sets, "Override a config field, e.g. --set train.epochs=200")->allow_extra_args(false);
  cmd->add_option("--model", f.model, "Model: gbm, heston or td_heston");
}

RunConfig resolve(const CommonFlags& f, std::vector<std::string> extra) {
  json file = f.config_path.empty() ? json(nullptr) : read_config_file(f.config_path);
  std::vector<std::string> overrides;
  if (!f.model.empty()) overrides.push_back("model=\"" + f.model + "\"");
  if (!f.model_file.empty()) overrides.push_back("model_file=" + json(f.model_file).dump());
  if (!f.csv.empty()) overrides.push_back("output.csv=" + json(f.csv).dump());
  overrides.insert(overrides.end(), extra.begin(), extra.end());
  overrides.insert(overrides.end(), f.sets.begin(), f.sets.end());
  return resolve_config(file, overrides);
}

/// stdout when path is empty, else the file.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw IoError("cannot open " + path + " for writing");
    }
  }
  std::ostream& os() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

void write_training_outputs(const RunConfig& rc, const TrainResult& res, const std::string& command) {
  save(res.model, rc.out_model);
  std::ofstream log(rc.out_loss_log);
  if (!log) throw IoError("cannot open " + rc.out_loss_log + " for writing");
  write_loss_log(log, res.report, command + " config: " + rc.echo());
  std::cout << "# config: " << rc.echo() << "\n"
            << command << ": " << res.report.epochs.size() << " epochs, " << res.report.steps << " steps, "
            << std::setprecision(6) << res.report.wall_seconds << " s; best loss " << res.report.best_loss
            << " at epoch " << res.report.best_epoch << "\n"
            << "model: " << rc.out_model << "\nloss log: " << rc.out_loss_log << "\n";
  for (const auto& w : res.model.model.warnings()) std::cerr << "warning: " << w << "\n";
}

EpochCallback progress_to_stderr(std::size_t epochs) {
  const std::size_t every = std::max<std::size_t>(1, epochs / 20);
  return [every](const EpochRecord& r) {
    if (r.epoch % every == 0) std::cerr << "epoch " << r.epoch << " L=" << r.loss << " L1=" << r.l1 << " L2=" << r.l2 << "\n";
  };
}

int cmd_train(const RunConfig& rc) {
  const PdeModel model = rc.pde_model();
  const auto res = train(model, rc.train, progress_to_stderr(rc.train.epochs));
  write_training_outputs(rc, res, "train");
  return 0;
}

int cmd_transfer(const RunConfig& rc) {
  if (rc.base_model.empty()) throw ConfigError("missing required config field 'transfer.base_model'");
  const TrainedModel base = load(rc.base_model);
  RunConfig local = rc;
  if (!local.model) local.model = base.model.kind();
  if (!local.domain) local.domain = base.model.domain();
  const PdeModel model = local.pde_model();
  const auto res = transfer(model, base, local.train, progress_to_stderr(local.train.epochs));
  write_training_outputs(local, res, "transfer");
  return 0;
}

int cmd_density(const RunConfig& rc) {
  if (rc.model_file.empty()) throw ConfigError("missing required config field 'model_file'");
  const TrainedModel m = load(rc.model_file);
  if (rc.model && *rc.model != m.model.kind()) {
    throw ConfigError("model layout mismatch: file holds " + m.model.name() + ", config asks for " +
                      model_kind_name(*rc.model));
  }
  const auto& q = rc.density;
  if (!q.cfg.delta_recommended()) std::cerr << "warning: density delta " << q.cfg.delta << " outside [0.001, 0.01]\n";
  const auto cdf = CdfSource::from_model(m);
  DensityStats stats;
  const auto ys = q.y.points();
  Output out(rc.out_csv);
  auto& os = out.os();
  os << std::setprecision(12);
  os << "# config: " << rc.echo() << "\n";
  os << "# model: " << m.model.name() << " config_hash=" << m.provenance.config_hash << "\n";
  if (m.model.two_factor()) {
    const auto zs = q.z.points();
    const auto p = density_2d_grid(cdf, q.t, q.x, q.v, q.T, ys, zs, q.params, q.cfg, &stats);
    os << "y,z,density\n";
    for (std::size_t i = 0; i < ys.size(); ++i) {
      for (std::size_t j = 0; j < zs.size(); ++j) os << ys[i] << ',' << zs[j] << ',' << p[i * zs.size() + j] << "\n";
    }
  } else {
    const auto p = density_1d_grid(cdf, q.t, q.x, q.T, q.sigma, ys, q.cfg, &stats);
    os << (q.exact ? "y,density,exact\n" : "y,density\n");
    for (std::size_t i = 0; i < ys.size(); ++i) {
      os << ys[i] << ',' << p[i];
      if (q.exact) os << ',' << gaussian_density(q.x, q.T - q.t, ys[i], q.sigma);
      os << "\n";
    }
  }
  os << "# clamped " << stats.clamped << " of " << stats.evaluations << " density values\n";
  return 0;
}

int cmd_price(const RunConfig& rc) {
  const bool oracle = rc.engine == "oracle";
  std::optional<TrainedModel> m;
  ModelKind kind;
  if (oracle) {
    kind = rc.require_model();
  } else {
    if (rc.model_file.empty()) throw ConfigError("missing required config field 'model_file' (or use --oracle)");
    m = load(rc.model_file);
    kind = m->model.kind();
  }
  std::unique_ptr<NetworkEngine> net;
  if (m) net = std::make_unique<NetworkEngine>(*m);
  GaussianEngine gauss;

  Output out(rc.out_csv);
  auto& os = out.os();
  os << std::setprecision(10);
  os << "# config: " << rc.echo() << "\n";
  os << "case,model,engine,type,K,T,S0,sigma,v0,kappa,theta,xi,rho,price,std_error,seconds\n";
  for (std::size_t i = 0; i < rc.cases.size(); ++i) {
    const PriceCase& c = rc.cases[i];
    QuadSpec spec = rc.quad;
    spec.payoff = Payoff::option(c.type, c.K);
    spec.S0 = c.S0;
    spec.T = c.T;
    const auto t0 = std::chrono::steady_clock::now();
    double price = 0.0, se = 0.0;
    std::string engine;
    if (kind == ModelKind::Gbm) {
      engine = oracle ? "gaussian" : "network";
      price = price_1d(oracle ? static_cast<const DensityEngine&>(gauss) : *net, spec, c.sigma);
    } else if (oracle) {
      engine = "monte_carlo";
      const auto samples = kind == ModelKind::Heston ? heston_mc(std::log(c.S0), c.v0, c.params, c.T, rc.mc)
                                                     : heston_mc(std::log(c.S0), c.v0, rc.td_kappa, rc.schedule, c.T, rc.mc);
      const auto est = mc_price(samples.x, spec.payoff);
      price = est.mean;
      se = est.std_error;
    } else {
      engine = "network";
      price = price_2d(*net, spec, c.params, c.v0);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    os << i << ',' << model_kind_name(kind) << ',' << engine << ',' << option_type_name(c.type) << ',' << c.K << ','
       << c.T << ',' << c.S0 << ',' << c.sigma << ',' << c.v0 << ',' << c.params.kappa << ',' << c.params.theta << ','
       << c.params.xi << ',' << c.params.rho << ',' << price << ',' << se << ',' << secs << "\n";
  }
  return 0;
}

int cmd_bench(const std::string& suite, const RunConfig& rc, bool quiet) {
  bench::Settings s;
  s.seed = rc.train.seed;
  bench::Context ctx(s, quiet ? nullptr : &std::cerr);
  const auto results = bench::run_suite(suite, ctx);
  Output out(rc.out_csv);
  auto& os = out.os();
  os << "# config: " << rc.echo() << "\n";
  bool all = true;
  for (const auto& r : results) {
    os << bench::format_line(r) << "\n";
    all = all && r.passed;
  }
  return all ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned transition densities: training, density evaluation and quadrature pricing"};
  app.require_subcommand(1);

  CommonFlags f;
  std::vector<std::string> extra;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::string out_model, out_log, base;
  bool exact = false, oracle = false, quiet = false, list = false;
  std::string suite;

  auto* train = app.add_subcommand("train", "Train a network and write a model file and loss log");
  auto* transfer = app.add_subcommand("transfer", "Continue training a saved model on a new domain");
  for (auto* cmd : {train, transfer}) {
    add_common(cmd, f);
    cmd->add_option("--epochs", epochs, "Override train.epochs");
    cmd->add_option("--seed", seed, "Override train.seed");
    cmd->add_option("--lambda", lambda, "Override train.lambda");
    cmd->add_option("-o,--out", out_model, "Model file to write");
    cmd->add_option("--log", out_log, "Loss log CSV to write");
  }
  transfer->add_option("--base", base, "Model file to start from");

  auto* density = app.add_subcommand("density", "Evaluate a learned density on a grid (CSV)");
  add_common(density, f);
  density->add_option("-m,--model-file", f.model_file, "Model file");
  density->add_flag("--exact", exact, "Add the closed-form column (GBM)");
  density->add_option("--csv", f.csv, "Output CSV (default stdout)");

  auto* price = app.add_subcommand("price", "Price the configured cases (CSV)");
  add_common(price, f);
  price->add_option("-m,--model-file", f.model_file, "Model file");
  price->add_flag("--oracle", oracle, "Use the reference engine instead of a network");
  price->add_option("--csv", f.csv, "Output CSV (default stdout)");

  auto* benchcmd = app.add_subcommand("bench", "Run an acceptance suite");
  add_common(benchcmd, f);
  benchcmd->add_option("suite", suite, "Suite name");
  benchcmd->add_option("--csv", f.csv, "Write the report here instead of stdout");
  benchcmd->add_flag("--list", list, "List suites");
  benchcmd->add_flag("-q,--quiet", quiet, "No progress on stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (epochs) extra.push_back("train.epochs=" + std::to_string(*epochs));
    if (seed) extra.push_back("train.seed=" + std::to_string(*seed));
    if (lambda) extra.push_back("train.lambda=" + json(*lambda).dump());
    if (!out_model.empty()) extra.push_back("output.model=" + json(out_model).dump());
    if (!out_log.empty()) extra.push_back("output.loss_log=" + json(out_log).dump());
    if (!base.empty()) extra.push_back("transfer.base_model=" + json(base).dump());
    if (exact) extra.push_back("density.exact=true");
    if (oracle) extra.push_back("price.engine=\"oracle\"");

    if (app.got_subcommand(benchcmd)) {
      if (list) {
        for (const auto& [name, ids] : bench::suites()) std::cout << name << "\n";
        return 0;
      }
      if (suite.empty()) throw ConfigError("bench: missing suite name; available suites: " + bench::suite_list());
      if (!bench::suites().count(suite)) {
        throw ConfigError("bench: unknown suite '" + suite + "'; available suites: " + bench::suite_list());
      }
    }
    const RunConfig rc = resolve(f, extra);
    if (app.got_subcommand(train)) return cmd_train(rc);
    if (app.got_subcommand(transfer)) return cmd_transfer(rc);
    if (app.got_subcommand(density)) return cmd_density(rc);
    if (app.got_subcommand(price)) return cmd_price(rc);
    if (app.got_subcommand(benchcmd)) return cmd_bench(suite, rc, quiet);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << "out of domain: " << e.what() << "\n";
    return kExitDomain;
  } catch (const FormatError& e) {
    std::cerr << "model file error: " << e.what() << "\n";
    return kExitFile;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitFile;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
