// ibf-lab: command-line front end of the isotropic Brownian flow lab.
//
// Experiment subcommands read an optional TOML config, apply --set overrides
// and write report.json, estimates.csv and estimates.svg into the output
// directory. The exit code is 0 iff every check passed, 1 if some check
// failed and 2 on bad input or a refused experiment.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "ibf/config.hpp"
#include "ibf/covmodel.hpp"
#include "ibf/explab.hpp"
#include "ibf/geometry.hpp"
#include "ibf/invariant.hpp"
#include "ibf/parallel.hpp"
#include "ibf/simcore.hpp"

namespace {

using nlohmann::json;

struct ModelArgs {
  int d = 2;
  double alpha = 0.0;
  double ell = 1.0;
  ibf::IsotropicModel model() const { return ibf::IsotropicModel(d, alpha, ell); }
};

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("-d,--dim", m.d, "dimension")->capture_default_str();
  cmd->add_option("-a,--alpha", m.alpha, "potential weight in [0, 1]")->capture_default_str();
  cmd->add_option("--ell", m.ell, "length scale")->capture_default_str();
}

struct ExperimentArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  bool no_svg = false;
};

void add_experiment_options(CLI::App* cmd, ExperimentArgs& e) {
  cmd->add_option("-c,--config", e.config, "TOML config file");
  cmd->add_option("--set", e.overrides, "override key=value (dotted keys, e.g. run.replicates=50)");
  cmd->add_option("-o,--out", e.out, "output directory (overrides output.dir)");
  cmd->add_flag("--no-svg", e.no_svg, "skip the SVG plot");
}

// Battery defaults per experiment; the config file and overrides apply on top.
ibf::ExperimentConfig defaults_for(const std::string& experiment) {
  ibf::ExperimentConfig c;
  c.experiment = experiment;
  if (experiment == "dispersion") {
    c.alpha = 0.0;
    c.replicates = 200;
    c.particles = 64;
    c.dt = 0.02;
    c.horizon = 100;
    c.save_times = {10, 50, 100};
    c.test_sets = {"halfspace:0:0", "ball:0,0:1"};
  } else if (experiment == "image-dispersion") {
    c.alpha = 0.05;
    c.replicates = 200;
    c.particles = 32;
    c.dt = 0.02;
    c.horizon = 100;
    c.save_times = {10, 50, 100};
    c.test_sets = {"halfspace:0:0", "whole", "empty"};
  } else if (experiment == "martingale" || experiment == "volume" || experiment == "persistence") {
    c.alpha = 0.05;
    c.replicates = 400;
    c.dt = 0.02;
    c.horizon = 20;
    c.save_times = {0, 1, 2, 5, 10, 20};
  } else if (experiment == "lyapunov") {
    c.replicates = 200;
    c.dt = 1e-3;
    c.horizon = 50;
  } else if (experiment == "distance-check") {
    c.replicates = 2000;
    c.dt = 1e-3;
    c.horizon = 1;
    c.separations = {0.5, 2.0};
  }
  return c;
}

ibf::ExperimentConfig load_config(const std::string& experiment, const ExperimentArgs& args) {
  ibf::ConfigTable table = args.config.empty() ? ibf::ConfigTable() : ibf::ConfigTable::load(args.config);
  for (const auto& o : args.overrides) table.set_override(o);
  if (table.has("experiment") && table.string("experiment", experiment) != experiment &&
      !(experiment == "volume" && table.string("experiment", "") == "martingale"))
    throw ibf::ConfigError("config is for experiment '" + table.string("experiment", "") + "', not '" + experiment + "'");
  table.set("experiment", ibf::parse_config_value("\"" + experiment + "\""));
  auto cfg = ibf::config_from_table(table, defaults_for(experiment));
  if (!args.out.empty()) cfg.output_dir = args.out;
  if (args.no_svg) cfg.svg = false;
  return cfg;
}

int finish(const ibf::ExperimentReport& report, const ibf::ExperimentConfig& cfg) {
  ibf::write_report(report, cfg.output_dir, cfg.svg);
  for (const auto& c : report.checks)
    std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "  [" << c.rule << "]\n";
  for (const auto& n : report.notes) std::cout << "note: " << n << "\n";
  std::cout << "report written to " << cfg.output_dir << "/report.json (" << report.wall_seconds << " s)\n";
  return report.all_pass() ? 0 : 1;
}

json model_json(const ibf::IsotropicModel& m) {
  const auto beta = ibf::beta_params(m);
  const auto reg = ibf::regime(m);
  return {{"d", m.d()},
          {"alpha", m.alpha()},
          {"ell", m.ell()},
          {"beta_l", beta.beta_l},
          {"beta_n", beta.beta_n},
          {"beta_ratio_n_over_l", beta.beta_n / beta.beta_l},
          {"lyapunov_spectrum", ibf::lyapunov_spectrum(m)},
          {"regime", ibf::to_string(reg.regime)},
          {"almost_sure_divergence", reg.almost_sure},
          {"volume_preserving", ibf::is_volume_preserving(m)},
          {"persistence_condition", beta.beta_n / beta.beta_l > static_cast<double>(m.d()) / (m.d() - 1)},
          {"psi_small_s_exponent", ibf::psi_small_s_exponent(m)}};
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto v = ibf::parse_config_value(item);
    if (v.kind != ibf::ConfigValue::Kind::Number) throw ibf::ConfigError("not a number: " + item);
    out.push_back(v.number);
  }
  return out;
}

std::vector<ibf::Vector> parse_vertices(const std::string& s, int d) {
  std::vector<ibf::Vector> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto xs = parse_list(item);
    if (static_cast<int>(xs.size()) != d) throw ibf::ConfigError("vertex '" + item + "' needs " + std::to_string(d) + " coordinates");
    out.push_back(Eigen::Map<const ibf::Vector>(xs.data(), d));
  }
  return out;
}

// One vertex per line, comma separated; blank lines, '#' comments and a
// non-numeric header line are skipped.
std::vector<ibf::Vector> read_vertices_csv(const std::string& path, int d) {
  std::ifstream in(path);
  if (!in) throw ibf::ConfigError("cannot open " + path);
  std::string line, joined;
  bool first = true;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (first) {
      first = false;
      try {
        (void)parse_list(line);
      } catch (const std::exception&) {
        continue;
      }
    }
    if (!joined.empty()) joined += ';';
    joined += line;
  }
  return parse_vertices(joined, d);
}

void write_le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_le(std::ostream& out, double x) {
  std::uint64_t v;
  std::memcpy(&v, &x, sizeof v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Numerical lab for isotropic Brownian flows"};
  app.require_subcommand(1);

  ModelArgs model_args;
  auto* model_cmd = app.add_subcommand("model", "derived parameters of a model, as JSON");
  add_model_options(model_cmd, model_args);
  auto* describe_cmd = model_cmd->add_subcommand("describe", "same as `model`");
  add_model_options(describe_cmd, model_args);

  ModelArgs sim_model;
  int sim_particles = 2, sim_replicates = 1;
  double sim_dt = 1e-3, sim_horizon = 1.0;
  std::string sim_saves, sim_init, sim_out, sim_binary;
  std::uint64_t sim_seed = 1;
  auto* sim_cmd = app.add_subcommand("simulate", "n-point motion snapshots as CSV");
  add_model_options(sim_cmd, sim_model);
  sim_cmd->add_option("-n,--particles", sim_particles)->capture_default_str();
  sim_cmd->add_option("-r,--replicates", sim_replicates)->capture_default_str();
  sim_cmd->add_option("--dt", sim_dt)->capture_default_str();
  sim_cmd->add_option("-T,--horizon", sim_horizon)->capture_default_str();
  sim_cmd->add_option("--save-times", sim_saves, "comma separated (default 0,T)");
  sim_cmd->add_option("--init", sim_init, "set spec for uniform initial points (default: unit ball)");
  sim_cmd->add_option("--seed", sim_seed)->capture_default_str();
  sim_cmd->add_option("-o,--out", sim_out, "CSV path (default stdout)");
  sim_cmd->add_option("--binary", sim_binary, "also write an IBF1 snapshot file");

  ModelArgs psi_model;
  int psi_points = 512;
  std::string psi_out;
  auto* psi_cmd = app.add_subcommand("psi", "two-point invariant density");
  psi_cmd->require_subcommand(1);
  auto* psi_table_cmd = psi_cmd->add_subcommand("table", "CSV of s, psi, majorant");
  add_model_options(psi_table_cmd, psi_model);
  psi_table_cmd->add_option("--points", psi_points)->capture_default_str();
  psi_table_cmd->add_option("-o,--out", psi_out, "CSV path (default stdout)");
  auto* psi_check_cmd = psi_cmd->add_subcommand("check-asymptotics", "small-s exponent and large-s limit, as JSON");
  add_model_options(psi_check_cmd, psi_model);

  std::map<std::string, ExperimentArgs> exp_args;
  std::map<std::string, CLI::App*> exp_cmds;
  for (const auto& [name, help] : std::vector<std::pair<std::string, std::string>>{
           {"lyapunov", "Lyapunov spectrum against the closed formula"},
           {"volume", "volume martingale and second moment"},
           {"dispersion", "forward dispersion of a particle cloud"},
           {"image-dispersion", "dispersion of the image of a set"},
           {"persistence", "persistence or contraction of image volume"},
           {"distance-check", "two-point distance law against the distance SDE"}}) {
    exp_cmds[name] = app.add_subcommand(name, help);
    add_experiment_options(exp_cmds[name], exp_args[name]);
  }

  ModelArgs geo_model;
  double geo_half = 10.0, geo_delta = 0.1, geo_length = 10.0, geo_segment = 1.0;
  long geo_samples = 200000;
  std::uint64_t geo_seed = 1;
  std::string geo_vertices, geo_vertices_file, geo_domain = "ball:0,0:20";
  auto* geo_cmd = app.add_subcommand("geometry", "persistence geometry helpers");
  geo_cmd->require_subcommand(1);
  auto* ratio_cmd = geo_cmd->add_subcommand("cylinder-ratio", "pair-kernel ratio of a cylinder vs its 1D bound");
  add_model_options(ratio_cmd, geo_model);
  ratio_cmd->add_option("--half-length", geo_half)->capture_default_str();
  ratio_cmd->add_option("--delta", geo_delta)->capture_default_str();
  ratio_cmd->add_option("--samples", geo_samples)->capture_default_str();
  ratio_cmd->add_option("--seed", geo_seed)->capture_default_str();
  auto* extract_cmd = geo_cmd->add_subcommand("extract", "disjoint segments from a polyline");
  extract_cmd->add_option("-d,--dim", geo_model.d)->capture_default_str();
  auto* vertices_opt = extract_cmd->add_option("--vertices", geo_vertices, "x,y;x,y;... path through the domain");
  auto* vertices_file_opt =
      extract_cmd->add_option("--vertices-file", geo_vertices_file, "CSV file, one vertex per line")->check(CLI::ExistingFile);
  vertices_opt->excludes(vertices_file_opt);
  extract_cmd->add_option("--segment", geo_segment, "segment length l")->capture_default_str();
  extract_cmd->add_option("--length", geo_length, "chord length L")->capture_default_str();
  extract_cmd->add_option("--domain", geo_domain, "convex domain set spec")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*model_cmd) {
      std::cout << model_json(model_args.model()).dump(2) << "\n";
      return 0;
    }

    if (*sim_cmd) {
      const auto model = sim_model.model();
      ibf::StepConfig cfg;
      cfg.dt = sim_dt;
      cfg.seed = sim_seed;
      auto saves = parse_list(sim_saves);
      const ibf::SetDescriptor set =
          sim_init.empty() ? ibf::SetDescriptor(ibf::Ball(ibf::Vector::Zero(model.d()), 1.0)) : ibf::parse_set(sim_init, model.d());
      if (sim_replicates < 1 || sim_particles < 1) throw ibf::ConfigError("need positive particles and replicates");
      std::vector<std::vector<ibf::NPointState>> runs(static_cast<std::size_t>(sim_replicates));
      ibf::parallel_for(runs.size(), [&](std::size_t r) {
        ibf::NoiseStream init(ibf::derive_seed(sim_seed, {ibf::kInitialStreamTag, r}));
        ibf::Matrix x0(model.d(), sim_particles);
        for (int p = 0; p < sim_particles; ++p) x0.col(p) = ibf::sample_uniform(set, init);
        runs[r] = ibf::simulate_npoints(x0, model, cfg, sim_horizon, saves, r);
      });
      std::ofstream file;
      if (!sim_out.empty()) file.open(sim_out);
      std::ostream& out = sim_out.empty() ? std::cout : file;
      out << std::setprecision(17) << "replicate,t,particle";
      for (int i = 0; i < model.d(); ++i) out << ",x" << i;
      out << "\n";
      for (std::size_t r = 0; r < runs.size(); ++r)
        for (const auto& s : runs[r])
          for (int p = 0; p < s.count(); ++p) {
            out << r << ',' << s.time << ',' << p;
            for (int i = 0; i < s.dim(); ++i) out << ',' << s.positions(i, p);
            out << '\n';
          }
      if (!sim_binary.empty()) {
        // "IBF1", then d, n, record count as little-endian uint32; each record
        // is replicate, t and the d x n coordinates column by column, all as
        // little-endian float64.
        std::ofstream bin(sim_binary, std::ios::binary);
        bin.write("IBF1", 4);
        write_le(bin, static_cast<std::uint32_t>(model.d()));
        write_le(bin, static_cast<std::uint32_t>(sim_particles));
        write_le(bin, static_cast<std::uint32_t>(runs.size() * runs.front().size()));
        for (std::size_t r = 0; r < runs.size(); ++r)
          for (const auto& s : runs[r]) {
            write_le(bin, static_cast<double>(r));
            write_le(bin, s.time);
            for (int p = 0; p < s.count(); ++p)
              for (int i = 0; i < s.dim(); ++i) write_le(bin, s.positions(i, p));
          }
        if (!bin) throw std::runtime_error("cannot write " + sim_binary);
      }
      return 0;
    }

    if (*psi_table_cmd) {
      const auto table = ibf::monotone_majorant(ibf::PsiTable::build(psi_model.model(), psi_points));
      std::ofstream file;
      if (!psi_out.empty()) file.open(psi_out);
      std::ostream& out = psi_out.empty() ? std::cout : file;
      out << std::setprecision(17) << "s,psi,majorant\n";
      for (std::size_t k = 0; k < table.grid().size(); ++k)
        out << table.grid()[k] << ',' << table.values()[k] << ',' << table.majorant_values()[k] << '\n';
      return 0;
    }

    if (*psi_check_cmd) {
      const auto a = ibf::psi_asymptotics(psi_model.model());
      std::cout << json{{"model", model_json(psi_model.model())},
                        {"fitted_exponent", a.fitted_exponent},
                        {"target_exponent", a.target_exponent},
                        {"fit_residual", a.fit_residual},
                        {"psi_50_ell", a.psi_far},
                        {"pass", a.pass}}
                       .dump(2)
                << "\n";
      return a.pass ? 0 : 1;
    }

    for (const auto& [name, cmd] : exp_cmds) {
      if (!*cmd) continue;
      const auto cfg = load_config(name, exp_args[name]);
      if (name == "volume") {
        ibf::ExperimentReport report;
        report.experiment = "volume";
        report.config = cfg.to_json();
        const auto start = std::chrono::steady_clock::now();
        const auto ens = ibf::run_volume_ensemble(cfg);
        ibf::add_martingale_checks(report, cfg, ens);
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::filesystem::create_directories(cfg.output_dir);
        std::ofstream csv(std::filesystem::path(cfg.output_dir) / "volumes.csv");
        csv << std::setprecision(17) << "t,replicate,volume\n";
        for (std::size_t k = 0; k < ens.times.size(); ++k)
          for (std::size_t r = 0; r < ens.runs.size(); ++r) csv << ens.times[k] << ',' << r << ',' << ens.runs[r].volume[k] << '\n';
        return finish(report, cfg);
      }
      return finish(ibf::run_experiment(cfg), cfg);
    }

    if (*ratio_cmd) {
      const auto model = geo_model.model();
      const auto h = ibf::monotone_majorant(ibf::PsiTable::build(model)).majorant_kernel();
      const auto r = ibf::cylinder_kernel_ratio(h, model.d(), geo_half, geo_delta, geo_samples, geo_seed);
      const bool pass = r.ratio.mean <= r.reference + 3.0 * r.ratio.std_error;
      std::cout << json{{"model", model_json(model)},
                        {"half_length", geo_half},
                        {"delta", geo_delta},
                        {"ratio", r.ratio.mean},
                        {"std_error", r.ratio.std_error},
                        {"reference", r.reference},
                        {"pass", pass}}
                       .dump(2)
                << "\n";
      return pass ? 0 : 1;
    }

    if (*extract_cmd) {
      if (geo_vertices.empty() == geo_vertices_file.empty())
        throw ibf::ConfigError("give exactly one of --vertices and --vertices-file");
      const auto domain = ibf::parse_set(geo_domain, geo_model.d);
      const auto polyline = ibf::resample_polyline(geo_vertices_file.empty() ? parse_vertices(geo_vertices, geo_model.d) : read_vertices_csv(geo_vertices_file, geo_model.d),
          geo_segment);
      const auto ex = ibf::extract_segments(polyline, geo_length, domain);
      json segs = json::array();
      for (const auto& s : ex.segments)
        segs.push_back({std::vector<double>(s.a().data(), s.a().data() + s.a().size()),
                        std::vector<double>(s.b().data(), s.b().data() + s.b().size())});
      const bool pass = ex.total_length() >= geo_length / 7.0;
      std::cout << json{{"segments", segs},
                        {"count", ex.segments.size()},
                        {"segment_length", ex.segment_length},
                        {"total_length", ex.total_length()},
                        {"bar_delta", ex.bar_delta},
                        {"length_bound", geo_length / 7.0},
                        {"pass", pass}}
                       .dump(2)
                << "\n";
      return pass ? 0 : 1;
    }
  } catch (const ibf::ExperimentRefused& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const ibf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
