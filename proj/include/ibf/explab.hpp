#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "ibf/config.hpp"
#include "ibf/covmodel.hpp"
#include "ibf/geometry.hpp"
#include "ibf/linearization.hpp"
#include "ibf/stats.hpp"

namespace ibf {

inline constexpr const char* kLabVersion = "0.1.0";

/// Raised when the configured model violates the hypothesis of the
/// experiment; what() explains which one.
class ExperimentRefused : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// {x : x_axis <= offset}.
struct HalfSpace {
  int axis = 0;
  double offset = 0.0;
};
struct WholeSpace {};
struct EmptySet {};

using TestSet = std::variant<Ball, Box, Cylinder, HalfSpace, WholeSpace, EmptySet>;

/// Set specs, coordinates comma separated:
///   ball:<center>:<radius>              ball:0,0:1
///   box:<lo>:<hi>                       box:-1,-1:1,1
///   cylinder:<center>:<axis>:<half>:<r> cylinder:0,0:1,0:5:0.1
///   halfspace:<axis>:<offset>           halfspace:0:0  (x_1 <= 0)
///   whole, empty
/// Throws ConfigError on malformed specs or a dimension mismatch.
TestSet parse_test_set(std::string_view spec, int d);

/// Bounded sets only (ball, box, cylinder).
SetDescriptor parse_set(std::string_view spec, int d);

std::string describe(const TestSet& set);

/// x in sqrt(t) * A, i.e. x / scale in A.
bool contains_scaled(const TestSet& set, const Vector& x, double scale);

/// Standard Gaussian mass of a test set.
struct GaussianTarget {
  double value = 0.0;
  double std_error = 0.0;  // 0 for closed forms
  std::string method;      // "closed-form" or "monte-carlo"
};

inline constexpr long kGaussianOracleSamples = 1'000'000;

/// Closed form for half-spaces, centered balls (chi-square law), boxes and the
/// trivial sets; otherwise a Monte Carlo estimate from kGaussianOracleSamples
/// draws.
GaussianTarget gaussian_mass(const TestSet& set, int d, std::uint64_t seed);

/// P(chi^2_d <= x).
double chi_square_cdf(double x, int d);

struct InitialMeasure {
  enum class Kind { Uniform, Gaussian };
  Kind kind = Kind::Uniform;
  std::string set;     // support for Uniform; empty means the unit ball at 0
  double scale = 1.0;  // standard deviation for Gaussian
};

struct ExperimentConfig {
  std::string experiment = "dispersion";
  int d = 2;
  double alpha = 0.0;
  double ell = 1.0;

  int particles = 64;
  int replicates = 200;
  double dt = 1e-2;
  double horizon = 1.0;
  std::vector<double> save_times;  // empty: {horizon}
  double jitter = 1e-12;
  std::uint64_t seed = 1;
  std::string output_dir = "ibf-out";
  bool svg = true;

  std::vector<std::string> test_sets = {"halfspace:0:0"};
  InitialMeasure initial;

  // Image dispersion: the Omega_B proxy and its sensitivity grid, as
  // fractions of lambda(B).
  double threshold = 0.01;
  std::vector<double> thresholds = {0.001, 0.01, 0.1};

  // Martingale suite: times at which E V_t = lambda(A) is tested.
  std::vector<double> check_times = {1, 2, 5, 10};
  // Persistence suite: the reference time of the contraction ratio.
  double reference_time = 1.0;
  long psi_samples = 400'000;

  std::vector<double> separations = {1.0};
  int qr_every = 10;
  JacobianScheme scheme = JacobianScheme::Euler;

  IsotropicModel model() const { return IsotropicModel(d, alpha, ell); }
  StepConfig step_config() const;
  /// Save times with defaults applied, sorted.
  std::vector<double> saves() const;

  /// Throws ConfigError on violated invariants.
  void validate() const;
  nlohmann::json to_json() const;
};

/// Reads every recognized key; unknown keys are errors.
ExperimentConfig config_from_table(const ConfigTable& table, ExperimentConfig base = {});

struct ReportEstimate {
  std::string name;
  double time = 0.0;
  double value = 0.0;
  double std_error = 0.0;
  std::optional<double> target;
  std::optional<double> target_std_error;
};

struct ReportCheck {
  std::string name;
  bool pass = false;
  std::string rule;
  std::string detail;
};

struct ExperimentReport {
  static constexpr int kSchemaVersion = 1;

  std::string experiment;
  nlohmann::json config;
  std::vector<ReportEstimate> estimates;
  std::vector<ReportCheck> checks;
  std::vector<std::string> notes;
  double wall_seconds = 0.0;

  void estimate(std::string name, double time, const McEstimate& e, std::optional<double> target = {},
                std::optional<double> target_se = {});
  void check(std::string name, bool pass, std::string rule, std::string detail = {});
  bool all_pass() const;
  const ReportEstimate* find(std::string_view name, double time) const;
  const ReportCheck* find_check(std::string_view name) const;

  nlohmann::json to_json(bool include_timing = true) const;
};

/// Writes report.json, estimates.csv and (optionally) estimates.svg.
void write_report(const ExperimentReport& report, const std::filesystem::path& dir, bool svg);

/// Self-contained SVG: one panel per estimate name, value and +-SE band vs t.
std::string render_svg(const ExperimentReport& report);

/// Support of the uniform initial measure.
SetDescriptor initial_support(const ExperimentConfig& cfg);

/// n i.i.d. points from the initial measure (d x n).
Matrix sample_initial(const ExperimentConfig& cfg, NoiseStream& rng);

ExperimentReport run_dispersion_forward(const ExperimentConfig& cfg);
ExperimentReport run_dispersion_image(const ExperimentConfig& cfg);
ExperimentReport run_martingale_suite(const ExperimentConfig& cfg);
ExperimentReport run_persistence_suite(const ExperimentConfig& cfg);
ExperimentReport run_lyapunov_suite(const ExperimentConfig& cfg);
ExperimentReport run_distance_crosscheck(const ExperimentConfig& cfg);

/// The marker ensemble behind the martingale and persistence suites, with
/// markers uniform in cfg.initial.set.
VolumeEnsemble run_volume_ensemble(const ExperimentConfig& cfg);

void add_martingale_checks(ExperimentReport& report, const ExperimentConfig& cfg, const VolumeEnsemble& ensemble);
void add_persistence_checks(ExperimentReport& report, const ExperimentConfig& cfg, const VolumeEnsemble& ensemble);

struct PsiAsymptotics {
  double fitted_exponent = 0.0;  // log-log slope of psi on [s_lo, s_hi] * ell
  double target_exponent = 0.0;
  double fit_residual = 0.0;
  double psi_far = 0.0;  // psi(50 ell)
  bool pass = false;     // exponent within 0.05 and |psi_far - 1| <= 1e-6
};

/// Fits the small-s power law of psi by direct quadrature at log-spaced points.
PsiAsymptotics psi_asymptotics(const IsotropicModel& model, double s_lo = 1e-3, double s_hi = 1e-2, int points = 16);

/// Dispatches on cfg.experiment.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

}  // namespace ibf
