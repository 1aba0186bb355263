#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pairrl/policy.hpp"
#include "pairrl/ppo.hpp"
#include "pairrl/scenario.hpp"
#include "pairrl/tabletop.hpp"

namespace pairrl {

inline constexpr int kDefaultEvalEpisodes = 128;
inline constexpr std::array<int, 4> kClutterLevels = {2, 4, 6, 8};

/// A trained policy: parameters plus the network layout they belong to.
struct Policy {
  PolicyConfig config;
  ParamSet params;
};

/// Rebuilds the network layout for `params` (head inferred from the
/// parameter names) and checks every tensor shape against it.
Policy make_policy(const Tabletop& env, ParamSet params);
Policy load_policy(const Tabletop& env, const std::filesystem::path& checkpoint);

/// Greedy (mean / argmax) rollouts of `n_episodes` episodes. Episode i draws
/// its scene from stream i of `seed`, so the rate does not depend on how
/// episodes are batched.
double evaluate(const Policy& policy, const Tabletop& env, const ScenarioSpec& scenario, int n_episodes,
                std::uint64_t seed);

struct SuiteCells {
  double texture = 0.0;
  double lighting = 0.0;
  double pose = 0.0;
  std::map<int, double> clutter;  // by distractor count
  double clutter_mean = 0.0;
  double avg = 0.0;
};

struct EvalReport {
  SuiteCells mean;
  // One entry per evaluated seed (or per training run when aggregated).
  std::vector<std::uint64_t> seeds;
  std::vector<SuiteCells> per_seed;
  std::string baseline_ref;
  std::optional<double> delta_avg;
};

/// clutter_mean = mean over N; avg = mean of the four axis cells.
void finalize_cells(SuiteCells& cells);
SuiteCells mean_cells(const std::vector<SuiteCells>& cells);

/// Texture, lighting, pose and clutter-{2,4,6,8} cells for each seed.
EvalReport run_ood_suite(const Policy& policy, const Tabletop& env, const std::vector<std::uint64_t>& seeds,
                         int episodes = kDefaultEvalEpisodes);

/// Combines single-run reports into one whose per-seed entries are the runs.
EvalReport aggregate_reports(const std::vector<EvalReport>& runs, const std::vector<std::uint64_t>& run_seeds);

/// Sets delta_avg = report.avg - baseline.avg.
void attach_baseline(EvalReport& report, const EvalReport& baseline, const std::string& baseline_name);

nlohmann::json report_to_json(const EvalReport& report);
/// Serialized JSON with every float rounded to 6 significant digits.
std::string dump_json(const nlohmann::json& j);
double round_sig6(double v);

// ---------------------------------------------------------------------------
// Experiments

struct CurveRow {
  std::string method;
  double x = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> seed_values;
};

std::string curve_csv(const std::vector<CurveRow>& rows);
CurveRow make_curve_row(std::string method, double x, std::vector<double> values);

struct NamedRuns {
  std::string method;
  std::vector<Policy> runs;  // one per training seed
};

/// Success vs distractor count for each method; mean and std over runs.
std::vector<CurveRow> run_clutter_curve(const std::vector<NamedRuns>& methods, const Tabletop& env, int episodes,
                                        std::uint64_t eval_seed);

/// Trains `cfg` once per training seed (seed overrides cfg.seed).
std::vector<Policy> train_runs(const TrainConfig& cfg, const Tabletop& env, const std::vector<std::uint64_t>& seeds,
                               std::vector<TrainResult>* results = nullptr);

struct AlphaSweepRow {
  double alpha = 0.0;
  EvalReport report;
};

/// One training run per (alpha, seed) with beta forced to 0.
std::vector<AlphaSweepRow> run_alpha_sweep(const TrainConfig& cfg, const Tabletop& env,
                                           const std::vector<double>& alphas, const std::vector<std::uint64_t>& seeds,
                                           int episodes, std::uint64_t eval_seed);

/// Long-form plot data: alpha, axis, success, seed.
std::string alpha_sweep_csv(const std::vector<AlphaSweepRow>& rows);

struct ViewpointCurve {
  std::vector<CurveRow> rows;  // x = evaluation angle in degrees
  double id_mean = 0.0;        // over the training angles
  double ood_mean = 0.0;       // over the evaluation-only angles
};

/// Success at each angle in {0, 4, ..., 28} for trained runs.
ViewpointCurve viewpoint_curve(const std::string& method, const std::vector<Policy>& runs, const Tabletop& env,
                               int episodes, std::uint64_t eval_seed);

/// Trains with camera angles drawn from the training set (viewpoint-mode
/// preserving views) and evaluates across the full angle grid.
ViewpointCurve run_viewpoint_extrapolation(const TrainConfig& cfg, const Tabletop& env,
                                           const std::vector<std::uint64_t>& seeds, int episodes,
                                           std::uint64_t eval_seed, const std::string& method = "viewpoint");

std::vector<int> viewpoint_eval_angles(const SplitTables& splits);

}  // namespace pairrl
