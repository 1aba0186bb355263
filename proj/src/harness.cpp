#include "pairrl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "pairrl/checkpoint.hpp"
#include "pairrl/errors.hpp"

namespace pairrl {

Policy make_policy(const Tabletop& env, ParamSet params) {
  const bool gaussian = params.count("actor.log_std") > 0;
  Policy p;
  p.config = PolicyConfig::for_env(env, gaussian ? HeadKind::gaussian : HeadKind::categorical);
  p.config.match_map = params.count("trunk.instr_proj") > 0;
  auto require = [&](const char* name) -> const Tensor& {
    auto it = params.find(name);
    if (it == params.end()) throw LoadError(std::string("checkpoint lacks parameter '") + name + "'");
    return it->second;
  };
  p.config.hidden = require("trunk.b1").cols();
  p.config.action_dim = require("actor.b").cols();
  const auto expected_head = gaussian ? ActionHead::continuous : ActionHead::discrete;
  if (env.config().head != expected_head) throw LoadError("checkpoint head does not match the environment");

  Rng rng = make_rng(0, 0);
  const ParamSet reference = init_policy(p.config, rng);
  if (reference.size() != params.size()) throw LoadError("checkpoint has unexpected parameters");
  for (const auto& [name, t] : reference) {
    auto it = params.find(name);
    if (it == params.end()) throw LoadError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) throw LoadError("parameter '" + name + "' has the wrong shape");
  }
  p.params = std::move(params);
  return p;
}

Policy load_policy(const Tabletop& env, const std::filesystem::path& checkpoint) {
  return make_policy(env, load_checkpoint(checkpoint));
}

double evaluate(const Policy& policy, const Tabletop& env, const ScenarioSpec& scenario, int n_episodes,
                std::uint64_t seed) {
  if (n_episodes < 1) throw ContractError("n_episodes must be at least 1");
  constexpr int kBatch = 64;
  const ActionHead head = env.config().head;
  int successes = 0;
  for (int start = 0; start < n_episodes; start += kBatch) {
    const int m = std::min(kBatch, n_episodes - start);
    std::vector<SceneState> states(static_cast<std::size_t>(m));
    std::vector<Observation> obs(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(start + i));
      auto [s, o] = env.reset(scenario, rng);
      states[std::size_t(i)] = std::move(s);
      obs[std::size_t(i)] = std::move(o);
    }
    std::vector<std::size_t> active(static_cast<std::size_t>(m));
    std::iota(active.begin(), active.end(), std::size_t{0});
    while (!active.empty()) {
      std::vector<const Observation*> ptrs;
      ptrs.reserve(active.size());
      for (auto i : active) ptrs.push_back(&obs[i]);
      const auto ev = evaluate_policy(policy.config, policy.params, stack_features(ptrs));
      std::vector<std::size_t> still;
      for (std::size_t k = 0; k < active.size(); ++k) {
        const auto i = active[k];
        const auto a = mode(ev.dists[k]);
        const std::vector<float> raw(a.begin(), a.end());
        auto res = env.step(states[i], to_action(head, raw));
        states[i] = std::move(res.state);
        obs[i] = std::move(res.obs);
        if (res.done) {
          if (states[i].succeeded) ++successes;
        } else {
          still.push_back(i);
        }
      }
      active = std::move(still);
    }
  }
  return static_cast<double>(successes) / static_cast<double>(n_episodes);
}

void finalize_cells(SuiteCells& c) {
  if (c.clutter.empty()) throw ContractError("clutter cells missing");
  double total = 0.0;
  for (const auto& [n, v] : c.clutter) total += v;
  c.clutter_mean = total / static_cast<double>(c.clutter.size());
  c.avg = (c.texture + c.lighting + c.pose + c.clutter_mean) / 4.0;
}

SuiteCells mean_cells(const std::vector<SuiteCells>& cells) {
  if (cells.empty()) throw ContractError("no cells to average");
  SuiteCells m;
  const double k = static_cast<double>(cells.size());
  for (const auto& c : cells) {
    m.texture += c.texture / k;
    m.lighting += c.lighting / k;
    m.pose += c.pose / k;
    for (const auto& [n, v] : c.clutter) m.clutter[n] += v / k;
  }
  finalize_cells(m);
  return m;
}

EvalReport run_ood_suite(const Policy& policy, const Tabletop& env, const std::vector<std::uint64_t>& seeds,
                         int episodes) {
  if (seeds.empty()) throw ContractError("run_ood_suite needs at least one seed");
  const auto& splits = env.config().splits;
  auto checked = [&](ScenarioSpec s) {
    check_split_discipline(s, splits);
    return s;
  };
  const auto texture = checked(make_scenario(ScenarioKind::texture_ood, splits));
  const auto lighting = checked(make_scenario(ScenarioKind::lighting_ood, splits));
  const auto pose = checked(make_scenario(ScenarioKind::pose_ood, splits));
  std::vector<ScenarioSpec> clutter;
  for (int n : kClutterLevels) clutter.push_back(checked(make_scenario(ScenarioKind::clutter_ood, splits, n)));

  EvalReport r;
  for (auto seed : seeds) {
    SuiteCells c;
    c.texture = evaluate(policy, env, texture, episodes, seed);
    c.lighting = evaluate(policy, env, lighting, episodes, seed);
    c.pose = evaluate(policy, env, pose, episodes, seed);
    for (std::size_t i = 0; i < clutter.size(); ++i) {
      c.clutter[kClutterLevels[i]] = evaluate(policy, env, clutter[i], episodes, seed);
    }
    finalize_cells(c);
    r.seeds.push_back(seed);
    r.per_seed.push_back(c);
  }
  r.mean = mean_cells(r.per_seed);
  return r;
}

EvalReport aggregate_reports(const std::vector<EvalReport>& runs, const std::vector<std::uint64_t>& run_seeds) {
  if (runs.empty() || runs.size() != run_seeds.size()) throw ContractError("one seed per run required");
  EvalReport r;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    r.seeds.push_back(run_seeds[i]);
    r.per_seed.push_back(runs[i].mean);
  }
  r.mean = mean_cells(r.per_seed);
  return r;
}

void attach_baseline(EvalReport& report, const EvalReport& baseline, const std::string& name) {
  report.baseline_ref = name;
  report.delta_avg = report.mean.avg - baseline.mean.avg;
}

double round_sig6(double v) {
  if (v == 0.0 || !std::isfinite(v)) return v;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return std::strtod(buf, nullptr);
}

namespace {

nlohmann::json cells_json(const SuiteCells& c) {
  nlohmann::json clutter = nlohmann::json::object();
  for (const auto& [n, v] : c.clutter) clutter[std::to_string(n)] = v;
  clutter["mean"] = c.clutter_mean;
  return nlohmann::json{{"texture", c.texture}, {"lighting", c.lighting}, {"pose", c.pose}, {"clutter", clutter}};
}

void round_floats(nlohmann::json& j) {
  if (j.is_number_float()) {
    j = round_sig6(j.get<double>());
  } else if (j.is_structured()) {
    for (auto& child : j) round_floats(child);
  }
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["axes"] = cells_json(r.mean);
  j["avg"] = r.mean.avg;
  j["per_seed"] = nlohmann::json::array();
  for (std::size_t i = 0; i < r.per_seed.size(); ++i) {
    j["per_seed"].push_back(
        nlohmann::json{{"seed", r.seeds.at(i)}, {"axes", cells_json(r.per_seed[i])}, {"avg", r.per_seed[i].avg}});
  }
  j["baseline_ref"] = r.baseline_ref.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.baseline_ref);
  j["delta_avg"] = r.delta_avg ? nlohmann::json(*r.delta_avg) : nlohmann::json(nullptr);
  return j;
}

std::string dump_json(const nlohmann::json& j) {
  nlohmann::json copy = j;
  round_floats(copy);
  return copy.dump(2) + "\n";
}

CurveRow make_curve_row(std::string method, double x, std::vector<double> values) {
  if (values.empty()) throw ContractError("curve row needs values");
  CurveRow row;
  row.method = std::move(method);
  row.x = x;
  const double k = static_cast<double>(values.size());
  row.mean = std::accumulate(values.begin(), values.end(), 0.0) / k;
  double var = 0.0;
  for (double v : values) var += (v - row.mean) * (v - row.mean);
  row.stddev = std::sqrt(var / k);
  row.seed_values = std::move(values);
  return row;
}

std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "method,x,mean,std,seed_values\n";
  for (const auto& r : rows) {
    os << r.method << ',' << fmt6(r.x) << ',' << fmt6(r.mean) << ',' << fmt6(r.stddev) << ',';
    for (std::size_t i = 0; i < r.seed_values.size(); ++i) os << (i ? ";" : "") << fmt6(r.seed_values[i]);
    os << '\n';
  }
  return os.str();
}

std::vector<CurveRow> run_clutter_curve(const std::vector<NamedRuns>& methods, const Tabletop& env, int episodes,
                                        std::uint64_t eval_seed) {
  const auto& splits = env.config().splits;
  std::vector<CurveRow> rows;
  for (const auto& m : methods) {
    if (m.runs.empty()) throw ContractError("method '" + m.method + "' has no runs");
    for (int n : kClutterLevels) {
      const auto sc = make_scenario(ScenarioKind::clutter_ood, splits, n);
      check_split_discipline(sc, splits);
      std::vector<double> values;
      for (const auto& p : m.runs) values.push_back(evaluate(p, env, sc, episodes, eval_seed));
      rows.push_back(make_curve_row(m.method, n, std::move(values)));
    }
  }
  return rows;
}

std::vector<Policy> train_runs(const TrainConfig& cfg, const Tabletop& env, const std::vector<std::uint64_t>& seeds,
                               std::vector<TrainResult>* results) {
  std::vector<Policy> out;
  for (auto seed : seeds) {
    TrainConfig c = cfg;
    c.seed = seed;
    auto r = train(c, env);
    if (r.aborted) throw NumericError("training seed " + std::to_string(seed) + " aborted: " + r.error);
    Policy p;
    p.config = r.policy;
    p.params = r.params;
    out.push_back(std::move(p));
    if (results) results->push_back(std::move(r));
  }
  return out;
}

std::vector<AlphaSweepRow> run_alpha_sweep(const TrainConfig& cfg, const Tabletop& env,
                                           const std::vector<double>& alphas, const std::vector<std::uint64_t>& seeds,
                                           int episodes, std::uint64_t eval_seed) {
  std::vector<AlphaSweepRow> rows;
  for (double a : alphas) {
    TrainConfig c = cfg;
    c.alpha = a;
    c.beta = 0.0;
    const auto runs = train_runs(c, env, seeds);
    std::vector<EvalReport> reports;
    for (const auto& p : runs) reports.push_back(run_ood_suite(p, env, {eval_seed}, episodes));
    rows.push_back(AlphaSweepRow{a, aggregate_reports(reports, seeds)});
  }
  if (!rows.empty()) {
    for (auto& r : rows) attach_baseline(r.report, rows.front().report, "alpha=" + fmt6(rows.front().alpha));
  }
  return rows;
}

std::string alpha_sweep_csv(const std::vector<AlphaSweepRow>& rows) {
  std::ostringstream os;
  os << "alpha,axis,success,seed\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.report.per_seed.size(); ++i) {
      const auto& c = row.report.per_seed[i];
      const auto seed = row.report.seeds[i];
      const std::pair<const char*, double> cells[] = {
          {"texture", c.texture}, {"lighting", c.lighting}, {"pose", c.pose}, {"clutter", c.clutter_mean}, {"avg", c.avg}};
      for (const auto& [axis, v] : cells) os << fmt6(row.alpha) << ',' << axis << ',' << fmt6(v) << ',' << seed << '\n';
    }
  }
  return os.str();
}

std::vector<int> viewpoint_eval_angles(const SplitTables& splits) {
  std::vector<int> angles = splits.camera_train_deg;
  angles.insert(angles.end(), splits.camera_eval_deg.begin(), splits.camera_eval_deg.end());
  std::sort(angles.begin(), angles.end());
  return angles;
}

ViewpointCurve viewpoint_curve(const std::string& method, const std::vector<Policy>& runs, const Tabletop& env,
                               int episodes, std::uint64_t eval_seed) {
  if (runs.empty()) throw ContractError("viewpoint curve needs runs");
  const auto& splits = env.config().splits;
  ViewpointCurve curve;
  double id_total = 0.0, ood_total = 0.0;
  for (int angle : viewpoint_eval_angles(splits)) {
    const auto sc = make_scenario(ScenarioKind::camera, splits, 1, angle);
    std::vector<double> values;
    for (const auto& p : runs) values.push_back(evaluate(p, env, sc, episodes, eval_seed));
    auto row = make_curve_row(method, angle, std::move(values));
    const bool ood = std::find(splits.camera_eval_deg.begin(), splits.camera_eval_deg.end(), angle) !=
                     splits.camera_eval_deg.end();
    (ood ? ood_total : id_total) += row.mean;
    curve.rows.push_back(std::move(row));
  }
  curve.id_mean = id_total / static_cast<double>(splits.camera_train_deg.size());
  curve.ood_mean = ood_total / static_cast<double>(splits.camera_eval_deg.size());
  return curve;
}

ViewpointCurve run_viewpoint_extrapolation(const TrainConfig& cfg, const Tabletop& env,
                                           const std::vector<std::uint64_t>& seeds, int episodes,
                                           std::uint64_t eval_seed, const std::string& method) {
  TrainConfig c = cfg;
  c.preserving_mode = PreservingMode::viewpoint;
  c.vary_camera = true;
  return viewpoint_curve(method, train_runs(c, env, seeds), env, episodes, eval_seed);
}

}  // namespace pairrl
