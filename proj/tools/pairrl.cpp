#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "pairrl/checkpoint.hpp"
#include "pairrl/errors.hpp"
#include "pairrl/harness.hpp"

namespace fs = std::filesystem;
using namespace pairrl;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string checkpoint;
  std::optional<double> alpha, beta, clip_c;
  int episodes = kDefaultEvalEpisodes;
  std::string scenario = "train";
  int n_distractors = 2;
  double camera_deg = 0.0;
  int n_seeds = 3;
  std::optional<int> updates;
};

TrainConfig load_config(const Options& o) {
  TrainConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot open config '" + o.config_path + "'");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    cfg = config_from_json(j, cfg);
  }
  if (o.seed) cfg.seed = *o.seed;
  if (o.alpha) cfg.alpha = *o.alpha;
  if (o.beta) cfg.beta = *o.beta;
  if (o.clip_c) cfg.sens_clip = *o.clip_c;
  if (o.updates) cfg.total_updates = *o.updates;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

std::vector<std::uint64_t> seed_list(const Options& o, std::uint64_t base) {
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < o.n_seeds; ++i) seeds.push_back(base + static_cast<std::uint64_t>(i));
  return seeds;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  const fs::path out = o.out;
  fs::create_directories(out);
  write_file(out / "config.json", config_to_json(cfg).dump(2) + "\n");
  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  TrainHooks hooks;
  hooks.on_update = [&](const UpdateMetrics& m) {
    metrics << metrics_line(m) << '\n';
    metrics.flush();
  };
  const auto r = train(cfg, env, hooks);
  save_checkpoint(out / "final.ckpt", r.params);
  if (r.aborted) {
    std::cerr << "training aborted: " << r.error << " (last good parameters saved)\n";
    return 1;
  }
  std::cout << "wrote " << (out / "final.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  const auto policy = load_policy(env, o.checkpoint);
  const auto kind = parse_scenario_kind(o.scenario);
  const int n = kind == ScenarioKind::clutter_ood ? o.n_distractors : 1;
  const auto sc = make_scenario(kind, env.config().splits, n, o.camera_deg);
  check_split_discipline(sc, env.config().splits);
  const double rate = evaluate(policy, env, sc, o.episodes, cfg.seed);
  nlohmann::json j{{"scenario", scenario_to_json(sc)}, {"episodes", o.episodes}, {"seed", cfg.seed}, {"success_rate", rate}};
  const auto text = dump_json(j);
  write_file(fs::path(o.out) / "eval.json", text);
  std::cout << text;
  return 0;
}

int cmd_suite(const Options& o) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  const auto policy = load_policy(env, o.checkpoint);
  auto report = run_ood_suite(policy, env, seed_list(o, cfg.seed), o.episodes);
  attach_baseline(report, report, "self");
  const auto text = dump_json(report_to_json(report));
  write_file(fs::path(o.out) / "report.json", text);
  std::cout << text;
  return 0;
}

int cmd_sweep_alpha(const Options& o) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  const auto rows = run_alpha_sweep(cfg, env, {0.0, 1.0, 2.0, 4.0}, seed_list(o, cfg.seed), o.episodes, cfg.seed);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(nlohmann::json{{"alpha", r.alpha}, {"report", report_to_json(r.report)}});
  write_file(fs::path(o.out) / "alpha_sweep.json", dump_json(j));
  write_file(fs::path(o.out) / "alpha_sweep.csv", alpha_sweep_csv(rows));
  std::cout << alpha_sweep_csv(rows);
  return 0;
}

int cmd_clutter_curve(const Options& o, const std::vector<std::string>& methods) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  std::vector<NamedRuns> runs;
  for (const auto& spec : methods) {
    // method=ckpt1,ckpt2,...
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--method expects NAME=CKPT[,CKPT...]");
    NamedRuns nr;
    nr.method = spec.substr(0, eq);
    std::stringstream ss(spec.substr(eq + 1));
    for (std::string path; std::getline(ss, path, ',');) nr.runs.push_back(load_policy(env, path));
    runs.push_back(std::move(nr));
  }
  const auto csv = curve_csv(run_clutter_curve(runs, env, o.episodes, cfg.seed));
  write_file(fs::path(o.out) / "clutter_curve.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_viewpoint(const Options& o) {
  const auto cfg = load_config(o);
  const Tabletop env(env_config_for(cfg));
  const auto seeds = seed_list(o, cfg.seed);
  TrainConfig base = cfg;
  base.alpha = 0.0;
  base.beta = 0.0;
  base.vary_camera = true;
  base.preserving_mode = PreservingMode::viewpoint;
  const auto baseline = run_viewpoint_extrapolation(base, env, seeds, o.episodes, cfg.seed, "ppo");
  const auto ours = run_viewpoint_extrapolation(cfg, env, seeds, o.episodes, cfg.seed, "viewpoint");
  auto rows = baseline.rows;
  rows.insert(rows.end(), ours.rows.begin(), ours.rows.end());
  nlohmann::json j{{"ppo", {{"id_mean", baseline.id_mean}, {"ood_mean", baseline.ood_mean}}},
                   {"viewpoint", {{"id_mean", ours.id_mean}, {"ood_mean", ours.ood_mean}}}};
  write_file(fs::path(o.out) / "viewpoint.csv", curve_csv(rows));
  write_file(fs::path(o.out) / "viewpoint.json", dump_json(j));
  std::cout << curve_csv(rows);
  return 0;
}

int cmd_make_splits(const Options& o) {
  const auto cfg = load_config(o);
  const auto s = build_splits(cfg.split_seed);
  nlohmann::json lighting = nlohmann::json::array();
  for (std::size_t i = 0; i < s.lighting.size(); ++i) {
    const auto& l = s.lighting[i];
    lighting.push_back(nlohmann::json{{"id", i}, {"gain", l.gain}, {"bias", l.bias}});
  }
  nlohmann::json j{{"split_seed", cfg.split_seed},
                   {"texture_train", s.texture_train},
                   {"texture_eval", s.texture_eval},
                   {"category_train", s.category_train},
                   {"category_eval", s.category_eval},
                   {"lighting_train", s.lighting_train},
                   {"lighting_eval", s.lighting_eval},
                   {"camera_train_deg", s.camera_train_deg},
                   {"camera_eval_deg", s.camera_eval_deg},
                   {"lighting", lighting}};
  const auto text = dump_json(j);
  write_file(fs::path(o.out) / "splits.json", text);
  std::cout << text;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PAIR-VLA desk-scale trainer and evaluation harness"};
  app.require_subcommand(1);
  Options o;
  std::vector<std::string> methods;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config mirroring TrainConfig")->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Training / evaluation seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--alpha", o.alpha, "Invariance coefficient");
    sub->add_option("--beta", o.beta, "Sensitivity coefficient");
    sub->add_option("--clip-c", o.clip_c, "Sensitivity clip");
    sub->add_option("--episodes", o.episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
    sub->add_option("--updates", o.updates, "Override total_updates")->check(CLI::NonNegativeNumber);
  };

  auto* train_cmd = app.add_subcommand("train", "Train a policy; writes final.ckpt and metrics.jsonl");
  add_common(train_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "Success rate of a checkpoint on one scenario");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", o.checkpoint)->required();
  eval_cmd->add_option("--scenario", o.scenario, "train|texture_ood|lighting_ood|pose_ood|clutter_ood|camera");
  eval_cmd->add_option("--distractors", o.n_distractors, "Distractor count for clutter_ood");
  eval_cmd->add_option("--camera-deg", o.camera_deg, "Camera angle for camera scenarios");
  auto* suite_cmd = app.add_subcommand("suite", "OOD suite report for a checkpoint");
  add_common(suite_cmd);
  suite_cmd->add_option("--checkpoint", o.checkpoint)->required();
  suite_cmd->add_option("--n-seeds", o.n_seeds, "Evaluation seeds")->check(CLI::PositiveNumber);
  auto* sweep_cmd = app.add_subcommand("sweep-alpha", "Train and evaluate alpha in {0,1,2,4} with beta=0");
  add_common(sweep_cmd);
  sweep_cmd->add_option("--n-seeds", o.n_seeds, "Training seeds per alpha")->check(CLI::PositiveNumber);
  auto* clutter_cmd = app.add_subcommand("clutter-curve", "Success vs distractor count");
  add_common(clutter_cmd);
  clutter_cmd->add_option("--method", methods, "NAME=CKPT[,CKPT...]")->required();
  auto* vp_cmd = app.add_subcommand("viewpoint", "Viewpoint extrapolation against a PPO baseline");
  add_common(vp_cmd);
  vp_cmd->add_option("--n-seeds", o.n_seeds, "Training seeds per method")->check(CLI::PositiveNumber);
  auto* splits_cmd = app.add_subcommand("make-splits", "Write the split tables");
  add_common(splits_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*suite_cmd) return cmd_suite(o);
    if (*sweep_cmd) return cmd_sweep_alpha(o);
    if (*clutter_cmd) return cmd_clutter_curve(o, methods);
    if (*vp_cmd) return cmd_viewpoint(o);
    if (*splits_cmd) return cmd_make_splits(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
