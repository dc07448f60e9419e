// flowplan — one binary for the whole pipeline: generate datasets, train
// velocity nets, plan with guidance, run the stitching / avoidance
// benchmarks, probe checkpoint series, and redraw plots from saved CSVs.
//
// Conventions shared by every subcommand:
//   * --config loads `key = value` lines, --set key=value and the named
//     flags override it (in that order); all three funnel through the same
//     validated assignment, so a bad value fails identically everywhere.
//   * outputs land in --out-dir (created on demand); a <command>_summary.json
//     is written there and echoed to stdout.
//   * numeric CLI values are in env units; CSVs round-trip exactly.
//   * exit 0 ok, 2 bad usage/config/input, 3 numeric failure (NaN loss or
//     diverged sampling).

#include <algorithm>
#include <array>
#include <charconv>
#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fp/bench/bench.hpp"
#include "fp/bench/report.hpp"
#include "fp/common/error.hpp"
#include "fp/common/rng.hpp"
#include "fp/store/store.hpp"
#include "fp/world/env.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace fp;

namespace {

// ---------------------------------------------------------------------------
// small helpers
// ---------------------------------------------------------------------------

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  size_t b = s.find_last_not_of(" \t");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

std::vector<double> parse_num_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= s.size()) {
    size_t comma = s.find(',', pos);
    if (comma == std::string::npos) comma = s.size();
    const std::string cell = trim(s.substr(pos, comma - pos));
    double v = 0.0;
    auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc{} || p != cell.data() + cell.size())
      throw ConfigError(what + " wants comma-separated numbers, got '" + s + "'");
    out.push_back(v);
    pos = comma + 1;
  }
  return out;
}

int64_t parse_step(const std::string& cell) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc{} || p != cell.data() + cell.size())
    throw IoError("expected a step number, got '" + cell + "'");
  return v;
}

world::Obstacle parse_obstacle(const std::string& s) {
  const std::vector<double> v = parse_num_list(s, "--obstacle");
  if (v.size() != 3)
    throw ConfigError("--obstacle wants cx,cy,r (got '" + s + "')");
  return {v[0], v[1], v[2]};
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

std::string hex64(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
  return buf;
}

/// Write the summary next to the other outputs and echo it to stdout.
void emit_summary(const std::string& out_dir, const std::string& name, const json& j) {
  const std::string text = j.dump(2) + "\n";
  store::write_file_atomic(join_path(out_dir, name), text);
  std::fputs(text.c_str(), stdout);
}

nd::Array norm_row(const world::NormStats& stats, const std::vector<double>& env_units) {
  nd::Array r({static_cast<int>(env_units.size())});
  for (size_t d = 0; d < env_units.size(); ++d)
    r.data[d] = stats.normalize(env_units[d], static_cast<int>(d));
  return r;
}

std::vector<double> parse_state(const std::string& s, const std::string& what, int dim) {
  std::vector<double> v = parse_num_list(s, what);
  if (static_cast<int>(v.size()) != dim)
    throw ConfigError(what + " wants " + std::to_string(dim) +
                      " comma-separated values for this env (got " +
                      std::to_string(v.size()) + ")");
  return v;
}

/// Midline task of the straight-dataset protocol; the default probe task.
std::vector<double> straight_midline(const world::Env& env, bool goal) {
  if (env.kind == world::EnvKind::PARTICLE)
    return goal ? std::vector<double>{1.0, 0.0, 0.0, 0.0}
                : std::vector<double>{-1.0, 0.0, 0.0, 0.0};
  return goal ? std::vector<double>{0.9, 0.0, 0.1, 0.0, 0.0, 0.0}
              : std::vector<double>{-0.9, 0.0, 0.1, 0.0, 0.0, 0.0};
}

std::string arm_label(int arm) {
  static const char* names[] = {"left", "right", "bottom", "top"};
  return arm >= 0 && arm < 4 ? names[arm] : "?";
}

flow::GuidanceSpec guidance_from(const store::RunConfig& cfg,
                                 std::vector<world::Obstacle> obstacles) {
  flow::GuidanceSpec g;
  g.obstacles = std::move(obstacles);
  g.collision_weight = cfg.collision_weight;
  g.smoothness_weight = cfg.smoothness_weight;
  g.guidance_scale = cfg.guidance_scale;
  g.bt_schedule = cfg.bt_schedule;
  return g;
}

// ---------------------------------------------------------------------------
// shared option state (one subcommand runs per invocation)
// ---------------------------------------------------------------------------

struct Opts {
  std::string config_path;
  std::vector<std::string> sets;  // --set key=value, applied before named flags
  std::string out_dir = "out";
  int jobs = 1;

  std::string data_path;             // train / bench-stitch
  std::vector<std::string> ckpts;    // plan / bench-* / probe
  std::string ckpt_dir;              // probe
  std::string resume_path;           // train
  std::string start_s, goal_s;       // plan / probe
  std::vector<std::string> obstacles_s;
  std::string radii_s = "0.05,0.1,0.15,0.2,0.25,0.3";
  bool split = false;
  int batches = 8;
  int bench_batch = 64;
  int trials = 50;
  int probe_trials = 4;
  double goal_tol = 0.15;

  // key=value assignments collected from named config-backed flags, in
  // parse order (later flags win).
  std::vector<std::pair<std::string, std::string>> kvs;
};

/// Assemble the effective config: file, then --set pairs, then named flags.
store::RunConfig build_config(const Opts& o) {
  store::RunConfig cfg;
  if (!o.config_path.empty()) cfg = store::parse_config_file(o.config_path);
  for (const std::string& kv : o.sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set wants key=value (got '" + kv + "')");
    store::apply_kv(cfg, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  for (const auto& [key, value] : o.kvs) store::apply_kv(cfg, key, value);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

void cmd_gen_data(const store::RunConfig& cfg, const Opts& o) {
  world::Env env;
  env.kind = cfg.env;
  RandomStream base(cfg.seed);
  RandomStream data_rng = base.child("data");
  world::Dataset ds =
      cfg.dataset == "cross"
          ? world::make_cross_dataset(env, cfg.n_traj / 4, cfg.scheme, data_rng, cfg.horizon)
          : world::make_straight_dataset(env, cfg.n_traj, cfg.scheme, data_rng, cfg.horizon);

  const std::string path = join_path(o.out_dir, "dataset.fpds");
  store::save_dataset(path, ds, store::hash_config(cfg));

  std::map<std::string, int> modes;
  for (const world::Trajectory& tr : ds.trajs) {
    const std::string key = tr.start_arm >= 0
                                ? arm_label(tr.start_arm) + "->" + arm_label(tr.end_arm)
                                : std::string("straight");
    ++modes[key];
  }
  RandomStream probe_rng = base.child("probe");
  const double xcorr =
      world::noise_cross_correlation(cfg.scheme, env.control_dim(), 10000, probe_rng);

  json j;
  j["command"] = "gen-data";
  j["env"] = world::env_name(cfg.env);
  j["dataset"] = cfg.dataset;
  j["scheme"] = world::augment_name(cfg.scheme.kind);
  j["n_traj"] = ds.trajs.size();
  j["horizon"] = ds.T;
  j["state_dim"] = ds.D;
  j["mode_counts"] = modes;
  j["stats"] = {{"lo", ds.stats.lo}, {"hi", ds.stats.hi}};
  j["noise_cross_correlation"] = xcorr;
  j["fingerprint"] = hex64(store::dataset_fingerprint(ds));
  j["files"] = {"dataset.fpds"};
  emit_summary(o.out_dir, "gen_data_summary.json", j);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

void cmd_train(store::RunConfig cfg, const Opts& o) {
  world::Dataset ds = store::load_dataset(o.data_path);
  // The dataset is the source of truth for what it was: adopt its env,
  // horizon and scheme so the checkpoint's recorded config is the effective
  // one, not whatever the flags happened to default to.
  cfg.env = ds.env.kind;
  cfg.horizon = ds.T;
  cfg.scheme = ds.scheme;
  cfg.dataset = !ds.trajs.empty() && ds.trajs.front().start_arm >= 0 ? "cross" : "straight";
  cfg.validate();

  model::NetConfig nc = cfg.net_config();
  nc.state_dim = ds.D;
  RandomStream base(cfg.seed);
  RandomStream init_rng = base.child("init");
  model::VelocityNet net = model::VelocityNet::init(nc, init_rng);
  flow::validate_training(net, ds, cfg.split_prob);

  nd::AdamState adam;
  adam.lr = cfg.lr;
  int64_t start_step = 0;
  const uint64_t fprint = store::dataset_fingerprint(ds);

  bench::CsvTable loss{{"step", "loss"}, {}};
  if (!o.resume_path.empty()) {
    const store::Checkpoint ck = store::load_checkpoint(o.resume_path);
    store::load_into(ck, net);
    if (ck.has_opt) adam = ck.opt;
    adam.lr = cfg.lr;  // the run's config always decides the rate
    start_step = ck.train_step;
    if (ck.dataset_fingerprint != 0 && ck.dataset_fingerprint != fprint)
      std::fprintf(stderr,
                   "warning: %s was trained on a different dataset (%s, this one is %s)\n",
                   o.resume_path.c_str(), hex64(ck.dataset_fingerprint).c_str(),
                   hex64(fprint).c_str());
    // Keep the already-logged rows so a resumed run reproduces the loss.csv
    // an uninterrupted run would have written.
    const std::string loss_path = join_path(o.out_dir, "loss.csv");
    if (fs::exists(loss_path)) {
      const bench::CsvTable prev = bench::read_csv(loss_path);
      for (const auto& row : prev.rows)
        if (parse_step(row.at(0)) <= start_step) loss.rows.push_back(row);
    }
  }
  if (cfg.train_steps <= start_step)
    throw ConfigError("train_steps (" + std::to_string(cfg.train_steps) +
                      ") is not past the resumed checkpoint's step " +
                      std::to_string(start_step));

  const world::DataContext ctx{ds.env, ds.stats};
  const uint64_t chash = store::hash_config(cfg);
  std::vector<std::string> ckpt_files;
  auto save_ck = [&](int64_t step, const std::string& name) {
    store::Checkpoint ck = store::make_checkpoint(net, ctx);
    ck.has_opt = true;
    ck.opt = adam;
    ck.train_step = step;
    ck.split_prob = cfg.split_prob;
    ck.dataset_fingerprint = fprint;
    ck.config_hash = chash;
    store::save_checkpoint(join_path(o.out_dir, name), ck);
  };
  auto flush_loss = [&] { bench::write_csv(join_path(o.out_dir, "loss.csv"), loss); };

  std::string last_good = o.resume_path;
  const RandomStream train_base = base.child("train");
  try {
    for (int64_t s = start_step + 1; s <= cfg.train_steps; ++s) {
      // Per-step child streams: step s draws the same batch whether the run
      // got here directly or through a resume.
      RandomStream srng = train_base.child(static_cast<uint64_t>(s));
      const double l = flow::train_step(net, ds, cfg.batch_size, cfg.split_prob, srng, adam);
      if (!std::isfinite(l))
        throw NumericError("loss is not finite at step " + std::to_string(s));
      loss.rows.push_back({std::to_string(s), bench::fmt_num(l)});
      if (cfg.ckpt_every > 0 && s % cfg.ckpt_every == 0 && s < cfg.train_steps) {
        char name[32];
        std::snprintf(name, sizeof name, "ckpt_%06lld.fpck", static_cast<long long>(s));
        save_ck(s, name);
        ckpt_files.push_back(name);
        last_good = name;
        flush_loss();
      }
    }
  } catch (const NumericError&) {
    flush_loss();
    if (last_good.empty())
      std::fprintf(stderr, "training aborted before any checkpoint was written\n");
    else
      std::fprintf(stderr, "training aborted; last good checkpoint: %s\n", last_good.c_str());
    throw;
  }
  save_ck(cfg.train_steps, "model.fpck");
  flush_loss();

  json j;
  j["command"] = "train";
  j["data"] = o.data_path;
  j["arch"] = model::arch_name(cfg.arch);
  j["conditioning"] = model::conditioning_name(cfg.conditioning);
  j["train_steps"] = cfg.train_steps;
  j["steps_run"] = cfg.train_steps - start_step;
  j["batch_size"] = cfg.batch_size;
  j["split_prob"] = cfg.split_prob;
  j["lr"] = cfg.lr;
  j["param_count"] = net.param_count();
  j["final_loss"] = loss.rows.empty() ? "" : loss.rows.back()[1];
  if (!o.resume_path.empty()) j["resumed_from"] = o.resume_path;
  j["dataset_fingerprint"] = hex64(fprint);
  j["config_hash"] = hex64(chash);
  json files = json::array({"model.fpck", "loss.csv"});
  for (const std::string& f : ckpt_files) files.push_back(f);
  j["files"] = files;
  emit_summary(o.out_dir, "train_summary.json", j);
}

// ---------------------------------------------------------------------------
// plan
// ---------------------------------------------------------------------------

void cmd_plan(const store::RunConfig& cfg, const Opts& o) {
  const store::Checkpoint ck = store::load_checkpoint(o.ckpts.at(0));
  const flow::Planner p{store::to_net(ck), ck.ctx};
  const world::Env& env = p.ctx.env;
  const int D = p.net.config.state_dim;

  const std::vector<double> start = parse_state(o.start_s, "--start", D);
  const std::vector<double> goal = parse_state(o.goal_s, "--goal", D);
  std::vector<world::Obstacle> obstacles;
  for (const std::string& s : o.obstacles_s) obstacles.push_back(parse_obstacle(s));

  const std::array<double, 2> spt = bench::task_point(start.data(), env);
  const std::array<double, 2> gpt = bench::task_point(goal.data(), env);
  for (const world::Obstacle& ob : obstacles) {
    if (world::sdf_circle(spt[0], spt[1], ob) < 0)
      std::fprintf(stderr, "warning: start lies inside the obstacle at (%g, %g); planning anyway\n",
                   ob.cx, ob.cy);
    if (world::sdf_circle(gpt[0], gpt[1], ob) < 0)
      std::fprintf(stderr, "warning: goal lies inside the obstacle at (%g, %g); planning anyway\n",
                   ob.cx, ob.cy);
  }

  flow::PlanRequest req;
  req.start = norm_row(p.ctx.stats, start);
  req.goal = norm_row(p.ctx.stats, goal);
  req.horizon = p.net.config.horizon;
  req.n_steps = cfg.n_steps;
  if (!obstacles.empty()) req.guidance = guidance_from(cfg, obstacles);
  req.inference_split = o.split;
  req.seed = cfg.seed;
  const flow::PlanResult res = flow::plan(p, req);

  bench::write_csv(join_path(o.out_dir, "traj.csv"), bench::trajs_table({res.traj}, env));
  if (!obstacles.empty())
    bench::write_csv(join_path(o.out_dir, "obstacles.csv"), bench::obstacles_table(obstacles));
  bench::svg_traj_overlay(join_path(o.out_dir, "traj.svg"), {res.traj}, obstacles, env, "plan");

  const int T = res.traj.horizon();
  double goal_dist = 0.0;
  for (int d = 0; d < env.pos_dims(); ++d) {
    const double diff = res.traj.states.at(T - 1, d) - goal[static_cast<size_t>(d)];
    goal_dist += diff * diff;
  }
  goal_dist = std::sqrt(goal_dist);

  json j;
  j["command"] = "plan";
  j["ckpt"] = o.ckpts.at(0);
  j["horizon"] = req.horizon;
  j["n_steps"] = cfg.n_steps;
  j["guidance_scale"] = obstacles.empty() ? 0.0 : cfg.guidance_scale;
  j["split"] = o.split;
  j["goal_distance"] = goal_dist;
  if (!obstacles.empty())
    j["min_sdf"] = world::min_traj_sdf(res.traj.states, obstacles, p.ctx);
  j["stats"] = {{"first_loop_steps", res.stats.first_loop_steps},
                {"second_loop_steps", res.stats.second_loop_steps},
                {"net_evals", res.stats.net_evals},
                {"clamp_calls", res.stats.clamp_calls},
                {"guidance_evals", res.stats.guidance_evals},
                {"split_used", res.stats.split_used}};
  json files = json::array({"traj.csv", "traj.svg"});
  if (!obstacles.empty()) files.push_back("obstacles.csv");
  j["files"] = files;
  emit_summary(o.out_dir, "plan_summary.json", j);
}

// ---------------------------------------------------------------------------
// bench-stitch
// ---------------------------------------------------------------------------

void cmd_bench_stitch(const store::RunConfig& cfg, const Opts& o) {
  const world::Dataset ds = store::load_dataset(o.data_path);
  std::vector<flow::Planner> planners;
  planners.reserve(o.ckpts.size());
  for (const std::string& path : o.ckpts) {
    const store::Checkpoint ck = store::load_checkpoint(path);
    planners.push_back({store::to_net(ck), ck.ctx});
  }

  std::vector<bench::StitchResult> results;
  for (const flow::Planner& p : planners) {
    // Every cell sees the same drawn tasks: the stream restarts per planner.
    results.push_back(bench::stitching_benchmark(p, ds, o.batches, o.bench_batch,
                                                 RandomStream(cfg.seed), cfg.n_steps, o.jobs));
  }
  bench::write_csv(join_path(o.out_dir, "stitch_samples.csv"), bench::stitch_table(results));
  bench::CsvTable table{{"config", "mean", "std"}, {}};
  for (const bench::StitchResult& r : results)
    table.rows.push_back({r.config, bench::fmt_num(r.mean), bench::fmt_num(r.stddev)});
  bench::write_csv(join_path(o.out_dir, "stitch_table.csv"), table);

  // A few example plans on novel pairs, drawn with the first planner, so the
  // numbers come with a picture.
  const std::vector<std::pair<int, int>> pairs = bench::unseen_pairs(ds);
  const flow::Planner& p0 = planners.front();
  const bench::PlanFn plan_fn = bench::make_plan_fn(p0, cfg.n_steps, false);
  const RandomStream ex_base = RandomStream(cfg.seed).child("examples");
  std::vector<world::Trajectory> examples;
  const int n_examples = std::min<int>(4, static_cast<int>(pairs.size()));
  for (int k = 0; k < n_examples; ++k) {
    const auto [a, b] = pairs[static_cast<size_t>(k)];
    const std::vector<double> sa = world::cross_arm_state(ds.env, a);
    const std::vector<double> sb = world::cross_arm_state(ds.env, b);
    world::Trajectory tr = plan_fn(norm_row(p0.ctx.stats, sa), norm_row(p0.ctx.stats, sb),
                                   nullptr, ex_base.child(static_cast<uint64_t>(k)).seed());
    tr.start_arm = a;
    tr.end_arm = b;
    examples.push_back(std::move(tr));
  }
  bench::write_csv(join_path(o.out_dir, "stitch_plans.csv"),
                    bench::trajs_table(examples, ds.env));
  bench::svg_traj_overlay(join_path(o.out_dir, "stitch.svg"), examples, {}, ds.env,
                           "plans on unseen arm pairs");

  json j;
  j["command"] = "bench-stitch";
  j["data"] = o.data_path;
  j["n_samples"] = o.batches * o.bench_batch;
  json rows = json::array();
  for (const bench::StitchResult& r : results)
    rows.push_back({{"config", r.config}, {"mean", r.mean}, {"std", r.stddev}});
  j["table"] = rows;
  j["files"] = {"stitch_samples.csv", "stitch_table.csv", "stitch_plans.csv", "stitch.svg"};
  emit_summary(o.out_dir, "bench_stitch_summary.json", j);
}

// ---------------------------------------------------------------------------
// bench-avoid
// ---------------------------------------------------------------------------

void cmd_bench_avoid(const store::RunConfig& cfg, const Opts& o) {
  const store::Checkpoint ck = store::load_checkpoint(o.ckpts.at(0));
  const flow::Planner p{store::to_net(ck), ck.ctx};
  const std::vector<double> radii = parse_num_list(o.radii_s, "--radii");

  struct Cell {
    const char* label;
    double scale;
    bool split;
  };
  const Cell cells[] = {{"unguided", 0.0, false},
                        {"guided", cfg.guidance_scale, false},
                        {"guided+split", cfg.guidance_scale, true}};
  std::vector<bench::AvoidResult> results;
  std::vector<std::string> labels;
  for (const Cell& c : cells) {
    flow::GuidanceSpec g = guidance_from(cfg, {});
    g.guidance_scale = c.scale;
    results.push_back(bench::avoid_sweep(p, g, radii, o.trials, c.split, RandomStream(cfg.seed),
                                         cfg.n_steps, o.goal_tol, o.jobs));
    labels.push_back(c.label);
  }
  bench::write_csv(join_path(o.out_dir, "avoid.csv"), bench::avoid_table(results, labels));
  bench::svg_rate_curves(join_path(o.out_dir, "avoid.svg"), results, labels,
                          "success vs obstacle radius");

  json j;
  j["command"] = "bench-avoid";
  j["ckpt"] = o.ckpts.at(0);
  j["trials_per_radius"] = o.trials;
  j["goal_tol"] = o.goal_tol;
  json rows = json::array();
  for (size_t i = 0; i < results.size(); ++i)
    rows.push_back({{"label", labels[i]},
                    {"guidance_scale", results[i].guidance_scale},
                    {"split", results[i].used_split},
                    {"max_reliable_radius", results[i].max_reliable_radius},
                    {"success", results[i].success}});
  j["cells"] = rows;
  j["files"] = {"avoid.csv", "avoid.svg"};
  emit_summary(o.out_dir, "bench_avoid_summary.json", j);
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

void cmd_probe(const store::RunConfig& cfg, const Opts& o) {
  std::vector<std::string> paths = o.ckpts;
  if (!o.ckpt_dir.empty()) {
    std::vector<std::string> found;
    for (const fs::directory_entry& e : fs::directory_iterator(o.ckpt_dir))
      if (e.path().extension() == ".fpck") found.push_back(e.path().string());
    std::sort(found.begin(), found.end());  // directory order is unspecified
    paths.insert(paths.end(), found.begin(), found.end());
  }
  if (paths.empty())
    throw ConfigError("probe wants --ckpt files or a --ckpt-dir containing .fpck files");

  std::vector<store::Checkpoint> cks;
  cks.reserve(paths.size());
  for (const std::string& path : paths) cks.push_back(store::load_checkpoint(path));
  std::vector<size_t> order(cks.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return cks[a].train_step < cks[b].train_step; });

  std::vector<flow::Planner> planners;
  planners.reserve(cks.size());
  std::vector<std::string> used;
  int64_t prev_step = -1;
  for (size_t idx : order) {
    if (cks[idx].train_step == prev_step) continue;  // e.g. model.fpck next to its twin
    prev_step = cks[idx].train_step;
    if (!planners.empty() && cks[idx].ctx.env.kind != planners.front().ctx.env.kind)
      throw ConfigError("probe checkpoints disagree on the env (" + paths[idx] + ")");
    planners.push_back({store::to_net(cks[idx]), cks[idx].ctx});
    used.push_back(paths[idx]);
  }
  std::vector<std::pair<int64_t, const flow::Planner*>> series;
  prev_step = -1;
  size_t next_planner = 0;
  for (size_t idx : order) {
    if (cks[idx].train_step == prev_step) continue;
    prev_step = cks[idx].train_step;
    series.emplace_back(prev_step, &planners[next_planner++]);
  }

  const world::Env& env = planners.front().ctx.env;
  const int D = planners.front().net.config.state_dim;
  const std::vector<double> start = o.start_s.empty() ? straight_midline(env, false)
                                                      : parse_state(o.start_s, "--start", D);
  const std::vector<double> goal =
      o.goal_s.empty() ? straight_midline(env, true) : parse_state(o.goal_s, "--goal", D);
  nd::Array start_env({D}), goal_env({D});
  std::copy(start.begin(), start.end(), start_env.data.begin());
  std::copy(goal.begin(), goal.end(), goal_env.data.begin());

  std::vector<world::Obstacle> obstacles;
  for (const std::string& s : o.obstacles_s) obstacles.push_back(parse_obstacle(s));
  if (obstacles.empty()) {
    const std::array<double, 2> a = bench::task_point(start.data(), env);
    const std::array<double, 2> b = bench::task_point(goal.data(), env);
    obstacles.push_back({0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.15});
  }
  const flow::GuidanceSpec task = guidance_from(cfg, obstacles);

  const std::vector<bench::CollapsePoint> points = bench::mode_collapse_probe(
      series, start_env, goal_env, task, cfg.n_steps, o.probe_trials, RandomStream(cfg.seed));
  bench::write_csv(join_path(o.out_dir, "collapse.csv"), bench::collapse_table(points));
  bench::svg_collapse_curves(join_path(o.out_dir, "collapse.svg"), points,
                              "bend / translate over training");

  // Dynamics-consistency of the newest model, guided vs unguided on the
  // same noise.
  const flow::Planner& last = *series.back().second;
  flow::PlanRequest req;
  req.start = norm_row(last.ctx.stats, start);
  req.goal = norm_row(last.ctx.stats, goal);
  req.horizon = last.net.config.horizon;
  req.n_steps = cfg.n_steps;
  req.guidance = task;
  req.seed = cfg.seed;
  const flow::PlanResult guided = flow::plan(last, req);
  req.guidance.reset();
  const flow::PlanResult unguided = flow::plan(last, req);
  const bench::ConsistencyStats cg = bench::consistency_probe(guided.traj, env);
  const bench::ConsistencyStats cu = bench::consistency_probe(unguided.traj, env);

  json j;
  j["command"] = "probe";
  j["checkpoints"] = used;
  j["steps"] = [&] {
    json a = json::array();
    for (const auto& [step, planner] : series) a.push_back(step);
    return a;
  }();
  j["trials"] = o.probe_trials;
  json pts = json::array();
  for (const bench::CollapsePoint& pt : points)
    pts.push_back({{"step", pt.step}, {"bend", pt.bend}, {"translate", pt.translate}});
  j["collapse"] = pts;
  j["consistency"] = {
      {"guided", {{"max_jump", cg.max_jump}, {"dyn_residual", cg.dyn_residual}}},
      {"unguided", {{"max_jump", cu.max_jump}, {"dyn_residual", cu.dyn_residual}}}};
  j["files"] = {"collapse.csv", "collapse.svg"};
  emit_summary(o.out_dir, "probe_summary.json", j);
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

void plot_loss(const std::string& csv_path, const std::string& svg_path) {
  const bench::CsvTable t = bench::read_csv(csv_path);
  if (t.header.size() < 2) throw IoError(csv_path + ": expected step,loss columns");
  std::vector<std::array<double, 2>> pts;
  const size_t stride = t.rows.size() > 1000 ? (t.rows.size() + 999) / 1000 : 1;
  for (size_t i = 0; i < t.rows.size(); i += stride) {
    const std::vector<double> step = parse_num_list(t.rows[i][0], "loss.csv step");
    const std::vector<double> loss = parse_num_list(t.rows[i][1], "loss.csv loss");
    pts.push_back({step[0], loss[0]});
  }
  if (pts.empty()) throw IoError(csv_path + ": no rows");
  double x_lo = pts.front()[0], x_hi = pts.back()[0], y_hi = 0.0;
  for (const auto& pt : pts) y_hi = std::max(y_hi, pt[1]);
  if (y_hi <= 0.0) y_hi = 1.0;
  bench::SvgCanvas canvas(x_lo, 0.0, x_hi, 1.05 * y_hi, 640, 440);
  canvas.frame("training loss");
  canvas.polyline(pts, "#4c78a8", 1.5);
  canvas.text_px(300.0, 470.0, "step");
  canvas.text_px(6.0, 230.0, "loss");
  canvas.save(svg_path);
}

void cmd_plot(const Opts& o) {
  auto in = [&](const char* name) { return join_path(o.out_dir, name); };
  std::vector<std::string> made;

  if (fs::exists(in("traj.csv"))) {
    const auto [trajs, kind] = bench::trajs_from_table(bench::read_csv(in("traj.csv")));
    world::Env env;
    env.kind = kind;
    std::vector<world::Obstacle> obstacles;
    if (fs::exists(in("obstacles.csv")))
      obstacles = bench::obstacles_from_table(bench::read_csv(in("obstacles.csv")));
    bench::svg_traj_overlay(in("traj.svg"), trajs, obstacles, env, "plan");
    made.push_back("traj.svg");
  }
  if (fs::exists(in("stitch_plans.csv"))) {
    const auto [trajs, kind] = bench::trajs_from_table(bench::read_csv(in("stitch_plans.csv")));
    world::Env env;
    env.kind = kind;
    bench::svg_traj_overlay(in("stitch.svg"), trajs, {}, env, "plans on unseen arm pairs");
    made.push_back("stitch.svg");
  }
  if (fs::exists(in("avoid.csv"))) {
    const auto [results, labels] = bench::avoid_from_table(bench::read_csv(in("avoid.csv")));
    bench::svg_rate_curves(in("avoid.svg"), results, labels, "success vs obstacle radius");
    made.push_back("avoid.svg");
  }
  if (fs::exists(in("collapse.csv"))) {
    const std::vector<bench::CollapsePoint> points =
        bench::collapse_from_table(bench::read_csv(in("collapse.csv")));
    bench::svg_collapse_curves(in("collapse.svg"), points, "bend / translate over training");
    made.push_back("collapse.svg");
  }
  if (fs::exists(in("loss.csv"))) {
    plot_loss(in("loss.csv"), in("loss.svg"));
    made.push_back("loss.svg");
  }
  if (made.empty()) throw ConfigError("no plottable CSVs in '" + o.out_dir + "'");

  json j;
  j["command"] = "plot";
  j["files"] = made;
  emit_summary(o.out_dir, "plot_summary.json", j);
}

// ---------------------------------------------------------------------------
// wiring
// ---------------------------------------------------------------------------

/// Register a flag that assigns a config key (file < --set < flags).
void kv_flag(CLI::App* sub, Opts& o, const std::string& flag, const std::string& key,
             const std::string& help) {
  sub->add_option_function<std::string>(
      flag, [&o, key](const std::string& v) { o.kvs.emplace_back(key, v); }, help);
}

void shared_flags(CLI::App* sub, Opts& o) {
  sub->add_option("--config", o.config_path, "key = value config file");
  sub->add_option("--set", o.sets, "override one config key (key=value, repeatable)");
  sub->add_option("--out-dir", o.out_dir, "output directory (default out)");
  kv_flag(sub, o, "--seed", "seed", "RNG seed (default 0)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowplan: flow-matching trajectory planning toolkit"};
  app.require_subcommand(1);
  Opts o;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a kinematic dataset");
  shared_flags(gen, o);
  kv_flag(gen, o, "--env", "env", "particle | arm");
  kv_flag(gen, o, "--dataset", "dataset", "cross | straight");
  kv_flag(gen, o, "--scheme", "scheme",
          "augmentation: none | action_noise | same_noise | random_pos | random_forces");
  kv_flag(gen, o, "--n", "n_traj", "trajectory count (cross: multiple of 4)");
  kv_flag(gen, o, "--noise-std", "noise_std", "control-noise std, fraction of the control limit");
  kv_flag(gen, o, "--horizon", "horizon", "steps per trajectory (default 64)");
  gen->footer("writes dataset.fpds and gen_data_summary.json");

  CLI::App* train = app.add_subcommand("train", "train a velocity net on a dataset");
  shared_flags(train, o);
  train->add_option("--data", o.data_path, "dataset file (.fpds)")->required();
  train->add_option("--resume", o.resume_path, "checkpoint to continue from (.fpck)");
  kv_flag(train, o, "--arch", "arch", "unet | transformer");
  kv_flag(train, o, "--conditioning", "conditioning", "inpaint | direct");
  kv_flag(train, o, "--split-prob", "split_prob", "half-length crop batch probability");
  kv_flag(train, o, "--steps", "train_steps", "total optimizer steps");
  kv_flag(train, o, "--batch-size", "batch_size", "samples per step");
  kv_flag(train, o, "--lr", "lr", "Adam learning rate");
  kv_flag(train, o, "--ckpt-every", "ckpt_every", "periodic checkpoint interval");
  train->footer(
      "writes model.fpck, periodic ckpt_NNNNNN.fpck, loss.csv (step,loss) and "
      "train_summary.json; a NaN loss aborts with exit 3 keeping the last good checkpoint");

  CLI::App* plan = app.add_subcommand("plan", "plan one trajectory with a trained model");
  shared_flags(plan, o);
  plan->add_option("--ckpt", o.ckpts, "checkpoint (.fpck)")->required();
  plan->add_option("--start", o.start_s, "start state, comma-separated env units")->required();
  plan->add_option("--goal", o.goal_s, "goal state, comma-separated env units")->required();
  plan->add_option("--obstacle", o.obstacles_s, "cx,cy,r (repeatable; enables guidance)");
  plan->add_flag("--split", o.split, "refine with the split stage");
  kv_flag(plan, o, "--guidance-scale", "guidance_scale", "guidance strength (0 = off)");
  kv_flag(plan, o, "--n-steps", "n_steps", "Euler steps (default 10)");
  kv_flag(plan, o, "--bt", "bt_schedule", "guidance schedule: one_minus_t | ot_ratio");
  plan->footer(
      "writes traj.csv (traj,t,<state dims>), obstacles.csv (cx,cy,r) when any, traj.svg "
      "and plan_summary.json");

  CLI::App* bstitch = app.add_subcommand("bench-stitch", "novel-pair stitching benchmark");
  shared_flags(bstitch, o);
  bstitch->add_option("--data", o.data_path, "cross dataset (.fpds)")->required();
  bstitch->add_option("--ckpt", o.ckpts, "checkpoints to compare (repeatable)")->required();
  bstitch->add_option("--batches", o.batches, "task batches (default 8)");
  bstitch->add_option("--batch-size", o.bench_batch, "tasks per batch (default 64)");
  bstitch->add_option("--jobs", o.jobs, "worker threads (default 1)")
      ->check(CLI::PositiveNumber);
  kv_flag(bstitch, o, "--n-steps", "n_steps", "Euler steps per plan");
  bstitch->footer(
      "writes stitch_samples.csv (config,index,error; index = sample | mean | std), "
      "stitch_table.csv (config,mean,std), stitch_plans.csv, stitch.svg and "
      "bench_stitch_summary.json");

  CLI::App* bavoid = app.add_subcommand("bench-avoid", "obstacle-avoidance radius sweep");
  shared_flags(bavoid, o);
  bavoid->add_option("--ckpt", o.ckpts, "checkpoint (.fpck)")->required();
  bavoid->add_option("--radii", o.radii_s, "comma list (default 0.05..0.3)");
  bavoid->add_option("--trials", o.trials, "plans per radius (default 50)");
  bavoid->add_option("--goal-tol", o.goal_tol, "success distance to goal (default 0.15)");
  bavoid->add_option("--jobs", o.jobs, "worker threads (default 1)")
      ->check(CLI::PositiveNumber);
  kv_flag(bavoid, o, "--guidance-scale", "guidance_scale", "scale for the guided cells");
  kv_flag(bavoid, o, "--n-steps", "n_steps", "Euler steps per plan");
  bavoid->footer(
      "runs unguided / guided / guided+split cells; writes avoid.csv "
      "(label,radius,success,max_reliable,guidance_scale,used_split), avoid.svg and "
      "bench_avoid_summary.json");

  CLI::App* probe = app.add_subcommand("probe", "checkpoint-series collapse + consistency probe");
  shared_flags(probe, o);
  probe->add_option("--ckpt", o.ckpts, "checkpoint (repeatable)");
  probe->add_option("--ckpt-dir", o.ckpt_dir, "directory scanned for *.fpck");
  probe->add_option("--start", o.start_s, "probe start state (default: straight-task midline)");
  probe->add_option("--goal", o.goal_s, "probe goal state");
  probe->add_option("--obstacle", o.obstacles_s, "cx,cy,r (default: midpoint, r 0.15)");
  probe->add_option("--trials", o.probe_trials, "plan seeds per checkpoint (default 4)");
  kv_flag(probe, o, "--guidance-scale", "guidance_scale", "guidance strength for the probe task");
  kv_flag(probe, o, "--n-steps", "n_steps", "Euler steps per plan");
  probe->footer("writes collapse.csv (step,bend,translate), collapse.svg and probe_summary.json");

  CLI::App* plot = app.add_subcommand("plot", "redraw SVGs from the CSVs in --out-dir");
  shared_flags(plot, o);
  plot->footer(
      "reads traj.csv (+obstacles.csv), stitch_plans.csv, avoid.csv, collapse.csv, loss.csv; "
      "exit 2 when none are present");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    fs::create_directories(o.out_dir);
    if (gen->parsed()) cmd_gen_data(build_config(o), o);
    else if (train->parsed()) cmd_train(build_config(o), o);
    else if (plan->parsed()) cmd_plan(build_config(o), o);
    else if (bstitch->parsed()) cmd_bench_stitch(build_config(o), o);
    else if (bavoid->parsed()) cmd_bench_avoid(build_config(o), o);
    else if (probe->parsed()) cmd_probe(build_config(o), o);
    else if (plot->parsed()) cmd_plot(o);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "flowplan: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "flowplan: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "flowplan: %s\n", e.what());
    return 1;
  }
  return 0;
}
