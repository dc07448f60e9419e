#include "fp/bench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <set>
#include <thread>

#include "fp/model/net.hpp"

namespace fp::bench {

namespace {

/// Dynamic-scheduled index loop over up to `jobs` threads. Each index must
/// touch only its own output, which keeps results thread-count-invariant.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  jobs = std::min(std::max(jobs, 1), std::max(n, 1));
  if (jobs <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(jobs));
  for (int w = 0; w < jobs; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> g(err_mu);
          if (!err) err = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

nd::Array row_of(const nd::Array& states, int i) {
  const int d = states.shape[1];
  nd::Array r({d});
  for (int j = 0; j < d; ++j) r[j] = states.at(i, j);
  return r;
}

double mean_sq_diff(const nd::Array& a, const nd::Array& b) {
  double s = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.data[static_cast<size_t>(i)] - b.data[static_cast<size_t>(i)];
    s += d * d;
  }
  return s / static_cast<double>(a.numel());
}

nd::Array denorm_row(const world::NormStats& stats, const nd::Array& norm) {
  nd::Array env(norm.shape);
  for (int d = 0; d < norm.shape[0]; ++d) env[d] = stats.denormalize(norm[d], d);
  return env;
}

nd::Array norm_row(const world::NormStats& stats, const std::vector<double>& env) {
  nd::Array r({static_cast<int>(env.size())});
  for (size_t d = 0; d < env.size(); ++d)
    r[static_cast<int>(d)] = stats.normalize(env[d], static_cast<int>(d));
  return r;
}

double dist2d(const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

/// Start/goal draw matching the straight-dataset protocol.
void straight_task(const world::Env& env, RandomStream& rng, std::vector<double>& s0,
                   std::vector<double>& s1) {
  if (env.kind == world::EnvKind::PARTICLE) {
    s0 = {-1.0, rng.uniform(-0.8, 0.8), 0.0, 0.0};
    s1 = {1.0, rng.uniform(-0.8, 0.8), 0.0, 0.0};
  } else {
    s0 = {-0.9, rng.uniform(-0.6, 0.6), 0.1, 0.0, 0.0, 0.0};
    s1 = {0.9, rng.uniform(-0.6, 0.6), 0.1, 0.0, 0.0, 0.0};
  }
}

}  // namespace

std::array<double, 2> task_point(const double* state, const world::Env& env) {
  if (env.kind == world::EnvKind::PARTICLE) return {state[0], state[1]};
  return world::fk_points(state, env.link_lengths, 1).back();
}

PlanFn make_plan_fn(const flow::Planner& p, int n_steps, bool use_split) {
  return [&p, n_steps, use_split](const nd::Array& start_norm, const nd::Array& goal_norm,
                                  const flow::GuidanceSpec* guidance, uint64_t seed) {
    flow::PlanRequest req;
    req.start = start_norm;
    req.goal = goal_norm;
    req.horizon = p.net.config.horizon;
    req.n_steps = n_steps;
    if (guidance != nullptr) req.guidance = *guidance;
    req.inference_split = use_split;
    req.seed = seed;
    return flow::plan(p, req).traj;
  };
}

// ---------------------------------------------------------------------------
// Stitching
// ---------------------------------------------------------------------------

std::vector<std::pair<int, int>> unseen_pairs(const world::Dataset& ds) {
  std::set<int> arms;
  std::set<std::pair<int, int>> seen;
  for (const auto& tr : ds.trajs) {
    if (tr.start_arm < 0 || tr.end_arm < 0) continue;
    arms.insert(tr.start_arm);
    arms.insert(tr.end_arm);
    seen.insert({tr.start_arm, tr.end_arm});
  }
  if (arms.empty())
    throw ConfigError("unseen_pairs: dataset has no arm labels (stitching needs the cross set)");
  std::vector<std::pair<int, int>> out;
  for (int a : arms)
    for (int b : arms)
      if (a != b && !seen.count({a, b})) out.push_back({a, b});
  if (out.empty())
    throw ConfigError("unseen_pairs: every directed arm pair is already in the training set");
  return out;
}

StitchResult stitching_eval(const PlanFn& plan, const world::Dataset& ds, int n_batches,
                            int batch_size, const RandomStream& rng, bool inpaint_indices,
                            std::string config, int jobs) {
  if (n_batches < 1 || batch_size < 1)
    throw ConfigError("stitching_eval: n_batches and batch_size must be >= 1");
  const auto pairs = unseen_pairs(ds);

  std::vector<std::vector<int>> starts_by_arm, ends_by_arm;
  int max_arm = 0;
  for (const auto& [a, b] : pairs) max_arm = std::max({max_arm, a, b});
  starts_by_arm.resize(static_cast<size_t>(max_arm) + 1);
  ends_by_arm.resize(static_cast<size_t>(max_arm) + 1);
  for (size_t i = 0; i < ds.trajs.size(); ++i) {
    const auto& tr = ds.trajs[i];
    if (tr.start_arm >= 0 && tr.start_arm <= max_arm)
      starts_by_arm[static_cast<size_t>(tr.start_arm)].push_back(static_cast<int>(i));
    if (tr.end_arm >= 0 && tr.end_arm <= max_arm)
      ends_by_arm[static_cast<size_t>(tr.end_arm)].push_back(static_cast<int>(i));
  }

  StitchResult res;
  res.config = std::move(config);
  res.errors.assign(static_cast<size_t>(n_batches) * static_cast<size_t>(batch_size), 0.0);
  const int i0 = inpaint_indices ? 1 : 0;
  const int i1 = inpaint_indices ? ds.T - 2 : ds.T - 1;

  parallel_for(n_batches, jobs, [&](int b) {
    const RandomStream batch_rng = rng.child(static_cast<uint64_t>(b));
    for (int k = 0; k < batch_size; ++k) {
      RandomStream tr = batch_rng.child(static_cast<uint64_t>(k));
      const auto [arm_a, arm_b] = pairs[tr.uniform_index(pairs.size())];
      const auto& si = starts_by_arm[static_cast<size_t>(arm_a)];
      const auto& gi = ends_by_arm[static_cast<size_t>(arm_b)];
      if (si.empty() || gi.empty())
        throw ConfigError("stitching_eval: no trajectory touches arm " +
                          std::to_string(si.empty() ? arm_a : arm_b));
      const auto& s_traj = ds.trajs[static_cast<size_t>(si[tr.uniform_index(si.size())])];
      const auto& g_traj = ds.trajs[static_cast<size_t>(gi[tr.uniform_index(gi.size())])];
      const nd::Array start_norm = row_of(s_traj.states, 0);
      const nd::Array goal_norm = row_of(g_traj.states, ds.T - 1);

      const world::Trajectory planned =
          plan(start_norm, goal_norm, nullptr, tr.child("plan").seed());
      if (planned.states.shape[1] != ds.D)
        throw ShapeError("stitching_eval: planner returned dim " +
                         std::to_string(planned.states.shape[1]));
      const int last = planned.states.shape[0] - 1;
      const int j0 = std::min(i0, last);
      const int j1 = std::min(i1, last);
      const double e_start =
          mean_sq_diff(row_of(planned.states, j0), denorm_row(ds.stats, start_norm));
      const double e_goal =
          mean_sq_diff(row_of(planned.states, j1), denorm_row(ds.stats, goal_norm));
      res.errors[static_cast<size_t>(b) * static_cast<size_t>(batch_size) +
                 static_cast<size_t>(k)] = 0.5 * (e_start + e_goal);
    }
  });

  double sum = 0.0;
  for (double e : res.errors) sum += e;
  res.mean = sum / static_cast<double>(res.errors.size());
  if (res.errors.size() > 1) {
    double ss = 0.0;
    for (double e : res.errors) ss += (e - res.mean) * (e - res.mean);
    res.stddev = std::sqrt(ss / static_cast<double>(res.errors.size() - 1));
  }
  return res;
}

StitchResult stitching_benchmark(const flow::Planner& p, const world::Dataset& ds,
                                 int n_batches, int batch_size, const RandomStream& rng,
                                 int n_steps, int jobs) {
  const bool inpaint = p.net.config.conditioning == model::Conditioning::INPAINT;
  const std::string config = model::arch_name(p.net.config.arch) + "/" +
                             model::conditioning_name(p.net.config.conditioning) + "/" +
                             world::augment_name(ds.scheme.kind);
  return stitching_eval(make_plan_fn(p, n_steps, false), ds, n_batches, batch_size, rng,
                        inpaint, config, jobs);
}

std::vector<StitchResult> augmentation_benchmark(
    const std::vector<std::pair<const flow::Planner*, const world::Dataset*>>& cells,
    int n_batches, int batch_size, const RandomStream& rng, int n_steps, int jobs) {
  std::vector<StitchResult> out;
  out.reserve(cells.size());
  for (const auto& [planner, ds] : cells)
    out.push_back(
        stitching_benchmark(*planner, *ds, n_batches, batch_size, rng, n_steps, jobs));
  return out;
}

// ---------------------------------------------------------------------------
// Avoidance
// ---------------------------------------------------------------------------

AvoidResult avoid_eval(const PlanFn& plan, const world::DataContext& ctx,
                       const flow::GuidanceSpec& base, const std::vector<double>& radii,
                       int n_trials, const RandomStream& rng, double goal_tol,
                       bool used_split, int jobs) {
  if (radii.empty()) throw ConfigError("avoid_eval: need at least one radius");
  if (n_trials < 1) throw ConfigError("avoid_eval: n_trials must be >= 1");
  const int pos = ctx.env.pos_dims();

  AvoidResult res;
  res.radii = radii;
  res.guidance_scale = base.guidance_scale;
  res.used_split = used_split;
  res.success.assign(radii.size(), 0.0);

  parallel_for(static_cast<int>(radii.size()), jobs, [&](int ji) {
    const size_t j = static_cast<size_t>(ji);
    const double r = radii[j];
    const RandomStream radius_rng = rng.child(j);
    int wins = 0;
    for (int i = 0; i < n_trials; ++i) {
      RandomStream tr = radius_rng.child(static_cast<uint64_t>(i));
      std::vector<double> s0, s1;
      straight_task(ctx.env, tr, s0, s1);
      const auto a = task_point(s0.data(), ctx.env);
      const auto b = task_point(s1.data(), ctx.env);

      flow::GuidanceSpec spec = base;
      spec.obstacles.clear();
      if (r > 0.0)
        spec.obstacles.push_back({0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), r});

      const world::Trajectory planned = plan(norm_row(ctx.stats, s0), norm_row(ctx.stats, s1),
                                             &spec, tr.child("plan").seed());
      const int last = planned.states.shape[0] - 1;
      double goal_err = 0.0;
      for (int d = 0; d < pos; ++d) {
        const double delta = planned.states.at(last, d) - s1[static_cast<size_t>(d)];
        goal_err += delta * delta;
      }
      const bool reached = std::sqrt(goal_err) <= goal_tol;
      const bool clear =
          spec.obstacles.empty() || world::min_traj_sdf(planned.states, spec.obstacles, ctx) > 0.0;
      wins += (reached && clear) ? 1 : 0;
    }
    res.success[j] = static_cast<double>(wins) / static_cast<double>(n_trials);
  });

  res.max_reliable_radius = 0.0;
  for (size_t j = 0; j < radii.size(); ++j)
    if (res.success[j] >= kReliableRate)
      res.max_reliable_radius = std::max(res.max_reliable_radius, radii[j]);
  return res;
}

AvoidResult avoid_sweep(const flow::Planner& p, const flow::GuidanceSpec& base,
                        const std::vector<double>& radii, int n_trials, bool use_split,
                        const RandomStream& rng, int n_steps, double goal_tol, int jobs) {
  return avoid_eval(make_plan_fn(p, n_steps, use_split), p.ctx, base, radii, n_trials, rng,
                    goal_tol, use_split, jobs);
}

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

ConsistencyStats consistency_probe(const world::Trajectory& traj, const world::Env& env) {
  ConsistencyStats st;
  const int horizon = traj.states.shape[0];
  const int dim = traj.states.shape[1];
  const int pos = std::min(env.pos_dims(), dim / 2);
  const double dt = traj.dt > 0.0 ? traj.dt : env.dt;
  for (int t = 0; t + 1 < horizon; ++t) {
    double jump = 0.0;
    for (int d = 0; d < dim; ++d) {
      const double delta = traj.states.at(t + 1, d) - traj.states.at(t, d);
      jump += delta * delta;
    }
    st.max_jump = std::max(st.max_jump, std::sqrt(jump));

    double resid = 0.0;
    for (int d = 0; d < pos; ++d) {
      const double dp = traj.states.at(t + 1, d) - traj.states.at(t, d);
      const double v_next = traj.states.at(t + 1, d + pos);
      const double e = dp - dt * v_next;
      resid += e * e;
    }
    st.dyn_residual = std::max(st.dyn_residual, std::sqrt(resid));
  }
  return st;
}

void bend_translate(const world::Trajectory& traj, const nd::Array& start_env,
                    const nd::Array& goal_env, const world::Env& env, bool inpaint_indices,
                    double& bend, double& translate) {
  const int horizon = traj.states.shape[0];
  const int dim = traj.states.shape[1];
  if (horizon < 3) throw ShapeError("bend_translate: trajectory too short");
  const int i0 = inpaint_indices ? 1 : 0;
  const int i1 = inpaint_indices ? horizon - 2 : horizon - 1;

  std::vector<double> row(static_cast<size_t>(dim));
  auto xy_at = [&](int i) {
    for (int d = 0; d < dim; ++d) row[static_cast<size_t>(d)] = traj.states.at(i, d);
    return task_point(row.data(), env);
  };
  const auto a = xy_at(i0);
  const auto b = xy_at(i1);
  const auto m = xy_at(horizon / 2);

  // Perpendicular distance of m from segment a-b (projection clamped).
  const double abx = b[0] - a[0], aby = b[1] - a[1];
  const double len2 = abx * abx + aby * aby;
  double t = 0.0;
  if (len2 > 1e-18) t = ((m[0] - a[0]) * abx + (m[1] - a[1]) * aby) / len2;
  t = std::clamp(t, 0.0, 1.0);
  bend = std::hypot(m[0] - (a[0] + t * abx), m[1] - (a[1] + t * aby));

  translate = 0.5 * (dist2d(a, task_point(start_env.data.data(), env)) +
                     dist2d(b, task_point(goal_env.data.data(), env)));
}

std::vector<CollapsePoint> mode_collapse_probe(
    const std::vector<std::pair<int64_t, const flow::Planner*>>& series,
    const nd::Array& start_env, const nd::Array& goal_env, const flow::GuidanceSpec& task,
    int n_steps, int n_trials, const RandomStream& rng) {
  if (n_trials < 1) throw ConfigError("mode_collapse_probe: n_trials must be >= 1");
  std::vector<CollapsePoint> out;
  out.reserve(series.size());
  for (const auto& [step, planner] : series) {
    const bool inpaint = planner->net.config.conditioning == model::Conditioning::INPAINT;
    const PlanFn plan = make_plan_fn(*planner, n_steps, false);
    std::vector<double> s0(start_env.data.begin(), start_env.data.end());
    std::vector<double> s1(goal_env.data.begin(), goal_env.data.end());
    CollapsePoint pt;
    pt.step = step;
    const RandomStream ck_rng = rng.child(static_cast<uint64_t>(step));
    for (int i = 0; i < n_trials; ++i) {
      const world::Trajectory planned =
          plan(norm_row(planner->ctx.stats, s0), norm_row(planner->ctx.stats, s1), &task,
               ck_rng.child(static_cast<uint64_t>(i)).child("plan").seed());
      double bend = 0.0, translate = 0.0;
      bend_translate(planned, start_env, goal_env, planner->ctx.env, inpaint, bend, translate);
      pt.bend += bend;
      pt.translate += translate;
    }
    pt.bend /= static_cast<double>(n_trials);
    pt.translate /= static_cast<double>(n_trials);
    out.push_back(pt);
  }
  return out;
}

}  // namespace fp::bench
