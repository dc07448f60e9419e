#include "fp/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace fp::flow {

using model::CondPair;
using model::Conditioning;
using nd::Array;
using nd::Shape;
using nd::Tape;
using nd::Var;

// ---------------------------------------------------------------------------
// probability path
// ---------------------------------------------------------------------------

OTPathSample make_path_sample(Array x0, Array x1, double t) {
  nd::require_same_shape(x0, x1, "make_path_sample");
  if (t < 0.0 || t > 1.0)
    throw Error("make_path_sample: flow time " + std::to_string(t) + " outside [0,1]");
  OTPathSample s;
  s.xt = nd::lerp(x1, x0, t);
  s.target_u = nd::sub(x1, x0);
  s.x0 = std::move(x0);
  s.x1 = std::move(x1);
  s.t = t;
  return s;
}

std::vector<OTPathSample> sample_path(const std::vector<Array>& x1, RandomStream& rng) {
  std::vector<OTPathSample> out;
  out.reserve(x1.size());
  for (const Array& traj : x1) {
    const double t = rng.uniform();
    Array x0(traj.shape);
    for (double& v : x0.data) v = rng.normal();
    out.push_back(make_path_sample(std::move(x0), traj, t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

namespace {

struct StackedBatch {
  Array x;       // [B,T,D] interpolants
  Array target;  // [B,T,D]
  std::vector<double> tt;
  CondPair cond;  // crop endpoints, used by DIRECT nets
};

StackedBatch stack(const std::vector<OTPathSample>& batch) {
  if (batch.empty()) throw ConfigError("cfm_loss: empty batch");
  const Shape& s = batch[0].xt.shape;
  if (s.size() != 2) throw ShapeError("cfm_loss: samples must be [T,D]");
  const int bsz = static_cast<int>(batch.size());
  const int horizon = s[0];
  const int dim = s[1];
  StackedBatch sb{Array({bsz, horizon, dim}), Array({bsz, horizon, dim}), {},
                  CondPair{Array({bsz, dim}), Array({bsz, dim})}};
  sb.tt.reserve(batch.size());
  for (int b = 0; b < bsz; ++b) {
    const OTPathSample& smp = batch[static_cast<size_t>(b)];
    if (smp.xt.shape != s || smp.target_u.shape != s || smp.x1.shape != s)
      throw ShapeError("cfm_loss: mixed sample shapes in one batch");
    const int64_t off = static_cast<int64_t>(b) * horizon * dim;
    std::copy(smp.xt.data.begin(), smp.xt.data.end(), sb.x.data.begin() + off);
    std::copy(smp.target_u.data.begin(), smp.target_u.data.end(), sb.target.data.begin() + off);
    sb.tt.push_back(smp.t);
    for (int d = 0; d < dim; ++d) {
      sb.cond.start.at(b, d) = smp.x1.at(0, d);
      sb.cond.goal.at(b, d) = smp.x1.at(horizon - 1, d);
    }
  }
  return sb;
}

Var loss_var(Tape& t, const model::VelocityNet& net, const StackedBatch& sb, bool train,
             std::map<std::string, Var>* param_vars) {
  const CondPair* cond =
      net.config.conditioning == Conditioning::DIRECT ? &sb.cond : nullptr;
  model::ForwardResult res = model::forward(t, net, t.constant(sb.x), sb.tt, cond, train);
  if (param_vars) *param_vars = res.param_vars;
  return t.mean(t.square(t.sub(res.out, t.constant(sb.target))));
}

}  // namespace

double cfm_loss(const model::VelocityNet& net, const std::vector<OTPathSample>& batch) {
  Tape t;
  return t.val(loss_var(t, net, stack(batch), false, nullptr))[0];
}

void validate_training(const model::VelocityNet& net, const world::Dataset& ds,
                       double split_prob) {
  net.config.validate();
  if (split_prob < 0.0 || split_prob > 1.0)
    throw ConfigError("split_prob must be in [0,1], got " + std::to_string(split_prob));
  if (ds.trajs.empty()) throw ConfigError("training needs a nonempty dataset");
  if (net.config.state_dim != ds.D)
    throw ConfigError("net state_dim " + std::to_string(net.config.state_dim) +
                      " != dataset D " + std::to_string(ds.D));
  if (net.config.horizon != ds.T)
    throw ConfigError("net horizon " + std::to_string(net.config.horizon) +
                      " != dataset T " + std::to_string(ds.T));
  if (split_prob > 0.0) {
    const int half = ds.T / 2;
    if (ds.T % 2 != 0) throw ConfigError("split training needs an even T");
    if (net.config.arch == model::Arch::UNET && half < net.config.min_horizon())
      throw ConfigError("half-length " + std::to_string(half) + " below the UNet minimum " +
                        std::to_string(net.config.min_horizon()) +
                        "; lower split_prob to 0 or shrink channel_dims");
  }
}

double train_step(model::VelocityNet& net, const world::Dataset& ds, int batch_size,
                  double split_prob, RandomStream& rng, nd::AdamState& adam,
                  TrainStepInfo* info) {
  if (batch_size < 1) throw ConfigError("train_step: batch_size must be >= 1");
  validate_training(net, ds, split_prob);

  const int horizon = ds.T;
  const int dim = ds.D;
  const bool split = rng.uniform() < split_prob;
  const int len = split ? horizon / 2 : horizon;

  std::vector<Array> x1s;
  x1s.reserve(static_cast<size_t>(batch_size));
  std::vector<int> offsets;
  for (int b = 0; b < batch_size; ++b) {
    const auto& traj = ds.trajs[rng.uniform_index(ds.trajs.size())].states;
    int off = 0;
    if (split) {
      off = 2 * static_cast<int>(rng.uniform_index(static_cast<uint64_t>(horizon / 4 + 1)));
      offsets.push_back(off);
    }
    Array crop({len, dim});
    std::copy(traj.data.begin() + static_cast<int64_t>(off) * dim,
              traj.data.begin() + static_cast<int64_t>(off + len) * dim, crop.data.begin());
    x1s.push_back(std::move(crop));
  }

  StackedBatch sb = stack(sample_path(x1s, rng));
  Tape t;
  std::map<std::string, Var> pv;
  Var loss = loss_var(t, net, sb, true, &pv);
  const double lv = t.val(loss)[0];
  if (!std::isfinite(lv))
    throw NumericError("train_step " + std::to_string(adam.step + 1) + ": loss is not finite");
  t.backward(loss);
  nd::ParamMap grads;
  for (const auto& [name, v] : pv) grads.emplace(name, t.grad(v));
  nd::adam_step(net.params, grads, adam);

  if (info) {
    info->split_batch = split;
    info->length = len;
    info->offsets = std::move(offsets);
  }
  return lv;
}

// ---------------------------------------------------------------------------
// guidance
// ---------------------------------------------------------------------------

std::string bt_name(BtSchedule s) {
  return s == BtSchedule::ONE_MINUS_T ? "one_minus_t" : "ot_ratio";
}

BtSchedule parse_bt(const std::string& s) {
  if (s == "one_minus_t") return BtSchedule::ONE_MINUS_T;
  if (s == "ot_ratio") return BtSchedule::OT_RATIO;
  throw ConfigError("unknown b_t schedule '" + s + "' (valid: one_minus_t, ot_ratio)");
}

double bt_value(BtSchedule s, double t) {
  if (s == BtSchedule::ONE_MINUS_T) return 1.0 - t;
  return (1.0 - t) / std::max(t, 1e-3);
}

void GuidanceSpec::validate() const {
  for (const auto& o : obstacles)
    if (!(o.r > 0.0)) throw ConfigError("guidance: obstacle radius must be > 0");
  if (collision_weight < 0.0 || smoothness_weight < 0.0)
    throw ConfigError("guidance: cost weights must be >= 0");
  if (!(guidance_scale >= 0.0))
    throw ConfigError("guidance: guidance_scale must be >= 0");
}

Array cost_gradient(const world::DataContext& ctx, const Array& x_norm,
                    const GuidanceSpec& spec) {
  if (x_norm.rank() != 2) throw ShapeError("cost_gradient: want [T,D]");
  const bool want_coll = spec.collision_weight > 0.0 && !spec.obstacles.empty();
  const bool want_smooth = spec.smoothness_weight > 0.0;
  if (!want_coll && !want_smooth) return nd::zeros_like(x_norm);

  auto eval = [&](bool coll, bool smooth) -> Array {
    Tape t;
    Var x = t.leaf(x_norm, true);
    Var acc;
    if (coll)
      acc = t.scale(world::collision_cost(t, x, spec.obstacles, ctx), spec.collision_weight);
    if (smooth) {
      Var s = t.scale(world::smoothness_cost(t, x, ctx), spec.smoothness_weight);
      acc = coll ? t.add(acc, s) : s;
    }
    t.backward(acc);
    return t.grad(x);
  };

  Array g = eval(want_coll, want_smooth);
  if (!g.all_finite()) {
    if (want_coll && !eval(true, false).all_finite())
      throw NumericError("guidance: collision cost gradient is not finite");
    if (want_smooth && !eval(false, true).all_finite())
      throw NumericError("guidance: smoothness cost gradient is not finite");
    throw NumericError("guidance: combined cost gradient is not finite");
  }
  return g;
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

void inpaint_clamp(Array& x, double t, const Array& start, const Array& goal,
                   const Array& frozen) {
  if (x.rank() != 2) throw ShapeError("inpaint_clamp: want [T,D]");
  nd::require_same_shape(x, frozen, "inpaint_clamp");
  const int horizon = x.shape[0];
  const int dim = x.shape[1];
  if (start.shape != Shape{dim} || goal.shape != Shape{dim})
    throw ShapeError("inpaint_clamp: bounds must be [D]");
  for (int d = 0; d < dim; ++d) {
    x.at(0, d) = t * start[d] + (1.0 - t) * frozen.at(0, d);
    x.at(horizon - 1, d) = t * goal[d] + (1.0 - t) * frozen.at(horizon - 1, d);
  }
}

namespace {

Array row3(const Array& a, int b) {
  Array r({a.shape[1], a.shape[2]});
  const int64_t n = r.numel();
  std::copy(a.data.begin() + b * n, a.data.begin() + (b + 1) * n, r.data.begin());
  return r;
}

Array slice_time(const Array& a, int t0, int len) {
  const int bsz = a.shape[0];
  const int dim = a.shape[2];
  Array r({bsz, len, dim});
  for (int b = 0; b < bsz; ++b)
    std::copy(a.data.begin() + (static_cast<int64_t>(b) * a.shape[1] + t0) * dim,
              a.data.begin() + (static_cast<int64_t>(b) * a.shape[1] + t0 + len) * dim,
              r.data.begin() + static_cast<int64_t>(b) * len * dim);
  return r;
}

Array concat_time(const Array& a, const Array& b) {
  const int bsz = a.shape[0];
  const int dim = a.shape[2];
  Array r({bsz, a.shape[1] + b.shape[1], dim});
  for (int i = 0; i < bsz; ++i) {
    std::copy(a.data.begin() + static_cast<int64_t>(i) * a.shape[1] * dim,
              a.data.begin() + static_cast<int64_t>(i + 1) * a.shape[1] * dim,
              r.data.begin() + static_cast<int64_t>(i) * r.shape[1] * dim);
    std::copy(b.data.begin() + static_cast<int64_t>(i) * b.shape[1] * dim,
              b.data.begin() + static_cast<int64_t>(i + 1) * b.shape[1] * dim,
              r.data.begin() + (static_cast<int64_t>(i) * r.shape[1] + a.shape[1]) * dim);
  }
  return r;
}

}  // namespace

Array guided_velocity(const Planner& p, const Array& x_norm, double t, const GuidanceSpec& spec,
                      const CondPair* cond) {
  if (x_norm.rank() != 2) throw ShapeError("guided_velocity: want [T,D]");
  spec.validate();
  Tape tp;
  Array xb({1, x_norm.shape[0], x_norm.shape[1]});
  std::copy(x_norm.data.begin(), x_norm.data.end(), xb.data.begin());
  model::ForwardResult res =
      model::forward(tp, p.net, tp.constant(std::move(xb)), {t}, cond, false);
  Array u = row3(tp.val(res.out), 0);
  if (spec.guidance_scale == 0.0) return u;
  const double b = bt_value(spec.bt_schedule, t);
  if (b == 0.0) return u;
  nd::axpy(-b * spec.guidance_scale, cost_gradient(p.ctx, x_norm, spec), u);
  return u;
}

Array sample_core(const VelocityFn& u, Array x, const Array& frozen, const CoreOptions& o) {
  if (x.rank() != 3) throw ShapeError("sample_core: want x [B,T,D]");
  if (o.n_steps < 1) throw ConfigError("sample_core: n_steps must be >= 1");
  if (o.guidance != nullptr && o.ctx == nullptr)
    throw ConfigError("sample_core: guidance needs a DataContext");
  const int bsz = x.shape[0];
  const int horizon = x.shape[1];
  const int dim = x.shape[2];
  // Either bound may be absent: split inference pins the shared midpoint only
  // on the second half, so the first half runs with a free tail.
  const bool clamping = o.clamp_start != nullptr || o.clamp_goal != nullptr;
  if (clamping) {
    nd::require_same_shape(x, frozen, "sample_core");
    for (const Array* c : {o.clamp_start, o.clamp_goal})
      if (c != nullptr && c->shape != Shape{bsz, dim})
        throw ShapeError("sample_core: clamp bounds must be [B,D]");
  }

  auto clamp_all = [&](double t) {
    for (int b = 0; b < bsz; ++b)
      for (int d = 0; d < dim; ++d) {
        if (o.clamp_start)
          x.at(b, 0, d) = t * o.clamp_start->at(b, d) + (1.0 - t) * frozen.at(b, 0, d);
        if (o.clamp_goal)
          x.at(b, horizon - 1, d) =
              t * o.clamp_goal->at(b, d) + (1.0 - t) * frozen.at(b, horizon - 1, d);
      }
    if (o.stats) o.stats->clamp_calls += bsz;
  };
  const double span = o.t_end - o.t_begin;
  auto t_at = [&](int k) { return o.t_begin + span * (static_cast<double>(k) / o.n_steps); };
  const double h = span / o.n_steps;

  if (clamping) clamp_all(o.t_begin);
  for (int k = 0; k < o.n_steps; ++k) {
    const double t = t_at(k);
    Array v = u(x, std::vector<double>(static_cast<size_t>(bsz), t));
    nd::require_same_shape(v, x, "sample_core velocity");
    if (o.stats) o.stats->net_evals += 1;

    if (o.guidance != nullptr && o.guidance->guidance_scale != 0.0) {
      const double b_t = bt_value(o.guidance->bt_schedule, t);
      if (b_t != 0.0) {
        const double w = b_t * o.guidance->guidance_scale;
        for (int b = 0; b < bsz; ++b) {
          Array g = cost_gradient(*o.ctx, row3(x, b), *o.guidance);
          const int64_t off = static_cast<int64_t>(b) * horizon * dim;
          for (int64_t i = 0; i < g.numel(); ++i) v.data[off + i] -= w * g.data[i];
        }
        if (o.stats) o.stats->guidance_evals += bsz;
      }
    }

    nd::axpy(h, v, x);
    if (clamping) clamp_all(t_at(k + 1));
    if (o.step_counter) ++*o.step_counter;
    if (!x.all_finite())
      throw NumericError(std::string(o.stage) + ": non-finite state after step " +
                         std::to_string(k + 1) + "/" + std::to_string(o.n_steps));
  }
  return x;
}

Array split_core(const VelocityFn& u_first, const VelocityFn& u_second,
                 const Array& initial_norm, const Array& eps, const Array* start,
                 const Array* goal, int n_steps, const GuidanceSpec* guidance,
                 const world::DataContext* ctx, PlanStats* stats) {
  if (initial_norm.rank() != 3) throw ShapeError("split_core: want [B,T,D]");
  nd::require_same_shape(initial_norm, eps, "split_core");
  const int bsz = initial_norm.shape[0];
  const int horizon = initial_norm.shape[1];
  const int dim = initial_norm.shape[2];
  if (horizon % 2 != 0)
    throw ConfigError("split_core: horizon " + std::to_string(horizon) + " is not even");
  const int half = horizon / 2;

  // Midpoint boundary from the clean initial guess, before re-noising.
  Array mid({bsz, dim});
  for (int b = 0; b < bsz; ++b)
    for (int d = 0; d < dim; ++d) mid.at(b, d) = initial_norm.at(b, half, d);

  const Array x_half = nd::lerp(initial_norm, eps, 0.5);
  const int m = (n_steps + 1) / 2;  // ceil(n_steps / 2)

  CoreOptions o;
  o.n_steps = m;
  o.t_begin = 0.5;
  o.t_end = 1.0;
  o.guidance = guidance;
  o.ctx = ctx;
  o.stats = stats;
  o.stage = "split_inference";
  int steps_first = 0;
  int steps_second = 0;

  // The shared midpoint is realized once, at the second half's first slot;
  // the first half keeps a free tail and approaches it by integration.
  o.clamp_start = start;
  o.clamp_goal = nullptr;
  o.step_counter = &steps_first;
  Array out1 = sample_core(u_first, slice_time(x_half, 0, half), slice_time(eps, 0, half), o);

  o.clamp_start = (start != nullptr || goal != nullptr) ? &mid : nullptr;
  o.clamp_goal = goal;
  o.step_counter = &steps_second;
  Array out2 =
      sample_core(u_second, slice_time(x_half, half, half), slice_time(eps, half, half), o);

  if (stats) {
    stats->split_used = true;
    stats->second_loop_steps = steps_first;  // == steps_second by construction
  }
  return concat_time(out1, out2);
}

// ---------------------------------------------------------------------------
// planner plumbing
// ---------------------------------------------------------------------------

namespace {

void validate_request(const Planner& p, const PlanRequest& req) {
  const model::NetConfig& cfg = p.net.config;
  const int dim = cfg.state_dim;
  if (req.start.shape != Shape{dim} || req.goal.shape != Shape{dim})
    throw ShapeError("plan: start/goal must be [" + std::to_string(dim) + "]");
  if (p.ctx.stats.dims() != dim)
    throw ConfigError("plan: DataContext stats do not match the net's state dim");
  if (req.n_steps < 1) throw ConfigError("plan: n_steps must be >= 1");
  if (req.horizon < 2) throw ConfigError("plan: horizon must be >= 2");
  if (cfg.arch == model::Arch::UNET) {
    if ((req.horizon & (req.horizon - 1)) != 0 || req.horizon < cfg.min_horizon())
      throw ConfigError("plan: UNet horizon must be a power of 2 and >= " +
                        std::to_string(cfg.min_horizon()));
    if (req.inference_split && req.horizon / 2 < cfg.min_horizon())
      throw ConfigError("plan: split halves of " + std::to_string(req.horizon / 2) +
                        " fall below the UNet minimum " + std::to_string(cfg.min_horizon()));
  } else if (req.horizon > cfg.horizon) {
    throw ConfigError("plan: horizon exceeds the transformer positional table");
  }
  if (req.inference_split && req.horizon % 2 != 0)
    throw ConfigError("plan: split needs an even horizon");
  if (req.guidance) req.guidance->validate();
}

VelocityFn net_fn(const Planner& p, std::shared_ptr<const CondPair> cond) {
  return [&p, cond](const Array& x, const std::vector<double>& tt) -> Array {
    Tape t;
    model::ForwardResult res = model::forward(t, p.net, t.constant(x), tt, cond.get(), false);
    return t.val(res.out);
  };
}

Array replicate(const Array& row, int bsz) {
  Array r({bsz, row.shape[0]});
  for (int b = 0; b < bsz; ++b)
    std::copy(row.data.begin(), row.data.end(),
              r.data.begin() + static_cast<int64_t>(b) * row.shape[0]);
  return r;
}

std::shared_ptr<const CondPair> cond_or_null(const model::NetConfig& cfg, Array start,
                                             Array goal) {
  if (cfg.conditioning != Conditioning::DIRECT) return nullptr;
  return std::make_shared<const CondPair>(CondPair{std::move(start), std::move(goal)});
}

/// Second-stage split on a normalized batch; eps comes from per-row child
/// streams so single and batched plans agree bit-for-bit.
Array split_stage(const Planner& p, const PlanRequest& req, const Array& initial_norm,
                  PlanStats& stats) {
  const int bsz = initial_norm.shape[0];
  const int horizon = initial_norm.shape[1];
  const int dim = initial_norm.shape[2];
  const RandomStream base(req.seed);
  Array eps({bsz, horizon, dim});
  for (int b = 0; b < bsz; ++b) {
    RandomStream s = base.child(static_cast<uint64_t>(b)).child("renoise");
    const int64_t off = static_cast<int64_t>(b) * horizon * dim;
    for (int64_t i = 0; i < static_cast<int64_t>(horizon) * dim; ++i)
      eps.data[off + i] = s.normal();
  }

  Array mid({bsz, dim});
  for (int b = 0; b < bsz; ++b)
    for (int d = 0; d < dim; ++d) mid.at(b, d) = initial_norm.at(b, horizon / 2, d);
  const Array cs = replicate(req.start, bsz);
  const Array cg = replicate(req.goal, bsz);

  const bool inpaint = p.net.config.conditioning == Conditioning::INPAINT;
  const GuidanceSpec* g2 =
      req.guidance && req.guide_second_loop ? &*req.guidance : nullptr;
  return split_core(net_fn(p, cond_or_null(p.net.config, cs, mid)),
                    net_fn(p, cond_or_null(p.net.config, mid, cg)), initial_norm, eps,
                    inpaint ? &cs : nullptr, inpaint ? &cg : nullptr, req.n_steps, g2,
                    &p.ctx, &stats);
}

world::Trajectory to_trajectory(const Planner& p, Array states_norm) {
  p.ctx.stats.denormalize_inplace(states_norm);
  world::Trajectory traj;
  traj.states = std::move(states_norm);
  traj.dt = p.ctx.env.dt;
  traj.env = p.ctx.env.kind;
  return traj;
}

struct NormPlan {
  Array final_norm;  // [B,T,D]
  PlanStats stats;
};

NormPlan plan_norm(const Planner& p, const PlanRequest& req, int n) {
  if (n < 1) throw ConfigError("plan_batch: n must be >= 1");
  validate_request(p, req);
  const int horizon = req.horizon;
  const int dim = p.net.config.state_dim;
  const RandomStream base(req.seed);
  Array x0({n, horizon, dim});
  for (int b = 0; b < n; ++b) {
    RandomStream s = base.child(static_cast<uint64_t>(b));
    const int64_t off = static_cast<int64_t>(b) * horizon * dim;
    for (int64_t i = 0; i < static_cast<int64_t>(horizon) * dim; ++i)
      x0.data[off + i] = s.normal();
  }

  NormPlan out;
  const bool inpaint = p.net.config.conditioning == Conditioning::INPAINT;
  const Array cs = replicate(req.start, n);
  const Array cg = replicate(req.goal, n);
  CoreOptions o;
  o.n_steps = req.n_steps;
  o.clamp_start = inpaint ? &cs : nullptr;
  o.clamp_goal = inpaint ? &cg : nullptr;
  o.guidance = req.guidance ? &*req.guidance : nullptr;
  o.ctx = &p.ctx;
  o.stats = &out.stats;
  o.step_counter = &out.stats.first_loop_steps;
  out.final_norm =
      sample_core(net_fn(p, cond_or_null(p.net.config, cs, cg)), x0, x0, o);

  if (req.inference_split)
    out.final_norm = split_stage(p, req, out.final_norm, out.stats);
  return out;
}

}  // namespace

world::Trajectory euler_sample(const Planner& p, const PlanRequest& req) {
  PlanRequest r = req;
  r.inference_split = false;
  return to_trajectory(p, row3(plan_norm(p, r, 1).final_norm, 0));
}

world::Trajectory split_inference(const Planner& p, const PlanRequest& req,
                                  const world::Trajectory& initial) {
  PlanRequest r = req;
  r.inference_split = true;  // validate against the split constraints regardless
  validate_request(p, r);
  if (initial.states.shape != Shape{req.horizon, p.net.config.state_dim})
    throw ShapeError("split_inference: initial trajectory does not match the request");
  Array norm = initial.states;
  p.ctx.stats.normalize_inplace(norm);
  Array batched({1, req.horizon, p.net.config.state_dim});
  batched.data = std::move(norm.data);
  PlanStats stats;
  return to_trajectory(p, row3(split_stage(p, req, batched, stats), 0));
}

PlanResult plan(const Planner& p, const PlanRequest& req) {
  NormPlan np = plan_norm(p, req, 1);
  return PlanResult{to_trajectory(p, row3(np.final_norm, 0)), np.stats};
}

std::vector<PlanResult> plan_batch(const Planner& p, const PlanRequest& req, int n) {
  NormPlan np = plan_norm(p, req, n);
  std::vector<PlanResult> out;
  out.reserve(static_cast<size_t>(n));
  for (int b = 0; b < n; ++b)
    out.push_back(PlanResult{to_trajectory(p, row3(np.final_norm, b)), np.stats});
  return out;
}

}  // namespace fp::flow
