#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fp/common/rng.hpp"
#include "fp/model/net.hpp"
#include "fp/nd/adam.hpp"
#include "fp/world/costs.hpp"
#include "fp/world/types.hpp"

namespace fp::flow {

// ---------------------------------------------------------------------------
// probability path
// ---------------------------------------------------------------------------

/// One draw on the conditional OT path: x_t = t*x1 + (1-t)*x0, target x1-x0.
struct OTPathSample {
  nd::Array x0;        // noise draw [T,D]
  nd::Array x1;        // data trajectory [T,D], normalized
  double t = 0.0;      // flow time in [0,1]
  nd::Array xt;        // interpolant
  nd::Array target_u;  // x1 - x0
};

/// Builds the interpolant and target for a known (x0, x1, t).
OTPathSample make_path_sample(nd::Array x0, nd::Array x1, double t);

/// Draws t ~ U[0,1] and x0 ~ N(0,I) per sample (in that order, per sample).
std::vector<OTPathSample> sample_path(const std::vector<nd::Array>& x1, RandomStream& rng);

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Mean squared error between the net's velocity and the targets, averaged
/// over batch, timesteps, and dims. All samples must share one length.
double cfm_loss(const model::VelocityNet& net, const std::vector<OTPathSample>& batch);

/// What train_step actually assembled; exposed for tests and logging.
struct TrainStepInfo {
  bool split_batch = false;
  int length = 0;
  std::vector<int> offsets;  // crop offsets, empty when not split
};

/// One optimizer update: sample a batch (whole batch is half-length crops
/// with probability split_prob, uniform random even offsets), compute the CFM
/// loss, backprop, Adam step. Returns the loss.
double train_step(model::VelocityNet& net, const world::Dataset& ds, int batch_size,
                  double split_prob, RandomStream& rng, nd::AdamState& adam,
                  TrainStepInfo* info = nullptr);

/// Startup check: net/dataset dims agree and, when split_prob > 0, the
/// half-length T/2 is still a length the architecture accepts.
void validate_training(const model::VelocityNet& net, const world::Dataset& ds,
                       double split_prob);

// ---------------------------------------------------------------------------
// guidance
// ---------------------------------------------------------------------------

enum class BtSchedule : uint8_t { ONE_MINUS_T = 0, OT_RATIO = 1 };

std::string bt_name(BtSchedule s);
BtSchedule parse_bt(const std::string& s);

/// Guidance strength at flow time t: 1-t, or (1-t)/t with t floored at 1e-3.
double bt_value(BtSchedule s, double t);

struct GuidanceSpec {
  std::vector<world::Obstacle> obstacles;
  double collision_weight = 0.1;
  double smoothness_weight = 1e-6;
  double guidance_scale = 1.0;
  BtSchedule bt_schedule = BtSchedule::ONE_MINUS_T;

  void validate() const;  // radius > 0, weights >= 0
};

/// Gradient of the weighted analytic cost at x (normalized [T,D]).
/// Zero when no term is active. Non-finite gradients raise a NumericError
/// attributing the offending cost term.
nd::Array cost_gradient(const world::DataContext& ctx, const nd::Array& x_norm,
                        const GuidanceSpec& spec);

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

struct PlanRequest {
  nd::Array start;  // [D], normalized units
  nd::Array goal;   // [D], normalized units
  int horizon = 64;
  int n_steps = 10;
  std::optional<GuidanceSpec> guidance;
  bool inference_split = false;
  bool guide_second_loop = true;  // keep guidance active in the split loop
  uint64_t seed = 0;
};

struct PlanStats {
  int first_loop_steps = 0;
  int second_loop_steps = 0;
  int net_evals = 0;       // batched forward passes
  int clamp_calls = 0;     // per-trajectory endpoint clamps
  int guidance_evals = 0;  // per-trajectory cost gradients
  bool split_used = false;
};

/// A trained velocity net bundled with the world it plans in.
struct Planner {
  model::VelocityNet net;
  world::DataContext ctx;
};

/// Endpoint clamp on one trajectory [T,D]: x[0] := t*start + (1-t)*frozen[0],
/// x[T-1] := t*goal + (1-t)*frozen[T-1]; interior untouched.
void inpaint_clamp(nd::Array& x, double t, const nd::Array& start, const nd::Array& goal,
                   const nd::Array& frozen);

/// Velocity at (x, t) plus the guidance term b_t * scale * grad log p.
/// cond is forwarded to DIRECT nets and must be null for INPAINT nets.
/// guidance_scale == 0 is a bit-exact no-op.
nd::Array guided_velocity(const Planner& p, const nd::Array& x_norm, double t,
                          const GuidanceSpec& spec, const model::CondPair* cond = nullptr);

/// Batched velocity field u(x [B,T,D], tt [B]) -> [B,T,D]; the test seam for
/// analytic-oracle sampling.
using VelocityFn = std::function<nd::Array(const nd::Array&, const std::vector<double>&)>;

struct CoreOptions {
  int n_steps = 10;
  double t_begin = 0.0;
  double t_end = 1.0;
  // Inpainting bounds per row, [B,D]; both set or both null.
  const nd::Array* clamp_start = nullptr;
  const nd::Array* clamp_goal = nullptr;
  const GuidanceSpec* guidance = nullptr;       // needs ctx when set
  const world::DataContext* ctx = nullptr;
  PlanStats* stats = nullptr;
  int* step_counter = nullptr;                  // ++ per Euler iteration
  const char* stage = "euler_sample";           // error/label prefix
};

/// Uniform-step Euler integration of u from t_begin to t_end starting at x
/// [B,T,D]. Clamps (when bounds are set) run before the first step and after
/// every step, against `frozen` (the per-call noise). Throws NumericError
/// naming the step when the state leaves the finite range.
nd::Array sample_core(const VelocityFn& u, nd::Array x, const nd::Array& frozen,
                      const CoreOptions& opts);

/// Second-stage refinement: re-noise (0.5*initial + 0.5*eps), split at T/2,
/// re-denoise both halves from t=0.5 with ceil(n_steps/2) steps, inpainting
/// (start, initial[T/2]) and (initial[T/2], goal); concatenate. The velocity
/// fns are per-half so DIRECT conditioning can be bound into the closure;
/// null start/goal turn the clamp off (DIRECT nets).
nd::Array split_core(const VelocityFn& u_first, const VelocityFn& u_second,
                     const nd::Array& initial_norm, const nd::Array& eps,
                     const nd::Array* start, const nd::Array* goal, int n_steps,
                     const GuidanceSpec* guidance, const world::DataContext* ctx,
                     PlanStats* stats);

struct PlanResult {
  world::Trajectory traj;  // env units
  PlanStats stats;
};

/// One plan per request (no split stage, regardless of request.inference_split).
world::Trajectory euler_sample(const Planner& p, const PlanRequest& req);

/// Split refinement of an existing plan (env units in, env units out).
world::Trajectory split_inference(const Planner& p, const PlanRequest& req,
                                  const world::Trajectory& initial);

/// Full pipeline: euler_sample, then the split stage iff req.inference_split.
PlanResult plan(const Planner& p, const PlanRequest& req);

/// n independent plans; sample i draws its noise from child stream i of the
/// request seed, so results are invariant to batch grouping.
std::vector<PlanResult> plan_batch(const Planner& p, const PlanRequest& req, int n);

}  // namespace fp::flow
