#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fp/flow/flow.hpp"
#include "fp/world/costs.hpp"
#include "fp/world/dataset.hpp"

namespace fp::bench {

/// Planning seam the benchmarks drive. start/goal are normalized [D] rows;
/// the returned trajectory is in env units. Tests substitute synthetic
/// planners; production code adapts a flow::Planner via make_plan_fn.
using PlanFn = std::function<world::Trajectory(
    const nd::Array& start_norm, const nd::Array& goal_norm,
    const flow::GuidanceSpec* guidance, uint64_t seed)>;

PlanFn make_plan_fn(const flow::Planner& p, int n_steps, bool use_split);

/// Task-space (x, y) of one env-unit state row: the particle position, or
/// the arm's end-effector.
std::array<double, 2> task_point(const double* state, const world::Env& env);

// ---------------------------------------------------------------------------
// Stitching error
// ---------------------------------------------------------------------------

struct StitchResult {
  std::string config;          // e.g. "unet/inpaint/action_noise"
  std::vector<double> errors;  // per sample, env units
  double mean = 0.0;
  double stddev = 0.0;         // sample std over errors
};

/// Directed (start_arm, end_arm) combinations absent from the dataset's
/// training labels — the novel conditioning pool. ConfigError when the
/// dataset carries no arm labels or nothing is unseen.
std::vector<std::pair<int, int>> unseen_pairs(const world::Dataset& ds);

/// Core protocol: n_batches × batch_size novel pairs, one plan each, error =
/// mean squared difference between the first/last *free* planned states and
/// the conditioned endpoints (indices 1 and T−2 when inpaint_indices — the
/// clamped slots are exact by construction — else 0 and T−1). Batches run on
/// up to `jobs` threads; every sample owns its stream and output slot, so
/// results are identical at any thread count.
StitchResult stitching_eval(const PlanFn& plan, const world::Dataset& ds, int n_batches,
                            int batch_size, const RandomStream& rng, bool inpaint_indices,
                            std::string config = "", int jobs = 1);

StitchResult stitching_benchmark(const flow::Planner& p, const world::Dataset& ds,
                                 int n_batches, int batch_size, const RandomStream& rng,
                                 int n_steps = 10, int jobs = 1);

/// One stitching run per (scheme, planner) cell; datasets must be the one
/// each net was trained on (stats differ per scheme).
std::vector<StitchResult> augmentation_benchmark(
    const std::vector<std::pair<const flow::Planner*, const world::Dataset*>>& cells,
    int n_batches, int batch_size, const RandomStream& rng, int n_steps = 10, int jobs = 1);

// ---------------------------------------------------------------------------
// Obstacle avoidance sweep
// ---------------------------------------------------------------------------

struct AvoidResult {
  std::vector<double> radii;
  std::vector<double> success;       // per radius, in [0,1]
  double max_reliable_radius = 0.0;  // largest radius at >= 0.9, else 0
  double guidance_scale = 0.0;
  bool used_split = false;
};

/// Success bar defining "reliably avoid".
inline constexpr double kReliableRate = 0.9;

/// Per radius: n_trials straight-task plans (start/goal drawn like the
/// straight dataset, obstacle centered between them, radius <= 0 meaning no
/// obstacle). Success = goal position reached within goal_tol AND minimum
/// SDF over the trajectory's check points > 0. Radii run on up to `jobs`
/// threads, deterministically.
AvoidResult avoid_eval(const PlanFn& plan, const world::DataContext& ctx,
                       const flow::GuidanceSpec& base, const std::vector<double>& radii,
                       int n_trials, const RandomStream& rng, double goal_tol,
                       bool used_split, int jobs = 1);

AvoidResult avoid_sweep(const flow::Planner& p, const flow::GuidanceSpec& base,
                        const std::vector<double>& radii, int n_trials, bool use_split,
                        const RandomStream& rng, int n_steps = 10, double goal_tol = 0.15,
                        int jobs = 1);

// ---------------------------------------------------------------------------
// Probes
// ---------------------------------------------------------------------------

struct ConsistencyStats {
  double max_jump = 0.0;      // max_t ||x_{t+1} − x_t||, full state
  double dyn_residual = 0.0;  // max_t ||Δp − dt·v_{t+1}||, position dims
};

/// Dynamics-consistency measure. The env integrator is symplectic Euler, so
/// every protocol rollout satisfies p_{t+1} = p_t + dt·v_{t+1} exactly;
/// model-generated plans have no such constraint and the residual exposes
/// how badly they break it.
ConsistencyStats consistency_probe(const world::Trajectory& traj, const world::Env& env);

struct CollapsePoint {
  int64_t step = 0;
  double bend = 0.0;       // midpoint deviation from the planned-endpoint chord
  double translate = 0.0;  // drift of the free endpoint states off the conditioning
};

/// Metric core: bend is the perpendicular distance of the trajectory's
/// midpoint from the chord between its own first/last free states (rigid
/// translations score 0); translate is the mean distance of those free
/// states from the conditioned start/goal (healthy inpainted plans score
/// ~0). Positions are task-space: the particle itself, or the arm's
/// end-effector.
void bend_translate(const world::Trajectory& traj, const nd::Array& start_env,
                    const nd::Array& goal_env, const world::Env& env, bool inpaint_indices,
                    double& bend, double& translate);

/// Guided plans on one fixed task per checkpoint, averaged over n_trials
/// plan seeds. `series` pairs each planner with its training-step counter.
std::vector<CollapsePoint> mode_collapse_probe(
    const std::vector<std::pair<int64_t, const flow::Planner*>>& series,
    const nd::Array& start_env, const nd::Array& goal_env, const flow::GuidanceSpec& task,
    int n_steps, int n_trials, const RandomStream& rng);

}  // namespace fp::bench
