#pragma once

#include "fp/common/rng.hpp"
#include "fp/world/types.hpp"

namespace fp::world {

/// Cross dataset: two straight modes (left<->right, bottom<->top), both
/// directions, n_per_mode trajectories per direction (4*n total). Endpoints
/// jittered slightly; only opposite-side conditioning pairs occur. States
/// are min-max normalized to [-1,1] with stats kept on the dataset.
Dataset make_cross_dataset(const Env& env, int n_per_mode, const AugmentScheme& scheme,
                           RandomStream& rng, int T = 64);

/// Straight-line dataset for the obstacle task: left-to-right crossings with
/// start (-1, y0) and goal (1, y1), y0, y1 ~ U(-0.8, 0.8) (particle; the arm
/// analogue sweeps q1 with jittered q2/q3). No arm labels.
Dataset make_straight_dataset(const Env& env, int n, const AugmentScheme& scheme,
                              RandomStream& rng, int T = 64);

/// Min-max stats over every state of every trajectory.
NormStats compute_stats(const std::vector<Trajectory>& trajs);

}  // namespace fp::world
