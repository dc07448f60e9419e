#pragma once

#include "fp/common/rng.hpp"
#include "fp/world/types.hpp"

namespace fp::world {

/// One scripted-controller rollout of T steps. The controller is a PD law to
/// the goal for the particle and a computed-torque tracker of a minimum-jerk
/// joint reference for the arm. The scheme injects its perturbations; a
/// diverging rollout (|state| > bound) is resampled from a fresh child
/// stream, up to a retry cap.
Trajectory rollout(const Env& env, const std::vector<double>& start,
                   const std::vector<double>& goal, const AugmentScheme& scheme, int T,
                   RandomStream& rng);

/// Boundary states of the four cross arms (0 left, 1 right, 2 bottom, 3 top),
/// at rest, in env units.
std::vector<double> cross_arm_state(const Env& env, int arm);

/// Pearson cross-correlation of the injected control noise between control
/// dims, measured over n_steps draws (no dynamics). ACTION_NOISE decorrelates
/// (~0); SAME_NOISE is fully correlated (~1). Schemes without control noise
/// return 0.
double noise_cross_correlation(const AugmentScheme& scheme, int control_dim, int n_steps,
                               RandomStream& rng);

}  // namespace fp::world
