#pragma once

#include <array>
#include <vector>

#include "fp/nd/tape.hpp"
#include "fp/world/types.hpp"

namespace fp::world {

/// ||p - center|| - radius: negative inside, zero on the boundary.
double sdf_circle(double px, double py, const Obstacle& o);

/// Planar chain sample points, k per link at fractions 1/k..k/k of each
/// link, cumulative angles. q points to 3 joint angles.
std::vector<std::array<double, 2>> fk_points(const double* q,
                                             const std::vector<double>& lengths, int k);

/// Obstacles live in env units while the margin is a normalized-unit length;
/// it is scaled by the mean position scale before comparing with SDFs.
double collision_margin_env(const DataContext& ctx, double margin_norm);

/// Differentiable planar FK: q is [T,3] joint angles (env units) on the
/// tape; returns the same sample points as fk_points as (px, py) column
/// pairs, each [T,1].
std::vector<std::pair<nd::Var, nd::Var>> fk_planar(nd::Tape& t, nd::Var q,
                                                   const std::vector<double>& lengths,
                                                   int k = 3);

/// Hinge collision cost of a normalized trajectory [T,D]: denormalizes on
/// the tape, gathers check points (the particle itself / FK samples per arm
/// link), and sums relu(margin - sdf) over timesteps, points and obstacles.
nd::Var collision_cost(nd::Tape& t, nd::Var traj, const std::vector<Obstacle>& obstacles,
                       const DataContext& ctx, double margin_norm = 0.03);

/// GP smoothness: sum of squared first differences over position dims,
/// normalized units.
nd::Var smoothness_cost(nd::Tape& t, nd::Var traj, const DataContext& ctx);

/// Minimum SDF over all timesteps and check points of an env-unit
/// trajectory; > 0 means collision-free.
double min_traj_sdf(const nd::Array& traj_env, const std::vector<Obstacle>& obstacles,
                    const DataContext& ctx);

}  // namespace fp::world
