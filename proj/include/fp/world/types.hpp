#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fp/common/error.hpp"
#include "fp/nd/array.hpp"

namespace fp::world {

enum class EnvKind : uint8_t { PARTICLE = 0, ARM = 1 };

enum class AugmentKind : uint8_t {
  NONE = 0,
  ACTION_NOISE = 1,
  SAME_NOISE = 2,
  RANDOM_POS = 3,
  RANDOM_FORCES = 4,
};

std::string env_name(EnvKind k);
std::string augment_name(AugmentKind k);
EnvKind parse_env(const std::string& s);        // ConfigError on unknown name
AugmentKind parse_augment(const std::string& s);

struct AugmentScheme {
  AugmentKind kind = AugmentKind::NONE;
  // Control-noise std as a fraction of the env's control limit
  // (ACTION_NOISE / SAME_NOISE).
  double noise_std = 0.3;
  // Start/goal position perturbation half-range (RANDOM_POS), env units.
  double pos_range = 0.2;
  // External force std as a fraction of the control limit (RANDOM_FORCES).
  double force_std = 0.3;
};

/// Double-integrator particle (state px,py,vx,vy) or planar 3-link arm
/// (state q1..q3, qd1..qd3) with diagonal inertia. One struct, switched on
/// kind, so env parameters serialize as plain fields.
struct Env {
  EnvKind kind = EnvKind::PARTICLE;
  double dt = 0.05;
  double a_max = 10.0;  // per-dim control limit: acceleration / torque
  // Arm only:
  std::vector<double> link_lengths = {0.5, 0.4, 0.3};
  std::vector<double> inertia = {1.0, 0.6, 0.3};
  double damping = 0.1;

  int state_dim() const { return kind == EnvKind::PARTICLE ? 4 : 6; }
  int control_dim() const { return kind == EnvKind::PARTICLE ? 2 : 3; }
  int pos_dims() const { return kind == EnvKind::PARTICLE ? 2 : 3; }
};

struct Trajectory {
  nd::Array states;  // [T, D]
  double dt = 0.05;
  EnvKind env = EnvKind::PARTICLE;
  AugmentKind scheme = AugmentKind::NONE;
  // Cross-arm labels, -1 when not applicable (straight dataset).
  int start_arm = -1;
  int end_arm = -1;

  int horizon() const { return states.shape[0]; }
  int dim() const { return states.shape[1]; }
};

/// Per-dimension min-max stats mapping env units to [-1, 1].
struct NormStats {
  std::vector<double> lo, hi;

  int dims() const { return static_cast<int>(lo.size()); }
  double scale(int d) const {
    const double s = 0.5 * (hi[static_cast<size_t>(d)] - lo[static_cast<size_t>(d)]);
    return s > 1e-12 ? s : 1.0;  // constant dims map to 0 and back exactly
  }
  double offset(int d) const {
    return 0.5 * (hi[static_cast<size_t>(d)] + lo[static_cast<size_t>(d)]);
  }
  double normalize(double x, int d) const { return (x - offset(d)) / scale(d); }
  double denormalize(double x, int d) const { return x * scale(d) + offset(d); }

  void normalize_inplace(nd::Array& states) const;
  void denormalize_inplace(nd::Array& states) const;
};

/// Trajectories stored normalized; stats invert back to env units.
struct Dataset {
  Env env;
  AugmentScheme scheme;
  int T = 64;
  int D = 4;
  NormStats stats;
  std::vector<Trajectory> trajs;  // states normalized to [-1,1]

  size_t size() const { return trajs.size(); }
};

struct Obstacle {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.1;
};

/// Everything a planner needs to move between normalized and env space.
/// Persisted inside checkpoints so plans denormalize without the dataset.
struct DataContext {
  Env env;
  NormStats stats;
  int fk_samples = 3;
};

}  // namespace fp::world
