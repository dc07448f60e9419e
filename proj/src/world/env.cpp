#include "fp/world/env.hpp"

#include <algorithm>
#include <cmath>

namespace fp::world {

namespace {

constexpr double kStateBound = 25.0;
constexpr int kMaxRetries = 20;
// Particle PD gains: critically damped (omega = 2) so a 64-step episode at
// dt 0.05 settles within ~0.03 of the goal. Tuned once, frozen.
constexpr double kParticleKp = 4.0;
constexpr double kParticleKd = 4.0;
// Arm tracking gains around the computed-torque inversion.
constexpr double kArmKp = 25.0;
constexpr double kArmKd = 10.0;

double clampd(double x, double lo, double hi) { return std::min(std::max(x, lo), hi); }

// Minimum-jerk scalar profile s(tau) and derivatives, tau in [0,1].
void min_jerk(double tau, double& s, double& ds, double& d2s) {
  const double t2 = tau * tau, t3 = t2 * tau, t4 = t3 * tau, t5 = t4 * tau;
  s = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
  ds = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
  d2s = 60.0 * tau - 180.0 * t2 + 120.0 * t3;
}

struct ForceEpisode {
  int begin = 0;
  int end = 0;
  std::vector<double> force;  // per control dim, env units
};

// One attempt; returns false on divergence.
bool rollout_once(const Env& env, const std::vector<double>& start,
                  const std::vector<double>& goal, const AugmentScheme& scheme, int T,
                  RandomStream& rng, nd::Array& out) {
  const int d = env.state_dim();
  const int cd = env.control_dim();

  // Per-rollout draws happen in a fixed order: (1) RANDOM_POS perturbations,
  // (2) RANDOM_FORCES episode parameters, (3) per-step control noise.
  std::vector<double> s0 = start, s1 = goal;
  if (scheme.kind == AugmentKind::RANDOM_POS) {
    for (int i = 0; i < env.pos_dims(); ++i)
      s0[static_cast<size_t>(i)] += rng.uniform(-scheme.pos_range, scheme.pos_range);
    for (int i = 0; i < env.pos_dims(); ++i)
      s1[static_cast<size_t>(i)] += rng.uniform(-scheme.pos_range, scheme.pos_range);
  }
  std::vector<ForceEpisode> episodes;
  if (scheme.kind == AugmentKind::RANDOM_FORCES) {
    const int n_ep = 1 + static_cast<int>(rng.uniform_index(2));
    for (int e = 0; e < n_ep; ++e) {
      ForceEpisode ep;
      const int dur = 8 + static_cast<int>(rng.uniform_index(17));  // 8..24 steps
      ep.begin = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(std::max(1, T - dur))));
      ep.end = std::min(T, ep.begin + dur);
      ep.force.resize(static_cast<size_t>(cd));
      for (int i = 0; i < cd; ++i)
        ep.force[static_cast<size_t>(i)] = rng.normal(0.0, scheme.force_std * env.a_max);
      episodes.push_back(std::move(ep));
    }
  }

  out = nd::Array({T, d});
  std::vector<double> state = s0;
  std::vector<double> u(static_cast<size_t>(cd));
  std::vector<double> noise(static_cast<size_t>(cd), 0.0);

  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < d; ++j) out.at(t, j) = state[static_cast<size_t>(j)];

    // -- scripted controller --
    if (env.kind == EnvKind::PARTICLE) {
      for (int i = 0; i < 2; ++i)
        u[static_cast<size_t>(i)] = kParticleKp * (s1[static_cast<size_t>(i)] - state[static_cast<size_t>(i)]) -
                                    kParticleKd * state[static_cast<size_t>(i + 2)];
    } else {
      const double tau = T > 1 ? static_cast<double>(t) / static_cast<double>(T - 1) : 1.0;
      const double horizon_s = env.dt * (T - 1);
      double s, ds, d2s;
      min_jerk(tau, s, ds, d2s);
      for (int i = 0; i < 3; ++i) {
        const double q0 = s0[static_cast<size_t>(i)], q1 = s1[static_cast<size_t>(i)];
        const double q_ref = q0 + s * (q1 - q0);
        const double qd_ref = ds * (q1 - q0) / horizon_s;
        const double qdd_ref = d2s * (q1 - q0) / (horizon_s * horizon_s);
        const double e = q_ref - state[static_cast<size_t>(i)];
        const double ed = qd_ref - state[static_cast<size_t>(i + 3)];
        u[static_cast<size_t>(i)] =
            env.inertia[static_cast<size_t>(i)] * (qdd_ref + kArmKp * e + kArmKd * ed) +
            env.damping * state[static_cast<size_t>(i + 3)];
      }
    }

    // -- augmentation: control noise --
    if (scheme.kind == AugmentKind::ACTION_NOISE) {
      for (int i = 0; i < cd; ++i)
        noise[static_cast<size_t>(i)] = rng.normal(0.0, scheme.noise_std * env.a_max);
    } else if (scheme.kind == AugmentKind::SAME_NOISE) {
      const double z = rng.normal(0.0, scheme.noise_std * env.a_max);
      for (int i = 0; i < cd; ++i) noise[static_cast<size_t>(i)] = z;
    } else {
      std::fill(noise.begin(), noise.end(), 0.0);
    }
    for (int i = 0; i < cd; ++i)
      u[static_cast<size_t>(i)] =
          clampd(u[static_cast<size_t>(i)] + noise[static_cast<size_t>(i)], -env.a_max, env.a_max);

    // -- external forces bypass the control clamp --
    std::vector<double> ext(static_cast<size_t>(cd), 0.0);
    for (const ForceEpisode& ep : episodes)
      if (t >= ep.begin && t < ep.end)
        for (int i = 0; i < cd; ++i) ext[static_cast<size_t>(i)] += ep.force[static_cast<size_t>(i)];

    // -- symplectic Euler dynamics (v then p) --
    if (env.kind == EnvKind::PARTICLE) {
      for (int i = 0; i < 2; ++i) {
        state[static_cast<size_t>(i + 2)] += env.dt * (u[static_cast<size_t>(i)] + ext[static_cast<size_t>(i)]);
        state[static_cast<size_t>(i)] += env.dt * state[static_cast<size_t>(i + 2)];
      }
    } else {
      for (int i = 0; i < 3; ++i) {
        const double qdd = (u[static_cast<size_t>(i)] + ext[static_cast<size_t>(i)] -
                            env.damping * state[static_cast<size_t>(i + 3)]) /
                           env.inertia[static_cast<size_t>(i)];
        state[static_cast<size_t>(i + 3)] += env.dt * qdd;
        state[static_cast<size_t>(i)] += env.dt * state[static_cast<size_t>(i + 3)];
        // joint limits
        if (state[static_cast<size_t>(i)] > M_PI) {
          state[static_cast<size_t>(i)] = M_PI;
          state[static_cast<size_t>(i + 3)] = 0.0;
        } else if (state[static_cast<size_t>(i)] < -M_PI) {
          state[static_cast<size_t>(i)] = -M_PI;
          state[static_cast<size_t>(i + 3)] = 0.0;
        }
      }
    }
    for (double x : state)
      if (!std::isfinite(x) || std::fabs(x) > kStateBound) return false;
  }
  return true;
}

}  // namespace

Trajectory rollout(const Env& env, const std::vector<double>& start,
                   const std::vector<double>& goal, const AugmentScheme& scheme, int T,
                   RandomStream& rng) {
  const int d = env.state_dim();
  if (static_cast<int>(start.size()) != d || static_cast<int>(goal.size()) != d)
    throw ShapeError("rollout: start/goal must have state_dim " + std::to_string(d));
  if (T < 2) throw ConfigError("rollout: T must be >= 2");

  Trajectory traj;
  traj.dt = env.dt;
  traj.env = env.kind;
  traj.scheme = scheme.kind;
  for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
    RandomStream sub = rng.child(static_cast<uint64_t>(attempt) + 0xA11E);
    if (rollout_once(env, start, goal, scheme, T, sub, traj.states)) return traj;
  }
  throw NumericError("rollout: diverged " + std::to_string(kMaxRetries) + " times in a row");
}

std::vector<double> cross_arm_state(const Env& env, int arm) {
  if (arm < 0 || arm > 3) throw ConfigError("cross_arm_state: arm must be 0..3");
  if (env.kind == EnvKind::PARTICLE) {
    // left, right, bottom, top at unit distance, at rest
    static const double px[4] = {-1.0, 1.0, 0.0, 0.0};
    static const double py[4] = {0.0, 0.0, -1.0, 1.0};
    return {px[arm], py[arm], 0.0, 0.0};
  }
  // Joint-space cross: the horizontal mode sweeps q1, the vertical sweeps q2;
  // both pass through a shared neighborhood around the zero configuration.
  static const double q1[4] = {-0.9, 0.9, 0.0, 0.0};
  static const double q2[4] = {0.2, 0.2, -0.9, 0.9};
  return {q1[arm], q2[arm], 0.1, 0.0, 0.0, 0.0};
}

double noise_cross_correlation(const AugmentScheme& scheme, int control_dim, int n_steps,
                               RandomStream& rng) {
  if (control_dim < 2) return 0.0;
  if (scheme.kind != AugmentKind::ACTION_NOISE && scheme.kind != AugmentKind::SAME_NOISE)
    return 0.0;
  const size_t cd = static_cast<size_t>(control_dim);
  std::vector<std::vector<double>> draws(cd, std::vector<double>(static_cast<size_t>(n_steps)));
  for (int t = 0; t < n_steps; ++t) {
    if (scheme.kind == AugmentKind::ACTION_NOISE) {
      for (size_t i = 0; i < cd; ++i) draws[i][static_cast<size_t>(t)] = rng.normal();
    } else {
      const double z = rng.normal();
      for (size_t i = 0; i < cd; ++i) draws[i][static_cast<size_t>(t)] = z;
    }
  }
  auto pearson = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0.0, mb = 0.0;
    for (int t = 0; t < n_steps; ++t) {
      ma += a[static_cast<size_t>(t)];
      mb += b[static_cast<size_t>(t)];
    }
    ma /= n_steps;
    mb /= n_steps;
    double cab = 0.0, ca = 0.0, cb = 0.0;
    for (int t = 0; t < n_steps; ++t) {
      const double da = a[static_cast<size_t>(t)] - ma;
      const double db = b[static_cast<size_t>(t)] - mb;
      cab += da * db;
      ca += da * da;
      cb += db * db;
    }
    return cab / std::sqrt(ca * cb);
  };
  double acc = 0.0;
  int n_pairs = 0;
  for (size_t i = 0; i < cd; ++i)
    for (size_t j = i + 1; j < cd; ++j) {
      acc += std::fabs(pearson(draws[i], draws[j]));
      ++n_pairs;
    }
  return acc / n_pairs;
}

}  // namespace fp::world
