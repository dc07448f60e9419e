#include "fp/world/dataset.hpp"

#include <algorithm>
#include <limits>

#include "fp/world/env.hpp"

namespace fp::world {

std::string env_name(EnvKind k) { return k == EnvKind::PARTICLE ? "particle" : "arm"; }

std::string augment_name(AugmentKind k) {
  switch (k) {
    case AugmentKind::NONE: return "none";
    case AugmentKind::ACTION_NOISE: return "action_noise";
    case AugmentKind::SAME_NOISE: return "same_noise";
    case AugmentKind::RANDOM_POS: return "random_pos";
    case AugmentKind::RANDOM_FORCES: return "random_forces";
  }
  return "?";
}

EnvKind parse_env(const std::string& s) {
  if (s == "particle") return EnvKind::PARTICLE;
  if (s == "arm") return EnvKind::ARM;
  throw ConfigError("unknown env '" + s + "' (valid: particle, arm)");
}

AugmentKind parse_augment(const std::string& s) {
  if (s == "none") return AugmentKind::NONE;
  if (s == "action_noise") return AugmentKind::ACTION_NOISE;
  if (s == "same_noise") return AugmentKind::SAME_NOISE;
  if (s == "random_pos") return AugmentKind::RANDOM_POS;
  if (s == "random_forces") return AugmentKind::RANDOM_FORCES;
  throw ConfigError("unknown scheme '" + s +
                    "' (valid: none, action_noise, same_noise, random_pos, random_forces)");
}

void NormStats::normalize_inplace(nd::Array& states) const {
  const int t = states.shape[0], d = states.shape[1];
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) states.at(i, j) = normalize(states.at(i, j), j);
}

void NormStats::denormalize_inplace(nd::Array& states) const {
  const int t = states.shape[0], d = states.shape[1];
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) states.at(i, j) = denormalize(states.at(i, j), j);
}

NormStats compute_stats(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) throw ConfigError("compute_stats: empty trajectory list");
  const int d = trajs.front().dim();
  NormStats st;
  st.lo.assign(static_cast<size_t>(d), std::numeric_limits<double>::infinity());
  st.hi.assign(static_cast<size_t>(d), -std::numeric_limits<double>::infinity());
  for (const Trajectory& tr : trajs) {
    const int t = tr.horizon();
    for (int i = 0; i < t; ++i)
      for (int j = 0; j < d; ++j) {
        const double x = tr.states.at(i, j);
        st.lo[static_cast<size_t>(j)] = std::min(st.lo[static_cast<size_t>(j)], x);
        st.hi[static_cast<size_t>(j)] = std::max(st.hi[static_cast<size_t>(j)], x);
      }
  }
  return st;
}

namespace {

constexpr double kEndpointJitter = 0.05;

Dataset finalize(const Env& env, const AugmentScheme& scheme, int T,
                 std::vector<Trajectory> trajs) {
  Dataset ds;
  ds.env = env;
  ds.scheme = scheme;
  ds.T = T;
  ds.D = env.state_dim();
  ds.stats = compute_stats(trajs);
  for (Trajectory& tr : trajs) ds.stats.normalize_inplace(tr.states);
  ds.trajs = std::move(trajs);
  return ds;
}

}  // namespace

Dataset make_cross_dataset(const Env& env, int n_per_mode, const AugmentScheme& scheme,
                           RandomStream& rng, int T) {
  if (n_per_mode < 1) throw ConfigError("make_cross_dataset: n_per_mode must be >= 1");
  // Opposite-side pairs only: the four directed crossings of the two modes.
  static const int kPairs[4][2] = {{0, 1}, {1, 0}, {2, 3}, {3, 2}};
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<size_t>(n_per_mode) * 4);
  uint64_t idx = 0;
  for (const auto& pair : kPairs)
    for (int i = 0; i < n_per_mode; ++i, ++idx) {
      RandomStream sub = rng.child(idx);
      std::vector<double> s0 = cross_arm_state(env, pair[0]);
      std::vector<double> s1 = cross_arm_state(env, pair[1]);
      for (int j = 0; j < env.pos_dims(); ++j) {
        s0[static_cast<size_t>(j)] += sub.uniform(-kEndpointJitter, kEndpointJitter);
        s1[static_cast<size_t>(j)] += sub.uniform(-kEndpointJitter, kEndpointJitter);
      }
      Trajectory tr = rollout(env, s0, s1, scheme, T, sub);
      tr.start_arm = pair[0];
      tr.end_arm = pair[1];
      trajs.push_back(std::move(tr));
    }
  return finalize(env, scheme, T, std::move(trajs));
}

Dataset make_straight_dataset(const Env& env, int n, const AugmentScheme& scheme,
                              RandomStream& rng, int T) {
  if (n < 1) throw ConfigError("make_straight_dataset: n must be >= 1");
  std::vector<Trajectory> trajs;
  trajs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    RandomStream sub = rng.child(static_cast<uint64_t>(i));
    std::vector<double> s0, s1;
    if (env.kind == EnvKind::PARTICLE) {
      s0 = {-1.0, sub.uniform(-0.8, 0.8), 0.0, 0.0};
      s1 = {1.0, sub.uniform(-0.8, 0.8), 0.0, 0.0};
    } else {
      s0 = {-0.9, sub.uniform(-0.6, 0.6), 0.1, 0.0, 0.0, 0.0};
      s1 = {0.9, sub.uniform(-0.6, 0.6), 0.1, 0.0, 0.0, 0.0};
    }
    trajs.push_back(rollout(env, s0, s1, scheme, T, sub));
  }
  return finalize(env, scheme, T, std::move(trajs));
}

}  // namespace fp::world
