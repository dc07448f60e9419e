#include "fp/world/costs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace fp::world {

using nd::Array;
using nd::Tape;
using nd::Var;

double sdf_circle(double px, double py, const Obstacle& o) {
  const double dx = px - o.cx, dy = py - o.cy;
  return std::sqrt(dx * dx + dy * dy) - o.r;
}

std::vector<std::array<double, 2>> fk_points(const double* q,
                                             const std::vector<double>& lengths, int k) {
  std::vector<std::array<double, 2>> pts;
  pts.reserve(lengths.size() * static_cast<size_t>(k));
  double bx = 0.0, by = 0.0, angle = 0.0;
  for (size_t li = 0; li < lengths.size(); ++li) {
    angle += q[li];
    const double cx = std::cos(angle), sy = std::sin(angle);
    for (int j = 1; j <= k; ++j) {
      const double f = lengths[li] * static_cast<double>(j) / static_cast<double>(k);
      pts.push_back({bx + f * cx, by + f * sy});
    }
    bx += lengths[li] * cx;
    by += lengths[li] * sy;
  }
  return pts;
}

double collision_margin_env(const DataContext& ctx, double margin_norm) {
  const int np = ctx.env.pos_dims();
  double s = 0.0;
  for (int d = 0; d < np; ++d) s += ctx.stats.scale(d);
  return margin_norm * s / np;
}

namespace {

// Denormalize a [T,D] trajectory on the tape.
Var denorm(Tape& t, Var traj, const NormStats& st) {
  const int d = t.val(traj).shape.back();
  Array sc({d}), off({d});
  for (int j = 0; j < d; ++j) {
    sc[j] = st.scale(j);
    off[j] = st.offset(j);
  }
  return t.affine_cols(traj, std::move(sc), std::move(off));
}

// relu(margin - (dist - r)) summed over timesteps, one check point.
Var hinge_point(Tape& t, Var px, Var py, const Obstacle& o, double margin) {
  Var dx = t.add_scalar(px, -o.cx);
  Var dy = t.add_scalar(py, -o.cy);
  Var d2 = t.add(t.square(dx), t.square(dy));
  Var dist = t.sqrt(t.add_scalar(d2, 1e-12));  // keeps grad finite at centers
  Var pen = t.relu(t.add_scalar(t.scale(dist, -1.0), margin + o.r));
  return t.sum(pen);
}

}  // namespace

std::vector<std::pair<Var, Var>> fk_planar(Tape& t, Var q, const std::vector<double>& lengths,
                                           int k) {
  const Array& qv = t.val(q);
  if (qv.rank() != 2 || qv.shape[1] != static_cast<int>(lengths.size()))
    throw ShapeError("fk_planar: want q [T," + std::to_string(lengths.size()) + "], got " +
                     nd::shape_str(qv.shape));
  const int tt = qv.shape[0];
  std::vector<std::pair<Var, Var>> points;
  points.reserve(lengths.size() * static_cast<size_t>(k));
  Var angle;  // cumulative
  Var bx = t.constant(Array({tt, 1}));
  Var by = t.constant(Array({tt, 1}));
  for (size_t li = 0; li < lengths.size(); ++li) {
    Var qi = t.narrow(q, 1, static_cast<int>(li), 1);
    angle = angle.ok() ? t.add(angle, qi) : qi;
    const double len = lengths[li];
    Var cx = t.cos(angle);
    Var sy = t.sin(angle);
    for (int j = 1; j <= k; ++j) {
      const double f = len * static_cast<double>(j) / static_cast<double>(k);
      points.emplace_back(t.add(bx, t.scale(cx, f)), t.add(by, t.scale(sy, f)));
    }
    bx = t.add(bx, t.scale(cx, len));
    by = t.add(by, t.scale(sy, len));
  }
  return points;
}

Var collision_cost(Tape& t, Var traj, const std::vector<Obstacle>& obstacles,
                   const DataContext& ctx, double margin_norm) {
  if (obstacles.empty()) throw ConfigError("collision_cost: obstacle list is empty");
  const Array& xv = t.val(traj);
  if (xv.rank() != 2) throw ShapeError("collision_cost: want [T,D], got " + nd::shape_str(xv.shape));
  const double margin = collision_margin_env(ctx, margin_norm);
  Var env_traj = denorm(t, traj, ctx.stats);

  // Check points: the particle position itself, or FK samples per arm link.
  std::vector<std::pair<Var, Var>> points;
  if (ctx.env.kind == EnvKind::PARTICLE) {
    points.emplace_back(t.narrow(env_traj, 1, 0, 1), t.narrow(env_traj, 1, 1, 1));
  } else {
    Var q = t.narrow(env_traj, 1, 0, static_cast<int>(ctx.env.link_lengths.size()));
    points = fk_planar(t, q, ctx.env.link_lengths, ctx.fk_samples);
  }

  Var total;
  for (const Obstacle& o : obstacles)
    for (const auto& [px, py] : points) {
      Var c = hinge_point(t, px, py, o, margin);
      total = total.ok() ? t.add(total, c) : c;
    }
  return total;
}

Var smoothness_cost(Tape& t, Var traj, const DataContext& ctx) {
  const Array& xv = t.val(traj);
  if (xv.rank() != 2) throw ShapeError("smoothness_cost: want [T,D]");
  const int tt = xv.shape[0];
  if (tt < 2) throw ShapeError("smoothness_cost: need T >= 2");
  Var head = t.narrow(traj, 0, 1, tt - 1);
  Var tail = t.narrow(traj, 0, 0, tt - 1);
  Var diff = t.narrow(t.sub(head, tail), 1, 0, ctx.env.pos_dims());
  return t.sum(t.square(diff));
}

double min_traj_sdf(const Array& traj_env, const std::vector<Obstacle>& obstacles,
                    const DataContext& ctx) {
  const int tt = traj_env.shape[0];
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < tt; ++i) {
    std::vector<std::array<double, 2>> pts;
    if (ctx.env.kind == EnvKind::PARTICLE) {
      pts.push_back({traj_env.at(i, 0), traj_env.at(i, 1)});
    } else {
      const double q[3] = {traj_env.at(i, 0), traj_env.at(i, 1), traj_env.at(i, 2)};
      pts = fk_points(q, ctx.env.link_lengths, ctx.fk_samples);
    }
    for (const Obstacle& o : obstacles)
      for (const auto& p : pts) best = std::min(best, sdf_circle(p[0], p[1], o));
  }
  return best;
}

}  // namespace fp::world
