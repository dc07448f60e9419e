#pragma once

#include <array>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fp/bench/bench.hpp"

namespace fp::bench {

/// Shortest decimal string that parses back to exactly v.
std::string fmt_num(double v);

// ---------------------------------------------------------------------------
// CSV — the canonical benchmark output format
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Cells joined by commas; a cell containing comma/quote/newline is quoted
/// with "" escapes.
std::string csv_join(const std::vector<std::string>& cells);

/// Atomic write (temp + rename), LF endings, header first.
void write_csv(const std::string& path, const CsvTable& table);

/// Inverse of write_csv (quoted cells accepted). IoError on malformed input
/// or ragged rows.
CsvTable read_csv(const std::string& path);

// Table builders and their parsers. Schemas (also in the CLI --help text):
//   stitch:    config,index,error           index = sample number | mean | std
//   avoid:     label,radius,success,max_reliable,guidance_scale,used_split
//              (one row per radius; summary cells only on each label's first row)
//   collapse:  step,bend,translate
//   trajs:     traj,t,<state columns>       px,py,vx,vy or q1..q3,qd1..qd3
//   obstacles: cx,cy,r
CsvTable stitch_table(const std::vector<StitchResult>& results);
CsvTable avoid_table(const std::vector<AvoidResult>& results,
                     const std::vector<std::string>& labels);
std::pair<std::vector<AvoidResult>, std::vector<std::string>> avoid_from_table(
    const CsvTable& t);
CsvTable collapse_table(const std::vector<CollapsePoint>& points);
std::vector<CollapsePoint> collapse_from_table(const CsvTable& t);
CsvTable trajs_table(const std::vector<world::Trajectory>& trajs, const world::Env& env);
/// Trajectories plus the env kind recovered from the column names.
std::pair<std::vector<world::Trajectory>, world::EnvKind> trajs_from_table(const CsvTable& t);
CsvTable obstacles_table(const std::vector<world::Obstacle>& obstacles);
std::vector<world::Obstacle> obstacles_from_table(const CsvTable& t);

// ---------------------------------------------------------------------------
// SVG — convenience plots, hand-emitted (no plotting dependency)
// ---------------------------------------------------------------------------

/// World-box to pixel mapping with y up; primitives append to the body.
class SvgCanvas {
 public:
  SvgCanvas(double x_lo, double y_lo, double x_hi, double y_hi, int width = 640,
            int height = 480);

  void line(double x0, double y0, double x1, double y1, const std::string& stroke,
            double width_px = 1.0, const std::string& dash = "");
  void polyline(const std::vector<std::array<double, 2>>& pts, const std::string& stroke,
                double width_px = 1.5, double opacity = 1.0);
  /// r in world units (x scale).
  void circle(double cx, double cy, double r, const std::string& fill,
              const std::string& stroke = "none");
  /// Fixed-size dot, r in pixels.
  void marker(double cx, double cy, double r_px, const std::string& fill);
  void text(double x, double y, const std::string& s, int size_px = 12,
            const std::string& fill = "#444444");
  /// Pixel-coordinate label (for legends/titles outside the data box).
  void text_px(double px, double py, const std::string& s, int size_px = 12,
               const std::string& fill = "#444444");
  /// Border box plus corner coordinate labels and an optional title.
  void frame(const std::string& title = "");

  std::string str() const;
  void save(const std::string& path) const;  // atomic

  double px(double x) const;
  double py(double y) const;

 private:
  double x_lo_, y_lo_, x_hi_, y_hi_;
  int width_, height_, margin_ = 40;
  std::ostringstream body_;
};

/// Task-space overlay (the particle's position / the arm's end-effector):
/// one polyline per trajectory, obstacles to scale, start/goal markers.
void svg_traj_overlay(const std::string& path, const std::vector<world::Trajectory>& trajs,
                      const std::vector<world::Obstacle>& obstacles, const world::Env& env,
                      const std::string& title = "");

/// Success rate vs obstacle radius, one curve per result, with the
/// reliability bar at kReliableRate.
void svg_rate_curves(const std::string& path, const std::vector<AvoidResult>& results,
                     const std::vector<std::string>& labels, const std::string& title = "");

/// Bend and translate traces over training steps.
void svg_collapse_curves(const std::string& path, const std::vector<CollapsePoint>& points,
                         const std::string& title = "");

}  // namespace fp::bench
