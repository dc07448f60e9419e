#include "fp/bench/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>

#include "fp/store/store.hpp"

namespace fp::bench {

namespace {

const char* kParticleCols[] = {"px", "py", "vx", "vy"};
const char* kArmCols[] = {"q1", "q2", "q3", "qd1", "qd2", "qd3"};

double parse_num(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw IoError(what + ": expected a number, got '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& s, const std::string& what) {
  int64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw IoError(what + ": expected an integer, got '" + s + "'");
  return v;
}

void need_header(const CsvTable& t, const std::vector<std::string>& expect,
                 const std::string& what) {
  if (t.header != expect) {
    std::string got;
    for (size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
    throw IoError(what + ": unexpected header '" + got + "'");
  }
}

std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else out += c;
  }
  return out;
}

const char* kPalette[] = {"#3465a4", "#cc6d2e", "#2e8b57", "#9354b0",
                          "#b03060", "#5f7f8f"};
constexpr int kPaletteSize = 6;

}  // namespace

std::string fmt_num(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::string csv_join(const std::vector<std::string>& cells) {
  std::string out;
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    const std::string& c = cells[i];
    if (c.find_first_of(",\"\n\r") != std::string::npos) {
      out += '"';
      for (char ch : c) {
        if (ch == '"') out += '"';
        out += ch;
      }
      out += '"';
    } else {
      out += c;
    }
  }
  return out;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::string out = csv_join(table.header) + "\n";
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw ShapeError("write_csv: row with " + std::to_string(row.size()) +
                       " cells under a " + std::to_string(table.header.size()) +
                       "-column header");
    out += csv_join(row) + "\n";
  }
  store::write_file_atomic(path, out);
}

CsvTable read_csv(const std::string& path) {
  const std::string bytes = store::read_file(path);
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> row;
  std::string cell;
  bool quoted = false;
  bool row_open = false;  // distinguishes an empty trailing line from a record

  for (size_t i = 0; i < bytes.size(); ++i) {
    const char c = bytes[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < bytes.size() && bytes[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
      continue;
    }
    if (c == '"' && cell.empty()) {
      quoted = true;
      row_open = true;
    } else if (c == ',') {
      row.push_back(std::move(cell));
      cell.clear();
      row_open = true;
    } else if (c == '\n') {
      if (row_open || !cell.empty()) {
        row.push_back(std::move(cell));
        cell.clear();
        records.push_back(std::move(row));
        row.clear();
        row_open = false;
      }
    } else if (c != '\r') {
      cell += c;
      row_open = true;
    }
  }
  if (quoted) throw IoError(path + ": unterminated quoted cell");
  if (row_open || !cell.empty()) {
    row.push_back(std::move(cell));
    records.push_back(std::move(row));
  }
  if (records.empty()) throw IoError(path + ": empty CSV");

  CsvTable t;
  t.header = std::move(records.front());
  for (size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw IoError(path + ": row " + std::to_string(r) + " has " +
                    std::to_string(records[r].size()) + " cells, header has " +
                    std::to_string(t.header.size()));
    t.rows.push_back(std::move(records[r]));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Domain tables
// ---------------------------------------------------------------------------

CsvTable stitch_table(const std::vector<StitchResult>& results) {
  CsvTable t;
  t.header = {"config", "index", "error"};
  for (const auto& r : results) {
    for (size_t i = 0; i < r.errors.size(); ++i)
      t.rows.push_back({r.config, std::to_string(i), fmt_num(r.errors[i])});
    t.rows.push_back({r.config, "mean", fmt_num(r.mean)});
    t.rows.push_back({r.config, "std", fmt_num(r.stddev)});
  }
  return t;
}

CsvTable avoid_table(const std::vector<AvoidResult>& results,
                     const std::vector<std::string>& labels) {
  if (results.size() != labels.size())
    throw ConfigError("avoid_table: " + std::to_string(results.size()) + " results vs " +
                      std::to_string(labels.size()) + " labels");
  CsvTable t;
  t.header = {"label", "radius", "success", "max_reliable", "guidance_scale", "used_split"};
  for (size_t k = 0; k < results.size(); ++k) {
    const auto& r = results[k];
    for (size_t j = 0; j < r.radii.size(); ++j) {
      std::vector<std::string> row = {labels[k], fmt_num(r.radii[j]),
                                      fmt_num(r.success[j]), "", "", ""};
      if (j == 0) {
        row[3] = fmt_num(r.max_reliable_radius);
        row[4] = fmt_num(r.guidance_scale);
        row[5] = r.used_split ? "1" : "0";
      }
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::pair<std::vector<AvoidResult>, std::vector<std::string>> avoid_from_table(
    const CsvTable& t) {
  need_header(t, {"label", "radius", "success", "max_reliable", "guidance_scale",
                  "used_split"},
              "avoid table");
  std::vector<AvoidResult> results;
  std::vector<std::string> labels;
  for (const auto& row : t.rows) {
    const bool is_summary = !row[3].empty();
    if (is_summary) {
      labels.push_back(row[0]);
      AvoidResult r;
      r.max_reliable_radius = parse_num(row[3], "avoid table max_reliable");
      r.guidance_scale = parse_num(row[4], "avoid table guidance_scale");
      r.used_split = parse_int(row[5], "avoid table used_split") != 0;
      results.push_back(std::move(r));
    }
    if (results.empty() || row[0] != labels.back())
      throw IoError("avoid table: row for label '" + row[0] +
                    "' does not follow its summary row");
    results.back().radii.push_back(parse_num(row[1], "avoid table radius"));
    results.back().success.push_back(parse_num(row[2], "avoid table success"));
  }
  return {std::move(results), std::move(labels)};
}

CsvTable collapse_table(const std::vector<CollapsePoint>& points) {
  CsvTable t;
  t.header = {"step", "bend", "translate"};
  for (const auto& p : points)
    t.rows.push_back({std::to_string(p.step), fmt_num(p.bend), fmt_num(p.translate)});
  return t;
}

std::vector<CollapsePoint> collapse_from_table(const CsvTable& t) {
  need_header(t, {"step", "bend", "translate"}, "collapse table");
  std::vector<CollapsePoint> out;
  for (const auto& row : t.rows) {
    CollapsePoint p;
    p.step = parse_int(row[0], "collapse table step");
    p.bend = parse_num(row[1], "collapse table bend");
    p.translate = parse_num(row[2], "collapse table translate");
    out.push_back(p);
  }
  return out;
}

CsvTable trajs_table(const std::vector<world::Trajectory>& trajs, const world::Env& env) {
  const bool particle = env.kind == world::EnvKind::PARTICLE;
  const auto& cols = particle ? kParticleCols : kArmCols;
  const int dim = env.state_dim();

  CsvTable t;
  t.header = {"traj", "t"};
  for (int d = 0; d < dim; ++d) t.header.push_back(cols[d]);
  for (size_t k = 0; k < trajs.size(); ++k) {
    const auto& tr = trajs[k];
    if (tr.dim() != dim)
      throw ShapeError("trajs_table: trajectory " + std::to_string(k) + " has dim " +
                       std::to_string(tr.dim()) + ", env needs " + std::to_string(dim));
    for (int i = 0; i < tr.horizon(); ++i) {
      std::vector<std::string> row = {std::to_string(k), fmt_num(i * tr.dt)};
      for (int d = 0; d < dim; ++d) row.push_back(fmt_num(tr.states.at(i, d)));
      t.rows.push_back(std::move(row));
    }
  }
  return t;
}

std::pair<std::vector<world::Trajectory>, world::EnvKind> trajs_from_table(
    const CsvTable& t) {
  if (t.header.size() < 3 || t.header[0] != "traj" || t.header[1] != "t")
    throw IoError("trajectory table: header must start with traj,t");
  const world::EnvKind kind =
      t.header[2] == "px" ? world::EnvKind::PARTICLE : world::EnvKind::ARM;
  const bool particle = kind == world::EnvKind::PARTICLE;
  const auto& cols = particle ? kParticleCols : kArmCols;
  const int dim = particle ? 4 : 6;
  std::vector<std::string> expect = {"traj", "t"};
  for (int d = 0; d < dim; ++d) expect.push_back(cols[d]);
  need_header(t, expect, "trajectory table");

  std::vector<world::Trajectory> trajs;
  std::vector<std::vector<double>> rows;
  std::vector<double> times;
  int64_t current = -1;

  auto flush = [&] {
    if (rows.empty()) return;
    world::Trajectory tr;
    tr.env = kind;
    tr.states = nd::Array({static_cast<int>(rows.size()), dim});
    for (size_t i = 0; i < rows.size(); ++i)
      for (int d = 0; d < dim; ++d) tr.states.at(static_cast<int>(i), d) = rows[i][d];
    if (times.size() > 1) tr.dt = times[1] - times[0];
    trajs.push_back(std::move(tr));
    rows.clear();
    times.clear();
  };

  for (const auto& row : t.rows) {
    const int64_t idx = parse_int(row[0], "trajectory table traj");
    if (idx != current) {
      flush();
      current = idx;
    }
    times.push_back(parse_num(row[1], "trajectory table t"));
    std::vector<double> state(static_cast<size_t>(dim));
    for (int d = 0; d < dim; ++d)
      state[static_cast<size_t>(d)] =
          parse_num(row[static_cast<size_t>(d) + 2], "trajectory table state");
    rows.push_back(std::move(state));
  }
  flush();
  return {std::move(trajs), kind};
}

CsvTable obstacles_table(const std::vector<world::Obstacle>& obstacles) {
  CsvTable t;
  t.header = {"cx", "cy", "r"};
  for (const auto& o : obstacles)
    t.rows.push_back({fmt_num(o.cx), fmt_num(o.cy), fmt_num(o.r)});
  return t;
}

std::vector<world::Obstacle> obstacles_from_table(const CsvTable& t) {
  need_header(t, {"cx", "cy", "r"}, "obstacle table");
  std::vector<world::Obstacle> out;
  for (const auto& row : t.rows)
    out.push_back({parse_num(row[0], "obstacle cx"), parse_num(row[1], "obstacle cy"),
                   parse_num(row[2], "obstacle r")});
  return out;
}

// ---------------------------------------------------------------------------
// SVG
// ---------------------------------------------------------------------------

SvgCanvas::SvgCanvas(double x_lo, double y_lo, double x_hi, double y_hi, int width,
                     int height)
    : x_lo_(x_lo), y_lo_(y_lo), x_hi_(x_hi), y_hi_(y_hi), width_(width), height_(height) {
  if (!(x_hi_ > x_lo_)) {
    x_lo_ -= 0.5;
    x_hi_ = x_lo_ + 1.0;
  }
  if (!(y_hi_ > y_lo_)) {
    y_lo_ -= 0.5;
    y_hi_ = y_lo_ + 1.0;
  }
}

double SvgCanvas::px(double x) const {
  return margin_ + (x - x_lo_) / (x_hi_ - x_lo_) * (width_ - 2 * margin_);
}

double SvgCanvas::py(double y) const {
  return height_ - margin_ - (y - y_lo_) / (y_hi_ - y_lo_) * (height_ - 2 * margin_);
}

void SvgCanvas::line(double x0, double y0, double x1, double y1, const std::string& stroke,
                     double width_px, const std::string& dash) {
  body_ << "<line x1=\"" << fmt_px(px(x0)) << "\" y1=\"" << fmt_px(py(y0)) << "\" x2=\""
        << fmt_px(px(x1)) << "\" y2=\"" << fmt_px(py(y1)) << "\" stroke=\"" << stroke
        << "\" stroke-width=\"" << fmt_px(width_px) << "\"";
  if (!dash.empty()) body_ << " stroke-dasharray=\"" << dash << "\"";
  body_ << "/>\n";
}

void SvgCanvas::polyline(const std::vector<std::array<double, 2>>& pts,
                         const std::string& stroke, double width_px, double opacity) {
  if (pts.empty()) return;
  body_ << "<polyline fill=\"none\" stroke=\"" << stroke << "\" stroke-width=\""
        << fmt_px(width_px) << "\"";
  if (opacity < 1.0) body_ << " stroke-opacity=\"" << fmt_px(opacity) << "\"";
  body_ << " points=\"";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) body_ << ' ';
    body_ << fmt_px(px(pts[i][0])) << ',' << fmt_px(py(pts[i][1]));
  }
  body_ << "\"/>\n";
}

void SvgCanvas::circle(double cx, double cy, double r, const std::string& fill,
                       const std::string& stroke) {
  const double r_px = r / (x_hi_ - x_lo_) * (width_ - 2 * margin_);
  body_ << "<circle cx=\"" << fmt_px(px(cx)) << "\" cy=\"" << fmt_px(py(cy)) << "\" r=\""
        << fmt_px(r_px) << "\" fill=\"" << fill << "\"";
  if (stroke != "none") body_ << " stroke=\"" << stroke << "\" stroke-width=\"1.0\"";
  body_ << "/>\n";
}

void SvgCanvas::marker(double cx, double cy, double r_px, const std::string& fill) {
  body_ << "<circle cx=\"" << fmt_px(px(cx)) << "\" cy=\"" << fmt_px(py(cy)) << "\" r=\""
        << fmt_px(r_px) << "\" fill=\"" << fill << "\"/>\n";
}

void SvgCanvas::text(double x, double y, const std::string& s, int size_px,
                     const std::string& fill) {
  text_px(px(x), py(y), s, size_px, fill);
}

void SvgCanvas::text_px(double x, double y, const std::string& s, int size_px,
                        const std::string& fill) {
  body_ << "<text x=\"" << fmt_px(x) << "\" y=\"" << fmt_px(y) << "\" font-size=\""
        << size_px << "\" font-family=\"sans-serif\" fill=\"" << fill << "\">"
        << xml_escape(s) << "</text>\n";
}

void SvgCanvas::frame(const std::string& title) {
  body_ << "<rect x=\"" << fmt_px(margin_) << "\" y=\"" << fmt_px(margin_) << "\" width=\""
        << fmt_px(width_ - 2 * margin_) << "\" height=\"" << fmt_px(height_ - 2 * margin_)
        << "\" fill=\"none\" stroke=\"#999999\" stroke-width=\"1.0\"/>\n";
  char lo[32], hi[32];
  std::snprintf(lo, sizeof(lo), "%.3g", x_lo_);
  std::snprintf(hi, sizeof(hi), "%.3g", x_hi_);
  text_px(margin_, height_ - margin_ + 16, lo, 11, "#777777");
  text_px(width_ - margin_ - 24, height_ - margin_ + 16, hi, 11, "#777777");
  std::snprintf(lo, sizeof(lo), "%.3g", y_lo_);
  std::snprintf(hi, sizeof(hi), "%.3g", y_hi_);
  text_px(4, height_ - margin_, lo, 11, "#777777");
  text_px(4, margin_ + 10, hi, 11, "#777777");
  if (!title.empty()) text_px(margin_, margin_ - 12, title, 14, "#333333");
}

std::string SvgCanvas::str() const {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width_ << "\" height=\""
      << height_ << "\" viewBox=\"0 0 " << width_ << ' ' << height_ << "\">\n"
      << "<rect width=\"" << width_ << "\" height=\"" << height_
      << "\" fill=\"#ffffff\"/>\n"
      << body_.str() << "</svg>\n";
  return out.str();
}

void SvgCanvas::save(const std::string& path) const {
  store::write_file_atomic(path, str());
}

void svg_traj_overlay(const std::string& path, const std::vector<world::Trajectory>& trajs,
                      const std::vector<world::Obstacle>& obstacles, const world::Env& env,
                      const std::string& title) {
  std::vector<std::vector<std::array<double, 2>>> paths;
  double x_lo = 1e300, x_hi = -1e300, y_lo = 1e300, y_hi = -1e300;
  auto grow = [&](double x, double y) {
    x_lo = std::min(x_lo, x);
    x_hi = std::max(x_hi, x);
    y_lo = std::min(y_lo, y);
    y_hi = std::max(y_hi, y);
  };
  std::vector<double> row;
  for (const auto& tr : trajs) {
    std::vector<std::array<double, 2>> pts;
    row.resize(static_cast<size_t>(tr.dim()));
    for (int i = 0; i < tr.horizon(); ++i) {
      for (int d = 0; d < tr.dim(); ++d) row[static_cast<size_t>(d)] = tr.states.at(i, d);
      const auto p = task_point(row.data(), env);
      grow(p[0], p[1]);
      pts.push_back(p);
    }
    paths.push_back(std::move(pts));
  }
  for (const auto& o : obstacles) {
    grow(o.cx - o.r, o.cy - o.r);
    grow(o.cx + o.r, o.cy + o.r);
  }
  if (x_lo > x_hi) {  // nothing to draw; keep a sane box
    x_lo = y_lo = -1.0;
    x_hi = y_hi = 1.0;
  }
  // Pad and equalize aspect so world circles render round.
  const double pad = 0.08 * std::max(x_hi - x_lo, y_hi - y_lo) + 1e-6;
  x_lo -= pad, x_hi += pad, y_lo -= pad, y_hi += pad;
  const double span = std::max(x_hi - x_lo, y_hi - y_lo);
  const double cx = 0.5 * (x_lo + x_hi), cy = 0.5 * (y_lo + y_hi);
  SvgCanvas svg(cx - span / 2, cy - span / 2, cx + span / 2, cy + span / 2, 560, 560);
  svg.frame(title);
  for (const auto& o : obstacles) svg.circle(o.cx, o.cy, o.r, "#f2c4c4", "#c0504d");
  for (size_t k = 0; k < paths.size(); ++k) {
    svg.polyline(paths[k], kPalette[k % kPaletteSize], 1.5,
                 paths.size() > 4 ? 0.75 : 1.0);
    if (!paths[k].empty()) {
      svg.marker(paths[k].front()[0], paths[k].front()[1], 4.0, "#2e8b57");
      svg.marker(paths[k].back()[0], paths[k].back()[1], 4.0, "#d43a3a");
    }
  }
  svg.save(path);
}

void svg_rate_curves(const std::string& path, const std::vector<AvoidResult>& results,
                     const std::vector<std::string>& labels, const std::string& title) {
  if (results.size() != labels.size())
    throw ConfigError("svg_rate_curves: results/labels size mismatch");
  double r_hi = 0.0;
  for (const auto& r : results)
    for (double x : r.radii) r_hi = std::max(r_hi, x);
  if (r_hi <= 0.0) r_hi = 1.0;
  SvgCanvas svg(0.0, 0.0, 1.05 * r_hi, 1.05, 640, 440);
  svg.frame(title);
  svg.line(0.0, kReliableRate, 1.05 * r_hi, kReliableRate, "#999999", 1.0, "6,4");
  svg.text_px(596, svg.py(kReliableRate) - 4, fmt_num(kReliableRate), 11, "#777777");
  for (size_t k = 0; k < results.size(); ++k) {
    const std::string color = kPalette[k % kPaletteSize];
    std::vector<std::array<double, 2>> pts;
    for (size_t j = 0; j < results[k].radii.size(); ++j) {
      pts.push_back({results[k].radii[j], results[k].success[j]});
      svg.marker(results[k].radii[j], results[k].success[j], 3.0, color);
    }
    svg.polyline(pts, color, 1.5);
    svg.text_px(56, 56 + 16.0 * static_cast<double>(k), labels[k], 12, color);
  }
  svg.text_px(540, 424, "radius", 12, "#555555");
  svg.text_px(4, 24, "success", 12, "#555555");
  svg.save(path);
}

void svg_collapse_curves(const std::string& path, const std::vector<CollapsePoint>& points,
                         const std::string& title) {
  double s_lo = 0.0, s_hi = 1.0, v_hi = 1e-9;
  if (!points.empty()) {
    s_lo = static_cast<double>(points.front().step);
    s_hi = static_cast<double>(points.back().step);
    for (const auto& p : points) v_hi = std::max({v_hi, p.bend, p.translate});
  }
  SvgCanvas svg(s_lo, 0.0, s_hi, 1.1 * v_hi, 640, 440);
  svg.frame(title);
  std::vector<std::array<double, 2>> bend, translate;
  for (const auto& p : points) {
    bend.push_back({static_cast<double>(p.step), p.bend});
    translate.push_back({static_cast<double>(p.step), p.translate});
    svg.marker(static_cast<double>(p.step), p.bend, 3.0, kPalette[0]);
    svg.marker(static_cast<double>(p.step), p.translate, 3.0, kPalette[1]);
  }
  svg.polyline(bend, kPalette[0], 1.5);
  svg.polyline(translate, kPalette[1], 1.5);
  svg.text_px(56, 56, "bend", 12, kPalette[0]);
  svg.text_px(56, 72, "translate", 12, kPalette[1]);
  svg.text_px(530, 424, "train step", 12, "#555555");
  svg.save(path);
}

}  // namespace fp::bench
