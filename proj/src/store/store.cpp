#include "fp/store/store.hpp"

#include <bit>
#include <cerrno>
#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fp/common/rng.hpp"  // fnv1a64

namespace fp::store {

namespace {

constexpr uint16_t kDatasetVersion = 1;
constexpr uint16_t kCheckpointVersion = 1;
// Bytes before the embedded config hash: magic (4) + version (2).
constexpr size_t kHashOffset = 6;
constexpr size_t kPayloadOffset = kHashOffset + 8;

// --- little-endian byte encoding -------------------------------------------

void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& b, uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i32(std::string& b, int32_t v) { put_u32(b, static_cast<uint32_t>(v)); }
void put_i64(std::string& b, int64_t v) { put_u64(b, static_cast<uint64_t>(v)); }
void put_f64(std::string& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }

void put_str(std::string& b, const std::string& s) {
  put_u32(b, static_cast<uint32_t>(s.size()));
  b.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string origin;  // file path, for error messages

  void need(size_t n) const {
    if (pos + n > buf.size())
      throw IoError(origin + ": truncated file (wanted " + std::to_string(n) + " bytes at offset " +
                    std::to_string(pos) + ", have " + std::to_string(buf.size() - pos) + ")");
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(buf[pos]) |
                 static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8;
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]))
           << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + static_cast<size_t>(i)]))
           << (8 * i);
    pos += 8;
    return v;
  }
  int32_t i32() { return static_cast<int32_t>(u32()); }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void done() const {
    if (pos != buf.size())
      throw IoError(origin + ": " + std::to_string(buf.size() - pos) +
                    " unexpected trailing bytes");
  }
};

void check_magic(Reader& r, const char* magic, const char* what) {
  r.need(4);
  if (std::memcmp(r.buf.data() + r.pos, magic, 4) != 0)
    throw IoError(r.origin + ": not a " + what + " file (bad magic)");
  r.pos += 4;
}

void check_version(Reader& r, uint16_t want, const char* what) {
  const uint16_t got = r.u16();
  if (got != want)
    throw IoError(r.origin + ": unsupported " + what + " version " + std::to_string(got) +
                  " (this build reads version " + std::to_string(want) + ")");
}

// --- shared sub-records ------------------------------------------------------

void put_env(std::string& b, const world::Env& e) {
  put_u16(b, static_cast<uint16_t>(e.kind));
  put_f64(b, e.dt);
  put_f64(b, e.a_max);
  put_u16(b, static_cast<uint16_t>(e.link_lengths.size()));
  for (double v : e.link_lengths) put_f64(b, v);
  put_u16(b, static_cast<uint16_t>(e.inertia.size()));
  for (double v : e.inertia) put_f64(b, v);
  put_f64(b, e.damping);
}

world::Env get_env(Reader& r) {
  world::Env e;
  e.kind = static_cast<world::EnvKind>(r.u16());
  e.dt = r.f64();
  e.a_max = r.f64();
  e.link_lengths.resize(r.u16());
  for (double& v : e.link_lengths) v = r.f64();
  e.inertia.resize(r.u16());
  for (double& v : e.inertia) v = r.f64();
  e.damping = r.f64();
  return e;
}

void put_stats(std::string& b, const world::NormStats& s) {
  put_u16(b, static_cast<uint16_t>(s.lo.size()));
  for (double v : s.lo) put_f64(b, v);
  for (double v : s.hi) put_f64(b, v);
}

world::NormStats get_stats(Reader& r) {
  world::NormStats s;
  const uint16_t d = r.u16();
  s.lo.resize(d);
  s.hi.resize(d);
  for (double& v : s.lo) v = r.f64();
  for (double& v : s.hi) v = r.f64();
  return s;
}

void put_params(std::string& b, const nd::ParamMap& p) {
  put_u32(b, static_cast<uint32_t>(p.size()));
  for (const auto& [name, arr] : p) {  // std::map: canonical sorted order
    put_str(b, name);
    put_u16(b, static_cast<uint16_t>(arr.rank()));
    for (int d : arr.shape) put_i32(b, d);
    for (double v : arr.data) put_f64(b, v);
  }
}

nd::ParamMap get_params(Reader& r) {
  nd::ParamMap p;
  const uint32_t count = r.u32();
  for (uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    nd::Shape shape(r.u16());
    for (int& d : shape) {
      d = r.i32();
      if (d <= 0) throw IoError(r.origin + ": parameter " + name + " has a non-positive dim");
    }
    nd::Array arr(shape);
    for (double& v : arr.data) v = r.f64();
    p.emplace(std::move(name), std::move(arr));
  }
  return p;
}

void put_netcfg(std::string& b, const model::NetConfig& c) {
  put_u16(b, static_cast<uint16_t>(c.arch));
  put_u16(b, static_cast<uint16_t>(c.conditioning));
  put_u16(b, static_cast<uint16_t>(c.channel_dims.size()));
  for (int d : c.channel_dims) put_i32(b, d);
  put_i32(b, c.time_embed_dim);
  put_i32(b, c.state_dim);
  put_i32(b, c.horizon);
  put_i32(b, c.kernel_size);
  put_i32(b, c.tf_layers);
  put_i32(b, c.tf_heads);
  put_i32(b, c.tf_dim);
}

model::NetConfig get_netcfg(Reader& r) {
  model::NetConfig c;
  c.arch = static_cast<model::Arch>(r.u16());
  c.conditioning = static_cast<model::Conditioning>(r.u16());
  c.channel_dims.resize(r.u16());
  for (int& d : c.channel_dims) d = r.i32();
  c.time_embed_dim = r.i32();
  c.state_dim = r.i32();
  c.horizon = r.i32();
  c.kernel_size = r.i32();
  c.tf_layers = r.i32();
  c.tf_heads = r.i32();
  c.tf_dim = r.i32();
  return c;
}

std::string serialize_dataset(const world::Dataset& ds, uint64_t config_hash) {
  std::string b;
  b.append("FPDS");
  put_u16(b, kDatasetVersion);
  put_u64(b, config_hash);
  put_env(b, ds.env);
  put_u16(b, static_cast<uint16_t>(ds.scheme.kind));
  put_f64(b, ds.scheme.noise_std);
  put_f64(b, ds.scheme.pos_range);
  put_f64(b, ds.scheme.force_std);
  put_i32(b, ds.T);
  put_i32(b, ds.D);
  put_u32(b, static_cast<uint32_t>(ds.trajs.size()));
  put_stats(b, ds.stats);
  for (const auto& tr : ds.trajs) {
    put_u16(b, static_cast<uint16_t>(static_cast<int16_t>(tr.start_arm)));
    put_u16(b, static_cast<uint16_t>(static_cast<int16_t>(tr.end_arm)));
  }
  for (const auto& tr : ds.trajs) {
    if (tr.states.shape != nd::Shape{ds.T, ds.D})
      throw ShapeError("save_dataset: trajectory states are " + nd::shape_str(tr.states.shape) +
                       ", dataset says [" + std::to_string(ds.T) + "," + std::to_string(ds.D) +
                       "]");
    for (double v : tr.states.data) put_f64(b, v);
  }
  return b;
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string b;
  b.append("FPCK");
  put_u16(b, kCheckpointVersion);
  put_u64(b, ck.config_hash);
  put_u64(b, ck.dataset_fingerprint);
  put_i64(b, ck.train_step);
  put_f64(b, ck.split_prob);
  put_netcfg(b, ck.net);
  put_env(b, ck.ctx.env);
  put_stats(b, ck.ctx.stats);
  put_i32(b, ck.ctx.fk_samples);
  put_params(b, ck.params);
  b.push_back(ck.has_opt ? '\1' : '\0');
  if (ck.has_opt) {
    put_f64(b, ck.opt.lr);
    put_f64(b, ck.opt.beta1);
    put_f64(b, ck.opt.beta2);
    put_f64(b, ck.opt.eps);
    put_i64(b, ck.opt.step);
    put_params(b, ck.opt.m);
    put_params(b, ck.opt.v);
  }
  return b;
}

// --- config keys --------------------------------------------------------------

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(',');
    s += std::to_string(v[static_cast<size_t>(i)]);
  }
  return s;
}

std::string join_u64s(const std::vector<uint64_t>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s.push_back(',');
    s += std::to_string(v[static_cast<size_t>(i)]);
  }
  return s;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t z = s.find_last_not_of(" \t\r\n");
  return s.substr(a, z - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const int64_t r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const uint64_t r = std::stoull(v, &used);
    if (used != v.size() || v.find('-') != std::string::npos) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!v.empty() && v.back() == ',') out.push_back("");
  return out;
}

// %.17g survives a f64 round-trip; used for every floating default so
// dump -> parse -> dump is a fixed point.
std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void apply_kv(RunConfig& cfg, const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string value = trim(raw_value);
  if (key == "env") {
    cfg.env = world::parse_env(value);
  } else if (key == "dataset") {
    if (value != "cross" && value != "straight")
      throw ConfigError("dataset: expected cross or straight, got '" + value + "'");
    cfg.dataset = value;
  } else if (key == "scheme") {
    cfg.scheme.kind = world::parse_augment(value);
  } else if (key == "noise_std") {
    cfg.scheme.noise_std = parse_double(key, value);
  } else if (key == "pos_range") {
    cfg.scheme.pos_range = parse_double(key, value);
  } else if (key == "force_std") {
    cfg.scheme.force_std = parse_double(key, value);
  } else if (key == "n_traj") {
    cfg.n_traj = static_cast<int>(parse_int(key, value));
  } else if (key == "horizon") {
    cfg.horizon = static_cast<int>(parse_int(key, value));
  } else if (key == "arch") {
    cfg.arch = model::parse_arch(value);
  } else if (key == "conditioning") {
    cfg.conditioning = model::parse_conditioning(value);
  } else if (key == "channels") {
    std::vector<int> dims;
    for (const std::string& s : split_commas(value))
      dims.push_back(static_cast<int>(parse_int(key, s)));
    cfg.channels = std::move(dims);
  } else if (key == "time_embed_dim") {
    cfg.time_embed_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "kernel_size") {
    cfg.kernel_size = static_cast<int>(parse_int(key, value));
  } else if (key == "tf_layers") {
    cfg.tf_layers = static_cast<int>(parse_int(key, value));
  } else if (key == "tf_heads") {
    cfg.tf_heads = static_cast<int>(parse_int(key, value));
  } else if (key == "tf_dim") {
    cfg.tf_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "train_steps") {
    cfg.train_steps = parse_int(key, value);
  } else if (key == "lr") {
    cfg.lr = parse_double(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "split_prob") {
    cfg.split_prob = parse_double(key, value);
  } else if (key == "ckpt_every") {
    cfg.ckpt_every = parse_int(key, value);
  } else if (key == "n_steps") {
    cfg.n_steps = static_cast<int>(parse_int(key, value));
  } else if (key == "guidance_scale") {
    cfg.guidance_scale = parse_double(key, value);
  } else if (key == "collision_weight") {
    cfg.collision_weight = parse_double(key, value);
  } else if (key == "smoothness_weight") {
    cfg.smoothness_weight = parse_double(key, value);
  } else if (key == "bt_schedule") {
    cfg.bt_schedule = flow::parse_bt(value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "seeds") {
    std::vector<uint64_t> seeds;
    for (const std::string& s : split_commas(value)) seeds.push_back(parse_u64(key, s));
    cfg.seeds = std::move(seeds);
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string stripped = trim(line.substr(0, line.find('#')));
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + " line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_kv(cfg, stripped.substr(0, eq), stripped.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  return parse_config_text(read_file(path), path);
}

void RunConfig::validate() const {
  if (n_traj < 1) throw ConfigError("n_traj must be >= 1 (got " + std::to_string(n_traj) + ")");
  if (dataset == "cross" && n_traj % 4 != 0)
    throw ConfigError("n_traj must be divisible by 4 for the cross dataset (got " +
                      std::to_string(n_traj) + ")");
  if (train_steps < 1)
    throw ConfigError("train_steps must be >= 1 (got " + std::to_string(train_steps) + ")");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0 (got " + fmt_g17(lr) + ")");
  if (batch_size < 1)
    throw ConfigError("batch_size must be >= 1 (got " + std::to_string(batch_size) + ")");
  if (!(split_prob >= 0.0 && split_prob <= 1.0))
    throw ConfigError("split_prob must be in [0, 1] (got " + fmt_g17(split_prob) + ")");
  if (ckpt_every < 1)
    throw ConfigError("ckpt_every must be >= 1 (got " + std::to_string(ckpt_every) + ")");
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1 (got " + std::to_string(n_steps) + ")");
  if (guidance_scale < 0.0)
    throw ConfigError("guidance_scale must be >= 0 (got " + fmt_g17(guidance_scale) + ")");
  if (collision_weight < 0.0)
    throw ConfigError("collision_weight must be >= 0 (got " + fmt_g17(collision_weight) + ")");
  if (smoothness_weight < 0.0)
    throw ConfigError("smoothness_weight must be >= 0 (got " + fmt_g17(smoothness_weight) + ")");
  if (scheme.noise_std < 0.0)
    throw ConfigError("noise_std must be >= 0 (got " + fmt_g17(scheme.noise_std) + ")");
  if (scheme.pos_range < 0.0)
    throw ConfigError("pos_range must be >= 0 (got " + fmt_g17(scheme.pos_range) + ")");
  if (scheme.force_std < 0.0)
    throw ConfigError("force_std must be >= 0 (got " + fmt_g17(scheme.force_std) + ")");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  net_config().validate();  // horizon/channels/tf checks live with the net
}

model::NetConfig RunConfig::net_config() const {
  model::NetConfig c;
  c.arch = arch;
  c.conditioning = conditioning;
  c.channel_dims = channels;
  c.time_embed_dim = time_embed_dim;
  world::Env e;
  e.kind = env;
  c.state_dim = e.state_dim();
  c.horizon = horizon;
  c.kernel_size = kernel_size;
  c.tf_layers = tf_layers;
  c.tf_heads = tf_heads;
  c.tf_dim = tf_dim;
  return c;
}

std::string dump_config(const RunConfig& cfg) {
  std::string s;
  s += "env = " + world::env_name(cfg.env) + "\n";
  s += "dataset = " + cfg.dataset + "\n";
  s += "scheme = " + world::augment_name(cfg.scheme.kind) + "\n";
  s += "noise_std = " + fmt_g17(cfg.scheme.noise_std) + "\n";
  s += "pos_range = " + fmt_g17(cfg.scheme.pos_range) + "\n";
  s += "force_std = " + fmt_g17(cfg.scheme.force_std) + "\n";
  s += "n_traj = " + std::to_string(cfg.n_traj) + "\n";
  s += "horizon = " + std::to_string(cfg.horizon) + "\n";
  s += "arch = " + model::arch_name(cfg.arch) + "\n";
  s += "conditioning = " + model::conditioning_name(cfg.conditioning) + "\n";
  s += "channels = " + join_ints(cfg.channels) + "\n";
  s += "time_embed_dim = " + std::to_string(cfg.time_embed_dim) + "\n";
  s += "kernel_size = " + std::to_string(cfg.kernel_size) + "\n";
  s += "tf_layers = " + std::to_string(cfg.tf_layers) + "\n";
  s += "tf_heads = " + std::to_string(cfg.tf_heads) + "\n";
  s += "tf_dim = " + std::to_string(cfg.tf_dim) + "\n";
  s += "train_steps = " + std::to_string(cfg.train_steps) + "\n";
  s += "lr = " + fmt_g17(cfg.lr) + "\n";
  s += "batch_size = " + std::to_string(cfg.batch_size) + "\n";
  s += "split_prob = " + fmt_g17(cfg.split_prob) + "\n";
  s += "ckpt_every = " + std::to_string(cfg.ckpt_every) + "\n";
  s += "n_steps = " + std::to_string(cfg.n_steps) + "\n";
  s += "guidance_scale = " + fmt_g17(cfg.guidance_scale) + "\n";
  s += "collision_weight = " + fmt_g17(cfg.collision_weight) + "\n";
  s += "smoothness_weight = " + fmt_g17(cfg.smoothness_weight) + "\n";
  s += "bt_schedule = " + flow::bt_name(cfg.bt_schedule) + "\n";
  s += "seed = " + std::to_string(cfg.seed) + "\n";
  s += "seeds = " + join_u64s(cfg.seeds) + "\n";
  return s;
}

uint64_t hash_config(const RunConfig& cfg) {
  const std::string s = dump_config(cfg);
  return fnv1a64(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(tmp + ": cannot open for writing");
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw IoError(tmp + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError(path + ": rename failed: " + ec.message());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path + ": cannot open for reading");
  std::ostringstream os;
  os << is.rdbuf();
  if (!is.good() && !is.eof()) throw IoError(path + ": read failed");
  return std::move(os).str();
}

// ---------------------------------------------------------------------------
// datasets
// ---------------------------------------------------------------------------

void save_dataset(const std::string& path, const world::Dataset& ds, uint64_t config_hash) {
  write_file_atomic(path, serialize_dataset(ds, config_hash));
}

world::Dataset load_dataset(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  check_magic(r, "FPDS", "dataset");
  check_version(r, kDatasetVersion, "dataset");
  r.u64();  // creation config hash: carried, not interpreted here
  world::Dataset ds;
  ds.env = get_env(r);
  ds.scheme.kind = static_cast<world::AugmentKind>(r.u16());
  ds.scheme.noise_std = r.f64();
  ds.scheme.pos_range = r.f64();
  ds.scheme.force_std = r.f64();
  ds.T = r.i32();
  ds.D = r.i32();
  const uint32_t count = r.u32();
  if (ds.T < 1 || ds.D < 1)
    throw IoError(path + ": nonsense dataset dims [" + std::to_string(ds.T) + "," +
                  std::to_string(ds.D) + "]");
  ds.stats = get_stats(r);
  std::vector<std::pair<int, int>> arms(count);
  for (auto& [a, b] : arms) {
    a = static_cast<int16_t>(r.u16());
    b = static_cast<int16_t>(r.u16());
  }
  ds.trajs.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    world::Trajectory tr;
    tr.states = nd::Array({ds.T, ds.D});
    for (double& v : tr.states.data) v = r.f64();
    tr.dt = ds.env.dt;
    tr.env = ds.env.kind;
    tr.scheme = ds.scheme.kind;
    tr.start_arm = arms[i].first;
    tr.end_arm = arms[i].second;
    ds.trajs.push_back(std::move(tr));
  }
  r.done();
  return ds;
}

uint64_t dataset_fingerprint(const world::Dataset& ds) {
  const std::string b = serialize_dataset(ds, 0);
  return fnv1a64(b.data() + kPayloadOffset, b.size() - kPayloadOffset);
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

Checkpoint make_checkpoint(const model::VelocityNet& net, const world::DataContext& ctx) {
  Checkpoint ck;
  ck.net = net.config;
  ck.ctx = ctx;
  ck.params = net.params;
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file_atomic(path, serialize_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  check_magic(r, "FPCK", "checkpoint");
  check_version(r, kCheckpointVersion, "checkpoint");
  Checkpoint ck;
  ck.config_hash = r.u64();
  ck.dataset_fingerprint = r.u64();
  ck.train_step = r.i64();
  ck.split_prob = r.f64();
  ck.net = get_netcfg(r);
  ck.ctx.env = get_env(r);
  ck.ctx.stats = get_stats(r);
  ck.ctx.fk_samples = r.i32();
  ck.params = get_params(r);
  r.need(1);
  ck.has_opt = r.buf[r.pos++] != '\0';
  if (ck.has_opt) {
    ck.opt.lr = r.f64();
    ck.opt.beta1 = r.f64();
    ck.opt.beta2 = r.f64();
    ck.opt.eps = r.f64();
    ck.opt.step = r.i64();
    ck.opt.m = get_params(r);
    ck.opt.v = get_params(r);
  }
  r.done();
  ck.net.validate();
  return ck;
}

void load_into(const Checkpoint& ck, model::VelocityNet& net) {
  for (const auto& [name, arr] : net.params) {
    const auto it = ck.params.find(name);
    if (it == ck.params.end())
      throw ShapeError("checkpoint is missing parameter '" + name +
                       "' (stored net: " + model::arch_name(ck.net.arch) + "/" +
                       model::conditioning_name(ck.net.conditioning) + ")");
    if (it->second.shape != arr.shape)
      throw ShapeError("parameter '" + name + "' is " + nd::shape_str(it->second.shape) +
                       " in the checkpoint but " + nd::shape_str(arr.shape) + " in the net");
  }
  for (const auto& [name, arr] : ck.params)
    if (net.params.find(name) == net.params.end())
      throw ShapeError("checkpoint parameter '" + name + "' has no slot in the net");
  for (auto& [name, arr] : net.params) arr = ck.params.at(name);
}

model::VelocityNet to_net(const Checkpoint& ck) {
  model::VelocityNet net;
  net.config = ck.net;
  net.config.validate();
  net.params = ck.params;
  return net;
}

}  // namespace fp::store
