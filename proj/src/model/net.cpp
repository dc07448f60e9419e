#include "fp/model/net.hpp"

#include <cmath>

#include "fp/common/error.hpp"

namespace fp::model {

using nd::Array;
using nd::ParamMap;
using nd::Shape;
using nd::Tape;
using nd::Var;

std::string arch_name(Arch a) { return a == Arch::UNET ? "unet" : "transformer"; }

std::string conditioning_name(Conditioning c) {
  return c == Conditioning::INPAINT ? "inpaint" : "direct";
}

Arch parse_arch(const std::string& s) {
  if (s == "unet") return Arch::UNET;
  if (s == "transformer") return Arch::TRANSFORMER;
  throw ConfigError("unknown arch '" + s + "' (valid: unet, transformer)");
}

Conditioning parse_conditioning(const std::string& s) {
  if (s == "inpaint") return Conditioning::INPAINT;
  if (s == "direct") return Conditioning::DIRECT;
  throw ConfigError("unknown conditioning '" + s + "' (valid: inpaint, direct)");
}

namespace {

bool is_pow2(int x) { return x > 0 && (x & (x - 1)) == 0; }

// Largest group count <= 8 that divides c.
int gn_groups(int c) {
  for (int g = std::min(8, c); g > 1; --g)
    if (c % g == 0) return g;
  return 1;
}

}  // namespace

int NetConfig::min_horizon() const { return 1 << levels(); }

void NetConfig::validate() const {
  if (channel_dims.empty()) throw ConfigError("NetConfig: channel_dims must be nonempty");
  for (int c : channel_dims)
    if (c < 1) throw ConfigError("NetConfig: channel dims must be >= 1");
  if (state_dim < 1) throw ConfigError("NetConfig: state_dim must be >= 1");
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
    throw ConfigError("NetConfig: time_embed_dim must be even and >= 2");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("NetConfig: kernel_size must be odd");
  if (arch == Arch::UNET) {
    if (!is_pow2(horizon))
      throw ConfigError("NetConfig: UNet horizon must be a power of 2, got " +
                        std::to_string(horizon));
    if (horizon < min_horizon())
      throw ConfigError("NetConfig: UNet horizon " + std::to_string(horizon) + " below 2^" +
                        std::to_string(levels()) + " = " + std::to_string(min_horizon()));
  } else {
    if (tf_layers < 1 || tf_heads < 1 || tf_dim < tf_heads)
      throw ConfigError("NetConfig: bad transformer dims");
    if (tf_dim % tf_heads != 0)
      throw ConfigError("NetConfig: tf_dim must be divisible by tf_heads");
  }
  if (horizon < 2) throw ConfigError("NetConfig: horizon must be >= 2");
}

Array time_features(double t, int dim) {
  if (t < 0.0 || t > 1.0)
    throw Error("time_features: flow time " + std::to_string(t) + " outside [0,1]");
  const int half = dim / 2;
  Array f({dim});
  for (int i = 0; i < half; ++i) {
    const double freq =
        half > 1 ? std::pow(1000.0, static_cast<double>(i) / static_cast<double>(half - 1))
                 : 1.0;
    f[i] = std::sin(freq * t);
    f[half + i] = std::cos(freq * t);
  }
  return f;
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

namespace {

constexpr double kInitStd = 0.02;

// Truncated normal: resample anything beyond two standard deviations.
Array trunc_normal(RandomStream& rng, Shape s) {
  Array a(std::move(s));
  for (double& x : a.data) {
    double z = rng.normal(0.0, kInitStd);
    while (std::fabs(z) > 2.0 * kInitStd) z = rng.normal(0.0, kInitStd);
    x = z;
  }
  return a;
}

struct Builder {
  ParamMap& p;
  RandomStream& rng;

  void weight(const std::string& name, Shape s) { p.emplace(name, trunc_normal(rng, std::move(s))); }
  void zeros(const std::string& name, Shape s) { p.emplace(name, Array(std::move(s))); }
  void ones(const std::string& name, Shape s) { p.emplace(name, Array(std::move(s), 1.0)); }

  void lin(const std::string& prefix, int dout, int din) {
    weight(prefix + ".w", {dout, din});
    zeros(prefix + ".b", {dout});
  }
  void conv(const std::string& prefix, int cout, int cin, int k) {
    weight(prefix + ".w", {cout, cin, k});
    zeros(prefix + ".b", {cout});
  }
  void norm(const std::string& prefix, int c) {
    ones(prefix + ".g", {c});
    zeros(prefix + ".b", {c});
  }
  void resblock(const std::string& prefix, int cin, int cout, int k, int emb_dim) {
    conv(prefix + ".c1", cout, cin, k);
    norm(prefix + ".gn1", cout);
    lin(prefix + ".film", 2 * cout, emb_dim);
    conv(prefix + ".c2", cout, cout, k);
    norm(prefix + ".gn2", cout);
    if (cin != cout) conv(prefix + ".skip", cout, cin, 1);
  }
};

}  // namespace

VelocityNet VelocityNet::init(const NetConfig& cfg, RandomStream& rng) {
  cfg.validate();
  VelocityNet net;
  net.config = cfg;
  Builder b{net.params, rng};
  const int e = cfg.time_embed_dim;
  const int d = cfg.state_dim;
  const int k = cfg.kernel_size;

  if (cfg.arch == Arch::UNET) {
    const auto& dims = cfg.channel_dims;
    const int levels = cfg.levels();
    const int m = 4 * e;  // embedding width fed to FiLM
    b.lin("time.l1", m, e);
    b.lin("time.l2", m, m);
    if (cfg.conditioning == Conditioning::DIRECT) {
      b.lin("cond.l1", m, 2 * d);
      b.lin("cond.l2", m, m);
    }
    b.conv("in", dims[0], d, k);
    for (int i = 0; i < levels; ++i) {
      b.resblock("d" + std::to_string(i), dims[static_cast<size_t>(i)],
                 dims[static_cast<size_t>(i)], k, m);
      if (i < levels - 1)
        b.conv("ds" + std::to_string(i), dims[static_cast<size_t>(i) + 1],
               dims[static_cast<size_t>(i)], k);
    }
    b.resblock("mid", dims.back(), dims.back(), k, m);
    for (int i = levels - 2; i >= 0; --i) {
      b.conv("us" + std::to_string(i), dims[static_cast<size_t>(i)],
             dims[static_cast<size_t>(i) + 1], k);
      b.resblock("u" + std::to_string(i), 2 * dims[static_cast<size_t>(i)],
                 dims[static_cast<size_t>(i)], k, m);
    }
    // Zero-initialized output projection: u_0 is ~0 at the start of training.
    b.zeros("out.w", {d, dims[0], k});
    b.zeros("out.b", {d});
  } else {
    const int dim = cfg.tf_dim;
    b.lin("time.l1", 4 * e, e);
    b.lin("time.l2", dim, 4 * e);
    b.lin("tok", dim, d);
    b.weight("pos", {cfg.horizon, dim});
    if (cfg.conditioning == Conditioning::DIRECT) b.weight("cond.pos", {2, dim});
    for (int l = 0; l < cfg.tf_layers; ++l) {
      const std::string p = "l" + std::to_string(l);
      b.norm(p + ".ln1", dim);
      b.lin(p + ".qkv", 3 * dim, dim);
      b.lin(p + ".proj", dim, dim);
      b.norm(p + ".ln2", dim);
      b.lin(p + ".mlp1", 4 * dim, dim);
      b.lin(p + ".mlp2", dim, 4 * dim);
    }
    b.norm("f.ln", dim);
    b.zeros("head.w", {d, dim});
    b.zeros("head.b", {d});
  }
  return net;
}

int64_t VelocityNet::param_count() const {
  int64_t n = 0;
  for (const auto& [name, a] : params) n += a.numel();
  return n;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

namespace {

struct Ctx {
  Tape& t;
  const VelocityNet& net;
  std::map<std::string, Var>& vars;
  bool train;

  Var p(const std::string& name) {
    auto it = vars.find(name);
    if (it != vars.end()) return it->second;
    auto pit = net.params.find(name);
    if (pit == net.params.end()) throw Error("forward: missing parameter '" + name + "'");
    Var v = t.leaf(pit->second, train);
    vars.emplace(name, v);
    return v;
  }

  Var lin(const std::string& prefix, Var x) {
    return t.linear(x, p(prefix + ".w"), p(prefix + ".b"));
  }
  Var conv(const std::string& prefix, Var x, int stride = 1) {
    return t.conv1d(x, p(prefix + ".w"), p(prefix + ".b"), stride);
  }
  Var gn(const std::string& prefix, Var x, int c) {
    return t.group_norm(x, p(prefix + ".g"), p(prefix + ".b"), gn_groups(c));
  }
  Var ln(const std::string& prefix, Var x) {
    return t.layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
  }

  // conv -> group_norm -> FiLM -> SiLU -> conv -> group_norm -> SiLU, plus
  // the (projected) residual.
  Var resblock(const std::string& prefix, Var x, Var emb, int cin, int cout) {
    Var h = conv(prefix + ".c1", x);
    h = gn(prefix + ".gn1", h, cout);
    Var film = lin(prefix + ".film", emb);  // [B, 2*cout]
    Var sc = t.narrow(film, 1, 0, cout);
    Var sh = t.narrow(film, 1, cout, cout);
    h = t.film(h, sc, sh);
    h = t.silu(h);
    h = conv(prefix + ".c2", h);
    h = gn(prefix + ".gn2", h, cout);
    h = t.silu(h);
    Var skip = cin == cout ? x : conv(prefix + ".skip", x);
    return t.add(h, skip);
  }
};

Array stack_time_features(const std::vector<double>& tt, int dim) {
  Array f({static_cast<int>(tt.size()), dim});
  for (size_t i = 0; i < tt.size(); ++i) {
    Array row = time_features(tt[i], dim);
    std::copy(row.data.begin(), row.data.end(), f.data.begin() + static_cast<int64_t>(i) * dim);
  }
  return f;
}

Var unet_forward(Ctx& c, Var x, const std::vector<double>& tt, const CondPair* cond) {
  Tape& t = c.t;
  const NetConfig& cfg = c.net.config;
  const auto& dims = cfg.channel_dims;
  const int levels = cfg.levels();
  const int bsz = t.val(x).shape[0];
  const int horizon = t.val(x).shape[1];
  if (!is_pow2(horizon) || horizon < cfg.min_horizon())
    throw ConfigError("unet_forward: horizon " + std::to_string(horizon) +
                      " must be a power of 2 and >= " + std::to_string(cfg.min_horizon()));

  Var feats = t.constant(stack_time_features(tt, cfg.time_embed_dim));
  Var emb = c.lin("time.l2", t.silu(c.lin("time.l1", feats)));
  if (cfg.conditioning == Conditioning::DIRECT) {
    Array packed({bsz, 2 * cfg.state_dim});  // start|goal rows, [B, 2D]
    for (int bi = 0; bi < bsz; ++bi)
      for (int j = 0; j < cfg.state_dim; ++j) {
        packed.at(bi, j) = cond->start.at(bi, j);
        packed.at(bi, cfg.state_dim + j) = cond->goal.at(bi, j);
      }
    Var cemb = c.lin("cond.l2", t.silu(c.lin("cond.l1", t.constant(std::move(packed)))));
    emb = t.add(emb, cemb);
  }

  Var h = c.conv("in", t.transpose_last2(x));  // [B, c0, T]
  std::vector<Var> skips;
  for (int i = 0; i < levels; ++i) {
    h = c.resblock("d" + std::to_string(i), h, emb, dims[static_cast<size_t>(i)],
                   dims[static_cast<size_t>(i)]);
    if (i < levels - 1) {
      skips.push_back(h);
      h = c.conv("ds" + std::to_string(i), h, 2);
    }
  }
  h = c.resblock("mid", h, emb, dims.back(), dims.back());
  for (int i = levels - 2; i >= 0; --i) {
    h = c.conv("us" + std::to_string(i), t.upsample2(h));
    h = t.concat(h, skips[static_cast<size_t>(i)], 1);
    h = c.resblock("u" + std::to_string(i), h, emb, 2 * dims[static_cast<size_t>(i)],
                   dims[static_cast<size_t>(i)]);
  }
  h = c.conv("out", h);
  return t.transpose_last2(h);  // [B, T, D]
}

Var transformer_forward(Ctx& c, Var x, const std::vector<double>& tt, const CondPair* cond) {
  Tape& t = c.t;
  const NetConfig& cfg = c.net.config;
  const Array& xv = t.val(x);
  const int bsz = xv.shape[0];
  const int horizon = xv.shape[1];
  if (horizon > cfg.horizon)
    throw ConfigError("transformer_forward: horizon " + std::to_string(horizon) +
                      " exceeds positional table " + std::to_string(cfg.horizon));
  const int dim = cfg.tf_dim;
  const int heads = cfg.tf_heads;
  const int dh = dim / heads;

  Var tok = c.lin("tok", x);  // [B, T, dim]
  tok = t.add_bc(tok, t.narrow(c.p("pos"), 0, 0, horizon));

  int n_cond = 0;
  if (cfg.conditioning == Conditioning::DIRECT) {
    n_cond = 2;
    Array packed({bsz, 2, cfg.state_dim});
    for (int bi = 0; bi < bsz; ++bi)
      for (int j = 0; j < cfg.state_dim; ++j) {
        packed.at(bi, 0, j) = cond->start.at(bi, j);
        packed.at(bi, 1, j) = cond->goal.at(bi, j);
      }
    Var ctok = c.lin("tok", t.constant(std::move(packed)));  // [B, 2, dim]
    ctok = t.add_bc(ctok, c.p("cond.pos"));
    tok = t.concat(ctok, tok, 1);  // condition tokens lead the sequence
  }

  Var emb = c.lin("time.l2", t.gelu(c.lin("time.l1",
                                          t.constant(stack_time_features(tt, cfg.time_embed_dim)))));
  Var h = t.add_rows(tok, emb);

  const int seq = horizon + n_cond;
  for (int l = 0; l < cfg.tf_layers; ++l) {
    const std::string p = "l" + std::to_string(l);
    Var a = c.ln(p + ".ln1", h);
    Var qkv = c.lin(p + ".qkv", a);  // [B, S, 3*dim]
    auto split_heads = [&](int off) {
      Var s = t.narrow(qkv, 2, off * dim, dim);
      return t.perm0213(t.reshape(s, {bsz, seq, heads, dh}));  // [B, H, S, dh]
    };
    Var att = t.attention(split_heads(0), split_heads(1), split_heads(2));
    att = t.reshape(t.perm0213(att), {bsz, seq, dim});
    h = t.add(h, c.lin(p + ".proj", att));
    Var m = c.ln(p + ".ln2", h);
    m = c.lin(p + ".mlp2", t.gelu(c.lin(p + ".mlp1", m)));
    h = t.add(h, m);
  }
  h = c.lin("head", c.ln("f.ln", h));  // [B, S, D]
  if (n_cond > 0) h = t.narrow(h, 1, n_cond, horizon);
  return h;
}

}  // namespace

ForwardResult forward(Tape& t, const VelocityNet& net, Var x, const std::vector<double>& tt,
                      const CondPair* cond, bool train) {
  const NetConfig& cfg = net.config;
  const Array& xv = t.val(x);
  if (xv.rank() != 3 || xv.shape[2] != cfg.state_dim)
    throw ShapeError("forward: want x [B,T," + std::to_string(cfg.state_dim) + "], got " +
                     nd::shape_str(xv.shape));
  if (static_cast<int>(tt.size()) != xv.shape[0])
    throw ShapeError("forward: need one flow time per batch row");
  if (cfg.conditioning == Conditioning::DIRECT && cond == nullptr)
    throw Error("forward: DIRECT conditioning requires a CondPair");
  if (cfg.conditioning == Conditioning::INPAINT && cond != nullptr)
    throw Error("forward: INPAINT nets must not receive boundary conditions");
  if (cond != nullptr) {
    if (cond->start.shape != Shape{xv.shape[0], cfg.state_dim} ||
        cond->goal.shape != Shape{xv.shape[0], cfg.state_dim})
      throw ShapeError("forward: cond rows must be [B,D]");
  }

  ForwardResult res;
  Ctx c{t, net, res.param_vars, train};
  res.out = cfg.arch == Arch::UNET ? unet_forward(c, x, tt, cond)
                                   : transformer_forward(c, x, tt, cond);
  return res;
}

}  // namespace fp::model
