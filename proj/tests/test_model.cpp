#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fp/common/rng.hpp"
#include "fp/model/net.hpp"

using namespace fp;
using namespace fp::model;
using nd::Array;
using nd::Tape;
using nd::Var;

namespace {

NetConfig small_unet(int levels = 2, Conditioning cond = Conditioning::INPAINT) {
  NetConfig cfg;
  cfg.arch = Arch::UNET;
  cfg.conditioning = cond;
  cfg.channel_dims = levels == 1 ? std::vector<int>{8} : std::vector<int>{8, 16};
  cfg.time_embed_dim = 8;
  cfg.state_dim = 4;
  cfg.horizon = 64;
  return cfg;
}

NetConfig small_tf(Conditioning cond = Conditioning::INPAINT) {
  NetConfig cfg;
  cfg.arch = Arch::TRANSFORMER;
  cfg.conditioning = cond;
  cfg.time_embed_dim = 8;
  cfg.state_dim = 4;
  cfg.horizon = 64;
  cfg.tf_layers = 2;
  cfg.tf_heads = 2;
  cfg.tf_dim = 16;
  return cfg;
}

VelocityNet make(const NetConfig& cfg, uint64_t seed = 7) {
  RandomStream rng(seed);
  return VelocityNet::init(cfg, rng);
}

// The zero-initialized output layer hides the interior, so probes give the
// final projection real weights.
void randomize_final(VelocityNet& net, uint64_t seed = 11) {
  RandomStream rng(seed);
  for (const char* name : {"out.w", "out.b", "head.w", "head.b"}) {
    auto it = net.params.find(name);
    if (it == net.params.end()) continue;
    for (double& v : it->second.data) v = rng.normal(0.0, 0.2);
  }
}

Array run(const VelocityNet& net, const Array& x, double t_flow, const CondPair* cond = nullptr) {
  Tape t;
  Var xv = t.constant(x);
  std::vector<double> tt(static_cast<size_t>(x.shape[0]), t_flow);
  ForwardResult res = forward(t, net, xv, tt, cond, false);
  return t.val(res.out);
}

bool rows_differ(const Array& a, const Array& b, int row) {
  for (int k = 0; k < a.shape[2]; ++k)
    if (a.at(0, row, k) != b.at(0, row, k)) return true;
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// time features
// ---------------------------------------------------------------------------

TEST_CASE("time_features: t=0 gives zero sines and unit cosines") {
  Array f = time_features(0.0, 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(f[i] == 0.0);
    CHECK(f[8 + i] == 1.0);
  }
}

TEST_CASE("time_features: deterministic and injective at desk frequencies") {
  Array a = time_features(0.37, 32);
  Array b = time_features(0.37, 32);
  CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);

  Array c = time_features(0.1, 32);
  Array d = time_features(0.9, 32);
  double dist = 0.0;
  for (int i = 0; i < 32; ++i) dist += (c[i] - d[i]) * (c[i] - d[i]);
  CHECK(dist > 1e-6);
}

TEST_CASE("time_features: rejects flow times outside [0,1]") {
  CHECK_THROWS_AS(time_features(-0.01, 8), Error);
  CHECK_THROWS_AS(time_features(1.01, 8), Error);
}

// ---------------------------------------------------------------------------
// config validation
// ---------------------------------------------------------------------------

TEST_CASE("NetConfig: validation rejects bad horizons and dims") {
  NetConfig cfg = small_unet();
  cfg.horizon = 48;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_unet();
  cfg.horizon = 2;  // below 2^levels = 4
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_unet();
  cfg.channel_dims.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_unet();
  cfg.kernel_size = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_unet();
  cfg.time_embed_dim = 7;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_tf();
  cfg.tf_dim = 15;  // not divisible by heads
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_NOTHROW(small_unet().validate());
  CHECK_NOTHROW(small_tf().validate());
}

TEST_CASE("arch/conditioning names round-trip and reject junk") {
  CHECK(parse_arch(arch_name(Arch::UNET)) == Arch::UNET);
  CHECK(parse_arch(arch_name(Arch::TRANSFORMER)) == Arch::TRANSFORMER);
  CHECK(parse_conditioning(conditioning_name(Conditioning::INPAINT)) == Conditioning::INPAINT);
  CHECK(parse_conditioning(conditioning_name(Conditioning::DIRECT)) == Conditioning::DIRECT);
  CHECK_THROWS_AS(parse_arch("resnet"), ConfigError);
  CHECK_THROWS_AS(parse_conditioning("classifier"), ConfigError);
}

// ---------------------------------------------------------------------------
// init
// ---------------------------------------------------------------------------

TEST_CASE("init: deterministic given the seed, distinct across seeds") {
  VelocityNet a = make(small_unet(), 3);
  VelocityNet b = make(small_unet(), 3);
  VelocityNet c = make(small_unet(), 4);
  REQUIRE(a.params.size() == b.params.size());
  bool all_same = true;
  bool any_diff_c = false;
  for (const auto& [name, arr] : a.params) {
    const Array& bb = b.params.at(name);
    if (std::memcmp(arr.data.data(), bb.data.data(), arr.data.size() * sizeof(double)) != 0)
      all_same = false;
    const Array& cc = c.params.at(name);
    if (std::memcmp(arr.data.data(), cc.data.data(), arr.data.size() * sizeof(double)) != 0)
      any_diff_c = true;
  }
  CHECK(all_same);
  CHECK(any_diff_c);
}

TEST_CASE("init: truncated normal stays within two sigmas, biases zero") {
  VelocityNet net = make(small_unet());
  for (const auto& [name, arr] : net.params) {
    for (double v : arr.data) CHECK(std::isfinite(v));
    if (name.ends_with(".w") && !name.starts_with("out"))
      for (double v : arr.data) CHECK(std::fabs(v) <= 0.04);
    if (name.ends_with(".b") && name.find("gn") == std::string::npos)
      for (double v : arr.data) CHECK(v == 0.0);
  }
}

TEST_CASE("init: zero final projection makes the raw field exactly zero") {
  for (const NetConfig& cfg : {small_unet(), small_tf()}) {
    VelocityNet net = make(cfg);
    RandomStream rng(21);
    Array x({2, 64, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    Array y = run(net, x, 0.5);
    for (double v : y.data) CHECK(v == 0.0);
  }
}

TEST_CASE("param_count: pure function of the config (golden values)") {
  NetConfig unet;  // defaults: [32,64,128,256], embed 32, D=4, K=3
  CHECK(make(unet).param_count() == 1685924);
  unet.conditioning = Conditioning::DIRECT;
  CHECK(make(unet).param_count() == 1703588);

  NetConfig tf;
  tf.arch = Arch::TRANSFORMER;  // defaults: 4 layers, 4 heads, dim 128
  CHECK(make(tf).param_count() == 823428);
  tf.conditioning = Conditioning::DIRECT;
  CHECK(make(tf).param_count() == 823684);
}

// ---------------------------------------------------------------------------
// forward: shape and horizon contracts
// ---------------------------------------------------------------------------

TEST_CASE("forward: output shape equals input shape for both archs") {
  for (NetConfig cfg : {small_unet(), small_tf()}) {
    VelocityNet net = make(cfg);
    Array x({2, 64, 4}, 0.25);
    Array y = run(net, x, 0.3);
    CHECK(y.shape == nd::Shape{2, 64, 4});
  }
}

TEST_CASE("forward: UNet accepts both T and T/2 with the same parameters") {
  VelocityNet net = make(small_unet());
  randomize_final(net);
  CHECK(run(net, Array({1, 64, 4}, 0.1), 0.5).shape == nd::Shape{1, 64, 4});
  CHECK(run(net, Array({1, 32, 4}, 0.1), 0.5).shape == nd::Shape{1, 32, 4});
  CHECK_THROWS_AS(run(net, Array({1, 48, 4}, 0.1), 0.5), ConfigError);
  CHECK_THROWS_AS(run(net, Array({1, 2, 4}, 0.1), 0.5), ConfigError);
}

TEST_CASE("forward: transformer accepts any length up to the positional table") {
  VelocityNet net = make(small_tf());
  CHECK(run(net, Array({1, 48, 4}, 0.1), 0.5).shape == nd::Shape{1, 48, 4});
  CHECK(run(net, Array({1, 3, 4}, 0.1), 0.5).shape == nd::Shape{1, 3, 4});
  CHECK_THROWS_AS(run(net, Array({1, 65, 4}, 0.1), 0.5), ConfigError);
}

TEST_CASE("forward: conditioning contract is enforced") {
  VelocityNet inpaint = make(small_unet(2, Conditioning::INPAINT));
  VelocityNet direct = make(small_unet(2, Conditioning::DIRECT));
  Array x({1, 64, 4}, 0.0);
  CondPair cond{Array({1, 4}, 0.5), Array({1, 4}, -0.5)};
  CHECK_THROWS_AS(run(inpaint, x, 0.5, &cond), Error);
  CHECK_THROWS_AS(run(direct, x, 0.5, nullptr), Error);
  CHECK_NOTHROW(run(direct, x, 0.5, &cond));
}

TEST_CASE("forward: rank and batch/time bookkeeping errors") {
  VelocityNet net = make(small_unet());
  Tape t;
  CHECK_THROWS_AS(forward(t, net, t.constant(Array({64, 4})), {0.5}, nullptr, false),
                  ShapeError);
  CHECK_THROWS_AS(forward(t, net, t.constant(Array({2, 64, 4})), {0.5}, nullptr, false),
                  ShapeError);  // one flow time for two rows
  CHECK_THROWS_AS(forward(t, net, t.constant(Array({1, 64, 3})), {0.5}, nullptr, false),
                  ShapeError);  // wrong state dim
}

// ---------------------------------------------------------------------------
// forward: behavioral probes
// ---------------------------------------------------------------------------

TEST_CASE("unet: single-level locality probe — index 0 blind beyond index 1") {
  // Kill the in-block conv paths (zero second convs) so blocks reduce to
  // x + const, and make the output conv a pure center tap. The only live
  // reach is then the K=3 input conv: output[0] may depend on x[0..1] only.
  // (Unzeroed blocks couple positions globally through group-norm statistics.)
  VelocityNet net = make(small_unet(1));
  for (const char* name : {"d0.c2.w", "mid.c2.w"})
    for (double& v : net.params.at(name).data) v = 0.0;
  Array& ow = net.params.at("out.w");  // [D, c0, 3]
  for (int d = 0; d < ow.shape[0]; ++d)
    for (int c = 0; c < ow.shape[1]; ++c) ow.at(d, c, 1) = 0.3 + 0.1 * d - 0.05 * c;

  const int T = 64;
  Array x({1, T, 4}, 0.0);
  Array y0 = run(net, x, 0.5);
  for (int j : {1, 2, 3, 17, T - 1}) {
    Array xp = x;
    xp.at(0, j, 2) = 1.0;
    Array y = run(net, xp, 0.5);
    bool idx0_moved = rows_differ(y, y0, 0);
    if (j <= 1)
      CHECK(idx0_moved);
    else
      CHECK_FALSE(idx0_moved);
    CHECK(rows_differ(y, y0, j));  // the poked row always responds
  }
}

TEST_CASE("unet: multi-level net couples distant timesteps") {
  VelocityNet net = make(small_unet(2));
  randomize_final(net);
  const int T = 64;
  Array x({1, T, 4}, 0.0);
  Array y0 = run(net, x, 0.5);
  Array xp = x;
  xp.at(0, T - 1, 0) = 1.0;
  Array y = run(net, xp, 0.5);
  CHECK(rows_differ(y, y0, 0));
}

TEST_CASE("unet DIRECT: changing cond moves the output at every timestep") {
  VelocityNet net = make(small_unet(2, Conditioning::DIRECT));
  randomize_final(net);
  Array x({1, 64, 4}, 0.0);
  CondPair a{Array({1, 4}, 0.5), Array({1, 4}, -0.5)};
  CondPair b{Array({1, 4}, 0.5), Array({1, 4}, 0.7)};
  Array ya = run(net, x, 0.5, &a);
  Array yb = run(net, x, 0.5, &b);
  for (int i = 0; i < 64; ++i) CHECK(rows_differ(ya, yb, i));
}

TEST_CASE("transformer DIRECT: distinct cond pairs give distinct outputs") {
  VelocityNet net = make(small_tf(Conditioning::DIRECT));
  randomize_final(net);
  Array x({1, 16, 4}, 0.0);
  CondPair a{Array({1, 4}, 0.2), Array({1, 4}, -0.3)};
  CondPair b{Array({1, 4}, 0.2), Array({1, 4}, 0.9)};
  Array ya = run(net, x, 0.5, &a);
  Array yb = run(net, x, 0.5, &b);
  for (int i = 0; i < 16; ++i) CHECK(rows_differ(ya, yb, i));
}

TEST_CASE("transformer: permuting positional embeddings changes the output") {
  VelocityNet net = make(small_tf());
  randomize_final(net);
  VelocityNet perm = net;
  Array& pos = perm.params.at("pos");
  for (int j = 0; j < pos.shape[1]; ++j) std::swap(pos.at(0, j), pos.at(5, j));
  RandomStream rng(31);
  Array x({1, 16, 4});
  for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
  Array ya = run(net, x, 0.5);
  Array yb = run(perm, x, 0.5);
  double diff = 0.0;
  for (size_t i = 0; i < ya.data.size(); ++i) diff += std::fabs(ya.data[i] - yb.data[i]);
  CHECK(diff > 1e-9);
}

TEST_CASE("forward: time input matters once the head is live") {
  for (NetConfig cfg : {small_unet(), small_tf()}) {
    VelocityNet net = make(cfg);
    randomize_final(net);
    Array x({1, 64, 4}, 0.3);
    Array ya = run(net, x, 0.1);
    Array yb = run(net, x, 0.9);
    double diff = 0.0;
    for (size_t i = 0; i < ya.data.size(); ++i) diff += std::fabs(ya.data[i] - yb.data[i]);
    CHECK(diff > 1e-9);
  }
}

// ---------------------------------------------------------------------------
// numerics
// ---------------------------------------------------------------------------

TEST_CASE("forward: finite for |x| <= 10 and bitwise repeatable") {
  for (NetConfig cfg : {small_unet(), small_tf()}) {
    VelocityNet net = make(cfg);
    randomize_final(net);
    RandomStream rng(5);
    Array x({2, 64, 4});
    for (double& v : x.data) v = rng.uniform(-10.0, 10.0);
    Array a = run(net, x, 0.0);
    Array b = run(net, x, 0.0);
    CHECK(a.all_finite());
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("forward: training mode yields finite, live gradients everywhere") {
  for (NetConfig cfg :
       {small_unet(2, Conditioning::INPAINT), small_unet(2, Conditioning::DIRECT),
        small_tf(Conditioning::INPAINT), small_tf(Conditioning::DIRECT)}) {
    VelocityNet net = make(cfg);
    randomize_final(net);
    Tape t;
    RandomStream rng(9);
    Array x({2, 64, 4});
    for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
    CondPair cond{Array({2, 4}, 0.4), Array({2, 4}, -0.6)};
    const CondPair* cp = cfg.conditioning == Conditioning::DIRECT ? &cond : nullptr;
    ForwardResult res = forward(t, net, t.constant(x), {0.2, 0.8}, cp, true);
    t.backward(t.sum(res.out));
    REQUIRE(res.param_vars.size() == net.params.size());
    for (const auto& [name, v] : res.param_vars) {
      const Array& g = t.grad(v);
      INFO("param ", name);
      CHECK(g.all_finite());
      CHECK(nd::max_abs(g) > 0.0);
    }
  }
}

TEST_CASE("forward: inference mode records no gradient ops") {
  VelocityNet net = make(small_unet());
  Tape t;
  ForwardResult res = forward(t, net, t.constant(Array({1, 64, 4}, 0.1)), {0.5}, nullptr, false);
  CHECK(t.n_ops() == 0);
  CHECK(t.val(res.out).shape == nd::Shape{1, 64, 4});
}
