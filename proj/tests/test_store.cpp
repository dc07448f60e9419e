#include <doctest.h>

#include <unistd.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "fp/store/store.hpp"
#include "fp/world/dataset.hpp"

using namespace fp;
using namespace fp::store;
using nd::Array;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path dir;
  TempDir() {
    static int counter = 0;
    dir = fs::temp_directory_path() /
          ("fpstore_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

bool same_bits(const Array& a, const Array& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

world::Dataset small_dataset() {
  world::Env env;
  world::AugmentScheme scheme;
  scheme.kind = world::AugmentKind::ACTION_NOISE;
  RandomStream rng(3);
  world::Dataset ds = world::make_cross_dataset(env, 1, scheme, rng, 8);
  REQUIRE(ds.size() == 4);
  return ds;
}

model::VelocityNet small_net(model::Arch arch = model::Arch::UNET) {
  model::NetConfig cfg;
  cfg.arch = arch;
  cfg.channel_dims = {8};
  cfg.time_embed_dim = 8;
  cfg.state_dim = 4;
  cfg.horizon = 16;
  cfg.tf_layers = 1;
  cfg.tf_heads = 2;
  cfg.tf_dim = 16;
  RandomStream rng(5);
  return model::VelocityNet::init(cfg, rng);
}

world::DataContext small_ctx() {
  world::DataContext ctx;
  ctx.stats.lo = {-1.0, -2.0, -3.0, -4.0};
  ctx.stats.hi = {1.0, 2.0, 3.0, 4.0};
  return ctx;
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset files
// ---------------------------------------------------------------------------

TEST_CASE("dataset round-trip preserves everything bitwise") {
  TempDir td;
  world::Dataset ds = small_dataset();
  ds.trajs[1].start_arm = 2;
  ds.trajs[1].end_arm = 0;
  save_dataset(td.path("a.fpds"), ds, 0xdeadbeefULL);
  world::Dataset back = load_dataset(td.path("a.fpds"));

  CHECK(back.env.kind == ds.env.kind);
  CHECK(back.env.dt == ds.env.dt);
  CHECK(back.env.a_max == ds.env.a_max);
  CHECK(back.env.link_lengths == ds.env.link_lengths);
  CHECK(back.env.inertia == ds.env.inertia);
  CHECK(back.env.damping == ds.env.damping);
  CHECK(back.scheme.kind == ds.scheme.kind);
  CHECK(back.scheme.noise_std == ds.scheme.noise_std);
  CHECK(back.scheme.pos_range == ds.scheme.pos_range);
  CHECK(back.scheme.force_std == ds.scheme.force_std);
  CHECK(back.T == ds.T);
  CHECK(back.D == ds.D);
  CHECK(back.stats.lo == ds.stats.lo);
  CHECK(back.stats.hi == ds.stats.hi);
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(same_bits(back.trajs[i].states, ds.trajs[i].states));
    CHECK(back.trajs[i].start_arm == ds.trajs[i].start_arm);
    CHECK(back.trajs[i].end_arm == ds.trajs[i].end_arm);
    CHECK(back.trajs[i].dt == ds.env.dt);
    CHECK(back.trajs[i].env == ds.env.kind);
    CHECK(back.trajs[i].scheme == ds.scheme.kind);
  }
}

TEST_CASE("dataset save-load-save is byte-identical") {
  TempDir td;
  world::Dataset ds = small_dataset();
  save_dataset(td.path("a.fpds"), ds, 7);
  save_dataset(td.path("b.fpds"), load_dataset(td.path("a.fpds")), 7);
  CHECK(read_file(td.path("a.fpds")) == read_file(td.path("b.fpds")));
  CHECK_FALSE(fs::exists(td.path("a.fpds.tmp")));  // atomic write cleaned up
}

TEST_CASE("dataset load failures are loud and total") {
  TempDir td;
  world::Dataset ds = small_dataset();
  save_dataset(td.path("a.fpds"), ds);
  const std::string whole = read_file(td.path("a.fpds"));

  SUBCASE("missing file") { CHECK_THROWS_AS(load_dataset(td.path("nope.fpds")), IoError); }
  SUBCASE("bad magic") {
    std::string bad = whole;
    bad[0] = 'X';
    write_file_atomic(td.path("bad.fpds"), bad);
    try {
      load_dataset(td.path("bad.fpds"));
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("not a dataset file") != std::string::npos);
    }
  }
  SUBCASE("unsupported version") {
    std::string bad = whole;
    bad[4] = 9;  // version low byte
    write_file_atomic(td.path("v9.fpds"), bad);
    try {
      load_dataset(td.path("v9.fpds"));
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find("unsupported") != std::string::npos);
      CHECK(std::string(e.what()).find("9") != std::string::npos);
    }
  }
  SUBCASE("truncation at any boundary") {
    for (size_t keep : {size_t{3}, size_t{5}, size_t{20}, whole.size() / 2, whole.size() - 1}) {
      write_file_atomic(td.path("t.fpds"), whole.substr(0, keep));
      CHECK_THROWS_AS(load_dataset(td.path("t.fpds")), IoError);
    }
  }
  SUBCASE("trailing garbage") {
    write_file_atomic(td.path("g.fpds"), whole + "junk");
    CHECK_THROWS_AS(load_dataset(td.path("g.fpds")), IoError);
  }
}

TEST_CASE("dataset fingerprint tracks content, not creation config") {
  world::Dataset ds = small_dataset();
  TempDir td;
  save_dataset(td.path("h1.fpds"), ds, 111);
  save_dataset(td.path("h2.fpds"), ds, 222);
  CHECK(read_file(td.path("h1.fpds")) != read_file(td.path("h2.fpds")));
  CHECK(dataset_fingerprint(load_dataset(td.path("h1.fpds"))) ==
        dataset_fingerprint(load_dataset(td.path("h2.fpds"))));

  world::Dataset other = ds;
  other.trajs[0].states.data[0] += 1e-9;
  CHECK(dataset_fingerprint(other) != dataset_fingerprint(ds));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

TEST_CASE("checkpoint round-trip: weights, config, context, metadata") {
  TempDir td;
  model::VelocityNet net = small_net();
  Checkpoint ck = make_checkpoint(net, small_ctx());
  ck.train_step = 1234;
  ck.split_prob = 0.25;
  ck.dataset_fingerprint = 42;
  ck.config_hash = 43;
  ck.has_opt = true;
  ck.opt.lr = 3e-4;
  ck.opt.step = 17;
  for (const auto& [name, arr] : net.params) {
    ck.opt.m[name] = Array(arr.shape, 0.5);
    ck.opt.v[name] = Array(arr.shape, 0.25);
  }
  save_checkpoint(td.path("a.fpck"), ck);
  Checkpoint back = load_checkpoint(td.path("a.fpck"));

  CHECK(back.net.arch == ck.net.arch);
  CHECK(back.net.conditioning == ck.net.conditioning);
  CHECK(back.net.channel_dims == ck.net.channel_dims);
  CHECK(back.net.horizon == ck.net.horizon);
  CHECK(back.ctx.stats.lo == ck.ctx.stats.lo);
  CHECK(back.ctx.stats.hi == ck.ctx.stats.hi);
  CHECK(back.ctx.env.kind == ck.ctx.env.kind);
  CHECK(back.ctx.fk_samples == ck.ctx.fk_samples);
  CHECK(back.train_step == 1234);
  CHECK(back.split_prob == 0.25);
  CHECK(back.dataset_fingerprint == 42);
  CHECK(back.config_hash == 43);
  REQUIRE(back.params.size() == net.params.size());
  for (const auto& [name, arr] : net.params) CHECK(same_bits(back.params.at(name), arr));
  REQUIRE(back.has_opt);
  CHECK(back.opt.lr == 3e-4);
  CHECK(back.opt.step == 17);
  CHECK(back.opt.m.size() == net.params.size());
  CHECK(same_bits(back.opt.v.at("out.w"), ck.opt.v.at("out.w")));
}

TEST_CASE("checkpoint without optimizer state stays lean") {
  TempDir td;
  Checkpoint ck = make_checkpoint(small_net(), small_ctx());
  save_checkpoint(td.path("a.fpck"), ck);
  Checkpoint back = load_checkpoint(td.path("a.fpck"));
  CHECK_FALSE(back.has_opt);
  CHECK(back.opt.m.empty());
  CHECK(back.opt.v.empty());
}

TEST_CASE("checkpoint save-load-save is byte-identical") {
  TempDir td;
  Checkpoint ck = make_checkpoint(small_net(), small_ctx());
  ck.has_opt = true;
  for (const auto& [name, arr] : ck.params) {
    ck.opt.m[name] = Array(arr.shape, 0.1);
    ck.opt.v[name] = Array(arr.shape, 0.2);
  }
  save_checkpoint(td.path("a.fpck"), ck);
  save_checkpoint(td.path("b.fpck"), load_checkpoint(td.path("a.fpck")));
  CHECK(read_file(td.path("a.fpck")) == read_file(td.path("b.fpck")));
}

TEST_CASE("loaded net forwards bit-identically to the saved one") {
  TempDir td;
  model::VelocityNet net = small_net();
  world::DataContext ctx = small_ctx();
  save_checkpoint(td.path("a.fpck"), make_checkpoint(net, ctx));
  model::VelocityNet back = to_net(load_checkpoint(td.path("a.fpck")));

  RandomStream rng(9);
  Array x({2, 16, 4});
  for (double& v : x.data) v = rng.uniform(-1.0, 1.0);
  auto run = [&](const model::VelocityNet& n) {
    nd::Tape t;
    return t.val(model::forward(t, n, t.constant(x), {0.3, 0.8}, nullptr, false).out);
  };
  CHECK(same_bits(run(net), run(back)));
}

TEST_CASE("load_into: config mismatch names the parameter") {
  TempDir td;
  save_checkpoint(td.path("unet.fpck"), make_checkpoint(small_net(), small_ctx()));
  Checkpoint ck = load_checkpoint(td.path("unet.fpck"));

  model::VelocityNet tf = small_net(model::Arch::TRANSFORMER);
  try {
    load_into(ck, tf);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("parameter") != std::string::npos);
  }

  // Same layout but a different shape on one entry.
  model::VelocityNet wide = small_net();
  wide.params.at("out.b") = Array({8});
  try {
    load_into(ck, wide);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("out.b") != std::string::npos);
  }

  model::VelocityNet ok = small_net();
  for (auto& [name, arr] : ok.params) arr = Array(arr.shape, 0.0);
  load_into(ck, ok);
  CHECK(same_bits(ok.params.at("out.w"), ck.params.at("out.w")));
}

TEST_CASE("checkpoint corruption errors") {
  TempDir td;
  save_checkpoint(td.path("a.fpck"), make_checkpoint(small_net(), small_ctx()));
  const std::string whole = read_file(td.path("a.fpck"));
  std::string bad = whole;
  bad[0] = 'Q';
  write_file_atomic(td.path("bad.fpck"), bad);
  try {
    load_checkpoint(td.path("bad.fpck"));
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("not a checkpoint file") != std::string::npos);
  }
  write_file_atomic(td.path("t.fpck"), whole.substr(0, whole.size() / 3));
  CHECK_THROWS_AS(load_checkpoint(td.path("t.fpck")), IoError);
}

// ---------------------------------------------------------------------------
// run config
// ---------------------------------------------------------------------------

TEST_CASE("empty config text yields the stock defaults") {
  RunConfig cfg = parse_config_text("");
  CHECK(cfg.env == world::EnvKind::PARTICLE);
  CHECK(cfg.dataset == "cross");
  CHECK(cfg.scheme.kind == world::AugmentKind::ACTION_NOISE);
  CHECK(cfg.channels == std::vector<int>{32, 64, 128, 256});
  CHECK(cfg.time_embed_dim == 32);
  CHECK(cfg.train_steps == 20000);
  CHECK(cfg.lr == 2e-4);
  CHECK(cfg.n_steps == 10);
  CHECK(cfg.collision_weight == 0.1);
  CHECK(cfg.smoothness_weight == 1e-6);
  CHECK(cfg.split_prob == 0.5);
  CHECK(cfg.seed == 0);
  CHECK(cfg.seeds == std::vector<uint64_t>{0, 1, 2});
}

TEST_CASE("config text: comments, spacing, full coverage, overrides") {
  const std::string text =
      "# experiment settings\n"
      "env = arm            # trailing comment\n"
      "dataset=straight\n"
      "scheme = random_pos\n"
      "noise_std = 0.1\n"
      "\n"
      "arch = transformer\n"
      "conditioning = direct\n"
      "channels = 16, 32\n"
      "tf_dim = 64\n"
      "tf_heads = 4\n"
      "tf_layers = 2\n"
      "train_steps = 500\n"
      "batch_size = 8\n"
      "seeds = 7, 8, 9, 10\n";
  RunConfig cfg = parse_config_text(text);
  CHECK(cfg.env == world::EnvKind::ARM);
  CHECK(cfg.dataset == "straight");
  CHECK(cfg.scheme.kind == world::AugmentKind::RANDOM_POS);
  CHECK(cfg.scheme.noise_std == 0.1);
  CHECK(cfg.arch == model::Arch::TRANSFORMER);
  CHECK(cfg.conditioning == model::Conditioning::DIRECT);
  CHECK(cfg.channels == std::vector<int>{16, 32});
  CHECK(cfg.tf_dim == 64);
  CHECK(cfg.train_steps == 500);
  CHECK(cfg.seeds == std::vector<uint64_t>{7, 8, 9, 10});
  CHECK(cfg.net_config().state_dim == 6);  // arm

  apply_kv(cfg, "n_steps", "20");
  CHECK(cfg.n_steps == 20);
}

TEST_CASE("config rejection: unknown keys, malformed lines, ranges") {
  try {
    parse_config_text("train_stps = 100\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("unknown config key 'train_stps'") != std::string::npos);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("just words\n"), ConfigError);
  try {
    parse_config_text("train_steps = -1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(">= 1") != std::string::npos);
    CHECK(std::string(e.what()).find("-1") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("split_prob = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("scheme = bogus\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("seed = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("seeds = \n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("n_traj = 5\n"), ConfigError);        // cross wants %4
  CHECK_NOTHROW(parse_config_text("dataset = straight\nn_traj = 5\n"));
  CHECK_THROWS_AS(parse_config_text("horizon = 48\n"), ConfigError);      // net validate runs
}

TEST_CASE("config file round-trip and hashing") {
  TempDir td;
  RunConfig cfg;
  cfg.arch = model::Arch::TRANSFORMER;
  cfg.lr = 3.5e-4;
  cfg.seeds = {4, 5};
  std::ofstream(td.path("run.cfg")) << dump_config(cfg);
  RunConfig back = parse_config_file(td.path("run.cfg"));
  CHECK(dump_config(back) == dump_config(cfg));
  CHECK(hash_config(back) == hash_config(cfg));

  RunConfig other = cfg;
  other.n_steps = 20;
  CHECK(hash_config(other) != hash_config(cfg));

  CHECK_THROWS_AS(parse_config_file(td.path("absent.cfg")), IoError);
}
