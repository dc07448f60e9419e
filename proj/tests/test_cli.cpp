// End-to-end tests of the flowplan binary: each case shells out to the real
// executable (path injected as FLOWPLAN_BIN) and inspects exit codes, files
// and stdout/stderr. A tiny gen-data + train pipeline is built once and
// shared; everything here is sized for speed, not model quality.
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

#include "fp/bench/report.hpp"
#include "fp/common/error.hpp"
#include "fp/store/store.hpp"

using namespace fp;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path root;
  TempDir() {
    static int counter = 0;
    root = fs::temp_directory_path() /
           ("fp_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(root);
  }
  ~TempDir() { fs::remove_all(root); }
  std::string path(const std::string& name) const { return (root / name).string(); }
};

struct CmdResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_or_empty(const std::string& path) {
  try {
    return store::read_file(path);
  } catch (const IoError&) {
    return "";
  }
}

/// Run the binary with `args`, capturing exit code and both streams.
CmdResult run_cli(const std::string& args) {
  static int counter = 0;
  const std::string tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const std::string so = (fs::temp_directory_path() / ("fp_cli_out_" + tag)).string();
  const std::string se = (fs::temp_directory_path() / ("fp_cli_err_" + tag)).string();
  const std::string cmd = std::string(FLOWPLAN_BIN) + " " + args + " >" + so + " 2>" + se;
  const int rc = std::system(cmd.c_str());
  CmdResult r;
  r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  r.out = read_or_empty(so);
  r.err = read_or_empty(se);
  fs::remove(so);
  fs::remove(se);
  return r;
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

bool same_bytes(const std::string& a, const std::string& b) {
  return store::read_file(a) == store::read_file(b);
}

/// One tiny dataset + trained model, built once for every case that needs a
/// checkpoint. Net: UNet channels [8], embed 8, horizon 16; 12 steps.
struct Pipeline {
  TempDir dir;
  std::string data_dir, train_dir, data, model;
  std::string train_args;  // flags shared with resume tests

  Pipeline() {
    data_dir = dir.path("data");
    train_dir = dir.path("train");
    CmdResult g = run_cli("gen-data --n 16 --horizon 16 --seed 3 --out-dir " + data_dir);
    if (g.code != 0) throw std::runtime_error("pipeline gen-data failed: " + g.err);
    data = data_dir + "/dataset.fpds";
    train_args = "train --data " + data +
                 " --ckpt-every 5 --batch-size 4 --seed 3"
                 " --set channels=8 --set time_embed_dim=8";
    CmdResult t = run_cli(train_args + " --steps 12 --out-dir " + train_dir);
    if (t.code != 0) throw std::runtime_error("pipeline train failed: " + t.err);
    model = train_dir + "/model.fpck";
  }
};

const Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("help and usage errors") {
  const CmdResult help = run_cli("--help");
  CHECK(help.code == 0);
  CHECK(contains(help.out, "gen-data"));
  CHECK(contains(help.out, "bench-stitch"));

  CHECK(run_cli("").code == 2);                       // missing subcommand
  CHECK(run_cli("plan --no-such-flag 1").code == 2);  // unknown flag

  const CmdResult sub = run_cli("plan --help");
  CHECK(sub.code == 0);
  CHECK(contains(sub.out, "traj.csv"));  // per-command schema documented
}

TEST_CASE("gen-data: reproducible files and a full summary") {
  TempDir td;
  const std::string a = td.path("a"), b = td.path("b"), c = td.path("c");
  CHECK(run_cli("gen-data --n 16 --horizon 16 --seed 9 --out-dir " + a).code == 0);
  CHECK(run_cli("gen-data --n 16 --horizon 16 --seed 9 --out-dir " + b).code == 0);
  CHECK(run_cli("gen-data --n 16 --horizon 16 --seed 10 --out-dir " + c).code == 0);
  CHECK(same_bytes(a + "/dataset.fpds", b + "/dataset.fpds"));
  CHECK_FALSE(same_bytes(a + "/dataset.fpds", c + "/dataset.fpds"));

  const json j = json::parse(store::read_file(a + "/gen_data_summary.json"));
  CHECK(j["n_traj"] == 16);
  CHECK(j["horizon"] == 16);
  CHECK(j["mode_counts"].size() == 4);
  CHECK(j["mode_counts"]["left->right"] == 4);
  CHECK(j["noise_cross_correlation"].is_number());

  const world::Dataset ds = store::load_dataset(a + "/dataset.fpds");
  CHECK(ds.T == 16);
  CHECK(ds.trajs.size() == 16);
}

TEST_CASE("gen-data: a bogus scheme exits 2 naming the valid ones") {
  TempDir td;
  const CmdResult r = run_cli("gen-data --scheme bogus --out-dir " + td.path("x"));
  CHECK(r.code == 2);
  CHECK(contains(r.err, "bogus"));
  CHECK(contains(r.err, "action_noise"));
  CHECK(contains(r.err, "random_forces"));
}

TEST_CASE("train: checkpoints, loss curve and recorded metadata") {
  const Pipeline& p = pipeline();
  CHECK(fs::exists(p.model));
  CHECK(fs::exists(p.train_dir + "/ckpt_000005.fpck"));
  CHECK(fs::exists(p.train_dir + "/ckpt_000010.fpck"));

  const bench::CsvTable loss = bench::read_csv(p.train_dir + "/loss.csv");
  CHECK(loss.header == std::vector<std::string>{"step", "loss"});
  CHECK(loss.rows.size() == 12);
  CHECK(loss.rows.front()[0] == "1");
  CHECK(loss.rows.back()[0] == "12");

  const store::Checkpoint ck = store::load_checkpoint(p.model);
  CHECK(ck.train_step == 12);
  CHECK(ck.split_prob == 0.5);
  CHECK(ck.has_opt);
  const store::Checkpoint mid = store::load_checkpoint(p.train_dir + "/ckpt_000005.fpck");
  CHECK(mid.train_step == 5);
  CHECK(mid.dataset_fingerprint == ck.dataset_fingerprint);

  const json j = json::parse(store::read_file(p.train_dir + "/train_summary.json"));
  CHECK(j["steps_run"] == 12);
  CHECK(j["param_count"].get<int64_t>() > 0);
}

TEST_CASE("train: --resume reproduces the uninterrupted run byte for byte") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string rd = td.path("resumed");
  fs::create_directories(rd);
  fs::copy_file(p.train_dir + "/ckpt_000005.fpck", rd + "/ckpt_000005.fpck");
  // Trim a stale loss.csv down to the resume point the way a crashed run
  // would have left it.
  {
    bench::CsvTable prev = bench::read_csv(p.train_dir + "/loss.csv");
    prev.rows.resize(5);
    bench::write_csv(rd + "/loss.csv", prev);
  }
  const CmdResult r = run_cli(p.train_args + " --steps 12 --out-dir " + rd +
                              " --resume " + rd + "/ckpt_000005.fpck");
  CHECK(r.code == 0);
  CHECK(same_bytes(p.model, rd + "/model.fpck"));
  CHECK(same_bytes(p.train_dir + "/loss.csv", rd + "/loss.csv"));

  // The step counter only moves forward.
  const CmdResult back = run_cli(p.train_args + " --steps 12 --out-dir " + td.path("back") +
                                 " --resume " + rd + "/model.fpck");
  CHECK(back.code == 2);
  CHECK(contains(back.err, "12"));
}

TEST_CASE("train: a diverging run exits 3 keeping the last good checkpoint") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("nan");
  const CmdResult r = run_cli(p.train_args + " --steps 40 --lr 1e200 --out-dir " + od +
                              " --resume " + p.train_dir + "/ckpt_000005.fpck");
  CHECK(r.code == 3);
  CHECK(contains(r.err, "not finite"));
  CHECK(contains(r.err, "ckpt_000005.fpck"));     // the named survivor
  CHECK_FALSE(fs::exists(od + "/model.fpck"));    // no final model
  CHECK(fs::exists(od + "/loss.csv"));            // partial curve kept
}

TEST_CASE("plan: artifacts, clamped endpoints and dimension checks") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("plan");
  const CmdResult r = run_cli("plan --ckpt " + p.model +
                              " --start -1,0,0,0 --goal 1,0,0,0 --seed 5 --out-dir " + od);
  CHECK(r.code == 0);

  const auto [trajs, kind] = bench::trajs_from_table(bench::read_csv(od + "/traj.csv"));
  REQUIRE(trajs.size() == 1);
  CHECK(kind == world::EnvKind::PARTICLE);
  CHECK(trajs[0].horizon() == 16);
  // Inpainted endpoints match the request up to normalization round-trip.
  CHECK(trajs[0].states.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(trajs[0].states.at(15, 0) == doctest::Approx(1.0).epsilon(1e-9));

  CHECK(contains(store::read_file(od + "/traj.svg"), "<svg"));
  const json j = json::parse(store::read_file(od + "/plan_summary.json"));
  CHECK(j["goal_distance"].get<double>() < 1e-9);
  CHECK(j["stats"]["split_used"] == false);

  const CmdResult bad = run_cli("plan --ckpt " + p.model + " --start 1,2 --goal 1,0,0,0" +
                                " --out-dir " + td.path("bad"));
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "4"));
}

TEST_CASE("plan: guidance scale zero equals omitting the obstacle, byte for byte") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string a = td.path("zero"), b = td.path("none");
  CHECK(run_cli("plan --ckpt " + p.model + " --start -1,0,0,0 --goal 1,0,0,0 --seed 11" +
                " --obstacle 0,0,0.2 --guidance-scale 0 --out-dir " + a)
            .code == 0);
  CHECK(run_cli("plan --ckpt " + p.model + " --start -1,0,0,0 --goal 1,0,0,0 --seed 11" +
                " --out-dir " + b)
            .code == 0);
  CHECK(same_bytes(a + "/traj.csv", b + "/traj.csv"));
  CHECK(fs::exists(a + "/obstacles.csv"));
  CHECK_FALSE(fs::exists(b + "/obstacles.csv"));
}

TEST_CASE("plan: --split refines and still hits the pins") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("split");
  const CmdResult r = run_cli("plan --ckpt " + p.model +
                              " --start -1,0.2,0,0 --goal 1,-0.2,0,0 --split --seed 7" +
                              " --out-dir " + od);
  CHECK(r.code == 0);
  const json j = json::parse(store::read_file(od + "/plan_summary.json"));
  CHECK(j["stats"]["split_used"] == true);
  CHECK(j["stats"]["second_loop_steps"].get<int>() > 0);
  const auto [trajs, kind] = bench::trajs_from_table(bench::read_csv(od + "/traj.csv"));
  CHECK(trajs[0].states.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(trajs[0].states.at(0, 1) == doctest::Approx(0.2).epsilon(1e-9));
  CHECK(trajs[0].states.at(15, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("plan: a start inside the obstacle warns but still plans") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("inside");
  const CmdResult r = run_cli("plan --ckpt " + p.model +
                              " --start -1,0,0,0 --goal 1,0,0,0 --obstacle -1,0,0.3" +
                              " --out-dir " + od);
  CHECK(r.code == 0);
  CHECK(contains(r.err, "warning"));
  CHECK(contains(r.err, "start"));
  CHECK(fs::exists(od + "/traj.csv"));
}

TEST_CASE("bench-stitch: table shape and byte-reproducible samples") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string a = td.path("s1"), b = td.path("s2");
  const std::string args = "bench-stitch --data " + p.data + " --ckpt " + p.model +
                           " --batches 1 --batch-size 3 --jobs 2 --seed 4 --out-dir ";
  CHECK(run_cli(args + a).code == 0);
  CHECK(run_cli(args + b).code == 0);
  CHECK(same_bytes(a + "/stitch_samples.csv", b + "/stitch_samples.csv"));

  const bench::CsvTable table = bench::read_csv(a + "/stitch_table.csv");
  CHECK(table.header == std::vector<std::string>{"config", "mean", "std"});
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0][0] == "unet/inpaint/action_noise");

  const bench::CsvTable samples = bench::read_csv(a + "/stitch_samples.csv");
  CHECK(samples.rows.size() == 5);  // 3 samples + mean + std
  CHECK(samples.rows[3][1] == "mean");
  CHECK(contains(store::read_file(a + "/stitch.svg"), "polyline"));
}

TEST_CASE("bench-avoid: three cells over the radius grid") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("avoid");
  const CmdResult r = run_cli("bench-avoid --ckpt " + p.model +
                              " --radii 0,0.1 --trials 2 --jobs 2 --seed 4 --out-dir " + od);
  CHECK(r.code == 0);
  const auto [results, labels] = bench::avoid_from_table(bench::read_csv(od + "/avoid.csv"));
  REQUIRE(labels.size() == 3);
  CHECK(labels[0] == "unguided");
  CHECK(labels[1] == "guided");
  CHECK(labels[2] == "guided+split");
  CHECK(results[0].guidance_scale == 0.0);
  CHECK(results[2].used_split);
  for (const bench::AvoidResult& res : results) CHECK(res.radii == std::vector<double>{0.0, 0.1});
  CHECK(contains(store::read_file(od + "/avoid.svg"), "polyline"));
}

TEST_CASE("probe: walks the checkpoint series and reports consistency") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("probe");
  const CmdResult r = run_cli("probe --ckpt-dir " + p.train_dir +
                              " --trials 2 --seed 4 --out-dir " + od);
  CHECK(r.code == 0);
  const std::vector<bench::CollapsePoint> pts =
      bench::collapse_from_table(bench::read_csv(od + "/collapse.csv"));
  REQUIRE(pts.size() == 3);  // steps 5, 10, 12
  CHECK(pts[0].step == 5);
  CHECK(pts[1].step == 10);
  CHECK(pts[2].step == 12);
  const json j = json::parse(store::read_file(od + "/probe_summary.json"));
  CHECK(j["consistency"]["guided"]["dyn_residual"].is_number());
  CHECK(j["consistency"]["unguided"]["max_jump"].is_number());
  CHECK(fs::exists(od + "/collapse.svg"));
}

TEST_CASE("plot: regenerates SVGs from CSVs alone; empty dir exits 2") {
  const Pipeline& p = pipeline();
  TempDir td;
  const std::string od = td.path("bench");
  CHECK(run_cli("bench-stitch --data " + p.data + " --ckpt " + p.model +
                " --batches 1 --batch-size 2 --seed 4 --out-dir " + od)
            .code == 0);
  const std::string original = store::read_file(od + "/stitch.svg");
  fs::remove(od + "/stitch.svg");
  const CmdResult r = run_cli("plot --out-dir " + od);
  CHECK(r.code == 0);
  CHECK(store::read_file(od + "/stitch.svg") == original);

  // loss.csv alone is enough for a loss curve.
  const std::string ld = td.path("losses");
  fs::create_directories(ld);
  fs::copy_file(p.train_dir + "/loss.csv", ld + "/loss.csv");
  CHECK(run_cli("plot --out-dir " + ld).code == 0);
  CHECK(contains(store::read_file(ld + "/loss.svg"), "training loss"));

  const std::string empty = td.path("empty");
  fs::create_directories(empty);
  const CmdResult e = run_cli("plot --out-dir " + empty);
  CHECK(e.code == 2);
  CHECK(contains(e.err, "no plottable CSVs"));
}

TEST_CASE("config file, --set and flags layer in that order") {
  TempDir td;
  const std::string cfg = td.path("run.cfg");
  store::write_file_atomic(cfg, "n_traj = 8\nhorizon = 16\nseed = 2\n");
  const std::string a = td.path("a");
  // --set overrides the file, the named flag overrides --set.
  const CmdResult r = run_cli("gen-data --config " + cfg + " --set n_traj=12 --n 16" +
                              " --out-dir " + a);
  CHECK(r.code == 0);
  const json j = json::parse(store::read_file(a + "/gen_data_summary.json"));
  CHECK(j["n_traj"] == 16);
  CHECK(j["horizon"] == 16);

  const CmdResult bad = run_cli("gen-data --set nonsense=1 --out-dir " + td.path("b"));
  CHECK(bad.code == 2);
  CHECK(contains(bad.err, "nonsense"));
}
