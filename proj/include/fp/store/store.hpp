#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fp/flow/flow.hpp"
#include "fp/model/net.hpp"
#include "fp/nd/adam.hpp"
#include "fp/world/types.hpp"

namespace fp::store {

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Every tunable in one struct. Config files are `key = value` lines (see
/// README for the full annotated example); the CLI maps flags onto the same
/// keys, so file values and flag overrides go through one code path.
struct RunConfig {
  // Data generation.
  world::EnvKind env = world::EnvKind::PARTICLE;
  std::string dataset = "cross";  // cross | straight
  world::AugmentScheme scheme{world::AugmentKind::ACTION_NOISE};
  int n_traj = 4096;
  int horizon = 64;

  // Network.
  model::Arch arch = model::Arch::UNET;
  model::Conditioning conditioning = model::Conditioning::INPAINT;
  std::vector<int> channels = {32, 64, 128, 256};
  int time_embed_dim = 32;
  int kernel_size = 3;
  int tf_layers = 4;
  int tf_heads = 4;
  int tf_dim = 128;

  // Training.
  int64_t train_steps = 20000;
  double lr = 2e-4;
  int batch_size = 32;
  double split_prob = 0.5;
  int64_t ckpt_every = 2000;

  // Inference / guidance.
  int n_steps = 10;
  double guidance_scale = 1.0;
  double collision_weight = 0.1;
  double smoothness_weight = 1e-6;
  flow::BtSchedule bt_schedule = flow::BtSchedule::ONE_MINUS_T;

  // Seeding: `seed` drives single runs, `seeds` the multi-seed benchmarks.
  uint64_t seed = 0;
  std::vector<uint64_t> seeds = {0, 1, 2};

  void validate() const;                 // ConfigError with the offending range
  model::NetConfig net_config() const;   // state_dim follows the env
};

/// Assign one key. Unknown keys throw (no silent typo tolerance); bad values
/// throw with the accepted range. Both file parsing and CLI overrides land
/// here.
void apply_kv(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parse `key = value` text ('#' comments, blank lines ok). `origin` names
/// the source in error messages.
RunConfig parse_config_text(const std::string& text, const std::string& origin = "config");
RunConfig parse_config_file(const std::string& path);

/// Canonical dump: every key, one per line, in fixed order. parse(dump(c))
/// reproduces c; the config hash is FNV-1a over this text.
std::string dump_config(const RunConfig& cfg);
uint64_t hash_config(const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset files (FPDS)
// ---------------------------------------------------------------------------

/// Binary container, magic "FPDS", version u16, little-endian. Header holds
/// env parameters, augmentation scheme, T, D, count, normalization stats and
/// per-trajectory arm labels; then count raw f64 [T,D] blocks (normalized
/// states). Round-trips are byte-exact.
void save_dataset(const std::string& path, const world::Dataset& ds,
                  uint64_t config_hash = 0);
world::Dataset load_dataset(const std::string& path);

/// Content hash of the serialized payload (excludes the embedded config
/// hash), so two identical datasets fingerprint equal regardless of how they
/// were configured into existence.
uint64_t dataset_fingerprint(const world::Dataset& ds);

// ---------------------------------------------------------------------------
// Checkpoints (FPCK)
// ---------------------------------------------------------------------------

struct Checkpoint {
  model::NetConfig net;
  world::DataContext ctx;      // denormalization travels with the weights
  nd::ParamMap params;         // canonical (sorted) name order
  bool has_opt = false;
  nd::AdamState opt;           // meaningful when has_opt
  int64_t train_step = 0;
  double split_prob = 0.5;
  uint64_t dataset_fingerprint = 0;
  uint64_t config_hash = 0;
};

Checkpoint make_checkpoint(const model::VelocityNet& net, const world::DataContext& ctx);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

/// Copy checkpoint weights into an already-configured net. Mismatched or
/// missing parameters throw a ShapeError naming the first offender.
void load_into(const Checkpoint& ck, model::VelocityNet& net);

/// Reconstruct a net directly from the checkpoint's own config.
model::VelocityNet to_net(const Checkpoint& ck);

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Write-to-temp + rename, so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);  // IoError when unreadable

}  // namespace fp::store
