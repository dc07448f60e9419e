#pragma once

#include <map>
#include <string>
#include <vector>

#include "fp/common/rng.hpp"
#include "fp/nd/adam.hpp"
#include "fp/nd/tape.hpp"

namespace fp::model {

enum class Arch : uint8_t { UNET = 0, TRANSFORMER = 1 };
enum class Conditioning : uint8_t { INPAINT = 0, DIRECT = 1 };

std::string arch_name(Arch a);
std::string conditioning_name(Conditioning c);
Arch parse_arch(const std::string& s);
Conditioning parse_conditioning(const std::string& s);

struct NetConfig {
  Arch arch = Arch::UNET;
  Conditioning conditioning = Conditioning::INPAINT;
  std::vector<int> channel_dims = {32, 64, 128, 256};
  int time_embed_dim = 32;
  int state_dim = 4;
  int horizon = 64;
  int kernel_size = 3;
  // transformer only
  int tf_layers = 4;
  int tf_heads = 4;
  int tf_dim = 128;

  void validate() const;  // ConfigError on violations
  int levels() const { return static_cast<int>(channel_dims.size()); }
  /// Smallest horizon the UNet accepts: 2^levels.
  int min_horizon() const;
};

/// Velocity field u_t^theta. Parameters are named arrays; shapes are a pure
/// function of the config.
struct VelocityNet {
  NetConfig config;
  nd::ParamMap params;

  static VelocityNet init(const NetConfig& cfg, RandomStream& rng);
  int64_t param_count() const;
};

/// Boundary conditioning for DIRECT nets: start/goal rows [B,D], normalized.
struct CondPair {
  nd::Array start;
  nd::Array goal;
};

struct ForwardResult {
  nd::Var out;  // [B,T,D]
  std::map<std::string, nd::Var> param_vars;
};

/// Pre-MLP sinusoidal features of the flow time: dim/2 geometrically spaced
/// frequencies from 1 to 1000, sin halves then cos halves. Contract error
/// outside [0,1].
nd::Array time_features(double t, int dim);

/// Run the network on x [B,T,D] with per-sample flow times tt. Registers the
/// parameters as tape leaves (requires_grad = train). INPAINT nets must get
/// cond == nullptr (conditioning happens in the sampler); DIRECT nets must
/// get a CondPair. Accepts any horizon the architecture supports (UNet:
/// power of 2, >= 2^levels).
ForwardResult forward(nd::Tape& t, const VelocityNet& net, nd::Var x,
                      const std::vector<double>& tt, const CondPair* cond, bool train);

}  // namespace fp::model
