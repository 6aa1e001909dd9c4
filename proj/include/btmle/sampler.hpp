#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "btmle/glm.hpp"

namespace btmle {

struct SamplerConfig {
  int n_chains = 2;
  int n_warmup = 1000;
  int n_draws = 2000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SamplerDiagnostics {
  std::map<std::string, double> split_rhat;  // per block, max over components
  double mean_accept = 0.0;
  int divergences = 0;  // post-warmup
  int max_depth_hits = 0;
  std::vector<std::string> warnings;
};

// Posterior draws on the natural scale: log-transformed blocks are
// exponentiated before storage. Chains are concatenated in chain order, so
// identical (model, config, seed) yields bit-identical draws.
struct PosteriorDraws {
  std::map<std::string, Mat> blocks;  // m x block_dim
  int n_chains = 0;
  int n_draws_per_chain = 0;
  SamplerDiagnostics diagnostics;

  int n_draws() const { return n_chains * n_draws_per_chain; }
  const Mat& block(const std::string& name) const;
};

// Chain start point: each unconstrained coordinate uniform on [-2, 2],
// deterministic in (seed, chain).
Vec initialize(const LogDensityModel& model, std::uint64_t seed, int chain = 0);

// No-U-Turn sampler with multinomial trajectory sampling, dual-averaging
// step size adaptation, and a diagonal mass matrix estimated during the
// second half of warmup. Chains run concurrently on independent RNG streams.
PosteriorDraws sample(const LogDensityModel& model, const SamplerConfig& config);

// Split-R-hat over sequences laid out as chains x draws (used internally and
// by diagnostics tests).
double split_rhat(const std::vector<Vec>& chains);

}  // namespace btmle
