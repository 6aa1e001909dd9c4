#include "btmle/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "btmle/rng.hpp"

namespace btmle {

void SamplerConfig::validate() const {
  if (n_chains < 1 || n_warmup < 1 || n_draws < 1)
    throw ConfigError("sampler counts must be positive");
  if (!(target_accept > 0.0 && target_accept < 1.0))
    throw ConfigError("target_accept must be in (0, 1)");
  if (max_tree_depth < 1 || max_tree_depth > 14)
    throw ConfigError("max_tree_depth out of range");
}

const Mat& PosteriorDraws::block(const std::string& name) const {
  auto it = blocks.find(name);
  if (it == blocks.end()) throw ConfigError("no posterior block named '" + name + "'");
  return it->second;
}

Vec initialize(const LogDensityModel& model, std::uint64_t seed, int chain) {
  Rng rng(derive_seed(seed, 1, static_cast<std::uint64_t>(chain)));
  Vec q(model.dim);
  for (int i = 0; i < model.dim; ++i) q[i] = rng.uniform(-2.0, 2.0);
  return q;
}

namespace {

constexpr double kDivergenceThreshold = 1000.0;

struct State {
  Vec q;
  Vec p;
  Vec grad;
  double logp = 0.0;
};

struct Tree {
  State outer;       // state at the far end in the integration direction
  Vec sample;        // position sampled from the subtree
  Vec rho;           // momentum sum over the subtree
  Vec p_inner;       // momentum at the near boundary
  Vec p_outer;
  double log_sum_w = 0.0;
  bool ok = false;
  bool divergent = false;
};

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (!std::isfinite(m)) return m;
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

struct ChainOutput {
  Mat draws;  // n_draws x dim, unconstrained scale
  double accept_sum = 0.0;
  long long accept_count = 0;
  int divergences = 0;
  int max_depth_hits = 0;
  bool init_failed = false;
};

class NutsChain {
 public:
  NutsChain(const LogDensityModel& model, const SamplerConfig& cfg, int chain)
      : model_(model),
        cfg_(cfg),
        rng_(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(chain))),
        inv_metric_(Vec::Ones(model.dim)) {}

  ChainOutput run() {
    ChainOutput out;
    out.draws.resize(cfg_.n_draws, model_.dim);

    State cur;
    if (!find_start(cur)) {
      out.init_failed = true;
      return out;
    }
    step_size_ = initial_step_size(cur);

    // Dual averaging (warmup) with two diagonal-metric refreshes; the final
    // metric comes from draws in the second half of warmup.
    const int w = cfg_.n_warmup;
    const bool adapt_metric = w >= 40;
    const int a = w / 4, b = w / 2, c = (9 * w) / 10;
    da_init(step_size_);
    std::vector<Vec> window;

    for (int iter = 0; iter < w; ++iter) {
      double accept_stat = 0.0;
      transition(cur, accept_stat, nullptr);
      da_update(accept_stat);
      if (adapt_metric) {
        if (iter >= a && iter < b) window.push_back(cur.q);
        if (iter >= b && iter < c) window.push_back(cur.q);
        if (iter + 1 == b || iter + 1 == c) {
          update_metric(window);
          window.clear();
          da_init(step_size_);
        }
      }
    }
    step_size_ = std::exp(da_log_eps_bar_);

    for (int iter = 0; iter < cfg_.n_draws; ++iter) {
      double accept_stat = 0.0;
      transition(cur, accept_stat, &out);
      out.accept_sum += accept_stat;
      ++out.accept_count;
      out.draws.row(iter) = cur.q.transpose();
    }
    return out;
  }

 private:
  bool eval(State& s) {
    s.logp = model_.eval(s.q, &s.grad);
    return std::isfinite(s.logp) && s.grad.allFinite();
  }

  void refresh_gradient(State& s) { eval(s); }

  bool find_start(State& s) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      s.q.resize(model_.dim);
      for (int i = 0; i < model_.dim; ++i) s.q[i] = rng_.uniform(-2.0, 2.0);
      if (eval(s)) return true;
    }
    return false;
  }

  double kinetic(const Vec& p) const {
    return 0.5 * (p.array().square() * inv_metric_.array()).sum();
  }

  double hamiltonian(const State& s) const { return -s.logp + kinetic(s.p); }

  void draw_momentum(Vec& p) {
    p.resize(model_.dim);
    for (int i = 0; i < model_.dim; ++i)
      p[i] = rng_.normal() / std::sqrt(inv_metric_[i]);
  }

  // One leapfrog step with signed step size; returns false on a non-finite
  // density or gradient.
  bool leapfrog(State& s, double eps) {
    s.p += 0.5 * eps * s.grad;
    s.q.array() += eps * inv_metric_.array() * s.p.array();
    if (!eval(s)) return false;
    s.p += 0.5 * eps * s.grad;
    return true;
  }

  double initial_step_size(const State& start) {
    double eps = 1.0;
    State probe = start;
    draw_momentum(probe.p);
    const double h0 = hamiltonian(probe);
    auto accept_of = [&](double e) {
      State s = probe;
      if (!leapfrog(s, e)) return 0.0;
      const double dh = h0 - hamiltonian(s);
      return std::isfinite(dh) ? std::exp(std::min(0.0, dh)) : 0.0;
    };
    const bool grow = accept_of(eps) > 0.5;
    for (int i = 0; i < 100; ++i) {
      eps *= grow ? 2.0 : 0.5;
      const double acc = accept_of(eps);
      if (grow && acc <= 0.5) break;
      if (!grow && acc >= 0.5) break;
      if (eps > 1e7 || eps < 1e-10) break;
    }
    return eps;
  }

  void update_metric(const std::vector<Vec>& window) {
    const auto n = static_cast<double>(window.size());
    if (n < 10) return;
    Vec mean = Vec::Zero(model_.dim);
    for (const auto& q : window) mean += q;
    mean /= n;
    Vec var = Vec::Zero(model_.dim);
    for (const auto& q : window) var += (q - mean).array().square().matrix();
    var /= (n - 1.0);
    // shrink toward a small constant, as is standard for windowed estimates
    const double w = n / (n + 5.0);
    inv_metric_ = (w * var.array() + (1.0 - w) * 1e-3).max(1e-10).matrix();
  }

  void da_init(double eps) {
    da_mu_ = std::log(10.0 * std::max(eps, 1e-10));
    da_log_eps_bar_ = std::log(std::max(eps, 1e-10));
    da_h_bar_ = 0.0;
    da_count_ = 0;
  }

  void da_update(double accept_stat) {
    constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
    ++da_count_;
    const double t = static_cast<double>(da_count_);
    da_h_bar_ = (1.0 - 1.0 / (t + t0)) * da_h_bar_ +
                (cfg_.target_accept - accept_stat) / (t + t0);
    const double log_eps = da_mu_ - std::sqrt(t) / gamma * da_h_bar_;
    const double w = std::pow(t, -kappa);
    da_log_eps_bar_ = w * log_eps + (1.0 - w) * da_log_eps_bar_;
    step_size_ = std::exp(log_eps);
  }

  bool no_uturn(const Vec& p_bwd, const Vec& p_fwd, const Vec& rho) const {
    const Vec r = rho.array() * inv_metric_.array();
    return p_fwd.dot(r) > 0.0 && p_bwd.dot(r) > 0.0;
  }

  Tree build_tree(const State& from, double eps, int depth, double h0,
                  double& accept_sum, long long& accept_count, bool& divergent_seen) {
    Tree tree;
    if (depth == 0) {
      State s = from;
      const bool finite = leapfrog(s, eps);
      const double h = finite ? hamiltonian(s) : std::numeric_limits<double>::infinity();
      const double dh = h0 - h;  // log weight
      const double alpha = std::isfinite(dh) ? std::exp(std::min(0.0, dh)) : 0.0;
      accept_sum += alpha;
      ++accept_count;
      if (!finite || h - h0 > kDivergenceThreshold) {
        tree.divergent = true;
        divergent_seen = true;
        return tree;
      }
      tree.outer = std::move(s);
      tree.sample = tree.outer.q;
      tree.rho = tree.outer.p;
      tree.p_inner = tree.outer.p;
      tree.p_outer = tree.outer.p;
      tree.log_sum_w = dh;
      tree.ok = true;
      return tree;
    }

    Tree left = build_tree(from, eps, depth - 1, h0, accept_sum, accept_count,
                           divergent_seen);
    if (!left.ok) return left;
    Tree right = build_tree(left.outer, eps, depth - 1, h0, accept_sum, accept_count,
                            divergent_seen);
    if (!right.ok) return right;

    Tree combined;
    combined.log_sum_w = log_sum_exp(left.log_sum_w, right.log_sum_w);
    // multinomial sampling within the subtree
    const double p_right = std::exp(right.log_sum_w - combined.log_sum_w);
    combined.sample = (rng_.uniform() < p_right) ? std::move(right.sample)
                                                 : std::move(left.sample);
    combined.rho = left.rho + right.rho;
    combined.p_inner = std::move(left.p_inner);
    combined.p_outer = std::move(right.p_outer);
    combined.outer = std::move(right.outer);
    combined.ok = no_uturn(combined.p_inner, combined.p_outer, combined.rho);
    return combined;
  }

  void transition(State& cur, double& accept_stat, ChainOutput* stats) {
    draw_momentum(cur.p);
    const double h0 = hamiltonian(cur);

    State fwd = cur;
    State bwd = cur;
    Vec rho = cur.p;
    Vec sample = cur.q;
    double log_sum_w = 0.0;
    double accept_sum = 0.0;
    long long accept_count = 0;
    bool divergent_seen = false;
    bool moved = false;

    int depth = 0;
    for (; depth < cfg_.max_tree_depth; ++depth) {
      const bool forward = rng_.uniform() < 0.5;
      const double eps = forward ? step_size_ : -step_size_;
      State& end = forward ? fwd : bwd;
      Tree tree = build_tree(end, eps, depth, h0, accept_sum, accept_count,
                             divergent_seen);
      if (!tree.ok) break;
      end = tree.outer;
      // biased progressive sampling favors the fresh subtree
      const double p_take = std::exp(std::min(0.0, tree.log_sum_w - log_sum_w));
      if (rng_.uniform() < p_take) {
        sample = tree.sample;
        moved = true;
      }
      log_sum_w = log_sum_exp(log_sum_w, tree.log_sum_w);
      rho += tree.rho;
      if (!no_uturn(bwd.p, fwd.p, rho)) break;
    }

    if (stats) {
      if (divergent_seen) ++stats->divergences;
      if (depth == cfg_.max_tree_depth) ++stats->max_depth_hits;
    }
    accept_stat = accept_count > 0 ? accept_sum / static_cast<double>(accept_count) : 0.0;
    if (moved) {
      cur.q = sample;
      refresh_gradient(cur);
    }
  }

  const LogDensityModel& model_;
  const SamplerConfig& cfg_;
  Rng rng_;
  Vec inv_metric_;
  double step_size_ = 1.0;
  double da_mu_ = 0.0, da_log_eps_bar_ = 0.0, da_h_bar_ = 0.0;
  long long da_count_ = 0;
};

}  // namespace

double split_rhat(const std::vector<Vec>& chains) {
  std::vector<Vec> halves;
  for (const auto& c : chains) {
    const Eigen::Index n = c.size() / 2;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    halves.push_back(c.head(n));
    halves.push_back(c.segment(n, n));
  }
  const auto m = static_cast<double>(halves.size());
  const auto n = static_cast<double>(halves.front().size());
  Vec means(halves.size());
  Vec vars(halves.size());
  for (std::size_t j = 0; j < halves.size(); ++j) {
    means[static_cast<Eigen::Index>(j)] = halves[j].mean();
    vars[static_cast<Eigen::Index>(j)] =
        (halves[j].array() - means[static_cast<Eigen::Index>(j)]).square().sum() / (n - 1.0);
  }
  const double grand = means.mean();
  const double b = n / (m - 1.0) * (means.array() - grand).square().sum();
  const double w = vars.mean();
  if (w <= 1e-300) return 1.0;
  const double var_hat = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_hat / w);
}

PosteriorDraws sample(const LogDensityModel& model, const SamplerConfig& config) {
  config.validate();
  PosteriorDraws out;
  out.n_chains = config.n_chains;
  out.n_draws_per_chain = config.n_draws;
  if (model.dim == 0) return out;

  std::vector<ChainOutput> chains(static_cast<std::size_t>(config.n_chains));
  auto run_chain = [&](int c) {
    NutsChain chain(model, config, c);
    chains[static_cast<std::size_t>(c)] = chain.run();
  };
  if (config.n_chains == 1) {
    run_chain(0);
  } else {
    std::vector<std::thread> workers;
    workers.reserve(static_cast<std::size_t>(config.n_chains));
    for (int c = 0; c < config.n_chains; ++c) workers.emplace_back(run_chain, c);
    for (auto& t : workers) t.join();
  }

  for (const auto& c : chains)
    if (c.init_failed)
      throw EstimationError("sampler initialization failed: non-finite density after 100 retries");

  const int m = config.n_chains * config.n_draws;
  double accept_sum = 0.0;
  long long accept_n = 0;
  for (const auto& c : chains) {
    out.diagnostics.divergences += c.divergences;
    out.diagnostics.max_depth_hits += c.max_depth_hits;
    accept_sum += c.accept_sum;
    accept_n += c.accept_count;
  }
  out.diagnostics.mean_accept = accept_n > 0 ? accept_sum / static_cast<double>(accept_n) : 0.0;

  for (const auto& block : model.blocks) {
    Mat draws(m, block.size);
    for (int c = 0; c < config.n_chains; ++c) {
      auto& src = chains[static_cast<std::size_t>(c)].draws;
      Mat part = src.middleCols(block.offset, block.size);
      if (block.transform == Transform::Log) part = part.array().exp();
      draws.middleRows(c * config.n_draws, config.n_draws) = part;
    }
    double worst = 1.0;
    for (int j = 0; j < block.size; ++j) {
      std::vector<Vec> per_chain;
      per_chain.reserve(static_cast<std::size_t>(config.n_chains));
      for (int c = 0; c < config.n_chains; ++c)
        per_chain.push_back(draws.col(j).segment(c * config.n_draws, config.n_draws));
      const double r = split_rhat(per_chain);
      if (std::isfinite(r)) worst = std::max(worst, r);
    }
    out.diagnostics.split_rhat[block.name] = worst;
    if (worst > 1.05)
      out.diagnostics.warnings.push_back("split R-hat " + std::to_string(worst) +
                                         " above 1.05 for block " + block.name);
    out.blocks.emplace(block.name, std::move(draws));
  }

  const double div_frac =
      static_cast<double>(out.diagnostics.divergences) / static_cast<double>(m);
  if (div_frac > 0.10)
    out.diagnostics.warnings.push_back(
        "divergence fraction " + std::to_string(div_frac) + " above 0.10");
  return out;
}

}  // namespace btmle
