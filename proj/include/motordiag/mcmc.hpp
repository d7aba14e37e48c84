#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "motordiag/error.hpp"
#include "motordiag/rng.hpp"

namespace motordiag {

// One kept draw from a chain.
struct ChainSample {
  std::vector<double> w;
  double log_density = 0.0;
};

// Pooled output of a multi-chain run. Chains are concatenated in chain
// order after per-chain warmup discard; acceptance is pooled over the
// post-warmup phase.
struct SampleRun {
  std::vector<ChainSample> samples;
  int chains = 1;
  double acceptance_rate = 0.0;
  double adapted_step_size = 0.0;  // from the last chain
  double max_chain_mean_z = 0.0;
  bool chains_consistent = true;
  std::size_t divergences = 0;  // post-warmup trajectories rejected for energy error
  std::uint64_t seed = 0;
};

struct MhConfig {
  std::size_t steps = 60000;  // per chain, warmup included
  std::size_t warmup = 10000;
  std::size_t thin = 1;
  double step_size = 0.5;
  int chains = 4;
  std::uint64_t seed = 0;
};

struct HmcConfig {
  std::size_t draws = 1000;  // kept per chain
  std::size_t warmup = 500;
  int leapfrog_steps = 20;
  double step_size = 0.1;
  int chains = 4;
  std::uint64_t seed = 0;
};

namespace detail {

// Flags chains whose mean in any coordinate sits more than 3 pooled
// standard errors from the overall mean. The standard error of a chain
// mean comes from batch means, which stays honest under the
// autocorrelation every MCMC chain carries.
inline void chain_mean_diagnostic(SampleRun& run, std::size_t dim,
                                  std::size_t per_chain) {
  run.max_chain_mean_z = 0.0;
  run.chains_consistent = true;
  if (run.chains < 2 || per_chain < 8) return;

  const std::size_t chains = static_cast<std::size_t>(run.chains);
  const std::size_t batches = std::min<std::size_t>(20, per_chain / 4);
  const std::size_t batch_len = per_chain / batches;

  std::vector<double> chain_mean(chains);
  for (std::size_t d = 0; d < dim; ++d) {
    double overall = 0.0;
    for (std::size_t c = 0; c < chains; ++c) {
      double m = 0.0;
      for (std::size_t i = 0; i < per_chain; ++i) {
        m += run.samples[c * per_chain + i].w[d];
      }
      chain_mean[c] = m / static_cast<double>(per_chain);
      overall += chain_mean[c];
    }
    overall /= static_cast<double>(chains);

    // pooled within-chain variance of batch means
    double pooled = 0.0;
    for (std::size_t c = 0; c < chains; ++c) {
      for (std::size_t b = 0; b < batches; ++b) {
        double m = 0.0;
        for (std::size_t i = 0; i < batch_len; ++i) {
          m += run.samples[c * per_chain + b * batch_len + i].w[d];
        }
        m /= static_cast<double>(batch_len);
        const double dev = m - chain_mean[c];
        pooled += dev * dev;
      }
    }
    pooled /= static_cast<double>(chains * batches - chains);
    const double se = std::sqrt(pooled / static_cast<double>(batches));
    if (se == 0.0) continue;

    for (std::size_t c = 0; c < chains; ++c) {
      const double z = std::abs(chain_mean[c] - overall) / se;
      run.max_chain_mean_z = std::max(run.max_chain_mean_z, z);
    }
  }
  run.chains_consistent = run.max_chain_mean_z <= 3.0;
}

}  // namespace detail

// Random-walk Metropolis with isotropic Gaussian proposals. The proposal
// scale is adapted during warmup toward an acceptance rate in [0.2, 0.5]
// and frozen afterwards.
//
// log_pdf: double(std::span<const double>)
// init:    std::vector<double>(Rng&) drawing a start point per chain
template <class LogPdf, class Init>
SampleRun sample_mh(std::size_t dim, LogPdf&& log_pdf, Init&& init, const MhConfig& cfg) {
  if (cfg.steps <= cfg.warmup) {
    throw std::invalid_argument("steps must exceed warmup");
  }
  if (cfg.thin == 0 || cfg.chains < 1 || cfg.step_size <= 0.0) {
    throw std::invalid_argument("bad Metropolis configuration");
  }

  SampleRun run;
  run.chains = cfg.chains;
  run.seed = cfg.seed;
  const std::size_t post = cfg.steps - cfg.warmup;
  const std::size_t kept_per_chain = post / cfg.thin;
  run.samples.reserve(kept_per_chain * static_cast<std::size_t>(cfg.chains));

  std::size_t accepted_post = 0;
  std::size_t proposals_post = 0;

  for (int chain = 0; chain < cfg.chains; ++chain) {
    Rng rng(derive_seed(cfg.seed, 0x4d48ULL, static_cast<std::uint64_t>(chain)));
    std::vector<double> w = init(rng);
    if (w.size() != dim) throw DimensionMismatch("init point has wrong dimension");
    double lp = log_pdf(std::span<const double>(w));
    if (!std::isfinite(lp)) {
      throw NonFiniteLogJoint("log density not finite at the initial point");
    }

    double step = cfg.step_size;
    std::vector<double> proposal(dim);
    std::size_t window_accepts = 0;
    std::size_t window_size = 0;
    constexpr std::size_t kAdaptWindow = 50;

    std::size_t taken_post = 0;
    for (std::size_t it = 0; it < cfg.steps; ++it) {
      for (std::size_t d = 0; d < dim; ++d) proposal[d] = w[d] + step * rng.normal();
      const double lp_new = log_pdf(std::span<const double>(proposal));
      bool accept = false;
      if (std::isfinite(lp_new)) {
        const double log_ratio = lp_new - lp;
        accept = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
      }
      if (accept) {
        w.swap(proposal);
        lp = lp_new;
      }

      const bool in_warmup = it < cfg.warmup;
      if (in_warmup) {
        window_accepts += accept ? 1 : 0;
        if (++window_size == kAdaptWindow) {
          const double rate = static_cast<double>(window_accepts) / kAdaptWindow;
          if (rate < 0.2) step *= 0.8;
          if (rate > 0.5) step *= 1.25;
          window_accepts = 0;
          window_size = 0;
        }
      } else {
        ++proposals_post;
        accepted_post += accept ? 1 : 0;
        ++taken_post;
        if (taken_post % cfg.thin == 0) {
          run.samples.push_back({w, lp});
        }
      }
    }
    run.adapted_step_size = step;
  }

  run.acceptance_rate =
      proposals_post == 0 ? 0.0
                          : static_cast<double>(accepted_post) / static_cast<double>(proposals_post);
  detail::chain_mean_diagnostic(run, dim, kept_per_chain);
  return run;
}

// One leapfrog trajectory; returns false when the position or gradient
// became non-finite along the way.
template <class LogPdfGrad>
bool leapfrog(LogPdfGrad&& log_pdf_grad, std::vector<double>& q, std::vector<double>& p,
              double step, int n_steps, std::vector<double>& grad_buf, double& lp_out) {
  const std::size_t dim = q.size();
  lp_out = log_pdf_grad(std::span<const double>(q), std::span<double>(grad_buf));
  if (!std::isfinite(lp_out)) return false;

  for (int s = 0; s < n_steps; ++s) {
    for (std::size_t d = 0; d < dim; ++d) p[d] += 0.5 * step * grad_buf[d];
    for (std::size_t d = 0; d < dim; ++d) q[d] += step * p[d];
    lp_out = log_pdf_grad(std::span<const double>(q), std::span<double>(grad_buf));
    if (!std::isfinite(lp_out)) return false;
    for (std::size_t d = 0; d < dim; ++d) p[d] += 0.5 * step * grad_buf[d];
  }
  return true;
}

// Hamiltonian Monte Carlo with unit mass matrix and a fixed number of
// leapfrog steps. Step size adapts during warmup toward acceptance in
// [0.6, 0.9]. A trajectory whose energy error exceeds 1000 is rejected;
// during warmup it also halves the step size. Persistent post-warmup
// divergence (more than 5% of kept iterations) throws DivergentTrajectory,
// the signal that the frozen step size is too large.
template <class LogPdfGrad, class Init>
SampleRun sample_hmc(std::size_t dim, LogPdfGrad&& log_pdf_grad, Init&& init,
                     const HmcConfig& cfg) {
  if (cfg.draws == 0) throw std::invalid_argument("draws must be positive");
  if (cfg.chains < 1 || cfg.leapfrog_steps < 1 || cfg.step_size <= 0.0) {
    throw std::invalid_argument("bad HMC configuration");
  }
  constexpr double kDivergenceEnergy = 1000.0;

  SampleRun run;
  run.chains = cfg.chains;
  run.seed = cfg.seed;
  run.samples.reserve(cfg.draws * static_cast<std::size_t>(cfg.chains));

  std::size_t accepted_post = 0;
  std::size_t proposals_post = 0;

  for (int chain = 0; chain < cfg.chains; ++chain) {
    Rng rng(derive_seed(cfg.seed, 0x484dULL, static_cast<std::uint64_t>(chain)));
    std::vector<double> q = init(rng);
    if (q.size() != dim) throw DimensionMismatch("init point has wrong dimension");

    std::vector<double> grad_buf(dim);
    double lp = log_pdf_grad(std::span<const double>(q), std::span<double>(grad_buf));
    if (!std::isfinite(lp)) {
      throw NonFiniteLogJoint("log density not finite at the initial point");
    }

    double step = cfg.step_size;
    std::vector<double> p(dim), q_new(dim);
    std::size_t window_accepts = 0;
    std::size_t window_size = 0;
    constexpr std::size_t kAdaptWindow = 25;

    const std::size_t total = cfg.warmup + cfg.draws;
    for (std::size_t it = 0; it < total; ++it) {
      for (std::size_t d = 0; d < dim; ++d) p[d] = rng.normal();
      double kinetic = 0.0;
      for (double pd : p) kinetic += pd * pd;
      const double h_old = -lp + 0.5 * kinetic;

      q_new = q;
      std::vector<double> p_new = p;
      double lp_new = 0.0;
      const bool finite =
          leapfrog(log_pdf_grad, q_new, p_new, step, cfg.leapfrog_steps, grad_buf, lp_new);

      double energy_error = kDivergenceEnergy + 1.0;
      double h_new = 0.0;
      if (finite) {
        double kinetic_new = 0.0;
        for (double pd : p_new) kinetic_new += pd * pd;
        h_new = -lp_new + 0.5 * kinetic_new;
        energy_error = std::abs(h_new - h_old);
      }

      const bool in_warmup = it < cfg.warmup;
      bool accept = false;
      if (energy_error > kDivergenceEnergy || !std::isfinite(h_new)) {
        if (in_warmup) {
          step *= 0.5;
        } else {
          ++run.divergences;
        }
      } else {
        const double log_ratio = h_old - h_new;
        accept = log_ratio >= 0.0 || std::log(rng.uniform()) < log_ratio;
      }
      if (accept) {
        q = q_new;
        lp = lp_new;
      }

      if (in_warmup) {
        window_accepts += accept ? 1 : 0;
        if (++window_size == kAdaptWindow) {
          const double rate = static_cast<double>(window_accepts) / kAdaptWindow;
          if (rate < 0.6) step *= 0.7;
          if (rate > 0.9) step *= 1.3;
          window_accepts = 0;
          window_size = 0;
        }
      } else {
        ++proposals_post;
        accepted_post += accept ? 1 : 0;
        run.samples.push_back({q, lp});
      }
    }
    run.adapted_step_size = step;
  }

  run.acceptance_rate =
      proposals_post == 0 ? 0.0
                          : static_cast<double>(accepted_post) / static_cast<double>(proposals_post);
  const auto kept = cfg.draws * static_cast<std::size_t>(cfg.chains);
  if (run.divergences * 20 > kept) {
    throw DivergentTrajectory(
        std::to_string(run.divergences) + " of " + std::to_string(kept) +
        " trajectories exceeded energy error 1000; reduce step_size");
  }
  detail::chain_mean_diagnostic(run, dim, cfg.draws);
  return run;
}

}  // namespace motordiag
