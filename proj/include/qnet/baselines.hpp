#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qnet/mathutil.hpp"
#include "qnet/meanfield.hpp"
#include "qnet/netmodel.hpp"
#include "qnet/simulate.hpp"

namespace qnet {

// Stationary law of the single-station closed loop: pi(x) ~ (mu0/lambda)^x / (N-x)!
inline std::vector<double> stationary_distribution(double lambda, double mu0, int population) {
    if (!(lambda > 0.0 && mu0 > 0.0)) throw std::domain_error("stationary_distribution: rates must be positive");
    std::vector<double> logw(static_cast<size_t>(population) + 1);
    const double lr = std::log(mu0) - std::log(lambda);
    for (int x = 0; x <= population; ++x)
        logw[static_cast<size_t>(x)] = lr * x - std::lgamma(static_cast<double>(population - x) + 1.0);
    const double lz = log_sum_exp(logw);
    std::vector<double> pi(logw.size());
    for (size_t x = 0; x < logw.size(); ++x) pi[x] = std::exp(logw[x] - lz);
    return pi;
}

// Log of the stationarity-approximated observation likelihood: per observation,
// mix the joint node likelihood over the stationary queue length.
inline double stationary_log_likelihood(double lambda, const ObservationSet& obs, double mu0,
                                        int population) {
    if (obs.times.empty()) return 0.0;
    const std::vector<double> pi = stationary_distribution(lambda, mu0, population);
    std::vector<double> terms(static_cast<size_t>(population) + 1);
    double total = 0.0;
    for (int k = 0; k < obs.num_times(); ++k) {
        for (int x = 0; x <= population; ++x) {
            double lf = std::log(pi[static_cast<size_t>(x)]);
            for (size_t m = 0; m < obs.monitored.size(); ++m) {
                const auto [station, cls] = obs.monitored[m];
                const int truth = station == 0 ? population - x : x;
                lf += obs.model.log_pmf(obs.values[static_cast<size_t>(k)][m], truth);
            }
            terms[static_cast<size_t>(x)] = lf;
        }
        total += log_sum_exp(terms);
    }
    return total;
}

struct MCMCConfig {
    int n_samples = 100000;
    int burn_in = 10000;
    double proposal_scale = 0.3; // log-normal random-walk sd
    std::uint64_t seed = 1;
    bool auto_tune = true;       // short pilot aiming at ~0.3 acceptance

    void validate() const {
        if (burn_in < 0 || n_samples <= burn_in) throw std::invalid_argument("need n_samples > burn_in >= 0");
        if (!(proposal_scale > 0.0)) throw std::invalid_argument("proposal scale must be positive");
    }
};

struct MCMCResult {
    std::vector<double> samples; // post burn-in
    double acceptance_rate = 0.0;
    double proposal_scale = 0.0;
    std::vector<std::string> warnings;
};

namespace detail {

inline double mh_chain(const std::function<double(double)>& log_target, double scale, int n, int burn,
                       RandomStream& rng, std::vector<double>* keep, double init) {
    double cur = init, cur_lp = log_target(cur);
    int accepted = 0;
    for (int i = 0; i < n; ++i) {
        const double prop = cur * std::exp(scale * rng.normal());
        const double prop_lp = log_target(prop);
        // multiplicative proposal: Hastings correction log(prop/cur)
        const double loga = prop_lp - cur_lp + std::log(prop) - std::log(cur);
        if (std::log(std::max(rng.uniform(), 1e-300)) < loga) {
            cur = prop;
            cur_lp = prop_lp;
            ++accepted;
        }
        if (keep && i >= burn) keep->push_back(cur);
    }
    return static_cast<double>(accepted) / n;
}

} // namespace detail

// Log-normal random-walk Metropolis-Hastings on lambda, targeting
// prior(lambda) * stationary likelihood.
inline MCMCResult metropolis_hastings(const RatePosterior& prior, const ObservationSet& obs,
                                      double mu0, int population, const MCMCConfig& cfg) {
    cfg.validate();
    if (prior.fixed) throw std::invalid_argument("metropolis_hastings: prior must be a Gamma density");
    auto log_target = [&](double lam) {
        if (!(lam > 0.0)) return kNegInf;
        const double lp = (prior.prior_shape - 1.0) * std::log(lam) - prior.prior_rate * lam;
        return lp + stationary_log_likelihood(lam, obs, mu0, population);
    };

    RandomStream rng(cfg.seed);
    MCMCResult res;
    res.proposal_scale = cfg.proposal_scale;
    const double init = prior.prior_shape / prior.prior_rate;
    if (cfg.auto_tune) {
        // short pilot: multiplicative scale adjustment toward ~0.3 acceptance
        double scale = cfg.proposal_scale;
        for (int round = 0; round < 8; ++round) {
            const double acc = detail::mh_chain(log_target, scale, 400, 0, rng, nullptr, init);
            if (acc > 0.35) scale *= 1.6;
            else if (acc < 0.25) scale /= 1.6;
            else break;
        }
        res.proposal_scale = scale;
    }
    res.samples.reserve(static_cast<size_t>(cfg.n_samples - cfg.burn_in));
    res.acceptance_rate =
        detail::mh_chain(log_target, res.proposal_scale, cfg.n_samples, cfg.burn_in, rng, &res.samples, init);
    if (res.acceptance_rate < 0.05 || res.acceptance_rate > 0.8)
        res.warnings.push_back("acceptance rate " + std::to_string(res.acceptance_rate)
                               + " outside [0.05, 0.8]");
    return res;
}

// Dense matrix utilities for the small-chain oracle.
namespace detail {

using Matrix = std::vector<std::vector<double>>;

inline Matrix mat_mul(const Matrix& a, const Matrix& b) {
    const size_t n = a.size();
    Matrix c(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i)
        for (size_t k = 0; k < n; ++k) {
            const double aik = a[i][k];
            if (aik == 0.0) continue;
            for (size_t j = 0; j < n; ++j) c[i][j] += aik * b[k][j];
        }
    return c;
}

// exp(A) by scaling and squaring with a Taylor series on the scaled matrix.
inline Matrix mat_exp(Matrix a) {
    const size_t n = a.size();
    double norm = 0.0;
    for (const auto& row : a) {
        double s = 0.0;
        for (double v : row) s += std::fabs(v);
        norm = std::max(norm, s);
    }
    int squarings = 0;
    while (norm > 0.5) {
        norm *= 0.5;
        ++squarings;
    }
    const double scale = std::ldexp(1.0, -squarings);
    for (auto& row : a)
        for (double& v : row) v *= scale;
    Matrix result(n, std::vector<double>(n, 0.0));
    for (size_t i = 0; i < n; ++i) result[i][i] = 1.0;
    Matrix term = result;
    for (int k = 1; k <= 24; ++k) {
        term = mat_mul(term, a);
        double tnorm = 0.0;
        for (auto& row : term)
            for (double& v : row) v /= k;
        for (size_t i = 0; i < n; ++i)
            for (size_t j = 0; j < n; ++j) {
                result[i][j] += term[i][j];
                tnorm = std::max(tnorm, std::fabs(term[i][j]));
            }
        if (tnorm < 1e-18) break;
    }
    for (int s = 0; s < squarings; ++s) result = mat_mul(result, result);
    return result;
}

// Closed-loop generator over {0..N} job counts in the service station.
inline Matrix closed_loop_generator(double lambda, double mu0, int population) {
    const size_t n = static_cast<size_t>(population) + 1;
    Matrix q(n, std::vector<double>(n, 0.0));
    for (int x = 0; x <= population; ++x) {
        const double up = mu0 * static_cast<double>(population - x); // delay departures
        const double down = x >= 1 ? lambda : 0.0;
        if (x < population) q[static_cast<size_t>(x)][static_cast<size_t>(x) + 1] = up;
        if (x >= 1) q[static_cast<size_t>(x)][static_cast<size_t>(x) - 1] = down;
        q[static_cast<size_t>(x)][static_cast<size_t>(x)] = -(up + down);
    }
    return q;
}

} // namespace detail

// Exact (transient, matrix-exponential) observation log-likelihood for the
// closed loop at a fixed lambda; forward pass over observation intervals.
inline double transient_log_likelihood(double lambda, const ObservationSet& obs, double mu0,
                                       int population) {
    const size_t n = static_cast<size_t>(population) + 1;
    const detail::Matrix q = detail::closed_loop_generator(lambda, mu0, population);
    std::vector<double> rho(n, 0.0);
    rho[0] = 1.0; // empty start
    double loglik = 0.0, prev_t = 0.0;
    for (int k = 0; k < obs.num_times(); ++k) {
        const double dt = obs.times[static_cast<size_t>(k)] - prev_t;
        prev_t = obs.times[static_cast<size_t>(k)];
        if (dt > 0.0) {
            detail::Matrix qt = q;
            for (auto& row : qt)
                for (double& v : row) v *= dt;
            const detail::Matrix p = detail::mat_exp(qt);
            std::vector<double> next(n, 0.0);
            for (size_t i = 0; i < n; ++i)
                for (size_t j = 0; j < n; ++j) next[j] += rho[i] * p[i][j];
            rho = std::move(next);
        }
        double step = 0.0;
        for (size_t x = 0; x < n; ++x) {
            double lf = 0.0;
            for (size_t m = 0; m < obs.monitored.size(); ++m) {
                const auto [station, cls] = obs.monitored[m];
                const int truth = station == 0 ? population - static_cast<int>(x) : static_cast<int>(x);
                lf += obs.model.log_pmf(obs.values[static_cast<size_t>(k)][m], truth);
            }
            rho[x] *= std::exp(lf);
            step += rho[x];
        }
        if (!(step > 0.0)) return kNegInf;
        loglik += std::log(step);
        for (double& v : rho) v /= step;
    }
    return loglik;
}

struct GridPosterior {
    std::vector<double> lambda_grid;
    std::vector<double> density; // normalized w.r.t. the grid (trapezoid)

    double mean() const {
        std::vector<double> f(lambda_grid.size());
        for (size_t i = 0; i < f.size(); ++i) f[i] = lambda_grid[i] * density[i];
        return trapezoid(lambda_grid, f);
    }

    // smallest x with CDF >= p (piecewise-linear in the trapezoid sense)
    double quantile(double p) const {
        double acc = 0.0;
        for (size_t i = 1; i < lambda_grid.size(); ++i) {
            const double seg = 0.5 * (density[i] + density[i - 1]) * (lambda_grid[i] - lambda_grid[i - 1]);
            if (acc + seg >= p) {
                const double frac = seg > 0.0 ? (p - acc) / seg : 0.0;
                return lambda_grid[i - 1] + frac * (lambda_grid[i] - lambda_grid[i - 1]);
            }
            acc += seg;
        }
        return lambda_grid.back();
    }
};

// Gold oracle on tiny closed loops: exact transient likelihood on a lambda grid
// against the Gamma prior, normalized on the grid.
inline GridPosterior exact_transient_posterior(const RatePosterior& prior, const ObservationSet& obs,
                                               double mu0, int population, int grid_points = 400) {
    if (population + 1 > 20) throw std::invalid_argument("exact_transient_posterior: state space above cap (20)");
    GridPosterior gp;
    const double lo = gamma_quantile(prior.prior_shape, prior.prior_rate, 0.001);
    const double hi = gamma_quantile(prior.prior_shape, prior.prior_rate, 0.999);
    gp.lambda_grid.resize(static_cast<size_t>(grid_points));
    for (int i = 0; i < grid_points; ++i)
        gp.lambda_grid[static_cast<size_t>(i)] = lo + (hi - lo) * i / (grid_points - 1);
    std::vector<double> logpost(gp.lambda_grid.size());
    for (size_t i = 0; i < gp.lambda_grid.size(); ++i) {
        const double lam = gp.lambda_grid[i];
        logpost[i] = (prior.prior_shape - 1.0) * std::log(lam) - prior.prior_rate * lam
            + transient_log_likelihood(lam, obs, mu0, population);
    }
    const double mx = *std::max_element(logpost.begin(), logpost.end());
    gp.density.resize(logpost.size());
    for (size_t i = 0; i < logpost.size(); ++i) gp.density[i] = std::exp(logpost[i] - mx);
    const double z = trapezoid(gp.lambda_grid, gp.density);
    for (double& d : gp.density) d /= z;
    return gp;
}

// Conjugate posterior of a fully observed path: Gamma(alpha + n_eta, beta + int load dt),
// integrated exactly over the piecewise-constant trajectory.
inline std::vector<RatePosterior> fully_observed_posterior(const Trajectory& traj,
                                                           const std::vector<RatePosterior>& priors,
                                                           const NetworkSpec& spec,
                                                           const TransitionSet& ts) {
    std::vector<RatePosterior> post = priors;
    std::vector<int> events(static_cast<size_t>(ts.size()), 0);
    std::vector<double> load_int(static_cast<size_t>(ts.size()), 0.0);
    CountVector y(static_cast<size_t>(ts.size()), 0);
    QueueVector q = counts_to_queue_lengths(y, spec, ts);
    double prev = 0.0;
    auto accumulate = [&](double until) {
        const double dt = until - prev;
        for (int k = 0; k < ts.size(); ++k)
            load_int[static_cast<size_t>(k)] +=
                dt * std::max(station_load(q, ts[k].origin, ts[k].cls, spec), 0.0);
        prev = until;
    };
    for (size_t i = 0; i < traj.times.size(); ++i) {
        accumulate(traj.times[i]);
        events[static_cast<size_t>(traj.events[i])] += 1;
        detail::apply_event(q, ts[traj.events[i]], spec);
    }
    accumulate(traj.horizon);
    for (int k = 0; k < ts.size(); ++k) {
        RatePosterior& rp = post[static_cast<size_t>(k)];
        if (rp.fixed) continue;
        rp.shape = rp.prior_shape + events[static_cast<size_t>(k)];
        rp.rate = rp.prior_rate + load_int[static_cast<size_t>(k)];
    }
    return post;
}

} // namespace qnet
