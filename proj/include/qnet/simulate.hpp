#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "qnet/mathutil.hpp"
#include "qnet/netmodel.hpp"

namespace qnet {

struct SimulationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Piecewise-constant jump path of the counting process over [0, horizon].
// The state starts at zero counts; event k increments direction events[k].
struct Trajectory {
    double horizon = 0.0;
    std::vector<double> times;   // strictly increasing, in (0, horizon]
    std::vector<int> events;     // direction index per jump

    size_t num_events() const { return events.size(); }

    // Counts immediately after the last jump at or before t (right-continuous).
    CountVector counts_at(double t, int num_dirs) const {
        CountVector y(static_cast<size_t>(num_dirs), 0);
        for (size_t i = 0; i < times.size() && times[i] <= t; ++i)
            y[static_cast<size_t>(events[i])] += 1;
        return y;
    }
};

enum class ObservationKind { REGULARIZED_COUNT, EXACT_SNAPSHOT };

// Per-node noisy count with error rate epsilon on support {0,..,support}.
// EXACT_SNAPSHOT is the epsilon -> 0 case of the same family.
struct ObservationModel {
    ObservationKind kind = ObservationKind::REGULARIZED_COUNT;
    double epsilon = 1e-3;
    int support = 0; // N for closed systems, a configured cap for open ones

    double log_pmf(int obs, int truth) const {
        const double ns = static_cast<double>(support);
        const double base = epsilon / ns;
        const double on_truth = (obs == truth) ? 1.0 - (ns + 1.0) * epsilon / ns : 0.0;
        return std::log(base + on_truth);
    }
};

struct ObservationSet {
    std::vector<double> times;                      // t_1 < ... < t_K
    std::vector<std::pair<int, int>> monitored;     // (station, class); station 0 = delay reading
    std::vector<std::vector<int>> values;           // [k][monitor index]
    ObservationModel model;

    int num_times() const { return static_cast<int>(times.size()); }
    int num_monitored() const { return static_cast<int>(monitored.size()); }
};

namespace detail {

inline void apply_event(QueueVector& q, const Direction& d, const NetworkSpec& spec) {
    if (d.dest > 0) q.at(d.dest, d.cls) += 1;
    else if (spec.kind == NetworkKind::CLOSED) q.delay[static_cast<size_t>(d.cls)] += 1;
    if (d.origin > 0) q.at(d.origin, d.cls) -= 1;
    else if (spec.kind == NetworkKind::CLOSED) q.delay[static_cast<size_t>(d.cls)] -= 1;
}

// True count observed at a monitored node: queue length, or delay occupancy at node 0.
inline int monitored_truth(const QueueVector& q, int station, int cls) {
    return station == 0 ? q.delay[static_cast<size_t>(cls)] : q.at(station, cls);
}

} // namespace detail

// Statistically exact sample of the counting process under the generator Xi.
inline Trajectory gillespie_sample(const NetworkSpec& spec, const TransitionSet& ts,
                                   const RateVector& lambda, double horizon, double delta,
                                   std::uint64_t seed, std::uint64_t max_events = 10'000'000) {
    if (!(horizon > 0.0)) throw SimulationError("horizon must be positive");
    RandomStream rng(seed);
    Trajectory traj;
    traj.horizon = horizon;
    CountVector y(static_cast<size_t>(ts.size()), 0);
    QueueVector q = counts_to_queue_lengths(y, spec, ts);
    std::vector<double> rates(static_cast<size_t>(ts.size()), 0.0);
    double t = 0.0;
    while (true) {
        double total = 0.0;
        for (int k = 0; k < ts.size(); ++k) {
            rates[static_cast<size_t>(k)] = generator_rate(q, k, lambda, delta, spec, ts);
            total += rates[static_cast<size_t>(k)];
        }
        if (total <= 0.0) break; // absorbed (possible only with delta = 0)
        t += rng.exponential(total);
        if (t > horizon) break;
        double u = rng.uniform() * total;
        int pick = ts.size() - 1;
        for (int k = 0; k < ts.size(); ++k) {
            u -= rates[static_cast<size_t>(k)];
            if (u <= 0.0) { pick = k; break; }
        }
        traj.times.push_back(t);
        traj.events.push_back(pick);
        detail::apply_event(q, ts[pick], spec);
        if (traj.num_events() > max_events)
            throw SimulationError("gillespie_sample: event count exceeded " + std::to_string(max_events)
                                  + " before t=" + std::to_string(t) + "; rates likely explosive");
    }
    return traj;
}

// Log of the path density (Eq. of the jump-process likelihood) under the
// counting-process generator; the empty initial state has unit mass.
inline double path_log_density(const Trajectory& traj, const RateVector& lambda, double delta,
                               const NetworkSpec& spec, const TransitionSet& ts) {
    CountVector y(static_cast<size_t>(ts.size()), 0);
    QueueVector q = counts_to_queue_lengths(y, spec, ts);
    double logp = 0.0, prev = 0.0;
    for (size_t i = 0; i < traj.times.size(); ++i) {
        double total = 0.0;
        for (int k = 0; k < ts.size(); ++k) total += generator_rate(q, k, lambda, delta, spec, ts);
        const int ev = traj.events[i];
        const double jump_rate = generator_rate(q, ev, lambda, delta, spec, ts);
        if (jump_rate <= 0.0) return kNegInf;
        logp += std::log(jump_rate) - total * (traj.times[i] - prev);
        prev = traj.times[i];
        detail::apply_event(q, ts[ev], spec);
    }
    double total = 0.0;
    for (int k = 0; k < ts.size(); ++k) total += generator_rate(q, k, lambda, delta, spec, ts);
    logp -= total * (traj.horizon - prev);
    return logp;
}

// Independent noisy counts at the monitoring times; one draw per monitored node.
inline ObservationSet sample_observations(const Trajectory& traj, const std::vector<double>& times,
                                          const std::vector<std::pair<int, int>>& monitored,
                                          const ObservationModel& model, const NetworkSpec& spec,
                                          const TransitionSet& ts, std::uint64_t seed) {
    for (double t : times)
        if (t > traj.horizon + 1e-12 || t < 0.0)
            throw SimulationError("observation time outside the simulated horizon");
    if (model.epsilon < 0.0 || model.epsilon >= 1.0) throw SimulationError("epsilon must lie in [0,1)");
    if (model.support < 1) throw SimulationError("observation support must be positive");

    RandomStream rng(seed);
    ObservationSet obs;
    obs.times = times;
    obs.monitored = monitored;
    obs.model = model;
    obs.values.resize(times.size());

    size_t ev = 0;
    CountVector y(static_cast<size_t>(ts.size()), 0);
    QueueVector q = counts_to_queue_lengths(y, spec, ts);
    for (size_t k = 0; k < times.size(); ++k) {
        while (ev < traj.times.size() && traj.times[ev] <= times[k]) {
            detail::apply_event(q, ts[traj.events[ev]], spec);
            ++ev;
        }
        obs.values[k].reserve(monitored.size());
        for (const auto& [station, cls] : monitored) {
            const int truth = detail::monitored_truth(q, station, cls);
            int o;
            if (rng.uniform() < 1.0 - model.epsilon && truth >= 0 && truth <= model.support) {
                o = truth;
            } else {
                // uniform over the support minus the true value
                o = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(model.support) + 1));
                if (truth >= 0 && truth <= model.support) {
                    o = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(model.support)));
                    if (o >= truth) ++o;
                }
            }
            obs.values[k].push_back(o);
        }
    }
    return obs;
}

// Sum of log f(o | x) over the monitored nodes for one observation row.
inline double log_obs_likelihood(const QueueVector& q, const std::vector<int>& row,
                                 const std::vector<std::pair<int, int>>& monitored,
                                 const ObservationModel& model) {
    double s = 0.0;
    for (size_t m = 0; m < monitored.size(); ++m)
        s += model.log_pmf(row[m], detail::monitored_truth(q, monitored[m].first, monitored[m].second));
    return s;
}

} // namespace qnet
