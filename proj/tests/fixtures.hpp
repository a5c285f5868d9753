#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "qnet/meanfield.hpp"
#include "qnet/netmodel.hpp"
#include "qnet/simulate.hpp"

namespace fixtures {

using namespace qnet;

inline NetworkSpec closed_loop(int population) {
    NetworkSpec s;
    s.kind = NetworkKind::CLOSED;
    s.population = population;
    s.stations = {
        {0, Discipline::DELAY, Station::kInfServers, false},
        {1, Discipline::FCFS, 1, false},
    };
    s.classes = {{"jobs", 0}};
    s.routing = {{{0.0, 1.0}, {1.0, 0.0}}};
    return s;
}

// Source -> INF station -> sink; the source direction has constant unit load.
inline NetworkSpec open_tandem() {
    NetworkSpec s;
    s.kind = NetworkKind::OPEN;
    s.stations = {
        {0, Discipline::SOURCE_SINK, Station::kInfServers, false},
        {1, Discipline::INF, Station::kInfServers, false},
    };
    s.classes = {{"jobs", 0}};
    s.routing = {{{0.0, 1.0}, {1.0, 0.0}}};
    return s;
}

// Two classes through a PS station and a priority station (Example-2 style slice).
inline NetworkSpec ps_priority_pair() {
    NetworkSpec s;
    s.kind = NetworkKind::OPEN;
    s.stations = {
        {0, Discipline::SOURCE_SINK, Station::kInfServers, false},
        {1, Discipline::PS, 5, false},
        {2, Discipline::PRIORITY_FCFS, 1, false},
    };
    s.classes = {{"hi", 0}, {"lo", 1}};
    s.routing = {
        {{0.0, 0.5, 0.5}, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}},
        {{0.0, 0.5, 0.5}, {1.0, 0.0, 0.0}, {1.0, 0.0, 0.0}},
    };
    return s;
}

inline ObservationSet no_observations() { return {}; }

// Point-mass marginals along a simulated path plus constant empirical
// intensities n_events / T; the fully-observed pinning used by the conjugacy
// oracle.
inline void pin_to_trajectory(VariationalState& st, const Trajectory& traj) {
    const int nn = st.grid.size();
    for (int k = 0; k < st.ts.size(); ++k) {
        DirectionState& ds = st.dirs[static_cast<size_t>(k)];
        int maxcount = 0;
        {
            int c = 0;
            for (int e : traj.events)
                if (e == k) ++c;
            maxcount = c;
        }
        if (ds.ymax < maxcount) resize_direction(ds, nn, maxcount + 1);
        const double c_emp = static_cast<double>(maxcount) / traj.horizon;
        std::fill(ds.nu.begin(), ds.nu.end(), std::max(c_emp, 1e-12));
        std::fill(ds.logr.begin(), ds.logr.end(), 0.0);
        std::fill(ds.slack.begin(), ds.slack.end(), 0.0);
        std::fill(ds.phi.begin(), ds.phi.end(), 0.0);
        size_t ev = 0;
        int count = 0;
        for (int node = 0; node < nn; ++node) {
            const double t = st.grid.nodes[static_cast<size_t>(node)];
            while (ev < traj.times.size() && traj.times[ev] <= t) {
                if (traj.events[ev] == k) ++count;
                ++ev;
            }
            ds.row(ds.phi, node)[count] = 1.0;
            ds.wlo[static_cast<size_t>(node)] = count;
            ds.whi[static_cast<size_t>(node)] = count;
        }
    }
}

// Grid anchored at every event time with a straddle node just before it, so the
// trapezoid rule resolves piecewise-constant loads to ~1e-9.
inline TimeGrid event_grid(const Trajectory& traj, double straddle = 1e-9) {
    std::vector<double> req;
    for (double t : traj.times) {
        req.push_back(std::max(0.0, t - straddle * traj.horizon));
        req.push_back(t);
    }
    return TimeGrid::build(traj.horizon, req, traj.horizon); // dt = T keeps only anchors
}

} // namespace fixtures
