#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qnet/mathutil.hpp"
#include "qnet/netmodel.hpp"
#include "qnet/simulate.hpp"

namespace qnet {

struct EngineError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Discretization of [0, horizon]; required times (observations) are grid nodes
// exactly, and spacing is uniform between consecutive required nodes.
struct TimeGrid {
    double horizon = 0.0;
    std::vector<double> nodes;

    int size() const { return static_cast<int>(nodes.size()); }

    static TimeGrid build(double horizon, std::vector<double> required, double dt_target) {
        if (!(horizon > 0.0)) throw EngineError("grid horizon must be positive");
        if (!(dt_target > 0.0)) dt_target = horizon / 2000.0;
        required.push_back(0.0);
        required.push_back(horizon);
        std::sort(required.begin(), required.end());
        std::vector<double> anchors;
        for (double t : required) {
            if (t < -1e-12 || t > horizon + 1e-12) throw EngineError("required grid node outside [0,T]");
            t = std::clamp(t, 0.0, horizon);
            if (anchors.empty() || t - anchors.back() > 1e-12 * horizon) anchors.push_back(t);
        }
        TimeGrid g;
        g.horizon = horizon;
        g.nodes.push_back(anchors.front());
        for (size_t a = 1; a < anchors.size(); ++a) {
            const double span = anchors[a] - anchors[a - 1];
            const int steps = std::max(1, static_cast<int>(std::ceil(span / dt_target - 1e-9)));
            for (int s = 1; s <= steps; ++s)
                g.nodes.push_back(anchors[a - 1] + span * static_cast<double>(s) / steps);
            g.nodes.back() = anchors[a];
        }
        return g;
    }

    int index_of(double t) const {
        const auto it = std::lower_bound(nodes.begin(), nodes.end(), t - 1e-9 * std::max(1.0, horizon));
        if (it == nodes.end() || std::fabs(*it - t) > 1e-9 * std::max(1.0, horizon))
            throw EngineError("time " + std::to_string(t) + " is not a grid node");
        return static_cast<int>(it - nodes.begin());
    }
};

// Gamma (or degenerate fixed) marginal for one transition rate.
struct RatePosterior {
    bool fixed = false;
    double value = 0.0;        // fixed rate
    double shape = 1.0, rate = 1.0;
    double prior_shape = 1.0, prior_rate = 1.0;

    static RatePosterior fixed_rate(double v) {
        RatePosterior p;
        p.fixed = true;
        p.value = v;
        return p;
    }
    static RatePosterior gamma_prior(double a, double b) {
        RatePosterior p;
        p.shape = a;
        p.rate = b;
        p.prior_shape = a;
        p.prior_rate = b;
        return p;
    }

    double mean() const { return fixed ? value : shape / rate; }
    double mean_log() const { return fixed ? std::log(value) : digamma(shape) - std::log(rate); }
    double sd() const { return fixed ? 0.0 : gamma_sd(shape, rate); }
};

struct EngineConfig {
    double delta = 1e-6;
    double nu_bar = 50.0;            // may be +infinity (no cap)
    double dt = 0.0;                 // 0 -> horizon / 2000
    double tol = 1e-6;
    int max_iters = 100;
    int ymax_hard_cap = 512;
    double mass_tol = 1e-6;
    int threads = 0;                 // 0 -> QNET_THREADS env or hardware
    bool check_invariants = true;
};

// Per-direction fields on the grid, stored row-major by node with stride ymax+1.
struct DirectionState {
    int ymax = 0;
    std::vector<double> phi;     // marginal count probabilities
    std::vector<double> nu;      // jump intensities, in (0, nu_bar]
    std::vector<double> logr;    // log r, re-centered per node (max 0)
    std::vector<double> slack;   // kappa / phi ratio; kappa = phi * slack
    std::vector<int> wlo, whi;   // per-node support window of phi

    int stride() const { return ymax + 1; }
    double* row(std::vector<double>& v, int node) { return v.data() + static_cast<size_t>(node) * stride(); }
    const double* row(const std::vector<double>& v, int node) const {
        return v.data() + static_cast<size_t>(node) * stride();
    }
    ProbWindow window(int node) const {
        const double* p = row(phi, node);
        ProbWindow w;
        w.offset = wlo[static_cast<size_t>(node)];
        w.mass.assign(p + w.offset, p + whi[static_cast<size_t>(node)] + 1);
        return w;
    }
    double kappa(int node, int y) const {
        return row(phi, node)[y] * row(slack, node)[y];
    }
};

struct VariationalState {
    NetworkSpec spec;
    TransitionSet ts;
    TimeGrid grid;
    ObservationSet obs;
    std::vector<int> obs_nodes;          // grid index per observation time
    std::vector<DirectionState> dirs;
    std::vector<RatePosterior> post;     // per direction
    EngineConfig cfg;
    std::vector<std::string> warnings;
};

// E[Xi | Y^eta = y] and E[log Xi | Y^eta = y] at every (node, y), plus the
// unconditional expected load per node (shared across directions with the same
// origin station and class).
struct Coefficients {
    std::vector<std::vector<double>> a;       // [dir] node-major, E[Xi | y]
    std::vector<std::vector<double>> b;       // [dir] node-major, E[log Xi | y]
    std::vector<std::vector<double>> load;    // [dir] per node, E[load v 0]
};

namespace detail {

inline int engine_threads(const EngineConfig& cfg) {
    if (cfg.threads > 0) return cfg.threads;
    if (const char* env = std::getenv("QNET_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

template <typename Fn>
inline void parallel_for(int n, int threads, Fn&& fn) {
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    std::vector<std::exception_ptr> errs(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errs[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

// Signed sum of count marginals touching (station, cls) at a node, skipping one
// direction (the pinned one); skip = -1 keeps everything. For the closed delay
// node the population offset is added by the caller.
inline ProbWindow signed_sum(const VariationalState& st, int station, int cls, int node, int skip) {
    ProbWindow acc = ProbWindow::point(0);
    for (int k : st.ts.into[station][cls])
        if (k != skip) acc = convolve(acc, st.dirs[static_cast<size_t>(k)].window(node));
    for (int k : st.ts.out_of[station][cls])
        if (k != skip) acc = convolve(acc, st.dirs[static_cast<size_t>(k)].window(node).negated());
    return acc;
}

// Distribution of x_{station,cls} (or node-0 occupancy) at a node under the
// current product law.
inline ProbWindow queue_dist(const VariationalState& st, int station, int cls, int node) {
    ProbWindow w = signed_sum(st, station, cls, node, -1);
    if (station == 0 && st.spec.kind == NetworkKind::CLOSED) w.offset += st.spec.population;
    return w;
}

// Conditional-load summaries as functions of the origin queue value v:
//   mean(v)  = E[u | x = v],      u = load v 0
//   pzero(v) = P(u = 0 | x = v)
//   elog(v)  = E[log u ; u > 0 | x = v]
// Expectations are over the other classes at the station, which are independent
// of the pinned direction.
struct LoadTable {
    int vlo = 0;
    std::vector<double> mean_, pzero_, elog_;

    double mean(int v) const { return mean_[static_cast<size_t>(v - vlo)]; }
    double pzero(int v) const { return pzero_[static_cast<size_t>(v - vlo)]; }
    double elog(int v) const { return elog_[static_cast<size_t>(v - vlo)]; }
};

inline LoadTable build_load_table(const VariationalState& st, int station, int cls, int node,
                                  int vlo, int vhi) {
    LoadTable lt;
    lt.vlo = vlo;
    const size_t n = static_cast<size_t>(vhi - vlo + 1);
    lt.mean_.assign(n, 0.0);
    lt.pzero_.assign(n, 0.0);
    lt.elog_.assign(n, 0.0);
    const Station& stn = st.spec.stations[static_cast<size_t>(station)];

    auto scalar = [&](auto&& u_of_v) {
        for (int v = vlo; v <= vhi; ++v) {
            const double u = std::max(u_of_v(v), 0.0);
            const size_t k = static_cast<size_t>(v - vlo);
            if (u > 0.0) {
                lt.mean_[k] = u;
                lt.elog_[k] = std::log(u);
            } else {
                lt.pzero_[k] = 1.0;
            }
        }
    };

    if (station == 0) {
        if (st.spec.kind == NetworkKind::OPEN) scalar([](int) { return 1.0; });
        else scalar([](int v) { return static_cast<double>(v); }); // delay occupancy
        return lt;
    }

    const bool ps_like = stn.discipline == Discipline::PS
        || (stn.discipline == Discipline::FCFS && st.spec.num_classes() > 1 && stn.multiclass_as_ps);

    if (stn.discipline == Discipline::INF) {
        scalar([](int v) { return static_cast<double>(v); });
    } else if (stn.discipline == Discipline::FCFS && !ps_like) {
        const double K = static_cast<double>(stn.servers);
        scalar([K](int v) { return std::min(K, static_cast<double>(v)); });
    } else if (stn.discipline == Discipline::PRIORITY_FCFS) {
        const double K = static_cast<double>(stn.servers);
        double phigh = 1.0;
        const int myprio = st.spec.classes[static_cast<size_t>(cls)].priority;
        for (int c2 = 0; c2 < st.spec.num_classes(); ++c2) {
            if (st.spec.classes[static_cast<size_t>(c2)].priority >= myprio) continue;
            const ProbWindow xd = queue_dist(st, station, c2, node);
            double p_le0 = 0.0;
            for (int v = xd.lo(); v <= std::min(0, xd.hi()); ++v) p_le0 += xd.at(v);
            phigh *= p_le0;
        }
        for (int v = vlo; v <= vhi; ++v) {
            const size_t k = static_cast<size_t>(v - vlo);
            const double u = std::max(std::min(K, static_cast<double>(v)), 0.0);
            if (u > 0.0) {
                lt.mean_[k] = phigh * u;
                lt.elog_[k] = phigh * std::log(u);
                lt.pzero_[k] = 1.0 - phigh;
            } else {
                lt.pzero_[k] = 1.0;
            }
        }
    } else if (ps_like) {
        const double K = stn.infinite_servers() ? std::numeric_limits<double>::infinity()
                                                : static_cast<double>(stn.servers);
        ProbWindow rest = ProbWindow::point(0);
        for (int c2 = 0; c2 < st.spec.num_classes(); ++c2)
            if (c2 != cls) rest = convolve(rest, queue_dist(st, station, c2, node));
        for (int v = vlo; v <= vhi; ++v) {
            const size_t k = static_cast<size_t>(v - vlo);
            if (v == 0) { lt.pzero_[k] = 1.0; continue; }
            double m = 0.0, pz = 0.0, el = 0.0;
            for (int r = rest.lo(); r <= rest.hi(); ++r) {
                const double pr = rest.at(r);
                if (pr == 0.0) continue;
                const int total = v + r;
                const double frac = total == 0 ? 1.0 : std::min(K / static_cast<double>(total), 1.0);
                const double u = static_cast<double>(v) * frac;
                if (u > 0.0) {
                    m += pr * u;
                    el += pr * std::log(u);
                } else {
                    pz += pr;
                }
            }
            lt.mean_[k] = m;
            lt.pzero_[k] = pz;
            lt.elog_[k] = el;
        }
    } else {
        throw EngineError("unsupported discipline in load table");
    }
    return lt;
}

// eta's coefficient inside x_{station,cls} (+1 inbound, -1 outbound, 0 self-loop/none).
inline int pin_coefficient(const TransitionSet& ts, int dir, int station, int cls) {
    const Direction& d = ts[dir];
    int c = 0;
    if (d.dest == station && d.cls == cls) c += 1;
    if (d.origin == station && d.cls == cls) c -= 1;
    return c;
}

} // namespace detail

// --- Spec operations -------------------------------------------------------

// E[Xi_{Y,eta} | Y^eta = y] at grid node `node`.
inline double expected_generator(const VariationalState& st, int dir, int y, int node) {
    const Direction& d = st.ts[dir];
    const RatePosterior& rp = st.post[static_cast<size_t>(dir)];
    if (d.origin == 0 && st.spec.kind == NetworkKind::OPEN) return st.cfg.delta + rp.mean();
    const int base = (d.origin == 0) ? st.spec.population : 0;
    const ProbWindow dd = detail::signed_sum(st, d.origin, d.cls, node, dir);
    const int coef = detail::pin_coefficient(st.ts, dir, d.origin, d.cls);
    const int vlo = base + dd.lo() + std::min(coef * y, 0), vhi = base + dd.hi() + std::max(coef * y, 0);
    const detail::LoadTable lt = detail::build_load_table(st, d.origin, d.cls, node, vlo, vhi);
    double m = 0.0;
    for (int v = dd.lo(); v <= dd.hi(); ++v) m += dd.at(v) * lt.mean(base + v + coef * y);
    return st.cfg.delta + rp.mean() * m;
}

// E[log Xi_{Y,eta} | Y^eta = y] in the small-delta limiting split.
inline double expected_log_generator(const VariationalState& st, int dir, int y, int node) {
    const Direction& d = st.ts[dir];
    const RatePosterior& rp = st.post[static_cast<size_t>(dir)];
    if (d.origin == 0 && st.spec.kind == NetworkKind::OPEN) return rp.mean_log();
    const int base = (d.origin == 0) ? st.spec.population : 0;
    const ProbWindow dd = detail::signed_sum(st, d.origin, d.cls, node, dir);
    const int coef = detail::pin_coefficient(st.ts, dir, d.origin, d.cls);
    const int vlo = base + dd.lo() + std::min(coef * y, 0), vhi = base + dd.hi() + std::max(coef * y, 0);
    const detail::LoadTable lt = detail::build_load_table(st, d.origin, d.cls, node, vlo, vhi);
    double p0 = 0.0, el = 0.0;
    for (int v = dd.lo(); v <= dd.hi(); ++v) {
        const double p = dd.at(v);
        p0 += p * lt.pzero(base + v + coef * y);
        el += p * lt.elog(base + v + coef * y);
    }
    return (1.0 - p0) * rp.mean_log() + el + p0 * std::log(st.cfg.delta);
}

// Batched A/B/load computation against the current phi snapshot; only_dir >= 0
// restricts the work to a single direction (one Gauss-Seidel block).
inline Coefficients compute_coefficients(const VariationalState& st, int only_dir = -1) {
    const int nd = st.ts.size(), nn = st.grid.size();
    Coefficients co;
    co.a.resize(static_cast<size_t>(nd));
    co.b.resize(static_cast<size_t>(nd));
    co.load.assign(static_cast<size_t>(nd), std::vector<double>(static_cast<size_t>(nn), 0.0));
    for (int k = 0; k < nd; ++k) {
        if (only_dir >= 0 && k != only_dir) continue;
        const size_t rows = static_cast<size_t>(nn) * static_cast<size_t>(st.dirs[static_cast<size_t>(k)].stride());
        co.a[static_cast<size_t>(k)].assign(rows, 0.0);
        co.b[static_cast<size_t>(k)].assign(rows, 0.0);
    }

    detail::parallel_for(nn, detail::engine_threads(st.cfg), [&](int node) {
        const double logdelta = std::log(st.cfg.delta);
        for (int k = 0; k < nd; ++k) {
            if (only_dir >= 0 && k != only_dir) continue;
            const Direction& d = st.ts[k];
            const DirectionState& ds = st.dirs[static_cast<size_t>(k)];
            const RatePosterior& rp = st.post[static_cast<size_t>(k)];
            const int stride = ds.stride();
            double* arow = co.a[static_cast<size_t>(k)].data() + static_cast<size_t>(node) * stride;
            double* brow = co.b[static_cast<size_t>(k)].data() + static_cast<size_t>(node) * stride;

            if (d.origin == 0 && st.spec.kind == NetworkKind::OPEN) {
                const double a = st.cfg.delta + rp.mean(), b = rp.mean_log();
                for (int y = 0; y <= ds.ymax; ++y) { arow[y] = a; brow[y] = b; }
                co.load[static_cast<size_t>(k)][static_cast<size_t>(node)] = 1.0;
                continue;
            }

            const int base = (d.origin == 0) ? st.spec.population : 0;
            const ProbWindow dd = detail::signed_sum(st, d.origin, d.cls, node, k);
            const int coef = detail::pin_coefficient(st.ts, k, d.origin, d.cls);
            const int vlo = base + dd.lo() + std::min(coef * ds.ymax, 0);
            const int vhi = base + dd.hi() + std::max(coef * ds.ymax, 0);
            const detail::LoadTable lt = detail::build_load_table(st, d.origin, d.cls, node, vlo, vhi);

            const double elam = rp.mean(), mlog = rp.mean_log();
            const int dn = dd.hi() - dd.lo() + 1;
            for (int y = 0; y <= ds.ymax; ++y) {
                const int shift = base + dd.lo() + coef * y - lt.vlo;
                double m = 0.0, p0 = 0.0, el = 0.0;
                const double* pj = dd.mass.data();
                const double* mv = lt.mean_.data() + shift;
                const double* pz = lt.pzero_.data() + shift;
                const double* eg = lt.elog_.data() + shift;
                for (int j = 0; j < dn; ++j) {
                    m += pj[j] * mv[j];
                    p0 += pj[j] * pz[j];
                    el += pj[j] * eg[j];
                }
                arow[y] = st.cfg.delta + elam * m;
                brow[y] = (1.0 - p0) * mlog + el + p0 * logdelta;
                if (coef == 0) { // pinned direction does not enter the load
                    for (int y2 = 1; y2 <= ds.ymax; ++y2) { arow[y2] = arow[0]; brow[y2] = brow[0]; }
                    break;
                }
            }

            // unconditional expected load (phi-weighted over the pinned count)
            const double* ph = ds.row(ds.phi, node);
            double lsum = 0.0;
            for (int y = ds.wlo[static_cast<size_t>(node)]; y <= ds.whi[static_cast<size_t>(node)]; ++y)
                lsum += ph[y] * (arow[y] - st.cfg.delta);
            co.load[static_cast<size_t>(k)][static_cast<size_t>(node)] = elam > 0.0 ? lsum / elam : 0.0;
        }
    });
    return co;
}

namespace detail {

// Observation jump increments log r by E[log f_O | Y^eta = y]; only monitored
// endpoints of eta contribute.
inline void apply_observation_jump(const VariationalState& st, int dir, int obs_index, int node,
                                   std::vector<double>& lrow) {
    const Direction& d = st.ts[dir];
    const DirectionState& ds = st.dirs[static_cast<size_t>(dir)];
    for (size_t m = 0; m < st.obs.monitored.size(); ++m) {
        const auto [station, cls] = st.obs.monitored[m];
        if (cls != d.cls) continue;
        if (station != d.origin && station != d.dest) continue;
        const int coef = pin_coefficient(st.ts, dir, station, cls);
        if (coef == 0) continue; // constant in y
        const int base = (station == 0) ? st.spec.population : 0;
        const ProbWindow dd = signed_sum(st, station, cls, node, dir);
        const int o = st.obs.values[static_cast<size_t>(obs_index)][m];
        for (int y = 0; y <= ds.ymax; ++y) {
            double j = 0.0;
            for (int v = dd.lo(); v <= dd.hi(); ++v)
                j += dd.at(v) * st.obs.model.log_pmf(o, base + v + coef * y);
            lrow[static_cast<size_t>(y)] += j;
        }
    }
}

inline void recenter(std::vector<double>& row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) mx = std::max(mx, v);
    for (double& v : row) v -= mx;
}

} // namespace detail

// Backward integration of the r-functional for one direction, in log space with
// an integrating-factor step (positive and stable for arbitrarily large source
// terms, which arise at observation peaks when nu_bar = inf). Node values are
// re-centered (max 0), so only the spread across count levels matters; the
// clamp below is a guard against runaway degeneracies, far beyond the spreads
// the delta-tilted priority loads legitimately need. Returns true if it bit.
inline bool backward_sweep(VariationalState& st, const Coefficients& co, int dir) {
    constexpr double kLogRFloor = -1e6;
    DirectionState& ds = st.dirs[static_cast<size_t>(dir)];
    const int nn = st.grid.size(), ny = ds.ymax + 1, stride = ds.stride();
    const std::vector<double>& A = co.a[static_cast<size_t>(dir)];
    const std::vector<double>& B = co.b[static_cast<size_t>(dir)];

    std::vector<double> cur(static_cast<size_t>(ny), 0.0); // log r at the right end of the interval
    std::vector<double> nxt(static_cast<size_t>(ny), 0.0);
    std::vector<double> subL, subR;

    auto store = [&](int node, const std::vector<double>& v) {
        double* out = ds.row(ds.logr, node);
        std::copy(v.begin(), v.end(), out);
    };

    // observation lookup: node -> obs index
    std::vector<int> obs_at(static_cast<size_t>(nn), -1);
    for (size_t k = 0; k < st.obs_nodes.size(); ++k) obs_at[static_cast<size_t>(st.obs_nodes[k])] = static_cast<int>(k);

    bool clamped = false;
    for (int node = nn - 1; node >= 0; --node) {
        if (node < nn - 1) {
            // integrate backward over [node, node+1]
            const double t0 = st.grid.nodes[static_cast<size_t>(node)];
            const double t1 = st.grid.nodes[static_cast<size_t>(node + 1)];
            const double h = t1 - t0;
            const double* A0 = A.data() + static_cast<size_t>(node) * stride;
            const double* A1 = A.data() + static_cast<size_t>(node + 1) * stride;
            const double* B0 = B.data() + static_cast<size_t>(node) * stride;
            const double* B1 = B.data() + static_cast<size_t>(node + 1) * stride;
            const double* S0 = ds.row(ds.slack, node);
            const double* S1 = ds.row(ds.slack, node + 1);

            double amax = 0.0;
            for (int y = 0; y < ny; ++y) amax = std::max(amax, std::max(A0[y], A1[y]));
            const int nsub = std::clamp(static_cast<int>(std::ceil(amax * h / 1.0)), 1, 64);

            subR.assign(static_cast<size_t>(nsub) + 1, 0.0); // log r(y+1, substep m)
            subL.assign(static_cast<size_t>(nsub) + 1, 0.0);
            // top row first: d log r / dt = A - (1+s) e^{B-s} with unit ratio boundary
            {
                const int y = ny - 1;
                subL[static_cast<size_t>(nsub)] = cur[static_cast<size_t>(y)];
                for (int m = nsub - 1; m >= 0; --m) {
                    const double ua = t0 + h * m / nsub, ub = t0 + h * (m + 1) / nsub;
                    auto coefat = [&](double u) {
                        const double w = (u - t0) / h;
                        const double a = A0[y] + (A1[y] - A0[y]) * w;
                        const double b = B0[y] + (B1[y] - B0[y]) * w;
                        const double s = S0[y] + (S1[y] - S0[y]) * w;
                        return std::pair<double, double>(a, std::log1p(s) + b - s);
                    };
                    const auto [aa, ca] = coefat(ua);
                    const auto [ab, cb] = coefat(ub);
                    const double hs = ub - ua;
                    subL[static_cast<size_t>(m)] = subL[static_cast<size_t>(m + 1)]
                        - hs * 0.5 * ((aa - std::exp(ca)) + (ab - std::exp(cb)));
                }
                std::swap(subL, subR);
                nxt[static_cast<size_t>(y)] = subR[0];
            }
            for (int y = ny - 2; y >= 0; --y) {
                subL[static_cast<size_t>(nsub)] = cur[static_cast<size_t>(y)];
                for (int m = nsub - 1; m >= 0; --m) {
                    const double ua = t0 + h * m / nsub, ub = t0 + h * (m + 1) / nsub;
                    const double hs = ub - ua;
                    auto interp = [&](const double* v0, const double* v1, double u) {
                        const double w = (u - t0) / h;
                        return v0[y] + (v1[y] - v0[y]) * w;
                    };
                    const double a0 = interp(A0, A1, ua), a1 = interp(A0, A1, ub);
                    const double am = interp(A0, A1, 0.5 * (ua + ub));
                    // I(u) = int_ua^u A, with A linear
                    const double Im = 0.5 * (a0 + am) * 0.5 * hs;
                    const double I1 = 0.5 * (a0 + a1) * hs;
                    auto logC = [&](double u) {
                        const double b = interp(B0, B1, u);
                        const double s = interp(S0, S1, u);
                        return std::log1p(s) + b - s;
                    };
                    const double lr_up0 = subR[static_cast<size_t>(m)];
                    const double lr_up1 = subR[static_cast<size_t>(m + 1)];
                    const double lr_upm = 0.5 * (lr_up0 + lr_up1);
                    const double f0 = logC(ua) + lr_up0;
                    const double fm = -Im + logC(0.5 * (ua + ub)) + lr_upm;
                    const double f1 = -I1 + logC(ub) + lr_up1;
                    const double lsrc = std::log(hs / 6.0)
                        + log_sum_exp(log_sum_exp(f0, std::log(4.0) + fm), f1);
                    subL[static_cast<size_t>(m)] = log_sum_exp(-I1 + subL[static_cast<size_t>(m + 1)], lsrc);
                }
                std::swap(subL, subR);
                nxt[static_cast<size_t>(y)] = subR[0];
            }
            detail::recenter(nxt);
            for (double& v : nxt)
                if (v < kLogRFloor) { v = kLogRFloor; clamped = true; }
            std::swap(cur, nxt);
        }
        if (obs_at[static_cast<size_t>(node)] >= 0) {
            detail::apply_observation_jump(st, dir, obs_at[static_cast<size_t>(node)], node, cur);
            detail::recenter(cur);
            for (double& v : cur)
                if (v < kLogRFloor) { v = kLogRFloor; clamped = true; }
        }
        store(node, cur);
    }
    return clamped;
}

// Pointwise KKT update of the intensity and slack fields from a fresh r-field.
inline void update_intensities(VariationalState& st, const Coefficients& co, int dir) {
    DirectionState& ds = st.dirs[static_cast<size_t>(dir)];
    const int nn = st.grid.size(), stride = ds.stride();
    const std::vector<double>& B = co.b[static_cast<size_t>(dir)];
    const double log_nubar = std::log(st.cfg.nu_bar);
    const bool capped = std::isfinite(st.cfg.nu_bar);
    for (int node = 0; node < nn; ++node) {
        const double* lr = ds.row(ds.logr, node);
        const double* brow = B.data() + static_cast<size_t>(node) * stride;
        double* nu = ds.row(ds.nu, node);
        double* sl = ds.row(ds.slack, node);
        for (int y = 0; y <= ds.ymax; ++y) {
            const double dlr = (y < ds.ymax) ? lr[y + 1] - lr[y] : 0.0;
            const double lognustar = dlr + brow[y];
            if (!capped || lognustar < log_nubar) {
                // uncapped mode still gets a numerical ceiling; this is not a KKT
                // cap, so the slack stays zero
                const double ceil_ = capped ? st.cfg.nu_bar : 1e6;
                nu[y] = std::clamp(std::exp(lognustar), std::numeric_limits<double>::min(), ceil_);
                sl[y] = 0.0;
            } else {
                nu[y] = st.cfg.nu_bar;
                sl[y] = lognustar - log_nubar;
            }
        }
    }
}

// Forward master equation (pure birth) for one direction; RK4 with substepping,
// per-node renormalization of shed mass, and support expansion on demand.
// Returns false if the support must grow.
inline bool forward_master_once(const TimeGrid& grid, DirectionState& ds, double mass_tol) {
    const int nn = grid.size(), ny = ds.ymax + 1;
    std::vector<double> p(static_cast<size_t>(ny), 0.0), k1(p), k2(p), k3(p), k4(p), tmp(p);
    p[0] = 1.0;
    std::fill(ds.phi.begin(), ds.phi.end(), 0.0);
    ds.phi[0] = 1.0;
    ds.wlo.assign(static_cast<size_t>(nn), 0);
    ds.whi.assign(static_cast<size_t>(nn), 0);

    auto deriv = [&](const std::vector<double>& q, const double* nu0, const double* nu1, double w,
                     std::vector<double>& out) {
        double prev_flow = 0.0;
        for (int y = 0; y < ny; ++y) {
            const double nuy = nu0[y] + (nu1[y] - nu0[y]) * w;
            const double flow = nuy * q[static_cast<size_t>(y)];
            out[static_cast<size_t>(y)] = prev_flow - flow;
            prev_flow = flow;
        }
    };

    for (int node = 1; node < nn; ++node) {
        const double h = grid.nodes[static_cast<size_t>(node)] - grid.nodes[static_cast<size_t>(node - 1)];
        const double* nu0 = ds.row(ds.nu, node - 1);
        const double* nu1 = ds.row(ds.nu, node);
        double numax = 0.0;
        for (int y = 0; y < ny; ++y) numax = std::max(numax, std::max(nu0[y], nu1[y]));
        const int nsub = std::max(1, static_cast<int>(std::ceil(numax * h / 0.5)));
        for (int s = 0; s < nsub; ++s) {
            const double hs = h / nsub;
            const double w0 = static_cast<double>(s) / nsub;
            const double wm = (static_cast<double>(s) + 0.5) / nsub;
            const double w1 = static_cast<double>(s + 1) / nsub;
            deriv(p, nu0, nu1, w0, k1);
            for (int y = 0; y < ny; ++y) tmp[static_cast<size_t>(y)] = p[static_cast<size_t>(y)] + 0.5 * hs * k1[static_cast<size_t>(y)];
            deriv(tmp, nu0, nu1, wm, k2);
            for (int y = 0; y < ny; ++y) tmp[static_cast<size_t>(y)] = p[static_cast<size_t>(y)] + 0.5 * hs * k2[static_cast<size_t>(y)];
            deriv(tmp, nu0, nu1, wm, k3);
            for (int y = 0; y < ny; ++y) tmp[static_cast<size_t>(y)] = p[static_cast<size_t>(y)] + hs * k3[static_cast<size_t>(y)];
            deriv(tmp, nu0, nu1, w1, k4);
            for (int y = 0; y < ny; ++y)
                p[static_cast<size_t>(y)] += hs / 6.0
                    * (k1[static_cast<size_t>(y)] + 2.0 * k2[static_cast<size_t>(y)] + 2.0 * k3[static_cast<size_t>(y)] + k4[static_cast<size_t>(y)]);
        }
        double total = 0.0;
        for (int y = 0; y < ny; ++y) {
            if (p[static_cast<size_t>(y)] < 0.0) p[static_cast<size_t>(y)] = 0.0; // RK4 ringing guard
            total += p[static_cast<size_t>(y)];
        }
        if (total < 1.0 - mass_tol) return false; // shed too much: expand support
        for (int y = 0; y < ny; ++y) p[static_cast<size_t>(y)] /= total;
        double* out = ds.row(ds.phi, node);
        std::copy(p.begin(), p.end(), out);
        int lo = 0, hi = ny - 1;
        while (hi > 0 && p[static_cast<size_t>(hi)] < 1e-15) --hi;
        while (lo < hi && p[static_cast<size_t>(lo)] < 1e-15) ++lo;
        ds.wlo[static_cast<size_t>(node)] = lo;
        ds.whi[static_cast<size_t>(node)] = hi;
    }
    return true;
}

inline void resize_direction(DirectionState& ds, int nn, int new_ymax) {
    DirectionState out;
    out.ymax = new_ymax;
    const size_t rows = static_cast<size_t>(nn) * static_cast<size_t>(new_ymax + 1);
    out.phi.assign(rows, 0.0);
    out.nu.assign(rows, 0.0);
    out.logr.assign(rows, 0.0);
    out.slack.assign(rows, 0.0);
    out.wlo.assign(static_cast<size_t>(nn), 0);
    out.whi.assign(static_cast<size_t>(nn), 0);
    const int copy = std::min(ds.ymax, new_ymax) + 1;
    for (int node = 0; node < nn; ++node) {
        for (int y = 0; y < copy; ++y) {
            out.row(out.phi, node)[y] = ds.row(ds.phi, node)[y];
            out.row(out.nu, node)[y] = ds.row(ds.nu, node)[y];
            out.row(out.logr, node)[y] = ds.row(ds.logr, node)[y];
            out.row(out.slack, node)[y] = ds.row(ds.slack, node)[y];
        }
        for (int y = copy; y <= new_ymax; ++y) { // extend with edge values
            out.row(out.phi, node)[y] = 0.0;
            out.row(out.nu, node)[y] = ds.row(ds.nu, node)[ds.ymax];
            out.row(out.logr, node)[y] = ds.row(ds.logr, node)[ds.ymax];
            out.row(out.slack, node)[y] = ds.row(ds.slack, node)[ds.ymax];
        }
        out.wlo[static_cast<size_t>(node)] = ds.wlo[static_cast<size_t>(node)];
        out.whi[static_cast<size_t>(node)] = ds.whi[static_cast<size_t>(node)];
    }
    ds = std::move(out);
}

// Forward sweep with automatic support expansion up to the hard cap.
inline void forward_master(VariationalState& st, int dir) {
    DirectionState& ds = st.dirs[static_cast<size_t>(dir)];
    while (true) {
        if (forward_master_once(st.grid, ds, st.cfg.mass_tol)) return;
        if (ds.ymax >= st.cfg.ymax_hard_cap)
            throw EngineError("direction " + std::to_string(dir) + ": count support exceeded the hard cap "
                              + std::to_string(st.cfg.ymax_hard_cap)
                              + "; raise ymax_hard_cap or shorten the horizon");
        const int grown = std::min(st.cfg.ymax_hard_cap, std::max(ds.ymax + 16, ds.ymax + ds.ymax / 2));
        resize_direction(ds, st.grid.size(), grown);
    }
}

// Conjugate Gamma refresh from the current fields (Cor. 2 form).
inline void update_rate_posteriors(VariationalState& st, const std::vector<std::vector<double>>* load_by_dir = nullptr) {
    const int nn = st.grid.size();
    std::vector<double> enu(static_cast<size_t>(nn));
    // load integrals are shared per (origin, class)
    std::vector<std::vector<double>> load_integral(static_cast<size_t>(st.spec.num_stations()),
                                                   std::vector<double>(static_cast<size_t>(st.spec.num_classes()),
                                                                        std::numeric_limits<double>::quiet_NaN()));
    for (int k = 0; k < st.ts.size(); ++k) {
        RatePosterior& rp = st.post[static_cast<size_t>(k)];
        if (rp.fixed) continue;
        const DirectionState& ds = st.dirs[static_cast<size_t>(k)];
        for (int node = 0; node < nn; ++node) {
            const double* ph = ds.row(ds.phi, node);
            const double* nu = ds.row(ds.nu, node);
            double s = 0.0;
            for (int y = ds.wlo[static_cast<size_t>(node)]; y <= ds.whi[static_cast<size_t>(node)]; ++y)
                s += ph[y] * nu[y];
            enu[static_cast<size_t>(node)] = s;
        }
        const double int_nu = trapezoid(st.grid.nodes, enu);

        const Direction& d = st.ts[k];
        double& li = load_integral[static_cast<size_t>(d.origin)][static_cast<size_t>(d.cls)];
        if (std::isnan(li)) {
            std::vector<double> el(static_cast<size_t>(nn));
            if (load_by_dir) {
                const auto& lv = (*load_by_dir)[static_cast<size_t>(k)];
                std::copy(lv.begin(), lv.end(), el.begin());
            } else {
                for (int node = 0; node < nn; ++node) {
                    const ProbWindow xd = detail::queue_dist(st, d.origin, d.cls, node);
                    const detail::LoadTable lt =
                        detail::build_load_table(st, d.origin, d.cls, node, xd.lo(), xd.hi());
                    double s = 0.0;
                    for (int v = xd.lo(); v <= xd.hi(); ++v) s += xd.at(v) * lt.mean(v);
                    el[static_cast<size_t>(node)] = s;
                }
            }
            li = trapezoid(st.grid.nodes, el);
        }
        if (!std::isfinite(int_nu) || !std::isfinite(li))
            throw EngineError("non-finite posterior integrals in direction " + std::to_string(k));
        rp.shape = rp.prior_shape + int_nu;
        rp.rate = rp.prior_rate + li;
    }
}

// Evidence lower bound: observation term - rate KL - path term.
inline double evaluate_elbo(const VariationalState& st, const Coefficients& co) {
    const int nn = st.grid.size();
    double obs_term = 0.0;
    for (size_t k = 0; k < st.obs_nodes.size(); ++k) {
        const int node = st.obs_nodes[k];
        for (size_t m = 0; m < st.obs.monitored.size(); ++m) {
            const auto [station, cls] = st.obs.monitored[m];
            const ProbWindow xd = detail::queue_dist(st, station, cls, node);
            const int o = st.obs.values[k][m];
            double s = 0.0;
            for (int v = xd.lo(); v <= xd.hi(); ++v) s += xd.at(v) * st.obs.model.log_pmf(o, v);
            obs_term += s;
        }
    }

    double kl = 0.0;
    for (const RatePosterior& rp : st.post)
        if (!rp.fixed) kl += gamma_kl(rp.shape, rp.rate, rp.prior_shape, rp.prior_rate);

    std::vector<double> path(static_cast<size_t>(nn), 0.0);
    for (int k = 0; k < st.ts.size(); ++k) {
        const DirectionState& ds = st.dirs[static_cast<size_t>(k)];
        const int stride = ds.stride();
        for (int node = 0; node < nn; ++node) {
            const double* ph = ds.row(ds.phi, node);
            const double* nu = ds.row(ds.nu, node);
            const double* a = co.a[static_cast<size_t>(k)].data() + static_cast<size_t>(node) * stride;
            const double* b = co.b[static_cast<size_t>(k)].data() + static_cast<size_t>(node) * stride;
            double s = 0.0;
            for (int y = ds.wlo[static_cast<size_t>(node)]; y <= ds.whi[static_cast<size_t>(node)]; ++y) {
                const double v = nu[y];
                s += ph[y] * (v * (std::log(v) - b[y]) - v + a[y]);
            }
            path[static_cast<size_t>(node)] += s;
        }
    }
    return obs_term - kl - trapezoid(st.grid.nodes, path);
}

// Marginal queue-length (or node-0 occupancy) distribution at a grid node,
// with the mass assigned to negative lengths reported separately.
struct QueueDistribution {
    ProbWindow dist;
    double negative_mass = 0.0;
};

inline QueueDistribution queue_length_distribution(const VariationalState& st, int station, int cls,
                                                   int node) {
    QueueDistribution qd;
    qd.dist = detail::queue_dist(st, station, cls, node);
    for (int v = qd.dist.lo(); v <= std::min(-1, qd.dist.hi()); ++v) qd.negative_mass += qd.dist.at(v);
    return qd;
}

namespace detail {

inline int max_observed(const ObservationSet& obs, int station, int cls) {
    int m = -1;
    for (size_t i = 0; i < obs.monitored.size(); ++i)
        if (obs.monitored[i] == std::pair<int, int>(station, cls)) { m = static_cast<int>(i); break; }
    if (m < 0) return 0;
    int mx = 0;
    for (const auto& row : obs.values) mx = std::max(mx, row[static_cast<size_t>(m)]);
    return mx;
}

} // namespace detail

// Starting state: constant intensities seeded from observed flux (floor 0.1),
// one forward pass for the marginals, r = 1, kappa = 0, posteriors = priors.
inline VariationalState initialize(const NetworkSpec& spec, const std::vector<RatePosterior>& priors,
                                   const ObservationSet& obs, double horizon, const EngineConfig& cfg) {
    VariationalState st;
    st.spec = spec;
    st.ts = build_transition_set(spec);
    st.cfg = cfg;
    if (!(cfg.delta > 0.0)) throw EngineError("delta must be positive inside inference");
    if (static_cast<int>(priors.size()) != st.ts.size())
        throw EngineError("one rate prior per transition direction required");
    if (!obs.times.empty() && obs.model.epsilon <= 0.0)
        throw EngineError("epsilon must be positive inside inference (exact snapshots plateau the bound)");

    const double dt = cfg.dt > 0.0 ? cfg.dt : horizon / 2000.0;
    for (size_t k = 1; k < obs.times.size(); ++k)
        if (dt > obs.times[k] - obs.times[k - 1] + 1e-12)
            throw EngineError("grid resolution is coarser than the observation spacing");
    st.grid = TimeGrid::build(horizon, obs.times, dt);
    st.obs = obs;
    st.obs_nodes.reserve(obs.times.size());
    for (double t : obs.times) st.obs_nodes.push_back(st.grid.index_of(t));
    st.post = priors;

    // Average observed state; drives the balanced-flow initial intensities. A
    // slow start is a known trap (the bound rewards freezing the counts), so the
    // init mean path must flow at the generator rate of the typical state.
    QueueVector xbar;
    xbar.num_stations = spec.num_stations();
    xbar.num_classes = spec.num_classes();
    xbar.x.assign(static_cast<size_t>((xbar.num_stations - 1) * xbar.num_classes), 0);
    if (spec.kind == NetworkKind::CLOSED)
        xbar.delay.assign(static_cast<size_t>(xbar.num_classes), spec.population);
    for (size_t m = 0; m < obs.monitored.size(); ++m) {
        const auto [station, cls] = obs.monitored[m];
        double mean = 0.0;
        for (const auto& row : obs.values) mean += row[m];
        if (!obs.values.empty()) mean /= static_cast<double>(obs.values.size());
        const int rounded = static_cast<int>(std::lround(mean));
        if (station == 0) xbar.delay[static_cast<size_t>(cls)] = rounded;
        else xbar.at(station, cls) = rounded;
    }
    if (spec.kind == NetworkKind::CLOSED) {
        bool delay_monitored = false;
        for (const auto& mc : obs.monitored)
            if (mc.first == 0) delay_monitored = true;
        if (!delay_monitored && !obs.values.empty())
            for (int c = 0; c < spec.num_classes(); ++c) {
                int rest = 0;
                for (int i = 1; i < spec.num_stations(); ++i) rest += xbar.at(i, c);
                xbar.delay[static_cast<size_t>(c)] = std::max(spec.population - rest, 0);
            }
    }

    // Initial flows solve the traffic equations anchored at the fixed-rate
    // directions (arrivals, delays): fixed directions emit at their generator
    // rate in the average observed state, inferred ones relay the incoming flux
    // through the routing split. The count slope is a nearly flat mode of the
    // bound, so the starting flow has to match the data.
    std::vector<double> flow(static_cast<size_t>(st.ts.size()), 0.0);
    {
        // node-0 directions anchor the absolute scale (source load is 1, delay
        // load is the occupancy); station directions relay the incoming flux
        bool any_anchor = false;
        for (int k = 0; k < st.ts.size(); ++k) {
            const Direction& d = st.ts[k];
            if (d.origin != 0) continue;
            const double load0 = std::max(station_load(xbar, 0, d.cls, spec), 0.0);
            flow[static_cast<size_t>(k)] = st.post[static_cast<size_t>(k)].mean() * load0;
            any_anchor = true;
        }
        if (!any_anchor) {
            for (int k = 0; k < st.ts.size(); ++k) {
                const Direction& d = st.ts[k];
                const double load0 = std::max(station_load(xbar, d.origin, d.cls, spec), 1.0);
                flow[static_cast<size_t>(k)] = st.post[static_cast<size_t>(k)].mean() * load0;
            }
        } else {
            for (int pass = 0; pass < 8 * spec.num_stations(); ++pass)
                for (int i = 1; i < spec.num_stations(); ++i)
                    for (int c = 0; c < spec.num_classes(); ++c) {
                        const auto& outs = st.ts.out_of[i][c];
                        if (outs.empty()) continue;
                        double influx = 0.0;
                        for (int k : st.ts.into[i][c]) influx += flow[static_cast<size_t>(k)];
                        for (int k : outs)
                            flow[static_cast<size_t>(k)] =
                                influx * spec.route(c, st.ts[k].origin, st.ts[k].dest);
                    }
        }
    }

    const int nn = st.grid.size();
    st.dirs.resize(static_cast<size_t>(st.ts.size()));
    for (int k = 0; k < st.ts.size(); ++k) {
        const Direction& d = st.ts[k];
        double c = std::max(0.1, flow[static_cast<size_t>(k)]);
        c = std::min(c, cfg.nu_bar);

        const double mean_count = c * horizon;
        const int implied = std::max(detail::max_observed(obs, d.dest, d.cls),
                                     detail::max_observed(obs, d.origin, d.cls));
        if (implied > 10.0 * std::max(mean_count, 0.1))
            st.warnings.push_back("direction " + std::to_string(k)
                                  + ": initial mean count far below observed totals");
        int ymax = static_cast<int>(std::ceil(std::max(mean_count, static_cast<double>(implied))
                                              + 10.0 * std::sqrt(std::max(mean_count, 1.0))));
        ymax = std::clamp(ymax, 8, cfg.ymax_hard_cap);

        DirectionState& ds = st.dirs[static_cast<size_t>(k)];
        ds.ymax = ymax;
        const size_t rows = static_cast<size_t>(nn) * static_cast<size_t>(ymax + 1);
        ds.phi.assign(rows, 0.0);
        ds.nu.assign(rows, c);
        ds.logr.assign(rows, 0.0);
        ds.slack.assign(rows, 0.0);
        ds.wlo.assign(static_cast<size_t>(nn), 0);
        ds.whi.assign(static_cast<size_t>(nn), 0);
        // Flow-tracking start: restore toward the mean path c*t so the initial
        // marginals stay sub-Poisson. Wide starting marginals smear the
        // conditional zero-load probabilities, and the geometric delta factor in
        // the intensity equation then freezes the transport before the sweeps
        // can tighten anything.
        const double gain = 1.0;
        for (int node = 0; node < nn; ++node) {
            const double target = c * st.grid.nodes[static_cast<size_t>(node)];
            double* nu = ds.row(ds.nu, node);
            for (int y = 0; y <= ymax; ++y)
                nu[y] = std::clamp(c + gain * (target - static_cast<double>(y)), 1e-3,
                                   std::min(cfg.nu_bar, c + 10.0));
        }
    }
    detail::parallel_for(st.ts.size(), detail::engine_threads(cfg), [&](int k) { forward_master(st, k); });
    return st;
}

// Slackness / normalization / monotonicity checks; throws on violation.
inline void check_state_invariants(const VariationalState& st) {
    for (int k = 0; k < st.ts.size(); ++k) {
        const DirectionState& ds = st.dirs[static_cast<size_t>(k)];
        const RatePosterior& rp = st.post[static_cast<size_t>(k)];
        if (!rp.fixed && (rp.shape < rp.prior_shape - 1e-12 || rp.rate < rp.prior_rate - 1e-12))
            throw EngineError("posterior parameters fell below the prior");
        for (int node = 0; node < st.grid.size(); ++node) {
            const double* nu = ds.row(ds.nu, node);
            const double* sl = ds.row(ds.slack, node);
            const double* ph = ds.row(ds.phi, node);
            double mass = 0.0;
            for (int y = 0; y <= ds.ymax; ++y) {
                if (sl[y] < 0.0) throw EngineError("negative slack multiplier");
                if (std::isfinite(st.cfg.nu_bar)) {
                    if (nu[y] > st.cfg.nu_bar) throw EngineError("intensity exceeds the cap");
                    if (sl[y] * ph[y] * (nu[y] - st.cfg.nu_bar) != 0.0)
                        throw EngineError("complementary slackness violated");
                }
                if (!(nu[y] > 0.0)) throw EngineError("non-positive intensity");
                mass += ph[y];
            }
            if (mass < 1.0 - st.cfg.mass_tol - 1e-12 || mass > 1.0 + 1e-9)
                throw EngineError("marginal mass outside [1 - tol, 1]");
        }
    }
}

struct ServiceRateSummary {
    int station = 0;
    int cls = 0;
    double shape = 0.0, rate = 0.0; // Gamma(sum of direction shapes, shared rate)
};

struct RoutingSummary {
    Direction dir;
    double p_mean = 0.0;        // E[lambda_eta] / E[mu_i^c]
    double concentration = 0.0; // Dirichlet heuristic: posterior shape increment
};

struct InferenceResult {
    VariationalState state;
    std::vector<double> elbo_trace;
    bool converged = false;
    bool elbo_decrease_flagged = false;
    int iterations = 0;
    std::vector<ServiceRateSummary> service_rates;
    std::vector<RoutingSummary> routing;
};

namespace detail {

inline void build_summaries(InferenceResult& res) {
    const VariationalState& st = res.state;
    for (int i = 0; i < st.spec.num_stations(); ++i)
        for (int c = 0; c < st.spec.num_classes(); ++c) {
            const auto& outs = st.ts.out_of[i][c];
            if (outs.empty()) continue;
            bool any_inferred = false;
            double shape_sum = 0.0, rate_shared = 0.0, alpha_sum = 0.0;
            for (int k : outs) {
                const RatePosterior& rp = st.post[static_cast<size_t>(k)];
                if (rp.fixed) continue;
                any_inferred = true;
                shape_sum += rp.shape;
                rate_shared = rp.rate;
                alpha_sum += rp.shape;
            }
            if (!any_inferred) continue;
            res.service_rates.push_back({i, c, shape_sum, rate_shared});
            for (int k : outs) {
                const RatePosterior& rp = st.post[static_cast<size_t>(k)];
                if (rp.fixed) continue;
                res.routing.push_back({st.ts[k], rp.shape / alpha_sum, rp.shape - rp.prior_shape});
            }
        }
}

} // namespace detail

// Coordinate ascent to convergence of the lower bound.
inline InferenceResult run_coordinate_ascent(const NetworkSpec& spec,
                                             const std::vector<RatePosterior>& priors,
                                             const ObservationSet& obs, double horizon,
                                             const EngineConfig& cfg) {
    InferenceResult res;
    res.state = initialize(spec, priors, obs, horizon, cfg);
    VariationalState& st = res.state;
    const int threads = detail::engine_threads(cfg);

    if (cfg.max_iters == 0) {
        detail::build_summaries(res);
        return res;
    }
    (void)threads;

    // conjugate block first: scales the rate beliefs to the initial flows before
    // any sweep runs (prior means far from the data scale otherwise drive the
    // first transport wildly off)
    update_rate_posteriors(st);

    double prev = kNegInf;
    for (int iter = 1; iter <= cfg.max_iters; ++iter) {
        // Gauss-Seidel over directions: each block sees the already-updated
        // marginals of the previous blocks (plain coordinate ascent; a joint
        // Jacobi sweep can enter a two-cycle on tightly coupled loops)
        for (int k = 0; k < st.ts.size(); ++k) {
            const Coefficients cok = compute_coefficients(st, k);
            if (backward_sweep(st, cok, k))
                st.warnings.push_back("iteration " + std::to_string(iter) + ", direction "
                                      + std::to_string(k) + ": log r spread hit the degeneracy guard");
            update_intensities(st, cok, k);
            forward_master(st, k);
        }
        update_rate_posteriors(st);
        const Coefficients co = compute_coefficients(st);
        const double elbo = evaluate_elbo(st, co);
        res.elbo_trace.push_back(elbo);
        res.iterations = iter;
        if (cfg.check_invariants) check_state_invariants(st);
        if (iter >= 2) {
            if (elbo < prev - 1e-4 * std::fabs(prev)) {
                res.elbo_decrease_flagged = true;
                st.warnings.push_back("iteration " + std::to_string(iter)
                                      + ": lower bound decreased beyond tolerance (grid too coarse?)");
            }
            if (std::fabs(elbo - prev) < cfg.tol * std::fabs(elbo)) {
                res.converged = true;
                prev = elbo;
                break;
            }
        }
        prev = elbo;
    }
    detail::build_summaries(res);
    return res;
}

} // namespace qnet
