#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace qnet {

enum class Discipline { FCFS, PS, INF, PRIORITY_FCFS, DELAY, SOURCE_SINK };

inline const char* discipline_name(Discipline d) {
    switch (d) {
        case Discipline::FCFS: return "fcfs";
        case Discipline::PS: return "ps";
        case Discipline::INF: return "inf";
        case Discipline::PRIORITY_FCFS: return "priority_fcfs";
        case Discipline::DELAY: return "delay";
        case Discipline::SOURCE_SINK: return "source_sink";
    }
    return "?";
}

struct Station {
    static constexpr int kInfServers = -1;

    int index = 0;
    Discipline discipline = Discipline::FCFS;
    int servers = 1;              // kInfServers for infinite
    bool multiclass_as_ps = false; // opt-in: shared FCFS modeled with the PS load

    bool infinite_servers() const { return servers == kInfServers; }
};

struct JobClass {
    std::string name;
    int priority = 0; // lower value = served first
};

enum class NetworkKind { OPEN, CLOSED };

struct NetworkSpec {
    std::vector<Station> stations;           // entry 0 is the virtual node
    std::vector<JobClass> classes;
    std::vector<std::vector<std::vector<double>>> routing; // [class][from][to]
    NetworkKind kind = NetworkKind::OPEN;
    int population = 0;                      // closed systems only

    int num_stations() const { return static_cast<int>(stations.size()); } // M + 1
    int num_classes() const { return static_cast<int>(classes.size()); }

    double route(int cls, int from, int to) const { return routing[cls][from][to]; }

    void validate() const;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void NetworkSpec::validate() const {
    if (stations.size() < 2) throw ConfigError("network needs node 0 plus at least one station");
    if (classes.empty()) throw ConfigError("at least one job class required");
    const int m1 = num_stations();
    for (int i = 0; i < m1; ++i) {
        const Station& st = stations[i];
        if (st.index != i) throw ConfigError("station indices must be 0..M in order");
        const bool virtual_disc = st.discipline == Discipline::DELAY || st.discipline == Discipline::SOURCE_SINK;
        if (i == 0 && !virtual_disc) throw ConfigError("node 0 must be a delay (closed) or source/sink (open)");
        if (i > 0 && virtual_disc) throw ConfigError("delay/source disciplines are reserved for node 0");
        if (st.discipline == Discipline::INF || st.discipline == Discipline::DELAY) {
            if (!st.infinite_servers()) throw ConfigError("inf/delay stations must have infinite servers");
        } else if (st.discipline != Discipline::SOURCE_SINK && !st.infinite_servers() && st.servers < 1) {
            throw ConfigError("server count must be >= 1");
        }
        if (st.discipline == Discipline::PRIORITY_FCFS) {
            if (num_classes() < 2) throw ConfigError("priority scheduling needs >= 2 job classes");
            for (size_t a = 0; a < classes.size(); ++a)
                for (size_t b = a + 1; b < classes.size(); ++b)
                    if (classes[a].priority == classes[b].priority)
                        throw ConfigError("priority scheduling needs a strict class priority order");
        }
        if (st.discipline == Discipline::FCFS && num_classes() > 1 && !st.multiclass_as_ps)
            throw ConfigError("multi-class FCFS station " + std::to_string(i)
                              + ": set multiclass_as_ps or use priority_fcfs");
    }
    if (kind == NetworkKind::CLOSED) {
        if (stations[0].discipline != Discipline::DELAY) throw ConfigError("closed network: node 0 must be a delay");
        if (population < 0) throw ConfigError("closed network: population must be >= 0");
        if (num_classes() != 1) throw ConfigError("closed networks are supported for a single job class");
    } else if (stations[0].discipline != Discipline::SOURCE_SINK) {
        throw ConfigError("open network: node 0 must be the source/sink");
    }
    if (static_cast<int>(routing.size()) != num_classes()) throw ConfigError("one routing matrix per class required");
    for (int c = 0; c < num_classes(); ++c) {
        const auto& mat = routing[c];
        if (static_cast<int>(mat.size()) != m1) throw ConfigError("routing matrix must be (M+1)x(M+1)");
        for (int i = 0; i < m1; ++i) {
            if (static_cast<int>(mat[i].size()) != m1) throw ConfigError("routing matrix must be (M+1)x(M+1)");
            double row = 0.0;
            for (int j = 0; j < m1; ++j) {
                if (mat[i][j] < 0.0 || mat[i][j] > 1.0) throw ConfigError("routing probabilities must lie in [0,1]");
                row += mat[i][j];
            }
            if (std::fabs(row - 1.0) > 1e-9)
                throw ConfigError("routing row " + std::to_string(i) + " of class " + classes[c].name
                                  + " sums to " + std::to_string(row));
        }
        if (mat[0][0] > 0.0) throw ConfigError("p_{0,0} > 0 is meaningless for the virtual node");
    }
}

// A feasible class-c job movement origin -> dest.
struct Direction {
    int origin = 0;
    int dest = 0;
    int cls = 0;

    friend bool operator==(const Direction&, const Direction&) = default;
};

// The ordered feasible transition set, with per-(station, class) in/out index lists.
struct TransitionSet {
    std::vector<Direction> dirs;                          // lexicographic (origin, dest, cls)
    std::vector<std::vector<std::vector<int>>> into;      // [station][class] -> direction indices
    std::vector<std::vector<std::vector<int>>> out_of;    // [station][class] -> direction indices

    int size() const { return static_cast<int>(dirs.size()); }
    const Direction& operator[](int k) const { return dirs[static_cast<size_t>(k)]; }

    int find(int origin, int dest, int cls) const {
        for (int k = 0; k < size(); ++k) {
            const Direction& d = dirs[static_cast<size_t>(k)];
            if (d.origin == origin && d.dest == dest && d.cls == cls) return k;
        }
        return -1;
    }
};

inline TransitionSet build_transition_set(const NetworkSpec& spec) {
    spec.validate();
    TransitionSet ts;
    const int m1 = spec.num_stations(), nc = spec.num_classes();
    for (int i = 0; i < m1; ++i)
        for (int j = 0; j < m1; ++j)
            for (int c = 0; c < nc; ++c)
                if (spec.route(c, i, j) > 0.0) ts.dirs.push_back({i, j, c});
    ts.into.assign(m1, std::vector<std::vector<int>>(nc));
    ts.out_of.assign(m1, std::vector<std::vector<int>>(nc));
    for (int k = 0; k < ts.size(); ++k) {
        const Direction& d = ts.dirs[static_cast<size_t>(k)];
        ts.into[d.dest][d.cls].push_back(k);
        ts.out_of[d.origin][d.cls].push_back(k);
    }
    return ts;
}

// Cumulative event counts per direction (state of the counting process).
using CountVector = std::vector<int>;

// Per-station per-class queue lengths derived from counts; negative values are
// representable under the augmented model. Delay occupancy is tracked per class
// for closed systems.
struct QueueVector {
    int num_stations = 0; // M + 1
    int num_classes = 0;
    std::vector<int> x;       // station-major over stations 1..M
    std::vector<int> delay;   // closed systems: per-class node-0 occupancy

    int at(int station, int cls) const {
        return x[static_cast<size_t>((station - 1) * num_classes + cls)];
    }
    int& at(int station, int cls) {
        return x[static_cast<size_t>((station - 1) * num_classes + cls)];
    }
};

inline QueueVector counts_to_queue_lengths(const CountVector& y, const NetworkSpec& spec,
                                           const TransitionSet& ts) {
    QueueVector q;
    q.num_stations = spec.num_stations();
    q.num_classes = spec.num_classes();
    q.x.assign(static_cast<size_t>((q.num_stations - 1) * q.num_classes), 0);
    for (int i = 1; i < q.num_stations; ++i)
        for (int c = 0; c < q.num_classes; ++c) {
            int v = 0;
            for (int k : ts.into[i][c]) v += y[static_cast<size_t>(k)];
            for (int k : ts.out_of[i][c]) v -= y[static_cast<size_t>(k)];
            q.at(i, c) = v;
        }
    if (spec.kind == NetworkKind::CLOSED) {
        q.delay.assign(static_cast<size_t>(q.num_classes), 0);
        for (int c = 0; c < q.num_classes; ++c) {
            int v = spec.population;
            for (int k : ts.into[0][c]) v += y[static_cast<size_t>(k)];
            for (int k : ts.out_of[0][c]) v -= y[static_cast<size_t>(k)];
            q.delay[static_cast<size_t>(c)] = v;
        }
    }
    return q;
}

namespace detail {

// PS capacity fraction min(K / total, 1) with the 0/0 := 0 handling folded into
// the caller (x = 0 always yields load 0); total <= 0 with x > 0 falls out of the
// raw formula and is clamped later in the generator.
inline double ps_fraction(double servers, int total) {
    if (total == 0) return 1.0;
    return std::min(servers / static_cast<double>(total), 1.0);
}

} // namespace detail

// Effective number of busy class-c servers at station i (may be negative under
// augmentation; the generator clamps at zero).
inline double station_load(const QueueVector& q, int station, int cls, const NetworkSpec& spec) {
    const Station& st = spec.stations[static_cast<size_t>(station)];
    if (station == 0) {
        if (st.discipline == Discipline::SOURCE_SINK) return 1.0;
        return static_cast<double>(q.delay[static_cast<size_t>(cls)]); // each delayed job is its own server
    }
    const int x = q.at(station, cls);
    switch (st.discipline) {
        case Discipline::INF:
            return static_cast<double>(x);
        case Discipline::FCFS: {
            if (spec.num_classes() > 1 && st.multiclass_as_ps) break; // PS formula below
            return std::min(static_cast<double>(st.servers), static_cast<double>(x));
        }
        case Discipline::PS:
            break;
        case Discipline::PRIORITY_FCFS: {
            const int myprio = spec.classes[static_cast<size_t>(cls)].priority;
            for (int c2 = 0; c2 < spec.num_classes(); ++c2)
                if (spec.classes[static_cast<size_t>(c2)].priority < myprio && q.at(station, c2) >= 1)
                    return 0.0;
            return std::min(static_cast<double>(st.servers), static_cast<double>(x));
        }
        default:
            throw ConfigError("delay/source discipline only valid at node 0");
    }
    // processor sharing
    if (x == 0) return 0.0;
    int total = 0;
    for (int c2 = 0; c2 < spec.num_classes(); ++c2) total += q.at(station, c2);
    return static_cast<double>(x)
        * detail::ps_fraction(st.infinite_servers() ? std::numeric_limits<double>::infinity()
                                                    : static_cast<double>(st.servers),
                              total);
}

inline double station_load(const CountVector& y, int station, int cls, const NetworkSpec& spec,
                           const TransitionSet& ts) {
    return station_load(counts_to_queue_lengths(y, spec, ts), station, cls, spec);
}

// Per-direction transition rates; lambda_{i,j,c} = mu_i^c * p_{i,j}^c when built
// from service rates.
using RateVector = std::vector<double>;

// mu indexed [station][class].
inline RateVector rates_from_service(const std::vector<std::vector<double>>& mu,
                                     const NetworkSpec& spec, const TransitionSet& ts) {
    RateVector lam(static_cast<size_t>(ts.size()), 0.0);
    for (int k = 0; k < ts.size(); ++k) {
        const Direction& d = ts[k];
        lam[static_cast<size_t>(k)] = mu[static_cast<size_t>(d.origin)][static_cast<size_t>(d.cls)]
            * spec.route(d.cls, d.origin, d.dest);
    }
    return lam;
}

// Generator entry Xi_{y,eta} = delta + lambda_eta * [load v 0] of the augmented
// counting process.
inline double generator_rate(const QueueVector& q, int dir_index, const RateVector& lambda,
                             double delta, const NetworkSpec& spec, const TransitionSet& ts) {
    const Direction& d = ts[dir_index];
    const double load = station_load(q, d.origin, d.cls, spec);
    return delta + lambda[static_cast<size_t>(dir_index)] * std::max(load, 0.0);
}

inline double generator_rate(const CountVector& y, int dir_index, const RateVector& lambda,
                             double delta, const NetworkSpec& spec, const TransitionSet& ts) {
    return generator_rate(counts_to_queue_lengths(y, spec, ts), dir_index, lambda, delta, spec, ts);
}

// Total exit rate sum_eta Xi_{y,eta}.
inline double total_exit_rate(const CountVector& y, const RateVector& lambda, double delta,
                              const NetworkSpec& spec, const TransitionSet& ts) {
    const QueueVector q = counts_to_queue_lengths(y, spec, ts);
    double r = 0.0;
    for (int k = 0; k < ts.size(); ++k) r += generator_rate(q, k, lambda, delta, spec, ts);
    return r;
}

} // namespace qnet
