#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qnet/config.hpp"
#include "qnet/meanfield.hpp"
#include "qnet/simulate.hpp"

namespace qnet {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace csv {

inline std::string quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

inline std::string num(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') { cur += '"'; ++i; }
                else quoted = false;
            } else cur += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct Writer {
    std::ofstream out;

    explicit Writer(const std::string& path) : out(path) {
        if (!out) throw IoError("cannot open for writing: " + path);
    }
    void row(const std::vector<std::string>& fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ',';
            out << quote(fields[i]);
        }
        out << '\n';
    }
};

struct Reader {
    std::ifstream in;
    std::vector<std::string> header;

    explicit Reader(const std::string& path) : in(path) {
        if (!in) throw IoError("cannot open for reading: " + path);
        std::string line;
        if (!std::getline(in, line)) throw IoError("empty CSV: " + path);
        header = split_line(line);
    }
    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            fields = split_line(line);
            return true;
        }
        return false;
    }
};

} // namespace csv

// FNV-1a 64-bit content digest, hex encoded; stable across platforms.
inline std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << h;
    return ss.str();
}

inline std::string digest_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot digest missing file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return fnv1a64_hex(ss.str());
}

// --- trajectory / observation serialization --------------------------------

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj,
                                 const TransitionSet& ts, const NetworkSpec& spec) {
    csv::Writer w(path);
    w.row({"time", "origin", "dest", "class"});
    for (size_t i = 0; i < traj.times.size(); ++i) {
        const Direction& d = ts[traj.events[i]];
        w.row({csv::num(traj.times[i]), std::to_string(d.origin), std::to_string(d.dest),
               spec.classes[static_cast<size_t>(d.cls)].name});
    }
}

inline Trajectory read_trajectory_csv(const std::string& path, double horizon,
                                      const TransitionSet& ts, const ProjectConfig& cfg) {
    csv::Reader r(path);
    if (r.header != std::vector<std::string>{"time", "origin", "dest", "class"})
        throw IoError("unexpected trajectory header in " + path);
    Trajectory traj;
    traj.horizon = horizon;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 4) throw IoError("bad trajectory row in " + path);
        const int k = ts.find(std::stoi(f[1]), std::stoi(f[2]), cfg.class_index(f[3]));
        if (k < 0) throw IoError("trajectory row names an infeasible transition in " + path);
        traj.times.push_back(std::stod(f[0]));
        traj.events.push_back(k);
    }
    return traj;
}

inline void write_observations_csv(const std::string& path, const ObservationSet& obs,
                                   const NetworkSpec& spec) {
    csv::Writer w(path);
    w.row({"time", "station", "class", "value"});
    for (size_t k = 0; k < obs.times.size(); ++k)
        for (size_t m = 0; m < obs.monitored.size(); ++m)
            w.row({csv::num(obs.times[k]), std::to_string(obs.monitored[m].first),
                   spec.classes[static_cast<size_t>(obs.monitored[m].second)].name,
                   std::to_string(obs.values[k][m])});
}

// Reads rows back into an ObservationSet; the monitored layout is taken from the
// first time block and must repeat identically.
inline ObservationSet read_observations_csv(const std::string& path, const ProjectConfig& cfg) {
    csv::Reader r(path);
    if (r.header != std::vector<std::string>{"time", "station", "class", "value"})
        throw IoError("unexpected observations header in " + path);
    ObservationSet obs;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 4) throw IoError("bad observation row in " + path);
        const double t = std::stod(f[0]);
        const std::pair<int, int> node{std::stoi(f[1]), cfg.class_index(f[2])};
        if (obs.times.empty() || t > obs.times.back() + 1e-12) {
            obs.times.push_back(t);
            obs.values.emplace_back();
        } else if (std::fabs(t - obs.times.back()) > 1e-12) {
            throw IoError("observation times must be grouped and increasing in " + path);
        }
        if (obs.times.size() == 1) obs.monitored.push_back(node);
        else {
            const size_t idx = obs.values.back().size();
            if (idx >= obs.monitored.size() || obs.monitored[idx] != node)
                throw IoError("inconsistent monitored-node layout in " + path);
        }
        obs.values.back().push_back(std::stoi(f[3]));
    }
    for (const auto& row : obs.values)
        if (row.size() != obs.monitored.size())
            throw IoError("ragged observation rows in " + path);
    return obs;
}

// --- inference reports ------------------------------------------------------

inline std::string rate_label(const NetworkSpec& spec, int station, int cls) {
    return "mu_" + std::to_string(station) + "_" + spec.classes[static_cast<size_t>(cls)].name;
}

struct SummaryRow {
    std::string rate;
    double mean = 0, sd = 0, q025 = 0, q25 = 0, q50 = 0, q75 = 0, q975 = 0;
};

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
    csv::Writer w(path);
    w.row({"rate", "mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"});
    for (const SummaryRow& r : rows)
        w.row({r.rate, csv::num(r.mean), csv::num(r.sd), csv::num(r.q025), csv::num(r.q25),
               csv::num(r.q50), csv::num(r.q75), csv::num(r.q975)});
}

inline std::vector<SummaryRow> read_summary_csv(const std::string& path) {
    csv::Reader r(path);
    std::vector<SummaryRow> rows;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 8) throw IoError("bad summary row in " + path);
        rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                        std::stod(f[5]), std::stod(f[6]), std::stod(f[7])});
    }
    return rows;
}

inline SummaryRow gamma_summary(const std::string& label, double shape, double rate) {
    SummaryRow r;
    r.rate = label;
    r.mean = gamma_mean(shape, rate);
    r.sd = gamma_sd(shape, rate);
    r.q025 = gamma_quantile(shape, rate, 0.025);
    r.q25 = gamma_quantile(shape, rate, 0.25);
    r.q50 = gamma_quantile(shape, rate, 0.50);
    r.q75 = gamma_quantile(shape, rate, 0.75);
    r.q975 = gamma_quantile(shape, rate, 0.975);
    return r;
}

inline SummaryRow sample_summary(const std::string& label, std::vector<double> xs) {
    if (xs.empty()) throw IoError("cannot summarize an empty sample");
    SummaryRow r;
    r.rate = label;
    double s = 0, s2 = 0;
    for (double x : xs) { s += x; s2 += x * x; }
    r.mean = s / static_cast<double>(xs.size());
    r.sd = std::sqrt(std::max(0.0, s2 / static_cast<double>(xs.size()) - r.mean * r.mean));
    std::sort(xs.begin(), xs.end());
    auto q = [&](double p) {
        const double idx = p * (static_cast<double>(xs.size()) - 1.0);
        const size_t lo = static_cast<size_t>(idx);
        const double w = idx - static_cast<double>(lo);
        return lo + 1 < xs.size() ? xs[lo] * (1.0 - w) + xs[lo + 1] * w : xs.back();
    };
    r.q025 = q(0.025);
    r.q25 = q(0.25);
    r.q50 = q(0.50);
    r.q75 = q(0.75);
    r.q975 = q(0.975);
    return r;
}

// Credible bands per (station, class, grid node); quantiles condition on the
// non-negative support, with the discarded negative mass reported alongside.
inline void write_bands_csv(const std::string& path, const VariationalState& st) {
    csv::Writer w(path);
    w.row({"time", "station", "class", "mean", "q2.5", "q97.5", "negative_mass"});
    for (int i = 1; i < st.spec.num_stations(); ++i)
        for (int c = 0; c < st.spec.num_classes(); ++c) {
            if (st.ts.into[i][c].empty() && st.ts.out_of[i][c].empty()) continue;
            for (int node = 0; node < st.grid.size(); ++node) {
                const QueueDistribution qd = queue_length_distribution(st, i, c, node);
                const double pos = 1.0 - qd.negative_mass;
                double mean = 0.0, acc = 0.0, lo = 0.0, hi = 0.0;
                bool lo_set = false;
                for (int v = std::max(0, qd.dist.lo()); v <= qd.dist.hi(); ++v) {
                    const double p = qd.dist.at(v) / std::max(pos, 1e-300);
                    mean += p * v;
                    acc += p;
                    if (!lo_set && acc >= 0.025) { lo = v; lo_set = true; }
                    if (acc < 0.975) hi = v;
                }
                w.row({csv::num(st.grid.nodes[static_cast<size_t>(node)]), std::to_string(i),
                       st.spec.classes[static_cast<size_t>(c)].name, csv::num(mean), csv::num(lo),
                       csv::num(hi), csv::num(qd.negative_mass)});
            }
        }
}

inline void write_elbo_csv(const std::string& path, const std::vector<double>& trace) {
    csv::Writer w(path);
    w.row({"iteration", "elbo"});
    for (size_t i = 0; i < trace.size(); ++i)
        w.row({std::to_string(i + 1), csv::num(trace[i])});
}

inline void write_routing_csv(const std::string& path, const InferenceResult& res) {
    csv::Writer w(path);
    w.row({"origin", "dest", "class", "p_mean", "dirichlet_concentration"});
    for (const RoutingSummary& r : res.routing)
        w.row({std::to_string(r.dir.origin), std::to_string(r.dir.dest),
               res.state.spec.classes[static_cast<size_t>(r.dir.cls)].name, csv::num(r.p_mean),
               csv::num(r.concentration)});
}

inline void write_chain_csv(const std::string& path, const std::vector<double>& samples) {
    csv::Writer w(path);
    w.row({"sample", "lambda"});
    for (size_t i = 0; i < samples.size(); ++i) w.row({std::to_string(i + 1), csv::num(samples[i])});
}

// --- run manifest -----------------------------------------------------------

struct RunManifest {
    std::string command;
    std::string config_path;
    std::uint64_t seed = 0;
    nlohmann::json flags;
    std::vector<std::string> outputs;
    std::string status = "ok";
    double wall_seconds = 0.0;

    void write(const std::string& dir) const {
        nlohmann::json j;
        j["command"] = command;
        j["version"] = "0.1.0";
        if (!config_path.empty()) {
            j["config"] = {{"path", config_path}, {"fnv1a64", digest_file(config_path)}};
        }
        j["seed"] = seed;
        j["flags"] = flags;
        j["status"] = status;
        j["wall_seconds"] = wall_seconds;
        j["outputs"] = nlohmann::json::array();
        for (const std::string& p : outputs)
            j["outputs"].push_back({{"path", std::filesystem::path(p).filename().string()},
                                    {"fnv1a64", digest_file(p)}});
        std::ofstream out(std::filesystem::path(dir) / "manifest.json");
        if (!out) throw IoError("cannot write manifest in " + dir);
        out << j.dump(2) << '\n';
    }
};

} // namespace qnet
