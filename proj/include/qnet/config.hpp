#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qnet/meanfield.hpp"
#include "qnet/netmodel.hpp"
#include "qnet/simulate.hpp"

namespace qnet {

// One per-(station, class) rate entry: the simulation truth and, when inferred,
// the Gamma prior shared by every outgoing direction of that pair.
struct RateEntry {
    int station = 0;
    int cls = 0;
    double value = 0.0;  // service rate used for simulation / as the fixed rate
    bool infer = false;
    double prior_shape = 1.0;
    double prior_rate = 1.0;
};

struct ObservationPlan {
    std::vector<double> times;
    std::vector<std::pair<int, int>> monitored;
    double epsilon = 0.0;
    int support = 0; // 0 = auto (population for closed, data-driven cap for open)
};

struct ProjectConfig {
    NetworkSpec network;
    std::vector<RateEntry> rates;
    ObservationPlan observation;
    double horizon = 0.0;

    int class_index(const std::string& name) const {
        for (int c = 0; c < network.num_classes(); ++c)
            if (network.classes[static_cast<size_t>(c)].name == name) return c;
        throw ConfigError("unknown job class '" + name + "'");
    }

    const RateEntry* rate_entry(int station, int cls) const {
        for (const RateEntry& r : rates)
            if (r.station == station && r.cls == cls) return &r;
        return nullptr;
    }

    std::vector<std::vector<double>> service_matrix() const {
        std::vector<std::vector<double>> mu(static_cast<size_t>(network.num_stations()),
                                            std::vector<double>(static_cast<size_t>(network.num_classes()), 0.0));
        for (const RateEntry& r : rates)
            mu[static_cast<size_t>(r.station)][static_cast<size_t>(r.cls)] = r.value;
        return mu;
    }

    // Per-direction priors for the engine; fixed entries pin lambda = mu * p.
    std::vector<RatePosterior> direction_priors(const TransitionSet& ts) const {
        std::vector<RatePosterior> priors;
        priors.reserve(static_cast<size_t>(ts.size()));
        for (int k = 0; k < ts.size(); ++k) {
            const Direction& d = ts[k];
            const RateEntry* e = rate_entry(d.origin, d.cls);
            if (!e)
                throw ConfigError("no rate entry for station " + std::to_string(d.origin) + " class "
                                  + network.classes[static_cast<size_t>(d.cls)].name);
            if (e->infer) priors.push_back(RatePosterior::gamma_prior(e->prior_shape, e->prior_rate));
            else priors.push_back(RatePosterior::fixed_rate(e->value * network.route(d.cls, d.origin, d.dest)));
        }
        return priors;
    }

    RateVector true_rates(const TransitionSet& ts) const {
        return rates_from_service(service_matrix(), network, ts);
    }

    ObservationModel observation_model() const {
        ObservationModel m;
        m.epsilon = observation.epsilon;
        m.kind = observation.epsilon == 0.0 ? ObservationKind::EXACT_SNAPSHOT
                                            : ObservationKind::REGULARIZED_COUNT;
        m.support = observation.support > 0
            ? observation.support
            : (network.kind == NetworkKind::CLOSED ? network.population : 0);
        return m;
    }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

inline Discipline parse_discipline(const std::string& s) {
    if (s == "fcfs") return Discipline::FCFS;
    if (s == "ps") return Discipline::PS;
    if (s == "inf") return Discipline::INF;
    if (s == "priority_fcfs") return Discipline::PRIORITY_FCFS;
    if (s == "delay") return Discipline::DELAY;
    if (s == "source_sink") return Discipline::SOURCE_SINK;
    throw ConfigError("unknown discipline '" + s + "'");
}

} // namespace detail

inline ProjectConfig parse_config(const std::string& text) {
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    detail::reject_unknown(j, {"network", "rates", "observation", "horizon"}, "top level");
    if (!j.contains("network") || !j.contains("rates") || !j.contains("horizon"))
        throw ConfigError("config needs 'network', 'rates' and 'horizon'");

    ProjectConfig cfg;
    cfg.horizon = j.at("horizon").get<double>();
    if (!(cfg.horizon > 0.0)) throw ConfigError("horizon must be positive");

    const json& net = j.at("network");
    detail::reject_unknown(net, {"kind", "population", "stations", "classes", "routing"}, "network");
    const std::string kind = net.at("kind").get<std::string>();
    if (kind == "open") cfg.network.kind = NetworkKind::OPEN;
    else if (kind == "closed") cfg.network.kind = NetworkKind::CLOSED;
    else throw ConfigError("network.kind must be 'open' or 'closed'");
    if (cfg.network.kind == NetworkKind::CLOSED) {
        if (!net.contains("population")) throw ConfigError("closed network needs 'population'");
        cfg.network.population = net.at("population").get<int>();
    } else if (net.contains("population")) {
        throw ConfigError("'population' is only valid for closed networks");
    }

    for (const json& js : net.at("stations")) {
        detail::reject_unknown(js, {"index", "discipline", "servers", "multiclass_as_ps"},
                               "network.stations[]");
        Station st;
        st.index = js.at("index").get<int>();
        st.discipline = detail::parse_discipline(js.at("discipline").get<std::string>());
        if (js.contains("servers")) {
            if (js.at("servers").is_string()) {
                if (js.at("servers").get<std::string>() != "inf")
                    throw ConfigError("servers must be an integer or \"inf\"");
                st.servers = Station::kInfServers;
            } else {
                st.servers = js.at("servers").get<int>();
            }
        } else if (st.discipline == Discipline::INF || st.discipline == Discipline::DELAY
                   || st.discipline == Discipline::SOURCE_SINK) {
            st.servers = Station::kInfServers;
        }
        if (js.contains("multiclass_as_ps")) st.multiclass_as_ps = js.at("multiclass_as_ps").get<bool>();
        cfg.network.stations.push_back(st);
    }
    std::sort(cfg.network.stations.begin(), cfg.network.stations.end(),
              [](const Station& a, const Station& b) { return a.index < b.index; });

    for (const json& jc : net.at("classes")) {
        detail::reject_unknown(jc, {"name", "priority"}, "network.classes[]");
        JobClass c;
        c.name = jc.at("name").get<std::string>();
        if (jc.contains("priority")) c.priority = jc.at("priority").get<int>();
        cfg.network.classes.push_back(c);
    }

    const json& routing = net.at("routing");
    cfg.network.routing.assign(static_cast<size_t>(cfg.network.num_classes()), {});
    for (auto it = routing.begin(); it != routing.end(); ++it) {
        const int c = cfg.class_index(it.key());
        cfg.network.routing[static_cast<size_t>(c)] = it.value().get<std::vector<std::vector<double>>>();
    }
    for (int c = 0; c < cfg.network.num_classes(); ++c)
        if (cfg.network.routing[static_cast<size_t>(c)].empty())
            throw ConfigError("missing routing matrix for class "
                              + cfg.network.classes[static_cast<size_t>(c)].name);
    cfg.network.validate();

    for (const json& jr : j.at("rates")) {
        detail::reject_unknown(jr, {"station", "class", "value", "infer", "prior"}, "rates[]");
        RateEntry e;
        e.station = jr.at("station").get<int>();
        e.cls = cfg.class_index(jr.at("class").get<std::string>());
        if (jr.contains("value")) e.value = jr.at("value").get<double>();
        if (jr.contains("infer")) e.infer = jr.at("infer").get<bool>();
        if (e.infer) {
            if (!jr.contains("prior")) throw ConfigError("inferred rate needs a 'prior'");
            const json& jp = jr.at("prior");
            detail::reject_unknown(jp, {"shape", "rate"}, "rates[].prior");
            e.prior_shape = jp.at("shape").get<double>();
            e.prior_rate = jp.at("rate").get<double>();
            if (!(e.prior_shape > 0.0 && e.prior_rate > 0.0))
                throw ConfigError("Gamma prior parameters must be positive");
        } else if (!(e.value > 0.0)) {
            throw ConfigError("fixed rate at station " + std::to_string(e.station) + " must be positive");
        }
        cfg.rates.push_back(e);
    }

    if (j.contains("observation")) {
        const json& jo = j.at("observation");
        detail::reject_unknown(jo, {"count", "times", "epsilon", "support", "monitor"}, "observation");
        if (jo.contains("times")) {
            cfg.observation.times = jo.at("times").get<std::vector<double>>();
        } else if (jo.contains("count")) {
            const int k = jo.at("count").get<int>();
            if (k < 0) throw ConfigError("observation.count must be >= 0");
            for (int i = 1; i <= k; ++i) cfg.observation.times.push_back(cfg.horizon * i / k);
        }
        if (!std::is_sorted(cfg.observation.times.begin(), cfg.observation.times.end()))
            throw ConfigError("observation times must be increasing");
        if (jo.contains("epsilon")) cfg.observation.epsilon = jo.at("epsilon").get<double>();
        if (cfg.observation.epsilon < 0.0 || cfg.observation.epsilon >= 1.0)
            throw ConfigError("epsilon must lie in [0, 1)");
        if (jo.contains("support")) cfg.observation.support = jo.at("support").get<int>();
        if (jo.contains("monitor")) {
            for (const json& jm : jo.at("monitor")) {
                detail::reject_unknown(jm, {"station", "class"}, "observation.monitor[]");
                cfg.observation.monitored.emplace_back(jm.at("station").get<int>(),
                                                       cfg.class_index(jm.at("class").get<std::string>()));
            }
        }
    }

    // rate entries must cover every origin that can emit jobs
    const TransitionSet ts = build_transition_set(cfg.network);
    for (int k = 0; k < ts.size(); ++k)
        if (!cfg.rate_entry(ts[k].origin, ts[k].cls))
            throw ConfigError("missing rate entry for station " + std::to_string(ts[k].origin) + " class "
                              + cfg.network.classes[static_cast<size_t>(ts[k].cls)].name);
    for (const auto& [station, cls] : cfg.observation.monitored) {
        if (station < 0 || station >= cfg.network.num_stations())
            throw ConfigError("monitored station out of range");
        if (station == 0 && cfg.network.kind == NetworkKind::OPEN)
            throw ConfigError("the open-network source node has no queue to monitor");
    }
    return cfg;
}

inline ProjectConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

} // namespace qnet
