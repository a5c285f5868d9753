#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qnet/baselines.hpp"
#include "qnet/config.hpp"
#include "qnet/io.hpp"
#include "qnet/meanfield.hpp"
#include "qnet/netmodel.hpp"
#include "qnet/simulate.hpp"

namespace fs = std::filesystem;
using namespace qnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

int observation_support(const ProjectConfig& cfg, const ObservationSet& obs) {
    if (cfg.observation.support > 0) return cfg.observation.support;
    if (cfg.network.kind == NetworkKind::CLOSED) return cfg.network.population;
    int mx = 0;
    for (const auto& row : obs.values)
        for (int v : row) mx = std::max(mx, v);
    return std::max(4 * mx, 10);
}

int cmd_simulate(const std::string& config_path, std::uint64_t seed, const std::string& out_dir,
                 double delta, std::uint64_t max_events) {
    Timer timer;
    const ProjectConfig cfg = load_config(config_path);
    const TransitionSet ts = build_transition_set(cfg.network);
    const RateVector lambda = cfg.true_rates(ts);
    for (int k = 0; k < ts.size(); ++k)
        if (!(lambda[static_cast<size_t>(k)] > 0.0))
            throw ConfigError("simulation requires positive rates; station "
                              + std::to_string(ts[k].origin) + " has none configured");

    fs::create_directories(out_dir);
    const Trajectory traj = gillespie_sample(cfg.network, ts, lambda, cfg.horizon, delta, seed, max_events);

    ObservationModel model = cfg.observation_model();
    if (model.support == 0) {
        int mx = 0;
        for (const auto& [station, cls] : cfg.observation.monitored)
            for (double t : cfg.observation.times) {
                const CountVector y = traj.counts_at(t, ts.size());
                const QueueVector q = counts_to_queue_lengths(y, cfg.network, ts);
                mx = std::max(mx, station == 0 ? q.delay[static_cast<size_t>(cls)] : q.at(station, cls));
            }
        model.support = std::max(4 * mx, 10);
    }

    ObservationSet obs;
    if (!cfg.observation.times.empty() && !cfg.observation.monitored.empty()) {
        obs = sample_observations(traj, cfg.observation.times, cfg.observation.monitored, model,
                                  cfg.network, ts, seed + 0x9e3779b97f4a7c15ull);
    } else {
        obs.monitored = cfg.observation.monitored;
        obs.model = model;
    }

    const std::string traj_path = (fs::path(out_dir) / "trajectory.csv").string();
    const std::string obs_path = (fs::path(out_dir) / "observations.csv").string();
    write_trajectory_csv(traj_path, traj, ts, cfg.network);
    write_observations_csv(obs_path, obs, cfg.network);

    RunManifest man;
    man.command = "simulate";
    man.config_path = config_path;
    man.seed = seed;
    man.flags = {{"delta", delta}, {"horizon", cfg.horizon}, {"epsilon", model.epsilon},
                 {"support", model.support}, {"events", traj.num_events()}};
    man.outputs = {traj_path, obs_path};
    man.wall_seconds = timer.seconds();
    man.write(out_dir);
    std::cout << "simulate: " << traj.num_events() << " events, " << obs.num_times()
              << " observation times -> " << out_dir << "\n";
    return kExitOk;
}

int cmd_infer(const std::string& config_path, const std::string& obs_path, const std::string& out_dir,
              int grid, double nu_bar, double delta, double tol, int max_iters, double epsilon,
              int threads) {
    Timer timer;
    const ProjectConfig cfg = load_config(config_path);
    const TransitionSet ts = build_transition_set(cfg.network);

    ObservationSet obs = read_observations_csv(obs_path, cfg);
    for (const auto& [station, cls] : obs.monitored) {
        bool known = false;
        for (const auto& mc : cfg.observation.monitored) known |= mc == std::make_pair(station, cls);
        if (!cfg.observation.monitored.empty() && !known)
            throw ConfigError("observation file monitors station " + std::to_string(station)
                              + " which the config does not list");
    }
    obs.model = cfg.observation_model();
    if (epsilon >= 0.0) obs.model.epsilon = epsilon;
    if (obs.model.epsilon <= 0.0) obs.model.epsilon = 1e-3; // exact snapshots are regularized
    obs.model.kind = ObservationKind::REGULARIZED_COUNT;
    obs.model.support = observation_support(cfg, obs);

    for (size_t k = 1; k < obs.times.size(); ++k)
        if (cfg.horizon / grid > obs.times[k] - obs.times[k - 1] + 1e-12)
            throw ConfigError("--grid " + std::to_string(grid)
                              + " is coarser than the observation spacing");

    EngineConfig ecfg;
    ecfg.delta = delta;
    ecfg.nu_bar = nu_bar;
    ecfg.dt = cfg.horizon / grid;
    ecfg.tol = tol;
    ecfg.max_iters = max_iters;
    ecfg.threads = threads;

    const std::vector<RatePosterior> priors = cfg.direction_priors(ts);
    const InferenceResult res = run_coordinate_ascent(cfg.network, priors, obs, cfg.horizon, ecfg);

    fs::create_directories(out_dir);
    std::vector<SummaryRow> rows;
    for (const ServiceRateSummary& sr : res.service_rates)
        rows.push_back(gamma_summary(rate_label(cfg.network, sr.station, sr.cls), sr.shape, sr.rate));
    const std::string summary_path = (fs::path(out_dir) / "posterior_summary.csv").string();
    const std::string bands_path = (fs::path(out_dir) / "credible_bands.csv").string();
    const std::string elbo_path = (fs::path(out_dir) / "elbo_trace.csv").string();
    const std::string routing_path = (fs::path(out_dir) / "routing_summary.csv").string();
    write_summary_csv(summary_path, rows);
    write_bands_csv(bands_path, res.state);
    write_elbo_csv(elbo_path, res.elbo_trace);
    write_routing_csv(routing_path, res);

    std::string status = "converged";
    if (res.elbo_decrease_flagged) status = "flagged-elbo-decrease";
    else if (!res.converged && max_iters > 0) status = "max-iters";

    RunManifest man;
    man.command = "infer";
    man.config_path = config_path;
    man.flags = {{"grid", grid},       {"nu_bar", nu_bar},       {"delta", delta},
                 {"tol", tol},         {"max_iters", max_iters}, {"epsilon", obs.model.epsilon},
                 {"support", obs.model.support}, {"iterations", res.iterations}};
    man.outputs = {summary_path, bands_path, elbo_path, routing_path};
    man.status = status;
    man.wall_seconds = timer.seconds();
    man.write(out_dir);

    for (const std::string& w : res.state.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "infer: " << status << " after " << res.iterations << " iterations -> " << out_dir
              << "\n";
    return status == "converged" || max_iters == 0 ? kExitOk : kExitNumerical;
}

int cmd_mcmc(const std::string& config_path, const std::string& obs_path, const std::string& out_dir,
             int samples, int burn, std::uint64_t seed, double scale) {
    Timer timer;
    const ProjectConfig cfg = load_config(config_path);
    if (cfg.network.kind != NetworkKind::CLOSED || cfg.network.num_stations() != 2)
        throw ConfigError("the stationary baseline is closed-loop only (one station plus a delay)");
    if (samples <= burn || burn < 0) throw ConfigError("need --samples > --burn >= 0");

    ObservationSet obs = read_observations_csv(obs_path, cfg);
    obs.model = cfg.observation_model();
    obs.model.support = observation_support(cfg, obs);
    if (obs.model.epsilon <= 0.0) obs.model.epsilon = 1e-3;

    const RateEntry* delay = cfg.rate_entry(0, 0);
    const RateEntry* service = cfg.rate_entry(1, 0);
    if (!delay || delay->infer) throw ConfigError("the delay rate mu0 must be fixed for identifiability");
    if (!service || !service->infer) throw ConfigError("the service rate must be marked infer");

    MCMCConfig mc;
    mc.n_samples = samples;
    mc.burn_in = burn;
    mc.seed = seed;
    if (scale > 0.0) {
        mc.proposal_scale = scale;
        mc.auto_tune = false;
    }
    const RatePosterior prior = RatePosterior::gamma_prior(service->prior_shape, service->prior_rate);
    const MCMCResult res = metropolis_hastings(prior, obs, delay->value, cfg.network.population, mc);

    fs::create_directories(out_dir);
    const std::string chain_path = (fs::path(out_dir) / "chain.csv").string();
    const std::string summary_path = (fs::path(out_dir) / "posterior_summary.csv").string();
    write_chain_csv(chain_path, res.samples);
    write_summary_csv(summary_path, {sample_summary(rate_label(cfg.network, 1, 0), res.samples)});

    RunManifest man;
    man.command = "mcmc";
    man.config_path = config_path;
    man.seed = seed;
    man.flags = {{"samples", samples}, {"burn", burn}, {"proposal_scale", res.proposal_scale},
                 {"acceptance_rate", res.acceptance_rate}};
    man.outputs = {chain_path, summary_path};
    man.wall_seconds = timer.seconds();
    man.write(out_dir);

    for (const std::string& w : res.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "mcmc: acceptance " << res.acceptance_rate << " -> " << out_dir << "\n";
    return kExitOk;
}

int cmd_report(const std::vector<std::string>& result_dirs, const std::string& out_path) {
    std::vector<std::vector<SummaryRow>> all;
    std::vector<std::string> labels;
    for (const std::string& dir : result_dirs) {
        all.push_back(read_summary_csv((fs::path(dir) / "posterior_summary.csv").string()));
        labels.push_back(fs::path(dir).filename().string());
    }
    for (size_t i = 1; i < all.size(); ++i) {
        std::string missing;
        for (const SummaryRow& r : all[0]) {
            bool found = false;
            for (const SummaryRow& q : all[i]) found |= q.rate == r.rate;
            if (!found) missing += " " + r.rate;
        }
        for (const SummaryRow& q : all[i]) {
            bool found = false;
            for (const SummaryRow& r : all[0]) found |= q.rate == r.rate;
            if (!found) missing += " " + q.rate;
        }
        if (!missing.empty()) throw ConfigError("result dirs disagree on the rate set:" + missing);
    }

    csv::Writer w(out_path);
    std::vector<std::string> header{"rate"};
    for (const std::string& l : labels)
        for (const char* col : {"mean", "sd", "q2.5", "q97.5"}) header.push_back(l + ":" + col);
    w.row(header);
    for (const SummaryRow& r : all[0]) {
        std::vector<std::string> row{r.rate};
        for (size_t i = 0; i < all.size(); ++i)
            for (const SummaryRow& q : all[i])
                if (q.rate == r.rate) {
                    row.push_back(csv::num(q.mean));
                    row.push_back(csv::num(q.sd));
                    row.push_back(csv::num(q.q025));
                    row.push_back(csv::num(q.q975));
                }
        w.row(row);
    }
    std::cout << "report: " << all[0].size() << " rates x " << labels.size() << " runs -> " << out_path
              << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bayesian mean-field inference for partially observed queueing networks"};
    app.require_subcommand(1);

    std::string config_path, obs_path, out_dir = "out", report_out = "report.csv";
    std::vector<std::string> result_dirs;
    std::uint64_t seed = 1;
    double delta = 1e-6, nu_bar = 50.0, tol = 1e-6, epsilon = -1.0, scale = -1.0;
    std::uint64_t max_events = 10'000'000;
    int grid = 2000, max_iters = 100, samples = 100000, burn = 10000, threads = 0;

    double sim_delta = 0.0;
    CLI::App* sim = app.add_subcommand("simulate", "sample a trajectory and noisy observations");
    sim->add_option("config", config_path, "network config (json)")->required();
    sim->add_option("--seed", seed, "rng seed");
    sim->add_option("--out", out_dir, "output directory");
    sim->add_option("--delta", sim_delta, "augmentation rate floor (0 = exact model)");
    sim->add_option("--max-events", max_events, "explosion guard");

    CLI::App* inf = app.add_subcommand("infer", "run mean-field coordinate ascent");
    inf->add_option("config", config_path)->required();
    inf->add_option("observations", obs_path, "observations.csv from simulate")->required();
    inf->add_option("--grid", grid, "time-grid intervals (dt = T/grid)");
    inf->add_option("--nu-bar", nu_bar, "intensity cap (inf for the uncapped mode)");
    inf->add_option("--delta", delta, "augmentation rate");
    inf->add_option("--tol", tol, "relative ELBO convergence tolerance");
    inf->add_option("--max-iters", max_iters, "iteration cap (0 = output priors verbatim)");
    inf->add_option("--epsilon", epsilon, "override observation error rate");
    inf->add_option("--threads", threads, "worker threads (default QNET_THREADS or all cores)");
    inf->add_option("--out", out_dir);

    CLI::App* mcmc = app.add_subcommand("mcmc", "stationary-likelihood Metropolis-Hastings baseline");
    mcmc->add_option("config", config_path)->required();
    mcmc->add_option("observations", obs_path)->required();
    mcmc->add_option("--samples", samples);
    mcmc->add_option("--burn", burn);
    mcmc->add_option("--seed", seed);
    mcmc->add_option("--scale", scale, "log-normal proposal sd (default: pilot-tuned)");
    mcmc->add_option("--out", out_dir);

    CLI::App* rep = app.add_subcommand("report", "merge posterior summaries side by side");
    rep->add_option("dirs", result_dirs, "result directories")->required()->expected(-1);
    rep->add_option("--out", report_out, "merged csv path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (sim->parsed()) return cmd_simulate(config_path, seed, out_dir, sim_delta, max_events);
        if (inf->parsed())
            return cmd_infer(config_path, obs_path, out_dir, grid, nu_bar, delta, tol, max_iters,
                             epsilon, threads);
        if (mcmc->parsed()) return cmd_mcmc(config_path, obs_path, out_dir, samples, burn, seed, scale);
        if (rep->parsed()) return cmd_report(result_dirs, report_out);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const EngineError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const SimulationError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    }
    return kExitOk;
}
