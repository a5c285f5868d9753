#include <doctest.h>

#include <cmath>

#include "qnet/mathutil.hpp"
#include "qnet/netmodel.hpp"

using namespace qnet;

namespace {

// Fig. 1 style open bottleneck: source -> {1-FCFS, 2-INF} -> 3-FCFS(2) -> out.
NetworkSpec open_bottleneck() {
    NetworkSpec s;
    s.kind = NetworkKind::OPEN;
    s.stations = {
        {0, Discipline::SOURCE_SINK, Station::kInfServers, false},
        {1, Discipline::FCFS, 1, false},
        {2, Discipline::INF, Station::kInfServers, false},
        {3, Discipline::FCFS, 2, false},
    };
    s.classes = {{"jobs", 0}};
    s.routing = {{
        {0.0, 0.3, 0.7, 0.0},
        {0.0, 0.0, 0.0, 1.0},
        {0.0, 0.0, 0.0, 1.0},
        {1.0, 0.0, 0.0, 0.0},
    }};
    return s;
}

// Single FCFS station plus delay, population N.
NetworkSpec closed_loop(int population) {
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

NetworkSpec ps_priority_pair() {
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

} // namespace

TEST_CASE("transition set of the open bottleneck has five directions") {
    const NetworkSpec s = open_bottleneck();
    const TransitionSet ts = build_transition_set(s);
    CHECK(ts.size() == 5);
    // lexicographic ordering on (origin, dest, class)
    CHECK(ts[0] == Direction{0, 1, 0});
    CHECK(ts[1] == Direction{0, 2, 0});
    CHECK(ts[2] == Direction{1, 3, 0});
    CHECK(ts[3] == Direction{2, 3, 0});
    CHECK(ts[4] == Direction{3, 0, 0});
    // zero-probability edges are absent
    CHECK(ts.find(1, 2, 0) == -1);
    // index sets
    CHECK(ts.into[3][0].size() == 2);
    CHECK(ts.out_of[0][0].size() == 2);
}

TEST_CASE("closed loop has two directions") {
    const TransitionSet ts = build_transition_set(closed_loop(50));
    CHECK(ts.size() == 2);
    CHECK(ts[0] == Direction{0, 1, 0});
    CHECK(ts[1] == Direction{1, 0, 0});
}

TEST_CASE("invalid routing rows are rejected") {
    NetworkSpec s = closed_loop(10);
    s.routing[0][1][0] = 0.5; // row no longer sums to 1
    CHECK_THROWS_AS(build_transition_set(s), ConfigError);
}

TEST_CASE("counts map to queue lengths linearly") {
    const NetworkSpec s = closed_loop(50);
    const TransitionSet ts = build_transition_set(s);

    CountVector y{5, 3}; // y_{0,1} = 5, y_{1,0} = 3
    QueueVector q = counts_to_queue_lengths(y, s, ts);
    CHECK(q.at(1, 0) == 2);
    CHECK(q.delay[0] == 50 - 2);

    CountVector zero{0, 0};
    q = counts_to_queue_lengths(zero, s, ts);
    CHECK(q.at(1, 0) == 0);
    CHECK(q.delay[0] == 50);

    CountVector neg{1, 2}; // augmented model: negative load
    q = counts_to_queue_lengths(neg, s, ts);
    CHECK(q.at(1, 0) == -1);

    // linearity in y (delay occupancy is affine through the population offset)
    RandomStream rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        CountVector a{int(rng.uniform_int(20)), int(rng.uniform_int(20))};
        CountVector b{int(rng.uniform_int(20)), int(rng.uniform_int(20))};
        CountVector sum{a[0] + b[0], a[1] + b[1]};
        const QueueVector qa = counts_to_queue_lengths(a, s, ts);
        const QueueVector qb = counts_to_queue_lengths(b, s, ts);
        const QueueVector qs = counts_to_queue_lengths(sum, s, ts);
        CHECK(qs.at(1, 0) == qa.at(1, 0) + qb.at(1, 0));
    }
}

TEST_CASE("station loads per discipline") {
    const NetworkSpec s = ps_priority_pair();
    const TransitionSet ts = build_transition_set(s);
    QueueVector q;
    q.num_stations = 3;
    q.num_classes = 2;
    q.x.assign(4, 0);

    SUBCASE("processor sharing splits capacity") {
        q.at(1, 0) = 2;
        q.at(1, 1) = 8;
        CHECK(station_load(q, 1, 0, s) == doctest::Approx(2.0 * (5.0 / 10.0)));
        CHECK(station_load(q, 1, 1, s) == doctest::Approx(8.0 * (5.0 / 10.0)));
    }
    SUBCASE("empty PS station has zero load (0/0 = 0)") {
        CHECK(station_load(q, 1, 0, s) == 0.0);
    }
    SUBCASE("PS under capacity serves everyone") {
        q.at(1, 0) = 2;
        q.at(1, 1) = 1;
        CHECK(station_load(q, 1, 0, s) == doctest::Approx(2.0));
    }
    SUBCASE("low priority starves while high priority present") {
        q.at(2, 0) = 1;
        q.at(2, 1) = 4;
        CHECK(station_load(q, 2, 1, s) == 0.0);
        CHECK(station_load(q, 2, 0, s) == 1.0);
    }
    SUBCASE("low priority served when high priority empty") {
        q.at(2, 1) = 4;
        CHECK(station_load(q, 2, 1, s) == 1.0);
    }
    SUBCASE("source load is one") {
        CHECK(station_load(q, 0, 0, s) == 1.0);
        CHECK(station_load(q, 0, 1, s) == 1.0);
    }
}

TEST_CASE("generator rates with clamping and delay occupancy") {
    const NetworkSpec s = closed_loop(50);
    const TransitionSet ts = build_transition_set(s);
    const int up = ts.find(0, 1, 0), down = ts.find(1, 0, 0);
    RateVector lam{0.1, 2.0}; // mu0 = 0.1, mu1 = 2.0

    CountVector y{0, 0}; // empty station, full delay
    CHECK(generator_rate(y, up, lam, 0.0, s, ts) == doctest::Approx(5.0));
    CHECK(generator_rate(y, up, lam, 1e-6, s, ts) == doctest::Approx(1e-6 + 5.0));
    CHECK(generator_rate(y, down, lam, 0.0, s, ts) == 0.0);

    y = {3, 2}; // one job in station
    CHECK(generator_rate(y, down, lam, 0.0, s, ts) == doctest::Approx(2.0));

    y = {1, 2}; // negative station load: clamped to delta
    CHECK(generator_rate(y, down, lam, 1e-6, s, ts) == doctest::Approx(1e-6));
}

TEST_CASE("generator reproduces the closed-loop Q matrix entries") {
    const int population = 7;
    const NetworkSpec s = closed_loop(population);
    const TransitionSet ts = build_transition_set(s);
    const double mu0 = 0.1, mu1 = 2.3;
    RateVector lam{mu0, mu1};
    const int up = ts.find(0, 1, 0), down = ts.find(1, 0, 0);
    // states with x in [0, N]: y = (x + j, j); rates must match the tridiagonal Q
    for (int x = 0; x <= population; ++x) {
        CountVector y{x + 3, 3};
        const double up_rate = generator_rate(y, up, lam, 0.0, s, ts);
        const double down_rate = generator_rate(y, down, lam, 0.0, s, ts);
        CHECK(up_rate == doctest::Approx(mu0 * (population - x)));
        CHECK(down_rate == doctest::Approx(x >= 1 ? mu1 : 0.0));
        CHECK(total_exit_rate(y, lam, 0.0, s, ts) == doctest::Approx(up_rate + down_rate));
    }
}

TEST_CASE("load bounds and population conservation properties") {
    const NetworkSpec s = ps_priority_pair();
    const TransitionSet tsp = build_transition_set(s);
    RandomStream rng(11);
    for (int rep = 0; rep < 300; ++rep) {
        QueueVector q;
        q.num_stations = 3;
        q.num_classes = 2;
        q.x.assign(4, 0);
        for (int i = 1; i <= 2; ++i)
            for (int c = 0; c < 2; ++c) q.at(i, c) = static_cast<int>(rng.uniform_int(12));
        double ps_total = 0.0;
        for (int c = 0; c < 2; ++c) {
            const double ps = station_load(q, 1, c, s);
            const double pr = station_load(q, 2, c, s);
            CHECK(ps >= 0.0);
            CHECK(pr >= 0.0);
            CHECK(ps <= 5.0 + 1e-12);
            CHECK(pr <= 1.0 + 1e-12);
            ps_total += ps;
        }
        CHECK(ps_total <= 5.0 + 1e-12);
    }

    const NetworkSpec c = closed_loop(9);
    const TransitionSet tsc = build_transition_set(c);
    for (int rep = 0; rep < 100; ++rep) {
        const int j = static_cast<int>(rng.uniform_int(10));
        const int x = static_cast<int>(rng.uniform_int(10));
        CountVector y{x + j, j};
        const QueueVector q = counts_to_queue_lengths(y, c, tsc);
        CHECK(q.delay[0] + q.at(1, 0) == 9);
    }
}

TEST_CASE("multi-class FCFS requires explicit PS modelling") {
    NetworkSpec s = ps_priority_pair();
    s.stations[2].discipline = Discipline::FCFS;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.stations[2].multiclass_as_ps = true;
    CHECK_NOTHROW(s.validate());
    // with the flag, the load follows the PS formula
    const QueueVector q = [] {
        QueueVector v;
        v.num_stations = 3;
        v.num_classes = 2;
        v.x.assign(4, 0);
        v.at(2, 0) = 1;
        v.at(2, 1) = 3;
        return v;
    }();
    CHECK(station_load(q, 2, 0, s) == doctest::Approx(1.0 * (1.0 / 4.0)));
}
