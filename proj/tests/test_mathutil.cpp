#include <doctest.h>

#include <cmath>

#include "qnet/mathutil.hpp"

using namespace qnet;

TEST_CASE("log_sum_exp basics") {
    CHECK(log_sum_exp(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)));
    CHECK(log_sum_exp(kNegInf, 1.5) == doctest::Approx(1.5));
    const double xs[] = {std::log(1.0), std::log(2.0), std::log(3.0)};
    CHECK(log_sum_exp(xs) == doctest::Approx(std::log(6.0)));
}

TEST_CASE("digamma against known values") {
    const double euler = 0.57721566490153286;
    CHECK(digamma(1.0) == doctest::Approx(-euler).epsilon(1e-12));
    CHECK(digamma(0.5) == doctest::Approx(-euler - 2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(digamma(5.0) == doctest::Approx(-euler + 1.0 + 0.5 + 1.0 / 3 + 0.25).epsilon(1e-12));
    // large-argument asymptotics E[log X] for Gamma(a, b): psi(a) - log(b) -> log(a/b)
    CHECK(digamma(1e8) - std::log(1e8) == doctest::Approx(0.0).epsilon(1e-8));
}

TEST_CASE("regularized incomplete gamma") {
    for (double x : {0.1, 0.7, 1.0, 2.5, 9.0})
        CHECK(gamma_p(1.0, x) == doctest::Approx(1.0 - std::exp(-x)).epsilon(1e-12));
    // P(a, x) + Q(a, x) = 1
    CHECK(gamma_p(3.7, 2.2) + gamma_q(3.7, 2.2) == doctest::Approx(1.0).epsilon(1e-12));
    // chi-square with 2 dof: tail at 9.21 is 0.01
    CHECK(gamma_q(1.0, 9.21034037 / 2.0) == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("gamma quantile inverts the cdf") {
    for (double shape : {0.5, 1.0, 5.0, 45.0})
        for (double p : {0.025, 0.25, 0.5, 0.75, 0.975}) {
            const double q = gamma_quantile(shape, 2.0, p);
            CHECK(gamma_cdf(shape, 2.0, q) == doctest::Approx(p).epsilon(1e-9));
        }
    // Gamma(1, b) is exponential: median = ln 2 / b
    CHECK(gamma_quantile(1.0, 3.0, 0.5) == doctest::Approx(std::log(2.0) / 3.0).epsilon(1e-10));
}

TEST_CASE("gamma KL is zero iff equal") {
    CHECK(gamma_kl(5.0, 2.0, 5.0, 2.0) == doctest::Approx(0.0));
    CHECK(gamma_kl(6.0, 2.0, 5.0, 2.0) > 0.0);
    CHECK(gamma_kl(5.0, 2.5, 5.0, 2.0) > 0.0);
}

TEST_CASE("windowed distributions convolve like hand arithmetic") {
    ProbWindow a{0, {0.5, 0.5}};        // uniform on {0,1}
    ProbWindow b{2, {0.25, 0.75}};      // {2: .25, 3: .75}
    const ProbWindow c = convolve(a, b);
    CHECK(c.at(2) == doctest::Approx(0.125));
    CHECK(c.at(3) == doctest::Approx(0.5));
    CHECK(c.at(4) == doctest::Approx(0.375));
    CHECK(c.total() == doctest::Approx(1.0));

    const ProbWindow n = b.negated();
    CHECK(n.at(-2) == doctest::Approx(0.25));
    CHECK(n.at(-3) == doctest::Approx(0.75));
    CHECK(n.mean() == doctest::Approx(-b.mean()));

    // difference of two independent copies is symmetric around zero
    const ProbWindow diff = convolve(a, a.negated());
    CHECK(diff.mean() == doctest::Approx(0.0));
    CHECK(diff.at(-1) == doctest::Approx(diff.at(1)));
}

TEST_CASE("trapezoid rule on a linear function is exact") {
    std::vector<double> t{0.0, 0.5, 2.0, 3.0};
    std::vector<double> f{1.0, 2.0, 5.0, 7.0}; // f = 1 + 2t
    CHECK(trapezoid(t, f) == doctest::Approx(3.0 + 9.0));
}

TEST_CASE("random stream is deterministic and roughly uniform") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 64; ++i) CHECK(a.raw() == b.raw());
    RandomStream r(7);
    double s = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) s += r.uniform();
    CHECK(s / n == doctest::Approx(0.5).epsilon(5e-3));
    // exponential mean 1/rate
    double e = 0.0;
    for (int i = 0; i < n; ++i) e += r.exponential(4.0);
    CHECK(e / n == doctest::Approx(0.25).epsilon(2e-2));
    // uniform_int covers [0, n) without bias at small n
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 50000; ++i) counts[r.uniform_int(5)]++;
    for (int k = 0; k < 5; ++k) CHECK(counts[k] > 9000);
}
