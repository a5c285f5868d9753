#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace qnet {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_sum_exp(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double log_sum_exp(std::span<const double> xs) {
    double m = kNegInf;
    for (double x : xs) m = std::max(m, x);
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

// Digamma via the standard asymptotic series after shifting the argument above 6.
inline double digamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("digamma: x must be > 0");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x, inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv
        - inv2 * (1.0 / 12 - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 / 132.0))));
    return result;
}

namespace detail {

// Lower regularized incomplete gamma by power series; valid for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a, sum = term, ap = a;
    for (int n = 0; n < 500; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Upper regularized incomplete gamma by Lentz continued fraction; valid for x >= a + 1.
inline double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::fabs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-16) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

} // namespace detail

// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
    if (!(a > 0.0)) throw std::domain_error("gamma_p: a must be > 0");
    if (x <= 0.0) return 0.0;
    if (x < a + 1.0) return detail::gamma_p_series(a, x);
    return 1.0 - detail::gamma_q_cf(a, x);
}

inline double gamma_q(double a, double x) { return 1.0 - gamma_p(a, x); }

// CDF of Gamma(shape, rate) at t.
inline double gamma_cdf(double shape, double rate, double t) {
    if (t <= 0.0) return 0.0;
    return gamma_p(shape, rate * t);
}

// Quantile of Gamma(shape, rate) by bracketed bisection on gamma_p.
inline double gamma_quantile(double shape, double rate, double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::domain_error("gamma_quantile: p in (0,1) required");
    double hi = shape + 1.0;
    while (gamma_p(shape, hi) < p) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (gamma_p(shape, mid) < p) lo = mid; else hi = mid;
        if (hi - lo <= 1e-14 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi) / rate;
}

inline double gamma_mean(double shape, double rate) { return shape / rate; }
inline double gamma_sd(double shape, double rate) { return std::sqrt(shape) / rate; }

// KL(Gamma(a1,b1) || Gamma(a0,b0)), closed form.
inline double gamma_kl(double a1, double b1, double a0, double b0) {
    return (a1 - a0) * digamma(a1) - std::lgamma(a1) + std::lgamma(a0)
        + a0 * (std::log(b1) - std::log(b0)) + a1 * (b0 - b1) / b1;
}

// Discrete probability mass on a contiguous integer window [offset, offset + size).
// Values outside the window carry zero (or negligible, truncated) mass.
struct ProbWindow {
    int offset = 0;
    std::vector<double> mass;

    static ProbWindow point(int value) { return ProbWindow{value, {1.0}}; }

    int lo() const { return offset; }
    int hi() const { return offset + static_cast<int>(mass.size()) - 1; }
    bool empty() const { return mass.empty(); }

    double at(int v) const {
        const int k = v - offset;
        if (k < 0 || k >= static_cast<int>(mass.size())) return 0.0;
        return mass[static_cast<size_t>(k)];
    }

    double total() const {
        double s = 0.0;
        for (double m : mass) s += m;
        return s;
    }

    double mean() const {
        double s = 0.0;
        for (size_t k = 0; k < mass.size(); ++k) s += mass[k] * (offset + static_cast<int>(k));
        return s;
    }

    // Drop leading/trailing mass below eps (keeps at least one cell).
    void trim(double eps = 1e-15) {
        size_t a = 0, b = mass.size();
        while (b > a + 1 && mass[b - 1] < eps) --b;
        while (a + 1 < b && mass[a] < eps) ++a;
        if (a > 0) mass.erase(mass.begin(), mass.begin() + static_cast<long>(a));
        mass.resize(b - a);
        offset += static_cast<int>(a);
    }

    ProbWindow negated() const {
        ProbWindow out;
        out.offset = -hi();
        out.mass.assign(mass.rbegin(), mass.rend());
        return out;
    }

    ProbWindow shifted(int d) const {
        ProbWindow out = *this;
        out.offset += d;
        return out;
    }
};

// Distribution of the sum of two independent windowed variables.
inline ProbWindow convolve(const ProbWindow& a, const ProbWindow& b) {
    if (a.empty() || b.empty()) return {};
    ProbWindow out;
    out.offset = a.offset + b.offset;
    out.mass.assign(a.mass.size() + b.mass.size() - 1, 0.0);
    for (size_t i = 0; i < a.mass.size(); ++i) {
        const double ai = a.mass[i];
        if (ai == 0.0) continue;
        for (size_t j = 0; j < b.mass.size(); ++j) out.mass[i + j] += ai * b.mass[j];
    }
    out.trim();
    return out;
}

inline double trapezoid(std::span<const double> t, std::span<const double> f) {
    double s = 0.0;
    for (size_t i = 1; i < t.size(); ++i) s += 0.5 * (f[i] + f[i - 1]) * (t[i] - t[i - 1]);
    return s;
}

// Deterministic uniform/exponential stream; mt19937_64 driven directly so output
// is identical across standard libraries.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double exponential(double rate) {
        double u;
        do { u = uniform(); } while (u <= 0.0);
        return -std::log(u) / rate;
    }

    // Uniform integer in [0, n), rejection sampled.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do { r = gen_(); } while (r >= limit);
        return r % n;
    }

    double normal() {
        // Box-Muller; one draw per call keeps the stream layout simple.
        double u1;
        do { u1 = uniform(); } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

} // namespace qnet
