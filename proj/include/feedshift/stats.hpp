#pragma once

// Distribution functions shared by the estimation modules.

#include <cmath>
#include <limits>

#include "feedshift/common.hpp"

namespace feedshift::stats {

namespace detail {

// Continued fraction for the incomplete beta function (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 10000;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    return h;
}

}  // namespace detail

/// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete_beta: a and b must be positive");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
    return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Student t CDF with (possibly fractional) degrees of freedom.
inline double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw ValidationError("student_t_cdf: df must be positive");
    if (std::isnan(t)) return std::nan("");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t > 0 ? 1.0 - tail : tail;
}

/// Two-sided p-value P(|T| >= |t|).
inline double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0)) throw ValidationError("student_t_two_sided_p: df must be positive");
    if (std::isnan(t)) return std::nan("");
    if (std::isinf(t)) return 0.0;
    const double p = incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
    return std::clamp(p, 0.0, 1.0);
}

/// Upper tail of the F distribution, P(F >= f).
inline double f_upper_p(double f, double df1, double df2) {
    if (!(df1 > 0.0) || !(df2 > 0.0)) throw ValidationError("f_upper_p: df must be positive");
    if (!(f > 0.0)) return 1.0;
    if (std::isinf(f)) return 0.0;
    return std::clamp(incomplete_beta(0.5 * df2, 0.5 * df1, df2 / (df2 + df1 * f)), 0.0, 1.0);
}

/// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2),
/// truncated once terms fall below 1e-10 and clamped to [0, 1].
inline double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100000; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if (term < 1e-10) break;
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Two-sided Welch test statistics for two independent samples.
struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
};

inline WelchResult welch_from_moments(double mean1, double var1, double n1, double mean2, double var2,
                                      double n2) {
    const double v1 = var1 / n1;
    const double v2 = var2 / n2;
    const double se2 = v1 + v2;
    WelchResult r;
    const double diff = mean1 - mean2;
    if (se2 <= 0.0) {
        // Both arms constant: identical means give no evidence, otherwise infinite t.
        r.df = n1 + n2 - 2.0;
        if (diff == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = diff > 0 ? INFINITY : -INFINITY;
            r.p = 0.0;
        }
        return r;
    }
    r.t = diff / std::sqrt(se2);
    const double denom = (n1 > 1 ? v1 * v1 / (n1 - 1.0) : 0.0) + (n2 > 1 ? v2 * v2 / (n2 - 1.0) : 0.0);
    r.df = denom > 0.0 ? se2 * se2 / denom : n1 + n2 - 2.0;
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace feedshift::stats
