#pragma once

// OLS of post-exposure distance to the feed centroid on log engagement counts
// and baseline distance.

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/corpus.hpp"
#include "feedshift/stats.hpp"

namespace feedshift::regress {

inline const std::vector<std::string>& design_columns() {
    static const std::vector<std::string> names = {"intercept", "post", "comment", "quote", "repost",
                                                   "like",      "bookmark", "baseline_distance"};
    return names;
}

struct UserEngagement {
    std::string user_id;
    std::array<double, 6> counts{};  // indexed by corpus::EngagementKind
    double baseline_distance = 0.0;
    double post_distance = 0.0;
};

struct DesignMatrix {
    std::vector<std::string> columns = design_columns();
    std::vector<std::string> user_ids;
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    std::size_t excluded = 0;  // rows without a usable distance
};

/// Rows sorted by user id; engagement counts enter as log1p.
inline DesignMatrix build_design(std::vector<UserEngagement> users) {
    std::sort(users.begin(), users.end(), [](const auto& a, const auto& b) { return a.user_id < b.user_id; });
    DesignMatrix d;
    std::vector<const UserEngagement*> kept;
    for (const auto& u : users) {
        if (std::isfinite(u.baseline_distance) && std::isfinite(u.post_distance))
            kept.push_back(&u);
        else
            ++d.excluded;
    }
    d.X.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(d.columns.size()));
    d.y.resize(static_cast<Eigen::Index>(kept.size()));
    for (std::size_t r = 0; r < kept.size(); ++r) {
        const auto i = static_cast<Eigen::Index>(r);
        d.X(i, 0) = 1.0;
        for (int k = 0; k < 6; ++k) {
            if (kept[r]->counts[k] < 0.0) throw ValidationError("negative engagement count");
            d.X(i, k + 1) = std::log1p(kept[r]->counts[k]);
        }
        d.X(i, 7) = kept[r]->baseline_distance;
        d.y(i) = kept[r]->post_distance;
        d.user_ids.push_back(kept[r]->user_id);
    }
    return d;
}

struct RegressionFit {
    std::vector<std::string> names;
    std::vector<double> beta;
    std::vector<double> se;
    std::vector<double> t;
    std::vector<double> p;
    double r2 = 0.0;
    double f_p = 1.0;  // overall F-test p-value, used for the R² stars
    std::size_t n = 0;
    double df_resid = 0.0;
};

inline constexpr double kPivotTolerance = 1e-10;

/// Least squares via column-pivoted Householder QR. Standard errors come from
/// R^-1, so X'X is never formed.
inline RegressionFit ols_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, std::vector<std::string> names = {}) {
    const auto n = X.rows();
    const auto p = X.cols();
    if (names.empty())
        for (Eigen::Index j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
    if (static_cast<Eigen::Index>(names.size()) != p) throw ValidationError("ols_fit: column name count mismatch");
    if (y.size() != n) throw ValidationError("ols_fit: response length mismatch");
    if (n < p + 1) throw ValidationError("ols_fit: need more rows than columns");
    if (!X.allFinite() || !y.allFinite()) throw ValidationError("ols_fit: non-finite input");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    qr.setThreshold(kPivotTolerance);
    if (qr.rank() < p) {
        std::string cols;
        const auto& perm = qr.colsPermutation().indices();
        for (Eigen::Index k = qr.rank(); k < p; ++k) {
            if (!cols.empty()) cols += ", ";
            cols += names[static_cast<std::size_t>(perm(k))];
        }
        throw ValidationError("rank-deficient design; collinear columns: " + cols);
    }
    const Eigen::VectorXd beta = qr.solve(y);
    const Eigen::VectorXd resid = y - X * beta;

    RegressionFit fit;
    fit.names = std::move(names);
    fit.n = static_cast<std::size_t>(n);
    fit.df_resid = static_cast<double>(n - p);
    CompensatedSum ss_res;
    for (Eigen::Index i = 0; i < n; ++i) ss_res.add(resid(i) * resid(i));
    const double sigma2 = ss_res.value() / fit.df_resid;

    const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).template triangularView<Eigen::Upper>();
    const Eigen::MatrixXd Rinv =
        R.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
    const auto& perm = qr.colsPermutation().indices();
    fit.beta.resize(static_cast<std::size_t>(p));
    fit.se.resize(static_cast<std::size_t>(p));
    fit.t.resize(static_cast<std::size_t>(p));
    fit.p.resize(static_cast<std::size_t>(p));
    for (Eigen::Index k = 0; k < p; ++k) {
        const auto j = static_cast<std::size_t>(perm(k));
        const double var = Rinv.row(k).squaredNorm() * sigma2;
        fit.se[j] = std::sqrt(var);
    }
    for (Eigen::Index j = 0; j < p; ++j) {
        const auto jj = static_cast<std::size_t>(j);
        fit.beta[jj] = beta(j);
        if (fit.se[jj] > 0.0) {
            fit.t[jj] = fit.beta[jj] / fit.se[jj];
            fit.p[jj] = stats::student_t_two_sided_p(fit.t[jj], fit.df_resid);
        } else {
            fit.t[jj] = fit.beta[jj] == 0.0 ? 0.0 : std::copysign(INFINITY, fit.beta[jj]);
            fit.p[jj] = fit.beta[jj] == 0.0 ? 1.0 : 0.0;
        }
    }

    const double ybar = y.mean();
    CompensatedSum ss_tot;
    for (Eigen::Index i = 0; i < n; ++i) ss_tot.add((y(i) - ybar) * (y(i) - ybar));
    const double tot = ss_tot.value();
    if (tot > 0.0) fit.r2 = std::clamp(1.0 - ss_res.value() / tot, 0.0, 1.0);
    const double df_model = static_cast<double>(p - 1);
    if (df_model > 0 && tot > 0.0) {
        if (fit.r2 >= 1.0)
            fit.f_p = 0.0;
        else
            fit.f_p = stats::f_upper_p((fit.r2 / df_model) / ((1.0 - fit.r2) / fit.df_resid), df_model, fit.df_resid);
    }
    return fit;
}

inline RegressionFit ols_fit(const DesignMatrix& d) { return ols_fit(d.X, d.y, d.columns); }

/// Cosine distance 1 - cos(a, b).
inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return std::nan("");
    return 1.0 - dot / std::sqrt(na * nb);
}

}  // namespace feedshift::regress
