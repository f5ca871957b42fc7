#include <gtest/gtest.h>

#include <random>

#include "feedshift/regress.hpp"
#include "oracles.hpp"

using namespace feedshift;
using namespace feedshift::regress;

namespace {

Eigen::MatrixXd random_design(std::mt19937_64& rng, Eigen::Index n, Eigen::Index p) {
    std::normal_distribution<> g;
    Eigen::MatrixXd X(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (Eigen::Index j = 1; j < p; ++j) X(i, j) = g(rng);
    }
    return X;
}

}  // namespace

TEST(BuildDesign, Examples) {
    UserEngagement a{"b", {}, 0.0, 0.0};
    UserEngagement b{"a", {}, 0.2, 0.3};
    b.counts[static_cast<std::size_t>(corpus::EngagementKind::like)] = 99;
    UserEngagement missing{"c", {}, std::nan(""), 0.1};
    const auto d = build_design({a, b, missing});
    EXPECT_EQ(d.user_ids, (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(d.excluded, 1u);
    EXPECT_EQ(d.columns, design_columns());
    const auto like_col = 1 + static_cast<Eigen::Index>(corpus::EngagementKind::like);
    EXPECT_EQ(d.columns[like_col], "like");
    EXPECT_NEAR(d.X(0, like_col), std::log(100.0), 1e-12);
    EXPECT_NEAR(d.X(0, like_col), 4.605170185988092, 1e-12);
    for (Eigen::Index j = 1; j <= 6; ++j) EXPECT_EQ(d.X(1, j), 0.0);
    EXPECT_EQ(d.X(1, 7), 0.0);
    EXPECT_EQ(d.y(1), 0.0);
    EXPECT_EQ(d.X(0, 0), 1.0);
}

TEST(CosineDistance, Examples) {
    const std::vector<double> a = {1, 2, 3};
    EXPECT_NEAR(cosine_distance(a, a), 0.0, 1e-15);
    EXPECT_NEAR(cosine_distance(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0, 1e-15);
    EXPECT_TRUE(std::isnan(cosine_distance(a, std::vector<double>{0, 0, 0})));
}

TEST(Ols, ExactLinearSystem) {
    std::mt19937_64 rng(1);
    const auto X = random_design(rng, 50, 8);
    Eigen::VectorXd beta(8);
    beta << 0.5, -0.02, 0.0, 0.0, -0.015, 0.0, -0.03, 0.8;
    const auto fit = ols_fit(X, X * beta);
    for (int j = 0; j < 8; ++j) EXPECT_NEAR(fit.beta[j], beta(j), 1e-9);
    EXPECT_NEAR(fit.r2, 1.0, 1e-12);
    EXPECT_EQ(fit.n, 50u);
    EXPECT_EQ(fit.df_resid, 42.0);
}

TEST(Ols, ConstantResponse) {
    std::mt19937_64 rng(2);
    const auto X = random_design(rng, 30, 4);
    const auto fit = ols_fit(X, Eigen::VectorXd::Constant(30, 2.5));
    EXPECT_NEAR(fit.beta[0], 2.5, 1e-12);
    for (int j = 1; j < 4; ++j) EXPECT_NEAR(fit.beta[j], 0.0, 1e-12);
    EXPECT_EQ(fit.r2, 0.0);
}

TEST(Ols, PlantedCoefficientsWithinThreeStandardErrors) {
    std::mt19937_64 rng(2024);
    const auto X = random_design(rng, 5000, 8);
    Eigen::VectorXd beta(8);
    beta << 0.5, -0.02, 0.0, 0.0, -0.015, 0.0, -0.03, 0.8;
    std::normal_distribution<> noise(0.0, 0.01);
    Eigen::VectorXd y = X * beta;
    for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
    const auto fit = ols_fit(X, y, design_columns());
    for (int j = 0; j < 8; ++j) EXPECT_LE(std::abs(fit.beta[j] - beta(j)), 3 * fit.se[j]) << fit.names[j];
}

TEST(Ols, AgreesWithNormalEquationsAndOrthogonality) {
    std::mt19937_64 rng(3);
    const auto X = random_design(rng, 200, 5);
    std::normal_distribution<> g;
    Eigen::VectorXd y(200);
    for (Eigen::Index i = 0; i < 200; ++i) y(i) = X(i, 1) - 0.5 * X(i, 3) + g(rng);
    const auto fit = ols_fit(X, y);
    // Independent route: normal equations with an explicit inverse.
    const Eigen::MatrixXd inv = (X.transpose() * X).inverse();
    const Eigen::VectorXd b = inv * X.transpose() * y;
    const Eigen::VectorXd r = y - X * b;
    const double s2 = r.squaredNorm() / 195.0;
    Eigen::VectorXd beta(5);
    for (int j = 0; j < 5; ++j) {
        beta(j) = fit.beta[j];
        EXPECT_NEAR(fit.beta[j], b(j), 1e-9);
        EXPECT_NEAR(fit.se[j], std::sqrt(s2 * inv(j, j)), 1e-9);
        EXPECT_NEAR(fit.p[j], oracle::t_two_sided_p(fit.t[j], 195.0), 1e-6);
    }
    const Eigen::VectorXd xr = X.transpose() * (y - X * beta);
    for (int j = 0; j < 5; ++j) EXPECT_LT(std::abs(xr(j)), 1e-8);
    const double ybar = y.mean();
    EXPECT_NEAR(fit.r2, 1.0 - r.squaredNorm() / (y.array() - ybar).square().sum(), 1e-12);
}

TEST(Ols, RescalingRegressor) {
    std::mt19937_64 rng(4);
    auto X = random_design(rng, 100, 3);
    std::normal_distribution<> g;
    Eigen::VectorXd y(100);
    for (Eigen::Index i = 0; i < 100; ++i) y(i) = 2 * X(i, 1) + g(rng);
    const auto a = ols_fit(X, y);
    X.col(1) = X.col(1) * 4.0 + Eigen::VectorXd::Constant(100, 3.0);
    const auto b = ols_fit(X, y);
    EXPECT_NEAR(a.r2, b.r2, 1e-12);
    EXPECT_NEAR(b.beta[1], a.beta[1] / 4.0, 1e-12);
    EXPECT_NEAR(b.t[1], a.t[1], 1e-9);
}

TEST(Ols, RankDeficiencyNamesColumns) {
    std::mt19937_64 rng(5);
    auto X = random_design(rng, 40, 4);
    X.col(3) = 2.0 * X.col(1);
    try {
        ols_fit(X, Eigen::VectorXd::Random(40), {"intercept", "a", "b", "twice_a"});
        FAIL() << "expected rank error";
    } catch (const ValidationError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("collinear"), std::string::npos);
        EXPECT_TRUE(msg.find("twice_a") != std::string::npos || msg.find("a") != std::string::npos);
    }
    EXPECT_THROW(ols_fit(Eigen::MatrixXd::Ones(3, 3), Eigen::VectorXd::Ones(3)), ValidationError);
}
