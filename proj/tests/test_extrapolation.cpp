#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "proex/extrapolation.hpp"

using namespace proex;

TEST(SampleEnvWeights, DegenerateSimplexAtKOne) {
    EnvironmentConfig cfg{3, {0.2}, true};
    Rng rng(1);
    for (const auto& w : sample_env_weights(cfg, rng)) {
        ASSERT_EQ(w.size(), 1u);
        EXPECT_DOUBLE_EQ(w[0], 1.0);
    }
}

TEST(SampleEnvWeights, OnSimplexAndMeansMatch) {
    EnvironmentConfig cfg{1, {0.1, 0.1, 0.1, 0.1}, true};
    Rng rng(2);
    const std::size_t n = 100000;
    Vec mean(4, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        const auto w = sample_env_weights(cfg, rng)[0];
        double sum = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            EXPECT_GE(w[k], 0.0);
            sum += w[k];
            mean[k] += w[k];
        }
        ASSERT_NEAR(sum, 1.0, 1e-9);
    }
    for (double m : mean) EXPECT_NEAR(m / n, 0.25, 0.01);
}

TEST(SampleEnvWeights, FirstComponentMatchesBetaMarginal) {
    // Dirichlet(alpha) first component ~ Beta(alpha_1, sum of the rest).
    const Vec alphas = {0.2, 0.3, 0.1};
    EnvironmentConfig cfg{1, alphas, true};
    Rng rng(3);
    const std::size_t n = 100000;
    std::vector<double> xs(n);
    for (std::size_t t = 0; t < n; ++t) xs[t] = sample_env_weights(cfg, rng)[0][0];
    std::sort(xs.begin(), xs.end());
    const double a = alphas[0], b = alphas[1] + alphas[2];
    double ks = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double cdf = boost::math::ibeta(a, b, xs[i]);
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i + 1) / n));
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
    }
    // Kolmogorov critical value at significance 0.01.
    EXPECT_LT(ks, 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST(SampleEnvWeights, DeterministicAndValidates) {
    EnvironmentConfig cfg{4, {0.1, 0.2}, true};
    Rng r1(5), r2(5);
    EXPECT_EQ(sample_env_weights(cfg, r1), sample_env_weights(cfg, r2));
    EnvironmentConfig bad{2, {0.1, -1.0}, true};
    Rng r3(5);
    EXPECT_THROW(sample_env_weights(bad, r3), Error);
}

TEST(MixProfiles, VertexMidpointAndHandCase) {
    const std::vector<Vec> basis = {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}};
    EXPECT_EQ(mix_profiles(basis, {0.0, 1.0, 0.0}), basis[1]);
    const auto mid = mix_profiles({basis[0], basis[1]}, {0.5, 0.5});
    EXPECT_EQ(mid, (Vec{0.5, 0.5, 0.0}));
    EXPECT_EQ(mix_profiles(basis, {0.5, 0.3, 0.2}), (Vec{0.5, 0.3, 0.2}));
    EXPECT_THROW(mix_profiles(basis, {1.0}), Error);
}

TEST(MixProfiles, ConvexHullAndWeightLinearity) {
    Rng rng(6);
    EnvironmentConfig cfg{2, {0.3, 0.3, 0.3, 0.3}, true};
    for (int t = 0; t < 1000; ++t) {
        std::vector<Vec> profiles(4, Vec(5));
        for (auto& p : profiles) fill_normal(p, rng);
        const auto ws = sample_env_weights(cfg, rng);
        const auto& w1 = ws[0];
        const auto& w2 = ws[1];
        const auto m1 = mix_profiles(profiles, w1);

        // Manual weighted sum and coordinatewise hull bounds.
        for (std::size_t j = 0; j < 5; ++j) {
            double manual = 0.0, lo = 1e300, hi = -1e300;
            for (std::size_t k = 0; k < 4; ++k) {
                manual += w1[k] * profiles[k][j];
                lo = std::min(lo, profiles[k][j]);
                hi = std::max(hi, profiles[k][j]);
            }
            EXPECT_NEAR(m1[j], manual, 1e-12);
            EXPECT_GE(m1[j], lo - 1e-12);
            EXPECT_LE(m1[j], hi + 1e-12);
        }

        // Linearity in the weights for affine combinations a+b=1.
        const double a = 0.3, b = 0.7;
        Vec wmix(4);
        for (std::size_t k = 0; k < 4; ++k) wmix[k] = a * w1[k] + b * w2[k];
        const auto m2 = mix_profiles(profiles, w2);
        const auto mm = mix_profiles(profiles, wmix);
        for (std::size_t j = 0; j < 5; ++j)
            EXPECT_NEAR(mm[j], a * m1[j] + b * m2[j], 1e-12);
    }
}

TEST(MixGaussians, VertexIdenticalAndHandCase) {
    const std::vector<Vec> means = {{0.0}, {2.0}};
    const std::vector<Vec> vars = {{1.0}, {3.0}};
    const auto vertex = mix_gaussians(means, vars, {0.0, 1.0});
    EXPECT_DOUBLE_EQ(vertex.mean[0], 2.0);
    EXPECT_DOUBLE_EQ(vertex.log_var[0], 3.0);

    const auto mid = mix_gaussians(means, vars, {0.5, 0.5});
    EXPECT_DOUBLE_EQ(mid.mean[0], 1.0);
    EXPECT_DOUBLE_EQ(mid.log_var[0], 2.0);

    const std::vector<Vec> same_m = {{0.7}, {0.7}};
    const std::vector<Vec> same_v = {{1.4}, {1.4}};
    const auto fixed = mix_gaussians(same_m, same_v, {0.25, 0.75});
    EXPECT_NEAR(fixed.mean[0], 0.7, 1e-12);
    EXPECT_NEAR(fixed.log_var[0], 1.4, 1e-12);
}

TEST(ContrastiveReg, HandValues) {
    const double tau = 0.2;
    const std::vector<Vec> orthogonal = {{1.0, 0.0}, {0.0, 1.0}};
    const std::vector<Vec> identical = {{1.0, 0.0}, {1.0, 0.0}};
    const double lo = contrastive_reg_loss(orthogonal, tau);
    const double li = contrastive_reg_loss(identical, tau);
    EXPECT_NEAR(lo, 2.0 * std::log(1.0 + std::exp(5.0)), 1e-9);
    EXPECT_NEAR(lo, 10.01343, 1e-4);
    EXPECT_NEAR(li, 2.0 * std::log(1.0 + std::exp(10.0)), 1e-9);
    EXPECT_NEAR(li, 20.00009, 1e-4);
    EXPECT_GT(li, lo);
}

TEST(ContrastiveReg, PermutationInvariant) {
    Rng rng(7);
    std::vector<Vec> profiles(4, Vec(6));
    for (auto& p : profiles) fill_normal(p, rng);
    const double base = contrastive_reg_loss(profiles, 0.2);
    std::vector<Vec> perm = {profiles[2], profiles[0], profiles[3], profiles[1]};
    EXPECT_NEAR(contrastive_reg_loss(perm, 0.2), base, 1e-12);
}

TEST(ContrastiveReg, RejectsDegenerateInput) {
    EXPECT_THROW(contrastive_reg_loss({{1.0}}, 0.2), Error);
    EXPECT_THROW(contrastive_reg_loss({{1.0}, {0.5}}, 0.0), Error);
}

TEST(ContrastiveReg, GradientMatchesFiniteDifferences) {
    Rng rng(8);
    for (bool normalize : {true, false}) {
        ParamSet p;
        const int K = 4;
        const std::size_t d = 5;
        for (int k = 0; k < K; ++k) {
            auto& b = p.add("p" + std::to_string(k), d);
            fill_normal(b.value, rng);
        }
        auto collect = [&]() {
            std::vector<Vec> profiles;
            for (int k = 0; k < K; ++k) profiles.push_back(p["p" + std::to_string(k)].value);
            return profiles;
        };
        auto loss = [&]() { return contrastive_reg_loss(collect(), 0.2, nullptr, normalize); };
        std::vector<Vec> grads(K, Vec(d, 0.0));
        contrastive_reg_loss(collect(), 0.2, &grads, normalize);
        for (int k = 0; k < K; ++k) p["p" + std::to_string(k)].grad = grads[k];
        const auto r = testutil::check_param_grads(p, loss, d, rng);
        EXPECT_LT(r.max_rel, 1e-4) << "normalize=" << normalize;
    }
}

TEST(ContrastiveReg, GradientDescentSpreadsTwoFreeProfiles) {
    Rng rng(9);
    std::vector<Vec> profiles = {Vec(4), Vec(4)};
    fill_normal(profiles[0], rng);
    profiles[1] = profiles[0];
    for (double& v : profiles[1]) v += 0.01 * rng.normal();  // near-identical start

    auto cosine = [&]() {
        return dot(profiles[0], profiles[1]) /
               (norm2(profiles[0]) * norm2(profiles[1]));
    };
    double prev_loss = contrastive_reg_loss(profiles, 0.2);
    double prev_cos = cosine();
    const double lr = 0.05;
    for (int step = 0; step < 100; ++step) {
        std::vector<Vec> g(2, Vec(4, 0.0));
        contrastive_reg_loss(profiles, 0.2, &g);
        for (int k = 0; k < 2; ++k)
            for (std::size_t j = 0; j < 4; ++j) profiles[k][j] -= lr * g[k][j];
        const double cur_loss = contrastive_reg_loss(profiles, 0.2);
        const double cur_cos = cosine();
        EXPECT_LE(cur_loss, prev_loss + 1e-12) << "step " << step;
        EXPECT_LE(cur_cos, prev_cos + 1e-9) << "step " << step;
        prev_loss = cur_loss;
        prev_cos = cur_cos;
    }
    EXPECT_LT(prev_cos, 0.5);
}
