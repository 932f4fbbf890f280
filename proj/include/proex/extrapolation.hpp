#pragma once

#include <cmath>
#include <vector>

#include "proex/common.hpp"
#include "proex/recommenders.hpp"
#include "proex/rng.hpp"

namespace proex {

struct EnvironmentConfig {
    std::size_t num_envs = 2;
    Vec alphas;  // K positive Dirichlet shape parameters
    bool share_across_sides = true;

    void validate() const {
        if (num_envs < 1) throw Error("num_envs must be >= 1");
        if (alphas.empty()) throw Error("alphas must be non-empty");
        for (double a : alphas)
            if (!(a > 0.0)) throw Error("Dirichlet shape parameters must be positive");
    }
};

// One Dirichlet(alpha) draw per environment via normalized Gamma variates.
inline std::vector<Vec> sample_env_weights(const EnvironmentConfig& cfg, Rng& rng) {
    cfg.validate();
    const std::size_t K = cfg.alphas.size();
    std::vector<Vec> draws(cfg.num_envs, Vec(K));
    for (auto& w : draws) {
        double sum = 0.0;
        do {
            sum = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                w[k] = rng.gamma(cfg.alphas[k]);
                sum += w[k];
            }
        } while (sum <= 0.0);
        for (double& v : w) v /= sum;
    }
    return draws;
}

// Convex combination of K profile vectors.
inline Vec mix_profiles(const std::vector<Vec>& profiles, const Vec& weights) {
    if (profiles.size() != weights.size()) throw Error("mix_profiles: length mismatch");
    Vec out(profiles.front().size(), 0.0);
    for (std::size_t k = 0; k < profiles.size(); ++k)
        axpy(weights[k], profiles[k], std::span<double>(out));
    return out;
}

// Means and variances mixed separately under the same weights.
inline GaussianState mix_gaussians(const std::vector<Vec>& means, const std::vector<Vec>& vars,
                                   const Vec& weights) {
    if (means.size() != weights.size() || vars.size() != weights.size())
        throw Error("mix_gaussians: length mismatch");
    GaussianState out;
    out.mean.assign(means.front().size(), 0.0);
    out.log_var.assign(means.front().size(), 0.0);  // holds the mixed variance, not its log
    for (std::size_t k = 0; k < means.size(); ++k) {
        axpy(weights[k], means[k], std::span<double>(out.mean));
        axpy(weights[k], vars[k], std::span<double>(out.log_var));
    }
    return out;
}

// Contrastive profile-extrapolation regularizer:
//   sum_k log(1 + exp(1/tau) * sum_{k'!=k} exp(c_k . c_k' / tau))
// over one entity's K aligned profiles. Inputs are L2-normalized before the
// dot product unless `normalize` is false (raw form kept for study).
// Gradients w.r.t. the raw inputs accumulate into `d_profiles` when given.
inline double contrastive_reg_loss(const std::vector<Vec>& profiles, double tau,
                                   std::vector<Vec>* d_profiles = nullptr, bool normalize = true) {
    const std::size_t K = profiles.size();
    if (K < 2) throw Error("contrastive_reg_loss requires K >= 2");
    if (!(tau > 0.0)) throw Error("temperature must be positive");
    const std::size_t d = profiles.front().size();
    constexpr double kNormFloor = 1e-12;

    std::vector<Vec> u(K);
    Vec norms(K, 1.0);
    for (std::size_t k = 0; k < K; ++k) {
        u[k] = profiles[k];
        if (normalize) {
            norms[k] = std::max(norm2(u[k]), kNormFloor);
            for (double& v : u[k]) v /= norms[k];
        }
    }

    Mat dots(K, K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t k2 = 0; k2 < K; ++k2)
            if (k != k2) dots.at(k, k2) = dot(u[k], u[k2]);

    // log(1 + exp(1/tau) * sum exp(d/tau)) via log-sum-exp.
    double loss = 0.0;
    Mat w(K, K);  // d loss_k / d dots(k,k2)
    for (std::size_t k = 0; k < K; ++k) {
        double mx = -1e300;
        for (std::size_t k2 = 0; k2 < K; ++k2)
            if (k2 != k) mx = std::max(mx, dots.at(k, k2) / tau);
        double inner = 0.0;
        for (std::size_t k2 = 0; k2 < K; ++k2)
            if (k2 != k) inner += std::exp(dots.at(k, k2) / tau - mx);
        const double log_a = 1.0 / tau + mx + std::log(inner);
        loss += softplus(log_a);
        if (d_profiles) {
            const double sig = logistic(log_a);  // a / (1 + a)
            for (std::size_t k2 = 0; k2 < K; ++k2)
                if (k2 != k)
                    w.at(k, k2) = sig * std::exp(dots.at(k, k2) / tau - mx) / (inner * tau);
        }
    }

    if (d_profiles) {
        for (std::size_t k = 0; k < K; ++k) {
            Vec du(d, 0.0);
            for (std::size_t k2 = 0; k2 < K; ++k2) {
                if (k2 == k) continue;
                const double coeff = w.at(k, k2) + w.at(k2, k);
                axpy(coeff, u[k2], std::span<double>(du));
            }
            auto& dst = (*d_profiles)[k];
            if (normalize) {
                const double proj = dot(du, u[k]);
                for (std::size_t j = 0; j < d; ++j)
                    dst[j] += (du[j] - proj * u[k][j]) / norms[k];
            } else {
                axpy(1.0, du, std::span<double>(dst));
            }
        }
    }
    return loss;
}

}  // namespace proex
