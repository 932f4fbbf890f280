#pragma once

#include <cmath>
#include <vector>

#include "proex/common.hpp"
#include "proex/recommenders.hpp"
#include "proex/rng.hpp"

namespace proex {

// ---------------------------------------------------------------------------
// Direct alignment: one affine map d_s -> d per entity kind, shared by all K
// profiles. Parameter blocks: <prefix>_W (d x d_s), <prefix>_b (d).
// ---------------------------------------------------------------------------

// The map's output layer is zero-initialized so aligned profiles start at
// zero and early training matches the base model.
inline void add_direct_align_params(ParamSet& p, const std::string& prefix, std::size_t d_s,
                                    std::size_t d) {
    p.add(prefix + "_W", d * d_s);
    p.add(prefix + "_b", d);
}

inline Vec direct_align(const ParamSet& p, const std::string& prefix, std::span<const double> c) {
    const Vec& W = p[prefix + "_W"].value;
    const Vec& b = p[prefix + "_b"].value;
    const std::size_t d = b.size(), d_s = c.size();
    Vec out(d);
    for (std::size_t j = 0; j < d; ++j) {
        double s = b[j];
        const double* wrow = W.data() + j * d_s;
        for (std::size_t k = 0; k < d_s; ++k) s += wrow[k] * c[k];
        out[j] = s;
    }
    return out;
}

inline void direct_align_backward(ParamSet& p, const std::string& prefix,
                                  std::span<const double> c, const Vec& d_out) {
    Vec& gW = p[prefix + "_W"].grad;
    Vec& gb = p[prefix + "_b"].grad;
    const std::size_t d = d_out.size(), d_s = c.size();
    for (std::size_t j = 0; j < d; ++j) {
        const double g = d_out[j];
        if (g == 0.0) continue;
        gb[j] += g;
        double* grow = gW.data() + j * d_s;
        for (std::size_t k = 0; k < d_s; ++k) grow[k] += g * c[k];
    }
}

// ---------------------------------------------------------------------------
// Aggregation alignment: two-layer map d_s -> (d_s/2 tanh) -> 2*d_z, output
// split evenly into mean and log-variance. Blocks: agg_W1, agg_b1, agg_W2
// (zero-initialized), agg_b2 (zero-initialized).
// ---------------------------------------------------------------------------

struct AggAlignConfig {
    std::size_t d_s = 0;
    std::size_t hidden = 0;  // d_s / 2
    std::size_t d_z = 0;
};

inline void add_agg_align_params(ParamSet& p, const AggAlignConfig& cfg, Rng& rng) {
    auto& w1 = p.add("agg_W1", cfg.hidden * cfg.d_s);
    xavier_init(w1.value, cfg.d_s, cfg.hidden, rng);
    p.add("agg_b1", cfg.hidden);
    p.add("agg_W2", 2 * cfg.d_z * cfg.hidden);
    p.add("agg_b2", 2 * cfg.d_z);
}

// Mean over neighbor item profile vectors (same profile index k) plus the
// entity's own vector; the empty neighborhood contributes a zero mean.
inline Vec agg_align_input(std::span<const double> c_own,
                           const std::vector<std::span<const double>>& neighbor_c) {
    Vec a(c_own.begin(), c_own.end());
    if (!neighbor_c.empty()) {
        const double inv = 1.0 / static_cast<double>(neighbor_c.size());
        for (const auto& nc : neighbor_c) axpy(inv, nc, std::span<double>(a));
    }
    return a;
}

struct AggAlignCache {
    Vec input;
    Vec h;
    GaussianState state;  // mean, log_var of dim d_z
};

inline AggAlignCache aggregation_align(const ParamSet& p, const AggAlignConfig& cfg,
                                       const Vec& input) {
    AggAlignCache c;
    c.input = input;
    const Vec& W1 = p["agg_W1"].value;
    const Vec& b1 = p["agg_b1"].value;
    c.h.assign(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        double s = b1[j];
        const double* wrow = W1.data() + j * cfg.d_s;
        for (std::size_t k = 0; k < cfg.d_s; ++k) s += wrow[k] * input[k];
        c.h[j] = std::tanh(s);
    }
    const Vec& W2 = p["agg_W2"].value;
    const Vec& b2 = p["agg_b2"].value;
    c.state.mean.assign(cfg.d_z, 0.0);
    c.state.log_var.assign(cfg.d_z, 0.0);
    for (std::size_t j = 0; j < 2 * cfg.d_z; ++j) {
        double s = b2[j];
        const double* wrow = W2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) s += wrow[k] * c.h[k];
        if (j < cfg.d_z)
            c.state.mean[j] = s;
        else
            c.state.log_var[j - cfg.d_z] = s;
    }
    return c;
}

inline void aggregation_align_backward(ParamSet& p, const AggAlignConfig& cfg,
                                       const AggAlignCache& c, const Vec& d_mean,
                                       const Vec& d_log_var) {
    const Vec& W2 = p["agg_W2"].value;
    Vec& gW2 = p["agg_W2"].grad;
    Vec& gb2 = p["agg_b2"].grad;
    Vec dh(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < 2 * cfg.d_z; ++j) {
        const double g = j < cfg.d_z ? d_mean[j] : d_log_var[j - cfg.d_z];
        if (g == 0.0) continue;
        gb2[j] += g;
        const double* wrow = W2.data() + j * cfg.hidden;
        double* grow = gW2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) {
            grow[k] += g * c.h[k];
            dh[k] += g * wrow[k];
        }
    }
    Vec& gW1 = p["agg_W1"].grad;
    Vec& gb1 = p["agg_b1"].grad;
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        const double gpre = dh[j] * (1.0 - c.h[j] * c.h[j]);
        if (gpre == 0.0) continue;
        gb1[j] += gpre;
        double* grow = gW1.data() + j * cfg.d_s;
        for (std::size_t k = 0; k < cfg.d_s; ++k) grow[k] += gpre * c.input[k];
    }
}

// ---------------------------------------------------------------------------
// Fusion: elementwise addition.
// ---------------------------------------------------------------------------

inline Vec fuse(std::span<const double> z, std::span<const double> c_tilde) {
    if (z.size() != c_tilde.size()) throw Error("fuse: dimension mismatch");
    Vec out(z.size());
    for (std::size_t j = 0; j < z.size(); ++j) out[j] = z[j] + c_tilde[j];
    return out;
}

// ---------------------------------------------------------------------------
// Symmetric InfoNCE over cosine similarities, averaged over both anchor
// directions. Zero-norm rows contribute cosine 0 with every partner.
// ---------------------------------------------------------------------------

inline double infonce_alignment_loss(const Mat& z, const Mat& c, double temperature,
                                     Mat* d_z = nullptr, Mat* d_c = nullptr) {
    const std::size_t B = z.rows, d = z.cols;
    if (B == 0) return 0.0;
    constexpr double kNormFloor = 1e-12;

    Vec nz(B), nc(B);
    for (std::size_t i = 0; i < B; ++i) {
        nz[i] = norm2(z.row_span(i));
        nc[i] = norm2(c.row_span(i));
    }
    Mat s(B, B);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j) {
            const double nn = nz[i] * nc[j];
            s.at(i, j) = nn < kNormFloor ? 0.0 : dot(z.row_span(i), c.row_span(j)) / nn;
        }

    // Row softmax (z anchors) and column softmax (c anchors) of s / t.
    const double t = temperature;
    Mat pa(B, B), pb(B, B);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < B; ++j) mx = std::max(mx, s.at(i, j) / t);
        double denom = 0.0;
        for (std::size_t j = 0; j < B; ++j) denom += std::exp(s.at(i, j) / t - mx);
        for (std::size_t j = 0; j < B; ++j) pa.at(i, j) = std::exp(s.at(i, j) / t - mx) / denom;
        loss += -(s.at(i, i) / t - mx - std::log(denom));
    }
    for (std::size_t j = 0; j < B; ++j) {
        double mx = -1e300;
        for (std::size_t i = 0; i < B; ++i) mx = std::max(mx, s.at(i, j) / t);
        double denom = 0.0;
        for (std::size_t i = 0; i < B; ++i) denom += std::exp(s.at(i, j) / t - mx);
        for (std::size_t i = 0; i < B; ++i) pb.at(i, j) = std::exp(s.at(i, j) / t - mx) / denom;
        loss += -(s.at(j, j) / t - mx - std::log(denom));
    }
    loss /= 2.0 * static_cast<double>(B);

    if (d_z) {
        const double scale = 1.0 / (2.0 * static_cast<double>(B) * t);
        for (std::size_t i = 0; i < B; ++i) {
            for (std::size_t j = 0; j < B; ++j) {
                double g = scale * (pa.at(i, j) + pb.at(i, j));
                if (i == j) g -= 2.0 * scale;
                if (g == 0.0) continue;
                const double nn = nz[i] * nc[j];
                if (nn < kNormFloor) continue;
                auto zi = z.row_span(i);
                auto cj = c.row_span(j);
                auto dzi = d_z->row_span(i);
                auto dcj = d_c->row_span(j);
                const double sij = s.at(i, j);
                for (std::size_t k = 0; k < d; ++k) {
                    dzi[k] += g * (cj[k] / nn - sij * zi[k] / (nz[i] * nz[i]));
                    dcj[k] += g * (zi[k] / nn - sij * cj[k] / (nc[j] * nc[j]));
                }
            }
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Gaussian alignment loss: (1-beta)*KL(q || env) + beta*KL(q || N(0,I)),
// with diagonal Gaussians. Gradients are reported w.r.t. means and raw
// variances; callers chain through their own parameterization.
// ---------------------------------------------------------------------------

namespace detail {

// KL(N(a,s2) || N(b,t2)) per-dimension with gradients; accumulates into the
// four optional buffers scaled by `weight`.
inline double gaussian_kl(const Vec& a, const Vec& s2, const Vec& b, const Vec& t2, double weight,
                          Vec* da, Vec* ds2, Vec* db, Vec* dt2) {
    double kl = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const double diff = a[j] - b[j];
        kl += 0.5 * std::log(t2[j] / s2[j]) + (s2[j] + diff * diff) / (2.0 * t2[j]) - 0.5;
        if (da) (*da)[j] += weight * diff / t2[j];
        if (ds2) (*ds2)[j] += weight * (-0.5 / s2[j] + 0.5 / t2[j]);
        if (db) (*db)[j] += weight * (-diff / t2[j]);
        if (dt2)
            (*dt2)[j] += weight * (0.5 / t2[j] - (s2[j] + diff * diff) / (2.0 * t2[j] * t2[j]));
    }
    return kl;
}

}  // namespace detail

struct GaussianAlignGrads {
    Vec d_target_mean, d_target_var;
    Vec d_env_mean, d_env_var;
};

inline double gaussian_alignment_loss(const Vec& target_mean, const Vec& target_var,
                                      const Vec& env_mean, const Vec& env_var, double beta,
                                      GaussianAlignGrads* g = nullptr) {
    const std::size_t d = target_mean.size();
    Vec zero(d, 0.0), one(d, 1.0);
    Vec *da = nullptr, *ds2 = nullptr, *db = nullptr, *dt2 = nullptr;
    if (g) {
        g->d_target_mean.assign(d, 0.0);
        g->d_target_var.assign(d, 0.0);
        g->d_env_mean.assign(d, 0.0);
        g->d_env_var.assign(d, 0.0);
        da = &g->d_target_mean;
        ds2 = &g->d_target_var;
        db = &g->d_env_mean;
        dt2 = &g->d_env_var;
    }
    double loss = (1.0 - beta) * detail::gaussian_kl(target_mean, target_var, env_mean, env_var,
                                                     1.0 - beta, da, ds2, db, dt2);
    loss += beta * detail::gaussian_kl(target_mean, target_var, zero, one, beta, da, ds2, nullptr,
                                       nullptr);
    return loss;
}

}  // namespace proex
