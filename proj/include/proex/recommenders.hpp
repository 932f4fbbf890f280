#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "proex/common.hpp"
#include "proex/dataset.hpp"
#include "proex/rng.hpp"

namespace proex {

// ---------------------------------------------------------------------------
// Discriminative side: embeddings, light graph convolution, pairwise loss.
// ---------------------------------------------------------------------------

struct EmbeddingTable {
    Mat user_emb;  // M x d
    Mat item_emb;  // N x d
};

inline EmbeddingTable make_embeddings(std::size_t M, std::size_t N, std::size_t d, Rng& rng) {
    EmbeddingTable t;
    t.user_emb = Mat(M, d);
    t.item_emb = Mat(N, d);
    xavier_init(t.user_emb.a, M, d, rng);
    xavier_init(t.item_emb.a, N, d, rng);
    return t;
}

// Mean over layers 0..L of repeated normalized-adjacency propagation.
// L = 0 returns the input. The stacked operator is symmetric, so the same
// function backpropagates output gradients onto the layer-0 tables.
inline EmbeddingTable lightgcn_propagate(const EmbeddingTable& emb, const Adjacency& adj,
                                         int layers) {
    const std::size_t M = emb.user_emb.rows, N = emb.item_emb.rows, d = emb.user_emb.cols;
    EmbeddingTable out;
    out.user_emb = emb.user_emb;
    out.item_emb = emb.item_emb;
    if (layers == 0) return out;

    Mat cur_u = emb.user_emb, cur_i = emb.item_emb;
    Mat next_u(M, d), next_i(N, d);
    for (int l = 0; l < layers; ++l) {
        next_u.fill(0.0);
        next_i.fill(0.0);
        for (std::size_t u = 0; u < M; ++u)
            for (const auto& [i, w] : adj.user_edges[u])
                axpy(w, cur_i.row_span(i), next_u.row_span(u));
        for (std::size_t i = 0; i < N; ++i)
            for (const auto& [u, w] : adj.item_edges[i])
                axpy(w, cur_u.row_span(u), next_i.row_span(i));
        std::swap(cur_u, next_u);
        std::swap(cur_i, next_i);
        for (std::size_t j = 0; j < out.user_emb.a.size(); ++j) out.user_emb.a[j] += cur_u.a[j];
        for (std::size_t j = 0; j < out.item_emb.a.size(); ++j) out.item_emb.a[j] += cur_i.a[j];
    }
    const double inv = 1.0 / (layers + 1);
    for (double& v : out.user_emb.a) v *= inv;
    for (double& v : out.item_emb.a) v *= inv;
    return out;
}

// Logistic of the dot product; ranking uses the raw dot product.
inline double score_pair(std::span<const double> z_u, std::span<const double> z_i) {
    return logistic(dot(z_u, z_i));
}

// Mean BPR loss over triples on the supplied representations. Gradients are
// accumulated into d_user/d_item (matrices sized like the rep tables).
struct BprResult {
    double loss = 0.0;
};

inline BprResult bpr_loss(const PairwiseBatch& batch, const Mat& z_user, const Mat& z_item,
                          Mat* d_user = nullptr, Mat* d_item = nullptr) {
    BprResult r;
    if (batch.triples.empty()) return r;
    const double inv = 1.0 / static_cast<double>(batch.triples.size());
    for (const auto& t : batch.triples) {
        auto zu = z_user.row_span(t.user);
        auto zi = z_item.row_span(t.pos);
        auto zj = z_item.row_span(t.neg);
        const double s = dot(zu, zi) - dot(zu, zj);
        r.loss += softplus(-s) * inv;
        if (d_user) {
            const double g = (logistic(s) - 1.0) * inv;  // d loss / d s
            auto du = d_user->row_span(t.user);
            auto di = d_item->row_span(t.pos);
            auto dj = d_item->row_span(t.neg);
            for (std::size_t c = 0; c < zu.size(); ++c) {
                du[c] += g * (zi[c] - zj[c]);
                di[c] += g * zu[c];
                dj[c] -= g * zu[c];
            }
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Generative side: Mult-VAE encoder/decoder with analytic gradients.
// ---------------------------------------------------------------------------

struct GaussianState {
    Vec mean;
    Vec log_var;
};

// Parameter block names used by the VAE inside a ParamSet.
// encoder: enc_W1 (h x N), enc_b1 (h), enc_W2 (2*d_z x h), enc_b2 (2*d_z)
// decoder: dec_W1 (h x d_z), dec_b1 (h), dec_W2 (N x h), dec_b2 (N)
struct VAEConfig {
    std::size_t n_items = 0;
    std::size_t hidden = 600;
    std::size_t d_z = 200;
    double dropout = 0.5;
};

inline void add_vae_params(ParamSet& p, const VAEConfig& cfg, Rng& rng) {
    auto& w1 = p.add("enc_W1", cfg.hidden * cfg.n_items);
    xavier_init(w1.value, cfg.n_items, cfg.hidden, rng);
    p.add("enc_b1", cfg.hidden);
    auto& w2 = p.add("enc_W2", 2 * cfg.d_z * cfg.hidden);
    xavier_init(w2.value, cfg.hidden, 2 * cfg.d_z, rng);
    p.add("enc_b2", 2 * cfg.d_z);
    auto& w3 = p.add("dec_W1", cfg.hidden * cfg.d_z);
    xavier_init(w3.value, cfg.d_z, cfg.hidden, rng);
    p.add("dec_b1", cfg.hidden);
    auto& w4 = p.add("dec_W2", cfg.n_items * cfg.hidden);
    xavier_init(w4.value, cfg.hidden, cfg.n_items, rng);
    p.add("dec_b2", cfg.n_items);
}

// Cached encoder forward pass for one user row.
struct VaeEncodeCache {
    std::vector<int> kept;  // surviving item ids after dropout
    double x_val = 0.0;     // value of each surviving coordinate after L2 norm
    Vec h;                  // tanh hidden
    GaussianState q;
    Vec eps;  // reparameterization noise (empty in eval mode)
    Vec z;
};

// Input is the binary row restricted to `items`; train mode applies the
// given keep mask before L2 normalization, eval mode uses the full row.
inline VaeEncodeCache vae_encode(const ParamSet& p, const VAEConfig& cfg,
                                 const std::vector<int>& items, const std::vector<char>* keep,
                                 const Vec* eps) {
    VaeEncodeCache c;
    if (keep) {
        for (std::size_t j = 0; j < items.size(); ++j)
            if ((*keep)[j]) c.kept.push_back(items[j]);
    } else {
        c.kept = items;
    }
    c.x_val = c.kept.empty() ? 0.0 : 1.0 / std::sqrt(static_cast<double>(c.kept.size()));

    const Vec& W1 = p["enc_W1"].value;
    const Vec& b1 = p["enc_b1"].value;
    c.h.assign(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        double s = b1[j];
        for (int i : c.kept) s += W1[j * cfg.n_items + i] * c.x_val;
        c.h[j] = std::tanh(s);
    }
    const Vec& W2 = p["enc_W2"].value;
    const Vec& b2 = p["enc_b2"].value;
    c.q.mean.assign(cfg.d_z, 0.0);
    c.q.log_var.assign(cfg.d_z, 0.0);
    for (std::size_t j = 0; j < 2 * cfg.d_z; ++j) {
        double s = b2[j];
        const double* wrow = W2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) s += wrow[k] * c.h[k];
        if (j < cfg.d_z)
            c.q.mean[j] = s;
        else
            c.q.log_var[j - cfg.d_z] = s;
    }
    c.z = c.q.mean;
    if (eps) {
        c.eps = *eps;
        for (std::size_t j = 0; j < cfg.d_z; ++j)
            c.z[j] += std::exp(0.5 * c.q.log_var[j]) * c.eps[j];
    }
    return c;
}

// Backpropagates (d_mean, d_log_var, d_z) through the encoder into p.grad.
inline void vae_encode_backward(ParamSet& p, const VAEConfig& cfg, const VaeEncodeCache& c,
                                const Vec& d_mean, const Vec& d_log_var, const Vec& d_z) {
    Vec dm = d_mean, dlv = d_log_var;
    if (!d_z.empty()) {
        for (std::size_t j = 0; j < cfg.d_z; ++j) {
            dm[j] += d_z[j];
            if (!c.eps.empty())
                dlv[j] += d_z[j] * 0.5 * std::exp(0.5 * c.q.log_var[j]) * c.eps[j];
        }
    }
    const Vec& W2 = p["enc_W2"].value;
    Vec& gW2 = p["enc_W2"].grad;
    Vec& gb2 = p["enc_b2"].grad;
    Vec dh(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < 2 * cfg.d_z; ++j) {
        const double g = j < cfg.d_z ? dm[j] : dlv[j - cfg.d_z];
        if (g == 0.0) continue;
        gb2[j] += g;
        const double* wrow = W2.data() + j * cfg.hidden;
        double* grow = gW2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) {
            grow[k] += g * c.h[k];
            dh[k] += g * wrow[k];
        }
    }
    Vec& gW1 = p["enc_W1"].grad;
    Vec& gb1 = p["enc_b1"].grad;
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        const double gpre = dh[j] * (1.0 - c.h[j] * c.h[j]);
        if (gpre == 0.0) continue;
        gb1[j] += gpre;
        for (int i : c.kept) gW1[j * cfg.n_items + i] += gpre * c.x_val;
    }
}

struct VaeDecodeCache {
    Vec h;
    Vec logits;
};

inline VaeDecodeCache vae_decode(const ParamSet& p, const VAEConfig& cfg, const Vec& z) {
    VaeDecodeCache c;
    const Vec& W1 = p["dec_W1"].value;
    const Vec& b1 = p["dec_b1"].value;
    c.h.assign(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        double s = b1[j];
        const double* wrow = W1.data() + j * cfg.d_z;
        for (std::size_t k = 0; k < cfg.d_z; ++k) s += wrow[k] * z[k];
        c.h[j] = std::tanh(s);
    }
    const Vec& W2 = p["dec_W2"].value;
    const Vec& b2 = p["dec_b2"].value;
    c.logits.assign(cfg.n_items, 0.0);
    for (std::size_t j = 0; j < cfg.n_items; ++j) {
        double s = b2[j];
        const double* wrow = W2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) s += wrow[k] * c.h[k];
        c.logits[j] = s;
    }
    return c;
}

// Returns d_z given d_logits; accumulates decoder parameter gradients.
inline Vec vae_decode_backward(ParamSet& p, const VAEConfig& cfg, const VaeDecodeCache& c,
                               const Vec& z, const Vec& d_logits) {
    const Vec& W2 = p["dec_W2"].value;
    Vec& gW2 = p["dec_W2"].grad;
    Vec& gb2 = p["dec_b2"].grad;
    Vec dh(cfg.hidden, 0.0);
    for (std::size_t j = 0; j < cfg.n_items; ++j) {
        const double g = d_logits[j];
        if (g == 0.0) continue;
        gb2[j] += g;
        const double* wrow = W2.data() + j * cfg.hidden;
        double* grow = gW2.data() + j * cfg.hidden;
        for (std::size_t k = 0; k < cfg.hidden; ++k) {
            grow[k] += g * c.h[k];
            dh[k] += g * wrow[k];
        }
    }
    const Vec& W1 = p["dec_W1"].value;
    Vec& gW1 = p["dec_W1"].grad;
    Vec& gb1 = p["dec_b1"].grad;
    Vec dz(cfg.d_z, 0.0);
    for (std::size_t j = 0; j < cfg.hidden; ++j) {
        const double gpre = dh[j] * (1.0 - c.h[j] * c.h[j]);
        if (gpre == 0.0) continue;
        gb1[j] += gpre;
        const double* wrow = W1.data() + j * cfg.d_z;
        double* grow = gW1.data() + j * cfg.d_z;
        for (std::size_t k = 0; k < cfg.d_z; ++k) {
            grow[k] += gpre * z[k];
            dz[k] += gpre * wrow[k];
        }
    }
    return dz;
}

// Multinomial log-likelihood loss: -sum_i x_i * log softmax(logits)_i.
// Gradient w.r.t. logits is (#positives) * softmax - x.
inline double multinomial_loss(const Vec& logits, const std::vector<int>& positives,
                               Vec* d_logits = nullptr) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    const double log_denom = std::log(denom) + mx;
    double loss = 0.0;
    for (int i : positives) loss += log_denom - logits[i];
    if (d_logits) {
        d_logits->assign(logits.size(), 0.0);
        const double n_pos = static_cast<double>(positives.size());
        for (std::size_t j = 0; j < logits.size(); ++j)
            (*d_logits)[j] = n_pos * std::exp(logits[j] - log_denom);
        for (int i : positives) (*d_logits)[i] -= 1.0;
    }
    return loss;
}

// KL(N(mu, sigma^2) || N(0, I)) in log-variance parameterization.
inline double vae_kl(const GaussianState& q, Vec* d_mean = nullptr, Vec* d_log_var = nullptr) {
    double kl = 0.0;
    if (d_mean) d_mean->assign(q.mean.size(), 0.0);
    if (d_log_var) d_log_var->assign(q.mean.size(), 0.0);
    for (std::size_t j = 0; j < q.mean.size(); ++j) {
        const double var = std::exp(q.log_var[j]);
        kl += 0.5 * (var + q.mean[j] * q.mean[j] - 1.0 - q.log_var[j]);
        if (d_mean) (*d_mean)[j] = q.mean[j];
        if (d_log_var) (*d_log_var)[j] = 0.5 * (var - 1.0);
    }
    return kl;
}

}  // namespace proex
