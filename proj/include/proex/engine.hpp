#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "proex/alignment.hpp"
#include "proex/common.hpp"
#include "proex/dataset.hpp"
#include "proex/evaluation.hpp"
#include "proex/extrapolation.hpp"
#include "proex/profiles.hpp"
#include "proex/recommenders.hpp"
#include "proex/rng.hpp"

namespace proex {

enum class BaseModel { MfBpr, LightGcn, MultVae };

inline const char* base_model_name(BaseModel m) {
    switch (m) {
        case BaseModel::MfBpr: return "mf-bpr";
        case BaseModel::LightGcn: return "lightgcn";
        case BaseModel::MultVae: return "mult-vae";
    }
    return "?";
}

inline BaseModel base_model_from_name(const std::string& s) {
    if (s == "mf-bpr") return BaseModel::MfBpr;
    if (s == "lightgcn") return BaseModel::LightGcn;
    if (s == "mult-vae") return BaseModel::MultVae;
    throw Error("unknown base model: " + s);
}

inline bool is_generative(BaseModel m) { return m == BaseModel::MultVae; }

struct HyperParams {
    double lr = 0.001;
    std::size_t batch_size = 4096;  // 1024 is the generative default
    std::size_t d = 32;             // discriminative embedding dim
    std::size_t d_z = 200;          // generative latent dim
    std::size_t vae_hidden = 600;
    int K = 4;
    std::size_t num_envs = 2;
    double tau = 0.2;        // contrastive regularizer temperature
    double align_tau = 0.2;  // InfoNCE temperature
    Vec alphas;              // empty -> K copies of 0.1
    double lambda1 = 0.5;    // alignment weight, [0,1]
    double lambda2 = 0.2;    // regularizer weight, [0,2]
    double lambda3 = 1.0;    // variance weight
    double beta = 0.5;       // prior trade-off in the Gaussian alignment
    double kl_anneal = 0.2;  // decay coefficient, [0.1,0.9]
    double dropout = 0.5;
    int layers = 3;  // GCN layers (0 for MF-BPR)
    int patience = 20;
    int max_epochs = 200;
    bool reg_normalize = true;

    Vec effective_alphas() const {
        if (!alphas.empty()) return alphas;
        return Vec(static_cast<std::size_t>(K), 0.1);
    }

    void validate() const {
        if (K < 1 || num_envs < 1) throw Error("K and num_envs must be >= 1");
        if (lambda1 < 0.0 || lambda1 > 1.0) throw Error("lambda1 out of [0,1]");
        if (lambda2 < 0.0 || lambda2 > 2.0) throw Error("lambda2 out of [0,2]");
        if (!(tau > 0.0) || !(align_tau > 0.0)) throw Error("temperatures must be positive");
        if (beta < 0.0 || beta > 1.0) throw Error("beta out of [0,1]");
    }
};

// Full model state: base-model and alignment parameters plus the static
// shape information needed to run them.
struct ProExModel {
    BaseModel kind = BaseModel::LightGcn;
    HyperParams hp;
    std::size_t num_users = 0, num_items = 0;
    std::size_t d_s_user = 0, d_s_item = 0;
    ParamSet params;
    VAEConfig vae;
    AggAlignConfig agg;
};

inline ProExModel make_model(BaseModel kind, const HyperParams& hp, const InteractionDataset& ds,
                             const ProfileSet& user_profiles, const ProfileSet& item_profiles,
                             Rng& rng) {
    hp.validate();
    ProExModel m;
    m.kind = kind;
    m.hp = hp;
    if (kind == BaseModel::MfBpr) m.hp.layers = 0;
    m.num_users = ds.num_users;
    m.num_items = ds.num_items;
    m.d_s_user = user_profiles.d_s;
    m.d_s_item = item_profiles.d_s;
    if (user_profiles.count != ds.num_users || item_profiles.count != ds.num_items)
        throw Error("profile set does not cover every entity");
    if (user_profiles.K != hp.K || item_profiles.K != hp.K)
        throw Error("profile set K does not match hyperparameters");

    if (is_generative(kind)) {
        m.vae = VAEConfig{ds.num_items, hp.vae_hidden, hp.d_z, hp.dropout};
        add_vae_params(m.params, m.vae, rng);
        m.agg = AggAlignConfig{static_cast<std::size_t>(user_profiles.d_s),
                               std::max<std::size_t>(1, user_profiles.d_s / 2), hp.d_z};
        add_agg_align_params(m.params, m.agg, rng);
    } else {
        auto& ue = m.params.add("user_emb", ds.num_users * hp.d);
        xavier_init(ue.value, ds.num_users, hp.d, rng);
        auto& ie = m.params.add("item_emb", ds.num_items * hp.d);
        xavier_init(ie.value, ds.num_items, hp.d, rng);
        add_direct_align_params(m.params, "align_user", user_profiles.d_s, hp.d);
        add_direct_align_params(m.params, "align_item", item_profiles.d_s, hp.d);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

class Adam {
public:
    explicit Adam(double lr) : lr_(lr) {}

    void step(ParamSet& p) {
        if (m_.empty()) {
            for (const auto& b : p.blocks()) {
                m_.emplace_back(b.value.size(), 0.0);
                v_.emplace_back(b.value.size(), 0.0);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(0.9, t_);
        const double bc2 = 1.0 - std::pow(0.999, t_);
        for (std::size_t bi = 0; bi < p.blocks().size(); ++bi) {
            auto& b = p.blocks()[bi];
            if (!all_finite(b.grad))
                throw Error("non-finite gradient in block " + b.name);
            for (std::size_t j = 0; j < b.value.size(); ++j) {
                const double g = b.grad[j];
                m_[bi][j] = 0.9 * m_[bi][j] + 0.1 * g;
                v_[bi][j] = 0.999 * v_[bi][j] + 0.001 * g * g;
                b.value[j] -= lr_ * (m_[bi][j] / bc1) / (std::sqrt(v_[bi][j] / bc2) + 1e-8);
            }
        }
    }

    long long steps() const { return t_; }

private:
    double lr_;
    long long t_ = 0;
    std::vector<Vec> m_, v_;
};

struct StepResult {
    double total = 0.0;
    double rec = 0.0;    // summed recommendation term over environments
    double align = 0.0;  // summed weighted alignment term
    double reg = 0.0;    // regularizer value (unweighted)
    double var = 0.0;    // population variance of env losses
    std::vector<double> env_losses;
};

namespace detail {

inline double env_variance(const std::vector<double>& ls) {
    const double n = static_cast<double>(ls.size());
    double mean = std::accumulate(ls.begin(), ls.end(), 0.0) / n;
    double var = 0.0;
    for (double l : ls) var += (l - mean) * (l - mean);
    return var / n;
}

// d total / d L^e for total = sum_e L^e + lambda3 * Var_e(L^e).
inline std::vector<double> env_weights_through_variance(const std::vector<double>& ls,
                                                        double lambda3) {
    const double n = static_cast<double>(ls.size());
    const double mean = std::accumulate(ls.begin(), ls.end(), 0.0) / n;
    std::vector<double> w(ls.size());
    for (std::size_t e = 0; e < ls.size(); ++e) w[e] = 1.0 + lambda3 * 2.0 * (ls[e] - mean) / n;
    return w;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Discriminative training step (MF-BPR / LightGCN).
// One theta draw per environment, shared across the batch and both sides.
// ---------------------------------------------------------------------------

inline StepResult disc_step(ProExModel& m, const InteractionDataset& ds,
                            const ProfileSet& user_profiles, const ProfileSet& item_profiles,
                            const PairwiseBatch& batch, const std::vector<Vec>& thetas,
                            bool with_grad) {
    const HyperParams& hp = m.hp;
    const std::size_t d = hp.d;
    const std::size_t E = thetas.size();
    const int K = hp.K;

    // Propagated representations.
    EmbeddingTable base;
    base.user_emb = Mat(m.num_users, d);
    base.item_emb = Mat(m.num_items, d);
    base.user_emb.a = m.params["user_emb"].value;
    base.item_emb.a = m.params["item_emb"].value;
    EmbeddingTable z = lightgcn_propagate(base, ds.adjacency, hp.layers);

    // Compact batch index space.
    std::vector<int> users, items;
    for (const auto& t : batch.triples) {
        users.push_back(t.user);
        items.push_back(t.pos);
        items.push_back(t.neg);
    }
    std::sort(users.begin(), users.end());
    users.erase(std::unique(users.begin(), users.end()), users.end());
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    std::map<int, int> ulocal, ilocal;
    for (std::size_t j = 0; j < users.size(); ++j) ulocal[users[j]] = static_cast<int>(j);
    for (std::size_t j = 0; j < items.size(); ++j) ilocal[items[j]] = static_cast<int>(j);
    const std::size_t Ub = users.size(), Ib = items.size();

    PairwiseBatch cbatch;
    cbatch.triples.reserve(batch.triples.size());
    for (const auto& t : batch.triples)
        cbatch.triples.push_back({ulocal[t.user], ilocal[t.pos], ilocal[t.neg]});

    Mat zu(Ub, d), zi(Ib, d);
    for (std::size_t j = 0; j < Ub; ++j)
        std::copy_n(z.user_emb.row(users[j]), d, zu.row(j));
    for (std::size_t j = 0; j < Ib; ++j)
        std::copy_n(z.item_emb.row(items[j]), d, zi.row(j));

    // Aligned profiles for every batch entity.
    auto align_all = [&](const ProfileSet& ps, const std::vector<int>& ids, const char* prefix) {
        std::vector<std::vector<Vec>> out(ids.size());
        for (std::size_t j = 0; j < ids.size(); ++j) {
            out[j].reserve(K);
            for (int k = 0; k < K; ++k)
                out[j].push_back(direct_align(m.params, prefix, ps.at(ids[j], k)));
        }
        return out;
    };
    auto cu = align_all(user_profiles, users, "align_user");
    auto ci = align_all(item_profiles, items, "align_item");

    StepResult res;

    // Contrastive regularizer, mean over batch entities of both sides.
    std::vector<std::vector<Vec>> dreg_u, dreg_i;
    if (K >= 2) {
        if (with_grad && hp.lambda2 != 0.0) {
            dreg_u.assign(Ub, std::vector<Vec>(K, Vec(d, 0.0)));
            dreg_i.assign(Ib, std::vector<Vec>(K, Vec(d, 0.0)));
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < Ub; ++j)
            sum += contrastive_reg_loss(cu[j], hp.tau, dreg_u.empty() ? nullptr : &dreg_u[j],
                                        hp.reg_normalize);
        for (std::size_t j = 0; j < Ib; ++j)
            sum += contrastive_reg_loss(ci[j], hp.tau, dreg_i.empty() ? nullptr : &dreg_i[j],
                                        hp.reg_normalize);
        res.reg = sum / static_cast<double>(Ub + Ib);
    }

    // Per-environment forward.
    std::vector<Mat> mu_env(E), mi_env(E), fu_env(E), fi_env(E);
    for (std::size_t e = 0; e < E; ++e) {
        mu_env[e] = Mat(Ub, d);
        mi_env[e] = Mat(Ib, d);
        for (std::size_t j = 0; j < Ub; ++j) {
            auto row = mu_env[e].row_span(j);
            for (int k = 0; k < K; ++k) axpy(thetas[e][k], cu[j][k], row);
        }
        for (std::size_t j = 0; j < Ib; ++j) {
            auto row = mi_env[e].row_span(j);
            for (int k = 0; k < K; ++k) axpy(thetas[e][k], ci[j][k], row);
        }
        fu_env[e] = zu;
        fi_env[e] = zi;
        for (std::size_t j = 0; j < fu_env[e].a.size(); ++j) fu_env[e].a[j] += mu_env[e].a[j];
        for (std::size_t j = 0; j < fi_env[e].a.size(); ++j) fi_env[e].a[j] += mi_env[e].a[j];

        const double l_rec = bpr_loss(cbatch, fu_env[e], fi_env[e]).loss;
        double l_align = 0.0;
        if (hp.lambda1 != 0.0) {
            l_align = 0.5 * (infonce_alignment_loss(zu, mu_env[e], hp.align_tau) +
                             infonce_alignment_loss(zi, mi_env[e], hp.align_tau));
        }
        res.rec += l_rec;
        res.align += hp.lambda1 * l_align;
        res.env_losses.push_back(l_rec + hp.lambda1 * l_align);
    }
    res.var = detail::env_variance(res.env_losses);
    res.total = std::accumulate(res.env_losses.begin(), res.env_losses.end(), 0.0) +
                hp.lambda2 * res.reg + hp.lambda3 * res.var;

    if (!with_grad) return res;

    const auto w = detail::env_weights_through_variance(res.env_losses, hp.lambda3);

    Mat dzu(Ub, d), dzi(Ib, d);
    std::vector<std::vector<Vec>> dcu(Ub, std::vector<Vec>(K, Vec(d, 0.0)));
    std::vector<std::vector<Vec>> dci(Ib, std::vector<Vec>(K, Vec(d, 0.0)));

    for (std::size_t e = 0; e < E; ++e) {
        Mat dfu(Ub, d), dfi(Ib, d);
        bpr_loss(cbatch, fu_env[e], fi_env[e], &dfu, &dfi);
        Mat dzu_a(Ub, d), dmu_a(Ub, d), dzi_a(Ib, d), dmi_a(Ib, d);
        if (hp.lambda1 != 0.0) {
            infonce_alignment_loss(zu, mu_env[e], hp.align_tau, &dzu_a, &dmu_a);
            infonce_alignment_loss(zi, mi_env[e], hp.align_tau, &dzi_a, &dmi_a);
        }
        const double c1 = 0.5 * hp.lambda1 * w[e];
        for (std::size_t j = 0; j < Ub * d; ++j) {
            const double dm = w[e] * dfu.a[j] + c1 * dmu_a.a[j];
            dzu.a[j] += w[e] * dfu.a[j] + c1 * dzu_a.a[j];
            // distribute mixed-profile gradient over the K profiles
            const std::size_t row = j / d, col = j % d;
            for (int k = 0; k < K; ++k) dcu[row][k][col] += thetas[e][k] * dm;
        }
        for (std::size_t j = 0; j < Ib * d; ++j) {
            const double dm = w[e] * dfi.a[j] + c1 * dmi_a.a[j];
            dzi.a[j] += w[e] * dfi.a[j] + c1 * dzi_a.a[j];
            const std::size_t row = j / d, col = j % d;
            for (int k = 0; k < K; ++k) dci[row][k][col] += thetas[e][k] * dm;
        }
    }

    if (!dreg_u.empty()) {
        const double c = hp.lambda2 / static_cast<double>(Ub + Ib);
        for (std::size_t j = 0; j < Ub; ++j)
            for (int k = 0; k < K; ++k)
                axpy(c, dreg_u[j][k], std::span<double>(dcu[j][k]));
        for (std::size_t j = 0; j < Ib; ++j)
            for (int k = 0; k < K; ++k)
                axpy(c, dreg_i[j][k], std::span<double>(dci[j][k]));
    }

    for (std::size_t j = 0; j < Ub; ++j)
        for (int k = 0; k < K; ++k)
            direct_align_backward(m.params, "align_user", user_profiles.at(users[j], k),
                                  dcu[j][k]);
    for (std::size_t j = 0; j < Ib; ++j)
        for (int k = 0; k < K; ++k)
            direct_align_backward(m.params, "align_item", item_profiles.at(items[j], k),
                                  dci[j][k]);

    // Backpropagate through the propagation (the stacked operator is
    // symmetric, so it is its own transpose).
    EmbeddingTable dz_full;
    dz_full.user_emb = Mat(m.num_users, d);
    dz_full.item_emb = Mat(m.num_items, d);
    for (std::size_t j = 0; j < Ub; ++j)
        std::copy_n(dzu.row(j), d, dz_full.user_emb.row(users[j]));
    for (std::size_t j = 0; j < Ib; ++j)
        std::copy_n(dzi.row(j), d, dz_full.item_emb.row(items[j]));
    EmbeddingTable g = lightgcn_propagate(dz_full, ds.adjacency, hp.layers);
    axpy(1.0, g.user_emb.a, std::span<double>(m.params["user_emb"].grad));
    axpy(1.0, g.item_emb.a, std::span<double>(m.params["item_emb"].grad));
    return res;
}

// ---------------------------------------------------------------------------
// Generative training step (Mult-VAE).
// ---------------------------------------------------------------------------

// All randomness of one generative step, drawn up front so the step itself
// is a deterministic function (finite-difference checkable).
struct GenStepNoise {
    std::vector<std::vector<char>> keep;   // [user][train item] dropout mask
    std::vector<Vec> enc_eps;              // [user] d_z
    std::vector<std::vector<Vec>> env_eps; // [env][user] d_z
};

inline GenStepNoise make_gen_noise(const InteractionDataset& ds, const std::vector<int>& users,
                                   const HyperParams& hp, Rng& rng) {
    GenStepNoise n;
    n.keep.resize(users.size());
    n.enc_eps.resize(users.size());
    for (std::size_t j = 0; j < users.size(); ++j) {
        const auto& row = ds.train[users[j]];
        n.keep[j].resize(row.size());
        for (std::size_t i = 0; i < row.size(); ++i)
            n.keep[j][i] = rng.uniform() >= hp.dropout ? 1 : 0;
        n.enc_eps[j].resize(hp.d_z);
        fill_normal(n.enc_eps[j], rng);
    }
    n.env_eps.assign(hp.num_envs, {});
    for (auto& per_env : n.env_eps) {
        per_env.resize(users.size());
        for (auto& v : per_env) {
            v.resize(hp.d_z);
            fill_normal(v, rng);
        }
    }
    return n;
}

// Aggregation-map input for user u and profile index k: mean of the train
// neighbors' item profile-k vectors plus the user's own vector.
inline Vec gen_agg_input(const InteractionDataset& ds, const ProfileSet& user_profiles,
                         const ProfileSet& item_profiles, int u, int k) {
    std::vector<std::span<const double>> neigh;
    for (int i : neighbor_items(ds, u)) neigh.push_back(item_profiles.at(i, k));
    return agg_align_input(user_profiles.at(u, k), neigh);
}

inline StepResult gen_step(ProExModel& m, const InteractionDataset& ds,
                           const ProfileSet& user_profiles, const ProfileSet& item_profiles,
                           const std::vector<int>& users, const std::vector<Vec>& thetas,
                           const GenStepNoise& noise, bool with_grad) {
    const HyperParams& hp = m.hp;
    const std::size_t E = thetas.size();
    const int K = hp.K;
    const std::size_t B = users.size();
    const std::size_t dz = hp.d_z;
    const double invB = 1.0 / static_cast<double>(B);

    struct UserCache {
        VaeEncodeCache enc;
        Vec kl_dmean, kl_dlv;
        double kl = 0.0;
        std::vector<AggAlignCache> agg;  // K caches
        std::vector<Vec> mu_k, var_k;    // aligned means / variances
        std::vector<Vec> dreg_mu;        // regularizer grads on mu_k
        // per environment
        std::vector<GaussianState> mixed;      // mean + variance (in log_var slot)
        std::vector<Vec> c_env;                // sampled profile representation
        std::vector<Vec> z_env;                // fused latent
        std::vector<VaeDecodeCache> dec;       // decode caches
        std::vector<double> l_align;           // per env
    };
    std::vector<UserCache> uc(B);

    StepResult res;
    res.env_losses.assign(E, 0.0);
    std::vector<double> env_align(E, 0.0);

    for (std::size_t j = 0; j < B; ++j) {
        const int u = users[j];
        auto& c = uc[j];
        c.enc = vae_encode(m.params, m.vae, ds.train[u], &noise.keep[j], &noise.enc_eps[j]);
        c.kl = vae_kl(c.enc.q, with_grad ? &c.kl_dmean : nullptr,
                      with_grad ? &c.kl_dlv : nullptr);

        c.agg.reserve(K);
        for (int k = 0; k < K; ++k) {
            c.agg.push_back(
                aggregation_align(m.params, m.agg, gen_agg_input(ds, user_profiles, item_profiles, u, k)));
            c.mu_k.push_back(c.agg.back().state.mean);
            Vec var(dz);
            for (std::size_t q = 0; q < dz; ++q)
                var[q] = std::exp(c.agg.back().state.log_var[q]);
            c.var_k.push_back(std::move(var));
        }

        if (K >= 2) {
            if (with_grad && hp.lambda2 != 0.0) c.dreg_mu.assign(K, Vec(dz, 0.0));
            res.reg += invB * contrastive_reg_loss(c.mu_k, hp.tau,
                                                   c.dreg_mu.empty() ? nullptr : &c.dreg_mu,
                                                   hp.reg_normalize);
        }

        Vec q_var(dz);
        for (std::size_t q = 0; q < dz; ++q) q_var[q] = std::exp(c.enc.q.log_var[q]);

        c.mixed.resize(E);
        c.c_env.resize(E);
        c.z_env.resize(E);
        c.dec.resize(E);
        c.l_align.assign(E, 0.0);
        for (std::size_t e = 0; e < E; ++e) {
            c.mixed[e] = mix_gaussians(c.mu_k, c.var_k, thetas[e]);
            const Vec& eps = noise.env_eps[e][j];
            c.c_env[e] = c.mixed[e].mean;
            for (std::size_t q = 0; q < dz; ++q)
                c.c_env[e][q] += std::sqrt(c.mixed[e].log_var[q]) * eps[q];
            c.z_env[e] = fuse(c.enc.z, c.c_env[e]);
            c.dec[e] = vae_decode(m.params, m.vae, c.z_env[e]);
            const double l_mult = multinomial_loss(c.dec[e].logits, ds.train[u]);
            const double l_rec = l_mult + hp.kl_anneal * c.kl;
            double l_align = 0.0;
            if (hp.lambda1 != 0.0)
                l_align = gaussian_alignment_loss(c.enc.q.mean, q_var, c.mixed[e].mean,
                                                  c.mixed[e].log_var, hp.beta);
            c.l_align[e] = l_align;
            res.env_losses[e] += invB * (l_rec + hp.lambda1 * l_align);
            res.rec += invB * l_rec;
            env_align[e] += invB * hp.lambda1 * l_align;
        }
    }
    res.align = std::accumulate(env_align.begin(), env_align.end(), 0.0);
    res.var = detail::env_variance(res.env_losses);
    res.total = std::accumulate(res.env_losses.begin(), res.env_losses.end(), 0.0) +
                hp.lambda2 * res.reg + hp.lambda3 * res.var;

    if (!with_grad) return res;

    const auto w = detail::env_weights_through_variance(res.env_losses, hp.lambda3);

    for (std::size_t j = 0; j < B; ++j) {
        const int u = users[j];
        auto& c = uc[j];
        Vec q_var(dz);
        for (std::size_t q = 0; q < dz; ++q) q_var[q] = std::exp(c.enc.q.log_var[q]);

        Vec d_qmean(dz, 0.0), d_qlv(dz, 0.0), d_qz(dz, 0.0);
        std::vector<Vec> d_mu_k(K, Vec(dz, 0.0)), d_var_k(K, Vec(dz, 0.0));

        double kl_coeff = 0.0;
        for (std::size_t e = 0; e < E; ++e) {
            const double we = w[e] * invB;
            kl_coeff += we * hp.kl_anneal;

            Vec d_logits;
            multinomial_loss(c.dec[e].logits, ds.train[u], &d_logits);
            for (double& v : d_logits) v *= we;
            const Vec d_ze = vae_decode_backward(m.params, m.vae, c.dec[e], c.z_env[e], d_logits);

            // z^e = z_u + c~^e; c~^e = mu^e + sqrt(var^e) * eps
            Vec d_mu_e(dz, 0.0), d_var_e(dz, 0.0);
            const Vec& eps = noise.env_eps[e][j];
            for (std::size_t q = 0; q < dz; ++q) {
                d_qz[q] += d_ze[q];
                d_mu_e[q] += d_ze[q];
                const double sd = std::sqrt(c.mixed[e].log_var[q]);
                if (sd > 0.0) d_var_e[q] += d_ze[q] * eps[q] / (2.0 * sd);
            }
            if (hp.lambda1 != 0.0) {
                GaussianAlignGrads g;
                gaussian_alignment_loss(c.enc.q.mean, q_var, c.mixed[e].mean, c.mixed[e].log_var,
                                        hp.beta, &g);
                const double wa = we * hp.lambda1;
                for (std::size_t q = 0; q < dz; ++q) {
                    d_qmean[q] += wa * g.d_target_mean[q];
                    d_qlv[q] += wa * g.d_target_var[q] * q_var[q];
                    d_mu_e[q] += wa * g.d_env_mean[q];
                    d_var_e[q] += wa * g.d_env_var[q];
                }
            }
            for (int k = 0; k < K; ++k)
                for (std::size_t q = 0; q < dz; ++q) {
                    d_mu_k[k][q] += thetas[e][k] * d_mu_e[q];
                    d_var_k[k][q] += thetas[e][k] * d_var_e[q];
                }
        }
        for (std::size_t q = 0; q < dz; ++q) {
            d_qmean[q] += kl_coeff * c.kl_dmean[q];
            d_qlv[q] += kl_coeff * c.kl_dlv[q];
        }
        if (!c.dreg_mu.empty()) {
            const double cr = hp.lambda2 * invB;
            for (int k = 0; k < K; ++k)
                axpy(cr, c.dreg_mu[k], std::span<double>(d_mu_k[k]));
        }

        vae_encode_backward(m.params, m.vae, c.enc, d_qmean, d_qlv, d_qz);
        for (int k = 0; k < K; ++k) {
            Vec d_lv_k(dz);
            for (std::size_t q = 0; q < dz; ++q) d_lv_k[q] = d_var_k[k][q] * c.var_k[k][q];
            aggregation_align_backward(m.params, m.agg, c.agg[k], d_mu_k[k], d_lv_k);
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Inference (Algorithm 2): mean-pool the K aligned profiles, fuse with the
// eval-mode base representation, score every unmasked item.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<int>> infer_topn(const ProExModel& model,
                                                const InteractionDataset& ds,
                                                const ProfileSet& user_profiles,
                                                const ProfileSet& item_profiles, int top_n,
                                                bool mask_val) {
    ProExModel& m = const_cast<ProExModel&>(model);  // read-only access to params
    std::vector<std::vector<int>> rankings(ds.num_users);
    const int K = m.hp.K;

    auto masked_row = [&](int u) {
        std::vector<char> masked(ds.num_items, 0);
        for (int i : ds.train[u]) masked[i] = 1;
        if (mask_val)
            for (int i : ds.val[u]) masked[i] = 1;
        return masked;
    };

    if (is_generative(m.kind)) {
        for (std::size_t u = 0; u < ds.num_users; ++u) {
            auto enc = vae_encode(m.params, m.vae, ds.train[u], nullptr, nullptr);
            Vec pooled(m.hp.d_z, 0.0);
            for (int k = 0; k < K; ++k) {
                auto cache = aggregation_align(
                    m.params, m.agg,
                    gen_agg_input(ds, user_profiles, item_profiles, static_cast<int>(u), k));
                axpy(1.0 / K, cache.state.mean, std::span<double>(pooled));
            }
            const Vec z = fuse(enc.z, pooled);
            auto dec = vae_decode(m.params, m.vae, z);
            rankings[u] = rank_items(dec.logits, masked_row(static_cast<int>(u)), top_n);
        }
        return rankings;
    }

    EmbeddingTable base;
    base.user_emb = Mat(m.num_users, m.hp.d);
    base.item_emb = Mat(m.num_items, m.hp.d);
    base.user_emb.a = m.params["user_emb"].value;
    base.item_emb.a = m.params["item_emb"].value;
    EmbeddingTable z = lightgcn_propagate(base, ds.adjacency, m.hp.layers);

    Mat fu(m.num_users, m.hp.d), fi(m.num_items, m.hp.d);
    for (std::size_t u = 0; u < ds.num_users; ++u) {
        Vec pooled(m.hp.d, 0.0);
        for (int k = 0; k < K; ++k)
            axpy(1.0 / K, direct_align(m.params, "align_user", user_profiles.at(u, k)),
                 std::span<double>(pooled));
        auto f = fuse(z.user_emb.row_span(u), pooled);
        std::copy(f.begin(), f.end(), fu.row(u));
    }
    for (std::size_t i = 0; i < ds.num_items; ++i) {
        Vec pooled(m.hp.d, 0.0);
        for (int k = 0; k < K; ++k)
            axpy(1.0 / K, direct_align(m.params, "align_item", item_profiles.at(i, k)),
                 std::span<double>(pooled));
        auto f = fuse(z.item_emb.row_span(i), pooled);
        std::copy(f.begin(), f.end(), fi.row(i));
    }
    for (std::size_t u = 0; u < ds.num_users; ++u) {
        Vec scores(ds.num_items);
        for (std::size_t i = 0; i < ds.num_items; ++i)
            scores[i] = dot(fu.row_span(u), fi.row_span(i));
        rankings[u] = rank_items(scores, masked_row(static_cast<int>(u)), top_n);
    }
    return rankings;
}

enum class EvalSplit { Validation, Test };

inline MetricReport evaluate_model(const ProExModel& model, const InteractionDataset& ds,
                                   const ProfileSet& user_profiles,
                                   const ProfileSet& item_profiles,
                                   const std::vector<int>& cutoffs, EvalSplit split) {
    const int top_n = *std::max_element(cutoffs.begin(), cutoffs.end());
    const bool mask_val = split == EvalSplit::Test;
    auto rankings = infer_topn(model, ds, user_profiles, item_profiles, top_n, mask_val);
    const auto& truth = split == EvalSplit::Test ? ds.test : ds.val;
    return evaluate_rankings(rankings, truth, cutoffs);
}

// ---------------------------------------------------------------------------
// Training loop (Algorithm 1) with Adam and early stopping on validation
// Recall@20.
// ---------------------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double total = 0.0, rec = 0.0, align = 0.0, reg = 0.0, var = 0.0;
    double val_recall20 = 0.0;
};

struct TrainResult {
    ProExModel model;  // best-validation checkpoint
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_val = -1.0;
};

inline TrainResult train(const InteractionDataset& ds, const ProfileSet& user_profiles,
                         const ProfileSet& item_profiles, BaseModel kind, const HyperParams& hp,
                         std::uint64_t seed) {
    Rng rng(seed);
    TrainResult out;
    ProExModel model = make_model(kind, hp, ds, user_profiles, item_profiles, rng);
    Adam opt(hp.lr);
    EnvironmentConfig env_cfg{hp.num_envs, hp.effective_alphas(), true};

    std::vector<int> all_users(ds.num_users);
    std::iota(all_users.begin(), all_users.end(), 0);

    int stale = 0;
    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        EpochRecord recd;
        recd.epoch = epoch;
        int steps = 0;

        if (is_generative(kind)) {
            std::vector<int> order = all_users;
            std::shuffle(order.begin(), order.end(), rng.engine());
            for (std::size_t start = 0; start < order.size(); start += hp.batch_size) {
                std::vector<int> users(order.begin() + start,
                                       order.begin() +
                                           std::min(order.size(), start + hp.batch_size));
                const auto thetas = sample_env_weights(env_cfg, rng);
                const auto noise = make_gen_noise(ds, users, model.hp, rng);
                model.params.zero_grad();
                const auto r =
                    gen_step(model, ds, user_profiles, item_profiles, users, thetas, noise, true);
                opt.step(model.params);
                recd.total += r.total;
                recd.rec += r.rec;
                recd.align += r.align;
                recd.reg += r.reg;
                recd.var += r.var;
                ++steps;
            }
        } else {
            const std::size_t n_steps =
                std::max<std::size_t>(1, ds.train_size() / hp.batch_size);
            for (std::size_t s = 0; s < n_steps; ++s) {
                const auto batch = sample_pairwise_batch(ds, hp.batch_size, rng);
                const auto thetas = sample_env_weights(env_cfg, rng);
                model.params.zero_grad();
                const auto r =
                    disc_step(model, ds, user_profiles, item_profiles, batch, thetas, true);
                opt.step(model.params);
                recd.total += r.total;
                recd.rec += r.rec;
                recd.align += r.align;
                recd.reg += r.reg;
                recd.var += r.var;
                ++steps;
            }
        }
        if (steps > 0) {
            recd.total /= steps;
            recd.rec /= steps;
            recd.align /= steps;
            recd.reg /= steps;
            recd.var /= steps;
        }

        const auto rep =
            evaluate_model(model, ds, user_profiles, item_profiles, {20}, EvalSplit::Validation);
        recd.val_recall20 = rep.recall.at(20);
        out.history.push_back(recd);

        if (recd.val_recall20 > out.best_val) {
            out.best_val = recd.val_recall20;
            out.best_epoch = epoch;
            out.model = model;
            stale = 0;
        } else if (++stale >= hp.patience) {
            break;
        }
    }
    if (out.best_epoch < 0) out.model = model;
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "PROEX-CKPT v1" text header followed by named little-endian
// float64 parameter sections.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ProExModel& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint: " + path);
    out << "PROEX-CKPT v1 model=" << base_model_name(m.kind) << " users=" << m.num_users
        << " items=" << m.num_items << " d=" << m.hp.d << " d_z=" << m.hp.d_z
        << " hidden=" << m.hp.vae_hidden << " K=" << m.hp.K << " d_s_user=" << m.d_s_user
        << " d_s_item=" << m.d_s_item << " layers=" << m.hp.layers
        << " blocks=" << m.params.size() << "\n";
    for (const auto& b : m.params.blocks()) {
        out << b.name << ' ' << b.value.size() << '\n';
        out.write(reinterpret_cast<const char*>(b.value.data()),
                  static_cast<std::streamsize>(b.value.size() * sizeof(double)));
    }
    if (!out) throw Error("checkpoint write failed: " + path);
}

// Rebuilds a model from a checkpoint; `hp` supplies the training
// hyperparameters and is validated against the stored shapes.
inline ProExModel load_checkpoint(const std::string& path, const HyperParams& hp) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint: " + path);
    std::string header;
    if (!std::getline(in, header)) throw FormatError("empty checkpoint: " + path);
    std::istringstream hs(header);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != "PROEX-CKPT" || version != "v1")
        throw FormatError("bad checkpoint header: " + path);
    std::map<std::string, std::string> kv;
    std::string tok;
    while (hs >> tok) {
        const auto pos = tok.find('=');
        if (pos == std::string::npos) throw FormatError("bad checkpoint field: " + tok);
        kv[tok.substr(0, pos)] = tok.substr(pos + 1);
    }
    ProExModel m;
    m.kind = base_model_from_name(kv.at("model"));
    m.hp = hp;
    m.hp.d = std::stoul(kv.at("d"));
    m.hp.d_z = std::stoul(kv.at("d_z"));
    m.hp.vae_hidden = std::stoul(kv.at("hidden"));
    m.hp.K = std::stoi(kv.at("K"));
    m.hp.layers = std::stoi(kv.at("layers"));
    m.num_users = std::stoul(kv.at("users"));
    m.num_items = std::stoul(kv.at("items"));
    m.d_s_user = std::stoul(kv.at("d_s_user"));
    m.d_s_item = std::stoul(kv.at("d_s_item"));
    if (hp.K != m.hp.K) throw FormatError("checkpoint K does not match config");
    if (is_generative(m.kind)) {
        m.vae = VAEConfig{m.num_items, m.hp.vae_hidden, m.hp.d_z, m.hp.dropout};
        m.agg = AggAlignConfig{m.d_s_user, std::max<std::size_t>(1, m.d_s_user / 2), m.hp.d_z};
    }
    const std::size_t n_blocks = std::stoul(kv.at("blocks"));
    for (std::size_t bi = 0; bi < n_blocks; ++bi) {
        std::string name;
        std::size_t count;
        if (!(in >> name >> count)) throw FormatError("truncated checkpoint: " + path);
        in.ignore(1);  // newline
        auto& b = m.params.add(name, count);
        in.read(reinterpret_cast<char*>(b.value.data()),
                static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw FormatError("truncated checkpoint section " + name + ": " + path);
    }
    return m;
}

}  // namespace proex
