#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "proex/common.hpp"
#include "proex/dataset.hpp"
#include "proex/profiles.hpp"
#include "proex/rng.hpp"

namespace proex {

// Planted-factor corpus for desk-scale experiments: interactions come from
// a low-rank ground truth and profile vectors are (noisy) linear images of
// the same factors, so a model that uses the profiles has real signal.
struct SyntheticSpec {
    std::size_t num_users = 500;
    std::size_t num_items = 300;
    std::size_t latent_dim = 8;
    double density = 0.02;      // fraction of items each user interacts with
    int K = 4;                  // profiles per entity
    double noise = 0.3;         // profile noise scale
    int adversarial = 0;        // last `adversarial` profile slots are pure noise
    std::size_t d_s = 64;       // profile vector dimension

    void validate() const {
        if (!(density > 0.0) || density > 1.0) throw Error("density must be in (0,1]");
        if (noise < 0.0) throw Error("noise must be >= 0");
        if (K < 1 || adversarial < 0 || adversarial > K)
            throw Error("adversarial count must be in [0,K]");
        if (num_users == 0 || num_items == 0 || latent_dim == 0 || d_s == 0)
            throw Error("synthetic sizes must be positive");
    }
};

struct SyntheticData {
    InteractionDataset dataset;  // unsplit: everything in train
    ProfileSet user_profiles;
    ProfileSet item_profiles;
    Mat user_factors;  // num_users x latent_dim ground truth
    Mat item_factors;  // num_items x latent_dim
};

namespace detail {

// Profiles: c_{e,k} = W f_e + noise * g_{e,k}, with W a fixed random lift
// shared by all entities of one side; adversarial slots are pure noise.
inline ProfileSet make_profiles(EntityKind kind, const Mat& factors, const SyntheticSpec& spec,
                                Rng& rng) {
    ProfileSet ps;
    ps.kind = kind;
    ps.K = spec.K;
    ps.d_s = spec.d_s;
    ps.count = factors.rows;
    ps.vectors = Mat(factors.rows * spec.K, spec.d_s);

    Mat lift(spec.d_s, spec.latent_dim);
    fill_normal(lift.a, rng);
    for (double& v : lift.a) v /= std::sqrt(static_cast<double>(spec.latent_dim));

    for (std::size_t e = 0; e < factors.rows; ++e) {
        for (int k = 0; k < spec.K; ++k) {
            auto row = ps.vectors.row_span(e * spec.K + k);
            const bool pure_noise = k >= spec.K - spec.adversarial;
            if (!pure_noise)
                for (std::size_t a = 0; a < spec.d_s; ++a)
                    row[a] = dot(lift.row_span(a), factors.row_span(e));
            const double scale = pure_noise ? 1.0 : spec.noise;
            for (std::size_t a = 0; a < spec.d_s; ++a) {
                row[a] += scale * rng.normal();
                row[a] = quantize9(row[a]);
            }
        }
    }
    return ps;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    SyntheticData out;
    out.user_factors = Mat(spec.num_users, spec.latent_dim);
    out.item_factors = Mat(spec.num_items, spec.latent_dim);
    fill_normal(out.user_factors.a, rng);
    fill_normal(out.item_factors.a, rng);

    const std::size_t per_user = std::max<std::size_t>(
        1, static_cast<std::size_t>(spec.density * static_cast<double>(spec.num_items)));

    InteractionDataset& ds = out.dataset;
    ds.num_users = spec.num_users;
    ds.num_items = spec.num_items;
    ds.train.resize(ds.num_users);
    ds.val.resize(ds.num_users);
    ds.test.resize(ds.num_users);
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        std::vector<std::pair<double, int>> scored(spec.num_items);
        for (std::size_t i = 0; i < spec.num_items; ++i)
            scored[i] = {-dot(out.user_factors.row_span(u), out.item_factors.row_span(i)),
                         static_cast<int>(i)};
        std::partial_sort(scored.begin(), scored.begin() + per_user, scored.end());
        auto& row = ds.train[u];
        for (std::size_t r = 0; r < per_user; ++r) row.push_back(scored[r].second);
        std::sort(row.begin(), row.end());
    }
    for (std::size_t u = 0; u < spec.num_users; ++u) {
        ds.user_id_map["u" + std::to_string(u)] = static_cast<int>(u);
        ds.user_ids.push_back("u" + std::to_string(u));
    }
    for (std::size_t i = 0; i < spec.num_items; ++i) {
        ds.item_id_map["i" + std::to_string(i)] = static_cast<int>(i);
        ds.item_ids.push_back("i" + std::to_string(i));
    }
    ds.build_adjacency();

    out.user_profiles = detail::make_profiles(EntityKind::User, out.user_factors, spec, rng);
    out.item_profiles = detail::make_profiles(EntityKind::Item, out.item_factors, spec, rng);
    return out;
}

// Keep only profile slot `k` of every entity (K becomes 1).
inline ProfileSet single_profile_slice(const ProfileSet& ps, int k) {
    if (k < 0 || k >= ps.K) throw Error("profile slot out of range");
    ProfileSet out;
    out.kind = ps.kind;
    out.K = 1;
    out.d_s = ps.d_s;
    out.count = ps.count;
    out.vectors = Mat(ps.count, ps.d_s);
    for (std::size_t e = 0; e < ps.count; ++e) {
        auto src = ps.at(e, k);
        std::copy(src.begin(), src.end(), out.vectors.row(e));
    }
    return out;
}

}  // namespace proex
