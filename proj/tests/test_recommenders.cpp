#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "proex/recommenders.hpp"

using namespace proex;

namespace {

// Fully-connected-ish random dataset for propagation tests.
InteractionDataset random_dataset(std::size_t M, std::size_t N, std::size_t per_user,
                                  std::uint64_t seed) {
    InteractionDataset ds;
    ds.num_users = M;
    ds.num_items = N;
    ds.train.resize(M);
    ds.val.resize(M);
    ds.test.resize(M);
    Rng rng(seed);
    for (std::size_t u = 0; u < M; ++u) {
        std::set<int> items;
        while (items.size() < per_user) items.insert(static_cast<int>(rng.index(N)));
        ds.train[u].assign(items.begin(), items.end());
    }
    ds.build_adjacency();
    return ds;
}

}  // namespace

TEST(LightGcnPropagate, ZeroLayersIsIdentity) {
    const auto ds = random_dataset(6, 8, 3, 1);
    Rng rng(2);
    const auto emb = make_embeddings(6, 8, 4, rng);
    const auto out = lightgcn_propagate(emb, ds.adjacency, 0);
    EXPECT_EQ(out.user_emb.a, emb.user_emb.a);
    EXPECT_EQ(out.item_emb.a, emb.item_emb.a);
}

TEST(LightGcnPropagate, SingleEdgeHandCase) {
    InteractionDataset ds;
    ds.num_users = 1;
    ds.num_items = 1;
    ds.train = {{0}};
    ds.val.resize(1);
    ds.test.resize(1);
    ds.build_adjacency();
    EmbeddingTable emb;
    emb.user_emb = Mat(1, 2);
    emb.item_emb = Mat(1, 2);
    emb.user_emb.a = {1.0, 2.0};
    emb.item_emb.a = {5.0, -3.0};
    const auto out = lightgcn_propagate(emb, ds.adjacency, 1);
    // Both degrees 1, weight 1: layer-1 user = item-0 and vice versa.
    EXPECT_DOUBLE_EQ(out.user_emb.a[0], (1.0 + 5.0) / 2.0);
    EXPECT_DOUBLE_EQ(out.user_emb.a[1], (2.0 - 3.0) / 2.0);
    EXPECT_DOUBLE_EQ(out.item_emb.a[0], (5.0 + 1.0) / 2.0);
    EXPECT_DOUBLE_EQ(out.item_emb.a[1], (-3.0 + 2.0) / 2.0);
}

TEST(LightGcnPropagate, ShapePreservedAtThreeLayers) {
    const auto ds = random_dataset(10, 12, 4, 3);
    Rng rng(4);
    const auto emb = make_embeddings(10, 12, 32, rng);
    const auto out = lightgcn_propagate(emb, ds.adjacency, 3);
    EXPECT_EQ(out.user_emb.rows, 10u);
    EXPECT_EQ(out.user_emb.cols, 32u);
    EXPECT_EQ(out.item_emb.rows, 12u);
    EXPECT_TRUE(all_finite(out.user_emb.a));
}

TEST(LightGcnPropagate, LinearInInput) {
    const auto ds = random_dataset(7, 9, 3, 5);
    Rng rng(6);
    const auto x = make_embeddings(7, 9, 5, rng);
    const auto y = make_embeddings(7, 9, 5, rng);
    const double a = 0.37, b = -1.25;
    EmbeddingTable mix;
    mix.user_emb = Mat(7, 5);
    mix.item_emb = Mat(9, 5);
    for (std::size_t j = 0; j < mix.user_emb.a.size(); ++j)
        mix.user_emb.a[j] = a * x.user_emb.a[j] + b * y.user_emb.a[j];
    for (std::size_t j = 0; j < mix.item_emb.a.size(); ++j)
        mix.item_emb.a[j] = a * x.item_emb.a[j] + b * y.item_emb.a[j];
    const auto px = lightgcn_propagate(x, ds.adjacency, 3);
    const auto py = lightgcn_propagate(y, ds.adjacency, 3);
    const auto pm = lightgcn_propagate(mix, ds.adjacency, 3);
    for (std::size_t j = 0; j < pm.user_emb.a.size(); ++j)
        EXPECT_NEAR(pm.user_emb.a[j], a * px.user_emb.a[j] + b * py.user_emb.a[j], 1e-12);
    for (std::size_t j = 0; j < pm.item_emb.a.size(); ++j)
        EXPECT_NEAR(pm.item_emb.a[j], a * px.item_emb.a[j] + b * py.item_emb.a[j], 1e-12);
}

TEST(ScorePair, HandValuesAndSymmetry) {
    const Vec a = {1.0, 0.0}, b = {0.0, 1.0}, c = {1.0, 1.0};
    EXPECT_DOUBLE_EQ(score_pair(a, b), 0.5);
    EXPECT_NEAR(score_pair(c, c), 1.0 / (1.0 + std::exp(-2.0)), 1e-12);
    EXPECT_DOUBLE_EQ(score_pair(a, c), score_pair(c, a));
}

TEST(BprLoss, EqualPosNegGivesLnTwo) {
    Mat zu(1, 2), zi(2, 2);
    zu.a = {0.3, -0.7};
    zi.a = {1.0, 2.0, 1.0, 2.0};  // identical pos and neg
    PairwiseBatch batch;
    batch.triples = {{0, 0, 1}};
    EXPECT_NEAR(bpr_loss(batch, zu, zi).loss, std::log(2.0), 1e-12);
}

TEST(BprLoss, LargeGapGivesNearZero) {
    Mat zu(1, 1), zi(2, 1);
    zu.a = {1.0};
    zi.a = {50.0, -50.0};
    PairwiseBatch batch;
    batch.triples = {{0, 0, 1}};
    EXPECT_LT(bpr_loss(batch, zu, zi).loss, 1e-12);
}

TEST(BprLoss, GradientAtEqualPosNegIsMinusHalfUser) {
    Mat zu(1, 2), zi(2, 2);
    zu.a = {0.3, -0.7};
    zi.a = {1.0, 2.0, 1.0, 2.0};
    PairwiseBatch batch;
    batch.triples = {{0, 0, 1}};
    Mat du(1, 2), di(2, 2);
    bpr_loss(batch, zu, zi, &du, &di);
    EXPECT_NEAR(di.at(0, 0), -0.5 * 0.3, 1e-12);
    EXPECT_NEAR(di.at(0, 1), -0.5 * -0.7, 1e-12);
    EXPECT_NEAR(di.at(1, 0), 0.5 * 0.3, 1e-12);
}

TEST(BprLoss, GradientMatchesFiniteDifferences) {
    const std::size_t M = 5, N = 7, d = 4;
    Rng rng(9);
    ParamSet p;
    p.add("u", M * d);
    p.add("i", N * d);
    fill_normal(p["u"].value, rng);
    fill_normal(p["i"].value, rng);
    PairwiseBatch batch;
    for (int t = 0; t < 12; ++t)
        batch.triples.push_back({static_cast<int>(rng.index(M)), static_cast<int>(rng.index(N)),
                                 static_cast<int>(rng.index(N))});
    auto loss = [&]() {
        Mat zu(M, d), zi(N, d);
        zu.a = p["u"].value;
        zi.a = p["i"].value;
        return bpr_loss(batch, zu, zi).loss;
    };
    {
        Mat zu(M, d), zi(N, d);
        zu.a = p["u"].value;
        zi.a = p["i"].value;
        Mat du(M, d), di(N, d);
        bpr_loss(batch, zu, zi, &du, &di);
        p["u"].grad = du.a;
        p["i"].grad = di.a;
    }
    const auto r = testutil::check_param_grads(p, loss, 200, rng);
    EXPECT_LT(r.max_rel, 1e-4) << "checked " << r.checked;
}

TEST(VaeEncode, ZeroEpsGivesMeanAndEvalDeterminism) {
    VAEConfig cfg{12, 6, 4, 0.5};
    Rng rng(11);
    ParamSet p;
    add_vae_params(p, cfg, rng);
    const std::vector<int> items = {1, 4, 7};
    const Vec zero_eps(cfg.d_z, 0.0);
    const auto with_zero = vae_encode(p, cfg, items, nullptr, &zero_eps);
    for (std::size_t j = 0; j < cfg.d_z; ++j)
        EXPECT_DOUBLE_EQ(with_zero.z[j], with_zero.q.mean[j]);
    const auto e1 = vae_encode(p, cfg, items, nullptr, nullptr);
    const auto e2 = vae_encode(p, cfg, items, nullptr, nullptr);
    EXPECT_EQ(e1.z, e2.z);
    EXPECT_EQ(e1.z, e1.q.mean);
}

TEST(VaeEncode, OutputSplitDimensions) {
    VAEConfig cfg{30, 16, 8, 0.5};
    Rng rng(12);
    ParamSet p;
    add_vae_params(p, cfg, rng);
    EXPECT_EQ(p["enc_W2"].value.size(), 2 * cfg.d_z * cfg.hidden);
    const auto c = vae_encode(p, cfg, {0, 5, 9}, nullptr, nullptr);
    EXPECT_EQ(c.q.mean.size(), cfg.d_z);
    EXPECT_EQ(c.q.log_var.size(), cfg.d_z);
}

TEST(VaeEncode, DropoutMaskRestrictsInput) {
    VAEConfig cfg{10, 4, 3, 0.5};
    Rng rng(13);
    ParamSet p;
    add_vae_params(p, cfg, rng);
    const std::vector<int> items = {2, 5, 8};
    const std::vector<char> keep = {1, 0, 1};
    const auto masked = vae_encode(p, cfg, items, &keep, nullptr);
    const auto direct = vae_encode(p, cfg, {2, 8}, nullptr, nullptr);
    EXPECT_EQ(masked.q.mean, direct.q.mean);
    EXPECT_EQ(masked.kept, (std::vector<int>{2, 8}));
}

TEST(MultinomialLoss, HandValues) {
    EXPECT_NEAR(multinomial_loss(Vec(10, 0.0), {3}), std::log(10.0), 1e-12);
    EXPECT_NEAR(multinomial_loss({1.0, 0.0, 0.0}, {0}), -std::log(std::exp(1.0) / (std::exp(1.0) + 2.0)),
                1e-9);
    EXPECT_NEAR(multinomial_loss({1.0, 0.0, 0.0}, {0}), 0.55144471, 1e-6);
    EXPECT_LT(multinomial_loss({100.0, 0.0, 0.0}, {0}), 1e-12);
}

TEST(MultinomialLoss, GradientIsCountTimesSoftmaxMinusX) {
    const Vec logits = {0.2, -0.5, 1.3, 0.0};
    Vec d;
    multinomial_loss(logits, {0, 2}, &d);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v);
    for (std::size_t j = 0; j < logits.size(); ++j) {
        double expect = 2.0 * std::exp(logits[j]) / denom;
        if (j == 0 || j == 2) expect -= 1.0;
        EXPECT_NEAR(d[j], expect, 1e-12);
    }
}

TEST(VaeKl, HandValuesAndNonnegativity) {
    GaussianState q;
    q.mean = {0.0};
    q.log_var = {0.0};
    EXPECT_DOUBLE_EQ(vae_kl(q), 0.0);
    q.mean = {1.0};
    EXPECT_DOUBLE_EQ(vae_kl(q), 0.5);
    Rng rng(14);
    for (int t = 0; t < 100; ++t) {
        GaussianState r;
        r.mean = {rng.normal(), rng.normal()};
        r.log_var = {rng.normal(), rng.normal()};
        EXPECT_GE(vae_kl(r), 0.0);
    }
}

// Full VAE training objective (multinomial + KL) against finite differences,
// with fixed dropout mask and reparameterization noise.
TEST(VaeGradients, FullObjectiveMatchesFiniteDifferences) {
    VAEConfig cfg{30, 16, 8, 0.5};
    Rng rng(15);
    ParamSet p;
    add_vae_params(p, cfg, rng);
    const std::vector<int> items = {1, 4, 9, 14, 22, 28};
    std::vector<char> keep = {1, 1, 0, 1, 1, 0};
    Vec eps(cfg.d_z);
    fill_normal(eps, rng);
    const double anneal = 0.3;

    auto loss = [&]() {
        const auto enc = vae_encode(p, cfg, items, &keep, &eps);
        const auto dec = vae_decode(p, cfg, enc.z);
        return multinomial_loss(dec.logits, items) + anneal * vae_kl(enc.q);
    };
    {
        p.zero_grad();
        const auto enc = vae_encode(p, cfg, items, &keep, &eps);
        const auto dec = vae_decode(p, cfg, enc.z);
        Vec d_logits;
        multinomial_loss(dec.logits, items, &d_logits);
        const Vec dz = vae_decode_backward(p, cfg, dec, enc.z, d_logits);
        Vec d_mean, d_lv;
        vae_kl(enc.q, &d_mean, &d_lv);
        for (double& v : d_mean) v *= anneal;
        for (double& v : d_lv) v *= anneal;
        vae_encode_backward(p, cfg, enc, d_mean, d_lv, dz);
    }
    const auto r = testutil::check_param_grads(p, loss, 60, rng);
    EXPECT_LT(r.max_rel, 1e-4) << "checked " << r.checked;
}
