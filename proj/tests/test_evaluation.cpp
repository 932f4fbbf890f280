#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "proex/evaluation.hpp"
#include "proex/rng.hpp"

using namespace proex;

TEST(RecallAtN, Ratios) {
    std::vector<int> ranked(30);
    for (int i = 0; i < 30; ++i) ranked[i] = i;
    // 2 of 4 relevant inside the top 20.
    EXPECT_DOUBLE_EQ(recall_at_n(ranked, {5, 10, 25, 29}, 20), 0.5);
    EXPECT_DOUBLE_EQ(recall_at_n(ranked, {0, 1}, 10), 1.0);
    EXPECT_DOUBLE_EQ(recall_at_n(ranked, {25, 29}, 10), 0.0);
}

TEST(NdcgAtN, HandValues) {
    std::vector<int> ranked = {7, 3, 9, 1};
    EXPECT_DOUBLE_EQ(ndcg_at_n(ranked, {7}, 10), 1.0);
    EXPECT_NEAR(ndcg_at_n(ranked, {3}, 10), 1.0 / std::log2(3.0), 1e-12);
    EXPECT_NEAR(ndcg_at_n(ranked, {3}, 10), 0.63093, 1e-5);
}

TEST(NdcgAtN, BinaryGainsPermutationInvariantInOccupiedPrefix) {
    // All |relevant| items in the top |relevant| slots give NDCG 1 in any order.
    const std::set<int> relevant = {4, 8, 2};
    std::vector<int> order = {2, 4, 8};
    std::sort(order.begin(), order.end());
    do {
        std::vector<int> ranked = order;
        ranked.push_back(17);
        ranked.push_back(23);
        EXPECT_DOUBLE_EQ(ndcg_at_n(ranked, relevant, 5), 1.0);
    } while (std::next_permutation(order.begin(), order.end()));
    // Any relevant item outside the prefix breaks optimality.
    EXPECT_LT(ndcg_at_n({2, 4, 17, 8}, relevant, 5), 1.0);
}

TEST(RankItems, MaskingAndTieBreaking) {
    const Vec scores = {0.5, 0.9, 0.5, 0.1, 0.9};
    const std::vector<char> masked = {0, 0, 0, 1, 0};
    const auto ranked = rank_items(scores, masked, 10);
    // Ties by ascending index: 1 and 4 at 0.9, then 0 and 2 at 0.5.
    EXPECT_EQ(ranked, (std::vector<int>{1, 4, 0, 2}));
    EXPECT_EQ(rank_items(scores, masked, 2), (std::vector<int>{1, 4}));
}

TEST(RankItems, ForcedTopWhenAllButOneMasked) {
    const Vec scores = {0.0, -5.0, 3.0};
    const std::vector<char> masked = {1, 0, 1};
    EXPECT_EQ(rank_items(scores, masked, 10), (std::vector<int>{1}));
}

TEST(EvaluateRankings, SkipsUsersWithEmptyGroundTruth) {
    const std::vector<std::vector<int>> rankings = {{0, 1, 2}, {2, 1, 0}};
    const std::vector<std::vector<int>> truth = {{0}, {}};
    const auto rep = evaluate_rankings(rankings, truth, {1, 2});
    EXPECT_EQ(rep.evaluated_users, 1u);
    EXPECT_DOUBLE_EQ(rep.recall.at(1), 1.0);
    EXPECT_DOUBLE_EQ(rep.ndcg.at(2), 1.0);
}

TEST(EvaluateRankings, PerfectOracleRecall) {
    // Score = relevance: all relevant items rank first, so Recall@20 per user
    // is min(1, 20/|relevant|).
    Rng rng(1);
    const std::size_t n_items = 60;
    std::vector<std::vector<int>> rankings, truth;
    for (int u = 0; u < 8; ++u) {
        const std::size_t n_rel = 5 + rng.index(40);
        Vec scores(n_items, 0.0);
        std::vector<int> rel;
        while (rel.size() < n_rel) {
            const int i = static_cast<int>(rng.index(n_items));
            if (scores[i] == 0.0) {
                scores[i] = 1.0;
                rel.push_back(i);
            }
        }
        rankings.push_back(rank_items(scores, std::vector<char>(n_items, 0), 20));
        truth.push_back(rel);
    }
    const auto rep = evaluate_rankings(rankings, truth, {20});
    for (std::size_t u = 0; u < truth.size(); ++u) {
        const double expect = std::min(1.0, 20.0 / static_cast<double>(truth[u].size()));
        EXPECT_DOUBLE_EQ(rep.per_user_recall.at(20)[u], expect);
    }
}

// Brute-force reference: full sort of all scores with the same tie-break,
// then direct metric definitions.
namespace {

double brute_recall(const Vec& scores, const std::set<int>& rel, int n) {
    std::vector<int> idx(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::size_t hits = 0;
    for (int r = 0; r < n && r < static_cast<int>(idx.size()); ++r) hits += rel.count(idx[r]);
    return static_cast<double>(hits) / rel.size();
}

double brute_ndcg(const Vec& scores, const std::set<int>& rel, int n) {
    std::vector<int> idx(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    double dcg = 0.0;
    for (int r = 0; r < n && r < static_cast<int>(idx.size()); ++r)
        if (rel.count(idx[r])) dcg += 1.0 / std::log2(r + 2.0);
    double idcg = 0.0;
    for (int r = 0; r < std::min<int>(n, static_cast<int>(rel.size())); ++r)
        idcg += 1.0 / std::log2(r + 2.0);
    return dcg / idcg;
}

}  // namespace

TEST(Metrics, MatchBruteForceOnRandomInstances) {
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const std::size_t n_items = 5 + rng.index(16);  // <= 20
        Vec scores(n_items);
        for (double& v : scores) v = rng.index(6) * 0.5;  // coarse values force ties
        std::set<int> rel;
        const std::size_t n_rel = 1 + rng.index(n_items);
        while (rel.size() < n_rel) rel.insert(static_cast<int>(rng.index(n_items)));
        const auto ranked = rank_items(scores, std::vector<char>(n_items, 0),
                                       static_cast<int>(n_items));
        for (int n : {10, 20}) {
            EXPECT_NEAR(recall_at_n(ranked, rel, n), brute_recall(scores, rel, n), 1e-12);
            EXPECT_NEAR(ndcg_at_n(ranked, rel, n), brute_ndcg(scores, rel, n), 1e-12);
        }
    }
}

TEST(Metrics, InvariantUnderMonotoneScoreTransform) {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const std::size_t n_items = 12;
        Vec scores(n_items);
        for (double& v : scores) v = rng.normal();
        Vec transformed(n_items);
        for (std::size_t i = 0; i < n_items; ++i)
            transformed[i] = std::exp(2.0 * scores[i]) + 1.0;  // strictly monotone
        const std::vector<char> mask(n_items, 0);
        EXPECT_EQ(rank_items(scores, mask, 12), rank_items(transformed, mask, 12));
    }
}
