#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "proex/common.hpp"

namespace proex {

struct MetricReport {
    std::vector<int> cutoffs;
    std::map<int, double> recall;  // cutoff -> mean
    std::map<int, double> ndcg;
    std::map<int, std::vector<double>> per_user_recall;  // over evaluated users
    std::map<int, std::vector<double>> per_user_ndcg;
    std::size_t evaluated_users = 0;
};

inline double recall_at_n(const std::vector<int>& ranked, const std::set<int>& relevant, int n) {
    const std::size_t top = std::min<std::size_t>(n, ranked.size());
    std::size_t hits = 0;
    for (std::size_t r = 0; r < top; ++r) hits += relevant.count(ranked[r]);
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

// Binary gains, log base 2, IDCG truncated at min(N, |relevant|).
inline double ndcg_at_n(const std::vector<int>& ranked, const std::set<int>& relevant, int n) {
    const std::size_t top = std::min<std::size_t>(n, ranked.size());
    double dcg = 0.0;
    for (std::size_t r = 0; r < top; ++r)
        if (relevant.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    const std::size_t ideal = std::min<std::size_t>(n, relevant.size());
    double idcg = 0.0;
    for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    return dcg / idcg;
}

// Aggregates per-user ranked lists against ground truth; users with empty
// ground truth are skipped.
inline MetricReport evaluate_rankings(const std::vector<std::vector<int>>& rankings,
                                      const std::vector<std::vector<int>>& ground_truth,
                                      const std::vector<int>& cutoffs) {
    MetricReport rep;
    rep.cutoffs = cutoffs;
    for (int n : cutoffs) {
        rep.per_user_recall[n] = {};
        rep.per_user_ndcg[n] = {};
    }
    for (std::size_t u = 0; u < rankings.size(); ++u) {
        if (ground_truth[u].empty()) continue;
        std::set<int> relevant(ground_truth[u].begin(), ground_truth[u].end());
        ++rep.evaluated_users;
        for (int n : cutoffs) {
            rep.per_user_recall[n].push_back(recall_at_n(rankings[u], relevant, n));
            rep.per_user_ndcg[n].push_back(ndcg_at_n(rankings[u], relevant, n));
        }
    }
    for (int n : cutoffs) {
        double sr = 0.0, sn = 0.0;
        for (double v : rep.per_user_recall[n]) sr += v;
        for (double v : rep.per_user_ndcg[n]) sn += v;
        const double cnt = std::max<std::size_t>(rep.evaluated_users, 1);
        rep.recall[n] = sr / cnt;
        rep.ndcg[n] = sn / cnt;
    }
    return rep;
}

// Full ranking of candidate items by score, ties broken by ascending index.
// Masked items are excluded entirely.
inline std::vector<int> rank_items(const Vec& scores, const std::vector<char>& masked, int top_n) {
    std::vector<int> idx;
    idx.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (!masked[i]) idx.push_back(static_cast<int>(i));
    const std::size_t top = std::min<std::size_t>(top_n, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + top, idx.end(), [&](int a, int b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    idx.resize(top);
    return idx;
}

}  // namespace proex
