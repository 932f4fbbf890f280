#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "proex/common.hpp"
#include "proex/rng.hpp"

namespace proex {

// Symmetric-normalized bipartite graph over train edges. Edge (u,i) carries
// weight 1/sqrt(deg(u)*deg(i)).
struct Adjacency {
    std::vector<std::vector<std::pair<int, double>>> user_edges;  // u -> (i, w)
    std::vector<std::vector<std::pair<int, double>>> item_edges;  // i -> (u, w)
};

struct InteractionDataset {
    std::size_t num_users = 0;
    std::size_t num_items = 0;
    // Per-user sorted dense item ids. After load_interactions everything is
    // in train; split_dataset partitions into the three lists.
    std::vector<std::vector<int>> train;
    std::vector<std::vector<int>> val;
    std::vector<std::vector<int>> test;
    std::vector<std::string> user_ids;  // dense -> external
    std::vector<std::string> item_ids;
    std::map<std::string, int> user_id_map;  // external -> dense
    std::map<std::string, int> item_id_map;
    Adjacency adjacency;

    std::size_t train_size() const {
        std::size_t n = 0;
        for (const auto& v : train) n += v.size();
        return n;
    }

    bool in_train(int u, int i) const {
        const auto& t = train[u];
        return std::binary_search(t.begin(), t.end(), i);
    }

    void build_adjacency() {
        adjacency.user_edges.assign(num_users, {});
        adjacency.item_edges.assign(num_items, {});
        std::vector<int> item_deg(num_items, 0);
        for (std::size_t u = 0; u < num_users; ++u)
            for (int i : train[u]) ++item_deg[i];
        for (std::size_t u = 0; u < num_users; ++u) {
            const double du = static_cast<double>(train[u].size());
            for (int i : train[u]) {
                const double w = 1.0 / std::sqrt(du * item_deg[i]);
                adjacency.user_edges[u].emplace_back(i, w);
                adjacency.item_edges[i].emplace_back(static_cast<int>(u), w);
            }
        }
    }
};

struct PairwiseBatch {
    struct Triple {
        int user;
        int pos;
        int neg;
    };
    std::vector<Triple> triples;
};

// Whitespace-separated "user item" per line, '#' comments skipped, extra
// columns ignored. Users below min_interactions are dropped, then items left
// with no interactions; indices are re-densified sorted by external id.
inline InteractionDataset load_interactions(const std::string& path, int min_interactions = 3) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open interaction file: " + path);

    std::map<std::string, std::set<std::string>> by_user;  // dedup + sorted
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t start = line.find_first_not_of(" \t\r");
        if (start == std::string::npos || line[start] == '#') continue;
        std::istringstream ls(line);
        std::string uid, iid;
        if (!(ls >> uid >> iid))
            throw ParseError(path + ":" + std::to_string(line_no) + ": expected \"user item\"");
        by_user[uid].insert(iid);
    }

    for (auto it = by_user.begin(); it != by_user.end();) {
        if (static_cast<int>(it->second.size()) < min_interactions)
            it = by_user.erase(it);
        else
            ++it;
    }
    if (by_user.empty()) throw Error("empty dataset after filtering: " + path);

    std::set<std::string> items;
    for (const auto& [u, is] : by_user) items.insert(is.begin(), is.end());

    InteractionDataset ds;
    for (const auto& [u, is] : by_user) {
        ds.user_id_map[u] = static_cast<int>(ds.user_ids.size());
        ds.user_ids.push_back(u);
    }
    for (const auto& i : items) {
        ds.item_id_map[i] = static_cast<int>(ds.item_ids.size());
        ds.item_ids.push_back(i);
    }
    ds.num_users = ds.user_ids.size();
    ds.num_items = ds.item_ids.size();
    ds.train.resize(ds.num_users);
    ds.val.resize(ds.num_users);
    ds.test.resize(ds.num_users);
    for (const auto& [u, is] : by_user) {
        auto& row = ds.train[ds.user_id_map[u]];
        for (const auto& i : is) row.push_back(ds.item_id_map[i]);
        std::sort(row.begin(), row.end());
    }
    ds.build_adjacency();
    return ds;
}

// 3:1:1 per-user split with floor-based counts; train absorbs remainders.
// Deterministic under seed; rebuilds the adjacency from train edges.
inline void split_dataset(InteractionDataset& ds, std::uint64_t seed) {
    for (std::size_t u = 0; u < ds.num_users; ++u) {
        std::vector<int> all;
        all.reserve(ds.train[u].size() + ds.val[u].size() + ds.test[u].size());
        all.insert(all.end(), ds.train[u].begin(), ds.train[u].end());
        all.insert(all.end(), ds.val[u].begin(), ds.val[u].end());
        all.insert(all.end(), ds.test[u].begin(), ds.test[u].end());
        std::sort(all.begin(), all.end());

        Rng rng(seed ^ (0x9e3779b97f4a7c15ull * (u + 1)));
        std::shuffle(all.begin(), all.end(), rng.engine());

        const std::size_t n = all.size();
        const std::size_t n_test = n / 5;
        const std::size_t n_val = n / 5;
        ds.test[u].assign(all.begin(), all.begin() + n_test);
        ds.val[u].assign(all.begin() + n_test, all.begin() + n_test + n_val);
        ds.train[u].assign(all.begin() + n_test + n_val, all.end());
        std::sort(ds.train[u].begin(), ds.train[u].end());
        std::sort(ds.val[u].begin(), ds.val[u].end());
        std::sort(ds.test[u].begin(), ds.test[u].end());
    }
    ds.build_adjacency();
}

// Uniform user, uniform positive from train(u), negative by rejection
// sampling capped at num_items attempts.
inline PairwiseBatch sample_pairwise_batch(const InteractionDataset& ds, std::size_t batch_size,
                                           Rng& rng) {
    PairwiseBatch batch;
    batch.triples.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const int u = static_cast<int>(rng.index(ds.num_users));
        const auto& tr = ds.train[u];
        const int pos = tr[rng.index(tr.size())];
        int neg = -1;
        for (std::size_t attempt = 0; attempt < ds.num_items; ++attempt) {
            const int cand = static_cast<int>(rng.index(ds.num_items));
            if (!ds.in_train(u, cand)) {
                neg = cand;
                break;
            }
        }
        if (neg < 0) {
            // Dense row: scan for a non-interacted item from a random offset.
            const std::size_t start = rng.index(ds.num_items);
            for (std::size_t off = 0; off < ds.num_items; ++off) {
                const int cand = static_cast<int>((start + off) % ds.num_items);
                if (!ds.in_train(u, cand)) {
                    neg = cand;
                    break;
                }
            }
        }
        if (neg < 0)
            throw Error("cannot sample negative item for user " + std::to_string(u) +
                        ": all items interacted");
        batch.triples.push_back({u, pos, neg});
    }
    return batch;
}

// Sorted train-interaction item list M(u).
inline const std::vector<int>& neighbor_items(const InteractionDataset& ds, int u) {
    return ds.train[static_cast<std::size_t>(u)];
}

}  // namespace proex
