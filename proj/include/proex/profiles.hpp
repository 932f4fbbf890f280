#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "proex/common.hpp"
#include "proex/prompts.hpp"
#include "proex/rng.hpp"

namespace proex {

enum class EntityKind { User, Item };

inline const char* kind_name(EntityKind k) { return k == EntityKind::User ? "user" : "item"; }

inline EntityKind kind_from_name(const std::string& s) {
    if (s == "user") return EntityKind::User;
    if (s == "item") return EntityKind::Item;
    throw FormatError("unknown entity kind: " + s);
}

struct EntityContext {
    EntityKind kind = EntityKind::User;
    int id = 0;
    std::string interactions_text;  // titles/descriptions/reviews, free-form
};

struct ProfileTextRecord {
    EntityKind kind = EntityKind::User;
    int id = 0;
    std::string f1;               // original profile
    std::string f2;               // positive/negative aspects
    std::string f3;               // latent preferences
    std::vector<std::string> f4;  // K-1 new profiles
    std::string prompt_set_version;
};

class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::string& system_prompt,
                                 const std::string& user_message) const = 0;
};

class TextEmbedder {
public:
    virtual ~TextEmbedder() = default;
    virtual Vec embed(const std::string& text) const = 0;
    virtual std::size_t dim() const = 0;
};

// Round a double through 9 significant decimal digits, the precision of the
// on-disk vector format. Values passed through this are stable under
// save/load.
inline double quantize9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return std::strtod(buf, nullptr);
}

namespace detail {

inline std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

inline std::vector<std::string> tokenize_lower(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

}  // namespace detail

// Stateless deterministic chat client. The reply is a pure function of the
// two prompt strings: a hash of them seeds a word picker. When the system
// prompt requests "exactly N new profiles" the reply is a numbered list of N
// lines drawn from a vocabulary disjoint from the one used for other stages,
// so new profiles share almost no tokens with the original.
class MockChatClient : public ChatClient {
public:
    explicit MockChatClient(std::uint64_t seed = 0) : seed_(seed) {}

    std::string complete(const std::string& system_prompt,
                         const std::string& user_message) const override {
        const std::uint64_t h = fnv1a(user_message, fnv1a(system_prompt, seed_ ^ kBase));
        const std::size_t n = requested_new_profiles(system_prompt);
        if (n == 0) return sentence(h, kStageWords, kStageWordCount);
        std::string out;
        for (std::size_t k = 0; k < n; ++k) {
            out += std::to_string(k + 1) + ". " +
                   sentence(h ^ (0xabcdef12345ull * (k + 1)), kProfileWords, kProfileWordCount);
            out += '\n';
        }
        return out;
    }

private:
    static constexpr std::uint64_t kBase = 0x51a3b7c9d0e1f283ull;

    static std::size_t requested_new_profiles(const std::string& system_prompt) {
        const std::string key = "exactly ";
        const std::size_t pos = system_prompt.find(key);
        if (pos == std::string::npos) return 0;
        std::size_t i = pos + key.size();
        std::size_t n = 0;
        bool any = false;
        while (i < system_prompt.size() && std::isdigit(static_cast<unsigned char>(system_prompt[i]))) {
            n = n * 10 + (system_prompt[i] - '0');
            ++i;
            any = true;
        }
        if (!any || system_prompt.find("new profiles", i) == std::string::npos) return 0;
        return n;
    }

    static std::string sentence(std::uint64_t h, const char* const* words, std::size_t count) {
        Rng rng(h);
        std::string s;
        for (int w = 0; w < 10; ++w) {
            if (w) s += ' ';
            s += words[rng.index(count)];
        }
        return s;
    }

    static constexpr const char* kStageWords[] = {
        "reader",  "enjoys",  "classic",  "novels",   "frequent", "detailed", "reviews",
        "prefers", "long",    "series",   "history",  "science",  "drama",    "positive",
        "negative", "tone",   "themes",   "authors",  "plots",    "characters"};
    static constexpr std::size_t kStageWordCount = sizeof(kStageWords) / sizeof(kStageWords[0]);

    static constexpr const char* kProfileWords[] = {
        "keen",     "explorer",  "of",        "speculative", "worlds",  "gravitates",
        "toward",   "layered",   "narratives", "savoring",   "intricate", "arcs",
        "immersive", "settings", "curious",   "voracious",  "appetite",  "uncommon",
        "voices",   "fresh"};
    static constexpr std::size_t kProfileWordCount =
        sizeof(kProfileWords) / sizeof(kProfileWords[0]);

    std::uint64_t seed_;
};

// Seeded-hash mock embedder: hash(text) xor seed drives a Gaussian draw,
// L2-normalized and quantized to the on-disk precision.
class MockTextEmbedder : public TextEmbedder {
public:
    explicit MockTextEmbedder(std::size_t d_s, std::uint64_t seed = 0) : d_s_(d_s), seed_(seed) {}

    Vec embed(const std::string& text) const override {
        Rng rng(fnv1a(text) ^ seed_);
        Vec v(d_s_);
        fill_normal(v, rng);
        const double n = norm2(v);
        for (double& x : v) x = quantize9(x / n);
        return v;
    }

    std::size_t dim() const override { return d_s_; }

private:
    std::size_t d_s_;
    std::uint64_t seed_;
};

namespace detail {

inline std::string render(const std::string& tmpl, EntityKind kind, std::size_t num_new = 0) {
    std::string s = replace_all(tmpl, "{role}", kind_name(kind));
    s = replace_all(s, "{num_new}", std::to_string(num_new));
    return s;
}

inline std::string call_with_retry(const ChatClient& client, const std::string& system_prompt,
                                   const std::string& user_message, int retries,
                                   const char* stage) {
    for (int attempt = 0;; ++attempt) {
        try {
            return client.complete(system_prompt, user_message);
        } catch (const std::exception& e) {
            if (attempt >= retries)
                throw Error(std::string("profile pipeline failed at stage ") + stage + ": " +
                            e.what());
        }
    }
}

// Parses "1. text" style lines; returns one string per numbered entry.
inline std::vector<std::string> parse_numbered_list(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::size_t i = line.find_first_not_of(" \t\r");
        if (i == std::string::npos) continue;
        std::size_t j = i;
        while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
        if (j == i || j >= line.size() || (line[j] != '.' && line[j] != ')')) continue;
        ++j;
        while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) ++j;
        std::string body = line.substr(j);
        while (!body.empty() && (body.back() == '\r' || body.back() == ' ')) body.pop_back();
        if (!body.empty()) out.push_back(body);
    }
    return out;
}

}  // namespace detail

// Four-stage chain-of-thought profile construction. Stages run in order and
// each user message carries all prior outputs. The last stage asks for K-1
// profiles that differ entirely from the original in wording; its output is
// parsed as a numbered list with one strict reprompt retry.
inline ProfileTextRecord run_cot_pipeline(const EntityContext& ctx, const ChatClient& client,
                                          const PromptSet& prompts, int K, int retries = 3) {
    if (K < 2) throw Error("run_cot_pipeline requires K >= 2");
    ProfileTextRecord rec;
    rec.kind = ctx.kind;
    rec.id = ctx.id;
    rec.prompt_set_version = prompts.version;

    const std::string base = std::string("Entity: ") + kind_name(ctx.kind) + " #" +
                             std::to_string(ctx.id) + "\nHistorical records:\n" +
                             ctx.interactions_text + "\n";

    rec.f1 = detail::call_with_retry(client, detail::render(prompts.f1, ctx.kind), base, retries,
                                     "F1");
    const std::string msg2 = base + "\nOriginal profile:\n" + rec.f1 + "\n";
    rec.f2 = detail::call_with_retry(client, detail::render(prompts.f2, ctx.kind), msg2, retries,
                                     "F2");
    const std::string msg3 = msg2 + "\nPositive/negative aspects:\n" + rec.f2 + "\n";
    rec.f3 = detail::call_with_retry(client, detail::render(prompts.f3, ctx.kind), msg3, retries,
                                     "F3");
    const std::string msg4 = msg3 + "\nLatent preferences:\n" + rec.f3 + "\n";

    const std::string sys4 = detail::render(prompts.f4, ctx.kind, static_cast<std::size_t>(K - 1));
    std::string raw = detail::call_with_retry(client, sys4, msg4, retries, "F4");
    rec.f4 = detail::parse_numbered_list(raw);
    if (static_cast<int>(rec.f4.size()) != K - 1) {
        raw = detail::call_with_retry(client, sys4,
                                      msg4 + "\nAnswer strictly as a numbered list.\n", retries,
                                      "F4");
        rec.f4 = detail::parse_numbered_list(raw);
    }
    if (static_cast<int>(rec.f4.size()) != K - 1)
        throw FormatError("stage F4 returned " + std::to_string(rec.f4.size()) +
                          " profiles, expected " + std::to_string(K - 1));
    if (rec.f1.empty() || rec.f2.empty() || rec.f3.empty())
        throw FormatError("empty stage output in profile pipeline");
    return rec;
}

// Token-Jaccard of each new profile against the original, over lowercased
// word sets.
inline std::vector<double> audit_profile_diversity(const ProfileTextRecord& rec) {
    const auto toks = detail::tokenize_lower(rec.f1);
    std::set<std::string> op(toks.begin(), toks.end());
    std::vector<double> out;
    out.reserve(rec.f4.size());
    for (const auto& np_text : rec.f4) {
        const auto ntoks = detail::tokenize_lower(np_text);
        std::set<std::string> np(ntoks.begin(), ntoks.end());
        std::size_t inter = 0;
        for (const auto& t : np) inter += op.count(t);
        const std::size_t uni = op.size() + np.size() - inter;
        out.push_back(uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni));
    }
    return out;
}

// K semantic vectors per entity in the d_s language space; index 0 is the
// original profile.
struct ProfileSet {
    EntityKind kind = EntityKind::User;
    int K = 0;
    int d_s = 0;
    std::size_t count = 0;  // number of entities
    Mat vectors;            // (count*K) x d_s, row = entity*K + k

    std::span<const double> at(std::size_t entity, int k) const {
        return vectors.row_span(entity * K + k);
    }
    std::span<double> at(std::size_t entity, int k) {
        return vectors.row_span(entity * K + k);
    }
};

inline ProfileSet embed_profiles(const std::vector<ProfileTextRecord>& records,
                                 const TextEmbedder& embedder) {
    if (records.empty()) throw Error("embed_profiles: empty corpus");
    ProfileSet ps;
    ps.kind = records.front().kind;
    ps.K = static_cast<int>(records.front().f4.size()) + 1;
    ps.d_s = static_cast<int>(embedder.dim());
    ps.count = records.size();
    ps.vectors = Mat(ps.count * ps.K, ps.d_s);
    for (std::size_t e = 0; e < records.size(); ++e) {
        const auto& rec = records[e];
        if (static_cast<int>(rec.f4.size()) + 1 != ps.K)
            throw FormatError("inconsistent K at entity " + std::to_string(rec.id));
        for (int k = 0; k < ps.K; ++k) {
            const std::string& text = k == 0 ? rec.f1 : rec.f4[k - 1];
            Vec v;
            try {
                v = embedder.embed(text);
            } catch (const std::exception& e_) {
                throw Error("embedding failed for " + std::string(kind_name(rec.kind)) + " " +
                            std::to_string(rec.id) + " profile " + std::to_string(k) + ": " +
                            e_.what());
            }
            if (v.size() != static_cast<std::size_t>(ps.d_s))
                throw FormatError("embedder returned wrong dimension");
            std::copy(v.begin(), v.end(), ps.at(e, k).begin());
        }
    }
    return ps;
}

// Vector corpus format: header "PROEX-VEC v1 kind=<k> count=<n> K=<k> d_s=<d>"
// then one line "<dense_id> <k> <floats>" per profile, 9 significant digits.
inline void save_profile_set(const ProfileSet& ps, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write profile set: " + path);
    out << "PROEX-VEC v1 kind=" << kind_name(ps.kind) << " count=" << ps.count << " K=" << ps.K
        << " d_s=" << ps.d_s << "\n";
    char buf[40];
    for (std::size_t e = 0; e < ps.count; ++e) {
        for (int k = 0; k < ps.K; ++k) {
            out << e << ' ' << k;
            for (double v : ps.at(e, k)) {
                std::snprintf(buf, sizeof(buf), "%.9g", v);
                out << ' ' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw Error("write failed: " + path);
}

inline ProfileSet load_profile_set(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open profile set: " + path);
    std::string magic, version, kind_kv, count_kv, k_kv, ds_kv;
    std::string header;
    if (!std::getline(in, header)) throw FormatError("empty profile set file: " + path);
    {
        std::istringstream hs(header);
        if (!(hs >> magic >> version >> kind_kv >> count_kv >> k_kv >> ds_kv) ||
            magic != "PROEX-VEC" || version != "v1")
            throw FormatError("bad profile set header: " + path);
    }
    auto kv_value = [&](const std::string& kv, const std::string& key) {
        if (kv.rfind(key + "=", 0) != 0) throw FormatError("bad header field: " + kv);
        return kv.substr(key.size() + 1);
    };
    ProfileSet ps;
    ps.kind = kind_from_name(kv_value(kind_kv, "kind"));
    ps.count = std::stoul(kv_value(count_kv, "count"));
    ps.K = std::stoi(kv_value(k_kv, "K"));
    ps.d_s = std::stoi(kv_value(ds_kv, "d_s"));
    ps.vectors = Mat(ps.count * ps.K, ps.d_s);

    std::vector<int> rows_seen(ps.count, 0);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::size_t e;
        int k;
        if (!(ls >> e >> k) || e >= ps.count || k < 0 || k >= ps.K)
            throw FormatError("bad profile row in " + path + ": " + line.substr(0, 40));
        auto dst = ps.at(e, k);
        for (int j = 0; j < ps.d_s; ++j) {
            if (!(ls >> dst[j])) throw FormatError("shape mismatch in " + path);
            if (!std::isfinite(dst[j])) throw FormatError("non-finite value in " + path);
        }
        ++rows_seen[e];
    }
    for (std::size_t e = 0; e < ps.count; ++e)
        if (rows_seen[e] != ps.K)
            throw FormatError("entity " + std::to_string(e) + " has " +
                              std::to_string(rows_seen[e]) + " rows, expected " +
                              std::to_string(ps.K));
    return ps;
}

// Text corpus: one JSON record per line.
inline void save_profile_records(const std::vector<ProfileTextRecord>& recs,
                                 const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write profile records: " + path);
    for (const auto& r : recs) {
        nlohmann::json j{{"kind", kind_name(r.kind)},
                         {"id", r.id},
                         {"stages", {{"f1", r.f1}, {"f2", r.f2}, {"f3", r.f3}, {"f4", r.f4}}},
                         {"prompt_set_version", r.prompt_set_version}};
        out << j.dump() << '\n';
    }
}

inline std::vector<ProfileTextRecord> load_profile_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open profile records: " + path);
    std::vector<ProfileTextRecord> recs;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        ProfileTextRecord r;
        r.kind = kind_from_name(j.at("kind").get<std::string>());
        r.id = j.at("id").get<int>();
        r.f1 = j.at("stages").at("f1").get<std::string>();
        r.f2 = j.at("stages").at("f2").get<std::string>();
        r.f3 = j.at("stages").at("f3").get<std::string>();
        r.f4 = j.at("stages").at("f4").get<std::vector<std::string>>();
        r.prompt_set_version = j.value("prompt_set_version", "");
        recs.push_back(std::move(r));
    }
    return recs;
}

}  // namespace proex
