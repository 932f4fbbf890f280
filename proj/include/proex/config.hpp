#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "proex/common.hpp"
#include "proex/engine.hpp"
#include "proex/synthetic.hpp"

namespace proex {

// One training/evaluation run. Populated from a key-value config file
// (see apply_config_entry for the schema); CLI flags override file values.
struct RunConfig {
    std::string dataset_path;
    std::string user_profiles_path;
    std::string item_profiles_path;
    std::string model = "lightgcn";
    bool use_synthetic = false;
    SyntheticSpec synth;
    HyperParams hp;
    std::uint64_t seed = 1;
    std::string out_dir = "run";

    BaseModel base_model() const { return base_model_from_name(model); }
};

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config key '" + key + "': bad number '" + v + "'");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ParseError("config key '" + key + "': bad integer '" + v + "'");
    }
}

inline Vec to_vec(const std::string& key, const std::string& v) {
    Vec out;
    std::string tok;
    std::istringstream ss(v);
    while (std::getline(ss, tok, ',')) out.push_back(to_double(key, tok));
    return out;
}

}  // namespace detail

// Schema:
//   dataset, user_profiles, item_profiles, model, seed, out_dir, synthetic
//   lr, batch_size, d, d_z, vae_hidden, K, num_envs, tau, align_tau,
//   alphas (comma-separated), lambda1, lambda2, lambda3, beta, kl_anneal,
//   dropout, layers, patience, max_epochs
//   synth_users, synth_items, synth_latent, synth_density, synth_noise,
//   synth_adversarial, synth_d_s
inline void apply_config_entry(RunConfig& c, const std::string& key, const std::string& value) {
    using detail::to_double;
    using detail::to_int;
    if (key == "dataset") c.dataset_path = value;
    else if (key == "user_profiles") c.user_profiles_path = value;
    else if (key == "item_profiles") c.item_profiles_path = value;
    else if (key == "model") c.model = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "synthetic") c.use_synthetic = value == "1" || value == "true";
    else if (key == "lr") c.hp.lr = to_double(key, value);
    else if (key == "batch_size") c.hp.batch_size = static_cast<std::size_t>(to_int(key, value));
    else if (key == "d") c.hp.d = static_cast<std::size_t>(to_int(key, value));
    else if (key == "d_z") c.hp.d_z = static_cast<std::size_t>(to_int(key, value));
    else if (key == "vae_hidden") c.hp.vae_hidden = static_cast<std::size_t>(to_int(key, value));
    else if (key == "K") c.hp.K = static_cast<int>(to_int(key, value));
    else if (key == "num_envs") c.hp.num_envs = static_cast<std::size_t>(to_int(key, value));
    else if (key == "tau") c.hp.tau = to_double(key, value);
    else if (key == "align_tau") c.hp.align_tau = to_double(key, value);
    else if (key == "alphas") c.hp.alphas = detail::to_vec(key, value);
    else if (key == "lambda1") c.hp.lambda1 = to_double(key, value);
    else if (key == "lambda2") c.hp.lambda2 = to_double(key, value);
    else if (key == "lambda3") c.hp.lambda3 = to_double(key, value);
    else if (key == "beta") c.hp.beta = to_double(key, value);
    else if (key == "kl_anneal") c.hp.kl_anneal = to_double(key, value);
    else if (key == "dropout") c.hp.dropout = to_double(key, value);
    else if (key == "layers") c.hp.layers = static_cast<int>(to_int(key, value));
    else if (key == "patience") c.hp.patience = static_cast<int>(to_int(key, value));
    else if (key == "max_epochs") c.hp.max_epochs = static_cast<int>(to_int(key, value));
    else if (key == "synth_users") c.synth.num_users = static_cast<std::size_t>(to_int(key, value));
    else if (key == "synth_items") c.synth.num_items = static_cast<std::size_t>(to_int(key, value));
    else if (key == "synth_latent") c.synth.latent_dim = static_cast<std::size_t>(to_int(key, value));
    else if (key == "synth_density") c.synth.density = to_double(key, value);
    else if (key == "synth_noise") c.synth.noise = to_double(key, value);
    else if (key == "synth_adversarial") c.synth.adversarial = static_cast<int>(to_int(key, value));
    else if (key == "synth_d_s") c.synth.d_s = static_cast<std::size_t>(to_int(key, value));
    else throw ParseError("unknown config key: " + key);
}

// "key = value" per line; '#' starts a comment; blank lines skipped.
inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file: " + path);
    RunConfig c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        if (eq == std::string::npos) {
            if (!trim(line).empty())
                throw ParseError(path + ":" + std::to_string(line_no) + ": expected key = value");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(path + ":" + std::to_string(line_no) + ": empty key");
        try {
            apply_config_entry(c, key, value);
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return c;
}

// Canonical serialization (stable key order) used for the run manifest hash.
inline std::string serialize_run_config(const RunConfig& c) {
    std::ostringstream out;
    out.precision(17);
    out << "dataset = " << c.dataset_path << "\n"
        << "user_profiles = " << c.user_profiles_path << "\n"
        << "item_profiles = " << c.item_profiles_path << "\n"
        << "model = " << c.model << "\n"
        << "seed = " << c.seed << "\n"
        << "out_dir = " << c.out_dir << "\n"
        << "synthetic = " << (c.use_synthetic ? 1 : 0) << "\n"
        << "lr = " << c.hp.lr << "\n"
        << "batch_size = " << c.hp.batch_size << "\n"
        << "d = " << c.hp.d << "\n"
        << "d_z = " << c.hp.d_z << "\n"
        << "vae_hidden = " << c.hp.vae_hidden << "\n"
        << "K = " << c.hp.K << "\n"
        << "num_envs = " << c.hp.num_envs << "\n"
        << "tau = " << c.hp.tau << "\n"
        << "align_tau = " << c.hp.align_tau << "\n";
    out << "alphas = ";
    const Vec alphas = c.hp.effective_alphas();
    for (std::size_t j = 0; j < alphas.size(); ++j) out << (j ? "," : "") << alphas[j];
    out << "\n"
        << "lambda1 = " << c.hp.lambda1 << "\n"
        << "lambda2 = " << c.hp.lambda2 << "\n"
        << "lambda3 = " << c.hp.lambda3 << "\n"
        << "beta = " << c.hp.beta << "\n"
        << "kl_anneal = " << c.hp.kl_anneal << "\n"
        << "dropout = " << c.hp.dropout << "\n"
        << "layers = " << c.hp.layers << "\n"
        << "patience = " << c.hp.patience << "\n"
        << "max_epochs = " << c.hp.max_epochs << "\n"
        << "synth_users = " << c.synth.num_users << "\n"
        << "synth_items = " << c.synth.num_items << "\n"
        << "synth_latent = " << c.synth.latent_dim << "\n"
        << "synth_density = " << c.synth.density << "\n"
        << "synth_noise = " << c.synth.noise << "\n"
        << "synth_adversarial = " << c.synth.adversarial << "\n"
        << "synth_d_s = " << c.synth.d_s << "\n";
    return out.str();
}

}  // namespace proex
