// ProEx command-line frontend: synthetic corpus generation, profile
// construction and embedding, training, evaluation, and hyperparameter
// sweeps. Every run writes a manifest sufficient to reproduce it.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <vector>

#include "proex/config.hpp"
#include "proex/engine.hpp"
#include "proex/real_client.hpp"
#include "proex/synthetic.hpp"

namespace fs = std::filesystem;
using namespace proex;

namespace {

// Tracks files created by a run so partial outputs can be removed on failure.
class OutputTracker {
public:
    void track(const std::string& path) { paths_.push_back(path); }
    void commit() { paths_.clear(); }
    ~OutputTracker() {
        for (const auto& p : paths_) {
            std::error_code ec;
            fs::remove(p, ec);
        }
    }

private:
    std::vector<std::string> paths_;
};

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ParseError("--set expects key=value, got: " + kv);
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
}

RunConfig build_config(const std::string& config_path, const std::vector<std::string>& sets,
                       const std::string& out_dir_flag) {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    apply_overrides(cfg, sets);
    if (!out_dir_flag.empty()) cfg.out_dir = out_dir_flag;
    return cfg;
}

void write_manifest(const RunConfig& cfg, const std::string& path, OutputTracker& tracker) {
    const std::string canonical = serialize_run_config(cfg);
    std::ofstream out(path);
    if (!out) throw Error("cannot write manifest: " + path);
    tracker.track(path);
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx",
                  static_cast<unsigned long long>(fnv1a(canonical)));
    out << "# run manifest: re-running with this config and seed is bit-identical\n"
        << "version = proex-1.0.0\n"
        << "config_hash = " << hash << "\n"
        << canonical;
}

struct LoadedRun {
    InteractionDataset ds;
    ProfileSet up, ip;
};

LoadedRun load_run_inputs(const RunConfig& cfg) {
    LoadedRun run;
    if (cfg.use_synthetic) {
        SyntheticSpec spec = cfg.synth;
        spec.K = cfg.hp.K;
        auto data = generate_synthetic(spec, cfg.seed);
        run.ds = std::move(data.dataset);
        run.up = std::move(data.user_profiles);
        run.ip = std::move(data.item_profiles);
    } else {
        if (cfg.dataset_path.empty()) throw Error("config: dataset path required");
        run.ds = load_interactions(cfg.dataset_path);
        run.up = load_profile_set(cfg.user_profiles_path);
        run.ip = load_profile_set(cfg.item_profiles_path);
    }
    split_dataset(run.ds, cfg.seed);
    return run;
}

nlohmann::json metrics_json(const MetricReport& rep) {
    nlohmann::json j;
    for (int n : rep.cutoffs) {
        j["recall@" + std::to_string(n)] = rep.recall.at(n);
        j["ndcg@" + std::to_string(n)] = rep.ndcg.at(n);
    }
    j["evaluated_users"] = rep.evaluated_users;
    return j;
}

void print_metric_table(const std::string& title, const MetricReport& rep) {
    std::printf("%s (%zu users)\n", title.c_str(), rep.evaluated_users);
    std::printf("  %-8s %-10s %-10s\n", "cutoff", "recall", "ndcg");
    for (int n : rep.cutoffs)
        std::printf("  @%-7d %-10.6f %-10.6f\n", n, rep.recall.at(n), rep.ndcg.at(n));
}

// Runs training and writes history/checkpoint/metrics under cfg.out_dir.
// Returns the test-split report.
MetricReport run_train(const RunConfig& cfg, OutputTracker& tracker, bool quiet = false) {
    fs::create_directories(cfg.out_dir);
    write_manifest(cfg, cfg.out_dir + "/manifest.txt", tracker);

    auto run = load_run_inputs(cfg);
    const auto result = train(run.ds, run.up, run.ip, cfg.base_model(), cfg.hp, cfg.seed);

    const std::string hist_path = cfg.out_dir + "/history.jsonl";
    tracker.track(hist_path);
    {
        std::ofstream out(hist_path);
        for (const auto& h : result.history) {
            nlohmann::json j{{"epoch", h.epoch},         {"total", h.total},
                             {"rec", h.rec},             {"align", h.align},
                             {"reg", h.reg},             {"var", h.var},
                             {"val_recall@20", h.val_recall20}};
            out << j.dump() << '\n';
        }
    }
    const std::string ckpt_path = cfg.out_dir + "/model.ckpt";
    tracker.track(ckpt_path);
    save_checkpoint(result.model, ckpt_path);

    const auto val = evaluate_model(result.model, run.ds, run.up, run.ip, {10, 20},
                                    EvalSplit::Validation);
    const auto test = evaluate_model(result.model, run.ds, run.up, run.ip, {10, 20},
                                     EvalSplit::Test);
    const std::string metrics_path = cfg.out_dir + "/metrics.json";
    tracker.track(metrics_path);
    {
        nlohmann::json j{{"model", cfg.model},
                         {"seed", cfg.seed},
                         {"best_epoch", result.best_epoch},
                         {"validation", metrics_json(val)},
                         {"test", metrics_json(test)}};
        std::ofstream(metrics_path) << j.dump(2) << '\n';
    }
    if (!quiet) {
        std::printf("trained %s: best epoch %d, best validation Recall@20 = %.6f\n",
                    cfg.model.c_str(), result.best_epoch, result.best_val);
        print_metric_table("validation", val);
        print_metric_table("test", test);
    }
    return test;
}

int cmd_synth(const RunConfig& cfg) {
    OutputTracker tracker;
    fs::create_directories(cfg.out_dir);
    write_manifest(cfg, cfg.out_dir + "/manifest.txt", tracker);
    const auto data = generate_synthetic(cfg.synth, cfg.seed);

    const std::string inter_path = cfg.out_dir + "/interactions.txt";
    tracker.track(inter_path);
    {
        std::ofstream out(inter_path);
        out << "# synthetic implicit-feedback corpus\n";
        for (std::size_t u = 0; u < data.dataset.num_users; ++u)
            for (int i : data.dataset.train[u])
                out << data.dataset.user_ids[u] << ' ' << data.dataset.item_ids[i] << '\n';
    }
    tracker.track(cfg.out_dir + "/user_profiles.vec");
    save_profile_set(data.user_profiles, cfg.out_dir + "/user_profiles.vec");
    tracker.track(cfg.out_dir + "/item_profiles.vec");
    save_profile_set(data.item_profiles, cfg.out_dir + "/item_profiles.vec");
    tracker.commit();
    std::printf("wrote synthetic corpus: %zu users, %zu items, %zu interactions\n",
                data.dataset.num_users, data.dataset.num_items, data.dataset.train_size());
    return 0;
}

int cmd_profile_gen(const std::string& kind_name_str, int count, int K, std::uint64_t seed,
                    const std::string& out_path) {
    OutputTracker tracker;
    const EntityKind kind = kind_from_name(kind_name_str);
    std::unique_ptr<ChatClient> client;
    if (LlmEndpoint::configured())
        client = std::make_unique<HttpChatClient>(LlmEndpoint::from_env());
    else
        client = std::make_unique<MockChatClient>(seed);

    std::vector<ProfileTextRecord> records;
    for (int e = 0; e < count; ++e) {
        EntityContext ctx;
        ctx.kind = kind;
        ctx.id = e;
        ctx.interactions_text = "fixture interaction history for " + kind_name_str + " #" +
                                std::to_string(e);
        records.push_back(run_cot_pipeline(ctx, *client, default_prompts(), K));
    }
    tracker.track(out_path);
    save_profile_records(records, out_path);
    tracker.commit();
    std::printf("wrote %zu profile records (K=%d) to %s\n", records.size(), K, out_path.c_str());
    return 0;
}

int cmd_profile_embed(const std::string& records_path, std::size_t d_s, std::uint64_t seed,
                      const std::string& out_path) {
    OutputTracker tracker;
    const auto records = load_profile_records(records_path);
    std::unique_ptr<TextEmbedder> embedder;
    if (LlmEndpoint::configured())
        embedder = std::make_unique<HttpTextEmbedder>(LlmEndpoint::from_env(), d_s);
    else
        embedder = std::make_unique<MockTextEmbedder>(d_s, seed);
    const auto ps = embed_profiles(records, *embedder);
    tracker.track(out_path);
    save_profile_set(ps, out_path);
    tracker.commit();
    std::printf("embedded %zu entities x %d profiles (d_s=%d) to %s\n", ps.count, ps.K, ps.d_s,
                out_path.c_str());
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& ckpt_path) {
    auto run = load_run_inputs(cfg);
    const auto model = load_checkpoint(ckpt_path, cfg.hp);
    const auto val = evaluate_model(model, run.ds, run.up, run.ip, {10, 20},
                                    EvalSplit::Validation);
    const auto test = evaluate_model(model, run.ds, run.up, run.ip, {10, 20}, EvalSplit::Test);
    print_metric_table("validation", val);
    print_metric_table("test", test);
    OutputTracker tracker;
    fs::create_directories(cfg.out_dir);
    const std::string path = cfg.out_dir + "/metrics.json";
    tracker.track(path);
    nlohmann::json j{{"model", cfg.model},
                     {"checkpoint", ckpt_path},
                     {"validation", metrics_json(val)},
                     {"test", metrics_json(test)}};
    std::ofstream(path) << j.dump(2) << '\n';
    tracker.commit();
    return 0;
}

void write_sweep_svg(const std::string& path, const std::string& param,
                     const std::vector<double>& xs, const std::vector<double>& ys) {
    const double w = 640, h = 420, ml = 70, mr = 20, mt = 30, mb = 50;
    double xmin = xs.front(), xmax = xs.front(), ymin = ys.front(), ymax = ys.front();
    for (double x : xs) { xmin = std::min(xmin, x); xmax = std::max(xmax, x); }
    for (double y : ys) { ymin = std::min(ymin, y); ymax = std::max(ymax, y); }
    if (xmax == xmin) xmax = xmin + 1.0;
    const double ypad = std::max(1e-6, 0.1 * (ymax - ymin));
    ymin -= ypad;
    ymax += ypad;
    auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (w - ml - mr); };
    auto Y = [&](double y) { return h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb); };

    std::ofstream out(path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='" << h << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n"
        << "<text x='" << w / 2 << "' y='20' text-anchor='middle' font-size='14'>"
        << "test Recall@20 vs " << param << "</text>\n"
        << "<line x1='" << ml << "' y1='" << h - mb << "' x2='" << w - mr << "' y2='" << h - mb
        << "' stroke='black'/>\n"
        << "<line x1='" << ml << "' y1='" << mt << "' x2='" << ml << "' y2='" << h - mb
        << "' stroke='black'/>\n";
    out << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
    for (std::size_t i = 0; i < xs.size(); ++i) out << X(xs[i]) << ',' << Y(ys[i]) << ' ';
    out << "'/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
        out << "<circle cx='" << X(xs[i]) << "' cy='" << Y(ys[i])
            << "' r='3' fill='steelblue'/>\n";
        out << "<text x='" << X(xs[i]) << "' y='" << h - mb + 18
            << "' text-anchor='middle' font-size='11'>" << xs[i] << "</text>\n";
        out << "<text x='" << X(xs[i]) << "' y='" << Y(ys[i]) - 8
            << "' text-anchor='middle' font-size='10'>" << ys[i] << "</text>\n";
    }
    out << "<text x='" << w / 2 << "' y='" << h - 10 << "' text-anchor='middle' font-size='12'>"
        << param << "</text>\n</svg>\n";
}

int cmd_sweep(const RunConfig& base_cfg, const std::string& param,
              const std::vector<std::string>& values) {
    static const std::set<std::string> kSweepable = {"num_envs", "K", "lambda2", "beta"};
    if (!kSweepable.count(param))
        throw Error("sweep supports num_envs, K, lambda2, beta; got: " + param);

    OutputTracker tracker;
    fs::create_directories(base_cfg.out_dir);
    std::vector<double> xs, ys;
    std::vector<nlohmann::json> rows;
    for (const auto& value : values) {
        RunConfig cfg = base_cfg;  // each point is an independent run
        apply_config_entry(cfg, param, value);
        cfg.out_dir = base_cfg.out_dir + "/" + param + "_" + value;
        OutputTracker point_tracker;
        const auto test = run_train(cfg, point_tracker, true);
        point_tracker.commit();
        xs.push_back(std::stod(value));
        ys.push_back(test.recall.at(20));
        rows.push_back({{param, std::stod(value)},
                        {"test_recall@20", test.recall.at(20)},
                        {"test_ndcg@20", test.ndcg.at(20)}});
        std::printf("%s=%s: test Recall@20 = %.6f\n", param.c_str(), value.c_str(),
                    test.recall.at(20));
    }
    const std::string csv_path = base_cfg.out_dir + "/sweep.csv";
    tracker.track(csv_path);
    {
        std::ofstream out(csv_path);
        out << param << ",test_recall@20,test_ndcg@20\n";
        for (std::size_t i = 0; i < xs.size(); ++i)
            out << xs[i] << ',' << ys[i] << ',' << rows[i]["test_ndcg@20"].get<double>() << '\n';
    }
    const std::string svg_path = base_cfg.out_dir + "/sweep.svg";
    tracker.track(svg_path);
    write_sweep_svg(svg_path, param, xs, ys);
    tracker.commit();
    std::printf("sweep written to %s and %s\n", csv_path.c_str(), svg_path.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ProEx profile-extrapolation recommender toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir, kind = "user", records_path, ckpt_path, param;
    std::vector<std::string> sets, values;
    int count = 50, K = 4;
    std::uint64_t seed = 1;
    std::size_t d_s = 64;
    std::string out_path = "profiles.out";

    auto add_cfg_flags = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "key-value config file");
        sub->add_option("--set", sets, "override config entries, key=value")->take_all();
        sub->add_option("--out-dir", out_dir, "output directory");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    add_cfg_flags(synth);

    auto* pgen = app.add_subcommand("profile-gen", "run the profile construction pipeline");
    pgen->add_option("--kind", kind, "user or item");
    pgen->add_option("--count", count, "number of entities");
    pgen->add_option("--profiles-per-entity", K, "profiles per entity (original + new)");
    pgen->add_option("--seed", seed, "mock client seed");
    pgen->add_option("--out", out_path, "output JSONL path")->required();

    auto* pemb = app.add_subcommand("profile-embed", "embed profile texts into vectors");
    pemb->add_option("--records", records_path, "input JSONL records")->required();
    pemb->add_option("--d-s", d_s, "embedding dimension");
    pemb->add_option("--seed", seed, "mock embedder seed");
    pemb->add_option("--out", out_path, "output vector corpus path")->required();

    auto* trainc = app.add_subcommand("train", "train a model");
    add_cfg_flags(trainc);

    auto* evalc = app.add_subcommand("evaluate", "evaluate a saved checkpoint");
    add_cfg_flags(evalc);
    evalc->add_option("--checkpoint", ckpt_path, "checkpoint path")->required();

    auto* sweepc = app.add_subcommand("sweep", "sweep one hyperparameter");
    add_cfg_flags(sweepc);
    sweepc->add_option("--param", param, "num_envs | K | lambda2 | beta")->required();
    sweepc->add_option("--values", values, "comma-separated values")
        ->required()
        ->delimiter(',');

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(build_config(config_path, sets, out_dir));
        if (pgen->parsed()) return cmd_profile_gen(kind, count, K, seed, out_path);
        if (pemb->parsed()) return cmd_profile_embed(records_path, d_s, seed, out_path);
        if (trainc->parsed()) {
            OutputTracker tracker;
            run_train(build_config(config_path, sets, out_dir), tracker);
            tracker.commit();
            return 0;
        }
        if (evalc->parsed())
            return cmd_evaluate(build_config(config_path, sets, out_dir), ckpt_path);
        if (sweepc->parsed()) return cmd_sweep(build_config(config_path, sets, out_dir), param, values);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
