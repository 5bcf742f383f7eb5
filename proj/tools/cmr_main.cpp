#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmr/train.hpp"

namespace {

// flags mirror config-file keys; CLI values override file values
void add_config_flags(CLI::App* app, std::map<std::string, std::string>& overrides) {
    static const char* keys[] = {
        "seed", "batch", "epochs", "lr", "weight-decay", "temperature", "alpha", "beta",
        "momentum", "bank-size-video", "bank-size-text", "hidden", "video-layers",
        "video-heads", "text-layers", "text-heads", "intermediate", "vocab", "max-seq",
        "proj-hidden", "out-dim", "levels", "aggregation", "loss", "margin", "key-source",
        "data", "pairs", "latent", "noise", "experts", "tokens-per-expert", "d-in",
        "text-len-min", "text-len-max"};
    for (const char* k : keys) {
        std::string key = k;
        app->add_option_function<std::string>(
            "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; });
    }
}

cmr::RunConfig build_config(const std::string& config_path,
                            const std::map<std::string, std::string>& cli_overrides) {
    cmr::RunConfig cfg;
    if (!config_path.empty())
        cmr::apply_overrides(cfg, cmr::parse_config_file(config_path));
    cmr::apply_overrides(cfg, cli_overrides);
    cfg.validate();
    return cfg;
}

nlohmann::json report_json(const cmr::RetrievalReport& r) {
    return {{"direction", r.direction}, {"r1", r.r1},     {"r5", r.r5},
            {"r10", r.r10},             {"medr", r.medr}, {"rsum", r.rsum}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical two-level cross-modal contrastive retrieval"};
    app.require_subcommand(1);

    std::string config_path, history_path, checkpoint_path, resume_path, out_dir, axis,
        report_path;
    std::map<std::string, std::string> overrides;

    CLI::App* train = app.add_subcommand("train", "run the training loop");
    train->add_option("--config", config_path, "key=value config file");
    train->add_option("--history", history_path, "metrics history output file");
    train->add_option("--checkpoint", checkpoint_path, "checkpoint file, saved per epoch");
    train->add_option("--resume", resume_path, "resume from a checkpoint");
    add_config_flags(train, overrides);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--config", config_path, "key=value config file");
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint to evaluate")->required();
    eval->add_option("--report", report_path, "also write a JSON report here");
    add_config_flags(eval, overrides);

    CLI::App* ablate = app.add_subcommand("ablate", "sweep one config axis");
    ablate->add_option("--config", config_path, "key=value config file");
    ablate->add_option("--axis", axis,
                       "bank_size|levels|aggregation|loss|temperature|key_encoder_source")
        ->required();
    add_config_flags(ablate, overrides);

    CLI::App* gen = app.add_subcommand("gen-data", "write a synthetic dataset to disk");
    gen->add_option("--config", config_path, "key=value config file");
    gen->add_option("--out", out_dir, "output directory")->required();
    add_config_flags(gen, overrides);

    try {
        app.parse(argc, argv);
        if (train->parsed()) {
            cmr::RunConfig cfg = build_config(config_path, overrides);
            cmr::Trainer trainer(cfg);
            std::ofstream hist_file;
            std::ostream* hist = &std::cout;
            if (!history_path.empty()) {
                hist_file.open(history_path, resume_path.empty() ? std::ios::out
                                                                 : std::ios::app);
                if (!hist_file)
                    throw cmr::ConfigError("cannot open history file " + history_path);
                hist = &hist_file;
            }
            auto [v2t, t2v] = trainer.run_training(*hist, checkpoint_path, resume_path);
            std::cout << cmr::format_report_line(v2t) << "\n"
                      << cmr::format_report_line(t2v) << "\n";
        } else if (eval->parsed()) {
            cmr::RunConfig cfg = build_config(config_path, overrides);
            cmr::Trainer trainer(cfg);
            trainer.load_checkpoint(checkpoint_path);
            std::vector<std::size_t> all(trainer.dataset().size());
            for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
            auto [v2t, t2v] = trainer.evaluate(all);
            std::cout << cmr::format_report_line(v2t) << "\n"
                      << cmr::format_report_line(t2v) << "\n";
            if (!report_path.empty()) {
                nlohmann::json j = {{"v2t", report_json(v2t)}, {"t2v", report_json(t2v)}};
                std::ofstream rf(report_path);
                rf << j.dump(2) << "\n";
            }
        } else if (ablate->parsed()) {
            cmr::RunConfig cfg = build_config(config_path, overrides);
            cmr::run_ablation(cfg, axis, std::cout);
        } else if (gen->parsed()) {
            cmr::RunConfig cfg = build_config(config_path, overrides);
            std::filesystem::create_directories(out_dir);
            cmr::Dataset ds = cmr::generate_synthetic(cfg.synthetic_spec(), cfg.seed);
            cmr::write_dataset(ds, cfg.synthetic_spec(), out_dir);
            std::cout << "wrote " << ds.size() << " pairs to " << out_dir << "\n";
        }
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
