#include "ckptscope/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace ckptscope;

int main(int argc, char** argv) {
    CLI::App app{"Checkpoint-series analyses of model activations"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    struct Args {
        cli::Overrides ov;
        std::string out;
    };
    std::map<std::string, Args> args;
    for (const auto& name : cli::analyses()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " analysis");
        auto& a = args[name];
        sub->add_option_function<std::string>("--config", [&a](const std::string& v) { a.ov.config = v; }, "TOML config file");
        sub->add_option_function<std::string>("--manifest", [&a](const std::string& v) { a.ov.manifest = v; }, "dataset manifest (JSON)");
        sub->add_option_function<int>("--layer", [&a](const int& v) { a.ov.layer = v; }, "layer index");
        sub->add_option_function<std::uint64_t>("--seed", [&a](const std::uint64_t& v) { a.ov.seed = v; }, "base seed");
        sub->add_option("--out", a.out, "output directory")->required();
    }
    std::string record, replay_out;
    auto* rep = app.add_subcommand("replay", "re-run a recorded run and check its outputs bitwise");
    rep->add_option("--record", record, "run_<analysis>.json written by a previous run")->required()->check(CLI::ExistingFile);
    rep->add_option("--out", replay_out, "output directory (default: the record's directory)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? cli::kOk : cli::kInvalidConfig;
    }

    return cli::guarded([&]() -> int {
        if (rep->parsed()) {
            const auto dir = replay_out.empty() ? std::filesystem::path(record).parent_path() : std::filesystem::path(replay_out);
            const auto res = cli::replay(record, dir.empty() ? "." : dir);
            if (!res.mismatched.empty()) {
                for (const auto& name : res.mismatched) std::cerr << "replay mismatch: " << name << '\n';
                return cli::kReplayMismatch;
            }
            std::cout << "replay ok: " << res.record["outputs"].size() << " outputs identical\n";
            return cli::kOk;
        }
        for (const auto& name : cli::analyses()) {
            if (!app.got_subcommand(name)) continue;
            const auto& a = args[name];
            const auto cfg = cli::effective_config(name, a.ov);
            const auto rec = cli::execute(cfg, a.out);
            std::cout << name << ": wrote " << rec["outputs"].size() << " files to " << a.out << '\n';
        }
        return cli::kOk;
    });
}
