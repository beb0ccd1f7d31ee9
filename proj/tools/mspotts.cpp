// Command-line driver: simulate measurements, reconstruct, evaluate against
// ground truth, and benchmark several solvers on shared inputs.

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <mspotts/cli.hpp>
#include <mspotts/parallel.hpp>

namespace {

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;
    int threads = 0;
    std::string method;
};

mspotts::ExperimentConfig load_config(const CommonFlags& flags) {
    auto kv = mspotts::KVConfig::load(flags.config_path);
    auto cfg = mspotts::ExperimentConfig::from_kv(kv);
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (flags.seed >= 0) cfg.seed = static_cast<std::uint64_t>(flags.seed);
    if (!flags.method.empty()) {
        cfg.method = flags.method;
        cfg.validate();
    }
    return cfg;
}

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_config) {
    auto* opt = cmd->add_option("--config", flags.config_path, "experiment config file");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "random seed (overrides config)");
    cmd->add_option("--threads", flags.threads, "worker threads (0 = all cores)");
    cmd->add_option("--method", flags.method, "solver method (overrides config)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-channel piecewise-constant CT reconstruction"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string sinogram_path, result_path, truth_path;

    auto* simulate = app.add_subcommand("simulate", "generate phantom, operator and measurements");
    add_common(simulate, flags, true);

    auto* reconstruct = app.add_subcommand("reconstruct", "run the configured solver");
    add_common(reconstruct, flags, true);
    reconstruct->add_option("--sinogram", sinogram_path, "external sinogram file");

    auto* evaluate = app.add_subcommand("evaluate", "compare a result against ground truth");
    add_common(evaluate, flags, false);
    evaluate->add_option("--result", result_path, "reconstruction image")->required();
    evaluate->add_option("--truth", truth_path, "ground truth image")->required();

    auto* bench = app.add_subcommand("bench", "run several methods on shared inputs");
    add_common(bench, flags, true);

    CLI11_PARSE(app, argc, argv);
    mspotts::set_thread_count(flags.threads);

    try {
        if (simulate->parsed()) return mspotts::cmd_simulate(load_config(flags));
        if (reconstruct->parsed())
            return mspotts::cmd_reconstruct(load_config(flags), sinogram_path);
        if (evaluate->parsed()) {
            std::string out = flags.out_dir;
            if (out.empty() && !flags.config_path.empty())
                out = load_config(flags).output_dir;
            if (out.empty()) out = ".";
            return mspotts::cmd_evaluate(result_path, truth_path, out);
        }
        if (bench->parsed()) return mspotts::cmd_bench(load_config(flags));
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return mspotts::exit_config_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return mspotts::exit_config_error;
}
