// Command-line front end.  Every subcommand loads a JSON config, runs its
// estimators, and writes CSV/dat tables plus a manifest into the output
// directory.  Exit code 0 means all enabled checks passed, 1 means a check
// failed, 2 means the run errored before finishing.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "lorentz/run.hpp"

namespace {

struct CliArgs {
    std::string config;
    std::string out = "out";
    std::uint64_t seed = 0;
    int workers = 0;
    bool seed_set = false;
    bool workers_set = false;
};

void add_common(CLI::App* cmd, CliArgs& args) {
    cmd->add_option("--config", args.config, "path to a JSON run configuration")
        ->required();
    cmd->add_option("--seed", args.seed, "override the configured seed")
        ->trigger_on_parse()
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--workers", args.workers, "override the configured worker count")
        ->check(CLI::Range(1, 256))
        ->trigger_on_parse()
        ->each([&args](const std::string&) { args.workers_set = true; });
    cmd->add_option("--out", args.out, "output directory (default: out)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"periodic Lorentz gas: entropy production and its fluctuation symmetry"};
    app.require_subcommand(1);
    CliArgs args;

    const char* commands[] = {"table-check", "simulate", "mgf", "ulam", "gk", "gc", "verify"};
    const char* blurbs[] = {
        "validate the scatterer table and scan the free-path horizon",
        "dump raw collision orbits",
        "Monte Carlo moment generating function, rate function, symmetry checks",
        "discretized weighted transfer operator: spectrum, brackets, eigenvectors",
        "Green-Kubo diffusion estimates and the mean entropy rate scan",
        "entropy production histogram ratio test",
        "reversibility, Jacobian, invariance, and symmetry self-checks",
    };
    for (std::size_t i = 0; i < std::size(commands); ++i)
        add_common(app.add_subcommand(commands[i], blurbs[i]), args);

    CLI11_PARSE(app, argc, argv);

    try {
        lorentz::RunConfig cfg = lorentz::parse_config(args.config);
        if (args.seed_set) cfg.seed = args.seed;
        if (args.workers_set) cfg.workers = args.workers;
        const std::string command = app.get_subcommands().front()->get_name();
        const int code = lorentz::run_command(command, cfg, args.out);
        if (code != 0)
            std::fprintf(stderr, "%s: %s (see %s/manifest.json)\n", command.c_str(),
                         code == 1 ? "checks failed" : "run errored", args.out.c_str());
        return code;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
