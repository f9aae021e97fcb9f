#include <CLI11.hpp>

#include <gafsim/cli.hpp>

int main(int argc, char** argv)
{
    CLI::App app{"gafsim: zero sets of Gaussian analytic functions in generalized Fock spaces"};
    app.require_subcommand(1);

    gafsim::CommandOptions opt;
    std::string config;

    auto* run = app.add_subcommand("run", "run the experiment named in a config");
    run->add_option("config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--threads", opt.threads, "worker threads (default: all cores)")
        ->check(CLI::PositiveNumber);
    run->add_option("--out", opt.out_dir, "output directory (overrides output.dir)");
    run->add_flag("-q,--quiet", opt.quiet, "no progress on stderr");

    auto* validate = app.add_subcommand("validate", "check a config and estimate its runtime");
    validate->add_option("config", config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    validate->add_option("--threads", opt.threads, "threads assumed by the estimate")
        ->check(CLI::PositiveNumber);

    auto* diag = app.add_subcommand("diag", "diagnostics");
    diag->require_subcommand(1);
    auto* kernel = diag->add_subcommand(
        "kernel", "kernel bound bands, closed-form check and fast-decay integrals over the L grid");
    kernel->add_option("config", config, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    kernel->add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);
    kernel->add_option("--out", opt.out_dir, "output directory (overrides output.dir)");
    kernel->add_flag("-q,--quiet", opt.quiet, "no progress on stderr");

    CLI11_PARSE(app, argc, argv);

    if (*run)
        return gafsim::command_run(config, opt);
    if (*validate)
        return gafsim::command_validate(config, opt);
    return gafsim::command_run(config, opt, std::cout, std::cerr, true);
}
