#include <cstdint>
#include <optional>

#include <CLI11.hpp>

#include "sscsr/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"semi-supervised signal recognition lab"};
    app.require_subcommand(1);

    sscsr::CliOptions opts;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opts.config_path, "JSON run-config file")->required();
        sub->add_option("--out", opts.out_dir, "output directory")->required();
        sub->add_option("--seed", opts.seed, "override every config seed source");
        sub->add_option("--jobs", opts.jobs, "parallel bench cells (default 1)");
        sub->add_flag("--deterministic", opts.deterministic,
                      "byte-stable outputs (zeroes wall-clock fields)");
        sub->add_flag("--supervised-only", opts.supervised_only,
                      "drop the unlabeled pool (condition N = 0)");
    };
    add_common(app.add_subcommand("simulate", "generate a dataset file"));
    add_common(app.add_subcommand("train", "run the semi-supervised trainer"));
    add_common(app.add_subcommand("eval", "evaluate a checkpoint on a dataset split"));
    add_common(app.add_subcommand("bench", "stability benchmark over forms/conditions/gammas"));
    add_common(app.add_subcommand("plot-loss", "emit scaled cross-entropy curves"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    opts.command = app.get_subcommands().front()->get_name();
    return sscsr::run_cli(opts);
}
