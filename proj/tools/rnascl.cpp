// rnascl command-line driver.
//
//   rnascl <search|derive|train|attack|report|ablate|ingest> --config FILE [--seed N] [--out DIR]
//          [--set section.key=value ...]
//
// Exit status: 0 success, 2 invalid configuration, 3 phase-order violation,
// 4 missing artifact, 5 malformed file, 1 anything else.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rnascl/config.hpp"
#include "rnascl/error.hpp"
#include "rnascl/pipeline.hpp"

namespace {

struct Args {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = "run";
    std::vector<std::string> sets;
};

rnascl::pipeline::Options resolve(const std::string& command, const Args& args) {
    using namespace rnascl;
    nlohmann::json doc;
    if (!args.config.empty()) {
        doc = config::load(args.config);
    } else if (command != "search" && command != "ablate" && pipeline::RunManifest::exists(args.out)) {
        // Later phases default to the configuration the run was started with.
        doc = config::merge(config::defaults(), pipeline::RunManifest::open(args.out).config());
    } else {
        doc = config::defaults();
    }
    for (const auto& s : args.sets) config::apply_override(doc, s);
    if (args.seed) doc["run"]["seed"] = *args.seed;
    else if (command != "search" && command != "ablate" && command != "ingest" &&
             pipeline::RunManifest::exists(args.out)) {
        doc["run"]["seed"] = pipeline::RunManifest::open(args.out).seed();
    }
    pipeline::Options opt;
    opt.cfg = config::parse(doc);
    opt.seed = doc["run"]["seed"].get<std::uint64_t>();
    opt.out = args.out;
    return opt;
}

int run(const std::string& command, const Args& args) {
    using namespace rnascl;
    const auto start = std::chrono::steady_clock::now();
    const auto opt = resolve(command, args);
    if (command == "search") pipeline::cmd_search(opt);
    else if (command == "derive") pipeline::cmd_derive(opt);
    else if (command == "train") pipeline::cmd_train(opt);
    else if (command == "attack") pipeline::cmd_attack(opt);
    else if (command == "report") pipeline::cmd_report(opt);
    else if (command == "ablate") pipeline::cmd_ablate(opt);
    else if (command == "ingest") std::cout << pipeline::cmd_ingest(opt).string() << '\n';
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    std::fprintf(stderr, "rnascl %s: done in %.1f s\n", command.c_str(), dt.count());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust architecture search with cross-layer attention distillation"};
    app.require_subcommand(1);
    Args args;
    const std::vector<std::pair<std::string, std::string>> commands = {
        {"search", "train the adversarial teacher and search the supernet"},
        {"derive", "derive channel widths and tutors from the searched supernet"},
        {"train", "train the derived student with distillation"},
        {"attack", "evaluate student and teacher under FGSM, PGD and MI-FGSM"},
        {"report", "write accuracy-vs-epsilon chart, attention maps, tutor histogram and summary"},
        {"ablate", "run the standard / KL / ICC / full distillation arms over several seeds"},
        {"ingest", "write a dataset file (synthetic or CIFAR-10 binary batches)"},
    };
    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", args.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", args.seed, "run seed (overrides run.seed)");
        sub->add_option("--out", args.out, "run directory")->capture_default_str();
        sub->add_option("--set", args.sets, "override a config key, section.key=value")->take_all();
    }
    CLI11_PARSE(app, argc, argv);

    const auto command = app.get_subcommands().front()->get_name();
    try {
        return run(command, args);
    } catch (const rnascl::ConfigError& e) {
        std::cerr << "rnascl " << command << ": invalid configuration: " << e.what() << '\n';
        return 2;
    } catch (const rnascl::PhaseOrderError& e) {
        std::cerr << "rnascl " << command << ": phase order: " << e.what() << '\n';
        return 3;
    } catch (const rnascl::MissingArtifactError& e) {
        std::cerr << "rnascl " << command << ": missing artifact: " << e.what() << '\n';
        return 4;
    } catch (const rnascl::FormatError& e) {
        std::cerr << "rnascl " << command << ": malformed input: " << e.what() << '\n';
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "rnascl " << command << ": " << e.what() << '\n';
        return 1;
    }
}
