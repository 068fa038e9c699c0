#ifndef RNASCL_CONFIG_HPP
#define RNASCL_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rnascl/attack.hpp"
#include "rnascl/data.hpp"
#include "rnascl/nn.hpp"
#include "rnascl/search.hpp"

namespace rnascl::config {

// Run configuration is a JSON document of sections ("data", "teacher",
// "supernet", "search", "train", "attack", "ablate", "ingest"). Every key has
// a default; a key that has no default is rejected, so typos fail loudly.

/// The full default document.
nlohmann::json defaults();

/// Defaults overlaid with `overrides`; throws ConfigError on unknown keys or
/// on a value whose JSON type differs from the default's.
nlohmann::json merge(const nlohmann::json& base, const nlohmann::json& overrides);

/// Applies one "section.key=value" override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Reads a config file (missing sections and keys keep their defaults).
nlohmann::json load(const std::filesystem::path& path);

struct DataSettings {
    std::string source = "synthetic";  // "synthetic" or "file"
    std::filesystem::path train_path;
    std::filesystem::path test_path;
    data::SynthConfig synth;
    std::size_t test_per_class = 64;
};

struct TeacherSettings {
    std::vector<nn::ConvSpec> blocks;
    search::TrainConfig train;
    attack::AttackConfig attack;
};

struct AttackSettings {
    double epsilon = 8.0 / 255.0;
    std::size_t steps = 20;
    double step_ratio = 0.25;  // α = ratio·ε
    double mi_momentum = 1.0;
    std::vector<double> sweep;  // PGD budgets for the accuracy-vs-ε curve
    std::size_t batch_size = 64;

    [[nodiscard]] attack::AttackConfig pgd(double eps) const;
    /// Clean row, FGSM, MI-FGSM at ε, then PGD at every sweep budget.
    [[nodiscard]] std::vector<attack::AttackSpec> attack_set() const;
};

struct IngestSettings {
    std::string source = "synthetic";  // "synthetic" or "cifar10"
    std::vector<std::filesystem::path> batches;
    std::size_t n_per_class = 500;
    std::string split = "train";
    std::filesystem::path output;
};

struct RunConfig {
    nlohmann::json document;
    DataSettings data;
    TeacherSettings teacher;
    nn::SuperNetConfig supernet;
    search::SearchConfig search;
    search::TrainConfig train;
    search::LossTerms train_terms;
    AttackSettings attack;
    std::vector<std::uint64_t> ablate_seeds;
    std::vector<std::string> ablate_arms;
    IngestSettings ingest;
};

/// Typed view of a merged document; validates every section.
RunConfig parse(const nlohmann::json& doc);

/// Loss terms of an ablation arm: "standard", "kl", "icc" or "rnascl".
search::LossTerms arm_terms(const std::string& arm, double gamma);

}  // namespace rnascl::config

#endif  // RNASCL_CONFIG_HPP
