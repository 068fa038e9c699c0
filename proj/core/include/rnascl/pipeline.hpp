#ifndef RNASCL_PIPELINE_HPP
#define RNASCL_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "rnascl/config.hpp"
#include "rnascl/data.hpp"
#include "rnascl/nn.hpp"
#include "rnascl/search.hpp"

namespace rnascl::pipeline {

inline constexpr const char* kManifestFile = "manifest.json";
/// The only environment knob: worker threads for the ablation arms.
inline constexpr const char* kThreadsEnv = "RNASCL_THREADS";

/// manifest.json inside a run directory. Artifact paths are stored relative
/// to the directory, grouped by phase.
class RunManifest {
public:
    /// Starts a fresh manifest (nothing is written until save()).
    RunManifest(std::filesystem::path dir, std::string run_id, std::uint64_t seed, nlohmann::json config);

    /// Throws PhaseOrderError when the directory holds no manifest.
    static RunManifest open(const std::filesystem::path& dir);
    static bool exists(const std::filesystem::path& dir);

    [[nodiscard]] bool has_phase(const std::string& phase) const;
    /// Throws PhaseOrderError if the phase has not run, MissingArtifactError
    /// if the recorded file is gone.
    [[nodiscard]] std::filesystem::path artifact(const std::string& phase, const std::string& key) const;
    /// Registers the phase's files (relative names); later phases are dropped,
    /// since they were derived from the previous state of this one.
    void record(const std::string& phase, const nlohmann::json& files);
    /// Throws MissingArtifactError if any recorded file is missing.
    void check() const;
    void save() const;

    [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
    [[nodiscard]] std::uint64_t seed() const { return doc_.at("seed").get<std::uint64_t>(); }
    [[nodiscard]] const nlohmann::json& config() const { return doc_.at("config"); }
    [[nodiscard]] const nlohmann::json& document() const { return doc_; }

private:
    RunManifest() = default;
    std::filesystem::path dir_;
    nlohmann::json doc_;
};

/// Order in which phases invalidate each other.
const std::vector<std::string>& phase_order();

struct Options {
    config::RunConfig cfg;
    std::filesystem::path out;
    std::uint64_t seed = 0;
    bool verbose = true;  // echo log records to stderr
};

/// (train, test) datasets for a run.
std::pair<data::Dataset, data::Dataset> load_data(const config::RunConfig& cfg);

nn::ArchSpec teacher_spec(const config::RunConfig& cfg);

void save_supernet(const std::filesystem::path& path, const search::SearchState& state);
/// Restores supernet weights, mask logits, connection logits, τ and the epoch counter.
search::SearchState load_search_state(const std::filesystem::path& supernet_path, nn::Network teacher,
                                      const search::SearchConfig& cfg, std::uint64_t seed);

/// Trains the adversarial teacher, then searches. Writes teacher.ckpt,
/// teacher_metrics.csv, supernet.ckpt, search_metrics.csv.
RunManifest cmd_search(const Options& opt);
/// arch.json from the searched supernet.
RunManifest cmd_derive(const Options& opt);
/// student.ckpt and train_metrics.csv.
RunManifest cmd_train(const Options& opt);
/// eval.csv for the student and the teacher.
RunManifest cmd_attack(const Options& opt);
/// accuracy_vs_eps.svg/.csv, attention maps, tutor_histogram.csv, summary.csv.
RunManifest cmd_report(const Options& opt);
/// Teacher once, then per seed: search, derive and one training run per arm.
/// Writes ablation.csv, ablation_sweep.csv and ablation_summary.csv.
RunManifest cmd_ablate(const Options& opt);
/// Writes a dataset file in the documented binary format.
std::filesystem::path cmd_ingest(const Options& opt);

/// Files declared by cmd_report for a run whose student has n_s layers and
/// teacher n_t layers.
std::vector<std::string> report_files(std::size_t n_s, std::size_t n_t);

struct AblationRow {
    std::string arm;
    std::uint64_t seed = 0;
    double clean = 0.0;
    double fgsm = 0.0;
    double pgd = 0.0;     // PGD at attack.epsilon
    double mifgsm = 0.0;
    std::vector<std::pair<double, double>> sweep;  // (ε, PGD accuracy)
};

std::vector<AblationRow> read_ablation(const std::filesystem::path& dir);

/// Worker count from RNASCL_THREADS (default 1).
std::size_t thread_count();

}  // namespace rnascl::pipeline

#endif  // RNASCL_PIPELINE_HPP
