#include "rnascl/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "rnascl/attack.hpp"
#include "rnascl/distill.hpp"
#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"
#include "rnascl/report.hpp"

namespace rnascl::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// Seed streams derived from the run seed.
enum Stream : std::uint64_t {
    kTeacherStream = 1,
    kSupernetInit = 2,
    kSearchStream = 3,
    kStudentInit = 4,
    kEvalStream = 5,
    kTrainStream = 6,
};

// --- manifest --------------------------------------------------------------------

const std::vector<std::string>& phase_order() {
    static const std::vector<std::string> order = {"search", "derive", "train", "attack", "report"};
    return order;
}

RunManifest::RunManifest(fs::path dir, std::string run_id, std::uint64_t seed, json config) : dir_(std::move(dir)) {
    doc_ = {{"run_id", std::move(run_id)}, {"seed", seed}, {"config", std::move(config)}, {"phases", json::object()}};
}

bool RunManifest::exists(const fs::path& dir) { return fs::exists(dir / kManifestFile); }

RunManifest RunManifest::open(const fs::path& dir) {
    if (!exists(dir)) {
        throw PhaseOrderError("no run manifest in " + dir.string() + "; run 'search' (or 'ablate') first");
    }
    std::ifstream in(dir / kManifestFile);
    RunManifest m;
    m.dir_ = dir;
    m.doc_ = json::parse(in, nullptr, false);
    if (m.doc_.is_discarded() || !m.doc_.contains("phases") || !m.doc_.contains("seed")) {
        throw FormatError((dir / kManifestFile).string() + " is not a run manifest");
    }
    return m;
}

bool RunManifest::has_phase(const std::string& phase) const { return doc_.at("phases").contains(phase); }

fs::path RunManifest::artifact(const std::string& phase, const std::string& key) const {
    if (!has_phase(phase)) throw PhaseOrderError("phase '" + phase + "' has not run in " + dir_.string());
    const auto& files = doc_.at("phases").at(phase);
    if (!files.contains(key)) throw MissingArtifactError("phase '" + phase + "' recorded no '" + key + "' artifact");
    const auto path = dir_ / files.at(key).get<std::string>();
    if (!fs::exists(path)) throw MissingArtifactError("missing artifact " + path.string());
    return path;
}

void RunManifest::record(const std::string& phase, const json& files) {
    auto& phases = doc_.at("phases");
    const auto& order = phase_order();
    auto it = std::find(order.begin(), order.end(), phase);
    if (it != order.end()) {
        for (++it; it != order.end(); ++it) phases.erase(*it);
    }
    phases[phase] = files;
}

void RunManifest::check() const {
    for (const auto& [phase, files] : doc_.at("phases").items()) {
        for (const auto& [key, value] : files.items()) {
            if (!value.is_string()) continue;
            const auto path = dir_ / value.get<std::string>();
            if (!fs::exists(path)) throw MissingArtifactError("manifest references missing file " + path.string());
        }
    }
}

void RunManifest::save() const {
    fs::create_directories(dir_);
    std::ofstream out(dir_ / kManifestFile);
    if (!out) throw Error("cannot write manifest in " + dir_.string());
    out << doc_.dump(2) << '\n';
}

// --- helpers ---------------------------------------------------------------------

namespace {

class EventLog {
public:
    EventLog(const fs::path& path, bool echo, bool append) : out_(path, append ? std::ios::app : std::ios::trunc),
                                                             echo_(echo) {}
    void write(const json& record) {
        std::lock_guard lock(mu_);
        const auto line = record.dump();
        out_ << line << '\n';
        out_.flush();
        if (echo_) std::clog << line << '\n';
    }

private:
    std::ofstream out_;
    bool echo_;
    std::mutex mu_;
};

json metrics_json(const std::string& phase, const search::EpochMetrics& m) {
    return {{"phase", phase},   {"epoch", m.epoch}, {"tau", m.tau},   {"lr", m.lr},           {"loss", m.loss},
            {"ce", m.cross_entropy}, {"kl", m.kl},  {"attention", m.attention}, {"n_f", m.cost}, {"clean_acc", m.clean_acc}};
}

std::string run_id_for(std::uint64_t seed, const json& cfg) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : cfg.dump()) h = (h ^ c) * 1099511628211ULL;
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%016llx", static_cast<unsigned long long>(mix_seed(h, seed)));
    return buf;
}

/// Runs fn(0..n-1) on up to `threads` workers; rethrows the first failure by index.
void run_parallel(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto count = std::max<std::size_t>(1, std::min(threads, n));
    if (count == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::ofstream open_csv(const fs::path& path, const std::string& header) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << header << '\n';
    return out;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

attack::Classifier classifier(const nn::Network& net) {
    return [&net](const Tensor& x) { return net.logits(x); };
}

nn::Network train_teacher(const config::RunConfig& cfg, const data::Dataset& train, std::uint64_t seed,
                          const fs::path& metrics_path, EventLog& log) {
    Rng init(mix_seed(seed, kTeacherStream));
    nn::Network teacher(teacher_spec(cfg), init);
    auto csv = open_csv(metrics_path, "epoch,adv_loss");
    search::train_classifier(teacher, train, cfg.teacher.train, cfg.teacher.attack, mix_seed(seed, kTeacherStream),
                             [&](std::size_t e, double loss) {
                                 csv << e << ',' << num(loss) << '\n';
                                 log.write({{"phase", "teacher"}, {"epoch", e}, {"adv_loss", loss}});
                             });
    return teacher;
}

search::SearchState run_search(const config::RunConfig& cfg, const data::Dataset& train, const nn::Network& teacher,
                               std::uint64_t seed, const fs::path& metrics_path, EventLog& log) {
    Rng init(mix_seed(seed, kSupernetInit));
    search::SearchState state(nn::SuperNet(cfg.supernet, init), teacher, cfg.search, mix_seed(seed, kSearchStream));
    auto csv = open_csv(metrics_path, search::metrics_csv_header());
    for (std::size_t e = 0; e < cfg.search.weights.epochs; ++e) {
        const auto m = search::search_epoch(state, train);
        csv << search::metrics_csv_row(m) << '\n';
        auto rec = metrics_json("search", m);
        rec["seed"] = seed;
        log.write(rec);
    }
    return state;
}

nn::Network run_training(const config::RunConfig& cfg, const search::ArchDescription& arch,
                         const search::LossTerms& terms, const nn::Network& teacher, const data::Dataset& train,
                         std::uint64_t seed, const fs::path& metrics_path, EventLog& log, const std::string& tag) {
    if (terms.attention && arch.tutors.empty()) {
        throw ConfigError("attention term needs tutors, but the search ran without the attention term");
    }
    search::Trainer trainer(search::instantiate(arch, mix_seed(seed, kStudentInit)), &teacher,
                            terms.attention ? arch.tutors : std::vector<std::size_t>{}, cfg.train, terms,
                            mix_seed(seed, kTrainStream));
    std::ofstream csv;
    if (!metrics_path.empty()) csv = open_csv(metrics_path, search::metrics_csv_header());
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
        const auto m = trainer.run_epoch(train);
        if (csv.is_open()) csv << search::metrics_csv_row(m) << '\n';
        auto rec = metrics_json("train", m);
        rec["run"] = tag;
        log.write(rec);
    }
    auto student = trainer.student();
    student.freeze();
    return student;
}

void write_arch(const fs::path& path, const search::ArchDescription& arch) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << arch.to_json().dump(2) << '\n';
}

search::ArchDescription read_arch(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("architecture file not found: " + path.string());
    const auto j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw FormatError(path.string() + " is not valid JSON");
    return search::ArchDescription::from_json(j);
}

}  // namespace

std::size_t thread_count() {
    if (const char* v = std::getenv(kThreadsEnv)) {
        char* end = nullptr;
        const auto n = std::strtoul(v, &end, 10);
        if (end != v && *end == '\0' && n > 0) return n;
        throw ConfigError(std::string(kThreadsEnv) + " must be a positive integer");
    }
    return 1;
}

std::pair<data::Dataset, data::Dataset> load_data(const config::RunConfig& cfg) {
    const auto& d = cfg.data;
    if (d.source == "file") {
        auto train = data::load_dataset(d.train_path);
        auto test = data::load_dataset(d.test_path);
        for (const auto* ds : {&train, &test}) {
            if (ds->channels != d.synth.channels || ds->height != d.synth.size || ds->width != d.synth.size ||
                ds->classes != d.synth.classes) {
                throw ConfigError("dataset file geometry disagrees with data.channels/size/classes");
            }
        }
        train.split = data::Split::Train;
        test.split = data::Split::Test;
        return {std::move(train), std::move(test)};
    }
    auto sc = d.synth;
    sc.split = data::Split::Train;
    auto train = data::synth_dataset(sc);
    sc.split = data::Split::Test;
    sc.n_per_class = d.test_per_class;
    auto test = data::synth_dataset(sc);
    return {std::move(train), std::move(test)};
}

nn::ArchSpec teacher_spec(const config::RunConfig& cfg) {
    nn::ArchSpec s;
    s.in_channels = cfg.data.synth.channels;
    s.input_size = cfg.data.synth.size;
    s.num_classes = cfg.data.synth.classes;
    s.blocks = cfg.teacher.blocks;
    return s;
}

void save_supernet(const fs::path& path, const search::SearchState& state) {
    nn::Checkpoint ckpt;
    ckpt.manifest = {{"kind", "supernet"},
                     {"supernet", nn::to_json(state.supernet.config())},
                     {"epoch", state.epoch},
                     {"tau", state.sampler.temperature()},
                     {"has_connections", state.uses_connections()}};
    ckpt.tensors = state.weight_parameters();
    for (const auto& t : state.arch_parameters()) ckpt.tensors.push_back(t);
    nn::save_checkpoint(path, ckpt);
}

search::SearchState load_search_state(const fs::path& supernet_path, nn::Network teacher,
                                      const search::SearchConfig& cfg_in, std::uint64_t seed) {
    const auto ckpt = nn::load_checkpoint(supernet_path);
    if (ckpt.manifest.value("kind", "") != "supernet") {
        throw FormatError(supernet_path.string() + ": not a supernet checkpoint");
    }
    auto cfg = cfg_in;
    cfg.terms.attention = ckpt.manifest.at("has_connections").get<bool>();
    Rng rng(0);
    search::SearchState state(nn::SuperNet(nn::supernet_from_json(ckpt.manifest.at("supernet")), rng),
                              std::move(teacher), cfg, seed);
    auto params = state.weight_parameters();
    for (const auto& t : state.arch_parameters()) params.push_back(t);
    if (params.size() != ckpt.tensors.size()) {
        throw FormatError(supernet_path.string() + ": expected " + std::to_string(params.size()) + " tensors, found " +
                          std::to_string(ckpt.tensors.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape() != ckpt.tensors[i].shape()) {
            throw FormatError(supernet_path.string() + ": tensor " + std::to_string(i) + " has shape " +
                              shape_str(ckpt.tensors[i].shape()) + ", expected " + shape_str(params[i].shape()));
        }
        auto dst = params[i].mutable_data();
        const auto src = ckpt.tensors[i].data();
        std::copy(src.begin(), src.end(), dst.begin());
    }
    state.epoch = ckpt.manifest.at("epoch").get<std::size_t>();
    return state;
}

std::vector<std::string> report_files(std::size_t n_s, std::size_t n_t) {
    std::vector<std::string> files = {"accuracy_vs_eps.svg", "accuracy_vs_eps.csv", "tutor_histogram.csv",
                                      "summary.csv"};
    for (std::size_t i = 0; i < n_s; ++i) files.push_back("attention_student_l" + std::to_string(i) + ".pgm");
    for (std::size_t j = 0; j < n_t; ++j) files.push_back("attention_teacher_l" + std::to_string(j) + ".pgm");
    return files;
}

// --- commands --------------------------------------------------------------------

RunManifest cmd_search(const Options& opt) {
    const auto& cfg = opt.cfg;
    fs::create_directories(opt.out);
    RunManifest manifest(opt.out, run_id_for(opt.seed, cfg.document), opt.seed, cfg.document);
    EventLog log(opt.out / "log.jsonl", opt.verbose, false);
    const auto [train, test] = load_data(cfg);

    const auto teacher = train_teacher(cfg, train, opt.seed, opt.out / "teacher_metrics.csv", log);
    nn::save_network(opt.out / "teacher.ckpt", teacher);
    const auto state = run_search(cfg, train, teacher, opt.seed, opt.out / "search_metrics.csv", log);
    save_supernet(opt.out / "supernet.ckpt", state);

    manifest.record("search", {{"teacher", "teacher.ckpt"},
                               {"teacher_metrics", "teacher_metrics.csv"},
                               {"supernet", "supernet.ckpt"},
                               {"metrics", "search_metrics.csv"},
                               {"log", "log.jsonl"}});
    manifest.check();
    manifest.save();
    return manifest;
}

RunManifest cmd_derive(const Options& opt) {
    auto manifest = RunManifest::open(opt.out);
    auto teacher = nn::load_network(manifest.artifact("search", "teacher"));
    const auto state =
        load_search_state(manifest.artifact("search", "supernet"), std::move(teacher), opt.cfg.search, manifest.seed());
    const auto arch = search::derive(state);
    search::validate(arch, state.supernet.config());
    write_arch(opt.out / "arch.json", arch);
    manifest.record("derive", {{"arch", "arch.json"}});
    manifest.check();
    manifest.save();
    return manifest;
}

RunManifest cmd_train(const Options& opt) {
    auto manifest = RunManifest::open(opt.out);
    const auto arch = read_arch(manifest.artifact("derive", "arch"));
    const auto teacher = nn::load_network(manifest.artifact("search", "teacher"));
    EventLog log(opt.out / "log.jsonl", opt.verbose, true);
    const auto [train, test] = load_data(opt.cfg);
    const auto student = run_training(opt.cfg, arch, opt.cfg.train_terms, teacher, train, opt.seed,
                                      opt.out / "train_metrics.csv", log, "student");
    nn::save_network(opt.out / "student.ckpt", student);
    manifest.record("train", {{"student", "student.ckpt"}, {"metrics", "train_metrics.csv"}});
    manifest.check();
    manifest.save();
    return manifest;
}

RunManifest cmd_attack(const Options& opt) {
    auto manifest = RunManifest::open(opt.out);
    const auto student = nn::load_network(manifest.artifact("train", "student"));
    const auto teacher = nn::load_network(manifest.artifact("search", "teacher"));
    const auto [train, test] = load_data(opt.cfg);
    const auto attacks = opt.cfg.attack.attack_set();
    const auto seed = mix_seed(opt.seed, kEvalStream);
    auto rows = attack::evaluate(classifier(student), test, attacks, "student", seed, opt.cfg.attack.batch_size);
    const auto t_rows = attack::evaluate(classifier(teacher), test, attacks, "teacher", seed, opt.cfg.attack.batch_size);
    rows.insert(rows.end(), t_rows.begin(), t_rows.end());
    attack::write_eval_csv(opt.out / "eval.csv", rows);
    manifest.record("attack", {{"eval", "eval.csv"}});
    manifest.check();
    manifest.save();
    return manifest;
}

RunManifest cmd_report(const Options& opt) {
    auto manifest = RunManifest::open(opt.out);
    const auto rows = attack::read_eval_csv(manifest.artifact("attack", "eval"));
    const auto student = nn::load_network(manifest.artifact("train", "student"));
    const auto teacher = nn::load_network(manifest.artifact("search", "teacher"));
    const auto arch = read_arch(manifest.artifact("derive", "arch"));

    const auto curves = report::sweep_curves(rows);
    report::write_line_chart(opt.out / "accuracy_vs_eps.svg", curves, "PGD accuracy vs perturbation budget",
                             "epsilon (/255)", "accuracy");
    report::write_curves_csv(opt.out / "accuracy_vs_eps.csv", curves);

    const auto [train, test] = load_data(opt.cfg);
    const std::vector<std::size_t> first = {0};
    const auto x = test.images_at(first);
    {
        NoGradGuard no_grad;
        const auto s_out = student.forward(x, true);
        const auto t_out = teacher.forward(x, true);
        for (std::size_t i = 0; i < s_out.activations.size(); ++i) {
            distill::write_pgm(opt.out / ("attention_student_l" + std::to_string(i) + ".pgm"),
                               select(distill::attention_maps(s_out.activations[i]), 0));
        }
        for (std::size_t j = 0; j < t_out.activations.size(); ++j) {
            distill::write_pgm(opt.out / ("attention_teacher_l" + std::to_string(j) + ".pgm"),
                               select(distill::attention_maps(t_out.activations[j]), 0));
        }
    }
    distill::write_histogram_csv(opt.out / "tutor_histogram.csv",
                                 distill::connection_histogram(arch.tutors, teacher.num_layers()));
    report::write_summary_csv(
        opt.out / "summary.csv",
        {report::summarize(rows, "student", opt.cfg.attack.epsilon, student.parameter_count(), nn::count_macs(student)),
         report::summarize(rows, "teacher", opt.cfg.attack.epsilon, teacher.parameter_count(),
                           nn::count_macs(teacher))});

    json files = json::object();
    for (const auto& f : report_files(student.num_layers(), teacher.num_layers())) files[f] = f;
    manifest.record("report", files);
    manifest.check();
    manifest.save();
    return manifest;
}

RunManifest cmd_ablate(const Options& opt) {
    const auto& cfg = opt.cfg;
    if (!cfg.search.terms.attention) throw ConfigError("ablation needs search.attention=true to derive tutors");
    if (cfg.ablate_seeds.empty() || cfg.ablate_arms.empty()) throw ConfigError("ablation needs seeds and arms");
    fs::create_directories(opt.out);
    RunManifest manifest(opt.out, run_id_for(opt.seed, cfg.document), opt.seed, cfg.document);
    EventLog log(opt.out / "log.jsonl", opt.verbose, false);
    const auto [train, test] = load_data(cfg);
    const auto threads = thread_count();

    const auto teacher = train_teacher(cfg, train, opt.seed, opt.out / "teacher_metrics.csv", log);
    nn::save_network(opt.out / "teacher.ckpt", teacher);

    const auto& seeds = cfg.ablate_seeds;
    std::vector<search::ArchDescription> archs(seeds.size());
    run_parallel(seeds.size(), threads, [&](std::size_t i) {
        const auto state = run_search(cfg, train, teacher, seeds[i], opt.out / ("search_metrics_seed" +
                                      std::to_string(seeds[i]) + ".csv"), log);
        archs[i] = search::derive(state);
        search::validate(archs[i], cfg.supernet);
        write_arch(opt.out / ("arch_seed" + std::to_string(seeds[i]) + ".json"), archs[i]);
    });

    const auto& arms = cfg.ablate_arms;
    const auto attacks = cfg.attack.attack_set();
    std::vector<std::vector<attack::EvalRow>> results(seeds.size() * arms.size());
    run_parallel(results.size(), threads, [&](std::size_t k) {
        const auto si = k / arms.size();
        const auto& arm = arms[k % arms.size()];
        const auto tag = arm + "_seed" + std::to_string(seeds[si]);
        const auto student = run_training(cfg, archs[si], config::arm_terms(arm, cfg.train.gamma), teacher, train,
                                          seeds[si], {}, log, tag);
        results[k] = attack::evaluate(classifier(student), test, attacks, arm, mix_seed(seeds[si], kEvalStream),
                                      cfg.attack.batch_size);
        log.write({{"phase", "ablate"}, {"run", tag}, {"clean_acc", results[k].front().accuracy}});
    });

    const double max_eps = cfg.attack.sweep.empty()
                               ? cfg.attack.epsilon
                               : *std::max_element(cfg.attack.sweep.begin(), cfg.attack.sweep.end());
    auto table = open_csv(opt.out / "ablation.csv", "arm,seed,clean_acc,fgsm_acc,pgd_acc,mifgsm_acc");
    auto sweep = open_csv(opt.out / "ablation_sweep.csv", "arm,seed,epsilon_255,pgd_acc");
    struct Mean {
        double clean = 0, pgd = 0, pgd_max = 0;
    };
    std::map<std::string, Mean> means;
    for (std::size_t k = 0; k < results.size(); ++k) {
        const auto seed = seeds[k / arms.size()];
        const auto& arm = arms[k % arms.size()];
        const auto s = report::summarize(results[k], arm, cfg.attack.epsilon, 0, 0);
        table << arm << ',' << seed << ',' << num(s.clean) << ',' << num(s.fgsm) << ',' << num(s.pgd) << ','
              << num(s.mifgsm) << '\n';
        auto& m = means[arm];
        m.clean += s.clean;
        m.pgd += s.pgd;
        for (const auto& r : results[k]) {
            if (r.attack != "pgd") continue;
            sweep << arm << ',' << seed << ',' << num(std::round(r.epsilon * 255.0 * 1e6) / 1e6) << ','
                  << num(r.accuracy) << '\n';
            if (std::abs(r.epsilon - max_eps) < 1e-12) m.pgd_max += r.accuracy;
        }
    }
    auto summary = open_csv(opt.out / "ablation_summary.csv", "arm,seeds,clean_acc_mean,pgd_acc_mean,pgd_acc_max_eps_mean");
    const double n = static_cast<double>(seeds.size());
    for (const auto& arm : arms) {
        const auto& m = means[arm];
        summary << arm << ',' << seeds.size() << ',' << num(m.clean / n) << ',' << num(m.pgd / n) << ','
                << num(m.pgd_max / n) << '\n';
    }
    table.close();
    sweep.close();
    summary.close();

    json files = {{"teacher", "teacher.ckpt"},
                  {"teacher_metrics", "teacher_metrics.csv"},
                  {"table", "ablation.csv"},
                  {"sweep", "ablation_sweep.csv"},
                  {"summary", "ablation_summary.csv"},
                  {"log", "log.jsonl"}};
    for (auto s : seeds) {
        files["arch_seed" + std::to_string(s)] = "arch_seed" + std::to_string(s) + ".json";
        files["search_metrics_seed" + std::to_string(s)] = "search_metrics_seed" + std::to_string(s) + ".csv";
    }
    manifest.record("ablate", files);
    manifest.check();
    manifest.save();
    return manifest;
}

fs::path cmd_ingest(const Options& opt) {
    const auto& ing = opt.cfg.ingest;
    const auto split = ing.split == "test" ? data::Split::Test : data::Split::Train;
    data::Dataset ds;
    if (ing.source == "cifar10") {
        if (ing.batches.empty()) throw ConfigError("ingest.source=cifar10 needs ingest.batches");
        ds = data::ingest_cifar10(ing.batches, ing.n_per_class, split);
    } else {
        auto sc = opt.cfg.data.synth;
        sc.seed = opt.seed;
        sc.n_per_class = ing.n_per_class;
        sc.split = split;
        ds = data::synth_dataset(sc);
    }
    const auto path = ing.output.is_absolute() ? ing.output : opt.out / ing.output;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    data::save_dataset(path, ds);
    return path;
}

std::vector<AblationRow> read_ablation(const fs::path& dir) {
    std::vector<AblationRow> rows;
    std::ifstream in(dir / "ablation.csv");
    if (!in) throw MissingArtifactError("no ablation.csv in " + dir.string());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        AblationRow r;
        std::string field;
        std::getline(ls, r.arm, ',');
        std::getline(ls, field, ',');
        r.seed = std::stoull(field);
        for (double* dst : {&r.clean, &r.fgsm, &r.pgd, &r.mifgsm}) {
            std::getline(ls, field, ',');
            *dst = std::stod(field);
        }
        rows.push_back(r);
    }
    std::ifstream sw(dir / "ablation_sweep.csv");
    if (!sw) throw MissingArtifactError("no ablation_sweep.csv in " + dir.string());
    std::getline(sw, line);
    while (std::getline(sw, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string arm, seed, eps, acc;
        std::getline(ls, arm, ',');
        std::getline(ls, seed, ',');
        std::getline(ls, eps, ',');
        std::getline(ls, acc, ',');
        for (auto& r : rows) {
            if (r.arm == arm && r.seed == std::stoull(seed)) r.sweep.emplace_back(std::stod(eps), std::stod(acc));
        }
    }
    return rows;
}

}  // namespace rnascl::pipeline
