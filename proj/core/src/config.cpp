#include "rnascl/config.hpp"

#include <fstream>

#include "rnascl/error.hpp"

namespace rnascl::config {

using nlohmann::json;

json defaults() {
    return {
        {"run", {{"seed", 0}}},
        {"data",
         {{"source", "synthetic"},
          {"train_path", ""},
          {"test_path", ""},
          {"classes", 4},
          {"n_per_class", 128},
          {"test_per_class", 64},
          {"size", 16},
          {"channels", 3},
          {"shape_contrast_lo", 0.25},
          {"shape_contrast_hi", 0.45},
          {"texture_amplitude_255", 4.0},
          {"noise_sd", 0.08},
          {"jitter", 2}}},
        {"teacher",
         {{"blocks", json::array({json::array({16, 1}), json::array({32, 2}), json::array({32, 1}),
                                  json::array({64, 2})})},
          {"epochs", 20},
          {"lr", 0.1},
          {"batch_size", 64},
          {"momentum", 0.9},
          {"weight_decay", 2e-4},
          {"schedule", "step"},
          {"epsilon_255", 8.0},
          {"steps", 5},
          {"step_ratio", 0.5},
          {"warmup_epochs", 0},
          {"clip_norm", 0.0},
          {"epsilon_warmup", 8}}},
        {"supernet",
         {{"kernel", 3},
          {"stages", json::array({{{"depth", 2}, {"choices", {4, 6, 8}}, {"stride", 1}},
                                  {{"depth", 2}, {"choices", {8, 12, 16}}, {"stride", 2}},
                                  {{"depth", 2}, {"choices", {16, 24, 32}}, {"stride", 2}}})}}},
        {"search",
         {{"epochs", 20},
          {"lr", 0.05},
          {"arch_lr", 0.01},
          {"batch_size", 64},
          {"momentum", 0.9},
          {"weight_decay", 2e-4},
          {"schedule", "step"},
          {"warmup_epochs", 5},
          {"clip_norm", 5.0},
          {"gamma", 1.0},
          {"tau0", 5.0},
          {"tau_decay", 0.045},
          {"weight_fraction", 0.8},
          {"kl", true},
          {"attention", true}}},
        {"train",
         {{"epochs", 80},
          {"lr", 0.05},
          {"batch_size", 64},
          {"momentum", 0.9},
          {"weight_decay", 2e-4},
          {"schedule", "step"},
          {"warmup_epochs", 5},
          {"clip_norm", 5.0},
          {"gamma", 1.0},
          {"flip", false},
          {"crop_pad", 0},
          {"kl", true},
          {"attention", true}}},
        {"attack",
         {{"epsilon_255", 8.0},
          {"steps", 20},
          {"step_ratio", 0.25},
          {"mi_momentum", 1.0},
          {"sweep_255", {0.0, 2.0, 4.0, 6.0, 8.0, 10.0}},
          {"batch_size", 64}}},
        {"ablate", {{"seeds", {0, 1, 2, 3, 4}}, {"arms", {"standard", "kl", "icc", "rnascl"}}}},
        {"ingest",
         {{"source", "synthetic"}, {"batches", json::array()}, {"n_per_class", 500}, {"split", "train"},
          {"output", "dataset.rnds"}}},
    };
}

namespace {

bool same_kind(const json& a, const json& b) {
    if (a.is_number() && b.is_number()) return true;
    return a.type() == b.type();
}

void merge_into(json& base, const json& over, const std::string& prefix) {
    if (!over.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
    for (const auto& [key, value] : over.items()) {
        const auto path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
        auto& slot = base[key];
        if (slot.is_object()) {
            merge_into(slot, value, path);
        } else {
            if (!same_kind(slot, value)) {
                throw ConfigError("config key '" + path + "' expects " + std::string(slot.type_name()) + ", got " +
                                  value.type_name());
            }
            slot = value;
        }
    }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
    try {
        return j.at(section).at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config key '") + section + "." + key + "': " + e.what());
    }
}

std::size_t get_count(const json& j, const char* section, const char* key) {
    const auto& v = j.at(section).at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(std::string("config key '") + section + "." + key + "' must be a non-negative integer");
    }
    return v.get<std::size_t>();
}

search::Schedule schedule_of(const std::string& s) {
    if (s == "step") return search::Schedule::Step;
    if (s == "cosine") return search::Schedule::Cosine;
    throw ConfigError("unknown schedule '" + s + "' (expected step or cosine)");
}

search::TrainConfig train_section(const json& j, const char* section) {
    search::TrainConfig t;
    t.schedule = schedule_of(get<std::string>(j, section, "schedule"));
    t.lr = get<double>(j, section, "lr");
    t.momentum = get<double>(j, section, "momentum");
    t.weight_decay = get<double>(j, section, "weight_decay");
    t.batch_size = get_count(j, section, "batch_size");
    t.epochs = get_count(j, section, "epochs");
    t.warmup_epochs = get_count(j, section, "warmup_epochs");
    t.clip_norm = get<double>(j, section, "clip_norm");
    t.validate();
    return t;
}

}  // namespace

json merge(const json& base, const json& overrides) {
    json out = base;
    if (!overrides.is_null()) merge_into(out, overrides, "");
    return out;
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
        throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    const auto section = assignment.substr(0, dot);
    const auto key = assignment.substr(dot + 1, eq - dot - 1);
    const auto text = assignment.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    doc = merge(doc, json{{section, {{key, value}}}});
}

json load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("cannot open config file " + path.string());
    json doc = json::parse(in, nullptr, false, true);
    if (doc.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
    return merge(defaults(), doc);
}

attack::AttackConfig AttackSettings::pgd(double eps) const {
    attack::AttackConfig c;
    c.epsilon = eps;
    c.steps = steps;
    c.step_size = step_ratio * eps;
    c.random_start = true;
    return c;
}

std::vector<attack::AttackSpec> AttackSettings::attack_set() const {
    std::vector<attack::AttackSpec> specs;
    attack::AttackConfig one;
    one.epsilon = epsilon;
    one.steps = 1;
    one.step_size = epsilon;
    one.random_start = false;
    specs.push_back({attack::AttackKind::Fgsm, one});
    auto mi = pgd(epsilon);
    mi.momentum = mi_momentum;
    mi.random_start = false;
    specs.push_back({attack::AttackKind::MiFgsm, mi});
    for (double e : sweep) specs.push_back({attack::AttackKind::Pgd, pgd(e)});
    return specs;
}

search::LossTerms arm_terms(const std::string& arm, double gamma) {
    search::LossTerms t;
    t.gamma = gamma;
    if (arm == "standard") {
        t.kl = false;
        t.attention = false;
    } else if (arm == "kl") {
        t.kl = true;
        t.attention = false;
    } else if (arm == "icc") {
        t.kl = false;
        t.attention = true;
    } else if (arm == "rnascl") {
        t.kl = true;
        t.attention = true;
    } else {
        throw ConfigError("unknown ablation arm '" + arm + "' (expected standard, kl, icc or rnascl)");
    }
    return t;
}

RunConfig parse(const json& doc_in) {
    const json doc = merge(defaults(), doc_in);
    RunConfig rc;
    rc.document = doc;

    auto& d = rc.data;
    d.source = get<std::string>(doc, "data", "source");
    if (d.source != "synthetic" && d.source != "file") throw ConfigError("data.source must be synthetic or file");
    d.train_path = get<std::string>(doc, "data", "train_path");
    d.test_path = get<std::string>(doc, "data", "test_path");
    if (d.source == "file" && (d.train_path.empty() || d.test_path.empty())) {
        throw ConfigError("data.source=file needs data.train_path and data.test_path");
    }
    d.synth.classes = get_count(doc, "data", "classes");
    d.synth.n_per_class = get_count(doc, "data", "n_per_class");
    d.test_per_class = get_count(doc, "data", "test_per_class");
    d.synth.size = get_count(doc, "data", "size");
    d.synth.channels = get_count(doc, "data", "channels");
    d.synth.shape_contrast_lo = get<double>(doc, "data", "shape_contrast_lo");
    d.synth.shape_contrast_hi = get<double>(doc, "data", "shape_contrast_hi");
    d.synth.texture_amplitude = get<double>(doc, "data", "texture_amplitude_255") / 255.0;
    d.synth.noise_sd = get<double>(doc, "data", "noise_sd");
    d.synth.jitter = get_count(doc, "data", "jitter");
    d.synth.seed = get<std::uint64_t>(doc, "run", "seed");
    if (d.synth.classes < 2) throw ConfigError("data.classes must be >= 2");

    auto& t = rc.teacher;
    for (const auto& b : doc.at("teacher").at("blocks")) {
        if (!b.is_array() || b.size() != 2) throw ConfigError("teacher.blocks entries are [out_channels, stride]");
        t.blocks.push_back({b[0].get<std::size_t>(), 3, b[1].get<std::size_t>()});
    }
    if (t.blocks.empty()) throw ConfigError("teacher.blocks must not be empty");
    t.train = train_section(doc, "teacher");
    const double teps = get<double>(doc, "teacher", "epsilon_255") / 255.0;
    t.attack.epsilon = teps;
    t.attack.steps = get_count(doc, "teacher", "steps");
    t.attack.step_size = get<double>(doc, "teacher", "step_ratio") * teps;
    t.attack.random_start = true;
    t.train.epsilon_warmup = get_count(doc, "teacher", "epsilon_warmup");
    t.attack.validate();

    try {
        json sn = doc.at("supernet");
        sn["in_channels"] = d.synth.channels;
        sn["input_size"] = d.synth.size;
        sn["num_classes"] = d.synth.classes;
        rc.supernet = nn::supernet_from_json(sn);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("supernet section: ") + e.what());
    }
    if (rc.supernet.stages.empty()) throw ConfigError("supernet.stages must not be empty");
    for (const auto& st : rc.supernet.stages) nn::validate_choices(st.choices);

    auto& s = rc.search;
    s.weights = train_section(doc, "search");
    s.arch_lr = get<double>(doc, "search", "arch_lr");
    s.terms.kl = get<bool>(doc, "search", "kl");
    s.terms.attention = get<bool>(doc, "search", "attention");
    s.terms.gamma = get<double>(doc, "search", "gamma");
    s.weights.gamma = s.terms.gamma;
    s.tau0 = get<double>(doc, "search", "tau0");
    s.tau_decay = get<double>(doc, "search", "tau_decay");
    s.weight_fraction = get<double>(doc, "search", "weight_fraction");
    s.validate();

    rc.train = train_section(doc, "train");
    rc.train.gamma = get<double>(doc, "train", "gamma");
    rc.train.flip = get<bool>(doc, "train", "flip");
    rc.train.crop_pad = get_count(doc, "train", "crop_pad");
    rc.train_terms.kl = get<bool>(doc, "train", "kl");
    rc.train_terms.attention = get<bool>(doc, "train", "attention");
    rc.train_terms.gamma = rc.train.gamma;

    auto& a = rc.attack;
    a.epsilon = get<double>(doc, "attack", "epsilon_255") / 255.0;
    a.steps = get_count(doc, "attack", "steps");
    a.step_ratio = get<double>(doc, "attack", "step_ratio");
    a.mi_momentum = get<double>(doc, "attack", "mi_momentum");
    for (double e : get<std::vector<double>>(doc, "attack", "sweep_255")) a.sweep.push_back(e / 255.0);
    a.batch_size = get_count(doc, "attack", "batch_size");
    if (a.batch_size == 0) throw ConfigError("attack.batch_size must be >= 1");
    for (const auto& spec : a.attack_set()) spec.config.validate();

    rc.ablate_seeds = get<std::vector<std::uint64_t>>(doc, "ablate", "seeds");
    rc.ablate_arms = get<std::vector<std::string>>(doc, "ablate", "arms");
    for (const auto& arm : rc.ablate_arms) arm_terms(arm, 1.0);

    auto& ing = rc.ingest;
    ing.source = get<std::string>(doc, "ingest", "source");
    if (ing.source != "synthetic" && ing.source != "cifar10") {
        throw ConfigError("ingest.source must be synthetic or cifar10");
    }
    for (const auto& p : get<std::vector<std::string>>(doc, "ingest", "batches")) ing.batches.emplace_back(p);
    ing.n_per_class = get_count(doc, "ingest", "n_per_class");
    ing.split = get<std::string>(doc, "ingest", "split");
    if (ing.split != "train" && ing.split != "test") throw ConfigError("ingest.split must be train or test");
    ing.output = get<std::string>(doc, "ingest", "output");
    return rc;
}

}  // namespace rnascl::config
