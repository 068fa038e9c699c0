#include "rnascl/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"

namespace rnascl::search {

using detail::make_result;

// --- optimisation ----------------------------------------------------------------

double clip_global_norm(std::vector<std::vector<double>>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / norm;
        for (auto& g : grads)
            for (double& v : g) v *= f;
    }
    return norm;
}

void sgd_step(std::span<Tensor> params, std::span<const std::vector<double>> grads,
              std::vector<std::vector<double>>& velocity, double lr, double momentum, double weight_decay) {
    if (grads.size() != params.size()) throw ShapeError("sgd_step: one gradient per parameter required");
    if (velocity.size() != params.size()) velocity.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].mutable_data();
        const auto& g = grads[i];
        if (g.size() != p.size()) {
            throw ShapeError("sgd_step: gradient " + std::to_string(i) + " has " + std::to_string(g.size()) +
                             " entries for parameter of " + std::to_string(p.size()));
        }
        auto& v = velocity[i];
        if (v.empty()) v.assign(p.size(), 0.0);
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = round_to_precision(momentum * v[k] + g[k] + weight_decay * p[k]);
            p[k] = round_to_precision(p[k] - lr * v[k]);
        }
    }
}

Sgd::Sgd(std::vector<Tensor> params, double momentum, double weight_decay)
    : params_(std::move(params)), velocity_(params_.size()), momentum_(momentum), weight_decay_(weight_decay) {}

void Sgd::step(std::span<const std::vector<double>> grads, double lr) {
    sgd_step(params_, grads, velocity_, lr, momentum_, weight_decay_);
}

double learning_rate(Schedule kind, double base_lr, std::size_t epoch, std::size_t total_epochs,
                     std::size_t warmup_epochs) {
    if (epoch < warmup_epochs)
        base_lr *= static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
    if (total_epochs == 0) return base_lr;
    if (kind == Schedule::Cosine) {
        const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
        return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * t));
    }
    // ×0.1 from 75% and from 90% of the run (epochs 75 and 90 of 100).
    const auto first = (total_epochs * 75) / 100;
    const auto second = (total_epochs * 90) / 100;
    double lr = base_lr;
    if (epoch >= first) lr *= 0.1;
    if (epoch >= second) lr *= 0.1;
    return lr;
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(gamma >= 0.0)) throw ConfigError("attention weight must be >= 0");
    if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0 (0 disables clipping)");
}

TrainConfig cifar_profile() {
    TrainConfig cfg;
    cfg.schedule = Schedule::Step;
    cfg.lr = 0.1;
    cfg.momentum = 0.9;
    cfg.weight_decay = 2e-4;
    cfg.batch_size = 128;
    cfg.epochs = 100;
    return cfg;
}

TrainConfig imagenet_profile() {
    TrainConfig cfg;
    cfg.schedule = Schedule::Cosine;
    cfg.lr = 0.05;
    cfg.momentum = 0.9;
    cfg.weight_decay = 4e-5;
    cfg.batch_size = 256;
    cfg.epochs = 200;
    return cfg;
}

// --- losses ----------------------------------------------------------------------

Tensor nll_from_probs(const Tensor& probs, const std::vector<int>& labels) {
    if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
        throw ShapeError("nll: probabilities " + shape_str(probs.shape()) + " for " + std::to_string(labels.size()) +
                         " labels");
    }
    const auto n = probs.dim(0), k = probs.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= k) throw DomainError("label out of range");
        total -= std::log(std::max(probs.data()[i * k + y], distill::kProbFloor));
    }
    return make_result({}, {total / static_cast<double>(n)}, "nll_prob", {probs},
                       [probs, labels, n, k](std::span<const double> g, const std::vector<bool>&,
                                             std::vector<std::vector<double>>& gi) {
                           for (std::size_t i = 0; i < n; ++i) {
                               const auto idx = i * k + static_cast<std::size_t>(labels[i]);
                               const double p = probs.data()[idx];
                               if (p > distill::kProbFloor) gi[0][idx] = -g[0] / (static_cast<double>(n) * p);
                           }
                       });
}

Tensor cost_factor(const nn::SuperNet& net, const std::vector<Tensor>& choice_weights) {
    return scale(nn::expected_macs(net, choice_weights), 1.0 / static_cast<double>(nn::max_macs(net)));
}

namespace {

struct Bracket {
    Tensor value;
    double ce = 0.0, kl = 0.0, attention = 0.0;
};

template <typename AttentionFn>
Bracket bracket(const Tensor& p, const std::vector<int>& labels, const Tensor* q, const LossTerms& terms,
                AttentionFn&& attention) {
    Bracket b;
    b.value = nll_from_probs(p, labels);
    b.ce = b.value.item();
    if (terms.kl) {
        if (q == nullptr) throw Error("KL term requested without teacher probabilities");
        const auto kl = distill::kl_term(p, *q);
        b.kl = kl.item();
        b.value = add(b.value, kl);
    }
    if (terms.attention) {
        const auto attn = attention();
        b.attention = attn.item();
        b.value = add(b.value, scale(attn, terms.gamma));
    }
    return b;
}

}  // namespace

LossBreakdown search_loss(const SearchLossInputs& in, const LossTerms& terms) {
    if (in.cost.numel() != 1) throw ShapeError("cost factor must be a scalar");
    auto b = bracket(in.student_probs, in.labels, in.teacher_probs, terms, [&] {
        if (!in.student_acts || !in.teacher_acts || !in.connection_weights) {
            throw Error("attention term requested without activations or connection weights");
        }
        return distill::attention_loss(*in.student_acts, *in.teacher_acts, *in.connection_weights);
    });
    return {mul(b.value, in.cost), b.ce, b.kl, b.attention, in.cost.item()};
}

LossBreakdown train_loss(const TrainLossInputs& in, const LossTerms& terms) {
    auto b = bracket(in.student_probs, in.labels, in.teacher_probs, terms, [&] {
        if (!in.student_acts || !in.teacher_acts || !in.tutors) {
            throw Error("attention term requested without activations or tutors");
        }
        return distill::attention_loss_tutors(*in.student_acts, *in.teacher_acts, *in.tutors);
    });
    return {b.value, b.ce, b.kl, b.attention, 1.0};
}

// --- search phase ----------------------------------------------------------------

void SearchConfig::validate() const {
    weights.validate();
    if (!(arch_lr >= 0.0)) throw ConfigError("architecture learning rate must be >= 0");
    if (!(tau0 > 0.0)) throw ConfigError("initial temperature must be positive");
    if (!(weight_fraction > 0.0 && weight_fraction < 1.0)) throw ConfigError("weight fraction must lie in (0, 1)");
    const auto [w, a] = split_batch(weights.batch_size, weight_fraction);
    if (w == 0 || a == 0) {
        throw ConfigError("search batch size " + std::to_string(weights.batch_size) +
                          " leaves an empty weight or architecture split");
    }
}

std::pair<std::size_t, std::size_t> split_batch(std::size_t batch, double weight_fraction) {
    const auto w = static_cast<std::size_t>(std::floor(static_cast<double>(batch) * weight_fraction + 1e-9));
    return {std::min(w, batch), batch - std::min(w, batch)};
}

std::string metrics_csv_header() { return "epoch,tau,lr,loss,ce,kl,attention,n_f,clean_acc"; }

std::string metrics_csv_row(const EpochMetrics& m) {
    char buf[320];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", m.epoch, m.tau, m.lr, m.loss,
                  m.cross_entropy, m.kl, m.attention, m.cost, m.clean_acc);
    return buf;
}

namespace {

std::vector<Tensor> arch_params_of(const nn::SuperNet& net, const distill::ConnectionMatrix& conn) {
    std::vector<Tensor> p;
    if (conn.logits.defined()) p.push_back(conn.logits);
    for (const auto& m : net.mask_parameters()) p.push_back(m);
    return p;
}

distill::ConnectionMatrix make_connections(const nn::SuperNet& net, const nn::Network& teacher,
                                           const LossTerms& terms) {
    if (!terms.attention) return {};
    if (teacher.num_layers() == 0) throw ConfigError("attention term needs a teacher network");
    return distill::ConnectionMatrix::zeros(net.num_layers(), teacher.num_layers());
}

std::size_t count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const auto pred = attack::predict(logits);
    std::size_t c = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) c += pred[i] == labels[i] ? 1 : 0;
    return c;
}

}  // namespace

SearchState::SearchState(nn::SuperNet net, nn::Network teacher_net, SearchConfig cfg, std::uint64_t run_seed)
    : supernet(std::move(net)),
      teacher(std::move(teacher_net)),
      connections(make_connections(supernet, teacher, cfg.terms)),
      sampler(mix_seed(run_seed, 0x6a), cfg.tau0, cfg.tau_decay),
      config(cfg),
      weight_optimizer(supernet.weight_parameters(), cfg.weights.momentum, cfg.weights.weight_decay),
      arch_optimizer(arch_params_of(supernet, connections), cfg.weights.momentum, 0.0),
      seed(run_seed) {
    config.validate();
    if (config.terms.needs_teacher() && teacher.num_layers() == 0) {
        throw ConfigError("distillation terms need a teacher network");
    }
    if (teacher.num_layers() > 0) teacher.freeze();
}

std::vector<Tensor> SearchState::arch_parameters() const { return arch_params_of(supernet, connections); }

EpochMetrics search_epoch(SearchState& state, const data::Dataset& train) {
    const auto& cfg = state.config;
    const auto& terms = cfg.terms;
    const double tau = state.sampler.temperature();
    const double lr = learning_rate(cfg.weights.schedule, cfg.weights.lr, state.epoch, cfg.weights.epochs,
                                    cfg.weights.warmup_epochs);
    const auto order = data::epoch_order(train.size(), state.seed, state.epoch);
    auto batches = data::make_batches(order, cfg.weights.batch_size, false);
    if (!batches.empty() && split_batch(batches.back().size(), cfg.weight_fraction).second == 0) batches.pop_back();
    if (!batches.empty() && split_batch(batches.back().size(), cfg.weight_fraction).first == 0) batches.pop_back();
    if (batches.empty()) throw ConfigError("training set too small for one search batch");

    const auto weight_params = state.weight_parameters();
    const auto arch_params = state.arch_parameters();

    EpochMetrics m;
    m.epoch = state.epoch;
    m.tau = tau;
    m.lr = lr;
    std::size_t seen = 0, correct = 0, steps = 0;

    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const auto& batch = batches[bi];
        std::vector<double> conn_noise;
        if (state.uses_connections()) conn_noise = state.sampler.noise(state.connections.logits.numel());
        std::vector<std::vector<double>> mask_noise;
        for (const auto& blk : state.supernet.blocks()) mask_noise.push_back(state.sampler.noise(blk.choices().size()));

        const auto [n_w, n_a] = split_batch(batch.size(), cfg.weight_fraction);
        const std::span<const std::size_t> all(batch);
        const std::span<const std::size_t> parts[2] = {all.subspan(0, n_w), all.subspan(n_w, n_a)};

        for (int part = 0; part < 2; ++part) {
            const auto idx = parts[part];
            auto x = train.images_at(idx);
            x = data::augment(x, cfg.weights.flip, cfg.weights.crop_pad,
                              mix_seed(mix_seed(state.seed, state.epoch), bi * 2 + static_cast<std::size_t>(part)));
            const auto y = train.labels_at(idx);

            std::vector<Tensor> choice_weights;
            for (std::size_t b = 0; b < state.supernet.num_layers(); ++b) {
                choice_weights.push_back(gumbel_softmax(state.supernet.blocks()[b].mask_logits(), tau, mask_noise[b]));
            }
            const auto cost = cost_factor(state.supernet, choice_weights);
            const auto out = state.supernet.forward(x, choice_weights, terms.attention);
            const auto p = softmax(out.logits, 1);

            nn::ForwardResult teacher_out;
            Tensor q;
            if (terms.needs_teacher()) {
                NoGradGuard no_grad;
                teacher_out = state.teacher.forward(x, terms.attention);
                q = softmax(teacher_out.logits, 1);
            }
            Tensor conn_weights;
            if (terms.attention) conn_weights = distill::connection_weights(state.connections, tau, conn_noise);

            const auto loss = search_loss({.student_probs = p,
                                           .labels = y,
                                           .teacher_probs = terms.kl ? &q : nullptr,
                                           .student_acts = &out.activations,
                                           .teacher_acts = &teacher_out.activations,
                                           .connection_weights = terms.attention ? &conn_weights : nullptr,
                                           .cost = cost},
                                          terms);
            if (part == 0) {
                auto grads = gradients(loss.total, weight_params);
                clip_global_norm(grads, cfg.weights.clip_norm);
                state.weight_optimizer.step(grads, lr);
                m.loss += loss.total.item();
                m.cross_entropy += loss.cross_entropy;
                m.kl += loss.kl;
                m.attention += loss.attention;
                m.cost += loss.cost;
                ++steps;
                seen += y.size();
                correct += count_correct(out.logits, y);
            } else {
                const auto grads = gradients(loss.total, arch_params);
                state.arch_optimizer.step(grads, cfg.arch_lr);
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(steps);
    m.loss *= inv;
    m.cross_entropy *= inv;
    m.kl *= inv;
    m.attention *= inv;
    m.cost *= inv;
    m.clean_acc = static_cast<double>(correct) / static_cast<double>(seen);
    state.sampler.anneal();
    ++state.epoch;
    return m;
}

// --- derivation ------------------------------------------------------------------

nlohmann::json ArchDescription::to_json() const {
    return {{"arch", nn::to_json(spec)}, {"choice_index", choice_index}, {"channels", channels},
            {"tutors", tutors},          {"teacher_layers", teacher_layers}, {"macs", macs},
            {"params", params}};
}

ArchDescription ArchDescription::from_json(const nlohmann::json& j) {
    ArchDescription a;
    try {
        a.spec = nn::arch_from_json(j.at("arch"));
        a.choice_index = j.at("choice_index").get<std::vector<std::size_t>>();
        a.channels = j.at("channels").get<std::vector<std::size_t>>();
        a.tutors = j.at("tutors").get<std::vector<std::size_t>>();
        a.teacher_layers = j.at("teacher_layers").get<std::size_t>();
        a.macs = j.at("macs").get<std::uint64_t>();
        a.params = j.at("params").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("architecture description: ") + e.what());
    }
    return a;
}

ArchDescription derive(const SearchState& state) {
    ArchDescription a;
    for (const auto& blk : state.supernet.blocks()) {
        const auto i = distill::argmax(blk.mask_logits().data());
        a.choice_index.push_back(i);
        a.channels.push_back(blk.choices()[i]);
    }
    a.spec = state.supernet.spec_for(a.choice_index);
    if (state.uses_connections()) {
        a.tutors = distill::derive_tutors(state.connections);
        a.teacher_layers = state.connections.teacher_layers();
    }
    a.macs = nn::count_macs(a.spec);
    a.params = nn::parameter_count(a.spec);
    return a;
}

void validate(const ArchDescription& arch, const nn::SuperNetConfig& space) {
    std::vector<std::vector<std::size_t>> per_block;
    for (const auto& stage : space.stages)
        for (std::size_t d = 0; d < stage.depth; ++d) per_block.push_back(stage.choices);
    if (arch.channels.size() != per_block.size() || arch.spec.blocks.size() != per_block.size()) {
        throw ConfigError("architecture has " + std::to_string(arch.channels.size()) + " blocks, search space has " +
                          std::to_string(per_block.size()));
    }
    for (std::size_t b = 0; b < per_block.size(); ++b) {
        const auto& choices = per_block[b];
        if (std::find(choices.begin(), choices.end(), arch.channels[b]) == choices.end()) {
            throw ConfigError("block " + std::to_string(b) + " width " + std::to_string(arch.channels[b]) +
                              " is not one of its choices");
        }
        if (arch.spec.blocks[b].out_channels != arch.channels[b]) throw ConfigError("spec width disagrees with channels");
    }
    if (!arch.tutors.empty() && arch.tutors.size() != per_block.size()) {
        throw ConfigError("one tutor per student layer required");
    }
    for (auto t : arch.tutors) {
        if (t >= arch.teacher_layers) throw ConfigError("tutor index " + std::to_string(t) + " out of range");
    }
    if (arch.macs != nn::count_macs(arch.spec)) throw ConfigError("recorded MAC count disagrees with architecture");
}

nn::Network instantiate(const ArchDescription& arch, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x7f));
    return nn::Network(arch.spec, rng);
}

// --- training phase --------------------------------------------------------------

Trainer::Trainer(nn::Network student, const nn::Network* teacher, std::vector<std::size_t> tutors, TrainConfig cfg,
                 LossTerms terms, std::uint64_t seed)
    : student_(std::move(student)),
      teacher_(teacher),
      tutors_(std::move(tutors)),
      cfg_(cfg),
      terms_(terms),
      optimizer_(student_.parameters(), cfg.momentum, cfg.weight_decay),
      seed_(seed) {
    cfg_.validate();
    if (terms_.needs_teacher() && (teacher_ == nullptr || teacher_->num_layers() == 0)) {
        throw ConfigError("distillation terms need a teacher network");
    }
    if (terms_.attention && tutors_.size() != student_.num_layers()) {
        throw ConfigError("one tutor per student layer required for the attention term");
    }
}

EpochMetrics Trainer::run_epoch(const data::Dataset& train) {
    const double lr = learning_rate(cfg_.schedule, cfg_.lr, epoch_, cfg_.epochs, cfg_.warmup_epochs);
    const auto batches = data::make_batches(data::epoch_order(train.size(), seed_, epoch_), cfg_.batch_size, false);
    const auto params = student_.parameters();
    EpochMetrics m;
    m.epoch = epoch_;
    m.lr = lr;
    m.cost = 1.0;
    std::size_t seen = 0, correct = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        auto x = train.images_at(batches[bi]);
        x = data::augment(x, cfg_.flip, cfg_.crop_pad, mix_seed(mix_seed(seed_, epoch_), bi));
        const auto y = train.labels_at(batches[bi]);
        const auto out = student_.forward(x, terms_.attention);
        const auto p = softmax(out.logits, 1);
        nn::ForwardResult teacher_out;
        Tensor q;
        if (terms_.needs_teacher()) {
            NoGradGuard no_grad;
            teacher_out = teacher_->forward(x, terms_.attention);
            q = softmax(teacher_out.logits, 1);
        }
        const auto loss = train_loss({.student_probs = p,
                                      .labels = y,
                                      .teacher_probs = terms_.kl ? &q : nullptr,
                                      .student_acts = &out.activations,
                                      .teacher_acts = &teacher_out.activations,
                                      .tutors = &tutors_},
                                     terms_);
        auto grads = gradients(loss.total, params);
        clip_global_norm(grads, cfg_.clip_norm);
        optimizer_.step(grads, lr);
        const double w = static_cast<double>(y.size());
        m.loss += loss.total.item() * w;
        m.cross_entropy += loss.cross_entropy * w;
        m.kl += loss.kl * w;
        m.attention += loss.attention * w;
        seen += y.size();
        correct += count_correct(out.logits, y);
    }
    const double inv = 1.0 / static_cast<double>(seen);
    m.loss *= inv;
    m.cross_entropy *= inv;
    m.kl *= inv;
    m.attention *= inv;
    m.clean_acc = static_cast<double>(correct) * inv;
    ++epoch_;
    return m;
}

namespace {

attack::AttackConfig ramped(attack::AttackConfig cfg, std::size_t epoch, std::size_t warmup) {
    if (epoch >= warmup) return cfg;
    const double f = static_cast<double>(epoch + 1) / static_cast<double>(warmup + 1);
    cfg.epsilon *= f;
    cfg.step_size *= f;
    return cfg;
}

}  // namespace

std::vector<double> train_classifier(nn::Network& net, const data::Dataset& train, const TrainConfig& cfg,
                                     const std::optional<attack::AttackConfig>& attack_cfg, std::uint64_t seed,
                                     const EpochCallback& on_epoch) {
    cfg.validate();
    const auto params = net.parameters();
    Sgd opt(params, cfg.momentum, cfg.weight_decay);
    const attack::Classifier model = [&net](const Tensor& x) { return net.logits(x); };
    std::vector<double> trace;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = learning_rate(cfg.schedule, cfg.lr, epoch, cfg.epochs, cfg.warmup_epochs);
        const auto batches = data::make_batches(data::epoch_order(train.size(), seed, epoch), cfg.batch_size, false);
        double total = 0.0;
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            auto x = train.images_at(batches[bi]);
            x = data::augment(x, cfg.flip, cfg.crop_pad, mix_seed(mix_seed(seed, epoch), bi));
            const auto y = train.labels_at(batches[bi]);
            if (attack_cfg) {
                Rng rng(mix_seed(mix_seed(seed ^ 0xa77ac4ULL, epoch), bi));
                x = attack::pgd(model, x, y, ramped(*attack_cfg, epoch, cfg.epsilon_warmup), rng);
            }
            const auto loss = cross_entropy(net.logits(x), y);
            auto grads = gradients(loss, params);
            clip_global_norm(grads, cfg.clip_norm);
            opt.step(grads, lr);
            total += loss.item() * static_cast<double>(y.size());
        }
        trace.push_back(total / static_cast<double>(train.size()));
        if (on_epoch) on_epoch(epoch, trace.back());
    }
    net.freeze();
    return trace;
}

nn::Network adversarial_train_teacher(nn::ArchSpec spec, const data::Dataset& train, const attack::AttackConfig& attack_cfg,
                                      const TrainConfig& cfg, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x7e));
    nn::Network net(std::move(spec), rng);
    train_classifier(net, train, cfg, attack_cfg, seed);
    return net;
}

}  // namespace rnascl::search
