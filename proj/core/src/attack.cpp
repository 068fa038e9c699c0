#include "rnascl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rnascl/data.hpp"
#include "rnascl/error.hpp"
#include "rnascl/ops.hpp"

namespace rnascl::attack {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Projects candidate onto [x-ε, x+ε] ∩ [0,1] and rounds to the active
// precision without leaving that interval.
double project(double candidate, double origin, double epsilon) {
    const double lo = std::max(0.0, origin - epsilon);
    const double hi = std::min(1.0, origin + epsilon);
    double v = round_to_precision(std::clamp(candidate, lo, hi));
    if (precision() == Precision::Float32) {
        while (v > hi) v = std::nextafter(static_cast<float>(v), -1.0f);
        while (v < lo) v = std::nextafter(static_cast<float>(v), 2.0f);
    }
    return v;
}

}  // namespace

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("attack epsilon must lie in [0, 1]");
    if (steps < 1) throw ConfigError("attack steps must be >= 1");
    if (!(step_size >= 0.0) || (epsilon > 0.0 && step_size == 0.0)) {
        throw ConfigError("attack step size must be positive");
    }
    if (!(momentum >= 0.0)) throw ConfigError("attack momentum must be >= 0");
}

std::optional<std::string> AttackConfig::reachability_warning() const {
    if (steps > 1 && static_cast<double>(steps) * step_size < epsilon) {
        std::ostringstream os;
        os << steps << " steps of " << step_size << " cannot reach epsilon " << epsilon;
        return os.str();
    }
    return std::nullopt;
}

AttackConfig pgd_config(double epsilon, std::size_t steps) {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.steps = steps;
    cfg.step_size = epsilon > 0.0 ? epsilon / 4.0 : 1.0 / 255.0;
    cfg.random_start = true;
    return cfg;
}

std::string AttackSpec::name() const {
    switch (kind) {
        case AttackKind::Fgsm: return "fgsm";
        case AttackKind::Pgd: return "pgd";
        case AttackKind::MiFgsm: return "mifgsm";
    }
    return "unknown";
}

void accumulate_momentum(std::vector<double>& velocity, std::span<const double> grad, double mu, std::size_t batch) {
    if (velocity.size() != grad.size() || batch == 0 || grad.size() % batch != 0) {
        throw ShapeError("momentum buffer does not match gradient");
    }
    const auto per = grad.size() / batch;
    for (std::size_t n = 0; n < batch; ++n) {
        double l1 = 0.0;
        for (std::size_t i = 0; i < per; ++i) l1 += std::abs(grad[n * per + i]);
        for (std::size_t i = 0; i < per; ++i) {
            const double normalized = l1 == 0.0 ? 0.0 : grad[n * per + i] / l1;
            velocity[n * per + i] = mu * velocity[n * per + i] + normalized;
        }
    }
}

std::vector<double> input_gradient(const Classifier& model, const Tensor& x, const std::vector<int>& labels) {
    auto input = x.detach();
    input.set_requires_grad(true);
    const auto logits = model(input);
    const auto loss = scale(cross_entropy(logits, labels), static_cast<double>(x.dim(0)));
    const std::vector<Tensor> wrt{input};
    return std::move(gradients(loss, wrt).front());
}

Tensor fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels, double epsilon) {
    if (epsilon == 0.0) return x.detach();
    const auto g = input_gradient(model, x, labels);
    std::vector<double> out(x.numel());
    const auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = project(xd[i] + epsilon * sign(g[i]), xd[i], epsilon);
    return Tensor::from(x.shape(), std::move(out));
}

Tensor pgd(const Classifier& model, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg, Rng& rng,
           const IterateObserver& observer) {
    cfg.validate();
    const auto xd = x.data();
    std::vector<double> cur(xd.begin(), xd.end());
    if (cfg.random_start) {
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] = project(xd[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), xd[i], cfg.epsilon);
        }
    }
    Tensor iterate = Tensor::from(x.shape(), cur);
    if (cfg.epsilon == 0.0) return iterate;
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const auto g = input_gradient(model, iterate, labels);
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] = project(cur[i] + cfg.step_size * sign(g[i]), xd[i], cfg.epsilon);
        }
        iterate = Tensor::from(x.shape(), cur);
        if (observer) observer(k, iterate);
    }
    return iterate;
}

Tensor mi_fgsm(const Classifier& model, const Tensor& x, const std::vector<int>& labels, const AttackConfig& cfg,
               const IterateObserver& observer) {
    cfg.validate();
    if (cfg.epsilon == 0.0) return x.detach();
    const auto xd = x.data();
    std::vector<double> cur(xd.begin(), xd.end());
    std::vector<double> velocity(cur.size(), 0.0);
    Tensor iterate = x.detach();
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        accumulate_momentum(velocity, input_gradient(model, iterate, labels), cfg.momentum, x.dim(0));
        for (std::size_t i = 0; i < cur.size(); ++i) {
            cur[i] = project(cur[i] + cfg.step_size * sign(velocity[i]), xd[i], cfg.epsilon);
        }
        iterate = Tensor::from(x.shape(), cur);
        if (observer) observer(k, iterate);
    }
    return iterate;
}

Tensor run_attack(const AttackSpec& spec, const Classifier& model, const Tensor& x, const std::vector<int>& labels,
                  Rng& rng) {
    switch (spec.kind) {
        case AttackKind::Fgsm: return fgsm(model, x, labels, spec.config.epsilon);
        case AttackKind::Pgd: return pgd(model, x, labels, spec.config, rng);
        case AttackKind::MiFgsm: return mi_fgsm(model, x, labels, spec.config);
    }
    throw Error("unknown attack kind");
}

std::vector<int> predict(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("predict expects N×K logits, got " + shape_str(logits.shape()));
    const auto n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits.data()[i * k + j] > logits.data()[i * k + best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

std::vector<EvalRow> evaluate(const Classifier& model, const data::Dataset& dataset,
                              const std::vector<AttackSpec>& attacks, const std::string& model_id, std::uint64_t seed,
                              std::size_t batch_size) {
    if (dataset.size() == 0) throw DomainError("cannot evaluate on an empty dataset");
    if (batch_size == 0) throw ConfigError("evaluation batch size must be >= 1");
    const auto n = dataset.size();

    auto accuracy_of = [&](const std::function<Tensor(const Tensor&, const std::vector<int>&, std::size_t)>& perturb) {
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < n; start += batch_size, ++batch_index) {
            std::vector<std::size_t> idx;
            for (std::size_t i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
            const auto x = dataset.images_at(idx);
            const auto y = dataset.labels_at(idx);
            const auto x_eval = perturb(x, y, batch_index);
            NoGradGuard no_grad;
            const auto pred = predict(model(x_eval));
            for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i] ? 1 : 0;
        }
        return static_cast<double>(correct) / static_cast<double>(n);
    };

    std::vector<EvalRow> rows;
    rows.push_back({model_id, "clean", 0.0, 0,
                    accuracy_of([](const Tensor& x, const std::vector<int>&, std::size_t) { return x; }), n});
    for (std::size_t a = 0; a < attacks.size(); ++a) {
        const auto& spec = attacks[a];
        spec.config.validate();
        const double acc = accuracy_of([&](const Tensor& x, const std::vector<int>& y, std::size_t batch) {
            Rng rng(mix_seed(mix_seed(seed, a), batch));
            return run_attack(spec, model, x, y, rng);
        });
        const std::size_t steps = spec.kind == AttackKind::Fgsm ? 1 : spec.config.steps;
        rows.push_back({model_id, spec.name(), spec.config.epsilon, steps, acc, n});
    }
    return rows;
}

void write_eval_csv(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << "model_id,attack,epsilon,steps,accuracy,n_samples\n";
    out << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.model_id << ',' << r.attack << ',' << r.epsilon << ',' << r.steps << ',' << r.accuracy << ','
            << r.n_samples << '\n';
    }
}

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingArtifactError("evaluation CSV not found: " + path.string());
    std::string line;
    std::getline(in, line);
    std::vector<EvalRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EvalRow r;
        std::string field;
        std::getline(ls, r.model_id, ',');
        std::getline(ls, r.attack, ',');
        std::getline(ls, field, ',');
        r.epsilon = std::stod(field);
        std::getline(ls, field, ',');
        r.steps = std::stoul(field);
        std::getline(ls, field, ',');
        r.accuracy = std::stod(field);
        std::getline(ls, field, ',');
        r.n_samples = std::stoul(field);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace rnascl::attack
