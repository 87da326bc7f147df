#include "latt/train.hpp"

#include <cmath>
#include <numbers>

#include "latt/ops.hpp"
#include "latt/rng.hpp"

namespace latt {

const char* optimizer_name(OptimizerKind o) { return o == OptimizerKind::Sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_name(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("unknown optimizer: " + name);
}

void TrainLog::write_csv(std::ostream& out) const {
    out << "step,loss,acc\n";
    for (const auto& e : entries) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.8f,%.6f", e.step, e.loss, e.acc);
        out << buf << "\n";
    }
}

namespace {

struct Moments {
    Tensor m, v;  // Adam first/second moments, or SGD velocity in m
};

double batch_accuracy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t B = logits.dim(0), N = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t b = 0; b < B; ++b) {
        std::size_t best = 0;
        double best_v = logits.item(b * N);
        for (std::size_t n = 1; n < N; ++n) {
            const double v = logits.item(b * N + n);
            if (v > best_v) {
                best_v = v;
                best = n;
            }
        }
        if (static_cast<int>(best) == labels[b]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(B);
}

void apply_update(Tensor& param, const Tensor& grad, Moments& mom, const TrainOptions& opts,
                  double lr, int step) {
    dispatch_dtype(param.dtype(), [&](auto tag) {
        using T = decltype(tag);
        auto p = param.data<T>();
        auto g = grad.data<T>();
        if (opts.optimizer == OptimizerKind::Sgd) {
            auto vel = mom.m.data<T>();
            for (std::size_t i = 0; i < p.size(); ++i) {
                vel[i] = static_cast<T>(opts.momentum * static_cast<double>(vel[i]) +
                                        static_cast<double>(g[i]));
                p[i] -= static_cast<T>(lr * static_cast<double>(vel[i]));
            }
        } else {
            auto m = mom.m.data<T>();
            auto v = mom.v.data<T>();
            const double bc1 = 1.0 - std::pow(opts.beta1, step + 1);
            const double bc2 = 1.0 - std::pow(opts.beta2, step + 1);
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                const double mi = opts.beta1 * static_cast<double>(m[i]) + (1.0 - opts.beta1) * gi;
                const double vi = opts.beta2 * static_cast<double>(v[i]) + (1.0 - opts.beta2) * gi * gi;
                m[i] = static_cast<T>(mi);
                v[i] = static_cast<T>(vi);
                p[i] -= static_cast<T>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + opts.adam_eps));
            }
        }
    });
}

}  // namespace

TrainLog train(Model& model, const SyntheticDataset& data, const TrainOptions& opts) {
    if (opts.steps < 1) throw std::invalid_argument("train: steps must be >= 1");
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    TrainLog log;
    Rng batch_rng = Rng(opts.seed).stream("train/batches");
    std::map<std::string, Moments> moments;
    for (const auto& name : model.param_names()) {
        const Tensor& p = model.param(name);
        Moments mo;
        mo.m = Tensor::zeros(p.dims(), p.dtype());
        if (opts.optimizer == OptimizerKind::Adam) mo.v = Tensor::zeros(p.dims(), p.dtype());
        moments.emplace(name, std::move(mo));
    }

    std::vector<std::size_t> indices(static_cast<std::size_t>(opts.batch_size));
    for (int step = 0; step < opts.steps; ++step) {
        for (auto& i : indices) i = batch_rng.uniform_index(data.size());
        Tensor images = data.gather(indices, model.dtype());
        std::vector<int> labels = data.gather_labels(indices);

        double loss_value = 0.0, acc = 0.0;
        std::map<std::string, Tensor> grads;
        try {
            Tape tape;
            Var in = tape.constant(images);
            Var logits = model.forward_graph(tape, in, true);
            Var loss = ag::cross_entropy(logits, labels);
            loss_value = tape.value(loss).item(0);
            acc = batch_accuracy(tape.value(logits), labels);
            if (!std::isfinite(loss_value)) {
                log.diverged = true;
                log.diverged_step = step;
                log.divergence_reason = "non-finite loss";
                break;
            }
            grads = tape.backward(loss, Tensor::ones({1}, model.dtype()));
        } catch (const std::exception& e) {
            log.diverged = true;
            log.diverged_step = step;
            log.divergence_reason = e.what();
            break;
        }

        const double lr = opts.cosine_decay
                              ? opts.lr * 0.5 *
                                    (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                                                    static_cast<double>(opts.steps)))
                              : opts.lr;
        for (const auto& name : model.param_names())
            apply_update(model.param(name), grads.at(name), moments.at(name), opts, lr, step);

        if (step % opts.log_every == 0 || step == opts.steps - 1)
            log.entries.push_back({step, loss_value, acc});
    }

    if (!log.diverged) log.final_train_accuracy = evaluate_accuracy(model, data);
    return log;
}

double evaluate_accuracy(const Model& model, const SyntheticDataset& data, int batch_size) {
    std::size_t correct = 0;
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch_size)) {
        indices.clear();
        for (std::size_t i = start; i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            indices.push_back(i);
        Tensor logits = model.forward(data.gather(indices, model.dtype()));
        const auto labels = data.gather_labels(indices);
        const std::size_t B = logits.dim(0), N = logits.dim(1);
        for (std::size_t b = 0; b < B; ++b) {
            std::size_t best = 0;
            double best_v = logits.item(b * N);
            for (std::size_t n = 1; n < N; ++n) {
                const double v = logits.item(b * N + n);
                if (v > best_v) {
                    best_v = v;
                    best = n;
                }
            }
            if (static_cast<int>(best) == labels[b]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace latt
