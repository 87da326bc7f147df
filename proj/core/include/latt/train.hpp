#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "latt/dataset.hpp"
#include "latt/model.hpp"

namespace latt {

enum class OptimizerKind { Sgd, Adam };

const char* optimizer_name(OptimizerKind o);
OptimizerKind optimizer_from_name(const std::string& name);

struct TrainOptions {
    int steps = 2000;
    int batch_size = 64;
    double lr = 1e-3;
    bool cosine_decay = true;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;  // SGD
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::uint64_t seed = 0;  // batch-sampling stream
    int log_every = 25;
};

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
    double acc = 0.0;  // batch accuracy
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    bool diverged = false;
    int diverged_step = -1;
    std::string divergence_reason;
    double final_train_accuracy = 0.0;  // full-set accuracy after the run

    /// CSV: step,loss,acc. LF endings.
    void write_csv(std::ostream& out) const;
};

/// Trains in place. A non-finite loss aborts the run with the offending step
/// recorded in the log rather than thrown.
TrainLog train(Model& model, const SyntheticDataset& data, const TrainOptions& opts);

/// Full-set classification accuracy, evaluated in mini-batches.
double evaluate_accuracy(const Model& model, const SyntheticDataset& data, int batch_size = 128);

}  // namespace latt
