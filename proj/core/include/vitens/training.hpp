#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vitens/dataset.hpp"
#include "vitens/model.hpp"

namespace vitens {

/// Mean of -log softmax(logits)[label] over the batch, via log-sum-exp.
Tensor sparse_categorical_crossentropy(const Tensor& logits, std::span<const std::size_t> labels);

struct AdamWConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamWState {
    std::unordered_map<std::string, std::vector<double>> m;
    std::unordered_map<std::string, std::vector<double>> v;
    std::size_t step = 0;
};

using GradientTable = std::unordered_map<std::string, std::vector<double>>;

/// One decoupled-decay step over every trainable parameter named in
/// `grads`. Frozen parameters are never touched.
void adamw_step(ParamStore& params, const GradientTable& grads, AdamWState& state, const AdamWConfig& config);

struct PlateauConfig {
    double factor = 0.2;
    std::size_t patience = 5;
    double min_delta = 1e-4;
    double min_lr = 1e-6;

    void validate() const;
};

struct PlateauState {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t wait = 0;
    double lr = 1e-3;
};

/// Mode max. Returns true when the learning rate was reduced.
bool plateau_update(PlateauState& state, const PlateauConfig& config, double metric);

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-4;
    std::size_t batch_size = 64;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    PlateauConfig plateau;
    /// When set, the best weights are written to `<checkpoint>.best`.
    std::filesystem::path checkpoint;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    Model model;
    std::vector<EpochRecord> history;
    double best_val_accuracy = -1.0;
    /// 1-based; 0 when no epoch ran.
    std::size_t best_epoch = 0;
};

/// Raised when the loss turns non-finite; names epoch and batch.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Seeded shuffled mini-batches (last partial batch kept); after every epoch
/// validation accuracy drives the plateau schedule and checkpointing.
TrainResult train(Model model, const ImageSet& train_set, const ImageSet& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Eval-mode probabilities, row-major N x K.
std::vector<double> predict_probabilities(const Model& model, const ImageSet& set, std::size_t batch_size = 64);

/// Eval-mode accuracy over a set.
double evaluate_accuracy(const Model& model, const ImageSet& set, std::size_t batch_size = 64);

/// PredictionMatrix over `set` tagged with the model name.
PredictionMatrix predict_matrix(const Model& model, const ImageSet& set, std::size_t batch_size = 64);

/// epoch,train_loss,train_acc,val_acc,lr
std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace vitens
