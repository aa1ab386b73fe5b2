#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vitens {

/// N x K softmax outputs of one model over a fixed list of samples.
struct PredictionMatrix {
    std::string tag;
    std::vector<std::string> classes;
    std::vector<std::string> paths;
    std::vector<std::size_t> labels;
    /// Row-major, rows() * num_classes() values.
    std::vector<double> values;

    std::size_t rows() const { return paths.size(); }
    std::size_t num_classes() const { return classes.size(); }
    double at(std::size_t i, std::size_t k) const { return values[i * classes.size() + k]; }
    std::vector<std::size_t> predictions() const;

    /// Checks sizes, [0,1] entries and row sums within `tolerance`.
    void validate(double tolerance = 1e-4) const;
};

/// Same rows, classes (in order) and labels.
void check_conformant(const std::vector<PredictionMatrix>& members);

/// Elementwise mean of at least two conformant matrices.
PredictionMatrix average_ensemble(const std::vector<PredictionMatrix>& members);

/// Row-wise sum of member matrices (not normalized).
std::vector<double> sum_matrices(const std::vector<PredictionMatrix>& members);

/// sum_i w_i P_i with nonnegative weights, normalized to sum 1.
PredictionMatrix weighted_ensemble(const std::vector<PredictionMatrix>& members, std::vector<double> weights);

/// Member validation accuracies, normalized to sum 1.
std::vector<double> accuracy_weights(const std::vector<PredictionMatrix>& validation);

struct StackingConfig {
    double learning_rate = 0.5;
    std::size_t epochs = 2000;
    double l2 = 0.0;
};

/// Multinomial logistic regression over the concatenated member outputs.
class StackedEnsemble {
public:
    /// Full-batch gradient descent on validation predictions; labels are
    /// taken from the matrices.
    void fit(const std::vector<PredictionMatrix>& validation, const StackingConfig& config = {});
    PredictionMatrix apply(const std::vector<PredictionMatrix>& members) const;

    bool fitted() const { return !weights_.empty(); }
    std::size_t num_members() const { return members_; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<double>& bias() const { return bias_; }

private:
    std::size_t members_ = 0;
    std::size_t classes_ = 0;
    std::vector<std::string> class_names_;
    std::vector<double> weights_;  // (M*K) x K
    std::vector<double> bias_;     // K
};

/// Accuracy of the argmax predictions against the stored labels.
double matrix_accuracy(const PredictionMatrix& matrix);

}  // namespace vitens
