#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace vitens {

/// K x K counts indexed (true, predicted).
struct ConfusionMatrix {
    std::size_t num_classes = 0;
    std::vector<std::size_t> counts;

    std::size_t at(std::size_t truth, std::size_t predicted) const { return counts[truth * num_classes + predicted]; }
    std::size_t total() const;
    std::size_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                                 std::size_t num_classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

/// Mean and spread of a per-class metric over all K classes.
struct MacroStat {
    double mean = 0.0;
    /// Sample standard deviation (divides by K - 1); the reported "±" value.
    double sd = 0.0;
    /// Population standard deviation (divides by K).
    double population_sd = 0.0;
};

MacroStat macro_stat(std::span<const double> values);

struct ClasswiseReport {
    std::vector<ClassMetrics> classes;
    MacroStat precision;
    MacroStat recall;
    MacroStat f1;
    double accuracy = 0.0;
    std::size_t total = 0;
};

/// Undefined ratios (0/0) count as 0 and stay in the macro average.
ClasswiseReport classwise_report(const ConfusionMatrix& cm);

double accuracy(std::span<const std::size_t> labels, std::span<const std::size_t> predictions);

/// Mann-Whitney AUC with ties counted half. Requires both classes present.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

struct AucResult {
    /// Empty for classes absent from `labels` or present in every row.
    std::vector<std::optional<double>> per_class;
    double macro = 0.0;
};

/// One-vs-rest AUC from row-major N x K probabilities.
AucResult roc_auc_ovr(std::span<const double> probabilities, std::size_t num_classes,
                      std::span<const std::size_t> labels);

/// Row-wise argmax of an N x K row-major matrix (first maximum wins).
std::vector<std::size_t> argmax_rows(std::span<const double> matrix, std::size_t num_classes);

/// key: value lines followed by a per-class table.
std::string format_report(const ClasswiseReport& report, const std::vector<std::string>& class_names,
                          const AucResult* auc = nullptr);
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

}  // namespace vitens
