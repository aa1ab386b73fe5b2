#include "vitens/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include "vitens/metrics.hpp"

namespace vitens {

std::vector<std::size_t> PredictionMatrix::predictions() const { return argmax_rows(values, num_classes()); }

void PredictionMatrix::validate(double tolerance) const {
    const std::size_t k = num_classes();
    if (k == 0) throw std::invalid_argument("prediction matrix " + tag + " has no classes");
    if (labels.size() != rows() || values.size() != rows() * k) {
        throw std::invalid_argument("prediction matrix " + tag + " has inconsistent sizes");
    }
    for (std::size_t i = 0; i < rows(); ++i) {
        if (labels[i] >= k) throw std::out_of_range("prediction matrix " + tag + ": label out of range at row " + std::to_string(i));
        double sum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double v = at(i, c);
            if (!std::isfinite(v) || v < -tolerance || v > 1.0 + tolerance) {
                throw std::invalid_argument("prediction matrix " + tag + ": entry out of [0,1] at row " + std::to_string(i));
            }
            sum += v;
        }
        if (std::abs(sum - 1.0) > tolerance) {
            throw std::invalid_argument("prediction matrix " + tag + ": row " + std::to_string(i) + " sums to " +
                                        std::to_string(sum));
        }
    }
}

void check_conformant(const std::vector<PredictionMatrix>& members) {
    if (members.empty()) throw std::invalid_argument("no prediction matrices given");
    const auto& ref = members.front();
    for (std::size_t m = 1; m < members.size(); ++m) {
        const auto& p = members[m];
        if (p.classes != ref.classes) {
            throw std::invalid_argument("matrix " + std::to_string(m) + " (" + p.tag + ") has a different class order");
        }
        if (p.rows() != ref.rows() || p.values.size() != ref.values.size()) {
            throw std::invalid_argument("matrix " + std::to_string(m) + " (" + p.tag + ") has " +
                                        std::to_string(p.rows()) + " rows, expected " + std::to_string(ref.rows()));
        }
        if (p.labels != ref.labels) {
            throw std::invalid_argument("matrix " + std::to_string(m) + " (" + p.tag + ") has different labels");
        }
    }
}

std::vector<double> sum_matrices(const std::vector<PredictionMatrix>& members) {
    check_conformant(members);
    std::vector<double> sum(members.front().values.size(), 0.0);
    for (const auto& p : members)
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += p.values[i];
    return sum;
}

PredictionMatrix average_ensemble(const std::vector<PredictionMatrix>& members) {
    if (members.size() < 2) throw std::invalid_argument("average ensemble needs at least two matrices");
    PredictionMatrix out = members.front();
    out.tag = "average";
    out.values = sum_matrices(members);
    const double m = static_cast<double>(members.size());
    for (double& v : out.values) v /= m;
    return out;
}

PredictionMatrix weighted_ensemble(const std::vector<PredictionMatrix>& members, std::vector<double> weights) {
    check_conformant(members);
    if (weights.size() != members.size()) {
        throw std::invalid_argument("got " + std::to_string(weights.size()) + " weights for " +
                                    std::to_string(members.size()) + " matrices");
    }
    double total = 0.0;
    for (double w : weights) {
        if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("ensemble weights must be finite and nonnegative");
        total += w;
    }
    if (total <= 0.0) throw std::invalid_argument("ensemble weights sum to zero");
    for (double& w : weights) w /= total;

    PredictionMatrix out = members.front();
    out.tag = "weighted";
    std::fill(out.values.begin(), out.values.end(), 0.0);
    for (std::size_t m = 0; m < members.size(); ++m)
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += weights[m] * members[m].values[i];
    return out;
}

double matrix_accuracy(const PredictionMatrix& matrix) { return accuracy(matrix.labels, matrix.predictions()); }

std::vector<double> accuracy_weights(const std::vector<PredictionMatrix>& validation) {
    check_conformant(validation);
    std::vector<double> w;
    for (const auto& p : validation) w.push_back(matrix_accuracy(p));
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    if (total <= 0.0) throw std::invalid_argument("every member has zero validation accuracy");
    for (double& v : w) v /= total;
    return w;
}

namespace {

std::vector<double> features_of(const std::vector<PredictionMatrix>& members, std::size_t row) {
    std::vector<double> f;
    for (const auto& p : members)
        for (std::size_t c = 0; c < p.num_classes(); ++c) f.push_back(p.at(row, c));
    return f;
}

void softmax_inplace(std::vector<double>& z) {
    const double mx = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double& v : z) s += (v = std::exp(v - mx));
    for (double& v : z) v /= s;
}

}  // namespace

void StackedEnsemble::fit(const std::vector<PredictionMatrix>& validation, const StackingConfig& config) {
    check_conformant(validation);
    const auto& ref = validation.front();
    const std::size_t n = ref.rows(), k = ref.num_classes(), d = validation.size() * k;
    if (n == 0) throw std::invalid_argument("stacked ensemble: empty validation set");
    if (std::set<std::size_t>(ref.labels.begin(), ref.labels.end()).size() < 2) {
        throw std::invalid_argument("stacked ensemble: validation labels contain a single class");
    }
    members_ = validation.size();
    classes_ = k;
    class_names_ = ref.classes;
    weights_.assign(d * k, 0.0);
    bias_.assign(k, 0.0);

    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = features_of(validation, i);

    std::vector<double> gw(d * k), gb(k), z(k);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::fill(gw.begin(), gw.end(), 0.0);
        std::fill(gb.begin(), gb.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < k; ++c) {
                double s = bias_[c];
                for (std::size_t j = 0; j < d; ++j) s += x[i][j] * weights_[j * k + c];
                z[c] = s;
            }
            softmax_inplace(z);
            z[ref.labels[i]] -= 1.0;
            for (std::size_t c = 0; c < k; ++c) {
                gb[c] += z[c] * inv_n;
                for (std::size_t j = 0; j < d; ++j) gw[j * k + c] += x[i][j] * z[c] * inv_n;
            }
        }
        for (std::size_t j = 0; j < weights_.size(); ++j) {
            weights_[j] -= config.learning_rate * (gw[j] + config.l2 * weights_[j]);
        }
        for (std::size_t c = 0; c < k; ++c) bias_[c] -= config.learning_rate * gb[c];
    }
}

PredictionMatrix StackedEnsemble::apply(const std::vector<PredictionMatrix>& members) const {
    if (!fitted()) throw std::logic_error("stacked ensemble used before fit");
    check_conformant(members);
    if (members.size() != members_ || members.front().classes != class_names_) {
        throw std::invalid_argument("stacked ensemble was fitted on " + std::to_string(members_) +
                                    " members with a different class list");
    }
    PredictionMatrix out = members.front();
    out.tag = "stacked";
    const std::size_t k = classes_, d = members_ * k;
    std::vector<double> z(k);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const auto f = features_of(members, i);
        for (std::size_t c = 0; c < k; ++c) {
            double s = bias_[c];
            for (std::size_t j = 0; j < d; ++j) s += f[j] * weights_[j * k + c];
            z[c] = s;
        }
        softmax_inplace(z);
        std::copy(z.begin(), z.end(), out.values.begin() + static_cast<std::ptrdiff_t>(i * k));
    }
    return out;
}

}  // namespace vitens
