#include "vitens/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vitens {

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
    std::size_t t = 0;
    for (std::size_t k = 0; k < num_classes; ++k) t += at(k, k);
    return t;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> labels, std::span<const std::size_t> predictions,
                                 std::size_t num_classes) {
    if (labels.size() != predictions.size()) {
        throw std::invalid_argument("confusion_matrix: " + std::to_string(labels.size()) + " labels vs " +
                                    std::to_string(predictions.size()) + " predictions");
    }
    ConfusionMatrix cm{num_classes, std::vector<std::size_t>(num_classes * num_classes, 0)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes || predictions[i] >= num_classes) {
            throw std::out_of_range("confusion_matrix: class id out of range at index " + std::to_string(i));
        }
        ++cm.counts[labels[i] * num_classes + predictions[i]];
    }
    return cm;
}

MacroStat macro_stat(std::span<const double> values) {
    MacroStat s;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.population_sd = std::sqrt(ss / n);
    s.sd = values.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    return s;
}

ClasswiseReport classwise_report(const ConfusionMatrix& cm) {
    const std::size_t k = cm.num_classes;
    ClasswiseReport r;
    r.classes.resize(k);
    std::vector<double> p(k), rc(k), f(k);
    for (std::size_t c = 0; c < k; ++c) {
        std::size_t predicted = 0, actual = 0;
        for (std::size_t j = 0; j < k; ++j) {
            predicted += cm.at(j, c);
            actual += cm.at(c, j);
        }
        const double tp = static_cast<double>(cm.at(c, c));
        auto& m = r.classes[c];
        m.support = actual;
        m.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
        m.recall = actual ? tp / static_cast<double>(actual) : 0.0;
        m.f1 = (m.precision + m.recall) > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        p[c] = m.precision;
        rc[c] = m.recall;
        f[c] = m.f1;
    }
    r.precision = macro_stat(p);
    r.recall = macro_stat(rc);
    r.f1 = macro_stat(f);
    r.total = cm.total();
    r.accuracy = r.total ? static_cast<double>(cm.trace()) / static_cast<double>(r.total) : 0.0;
    return r;
}

double accuracy(std::span<const std::size_t> labels, std::span<const std::size_t> predictions) {
    if (labels.size() != predictions.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (labels.empty()) throw std::invalid_argument("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == predictions[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size()) throw std::invalid_argument("binary_auc: length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Average ranks over tie groups, then the rank-sum statistic.
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (positive[order[t]]) {
                pos_rank_sum += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("binary_auc: need both positive and negative samples");
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

AucResult roc_auc_ovr(std::span<const double> probabilities, std::size_t num_classes,
                      std::span<const std::size_t> labels) {
    if (num_classes == 0 || probabilities.size() != labels.size() * num_classes) {
        throw std::invalid_argument("roc_auc_ovr: probability matrix does not match " + std::to_string(labels.size()) +
                                    " labels x " + std::to_string(num_classes) + " classes");
    }
    AucResult out;
    out.per_class.resize(num_classes);
    std::vector<double> scores(labels.size());
    auto pos_storage = std::make_unique<bool[]>(labels.size());
    double sum = 0.0;
    std::size_t defined = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        std::size_t n_pos = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] >= num_classes) throw std::out_of_range("roc_auc_ovr: label out of range at " + std::to_string(i));
            scores[i] = probabilities[i * num_classes + c];
            pos_storage[i] = labels[i] == c;
            n_pos += labels[i] == c;
        }
        if (n_pos == 0 || n_pos == labels.size()) continue;
        const std::span<const bool> pos(pos_storage.get(), labels.size());
        const double auc = binary_auc(scores, pos);
        out.per_class[c] = auc;
        sum += auc;
        ++defined;
    }
    if (defined == 0) throw std::invalid_argument("roc_auc_ovr: labels contain a single class; macro AUC undefined");
    out.macro = sum / static_cast<double>(defined);
    return out;
}

std::vector<std::size_t> argmax_rows(std::span<const double> matrix, std::size_t num_classes) {
    if (num_classes == 0 || matrix.size() % num_classes != 0) throw std::invalid_argument("argmax_rows: bad shape");
    std::vector<std::size_t> out(matrix.size() / num_classes);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double* row = matrix.data() + i * num_classes;
        out[i] = static_cast<std::size_t>(std::max_element(row, row + num_classes) - row);
    }
    return out;
}

std::string format_report(const ClasswiseReport& report, const std::vector<std::string>& class_names,
                          const AucResult* auc) {
    std::ostringstream out;
    char buf[256];
    auto stat = [&](const char* key, const MacroStat& s) {
        std::snprintf(buf, sizeof buf, "%s: %.4f +- %.4f (population sd %.4f)\n", key, s.mean, s.sd, s.population_sd);
        out << buf;
    };
    std::snprintf(buf, sizeof buf, "samples: %zu\naccuracy: %.6f\n", report.total, report.accuracy);
    out << buf;
    stat("macro_precision", report.precision);
    stat("macro_recall", report.recall);
    stat("macro_f1", report.f1);
    if (auc) {
        std::snprintf(buf, sizeof buf, "macro_auc: %.6f\n", auc->macro);
        out << buf;
    }
    out << "\nclass,precision,recall,f1,support" << (auc ? ",auc" : "") << "\n";
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
        const auto& m = report.classes[c];
        const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
        std::snprintf(buf, sizeof buf, "%s,%.4f,%.4f,%.4f,%zu", name.c_str(), m.precision, m.recall, m.f1, m.support);
        out << buf;
        if (auc) {
            if (auc->per_class[c]) {
                std::snprintf(buf, sizeof buf, ",%.4f", *auc->per_class[c]);
                out << buf;
            } else {
                out << ",-";
            }
        }
        out << "\n";
    }
    return out.str();
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    std::ostringstream out;
    auto name = [&](std::size_t c) { return c < class_names.size() ? class_names[c] : std::to_string(c); };
    out << "true\\predicted";
    for (std::size_t c = 0; c < cm.num_classes; ++c) out << ',' << name(c);
    out << '\n';
    for (std::size_t t = 0; t < cm.num_classes; ++t) {
        out << name(t);
        for (std::size_t p = 0; p < cm.num_classes; ++p) out << ',' << cm.at(t, p);
        out << '\n';
    }
    return out.str();
}

}  // namespace vitens
