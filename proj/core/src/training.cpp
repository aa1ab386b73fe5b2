#include "vitens/training.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "vitens/metrics.hpp"
#include "vitens/ops.hpp"
#include "vitens/rng.hpp"

namespace vitens {

Tensor sparse_categorical_crossentropy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (logits.dim() != 2) throw ShapeError("loss expects (B,K) logits, got " + shape_str(logits.shape()));
    const std::size_t b = logits.shape()[0], k = logits.shape()[1];
    if (labels.size() != b) {
        throw ShapeError("loss got " + std::to_string(labels.size()) + " labels for " + shape_str(logits.shape()));
    }
    Tensor onehot({b, k}, 0.0);
    auto oh = onehot.mutable_data();
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] >= k) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                    " is outside [0," + std::to_string(k) + ")");
        }
        oh[i * k + labels[i]] = 1.0;
    }
    Tensor picked = ops::sum_all(ops::mul(ops::log_softmax(logits), onehot));
    return ops::scale(picked, -1.0 / static_cast<double>(b));
}

void adamw_step(ParamStore& params, const GradientTable& grads, AdamWState& state, const AdamWConfig& config) {
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(config.beta1, t);
    const double c2 = 1.0 - std::pow(config.beta2, t);
    for (const auto& entry : params.entries()) {
        if (entry.frozen) continue;
        auto it = grads.find(entry.name);
        if (it == grads.end()) continue;
        const auto& g = it->second;
        if (g.size() != entry.value.numel()) {
            throw ShapeError("gradient for " + entry.name + " has " + std::to_string(g.size()) + " values, expected " +
                             std::to_string(entry.value.numel()));
        }
        for (double v : g) {
            if (!std::isfinite(v)) throw NumericError("non-finite gradient for parameter " + entry.name);
        }
    }
    for (const auto& entry : params.entries()) {
        if (entry.frozen) continue;
        auto it = grads.find(entry.name);
        if (it == grads.end()) continue;
        const auto& g = it->second;
        auto& m = state.m[entry.name];
        auto& v = state.v[entry.name];
        if (m.empty()) {
            m.assign(g.size(), 0.0);
            v.assign(g.size(), 0.0);
        }
        Tensor value = entry.value;
        auto theta = value.mutable_data();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
            v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            theta[i] -= config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.eps)) +
                        config.learning_rate * config.weight_decay * theta[i];
        }
        params.set(entry.name, value);
    }
}

void PlateauConfig::validate() const {
    if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("plateau factor must be in (0,1)");
    if (patience < 1) throw std::invalid_argument("plateau patience must be >= 1");
    if (min_delta < 0.0) throw std::invalid_argument("plateau min_delta must be >= 0");
}

bool plateau_update(PlateauState& state, const PlateauConfig& config, double metric) {
    if (!std::isfinite(metric)) throw std::invalid_argument("plateau metric must be finite");
    if (metric > state.best + config.min_delta) {
        state.best = metric;
        state.wait = 0;
        return false;
    }
    if (++state.wait < config.patience) return false;
    state.wait = 0;
    const double reduced = std::max(state.lr * config.factor, config.min_lr);
    const bool changed = reduced < state.lr;
    state.lr = std::min(state.lr, reduced);
    return changed;
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be nonnegative");
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    plateau.validate();
}

std::vector<double> predict_probabilities(const Model& model, const ImageSet& set, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    std::vector<double> out;
    out.reserve(set.size() * model.spec().num_classes);
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        std::vector<std::size_t> rows;
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) rows.push_back(i);
        const auto result = model.forward(set.batch(rows));
        const auto p = result.probabilities.data();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

double evaluate_accuracy(const Model& model, const ImageSet& set, std::size_t batch_size) {
    const auto probs = predict_probabilities(model, set, batch_size);
    return accuracy(set.labels, argmax_rows(probs, model.spec().num_classes));
}

PredictionMatrix predict_matrix(const Model& model, const ImageSet& set, std::size_t batch_size) {
    if (set.classes.size() != model.spec().num_classes) {
        throw std::invalid_argument("model has " + std::to_string(model.spec().num_classes) + " classes, data has " +
                                    std::to_string(set.classes.size()));
    }
    PredictionMatrix m;
    m.tag = model.spec().name;
    m.classes = set.classes;
    m.paths = set.paths;
    m.labels = set.labels;
    m.values = predict_probabilities(model, set, batch_size);
    return m;
}

TrainResult train(Model model, const ImageSet& train_set, const ImageSet& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
    config.validate();
    if (train_set.size() == 0) throw std::invalid_argument("training split is empty");
    if (val_set.size() == 0) throw std::invalid_argument("validation split is empty");
    const std::size_t k = model.spec().num_classes;
    for (const auto* set : {&train_set, &val_set}) {
        for (std::size_t i = 0; i < set->size(); ++i) {
            if (set->labels[i] >= k) {
                throw std::out_of_range("label " + std::to_string(set->labels[i]) + " of " + set->paths[i] +
                                        " is outside the model's " + std::to_string(k) + " classes");
            }
        }
    }

    Rng rng(config.seed);
    PlateauState plateau;
    plateau.lr = config.learning_rate;
    AdamWState adam;
    ParamStore best = model.params();
    TrainResult result{model, {}, -1.0, 0};

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto order = rng.permutation(train_set.size());
        const AdamWConfig opt{plateau.lr, config.weight_decay};
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(
                                                                    std::min(order.size(), start + config.batch_size)));
            std::vector<std::size_t> labels;
            for (std::size_t r : rows) labels.push_back(train_set.labels[r]);

            GradientTable grads;
            nn::ForwardContext ctx;
            ctx.training = true;
            double batch_loss = 0.0;
            try {
                Tape tape;
                const ParamMap bound = model.params().bind(tape);
                const auto out = model.forward(train_set.batch(rows), bound, ctx);
                const Tensor loss = sparse_categorical_crossentropy(out.logits, labels);
                batch_loss = loss.item();
                if (!std::isfinite(batch_loss)) throw NumericError("loss is not finite");
                const auto preds = argmax_rows(out.logits.data(), k);
                for (std::size_t i = 0; i < rows.size(); ++i) correct += preds[i] == labels[i];
                const GradientMap g = backward(loss);
                for (const auto& e : model.params().entries()) {
                    if (!e.frozen) grads.emplace(e.name, g.of(bound.at(e.name)));
                }
            } catch (const NumericError& err) {
                throw TrainingError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                    std::to_string(batch_index) + ": " + err.what());
            }
            adamw_step(model.params(), grads, adam, opt);
            model.apply_stat_updates(ctx.stat_updates);
            loss_sum += batch_loss * static_cast<double>(rows.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_set.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
        rec.val_accuracy = evaluate_accuracy(model, val_set, config.batch_size);
        rec.learning_rate = opt.learning_rate;
        result.history.push_back(rec);

        if (rec.val_accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = rec.val_accuracy;
            result.best_epoch = epoch;
            best = model.params();
            if (!config.checkpoint.empty()) {
                save_weights(best, std::filesystem::path(config.checkpoint.string() + ".best"));
            }
        }
        plateau_update(plateau, config.plateau, rec.val_accuracy);
        if (on_epoch) on_epoch(rec);
    }
    result.model = Model(model.spec(), best);
    return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << "epoch,train_loss,train_acc,val_acc,lr\n";
    char buf[160];
    for (const auto& r : history) {
        std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.train_loss, r.train_accuracy,
                      r.val_accuracy, r.learning_rate);
        out << buf;
    }
    return out.str();
}

}  // namespace vitens
