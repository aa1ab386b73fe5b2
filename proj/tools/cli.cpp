#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "vitens/config.hpp"
#include "vitens/dataset.hpp"
#include "vitens/ensemble.hpp"
#include "vitens/image.hpp"
#include "vitens/metrics.hpp"
#include "vitens/model.hpp"
#include "vitens/ops.hpp"
#include "vitens/scaling.hpp"
#include "vitens/training.hpp"
#include "vitens/xai.hpp"

namespace vitens::cli {

namespace fs = std::filesystem;

namespace {

/// Raised for bad flag combinations found after parsing; maps to exit 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string join(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << text;
    if (!f) throw std::runtime_error("failed writing " + path.string());
}

struct Common {
    std::optional<std::uint64_t> seed;
    std::string config;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
}

// Config file first, then explicit flags on top.
Config settings(const Common& c) {
    Config cfg = c.config.empty() ? Config{} : Config::load(c.config);
    cfg.check_keys(known_config_keys());
    if (c.seed) cfg.set("seed", std::to_string(*c.seed));
    return cfg;
}

template <class T>
void override_key(Config& cfg, const std::string& key, const std::optional<T>& value) {
    if (!value) return;
    if constexpr (std::is_floating_point_v<T>) {
        cfg.set(key, num(*value));
    } else if constexpr (std::is_same_v<T, std::string>) {
        cfg.set(key, *value);
    } else {
        cfg.set(key, std::to_string(*value));
    }
}

fs::path meta_path(const fs::path& weights) { return fs::path(weights.string() + ".meta"); }

struct ModelMeta {
    std::string model;
    std::size_t image_size = 0;
    std::vector<std::string> classes;
    std::uint64_t split_seed = 0;
    std::vector<std::string> exclude;
};

void write_meta(const fs::path& weights, const ModelMeta& m) {
    std::ostringstream out;
    out << "model = " << m.model << "\nimage_size = " << m.image_size << "\nclasses = " << join(m.classes)
        << "\nsplit_seed = " << m.split_seed << "\nexclude_classes = " << join(m.exclude) << "\n";
    write_text(meta_path(weights), out.str());
}

ModelMeta read_meta(const fs::path& weights) {
    const fs::path p = meta_path(weights);
    if (!fs::exists(p)) throw std::runtime_error("missing " + p.string() + " (written next to weights by train)");
    const Config c = Config::load(p);
    ModelMeta m;
    m.model = c.get_string("model", "");
    m.image_size = c.get_size("image_size", 0);
    m.classes = c.get_list("classes");
    m.split_seed = c.get_u64("split_seed", 0);
    m.exclude = c.get_list("exclude_classes");
    if (m.model.empty() || m.image_size == 0 || m.classes.size() < 2) throw std::runtime_error(p.string() + " is incomplete");
    return m;
}

// Native size of the first image, used when no image size is configured.
std::size_t native_size(const DatasetIndex& index) {
    const auto img = read_image(index.files.front().front());
    return img.pixels.shape()[0];
}

DatasetIndex pick_split(const SplitResult& split, const std::string& name) {
    if (name == "train") return split.train;
    if (name == "val") return split.val;
    if (name == "test") return split.test;
    throw UsageError("unknown split '" + name + "' (train, val or test)");
}

// ---- synth ---------------------------------------------------------------

struct SynthArgs {
    Common common;
    std::string out;
    std::size_t classes = 4;
    std::size_t per_class = 64;
    std::size_t image_size = 32;
    double noise = 0.08;
    bool force = false;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    const Config cfg = settings(a.common);
    SyntheticSpec spec;
    spec.classes = a.classes;
    spec.per_class = a.per_class;
    spec.image_size = a.image_size;
    spec.noise = a.noise;
    spec.seed = cfg.get_u64("seed", 0);
    synthesize_dataset(spec, a.out, a.force);
    out << "wrote " << spec.classes * spec.per_class << " images in " << spec.classes << " classes to " << a.out << "\n";
    return kOk;
}

// ---- split-audit ---------------------------------------------------------

struct SplitArgs {
    Common common;
    std::string data;
    std::string out;
    std::vector<std::string> exclude;
};

int cmd_split_audit(const SplitArgs& a, std::ostream& out, std::ostream& err) {
    Config cfg = settings(a.common);
    if (!a.exclude.empty()) cfg.set("exclude_classes", join(a.exclude));
    SplitSpec spec;
    spec.seed = cfg.get_u64("seed", 0);
    const auto split = index_and_split(a.data, spec, cfg.get_list("exclude_classes"));
    if (split.skipped) err << "warning: skipped " << split.skipped << " unreadable or non-image files\n";
    const std::string csv = audit_csv(split.audit);
    if (a.out.empty()) {
        out << csv;
    } else {
        write_text(a.out, csv);
        out << "wrote " << a.out << "\n";
    }
    return kOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
    Common common;
    std::string data;
    std::string out;
    std::string history;
    std::optional<std::string> model;
    std::optional<std::size_t> image_size;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<double> weight_decay;
    std::optional<std::size_t> patience;
    std::optional<double> factor;
    std::optional<double> min_delta;
    std::vector<std::string> exclude;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    Config cfg = settings(a.common);
    override_key(cfg, "model", a.model);
    override_key(cfg, "image_size", a.image_size);
    override_key(cfg, "epochs", a.epochs);
    override_key(cfg, "batch_size", a.batch_size);
    override_key(cfg, "lr", a.lr);
    override_key(cfg, "weight_decay", a.weight_decay);
    override_key(cfg, "patience", a.patience);
    override_key(cfg, "factor", a.factor);
    override_key(cfg, "min_delta", a.min_delta);
    if (!a.exclude.empty()) cfg.set("exclude_classes", join(a.exclude));

    const std::string model_name = cfg.get_string("model", "xs_toy");
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    SplitSpec split_spec;
    split_spec.seed = seed;
    const auto exclude = cfg.get_list("exclude_classes");
    const auto split = index_and_split(a.data, split_spec, exclude);
    if (split.skipped) err << "warning: skipped " << split.skipped << " unreadable or non-image files\n";
    for (const auto& c : split.train.classes) {
        if (c.find(',') != std::string::npos) throw std::runtime_error("class name contains a comma: " + c);
    }
    std::size_t size = cfg.get_size("image_size", 0);
    if (size == 0) size = native_size(split.train.files.empty() ? split.test : split.train);

    std::size_t gray = 0;
    const ImageSet train_set = load_image_set(split.train, size, size, &gray);
    const ImageSet val_set = load_image_set(split.val, size, size);
    if (gray) err << "warning: " << gray << " grayscale images replicated to RGB\n";

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("lr", 1e-3);
    tc.weight_decay = cfg.get_double("weight_decay", 1e-4);
    tc.batch_size = cfg.get_size("batch_size", model_name == "v2_toy" ? 32 : 64);
    tc.epochs = cfg.get_size("epochs", 50);
    tc.seed = seed;
    tc.plateau.patience = cfg.get_size("patience", 5);
    tc.plateau.factor = cfg.get_double("factor", 0.2);
    tc.plateau.min_delta = cfg.get_double("min_delta", 1e-4);
    tc.checkpoint = a.out;

    const Model model = build_model(preset(model_name, train_set.classes.size(), size), seed);
    if (!a.quiet) {
        const auto count = count_parameters(model);
        out << model_name << ": " << count.total << " parameters (" << count.trainable << " trainable), "
            << train_set.size() << " train / " << val_set.size() << " val images at " << size << "x" << size << "\n";
    }
    if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
    auto log = [&](const EpochRecord& r) {
        if (a.quiet) return;
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.4f  train_acc %.4f  val_acc %.4f  lr %.3g\n", r.epoch,
                      r.train_loss, r.train_accuracy, r.val_accuracy, r.learning_rate);
        out << buf << std::flush;
    };
    const TrainResult result = train(model, train_set, val_set, tc, log);
    save_weights(result.model, a.out);
    write_meta(a.out, {model_name, size, train_set.classes, seed, exclude});
    if (!a.history.empty()) write_text(a.history, history_csv(result.history));

    char buf[200];
    const double last_train = result.history.empty() ? 0.0 : result.history.back().train_accuracy;
    std::snprintf(buf, sizeof buf, "best val_acc %.4f at epoch %zu; final train_acc %.4f; weights -> %s\n",
                  std::max(0.0, result.best_val_accuracy), result.best_epoch, last_train, a.out.c_str());
    out << buf;
    return kOk;
}

// ---- predict -------------------------------------------------------------

struct PredictArgs {
    Common common;
    std::string weights;
    std::string data;
    std::string split = "test";
    std::string out;
};

int cmd_predict(const PredictArgs& a, std::ostream& out) {
    Config cfg = settings(a.common);
    const ModelMeta meta = read_meta(a.weights);
    SplitSpec split_spec;
    split_spec.seed = cfg.get_u64("seed", meta.split_seed);
    const auto split = index_and_split(a.data, split_spec, meta.exclude);
    if (split.test.classes != meta.classes) {
        throw std::runtime_error("dataset classes [" + join(split.test.classes) + "] differ from the model's [" +
                                 join(meta.classes) + "]");
    }
    const Model model = load_weights(preset(meta.model, meta.classes.size(), meta.image_size), a.weights);
    const ImageSet set = load_image_set(pick_split(split, a.split), meta.image_size, meta.image_size);
    PredictionMatrix m = predict_matrix(model, set);
    write_prediction_matrix(m, a.out);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu rows, accuracy %.4f -> %s\n", m.rows(), matrix_accuracy(m), a.out.c_str());
    out << buf;
    return kOk;
}

// ---- ensemble ------------------------------------------------------------

struct EnsembleArgs {
    Common common;
    std::string method = "average";
    std::vector<std::string> inputs;
    std::vector<std::string> val;
    std::vector<double> weights;
    std::string out;
};

int cmd_ensemble(const EnsembleArgs& a, std::ostream& out) {
    settings(a.common);
    std::vector<PredictionMatrix> members;
    for (const auto& p : a.inputs) members.push_back(read_prediction_matrix(p));
    std::vector<PredictionMatrix> val;
    for (const auto& p : a.val) val.push_back(read_prediction_matrix(p, members.front().classes));
    if (!val.empty() && val.size() != members.size()) {
        throw UsageError("--val needs one matrix per input (" + std::to_string(members.size()) + ")");
    }

    PredictionMatrix result;
    if (a.method == "average") {
        if (members.size() < 2) throw UsageError("average ensemble needs at least two matrices");
        result = average_ensemble(members);
    } else if (a.method == "weighted") {
        std::vector<double> w = a.weights;
        if (w.empty()) {
            if (val.empty()) throw UsageError("weighted ensemble needs --weights or --val matrices");
            w = accuracy_weights(val);
        }
        result = weighted_ensemble(members, w);
    } else if (a.method == "stacked") {
        if (val.empty()) throw UsageError("stacked ensemble needs --val matrices");
        StackedEnsemble stack;
        stack.fit(val);
        result = stack.apply(members);
    } else {
        throw UsageError("unknown method '" + a.method + "'");
    }
    write_prediction_matrix(result, a.out);
    char buf[200];
    for (const auto& m : members) {
        std::snprintf(buf, sizeof buf, "member %s accuracy %.4f\n", m.tag.c_str(), matrix_accuracy(m));
        out << buf;
    }
    std::snprintf(buf, sizeof buf, "%s ensemble accuracy %.4f -> %s\n", a.method.c_str(), matrix_accuracy(result),
                  a.out.c_str());
    out << buf;
    return kOk;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateArgs {
    Common common;
    std::string predictions;
    std::string out;
    std::string confusion;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream& err) {
    settings(a.common);
    const PredictionMatrix m = read_prediction_matrix(a.predictions);
    const auto cm = confusion_matrix(m.labels, m.predictions(), m.num_classes());
    const auto report = classwise_report(cm);
    std::optional<AucResult> auc;
    try {
        auc = roc_auc_ovr(m.values, m.num_classes(), m.labels);
    } catch (const std::invalid_argument& e) {
        err << "warning: " << e.what() << "\n";
    }
    const std::string text = format_report(report, m.classes, auc ? &*auc : nullptr);
    if (a.out.empty()) {
        out << text;
    } else {
        write_text(a.out, text);
        out << "wrote " << a.out << "\n";
    }
    if (!a.confusion.empty()) write_text(a.confusion, confusion_csv(cm, m.classes));
    return kOk;
}

// ---- explain -------------------------------------------------------------

struct ExplainArgs {
    Common common;
    std::string weights;
    std::string image;
    std::string data;
    std::string split = "test";
    std::size_t index = 0;
    std::optional<std::size_t> class_id;
    std::string method = "both";
    std::string out_dir = "explain";
    std::string layer;
    std::size_t permutations = 64;
    std::size_t patch = 0;
    std::string baseline = "mean";
    bool csv = false;
};

int cmd_explain(const ExplainArgs& a, std::ostream& out, std::ostream& err) {
    const Config cfg = settings(a.common);
    if (a.image.empty() == a.data.empty()) throw UsageError("give exactly one of --image or --data");
    if (a.method != "gradcam" && a.method != "shapley" && a.method != "both") {
        throw UsageError("unknown method '" + a.method + "' (gradcam, shapley or both)");
    }
    if (a.baseline != "mean" && a.baseline != "gray") throw UsageError("--baseline must be mean or gray");
    const ModelMeta meta = read_meta(a.weights);
    const Model model = load_weights(preset(meta.model, meta.classes.size(), meta.image_size), a.weights);
    const std::size_t size = meta.image_size;

    Tensor image;
    std::string stem;
    std::optional<Tensor> mean;
    if (!a.image.empty()) {
        image = load_resize_image(a.image, size, size);
        stem = fs::path(a.image).stem().string();
    } else {
        SplitSpec split_spec;
        split_spec.seed = meta.split_seed;
        const auto split = index_and_split(a.data, split_spec, meta.exclude);
        const auto items = pick_split(split, a.split).items();
        if (a.index >= items.size()) {
            throw UsageError("--index " + std::to_string(a.index) + " out of range for " +
                             std::to_string(items.size()) + " images");
        }
        image = load_resize_image(items[a.index].path, size, size);
        stem = a.split + "_" + std::to_string(a.index);
        if (a.baseline == "mean") mean = mean_image(load_image_set(split.train, size, size));
    }
    Tensor baseline = gray_baseline(size, size);
    std::string baseline_name = "gray";
    if (a.baseline == "mean") {
        if (mean) {
            baseline = *mean;
            baseline_name = "dataset-mean";
        } else {
            err << "note: no dataset given, using the mid-gray baseline\n";
        }
    }

    const Tensor batch = ops::reshape(hwc_to_chw(image), {1, 3, size, size});
    const auto probs = model.forward(batch).probabilities;
    const std::size_t predicted = argmax_rows(probs.data(), meta.classes.size()).front();
    const std::size_t target = a.class_id.value_or(predicted);
    if (target >= meta.classes.size()) {
        throw UsageError("--class " + std::to_string(target) + " outside [0," + std::to_string(meta.classes.size()) + ")");
    }
    out << "predicted " << meta.classes[predicted] << " (p=" << probs.data()[predicted] << "); explaining "
        << meta.classes[target] << "\n";

    const fs::path dir = a.out_dir;
    fs::create_directories(dir);
    if (a.method == "gradcam" || a.method == "both") {
        const Heatmap cam = grad_cam(model, image, target, a.layer);
        for (const char* ext : {".png", ".ppm"}) render_overlay(image, cam, dir / (stem + "_gradcam" + ext));
        if (a.csv) write_text(dir / (stem + "_gradcam.csv"), heatmap_csv(cam));
        out << "grad-cam (" << cam.layer << ") -> " << (dir / (stem + "_gradcam.{png,ppm}")).string() << "\n";
    }
    if (a.method == "shapley" || a.method == "both") {
        ShapleyOptions opt;
        opt.patch = a.patch;
        opt.permutations = a.permutations;
        opt.seed = cfg.get_u64("seed", 0);
        const ShapleyMap map = shapley_patches(model, image, target, baseline, opt, baseline_name);
        for (const char* ext : {".png", ".ppm"}) render_overlay(image, map, dir / (stem + "_shapley" + ext));
        if (a.csv) write_text(dir / (stem + "_shapley.csv"), shapley_csv(map));
        out << "shapley (" << map.grid_rows << "x" << map.grid_cols << " patches, M=" << map.permutations
            << ", baseline " << baseline_name << ") -> " << (dir / (stem + "_shapley.{png,ppm}")).string() << "\n";
    }
    return kOk;
}

// ---- bench-attention -----------------------------------------------------

struct BenchArgs {
    Common common;
    std::size_t dim = 16;
    std::size_t repeats = 5;
    std::size_t max_tokens = 1024;
    std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
    const Config cfg = settings(a.common);
    std::vector<std::size_t> ns;
    for (std::size_t n = 64; n <= a.max_tokens; n *= 2) ns.push_back(n);
    if (ns.size() < 2) throw UsageError("--max-tokens must be at least 128");
    const std::uint64_t seed = cfg.get_u64("seed", 0);
    const auto mhsa = time_attention(nn::AttentionKind::Softmax, ns, a.dim, a.repeats, seed);
    const auto lin = time_attention(nn::AttentionKind::Linear, ns, a.dim, a.repeats, seed);
    std::ostringstream table;
    table << "tokens,mhsa_seconds,linear_seconds\n";
    char buf[120];
    for (std::size_t i = 0; i < ns.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.6e,%.6e\n", ns[i], mhsa[i].seconds, lin[i].seconds);
        table << buf;
    }
    out << table.str();
    std::snprintf(buf, sizeof buf, "loglog slope: mhsa %.3f, linear %.3f (d=%zu, min of %zu)\n", loglog_slope(mhsa),
                  loglog_slope(lin), a.dim, a.repeats);
    out << buf;
    if (!a.out.empty()) write_text(a.out, table.str());
    return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mobile vision transformer toolkit: data, training, ensembles, metrics, explanations"};
    app.name("vitens");
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Write a planted-motif synthetic dataset");
    add_common(s, synth.common);
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
    s->add_option("--per-class", synth.per_class, "Images per class")->capture_default_str();
    s->add_option("--image-size", synth.image_size, "Image side in pixels")->capture_default_str();
    s->add_option("--noise", synth.noise, "Gaussian pixel noise")->capture_default_str();
    s->add_flag("--force", synth.force, "Overwrite a non-empty directory");

    SplitArgs split;
    auto* sa = app.add_subcommand("split-audit", "Print per-class train/val/test counts");
    add_common(sa, split.common);
    sa->add_option("--data", split.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    sa->add_option("--out", split.out, "Write the CSV here instead of stdout");
    sa->add_option("--exclude", split.exclude, "Class names to drop")->delimiter(',')->allow_extra_args(false);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one model preset");
    add_common(t, tr.common);
    t->add_option("--data", tr.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    t->add_option("--out", tr.out, "Weights file; the best checkpoint also goes to <out>.best")->required();
    t->add_option("--history", tr.history, "Per-epoch CSV");
    t->add_option("--model", tr.model, "xs_toy or v2_toy");
    t->add_option("--image-size", tr.image_size, "Input side (default: native size of the data)");
    t->add_option("--epochs", tr.epochs, "Epochs (default 50)");
    t->add_option("--batch-size", tr.batch_size, "Batch size (default 64 xs_toy, 32 v2_toy)");
    t->add_option("--lr", tr.lr, "Learning rate (default 0.001)");
    t->add_option("--weight-decay", tr.weight_decay, "AdamW weight decay (default 0.0001)");
    t->add_option("--patience", tr.patience, "Plateau patience (default 5)");
    t->add_option("--factor", tr.factor, "Plateau factor (default 0.2)");
    t->add_option("--min-delta", tr.min_delta, "Plateau min delta (default 0.0001)");
    t->add_option("--exclude", tr.exclude, "Class names to drop")->delimiter(',')->allow_extra_args(false);
    t->add_flag("--quiet", tr.quiet, "Only print the summary");

    PredictArgs pr;
    auto* p = app.add_subcommand("predict", "Write a prediction matrix for one split");
    add_common(p, pr.common);
    p->add_option("--weights", pr.weights, "Weights written by train")->required()->check(CLI::ExistingFile);
    p->add_option("--data", pr.data, "Dataset root")->required()->check(CLI::ExistingDirectory);
    p->add_option("--split", pr.split, "train, val or test")->capture_default_str();
    p->add_option("--out", pr.out, "Output CSV")->required();

    EnsembleArgs en;
    auto* e = app.add_subcommand("ensemble", "Combine prediction matrices");
    add_common(e, en.common);
    e->add_option("--method", en.method, "average, weighted or stacked")
        ->check(CLI::IsMember({"average", "weighted", "stacked"}))
        ->capture_default_str();
    e->add_option("inputs", en.inputs, "Member prediction matrices")->required()->check(CLI::ExistingFile);
    e->add_option("--val", en.val, "Validation matrices, same member order")->check(CLI::ExistingFile);
    e->add_option("--weights", en.weights, "Explicit member weights")->delimiter(',')->allow_extra_args(false);
    e->add_option("--out", en.out, "Output CSV")->required();

    EvaluateArgs ev;
    auto* v = app.add_subcommand("evaluate", "Metrics report for a prediction matrix");
    add_common(v, ev.common);
    v->add_option("predictions", ev.predictions, "Prediction matrix CSV")->required()->check(CLI::ExistingFile);
    v->add_option("--out", ev.out, "Write the report here instead of stdout");
    v->add_option("--confusion", ev.confusion, "Confusion matrix CSV");

    ExplainArgs ex;
    auto* x = app.add_subcommand("explain", "Grad-CAM and patch-Shapley overlays");
    add_common(x, ex.common);
    x->add_option("--weights", ex.weights, "Weights written by train")->required()->check(CLI::ExistingFile);
    x->add_option("--image", ex.image, "Image file")->check(CLI::ExistingFile);
    x->add_option("--data", ex.data, "Dataset root (with --split/--index)")->check(CLI::ExistingDirectory);
    x->add_option("--split", ex.split, "train, val or test")->capture_default_str();
    x->add_option("--index", ex.index, "Image index within the split")->capture_default_str();
    x->add_option("--class", ex.class_id, "Target class id (default: predicted)");
    x->add_option("--method", ex.method, "gradcam, shapley or both")->capture_default_str();
    x->add_option("--out-dir", ex.out_dir, "Output directory")->capture_default_str();
    x->add_option("--layer", ex.layer, "Grad-CAM layer (default: last fusion conv)");
    x->add_option("--permutations", ex.permutations, "Shapley permutations M")->capture_default_str();
    x->add_option("--patch", ex.patch, "Shapley patch side (default: image/8)");
    x->add_option("--baseline", ex.baseline, "mean or gray")->capture_default_str();
    x->add_flag("--csv", ex.csv, "Also dump raw maps as CSV");

    BenchArgs be;
    auto* b = app.add_subcommand("bench-attention", "Runtime vs token count for both attention kinds");
    add_common(b, be.common);
    b->add_option("--dim", be.dim, "Token dimension")->capture_default_str();
    b->add_option("--repeats", be.repeats, "Timing repeats (minimum is kept)")->capture_default_str();
    b->add_option("--max-tokens", be.max_tokens, "Largest N")->capture_default_str();
    b->add_option("--out", be.out, "Also write the table to this CSV");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& pe) {
        const int code = app.exit(pe, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (sa->parsed()) return cmd_split_audit(split, out, err);
        if (t->parsed()) return cmd_train(tr, out, err);
        if (p->parsed()) return cmd_predict(pr, out);
        if (e->parsed()) return cmd_ensemble(en, out);
        if (v->parsed()) return cmd_evaluate(ev, out, err);
        if (x->parsed()) return cmd_explain(ex, out, err);
        if (b->parsed()) return cmd_bench(be, out);
    } catch (const UsageError& ue) {
        err << "usage error: " << ue.what() << "\n";
        return kUsage;
    } catch (const std::exception& ex_) {
        err << "error: " << ex_.what() << "\n";
        return kFailure;
    }
    err << "no subcommand given\n";
    return kUsage;
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_cli(args, std::cout, std::cerr);
}

}  // namespace vitens::cli
