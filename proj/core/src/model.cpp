#include "vitens/model.hpp"

#include <cmath>

#include "vitens/ops.hpp"
#include "vitens/rng.hpp"

namespace vitens {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::string stage_prefix(std::size_t i) { return "stage" + std::to_string(i); }

std::size_t conv_out(std::size_t in, std::size_t kernel, std::size_t stride) {
    const std::size_t pad = kernel / 2;
    return (in + 2 * pad - kernel) / stride + 1;
}

// Collects declarations while walking the stage list.
class Declarer {
public:
    explicit Declarer(std::vector<ParamDecl>& out) : out_(out) {}

    void conv(const std::string& name, std::size_t oc, std::size_t ic_per_group, std::size_t k, bool bias) {
        const std::size_t fan_in = ic_per_group * k * k;
        out_.push_back({name + ".weight", {oc, ic_per_group, k, k}, InitKind::FanInUniform, fan_in, false});
        if (bias) out_.push_back({name + ".bias", {oc}, InitKind::Zeros, 1, false});
    }
    void batch_norm(const std::string& name, std::size_t c) {
        out_.push_back({name + ".gamma", {c}, InitKind::Ones, 1, false});
        out_.push_back({name + ".beta", {c}, InitKind::Zeros, 1, false});
        out_.push_back({name + ".running_mean", {c}, InitKind::Zeros, 1, true});
        out_.push_back({name + ".running_var", {c}, InitKind::Ones, 1, true});
    }
    void layer_norm(const std::string& name, std::size_t d) {
        out_.push_back({name + ".gamma", {d}, InitKind::Ones, 1, false});
        out_.push_back({name + ".beta", {d}, InitKind::Zeros, 1, false});
    }
    void dense(const std::string& name, std::size_t in, std::size_t out) {
        out_.push_back({name + ".weight", {in, out}, InitKind::FanInUniform, in, false});
        out_.push_back({name + ".bias", {out}, InitKind::Zeros, 1, false});
    }
    void irb(const std::string& prefix, std::size_t c, std::size_t expansion) {
        const std::size_t hidden = c * expansion;
        conv(prefix + "_expand", hidden, c, 1, false);
        batch_norm(prefix + "_expand_bn", hidden);
        conv(prefix + "_dw", hidden, 1, 3, false);
        batch_norm(prefix + "_dw_bn", hidden);
        conv(prefix + "_project", c, hidden, 1, false);
        batch_norm(prefix + "_project_bn", c);
    }
    void encoder(const std::string& prefix, std::size_t layers, std::size_t d_in, std::size_t d,
                 std::size_t ffn_mult, bool conventional) {
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string p = prefix + ".enc" + std::to_string(l);
            layer_norm(p + "_ln1", d_in);
            dense(p + "_attn_q", d_in, d);
            dense(p + "_attn_k", d_in, d);
            dense(p + "_attn_v", d_in, d);
            dense(p + "_attn_o", d, d_in);
            if (conventional) layer_norm(p + "_ln2", d_in);
            dense(p + "_ffn1", d_in, d_in * ffn_mult);
            dense(p + "_ffn2", d_in * ffn_mult, d_in);
        }
    }

private:
    std::vector<ParamDecl>& out_;
};

// Resolves parameter tensors for one stage from a bound map.
class StageParams {
public:
    StageParams(const ParamMap& map, std::string prefix) : map_(map), prefix_(std::move(prefix)) {}

    const Tensor& get(const std::string& layer, const std::string& role) const {
        const std::string name = prefix_ + "." + layer + "." + role;
        auto it = map_.find(name);
        if (it == map_.end()) throw std::out_of_range("missing parameter " + name);
        return it->second;
    }

    nn::NormLayer batch_norm(const std::string& layer) const {
        nn::NormLayer n;
        n.kind = nn::NormKind::BatchNorm;
        n.gamma = get(layer, "gamma");
        n.beta = get(layer, "beta");
        n.running_mean = get(layer, "running_mean");
        n.running_var = get(layer, "running_var");
        n.stats_key = prefix_ + "." + layer;
        return n;
    }

    nn::NormLayer layer_norm(const std::string& layer) const {
        nn::NormLayer n;
        n.kind = nn::NormKind::LayerNorm;
        n.gamma = get(layer, "gamma");
        n.beta = get(layer, "beta");
        return n;
    }

    nn::ConvNormAct conv_bn(const std::string& layer, std::size_t stride, std::size_t groups, nn::Activation act) const {
        nn::ConvNormAct c;
        c.conv.weight = get(layer, "weight");
        c.conv.stride = stride;
        c.conv.padding = c.conv.weight.shape()[2] / 2;
        c.conv.groups = groups;
        c.norm = batch_norm(layer + "_bn");
        c.act = act;
        return c;
    }

    nn::LinearLayer dense(const std::string& layer) const { return {get(layer, "weight"), get(layer, "bias")}; }

    nn::InvertedResidualParams irb(const std::string& prefix, nn::Activation act) const {
        nn::InvertedResidualParams p;
        p.expand = conv_bn(prefix + "_expand", 1, 1, act);
        const std::size_t hidden = p.expand.conv.out_channels();
        p.depthwise = conv_bn(prefix + "_dw", 1, hidden, act);
        p.project = conv_bn(prefix + "_project", 1, 1, nn::Activation::None);
        return p;
    }

    std::vector<nn::EncoderLayerParams> encoder(std::size_t layers, std::size_t heads, bool conventional,
                                                nn::Activation ffn_act) const {
        std::vector<nn::EncoderLayerParams> out;
        for (std::size_t l = 0; l < layers; ++l) {
            const std::string p = "enc" + std::to_string(l);
            nn::EncoderLayerParams e;
            e.norm1 = layer_norm(p + "_ln1");
            e.attention.query = dense(p + "_attn_q");
            e.attention.key = dense(p + "_attn_k");
            e.attention.value = dense(p + "_attn_v");
            e.attention.output = dense(p + "_attn_o");
            e.attention.heads = heads;
            if (conventional) e.norm2 = layer_norm(p + "_ln2");
            e.ffn.fc1 = dense(p + "_ffn1");
            e.ffn.fc2 = dense(p + "_ffn2");
            e.ffn.act = ffn_act;
            out.push_back(std::move(e));
        }
        return out;
    }

private:
    const ParamMap& map_;
    std::string prefix_;
};

}  // namespace

std::string stage_kind(const StageSpec& stage) {
    return std::visit(overloaded{
                          [](const StemStage&) { return std::string("stem"); },
                          [](const DownsampleStage&) { return std::string("downsample"); },
                          [](const IrbStage&) { return std::string("irb"); },
                          [](const MobileViTStage&) { return std::string("mobilevit"); },
                          [](const MobileViTv2Stage&) { return std::string("mobilevit_v2"); },
                      },
                      stage);
}

void ModelSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("model needs at least 2 classes");
    if (image_height == 0 || image_width == 0 || in_channels == 0) {
        throw std::invalid_argument("model input dimensions must be positive");
    }
    std::size_t c = in_channels, h = image_height, w = image_width;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const std::string where = stage_prefix(i) + " (" + stage_kind(stages[i]) + ")";
        auto fail = [&](const std::string& why) { throw std::invalid_argument(where + ": " + why); };
        std::visit(overloaded{
                       [&](const StemStage& s) {
                           if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) fail("invalid conv geometry");
                           if (h + 2 * (s.kernel / 2) < s.kernel) fail("kernel larger than input");
                           h = conv_out(h, s.kernel, s.stride);
                           w = conv_out(w, s.kernel, s.stride);
                           c = s.out_channels;
                       },
                       [&](const DownsampleStage& s) {
                           if (s.out_channels == 0 || s.stride == 0) fail("invalid conv geometry");
                           h = conv_out(h, 3, s.stride);
                           w = conv_out(w, 3, s.stride);
                           c = s.out_channels;
                       },
                       [&](const IrbStage& s) {
                           if (s.expansion == 0 || s.count == 0) fail("expansion and count must be positive");
                       },
                       [&](const MobileViTStage& s) {
                           if (s.depth == 0) fail("encoder depth must be >= 1");
                           if (s.patch == 0 || h % s.patch != 0 || w % s.patch != 0) {
                               fail("patch size " + std::to_string(s.patch) + " does not divide " + std::to_string(h) +
                                    "x" + std::to_string(w));
                           }
                           if (s.heads == 0 || s.attention_dim % s.heads != 0) {
                               fail("attention dim " + std::to_string(s.attention_dim) + " not divisible by " +
                                    std::to_string(s.heads) + " heads");
                           }
                           if (s.local_channels == 0 || s.out_channels == 0 || s.ffn_multiplier == 0) {
                               fail("channel widths must be positive");
                           }
                           c = s.out_channels;
                       },
                       [&](const MobileViTv2Stage& s) {
                           if (s.depth == 0) fail("encoder depth must be >= 1");
                           if (s.patch == 0 || h % s.patch != 0 || w % s.patch != 0) {
                               fail("patch size " + std::to_string(s.patch) + " does not divide " + std::to_string(h) +
                                    "x" + std::to_string(w));
                           }
                           if (s.expansion == 0 || s.attention_dim == 0 || s.ffn_multiplier == 0) {
                               fail("widths must be positive");
                           }
                       },
                   },
                   stages[i]);
    }
    (void)c;
}

ModelSpec xs_toy(std::size_t num_classes, std::size_t image_size) {
    ModelSpec spec;
    spec.name = "xs_toy";
    spec.image_height = spec.image_width = image_size;
    spec.num_classes = num_classes;
    spec.stages = {
        StemStage{16, 3, 2},
        IrbStage{2, 1},
        DownsampleStage{32, 2},
        MobileViTStage{32, 32, 2, 2, 64, 2, 2, 3},
        DownsampleStage{64, 2},
        MobileViTStage{64, 64, 2, 2, 64, 2, 2, 3},
    };
    return spec;
}

ModelSpec v2_toy(std::size_t num_classes, std::size_t image_size) {
    ModelSpec spec;
    spec.name = "v2_toy";
    spec.image_height = spec.image_width = image_size;
    spec.num_classes = num_classes;
    spec.stages = {
        StemStage{16, 3, 2},
        IrbStage{2, 1},
        DownsampleStage{32, 2},
        MobileViTv2Stage{2, 2, 2, 64, 2},
        DownsampleStage{64, 2},
        MobileViTv2Stage{2, 2, 2, 64, 2},
    };
    return spec;
}

ModelSpec preset(const std::string& name, std::size_t num_classes, std::size_t image_size) {
    if (name == "xs_toy") return xs_toy(num_classes, image_size);
    if (name == "v2_toy") return v2_toy(num_classes, image_size);
    throw std::invalid_argument("unknown model preset '" + name + "' (expected xs_toy or v2_toy)");
}

std::vector<ParamDecl> declare_parameters(const ModelSpec& spec) {
    spec.validate();
    std::vector<ParamDecl> decls;
    Declarer d(decls);
    const bool conventional = spec.encoder_style == nn::EncoderStyle::Conventional;
    std::size_t c = spec.in_channels;
    for (std::size_t i = 0; i < spec.stages.size(); ++i) {
        const std::string p = stage_prefix(i);
        std::visit(overloaded{
                       [&](const StemStage& s) {
                           d.conv(p + ".conv", s.out_channels, c, s.kernel, false);
                           d.batch_norm(p + ".conv_bn", s.out_channels);
                           c = s.out_channels;
                       },
                       [&](const DownsampleStage& s) {
                           d.conv(p + ".conv", s.out_channels, c, 3, false);
                           d.batch_norm(p + ".conv_bn", s.out_channels);
                           c = s.out_channels;
                       },
                       [&](const IrbStage& s) {
                           for (std::size_t j = 0; j < s.count; ++j) d.irb(p + ".irb" + std::to_string(j), c, s.expansion);
                       },
                       [&](const MobileViTStage& s) {
                           d.conv(p + ".local_conv", c, c, s.kernel, false);
                           d.batch_norm(p + ".local_conv_bn", c);
                           d.conv(p + ".local_proj", s.local_channels, c, 1, false);
                           const std::size_t d_in = s.patch * s.patch * s.local_channels;
                           d.encoder(p, s.depth, d_in, s.attention_dim, s.ffn_multiplier, conventional);
                           const std::size_t fusion_in = s.local_channels + (spec.fusion_concat_input ? c : 0);
                           d.conv(p + ".fusion", s.out_channels, fusion_in, s.kernel, false);
                           d.batch_norm(p + ".fusion_bn", s.out_channels);
                           c = s.out_channels;
                       },
                       [&](const MobileViTv2Stage& s) {
                           d.irb(p + ".irb", c, s.expansion);
                           const std::size_t d_in = s.patch * s.patch * c;
                           d.encoder(p, s.depth, d_in, s.attention_dim, s.ffn_multiplier, conventional);
                           d.conv(p + ".fusion", c, c, 1, true);
                       },
                   },
                   spec.stages[i]);
    }
    const std::string head = stage_prefix(spec.stages.size());
    std::size_t width = c;
    for (std::size_t j = 0; j < spec.head_hidden.size(); ++j) {
        d.dense(head + ".dense" + std::to_string(j), width, spec.head_hidden[j]);
        width = spec.head_hidden[j];
    }
    d.dense(head + ".classifier", width, spec.num_classes);
    return decls;
}

void ParamStore::add(std::string name, Tensor value, bool frozen) {
    if (contains(name)) throw std::invalid_argument("duplicate parameter name " + name);
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), value.detach(), frozen});
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].value;
}

void ParamStore::set(const std::string& name, Tensor value) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    auto& e = entries_[it->second];
    if (e.value.shape() != value.shape()) {
        throw ShapeError("parameter " + name + " has shape " + shape_str(e.value.shape()) + ", got " +
                         shape_str(value.shape()));
    }
    e.value = value.detach();
}

void ParamStore::freeze(const std::string& name, bool frozen) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    entries_[it->second].frozen = frozen;
}

bool ParamStore::frozen(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].frozen;
}

ParamMap ParamStore::bind(Tape& tape) const {
    ParamMap out;
    for (const auto& e : entries_) out.emplace(e.name, e.frozen ? e.value : tape.watch(e.value));
    return out;
}

ParamMap ParamStore::values() const {
    ParamMap out;
    for (const auto& e : entries_) out.emplace(e.name, e.value);
    return out;
}

ParameterCount count_parameters(const ParamStore& store) {
    ParameterCount count;
    for (const auto& e : store.entries()) {
        count.total += e.value.numel();
        if (!e.frozen) count.trainable += e.value.numel();
    }
    return count;
}

ParameterCount count_parameters(const Model& model) { return count_parameters(model.params()); }

Model::Model(ModelSpec spec, ParamStore params) : spec_(std::move(spec)), params_(std::move(params)) {
    for (const auto& decl : declare_parameters(spec_)) {
        if (!params_.contains(decl.name)) throw std::invalid_argument("model is missing parameter " + decl.name);
        if (params_.get(decl.name).shape() != decl.shape) {
            throw ShapeError("parameter " + decl.name + " has shape " + shape_str(params_.get(decl.name).shape()) +
                             ", expected " + shape_str(decl.shape));
        }
    }
}

std::string Model::feature_layer() const {
    for (std::size_t i = spec_.stages.size(); i-- > 0;) {
        const auto& s = spec_.stages[i];
        if (std::holds_alternative<MobileViTStage>(s) || std::holds_alternative<MobileViTv2Stage>(s)) {
            return stage_prefix(i) + ".fusion";
        }
    }
    if (spec_.stages.empty()) throw std::logic_error("model has no backbone stages");
    return stage_prefix(spec_.stages.size() - 1);
}

ForwardResult Model::forward(const Tensor& batch) const {
    nn::ForwardContext ctx;
    return forward(batch, params_.values(), ctx);
}

ForwardResult Model::forward(const Tensor& batch, const ParamMap& bound, nn::ForwardContext& ctx) const {
    if (batch.dim() != 4 || batch.shape()[1] != spec_.in_channels || batch.shape()[2] != spec_.image_height ||
        batch.shape()[3] != spec_.image_width) {
        throw ShapeError("model " + spec_.name + " expects (B," + std::to_string(spec_.in_channels) + "," +
                         std::to_string(spec_.image_height) + "," + std::to_string(spec_.image_width) + "), got " +
                         shape_str(batch.shape()));
    }
    const bool conventional = spec_.encoder_style == nn::EncoderStyle::Conventional;
    const nn::Activation act = spec_.conv_activation;
    ForwardResult result;
    Tensor x = batch;
    for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
        const std::string prefix = stage_prefix(i);
        StageParams sp(bound, prefix);
        std::visit(overloaded{
                       [&](const StemStage& s) { x = nn::apply(x, sp.conv_bn("conv", s.stride, 1, act), ctx); },
                       [&](const DownsampleStage& s) { x = nn::apply(x, sp.conv_bn("conv", s.stride, 1, act), ctx); },
                       [&](const IrbStage& s) {
                           for (std::size_t j = 0; j < s.count; ++j) {
                               x = nn::inverted_residual_block(x, sp.irb("irb" + std::to_string(j), act), ctx);
                           }
                       },
                       [&](const MobileViTStage& s) {
                           nn::MobileViTBlockParams p;
                           p.local_conv = sp.conv_bn("local_conv", 1, 1, act);
                           p.local_project.conv.weight = sp.get("local_proj", "weight");
                           p.patch = s.patch;
                           p.encoder = sp.encoder(s.depth, s.heads, conventional, spec_.ffn_activation);
                           p.fusion = sp.conv_bn("fusion", 1, 1, act);
                           p.style = spec_.encoder_style;
                           p.fusion_concat_input = spec_.fusion_concat_input;
                           Tensor fused;
                           x = nn::mobilevit_block(x, p, ctx, &fused);
                           result.taps[prefix + ".fusion"] = fused;
                       },
                       [&](const MobileViTv2Stage& s) {
                           nn::MobileViTv2BlockParams p;
                           p.irb = sp.irb("irb", act);
                           p.patch = s.patch;
                           p.encoder = sp.encoder(s.depth, 1, conventional, spec_.ffn_activation);
                           p.fusion.weight = sp.get("fusion", "weight");
                           p.fusion.bias = sp.get("fusion", "bias");
                           p.style = spec_.encoder_style;
                           Tensor fused;
                           x = nn::mobilevit_v2_block(x, p, ctx, &fused);
                           result.taps[prefix + ".fusion"] = fused;
                       },
                   },
                   spec_.stages[i]);
        result.taps[prefix] = x;
    }

    StageParams head(bound, stage_prefix(spec_.stages.size()));
    Tensor h = ops::mean(x, {2, 3});
    for (std::size_t j = 0; j < spec_.head_hidden.size(); ++j) {
        h = nn::activate(nn::linear(h, head.dense("dense" + std::to_string(j))), act);
    }
    result.logits = nn::linear(h, head.dense("classifier"));
    result.probabilities = ops::softmax(result.logits);
    result.feature_layer = feature_layer();
    result.features = result.taps.at(result.feature_layer);
    return result;
}

void Model::apply_stat_updates(const std::vector<nn::StatUpdate>& updates) {
    for (const auto& u : updates) {
        Tensor mean = params_.get(u.key + ".running_mean");
        Tensor var = params_.get(u.key + ".running_var");
        auto m = mean.mutable_data();
        auto v = var.mutable_data();
        for (std::size_t c = 0; c < m.size(); ++c) {
            m[c] = (1.0 - u.momentum) * m[c] + u.momentum * u.mean[c];
            v[c] = (1.0 - u.momentum) * v[c] + u.momentum * u.var[c];
        }
        params_.set(u.key + ".running_mean", mean);
        params_.set(u.key + ".running_var", var);
    }
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    Rng rng(seed);
    ParamStore store;
    for (const auto& decl : declare_parameters(spec)) {
        Tensor t(decl.shape, 0.0);
        auto data = t.mutable_data();
        switch (decl.init) {
            case InitKind::Zeros: break;
            case InitKind::Ones: std::fill(data.begin(), data.end(), 1.0); break;
            case InitKind::FanInUniform: {
                const double bound = std::sqrt(3.0 / static_cast<double>(decl.fan_in));
                for (auto& v : data) v = rng.uniform(-bound, bound);
                break;
            }
        }
        store.add(decl.name, std::move(t), decl.frozen);
    }
    return Model(spec, std::move(store));
}

ForwardResult forward_classify(const Model& model, const Tensor& batch) { return model.forward(batch); }

}  // namespace vitens
