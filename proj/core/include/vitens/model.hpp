#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "vitens/nn.hpp"
#include "vitens/tensor.hpp"

namespace vitens {

/// k x k strided conv + batch norm + activation on the raw image.
struct StemStage {
    std::size_t out_channels = 16;
    std::size_t kernel = 3;
    std::size_t stride = 2;
};

/// Non-residual strided 3x3 conv + batch norm + activation.
struct DownsampleStage {
    std::size_t out_channels = 32;
    std::size_t stride = 2;
};

/// `count` inverted residual blocks with the given expansion factor.
struct IrbStage {
    std::size_t expansion = 2;
    std::size_t count = 1;
};

/// Softmax-attention block. Tokens have P*P*local_channels features.
struct MobileViTStage {
    std::size_t local_channels = 32;
    std::size_t out_channels = 32;
    std::size_t depth = 2;
    std::size_t patch = 2;
    std::size_t attention_dim = 64;
    std::size_t heads = 2;
    std::size_t ffn_multiplier = 2;
    std::size_t kernel = 3;
};

/// Linear-attention block; channel preserving.
struct MobileViTv2Stage {
    std::size_t expansion = 2;
    std::size_t depth = 2;
    std::size_t patch = 2;
    std::size_t attention_dim = 64;
    std::size_t ffn_multiplier = 2;
};

using StageSpec = std::variant<StemStage, DownsampleStage, IrbStage, MobileViTStage, MobileViTv2Stage>;

std::string stage_kind(const StageSpec& stage);

/// Backbone stages followed by GAP and dense head (the head is the last stage
/// index, `stages.size()`).
struct ModelSpec {
    std::string name = "custom";
    std::size_t image_height = 64;
    std::size_t image_width = 64;
    std::size_t in_channels = 3;
    std::vector<StageSpec> stages;
    std::size_t num_classes = 4;
    std::vector<std::size_t> head_hidden;
    nn::EncoderStyle encoder_style = nn::EncoderStyle::Paper;
    bool fusion_concat_input = false;
    nn::Activation conv_activation = nn::Activation::Silu;
    nn::Activation ffn_activation = nn::Activation::Gelu;

    /// Throws std::invalid_argument naming the offending stage.
    void validate() const;
};

/// stem -> IRB -> down -> MobileViT -> down -> MobileViT, widths {16,32,64}.
ModelSpec xs_toy(std::size_t num_classes, std::size_t image_size = 64);
/// Same schedule with linear-attention blocks.
ModelSpec v2_toy(std::size_t num_classes, std::size_t image_size = 64);
/// "xs_toy" or "v2_toy".
ModelSpec preset(const std::string& name, std::size_t num_classes, std::size_t image_size = 64);

enum class InitKind { FanInUniform, Zeros, Ones };

struct ParamDecl {
    std::string name;
    Shape shape;
    InitKind init = InitKind::FanInUniform;
    std::size_t fan_in = 1;
    bool frozen = false;
};

/// Every tensor a model built from `spec` owns, in creation order. Names
/// follow `stage<i>.<layer>.<role>`.
std::vector<ParamDecl> declare_parameters(const ModelSpec& spec);

using ParamMap = std::unordered_map<std::string, Tensor>;

/// Ordered name -> tensor store.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor value;
        bool frozen = false;
    };

    void add(std::string name, Tensor value, bool frozen = false);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }
    const Tensor& get(const std::string& name) const;
    /// Replaces the value; the shape must not change.
    void set(const std::string& name, Tensor value);
    void freeze(const std::string& name, bool frozen = true);
    bool frozen(const std::string& name) const;

    const std::vector<Entry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    /// Trainable tensors are watched on `tape`; frozen ones are passed as is.
    ParamMap bind(Tape& tape) const;
    ParamMap values() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct ParameterCount {
    std::size_t total = 0;
    std::size_t trainable = 0;
};

ParameterCount count_parameters(const ParamStore& store);

struct ForwardResult {
    Tensor logits;
    Tensor probabilities;
    /// Feature map used for Grad-CAM (output of the last fusion convolution).
    Tensor features;
    std::string feature_layer;
    /// Every stage output ("stage<i>") and fusion output ("stage<i>.fusion").
    std::map<std::string, Tensor> taps;
};

class Model {
public:
    Model(ModelSpec spec, ParamStore params);

    const ModelSpec& spec() const { return spec_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    /// Inference with the stored parameters; batch norms use running stats.
    ForwardResult forward(const Tensor& batch) const;
    /// Forward with externally bound parameters (e.g. from ParamStore::bind).
    ForwardResult forward(const Tensor& batch, const ParamMap& bound, nn::ForwardContext& ctx) const;
    /// Folds training-mode batch statistics into the running buffers.
    void apply_stat_updates(const std::vector<nn::StatUpdate>& updates);

    /// Name of the default Grad-CAM layer.
    std::string feature_layer() const;

private:
    ModelSpec spec_;
    ParamStore params_;
};

/// Deterministic initialization from `seed`: fan-in-scaled uniform for conv
/// and dense weights, zero biases, unit gamma, zero beta.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

/// Row-stochastic class probabilities for a (B, C, H, W) batch.
ForwardResult forward_classify(const Model& model, const Tensor& batch);

ParameterCount count_parameters(const Model& model);

/// Raised for unreadable, corrupt or mismatched weight files.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_weights(const ParamStore& params, const std::filesystem::path& path);
void save_weights(const Model& model, const std::filesystem::path& path);
/// Reads every tensor of a weights file, checking magic and CRC.
ParamStore read_weights(const std::filesystem::path& path);
/// Loads weights for `spec`; names and shapes must match its declarations.
Model load_weights(const ModelSpec& spec, const std::filesystem::path& path);

}  // namespace vitens
