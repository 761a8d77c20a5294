#pragma once

// Conditional generator and projection discriminator.
//
// The generator follows the style-based layout: a mapping network turns z
// into w, per-layer affine transforms turn w into styles s_i, and each style
// modulates (then demodulates) its convolution weights. Time conditioning
// enters through a per-layer linear map L_i producing a scale vector
// k_i = L_i c that multiplies the style element-wise before modulation.

#include <string>
#include <vector>

#include <torch/torch.h>

#include "cyclelapse/random.hpp"
#include "cyclelapse/timebase.hpp"

namespace cyclelapse {

enum class ConditioningMode { modulation, concat, none };

std::string to_string(ConditioningMode mode);
ConditioningMode parse_conditioning_mode(const std::string& text);

class ModelError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GeneratorConfig {
    int latent_dim = 128;
    int resolution = 64;
    int channel_base = 4096;
    int channel_max = 512;
    int mapping_depth = 8;
    double mapping_lr_multiplier = 0.01;
    ConditioningMode mode = ConditioningMode::modulation;
    CycleConfig cycles;

    int channels_at(int res) const;
    int conditioning_dim() const { return cycles.dimension(); }
    int concat_embed_dim() const { return latent_dim / 4; }
    void validate() const;
};

struct DiscriminatorConfig {
    int resolution = 64;
    int channel_base = 4096;
    int channel_max = 512;
    int feature_dim = 0;  ///< 0 selects channels_at(4)
    int embed_depth = 8;
    int mbstd_group = 4;
    int conditioning_dim = 6;

    int channels_at(int res) const;
    int resolved_feature_dim() const { return feature_dim > 0 ? feature_dim : channels_at(4); }
    void validate() const;
};

/// (L c) ⊙ s, batched: styles [B, S], cond [B, C], transform [S, C].
torch::Tensor condition_styles(const torch::Tensor& styles, const torch::Tensor& cond,
                               const torch::Tensor& transform);

/// Conditioning vectors for a batch of triplets, as a float tensor [B, C].
torch::Tensor conditioning_batch(std::span<const TimeTriplet> triplets, const CycleConfig& cfg);

// ---------------------------------------------------------------------------
// Building blocks with equalized learning rate: parameters are stored at unit
// scale and multiplied by a constant gain in the forward pass.
// ---------------------------------------------------------------------------

class EqualLinearImpl : public torch::nn::Module {
public:
    EqualLinearImpl(int in, int out, bool activate, double bias_init = 0.0,
                    double lr_multiplier = 1.0);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight, bias;

private:
    bool activate_;
    double weight_gain_, bias_gain_;
};
TORCH_MODULE(EqualLinear);

class EqualConvImpl : public torch::nn::Module {
public:
    EqualConvImpl(int in, int out, int kernel, bool bias, bool activate, bool downsample);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight, bias;

private:
    int kernel_;
    bool activate_, downsample_;
    double weight_gain_;
};
TORCH_MODULE(EqualConv);

/// One style-modulated convolution of the synthesis network.
class ModulatedConvImpl : public torch::nn::Module {
public:
    struct Options {
        int in_channels = 0;
        int out_channels = 0;
        int kernel = 3;
        int resolution = 4;  ///< output resolution
        bool upsample = false;
        bool demodulate = true;
        bool use_noise = true;
        bool activate = true;
        int w_dim = 0;
        int cond_dim = 0;  ///< 0 disables the conditioning transform
    };

    explicit ModulatedConvImpl(const Options& opt);

    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w, const torch::Tensor& cond,
                          const torch::Tensor& noise, bool conditioned);

    /// Styles s_i = A_i(w) before conditioning.
    torch::Tensor styles(const torch::Tensor& w) { return affine->forward(w); }
    /// Scale vectors k_i = L_i c, [B, in_channels].
    torch::Tensor scales(const torch::Tensor& cond) const;

    const Options& options() const { return opt_; }
    bool has_conditioning() const { return cond_transform.defined(); }

    EqualLinear affine{nullptr};
    torch::Tensor weight, bias, noise_strength;
    torch::Tensor cond_transform;  ///< L_i, [in_channels, cond_dim]

private:
    Options opt_;
    double weight_gain_;
};
TORCH_MODULE(ModulatedConv);

/// Generator network. A single instance is safe for concurrent inference.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const GeneratorConfig& cfg);

    const GeneratorConfig& config() const { return cfg_; }

    /// z [B, latent] (+ cond [B, C] in concat mode) -> w [B, latent].
    torch::Tensor mapping(const torch::Tensor& z, const torch::Tensor& cond);
    /// Normalized latent, concatenated with the embedded conditioning in concat mode.
    torch::Tensor mapping_input(const torch::Tensor& z, const torch::Tensor& cond);
    torch::Tensor mapping_from_input(torch::Tensor x);

    /// w -> image [B, 3, R, R] in roughly [-1, 1]. When `trace` is non-null,
    /// the post-activation output of every convolution layer is appended.
    torch::Tensor synthesis(const torch::Tensor& w, const std::vector<torch::Tensor>& noise,
                            const torch::Tensor& cond, std::vector<torch::Tensor>* trace = nullptr);

    torch::Tensor forward(const torch::Tensor& z, const std::vector<torch::Tensor>& noise,
                          const torch::Tensor& cond, std::vector<torch::Tensor>* trace = nullptr);

    /// All style-modulated layers in evaluation order (convs and toRGB).
    std::vector<ModulatedConv>& layers() { return layers_; }
    /// Noise map shape [1, res, res] per layer; empty shape for layers without noise.
    std::vector<int> noise_resolutions() const;

    /// Runtime switch used by ablations: none ignores c, modulation uses L_i.
    void set_mode(ConditioningMode mode) { cfg_.mode = mode; }

private:
    GeneratorConfig cfg_;
    std::vector<EqualLinear> mapping_layers_;
    EqualLinear cond_embed_{nullptr};
    torch::Tensor const_input_;
    std::vector<ModulatedConv> layers_;
    std::vector<bool> is_rgb_;
};
TORCH_MODULE(Generator);

/// Projection discriminator: D(x, c) = normalize(M(c)) · D'(x).
class DiscriminatorImpl : public torch::nn::Module {
public:
    explicit DiscriminatorImpl(const DiscriminatorConfig& cfg);

    const DiscriminatorConfig& config() const { return cfg_; }

    /// Trunk feature vector D'(x), [B, feature_dim].
    torch::Tensor features(const torch::Tensor& x);
    /// Embedding M(c), [B, feature_dim].
    torch::Tensor embed(const torch::Tensor& cond);
    /// Logits [B]. Throws ModelError when M(c) vanishes.
    torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

    std::vector<EqualLinear>& embedding_layers() { return embed_layers_; }
    /// Parameters of the convolutional trunk and feature head (everything but M).
    std::vector<torch::Tensor> trunk_parameters();

private:
    DiscriminatorConfig cfg_;
    EqualConv from_rgb_{nullptr};
    struct Block {
        EqualConv conv0{nullptr}, conv1{nullptr}, skip{nullptr};
    };
    std::vector<Block> blocks_;
    EqualConv epilogue_conv_{nullptr};
    EqualLinear epilogue_fc_{nullptr}, feature_head_{nullptr};
    std::vector<EqualLinear> embed_layers_;
};
TORCH_MODULE(Discriminator);

/// Standard-normal latent batch [batch, latent_dim], deterministic per stream.
torch::Tensor sample_latent(Rng& rng, int batch, int latent_dim);
/// One noise map per generator layer: [batch, 1, r, r], or an undefined
/// (empty) tensor for layers without noise input.
std::vector<torch::Tensor> sample_noise(Rng& rng, const std::vector<int>& resolutions, int batch);

/// Fills a tensor with standard-normal draws from the stream.
torch::Tensor normal_tensor(Rng& rng, at::IntArrayRef shape);

/// True when every parameter is finite.
bool parameters_finite(const torch::nn::Module& module);

/// Generator output in [-1, 1] mapped to [0, 1] and clamped; [B,3,H,W] float.
torch::Tensor to_unit_range(const torch::Tensor& images);

}  // namespace cyclelapse
