#include "cyclelapse/model.hpp"

#include <cmath>

namespace cyclelapse {

namespace F = torch::nn::functional;

namespace {

constexpr double kLeakySlope = 0.2;
const double kActivationGain = std::sqrt(2.0);

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

torch::Tensor leaky(const torch::Tensor& x) {
    return torch::leaky_relu(x, kLeakySlope) * kActivationGain;
}

torch::Tensor upsample2x(const torch::Tensor& x) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

torch::Tensor minibatch_stddev(const torch::Tensor& x, int group) {
    const auto batch = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    int64_t g = std::min<int64_t>(group, batch);
    while (batch % g != 0) --g;
    auto y = x.reshape({g, -1, 1, c, h, w});
    y = y - y.mean(0);
    y = y.square().mean(0);
    y = (y + 1e-8).sqrt();
    y = y.mean({2, 3, 4});
    y = y.reshape({-1, 1, 1, 1}).repeat({g, 1, h, w});
    return torch::cat({x, y}, 1);
}

}  // namespace

std::string to_string(ConditioningMode mode) {
    switch (mode) {
        case ConditioningMode::modulation: return "modulation";
        case ConditioningMode::concat: return "concat";
        case ConditioningMode::none: return "none";
    }
    return "?";
}

ConditioningMode parse_conditioning_mode(const std::string& text) {
    if (text == "modulation") return ConditioningMode::modulation;
    if (text == "concat") return ConditioningMode::concat;
    if (text == "none") return ConditioningMode::none;
    throw ModelError("unknown conditioning mode '" + text + "'");
}

int GeneratorConfig::channels_at(int res) const { return std::min(channel_base / res, channel_max); }

void GeneratorConfig::validate() const {
    if (!is_power_of_two(resolution) || resolution < 8)
        throw ModelError("generator resolution must be a power of two >= 8");
    if (latent_dim < 2) throw ModelError("latent_dim must be >= 2");
    if (mapping_depth < 1) throw ModelError("mapping_depth must be >= 1");
    if (channels_at(resolution) < 1) throw ModelError("channel_base too small for resolution");
    if (mode == ConditioningMode::concat && concat_embed_dim() < 1)
        throw ModelError("latent_dim too small for concat conditioning");
    cycles.validate();
}

int DiscriminatorConfig::channels_at(int res) const {
    return std::min(channel_base / res, channel_max);
}

void DiscriminatorConfig::validate() const {
    if (!is_power_of_two(resolution) || resolution < 8)
        throw ModelError("discriminator resolution must be a power of two >= 8");
    if (channels_at(resolution) < 1) throw ModelError("channel_base too small for resolution");
    if (embed_depth < 1) throw ModelError("embed_depth must be >= 1");
    if (conditioning_dim < 1) throw ModelError("conditioning_dim must be >= 1");
    if (mbstd_group < 1) throw ModelError("mbstd_group must be >= 1");
}

torch::Tensor condition_styles(const torch::Tensor& styles, const torch::Tensor& cond,
                               const torch::Tensor& transform) {
    if (transform.dim() != 2 || cond.dim() != 2 || styles.dim() != 2)
        throw ModelError("condition_styles expects 2-D styles, conditioning and transform");
    if (transform.size(0) != styles.size(1) || transform.size(1) != cond.size(1) ||
        cond.size(0) != styles.size(0))
        throw ModelError("condition_styles: dimension mismatch");
    return torch::matmul(cond, transform.t()) * styles;
}

torch::Tensor conditioning_batch(std::span<const TimeTriplet> triplets, const CycleConfig& cfg) {
    const auto dim = cfg.dimension();
    auto out = torch::empty({static_cast<int64_t>(triplets.size()), dim}, torch::kFloat);
    auto acc = out.accessor<float, 2>();
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const auto c = encode_conditioning(triplets[i], cfg);
        for (int j = 0; j < dim; ++j) acc[int64_t(i)][j] = static_cast<float>(c.values[j]);
    }
    return out;
}

// --- EqualLinear -------------------------------------------------------------

EqualLinearImpl::EqualLinearImpl(int in, int out, bool activate, double bias_init,
                                 double lr_multiplier)
    : activate_(activate),
      weight_gain_(lr_multiplier / std::sqrt(double(in))),
      bias_gain_(lr_multiplier) {
    weight = register_parameter("weight", torch::randn({out, in}) / lr_multiplier);
    bias = register_parameter("bias", torch::full({out}, bias_init / lr_multiplier));
}

torch::Tensor EqualLinearImpl::forward(const torch::Tensor& x) {
    auto y = torch::addmm(bias * bias_gain_, x, (weight * weight_gain_).t());
    return activate_ ? leaky(y) : y;
}

// --- EqualConv ---------------------------------------------------------------

EqualConvImpl::EqualConvImpl(int in, int out, int kernel, bool with_bias, bool activate,
                             bool downsample)
    : kernel_(kernel),
      activate_(activate),
      downsample_(downsample),
      weight_gain_(1.0 / std::sqrt(double(in * kernel * kernel))) {
    weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
    if (with_bias) bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualConvImpl::forward(const torch::Tensor& x) {
    auto h = downsample_ ? F::avg_pool2d(x, F::AvgPool2dFuncOptions(2)) : x;
    h = F::conv2d(h, weight * weight_gain_,
                  F::Conv2dFuncOptions().padding(kernel_ / 2).bias(bias.defined() ? bias : torch::Tensor()));
    return activate_ ? leaky(h) : h;
}

// --- ModulatedConv -----------------------------------------------------------

ModulatedConvImpl::ModulatedConvImpl(const Options& opt)
    : opt_(opt), weight_gain_(1.0 / std::sqrt(double(opt.in_channels * opt.kernel * opt.kernel))) {
    affine = register_module("affine", EqualLinear(opt.w_dim, opt.in_channels, false, 1.0));
    weight = register_parameter("weight",
                                torch::randn({opt.out_channels, opt.in_channels, opt.kernel, opt.kernel}));
    bias = register_parameter("bias", torch::zeros({opt.out_channels}));
    if (opt.use_noise) noise_strength = register_parameter("noise_strength", torch::zeros({1}));
    if (opt.cond_dim > 0) {
        // k_i starts at exactly 1: only the constant entry of c contributes.
        auto init = torch::zeros({opt.in_channels, opt.cond_dim});
        init.select(1, opt.cond_dim - 1).fill_(1.0);
        cond_transform = register_parameter("cond_transform", init);
    }
}

torch::Tensor ModulatedConvImpl::scales(const torch::Tensor& cond) const {
    return torch::matmul(cond, cond_transform.t());
}

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor& x, const torch::Tensor& w,
                                         const torch::Tensor& cond, const torch::Tensor& noise,
                                         bool conditioned) {
    const auto batch = x.size(0);
    auto s = affine->forward(w);
    if (conditioned && cond_transform.defined()) s = condition_styles(s, cond, cond_transform);

    const auto w_eff = weight * weight_gain_;
    auto h = opt_.upsample ? upsample2x(x) : x;
    // Modulating the input activations is equivalent to modulating the
    // kernel per sample; demodulation rescales each output channel.
    h = h * s.view({batch, opt_.in_channels, 1, 1});
    h = F::conv2d(h, w_eff, F::Conv2dFuncOptions().padding(opt_.kernel / 2));
    if (opt_.demodulate) {
        auto d = (w_eff.unsqueeze(0) * s.view({batch, 1, opt_.in_channels, 1, 1}))
                     .square()
                     .sum({2, 3, 4})
                     .add(1e-8)
                     .rsqrt();
        h = h * d.view({batch, opt_.out_channels, 1, 1});
    }
    if (opt_.use_noise && noise.defined()) h = h + noise * noise_strength;
    h = h + bias.view({1, opt_.out_channels, 1, 1});
    return opt_.activate ? leaky(h) : h;
}

// --- Generator ---------------------------------------------------------------

GeneratorImpl::GeneratorImpl(const GeneratorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int cond_dim = cfg_.conditioning_dim();
    int in = cfg_.latent_dim;
    if (cfg_.mode == ConditioningMode::concat) {
        cond_embed_ = register_module("cond_embed", EqualLinear(cond_dim, cfg_.concat_embed_dim(), false));
        in += cfg_.concat_embed_dim();
    }
    for (int i = 0; i < cfg_.mapping_depth; ++i) {
        mapping_layers_.push_back(register_module(
            "mapping" + std::to_string(i),
            EqualLinear(i == 0 ? in : cfg_.latent_dim, cfg_.latent_dim, true, 0.0, cfg_.mapping_lr_multiplier)));
    }
    const int c4 = cfg_.channels_at(4);
    const_input_ = register_parameter("const", torch::randn({c4, 4, 4}));

    const int layer_cond = cfg_.mode == ConditioningMode::modulation ? cond_dim : 0;
    auto add = [&](ModulatedConvImpl::Options o, bool rgb) {
        o.w_dim = cfg_.latent_dim;
        o.cond_dim = layer_cond;
        const auto name = "layer" + std::to_string(layers_.size());
        layers_.push_back(register_module(name, ModulatedConv(o)));
        is_rgb_.push_back(rgb);
    };
    auto conv = [&](int in_ch, int out_ch, int res, bool up) {
        ModulatedConvImpl::Options o;
        o.in_channels = in_ch;
        o.out_channels = out_ch;
        o.resolution = res;
        o.upsample = up;
        return o;
    };
    auto to_rgb = [&](int in_ch, int res) {
        ModulatedConvImpl::Options o;
        o.in_channels = in_ch;
        o.out_channels = 3;
        o.kernel = 1;
        o.resolution = res;
        o.demodulate = false;
        o.use_noise = false;
        o.activate = false;
        return o;
    };
    add(conv(c4, c4, 4, false), false);
    add(to_rgb(c4, 4), true);
    for (int res = 8; res <= cfg_.resolution; res *= 2) {
        add(conv(cfg_.channels_at(res / 2), cfg_.channels_at(res), res, true), false);
        add(conv(cfg_.channels_at(res), cfg_.channels_at(res), res, false), false);
        add(to_rgb(cfg_.channels_at(res), res), true);
    }
}

std::vector<int> GeneratorImpl::noise_resolutions() const {
    std::vector<int> out;
    for (const auto& l : layers_) out.push_back(l->options().use_noise ? l->options().resolution : 0);
    return out;
}

torch::Tensor GeneratorImpl::mapping_input(const torch::Tensor& z, const torch::Tensor& cond) {
    if (z.dim() != 2 || z.size(1) != cfg_.latent_dim) throw ModelError("latent has wrong shape");
    auto normalize = [](const torch::Tensor& v) {
        return v * (v.square().mean(1, true) + 1e-8).rsqrt();
    };
    auto x = normalize(z);
    if (cfg_.mode == ConditioningMode::concat) {
        if (!cond.defined() || cond.size(0) != z.size(0))
            throw ModelError("concat conditioning requires a conditioning batch");
        x = torch::cat({x, normalize(cond_embed_->forward(cond))}, 1);
    }
    return x;
}

torch::Tensor GeneratorImpl::mapping_from_input(torch::Tensor x) {
    for (auto& layer : mapping_layers_) x = layer->forward(x);
    return x;
}

torch::Tensor GeneratorImpl::mapping(const torch::Tensor& z, const torch::Tensor& cond) {
    return mapping_from_input(mapping_input(z, cond));
}

torch::Tensor GeneratorImpl::synthesis(const torch::Tensor& w, const std::vector<torch::Tensor>& noise,
                                       const torch::Tensor& cond, std::vector<torch::Tensor>* trace) {
    const bool conditioned = cfg_.mode == ConditioningMode::modulation;
    if (conditioned) {
        if (!cond.defined() || cond.dim() != 2 || cond.size(0) != w.size(0) ||
            cond.size(1) != cfg_.conditioning_dim())
            throw ModelError("conditioning batch has wrong shape");
    }
    if (!noise.empty() && noise.size() != layers_.size())
        throw ModelError("expected one noise map per layer");
    const auto batch = w.size(0);
    auto x = const_input_.unsqueeze(0).expand({batch, -1, -1, -1});
    torch::Tensor img;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const torch::Tensor n = noise.empty() ? torch::Tensor() : noise[i];
        if (is_rgb_[i]) {
            auto y = layers_[i]->forward(x, w, cond, n, conditioned);
            img = img.defined() ? upsample2x(img) + y : y;
        } else {
            x = layers_[i]->forward(x, w, cond, n, conditioned);
            if (trace) trace->push_back(x);
        }
    }
    return img;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& z, const std::vector<torch::Tensor>& noise,
                                     const torch::Tensor& cond, std::vector<torch::Tensor>* trace) {
    return synthesis(mapping(z, cond), noise, cond, trace);
}

// --- Discriminator -----------------------------------------------------------

DiscriminatorImpl::DiscriminatorImpl(const DiscriminatorConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int top = cfg_.resolution;
    from_rgb_ = register_module("from_rgb", EqualConv(3, cfg_.channels_at(top), 1, true, true, false));
    for (int res = top; res > 4; res /= 2) {
        Block b;
        const int cin = cfg_.channels_at(res), cout = cfg_.channels_at(res / 2);
        const auto prefix = "b" + std::to_string(res);
        b.conv0 = register_module(prefix + "_conv0", EqualConv(cin, cin, 3, true, true, false));
        b.conv1 = register_module(prefix + "_conv1", EqualConv(cin, cout, 3, true, true, true));
        b.skip = register_module(prefix + "_skip", EqualConv(cin, cout, 1, false, false, true));
        blocks_.push_back(b);
    }
    const int c4 = cfg_.channels_at(4);
    const int feat = cfg_.resolved_feature_dim();
    epilogue_conv_ = register_module("epilogue_conv", EqualConv(c4 + 1, c4, 3, true, true, false));
    epilogue_fc_ = register_module("epilogue_fc", EqualLinear(c4 * 16, c4, true));
    feature_head_ = register_module("feature_head", EqualLinear(c4, feat, false));
    for (int i = 0; i < cfg_.embed_depth; ++i) {
        const bool last = i + 1 == cfg_.embed_depth;
        embed_layers_.push_back(register_module(
            "embed" + std::to_string(i), EqualLinear(i == 0 ? cfg_.conditioning_dim : feat, feat, !last)));
    }
}

torch::Tensor DiscriminatorImpl::features(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != 3 || x.size(2) != cfg_.resolution || x.size(3) != cfg_.resolution)
        throw ModelError("discriminator input has wrong shape");
    auto h = from_rgb_->forward(x);
    for (auto& b : blocks_) {
        auto y = b.skip->forward(h);
        h = b.conv1->forward(b.conv0->forward(h));
        h = (y + h) * std::sqrt(0.5);
    }
    h = minibatch_stddev(h, cfg_.mbstd_group);
    h = epilogue_conv_->forward(h);
    h = epilogue_fc_->forward(h.flatten(1));
    return feature_head_->forward(h);
}

torch::Tensor DiscriminatorImpl::embed(const torch::Tensor& cond) {
    if (cond.dim() != 2 || cond.size(1) != cfg_.conditioning_dim)
        throw ModelError("conditioning batch has wrong shape");
    auto e = cond;
    for (auto& layer : embed_layers_) e = layer->forward(e);
    return e;
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
    if (cond.size(0) != x.size(0)) throw ModelError("image and conditioning batch sizes differ");
    auto e = embed(cond);
    auto norm = e.norm(2, 1, true);
    const double smallest = norm.min().item<double>();
    if (!(smallest > 0.0) || !std::isfinite(smallest))
        throw ModelError("conditioning embedding vanished; cannot normalize");
    return ((e / norm) * features(x)).sum(1);
}

std::vector<torch::Tensor> DiscriminatorImpl::trunk_parameters() {
    std::vector<torch::Tensor> out;
    for (const auto& item : named_parameters()) {
        if (item.key().rfind("embed", 0) != 0) out.push_back(item.value());
    }
    return out;
}

// --- Sampling ----------------------------------------------------------------

torch::Tensor normal_tensor(Rng& rng, at::IntArrayRef shape) {
    auto out = torch::empty(shape, torch::kFloat);
    float* p = out.data_ptr<float>();
    const auto n = out.numel();
    for (int64_t i = 0; i < n; ++i) p[i] = static_cast<float>(rng.normal());
    return out;
}

torch::Tensor sample_latent(Rng& rng, int batch, int latent_dim) {
    return normal_tensor(rng, {batch, latent_dim});
}

std::vector<torch::Tensor> sample_noise(Rng& rng, const std::vector<int>& resolutions, int batch) {
    std::vector<torch::Tensor> out;
    out.reserve(resolutions.size());
    for (int r : resolutions) out.push_back(r > 0 ? normal_tensor(rng, {batch, 1, r, r}) : torch::Tensor());
    return out;
}

bool parameters_finite(const torch::nn::Module& module) {
    torch::NoGradGuard guard;
    for (const auto& p : module.parameters()) {
        if (!torch::isfinite(p).all().item<bool>()) return false;
    }
    return true;
}

torch::Tensor to_unit_range(const torch::Tensor& images) {
    return ((images + 1.0) * 0.5).clamp(0.0, 1.0);
}

}  // namespace cyclelapse
