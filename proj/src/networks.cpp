#include "adaptparse/networks.hpp"

#include <algorithm>

#include "adaptparse/rng.hpp"

namespace adaptparse {

void ScaleProfile::validate() const {
    for (int c : stage_channels) {
        if (c <= 0) throw NumericalError("profile: stage channels must be positive");
    }
    if (comp_base_channels <= 0) throw NumericalError("profile: comp_base_channels must be positive");
    if (num_residual_blocks <= 0 || num_residual_blocks % 3 != 0) {
        throw NumericalError("profile: num_residual_blocks must be a positive multiple of 3, got " +
                             std::to_string(num_residual_blocks));
    }
    if (aspp_dilations.empty()) throw NumericalError("profile: aspp_dilations must be non-empty");
    for (int d : aspp_dilations) {
        if (d < 1) throw NumericalError("profile: aspp dilations must be >= 1");
    }
    if (label_adv_stride2_layers < 1) {
        throw NumericalError("profile: label_adv_stride2_layers must be >= 1");
    }
    if (num_classes < 2) throw NumericalError("profile: num_classes must be >= 2");
    if (input_h < 16 || input_w < 16) {
        throw NumericalError("profile: input must be at least 16x16, got " + std::to_string(input_h) +
                             "x" + std::to_string(input_w));
    }
    // The compensation path halves resolution once per block group; it must
    // end up at the extractor stride.
    const int pools = num_residual_blocks / 3;
    const int comp_stride = 1 << pools;
    if (split_stride() * comp_stride != extractor_stride()) {
        throw NumericalError("profile: compensation path stride " + std::to_string(comp_stride) +
                             " (from " + std::to_string(num_residual_blocks) +
                             " residual blocks) does not align with extractor stride 8");
    }
}

NetworkInstance::NetworkInstance(std::string name, DType dtype) : name_(std::move(name)), dtype_(dtype) {}

int NetworkInstance::add_param(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    params_.push_back({name, std::move(t)});
    return static_cast<int>(params_.size() - 1);
}

int NetworkInstance::add_stats(const std::string& name, std::int64_t channels) {
    stats_.push_back({name, BatchNormState::make(channels, dtype_)});
    return static_cast<int>(stats_.size() - 1);
}

Tape::Value NetworkInstance::forward_range(Tape& tape, Tape::Value in, std::size_t begin,
                                           std::size_t end, bool trainable, bool update_stats) {
    Tape::TagScope scope(tape, name_);
    std::vector<Tape::Value> stack{in};
    const auto top = [&]() -> Tape::Value& {
        if (stack.empty()) throw NumericalError(name_ + ": layer program underflow");
        return stack.back();
    };
    for (std::size_t i = begin; i < end && i < layers_.size(); ++i) {
        const LayerOp& op = layers_[i];
        if (const auto* conv = std::get_if<ConvSpec>(&op)) {
            Tape::Value w = tape.param(params_[static_cast<std::size_t>(conv->weight)].tensor, trainable);
            Tape::Value b{};
            if (conv->bias >= 0) {
                b = tape.param(params_[static_cast<std::size_t>(conv->bias)].tensor, trainable);
            }
            top() = tape.conv2d(top(), w, b, conv->stride, conv->dilation, conv->padding);
        } else if (const auto* pool = std::get_if<PoolSpec>(&op)) {
            top() = tape.max_pool2d(top(), pool->window, pool->stride, pool->padding, pool->ceil_mode);
        } else if (const auto* norm = std::get_if<NormSpec>(&op)) {
            Tape::Value g = tape.param(params_[static_cast<std::size_t>(norm->gamma)].tensor, trainable);
            Tape::Value b = tape.param(params_[static_cast<std::size_t>(norm->beta)].tensor, trainable);
            top() = tape.batch_norm2d(top(), g, b, stats_[static_cast<std::size_t>(norm->stats)].state,
                                      train_mode_, norm->momentum, norm->eps,
                                      update_stats && train_mode_);
        } else if (const auto* act = std::get_if<ActSpec>(&op)) {
            top() = tape.activation(top(), act->kind, act->slope);
        } else if (std::holds_alternative<PushOp>(op)) {
            stack.push_back(stack.back());
        } else if (std::holds_alternative<SwapOp>(op)) {
            if (stack.size() < 2) throw NumericalError(name_ + ": layer program underflow");
            std::swap(stack[stack.size() - 1], stack[stack.size() - 2]);
        } else if (std::holds_alternative<AddOp>(op)) {
            if (stack.size() < 2) throw NumericalError(name_ + ": layer program underflow");
            const Tape::Value a = stack.back();
            stack.pop_back();
            const Tape::Value b = stack.back();
            stack.pop_back();
            stack.push_back(tape.elementwise_add(b, a));
        }
    }
    if (stack.size() != 1 && end >= layers_.size()) {
        throw NumericalError(name_ + ": layer program left " + std::to_string(stack.size()) +
                             " values on the stack");
    }
    return stack.back();
}

Tape::Value NetworkInstance::forward(Tape& tape, Tape::Value in, bool trainable, bool update_stats) {
    return forward_range(tape, in, 0, layers_.size(), trainable, update_stats);
}

std::vector<std::pair<std::string, Tensor*>> NetworkInstance::named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.emplace_back(p.name, &p.tensor);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> NetworkInstance::named_state() {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& s : stats_) {
        out.emplace_back(s.name + "/running_mean", &s.state.running_mean);
        out.emplace_back(s.name + "/running_var", &s.state.running_var);
    }
    return out;
}

std::vector<Tensor*> NetworkInstance::parameters() {
    std::vector<Tensor*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(&p.tensor);
    return out;
}

void NetworkInstance::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

namespace {

Tensor normal_tensor(std::vector<std::int64_t> dims, double stddev, Rng& rng, DType dtype) {
    Tensor t(std::move(dims), dtype);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, rng.normal(0.0, stddev));
    return t;
}

constexpr double kInitStd = 0.02;

struct NetBuilder {
    NetworkInstance net;
    Rng rng;

    NetBuilder(const char* name, DType dtype, std::uint64_t seed)
        : net(name, dtype), rng(derive_seed(seed, name)) {}

    // conv + optional bias; bias is dropped when a batch norm follows.
    void conv(const std::string& name, int in_ch, int out_ch, int k, int stride, int dilation,
              int padding, bool bias) {
        ConvSpec spec;
        spec.weight = net.add_param(name + "/weight",
                                    normal_tensor({out_ch, in_ch, k, k}, kInitStd, rng, net.dtype()));
        if (bias) {
            spec.bias = net.add_param(name + "/bias", Tensor::zeros({out_ch}, net.dtype()));
        }
        spec.stride = stride;
        spec.dilation = dilation;
        spec.padding = padding;
        net.push_layer(spec);
    }

    void norm(const std::string& name, int channels) {
        NormSpec spec;
        spec.gamma = net.add_param(name + "/gamma", Tensor::full({channels}, 1.0, net.dtype()));
        spec.beta = net.add_param(name + "/beta", Tensor::zeros({channels}, net.dtype()));
        spec.stats = net.add_stats(name, channels);
        net.push_layer(spec);
    }

    void relu() { net.push_layer(ActSpec{ActKind::Relu, 0.0}); }
    void leaky_relu(double slope) { net.push_layer(ActSpec{ActKind::LeakyRelu, slope}); }
    void pool(int window, int stride, int padding, bool ceil_mode) {
        net.push_layer(PoolSpec{window, stride, padding, ceil_mode});
    }
};

}  // namespace

NetworkInstance build_extractor(const ScaleProfile& profile, DType dtype, std::uint64_t seed) {
    profile.validate();
    NetBuilder b("E", dtype, seed);
    b.net.declare_input_channels(3);
    const int convs_per_stage[5] = {2, 2, 3, 3, 3};
    int in_ch = 3;
    for (int stage = 0; stage < 5; ++stage) {
        const int out_ch = profile.stage_channels[static_cast<std::size_t>(stage)];
        const int dilation = stage == 4 ? 2 : 1;
        for (int c = 0; c < convs_per_stage[stage]; ++c) {
            const std::string name =
                "stage" + std::to_string(stage + 1) + "/conv" + std::to_string(c + 1);
            b.conv(name, c == 0 ? in_ch : out_ch, out_ch, 3, 1, dilation, dilation, /*bias=*/true);
            b.relu();
        }
        if (stage < 3) {
            b.pool(2, 2, 0, /*ceil_mode=*/true);
        } else {
            b.pool(3, 1, 1, /*ceil_mode=*/false);
        }
        if (stage == 0) {
            b.net.declare_split(static_cast<int>(b.net.layer_count()));
        }
        in_ch = out_ch;
    }
    return std::move(b.net);
}

NetworkInstance build_compensator(const ScaleProfile& profile, DType dtype, std::uint64_t seed) {
    profile.validate();
    NetBuilder b("C", dtype, seed);
    const int in_ch = profile.stage_channels[0];
    b.net.declare_input_channels(in_ch);
    int width = profile.comp_base_channels;
    b.conv("stem", in_ch, width, 7, 1, 1, 3, /*bias=*/true);
    b.relu();
    const int groups = profile.num_residual_blocks / 3;
    for (int g = 0; g < groups; ++g) {
        for (int blk = 0; blk < 3; ++blk) {
            const std::string name =
                "block" + std::to_string(g * 3 + blk + 1);
            b.net.push_layer(PushOp{});
            b.conv(name + "/conv1", width, width, 3, 1, 1, 1, /*bias=*/false);
            b.norm(name + "/bn1", width);
            b.relu();
            b.conv(name + "/conv2", width, width, 3, 1, 1, 1, /*bias=*/false);
            b.norm(name + "/bn2", width);
            b.net.push_layer(AddOp{});
            b.relu();
        }
        b.pool(2, 2, 0, /*ceil_mode=*/true);
        b.conv("reduce" + std::to_string(g + 1), width, width * 2, 3, 1, 1, 1, /*bias=*/true);
        b.relu();
        width *= 2;
    }
    // Signed additive correction: no terminal nonlinearity.
    b.conv("out", width, profile.stage_channels[4], 3, 1, 1, 1, /*bias=*/true);
    return std::move(b.net);
}

NetworkInstance build_labeler(const ScaleProfile& profile, DType dtype, std::uint64_t seed) {
    profile.validate();
    NetBuilder b("L", dtype, seed);
    const int feat = profile.stage_channels[4];
    b.net.declare_input_channels(feat);
    b.conv("fc6", feat, feat, 3, 1, 4, 4, /*bias=*/true);
    b.relu();
    b.conv("fc7", feat, feat, 1, 1, 1, 0, /*bias=*/true);
    b.relu();
    b.conv("fc8", feat, profile.num_classes, 1, 1, 1, 0, /*bias=*/true);
    return std::move(b.net);
}

NetworkInstance build_feature_adversary(const ScaleProfile& profile, DType dtype, std::uint64_t seed) {
    profile.validate();
    NetBuilder b("A_f", dtype, seed);
    const int feat = profile.stage_channels[4];
    b.net.declare_input_channels(feat);
    const int n = static_cast<int>(profile.aspp_dilations.size());
    const auto branch = [&](int i) {
        const int d = profile.aspp_dilations[static_cast<std::size_t>(i)];
        const std::string name = "branch" + std::to_string(i + 1);
        b.conv(name + "/fc6", feat, feat, 3, 1, d, d, /*bias=*/true);
        b.relu();
        b.conv(name + "/fc7", feat, feat, 1, 1, 1, 0, /*bias=*/true);
        b.relu();
    };
    for (int i = 0; i < n - 1; ++i) {
        b.net.push_layer(PushOp{});
        branch(i);
        b.net.push_layer(SwapOp{});
    }
    branch(n - 1);
    for (int i = 0; i < n - 1; ++i) b.net.push_layer(AddOp{});
    b.conv("out", feat, 1, 3, 1, 1, 1, /*bias=*/true);
    return std::move(b.net);
}

NetworkInstance build_label_adversary(const ScaleProfile& profile, DType dtype, std::uint64_t seed) {
    profile.validate();
    NetBuilder b("A_l", dtype, seed);
    b.net.declare_input_channels(profile.num_classes);
    int in_ch = profile.num_classes;
    for (int i = 0; i < profile.label_adv_stride2_layers; ++i) {
        const int out_ch = profile.stage_channels[0] << i;
        const std::string name = "down" + std::to_string(i + 1);
        b.conv(name, in_ch, out_ch, 5, 2, 1, 2, /*bias=*/false);
        b.norm(name + "/bn", out_ch);
        b.leaky_relu(0.2);
        in_ch = out_ch;
    }
    b.conv("out", in_ch, 1, 5, 1, 1, 2, /*bias=*/true);
    return std::move(b.net);
}

ParseResult forward_parse(NetworkInstance& extractor, NetworkInstance& labeler, const Tensor& image) {
    if (extractor.train_mode() || labeler.train_mode()) {
        throw NumericalError("forward_parse requires E and L in eval mode");
    }
    Tensor batched;
    const Tensor* input = &image;
    if (image.rank() == 3) {
        batched = Tensor(std::vector<std::int64_t>{1, image.dim(0), image.dim(1), image.dim(2)},
                         image.dtype());
        std::copy(image.bytes().begin(), image.bytes().end(), batched.bytes().begin());
        input = &batched;
    } else if (image.rank() != 4) {
        throw ShapeError("forward_parse: image must be rank 3 or 4, got " + dims_to_string(image.dims()));
    }
    Tape tape(extractor.dtype());
    const Tape::Value x = tape.leaf(*input);
    const Tape::Value feat = extractor.forward(tape, x, /*trainable=*/false, /*update_stats=*/false);
    const Tape::Value scores = labeler.forward(tape, feat, /*trainable=*/false, /*update_stats=*/false);
    Tape::Value probs;
    {
        Tape::TagScope scope(tape, labeler.name());
        probs = tape.softmax_channels(scores);
    }
    return {tape.value_of(probs), tape.trace()};
}

CompensatedForward forward_compensated(Tape& tape, NetworkInstance& extractor,
                                       NetworkInstance& compensator, Tape::Value image,
                                       bool extractor_trainable, bool compensator_trainable,
                                       bool update_stats) {
    const int split = extractor.split_index();
    if (split < 0) throw NumericalError("extractor lacks a declared split index");
    CompensatedForward out;
    out.split_feat = extractor.forward_range(tape, image, 0, static_cast<std::size_t>(split),
                                             extractor_trainable, update_stats);
    out.plain_feat =
        extractor.forward_range(tape, out.split_feat, static_cast<std::size_t>(split),
                                extractor.layer_count(), extractor_trainable, update_stats);
    const Tape::Value corr =
        compensator.forward(tape, out.split_feat, compensator_trainable, update_stats);
    const Tensor& a = tape.value_of(out.plain_feat);
    const Tensor& b = tape.value_of(corr);
    if (a.dims() != b.dims()) {
        throw ShapeError("compensator output " + dims_to_string(b.dims()) +
                         " does not match extractor output " + dims_to_string(a.dims()));
    }
    {
        Tape::TagScope scope(tape, compensator.name());
        out.comp_feat = tape.elementwise_add(out.plain_feat, corr);
    }
    return out;
}

}  // namespace adaptparse
