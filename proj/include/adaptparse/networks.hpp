#pragma once

#include <string>
#include <variant>
#include <vector>

#include "adaptparse/autodiff.hpp"
#include "adaptparse/profile.hpp"

namespace adaptparse {

// Layer program ops. Forward runs a small value stack so residual skips and
// parallel branches stay expressible in one flat layer list.
struct ConvSpec {
    int weight = -1;
    int bias = -1;  // -1: no bias (convs feeding a batch-norm)
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};
struct PoolSpec {
    int window = 2;
    int stride = 2;
    int padding = 0;
    bool ceil_mode = false;
};
struct NormSpec {
    int gamma = -1;
    int beta = -1;
    int stats = -1;
    double momentum = 0.1;
    double eps = 1e-5;
};
struct ActSpec {
    ActKind kind = ActKind::Relu;
    double slope = 0.0;
};
struct PushOp {};  // duplicate stack top
struct SwapOp {};  // swap top two
struct AddOp {};   // pop two, push elementwise sum

using LayerOp = std::variant<ConvSpec, PoolSpec, NormSpec, ActSpec, PushOp, SwapOp, AddOp>;

/// One of E, C, L, A_f, A_l: an ordered layer program plus its parameter and
/// batch-norm-state storage. Value semantics; clone() snapshots everything.
/// Single writer: one trainer mutates parameters and running stats.
class NetworkInstance {
public:
    NetworkInstance(std::string name, DType dtype);

    const std::string& name() const { return name_; }
    DType dtype() const { return dtype_; }
    bool train_mode() const { return train_mode_; }
    void set_train_mode(bool m) { train_mode_ = m; }
    int split_index() const { return split_index_; }
    int input_channels() const { return input_channels_; }
    std::size_t layer_count() const { return layers_.size(); }
    const std::vector<LayerOp>& layers() const { return layers_; }

    /// Runs layers [begin, end) from the given input. When trainable is
    /// false every parameter enters the tape as a constant, so no gradient
    /// reaches this network (its graph stays differentiable w.r.t. inputs).
    Tape::Value forward_range(Tape& tape, Tape::Value in, std::size_t begin, std::size_t end,
                              bool trainable, bool update_stats);
    Tape::Value forward(Tape& tape, Tape::Value in, bool trainable = true, bool update_stats = true);

    std::vector<std::pair<std::string, Tensor*>> named_parameters();
    std::vector<std::pair<std::string, Tensor*>> named_state();  // BN running stats
    std::vector<Tensor*> parameters();
    void zero_grads();
    NetworkInstance clone() const { return *this; }

    // Builder surface.
    int add_param(const std::string& name, Tensor t);
    int add_stats(const std::string& name, std::int64_t channels);
    void push_layer(LayerOp op) { layers_.push_back(op); }
    void declare_split(int index) { split_index_ = index; }
    void declare_input_channels(int c) { input_channels_ = c; }
    Tensor& param(int idx) { return params_[static_cast<std::size_t>(idx)].tensor; }
    const Tensor& param(int idx) const { return params_[static_cast<std::size_t>(idx)].tensor; }

private:
    struct NamedParam {
        std::string name;
        Tensor tensor;
    };
    struct NamedStats {
        std::string name;
        BatchNormState state;
    };

    std::string name_;
    DType dtype_;
    std::vector<LayerOp> layers_;
    std::vector<NamedParam> params_;
    std::vector<NamedStats> stats_;
    int split_index_ = -1;
    int input_channels_ = -1;
    bool train_mode_ = true;
};

/// Temporarily flips a network to eval mode.
class EvalModeGuard {
public:
    explicit EvalModeGuard(NetworkInstance& net) : net_(net), prev_(net.train_mode()) {
        net_.set_train_mode(false);
    }
    ~EvalModeGuard() { net_.set_train_mode(prev_); }
    EvalModeGuard(const EvalModeGuard&) = delete;
    EvalModeGuard& operator=(const EvalModeGuard&) = delete;

private:
    NetworkInstance& net_;
    bool prev_;
};

// VGG-style extractor: five conv stages, stride-2 ceil-mode pools after
// stages 1-3, stride-1 pools after stages 4-5 with dilation-2 convs in
// stage 5, overall stride 8. The conv1..pool1 prefix is the declared split.
NetworkInstance build_extractor(const ScaleProfile& profile, DType dtype, std::uint64_t seed);

// Residual compensator: 7x7 stem, residual blocks in groups of three, a
// stride-2 pool plus 3x3 conv after each group, and a final 3x3 conv mapping
// to the extractor's output width.
NetworkInstance build_compensator(const ScaleProfile& profile, DType dtype, std::uint64_t seed);

// fc6 (3x3, dilation 4) / fc7 (1x1) / fc8 (1x1 -> num_classes).
NetworkInstance build_labeler(const ScaleProfile& profile, DType dtype, std::uint64_t seed);

// ASPP head: parallel dilated 3x3 + 1x1 branches summed, then 3x3 -> 1
// channel, padding-preserving, no terminal nonlinearity.
NetworkInstance build_feature_adversary(const ScaleProfile& profile, DType dtype, std::uint64_t seed);

// Stack of 5x5 stride-2 convs with batch norm and LeakyReLU, then a 5x5
// stride-1 conv to a 1-channel confidence map.
NetworkInstance build_label_adversary(const ScaleProfile& profile, DType dtype, std::uint64_t seed);

struct ParseResult {
    Tensor probs;  // [N, K, h, w] channel-wise softmax of L(E(x))
    std::vector<TraceRecord> trace;
};

/// Inference path: softmax(L(E(image))). Requires E and L in eval mode; the
/// compensator and adversaries take no part, which the trace can prove.
ParseResult forward_parse(NetworkInstance& extractor, NetworkInstance& labeler, const Tensor& image);

struct CompensatedForward {
    Tape::Value split_feat;  // E1(x)
    Tape::Value plain_feat;  // E(x)
    Tape::Value comp_feat;   // E(x) + C(E1(x))
};

/// Shared-prefix forward: E1 activations are computed once and feed both the
/// extractor remainder and the compensator.
CompensatedForward forward_compensated(Tape& tape, NetworkInstance& extractor,
                                       NetworkInstance& compensator, Tape::Value image,
                                       bool extractor_trainable, bool compensator_trainable,
                                       bool update_stats);

}  // namespace adaptparse
