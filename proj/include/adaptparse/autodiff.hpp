#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

enum class ActKind { Relu, LeakyRelu };

/// One primitive application: name plus the tag of the network that owned
/// the enclosing forward (empty outside any network scope). The trace of a
/// pass backs the inference-purity checks.
struct TraceRecord {
    const char* op;
    std::string tag;
};

/// Per-layer batch-norm running statistics, updated on train-mode forwards.
struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]

    static BatchNormState make(std::int64_t channels, DType dtype);
};

/// Reverse-mode tape. Nodes are appended in execution order, so the reverse
/// sweep visits them in reverse topological order exactly once. A tape and
/// its tensors stay on one thread; distinct tapes may run concurrently.
///
/// Leaves reference external tensors and must not outlive them; a tape is a
/// per-step object. Gradients of bound parameter tensors accumulate
/// additively across backward() calls.
class Tape {
public:
    struct Value {
        std::int32_t id = -1;
        bool valid() const { return id >= 0; }
    };

    explicit Tape(DType dtype);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    DType dtype() const { return dtype_; }

    /// Constant leaf; gradients never flow past it.
    Value leaf(const Tensor& t);
    /// Differentiable leaf bound to an external tensor. Gradients accumulate
    /// into t.grad() when trainable and t.requires_grad().
    Value param(Tensor& t, bool trainable = true);

    Value conv2d(Value input, Value kernel, Value bias, int stride, int dilation, int padding);
    Value max_pool2d(Value input, int window, int stride, int padding = 0, bool ceil_mode = false);
    Value batch_norm2d(Value input, Value gamma, Value beta, BatchNormState& stats, bool train_mode,
                       double momentum, double eps, bool update_stats = true);
    Value activation(Value input, ActKind kind, double slope = 0.0);
    Value elementwise_add(Value a, Value b);
    Value elementwise_mul(Value a, Value b);
    Value scale(Value a, double s);
    /// Identity forward; multiplies the flowing gradient by s.
    Value grad_scale(Value a, double s);
    Value softmax_channels(Value scores);
    Value sum(Value a);
    /// (1/2) * mean((x - c)^2) over all elements; scalar output.
    Value half_mse_to_const(Value a, double c);
    /// Mean over non-ignored pixels of -log softmax(scores)[label].
    /// scores [N,K,h,w], labels u8 [N,h,w]; labels stay outside the graph.
    Value cross_entropy_mean(Value scores, const Tensor& labels, std::optional<int> ignore_id);

    const Tensor& value_of(Value v) const;

    /// Accumulates dLoss/dLeaf into every reachable bound parameter.
    /// Repeated calls accumulate additively.
    void backward(Value loss);

    const std::vector<TraceRecord>& trace() const { return trace_; }
    std::size_t node_count() const { return nodes_.size(); }

    /// Hash over every branch decision (activation signs, pool argmaxes)
    /// taken during forwards on this tape. Two evaluations with different
    /// signatures straddle a nondifferentiable point.
    std::uint64_t kink_signature() const { return kink_sig_; }

    class TagScope {
    public:
        TagScope(Tape& tape, std::string tag);
        ~TagScope();
        TagScope(const TagScope&) = delete;
        TagScope& operator=(const TagScope&) = delete;

    private:
        Tape& tape_;
        std::string prev_;
    };

private:
    struct Node {
        const char* op = nullptr;
        std::string tag;
        std::array<std::int32_t, 3> inputs{-1, -1, -1};
        int n_inputs = 0;
        const Tensor* external = nullptr;  // leaves
        Tensor* bound = nullptr;           // trainable leaves
        Tensor value;                      // computed nodes
        Tensor grad;
        bool needs_grad = false;
        std::function<void(Tape&, std::int32_t)> backward_fn;
    };

    std::int32_t add_node(const char* op, std::initializer_list<std::int32_t> inputs, Tensor value,
                          bool needs_grad, bool traced = true);
    const Tensor& val(std::int32_t id) const;
    Tensor& grad_of(std::int32_t id);
    bool node_needs_grad(std::int32_t id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
    void check_value(Value v, const char* op) const;
    void fold_kink_bit(bool bit);
    void fold_kink_u32(std::uint32_t v);

    DType dtype_;
    std::vector<Node> nodes_;
    std::vector<TraceRecord> trace_;
    std::string tag_;
    std::uint64_t kink_sig_;

    friend class TagScope;
};

}  // namespace adaptparse
