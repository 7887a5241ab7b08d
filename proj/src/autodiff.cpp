#include "adaptparse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace adaptparse {

namespace {

// Output extent of a strided, dilated cross-correlation.
std::int64_t conv_out_extent(std::int64_t in, int k, int stride, int dilation, int padding) {
    return (in + 2 * padding - static_cast<std::int64_t>(dilation) * (k - 1) - 1) / stride + 1;
}

// Valid kernel-tap range [lo, hi) for one output coordinate: taps whose
// input coordinate o*stride - padding + t*dilation lands inside [0, in).
std::pair<int, int> tap_range(std::int64_t o, int k, int stride, int dilation, int padding,
                              std::int64_t in) {
    const std::int64_t base = o * stride - padding;
    int lo = 0;
    while (lo < k && base + static_cast<std::int64_t>(lo) * dilation < 0) ++lo;
    int hi = k;
    while (hi > lo && base + static_cast<std::int64_t>(hi - 1) * dilation >= in) --hi;
    return {lo, hi};
}

template <class T>
void conv2d_forward(const Tensor& in, const Tensor& kernel, const Tensor* bias, Tensor& out,
                    int stride, int dilation, int padding) {
    const auto x = in.as<T>();
    const auto w = kernel.as<T>();
    auto y = out.as<T>();
    const std::int64_t N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::int64_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::int64_t Ho = out.dim(2), Wo = out.dim(3);
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            const T b = bias ? bias->as<T>()[static_cast<std::size_t>(co)] : T(0);
            T* yp = &y[static_cast<std::size_t>(((n * Cout + co) * Ho) * Wo)];
            for (std::int64_t i = 0; i < Ho * Wo; ++i) yp[i] = b;
        }
        for (std::int64_t co = 0; co < Cout; ++co) {
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const T* xp = &x[static_cast<std::size_t>(((n * Cin + ci) * H) * W)];
                const T* wp = &w[static_cast<std::size_t>(((co * Cin + ci) * kh) * kw)];
                T* yp = &y[static_cast<std::size_t>(((n * Cout + co) * Ho) * Wo)];
                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                    const auto [klo, khi] = tap_range(oh, static_cast<int>(kh), stride, dilation, padding, H);
                    for (int t = klo; t < khi; ++t) {
                        const std::int64_t ih = oh * stride - padding + static_cast<std::int64_t>(t) * dilation;
                        for (int u = 0; u < kw; ++u) {
                            const T wv = wp[t * kw + u];
                            // Valid ow range for this tap: 0 <= ow*stride - padding + u*dilation < W.
                            std::int64_t lo = 0, hi = Wo;
                            const std::int64_t off = static_cast<std::int64_t>(u) * dilation - padding;
                            while (lo < hi && lo * stride + off < 0) ++lo;
                            while (hi > lo && (hi - 1) * stride + off >= W) --hi;
                            const T* xrow = &xp[ih * W];
                            T* yrow = &yp[oh * Wo];
                            for (std::int64_t ow = lo; ow < hi; ++ow) {
                                yrow[ow] += wv * xrow[ow * stride + off];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward(const Tensor& in, const Tensor& kernel, const Tensor& gout, Tensor* gin,
                     Tensor* gkernel, Tensor* gbias, int stride, int dilation, int padding) {
    const auto x = in.as<T>();
    const auto w = kernel.as<T>();
    const auto g = gout.as<const T>();
    const std::int64_t N = in.dim(0), Cin = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::int64_t Cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const std::int64_t Ho = gout.dim(2), Wo = gout.dim(3);
    if (gbias) {
        auto gb = gbias->as<T>();
        for (std::int64_t co = 0; co < Cout; ++co) {
            T acc = 0;
            for (std::int64_t n = 0; n < N; ++n) {
                const T* gp = &g[static_cast<std::size_t>(((n * Cout + co) * Ho) * Wo)];
                for (std::int64_t i = 0; i < Ho * Wo; ++i) acc += gp[i];
            }
            gb[static_cast<std::size_t>(co)] += acc;
        }
    }
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t co = 0; co < Cout; ++co) {
            const T* gp = &g[static_cast<std::size_t>(((n * Cout + co) * Ho) * Wo)];
            for (std::int64_t ci = 0; ci < Cin; ++ci) {
                const T* xp = &x[static_cast<std::size_t>(((n * Cin + ci) * H) * W)];
                const T* wp = &w[static_cast<std::size_t>(((co * Cin + ci) * kh) * kw)];
                T* gxp = gin ? &gin->as<T>()[static_cast<std::size_t>(((n * Cin + ci) * H) * W)] : nullptr;
                T* gwp = gkernel
                             ? &gkernel->as<T>()[static_cast<std::size_t>(((co * Cin + ci) * kh) * kw)]
                             : nullptr;
                for (std::int64_t oh = 0; oh < Ho; ++oh) {
                    const auto [klo, khi] = tap_range(oh, static_cast<int>(kh), stride, dilation, padding, H);
                    for (int t = klo; t < khi; ++t) {
                        const std::int64_t ih = oh * stride - padding + static_cast<std::int64_t>(t) * dilation;
                        for (int u = 0; u < kw; ++u) {
                            std::int64_t lo = 0, hi = Wo;
                            const std::int64_t off = static_cast<std::int64_t>(u) * dilation - padding;
                            while (lo < hi && lo * stride + off < 0) ++lo;
                            while (hi > lo && (hi - 1) * stride + off >= W) --hi;
                            const T* grow = &gp[oh * Wo];
                            const T* xrow = &xp[ih * W];
                            if (gxp) {
                                const T wv = wp[t * kw + u];
                                T* gxrow = &gxp[ih * W];
                                for (std::int64_t ow = lo; ow < hi; ++ow) {
                                    gxrow[ow * stride + off] += wv * grow[ow];
                                }
                            }
                            if (gwp) {
                                T acc = 0;
                                for (std::int64_t ow = lo; ow < hi; ++ow) {
                                    acc += grow[ow] * xrow[ow * stride + off];
                                }
                                gwp[t * kw + u] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
}

std::int64_t pool_out_extent(std::int64_t in, int window, int stride, int padding, bool ceil_mode) {
    const std::int64_t base = in + 2 * padding - window;
    std::int64_t out = ceil_mode ? (base + stride - 1) / stride + 1 : base / stride + 1;
    // A window must start inside the input or its left padding.
    if (ceil_mode && (out - 1) * stride >= in + padding) --out;
    return out;
}

template <class T>
void max_pool_forward(const Tensor& in, Tensor& out, std::vector<std::int32_t>& argmax, int window,
                      int stride, int padding) {
    const auto x = in.as<T>();
    auto y = out.as<T>();
    const std::int64_t N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
    const std::int64_t Ho = out.dim(2), Wo = out.dim(3);
    argmax.resize(static_cast<std::size_t>(out.numel()));
    std::int64_t oi = 0;
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t c = 0; c < C; ++c) {
            const T* xp = &x[static_cast<std::size_t>(((n * C + c) * H) * W)];
            for (std::int64_t oh = 0; oh < Ho; ++oh) {
                for (std::int64_t ow = 0; ow < Wo; ++ow, ++oi) {
                    T best = -std::numeric_limits<T>::infinity();
                    std::int32_t best_idx = -1;
                    // First occurrence in row-major window order wins ties.
                    for (int dh = 0; dh < window; ++dh) {
                        const std::int64_t ih = oh * stride - padding + dh;
                        if (ih < 0 || ih >= H) continue;
                        for (int dw = 0; dw < window; ++dw) {
                            const std::int64_t iw = ow * stride - padding + dw;
                            if (iw < 0 || iw >= W) continue;
                            const T v = xp[ih * W + iw];
                            if (v > best) {
                                best = v;
                                best_idx = static_cast<std::int32_t>(ih * W + iw);
                            }
                        }
                    }
                    y[static_cast<std::size_t>(oi)] = best;
                    argmax[static_cast<std::size_t>(oi)] = best_idx;
                }
            }
        }
    }
}

template <class T>
void softmax_forward(const Tensor& scores, Tensor& probs) {
    const auto s = scores.as<T>();
    auto p = probs.as<T>();
    const std::int64_t N = scores.dim(0), K = scores.dim(1), HW = scores.dim(2) * scores.dim(3);
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < HW; ++i) {
            const std::size_t base = static_cast<std::size_t>(n * K * HW + i);
            T mx = s[base];
            for (std::int64_t k = 1; k < K; ++k) mx = std::max(mx, s[base + static_cast<std::size_t>(k * HW)]);
            T z = 0;
            for (std::int64_t k = 0; k < K; ++k) {
                const T e = std::exp(s[base + static_cast<std::size_t>(k * HW)] - mx);
                p[base + static_cast<std::size_t>(k * HW)] = e;
                z += e;
            }
            for (std::int64_t k = 0; k < K; ++k) p[base + static_cast<std::size_t>(k * HW)] /= z;
        }
    }
}

}  // namespace

BatchNormState BatchNormState::make(std::int64_t channels, DType dtype) {
    BatchNormState s;
    s.running_mean = Tensor::zeros({channels}, dtype);
    s.running_var = Tensor::full({channels}, 1.0, dtype);
    return s;
}

Tape::Tape(DType dtype) : dtype_(dtype), kink_sig_(0xCBF29CE484222325ull) {
    if (dtype != DType::F32 && dtype != DType::F64) {
        throw NumericalError("tape dtype must be f32 or f64");
    }
    nodes_.reserve(64);
}

Tape::TagScope::TagScope(Tape& tape, std::string tag) : tape_(tape), prev_(std::move(tape.tag_)) {
    tape_.tag_ = std::move(tag);
}

Tape::TagScope::~TagScope() { tape_.tag_ = std::move(prev_); }

void Tape::fold_kink_bit(bool bit) {
    kink_sig_ ^= static_cast<std::uint64_t>(bit) + 0x9E3779B97F4A7C15ull + (kink_sig_ << 6) + (kink_sig_ >> 2);
}

void Tape::fold_kink_u32(std::uint32_t v) {
    kink_sig_ ^= static_cast<std::uint64_t>(v) + 0x9E3779B97F4A7C15ull + (kink_sig_ << 6) + (kink_sig_ >> 2);
}

const Tensor& Tape::val(std::int32_t id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
}

Tensor& Tape::grad_of(std::int32_t id) { return nodes_[static_cast<std::size_t>(id)].grad; }

const Tensor& Tape::value_of(Value v) const {
    check_value(v, "value_of");
    return val(v.id);
}

void Tape::check_value(Value v, const char* op) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size()) {
        throw NumericalError(std::string(op) + ": value does not belong to this tape");
    }
}

std::int32_t Tape::add_node(const char* op, std::initializer_list<std::int32_t> inputs, Tensor value,
                            bool needs_grad, bool traced) {
    Node n;
    n.op = op;
    n.tag = tag_;
    for (std::int32_t id : inputs) {
        if (id >= 0) n.inputs[static_cast<std::size_t>(n.n_inputs)] = id;
        ++n.n_inputs;
    }
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    if (traced) trace_.push_back({op, tag_});
    return static_cast<std::int32_t>(nodes_.size() - 1);
}

Tape::Value Tape::leaf(const Tensor& t) {
    if (t.dtype() != dtype_ && t.dtype() != DType::U8) {
        throw NumericalError("leaf dtype does not match tape dtype");
    }
    Node n;
    n.op = "leaf";
    n.tag = tag_;
    n.external = &t;
    n.needs_grad = false;
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Value Tape::param(Tensor& t, bool trainable) {
    if (t.dtype() != dtype_) {
        throw NumericalError("parameter dtype does not match tape dtype");
    }
    Node n;
    n.op = "param";
    n.tag = tag_;
    n.external = &t;
    const bool live = trainable && t.requires_grad();
    n.bound = live ? &t : nullptr;
    n.needs_grad = live;
    nodes_.push_back(std::move(n));
    return {static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Value Tape::conv2d(Value input, Value kernel, Value bias, int stride, int dilation, int padding) {
    check_value(input, "conv2d");
    check_value(kernel, "conv2d");
    if (bias.valid()) check_value(bias, "conv2d");
    const Tensor& x = val(input.id);
    const Tensor& w = val(kernel.id);
    if (x.rank() != 4) throw ShapeError("conv2d: input must be rank 4, got " + dims_to_string(x.dims()));
    if (w.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4, got " + dims_to_string(w.dims()));
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d: input channels (dim 1) = " + std::to_string(x.dim(1)) +
                         " but kernel expects " + std::to_string(w.dim(1)));
    }
    if (w.dim(2) % 2 == 0 || w.dim(3) % 2 == 0) {
        throw ShapeError("conv2d: kernel extents must be odd, got " + dims_to_string(w.dims()));
    }
    if (stride < 1 || dilation < 1 || padding < 0) {
        throw ShapeError("conv2d: stride/dilation must be >= 1 and padding >= 0");
    }
    const Tensor* b = nullptr;
    if (bias.valid()) {
        b = &val(bias.id);
        if (b->rank() != 1 || b->dim(0) != w.dim(0)) {
            throw ShapeError("conv2d: bias dim 0 = " + std::to_string(b->dim(0)) +
                             " must equal output channels " + std::to_string(w.dim(0)));
        }
    }
    const std::int64_t Ho = conv_out_extent(x.dim(2), static_cast<int>(w.dim(2)), stride, dilation, padding);
    const std::int64_t Wo = conv_out_extent(x.dim(3), static_cast<int>(w.dim(3)), stride, dilation, padding);
    if (Ho < 1 || Wo < 1) {
        throw ShapeError("conv2d: kernel does not fit input " + dims_to_string(x.dims()));
    }
    Tensor out({x.dim(0), w.dim(0), Ho, Wo}, dtype_);
    if (dtype_ == DType::F32) {
        conv2d_forward<float>(x, w, b, out, stride, dilation, padding);
    } else {
        conv2d_forward<double>(x, w, b, out, stride, dilation, padding);
    }
    const bool needs = node_needs_grad(input.id) || node_needs_grad(kernel.id) ||
                       (bias.valid() && node_needs_grad(bias.id));
    const std::int32_t id = add_node("conv2d", {input.id, kernel.id, bias.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [input, kernel, bias, stride, dilation, padding](Tape& t,
                                                                                     std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            const Tensor& xin = t.val(input.id);
            const Tensor& win = t.val(kernel.id);
            Tensor* gx = t.node_needs_grad(input.id) ? &t.grad_of(input.id) : nullptr;
            Tensor* gw = t.node_needs_grad(kernel.id) ? &t.grad_of(kernel.id) : nullptr;
            Tensor* gb = bias.valid() && t.node_needs_grad(bias.id) ? &t.grad_of(bias.id) : nullptr;
            if (t.dtype_ == DType::F32) {
                conv2d_backward<float>(xin, win, gout, gx, gw, gb, stride, dilation, padding);
            } else {
                conv2d_backward<double>(xin, win, gout, gx, gw, gb, stride, dilation, padding);
            }
        };
    }
    return {id};
}

Tape::Value Tape::max_pool2d(Value input, int window, int stride, int padding, bool ceil_mode) {
    check_value(input, "max_pool2d");
    const Tensor& x = val(input.id);
    if (x.rank() != 4) throw ShapeError("max_pool2d: input must be rank 4");
    if (window < 1 || stride < 1 || padding < 0) {
        throw ShapeError("max_pool2d: window/stride must be >= 1, padding >= 0");
    }
    if (window > x.dim(2) + 2 * padding || window > x.dim(3) + 2 * padding) {
        throw ShapeError("max_pool2d: window " + std::to_string(window) + " larger than padded input " +
                         dims_to_string(x.dims()));
    }
    const std::int64_t Ho = pool_out_extent(x.dim(2), window, stride, padding, ceil_mode);
    const std::int64_t Wo = pool_out_extent(x.dim(3), window, stride, padding, ceil_mode);
    Tensor out({x.dim(0), x.dim(1), Ho, Wo}, dtype_);
    auto argmax = std::make_shared<std::vector<std::int32_t>>();
    if (dtype_ == DType::F32) {
        max_pool_forward<float>(x, out, *argmax, window, stride, padding);
    } else {
        max_pool_forward<double>(x, out, *argmax, window, stride, padding);
    }
    for (const std::int32_t a : *argmax) fold_kink_u32(static_cast<std::uint32_t>(a));
    const bool needs = node_needs_grad(input.id);
    const std::int32_t id = add_node("max_pool2d", {input.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [input, argmax](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            Tensor& gin = t.grad_of(input.id);
            const std::int64_t NC = gout.dim(0) * gout.dim(1);
            const std::int64_t out_hw = gout.dim(2) * gout.dim(3);
            const std::int64_t in_hw = gin.dim(2) * gin.dim(3);
            if (t.dtype_ == DType::F32) {
                auto g = gout.as<const float>();
                auto gi = gin.as<float>();
                for (std::int64_t p = 0; p < NC; ++p)
                    for (std::int64_t i = 0; i < out_hw; ++i)
                        gi[static_cast<std::size_t>(p * in_hw + (*argmax)[static_cast<std::size_t>(p * out_hw + i)])] +=
                            g[static_cast<std::size_t>(p * out_hw + i)];
            } else {
                auto g = gout.as<const double>();
                auto gi = gin.as<double>();
                for (std::int64_t p = 0; p < NC; ++p)
                    for (std::int64_t i = 0; i < out_hw; ++i)
                        gi[static_cast<std::size_t>(p * in_hw + (*argmax)[static_cast<std::size_t>(p * out_hw + i)])] +=
                            g[static_cast<std::size_t>(p * out_hw + i)];
            }
        };
    }
    return {id};
}

Tape::Value Tape::batch_norm2d(Value input, Value gamma, Value beta, BatchNormState& stats,
                               bool train_mode, double momentum, double eps, bool update_stats) {
    check_value(input, "batch_norm2d");
    check_value(gamma, "batch_norm2d");
    check_value(beta, "batch_norm2d");
    const Tensor& x = val(input.id);
    if (x.rank() != 4) throw ShapeError("batch_norm2d: input must be rank 4");
    const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (val(gamma.id).dim(0) != C || val(beta.id).dim(0) != C) {
        throw ShapeError("batch_norm2d: gamma/beta must have " + std::to_string(C) + " channels");
    }
    const std::int64_t m = N * H * W;
    if (train_mode && m < 2) {
        throw NumericalError("batch_norm2d: train mode needs >= 2 elements per channel, got " +
                             std::to_string(m));
    }

    Tensor out(x.dims(), dtype_);
    // x_hat and inverse stddevs are saved for the backward sweep.
    auto xhat = std::make_shared<Tensor>(x.dims(), dtype_);
    auto invstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C));

    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto xs = x.as<const T>();
        const auto gs = val(gamma.id).as<const T>();
        const auto bs = val(beta.id).as<const T>();
        auto ys = out.as<T>();
        auto xh = xhat->as<T>();
        const std::int64_t hw = H * W;
        for (std::int64_t c = 0; c < C; ++c) {
            double mean, var;
            if (train_mode) {
                double s = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* p = &xs[static_cast<std::size_t>(((n * C + c) * hw))];
                    for (std::int64_t i = 0; i < hw; ++i) s += static_cast<double>(p[i]);
                }
                mean = s / static_cast<double>(m);
                double sq = 0.0;
                for (std::int64_t n = 0; n < N; ++n) {
                    const T* p = &xs[static_cast<std::size_t>(((n * C + c) * hw))];
                    for (std::int64_t i = 0; i < hw; ++i) {
                        const double d = static_cast<double>(p[i]) - mean;
                        sq += d * d;
                    }
                }
                var = sq / static_cast<double>(m);
                if (update_stats) {
                    const double unbiased = sq / static_cast<double>(m - 1);
                    stats.running_mean.set(c, (1.0 - momentum) * stats.running_mean.get(c) + momentum * mean);
                    stats.running_var.set(c, (1.0 - momentum) * stats.running_var.get(c) + momentum * unbiased);
                }
            } else {
                mean = stats.running_mean.get(c);
                var = stats.running_var.get(c);
            }
            const double is = 1.0 / std::sqrt(var + eps);
            (*invstd)[static_cast<std::size_t>(c)] = is;
            const T gamma_c = gs[static_cast<std::size_t>(c)];
            const T beta_c = bs[static_cast<std::size_t>(c)];
            for (std::int64_t n = 0; n < N; ++n) {
                const std::size_t base = static_cast<std::size_t>((n * C + c) * hw);
                for (std::int64_t i = 0; i < hw; ++i) {
                    const T h = static_cast<T>((static_cast<double>(xs[base + static_cast<std::size_t>(i)]) - mean) * is);
                    xh[base + static_cast<std::size_t>(i)] = h;
                    ys[base + static_cast<std::size_t>(i)] = gamma_c * h + beta_c;
                }
            }
        }
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});

    const bool needs = node_needs_grad(input.id) || node_needs_grad(gamma.id) || node_needs_grad(beta.id);
    const std::int32_t id = add_node("batch_norm2d", {input.id, gamma.id, beta.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [input, gamma, beta, xhat, invstd, train_mode](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            const std::int64_t N = gout.dim(0), C = gout.dim(1), hw = gout.dim(2) * gout.dim(3);
            const std::int64_t m = N * hw;
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto g = gout.as<const T>();
                const auto xh = xhat->as<const T>();
                const auto gam = t.val(gamma.id).as<const T>();
                Tensor* gin = t.node_needs_grad(input.id) ? &t.grad_of(input.id) : nullptr;
                Tensor* ggam = t.node_needs_grad(gamma.id) ? &t.grad_of(gamma.id) : nullptr;
                Tensor* gbet = t.node_needs_grad(beta.id) ? &t.grad_of(beta.id) : nullptr;
                for (std::int64_t c = 0; c < C; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (std::int64_t n = 0; n < N; ++n) {
                        const std::size_t base = static_cast<std::size_t>((n * C + c) * hw);
                        for (std::int64_t i = 0; i < hw; ++i) {
                            const double gv = static_cast<double>(g[base + static_cast<std::size_t>(i)]);
                            sum_g += gv;
                            sum_gx += gv * static_cast<double>(xh[base + static_cast<std::size_t>(i)]);
                        }
                    }
                    if (ggam) ggam->as<T>()[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
                    if (gbet) gbet->as<T>()[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
                    if (gin) {
                        auto gi = gin->as<T>();
                        const double is = (*invstd)[static_cast<std::size_t>(c)];
                        const double k = static_cast<double>(gam[static_cast<std::size_t>(c)]) * is;
                        for (std::int64_t n = 0; n < N; ++n) {
                            const std::size_t base = static_cast<std::size_t>((n * C + c) * hw);
                            for (std::int64_t i = 0; i < hw; ++i) {
                                const double gv = static_cast<double>(g[base + static_cast<std::size_t>(i)]);
                                double dx;
                                if (train_mode) {
                                    dx = k * (gv - sum_g / static_cast<double>(m) -
                                              static_cast<double>(xh[base + static_cast<std::size_t>(i)]) * sum_gx /
                                                  static_cast<double>(m));
                                } else {
                                    dx = k * gv;
                                }
                                gi[base + static_cast<std::size_t>(i)] += static_cast<T>(dx);
                            }
                        }
                    }
                }
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::activation(Value input, ActKind kind, double slope) {
    check_value(input, "activation");
    if (kind == ActKind::Relu) slope = 0.0;
    if (slope < 0.0 || slope >= 1.0) {
        throw NumericalError("activation: slope must be in [0, 1), got " + std::to_string(slope));
    }
    const Tensor& x = val(input.id);
    Tensor out(x.dims(), dtype_);
    auto mask = std::make_shared<std::vector<bool>>(static_cast<std::size_t>(x.numel()));
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto xs = x.as<const T>();
        auto ys = out.as<T>();
        const T s = static_cast<T>(slope);
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const bool pos = xs[static_cast<std::size_t>(i)] > T(0);
            (*mask)[static_cast<std::size_t>(i)] = pos;
            ys[static_cast<std::size_t>(i)] = pos ? xs[static_cast<std::size_t>(i)] : s * xs[static_cast<std::size_t>(i)];
        }
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    for (std::int64_t i = 0; i < x.numel(); ++i) fold_kink_bit((*mask)[static_cast<std::size_t>(i)]);
    const bool needs = node_needs_grad(input.id);
    const std::int32_t id = add_node("activation", {input.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [input, mask, slope](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            Tensor& gin = t.grad_of(input.id);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto g = gout.as<const T>();
                auto gi = gin.as<T>();
                const T s = static_cast<T>(slope);
                for (std::int64_t i = 0; i < gout.numel(); ++i) {
                    gi[static_cast<std::size_t>(i)] +=
                        (*mask)[static_cast<std::size_t>(i)] ? g[static_cast<std::size_t>(i)] : s * g[static_cast<std::size_t>(i)];
                }
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::elementwise_add(Value a, Value b) {
    check_value(a, "elementwise_add");
    check_value(b, "elementwise_add");
    const Tensor& xa = val(a.id);
    const Tensor& xb = val(b.id);
    if (xa.dims() != xb.dims()) {
        throw ShapeError("elementwise_add: dims mismatch " + dims_to_string(xa.dims()) + " vs " +
                         dims_to_string(xb.dims()));
    }
    Tensor out(xa.dims(), dtype_);
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto pa = xa.as<const T>();
        const auto pb = xb.as<const T>();
        auto po = out.as<T>();
        for (std::int64_t i = 0; i < xa.numel(); ++i)
            po[static_cast<std::size_t>(i)] = pa[static_cast<std::size_t>(i)] + pb[static_cast<std::size_t>(i)];
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    const bool needs = node_needs_grad(a.id) || node_needs_grad(b.id);
    const std::int32_t id = add_node("elementwise_add", {a.id, b.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a, b](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            for (const std::int32_t in_id : {a.id, b.id}) {
                if (!t.node_needs_grad(in_id)) continue;
                Tensor& gi = t.grad_of(in_id);
                const auto run_bw = [&](auto tag) {
                    using T = decltype(tag);
                    const auto g = gout.as<const T>();
                    auto gp = gi.as<T>();
                    for (std::int64_t i = 0; i < gout.numel(); ++i)
                        gp[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)];
                };
                if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
            }
        };
    }
    return {id};
}

Tape::Value Tape::elementwise_mul(Value a, Value b) {
    check_value(a, "elementwise_mul");
    check_value(b, "elementwise_mul");
    const Tensor& xa = val(a.id);
    const Tensor& xb = val(b.id);
    if (xa.dims() != xb.dims()) {
        throw ShapeError("elementwise_mul: dims mismatch " + dims_to_string(xa.dims()) + " vs " +
                         dims_to_string(xb.dims()));
    }
    Tensor out(xa.dims(), dtype_);
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto pa = xa.as<const T>();
        const auto pb = xb.as<const T>();
        auto po = out.as<T>();
        for (std::int64_t i = 0; i < xa.numel(); ++i)
            po[static_cast<std::size_t>(i)] = pa[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(i)];
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    const bool needs = node_needs_grad(a.id) || node_needs_grad(b.id);
    const std::int32_t id = add_node("elementwise_mul", {a.id, b.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a, b](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto g = gout.as<const T>();
                const auto pa = t.val(a.id).as<const T>();
                const auto pb = t.val(b.id).as<const T>();
                if (t.node_needs_grad(a.id)) {
                    auto gp = t.grad_of(a.id).as<T>();
                    for (std::int64_t i = 0; i < gout.numel(); ++i)
                        gp[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(i)];
                }
                if (t.node_needs_grad(b.id)) {
                    auto gp = t.grad_of(b.id).as<T>();
                    for (std::int64_t i = 0; i < gout.numel(); ++i)
                        gp[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(i)] * pa[static_cast<std::size_t>(i)];
                }
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::scale(Value a, double s) {
    check_value(a, "scale");
    const Tensor& xa = val(a.id);
    Tensor out(xa.dims(), dtype_);
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto pa = xa.as<const T>();
        auto po = out.as<T>();
        const T sv = static_cast<T>(s);
        for (std::int64_t i = 0; i < xa.numel(); ++i) po[static_cast<std::size_t>(i)] = sv * pa[static_cast<std::size_t>(i)];
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    const bool needs = node_needs_grad(a.id);
    const std::int32_t id = add_node("scale", {a.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a, s](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            Tensor& gi = t.grad_of(a.id);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto g = gout.as<const T>();
                auto gp = gi.as<T>();
                const T sv = static_cast<T>(s);
                for (std::int64_t i = 0; i < gout.numel(); ++i)
                    gp[static_cast<std::size_t>(i)] += sv * g[static_cast<std::size_t>(i)];
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::grad_scale(Value a, double s) {
    check_value(a, "grad_scale");
    Tensor out = val(a.id);  // identity forward
    out.set_requires_grad(false);
    const bool needs = node_needs_grad(a.id);
    const std::int32_t id = add_node("grad_scale", {a.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a, s](Tape& t, std::int32_t self) {
            const Tensor& gout = t.grad_of(self);
            Tensor& gi = t.grad_of(a.id);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto g = gout.as<const T>();
                auto gp = gi.as<T>();
                const T sv = static_cast<T>(s);
                for (std::int64_t i = 0; i < gout.numel(); ++i)
                    gp[static_cast<std::size_t>(i)] += sv * g[static_cast<std::size_t>(i)];
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::softmax_channels(Value scores) {
    check_value(scores, "softmax_channels");
    const Tensor& x = val(scores.id);
    if (x.rank() != 4) throw ShapeError("softmax_channels: input must be rank 4");
    Tensor out(x.dims(), dtype_);
    if (dtype_ == DType::F32) softmax_forward<float>(x, out); else softmax_forward<double>(x, out);
    const bool needs = node_needs_grad(scores.id);
    const std::int32_t id = add_node("softmax_channels", {scores.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [scores](Tape& t, std::int32_t self) {
            const Tensor& p = t.val(self);
            const Tensor& gout = t.grad_of(self);
            Tensor& gi = t.grad_of(scores.id);
            const std::int64_t N = p.dim(0), K = p.dim(1), HW = p.dim(2) * p.dim(3);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto ps = p.as<const T>();
                const auto g = gout.as<const T>();
                auto gp = gi.as<T>();
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t i = 0; i < HW; ++i) {
                        const std::size_t base = static_cast<std::size_t>(n * K * HW + i);
                        T dot = 0;
                        for (std::int64_t k = 0; k < K; ++k) {
                            const std::size_t idx = base + static_cast<std::size_t>(k * HW);
                            dot += ps[idx] * g[idx];
                        }
                        for (std::int64_t k = 0; k < K; ++k) {
                            const std::size_t idx = base + static_cast<std::size_t>(k * HW);
                            gp[idx] += ps[idx] * (g[idx] - dot);
                        }
                    }
                }
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::sum(Value a) {
    check_value(a, "sum");
    const Tensor& xa = val(a.id);
    double acc = 0.0;
    if (dtype_ == DType::F32) {
        float facc = 0.0f;
        for (const float v : xa.as<const float>()) facc += v;
        acc = facc;
    } else {
        for (const double v : xa.as<const double>()) acc += v;
    }
    Tensor out = Tensor::scalar(acc, dtype_);
    const bool needs = node_needs_grad(a.id);
    const std::int32_t id = add_node("sum", {a.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a](Tape& t, std::int32_t self) {
            const double g = t.grad_of(self).get(0);
            Tensor& gi = t.grad_of(a.id);
            for (std::int64_t i = 0; i < gi.numel(); ++i) gi.set(i, gi.get(i) + g);
        };
    }
    return {id};
}

Tape::Value Tape::half_mse_to_const(Value a, double c) {
    check_value(a, "half_mse_to_const");
    const Tensor& xa = val(a.id);
    const std::int64_t n = xa.numel();
    double acc = 0.0;
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto p = xa.as<const T>();
        // Accumulate in the tape dtype so 32-bit training stays 32-bit.
        T s = 0;
        const T cv = static_cast<T>(c);
        for (std::int64_t i = 0; i < n; ++i) {
            const T d = p[static_cast<std::size_t>(i)] - cv;
            s += d * d;
        }
        acc = static_cast<double>(s / static_cast<T>(2 * n));
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    Tensor out = Tensor::scalar(acc, dtype_);
    const bool needs = node_needs_grad(a.id);
    const std::int32_t id = add_node("half_mse_to_const", {a.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [a, c, n](Tape& t, std::int32_t self) {
            const double g = t.grad_of(self).get(0);
            const Tensor& xv = t.val(a.id);
            Tensor& gi = t.grad_of(a.id);
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto p = xv.as<const T>();
                auto gp = gi.as<T>();
                const T k = static_cast<T>(g / static_cast<double>(n));
                const T cv = static_cast<T>(c);
                for (std::int64_t i = 0; i < n; ++i)
                    gp[static_cast<std::size_t>(i)] += k * (p[static_cast<std::size_t>(i)] - cv);
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

Tape::Value Tape::cross_entropy_mean(Value scores, const Tensor& labels, std::optional<int> ignore_id) {
    check_value(scores, "cross_entropy_mean");
    const Tensor& s = val(scores.id);
    if (s.rank() != 4) throw ShapeError("cross_entropy_mean: scores must be rank 4");
    if (labels.dtype() != DType::U8) throw NumericalError("cross_entropy_mean: labels must be u8");
    const std::int64_t N = s.dim(0), K = s.dim(1), H = s.dim(2), W = s.dim(3);
    if (labels.rank() != 3 || labels.dim(0) != N || labels.dim(1) != H || labels.dim(2) != W) {
        throw ShapeError("cross_entropy_mean: labels dims " + dims_to_string(labels.dims()) +
                         " do not match scores " + dims_to_string(s.dims()));
    }
    const auto lab = labels.as<const std::uint8_t>();
    for (std::int64_t i = 0; i < labels.numel(); ++i) {
        const int v = lab[static_cast<std::size_t>(i)];
        if (v >= K && !(ignore_id && v == *ignore_id)) {
            throw NumericalError("cross_entropy_mean: label id " + std::to_string(v) + " out of range (K=" +
                                 std::to_string(K) + ")");
        }
    }

    auto probs = std::make_shared<Tensor>(s.dims(), dtype_);
    auto labels_copy = std::make_shared<Tensor>(labels);
    std::int64_t valid = 0;
    double loss = 0.0;
    const auto run = [&](auto tag) {
        using T = decltype(tag);
        const auto sp = s.as<const T>();
        auto pp = probs->as<T>();
        const std::int64_t HW = H * W;
        T acc = 0;
        for (std::int64_t n = 0; n < N; ++n) {
            for (std::int64_t i = 0; i < HW; ++i) {
                const std::size_t base = static_cast<std::size_t>(n * K * HW + i);
                T mx = sp[base];
                for (std::int64_t k = 1; k < K; ++k)
                    mx = std::max(mx, sp[base + static_cast<std::size_t>(k * HW)]);
                T z = 0;
                for (std::int64_t k = 0; k < K; ++k) {
                    const T e = std::exp(sp[base + static_cast<std::size_t>(k * HW)] - mx);
                    pp[base + static_cast<std::size_t>(k * HW)] = e;
                    z += e;
                }
                for (std::int64_t k = 0; k < K; ++k) pp[base + static_cast<std::size_t>(k * HW)] /= z;
                const int y = lab[static_cast<std::size_t>(n * HW + i)];
                if (ignore_id && y == *ignore_id) continue;
                ++valid;
                acc += std::log(z) + mx - sp[base + static_cast<std::size_t>(y * HW)];
            }
        }
        if (valid > 0) loss = static_cast<double>(acc / static_cast<T>(valid));
    };
    if (dtype_ == DType::F32) run(float{}); else run(double{});
    if (valid == 0) {
        throw NumericalError("cross_entropy_mean: all pixels ignored, mean undefined");
    }
    Tensor out = Tensor::scalar(loss, dtype_);
    const bool needs = node_needs_grad(scores.id);
    const std::int32_t id = add_node("cross_entropy_mean", {scores.id}, std::move(out), needs);
    if (needs) {
        nodes_.back().backward_fn = [scores, probs, labels_copy, ignore_id, valid](Tape& t, std::int32_t self) {
            const double g = t.grad_of(self).get(0);
            Tensor& gi = t.grad_of(scores.id);
            const std::int64_t N = probs->dim(0), K = probs->dim(1), HW = probs->dim(2) * probs->dim(3);
            const auto lab = labels_copy->as<const std::uint8_t>();
            const auto run_bw = [&](auto tag) {
                using T = decltype(tag);
                const auto pp = probs->as<const T>();
                auto gp = gi.as<T>();
                const T k0 = static_cast<T>(g / static_cast<double>(valid));
                for (std::int64_t n = 0; n < N; ++n) {
                    for (std::int64_t i = 0; i < HW; ++i) {
                        const int y = lab[static_cast<std::size_t>(n * HW + i)];
                        if (ignore_id && y == *ignore_id) continue;
                        const std::size_t base = static_cast<std::size_t>(n * K * HW + i);
                        for (std::int64_t k = 0; k < K; ++k) {
                            const std::size_t idx = base + static_cast<std::size_t>(k * HW);
                            const T delta = (k == y) ? T(1) : T(0);
                            gp[idx] += k0 * (pp[idx] - delta);
                        }
                    }
                }
            };
            if (t.dtype_ == DType::F32) run_bw(float{}); else run_bw(double{});
        };
    }
    return {id};
}

void Tape::backward(Value loss) {
    check_value(loss, "backward");
    const Tensor& lv = val(loss.id);
    if (lv.numel() != 1) {
        throw NumericalError("backward: loss must be scalar, got " + dims_to_string(lv.dims()));
    }
    if (!nodes_[static_cast<std::size_t>(loss.id)].needs_grad) {
        return;  // nothing differentiable upstream
    }

    // Reverse reachability from the loss over differentiable nodes.
    std::vector<bool> reached(nodes_.size(), false);
    std::vector<std::int32_t> stack{loss.id};
    reached[static_cast<std::size_t>(loss.id)] = true;
    while (!stack.empty()) {
        const std::int32_t id = stack.back();
        stack.pop_back();
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        for (int i = 0; i < n.n_inputs; ++i) {
            const std::int32_t in_id = n.inputs[static_cast<std::size_t>(i)];
            if (in_id < 0) continue;
            if (!reached[static_cast<std::size_t>(in_id)] && nodes_[static_cast<std::size_t>(in_id)].needs_grad) {
                reached[static_cast<std::size_t>(in_id)] = true;
                stack.push_back(in_id);
            }
        }
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (reached[i]) {
            nodes_[i].grad = Tensor(val(static_cast<std::int32_t>(i)).dims(), dtype_);
        }
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad.set(0, 1.0);

    for (std::int32_t id = loss.id; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!reached[static_cast<std::size_t>(id)] || !n.backward_fn) continue;
        n.backward_fn(*this, id);
    }

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        Node& n = nodes_[i];
        if (!reached[i] || !n.bound) continue;
        Tensor& acc = n.bound->grad();
        const auto run_acc = [&](auto tag) {
            using T = decltype(tag);
            auto dst = acc.as<T>();
            const auto src = n.grad.as<const T>();
            for (std::int64_t k = 0; k < acc.numel(); ++k)
                dst[static_cast<std::size_t>(k)] += src[static_cast<std::size_t>(k)];
        };
        if (dtype_ == DType::F32) run_acc(float{}); else run_acc(double{});
        n.grad = Tensor();  // release per-call buffers on bound leaves
    }
}

}  // namespace adaptparse
