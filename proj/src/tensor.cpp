#include "adaptparse/tensor.hpp"

#include <cstring>
#include <sstream>

namespace adaptparse {

std::size_t dtype_size(DType d) {
    switch (d) {
        case DType::F32: return 4;
        case DType::U8: return 1;
        case DType::F64: return 8;
    }
    throw NumericalError("unknown dtype code " + std::to_string(static_cast<int>(d)));
}

const char* dtype_name(DType d) {
    switch (d) {
        case DType::F32: return "f32";
        case DType::U8: return "u8";
        case DType::F64: return "f64";
    }
    return "?";
}

Tensor::Tensor(std::vector<std::int64_t> dims, DType dtype) : dims_(std::move(dims)), dtype_(dtype) {
    if (dims_.empty() || dims_.size() > 4) {
        throw ShapeError("tensor rank must be 1..4, got " + std::to_string(dims_.size()));
    }
    numel_ = 1;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
        if (dims_[i] <= 0) {
            throw ShapeError("tensor dim " + std::to_string(i) + " must be positive, got " +
                             std::to_string(dims_[i]));
        }
        numel_ *= dims_[i];
    }
    data_.resize(static_cast<std::size_t>(numel_) * dtype_size(dtype_));
}

Tensor Tensor::zeros(std::vector<std::int64_t> dims, DType dtype) {
    return Tensor(std::move(dims), dtype);
}

Tensor Tensor::full(std::vector<std::int64_t> dims, double value, DType dtype) {
    Tensor t(std::move(dims), dtype);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.set(i, value);
    return t;
}

Tensor Tensor::scalar(double value, DType dtype) {
    return full({1}, value, dtype);
}

double Tensor::get(std::int64_t i) const {
    switch (dtype_) {
        case DType::F32: return static_cast<double>(as<float>()[static_cast<std::size_t>(i)]);
        case DType::F64: return as<double>()[static_cast<std::size_t>(i)];
        case DType::U8: return static_cast<double>(as<std::uint8_t>()[static_cast<std::size_t>(i)]);
    }
    throw NumericalError("unknown dtype");
}

void Tensor::set(std::int64_t i, double v) {
    switch (dtype_) {
        case DType::F32: as<float>()[static_cast<std::size_t>(i)] = static_cast<float>(v); return;
        case DType::F64: as<double>()[static_cast<std::size_t>(i)] = v; return;
        case DType::U8: as<std::uint8_t>()[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v); return;
    }
    throw NumericalError("unknown dtype");
}

void Tensor::set_requires_grad(bool v) {
    if (v && dtype_ == DType::U8) {
        throw NumericalError("u8 tensors cannot enter the differentiable graph");
    }
    requires_grad_ = v;
}

Tensor& Tensor::grad() {
    if (dtype_ == DType::U8) {
        throw NumericalError("u8 tensors carry no gradient");
    }
    if (!grad_) {
        grad_ = std::make_unique<Tensor>(dims_, dtype_);
    }
    return *grad_;
}

void Tensor::zero_grad() {
    if (grad_) {
        std::memset(grad_->data_.data(), 0, grad_->data_.size());
    }
}

Tensor::Tensor(const Tensor& other)
    : dims_(other.dims_),
      numel_(other.numel_),
      dtype_(other.dtype_),
      data_(other.data_),
      requires_grad_(other.requires_grad_),
      grad_(other.grad_ ? std::make_unique<Tensor>(*other.grad_) : nullptr) {}

Tensor& Tensor::operator=(const Tensor& other) {
    if (this != &other) {
        dims_ = other.dims_;
        numel_ = other.numel_;
        dtype_ = other.dtype_;
        data_ = other.data_;
        requires_grad_ = other.requires_grad_;
        grad_ = other.grad_ ? std::make_unique<Tensor>(*other.grad_) : nullptr;
    }
    return *this;
}

void Tensor::check_dtype(DType expected) const {
    if (dtype_ != expected) {
        throw NumericalError(std::string("tensor dtype is ") + dtype_name(dtype_) + ", accessed as " +
                             dtype_name(expected));
    }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.dtype_ == b.dtype_ && a.dims_ == b.dims_ &&
           a.data_.size() == b.data_.size() &&
           std::memcmp(a.data_.data(), b.data_.data(), a.data_.size()) == 0;
}

std::string dims_to_string(const std::vector<std::int64_t>& dims) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) os << "x";
        os << dims[i];
    }
    os << "]";
    return os.str();
}

Tensor cast(const Tensor& t, DType target) {
    if (t.dtype() == target) return t;
    Tensor out(t.dims(), target);
    for (std::int64_t i = 0; i < t.numel(); ++i) out.set(i, t.get(i));
    return out;
}

}  // namespace adaptparse
