#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "adaptparse/errors.hpp"

namespace adaptparse {

// Codes double as the dtype byte of the .tsr file format.
enum class DType : std::uint8_t { F32 = 0, U8 = 1, F64 = 2 };

std::size_t dtype_size(DType d);
const char* dtype_name(DType d);

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::F32; }
template <>
constexpr DType dtype_of<double>() { return DType::F64; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::U8; }

/// Dense row-major n-d array, rank 1..4. Images and feature maps use the
/// batch x channel x height x width layout. A tensor may carry a same-shape
/// gradient accumulator when it participates in a differentiable graph;
/// U8 tensors never do (they hold label maps only).
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<std::int64_t> dims, DType dtype);

    static Tensor zeros(std::vector<std::int64_t> dims, DType dtype);
    static Tensor full(std::vector<std::int64_t> dims, double value, DType dtype);
    static Tensor scalar(double value, DType dtype);

    const std::vector<std::int64_t>& dims() const { return dims_; }
    int rank() const { return static_cast<int>(dims_.size()); }
    std::int64_t dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    std::int64_t numel() const { return numel_; }
    DType dtype() const { return dtype_; }
    bool is_scalar() const { return numel_ == 1; }

    template <class T>
    std::span<T> as() {
        check_dtype(dtype_of<T>());
        return {reinterpret_cast<T*>(data_.data()), static_cast<std::size_t>(numel_)};
    }
    template <class T>
    std::span<const T> as() const {
        check_dtype(dtype_of<T>());
        return {reinterpret_cast<const T*>(data_.data()), static_cast<std::size_t>(numel_)};
    }

    // Generic element access across float dtypes; slow path for I/O and tests.
    double get(std::int64_t i) const;
    void set(std::int64_t i, double v);

    std::span<const std::byte> bytes() const { return {data_.data(), data_.size()}; }
    std::span<std::byte> bytes() { return {data_.data(), data_.size()}; }

    bool requires_grad() const { return requires_grad_; }
    void set_requires_grad(bool v);

    /// Gradient accumulator; allocated (zero) on first access.
    Tensor& grad();
    const Tensor* grad_ptr() const { return grad_.get(); }
    void zero_grad();

    Tensor(const Tensor& other);
    Tensor& operator=(const Tensor& other);
    Tensor(Tensor&&) noexcept = default;
    Tensor& operator=(Tensor&&) noexcept = default;

    /// Same dims/dtype/payload bytes; gradients are not compared.
    friend bool bitwise_equal(const Tensor& a, const Tensor& b);

private:
    void check_dtype(DType expected) const;

    std::vector<std::int64_t> dims_;
    std::int64_t numel_ = 0;
    DType dtype_ = DType::F32;
    std::vector<std::byte> data_;
    bool requires_grad_ = false;
    std::unique_ptr<Tensor> grad_;
};

std::string dims_to_string(const std::vector<std::int64_t>& dims);

/// Copies values with dtype conversion (no gradient transfer).
Tensor cast(const Tensor& t, DType target);

}  // namespace adaptparse
