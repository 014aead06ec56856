#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "sinklab/check.hpp"

namespace sinklab {

// Dense row-major tensor of 64-bit reals. Value semantics; a Tensor without
// grad state is immutable once shared and safe to read from any thread.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape)
        : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}

    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        SINKLAB_CHECK(static_cast<int64_t>(data_.size()) == checked_numel(shape_),
                      "tensor data length " << data_.size() << " does not match shape product");
    }

    static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int64_t> shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor identity(int64_t n) {
        Tensor t({n, n});
        for (int64_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
        return t;
    }

    // 2-D literal, e.g. Tensor::matrix({{1,2},{3,4}}).
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
        const int64_t m = static_cast<int64_t>(rows.size());
        const int64_t n = m > 0 ? static_cast<int64_t>(rows.begin()->size()) : 0;
        Tensor t({m, n});
        int64_t i = 0;
        for (const auto& row : rows) {
            SINKLAB_CHECK(static_cast<int64_t>(row.size()) == n, "ragged matrix literal");
            for (double v : row) t.data_[i++] = v;
        }
        return t;
    }

    static Tensor vector(std::vector<double> v) {
        const int64_t n = static_cast<int64_t>(v.size());
        return Tensor({n}, std::move(v));
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
    int64_t dim(int64_t i) const { return shape_.at(static_cast<size_t>(i)); }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }

    // 2-D conveniences.
    int64_t rows() const { return ndim() >= 1 ? shape_[0] : 0; }
    int64_t cols() const { return ndim() >= 2 ? shape_[1] : 1; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& storage() { return data_; }
    const std::vector<double>& storage() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * cols() + j)]; }
    double at(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * cols() + j)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const;

    double max_abs() const;

    static int64_t checked_numel(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            SINKLAB_CHECK(d >= 0, "negative dimension in tensor shape");
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

}  // namespace sinklab
