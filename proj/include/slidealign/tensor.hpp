#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "slidealign/error.hpp"

namespace sa {

// Dense row-major tensor of doubles. Shapes are small vectors of dimension
// sizes; a rank-0 tensor holds exactly one value and acts as a scalar.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

    static Tensor scalar(double v) {
        Tensor t{std::vector<int>{}};
        t.data_[0] = v;
        return t;
    }

    static Tensor from(std::vector<int> shape, std::vector<double> data) {
        Tensor t;
        t.shape_ = std::move(shape);
        require(checked_numel(t.shape_) == static_cast<int64_t>(data.size()), ErrKind::dimension,
                "tensor data size does not match shape");
        t.data_ = std::move(data);
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool is_scalar() const { return shape_.empty(); }
    bool empty() const { return data_.empty() && shape_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }

    double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double item() const {
        require(numel() == 1, ErrKind::contract, "item() on non-scalar tensor");
        return data_[0];
    }

    // 2-D and 4-D index helpers for the shapes the op catalog works with.
    double& at(int r, int c) { return data_[static_cast<size_t>(r) * dim(1) + c]; }
    double at(int r, int c) const { return data_[static_cast<size_t>(r) * dim(1) + c]; }
    double& at(int b, int c, int y, int x) {
        return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }
    double at(int b, int c, int y, int x) const {
        return data_[((static_cast<size_t>(b) * dim(1) + c) * dim(2) + y) * dim(3) + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static int64_t checked_numel(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            require(d >= 0, ErrKind::dimension, "negative dimension");
            n *= d;
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace sa
