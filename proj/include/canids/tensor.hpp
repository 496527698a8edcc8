#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace canids {

// Dense row-major float tensor. Shapes are small (at most 4-d here), so the
// shape vector lives inline and indexing helpers are provided for the common
// 2-d and 4-d layouts.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), 0.0f);
    }

    Tensor(std::initializer_list<int> shape) : Tensor(std::vector<int>(shape)) {}

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    void reshape(std::vector<int> shape) {
        if (count(shape) != numel())
            throw std::invalid_argument("Tensor::reshape: element count mismatch");
        shape_ = std::move(shape);
    }

    void resize(std::vector<int> shape) {
        shape_ = std::move(shape);
        data_.assign(static_cast<size_t>(count(shape_)), 0.0f);
    }

    int64_t numel() const { return static_cast<int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }
    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }

    int dim(int i) const {
        assert(i >= 0 && i < ndim());
        return shape_[static_cast<size_t>(i)];
    }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    // 2-d (rows, cols)
    float& at(int r, int c) {
        assert(ndim() == 2);
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }
    float at(int r, int c) const {
        assert(ndim() == 2);
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }

    // 4-d (n, c, h, w)
    float& at(int n, int c, int h, int w) {
        assert(ndim() == 4);
        return data_[idx4(n, c, h, w)];
    }
    float at(int n, int c, int h, int w) const {
        assert(ndim() == 4);
        return data_[idx4(n, c, h, w)];
    }

    float* row(int r) {
        assert(ndim() == 2);
        return data_.data() + static_cast<size_t>(r) * shape_[1];
    }
    const float* row(int r) const {
        assert(ndim() == 2);
        return data_.data() + static_cast<size_t>(r) * shape_[1];
    }

    void fill(float v) { data_.assign(data_.size(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) {
            if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
            n *= d;
        }
        return n;
    }

private:
    size_t idx4(int n, int c, int h, int w) const {
        return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    std::vector<int> shape_;
    std::vector<float> data_;
};

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    s += ")";
    return s;
}

}  // namespace canids
