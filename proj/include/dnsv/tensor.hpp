#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace dnsv::nn {

// Dense row-major nd-array (rank 1-4). Small by design: just enough for the
// layer stack. 2D views map onto Eigen for the matmul-heavy paths.
template <typename S>
class Tensor {
public:
    using MatrixRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using Map2D = Eigen::Map<MatrixRM>;
    using ConstMap2D = Eigen::Map<const MatrixRM>;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), S(0));
    }

    Tensor(std::initializer_list<std::size_t> shape)
        : Tensor(std::vector<std::size_t>(shape)) {}

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    std::vector<S>& storage() { return data_; }
    const std::vector<S>& storage() const { return data_; }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

    S& operator[](std::size_t i) { return data_[i]; }
    S operator[](std::size_t i) const { return data_[i]; }

    S& operator()(std::size_t i, std::size_t j) {
        assert(rank() == 2);
        return data_[i * shape_[1] + j];
    }
    S operator()(std::size_t i, std::size_t j) const {
        assert(rank() == 2);
        return data_[i * shape_[1] + j];
    }
    S& operator()(std::size_t i, std::size_t j, std::size_t k) {
        assert(rank() == 3);
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    S operator()(std::size_t i, std::size_t j, std::size_t k) const {
        assert(rank() == 3);
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    S& operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
        assert(rank() == 4);
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    S operator()(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
        assert(rank() == 4);
        return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    // View the tensor as a (rows x cols) matrix; rows*cols must equal size().
    Map2D mat(std::size_t rows, std::size_t cols) {
        assert(rows * cols == size());
        return Map2D(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    }
    ConstMap2D mat(std::size_t rows, std::size_t cols) const {
        assert(rows * cols == size());
        return ConstMap2D(data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    }

    // Collapse all leading dims; keep the last as columns.
    std::size_t leading_rows() const {
        assert(rank() >= 1);
        return size() / shape_.back();
    }
    Map2D rows_by_last() { return mat(leading_rows(), shape_.back()); }
    ConstMap2D rows_by_last() const { return mat(leading_rows(), shape_.back()); }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        assert(count(shape) == size());
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    Tensor& operator+=(const Tensor& o) {
        assert(o.size() == size());
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }

    template <typename S2>
    Tensor<S2> cast() const {
        Tensor<S2> t(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) t[i] = static_cast<S2>(data_[i]);
        return t;
    }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<S> data_;
};

}  // namespace dnsv::nn
