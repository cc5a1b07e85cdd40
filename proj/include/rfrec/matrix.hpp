#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rfrec/errors.hpp"

namespace rfrec {

using Vec = std::vector<double>;

// Dense column-major matrix. Columns are the unit the model works in
// (column j of a d-by-m item matrix is item j's latent vector), so they
// are kept contiguous for the kernels.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return a_.size(); }

    double* data() { return a_.data(); }
    const double* data() const { return a_.data(); }

    double* col(std::size_t j) { return a_.data() + j * rows_; }
    const double* col(std::size_t j) const { return a_.data() + j * rows_; }

    double& operator()(std::size_t i, std::size_t j) { return a_[j * rows_ + i]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[j * rows_ + i]; }

    std::span<double> flat() { return a_; }
    std::span<const double> flat() const { return a_; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Mat& o) const = default;

private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> a_;
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(what);
}

}  // namespace rfrec
