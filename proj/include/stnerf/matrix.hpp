#pragma once

#include <cstddef>
#include <vector>

namespace stnerf {

// Dense row-major matrix. Network activations are stored feature-major:
// one row per feature, one column per sample, so a batch row is contiguous.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  const T& operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  T* row(int r) { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const T* row(int r) const { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void resize(int rows, int cols, T fill = T(0)) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(static_cast<std::size_t>(rows) * cols, fill);
  }
  void fill(T value) { data_.assign(data_.size(), value); }

  bool operator==(const Matrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<T> data_;
};

namespace kernels {

// y = W x + b.  W: out x in, x: in x n, y: out x n.
// Each output element accumulates over `in` in ascending order, starting
// from the bias, so results do not depend on n or on column position.
template <typename T>
void affine_forward(const Matrix<T>& w, const T* bias, const Matrix<T>& x, Matrix<T>& y);

// dx = W^T dy, same ordering guarantee (ascending over `out`).
template <typename T>
void affine_backward_input(const Matrix<T>& w, const Matrix<T>& dy, Matrix<T>& dx);

// dW += dy x^T, db += rowsum(dy).  Reduction over n uses fixed lanes.
template <typename T>
void affine_backward_params(const Matrix<T>& dy, const Matrix<T>& x, Matrix<T>& dw, T* db);

}  // namespace kernels
}  // namespace stnerf
