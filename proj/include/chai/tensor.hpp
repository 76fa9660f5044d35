#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chai {

// Dense row-major fp32 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  // Builds a matrix from nested rows; all rows must have equal length.
  static Matrix from_rows(const std::vector<std::vector<float>>& rows);
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }
  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

  std::string shape_string() const;

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

bool all_finite(std::span<const float> values);

// c[i][j] = sum_k a[i][k] * b[k][j], accumulated with k ascending.
Matrix matmul(const Matrix& a, const Matrix& b);

// Product of `a` with a subset of `b`'s column blocks. Block `blocks[i]`
// covers columns [blocks[i]*width, (blocks[i]+1)*width) and lands at output
// columns [i*width, (i+1)*width). Each output element is accumulated in the
// same order as matmul(), so the two agree bit-for-bit.
Matrix matmul_column_blocks(const Matrix& a, const Matrix& b, std::span<const std::size_t> blocks,
                            std::size_t width);

// Causal masking for a score block whose row i is the query at absolute
// position query_offset + i and whose column j is the key at position j.
struct CausalMask {
  std::size_t query_offset = 0;
};

// Row softmax with max subtraction. Masked entries are exactly zero.
Matrix softmax_rows(const Matrix& m, std::optional<CausalMask> mask = std::nullopt);

// In-place softmax of a single row.
void softmax_inplace(std::span<float> row);

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps);

// Rotary embedding (base 10000) over adjacent dimension pairs (2i, 2i+1);
// row t is rotated for absolute position start_position + t.
Matrix apply_rope(const Matrix& x, std::size_t start_position);
void apply_rope_inplace(std::span<float> row, std::size_t position);

}  // namespace chai
