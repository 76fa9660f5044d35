#include "chai/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "chai/errors.hpp"

namespace chai {

Matrix::Matrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::from_rows(const std::vector<std::vector<float>>& rows) {
  if (rows.empty()) return {};
  const std::size_t cols = rows.front().size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != cols) throw ShapeError("ragged rows in Matrix::from_rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

std::string Matrix::shape_string() const {
  return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Matrix c(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    float* out = c.row(i).data();
    const float* ar = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ar[p];
      const float* br = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += av * br[j];
    }
  }
  return c;
}

Matrix matmul_column_blocks(const Matrix& a, const Matrix& b, std::span<const std::size_t> blocks,
                            std::size_t width) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + a.shape_string() + " x " + b.shape_string());
  }
  for (std::size_t blk : blocks) {
    if ((blk + 1) * width > b.cols()) {
      throw ShapeError("column block " + std::to_string(blk) + " of width " +
                       std::to_string(width) + " exceeds " + b.shape_string());
    }
  }
  const std::size_t m = a.rows(), k = a.cols();
  Matrix c(m, blocks.size() * width);
  for (std::size_t i = 0; i < m; ++i) {
    float* out = c.row(i).data();
    const float* ar = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ar[p];
      const float* br = b.row(p).data();
      for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
        const float* src = br + blocks[bi] * width;
        float* dst = out + bi * width;
        for (std::size_t j = 0; j < width; ++j) dst[j] += av * src[j];
      }
    }
  }
  return c;
}

void softmax_inplace(std::span<float> row) {
  if (row.empty()) throw ContractError("softmax over an empty row");
  float mx = row[0];
  for (float v : row) mx = std::max(mx, v);
  float sum = 0.0f;
  for (float& v : row) {
    v = std::exp(v - mx);
    sum += v;
  }
  const float inv = 1.0f / sum;
  for (float& v : row) v *= inv;
}

Matrix softmax_rows(const Matrix& m, std::optional<CausalMask> mask) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    std::size_t visible = m.cols();
    if (mask) visible = std::min(m.cols(), mask->query_offset + r + 1);
    if (visible == 0) throw ContractError("softmax row " + std::to_string(r) + " is empty after masking");
    auto src = m.row(r);
    auto dst = out.row(r);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(visible), dst.begin());
    softmax_inplace(dst.first(visible));
  }
  return out;
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> gain, float eps) {
  if (x.size() != gain.size()) {
    throw ShapeError("rms_norm length mismatch: x has " + std::to_string(x.size()) + ", gain has " +
                     std::to_string(gain.size()));
  }
  std::vector<float> out(x.size());
  if (x.empty()) return out;
  float sq = 0.0f;
  for (float v : x) sq += v * v;
  const float denom = std::sqrt(sq / static_cast<float>(x.size()) + eps);
  if (denom == 0.0f) return out;  // all-zero input with eps == 0
  const float inv = 1.0f / denom;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv * gain[i];
  return out;
}

void apply_rope_inplace(std::span<float> row, std::size_t position) {
  const std::size_t dim = row.size();
  if (dim % 2 != 0) throw ConfigError("rotary embedding needs an even head dimension, got " + std::to_string(dim));
  if (position == 0) return;
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    const double angle = static_cast<double>(position) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float x0 = row[2 * i];
    const float x1 = row[2 * i + 1];
    row[2 * i] = x0 * c - x1 * s;
    row[2 * i + 1] = x0 * s + x1 * c;
  }
}

Matrix apply_rope(const Matrix& x, std::size_t start_position) {
  if (x.cols() % 2 != 0) {
    throw ConfigError("rotary embedding needs an even head dimension, got " + std::to_string(x.cols()));
  }
  Matrix out = x;
  for (std::size_t t = 0; t < out.rows(); ++t) apply_rope_inplace(out.row(t), start_position + t);
  return out;
}

}  // namespace chai
