#pragma once

// Dense row-major 2-D tensors and the small set of kernels everything
// else is built from. Storage is float, accumulation is double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace moescope {

class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}
  Tensor2D(std::size_t rows, std::size_t cols, std::vector<float> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw std::invalid_argument("Tensor2D: data size " +
                                  std::to_string(data_.size()) +
                                  " != " + std::to_string(rows_ * cols_));
    }
    for (float v : data_) {
      if (!std::isfinite(v)) {
        throw std::invalid_argument("Tensor2D: non-finite entry");
      }
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  float& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  float* row_ptr(std::size_t r) { return data_.data() + r * cols_; }
  const float* row_ptr(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  bool same_shape(const Tensor2D& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

struct RowStats {
  float max_abs = 0.0f;
  float median_abs = 0.0f;
};

inline Tensor2D matmul(const Tensor2D& a, const Tensor2D& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " +
                                std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  }
  Tensor2D out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        acc += static_cast<double>(a.at(i, k)) * static_cast<double>(b.at(k, j));
      }
      out.at(i, j) = static_cast<float>(acc);
    }
  }
  return out;
}

// Row vector times matrix, the hot path of the forward pass.
inline std::vector<float> vecmat(const std::vector<float>& x, const Tensor2D& w) {
  if (x.size() != w.rows()) {
    throw std::invalid_argument("vecmat: dimension mismatch");
  }
  std::vector<float> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      acc += static_cast<double>(x[k]) * static_cast<double>(w.at(k, j));
    }
    out[j] = static_cast<float>(acc);
  }
  return out;
}

// Row-wise softmax with optional causal masking (entries above the
// diagonal forced to exactly zero). Stabilized by row-max subtraction.
inline Tensor2D softmax_masked(const Tensor2D& logits, bool causal) {
  Tensor2D out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const std::size_t valid = causal ? std::min(i + 1, logits.cols()) : logits.cols();
    if (valid == 0) {
      throw std::invalid_argument("softmax_masked: row with no unmasked entry");
    }
    double row_max = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < valid; ++j) {
      row_max = std::max(row_max, static_cast<double>(logits.at(i, j)));
    }
    double sum = 0.0;
    std::vector<double> e(valid);
    for (std::size_t j = 0; j < valid; ++j) {
      e[j] = std::exp(static_cast<double>(logits.at(i, j)) - row_max);
      sum += e[j];
    }
    for (std::size_t j = 0; j < valid; ++j) {
      out.at(i, j) = static_cast<float>(e[j] / sum);
    }
    for (std::size_t j = valid; j < logits.cols(); ++j) {
      out.at(i, j) = 0.0f;
    }
  }
  return out;
}

// Softmax over a plain vector, -inf entries act as removed candidates.
inline std::vector<double> softmax_vec(const std::vector<double>& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : logits) m = std::max(m, v);
  if (!std::isfinite(m)) {
    throw std::invalid_argument("softmax_vec: no finite logit");
  }
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isfinite(logits[i]) ? std::exp(logits[i] - m) : 0.0;
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline std::vector<float> rms_norm(const std::vector<float>& x,
                                   const std::vector<float>& gain,
                                   float epsilon) {
  if (x.size() != gain.size()) {
    throw std::invalid_argument("rms_norm: dimension mismatch");
  }
  double ms = 0.0;
  for (float v : x) ms += static_cast<double>(v) * static_cast<double>(v);
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + static_cast<double>(epsilon));
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(x[i]) * inv *
                                static_cast<double>(gain[i]));
  }
  return out;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

// k-th largest with k = max(1, floor(fraction * N)). For fraction 0.005
// this is the top-0.5% threshold of the magnitude multiset.
inline double nearest_rank_top_fraction(std::vector<double> values, double fraction) {
  if (values.empty()) {
    throw std::invalid_argument("nearest_rank_top_fraction: empty input");
  }
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("nearest_rank_top_fraction: fraction out of (0,1]");
  }
  const std::size_t n = values.size();
  std::size_t k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
  if (k < 1) k = 1;
  if (k > n) k = n;
  std::nth_element(values.begin(), values.begin() + (k - 1), values.end(),
                   std::greater<double>());
  return values[k - 1];
}

// max and lower-median of absolute values.
inline RowStats row_stats(const std::vector<float>& x) {
  if (x.empty()) {
    throw std::invalid_argument("row_stats: empty vector");
  }
  std::vector<float> mags(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::fabs(x[i]);
  const std::size_t mid = (mags.size() - 1) / 2;
  std::nth_element(mags.begin(), mags.begin() + mid, mags.end());
  RowStats s;
  s.median_abs = mags[mid];
  s.max_abs = *std::max_element(mags.begin(), mags.end());
  return s;
}

}  // namespace moescope
