#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lossforge {

// Small positive guard used by Inv/Log/Sqrt to keep values and gradients finite.
inline constexpr double kEps = 1e-12;

struct Dims {
  int n = 0, c = 0, h = 0, w = 0;

  bool operator==(const Dims&) const = default;
  std::int64_t count() const {
    return std::int64_t(n) * c * h * w;
  }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Dense rank-4 array in (N,C,H,W) layout, row-major, 64-bit floats.
// Every operation below is shape-preserving and pure.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(Dims dims, double fill = 0.0) : dims_(dims), data_(check_count(dims), fill) {}
  Tensor4(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
    if (std::int64_t(data_.size()) != dims_.count()) {
      throw std::invalid_argument("Tensor4: data length " + std::to_string(data_.size()) +
                                  " does not match dims " + dims_.str());
    }
  }

  static Tensor4 ones(Dims dims) { return Tensor4(dims, 1.0); }
  static Tensor4 zeros(Dims dims) { return Tensor4(dims, 0.0); }

  const Dims& dims() const { return dims_; }
  std::int64_t size() const { return std::int64_t(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[i]; }
  double operator[](std::int64_t i) const { return data_[i]; }

  std::int64_t index(int n, int c, int h, int w) const {
    return ((std::int64_t(n) * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  double& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
  double at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const Tensor4&) const = default;

 private:
  static std::size_t check_count(Dims dims) {
    if (dims.n <= 0 || dims.c <= 0 || dims.h <= 0 || dims.w <= 0) {
      throw std::invalid_argument("Tensor4: extents must be positive, got " + dims.str());
    }
    return std::size_t(dims.count());
  }

  Dims dims_;
  std::vector<double> data_;
};

inline void require_same_dims(const Tensor4& a, const Tensor4& b, const char* what) {
  if (!(a.dims() == b.dims())) {
    throw std::invalid_argument(std::string(what) + ": dims mismatch " + a.dims().str() +
                                " vs " + b.dims().str());
  }
}

enum class UnaryOp { Neg, Abs, Inv, Log, Exp, Tanh, Square, Sqrt };
enum class BinaryOp { Add, Mul };
enum class PoolMode { Max, Min };
enum class AggregateMode { MeanNHW, MeanC };

// sign with sign(0) = 0, so Log(0) = 0 and Sqrt(0) = 0.
inline double sign(double x) {
  return double(x > 0.0) - double(x < 0.0);
}

inline double apply_unary(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Neg:    return -x;
    case UnaryOp::Abs:    return std::abs(x);
    case UnaryOp::Inv:    return 1.0 / (x + kEps);
    case UnaryOp::Log:    return sign(x) * std::log(std::abs(x) + kEps);
    case UnaryOp::Exp:    return std::exp(x);
    case UnaryOp::Tanh:   return std::tanh(x);
    case UnaryOp::Square: return x * x;
    case UnaryOp::Sqrt:   return sign(x) * std::sqrt(std::abs(x) + kEps);
  }
  return 0.0;
}

// Derivative of the guarded expression itself, sign treated as locally constant.
inline double unary_derivative(UnaryOp op, double x) {
  switch (op) {
    case UnaryOp::Neg:    return -1.0;
    case UnaryOp::Abs:    return sign(x);
    case UnaryOp::Inv: {
      double d = x + kEps;
      return -1.0 / (d * d);
    }
    case UnaryOp::Log:    return 1.0 / (std::abs(x) + kEps);
    case UnaryOp::Exp:    return std::exp(x);
    case UnaryOp::Tanh: {
      double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case UnaryOp::Square: return 2.0 * x;
    case UnaryOp::Sqrt:   return 1.0 / (2.0 * std::sqrt(std::abs(x) + kEps));
  }
  return 0.0;
}

inline void map_unary_into(const Tensor4& t, UnaryOp op, Tensor4& out) {
  const std::int64_t total = t.size();
  for (std::int64_t i = 0; i < total; ++i) out[i] = apply_unary(op, t[i]);
}

inline Tensor4 map_unary(const Tensor4& t, UnaryOp op) {
  Tensor4 out(t.dims());
  map_unary_into(t, op, out);
  return out;
}

inline void map_binary_into(const Tensor4& a, const Tensor4& b, BinaryOp op, Tensor4& out) {
  require_same_dims(a, b, "map_binary");
  const std::int64_t total = a.size();
  if (op == BinaryOp::Add) {
    for (std::int64_t i = 0; i < total; ++i) out[i] = a[i] + b[i];
  } else {
    for (std::int64_t i = 0; i < total; ++i) out[i] = a[i] * b[i];
  }
}

inline Tensor4 map_binary(const Tensor4& a, const Tensor4& b, BinaryOp op) {
  require_same_dims(a, b, "map_binary");
  Tensor4 out(a.dims());
  map_binary_into(a, b, op, out);
  return out;
}

// 3x3 max/min pooling, stride 1. Windows shrink at borders (out-of-bounds
// cells are ignored), so output dims equal input dims and min-pool never
// sees padded zeros.
inline void pool3x3_into(const Tensor4& t, PoolMode mode, Tensor4& out) {
  const Dims d = t.dims();
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      for (int h = 0; h < d.h; ++h) {
        const int h0 = std::max(0, h - 1), h1 = std::min(d.h - 1, h + 1);
        for (int w = 0; w < d.w; ++w) {
          const int w0 = std::max(0, w - 1), w1 = std::min(d.w - 1, w + 1);
          double best = t.at(n, c, h0, w0);
          for (int hh = h0; hh <= h1; ++hh) {
            for (int ww = w0; ww <= w1; ++ww) {
              const double v = t.at(n, c, hh, ww);
              if (mode == PoolMode::Max ? v > best : v < best) best = v;
            }
          }
          out.at(n, c, h, w) = best;
        }
      }
    }
  }
}

inline Tensor4 pool3x3(const Tensor4& t, PoolMode mode) {
  Tensor4 out(t.dims());
  pool3x3_into(t, mode, out);
  return out;
}

// Routes gradient to the selected window element; ties break to the first
// index in a row-major scan of the window.
inline void pool3x3_backward_into(const Tensor4& t, PoolMode mode, const Tensor4& upstream,
                                  Tensor4& grad) {
  const Dims d = t.dims();
  for (int n = 0; n < d.n; ++n) {
    for (int c = 0; c < d.c; ++c) {
      for (int h = 0; h < d.h; ++h) {
        const int h0 = std::max(0, h - 1), h1 = std::min(d.h - 1, h + 1);
        for (int w = 0; w < d.w; ++w) {
          const int w0 = std::max(0, w - 1), w1 = std::min(d.w - 1, w + 1);
          double best = t.at(n, c, h0, w0);
          int bh = h0, bw = w0;
          for (int hh = h0; hh <= h1; ++hh) {
            for (int ww = w0; ww <= w1; ++ww) {
              const double v = t.at(n, c, hh, ww);
              if (mode == PoolMode::Max ? v > best : v < best) {
                best = v;
                bh = hh;
                bw = ww;
              }
            }
          }
          grad.at(n, c, bh, bw) += upstream.at(n, c, h, w);
        }
      }
    }
  }
}

// Replaces every element with the selected aggregate: per-channel mean over
// (n,h,w), or per-position mean over c.
inline void aggregate_into(const Tensor4& t, AggregateMode mode, Tensor4& out) {
  const Dims d = t.dims();
  if (mode == AggregateMode::MeanNHW) {
    const double denom = double(d.n) * d.h * d.w;
    for (int c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) s += t.at(n, c, h, w);
      const double mean = s / denom;
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) out.at(n, c, h, w) = mean;
    }
  } else {
    const double denom = double(d.c);
    for (int n = 0; n < d.n; ++n) {
      for (int h = 0; h < d.h; ++h) {
        for (int w = 0; w < d.w; ++w) {
          double s = 0.0;
          for (int c = 0; c < d.c; ++c) s += t.at(n, c, h, w);
          const double mean = s / denom;
          for (int c = 0; c < d.c; ++c) out.at(n, c, h, w) = mean;
        }
      }
    }
  }
}

inline Tensor4 aggregate(const Tensor4& t, AggregateMode mode) {
  Tensor4 out(t.dims());
  aggregate_into(t, mode, out);
  return out;
}

// Mean aggregations distribute gradient uniformly over the reduced axes.
inline void aggregate_backward_into(const Tensor4& t, AggregateMode mode,
                                    const Tensor4& upstream, Tensor4& grad) {
  const Dims d = t.dims();
  if (mode == AggregateMode::MeanNHW) {
    const double denom = double(d.n) * d.h * d.w;
    for (int c = 0; c < d.c; ++c) {
      double s = 0.0;
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) s += upstream.at(n, c, h, w);
      const double g = s / denom;
      for (int n = 0; n < d.n; ++n)
        for (int h = 0; h < d.h; ++h)
          for (int w = 0; w < d.w; ++w) grad.at(n, c, h, w) += g;
    }
  } else {
    const double denom = double(d.c);
    for (int n = 0; n < d.n; ++n) {
      for (int h = 0; h < d.h; ++h) {
        for (int w = 0; w < d.w; ++w) {
          double s = 0.0;
          for (int c = 0; c < d.c; ++c) s += upstream.at(n, c, h, w);
          const double g = s / denom;
          for (int c = 0; c < d.c; ++c) grad.at(n, c, h, w) += g;
        }
      }
    }
  }
}

}  // namespace lossforge
