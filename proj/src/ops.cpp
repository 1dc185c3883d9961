#include "advdet/ops.hpp"

// Always take Eigen's packed GEMM path: the small-size coefficient products
// reduce in an address-dependent order, which breaks bit reproducibility.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "advdet/error.hpp"

namespace advdet::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_matrix(const Tensor& t, std::size_t rows, std::size_t cols,
                      std::size_t offset = 0) {
  return ConstMatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(Tensor& t, std::size_t rows, std::size_t cols, std::size_t offset = 0) {
  return MatMap(t.data().data() + offset, static_cast<Eigen::Index>(rows),
                static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + shape_str(t.shape()));
  }
}

void check_labels(std::span<const int> labels, std::size_t n, std::size_t classes,
                  const char* op) {
  if (labels.size() != n) {
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(n));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw ShapeError(std::string(op) + ": label " + std::to_string(y) +
                       " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

// ---------------------------------------------------------------------------

class DenseOp final : public Op {
 public:
  const char* name() const override { return "dense"; }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const Tensor& b = *in[2];
    require_rank(w, 2, "dense weight");
    n_ = x.dim(0);
    f_ = x.size() / n_;
    o_ = w.dim(0);
    if (w.dim(1) != f_ || b.size() != o_) {
      throw ShapeError("dense: input " + shape_str(x.shape()) + " incompatible with weight " +
                       shape_str(w.shape()) + " / bias " + shape_str(b.shape()));
    }
    // Row by row, so an example's output does not depend on its batch.
    Tensor y({n_, o_});
    for (std::size_t i = 0; i < n_; ++i) {
      const double* xr = x.data().data() + i * f_;
      for (std::size_t j = 0; j < o_; ++j) {
        const double* wr = w.data().data() + j * f_;
        double s = 0.0;
        for (std::size_t k = 0; k < f_; ++k) s += xr[k] * wr[k];
        y[i * o_ + j] = s + b[j];
      }
    }
    return y;
  }

  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    auto gym = as_matrix(gy, n_, o_);
    if (g[0]) {
      const double* w = in[1]->data().data();
      for (std::size_t i = 0; i < n_; ++i) {
        double* gr = g[0]->data().data() + i * f_;
        for (std::size_t j = 0; j < o_; ++j) {
          const double gij = gy[i * o_ + j];
          const double* wr = w + j * f_;
          for (std::size_t k = 0; k < f_; ++k) gr[k] += gij * wr[k];
        }
      }
    }
    if (g[1]) as_matrix(*g[1], o_, f_).noalias() += gym.transpose() * as_matrix(*in[0], n_, f_);
    if (g[2]) {
      for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t j = 0; j < o_; ++j) (*g[2])[j] += gy[i * o_ + j];
    }
  }

 private:
  std::size_t n_ = 0, f_ = 0, o_ = 0;
};

// ---------------------------------------------------------------------------

class Conv2dOp final : public Op {
 public:
  explicit Conv2dOp(std::size_t stride) : stride_(stride) {}
  const char* name() const override { return "conv2d"; }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const Tensor& w = *in[1];
    const Tensor& b = *in[2];
    require_rank(x, 4, "conv2d input");
    require_rank(w, 4, "conv2d weight");
    n_ = x.dim(0);
    c_ = x.dim(1);
    h_ = x.dim(2);
    w_ = x.dim(3);
    o_ = w.dim(0);
    k_ = w.dim(2);
    if (w.dim(1) != c_ || w.dim(3) != k_ || k_ % 2 == 0 || b.size() != o_) {
      throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                       shape_str(w.shape()) + " / bias " + shape_str(b.shape()));
    }
    if (stride_ == 0) throw ShapeError("conv2d: stride must be positive");
    pad_ = k_ / 2;
    ho_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
    wo_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
    ckk_ = c_ * k_ * k_;
    const std::size_t hw = ho_ * wo_;
    cols_.assign(n_ * ckk_ * hw, 0.0);
    Tensor y({n_, o_, ho_, wo_});
    auto wm = as_matrix(w, o_, ckk_);
    for (std::size_t n = 0; n < n_; ++n) {
      double* cols = cols_.data() + n * ckk_ * hw;
      im2col(x.data().data() + n * c_ * h_ * w_, cols);
      auto ym = as_matrix(y, o_, hw, n * o_ * hw);
      ym.noalias() = wm * ConstMatMap(cols, static_cast<Eigen::Index>(ckk_),
                                      static_cast<Eigen::Index>(hw));
      for (std::size_t o = 0; o < o_; ++o) {
        double* row = y.data().data() + (n * o_ + o) * hw;
        for (std::size_t i = 0; i < hw; ++i) row[i] += b[o];
      }
    }
    return y;
  }

  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    const std::size_t hw = ho_ * wo_;
    auto wm = as_matrix(*in[1], o_, ckk_);
    RowMat dcols;
    for (std::size_t n = 0; n < n_; ++n) {
      auto gym = as_matrix(gy, o_, hw, n * o_ * hw);
      ConstMatMap cols(cols_.data() + n * ckk_ * hw, static_cast<Eigen::Index>(ckk_),
                       static_cast<Eigen::Index>(hw));
      if (g[1]) as_matrix(*g[1], o_, ckk_).noalias() += gym * cols.transpose();
      if (g[2]) {
        for (std::size_t o = 0; o < o_; ++o) {
          const double* row = gy.data().data() + (n * o_ + o) * hw;
          double s = 0.0;
          for (std::size_t i = 0; i < hw; ++i) s += row[i];
          (*g[2])[o] += s;
        }
      }
      if (g[0]) {
        dcols.noalias() = wm.transpose() * gym;
        col2im(dcols.data(), g[0]->data().data() + n * c_ * h_ * w_);
      }
    }
  }

 private:
  void im2col(const double* img, double* cols) const {
    const std::size_t hw = ho_ * wo_;
    for (std::size_t c = 0; c < c_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          double* row = cols + ((c * k_ + ky) * k_ + kx) * hw;
          for (std::size_t oy = 0; oy < ho_; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                            static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_)) continue;
            const double* src = img + (c * h_ + static_cast<std::size_t>(iy)) * w_;
            for (std::size_t ox = 0; ox < wo_; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                              static_cast<std::ptrdiff_t>(pad_);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w_)) continue;
              row[oy * wo_ + ox] = src[ix];
            }
          }
        }
  }

  void col2im(const double* cols, double* img) const {
    const std::size_t hw = ho_ * wo_;
    for (std::size_t c = 0; c < c_; ++c)
      for (std::size_t ky = 0; ky < k_; ++ky)
        for (std::size_t kx = 0; kx < k_; ++kx) {
          const double* row = cols + ((c * k_ + ky) * k_ + kx) * hw;
          for (std::size_t oy = 0; oy < ho_; ++oy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                            static_cast<std::ptrdiff_t>(pad_);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h_)) continue;
            double* dst = img + (c * h_ + static_cast<std::size_t>(iy)) * w_;
            for (std::size_t ox = 0; ox < wo_; ++ox) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                              static_cast<std::ptrdiff_t>(pad_);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w_)) continue;
              dst[ix] += row[oy * wo_ + ox];
            }
          }
        }
  }

  std::size_t stride_;
  std::size_t n_ = 0, c_ = 0, h_ = 0, w_ = 0, o_ = 0, k_ = 0, pad_ = 0, ho_ = 0, wo_ = 0,
              ckk_ = 0;
  std::vector<double> cols_;
};

// ---------------------------------------------------------------------------

class MaxPool2Op final : public Op {
 public:
  const char* name() const override { return "max_pool2"; }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    require_rank(x, 4, "max_pool2");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < 2 || w < 2) throw ShapeError("max_pool2: spatial extent below 2 in " + shape_str(x.shape()));
    const std::size_t ho = h / 2, wo = w / 2;
    Tensor y({n, c, ho, wo});
    argmax_.assign(y.size(), 0);
    std::size_t out = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ox = 0; ox < wo; ++ox, ++out) {
          std::size_t best = base + (2 * oy) * w + 2 * ox;
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = base + (2 * oy + dy) * w + 2 * ox + dx;
              if (x[idx] > x[best]) best = idx;
            }
          argmax_[out] = best;
          y[out] = x[best];
        }
    }
    return y;
  }

  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (std::size_t i = 0; i < argmax_.size(); ++i) (*g[0])[argmax_[i]] += gy[i];
  }

 private:
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPoolOp final : public Op {
 public:
  const char* name() const override { return "global_avg_pool"; }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    require_rank(x, 4, "global_avg_pool");
    planes_ = x.dim(0) * x.dim(1);
    area_ = x.dim(2) * x.dim(3);
    Tensor y({x.dim(0), x.dim(1)});
    for (std::size_t p = 0; p < planes_; ++p) {
      double s = 0.0;
      for (std::size_t i = 0; i < area_; ++i) s += x[p * area_ + i];
      y[p] = s / static_cast<double>(area_);
    }
    return y;
  }

  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const double inv = 1.0 / static_cast<double>(area_);
    for (std::size_t p = 0; p < planes_; ++p)
      for (std::size_t i = 0; i < area_; ++i) (*g[0])[p * area_ + i] += gy[p] * inv;
  }

 private:
  std::size_t planes_ = 0, area_ = 0;
};

// ---------------------------------------------------------------------------

class ReluOp final : public Op {
 public:
  const char* name() const override { return "relu"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    Tensor y = *in[0];
    for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
    return y;
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const Tensor& x = *in[0];
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) (*g[0])[i] += gy[i];
  }
};

class TanhOp final : public Op {
 public:
  const char* name() const override { return "tanh"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    Tensor y = *in[0];
    for (auto& v : y.data()) v = std::tanh(v);
    return y;
  }
  void backward(std::span<const Tensor* const>, const Tensor& y, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (std::size_t i = 0; i < y.size(); ++i) (*g[0])[i] += gy[i] * (1.0 - y[i] * y[i]);
  }
};

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

class SigmoidOp final : public Op {
 public:
  const char* name() const override { return "sigmoid"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    Tensor y = *in[0];
    for (auto& v : y.data()) v = stable_sigmoid(v);
    return y;
  }
  void backward(std::span<const Tensor* const>, const Tensor& y, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (std::size_t i = 0; i < y.size(); ++i) (*g[0])[i] += gy[i] * y[i] * (1.0 - y[i]);
  }
};

void softmax_rows(const double* x, double* y, std::size_t k) {
  const double m = *std::max_element(x, x + k);
  double s = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    y[j] = std::exp(x[j] - m);
    s += y[j];
  }
  for (std::size_t j = 0; j < k; ++j) y[j] /= s;
}

class SoftmaxOp final : public Op {
 public:
  const char* name() const override { return "softmax"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    require_rank(x, 2, "softmax");
    Tensor y(x.shape());
    const std::size_t k = x.dim(1);
    for (std::size_t i = 0; i < x.dim(0); ++i)
      softmax_rows(x.data().data() + i * k, y.data().data() + i * k, k);
    return y;
  }
  void backward(std::span<const Tensor* const>, const Tensor& y, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const std::size_t k = y.dim(1);
    for (std::size_t i = 0; i < y.dim(0); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += gy[i * k + j] * y[i * k + j];
      for (std::size_t j = 0; j < k; ++j)
        (*g[0])[i * k + j] += y[i * k + j] * (gy[i * k + j] - dot);
    }
  }
};

class AddOp final : public Op {
 public:
  const char* name() const override { return "add"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    if (in[0]->shape() != in[1]->shape()) {
      throw ShapeError("add: shapes " + shape_str(in[0]->shape()) + " and " +
                       shape_str(in[1]->shape()) + " differ");
    }
    Tensor y = *in[0];
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += (*in[1])[i];
    return y;
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    for (auto* gi : g) {
      if (!gi) continue;
      for (std::size_t i = 0; i < gy.size(); ++i) (*gi)[i] += gy[i];
    }
  }
};

class ScaleOp final : public Op {
 public:
  ScaleOp(double f, double shift) : f_(f), shift_(shift) {}
  const char* name() const override { return "scale"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    Tensor y = *in[0];
    for (auto& v : y.data()) v = f_ * v + shift_;
    return y;
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (std::size_t i = 0; i < gy.size(); ++i) (*g[0])[i] += f_ * gy[i];
  }

 private:
  double f_;
  double shift_;
};

// ---------------------------------------------------------------------------

// Maps a flat index of a rank-2 or rank-4 tensor to its channel/feature index.
struct ChannelLayout {
  std::size_t n = 0, c = 0, area = 1;

  static ChannelLayout of(const Tensor& x) {
    if (x.rank() == 2) return {x.dim(0), x.dim(1), 1};
    if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2) * x.dim(3)};
    throw ShapeError("batch_norm: expected rank 2 or 4, got " + shape_str(x.shape()));
  }
  std::size_t count() const { return n * area; }
  template <typename F>
  void for_each(std::size_t ch, F&& f) const {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t base = (i * c + ch) * area;
      for (std::size_t a = 0; a < area; ++a) f(base + a);
    }
  }
};

class BatchNormOp final : public Op {
 public:
  // Training mode when running statistics are empty.
  BatchNormOp(double eps, std::vector<double> running_mean, std::vector<double> running_var)
      : eps_(eps), running_mean_(std::move(running_mean)), running_var_(std::move(running_var)) {}

  const char* name() const override { return training() ? "batch_norm_train" : "batch_norm_eval"; }
  bool training() const { return running_mean_.empty(); }

  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    const Tensor& gamma = *in[1];
    const Tensor& beta = *in[2];
    layout_ = ChannelLayout::of(x);
    const std::size_t c = layout_.c;
    if (gamma.size() != c || beta.size() != c) {
      throw ShapeError("batch_norm: " + std::to_string(c) + " channels but gamma " +
                       shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    }
    if (training()) {
      mean_.assign(c, 0.0);
      var_.assign(c, 0.0);
      const double m = static_cast<double>(layout_.count());
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        layout_.for_each(ch, [&](std::size_t i) { s += x[i]; });
        const double mu = s / m;
        double v = 0.0;
        layout_.for_each(ch, [&](std::size_t i) { v += (x[i] - mu) * (x[i] - mu); });
        mean_[ch] = mu;
        var_[ch] = v / m;
      }
    } else {
      if (running_mean_.size() != c || running_var_.size() != c) {
        throw ShapeError("batch_norm: running statistics do not match channel count");
      }
      mean_ = running_mean_;
      var_ = running_var_;
    }
    inv_std_.resize(c);
    for (std::size_t ch = 0; ch < c; ++ch) inv_std_[ch] = 1.0 / std::sqrt(var_[ch] + eps_);
    xhat_ = Tensor(x.shape());
    Tensor y(x.shape());
    for (std::size_t ch = 0; ch < c; ++ch) {
      layout_.for_each(ch, [&](std::size_t i) {
        xhat_[i] = (x[i] - mean_[ch]) * inv_std_[ch];
        y[i] = gamma[ch] * xhat_[i] + beta[ch];
      });
    }
    return y;
  }

  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    const Tensor& gamma = *in[1];
    const double m = static_cast<double>(layout_.count());
    for (std::size_t ch = 0; ch < layout_.c; ++ch) {
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      layout_.for_each(ch, [&](std::size_t i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * xhat_[i];
      });
      if (g[1]) (*g[1])[ch] += sum_gy_xhat;
      if (g[2]) (*g[2])[ch] += sum_gy;
      if (!g[0]) continue;
      const double k = gamma[ch] * inv_std_[ch];
      if (training()) {
        layout_.for_each(ch, [&](std::size_t i) {
          (*g[0])[i] += k * (gy[i] - sum_gy / m - xhat_[i] * sum_gy_xhat / m);
        });
      } else {
        layout_.for_each(ch, [&](std::size_t i) { (*g[0])[i] += k * gy[i]; });
      }
    }
  }

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& var() const { return var_; }

 private:
  double eps_;
  std::vector<double> running_mean_, running_var_;
  ChannelLayout layout_;
  std::vector<double> mean_, var_, inv_std_;
  Tensor xhat_;
};

// ---------------------------------------------------------------------------

class SumOp final : public Op {
 public:
  const char* name() const override { return "sum"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    double s = 0.0;
    for (double v : in[0]->data()) s += v;
    return Tensor({1}, {s});
  }
  void backward(std::span<const Tensor* const>, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (auto& v : g[0]->data()) v += gy[0];
  }
};

class HalfSquaredNormOp final : public Op {
 public:
  const char* name() const override { return "half_squared_norm"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    double s = 0.0;
    for (double v : in[0]->data()) s += v * v;
    return Tensor({1}, {0.5 * s});
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    for (std::size_t i = 0; i < in[0]->size(); ++i) (*g[0])[i] += gy[0] * (*in[0])[i];
  }
};

class ColumnSumOp final : public Op {
 public:
  explicit ColumnSumOp(std::size_t col) : col_(col) {}
  const char* name() const override { return "column_sum"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& x = *in[0];
    require_rank(x, 2, "column_sum");
    if (col_ >= x.dim(1)) throw ShapeError("column_sum: column out of range");
    double s = 0.0;
    for (std::size_t i = 0; i < x.dim(0); ++i) s += x[i * x.dim(1) + col_];
    return Tensor({1}, {s});
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const std::size_t k = in[0]->dim(1);
    for (std::size_t i = 0; i < in[0]->dim(0); ++i) (*g[0])[i * k + col_] += gy[0];
  }

 private:
  std::size_t col_;
};

class CrossEntropyOp final : public Op {
 public:
  CrossEntropyOp(std::vector<int> labels, Reduction r) : labels_(std::move(labels)), r_(r) {}
  const char* name() const override { return "cross_entropy"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& p = *in[0];
    require_rank(p, 2, "cross_entropy");
    check_labels(labels_, p.dim(0), p.dim(1), "cross_entropy");
    double s = 0.0;
    for (std::size_t i = 0; i < p.dim(0); ++i) s -= std::log(p[i * p.dim(1) + labels_[i]]);
    return Tensor({1}, {r_ == Reduction::kMean ? s / static_cast<double>(p.dim(0)) : s});
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const Tensor& p = *in[0];
    const double f = r_ == Reduction::kMean ? gy[0] / static_cast<double>(p.dim(0)) : gy[0];
    for (std::size_t i = 0; i < p.dim(0); ++i) {
      const std::size_t idx = i * p.dim(1) + labels_[i];
      (*g[0])[idx] -= f / p[idx];
    }
  }

 private:
  std::vector<int> labels_;
  Reduction r_;
};

class SoftmaxCrossEntropyOp final : public Op {
 public:
  SoftmaxCrossEntropyOp(std::vector<int> labels, Reduction r)
      : labels_(std::move(labels)), r_(r) {}
  const char* name() const override { return "softmax_cross_entropy"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& z = *in[0];
    require_rank(z, 2, "softmax_cross_entropy");
    const std::size_t n = z.dim(0), k = z.dim(1);
    check_labels(labels_, n, k, "softmax_cross_entropy");
    probs_ = Tensor(z.shape());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = z.data().data() + i * k;
      softmax_rows(row, probs_.data().data() + i * k, k);
      const double m = *std::max_element(row, row + k);
      double lse = 0.0;
      for (std::size_t j = 0; j < k; ++j) lse += std::exp(row[j] - m);
      s += m + std::log(lse) - row[labels_[i]];
    }
    return Tensor({1}, {r_ == Reduction::kMean ? s / static_cast<double>(n) : s});
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const std::size_t n = in[0]->dim(0), k = in[0]->dim(1);
    const double f = r_ == Reduction::kMean ? gy[0] / static_cast<double>(n) : gy[0];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double t = static_cast<std::size_t>(labels_[i]) == j ? 1.0 : 0.0;
        (*g[0])[i * k + j] += f * (probs_[i * k + j] - t);
      }
  }

 private:
  std::vector<int> labels_;
  Reduction r_;
  Tensor probs_;
};

class SigmoidBceOp final : public Op {
 public:
  SigmoidBceOp(std::vector<int> labels, Reduction r) : labels_(std::move(labels)), r_(r) {}
  const char* name() const override { return "sigmoid_binary_cross_entropy"; }
  Tensor forward(std::span<const Tensor* const> in) override {
    const Tensor& z = *in[0];
    const std::size_t n = z.dim(0);
    if (z.size() != n) {
      throw ShapeError("sigmoid_binary_cross_entropy: expected one logit per example, got " +
                       shape_str(z.shape()));
    }
    check_labels(labels_, n, 2, "sigmoid_binary_cross_entropy");
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = z[i];
      s += std::max(v, 0.0) - v * labels_[i] + std::log1p(std::exp(-std::abs(v)));
    }
    return Tensor({1}, {r_ == Reduction::kMean ? s / static_cast<double>(n) : s});
  }
  void backward(std::span<const Tensor* const> in, const Tensor&, const Tensor& gy,
                std::span<Tensor* const> g) const override {
    if (!g[0]) return;
    const Tensor& z = *in[0];
    const std::size_t n = z.dim(0);
    const double f = r_ == Reduction::kMean ? gy[0] / static_cast<double>(n) : gy[0];
    for (std::size_t i = 0; i < n; ++i)
      (*g[0])[i] += f * (stable_sigmoid(z[i]) - labels_[i]);
  }

 private:
  std::vector<int> labels_;
  Reduction r_;
};

}  // namespace

NodeId dense(Tape& tape, NodeId x, NodeId weight, NodeId bias) {
  return tape.apply(std::make_unique<DenseOp>(), {x, weight, bias});
}

NodeId conv2d(Tape& tape, NodeId x, NodeId weight, NodeId bias, std::size_t stride) {
  return tape.apply(std::make_unique<Conv2dOp>(stride), {x, weight, bias});
}

NodeId max_pool2(Tape& tape, NodeId x) { return tape.apply(std::make_unique<MaxPool2Op>(), {x}); }

NodeId global_avg_pool(Tape& tape, NodeId x) {
  return tape.apply(std::make_unique<GlobalAvgPoolOp>(), {x});
}

NodeId relu(Tape& tape, NodeId x) { return tape.apply(std::make_unique<ReluOp>(), {x}); }
NodeId tanh(Tape& tape, NodeId x) { return tape.apply(std::make_unique<TanhOp>(), {x}); }
NodeId sigmoid(Tape& tape, NodeId x) { return tape.apply(std::make_unique<SigmoidOp>(), {x}); }
NodeId softmax(Tape& tape, NodeId x) { return tape.apply(std::make_unique<SoftmaxOp>(), {x}); }
NodeId add(Tape& tape, NodeId a, NodeId b) { return tape.apply(std::make_unique<AddOp>(), {a, b}); }
NodeId scale(Tape& tape, NodeId x, double factor) {
  return tape.apply(std::make_unique<ScaleOp>(factor, 0.0), {x});
}

NodeId affine(Tape& tape, NodeId x, double factor, double shift) {
  return tape.apply(std::make_unique<ScaleOp>(factor, shift), {x});
}

NodeId batch_norm_train(Tape& tape, NodeId x, NodeId gamma, NodeId beta, double eps) {
  return tape.apply(std::make_unique<BatchNormOp>(eps, std::vector<double>{}, std::vector<double>{}),
                    {x, gamma, beta});
}

NodeId batch_norm_eval(Tape& tape, NodeId x, NodeId gamma, NodeId beta,
                       std::vector<double> running_mean, std::vector<double> running_var,
                       double eps) {
  if (running_mean.empty()) throw ShapeError("batch_norm_eval: empty running statistics");
  return tape.apply(
      std::make_unique<BatchNormOp>(eps, std::move(running_mean), std::move(running_var)),
      {x, gamma, beta});
}

std::pair<std::vector<double>, std::vector<double>> batch_norm_stats(const Tape& tape,
                                                                     NodeId node) {
  const auto* op = dynamic_cast<const BatchNormOp*>(tape.op(node));
  if (!op || !op->training()) throw Error("node is not a training-mode batch_norm");
  return {op->mean(), op->var()};
}

NodeId sum(Tape& tape, NodeId x) { return tape.apply(std::make_unique<SumOp>(), {x}); }

NodeId half_squared_norm(Tape& tape, NodeId x) {
  return tape.apply(std::make_unique<HalfSquaredNormOp>(), {x});
}

NodeId column_sum(Tape& tape, NodeId x, std::size_t column) {
  return tape.apply(std::make_unique<ColumnSumOp>(column), {x});
}

NodeId cross_entropy(Tape& tape, NodeId probs, std::span<const int> labels, Reduction reduction) {
  return tape.apply(
      std::make_unique<CrossEntropyOp>(std::vector<int>(labels.begin(), labels.end()), reduction),
      {probs});
}

NodeId softmax_cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels,
                             Reduction reduction) {
  return tape.apply(std::make_unique<SoftmaxCrossEntropyOp>(
                        std::vector<int>(labels.begin(), labels.end()), reduction),
                    {logits});
}

NodeId sigmoid_binary_cross_entropy(Tape& tape, NodeId logits, std::span<const int> labels,
                                    Reduction reduction) {
  return tape.apply(
      std::make_unique<SigmoidBceOp>(std::vector<int>(labels.begin(), labels.end()), reduction),
      {logits});
}

}  // namespace advdet::ops
