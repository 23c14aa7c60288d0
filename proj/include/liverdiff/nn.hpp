#pragma once

// Minimal layer set with hand-written backward passes.
//
// Activations are stored channel-major: a FeatureMap holds a
// channels x (batch * height * width) matrix, column index
// b * H * W + y * W + x. Every layer caches what its backward pass needs
// during forward(); backward() must follow the matching forward().

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace liverdiff::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct FeatureMap {
  Mat<S> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_, int height_, int width_)
      : data(Mat<S>::Zero(channels, static_cast<Eigen::Index>(batch_) * height_ * width_)),
        batch(batch_), height(height_), width(width_) {}
  FeatureMap(Mat<S> d, int batch_, int height_, int width_)
      : data(std::move(d)), batch(batch_), height(height_), width(width_) {
    if (data.cols() != static_cast<Eigen::Index>(batch) * height * width)
      throw std::invalid_argument("feature map column count does not match batch*height*width");
  }

  [[nodiscard]] int channels() const { return static_cast<int>(data.rows()); }
  [[nodiscard]] Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }
  [[nodiscard]] bool same_shape(const FeatureMap& o) const {
    return data.rows() == o.data.rows() && batch == o.batch && height == o.height && width == o.width;
  }
  /// Columns of sample b.
  auto sample(int b) { return data.middleCols(b * pixels(), pixels()); }
  auto sample(int b) const { return data.middleCols(b * pixels(), pixels()); }
};

template <typename S>
struct Param {
  std::string name;
  Mat<S> value;
  Mat<S> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Mat<S> v) : name(std::move(n)), value(std::move(v)), grad(Mat<S>::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename S>
using ParamList = std::vector<Param<S>*>;

template <typename S>
Mat<S> he_normal(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Mat<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(n(rng));
  return m;
}

/// 3x3 convolution, padding 1, stride 1 or 2, via im2col + GEMM.
template <typename S>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_ch, int out_ch, int stride, std::mt19937_64& rng, bool zero_init = false)
      : in_(in_ch), out_(out_ch), stride_(stride),
        weight_(name + ".weight", zero_init ? Mat<S>::Zero(out_ch, 9 * in_ch) : he_normal<S>(out_ch, 9 * in_ch, 9 * in_ch, rng)),
        bias_(name + ".bias", Mat<S>::Zero(out_ch, 1)) {
    if (stride != 1 && stride != 2) throw std::invalid_argument("Conv2d supports stride 1 or 2");
  }

  FeatureMap<S> forward(const FeatureMap<S>& x) {
    if (x.channels() != in_) throw std::invalid_argument(weight_.name + ": input channel mismatch");
    in_shape_ = {x.batch, x.height, x.width};
    const int oh = (x.height - 1) / stride_ + 1;
    const int ow = (x.width - 1) / stride_ + 1;
    cols_.resize(9 * in_, static_cast<Eigen::Index>(x.batch) * oh * ow);
    Eigen::Index n = 0;
    for (int b = 0; b < x.batch; ++b) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++n) {
          for (int k = 0; k < 9; ++k) {
            const int iy = oy * stride_ + k / 3 - 1;
            const int ix = ox * stride_ + k % 3 - 1;
            auto dst = cols_.col(n).segment(static_cast<Eigen::Index>(k) * in_, in_);
            if (iy < 0 || ix < 0 || iy >= x.height || ix >= x.width) {
              dst.setZero();
            } else {
              dst = x.data.col((static_cast<Eigen::Index>(b) * x.height + iy) * x.width + ix);
            }
          }
        }
      }
    }
    FeatureMap<S> y;
    y.batch = x.batch;
    y.height = oh;
    y.width = ow;
    y.data.noalias() = weight_.value * cols_;
    y.data.colwise() += bias_.value.col(0);
    return y;
  }

  FeatureMap<S> backward(const FeatureMap<S>& dy) {
    weight_.grad.noalias() += dy.data * cols_.transpose();
    bias_.grad.col(0) += dy.data.rowwise().sum();
    const Mat<S> dcols = weight_.value.transpose() * dy.data;
    const auto [batch, h, w] = in_shape_;
    FeatureMap<S> dx(in_, batch, h, w);
    Eigen::Index n = 0;
    for (int b = 0; b < batch; ++b) {
      for (int oy = 0; oy < dy.height; ++oy) {
        for (int ox = 0; ox < dy.width; ++ox, ++n) {
          for (int k = 0; k < 9; ++k) {
            const int iy = oy * stride_ + k / 3 - 1;
            const int ix = ox * stride_ + k % 3 - 1;
            if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
            dx.data.col((static_cast<Eigen::Index>(b) * h + iy) * w + ix) +=
                dcols.col(n).segment(static_cast<Eigen::Index>(k) * in_, in_);
          }
        }
      }
    }
    return dx;
  }

  void collect(ParamList<S>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  [[nodiscard]] int in_channels() const { return in_; }
  [[nodiscard]] int out_channels() const { return out_; }

 private:
  struct Shape { int batch = 0, height = 0, width = 0; };
  int in_ = 0;
  int out_ = 0;
  int stride_ = 1;
  Param<S> weight_;
  Param<S> bias_;
  Mat<S> cols_;
  Shape in_shape_;
};

/// Dense layer on column vectors: y = W x + b, x is in_features x N.
template <typename S>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features, std::mt19937_64& rng)
      : weight_(name + ".weight", he_normal<S>(out_features, in_features, in_features, rng)),
        bias_(name + ".bias", Mat<S>::Zero(out_features, 1)) {}

  Mat<S> forward(const Mat<S>& x) {
    x_ = x;
    Mat<S> y = weight_.value * x;
    y.colwise() += bias_.value.col(0);
    return y;
  }
  Mat<S> backward(const Mat<S>& dy) {
    weight_.grad.noalias() += dy * x_.transpose();
    bias_.grad.col(0) += dy.rowwise().sum();
    return weight_.value.transpose() * dy;
  }
  void collect(ParamList<S>& out) { out.push_back(&weight_); out.push_back(&bias_); }
  Param<S>& weight() { return weight_; }
  Param<S>& bias() { return bias_; }

 private:
  Param<S> weight_;
  Param<S> bias_;
  Mat<S> x_;
};

template <typename S>
class SiLU {
 public:
  Mat<S> forward(const Mat<S>& x) {
    sig_ = (S(1) + (-x.array()).exp()).inverse().matrix();
    x_ = x;
    return (x.array() * sig_.array()).matrix();
  }
  Mat<S> backward(const Mat<S>& dy) const {
    // d/dx x*s(x) = s + x*s*(1-s)
    return (dy.array() * (sig_.array() + x_.array() * sig_.array() * (S(1) - sig_.array()))).matrix();
  }

 private:
  Mat<S> x_;
  Mat<S> sig_;
};

template <typename S>
class ReLU {
 public:
  Mat<S> forward(const Mat<S>& x) {
    mask_ = (x.array() > S(0)).template cast<S>().matrix();
    return x.cwiseMax(S(0));
  }
  Mat<S> backward(const Mat<S>& dy) const { return dy.cwiseProduct(mask_); }

 private:
  Mat<S> mask_;
};

template <typename S>
FeatureMap<S> upsample2x(const FeatureMap<S>& x) {
  FeatureMap<S> y(x.channels(), x.batch, 2 * x.height, 2 * x.width);
  for (int b = 0; b < x.batch; ++b)
    for (int yy = 0; yy < y.height; ++yy)
      for (int xx = 0; xx < y.width; ++xx)
        y.data.col((static_cast<Eigen::Index>(b) * y.height + yy) * y.width + xx) =
            x.data.col((static_cast<Eigen::Index>(b) * x.height + yy / 2) * x.width + xx / 2);
  return y;
}

template <typename S>
FeatureMap<S> upsample2x_backward(const FeatureMap<S>& dy) {
  FeatureMap<S> dx(dy.channels(), dy.batch, dy.height / 2, dy.width / 2);
  for (int b = 0; b < dy.batch; ++b)
    for (int yy = 0; yy < dy.height; ++yy)
      for (int xx = 0; xx < dy.width; ++xx)
        dx.data.col((static_cast<Eigen::Index>(b) * dx.height + yy / 2) * dx.width + xx / 2) +=
            dy.data.col((static_cast<Eigen::Index>(b) * dy.height + yy) * dy.width + xx);
  return dx;
}

/// Channel stacking [a; b].
template <typename S>
FeatureMap<S> concat_channels(const FeatureMap<S>& a, const FeatureMap<S>& b) {
  if (a.batch != b.batch || a.height != b.height || a.width != b.width)
    throw std::invalid_argument("concat_channels: spatial shape mismatch");
  FeatureMap<S> y(a.channels() + b.channels(), a.batch, a.height, a.width);
  y.data.topRows(a.channels()) = a.data;
  y.data.bottomRows(b.channels()) = b.data;
  return y;
}

/// Adds a per-sample channel vector (C x B) to every pixel of x.
template <typename S>
void add_per_sample(FeatureMap<S>& x, const Mat<S>& v) {
  for (int b = 0; b < x.batch; ++b) x.sample(b).colwise() += v.col(b);
}

/// Gradient of add_per_sample w.r.t. v: per-sample spatial sum.
template <typename S>
Mat<S> sum_per_sample(const FeatureMap<S>& dx) {
  Mat<S> dv(dx.channels(), dx.batch);
  for (int b = 0; b < dx.batch; ++b) dv.col(b) = dx.sample(b).rowwise().sum();
  return dv;
}

template <typename S>
Mat<S> global_avg_pool(const FeatureMap<S>& x) {
  return sum_per_sample(x) / static_cast<S>(x.pixels());
}

template <typename S>
FeatureMap<S> global_avg_pool_backward(const Mat<S>& dv, int height, int width) {
  FeatureMap<S> dx(static_cast<int>(dv.rows()), static_cast<int>(dv.cols()), height, width);
  const S inv = S(1) / static_cast<S>(static_cast<Eigen::Index>(height) * width);
  for (int b = 0; b < dx.batch; ++b) dx.sample(b).colwise() = dv.col(b) * inv;
  return dx;
}

/// Sinusoidal timestep features, dim x B.
template <typename S>
Mat<S> timestep_embedding(const std::vector<int>& timesteps, int dim) {
  Mat<S> e(dim, static_cast<Eigen::Index>(timesteps.size()));
  const int half = dim / 2;
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = timesteps[b] * freq;
      e(i, static_cast<Eigen::Index>(b)) = static_cast<S>(std::sin(a));
      e(half + i, static_cast<Eigen::Index>(b)) = static_cast<S>(std::cos(a));
    }
  }
  return e;
}

/// Learned lookup table; rows are stored as columns of a dim x n matrix.
template <typename S>
class Embedding {
 public:
  Embedding() = default;
  Embedding(const std::string& name, int n_rows, int dim, std::mt19937_64& rng) : table_(name, Mat<S>(dim, n_rows)) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index i = 0; i < table_.value.size(); ++i) table_.value.data()[i] = static_cast<S>(n(rng));
  }
  Mat<S> forward(const std::vector<int>& rows) {
    rows_ = rows;
    Mat<S> out(table_.value.rows(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = table_.value.col(rows[i]);
    return out;
  }
  void backward(const Mat<S>& dy) {
    for (std::size_t i = 0; i < rows_.size(); ++i) table_.grad.col(rows_[i]) += dy.col(static_cast<Eigen::Index>(i));
  }
  [[nodiscard]] Vec<S> row(int r) const { return table_.value.col(r); }
  [[nodiscard]] int dim() const { return static_cast<int>(table_.value.rows()); }
  void collect(ParamList<S>& out) { out.push_back(&table_); }

 private:
  Param<S> table_;
  std::vector<int> rows_;
};

/// Residual cross-attention: queries from spatial features, keys and values
/// from per-sample context tokens (context_dim x (B * n_tokens)).
template <typename S>
class CrossAttention {
 public:
  CrossAttention() = default;
  CrossAttention(const std::string& name, int channels, int context_dim, int attn_dim, std::mt19937_64& rng)
      : attn_dim_(attn_dim),
        wq_(name + ".q", he_normal<S>(attn_dim, channels, channels, rng)),
        wk_(name + ".k", he_normal<S>(attn_dim, context_dim, context_dim, rng)),
        wv_(name + ".v", he_normal<S>(attn_dim, context_dim, context_dim, rng)),
        wo_(name + ".out", Mat<S>::Zero(channels, attn_dim)) {}

  FeatureMap<S> forward(const FeatureMap<S>& x, const Mat<S>& context, int n_tokens) {
    x_ = x;
    ctx_ = context;
    n_tokens_ = n_tokens;
    const S scale = S(1) / std::sqrt(static_cast<S>(attn_dim_));
    q_.resize(x.batch);
    k_.resize(x.batch);
    v_.resize(x.batch);
    a_.resize(x.batch);
    o_.resize(x.batch);
    FeatureMap<S> y = x;
    for (int b = 0; b < x.batch; ++b) {
      const auto ctx_b = context.middleCols(static_cast<Eigen::Index>(b) * n_tokens, n_tokens);
      q_[b] = wq_.value * x.sample(b);
      k_[b] = wk_.value * ctx_b;
      v_[b] = wv_.value * ctx_b;
      Mat<S> scores = (k_[b].transpose() * q_[b]) * scale;  // n_tokens x HW
      Eigen::Matrix<S, 1, Eigen::Dynamic> mx = scores.colwise().maxCoeff();
      scores.rowwise() -= mx;
      scores = scores.array().exp().matrix();
      Eigen::Matrix<S, 1, Eigen::Dynamic> denom = scores.colwise().sum();
      for (Eigen::Index c = 0; c < scores.cols(); ++c) scores.col(c) /= denom(c);
      a_[b] = scores;
      o_[b] = v_[b] * a_[b];
      y.sample(b) += wo_.value * o_[b];
    }
    return y;
  }

  /// Returns dL/dx; accumulates dL/dcontext into context_grad (same shape as context).
  FeatureMap<S> backward(const FeatureMap<S>& dy, Mat<S>& context_grad) {
    const S scale = S(1) / std::sqrt(static_cast<S>(attn_dim_));
    FeatureMap<S> dx = dy;  // residual path
    context_grad.setZero(ctx_.rows(), ctx_.cols());
    for (int b = 0; b < dy.batch; ++b) {
      const auto dy_b = dy.sample(b);
      const auto ctx_b = ctx_.middleCols(static_cast<Eigen::Index>(b) * n_tokens_, n_tokens_);
      wo_.grad.noalias() += dy_b * o_[b].transpose();
      const Mat<S> d_o = wo_.value.transpose() * dy_b;
      const Mat<S> d_v = d_o * a_[b].transpose();
      const Mat<S> d_a = v_[b].transpose() * d_o;
      Eigen::Matrix<S, 1, Eigen::Dynamic> dot = (a_[b].array() * d_a.array()).colwise().sum();
      Mat<S> d_s = d_a;
      d_s.rowwise() -= dot;
      d_s = (a_[b].array() * d_s.array()).matrix() * scale;
      const Mat<S> d_q = k_[b] * d_s;
      const Mat<S> d_k = q_[b] * d_s.transpose();
      wq_.grad.noalias() += d_q * x_.sample(b).transpose();
      wk_.grad.noalias() += d_k * ctx_b.transpose();
      wv_.grad.noalias() += d_v * ctx_b.transpose();
      dx.sample(b) += wq_.value.transpose() * d_q;
      context_grad.middleCols(static_cast<Eigen::Index>(b) * n_tokens_, n_tokens_) =
          wk_.value.transpose() * d_k + wv_.value.transpose() * d_v;
    }
    return dx;
  }

  void collect(ParamList<S>& out) { out.push_back(&wq_); out.push_back(&wk_); out.push_back(&wv_); out.push_back(&wo_); }

 private:
  int attn_dim_ = 0;
  Param<S> wq_, wk_, wv_, wo_;
  FeatureMap<S> x_;
  Mat<S> ctx_;
  int n_tokens_ = 1;
  std::vector<Mat<S>> q_, k_, v_, a_, o_;
};

template <typename S>
void zero_grads(const ParamList<S>& params) {
  for (auto* p : params) p->zero_grad();
}

template <typename S>
Eigen::Index count_parameters(const ParamList<S>& params) {
  Eigen::Index n = 0;
  for (const auto* p : params) n += p->value.size();
  return n;
}

}  // namespace liverdiff::nn
