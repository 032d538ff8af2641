#pragma once

// Differentiable tensor operations. Convolutions lower to im2col + Eigen GEMM.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "cae/autograd.hpp"

namespace cae {

struct Conv2dOptions {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;

  static Conv2dOptions square(std::size_t stride, std::size_t pad) { return {stride, stride, pad, pad}; }
};

struct ConvTranspose2dOptions {
  std::size_t stride = 2;
  std::size_t pad = 1;
  std::size_t output_pad = 1;
};

// Non-learned batch-norm state: running mean and (unbiased) variance per channel.
template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit BatchNormStats(std::size_t channels = 0) : mean(Shape{channels}, T{0}), var(Shape{channels}, T{1}) {}
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Geometry of a sliding window over a (channels, in_h, in_w) image producing an
// (out_h, out_w) grid.
struct Window {
  std::size_t channels, in_h, in_w;
  std::size_t k_h, k_w;
  std::size_t stride_h, stride_w, pad_h, pad_w;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * k_h * k_w; }
  std::size_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const T* image, const Window& g, T* cols) {
  const std::size_t grid = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.k_h; ++kh) {
      for (std::size_t kw = 0; kw < g.k_w; ++kw) {
        T* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * grid;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride_h + kh) - static_cast<long>(g.pad_h);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride_w + kw) - static_cast<long>(g.pad_w);
            dst[ow] = (iw < 0 || iw >= static_cast<long>(g.in_w)) ? T{0} : src[iw];
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
template <typename T>
void col2im(const T* cols, const Window& g, T* image) {
  const std::size_t grid = g.cols();
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = image + c * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.k_h; ++kh) {
      for (std::size_t kw = 0; kw < g.k_w; ++kw) {
        const T* row = cols + ((c * g.k_h + kh) * g.k_w + kw) * grid;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride_h + kh) - static_cast<long>(g.pad_h);
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * g.in_w;
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const long iw = static_cast<long>(ow * g.stride_w + kw) - static_cast<long>(g.pad_w);
            if (iw >= 0 && iw < static_cast<long>(g.in_w)) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

inline std::size_t conv_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < k) throw ShapeError("convolution kernel larger than padded input");
  return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
void require_rank(const Var<T>& v, std::size_t rank, const char* what) {
  if (v.value().rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + " input, got " +
                     to_string(v.shape()));
}

template <typename T>
Node<T>& input(Node<T>& self, std::size_t i) {
  return *self.inputs[i];
}

}  // namespace detail

// x: [N, C, H, W], weight: [O, C, KH, KW], bias: [O] or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dOptions opt) {
  detail::require_rank(x, 4, "conv2d");
  detail::require_rank(weight, 4, "conv2d weight");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1])
    throw ShapeError("conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " + std::to_string(ws[1]));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{ws[0]}) throw ShapeError("conv2d: bias shape mismatch");

  const std::size_t batch = xs[0], out_ch = ws[0];
  const detail::Window g{xs[1],        xs[2],     xs[3],     ws[2],
                         ws[3],        opt.stride_h, opt.stride_w, opt.pad_h,
                         opt.pad_w,    detail::conv_out(xs[2], ws[2], opt.stride_h, opt.pad_h),
                         detail::conv_out(xs[3], ws[3], opt.stride_w, opt.pad_w)};
  const std::size_t in_plane = g.channels * g.in_h * g.in_w, out_plane = out_ch * g.cols();

  Tensor<T> out(Shape{batch, out_ch, g.out_h, g.out_w});
  AlignedVector<T> cols(g.rows() * g.cols());
  detail::ConstMatMap<T> w(weight.value().data(), out_ch, g.rows());
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(x.value().data() + n * in_plane, g, cols.data());
    detail::MatMap<T> y(out.data() + n * out_plane, out_ch, g.cols());
    y.noalias() = w * detail::ConstMatMap<T>(cols.data(), g.rows(), g.cols());
    if (has_bias)
      for (std::size_t o = 0; o < out_ch; ++o) y.row(o).array() += bias.value()[o];
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [g, batch, out_ch, in_plane, out_plane, has_bias](Node<T>& self) {
    auto& xn = detail::input(self, 0);
    auto& wn = detail::input(self, 1);
    const T* grad = self.grad.data();
    AlignedVector<T> cols(g.rows() * g.cols());
    detail::ConstMatMap<T> w(wn.value.data(), out_ch, g.rows());
    for (std::size_t n = 0; n < batch; ++n) {
      detail::ConstMatMap<T> gy(grad + n * out_plane, out_ch, g.cols());
      if (wn.requires_grad) {
        detail::im2col(xn.value.data() + n * in_plane, g, cols.data());
        detail::MatMap<T>(wn.grad_buffer().data(), out_ch, g.rows()).noalias() +=
            gy * detail::ConstMatMap<T>(cols.data(), g.rows(), g.cols()).transpose();
      }
      if (xn.requires_grad) {
        detail::MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() = w.transpose() * gy;
        detail::col2im(cols.data(), g, xn.grad_buffer().data() + n * in_plane);
      }
      if (has_bias && detail::input(self, 2).requires_grad) {
        T* gb = detail::input(self, 2).grad_buffer().data();
        for (std::size_t o = 0; o < out_ch; ++o) gb[o] += gy.row(o).sum();
      }
    }
  });
}

// x: [N, Cin, H, W], weight: [Cin, Cout, KH, KW], bias: [Cout] or undefined.
// Output spatial size is (H - 1) * stride - 2 * pad + K + output_pad.
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvTranspose2dOptions opt) {
  detail::require_rank(x, 4, "conv_transpose2d");
  detail::require_rank(weight, 4, "conv_transpose2d weight");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[0] != xs[1])
    throw ShapeError("conv_transpose2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                     std::to_string(ws[0]));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{ws[1]}) throw ShapeError("conv_transpose2d: bias shape mismatch");

  const std::size_t batch = xs[0], in_ch = xs[1], out_ch = ws[1];
  const std::size_t out_h = (xs[2] - 1) * opt.stride + ws[2] + opt.output_pad - 2 * opt.pad;
  const std::size_t out_w = (xs[3] - 1) * opt.stride + ws[3] + opt.output_pad - 2 * opt.pad;
  // The transposed op scatters an (H, W) grid into the (out_h, out_w) image.
  const detail::Window g{out_ch, out_h, out_w, ws[2], ws[3], opt.stride, opt.stride, opt.pad, opt.pad, xs[2], xs[3]};
  if (detail::conv_out(out_h, ws[2], opt.stride, opt.pad) != xs[2]) throw ShapeError("conv_transpose2d: bad geometry");
  const std::size_t in_plane = in_ch * g.cols(), out_plane = out_ch * out_h * out_w;

  Tensor<T> out(Shape{batch, out_ch, out_h, out_w});
  AlignedVector<T> cols(g.rows() * g.cols());
  detail::ConstMatMap<T> w(weight.value().data(), in_ch, g.rows());
  for (std::size_t n = 0; n < batch; ++n) {
    detail::MatMap<T>(cols.data(), g.rows(), g.cols()).noalias() =
        w.transpose() * detail::ConstMatMap<T>(x.value().data() + n * in_plane, in_ch, g.cols());
    T* y = out.data() + n * out_plane;
    detail::col2im(cols.data(), g, y);
    if (has_bias)
      for (std::size_t o = 0; o < out_ch; ++o) {
        const T b = bias.value()[o];
        for (std::size_t i = 0; i < out_h * out_w; ++i) y[o * out_h * out_w + i] += b;
      }
  }

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [g, batch, in_ch, out_ch, in_plane, out_plane, has_bias](Node<T>& self) {
    auto& xn = detail::input(self, 0);
    auto& wn = detail::input(self, 1);
    AlignedVector<T> cols(g.rows() * g.cols());
    detail::ConstMatMap<T> w(wn.value.data(), in_ch, g.rows());
    detail::ConstMatMap<T> gcols(cols.data(), g.rows(), g.cols());
    for (std::size_t n = 0; n < batch; ++n) {
      const T* gy = self.grad.data() + n * out_plane;
      detail::im2col(gy, g, cols.data());
      if (xn.requires_grad)
        detail::MatMap<T>(xn.grad_buffer().data() + n * in_plane, in_ch, g.cols()).noalias() += w * gcols;
      if (wn.requires_grad)
        detail::MatMap<T>(wn.grad_buffer().data(), in_ch, g.rows()).noalias() +=
            detail::ConstMatMap<T>(xn.value.data() + n * in_plane, in_ch, g.cols()) * gcols.transpose();
      if (has_bias && detail::input(self, 2).requires_grad) {
        T* gb = detail::input(self, 2).grad_buffer().data();
        const std::size_t plane = g.in_h * g.in_w;
        for (std::size_t o = 0; o < out_ch; ++o) {
          T s{0};
          for (std::size_t i = 0; i < plane; ++i) s += gy[o * plane + i];
          gb[o] += s;
        }
      }
    }
  });
}

// Per-channel normalization over (N, H, W). In training mode the batch
// statistics are used and the running statistics are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormStats<T>& stats, bool training,
                  T momentum = T(0.1), T eps = T(1e-5)) {
  detail::require_rank(x, 4, "batch_norm");
  const auto& xs = x.shape();
  const std::size_t batch = xs[0], ch = xs[1], plane = xs[2] * xs[3], count = batch * plane;
  if (gamma.shape() != Shape{ch} || beta.shape() != Shape{ch} || stats.mean.shape() != Shape{ch})
    throw ShapeError("batch_norm: channel count mismatch for input " + to_string(xs));

  Tensor<T> out(xs);
  Tensor<T> x_hat(xs);
  std::vector<T> inv_std(ch);
  const T* in = x.value().data();
  for (std::size_t c = 0; c < ch; ++c) {
    T mean, var;
    if (training) {
      T s{0};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < plane; ++i) s += in[(n * ch + c) * plane + i];
      mean = s / T(count);
      T ss{0};
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < plane; ++i) {
          const T d = in[(n * ch + c) * plane + i] - mean;
          ss += d * d;
        }
      var = ss / T(count);
      const T unbiased = count > 1 ? ss / T(count - 1) : var;
      stats.mean[c] = (T{1} - momentum) * stats.mean[c] + momentum * mean;
      stats.var[c] = (T{1} - momentum) * stats.var[c] + momentum * unbiased;
    } else {
      mean = stats.mean[c];
      var = stats.var[c];
    }
    inv_std[c] = T{1} / std::sqrt(var + eps);
    const T gm = gamma.value()[c], bt = beta.value()[c];
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t idx = (n * ch + c) * plane + i;
        x_hat[idx] = (in[idx] - mean) * inv_std[c];
        out[idx] = gm * x_hat[idx] + bt;
      }
  }

  return make_result<T>(std::move(out), {x, gamma, beta},
                        [x_hat = std::move(x_hat), inv_std = std::move(inv_std), batch, ch, plane, count,
                         training](Node<T>& self) {
                          auto& xn = detail::input(self, 0);
                          auto& gn = detail::input(self, 1);
                          auto& bn = detail::input(self, 2);
                          const T* gy = self.grad.data();
                          for (std::size_t c = 0; c < ch; ++c) {
                            T sum_g{0}, sum_gx{0};
                            for (std::size_t n = 0; n < batch; ++n)
                              for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t idx = (n * ch + c) * plane + i;
                                sum_g += gy[idx];
                                sum_gx += gy[idx] * x_hat[idx];
                              }
                            if (gn.requires_grad) gn.grad_buffer()[c] += sum_gx;
                            if (bn.requires_grad) bn.grad_buffer()[c] += sum_g;
                            if (!xn.requires_grad) continue;
                            T* gx = xn.grad_buffer().data();
                            const T scale = gn.value[c] * inv_std[c];
                            const T m = T(count);
                            for (std::size_t n = 0; n < batch; ++n)
                              for (std::size_t i = 0; i < plane; ++i) {
                                const std::size_t idx = (n * ch + c) * plane + i;
                                gx[idx] += training ? scale * (gy[idx] - sum_g / m - x_hat[idx] * sum_gx / m)
                                                    : scale * gy[idx];
                              }
                          }
                        });
}

namespace detail {

template <typename T, typename F, typename DF>
Var<T> elementwise(const Var<T>& x, F f, DF df_from_in_out) {
  Tensor<T> out(x.shape());
  const T* in = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  Tensor<T> saved = out;
  return make_result<T>(std::move(out), {x}, [saved = std::move(saved), df_from_in_out](Node<T>& self) {
    auto& xn = input(self, 0);
    T* gx = xn.grad_buffer().data();
    const T* gy = self.grad.data();
    const T* in = xn.value.data();
    for (std::size_t i = 0; i < saved.size(); ++i) gx[i] += gy[i] * df_from_in_out(in[i], saved[i]);
  });
}

}  // namespace detail

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::elementwise(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T in, T) { return in > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return detail::elementwise(
      x, [slope](T v) { return v > T{0} ? v : slope * v; }, [slope](T in, T) { return in > T{0} ? T{1} : slope; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return detail::elementwise(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T{1} - y * y; });
}

template <typename T>
T sigmoid_value(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::elementwise(
      x, [](T v) { return sigmoid_value(v); }, [](T, T y) { return y * (T{1} - y); });
}

// 2x2 max pooling with stride 2.
template <typename T>
Var<T> max_pool2x2(const Var<T>& x) {
  detail::require_rank(x, 4, "max_pool2x2");
  const auto& xs = x.shape();
  if (xs[2] % 2 || xs[3] % 2) throw ShapeError("max_pool2x2 requires even spatial size, got " + to_string(xs));
  const std::size_t oh = xs[2] / 2, ow = xs[3] / 2, planes = xs[0] * xs[1];
  Tensor<T> out(Shape{xs[0], xs[1], oh, ow});
  std::vector<std::size_t> argmax(out.size());
  const T* in = x.value().data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t h = 0; h < oh; ++h)
      for (std::size_t w = 0; w < ow; ++w) {
        std::size_t best = p * xs[2] * xs[3] + 2 * h * xs[3] + 2 * w;
        for (std::size_t dh = 0; dh < 2; ++dh)
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = p * xs[2] * xs[3] + (2 * h + dh) * xs[3] + 2 * w + dw;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (p * oh + h) * ow + w;
        out[o] = in[best];
        argmax[o] = best;
      }
  return make_result<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    T* gx = detail::input(self, 0).grad_buffer().data();
    for (std::size_t o = 0; o < argmax.size(); ++o) gx[argmax[o]] += self.grad[o];
  });
}

// Concatenation along the channel axis of two NCHW tensors.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  detail::require_rank(a, 4, "concat_channels");
  detail::require_rank(b, 4, "concat_channels");
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw ShapeError("concat_channels: " + to_string(as) + " vs " + to_string(bs));
  const std::size_t plane = as[2] * as[3], a_len = as[1] * plane, b_len = bs[1] * plane;
  Tensor<T> out(Shape{as[0], as[1] + bs[1], as[2], as[3]});
  for (std::size_t n = 0; n < as[0]; ++n) {
    std::copy_n(a.value().data() + n * a_len, a_len, out.data() + n * (a_len + b_len));
    std::copy_n(b.value().data() + n * b_len, b_len, out.data() + n * (a_len + b_len) + a_len);
  }
  return make_result<T>(std::move(out), {a, b}, [batch = as[0], a_len, b_len](Node<T>& self) {
    auto& an = detail::input(self, 0);
    auto& bn = detail::input(self, 1);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* g = self.grad.data() + n * (a_len + b_len);
      if (an.requires_grad) {
        T* ga = an.grad_buffer().data() + n * a_len;
        for (std::size_t i = 0; i < a_len; ++i) ga[i] += g[i];
      }
      if (bn.requires_grad) {
        T* gb = bn.grad_buffer().data() + n * b_len;
        for (std::size_t i = 0; i < b_len; ++i) gb[i] += g[a_len + i];
      }
    }
  });
}

// y = W x + b for x: [in] or [N, in], W: [out, in], b: [out] or undefined.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const bool vector_input = x.value().rank() == 1;
  const std::size_t in_dim = weight.shape().at(1), out_dim = weight.shape().at(0);
  const std::size_t batch = vector_input ? 1 : x.shape().at(0);
  if ((vector_input ? x.shape()[0] : x.shape().at(1)) != in_dim || x.value().rank() > 2)
    throw ShapeError("linear: input " + to_string(x.shape()) + " incompatible with weight " + to_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && bias.shape() != Shape{out_dim}) throw ShapeError("linear: bias shape mismatch");

  Tensor<T> out(vector_input ? Shape{out_dim} : Shape{batch, out_dim});
  detail::MatMap<T> y(out.data(), batch, out_dim);
  detail::ConstMatMap<T> xm(x.value().data(), batch, in_dim);
  detail::ConstMatMap<T> w(weight.value().data(), out_dim, in_dim);
  y.noalias() = xm * w.transpose();
  if (has_bias)
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < out_dim; ++o) y(n, o) += bias.value()[o];

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [batch, in_dim, out_dim, has_bias](Node<T>& self) {
    auto& xn = detail::input(self, 0);
    auto& wn = detail::input(self, 1);
    detail::ConstMatMap<T> gy(self.grad.data(), batch, out_dim);
    if (xn.requires_grad)
      detail::MatMap<T>(xn.grad_buffer().data(), batch, in_dim).noalias() +=
          gy * detail::ConstMatMap<T>(wn.value.data(), out_dim, in_dim);
    if (wn.requires_grad)
      detail::MatMap<T>(wn.grad_buffer().data(), out_dim, in_dim).noalias() +=
          gy.transpose() * detail::ConstMatMap<T>(xn.value.data(), batch, in_dim);
    if (has_bias && detail::input(self, 2).requires_grad) {
      T* gb = detail::input(self, 2).grad_buffer().data();
      for (std::size_t o = 0; o < out_dim; ++o) gb[o] += gy.col(o).sum();
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& xn = detail::input(self, 0);
    T* gx = xn.grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& an = detail::input(self, 0);
    auto& bn = detail::input(self, 1);
    if (an.requires_grad) {
      T* g = an.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      T* g = bn.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * an.value[i];
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = detail::input(self, k);
      if (!in.requires_grad) continue;
      T* g = in.grad_buffer().data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x.value()[i];
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& self) {
    T* g = detail::input(self, 0).grad_buffer().data();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s{0};
  for (T v : x.value().values()) s += v;
  return make_result<T>(Tensor<T>(Shape{1}, s), {x}, [](Node<T>& self) {
    T* g = detail::input(self, 0).grad_buffer().data();
    const T gy = self.grad[0];
    for (std::size_t i = 0, n = detail::input(self, 0).value.size(); i < n; ++i) g[i] += gy;
  });
}

// Average over all spatial positions: [N, C, H, W] -> [N, C].
template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
  detail::require_rank(x, 4, "mean_spatial");
  const auto& xs = x.shape();
  const std::size_t planes = xs[0] * xs[1], plane = xs[2] * xs[3];
  Tensor<T> out(Shape{xs[0], xs[1]});
  for (std::size_t p = 0; p < planes; ++p) {
    T s{0};
    for (std::size_t i = 0; i < plane; ++i) s += x.value()[p * plane + i];
    out[p] = s / T(plane);
  }
  return make_result<T>(std::move(out), {x}, [planes, plane](Node<T>& self) {
    T* g = detail::input(self, 0).grad_buffer().data();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < plane; ++i) g[p * plane + i] += self.grad[p] / T(plane);
  });
}

// Total absolute difference sum |a - b|; subgradient 0 where a == b.
template <typename T>
Var<T> sum_abs_diff(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("L1: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  T s{0};
  for (std::size_t i = 0; i < a.value().size(); ++i) s += std::abs(a.value()[i] - b.value()[i]);
  return make_result<T>(Tensor<T>(Shape{1}, s), {a, b}, [](Node<T>& self) {
    auto& an = detail::input(self, 0);
    auto& bn = detail::input(self, 1);
    const T gy = self.grad[0];
    for (std::size_t i = 0; i < an.value.size(); ++i) {
      const T d = an.value[i] - bn.value[i];
      const T sgn = d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0});
      if (an.requires_grad) an.grad_buffer()[i] += gy * sgn;
      if (bn.requires_grad) bn.grad_buffer()[i] -= gy * sgn;
    }
  });
}

// Mean binary cross-entropy on logits; the log-sum-exp form keeps the loss
// finite when the sigmoid saturates.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, T label) {
  const std::size_t n = logits.value().size();
  T s{0};
  for (T z : logits.value().values())
    s += std::max(z, T{0}) - z * label + std::log1p(std::exp(-std::abs(z)));
  return make_result<T>(Tensor<T>(Shape{1}, s / T(n)), {logits}, [label, n](Node<T>& self) {
    auto& zn = detail::input(self, 0);
    T* g = zn.grad_buffer().data();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0] * (sigmoid_value(zn.value[i]) - label) / T(n);
  });
}

template <typename T>
std::vector<T> log_softmax_row(const T* logits, std::size_t k) {
  T mx = -std::numeric_limits<T>::infinity();
  for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, logits[j]);
  T z{0};
  for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[j] - mx);
  const T lse = mx + std::log(z);
  std::vector<T> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = logits[j] - lse;
  return out;
}

// Mean cross-entropy of logits [N, k] (or [k]) against class indices.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<std::size_t>& labels) {
  const std::size_t k = logits.shape().back();
  const std::size_t batch = logits.value().size() / k;
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count does not match batch");
  Tensor<T> probs(Shape{batch, k});
  T loss{0};
  for (std::size_t n = 0; n < batch; ++n) {
    if (labels[n] >= k) throw InvalidInput("identity index " + std::to_string(labels[n]) + " out of range");
    auto lp = log_softmax_row(logits.value().data() + n * k, k);
    loss -= lp[labels[n]];
    for (std::size_t j = 0; j < k; ++j) probs[n * k + j] = std::exp(lp[j]);
  }
  return make_result<T>(Tensor<T>(Shape{1}, loss / T(batch)), {logits},
                        [probs = std::move(probs), labels, batch, k](Node<T>& self) {
                          T* g = detail::input(self, 0).grad_buffer().data();
                          const T gy = self.grad[0] / T(batch);
                          for (std::size_t n = 0; n < batch; ++n)
                            for (std::size_t j = 0; j < k; ++j)
                              g[n * k + j] += gy * (probs[n * k + j] - (j == labels[n] ? T{1} : T{0}));
                        });
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  auto lp = log_softmax_row(logits.data(), logits.size());
  for (T& v : lp) v = std::exp(v);
  return lp;
}

}  // namespace cae
