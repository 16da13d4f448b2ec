#include "diop/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace diop {
namespace {

void require_same_kind(const Tensor& a, const Tensor& b, const char* what) {
  if (a.kind() != b.kind()) {
    throw ValueError(std::string(what) + ": element kinds differ (" + to_string(a.kind()) +
                     " vs " + to_string(b.kind()) + ")");
  }
}

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " +
                     to_string(t.shape()));
  }
}

void require_ndim(const Tensor& t, std::size_t ndim, const char* what) {
  if (t.ndim() != ndim) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(ndim) +
                     "-d tensor, got shape " + to_string(t.shape()));
  }
}

// Valid output index range [lo, hi) for kernel tap k so that the input index
// t*stride + k - padding stays inside [0, length).
struct TapRange {
  std::size_t lo;
  std::size_t hi;
};

TapRange tap_range(std::size_t k, std::size_t length, std::size_t stride, std::size_t padding,
                   std::size_t out_length) {
  std::size_t lo = 0;
  if (k < padding) lo = (padding - k + stride - 1) / stride;
  // need t*stride + k - padding <= length - 1
  std::size_t hi = 0;
  if (length + padding > k) hi = (length + padding - k - 1) / stride + 1;
  hi = std::min(hi, out_length);
  lo = std::min(lo, hi);
  return {lo, hi};
}

template <typename T, bool Relu>
Tensor conv1d_float(const Tensor& input, const Tensor& weight, const Tensor& bias,
                    std::size_t stride, std::size_t padding) {
  const std::size_t c_in = input.dim(0);
  const std::size_t length = input.dim(1);
  const std::size_t c_out = weight.dim(0);
  const std::size_t kernel = weight.dim(2);
  const std::size_t out_len = conv1d_output_length(length, kernel, stride, padding);
  const auto x = input.values<T>();
  const auto w = weight.values<T>();
  const auto b = bias.values<T>();
  Tensor out({c_out, out_len}, elem_kind_of<T>());
  auto y = out.values<T>();
  for (std::size_t o = 0; o < c_out; ++o) {
    T* row = y.data() + o * out_len;
    std::fill(row, row + out_len, b[o]);
    for (std::size_t c = 0; c < c_in; ++c) {
      const T* xc = x.data() + c * length;
      const T* wk = w.data() + (o * c_in + c) * kernel;
      for (std::size_t k = 0; k < kernel; ++k) {
        const T wv = wk[k];
        const auto [lo, hi] = tap_range(k, length, stride, padding, out_len);
        if (lo == hi) continue;
        const T* src = xc + (lo * stride + k - padding);
        T* dst = row + lo;
        const std::size_t n = hi - lo;
        if (stride == 1) {
          for (std::size_t t = 0; t < n; ++t) dst[t] += wv * src[t];
        } else {
          for (std::size_t t = 0; t < n; ++t) dst[t] += wv * src[t * stride];
        }
      }
    }
    if constexpr (Relu) {
      for (std::size_t t = 0; t < out_len; ++t) row[t] = row[t] > T(0) ? row[t] : T(0);
    }
  }
  return out;
}

template <bool Relu>
Tensor conv1d_int8(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   std::size_t stride, std::size_t padding) {
  if (input.kind() != ElemKind::f32 || bias.kind() != ElemKind::f32) {
    throw ValueError("int8 conv1d expects f32 input and bias");
  }
  const std::size_t c_in = input.dim(0);
  const std::size_t length = input.dim(1);
  const std::size_t c_out = weight.dim(0);
  const std::size_t kernel = weight.dim(2);
  const std::size_t out_len = conv1d_output_length(length, kernel, stride, padding);

  std::vector<std::int8_t> xq(input.numel());
  const float x_scale = quantize_symmetric(input.values<float>(), xq);
  const float w_scale = *weight.quant_scale();
  const float rescale = x_scale * w_scale;
  const auto w = weight.values<std::int8_t>();
  const auto b = bias.values<float>();

  // Polyphase int16 copy: sample i of channel c lives at phase i % stride,
  // position i / stride, so every tap reads a contiguous run.
  const std::size_t phase_len = (length + stride - 1) / stride;
  std::vector<std::int16_t> xp(c_in * stride * phase_len, 0);
  for (std::size_t c = 0; c < c_in; ++c) {
    for (std::size_t i = 0; i < length; ++i) {
      xp[(c * stride + i % stride) * phase_len + i / stride] = xq[c * length + i];
    }
  }

  Tensor out({c_out, out_len}, ElemKind::f32);
  auto y = out.values<float>();
  std::vector<std::int32_t> acc(out_len);
  for (std::size_t o = 0; o < c_out; ++o) {
    std::fill(acc.begin(), acc.end(), 0);
    for (std::size_t c = 0; c < c_in; ++c) {
      const std::int8_t* wk = w.data() + (o * c_in + c) * kernel;
      for (std::size_t k = 0; k < kernel; ++k) {
        const std::int32_t wv = wk[k];
        const auto [lo, hi] = tap_range(k, length, stride, padding, out_len);
        if (lo == hi) continue;
        const std::size_t first = lo * stride + k - padding;
        const std::int16_t* src = xp.data() + (c * stride + first % stride) * phase_len + first / stride;
        std::int32_t* dst = acc.data() + lo;
        const std::size_t n = hi - lo;
        for (std::size_t t = 0; t < n; ++t) dst[t] += wv * src[t];
      }
    }
    float* row = y.data() + o * out_len;
    for (std::size_t t = 0; t < out_len; ++t) {
      const float v = static_cast<float>(acc[t]) * rescale + b[o];
      if constexpr (Relu) {
        row[t] = v > 0.0F ? v : 0.0F;
      } else {
        row[t] = v;
      }
    }
  }
  return out;
}

template <bool Relu>
Tensor conv1d_dispatch(const Tensor& input, const Tensor& weight, const Tensor& bias,
                       std::size_t stride, std::size_t padding) {
  require_ndim(input, 2, "conv1d input");
  require_ndim(weight, 3, "conv1d weight");
  if (stride == 0) throw ValueError("conv1d: stride must be positive");
  if (weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv1d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, input has " + std::to_string(input.dim(0)));
  }
  require_shape(bias, {weight.dim(0)}, "conv1d bias");
  if (weight.kind() == ElemKind::i8) {
    return conv1d_int8<Relu>(input, weight, bias, stride, padding);
  }
  require_same_kind(input, weight, "conv1d");
  require_same_kind(input, bias, "conv1d");
  if (input.kind() == ElemKind::f64) {
    return conv1d_float<double, Relu>(input, weight, bias, stride, padding);
  }
  return conv1d_float<float, Relu>(input, weight, bias, stride, padding);
}

template <typename T>
Tensor map_float(const Tensor& input, auto&& fn) {
  Tensor out(input.shape(), input.kind());
  const auto x = input.values<T>();
  auto y = out.values<T>();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fn(x[i]);
  return out;
}

template <typename Fn>
Tensor map_any_float(const Tensor& input, Fn&& fn) {
  if (input.kind() == ElemKind::f64) return map_float<double>(input, fn);
  if (input.kind() == ElemKind::f32) return map_float<float>(input, fn);
  throw ValueError("elementwise op expects a float tensor");
}

}  // namespace

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding) {
  if (stride == 0) throw ValueError("conv1d: stride must be positive");
  if (kernel == 0) throw ShapeError("conv1d: kernel size must be positive");
  if (kernel > length + 2 * padding) {
    throw ShapeError("conv1d: kernel " + std::to_string(kernel) + " exceeds padded length " +
                     std::to_string(length + 2 * padding) + " (L=" + std::to_string(length) +
                     ", padding=" + std::to_string(padding) + ")");
  }
  return (length + 2 * padding - kernel) / stride + 1;
}

Tensor conv1d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      std::size_t stride, std::size_t padding) {
  return conv1d_dispatch<false>(input, weight, bias, stride, padding);
}

Tensor conv1d_relu_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           std::size_t stride, std::size_t padding) {
  return conv1d_dispatch<true>(input, weight, bias, stride, padding);
}

Tensor batchnorm1d_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                           const Tensor& running_mean, const Tensor& running_var, double eps) {
  require_ndim(input, 2, "batchnorm1d input");
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    require_shape(*t, {channels}, "batchnorm1d statistics");
    require_same_kind(input, *t, "batchnorm1d");
  }
  if (eps < 0.0) throw ValueError("batchnorm1d: eps must be nonnegative");
  for (std::size_t c = 0; c < channels; ++c) {
    if (running_var.get(c) < 0.0) {
      throw ValueError("batchnorm1d: negative running variance in channel " + std::to_string(c));
    }
  }
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out(input.shape(), input.kind());
    auto y = out.values<T>();
    const auto g = gamma.values<T>();
    const auto bt = beta.values<T>();
    const auto m = running_mean.values<T>();
    const auto v = running_var.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T scale = g[c] / std::sqrt(v[c] + static_cast<T>(eps));
      const T shift = bt[c] - m[c] * scale;
      for (std::size_t t = 0; t < length; ++t) {
        y[c * length + t] = x[c * length + t] * scale + shift;
      }
    }
    return out;
  });
}

Tensor activation_forward(const Tensor& input, Activation kind, double slope) {
  if (kind == Activation::relu) {
    return map_any_float(input, [](auto v) { return v > decltype(v)(0) ? v : decltype(v)(0); });
  }
  return map_any_float(input, [slope](auto v) {
    using T = decltype(v);
    return v >= T(0) ? v : static_cast<T>(slope) * v;
  });
}

Tensor sigmoid_forward(const Tensor& input) {
  return map_any_float(input, [](auto v) {
    using T = decltype(v);
    return T(1) / (T(1) + std::exp(-v));
  });
}

Tensor abs_forward(const Tensor& input) {
  return map_any_float(input, [](auto v) { return std::abs(v); });
}

Tensor transpose2d(const Tensor& input) {
  require_ndim(input, 2, "transpose");
  const std::size_t rows = input.dim(0);
  const std::size_t cols = input.dim(1);
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out({cols, rows}, input.kind());
    auto y = out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) y[c * rows + r] = x[r * cols + c];
    }
    return out;
  });
}

Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_ndim(weight, 2, "linear weight");
  if (input.ndim() != 1 && input.ndim() != 2) {
    throw ShapeError("linear: input must be [N] or [T x N], got " + to_string(input.shape()));
  }
  const std::size_t m = weight.dim(0);
  const std::size_t n = weight.dim(1);
  const std::size_t rows = input.ndim() == 1 ? 1 : input.dim(0);
  const std::size_t in_features = input.shape().back();
  if (in_features != n) {
    throw ShapeError("linear: weight expects " + std::to_string(n) + " features, input has " +
                     std::to_string(in_features));
  }
  require_shape(bias, {m}, "linear bias");
  const Shape out_shape = input.ndim() == 1 ? Shape{m} : Shape{rows, m};

  if (weight.kind() == ElemKind::i8) {
    if (input.kind() != ElemKind::f32 || bias.kind() != ElemKind::f32) {
      throw ValueError("int8 linear expects f32 input and bias");
    }
    std::vector<std::int8_t> xq(input.numel());
    const float x_scale = quantize_symmetric(input.values<float>(), xq);
    const float rescale = x_scale * *weight.quant_scale();
    const auto w = weight.values<std::int8_t>();
    const auto b = bias.values<float>();
    Tensor out(out_shape, ElemKind::f32);
    auto y = out.values<float>();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::int8_t* xr = xq.data() + r * n;
      for (std::size_t i = 0; i < m; ++i) {
        const std::int8_t* wr = w.data() + i * n;
        std::int32_t acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += static_cast<std::int32_t>(wr[j]) * xr[j];
        y[r * m + i] = static_cast<float>(acc) * rescale + b[i];
      }
    }
    return out;
  }

  require_same_kind(input, weight, "linear");
  require_same_kind(input, bias, "linear");
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out(out_shape, input.kind());
    auto y = out.values<T>();
    const auto w = weight.values<T>();
    const auto b = bias.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T* wr = w.data() + i * n;
        T acc = b[i];
        for (std::size_t j = 0; j < n; ++j) acc += wr[j] * xr[j];
        y[r * m + i] = acc;
      }
    }
    return out;
  });
}

Tensor lstm_forward(const Tensor& input, const LstmParams& params, const Tensor& h0,
                    const Tensor& c0) {
  require_ndim(input, 2, "lstm input");
  require_ndim(params.w_ih, 2, "lstm w_ih");
  const std::size_t steps = input.dim(0);
  const std::size_t in_dim = input.dim(1);
  const std::size_t hidden = h0.numel();
  require_shape(params.w_ih, {4 * hidden, in_dim}, "lstm w_ih");
  require_shape(params.w_hh, {4 * hidden, hidden}, "lstm w_hh");
  require_shape(params.bias, {4 * hidden}, "lstm bias");
  require_shape(h0, {hidden}, "lstm h0");
  require_shape(c0, {hidden}, "lstm c0");
  for (const Tensor* t : {&params.w_ih, &params.w_hh, &params.bias, &h0, &c0}) {
    require_same_kind(input, *t, "lstm");
  }
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out({steps, hidden}, input.kind());
    auto y = out.values<T>();
    const auto wih = params.w_ih.values<T>();
    const auto whh = params.w_hh.values<T>();
    const auto b = params.bias.values<T>();
    std::vector<T> h(h0.values<T>().begin(), h0.values<T>().end());
    std::vector<T> c(c0.values<T>().begin(), c0.values<T>().end());
    std::vector<T> z(4 * hidden);
    const auto sigmoid = [](T v) { return T(1) / (T(1) + std::exp(-v)); };
    for (std::size_t t = 0; t < steps; ++t) {
      const T* xt = x.data() + t * in_dim;
      for (std::size_t r = 0; r < 4 * hidden; ++r) {
        T acc = b[r];
        const T* wi = wih.data() + r * in_dim;
        for (std::size_t j = 0; j < in_dim; ++j) acc += wi[j] * xt[j];
        const T* wh = whh.data() + r * hidden;
        for (std::size_t j = 0; j < hidden; ++j) acc += wh[j] * h[j];
        z[r] = acc;
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        const T i_gate = sigmoid(z[j]);
        const T f_gate = sigmoid(z[hidden + j]);
        const T g_gate = std::tanh(z[2 * hidden + j]);
        const T o_gate = sigmoid(z[3 * hidden + j]);
        c[j] = f_gate * c[j] + i_gate * g_gate;
        h[j] = o_gate * std::tanh(c[j]);
        y[t * hidden + j] = h[j];
      }
    }
    return out;
  });
}

Tensor temporal_stats_pool(const Tensor& input) {
  require_ndim(input, 2, "pool input");
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  if (length == 0) throw ShapeError("pool: input has zero time steps");
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out({channels}, input.kind());
    auto y = out.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      T acc = 0;
      for (std::size_t t = 0; t < length; ++t) acc += x[c * length + t];
      y[c] = acc / static_cast<T>(length);
    }
    return out;
  });
}

Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            std::size_t stride, std::size_t padding) {
  require_ndim(input, 2, "conv1d input");
  require_ndim(weight, 3, "conv1d weight");
  require_same_kind(input, weight, "conv1d backward");
  require_same_kind(input, grad_out, "conv1d backward");
  const std::size_t c_in = input.dim(0);
  const std::size_t length = input.dim(1);
  const std::size_t c_out = weight.dim(0);
  const std::size_t kernel = weight.dim(2);
  const std::size_t out_len = conv1d_output_length(length, kernel, stride, padding);
  require_shape(grad_out, {c_out, out_len}, "conv1d grad_out");
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Conv1dGrads g{Tensor(input.shape(), input.kind()), Tensor(weight.shape(), input.kind()),
                  Tensor({c_out}, input.kind())};
    auto gx = g.input.values<T>();
    auto gw = g.weight.values<T>();
    auto gb = g.bias.values<T>();
    const auto w = weight.values<T>();
    const auto gy = grad_out.values<T>();
    for (std::size_t o = 0; o < c_out; ++o) {
      const T* gyo = gy.data() + o * out_len;
      T bsum = 0;
      for (std::size_t t = 0; t < out_len; ++t) bsum += gyo[t];
      gb[o] = bsum;
      for (std::size_t c = 0; c < c_in; ++c) {
        const T* xc = x.data() + c * length;
        T* gxc = gx.data() + c * length;
        const std::size_t wbase = (o * c_in + c) * kernel;
        for (std::size_t k = 0; k < kernel; ++k) {
          const auto [lo, hi] = tap_range(k, length, stride, padding, out_len);
          const T wv = w[wbase + k];
          T acc = 0;
          for (std::size_t t = lo; t < hi; ++t) {
            const std::size_t idx = t * stride + k - padding;
            acc += gyo[t] * xc[idx];
            gxc[idx] += gyo[t] * wv;
          }
          gw[wbase + k] = acc;
        }
      }
    }
    return g;
  });
}

Tensor activation_backward(const Tensor& input, const Tensor& grad_out, Activation kind,
                           double slope) {
  require_same_kind(input, grad_out, "activation backward");
  if (input.shape() != grad_out.shape()) throw ShapeError("activation backward: shape mismatch");
  const double neg = kind == Activation::relu ? 0.0 : slope;
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    Tensor out(input.shape(), input.kind());
    auto gx = out.values<T>();
    const auto gy = grad_out.values<T>();
    const T neg_t = static_cast<T>(neg);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : neg_t * gy[i];
    return out;
  });
}

BatchNormGrads batchnorm1d_backward(const Tensor& input, const Tensor& gamma,
                                    const Tensor& running_mean, const Tensor& running_var,
                                    double eps, const Tensor& grad_out) {
  require_ndim(input, 2, "batchnorm1d input");
  require_same_kind(input, grad_out, "batchnorm1d backward");
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    BatchNormGrads g{Tensor(input.shape(), input.kind()), Tensor({channels}, input.kind()),
                     Tensor({channels}, input.kind())};
    auto gx = g.input.values<T>();
    auto gg = g.gamma.values<T>();
    auto gbeta = g.beta.values<T>();
    const auto gy = grad_out.values<T>();
    const auto gm = gamma.values<T>();
    const auto m = running_mean.values<T>();
    const auto v = running_var.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T inv_std = T(1) / std::sqrt(v[c] + static_cast<T>(eps));
      T sum_g = 0;
      T sum_gx = 0;
      for (std::size_t t = 0; t < length; ++t) {
        const std::size_t i = c * length + t;
        sum_g += gy[i];
        sum_gx += gy[i] * (x[i] - m[c]) * inv_std;
        gx[i] = gy[i] * gm[c] * inv_std;
      }
      gg[c] = sum_gx;
      gbeta[c] = sum_g;
    }
    return g;
  });
}

BatchNormTrainResult batchnorm1d_train_forward(const Tensor& input, const Tensor& gamma,
                                               const Tensor& beta, double eps) {
  require_ndim(input, 2, "batchnorm1d input");
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  if (length == 0) throw ShapeError("batchnorm1d: empty batch");
  require_shape(gamma, {channels}, "batchnorm1d gamma");
  require_shape(beta, {channels}, "batchnorm1d beta");
  require_same_kind(input, gamma, "batchnorm1d");
  require_same_kind(input, beta, "batchnorm1d");
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    BatchNormTrainResult r{Tensor(input.shape(), input.kind()), Tensor({channels}, input.kind()),
                           Tensor({channels}, input.kind())};
    auto y = r.output.values<T>();
    auto mean = r.batch_mean.values<T>();
    auto var = r.batch_var.values<T>();
    const auto g = gamma.values<T>();
    const auto b = beta.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xc = x.data() + c * length;
      T acc = 0;
      for (std::size_t t = 0; t < length; ++t) acc += xc[t];
      const T mu = acc / static_cast<T>(length);
      T sq = 0;
      for (std::size_t t = 0; t < length; ++t) sq += (xc[t] - mu) * (xc[t] - mu);
      const T sigma2 = sq / static_cast<T>(length);
      mean[c] = mu;
      var[c] = sigma2;
      const T inv_std = T(1) / std::sqrt(sigma2 + static_cast<T>(eps));
      for (std::size_t t = 0; t < length; ++t) {
        y[c * length + t] = (xc[t] - mu) * inv_std * g[c] + b[c];
      }
    }
    return r;
  });
}

BatchNormGrads batchnorm1d_train_backward(const Tensor& input, const Tensor& gamma, double eps,
                                          const Tensor& grad_out) {
  require_ndim(input, 2, "batchnorm1d input");
  require_same_kind(input, grad_out, "batchnorm1d backward");
  const std::size_t channels = input.dim(0);
  const std::size_t length = input.dim(1);
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    BatchNormGrads g{Tensor(input.shape(), input.kind()), Tensor({channels}, input.kind()),
                     Tensor({channels}, input.kind())};
    auto gx = g.input.values<T>();
    auto gg = g.gamma.values<T>();
    auto gbeta = g.beta.values<T>();
    const auto gy = grad_out.values<T>();
    const auto gm = gamma.values<T>();
    const T n = static_cast<T>(length);
    std::vector<T> xhat(length);
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xc = x.data() + c * length;
      const T* gyc = gy.data() + c * length;
      T acc = 0;
      for (std::size_t t = 0; t < length; ++t) acc += xc[t];
      const T mu = acc / n;
      T sq = 0;
      for (std::size_t t = 0; t < length; ++t) sq += (xc[t] - mu) * (xc[t] - mu);
      const T inv_std = T(1) / std::sqrt(sq / n + static_cast<T>(eps));
      T sum_dy = 0;
      T sum_dy_xhat = 0;
      for (std::size_t t = 0; t < length; ++t) {
        xhat[t] = (xc[t] - mu) * inv_std;
        sum_dy += gyc[t];
        sum_dy_xhat += gyc[t] * xhat[t];
      }
      gg[c] = sum_dy_xhat;
      gbeta[c] = sum_dy;
      const T k = gm[c] * inv_std / n;
      for (std::size_t t = 0; t < length; ++t) {
        gx[c * length + t] = k * (n * gyc[t] - sum_dy - xhat[t] * sum_dy_xhat);
      }
    }
    return g;
  });
}

LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
  require_ndim(weight, 2, "linear weight");
  require_same_kind(input, weight, "linear backward");
  require_same_kind(input, grad_out, "linear backward");
  const std::size_t m = weight.dim(0);
  const std::size_t n = weight.dim(1);
  const std::size_t rows = input.ndim() == 1 ? 1 : input.dim(0);
  if (input.numel() != rows * n || grad_out.numel() != rows * m) {
    throw ShapeError("linear backward: shape mismatch");
  }
  return visit_float(input, [&]<typename T>(std::span<const T> x) {
    LinearGrads g{Tensor(input.shape(), input.kind()), Tensor(weight.shape(), input.kind()),
                  Tensor({m}, input.kind())};
    auto gx = g.input.values<T>();
    auto gw = g.weight.values<T>();
    auto gb = g.bias.values<T>();
    const auto w = weight.values<T>();
    const auto gy = grad_out.values<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < m; ++i) {
        const T gi = gy[r * m + i];
        gb[i] += gi;
        for (std::size_t j = 0; j < n; ++j) {
          gw[i * n + j] += gi * x[r * n + j];
          gx[r * n + j] += gi * w[i * n + j];
        }
      }
    }
    return g;
  });
}

Tensor pool_backward(const Tensor& grad_out, std::size_t length) {
  require_ndim(grad_out, 1, "pool grad_out");
  if (length == 0) throw ShapeError("pool: zero time steps");
  const std::size_t channels = grad_out.dim(0);
  return visit_float(grad_out, [&]<typename T>(std::span<const T> g) {
    Tensor out({channels, length}, grad_out.kind());
    auto gx = out.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      const T v = g[c] / static_cast<T>(length);
      std::fill(gx.begin() + static_cast<std::ptrdiff_t>(c * length),
                gx.begin() + static_cast<std::ptrdiff_t>((c + 1) * length), v);
    }
    return out;
  });
}

float quantize_symmetric(std::span<const float> values, std::span<std::int8_t> out) {
  if (out.size() != values.size()) throw ShapeError("quantize: output size mismatch");
  float max_abs = 0.0F;
  for (const float v : values) max_abs = std::max(max_abs, std::abs(v));
  const float scale = max_abs > 0.0F ? max_abs / 127.0F : 1.0F;
  const double inv = 1.0 / static_cast<double>(scale);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double q = std::round(static_cast<double>(values[i]) * inv);
    out[i] = static_cast<std::int8_t>(std::clamp(q, -127.0, 127.0));
  }
  return scale;
}

}  // namespace diop
