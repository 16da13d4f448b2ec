#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "diop/tensor.hpp"

namespace diop {

enum class Activation : std::uint8_t { relu, leaky_relu };

inline constexpr double kDefaultLeakySlope = 0.01;

// Forward kernels. All are pure: they never mutate their inputs and return
// freshly allocated tensors. Float tensors passed together must share one
// element kind. Conv and linear weights may be int8, in which case the input
// (f32) is quantized per tensor on the fly and accumulated in int32.

/// floor((length + 2*padding - kernel) / stride) + 1; throws if the kernel
/// does not fit the padded input.
std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride,
                                 std::size_t padding);

/// input [C_in x L], weight [C_out x C_in x K], bias [C_out] -> [C_out x L_out]
Tensor conv1d_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                      std::size_t stride, std::size_t padding);

/// max(conv1d_forward(...), 0) evaluated in one pass over the output.
Tensor conv1d_relu_forward(const Tensor& input, const Tensor& weight, const Tensor& bias,
                           std::size_t stride, std::size_t padding);

/// Inference-mode batch norm with running statistics, per channel of [C x L].
Tensor batchnorm1d_forward(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                           const Tensor& running_mean, const Tensor& running_var, double eps);

Tensor activation_forward(const Tensor& input, Activation kind,
                          double slope = kDefaultLeakySlope);

/// input [N] -> [M], or row-wise input [T x N] -> [T x M].
Tensor linear_forward(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor sigmoid_forward(const Tensor& input);
Tensor abs_forward(const Tensor& input);
Tensor transpose2d(const Tensor& input);

/// Single-direction LSTM; gate rows ordered (input, forget, cell, output).
struct LstmParams {
  Tensor w_ih;  ///< [4H x D]
  Tensor w_hh;  ///< [4H x H]
  Tensor bias;  ///< [4H]
};

/// input [T x D], h0/c0 [H] -> hidden states [T x H].
Tensor lstm_forward(const Tensor& input, const LstmParams& params, const Tensor& h0,
                    const Tensor& c0);

/// Mean over time: [C x L] -> [C].
Tensor temporal_stats_pool(const Tensor& input);

// Backward kernels: given the forward inputs and dL/d(output), return
// dL/d(each differentiable input).

struct Conv1dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
Conv1dGrads conv1d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            std::size_t stride, std::size_t padding);

/// Subgradient at 0 is 0 for relu and `slope` for leaky relu.
Tensor activation_backward(const Tensor& input, const Tensor& grad_out, Activation kind,
                           double slope = kDefaultLeakySlope);

struct BatchNormGrads {
  Tensor input;
  Tensor gamma;
  Tensor beta;
};
BatchNormGrads batchnorm1d_backward(const Tensor& input, const Tensor& gamma,
                                    const Tensor& running_mean, const Tensor& running_var,
                                    double eps, const Tensor& grad_out);

/// Training-mode batch norm: statistics are taken over the time axis of the
/// given [C x L] tensor (callers concatenate a minibatch along time).
struct BatchNormTrainResult {
  Tensor output;
  Tensor batch_mean;  ///< [C]
  Tensor batch_var;   ///< [C], biased
};
BatchNormTrainResult batchnorm1d_train_forward(const Tensor& input, const Tensor& gamma,
                                               const Tensor& beta, double eps);
BatchNormGrads batchnorm1d_train_backward(const Tensor& input, const Tensor& gamma, double eps,
                                          const Tensor& grad_out);

struct LinearGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};
LinearGrads linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out);

Tensor pool_backward(const Tensor& grad_out, std::size_t length);

/// Symmetric per-tensor int8 quantization: scale = max|x| / 127 (1 for an
/// all-zero input), q = clamp(round(x / scale), -127, 127). Returns scale.
float quantize_symmetric(std::span<const float> values, std::span<std::int8_t> out);

}  // namespace diop
