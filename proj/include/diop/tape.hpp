#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "diop/kernels.hpp"
#include "diop/tensor.hpp"

namespace diop {

class Gradients;

/// Records tensor operations so gradients of a scalar result can be
/// replayed backward.
///
/// Each recorded value is identified by a `Var`. Leaves are constants (no
/// gradient), inputs (gradient reported by Var) or named parameters
/// (gradient reported by name, always present after backward).
class GradTape {
 public:
  using Var = std::size_t;
  /// Maps dL/d(output) to dL/d(parent_i); entries for parents that do not
  /// require a gradient may be left empty.
  using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

  Var constant(Tensor value);
  Var input(Tensor value);
  Var parameter(std::string name, Tensor value);
  Var record(Tensor value, std::vector<Var> parents, BackwardFn backward);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Reverse pass from `root`, which must hold exactly one element.
  Gradients backward(Var root, double seed = 1.0) const;

 private:
  struct Node {
    Tensor value;
    std::vector<Var> parents;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::string> param_name;
  };
  const Node& node(Var v) const;
  std::vector<Node> nodes_;
};

class Gradients {
 public:
  /// Gradient for a Var, or nullptr if none flowed into it.
  const Tensor* find(GradTape::Var v) const;
  const Tensor& of(GradTape::Var v) const;
  /// One entry per tape parameter, zero-filled when unreachable from the root.
  const std::map<std::string, Tensor>& parameters() const noexcept { return params_; }

 private:
  friend class GradTape;
  std::vector<std::optional<Tensor>> by_var_;
  std::map<std::string, Tensor> params_;
};

/// Recorded counterparts of the nn-core kernels.
namespace ops {

using Var = GradTape::Var;

Var conv1d(GradTape& tape, Var x, Var weight, Var bias, std::size_t stride,
           std::size_t padding);
Var conv1d_relu(GradTape& tape, Var x, Var weight, Var bias, std::size_t stride,
                std::size_t padding);
Var activation(GradTape& tape, Var x, Activation kind, double slope = kDefaultLeakySlope);
/// Inference-mode batch norm; running statistics are treated as constants.
Var batchnorm_eval(GradTape& tape, Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps);
/// Training-mode batch norm over the time axis. Batch statistics are written
/// to `batch_mean` / `batch_var` (biased) when given.
Var batchnorm_train(GradTape& tape, Var x, Var gamma, Var beta, double eps,
                    Tensor* batch_mean = nullptr, Tensor* batch_var = nullptr);
Var linear(GradTape& tape, Var x, Var weight, Var bias);
Var pool(GradTape& tape, Var x);

/// Concatenates [C x L_i] tensors along time.
Var concat_time(GradTape& tape, std::span<const Var> xs);
Var slice_time(GradTape& tape, Var x, std::size_t offset, std::size_t length);
/// Stacks equal-length vectors into a [B x D] matrix.
Var stack_rows(GradTape& tape, std::span<const Var> rows);

Var sum(GradTape& tape, Var x);
/// sum_i weights[i] * x[i]; `weights` matches x's shape.
Var weighted_sum(GradTape& tape, Var x, const Tensor& weights);
Var add(GradTape& tape, Var a, Var b);
Var scale(GradTape& tape, Var a, double factor);

/// (1/B) * sum_b ||a_b - b_b||^2 for [B x D] inputs.
Var mean_sq_distance(GradTape& tape, Var a, Var b);

/// Additive angular margin loss: mean cross-entropy over logits
/// s*cos(theta_y + m) for the true class and s*cos(theta_j) otherwise, with
/// embeddings and class weights L2-normalized internally.
Var arcface(GradTape& tape, Var embeddings, std::span<const std::size_t> labels,
            Var class_weights, double s, double m);

}  // namespace ops
}  // namespace diop
