#include "diop/tape.hpp"

#include <algorithm>
#include <cmath>

namespace diop {
namespace {

void accumulate(std::optional<Tensor>& slot, const Tensor& grad) {
  if (!slot) {
    slot = grad;
    return;
  }
  if (slot->shape() != grad.shape() || slot->kind() != grad.kind()) {
    throw ShapeError("gradient accumulation: shape " + to_string(grad.shape()) +
                     " does not match " + to_string(slot->shape()));
  }
  visit_float(grad, [&]<typename T>(std::span<const T> g) {
    auto dst = slot->values<T>();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

}  // namespace

GradTape::Var GradTape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, std::nullopt});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, std::nullopt});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::parameter(std::string name, Tensor value) {
  for (const Node& n : nodes_) {
    if (n.param_name == name) throw ValueError("duplicate tape parameter '" + name + "'");
  }
  nodes_.push_back(Node{std::move(value), {}, {}, true, std::move(name)});
  return nodes_.size() - 1;
}

GradTape::Var GradTape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (const Var p : parents) needs = needs || node(p).requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs,
                        std::nullopt});
  return nodes_.size() - 1;
}

const GradTape::Node& GradTape::node(Var v) const {
  if (v >= nodes_.size()) throw ValueError("tape variable " + std::to_string(v) + " unknown");
  return nodes_[v];
}

const Tensor& GradTape::value(Var v) const { return node(v).value; }

bool GradTape::requires_grad(Var v) const { return node(v).requires_grad; }

Gradients GradTape::backward(Var root, double seed) const {
  const Node& r = node(root);
  if (r.value.numel() != 1) {
    throw ValueError("backward: root must be a scalar, got shape " + to_string(r.value.shape()));
  }
  Gradients out;
  out.by_var_.resize(nodes_.size());
  Tensor seed_t(r.value.shape(), r.value.kind());
  seed_t.set(0, seed);
  out.by_var_[root] = std::move(seed_t);

  for (Var v = root + 1; v-- > 0;) {
    const Node& n = nodes_[v];
    if (!n.requires_grad || !n.backward || !out.by_var_[v]) continue;
    std::vector<Tensor> parent_grads = n.backward(*out.by_var_[v]);
    if (parent_grads.size() != n.parents.size()) {
      throw ValueError("backward: op returned wrong number of gradients");
    }
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const Var p = n.parents[i];
      if (!nodes_[p].requires_grad) continue;
      accumulate(out.by_var_[p], parent_grads[i]);
    }
  }

  for (Var v = 0; v < nodes_.size(); ++v) {
    const Node& n = nodes_[v];
    if (!n.param_name) continue;
    out.params_.emplace(*n.param_name,
                        out.by_var_[v] ? *out.by_var_[v] : Tensor(n.value.shape(), n.value.kind()));
  }
  return out;
}

const Tensor* Gradients::find(GradTape::Var v) const {
  if (v >= by_var_.size() || !by_var_[v]) return nullptr;
  return &*by_var_[v];
}

const Tensor& Gradients::of(GradTape::Var v) const {
  const Tensor* g = find(v);
  if (g == nullptr) throw ValueError("no gradient for tape variable " + std::to_string(v));
  return *g;
}

namespace ops {
namespace {

Tensor scalar_like(const Tensor& t, double v) {
  Tensor out({1}, t.kind());
  out.set(0, v);
  return out;
}

}  // namespace

Var conv1d(GradTape& tape, Var x, Var weight, Var bias, std::size_t stride,
           std::size_t padding) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  Tensor out = conv1d_forward(xv, wv, tape.value(bias), stride, padding);
  return tape.record(std::move(out), {x, weight, bias},
                     [xv, wv, stride, padding](const Tensor& g) {
                       Conv1dGrads cg = conv1d_backward(xv, wv, g, stride, padding);
                       return std::vector<Tensor>{std::move(cg.input), std::move(cg.weight),
                                                  std::move(cg.bias)};
                     });
}

Var conv1d_relu(GradTape& tape, Var x, Var weight, Var bias, std::size_t stride,
                std::size_t padding) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  Tensor out = conv1d_relu_forward(xv, wv, tape.value(bias), stride, padding);
  Tensor out_copy = out;
  return tape.record(std::move(out), {x, weight, bias},
                     [xv, wv, stride, padding, y = std::move(out_copy)](const Tensor& g) {
                       // relu'(z) is recoverable from y = max(z, 0): y > 0 <=> z > 0.
                       Tensor gz = activation_backward(y, g, Activation::relu);
                       Conv1dGrads cg = conv1d_backward(xv, wv, gz, stride, padding);
                       return std::vector<Tensor>{std::move(cg.input), std::move(cg.weight),
                                                  std::move(cg.bias)};
                     });
}

Var activation(GradTape& tape, Var x, Activation kind, double slope) {
  const Tensor& xv = tape.value(x);
  return tape.record(activation_forward(xv, kind, slope), {x},
                     [xv, kind, slope](const Tensor& g) {
                       return std::vector<Tensor>{activation_backward(xv, g, kind, slope)};
                     });
}

Var batchnorm_eval(GradTape& tape, Var x, Var gamma, Var beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gamma);
  Tensor out = batchnorm1d_forward(xv, gv, tape.value(beta), running_mean, running_var, eps);
  return tape.record(std::move(out), {x, gamma, beta},
                     [xv, gv, running_mean, running_var, eps](const Tensor& g) {
                       BatchNormGrads bg =
                           batchnorm1d_backward(xv, gv, running_mean, running_var, eps, g);
                       return std::vector<Tensor>{std::move(bg.input), std::move(bg.gamma),
                                                  std::move(bg.beta)};
                     });
}

Var batchnorm_train(GradTape& tape, Var x, Var gamma, Var beta, double eps, Tensor* batch_mean,
                    Tensor* batch_var) {
  const Tensor& xv = tape.value(x);
  const Tensor& gv = tape.value(gamma);
  BatchNormTrainResult r = batchnorm1d_train_forward(xv, gv, tape.value(beta), eps);
  if (batch_mean != nullptr) *batch_mean = r.batch_mean;
  if (batch_var != nullptr) *batch_var = r.batch_var;
  return tape.record(std::move(r.output), {x, gamma, beta}, [xv, gv, eps](const Tensor& g) {
    BatchNormGrads bg = batchnorm1d_train_backward(xv, gv, eps, g);
    return std::vector<Tensor>{std::move(bg.input), std::move(bg.gamma), std::move(bg.beta)};
  });
}

Var linear(GradTape& tape, Var x, Var weight, Var bias) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(weight);
  Tensor out = linear_forward(xv, wv, tape.value(bias));
  return tape.record(std::move(out), {x, weight, bias}, [xv, wv](const Tensor& g) {
    LinearGrads lg = linear_backward(xv, wv, g);
    return std::vector<Tensor>{std::move(lg.input), std::move(lg.weight), std::move(lg.bias)};
  });
}

Var pool(GradTape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const std::size_t length = xv.dim(1);
  return tape.record(temporal_stats_pool(xv), {x}, [length](const Tensor& g) {
    return std::vector<Tensor>{pool_backward(g, length)};
  });
}

Var concat_time(GradTape& tape, std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat_time: no inputs");
  const Tensor& first = tape.value(xs[0]);
  const std::size_t channels = first.dim(0);
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const Var v : xs) {
    const Tensor& t = tape.value(v);
    if (t.ndim() != 2 || t.dim(0) != channels || t.kind() != first.kind()) {
      throw ShapeError("concat_time: incompatible input " + to_string(t.shape()));
    }
    lengths.push_back(t.dim(1));
    total += t.dim(1);
  }
  Tensor out({channels, total}, first.kind());
  std::size_t offset = 0;
  for (const Var v : xs) {
    const Tensor& t = tape.value(v);
    const std::size_t len = t.dim(1);
    visit_float(t, [&]<typename T>(std::span<const T> src) {
      auto dst = out.values<T>();
      for (std::size_t c = 0; c < channels; ++c) {
        std::copy_n(src.data() + c * len, len, dst.data() + c * total + offset);
      }
    });
    offset += len;
  }
  return tape.record(std::move(out), std::vector<Var>(xs.begin(), xs.end()),
                     [lengths, channels, total](const Tensor& g) {
                       std::vector<Tensor> grads;
                       std::size_t off = 0;
                       for (const std::size_t len : lengths) {
                         Tensor gi({channels, len}, g.kind());
                         visit_float(g, [&]<typename T>(std::span<const T> src) {
                           auto dst = gi.values<T>();
                           for (std::size_t c = 0; c < channels; ++c) {
                             std::copy_n(src.data() + c * total + off, len, dst.data() + c * len);
                           }
                         });
                         off += len;
                         grads.push_back(std::move(gi));
                       }
                       return grads;
                     });
}

Var slice_time(GradTape& tape, Var x, std::size_t offset, std::size_t length) {
  const Tensor& xv = tape.value(x);
  const std::size_t channels = xv.dim(0);
  const std::size_t total = xv.dim(1);
  if (offset + length > total) throw ShapeError("slice_time: range exceeds input length");
  Tensor out({channels, length}, xv.kind());
  visit_float(xv, [&]<typename T>(std::span<const T> src) {
    auto dst = out.values<T>();
    for (std::size_t c = 0; c < channels; ++c) {
      std::copy_n(src.data() + c * total + offset, length, dst.data() + c * length);
    }
  });
  const Shape full = xv.shape();
  return tape.record(std::move(out), {x}, [full, offset, length, channels, total](const Tensor& g) {
    Tensor gx(full, g.kind());
    visit_float(g, [&]<typename T>(std::span<const T> src) {
      auto dst = gx.values<T>();
      for (std::size_t c = 0; c < channels; ++c) {
        std::copy_n(src.data() + c * length, length, dst.data() + c * total + offset);
      }
    });
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var stack_rows(GradTape& tape, std::span<const Var> rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const Tensor& first = tape.value(rows[0]);
  const std::size_t width = first.numel();
  Tensor out({rows.size(), width}, first.kind());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    const Tensor& r = tape.value(rows[b]);
    if (r.numel() != width || r.kind() != first.kind()) {
      throw ShapeError("stack_rows: row " + std::to_string(b) + " has shape " +
                       to_string(r.shape()));
    }
    for (std::size_t j = 0; j < width; ++j) out.set(b * width + j, r.get(j));
  }
  std::vector<Shape> shapes;
  for (const Var v : rows) shapes.push_back(tape.value(v).shape());
  return tape.record(std::move(out), std::vector<Var>(rows.begin(), rows.end()),
                     [shapes, width](const Tensor& g) {
                       std::vector<Tensor> grads;
                       for (std::size_t b = 0; b < shapes.size(); ++b) {
                         Tensor gr(shapes[b], g.kind());
                         for (std::size_t j = 0; j < width; ++j) gr.set(j, g.get(b * width + j));
                         grads.push_back(std::move(gr));
                       }
                       return grads;
                     });
}

Var sum(GradTape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv.get(i);
  const Shape shape = xv.shape();
  return tape.record(scalar_like(xv, acc), {x}, [shape](const Tensor& g) {
    Tensor gx(shape, g.kind());
    const double v = g.get(0);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.set(i, v);
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var weighted_sum(GradTape& tape, Var x, const Tensor& weights) {
  const Tensor& xv = tape.value(x);
  if (weights.numel() != xv.numel()) throw ShapeError("weighted_sum: weight count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += weights.get(i) * xv.get(i);
  const Shape shape = xv.shape();
  return tape.record(scalar_like(xv, acc), {x}, [shape, weights](const Tensor& g) {
    Tensor gx(shape, g.kind());
    const double v = g.get(0);
    for (std::size_t i = 0; i < gx.numel(); ++i) gx.set(i, v * weights.get(i));
    return std::vector<Tensor>{std::move(gx)};
  });
}

Var add(GradTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape() != bv.shape()) throw ShapeError("add: shape mismatch");
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.set(i, av.get(i) + bv.get(i));
  return tape.record(std::move(out), {a, b},
                     [](const Tensor& g) { return std::vector<Tensor>{g, g}; });
}

Var scale(GradTape& tape, Var a, double factor) {
  const Tensor& av = tape.value(a);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.set(i, av.get(i) * factor);
  return tape.record(std::move(out), {a}, [factor](const Tensor& g) {
    Tensor ga = g;
    for (std::size_t i = 0; i < ga.numel(); ++i) ga.set(i, g.get(i) * factor);
    return std::vector<Tensor>{std::move(ga)};
  });
}

Var mean_sq_distance(GradTape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.shape() != bv.shape() || av.ndim() != 2) {
    throw ShapeError("mean_sq_distance: expected equal [B x D] shapes, got " +
                     to_string(av.shape()) + " and " + to_string(bv.shape()));
  }
  const std::size_t batch = av.dim(0);
  return visit_float(av, [&]<typename T>(std::span<const T> x) {
    const auto y = bv.values<T>();
    T acc = 0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    acc /= static_cast<T>(batch);
    Tensor diff(av.shape(), av.kind());
    auto d = diff.values<T>();
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
    return tape.record(scalar_like(av, static_cast<double>(acc)), {a, b},
                       [diff, batch](const Tensor& g) {
                         const T k = static_cast<T>(2.0 * g.get(0) / static_cast<double>(batch));
                         Tensor ga(diff.shape(), diff.kind());
                         Tensor gb(diff.shape(), diff.kind());
                         const auto dv = diff.values<T>();
                         auto pa = ga.values<T>();
                         auto pb = gb.values<T>();
                         for (std::size_t i = 0; i < dv.size(); ++i) {
                           pa[i] = k * dv[i];
                           pb[i] = -k * dv[i];
                         }
                         return std::vector<Tensor>{std::move(ga), std::move(gb)};
                       });
  });
}

Var arcface(GradTape& tape, Var embeddings, std::span<const std::size_t> labels,
            Var class_weights, double s, double m) {
  const Tensor& xv = tape.value(embeddings);
  const Tensor& wv = tape.value(class_weights);
  if (xv.ndim() != 2 || wv.ndim() != 2 || xv.dim(1) != wv.dim(1)) {
    throw ShapeError("arcface: embeddings " + to_string(xv.shape()) + " and class weights " +
                     to_string(wv.shape()) + " disagree");
  }
  if (xv.kind() != wv.kind()) throw ValueError("arcface: element kinds differ");
  const std::size_t batch = xv.dim(0);
  const std::size_t dim = xv.dim(1);
  const std::size_t classes = wv.dim(0);
  if (labels.size() != batch) throw ShapeError("arcface: label count differs from batch size");
  for (const std::size_t y : labels) {
    if (y >= classes) {
      throw ValueError("arcface: label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  if (!(s > 0.0)) throw ValueError("arcface: scale s must be positive");

  return visit_float(xv, [&]<typename T>(std::span<const T> x) {
    const auto w = wv.values<T>();
    const T clip = std::is_same_v<T, float> ? T(1e-6) : T(1e-12);
    std::vector<T> x_norm(batch);
    std::vector<T> w_norm(classes);
    std::vector<T> e(batch * dim);
    std::vector<T> wn(classes * dim);
    for (std::size_t b = 0; b < batch; ++b) {
      T acc = 0;
      for (std::size_t j = 0; j < dim; ++j) acc += x[b * dim + j] * x[b * dim + j];
      x_norm[b] = std::max(std::sqrt(acc), clip);
      for (std::size_t j = 0; j < dim; ++j) e[b * dim + j] = x[b * dim + j] / x_norm[b];
    }
    for (std::size_t c = 0; c < classes; ++c) {
      T acc = 0;
      for (std::size_t j = 0; j < dim; ++j) acc += w[c * dim + j] * w[c * dim + j];
      w_norm[c] = std::max(std::sqrt(acc), clip);
      for (std::size_t j = 0; j < dim; ++j) wn[c * dim + j] = w[c * dim + j] / w_norm[c];
    }
    const T cos_m = static_cast<T>(std::cos(m));
    const T sin_m = static_cast<T>(std::sin(m));
    const T limit = T(1) - (std::is_same_v<T, float> ? T(1e-6) : T(1e-9));
    // d(loss)/d(cos) per (b, c)
    std::vector<T> dcos(batch * classes);
    T loss = 0;
    std::vector<T> logits(classes);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t y = labels[b];
      T margin_slope = 0;
      for (std::size_t c = 0; c < classes; ++c) {
        T cs = 0;
        for (std::size_t j = 0; j < dim; ++j) cs += e[b * dim + j] * wn[c * dim + j];
        const bool clamped = cs > limit || cs < -limit;
        cs = std::clamp(cs, -limit, limit);
        if (c == y) {
          const T sin_t = std::sqrt(T(1) - cs * cs);
          logits[c] = static_cast<T>(s) * (cs * cos_m - sin_t * sin_m);
          margin_slope = clamped ? T(0) : cos_m + sin_m * cs / sin_t;
        } else {
          logits[c] = static_cast<T>(s) * cs;
          dcos[b * classes + c] = clamped ? T(0) : T(1);
        }
      }
      const T mx = *std::max_element(logits.begin(), logits.end());
      T z = 0;
      for (std::size_t c = 0; c < classes; ++c) z += std::exp(logits[c] - mx);
      loss += std::log(z) + mx - logits[y];
      for (std::size_t c = 0; c < classes; ++c) {
        const T p = std::exp(logits[c] - mx) / z;
        const T dlogit = (p - (c == y ? T(1) : T(0))) / static_cast<T>(batch);
        const T chain = c == y ? margin_slope : dcos[b * classes + c];
        dcos[b * classes + c] = dlogit * static_cast<T>(s) * chain;
      }
    }
    loss /= static_cast<T>(batch);

    return tape.record(
        scalar_like(xv, static_cast<double>(loss)), {embeddings, class_weights},
        [=, xshape = xv.shape(), wshape = wv.shape(), kind = xv.kind()](const Tensor& g) {
          const T seed = static_cast<T>(g.get(0));
          std::vector<T> de(batch * dim, T(0));
          std::vector<T> dwn(classes * dim, T(0));
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < classes; ++c) {
              const T d = dcos[b * classes + c] * seed;
              for (std::size_t j = 0; j < dim; ++j) {
                de[b * dim + j] += d * wn[c * dim + j];
                dwn[c * dim + j] += d * e[b * dim + j];
              }
            }
          }
          // Through v / ||v||: dv = (du - u (u . du)) / ||v||.
          Tensor gx(xshape, kind);
          Tensor gw(wshape, kind);
          auto px = gx.values<T>();
          auto pw = gw.values<T>();
          for (std::size_t b = 0; b < batch; ++b) {
            T dot = 0;
            for (std::size_t j = 0; j < dim; ++j) dot += e[b * dim + j] * de[b * dim + j];
            for (std::size_t j = 0; j < dim; ++j) {
              px[b * dim + j] = (de[b * dim + j] - e[b * dim + j] * dot) / x_norm[b];
            }
          }
          for (std::size_t c = 0; c < classes; ++c) {
            T dot = 0;
            for (std::size_t j = 0; j < dim; ++j) dot += wn[c * dim + j] * dwn[c * dim + j];
            for (std::size_t j = 0; j < dim; ++j) {
              pw[c * dim + j] = (dwn[c * dim + j] - wn[c * dim + j] * dot) / w_norm[c];
            }
          }
          return std::vector<Tensor>{std::move(gx), std::move(gw)};
        });
  });
}

}  // namespace ops
}  // namespace diop
