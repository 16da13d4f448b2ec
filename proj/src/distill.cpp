#include "diop/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "diop/errors.hpp"

namespace diop {

void DistillConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("distill: lambda must be >= 0");
  if (epochs < 1) throw ConfigError("distill: epochs must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("distill: checkpoint_every must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("distill: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("distill: batch_size must be >= 1");
  if (!(scale > 0.0)) throw ConfigError("distill: ArcFace scale must be > 0");
  if (!(bn_momentum >= 0.0 && bn_momentum <= 1.0)) throw ConfigError("distill: bn_momentum must be in [0, 1]");
}

Dataset make_training_set(const Audio& audio, const Annotation& reference, double chunk_duration,
                          double hop) {
  if (!(chunk_duration > 0.0 && hop > 0.0)) throw ValueError("training set: chunk and hop must be > 0");
  const Annotation ref = normalize(reference);
  Dataset data;
  data.class_names = labels(ref);
  const double sr = audio.sample_rate;
  const auto len = static_cast<std::size_t>(std::llround(chunk_duration * sr));
  for (const Segment& s : ref.segments) {
    // skip stretches where another speaker overlaps
    bool overlapped = false;
    for (const Segment& o : ref.segments) {
      if (&o != &s && o.onset < s.end() && s.onset < o.end()) overlapped = true;
    }
    if (overlapped) continue;
    const auto label = static_cast<std::size_t>(
        std::lower_bound(data.class_names.begin(), data.class_names.end(), s.label) -
        data.class_names.begin());
    for (double t = s.onset; t + chunk_duration <= s.end() + 1e-9; t += hop) {
      const auto start = static_cast<std::size_t>(std::llround(t * sr));
      if (start + len > audio.samples.size()) break;
      data.chunks.push_back(
          {std::vector<float>(audio.samples.begin() + static_cast<std::ptrdiff_t>(start),
                              audio.samples.begin() + static_cast<std::ptrdiff_t>(start + len)),
           label});
    }
  }
  return data;
}

double distill_loss(double task_loss, const Tensor& student_emb, const Tensor& teacher_emb,
                     double lambda) {
  if (!(lambda >= 0.0)) throw ValueError("distill_loss: lambda must be >= 0");
  if (student_emb.shape() != teacher_emb.shape()) {
    throw ShapeError("distill_loss: student " + to_string(student_emb.shape()) + " vs teacher " +
                     to_string(teacher_emb.shape()));
  }
  if (lambda == 0.0) return task_loss;
  GradTape tape;
  const auto a = tape.constant(student_emb.to(ElemKind::f64));
  const auto b = tape.constant(teacher_emb.to(ElemKind::f64));
  return task_loss + lambda * tape.value(ops::mean_sq_distance(tape, a, b)).get(0);
}

ArcfaceResult arcface_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                           const Tensor& class_weights, double s, double m) {
  GradTape tape;
  const auto e = tape.input(embeddings);
  const auto w = tape.input(class_weights);
  const auto loss = ops::arcface(tape, e, labels, w, s, m);
  const Gradients g = tape.backward(loss);
  return {tape.value(loss).get(0), g.of(e), g.of(w)};
}

namespace {

ModelGraph frontend_of(const ModelGraph& m) {
  if (m.nodes().empty() || m.nodes()[0].kind != NodeKind::sinc_frontend) {
    throw ValueError("training: model must start with a frontend node");
  }
  return ModelGraph({m.nodes()[0]}, {{"sinc.weight", m.param(m.nodes()[0].name + ".weight")}}, {});
}

ModelGraph tail_of(const ModelGraph& m) {
  std::vector<LayerNode> nodes(m.nodes().begin() + 1, m.nodes().end());
  ParamStore params = m.params();
  params.erase(m.nodes()[0].name + ".weight");
  return ModelGraph(std::move(nodes), std::move(params), {});
}

std::vector<Tensor> frontend_features(const ModelGraph& m, const Dataset& data) {
  const ModelGraph front = frontend_of(m);
  std::vector<Tensor> out;
  out.reserve(data.chunks.size());
  for (const LabeledChunk& c : data.chunks) {
    out.push_back(forward(front, Tensor({1, c.samples.size()}, c.samples)));
  }
  return out;
}

Tensor embed_features(const ModelGraph& tail, const std::vector<Tensor>& feats) {
  std::vector<Tensor> rows;
  rows.reserve(feats.size());
  for (const Tensor& f : feats) rows.push_back(forward(tail, f).to(ElemKind::f32));
  const std::size_t d = rows.empty() ? 0 : rows[0].numel();
  std::vector<float> v;
  v.reserve(rows.size() * d);
  for (const Tensor& r : rows) {
    const auto s = r.values<float>();
    v.insert(v.end(), s.begin(), s.end());
  }
  return Tensor({rows.size(), d}, std::move(v));
}

Tensor rows_of(const Tensor& m, const std::vector<std::size_t>& idx) {
  const std::size_t d = m.dim(1);
  const auto src = m.values<float>();
  std::vector<float> v;
  v.reserve(idx.size() * d);
  for (const std::size_t i : idx) v.insert(v.end(), src.begin() + static_cast<std::ptrdiff_t>(i * d),
                                           src.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
  return Tensor({idx.size(), d}, std::move(v));
}

double mse_rows(const Tensor& a, const Tensor& b) {
  GradTape tape;
  return tape.value(ops::mean_sq_distance(tape, tape.constant(a), tape.constant(b))).get(0);
}

struct BatchStats {
  std::string node;
  Tensor mean;
  Tensor var;
  std::size_t count = 0;
};

// Training-mode forward of everything after the frontend for one batch.
// Returns the [B x D] embedding Var.
GradTape::Var forward_batch(GradTape& tape, const ModelGraph& model,
                            const std::map<std::string, GradTape::Var>& params,
                            const std::vector<const Tensor*>& feats, std::vector<BatchStats>& stats) {
  std::vector<GradTape::Var> xs;
  for (const Tensor* f : feats) xs.push_back(tape.constant(*f));
  const auto p = [&](const std::string& name) { return params.at(name); };
  for (std::size_t i = 1; i < model.nodes().size(); ++i) {
    const LayerNode& n = model.nodes()[i];
    switch (n.kind) {
      case NodeKind::conv1d:
      case NodeKind::fused_conv_relu:
        for (auto& x : xs) {
          x = n.kind == NodeKind::conv1d
                  ? ops::conv1d(tape, x, p(n.name + ".weight"), p(n.name + ".bias"), n.stride, n.padding)
                  : ops::conv1d_relu(tape, x, p(n.name + ".weight"), p(n.name + ".bias"), n.stride,
                                     n.padding);
        }
        break;
      case NodeKind::relu:
        for (auto& x : xs) x = ops::activation(tape, x, Activation::relu);
        break;
      case NodeKind::leaky_relu:
        for (auto& x : xs) x = ops::activation(tape, x, Activation::leaky_relu, n.slope);
        break;
      case NodeKind::batchnorm1d: {
        std::vector<std::size_t> lengths;
        for (const auto x : xs) lengths.push_back(tape.value(x).dim(1));
        const auto joined = ops::concat_time(tape, xs);
        BatchStats bs{n.name, {}, {}, std::accumulate(lengths.begin(), lengths.end(), std::size_t{0})};
        const auto y = ops::batchnorm_train(tape, joined, p(n.name + ".gamma"), p(n.name + ".beta"),
                                            n.eps, &bs.mean, &bs.var);
        stats.push_back(std::move(bs));
        std::size_t off = 0;
        for (std::size_t b = 0; b < xs.size(); ++b) {
          xs[b] = ops::slice_time(tape, y, off, lengths[b]);
          off += lengths[b];
        }
        break;
      }
      case NodeKind::pool:
        for (auto& x : xs) x = ops::pool(tape, x);
        break;
      case NodeKind::linear:
        for (auto& x : xs) x = ops::linear(tape, x, p(n.name + ".weight"), p(n.name + ".bias"));
        break;
      default:
        throw ValueError("training: unsupported node kind " + to_string(n.kind) + " at '" + n.name + "'");
    }
  }
  return ops::stack_rows(tape, xs);
}

void update_running(ParamStore& store, const std::vector<BatchStats>& stats, double momentum) {
  for (const BatchStats& bs : stats) {
    Tensor& rm = store.at(bs.node + ".running_mean");
    Tensor& rv = store.at(bs.node + ".running_var");
    const double unbias = bs.count > 1 ? static_cast<double>(bs.count) / static_cast<double>(bs.count - 1) : 1.0;
    for (std::size_t c = 0; c < rm.numel(); ++c) {
      rm.set(c, (1.0 - momentum) * rm.get(c) + momentum * bs.mean.get(c));
      rv.set(c, (1.0 - momentum) * rv.get(c) + momentum * bs.var.get(c) * unbias);
    }
  }
}

}  // namespace

Tensor embed_dataset(const ModelGraph& model, const Dataset& data) {
  return embed_features(tail_of(model), frontend_features(model, data));
}

TrainResult train_distill(const ModelGraph& student, const ModelGraph* teacher, const Dataset& data,
                          const DistillConfig& cfg, const CheckpointEval& eval) {
  cfg.validate();
  if (data.chunks.empty()) throw ValueError("train_distill: empty dataset");
  const std::size_t classes = data.class_names.empty()
                                  ? 1 + std::max_element(data.chunks.begin(), data.chunks.end(),
                                                         [](const auto& a, const auto& b) { return a.label < b.label; })
                                            ->label
                                  : data.class_names.size();
  const std::vector<Tensor> feats = frontend_features(student, data);
  const std::size_t dim = forward(tail_of(student), feats[0]).numel();

  std::optional<Tensor> teacher_emb;
  if (teacher != nullptr) {
    teacher_emb = embed_dataset(*teacher, data);
    if (teacher_emb->dim(1) != dim) {
      throw ShapeError("train_distill: teacher embedding dim " + std::to_string(teacher_emb->dim(1)) +
                       " != student dim " + std::to_string(dim));
    }
  }

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<float> cw(classes * dim);
  for (float& v : cw) v = static_cast<float>(normal(rng));
  Tensor class_weights({classes, dim}, std::move(cw));

  ParamStore store = student.params();
  const std::vector<std::string> trainable = student.trainable_params();

  TrainResult result;
  const auto teacher_mse = [&](const ParamStore& s) -> std::optional<double> {
    if (!teacher_emb) return std::nullopt;
    return mse_rows(embed_features(tail_of(student.with_params(s)), feats), *teacher_emb);
  };
  result.initial_teacher_mse = teacher_mse(store);

  std::vector<std::size_t> order(data.chunks.size());
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const bool use_teacher = teacher_emb.has_value() && cfg.lambda > 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, task_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch)));
      GradTape tape;
      std::map<std::string, GradTape::Var> params;
      for (const auto& [name, t] : store) {
        const bool train = std::find(trainable.begin(), trainable.end(), name) != trainable.end();
        params.emplace(name, train ? tape.parameter(name, t) : tape.constant(t));
      }
      const auto cw_var = tape.parameter("arcface.weight", class_weights);
      std::vector<const Tensor*> batch_feats;
      std::vector<std::size_t> batch_labels;
      for (const std::size_t i : idx) {
        batch_feats.push_back(&feats[i]);
        batch_labels.push_back(data.chunks[i].label);
      }
      std::vector<BatchStats> stats;
      const auto emb = forward_batch(tape, student, params, batch_feats, stats);
      const auto task = ops::arcface(tape, emb, batch_labels, cw_var, cfg.scale, cfg.margin);
      auto loss = task;
      if (use_teacher) {
        const auto target = tape.constant(rows_of(*teacher_emb, idx));
        loss = ops::add(tape, task, ops::scale(tape, ops::mean_sq_distance(tape, emb, target), cfg.lambda));
      }
      const double loss_value = tape.value(loss).get(0);
      if (!std::isfinite(loss_value)) {
        throw ValueError("train_distill: loss diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += loss_value;
      task_sum += tape.value(task).get(0);
      ++batches;
      const Gradients g = tape.backward(loss);
      for (const auto& [name, grad] : g.parameters()) {
        Tensor& target = name == "arcface.weight" ? class_weights : store.at(name);
        auto w = target.values<float>();
        const auto gv = grad.values<float>();
        const auto lr = static_cast<float>(cfg.learning_rate);
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gv[k];
      }
      update_running(store, stats, cfg.bn_momentum);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(batches);
    rec.task_loss = task_sum / static_cast<double>(batches);
    rec.teacher_mse = teacher_mse(store);
    const bool checkpoint = (epoch + 1) % cfg.checkpoint_every == 0;
    ModelMetadata meta = student.metadata();
    meta.epoch = epoch;
    if (checkpoint) {
      Checkpoint cp;
      cp.epoch = epoch;
      cp.model = student.with_params(store).with_metadata(meta);
      if (eval) {
        cp.eval_der = eval(cp.model);
        rec.eval_der = cp.eval_der;
      }
      result.trace.push_back(rec);
      cp.trace = result.trace;
      result.checkpoints.push_back(std::move(cp));
    } else {
      result.trace.push_back(rec);
    }
  }
  ModelMetadata meta = student.metadata();
  meta.epoch = cfg.epochs - 1;
  result.model = student.with_params(std::move(store)).with_metadata(meta);
  result.class_weights = std::move(class_weights);
  return result;
}

std::string checkpoint_metrics_csv(const TrainResult& result) {
  std::string out = "epoch,loss,eval_der\n";
  char buf[96];
  for (const EpochRecord& r : result.trace) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,", r.epoch, r.loss);
    out += buf;
    if (r.eval_der) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.eval_der);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<std::filesystem::path> write_checkpoints(const TrainResult& result,
                                                     const std::filesystem::path& dir,
                                                     const std::string& stem) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> paths;
  for (const Checkpoint& cp : result.checkpoints) {
    paths.push_back(dir / (stem + "_epoch" + std::to_string(cp.epoch) + ".diop"));
    save_model(cp.model, paths.back());
  }
  write_text_file(dir / (stem + "_metrics.csv"), checkpoint_metrics_csv(result));
  return paths;
}

SweepReport lambda_sweep(std::vector<double> lambdas, const ModelGraph& student,
                         const ModelGraph* teacher, const Dataset& data, const DistillConfig& cfg,
                         const std::function<double(const ModelGraph&)>& eval_der) {
  if (lambdas.empty()) throw ValueError("lambda_sweep: no lambda values");
  std::sort(lambdas.begin(), lambdas.end());
  SweepReport report;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    SweepRow row;
    row.lambda = lambdas[i];
    try {
      DistillConfig c = cfg;
      c.lambda = lambdas[i];
      c.seed = cfg.seed + i;
      const TrainResult r = train_distill(student, teacher, data, c);
      row.final_loss = r.trace.back().loss;
      row.der = eval_der(r.model);
    } catch (const std::exception& e) {
      row.error = e.what();
    }
    if (row.der && (!report.best_lambda || *row.der < *std::find_if(report.rows.begin(), report.rows.end(),
                                                                       [&](const SweepRow& x) { return x.lambda == *report.best_lambda; })->der)) {
      report.best_lambda = row.lambda;
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string SweepReport::to_csv() const {
  std::string out = "Teacher factor lambda,DER,Final loss,Error\n";
  char buf[128];
  for (const SweepRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%g,", r.lambda);
    out += buf;
    if (r.der) {
      std::snprintf(buf, sizeof buf, "%.6f,%.9g,", 100.0 * *r.der, r.final_loss);
      out += buf;
    } else {
      out += ",,";
    }
    std::string err = r.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    out += err + "\n";
  }
  return out;
}

}  // namespace diop
