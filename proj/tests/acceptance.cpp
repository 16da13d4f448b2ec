// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: diop_acceptance [work_dir]

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diop/cli.hpp"
#include "diop/distill.hpp"
#include "diop/io.hpp"
#include "diop/metrics.hpp"
#include "diop/model.hpp"
#include "diop/passes.hpp"
#include "diop/pipeline.hpp"
#include "diop/synth.hpp"
#include "diop/tape.hpp"
#include "grad_check.hpp"

namespace fs = std::filesystem;
using namespace diop;
using diop::testing::dot;
using diop::testing::numeric_gradient;
using diop::testing::random_f32;
using diop::testing::random_f64;
using diop::testing::relative_error;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += "failed: " + what;
    }
  }
  void note(const std::string& what) {
    if (!detail.empty()) detail += "; ";
    detail += what;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

int g_failures = 0;

void report(int n, const char* title, double limit_s, double elapsed, Outcome o) {
  o.require(elapsed < limit_s, "runtime " + fmt("%.2f", elapsed) + " s over " + fmt("%.0f", limit_s) + " s");
  if (!o.pass) ++g_failures;
  std::printf("%s criterion %d: %s (%.2f s of %.0f s) %s\n", o.pass ? "PASS" : "FAIL", n, title, elapsed, limit_s,
              o.detail.c_str());
  std::fflush(stdout);
}

void run(int n, const char* title, double limit_s, const std::function<Outcome()>& fn, double extra_s = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  report(n, title, limit_s, seconds_since(t0) + extra_s, o);
}

int cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int rc = run_cli(args, out, err);
  if (rc != 0) throw std::runtime_error("diop " + args.front() + " exited " + std::to_string(rc) + ": " + err.str());
  return rc;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_text_file(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

PipelineConfig desk_pipeline() { return pipeline_config(KeyValueConfig(default_settings())); }

// Shared fixture: synthetic train/eval sets and a distilled student, produced
// through the command-line entry point.
struct Fixture {
  fs::path root;
  ModelGraph student;
  ModelGraph segmenter;
  Audio eval_audio;
  Annotation eval_ref;
  nlohmann::json train_report;
  double seconds = 0.0;
};

Fixture make_fixture(const fs::path& root) {
  const auto t0 = std::chrono::steady_clock::now();
  Fixture f;
  f.root = root;
  cli({"synth-data", "--out", (root / "train").string()});
  cli({"synth-data", "--out", (root / "eval").string(), "--files", "1", "--seed", "100"});
  cli({"train-distill", "--data", (root / "train").string(), "--out", (root / "models").string()});
  f.student = load_model(root / "models" / "student.diop");
  f.segmenter = load_model(root / "models" / "segmenter.diop");
  f.eval_audio = wav_read(root / "eval" / "synth000.wav", 16000);
  f.eval_ref = rttm_read(root / "eval" / "synth000.rttm");
  f.train_report = nlohmann::json::parse(read_text_file(root / "models" / "train-distill.json"));
  f.seconds = seconds_since(t0);
  return f;
}

// ---- 1 ----

Outcome fusion(const Fixture& fx) {
  Outcome o;
  const ModelGraph& m = fx.student;
  const ModelGraph fused = fuse_conv_relu(m);
  const std::size_t pairs = count_conv_relu_pairs(m);
  std::mt19937_64 rng(1);
  double max_diff = 0.0;
  bool counts_ok = true;
  for (int i = 0; i < 100; ++i) {
    const Tensor x = random_f32({1, 16000}, rng, -0.5, 0.5);
    ExecStats a, b;
    const Tensor ya = forward(m, x, &a);
    const Tensor yb = forward(fused, x, &b);
    for (std::size_t k = 0; k < ya.numel(); ++k) max_diff = std::max(max_diff, std::abs(ya.get(k) - yb.get(k)));
    counts_ok = counts_ok && a.nodes_executed - b.nodes_executed == pairs;
  }
  o.require(max_diff <= 1e-9, "max abs diff " + fmt("%.3g", max_diff));
  o.require(counts_ok && pairs == 4, "executed-node drop != conv-relu pairs");
  const PipelineConfig pc = desk_pipeline();
  const Annotation ha = run_pipeline(m, fx.segmenter, fx.eval_audio, pc, fx.eval_ref.file_id).annotation;
  const Annotation hb = run_pipeline(fused, fx.segmenter, fx.eval_audio, pc, fx.eval_ref.file_id).annotation;
  o.require(ha == hb && rttm_format(ha) == rttm_format(hb), "pipeline annotations differ");
  o.note("100 inputs, max abs diff " + fmt("%g", max_diff) + ", node drop " + std::to_string(pairs) +
         ", annotations identical");
  return o;
}

// ---- 2 ----

Outcome break_even() {
  Outcome o;
  const double be = coo_break_even_amount(3, 4);
  o.require(std::abs(be - 0.8571) <= 1e-4, "break-even(3,4) = " + fmt("%.6f", be));
  o.require(std::abs(be - 0.858) <= 1e-3, "inconsistent with 0.858");
  std::size_t cases = 0;
  for (const std::size_t ndim : {1, 2, 3}) {
    for (const std::size_t elem : {1, 4, 8}) {
      const Shape shape(ndim, ndim == 1 ? 1000 : (ndim == 2 ? 40 : 12));
      const std::size_t n = shape_numel(shape);
      const double b = 1.0 - static_cast<double>(elem) / static_cast<double>(ndim * 8 + elem);
      for (int k = 0; k < 50; ++k) {
        const double target = (k + 0.5) / 50.0;
        const auto nze = static_cast<std::int64_t>(std::llround((1.0 - target) * static_cast<double>(n)));
        const double sparsity = 1.0 - static_cast<double>(nze) / static_cast<double>(n);
        if (std::abs(sparsity - b) < 1e-12) continue;
        const bool coo_smaller = coo_memory_bytes(shape, nze, elem) < dense_memory_bytes(shape, elem);
        const double lib_b = coo_break_even_amount(ndim, elem);
        o.require(coo_smaller == (sparsity > lib_b), "grid ndim " + std::to_string(ndim) + " elem " +
                                                         std::to_string(elem) + " sparsity " + fmt("%.3f", sparsity));
        ++cases;
      }
    }
  }
  o.note("break-even " + fmt("%.4f", be) + ", " + std::to_string(cases) + " grid cases");
  return o;
}

// ---- 3 ----

Outcome sparse_storage(const ModelGraph& desk) {
  Outcome o;
  for (const auto& name : prunable_weights(desk)) {
    if (name.rfind("block", 0) == 0) o.require(desk.param(name).ndim() == 3, name + " not rank 3");
  }
  const MemoryEstimate m3 = sparse_export_size(prune_unstructured_global(desk, 0.3).model,
                                               prune_unstructured_global(desk, 0.3).mask);
  const PruneResult p9 = prune_unstructured_global(desk, 0.9);
  const MemoryEstimate m9 = sparse_export_size(p9.model, p9.mask);
  o.require(m3.coo_bytes > m3.dense_bytes, "COO not larger at 0.3");
  o.require(m9.coo_bytes < m9.dense_bytes, "COO not smaller at 0.9");
  o.note("0.3: COO " + std::to_string(m3.coo_bytes) + " B vs dense " + std::to_string(m3.dense_bytes) +
         " B; 0.9: COO " + std::to_string(m9.coo_bytes) + " B vs dense " + std::to_string(m9.dense_bytes) + " B");
  return o;
}

// ---- 4 ----

Outcome pruning(const ModelGraph& desk) {
  Outcome o;
  const PruneResult s = prune_structured(desk, 1, 2.0, 0);
  for (const auto& name : prunable_weights(desk)) {
    const Tensor& w = desk.param(name);
    const Tensor& p = s.model.param(name);
    const std::size_t slices = w.dim(0), inner = w.numel() / slices;
    std::vector<double> norm(slices, 0.0);
    for (std::size_t i = 0; i < w.numel(); ++i) norm[i / inner] += w.real(i) * w.real(i);
    const auto victim = static_cast<std::size_t>(std::min_element(norm.begin(), norm.end()) - norm.begin());
    bool ok = true;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      ok = ok && (i / inner == victim ? p.get(i) == 0.0 : p.get(i) == w.get(i));
    }
    o.require(ok, name + " structured slice");
  }
  const PruneResult u = prune_unstructured_global(desk, 0.3);
  std::size_t zeros = 0, total = 0;
  for (const auto& name : prunable_weights(desk)) {
    const Tensor& t = u.model.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) zeros += t.get(i) == 0.0 ? 1 : 0;
    total += t.numel();
  }
  const double sparsity = static_cast<double>(zeros) / static_cast<double>(total);
  o.require(std::abs(sparsity - 0.3) <= 1.0 / static_cast<double>(total), "global sparsity " + fmt("%.6f", sparsity));
  for (const ModelGraph* m : {&s.model, &u.model}) {
    o.require(param_count(*m) == param_count(desk) && model_size_bytes(*m) == model_size_bytes(desk),
              "parameter count or size changed");
  }
  o.note("global sparsity " + fmt("%.6f", sparsity) + " over " + std::to_string(total) + " weights, " +
         std::to_string(param_count(desk)) + " params unchanged");
  return o;
}

// ---- 5 ----

double cosine(const Tensor& a, const Tensor& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    ab += a.get(i) * b.get(i);
    aa += a.get(i) * a.get(i);
    bb += b.get(i) * b.get(i);
  }
  return ab / std::sqrt(aa * bb);
}

Outcome quantization(const Fixture& fx) {
  Outcome o;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, 400);
  std::uniform_real_distribution<double> mag(1e-3, 50.0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const double m = mag(rng);
    const Tensor x = random_f32({len(rng)}, rng, -m, m);
    const Tensor q = quantize_tensor_int8(x);
    const Tensor d = dequantize(q);
    double max_abs = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) max_abs = std::max(max_abs, std::abs(x.get(i)));
    const double scale = max_abs / 127.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      worst = std::max(worst, std::abs(d.get(i) - x.get(i)) / (scale / 2.0));
    }
  }
  o.require(worst <= 1.0 + 1e-5, "round trip error " + fmt("%.6f", worst) + " half-scales");

  const ModelGraph& f = fx.student;
  const ModelGraph q = quantize_weights_int8(f);
  o.require(serialize_model(q).size() < serialize_model(f).size(), "quantized file not smaller");
  double worst_ratio = 0.0;
  for (const auto& [name, t] : q.params()) {
    if (t.kind() != ElemKind::i8) continue;
    worst_ratio = std::max(worst_ratio, static_cast<double>(t.storage_bytes()) /
                                            static_cast<double>(f.param(name).to(ElemKind::f32).storage_bytes()));
  }
  o.require(worst_ratio > 0.0 && worst_ratio <= 0.27, "byte ratio " + fmt("%.4f", worst_ratio));

  const PipelineConfig pc = desk_pipeline();
  const auto& s = fx.eval_audio.samples;
  std::uniform_int_distribution<std::size_t> start(0, s.size() - pc.window_samples());
  double min_cos = 1.0;
  for (int i = 0; i < 100; ++i) {
    const ChunkSpan span{0, start(rng), pc.window_samples(), 0.0};
    const Tensor chunk = extract_chunk(s, span, pc);
    min_cos = std::min(min_cos, cosine(forward(f, chunk), forward(q, chunk)));
  }
  o.require(min_cos >= 0.98, "min cosine " + fmt("%.5f", min_cos));

  const double der_f = der(fx.eval_ref, run_pipeline(f, fx.segmenter, fx.eval_audio, pc, fx.eval_ref.file_id).annotation).der;
  const double der_q = der(fx.eval_ref, run_pipeline(q, fx.segmenter, fx.eval_audio, pc, fx.eval_ref.file_id).annotation).der;
  o.require(std::abs(der_f - der_q) <= 0.05, "DER diff " + fmt("%.4f", std::abs(der_f - der_q)));
  o.note("max error " + fmt("%.4f", worst) + " half-scales, byte ratio " + fmt("%.4f", worst_ratio) +
         ", min cosine " + fmt("%.5f", min_cos) + ", DER float " + fmt("%.4f", der_f) + " int8 " + fmt("%.4f", der_q));
  return o;
}

// ---- 6 ----

struct GradStats {
  std::string name;
  int instances = 0;
  double worst = 0.0;
  void add(double e) {
    worst = std::max(worst, e);
  }
};

Outcome gradients() {
  Outcome o;
  std::mt19937_64 rng(20240601);
  const auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
  std::vector<GradStats> all;
  const int n = 20;

  const auto check_conv = [&](bool fused) {
    GradStats g{fused ? "conv1d+relu" : "conv1d"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const std::size_t cin = pick(1, 3), cout = pick(1, 3), k = pick(1, 4), s = pick(1, 3), p = pick(0, 2),
                        l = pick(k, 12);
      const Tensor x = random_f64({cin, l}, rng), w = random_f64({cout, cin, k}, rng), b = random_f64({cout}, rng);
      const Tensor probe = random_f64({cout, conv1d_output_length(l, k, s, p)}, rng);
      const auto fwd = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
        return dot(fused ? conv1d_relu_forward(xx, ww, bb, s, p) : conv1d_forward(xx, ww, bb, s, p), probe);
      };
      GradTape tape;
      const auto xv = tape.input(x);
      const auto wv = tape.parameter("w", w);
      const auto bv = tape.parameter("b", b);
      const auto y = fused ? ops::conv1d_relu(tape, xv, wv, bv, s, p) : ops::conv1d(tape, xv, wv, bv, s, p);
      const Gradients gr = tape.backward(ops::weighted_sum(tape, y, probe));
      g.add(relative_error(gr.of(xv), numeric_gradient([&](const Tensor& t) { return fwd(t, w, b); }, x)));
      g.add(relative_error(gr.parameters().at("w"), numeric_gradient([&](const Tensor& t) { return fwd(x, t, b); }, w)));
      g.add(relative_error(gr.parameters().at("b"), numeric_gradient([&](const Tensor& t) { return fwd(x, w, t); }, b)));
    }
    all.push_back(g);
  };
  check_conv(false);
  check_conv(true);

  for (const bool train : {false, true}) {
    GradStats g{train ? "batchnorm (training)" : "batchnorm (inference)"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const std::size_t c = pick(1, 4), l = pick(2, 9);
      const Tensor x = random_f64({c, l}, rng), gamma = random_f64({c}, rng), beta = random_f64({c}, rng);
      const Tensor mean = random_f64({c}, rng), var = random_f64({c}, rng, 0.2, 2.0);
      const Tensor probe = random_f64({c, l}, rng);
      const auto fwd = [&](const Tensor& xx, const Tensor& gg, const Tensor& bb) {
        return dot(train ? batchnorm1d_train_forward(xx, gg, bb, 1e-5).output
                         : batchnorm1d_forward(xx, gg, bb, mean, var, 1e-5),
                   probe);
      };
      GradTape tape;
      const auto xv = tape.input(x);
      const auto gv = tape.parameter("gamma", gamma);
      const auto bv = tape.parameter("beta", beta);
      const auto y = train ? ops::batchnorm_train(tape, xv, gv, bv, 1e-5)
                           : ops::batchnorm_eval(tape, xv, gv, bv, mean, var, 1e-5);
      const Gradients gr = tape.backward(ops::weighted_sum(tape, y, probe));
      g.add(relative_error(gr.of(xv), numeric_gradient([&](const Tensor& t) { return fwd(t, gamma, beta); }, x)));
      g.add(relative_error(gr.parameters().at("gamma"), numeric_gradient([&](const Tensor& t) { return fwd(x, t, beta); }, gamma)));
      g.add(relative_error(gr.parameters().at("beta"), numeric_gradient([&](const Tensor& t) { return fwd(x, gamma, t); }, beta)));
    }
    all.push_back(g);
  }

  for (const Activation kind : {Activation::relu, Activation::leaky_relu}) {
    GradStats g{kind == Activation::relu ? "relu" : "leaky relu"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const Tensor x = random_f64({pick(1, 3), pick(1, 6)}, rng);
      const Tensor probe = random_f64(x.shape(), rng);
      GradTape tape;
      const auto xv = tape.input(x);
      const Gradients gr = tape.backward(ops::weighted_sum(tape, ops::activation(tape, xv, kind, 0.01), probe));
      g.add(relative_error(gr.of(xv), numeric_gradient([&](const Tensor& t) { return dot(activation_forward(t, kind, 0.01), probe); }, x)));
    }
    all.push_back(g);
  }

  {
    GradStats g{"linear"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const std::size_t in = pick(1, 5), out = pick(1, 5), rows = pick(1, 4);
      const Tensor x = random_f64({rows, in}, rng), w = random_f64({out, in}, rng), b = random_f64({out}, rng);
      const Tensor probe = random_f64({rows, out}, rng);
      GradTape tape;
      const auto xv = tape.input(x);
      const auto wv = tape.parameter("w", w);
      const auto bv = tape.parameter("b", b);
      const Gradients gr = tape.backward(ops::weighted_sum(tape, ops::linear(tape, xv, wv, bv), probe));
      g.add(relative_error(gr.of(xv), numeric_gradient([&](const Tensor& t) { return dot(linear_forward(t, w, b), probe); }, x)));
      g.add(relative_error(gr.parameters().at("w"), numeric_gradient([&](const Tensor& t) { return dot(linear_forward(x, t, b), probe); }, w)));
      g.add(relative_error(gr.parameters().at("b"), numeric_gradient([&](const Tensor& t) { return dot(linear_forward(x, w, t), probe); }, b)));
    }
    all.push_back(g);
  }

  {
    GradStats g{"temporal pool"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const Tensor x = random_f64({pick(1, 4), pick(1, 9)}, rng);
      const Tensor probe = random_f64({x.dim(0)}, rng);
      GradTape tape;
      const auto xv = tape.input(x);
      const Gradients gr = tape.backward(ops::weighted_sum(tape, ops::pool(tape, xv), probe));
      g.add(relative_error(gr.of(xv), numeric_gradient([&](const Tensor& t) { return dot(temporal_stats_pool(t), probe); }, x)));
    }
    all.push_back(g);
  }

  {
    // Oracle: ArcFace written directly from angles.
    GradStats g{"arcface loss"};
    const auto oracle = [](const Tensor& x, const std::vector<std::size_t>& y, const Tensor& w, double s, double m) {
      const std::size_t b = x.dim(0), d = x.dim(1), c = w.dim(0);
      double total = 0.0;
      for (std::size_t i = 0; i < b; ++i) {
        double xn = 0;
        for (std::size_t j = 0; j < d; ++j) xn += x.get(i * d + j) * x.get(i * d + j);
        std::vector<double> logits(c);
        for (std::size_t k = 0; k < c; ++k) {
          double wn = 0, xw = 0;
          for (std::size_t j = 0; j < d; ++j) {
            wn += w.get(k * d + j) * w.get(k * d + j);
            xw += x.get(i * d + j) * w.get(k * d + j);
          }
          const double cs = xw / std::sqrt(xn * wn);
          logits[k] = k == y[i] ? s * std::cos(std::acos(cs) + m) : s * cs;
        }
        double z = 0;
        for (const double l : logits) z += std::exp(l);
        total += std::log(z) - logits[y[i]];
      }
      return total / static_cast<double>(b);
    };
    for (int i = 0; i < n; ++i, ++g.instances) {
      const std::size_t b = pick(1, 4), c = pick(2, 4), d = pick(2, 5);
      const Tensor x = random_f64({b, d}, rng), w = random_f64({c, d}, rng);
      std::vector<std::size_t> y(b);
      for (auto& v : y) v = pick(0, c - 1);
      const ArcfaceResult r = arcface_loss(x, y, w, 4.0, 0.2);
      o.require(std::abs(r.loss - oracle(x, y, w, 4.0, 0.2)) <= 1e-10, "arcface value");
      g.add(relative_error(r.grad_embeddings, numeric_gradient([&](const Tensor& t) { return oracle(t, y, w, 4.0, 0.2); }, x)));
      g.add(relative_error(r.grad_class_weights, numeric_gradient([&](const Tensor& t) { return oracle(x, y, t, 4.0, 0.2); }, w)));
    }
    all.push_back(g);
  }

  {
    GradStats g{"teacher distance loss"};
    for (int i = 0; i < n; ++i, ++g.instances) {
      const Tensor a = random_f64({pick(1, 4), pick(1, 5)}, rng);
      const Tensor b = random_f64(a.shape(), rng);
      GradTape tape;
      const auto av = tape.input(a);
      const Gradients gr = tape.backward(ops::mean_sq_distance(tape, av, tape.constant(b)));
      const auto f = [&](const Tensor& t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < t.numel(); ++k) acc += (t.get(k) - b.get(k)) * (t.get(k) - b.get(k));
        return acc / static_cast<double>(a.dim(0));
      };
      g.add(relative_error(gr.of(av), numeric_gradient(f, a)));
    }
    all.push_back(g);
  }

  double worst = 0.0;
  for (const auto& g : all) {
    o.require(g.instances >= 20 && g.worst <= 1e-5, g.name + " rel err " + fmt("%.3g", g.worst));
    worst = std::max(worst, g.worst);
  }
  o.note(std::to_string(all.size()) + " kernels/losses x 20 instances, worst rel err " + fmt("%.3g", worst));
  return o;
}

// ---- 7 ----

Dataset tiny_dataset() {
  SynthSpec s;
  s.duration = 8.0;
  s.seed = 31;
  const auto [audio, ref] = synth_generate(s);
  return make_training_set(audio, ref, 0.25, 0.5);
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.frontend_channels = 4;
  c.block_channels = {4, 4, 4, 4, 4};
  c.embedding_dim = 4;
  return c;
}

Outcome distillation(const Fixture& fx) {
  Outcome o;
  const Dataset data = tiny_dataset();
  const ModelConfig mc = tiny_model();
  const ModelGraph student = build_embedding_model(mc, EmbeddingVariant::reduced, 4);
  const ModelGraph teacher = build_embedding_model(mc, EmbeddingVariant::baseline, 5);
  DistillConfig c;
  c.epochs = 4;
  c.checkpoint_every = 2;
  c.batch_size = 4;
  c.seed = 9;
  const TrainResult task_only = train_distill(student, nullptr, data, c);
  const TrainResult zero = train_distill(student, &teacher, data, c);
  o.require(bitwise_equal(task_only.model, zero.model) && task_only.class_weights.bitwise_equal(zero.class_weights),
            "lambda=0 differs from task-only");

  const auto& st = fx.train_report.at("student");
  const double initial = st.at("initial_teacher_mse").get<double>();
  const double final_mse = st.at("trace").back().at("teacher_mse").get<double>();
  const auto epochs = st.at("trace").size();
  o.require(epochs == 30, "student epochs " + std::to_string(epochs));
  o.require(final_mse <= 0.5 * initial, "MSE " + fmt("%.4f", initial) + " -> " + fmt("%.4f", final_mse));
  std::vector<int> desk_ckpts;
  for (const auto& c : fx.train_report.at("checkpoints")) desk_ckpts.push_back(c.at("epoch").get<int>());
  o.require(desk_ckpts == std::vector<int>{19}, "30-epoch checkpoints");

  DistillConfig longer = c;
  longer.epochs = 60;
  longer.checkpoint_every = 20;
  longer.lambda = 1.0;
  std::vector<int> grid;
  for (const auto& ck : train_distill(student, &teacher, data, longer).checkpoints) grid.push_back(ck.epoch);
  o.require(grid == std::vector<int>{19, 39, 59}, "60-epoch checkpoint grid");
  o.note("lambda=0 identical to task-only; lambda=" + fmt("%g", st.at("lambda").get<double>()) + " MSE " +
         fmt("%.4f", initial) + " -> " + fmt("%.4f", final_mse) + " (" + fmt("%.1f", 100.0 * final_mse / initial) +
         "%); checkpoints at 19,39,59");
  return o;
}

// ---- 8 ----

Annotation random_annotation(std::mt19937_64& rng, std::size_t speakers, const std::string& prefix) {
  Annotation a{"f", {}};
  std::uniform_real_distribution<double> gap(0.0, 3.0), len(0.2, 4.0);
  for (std::size_t s = 0; s < speakers; ++s) {
    double t = gap(rng);
    for (int k = 0; k < 3; ++k) {
      const double d = len(rng);
      a.segments.push_back({t, d, prefix + std::to_string(s)});
      t += d + 0.1 + gap(rng);
    }
  }
  return a;
}

double pair_overlap(const Annotation& a, const std::string& la, const Annotation& b, const std::string& lb) {
  double acc = 0.0;
  for (const auto& x : a.segments) {
    if (x.label != la) continue;
    for (const auto& y : b.segments) {
      if (y.label == lb) acc += std::max(0.0, std::min(x.end(), y.end()) - std::max(x.onset, y.onset));
    }
  }
  return acc;
}

// Best total overlap over every one-to-one partial mapping.
double best_mapping_weight(const std::vector<std::vector<double>>& w, std::size_t h, std::vector<bool>& used) {
  if (h == w[0].size()) return 0.0;
  double best = best_mapping_weight(w, h + 1, used);
  for (std::size_t r = 0; r < w.size(); ++r) {
    if (used[r]) continue;
    used[r] = true;
    best = std::max(best, w[r][h] + best_mapping_weight(w, h + 1, used));
    used[r] = false;
  }
  return best;
}

Outcome der_scorer() {
  Outcome o;
  const Annotation ref{"f", {{0.0, 10.0, "A"}}};
  const Annotation hyp{"f", {{0.0, 8.0, "B"}}};
  const double hand = der(ref, hyp).der;
  o.require(hand == 0.2, "hand case " + fmt("%.17g", hand));
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> nspk(1, 5);
  double worst_gap = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Annotation r = random_annotation(rng, nspk(rng), "r");
    const Annotation h = random_annotation(rng, nspk(rng), "h");
    o.require(der(r, r).der == 0.0, "DER(x,x) != 0");

    std::vector<std::string> hl = labels(h);
    std::vector<std::string> shuffled = hl;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    Annotation hp = h;
    for (auto& s : hp.segments) {
      s.label = "p" + shuffled[static_cast<std::size_t>(std::find(hl.begin(), hl.end(), s.label) - hl.begin())];
    }
    o.require(std::abs(der(r, hp).der - der(r, h).der) <= 1e-12, "permutation changed DER");

    const std::vector<std::string> rl = labels(r);
    std::vector<std::vector<double>> w(rl.size(), std::vector<double>(hl.size()));
    for (std::size_t i = 0; i < rl.size(); ++i) {
      for (std::size_t j = 0; j < hl.size(); ++j) w[i][j] = pair_overlap(r, rl[i], h, hl[j]);
    }
    std::vector<bool> used(rl.size(), false);
    const double oracle = best_mapping_weight(w, 0, used);
    double got = 0.0;
    for (const auto& [hyp_label, ref_label] : optimal_mapping(r, h)) got += pair_overlap(r, ref_label, h, hyp_label);
    worst_gap = std::max(worst_gap, std::abs(oracle - got));
  }
  o.require(worst_gap <= 1e-9, "mapping gap " + fmt("%.3g", worst_gap));
  o.note("hand case " + fmt("%.3f", hand) + ", 100 random instances, max mapping gap " + fmt("%g", worst_gap));
  return o;
}

// ---- 9 ----

Outcome latency_harness(const Fixture& fx) {
  Outcome o;
  const fs::path dir = fx.root / "latency";
  const fs::path models = fx.root / "models";
  cli({"optimize", "--model", (models / "student.diop").string(), "--pass", "fuse", "--out", (dir / "fused.diop").string()});
  cli({"optimize", "--model", (models / "student.diop").string(), "--pass", "quant-int8", "--out",
       (dir / "quantized.diop").string()});
  cli({"bench", "--data", (fx.root / "eval").string(), "--segmenter", (models / "segmenter.diop").string(), "--variant",
       "reduced=" + (models / "student.diop").string(), "--variant", "fused=" + (dir / "fused.diop").string(),
       "--variant", "quantized=" + (dir / "quantized.diop").string(), "--out", (dir / "bench").string()});
  const auto table = read_csv(dir / "bench" / "bench.csv");
  o.require(table.size() == 4 && table[0] == std::vector<std::string>{"Model", "DER", "Pipeline latency mean in s",
                                                                         "Latency in %", "Model size in MB"},
            "bench.csv shape");
  if (!o.pass) return o;
  o.require(table[1][0] == "reduced" && table[1][3] == "100.0", "baseline row");
  o.require(table[2][0] == "fused" && table[3][0] == "quantized", "row order");

  const std::size_t chunks = chunk_stream(fx.eval_audio.samples.size(), desk_pipeline()).size();
  std::map<std::string, std::vector<double>> samples;
  const auto rows = read_csv(dir / "bench" / "latency_samples.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) samples[rows[i][0]].push_back(std::stod(rows[i][2]));
  const auto report = nlohmann::json::parse(read_text_file(dir / "bench" / "bench.json"));
  std::string means;
  for (std::size_t v = 0; v < 3; ++v) {
    const std::string name = table[v + 1][0];
    const auto& xs = samples[name];
    o.require(xs.size() == chunks, name + " has " + std::to_string(xs.size()) + " samples for " + std::to_string(chunks) + " chunks");
    o.require(std::all_of(xs.begin(), xs.end(), [](double x) { return x > 0.0; }), name + " non-positive sample");
    double sum = 0.0;
    for (const double x : xs) sum += x;
    const double mean = sum / static_cast<double>(xs.size());
    double sq = 0.0;
    for (const double x : xs) sq += (x - mean) * (x - mean);
    const double sd = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    const auto& jr = report.at("variants").at(v);
    o.require(std::abs(jr.at("latency_mean_s").get<double>() - mean) <= 1e-12 &&
                  std::abs(jr.at("latency_std_s").get<double>() - sd) <= 1e-12,
              name + " mean/std not recomputable");
    o.require(std::abs(std::stod(table[v + 1][2]) - mean) <= 5e-7, name + " CSV mean");
    means += (v ? ", " : "") + name + " " + fmt("%.6f", mean) + " s (" + table[v + 1][3] + "%)";
  }
  o.note(std::to_string(chunks) + " chunks per variant; " + means);
  return o;
}

// ---- 10 ----

void full_flow(const fs::path& root) {
  cli({"synth-data", "--out", (root / "train").string()});
  cli({"synth-data", "--out", (root / "eval").string(), "--files", "1", "--seed", "100"});
  cli({"train-distill", "--data", (root / "train").string(), "--out", (root / "models").string()});
  cli({"optimize", "--model", (root / "models" / "student.diop").string(), "--pass", "fuse", "--out",
       (root / "models" / "fused.diop").string()});
  cli({"optimize", "--model", (root / "models" / "student.diop").string(), "--pass", "quant-int8", "--out",
       (root / "models" / "quantized.diop").string()});
  const fs::path m = root / "models";
  cli({"bench", "--data", (root / "eval").string(), "--segmenter", (m / "segmenter.diop").string(), "--variant",
       "reduced=" + (m / "student.diop").string(), "--variant", "fused=" + (m / "fused.diop").string(), "--variant",
       "quantized=" + (m / "quantized.diop").string(), "--out", (root / "bench").string()});
}

Outcome reproducibility(const fs::path& root) {
  Outcome o;
  const fs::path a = root / "run_a", b = root / "run_b";
  full_flow(a);
  full_flow(b);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const std::string ext = e.path().extension().string();
    const std::string name = e.path().filename().string();
    const bool timing = name.find("latency") != std::string::npos || name.rfind("bench.", 0) == 0;
    if (timing) continue;
    const fs::path rel = fs::relative(e.path(), a);
    // Reports may quote their own run directory.
    std::string text = read_text_file(e.path());
    for (auto at = text.find(a.string()); at != std::string::npos; at = text.find(a.string(), at)) {
      text.replace(at, a.string().size(), b.string());
    }
    o.require(fs::exists(b / rel) && text == read_text_file(b / rel), rel.string() + " differs");
    ++compared;
  }
  const auto ta = read_csv(a / "bench" / "bench.csv"), tb = read_csv(b / "bench" / "bench.csv");
  o.require(ta.size() == tb.size() && ta.size() == 4, "bench row count");
  for (std::size_t i = 0; i < std::min(ta.size(), tb.size()); ++i) {
    o.require(ta[i][0] == tb[i][0] && ta[i][1] == tb[i][1] && ta[i][4] == tb[i][4], "bench row " + std::to_string(i));
  }
  std::size_t models = 0, rttms = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    models += e.path().extension() == ".diop" ? 1 : 0;
    rttms += e.path().extension() == ".rttm" ? 1 : 0;
  }
  o.require(models >= 6 && rttms >= 6, "missing artifacts");
  o.note(std::to_string(compared) + " files identical (" + std::to_string(models) + " models, " +
         std::to_string(rttms) + " RTTM); DER columns equal");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "diop-acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  Fixture fx;
  std::string fixture_error;
  try {
    fx = make_fixture(root / "fixture");
  } catch (const std::exception& e) {
    fixture_error = e.what();
  }
  const auto needs_fixture = [&](const std::function<Outcome()>& fn) {
    return [&, fn]() {
      if (!fixture_error.empty()) throw std::runtime_error("fixture: " + fixture_error);
      return fn();
    };
  };
  const ModelGraph desk = build_embedding_model(ModelConfig{}, EmbeddingVariant::reduced, 1);

  run(1, "fusion exactness", 10, needs_fixture([&] { return fusion(fx); }));
  run(2, "COO break-even formula", 1, break_even);
  run(3, "sparse storage finding", 1, [&] { return sparse_storage(desk); });
  run(4, "pruning semantics", 5, [&] { return pruning(desk); });
  run(5, "int8 quantization", 60, needs_fixture([&] { return quantization(fx); }));
  run(6, "gradient checks", 60, gradients);
  run(7, "distillation behavior", 300, needs_fixture([&] { return distillation(fx); }), fx.seconds);
  run(8, "DER scorer", 30, der_scorer);
  run(9, "latency harness", 120, needs_fixture([&] { return latency_harness(fx); }));
  run(10, "end-to-end reproducibility", 600, [&] { return reproducibility(root / "repro"); });

  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
