#include "diop/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <optional>
#include <set>

#include "diop/errors.hpp"
#include "diop/metrics.hpp"
#include "diop/passes.hpp"

namespace diop {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::map<std::string, std::string> default_settings() {
  return {
      {"synth.files", "2"},
      {"synth.num_speakers", "2"},
      {"synth.duration", "30"},
      {"synth.min_turn", "3"},
      {"synth.max_turn", "6"},
      {"synth.silence_fraction", "0.15"},
      {"synth.amplitude", "0.1"},
      {"synth.seed", "1"},
      {"synth.prefix", "synth"},

      {"model.frontend_channels", "16"},
      {"model.frontend_kernel", "65"},
      {"model.frontend_stride", "10"},
      {"model.block_channels", "32,32,32,32,32"},
      {"model.block_kernel", "5"},
      {"model.block_stride", "2"},
      {"model.embedding_dim", "32"},
      {"model.seg_frontend_channels", "16"},
      {"model.seg_frontend_kernel", "401"},
      {"model.seg_hidden", "8"},
      {"model.max_speakers", "2"},
      {"model.seed", "1"},

      {"train.lambda", "1"},
      {"train.epochs", "30"},
      {"train.teacher_epochs", "30"},
      {"train.checkpoint_every", "20"},
      {"train.learning_rate", "0.05"},
      {"train.batch_size", "8"},
      {"train.seed", "3"},
      {"train.margin", "0.2"},
      {"train.scale", "10"},
      {"train.chunk_duration", "0.5"},
      {"train.chunk_hop", "0.5"},

      {"pipeline.window_duration", "5"},
      {"pipeline.step", "0.25"},
      {"pipeline.latency", "3"},
      {"pipeline.tau_active", "0.555"},
      {"pipeline.rho_update", "0.422"},
      {"pipeline.delta_new", "0.8"},
      {"pipeline.sample_rate", "16000"},
      {"pipeline.seed", "0"},

      {"prune.amount", "0.3"},
      {"prune.structured_amount", "1"},
      {"prune.norm", "2"},
      {"prune.dim", "0"},

      {"sweep.lambdas", "0,0.1,1,3"},

      {"bench.variants", "reduced,fused,quantized"},
      {"bench.baseline", "reduced"},
  };
}

ModelConfig model_config(const KeyValueConfig& c) {
  ModelConfig m;
  m.sample_rate = static_cast<std::uint32_t>(c.unsigned_integer("pipeline.sample_rate"));
  m.frontend_channels = static_cast<std::uint32_t>(c.unsigned_integer("model.frontend_channels"));
  m.frontend_kernel = static_cast<std::uint32_t>(c.unsigned_integer("model.frontend_kernel"));
  m.frontend_stride = static_cast<std::uint32_t>(c.unsigned_integer("model.frontend_stride"));
  m.block_channels.clear();
  for (const double v : c.reals("model.block_channels")) {
    if (v < 1 || v != std::floor(v)) throw ConfigError("model.block_channels must list positive integers");
    m.block_channels.push_back(static_cast<std::uint32_t>(v));
  }
  m.block_kernel = static_cast<std::uint32_t>(c.unsigned_integer("model.block_kernel"));
  m.block_stride = static_cast<std::uint32_t>(c.unsigned_integer("model.block_stride"));
  m.embedding_dim = static_cast<std::uint32_t>(c.unsigned_integer("model.embedding_dim"));
  m.seg_frontend_channels = static_cast<std::uint32_t>(c.unsigned_integer("model.seg_frontend_channels"));
  m.seg_frontend_kernel = static_cast<std::uint32_t>(c.unsigned_integer("model.seg_frontend_kernel"));
  m.seg_hidden = static_cast<std::uint32_t>(c.unsigned_integer("model.seg_hidden"));
  m.max_speakers = static_cast<std::uint32_t>(c.unsigned_integer("model.max_speakers"));
  m.validate();
  return m;
}

PipelineConfig pipeline_config(const KeyValueConfig& c) {
  PipelineConfig p;
  p.window_duration = c.real("pipeline.window_duration");
  p.step = c.real("pipeline.step");
  p.latency = c.real("pipeline.latency");
  p.tau_active = c.real("pipeline.tau_active");
  p.rho_update = c.real("pipeline.rho_update");
  p.delta_new = c.real("pipeline.delta_new");
  p.sample_rate = static_cast<std::uint32_t>(c.unsigned_integer("pipeline.sample_rate"));
  p.seed = c.unsigned_integer("pipeline.seed");
  p.validate();
  return p;
}

DistillConfig distill_config(const KeyValueConfig& c) {
  DistillConfig d;
  d.lambda = c.real("train.lambda");
  d.epochs = static_cast<int>(c.integer("train.epochs"));
  d.checkpoint_every = static_cast<int>(c.integer("train.checkpoint_every"));
  d.learning_rate = c.real("train.learning_rate");
  d.batch_size = static_cast<int>(c.integer("train.batch_size"));
  d.seed = c.unsigned_integer("train.seed");
  d.margin = c.real("train.margin");
  d.scale = c.real("train.scale");
  d.validate();
  return d;
}

SynthSpec synth_spec(const KeyValueConfig& c) {
  SynthSpec s;
  s.num_speakers = static_cast<std::uint32_t>(c.unsigned_integer("synth.num_speakers"));
  s.duration = c.real("synth.duration");
  s.min_turn = c.real("synth.min_turn");
  s.max_turn = c.real("synth.max_turn");
  s.silence_fraction = c.real("synth.silence_fraction");
  s.amplitude = c.real("synth.amplitude");
  s.sample_rate = static_cast<std::uint32_t>(c.unsigned_integer("pipeline.sample_rate"));
  s.seed = c.unsigned_integer("synth.seed");
  s.validate();
  return s;
}

std::vector<LabeledFile> load_labeled_dir(const fs::path& dir, std::uint32_t sample_rate) {
  if (!fs::is_directory(dir)) throw FormatError("'" + dir.string() + "' is not a directory");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".wav") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw FormatError("no .wav files in '" + dir.string() + "'");
  std::vector<LabeledFile> files;
  for (const std::string& id : ids) {
    LabeledFile f{id, wav_read(dir / (id + ".wav"), sample_rate), rttm_read(dir / (id + ".rttm"))};
    if (f.reference.file_id.empty()) f.reference.file_id = id;
    files.push_back(std::move(f));
  }
  return files;
}

Dataset dataset_from_files(const std::vector<LabeledFile>& files, double chunk_duration, double hop) {
  std::set<std::string> names;
  for (const auto& f : files) {
    for (const auto& l : labels(f.reference)) names.insert(l);
  }
  Dataset all;
  all.class_names.assign(names.begin(), names.end());
  for (const auto& f : files) {
    Dataset d = make_training_set(f.audio, f.reference, chunk_duration, hop);
    for (auto& c : d.chunks) {
      const std::string& name = d.class_names[c.label];
      c.label = static_cast<std::size_t>(
          std::lower_bound(all.class_names.begin(), all.class_names.end(), name) - all.class_names.begin());
      all.chunks.push_back(std::move(c));
    }
  }
  return all;
}

DERBreakdown aggregate_der(const std::vector<DERBreakdown>& parts) {
  DERBreakdown d;
  for (const auto& p : parts) {
    d.missed += p.missed;
    d.false_alarm += p.false_alarm;
    d.confusion += p.confusion;
    d.total_reference_speech += p.total_reference_speech;
  }
  if (d.total_reference_speech <= 0.0) throw ValueError("der: reference contains no speech");
  d.der = (d.missed + d.false_alarm + d.confusion) / d.total_reference_speech;
  return d;
}

namespace {

json der_json(const DERBreakdown& d) {
  return {{"der", d.der},
          {"missed_s", d.missed},
          {"false_alarm_s", d.false_alarm},
          {"confusion_s", d.confusion},
          {"reference_speech_s", d.total_reference_speech}};
}

void write_run_files(const fs::path& dir, const std::string& stem, const KeyValueConfig& cfg,
                     const json& report) {
  fs::create_directories(dir);
  write_text_file(dir / (stem + ".config"), cfg.resolved());
  write_text_file(dir / (stem + ".json"), report.dump(2) + "\n");
}

struct EvalSet {
  std::vector<LabeledFile> files;
};

struct PipelineEval {
  DERBreakdown der;
  std::vector<PipelineResult> results;
};

PipelineEval evaluate(const ModelGraph& embedder, const ModelGraph& segmenter,
                      const std::vector<LabeledFile>& files, const PipelineConfig& pc) {
  PipelineEval ev;
  std::vector<DERBreakdown> parts;
  for (const auto& f : files) {
    ev.results.push_back(run_pipeline(embedder, segmenter, f.audio, pc, f.reference.file_id));
    parts.push_back(der(f.reference, ev.results.back().annotation));
  }
  ev.der = aggregate_der(parts);
  return ev;
}

ModelGraph load_segmenter(const std::string& path, const KeyValueConfig& cfg) {
  if (!path.empty()) return load_model(path);
  return build_segmentation_model(model_config(cfg), cfg.unsigned_integer("model.seed"));
}

// ---- commands ----

int cmd_synth(KeyValueConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const std::size_t files = cfg.unsigned_integer("synth.files");
  if (files == 0) throw ConfigError("synth.files must be >= 1");
  const SynthSpec base = synth_spec(cfg);
  json report = {{"command", "synth-data"}, {"files", json::array()}};
  for (std::size_t i = 0; i < files; ++i) {
    SynthSpec s = base;
    s.seed = base.seed + i;
    char id[64];
    std::snprintf(id, sizeof id, "%s%03zu", cfg.str("synth.prefix").c_str(), i);
    s.file_id = id;
    const auto [audio, ref] = synth_generate(s);
    wav_write(audio, out_dir / (s.file_id + ".wav"));
    rttm_write(ref, out_dir / (s.file_id + ".rttm"));
    report["files"].push_back({{"id", s.file_id},
                               {"seed", s.seed},
                               {"duration_s", audio.duration()},
                               {"speech_s", speech_seconds(ref)},
                               {"segments", ref.segments.size()}});
    out << "wrote " << (out_dir / (s.file_id + ".wav")).string() << "\n";
  }
  write_run_files(out_dir, "synth-data", cfg, report);
  return kExitOk;
}

json trace_json(const TrainResult& r) {
  json t = json::array();
  for (const auto& e : r.trace) {
    json row = {{"epoch", e.epoch}, {"loss", e.loss}, {"task_loss", e.task_loss}};
    if (e.teacher_mse) row["teacher_mse"] = *e.teacher_mse;
    if (e.eval_der) row["eval_der"] = *e.eval_der;
    t.push_back(row);
  }
  return t;
}

int cmd_train(KeyValueConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
              const std::string& teacher_path, const std::string& eval_dir, std::ostream& out) {
  const ModelConfig mc = model_config(cfg);
  const PipelineConfig pc = pipeline_config(cfg);
  const DistillConfig dc = distill_config(cfg);
  const auto files = load_labeled_dir(data_dir, pc.sample_rate);
  const Dataset data = dataset_from_files(files, cfg.real("train.chunk_duration"), cfg.real("train.chunk_hop"));
  if (data.chunks.empty()) throw ValueError("no single-speaker training chunks found in '" + data_dir.string() + "'");
  const std::uint64_t seed = cfg.unsigned_integer("model.seed");
  fs::create_directories(out_dir);

  json report = {{"command", "train-distill"}, {"training_chunks", data.chunks.size()},
                 {"classes", data.class_names}};
  ModelGraph teacher;
  if (!teacher_path.empty()) {
    teacher = load_model(teacher_path);
    report["teacher"] = {{"source", teacher_path}};
  } else {
    DistillConfig tc = dc;
    tc.lambda = 0.0;
    tc.epochs = static_cast<int>(cfg.integer("train.teacher_epochs"));
    tc.checkpoint_every = tc.epochs;
    const TrainResult tr = train_distill(build_embedding_model(mc, EmbeddingVariant::baseline, seed),
                                         nullptr, data, tc);
    teacher = tr.model;
    report["teacher"] = {{"source", "trained task-only"}, {"trace", trace_json(tr)}};
    out << "teacher trained: loss " << tr.trace.front().loss << " -> " << tr.trace.back().loss << "\n";
  }
  save_model(teacher, out_dir / "teacher.diop");
  const ModelGraph segmenter = build_segmentation_model(mc, seed);
  save_model(segmenter, out_dir / "segmenter.diop");

  std::vector<LabeledFile> eval_files;
  if (!eval_dir.empty()) eval_files = load_labeled_dir(eval_dir, pc.sample_rate);
  CheckpointEval eval;
  if (!eval_files.empty()) {
    eval = [&](const ModelGraph& m) { return evaluate(m, segmenter, eval_files, pc).der.der; };
  }
  const ModelGraph student0 = build_embedding_model(mc, EmbeddingVariant::reduced, seed + 1);
  const TrainResult sr = train_distill(student0, &teacher, data, dc, eval);
  save_model(sr.model, out_dir / "student.diop");
  const auto ckpts = write_checkpoints(sr, out_dir / "checkpoints", "student");
  report["student"] = {{"lambda", dc.lambda}, {"trace", trace_json(sr)}};
  if (sr.initial_teacher_mse) report["student"]["initial_teacher_mse"] = *sr.initial_teacher_mse;
  json cps = json::array();
  for (std::size_t i = 0; i < sr.checkpoints.size(); ++i) {
    json row = {{"epoch", sr.checkpoints[i].epoch}, {"path", ckpts[i].filename().string()}};
    if (sr.checkpoints[i].eval_der) row["eval_der"] = *sr.checkpoints[i].eval_der;
    cps.push_back(row);
  }
  report["checkpoints"] = cps;
  write_run_files(out_dir, "train-distill", cfg, report);
  out << "student trained: loss " << sr.trace.front().loss << " -> " << sr.trace.back().loss << "\n";
  if (sr.initial_teacher_mse) {
    out << "teacher distance (MSE): " << *sr.initial_teacher_mse << " -> " << *sr.trace.back().teacher_mse << "\n";
  }
  out << "wrote " << (out_dir / "student.diop").string() << "\n";
  return kExitOk;
}

int cmd_sweep(KeyValueConfig& cfg, const fs::path& data_dir, const fs::path& eval_dir,
              const fs::path& out_dir, const std::string& teacher_path, std::ostream& out) {
  const ModelConfig mc = model_config(cfg);
  const PipelineConfig pc = pipeline_config(cfg);
  const DistillConfig dc = distill_config(cfg);
  const auto files = load_labeled_dir(data_dir, pc.sample_rate);
  const auto eval_files = load_labeled_dir(eval_dir, pc.sample_rate);
  const Dataset data = dataset_from_files(files, cfg.real("train.chunk_duration"), cfg.real("train.chunk_hop"));
  const std::uint64_t seed = cfg.unsigned_integer("model.seed");
  ModelGraph teacher;
  if (!teacher_path.empty()) {
    teacher = load_model(teacher_path);
  } else {
    DistillConfig tc = dc;
    tc.lambda = 0.0;
    tc.epochs = static_cast<int>(cfg.integer("train.teacher_epochs"));
    tc.checkpoint_every = tc.epochs;
    teacher = train_distill(build_embedding_model(mc, EmbeddingVariant::baseline, seed), nullptr, data, tc).model;
  }
  const ModelGraph segmenter = build_segmentation_model(mc, seed);
  const ModelGraph student0 = build_embedding_model(mc, EmbeddingVariant::reduced, seed + 1);
  const SweepReport rep = lambda_sweep(cfg.reals("sweep.lambdas"), student0, &teacher, data, dc, [&](const ModelGraph& m) {
    return evaluate(m, segmenter, eval_files, pc).der.der;
  });
  fs::create_directories(out_dir);
  write_text_file(out_dir / "sweep.csv", rep.to_csv());
  json rows = json::array();
  for (const auto& r : rep.rows) {
    json row = {{"lambda", r.lambda}, {"final_loss", r.final_loss}};
    if (r.der) row["der"] = *r.der;
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(row);
  }
  json report = {{"command", "sweep-lambda"}, {"rows", rows}};
  if (rep.best_lambda) report["best_lambda"] = *rep.best_lambda;
  write_run_files(out_dir, "sweep-lambda", cfg, report);
  out << rep.to_csv();
  if (rep.best_lambda) out << "best lambda: " << *rep.best_lambda << "\n";
  return kExitOk;
}

int cmd_optimize(KeyValueConfig& cfg, const fs::path& in_path, const std::vector<std::string>& passes,
                 const fs::path& out_path, std::ostream& out) {
  ModelGraph m = load_model(in_path);
  json report = {{"command", "optimize"},
                 {"input", in_path.string()},
                 {"before", {{"nodes", m.nodes().size()}, {"params", param_count(m)}, {"size_bytes", model_size_bytes(m)}}},
                 {"passes", json::array()}};
  for (const std::string& p : passes) {
    json step = {{"pass", p}};
    const std::size_t nodes_before = m.nodes().size();
    if (p == "fuse") {
      step["fused_pairs"] = count_conv_relu_pairs(m);
      m = fuse_conv_relu(m);
    } else if (p == "quant-int8") {
      m = quantize_weights_int8(m);
    } else if (p == "prune-structured" || p == "prune-unstructured") {
      const PruneResult r = p == "prune-structured"
                                ? prune_structured(m, cfg.unsigned_integer("prune.structured_amount"),
                                                   cfg.real("prune.norm"), cfg.unsigned_integer("prune.dim"))
                                : prune_unstructured_global(m, cfg.real("prune.amount"));
      m = r.model;
      const SparsityReport sp = sparsity_report(m, r.mask);
      const MemoryEstimate mem = sparse_export_size(m, r.mask);
      json mods = json::array();
      for (const auto& mod : sp.modules) {
        mods.push_back({{"param", mod.param}, {"sparsity", mod.sparsity}, {"pruned", mod.is_pruned}});
      }
      step["sparsity"] = {{"average", sp.average}, {"modules", mods}};
      step["memory"] = {{"dense_bytes", mem.dense_bytes},
                        {"coo_bytes", mem.coo_bytes},
                        {"break_even_amount", mem.break_even_amount}};
      out << p << ": average sparsity " << sp.average << ", dense " << mem.dense_bytes << " B, COO "
          << mem.coo_bytes << " B\n";
    } else {
      throw ConfigError("unknown pass '" + p + "' (expected fuse, quant-int8, prune-structured, prune-unstructured)");
    }
    step["nodes_before"] = nodes_before;
    step["nodes_after"] = m.nodes().size();
    step["size_bytes"] = model_size_bytes(m);
    report["passes"].push_back(step);
    out << p << ": " << nodes_before << " -> " << m.nodes().size() << " nodes, " << model_size_bytes(m)
        << " parameter bytes\n";
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_model(m, out_path);
  report["after"] = {{"nodes", m.nodes().size()},
                     {"params", param_count(m)},
                     {"size_bytes", model_size_bytes(m)},
                     {"file_bytes", fs::file_size(out_path)}};
  const fs::path dir = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  write_run_files(dir, out_path.stem().string() + ".optimize", cfg, report);
  out << "wrote " << out_path.string() << "\n";
  return kExitOk;
}

int cmd_bench(KeyValueConfig& cfg, const fs::path& data_dir, const std::vector<std::string>& variant_args,
              const std::string& model_dir, const std::string& segmenter_path, const fs::path& out_dir,
              std::ostream& out) {
  const PipelineConfig pc = pipeline_config(cfg);
  std::vector<std::pair<std::string, fs::path>> variants;
  for (const std::string& v : variant_args) {
    const auto eq = v.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--variant expects name=path, got '" + v + "'");
    variants.emplace_back(v.substr(0, eq), v.substr(eq + 1));
  }
  if (variants.empty()) {
    if (model_dir.empty()) throw ConfigError("bench needs --variant name=path or --model-dir");
    for (const std::string& name : cfg.strings("bench.variants")) {
      variants.emplace_back(name, fs::path(model_dir) / (name + ".diop"));
    }
  }
  std::string seg_path = segmenter_path;
  if (seg_path.empty() && !model_dir.empty() && fs::exists(fs::path(model_dir) / "segmenter.diop")) {
    seg_path = (fs::path(model_dir) / "segmenter.diop").string();
  }
  const ModelGraph segmenter = load_segmenter(seg_path, cfg);
  const auto files = load_labeled_dir(data_dir, pc.sample_rate);

  std::vector<BenchRow> rows;
  json vreport = json::array();
  for (const auto& [name, path] : variants) {
    const ModelGraph model = load_model(path);
    const PipelineEval ev = evaluate(model, segmenter, files, pc);
    std::vector<double> samples;
    for (std::size_t i = 0; i < files.size(); ++i) {
      const auto& r = ev.results[i];
      rttm_write(r.annotation, out_dir / name / (files[i].id + ".rttm"));
      write_text_file(out_dir / name / (files[i].id + ".latency.csv"), latency_csv(r));
      const auto s = r.latency_samples();
      samples.insert(samples.end(), s.begin(), s.end());
    }
    BenchRow row{name, ev.der, latency_stats(samples), model_size_bytes(model)};
    vreport.push_back({{"variant", name},
                       {"model", path.string()},
                       {"der", der_json(ev.der)},
                       {"size_bytes", row.size_bytes},
                       {"chunks", samples.size()},
                       {"latency_mean_s", row.latency.mean},
                       {"latency_std_s", row.latency.std}});
    rows.push_back(std::move(row));
  }
  const BenchReport rep = bench_report(rows, cfg.str("bench.baseline"));
  fs::create_directories(out_dir);
  write_text_file(out_dir / "bench.csv", rep.to_csv());
  write_text_file(out_dir / "latency_samples.csv", latency_samples_csv(rep.rows));
  json report = {{"command", "bench"}, {"baseline", rep.baseline}, {"files", files.size()}, {"variants", vreport}};
  write_run_files(out_dir, "bench", cfg, report);
  out << rep.to_csv();
  return kExitOk;
}

std::vector<std::pair<std::string, fs::path>> annotation_files(const fs::path& p) {
  std::vector<std::pair<std::string, fs::path>> out;
  if (fs::is_directory(p)) {
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.path().extension() == ".rttm") out.emplace_back(e.path().stem().string(), e.path());
    }
    std::sort(out.begin(), out.end());
  } else {
    out.emplace_back(p.stem().string(), p);
  }
  return out;
}

int cmd_eval_der(KeyValueConfig& cfg, const fs::path& ref, const fs::path& hyp, const std::string& out_dir,
                 std::ostream& out) {
  const auto refs = annotation_files(ref);
  const bool hyp_dir = fs::is_directory(hyp);
  std::vector<DERBreakdown> parts;
  json per_file = json::array();
  for (const auto& [id, path] : refs) {
    const Annotation r = rttm_read(path);
    Annotation h = rttm_read(hyp_dir ? hyp / (id + ".rttm") : hyp);
    if (h.segments.empty()) h.file_id = r.file_id;
    const DERBreakdown d = der(r, h);
    parts.push_back(d);
    json row = der_json(d);
    row["file"] = id;
    per_file.push_back(row);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s DER %.6f (missed %.3f s, false alarm %.3f s, confusion %.3f s)\n",
                  id.c_str(), d.der, d.missed, d.false_alarm, d.confusion);
    out << buf;
  }
  const DERBreakdown total = aggregate_der(parts);
  char buf[64];
  std::snprintf(buf, sizeof buf, "DER %.6f\n", total.der);
  out << buf;
  if (!out_dir.empty()) {
    write_run_files(out_dir, "eval-der", cfg, {{"command", "eval-der"}, {"total", der_json(total)}, {"files", per_file}});
  }
  return kExitOk;
}

int cmd_memory(KeyValueConfig& cfg, std::size_t ndim, std::size_t elem, const std::string& model_path,
               const std::optional<std::int64_t>& nze, const std::vector<std::size_t>& shape,
               const std::string& out_dir, std::ostream& out) {
  json report = {{"command", "analyze-memory"}};
  char buf[160];
  const double be = coo_break_even_amount(ndim, elem);
  std::snprintf(buf, sizeof buf, "break-even amount (ndim %zu, element %zu B): %.4f\n", ndim, elem, be);
  out << buf;
  report["break_even"] = {{"ndim", ndim}, {"element_bytes", elem}, {"amount", be}};
  if (nze) {
    if (shape.empty()) throw ConfigError("--nze needs --shape");
    const std::size_t dense = dense_memory_bytes(shape, elem);
    const std::size_t coo = coo_memory_bytes(shape, *nze, elem);
    std::snprintf(buf, sizeof buf, "dense %zu B, COO %zu B\n", dense, coo);
    out << buf;
    report["tensor"] = {{"shape", shape}, {"nonzeros", *nze}, {"dense_bytes", dense}, {"coo_bytes", coo}};
  }
  if (!model_path.empty()) {
    const ModelGraph m = load_model(model_path);
    const PruneResult r = prune_unstructured_global(m, cfg.real("prune.amount"));
    const MemoryEstimate mem = sparse_export_size(r.model, r.mask);
    std::snprintf(buf, sizeof buf, "unstructured amount %.3f: dense %zu B, COO %zu B (break-even %.4f)\n",
                  cfg.real("prune.amount"), mem.dense_bytes, mem.coo_bytes, mem.break_even_amount);
    out << buf;
    report["model"] = {{"path", model_path},
                       {"amount", cfg.real("prune.amount")},
                       {"dense_bytes", mem.dense_bytes},
                       {"coo_bytes", mem.coo_bytes},
                       {"break_even_amount", mem.break_even_amount}};
  }
  if (!out_dir.empty()) write_run_files(out_dir, "analyze-memory", cfg, report);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Online speaker diarization inference optimization toolkit", "diop"};
  app.require_subcommand(1);
  std::string config_file;
  std::vector<std::string> overrides;
  app.add_option("--config", config_file, "key = value configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override one setting, key=value (repeatable)");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "generate synthetic multi-speaker audio with reference RTTM");
  std::string synth_out;
  std::optional<std::string> s_files, s_seed, s_duration, s_speakers;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--files", s_files, "number of files (synth.files)");
  synth->add_option("--seed", s_seed, "base seed (synth.seed)");
  synth->add_option("--duration", s_duration, "seconds per file (synth.duration)");
  synth->add_option("--speakers", s_speakers, "speakers per file (synth.num_speakers)");

  // train-distill
  auto* train = app.add_subcommand("train-distill", "train the reduced embedder against the teacher");
  std::string t_data, t_out, t_teacher, t_eval;
  std::optional<std::string> t_lambda, t_epochs, t_seed;
  train->add_option("--data", t_data, "directory of <id>.wav + <id>.rttm training files")->required();
  train->add_option("--out", t_out, "output directory")->required();
  train->add_option("--teacher", t_teacher, "teacher model file (trained task-only when omitted)");
  train->add_option("--eval-data", t_eval, "directory evaluated at every checkpoint");
  train->add_option("--lambda", t_lambda, "teacher factor (train.lambda)");
  train->add_option("--epochs", t_epochs, "student epochs (train.epochs)");
  train->add_option("--seed", t_seed, "training seed (train.seed)");

  // sweep-lambda
  auto* sweep = app.add_subcommand("sweep-lambda", "train and evaluate one student per teacher factor");
  std::string w_data, w_eval, w_out, w_teacher;
  std::optional<std::string> w_lambdas;
  sweep->add_option("--data", w_data, "training directory")->required();
  sweep->add_option("--eval-data", w_eval, "evaluation directory")->required();
  sweep->add_option("--out", w_out, "output directory")->required();
  sweep->add_option("--teacher", w_teacher, "teacher model file");
  sweep->add_option("--lambdas", w_lambdas, "comma-separated teacher factors (sweep.lambdas)");

  // optimize
  auto* opt = app.add_subcommand("optimize", "apply inference optimization passes to a model file");
  std::string o_model, o_out;
  std::vector<std::string> o_passes;
  std::optional<std::string> o_amount;
  opt->add_option("--model", o_model, "input model")->required()->check(CLI::ExistingFile);
  opt->add_option("--pass", o_passes, "fuse | quant-int8 | prune-structured | prune-unstructured (repeatable, applied in order)")
      ->required()
      ->check(CLI::IsMember({"fuse", "quant-int8", "prune-structured", "prune-unstructured"}));
  opt->add_option("--out", o_out, "output model")->required();
  opt->add_option("--amount", o_amount, "unstructured pruning amount (prune.amount)");

  // bench
  auto* bench = app.add_subcommand("bench", "run the pipeline for each model variant and report DER, latency and size");
  std::string b_data, b_out, b_model_dir, b_segmenter;
  std::vector<std::string> b_variants;
  std::optional<std::string> b_baseline;
  bench->add_option("--data", b_data, "directory of <id>.wav + <id>.rttm files")->required();
  bench->add_option("--out", b_out, "output directory")->required();
  bench->add_option("--variant", b_variants, "name=model path (repeatable)");
  bench->add_option("--model-dir", b_model_dir, "directory holding <variant>.diop for bench.variants");
  bench->add_option("--segmenter", b_segmenter, "segmentation model file");
  bench->add_option("--baseline", b_baseline, "baseline variant (bench.baseline)");

  // eval-der
  auto* evald = app.add_subcommand("eval-der", "score hypothesis RTTM against reference RTTM");
  std::string e_ref, e_hyp, e_out;
  evald->add_option("--ref", e_ref, "reference RTTM file or directory")->required()->check(CLI::ExistingPath);
  evald->add_option("--hyp", e_hyp, "hypothesis RTTM file or directory")->required()->check(CLI::ExistingPath);
  evald->add_option("--out", e_out, "directory for the report");

  // analyze-memory
  auto* mem = app.add_subcommand("analyze-memory", "dense vs COO storage analysis");
  std::size_t m_ndim = 3, m_elem = 4;
  std::string m_model, m_out;
  std::optional<std::int64_t> m_nze;
  std::vector<std::size_t> m_shape;
  std::optional<std::string> m_amount;
  mem->add_option("--ndim", m_ndim, "tensor rank")->check(CLI::Range(1, 16));
  mem->add_option("--elem", m_elem, "bytes per element")->check(CLI::Range(1, 16));
  mem->add_option("--nze", m_nze, "nonzero count for a single tensor");
  mem->add_option("--shape", m_shape, "tensor shape for --nze")->delimiter(',');
  mem->add_option("--model", m_model, "model file to prune and measure")->check(CLI::ExistingFile);
  mem->add_option("--amount", m_amount, "unstructured pruning amount (prune.amount)");
  mem->add_option("--out", m_out, "directory for the report");

  std::vector<std::string> argv_store = {"diop"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (app.get_subcommands().empty()) err << "run 'diop --help' for usage\n";
    return kExitUsage;
  }

  try {
    KeyValueConfig cfg(default_settings());
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& o : overrides) cfg.merge_assignment(o);
    const auto apply = [&](const char* key, const std::optional<std::string>& v) {
      if (v) cfg.set(key, *v);
    };
    if (synth->parsed()) {
      apply("synth.files", s_files);
      apply("synth.seed", s_seed);
      apply("synth.duration", s_duration);
      apply("synth.num_speakers", s_speakers);
      return cmd_synth(cfg, synth_out, out);
    }
    if (train->parsed()) {
      apply("train.lambda", t_lambda);
      apply("train.epochs", t_epochs);
      apply("train.seed", t_seed);
      return cmd_train(cfg, t_data, t_out, t_teacher, t_eval, out);
    }
    if (sweep->parsed()) {
      apply("sweep.lambdas", w_lambdas);
      return cmd_sweep(cfg, w_data, w_eval, w_out, w_teacher, out);
    }
    if (opt->parsed()) {
      apply("prune.amount", o_amount);
      return cmd_optimize(cfg, o_model, o_passes, o_out, out);
    }
    if (bench->parsed()) {
      apply("bench.baseline", b_baseline);
      return cmd_bench(cfg, b_data, b_variants, b_model_dir, b_segmenter, b_out, out);
    }
    if (evald->parsed()) return cmd_eval_der(cfg, e_ref, e_hyp, e_out, out);
    if (mem->parsed()) {
      apply("prune.amount", m_amount);
      return cmd_memory(cfg, m_ndim, m_elem, m_model, m_nze, m_shape, m_out, out);
    }
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace diop
