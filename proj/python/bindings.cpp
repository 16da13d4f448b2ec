#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "diop/cli.hpp"
#include "diop/distill.hpp"
#include "diop/errors.hpp"
#include "diop/io.hpp"
#include "diop/metrics.hpp"
#include "diop/model.hpp"
#include "diop/passes.hpp"
#include "diop/pipeline.hpp"
#include "diop/synth.hpp"

namespace py = pybind11;
using namespace diop;

namespace {

Tensor to_tensor(const py::array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  if (a.dtype().is(py::dtype::of<double>())) {
    const auto c = py::array_t<double, py::array::c_style | py::array::forcecast>::ensure(a);
    return Tensor(shape, std::vector<double>(c.data(), c.data() + c.size()));
  }
  const auto c = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(a);
  if (!c) throw ValueError("expected a numeric array");
  return Tensor(shape, std::vector<float>(c.data(), c.data() + c.size()));
}

py::array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  if (t.kind() == ElemKind::f64) {
    py::array_t<double> out(shape);
    std::copy(t.values<double>().begin(), t.values<double>().end(), out.mutable_data());
    return out;
  }
  const Tensor f = t.to(ElemKind::f32);
  py::array_t<float> out(shape);
  std::copy(f.values<float>().begin(), f.values<float>().end(), out.mutable_data());
  return out;
}

Audio make_audio(const py::array_t<float, py::array::c_style | py::array::forcecast>& samples,
                 std::uint32_t sample_rate) {
  if (samples.ndim() != 1) throw ShapeError("audio samples must be one-dimensional");
  return Audio{sample_rate, std::vector<float>(samples.data(), samples.data() + samples.size())};
}

py::array_t<float> audio_array(const Audio& a) {
  py::array_t<float> out(static_cast<py::ssize_t>(a.samples.size()));
  std::copy(a.samples.begin(), a.samples.end(), out.mutable_data());
  return out;
}

py::dict der_dict(const DERBreakdown& d) {
  py::dict r;
  r["der"] = d.der;
  r["missed"] = d.missed;
  r["false_alarm"] = d.false_alarm;
  r["confusion"] = d.confusion;
  r["total_reference_speech"] = d.total_reference_speech;
  return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Online speaker diarization inference optimization core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ValueError>(m, "DiopValueError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);

  // ---- models ----
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("sample_rate", &ModelConfig::sample_rate)
      .def_readwrite("frontend_channels", &ModelConfig::frontend_channels)
      .def_readwrite("frontend_kernel", &ModelConfig::frontend_kernel)
      .def_readwrite("frontend_stride", &ModelConfig::frontend_stride)
      .def_readwrite("block_channels", &ModelConfig::block_channels)
      .def_readwrite("block_kernel", &ModelConfig::block_kernel)
      .def_readwrite("block_stride", &ModelConfig::block_stride)
      .def_readwrite("embedding_dim", &ModelConfig::embedding_dim)
      .def_readwrite("seg_hidden", &ModelConfig::seg_hidden)
      .def_readwrite("max_speakers", &ModelConfig::max_speakers);

  py::class_<ModelGraph>(m, "ModelGraph")
      .def_property_readonly("node_names",
                             [](const ModelGraph& g) {
                               std::vector<std::string> names;
                               for (const auto& n : g.nodes()) names.push_back(n.name);
                               return names;
                             })
      .def_property_readonly("node_kinds",
                             [](const ModelGraph& g) {
                               std::vector<std::string> kinds;
                               for (const auto& n : g.nodes()) kinds.push_back(to_string(n.kind));
                               return kinds;
                             })
      .def_property_readonly("num_nodes", [](const ModelGraph& g) { return g.nodes().size(); })
      .def("param", [](const ModelGraph& g, const std::string& name) { return to_array(g.param(name)); })
      .def("param_names",
           [](const ModelGraph& g) {
             std::vector<std::string> names;
             for (const auto& [k, v] : g.params()) names.push_back(k);
             return names;
           })
      .def("param_dtype", [](const ModelGraph& g, const std::string& name) { return to_string(g.param(name).kind()); })
      .def("__eq__", [](const ModelGraph& a, const ModelGraph& b) { return bitwise_equal(a, b); });

  py::enum_<EmbeddingVariant>(m, "EmbeddingVariant")
      .value("baseline", EmbeddingVariant::baseline)
      .value("reduced", EmbeddingVariant::reduced);

  m.def("build_embedding_model", &build_embedding_model, py::arg("config"), py::arg("variant"), py::arg("seed"));
  m.def("build_segmentation_model", &build_segmentation_model, py::arg("config"), py::arg("seed"));
  m.def(
      "forward", [](const ModelGraph& g, const py::array& x) { return to_array(forward(g, to_tensor(x))); },
      py::arg("model"), py::arg("input"), "Runs the model on a [channels x samples] array.");
  m.def("executed_nodes", [](const ModelGraph& g, const py::array& x) {
    ExecStats s;
    (void)forward(g, to_tensor(x), &s);
    return s.nodes_executed;
  });
  m.def("param_count", &param_count);
  m.def("model_size_bytes", &model_size_bytes);
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));
  m.def("serialize_model", [](const ModelGraph& g) {
    const auto b = serialize_model(g);
    return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
  });

  // ---- passes ----
  m.def("count_conv_relu_pairs", &count_conv_relu_pairs);
  m.def("fuse_conv_relu", &fuse_conv_relu);
  m.def("quantize_weights_int8", &quantize_weights_int8);
  m.def(
      "quantize_roundtrip",
      [](const py::array& x) {
        const Tensor q = quantize_tensor_int8(to_tensor(x).to(ElemKind::f32));
        return py::make_tuple(to_array(dequantize(q)), *q.quant_scale());
      },
      "Quantizes to int8 and back; returns (values, scale).");
  m.def(
      "prune_structured",
      [](const ModelGraph& g, std::size_t amount, double n, std::size_t dim) {
        return prune_structured(g, amount, n, dim).model;
      },
      py::arg("model"), py::arg("amount") = 1, py::arg("n") = 2.0, py::arg("dim") = 0);
  m.def(
      "prune_unstructured_global",
      [](const ModelGraph& g, double amount) { return prune_unstructured_global(g, amount).model; },
      py::arg("model"), py::arg("amount") = 0.3);
  m.def("prunable_weights", &prunable_weights);
  m.def(
      "sparse_export_size",
      [](const ModelGraph& g, double amount) {
        const PruneResult r = prune_unstructured_global(g, amount);
        const MemoryEstimate e = sparse_export_size(r.model, r.mask);
        py::dict d;
        d["dense_bytes"] = e.dense_bytes;
        d["coo_bytes"] = e.coo_bytes;
        d["break_even_amount"] = e.break_even_amount;
        return d;
      },
      py::arg("model"), py::arg("amount"), "Dense vs COO bytes after global unstructured pruning.");
  m.def("dense_memory_bytes", &dense_memory_bytes, py::arg("shape"), py::arg("element_size"));
  m.def("coo_memory_bytes", &coo_memory_bytes, py::arg("shape"), py::arg("nze"), py::arg("element_size"));
  m.def("coo_break_even_amount", &coo_break_even_amount, py::arg("ndim"), py::arg("element_size"));

  // ---- annotations and scoring ----
  py::class_<Segment>(m, "Segment")
      .def(py::init([](double onset, double duration, std::string label) {
             return Segment{onset, duration, std::move(label)};
           }),
           py::arg("onset"), py::arg("duration"), py::arg("label"))
      .def_readwrite("onset", &Segment::onset)
      .def_readwrite("duration", &Segment::duration)
      .def_readwrite("label", &Segment::label)
      .def_property_readonly("end", &Segment::end)
      .def("__eq__", [](const Segment& a, const Segment& b) { return a == b; })
      .def("__repr__", [](const Segment& s) {
        std::ostringstream o;
        o << "Segment(" << s.onset << ", " << s.duration << ", '" << s.label << "')";
        return o.str();
      });

  py::class_<Annotation>(m, "Annotation")
      .def(py::init([](std::string file_id, std::vector<Segment> segments) {
             return Annotation{std::move(file_id), std::move(segments)};
           }),
           py::arg("file_id"), py::arg("segments") = std::vector<Segment>{})
      .def_readwrite("file_id", &Annotation::file_id)
      .def_readwrite("segments", &Annotation::segments)
      .def("labels", [](const Annotation& a) { return labels(a); })
      .def("__eq__", [](const Annotation& a, const Annotation& b) { return a == b; });

  m.def("der", [](const Annotation& r, const Annotation& h) { return der_dict(der(r, h)); }, py::arg("reference"),
        py::arg("hypothesis"));
  m.def("optimal_mapping", &optimal_mapping, py::arg("reference"), py::arg("hypothesis"));
  m.def("rttm_parse", &rttm_parse);
  m.def("rttm_format", &rttm_format);
  m.def("rttm_read", &rttm_read);
  m.def("rttm_write", &rttm_write);

  // ---- audio and synthetic data ----
  m.def(
      "synth_generate",
      [](std::uint32_t num_speakers, double duration, double min_turn, double max_turn, double silence_fraction,
         std::uint64_t seed, std::uint32_t sample_rate, const std::string& file_id) {
        SynthSpec s;
        s.num_speakers = num_speakers;
        s.duration = duration;
        s.min_turn = min_turn;
        s.max_turn = max_turn;
        s.silence_fraction = silence_fraction;
        s.seed = seed;
        s.sample_rate = sample_rate;
        s.file_id = file_id;
        const auto [audio, ref] = synth_generate(s);
        return py::make_tuple(audio_array(audio), ref);
      },
      py::arg("num_speakers") = 2, py::arg("duration") = 20.0, py::arg("min_turn") = 1.5, py::arg("max_turn") = 4.0,
      py::arg("silence_fraction") = 0.15, py::arg("seed") = 0, py::arg("sample_rate") = 16000,
      py::arg("file_id") = "synth", "Returns (samples, reference annotation).");
  m.def(
      "wav_read",
      [](const std::filesystem::path& p, std::uint32_t rate) {
        const Audio a = wav_read(p, rate);
        return py::make_tuple(audio_array(a), a.sample_rate);
      },
      py::arg("path"), py::arg("expected_rate") = 0);
  m.def(
      "wav_write",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& samples, std::uint32_t rate,
         const std::filesystem::path& p) { wav_write(make_audio(samples, rate), p); },
      py::arg("samples"), py::arg("sample_rate"), py::arg("path"));

  // ---- streaming pipeline ----
  py::class_<PipelineConfig>(m, "PipelineConfig")
      .def(py::init<>())
      .def_readwrite("window_duration", &PipelineConfig::window_duration)
      .def_readwrite("step", &PipelineConfig::step)
      .def_readwrite("latency", &PipelineConfig::latency)
      .def_readwrite("tau_active", &PipelineConfig::tau_active)
      .def_readwrite("rho_update", &PipelineConfig::rho_update)
      .def_readwrite("delta_new", &PipelineConfig::delta_new)
      .def_readwrite("sample_rate", &PipelineConfig::sample_rate)
      .def_readwrite("seed", &PipelineConfig::seed);

  m.def(
      "run_pipeline",
      [](const ModelGraph& embedder, const ModelGraph& segmenter,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& samples, const PipelineConfig& cfg,
         const std::string& file_id) {
        PipelineResult r;
        {
          const Audio audio = make_audio(samples, cfg.sample_rate);
          py::gil_scoped_release release;
          r = run_pipeline(embedder, segmenter, audio, cfg, file_id);
        }
        return py::make_tuple(r.annotation, r.latency_samples());
      },
      py::arg("embedder"), py::arg("segmenter"), py::arg("samples"), py::arg("config"), py::arg("file_id") = "stream",
      "Returns (hypothesis annotation, per-chunk latencies in seconds).");
  m.def("cosine_distance", &cosine_distance);
  m.def("latency_stats", [](std::vector<double> xs) {
    const LatencyStats s = latency_stats(std::move(xs));
    return py::make_tuple(s.mean, s.std);
  });

  // ---- distillation ----
  py::class_<DistillConfig>(m, "DistillConfig")
      .def(py::init<>())
      .def_readwrite("lam", &DistillConfig::lambda)
      .def_readwrite("epochs", &DistillConfig::epochs)
      .def_readwrite("checkpoint_every", &DistillConfig::checkpoint_every)
      .def_readwrite("learning_rate", &DistillConfig::learning_rate)
      .def_readwrite("batch_size", &DistillConfig::batch_size)
      .def_readwrite("seed", &DistillConfig::seed)
      .def_readwrite("margin", &DistillConfig::margin)
      .def_readwrite("scale", &DistillConfig::scale);

  m.def("distill_loss", [](double task, const py::array& s, const py::array& t, double lambda) {
    return distill_loss(task, to_tensor(s).to(ElemKind::f64), to_tensor(t).to(ElemKind::f64), lambda);
  });

  m.def(
      "train_distill",
      [](const ModelGraph& student, const ModelGraph* teacher,
         const py::array_t<float, py::array::c_style | py::array::forcecast>& samples, const Annotation& reference,
         const DistillConfig& cfg, double chunk_duration, double hop, std::uint32_t sample_rate) {
        TrainResult r;
        {
          const Audio audio = make_audio(samples, sample_rate);
          const Dataset data = make_training_set(audio, reference, chunk_duration, hop);
          py::gil_scoped_release release;
          r = train_distill(student, teacher, data, cfg);
        }
        py::dict out;
        out["model"] = r.model;
        std::vector<double> loss;
        std::vector<double> mse;
        for (const auto& e : r.trace) {
          loss.push_back(e.loss);
          if (e.teacher_mse) mse.push_back(*e.teacher_mse);
        }
        out["loss"] = loss;
        out["teacher_mse"] = mse;
        out["initial_teacher_mse"] = r.initial_teacher_mse ? py::cast(*r.initial_teacher_mse) : py::none();
        std::vector<int> epochs;
        for (const auto& c : r.checkpoints) epochs.push_back(c.epoch);
        out["checkpoint_epochs"] = epochs;
        return out;
      },
      py::arg("student"), py::arg("teacher"), py::arg("samples"), py::arg("reference"), py::arg("config"),
      py::arg("chunk_duration") = 0.5, py::arg("hop") = 0.5, py::arg("sample_rate") = 16000,
      "Trains on single-speaker chunks of one labelled recording. Pass teacher=None for task-only training.");

  // ---- command line ----
  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a diop command; returns (exit_code, stdout, stderr).");
}
