#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "diop/io.hpp"
#include "diop/metrics.hpp"
#include "diop/model.hpp"
#include "diop/tape.hpp"

namespace diop {

struct DistillConfig {
  double lambda = 0.0;
  int epochs = 30;
  int checkpoint_every = 20;
  double learning_rate = 0.05;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double margin = 0.2;  ///< ArcFace additive angular margin m
  double scale = 10.0;  ///< ArcFace logit scale s
  double bn_momentum = 0.1;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

struct LabeledChunk {
  std::vector<float> samples;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<LabeledChunk> chunks;
  std::vector<std::string> class_names;  ///< label id -> speaker name
};

/// Cuts `chunk_duration` windows every `hop` seconds lying wholly inside a
/// single-speaker region of the reference. Class ids follow sorted labels.
Dataset make_training_set(const Audio& audio, const Annotation& reference, double chunk_duration,
                          double hop);

/// Value-level loss: task_loss + lambda * (1/B) sum ||s_b - t_b||^2.
/// Throws ShapeError on a shape mismatch and ValueError for lambda < 0.
double distill_loss(double task_loss, const Tensor& student_emb, const Tensor& teacher_emb,
                     double lambda);

/// ArcFace loss value and gradients with respect to embeddings and class
/// weights (see ops::arcface).
struct ArcfaceResult {
  double loss = 0.0;
  Tensor grad_embeddings;
  Tensor grad_class_weights;
};
ArcfaceResult arcface_loss(const Tensor& embeddings, std::span<const std::size_t> labels,
                           const Tensor& class_weights, double s, double m);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;         ///< mean minibatch loss over the epoch
  double task_loss = 0.0;    ///< mean ArcFace part
  /// Inference-mode student vs teacher embedding MSE after the epoch.
  std::optional<double> teacher_mse;
  std::optional<double> eval_der;
};

struct Checkpoint {
  int epoch = 0;
  ModelGraph model;
  std::vector<EpochRecord> trace;  ///< all epochs up to and including `epoch`
  std::optional<double> eval_der;
};

struct TrainResult {
  ModelGraph model;          ///< after the last epoch
  Tensor class_weights;      ///< ArcFace class centres [C x D]
  std::optional<double> initial_teacher_mse;
  std::vector<EpochRecord> trace;
  std::vector<Checkpoint> checkpoints;
};

/// Optional evaluation run on every checkpoint (returns a DER fraction).
using CheckpointEval = std::function<double(const ModelGraph&)>;

/// Minibatch SGD on ArcFace + lambda * teacher MSE. `teacher` may be null
/// for task-only training; with lambda == 0 the teacher term is left out of
/// the computation entirely. Checkpoints are taken at epochs e with
/// (e + 1) % checkpoint_every == 0. Throws ValueError on an empty dataset.
TrainResult train_distill(const ModelGraph& student, const ModelGraph* teacher, const Dataset& data,
                          const DistillConfig& cfg, const CheckpointEval& eval = {});

/// Embedding in inference mode for every chunk, stacked as [N x D].
Tensor embed_dataset(const ModelGraph& model, const Dataset& data);

/// Writes checkpoint models as "<stem>_epoch<e>.diop" plus a sidecar
/// "<stem>_metrics.csv" (epoch,loss,eval_der) in `dir`. Returns the model paths.
std::vector<std::filesystem::path> write_checkpoints(const TrainResult& result,
                                                     const std::filesystem::path& dir,
                                                     const std::string& stem);
std::string checkpoint_metrics_csv(const TrainResult& result);

struct SweepRow {
  double lambda = 0.0;
  std::optional<double> der;  ///< empty if the row failed
  double final_loss = 0.0;
  std::string error;
};

struct SweepReport {
  std::vector<SweepRow> rows;  ///< ascending lambda
  std::optional<double> best_lambda;

  /// Columns: teacher factor lambda, DER (percent), final loss.
  std::string to_csv() const;
};

/// One training + evaluation per lambda. Row i (ascending lambda) trains with
/// seed cfg.seed + i; failures are recorded and the sweep continues. Throws
/// ValueError for an empty lambda list.
SweepReport lambda_sweep(std::vector<double> lambdas, const ModelGraph& student,
                         const ModelGraph* teacher, const Dataset& data, const DistillConfig& cfg,
                         const std::function<double(const ModelGraph&)>& eval_der);

}  // namespace diop
