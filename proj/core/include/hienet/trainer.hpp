#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hienet/model.hpp"

namespace hienet {

/// What one step of the learning-rate schedule counts.
enum class ScheduleUnit { kEpoch, kIteration };

struct TrainConfig {
  double initial_lr = 0.01;
  double lr_decay = 0.8;          // multiplier applied every `decay_every` units
  std::size_t decay_every = 5;
  ScheduleUnit schedule_unit = ScheduleUnit::kEpoch;
  double momentum = 0.9;          // Nesterov
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;
  double validation_fraction = 0.2;  // of training subjects
  /// Cap on the global L2 norm of each mini-batch gradient; 0 disables.
  double clip_norm = 5.0;

  void validate() const;
};

std::string to_string(ScheduleUnit unit);
ScheduleUnit parse_schedule_unit(const std::string& name);

/// initial_lr * lr_decay^floor(step / decay_every), where `step` is the
/// 0-based epoch (or iteration, per schedule_unit).
double lr_at(const TrainConfig& config, std::size_t step);

/// Nesterov momentum in the look-ahead-free form:
///   v' = mu v - lr g;  theta += -mu v + (1 + mu) v'
/// which is the classic v' = mu v - lr grad(theta + mu v) expressed on the
/// shifted iterate. With mu = 0 this is plain SGD.
void sgd_nesterov_step(std::span<const std::span<double>> params, const ModelGradients& grads,
                       ModelGradients& velocity, double lr, double momentum);

/// Rescales `grads` so its global L2 norm is at most `max_norm` (0 leaves it
/// untouched). Returns the norm before clipping.
double clip_gradient_norm(ModelGradients& grads, double max_norm);

struct LabeledSegment {
  std::span<const double> samples;
  int grade = 0;
  std::string subject_id;
};

/// One record per mini-batch step. Validation fields are NaN except on the
/// last step of each epoch, when the held-out subjects are evaluated.
struct CurvePoint {
  std::size_t iteration = 0;  // 1-based
  std::size_t epoch = 0;      // 0-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct TrainingCurve {
  std::vector<CurvePoint> points;

  /// `iteration,lr,train_loss,train_acc,val_loss,val_acc`; NaN validation
  /// values are written as empty fields.
  std::string to_csv() const;
};

struct TrainResult {
  ModelParams params;
  TrainingCurve curve;
  std::vector<std::string> training_subjects;
  std::vector<std::string> validation_subjects;
};

/// Subject-level split: round(fraction * subjects) subjects, chosen by a
/// seeded shuffle, go to validation (at least one subject always trains).
void split_by_subject(std::span<const LabeledSegment> dataset, double fraction, std::uint64_t seed,
                      std::vector<LabeledSegment>& training, std::vector<LabeledSegment>& validation);

using IterationCallback = std::function<void(const CurvePoint&)>;

/// Mini-batch SGD with Nesterov momentum and categorical cross-entropy for
/// the full epoch budget. Batches come from a seeded shuffle each epoch (the
/// last short batch is kept); batch norm runs in train mode while fitting.
TrainResult train(const ModelSpec& spec, std::span<const LabeledSegment> dataset,
                  const TrainConfig& config, const IterationCallback& on_iteration = {});

/// Same, with an explicit validation set and starting parameters.
TrainResult train_from(ModelParams params, std::span<const LabeledSegment> training,
                       std::span<const LabeledSegment> validation, const TrainConfig& config,
                       const IterationCallback& on_iteration = {});

/// Mean loss and accuracy with inference-mode batch norm.
struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalMetrics evaluate(const ModelParams& params, std::span<const LabeledSegment> data);

/// splitmix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t value);
/// Seed derived from a master seed and a name (FNV-1a of the name, mixed).
std::uint64_t derive_seed(std::uint64_t master, std::string_view name);

}  // namespace hienet
