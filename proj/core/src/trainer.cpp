#include "hienet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "hienet/errors.hpp"

namespace hienet {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Fisher-Yates driven by mt19937_64 directly, so the permutation does not
// depend on the standard library's distribution implementation.
template <typename T>
void seeded_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(items[i - 1], items[j]);
  }
}

std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(initial_lr > 0.0)) throw DataError("initial learning rate must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw DataError("lr decay must be in (0, 1]");
  if (decay_every == 0) throw DataError("decay interval must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("momentum must be in [0, 1)");
  if (batch_size == 0) throw DataError("batch size must be >= 1");
  if (epochs == 0) throw DataError("epoch budget must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw DataError("validation fraction must be in [0, 1)");
  }
  if (!(clip_norm >= 0.0 && std::isfinite(clip_norm))) {
    throw DataError("gradient clip norm must be finite and >= 0");
  }
}

std::string to_string(ScheduleUnit unit) {
  return unit == ScheduleUnit::kEpoch ? "epoch" : "iteration";
}

ScheduleUnit parse_schedule_unit(const std::string& name) {
  if (name == "epoch") return ScheduleUnit::kEpoch;
  if (name == "iteration") return ScheduleUnit::kIteration;
  throw DataError("unknown schedule unit '" + name + "' (expected epoch or iteration)");
}

double lr_at(const TrainConfig& config, std::size_t step) {
  const auto decays = static_cast<double>(step / config.decay_every);
  return config.initial_lr * std::pow(config.lr_decay, decays);
}

double clip_gradient_norm(ModelGradients& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : grads.tensors) {
    for (double v : t) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& t : grads.tensors) {
      for (double& v : t) v *= k;
    }
  }
  return norm;
}

void sgd_nesterov_step(std::span<const std::span<double>> params, const ModelGradients& grads,
                       ModelGradients& velocity, double lr, double momentum) {
  if (params.size() != grads.tensors.size() || params.size() != velocity.tensors.size()) {
    throw ShapeError("parameter, gradient and velocity tensor counts differ");
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& v = velocity.tensors[t];
    const auto& g = grads.tensors[t];
    if (params[t].size() != g.size() || v.size() != g.size()) {
      throw ShapeError("tensor " + std::to_string(t) + ": parameter, gradient and velocity sizes differ");
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double previous = v[i];
      v[i] = momentum * previous - lr * g[i];
      params[t][i] += -momentum * previous + (1.0 + momentum) * v[i];
    }
  }
}

std::string TrainingCurve::to_csv() const {
  std::string out = "iteration,lr,train_loss,train_acc,val_loss,val_acc\n";
  for (const auto& p : points) {
    out += std::to_string(p.iteration) + "," + csv_number(p.lr) + "," + csv_number(p.train_loss) +
           "," + csv_number(p.train_acc) + "," + csv_number(p.val_loss) + "," +
           csv_number(p.val_acc) + "\n";
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return mix_seed(master ^ mix_seed(h));
}

void split_by_subject(std::span<const LabeledSegment> dataset, double fraction, std::uint64_t seed,
                      std::vector<LabeledSegment>& training, std::vector<LabeledSegment>& validation) {
  std::set<std::string> unique;
  for (const auto& s : dataset) unique.insert(s.subject_id);
  std::vector<std::string> subjects(unique.begin(), unique.end());
  std::mt19937_64 rng(mix_seed(seed ^ 0x5eed5eedULL));
  seeded_shuffle(subjects, rng);
  auto held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(subjects.size())));
  held = std::min(held, subjects.size() - 1);
  const std::set<std::string> validation_ids(subjects.begin(), subjects.begin() + static_cast<std::ptrdiff_t>(held));
  training.clear();
  validation.clear();
  for (const auto& s : dataset) {
    (validation_ids.count(s.subject_id) ? validation : training).push_back(s);
  }
}

EvalMetrics evaluate(const ModelParams& params, std::span<const LabeledSegment> data) {
  EvalMetrics m;
  if (data.empty()) return {kNaN, kNaN};
  std::size_t correct = 0;
  for (const auto& s : data) {
    const GradeProbabilities p = forward(params, s.samples, Mode::kInfer);
    m.loss += cross_entropy(p, s.grade);
    if (argmax_grade(p) == s.grade) ++correct;
  }
  m.loss /= static_cast<double>(data.size());
  m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return m;
}

TrainResult train_from(ModelParams params, std::span<const LabeledSegment> training,
                       std::span<const LabeledSegment> validation, const TrainConfig& config,
                       const IterationCallback& on_iteration) {
  config.validate();
  if (training.empty()) throw DataError("training set is empty");
  for (const auto& s : training) {
    require_grade(s.grade, "training label");
    if (s.samples.size() != params.spec.segment_samples) {
      throw DataError("training segment of subject '" + s.subject_id + "' has " +
                      std::to_string(s.samples.size()) + " samples, model expects " +
                      std::to_string(params.spec.segment_samples));
    }
  }
  for (const auto& s : validation) require_grade(s.grade, "validation label");

  TrainResult result;
  std::set<std::string> train_ids, val_ids;
  for (const auto& s : training) train_ids.insert(s.subject_id);
  for (const auto& s : validation) val_ids.insert(s.subject_id);
  result.training_subjects.assign(train_ids.begin(), train_ids.end());
  result.validation_subjects.assign(val_ids.begin(), val_ids.end());

  std::mt19937_64 rng(mix_seed(config.seed ^ 0xba7c4ULL));
  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  ModelGradients velocity = zero_gradients(params);
  std::vector<std::span<const double>> batch;
  std::vector<int> grades;
  std::size_t iteration = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      batch.clear();
      grades.clear();
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(training[order[i]].samples);
        grades.push_back(training[order[i]].grade);
      }
      const double lr =
          lr_at(config, config.schedule_unit == ScheduleUnit::kEpoch ? epoch : iteration);
      BatchOutcome outcome = loss_and_gradients(params, batch, grades);
      clip_gradient_norm(outcome.gradients, config.clip_norm);
      const auto tensors = trainable_tensors(params);
      sgd_nesterov_step(tensors, outcome.gradients, velocity, lr, config.momentum);
      apply_batchnorm_statistics(params, outcome);

      CurvePoint point;
      point.iteration = ++iteration;
      point.epoch = epoch;
      point.lr = lr;
      point.train_loss = outcome.mean_loss;
      point.train_acc = static_cast<double>(outcome.correct) / static_cast<double>(batch.size());
      point.val_loss = point.val_acc = kNaN;
      if (end == order.size() && !validation.empty()) {
        const EvalMetrics v = evaluate(params, validation);
        point.val_loss = v.loss;
        point.val_acc = v.accuracy;
      }
      if (!std::isfinite(point.train_loss)) {
        throw InvariantError("training diverged: non-finite loss at iteration " +
                             std::to_string(point.iteration));
      }
      // ReLU maps NaN to zero, so a broken network can still report a finite loss.
      for (const auto& t : tensors) {
        for (double v : t) {
          if (!std::isfinite(v)) {
            throw InvariantError("training diverged: non-finite parameter at iteration " +
                                 std::to_string(point.iteration));
          }
        }
      }
      result.curve.points.push_back(point);
      if (on_iteration) on_iteration(point);
    }
  }
  params.epochs = static_cast<std::uint32_t>(config.epochs);
  result.params = std::move(params);
  return result;
}

TrainResult train(const ModelSpec& spec, std::span<const LabeledSegment> dataset,
                  const TrainConfig& config, const IterationCallback& on_iteration) {
  config.validate();
  if (dataset.empty()) throw DataError("training dataset is empty");
  for (const auto& s : dataset) require_grade(s.grade, "training label");
  std::vector<LabeledSegment> training, validation;
  split_by_subject(dataset, config.validation_fraction, config.seed, training, validation);
  return train_from(init_params(spec, config.seed), training, validation, config, on_iteration);
}

}  // namespace hienet
