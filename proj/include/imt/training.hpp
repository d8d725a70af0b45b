#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "imt/corpus.hpp"
#include "imt/interlingua.hpp"
#include "imt/registry.hpp"

namespace imt::train {

struct TrainingConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 32;
  int max_steps = 20000;
  int eval_interval = 250;
  int patience = 4;
  double min_improvement = 1e-4;
  il::DistanceKind distance_kind = il::DistanceKind::Corr;
  il::LossWeights weights;
  bool dvq = false;
  int dvq_tables = 8;
  int dvq_codes = 16;
  double dvq_beta = 0.25;
  std::uint64_t seed = 1;

  void validate() const;
  std::string to_text() const;
  /// Applies `key = value` lines on top of the current values.
  void apply_text(std::string_view text);
};

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::int64_t step = 0;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// One bias-corrected Adam step; `grads[i]` belongs to `params[i]`.
void adam_update(const NamedTensors& params, const std::vector<std::vector<double>>& grads, AdamState& state,
                 const TrainingConfig& cfg);

/// Runs Adam on the accumulated gradients of `params`, then clears them.
void apply_gradients(const NamedTensors& params, AdamState& state, const TrainingConfig& cfg);

/// Teacher-forced cross-entropy of `tgt_ids` (framed) given `memory`.
Tensor sequence_loss(const reg::Pipeline& pipeline, const reg::Pipeline::Memory& memory, const data::IdMatrix& tgt_ids,
                     std::mt19937_64* rng = nullptr);

/// All four task losses and the distance from one parallel batch, then one
/// Adam update of every trainable parameter. Languages come from the
/// batch's pair label.
il::LossBreakdown joint_train_step(reg::SystemState& state, const data::ParallelBatch& batch, const TrainingConfig& cfg,
                                   AdamState& adam, std::mt19937_64* rng = nullptr);

/// Same losses as a joint step without any update.
il::LossBreakdown joint_eval(const reg::SystemState& state, const data::ParallelBatch& batch, const TrainingConfig& cfg);

/// Trains the new encoder (batch source side) against the frozen decoder of
/// the target side; l_zx is reported in the l_xy slot. `d` is telemetry
/// against the target language's encoder when it exists.
il::LossBreakdown add_language_train_step(reg::SystemState& state, const data::ParallelBatch& batch,
                                          const TrainingConfig& cfg, AdamState& adam, std::mt19937_64* rng = nullptr);

il::LossBreakdown add_language_eval(const reg::SystemState& state, const data::ParallelBatch& batch,
                                    const TrainingConfig& cfg);

/// Sum of the weighted task losses; the distance term is excluded so that
/// runs with different distance kinds stay comparable.
double task_loss(const il::LossBreakdown& b);

/// Metrics CSV with header `step,l_xx,l_yy,l_xy,l_yx,d,total,dev_loss`.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path& path);

  static std::string header();
  static std::string format_row(std::int64_t step, const il::LossBreakdown* b, std::optional<double> dev_loss);

  void append(std::int64_t step, const il::LossBreakdown* b, std::optional<double> dev_loss);
  void flush();
  const std::vector<std::string>& rows() const { return rows_; }

 private:
  std::optional<std::ofstream> out_;
  std::vector<std::string> rows_;
};

struct StepRecord {
  std::int64_t step = 0;
  il::LossBreakdown losses;
};

struct EvalRecord {
  std::int64_t step = 0;
  double dev_loss = 0.0;
};

struct TrainResult {
  reg::SystemState best;
  std::vector<StepRecord> history;
  std::vector<EvalRecord> evals;
  std::int64_t best_step = 0;
  double best_dev_loss = 0.0;
  bool early_stopped = false;
};

using StepFn = std::function<il::LossBreakdown(const data::ParallelBatch&)>;
using DevFn = std::function<double()>;

/// Evaluates at step 0 and every `eval_interval` steps; stops once
/// `patience` consecutive evaluations improve the best dev loss by no more
/// than `min_improvement`, or at `max_steps`. `best` holds a deep copy of
/// the state at the best evaluation.
TrainResult train_loop(reg::SystemState& state, data::BatchStream& stream, const DevFn& dev_loss, const StepFn& step,
                       const TrainingConfig& cfg, MetricsLog* log = nullptr);

/// Mean task loss over `batches` using `eval`.
double mean_dev_loss(const std::vector<data::ParallelBatch>& batches,
                     const std::function<il::LossBreakdown(const data::ParallelBatch&)>& eval);

/// Deep copy: no tensor of the result shares storage with `state`.
reg::SystemState clone_state(const reg::SystemState& state);

}  // namespace imt::train
