#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pdcycon/checkpoint.hpp"
#include "pdcycon/metrics.hpp"
#include "pdcycon/model.hpp"
#include "pdcycon/optim.hpp"
#include "pdcycon/signal_io.hpp"

namespace pdcycon::training {

enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  std::size_t folds = 5;
  double lambda = 1.0;
  std::uint64_t seed = 42;
  double threshold = 0.5;
  LrSchedule lr_schedule = LrSchedule::Constant;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;

  void validate() const;
  /// Learning rate used during `epoch` (0-based).
  double lr_at(std::size_t epoch) const;
};

/// Splits indices into k folds that keep the class ratio. Each class is
/// shuffled with `seed` and dealt round-robin; the negatives continue where
/// the positives stopped so fold sizes differ by at most one.
std::vector<std::vector<std::size_t>> stratified_kfold(std::span<const int> labels, std::size_t k, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double l_cls = 0.0;
  double l_ct = 0.0;
  double l_cf = 0.0;
  double l_total = 0.0;
  double val_mcc = 0.0;
};

struct FoldResult {
  std::uint32_t fold = 0;
  std::filesystem::path best_checkpoint;
  std::filesystem::path history_csv;
  std::vector<EpochRecord> history;
  double best_val_mcc = 0.0;
  std::size_t best_epoch = 0;
};

/// Owns one model and its optimizer state.
class Trainer {
 public:
  Trainer(const model::ModelConfig& mc, const TrainConfig& tc, std::uint64_t init_seed);

  /// Forward, backward and one Adam update on a batch. Throws NumericFailure
  /// if the loss is not finite.
  model::LossBreakdown step(std::span<const MeasurementFeatures* const> batch, double lr);

  model::DualCyconNet& net() { return net_; }

 private:
  model::DualCyconNet net_;
  TrainConfig tc_;
};

struct FoldSetup {
  std::uint32_t fold = 0;
  std::filesystem::path out_dir;  // receives fold_<k>.pdck and history_fold_<k>.csv
  std::string config_text;        // stored in the checkpoint
  std::function<void(const FoldResult&, const EpochRecord&)> on_epoch;
  // Checked after each epoch; returning true ends the fold early.
  std::function<bool(const EpochRecord&)> should_stop;
  // When set, the weights after the last epoch are also written here.
  std::filesystem::path final_checkpoint;
};

/// Trains one fold. Mini-batches are reshuffled every epoch from a seed
/// derived from (seed, fold). After each epoch the validation MCC is computed
/// at the configured threshold, and the checkpoint is rewritten whenever it
/// improves on the best so far (the first epoch always writes one). With an
/// empty validation set the training set is scored instead. Train and
/// validation indices must be disjoint.
FoldResult train_fold(std::span<const MeasurementFeatures> data, std::span<const std::size_t> train_idx,
                      std::span<const std::size_t> val_idx, const model::ModelConfig& mc, const TrainConfig& tc,
                      const FoldSetup& setup);

/// Runs every fold of a stratified split, up to `jobs` folds at a time.
std::vector<FoldResult> train_cross_validation(std::span<const MeasurementFeatures> data,
                                               const model::ModelConfig& mc, const TrainConfig& tc,
                                               const std::filesystem::path& out_dir, const std::string& config_text,
                                               std::size_t jobs = 1,
                                               std::function<void(const FoldResult&, const EpochRecord&)> on_epoch = {});

void write_history_csv(const std::filesystem::path& path, std::span<const EpochRecord> history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

nn::Checkpoint make_checkpoint(const model::DualCyconNet& net, std::uint32_t fold, std::uint64_t seed,
                               std::uint32_t epoch, double metric, const std::string& config_text);
/// Copies parameters, optimizer state and running statistics into `net`.
void restore(model::DualCyconNet& net, const nn::Checkpoint& ckpt);
/// Rebuilds the model described by the checkpoint's configuration.
model::DualCyconNet load_model(const std::filesystem::path& path, nn::Checkpoint* meta = nullptr);

/// Eval-mode head probabilities for every measurement.
std::vector<model::HeadProbabilities> predict_heads(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                                                    std::size_t batch_size = 32);
std::vector<double> predict_probabilities(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                                          std::size_t batch_size = 32);

struct EvalReport {
  double threshold = 0.5;
  std::vector<std::string> checkpoints;
  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> probabilities;  // mean over checkpoints
  metrics::ClassificationReport ensemble;
  std::vector<metrics::ClassificationReport> per_checkpoint;
};

/// Averages p_final over the checkpoints and scores the result.
EvalReport evaluate(std::span<const std::filesystem::path> checkpoints, std::span<const MeasurementFeatures> data,
                    double threshold = 0.5);

std::string report_json(const EvalReport& report);

/// One row per measurement and pooled vector (d_tp, d_tn, d_fp, d_fn, d_jp,
/// d_jn): id,label,vector,v0,v1,...
void export_embeddings(model::DualCyconNet& net, std::span<const MeasurementFeatures> data,
                       const std::filesystem::path& path);

std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(std::string_view s);

}  // namespace pdcycon::training
