#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ae/dataset.hpp"
#include "ae/pipeline.hpp"

namespace ae {

// Raised when optimization itself fails (e.g. a non-finite loss); distinct
// from input errors so the CLI can report it as a verification failure.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// Adaptive-moment optimizer with decoupled weight decay. Moments live here,
// keyed by position in the parameter list, so construction order must stay
// stable across steps (it is: the list comes from a ModuleGraph).
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, double lr, double weight_decay);

  // Applies one update from the gradients currently stored on the params.
  void step();

  int64_t steps_taken() const { return t_; }

  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  int64_t epochs = 5;
  int64_t batch_size = 8;
  uint64_t seed = 0;
  double val_fraction = 0.2;
};

struct EpochMetrics {
  int64_t epoch = 0;
  double train_loss = 0, train_accuracy = 0;
  double val_loss = 0, val_accuracy = 0;
};

struct TrainResult {
  double initial_val_loss = 0;  // before any update, for the ln(9) check
  double initial_val_accuracy = 0;
  std::vector<EpochMetrics> epochs;
  double final_val_accuracy = 0;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::array<std::array<int64_t, kNumClasses>, kNumClasses> confusion{};  // [truth][pred]
};

// Deterministic 80/20-style split: indices shuffled by the config seed, the
// tail becoming validation. Exposed for tests.
void split_corpus(size_t count, double val_fraction, uint64_t seed,
                  std::vector<size_t>& train_idx, std::vector<size_t>& val_idx);

EvalResult evaluate_classifier(BamClassifier& clf, const std::vector<LabeledPatch>& corpus,
                               const std::vector<size_t>& idx, int64_t batch_size);

// Full loop: split, per-epoch shuffle, cross-entropy + AdamW, metrics per
// epoch. Aborts with TrainingError naming the step when loss goes
// non-finite. on_epoch fires after each epoch with fresh metrics (may be
// null).
TrainResult train_classifier(BamClassifier& clf, const std::vector<LabeledPatch>& corpus,
                             const TrainConfig& cfg,
                             const std::function<void(const EpochMetrics&)>& on_epoch = nullptr);

}  // namespace ae
