#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "tbc/loss.hpp"
#include "tbc/scm.hpp"
#include "tbc/synth.hpp"
#include "tbc/tem.hpp"

namespace tbc {

enum class OptimizerKind { adam, sgd };
enum class LossMode { tbc, target_only };

struct TrainConfig {
  int batch_size = 16;
  int epochs = 60;
  double lr = 0.005;
  std::vector<int> decay_epochs;  ///< empty: 70% and 90% of the run
  double decay_factor = 0.1;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int workers = 1;
  int patience = 10;  ///< epochs without improvement before a log warning

  void validate() const;
  std::vector<int> resolved_decay() const;
  /// Learning rate used during `epoch` (0-based).
  double lr_at(int epoch) const;
};

/// Stage-1 defaults: the stage-2 recipe with a smaller step.
TrainConfig scm_defaults();

std::string to_json(const TrainConfig& cfg);
/// Overlays the keys present in `json` onto `base`. Unknown keys are rejected.
TrainConfig train_config_from_json(const std::string& json, TrainConfig base = {});

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  LossBreakdown loss;  ///< means over the epoch's samples
  double accuracy = std::numeric_limits<double>::quiet_NaN();  ///< SCM held-out accuracy
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::vector<std::string> warnings;
};

// --- optimizers ---------------------------------------------------------------

/// w <- w - lr * g
void sgd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long step = 0;
};

/// Bias-corrected adaptive-moment update; moments are created on first use.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// --- stage 1 ------------------------------------------------------------------

double scm_accuracy(const ScmNet& net, const Dataset& data, int workers = 1);

struct ScmTraining {
  ScmNet net;
  TrainLog log;
};

/// Trains the classifier on (f_T, y_T). `validation` may be empty.
ScmTraining train_scm(const Dataset& train, const Dataset& validation, const TrainConfig& cfg,
                      int classes = kDefaultScmClasses);

/// A classifier whose weights are fixed for the rest of the run. The hash of
/// the serialized weights is recorded on construction.
class FrozenScm {
public:
  explicit FrozenScm(ScmNet net);

  const ScmNet& net() const { return net_; }
  std::uint64_t hash() const { return hash_; }
  /// Recomputes the hash and compares it with the recorded one.
  bool intact() const;

private:
  ScmNet net_;
  std::uint64_t hash_;
};

// --- stage 2 ------------------------------------------------------------------

struct SampleGrad {
  LossBreakdown loss;
  std::vector<Tensor> grads;  ///< aligned with TemNet::layers()
};

/// Loss and TEM weight gradients for one tuple. `scm` is required for
/// LossMode::tbc and ignored otherwise.
SampleGrad tem_sample_grad(const TemNet& net, const ScmNet* scm, const TrainingTuple& tuple, double lambda,
                           LossMode mode);

struct TemTraining {
  TemNet net;
  TrainLog log;
};

struct CheckpointOptions {
  std::filesystem::path dir;        ///< empty: no checkpoints
  std::filesystem::path dump_dir;   ///< where an offending batch is written on NaN
  bool resume = false;              ///< continue from dir/state.json when present
};

/// Joint training against the frozen classifier.
TemTraining train_tem(const Dataset& data, const FrozenScm& scm, const NetConfig& net_cfg, const TrainConfig& cfg,
                      const CheckpointOptions& ckpt = {});
/// Ablation: target term only (L1 + SSIM), no sparsity or classifier terms.
TemTraining train_tem_target_only(const Dataset& data, const NetConfig& net_cfg, const TrainConfig& cfg,
                                  const CheckpointOptions& ckpt = {});

std::string to_json(const TrainLog& log);

/// Worker count from TBC_WORKERS, else the hardware concurrency.
int default_workers();

}  // namespace tbc
