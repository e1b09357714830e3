#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa/models.hpp"
#include "cfa/nn.hpp"
#include "cfa/timeseries.hpp"

namespace cfa {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  int n_batches_per_epoch = 0;  // 0 = derive from the largest source
  double lambda = 1.0;
  nn::AdamConfig gen_opt;
  nn::AdamConfig disc_opt;
  uint64_t seed = 0;  // batch scheduler stream

  void validate() const;
};

// Per-source loss averages. generative_loss is the objective the generative
// step minimized (forecast_loss - lambda * discriminator_loss when the
// adversary is active, plain forecast_loss otherwise).
struct EpochSourceStats {
  double generative_loss = 0.0;
  double forecast_loss = 0.0;
  double discriminator_loss = 0.0;
};

struct TrainHistory {
  std::vector<std::string> source_tags;
  std::vector<std::vector<EpochSourceStats>> epochs;  // [epoch][source]

  nlohmann::json to_json() const;
};

// Mean teacher-forced MSE over a batch, in scaled space. No gradients.
double teacher_forced_loss(Forecaster& model,
                           std::span<const WindowSample> batch);

// One alternating-update training loop with the two half-steps exposed.
// Each iteration draws one batch per source, takes a generative Adam step
// on sum_j (L_f - lambda * L_d), then a discriminative Adam step on
// sum_j L_d with the encoder detached. Only the stepped group's parameters
// change in each half-step. Without an adversarial model the loop is plain
// teacher-forced training.
class Trainer {
 public:
  using Batches = std::vector<std::vector<WindowSample>>;  // [source][window]

  Trainer(Forecaster& model, CfaModel* adversarial,
          std::span<const DatasetSplit> sources, const TrainConfig& cfg);

  Batches sample_batches();

  // Updates the generative group; returns per-source stats for this step.
  std::vector<EpochSourceStats> generative_step(const Batches& batches);
  // Updates the discriminative group; fills discriminator_loss per source.
  std::vector<EpochSourceStats> discriminative_step(const Batches& batches);

  // sample + generative (+ discriminative when adversarial), merged stats.
  std::vector<EpochSourceStats> run_iteration();

  TrainHistory run();

  int iterations_per_epoch() const { return iters_per_epoch_; }
  bool adversarial() const { return adversarial_ != nullptr; }

 private:
  Forecaster& model_;
  CfaModel* adversarial_;
  std::span<const DatasetSplit> sources_;
  TrainConfig cfg_;
  Rng rng_;
  std::vector<nn::TensorRef> gen_params_, disc_params_;
  nn::AdamState gen_state_, disc_state_;
  int iters_per_epoch_ = 0;
  int epoch_ = 0, iter_ = 0;  // positions for fault diagnostics
};

// Algorithm drivers. train_cfa runs the adversarial alternation; with
// lambda == 0 the generative half drops the adversary term entirely, so its
// forecast-loss stream matches train_baseline bit for bit while the
// discriminator still trains on the side.
TrainHistory train_cfa(CfaModel& model, std::span<const DatasetSplit> sources,
                       const TrainConfig& cfg);

TrainHistory train_baseline(Forecaster& model,
                            std::span<const DatasetSplit> sources,
                            const TrainConfig& cfg);

}  // namespace cfa
