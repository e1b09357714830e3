#include "cfa/training.hpp"

#include <algorithm>
#include <cmath>

#include "cfa/errors.hpp"
#include "cfa/spectral.hpp"

namespace cfa {

using nn::Tape;
using nn::TensorRef;

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (n_batches_per_epoch < 0)
    throw ConfigError("train.n_batches_per_epoch must be >= 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw ConfigError("train.lambda must be finite and >= 0");
  if (!(gen_opt.lr > 0.0) || !(disc_opt.lr > 0.0))
    throw ConfigError("train learning rates must be > 0");
}

nlohmann::json TrainHistory::to_json() const {
  nlohmann::json j;
  j["source_tags"] = source_tags;
  auto& eps = j["epochs"] = nlohmann::json::array();
  for (const auto& epoch : epochs) {
    nlohmann::json row = nlohmann::json::array();
    for (const auto& s : epoch) {
      row.push_back({{"generative_loss", s.generative_loss},
                     {"forecast_loss", s.forecast_loss},
                     {"discriminator_loss", s.discriminator_loss}});
    }
    eps.push_back(std::move(row));
  }
  return j;
}

double teacher_forced_loss(Forecaster& model,
                           std::span<const WindowSample> batch) {
  require(!batch.empty(), "teacher_forced_loss needs a non-empty batch");
  double acc = 0.0;
  for (const auto& w : batch) {
    Tape tape(false);
    const auto target = w.scaled_target();
    auto pred = model.teacher_forced(tape, w.context, target);
    acc += tape
               .mse(pred, tape.constant({static_cast<int>(target.size()), 1},
                                        target))
               ->v[0];
  }
  return acc / static_cast<double>(batch.size());
}

namespace {

void check_loss(double value, const char* which, int epoch, int iter,
                const std::string& tag) {
  if (std::isfinite(value)) return;
  throw TrainingFault(std::string(which) + " is not finite at epoch " +
                      std::to_string(epoch) + ", iteration " +
                      std::to_string(iter) + ", source " + tag);
}

TensorRef domain_label(Tape& tape, std::span<const double> context, int k) {
  auto idx = spectral::domain_index(context, k);
  return tape.constant({1, k}, std::move(idx.periods_normalized));
}

}  // namespace

Trainer::Trainer(Forecaster& model, CfaModel* adversarial,
                 std::span<const DatasetSplit> sources, const TrainConfig& cfg)
    : model_(model),
      adversarial_(adversarial),
      sources_(sources),
      cfg_(cfg),
      rng_(cfg.seed) {
  cfg_.validate();
  require(!sources_.empty(), "training needs at least one source");
  for (const auto& s : sources_)
    require(s.total_valid_starts() > 0,
            "training source has no usable windows: " + s.freq_tag);
  gen_params_ = model_.params().group(nn::ParamGroup::generative);
  disc_params_ = model_.params().group(nn::ParamGroup::discriminative);
  if (cfg_.n_batches_per_epoch > 0) {
    iters_per_epoch_ = cfg_.n_batches_per_epoch;
  } else {
    for (const auto& s : sources_)
      iters_per_epoch_ = std::max(
          iters_per_epoch_,
          static_cast<int>(batches_per_epoch(s, cfg_.batch_size)));
  }
}

Trainer::Batches Trainer::sample_batches() {
  Batches batches(sources_.size());
  for (size_t j = 0; j < sources_.size(); ++j)
    batches[j] = sample_training_batch(sources_[j], cfg_.batch_size, rng_);
  return batches;
}

std::vector<EpochSourceStats> Trainer::generative_step(const Batches& batches) {
  require(batches.size() == sources_.size(),
          "batch list does not match the source list");
  const double inv_batch = 1.0 / cfg_.batch_size;
  const bool use_adversary = adversarial_ != nullptr && cfg_.lambda != 0.0;
  std::vector<EpochSourceStats> stats(sources_.size());

  model_.params().zero_grad();
  for (size_t j = 0; j < sources_.size(); ++j) {
    double lf_sum = 0.0, obj_sum = 0.0;
    for (const auto& w : batches[j]) {
      Tape tape;
      const auto target = w.scaled_target();
      auto pred = model_.teacher_forced(tape, w.context, target);
      auto lf = tape.mse(
          pred, tape.constant({static_cast<int>(target.size()), 1}, target));
      TensorRef obj = lf;
      if (use_adversary) {
        auto label = domain_label(tape, w.context,
                                  adversarial_->cfa_hyper().domain_k);
        auto dhat =
            adversarial_->discriminate(tape, w.context, /*detach=*/false);
        obj = tape.sub(lf, tape.scale(tape.mse(dhat, label), cfg_.lambda));
      }
      check_loss(lf->v[0], "forecast loss", epoch_, iter_,
                 sources_[j].freq_tag);
      check_loss(obj->v[0], "generative loss", epoch_, iter_,
                 sources_[j].freq_tag);
      if (obj->rg) tape.backward(obj, inv_batch);
      lf_sum += lf->v[0];
      obj_sum += obj->v[0];
    }
    stats[j].forecast_loss = lf_sum * inv_batch;
    stats[j].generative_loss = obj_sum * inv_batch;
  }
  if (!gen_params_.empty())
    nn::adam_step(gen_params_, gen_state_, cfg_.gen_opt);
  return stats;
}

std::vector<EpochSourceStats> Trainer::discriminative_step(
    const Batches& batches) {
  require(adversarial_ != nullptr,
          "the discriminative step needs an adversarial model");
  require(batches.size() == sources_.size(),
          "batch list does not match the source list");
  const double inv_batch = 1.0 / cfg_.batch_size;
  std::vector<EpochSourceStats> stats(sources_.size());

  model_.params().zero_grad();
  for (size_t j = 0; j < sources_.size(); ++j) {
    double ld_sum = 0.0;
    for (const auto& w : batches[j]) {
      Tape tape;
      auto label =
          domain_label(tape, w.context, adversarial_->cfa_hyper().domain_k);
      auto dhat = adversarial_->discriminate(tape, w.context, /*detach=*/true);
      auto ld = tape.mse(dhat, label);
      check_loss(ld->v[0], "discriminator loss", epoch_, iter_,
                 sources_[j].freq_tag);
      tape.backward(ld, inv_batch);
      ld_sum += ld->v[0];
    }
    stats[j].discriminator_loss = ld_sum * inv_batch;
  }
  nn::adam_step(disc_params_, disc_state_, cfg_.disc_opt);
  return stats;
}

std::vector<EpochSourceStats> Trainer::run_iteration() {
  const Batches batches = sample_batches();
  auto stats = generative_step(batches);
  if (adversarial_ != nullptr) {
    auto disc = discriminative_step(batches);
    for (size_t j = 0; j < stats.size(); ++j)
      stats[j].discriminator_loss = disc[j].discriminator_loss;
  }
  return stats;
}

TrainHistory Trainer::run() {
  TrainHistory hist;
  for (const auto& s : sources_) hist.source_tags.push_back(s.freq_tag);
  for (epoch_ = 0; epoch_ < cfg_.epochs; ++epoch_) {
    std::vector<EpochSourceStats> acc(sources_.size());
    for (iter_ = 0; iter_ < iters_per_epoch_; ++iter_) {
      auto stats = run_iteration();
      for (size_t j = 0; j < acc.size(); ++j) {
        acc[j].generative_loss += stats[j].generative_loss;
        acc[j].forecast_loss += stats[j].forecast_loss;
        acc[j].discriminator_loss += stats[j].discriminator_loss;
      }
    }
    for (auto& s : acc) {
      s.generative_loss /= iters_per_epoch_;
      s.forecast_loss /= iters_per_epoch_;
      s.discriminator_loss /= iters_per_epoch_;
    }
    hist.epochs.push_back(std::move(acc));
  }
  return hist;
}

TrainHistory train_cfa(CfaModel& model, std::span<const DatasetSplit> sources,
                       const TrainConfig& cfg) {
  Trainer t(model, &model, sources, cfg);
  return t.run();
}

TrainHistory train_baseline(Forecaster& model,
                            std::span<const DatasetSplit> sources,
                            const TrainConfig& cfg) {
  Trainer t(model, nullptr, sources, cfg);
  return t.run();
}

}  // namespace cfa
