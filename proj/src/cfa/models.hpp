#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfa/nn.hpp"

namespace cfa {

// Common surface for the forecasting models. Contexts and forecasts are in
// the per-window scaled space; callers unscale for reporting.
class Forecaster {
 public:
  virtual ~Forecaster() = default;

  virtual const std::string& name() const = 0;
  virtual nn::ParameterSet& params() = 0;
  const nn::ParameterSet& params() const {
    return const_cast<Forecaster*>(this)->params();
  }
  virtual nlohmann::json hyper() const = 0;

  // Autoregressive rollout from a scaled context.
  virtual std::vector<double> forecast(std::span<const double> context,
                                       int horizon) const = 0;

  // One-step-ahead predictions for every horizon position, with the true
  // target values fed back as inputs. Returns a [horizon,1] node.
  virtual nn::TensorRef teacher_forced(nn::Tape& tape,
                                       std::span<const double> context,
                                       std::span<const double> scaled_target) = 0;

  // Fixed-width summary of a context window, used for key dumps and the
  // representation probe.
  virtual std::vector<double> representation(
      std::span<const double> context) const = 0;
  virtual int representation_dim() const = 0;
};

// ---------------------------------------------------------------------------
// Mean baseline: every horizon step repeats the context mean.

class MeanForecaster : public Forecaster {
 public:
  const std::string& name() const override;
  nn::ParameterSet& params() override { return params_; }
  nlohmann::json hyper() const override;
  std::vector<double> forecast(std::span<const double> context,
                               int horizon) const override;
  nn::TensorRef teacher_forced(nn::Tape& tape, std::span<const double> context,
                               std::span<const double> scaled_target) override;
  std::vector<double> representation(
      std::span<const double> context) const override;
  int representation_dim() const override { return 1; }

 private:
  nn::ParameterSet params_;  // empty
};

// ---------------------------------------------------------------------------
// LSTM baseline: single recurrent layer plus a scalar head, trained with
// teacher forcing, rolled out autoregressively.

struct LstmHyper {
  int hidden = 64;

  nlohmann::json to_json() const;
  static LstmHyper from_json(const nlohmann::json& j);
  void validate() const;
};

class LstmForecaster : public Forecaster {
 public:
  LstmForecaster(LstmHyper hyper, uint64_t seed);
  explicit LstmForecaster(LstmHyper hyper);  // zero weights, for loading

  const std::string& name() const override;
  nn::ParameterSet& params() override { return params_; }
  nlohmann::json hyper() const override;
  std::vector<double> forecast(std::span<const double> context,
                               int horizon) const override;
  nn::TensorRef teacher_forced(nn::Tape& tape, std::span<const double> context,
                               std::span<const double> scaled_target) override;
  // Final hidden state after reading the context.
  std::vector<double> representation(
      std::span<const double> context) const override;
  int representation_dim() const override { return hyper_.hidden; }

 private:
  LstmHyper hyper_;
  nn::ParameterSet params_;
  nn::LstmParams lstm_;
  nn::TensorRef head_w_, head_b_;

  nn::LstmState run_context(nn::Tape& tape,
                            std::span<const double> context) const;
};

// ---------------------------------------------------------------------------
// Attention forecaster with an adversarial frequency discriminator.

struct CfaHyper {
  int d_model = 64;
  int n_heads = 4;
  int n_conv_layers = 3;
  int kernel_size = 3;
  int enc_hidden = 64;
  int dec_hidden = 64;
  int disc_hidden = 64;
  int domain_k = 1;  // discriminator output width

  nlohmann::json to_json() const;
  static CfaHyper from_json(const nlohmann::json& j);
  void validate() const;
};

class CfaModel : public Forecaster {
 public:
  CfaModel(CfaHyper hyper, uint64_t seed);
  explicit CfaModel(CfaHyper hyper);  // zero weights, for loading

  const std::string& name() const override;
  nn::ParameterSet& params() override { return params_; }
  nlohmann::json hyper() const override;
  const CfaHyper& cfa_hyper() const { return hyper_; }

  std::vector<double> forecast(std::span<const double> context,
                               int horizon) const override;
  nn::TensorRef teacher_forced(nn::Tape& tape, std::span<const double> context,
                               std::span<const double> scaled_target) override;
  // Mean-pooled keys over the context.
  std::vector<double> representation(
      std::span<const double> context) const override;
  int representation_dim() const override { return hyper_.d_model; }

  // Domain prediction from a context-only encode, [1, domain_k] in (0,1).
  // With detach=true the encoder runs without gradients and only the
  // discriminator MLP is differentiated.
  nn::TensorRef discriminate(nn::Tape& tape, std::span<const double> context,
                             bool detach);

  struct Encoded {
    nn::TensorRef k, q, v;
  };
  // Position-wise MLP, causal conv stack, then K/Q/V projections. The
  // convolutions are causal so position t never reads later inputs;
  // teacher forcing would otherwise leak targets into the queries.
  Encoded encode_project(nn::Tape& tape, std::span<const double> seq) const;

  // Softmax weights from the most recent teacher_forced call, n_heads
  // blocks of [horizon x seq_len], for inspection.
  const std::vector<double>& last_attention_weights() const {
    return last_attn_;
  }

 private:
  CfaHyper hyper_;
  nn::ParameterSet params_;
  nn::TensorRef enc1_w_, enc1_b_, enc2_w_, enc2_b_;
  std::vector<nn::TensorRef> conv_w_, conv_b_;
  nn::TensorRef k_w_, q_w_, v_w_, attn_out_w_, attn_out_b_;
  nn::TensorRef dec1_w_, dec1_b_, dec2_w_, dec2_b_;
  nn::TensorRef disc1_w_, disc1_b_, disc2_w_, disc2_b_;
  std::vector<double> last_attn_;

  void build_params();
  nn::TensorRef decode(nn::Tape& tape, const nn::TensorRef& rows) const;
};

// ---------------------------------------------------------------------------
// Construction and persistence

// hyper may be empty to take the model's defaults.
std::unique_ptr<Forecaster> make_forecaster(const std::string& model,
                                            const nlohmann::json& hyper,
                                            uint64_t seed);

void save_forecaster(const std::string& path, const Forecaster& model);
std::unique_ptr<Forecaster> load_forecaster(const std::string& path);

}  // namespace cfa
