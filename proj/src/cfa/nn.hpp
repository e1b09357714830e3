#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfa/rng.hpp"

namespace cfa::nn {

// Shape-annotated real array with an optional gradient of the same shape.
// Row-major. 2-D tensors are indexed [row, col].
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;
  std::vector<double> g;  // allocated iff rg
  bool rg = false;

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int rows() const { return shape.at(0); }
  int cols() const { return shape.at(1); }
  double item() const;

  void ensure_grad();
  void zero_grad();
  bool all_finite() const;
};

using TensorRef = std::shared_ptr<Tensor>;

TensorRef make_tensor(std::vector<int> shape);
TensorRef make_tensor(std::vector<int> shape, std::vector<double> values);
TensorRef make_param(std::vector<int> shape);  // rg = true

int64_t shape_numel(const std::vector<int>& shape);

enum class ConvPad {
  same,    // centered, zero-padded; kernel_size must be odd
  causal,  // left-padded; position t sees inputs t-ks+1..t
};

// Records backward closures for eagerly computed ops. One tape per
// forward pass; clear() between passes. Construct with grads disabled for
// inference-only forwards.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

  bool grad_enabled() const { return grad_; }
  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

  TensorRef constant(std::vector<int> shape, std::vector<double> values);

  // y = x W + b, applied to each row of x. x [R,d_in], W [d_in,d_out],
  // b [d_out] or null.
  TensorRef linear(const TensorRef& x, const TensorRef& w, const TensorRef& b);

  // Length-preserving convolution over the time axis. x [T,c_in],
  // w [ks,c_in,c_out], b [c_out] or null.
  TensorRef conv1d(const TensorRef& x, const TensorRef& w, const TensorRef& b,
                   ConvPad pad = ConvPad::same);

  TensorRef add(const TensorRef& a, const TensorRef& b);
  TensorRef sub(const TensorRef& a, const TensorRef& b);
  TensorRef mul(const TensorRef& a, const TensorRef& b);
  TensorRef scale(const TensorRef& x, double c);

  TensorRef relu(const TensorRef& x);
  TensorRef sigmoid(const TensorRef& x);
  TensorRef tanh_(const TensorRef& x);

  TensorRef slice_rows(const TensorRef& x, int r0, int r1);
  TensorRef slice_cols(const TensorRef& x, int c0, int c1);
  TensorRef concat_rows(std::span<const TensorRef> parts);
  TensorRef concat_cols(const TensorRef& a, const TensorRef& b);
  TensorRef mean_rows(const TensorRef& x);  // [T,d] -> [1,d]

  TensorRef mse(const TensorRef& pred, const TensorRef& target);
  TensorRef mae_sum(const TensorRef& pred, const TensorRef& target);

  // Seeds d(loss)/d(loss) = seed and runs recorded steps in reverse.
  void backward(const TensorRef& loss, double seed = 1.0);
  void clear() { steps_.clear(); }
  size_t num_steps() const { return steps_.size(); }

 private:
  bool grad_;
  std::vector<std::function<void()>> steps_;

  TensorRef fresh(std::vector<int> shape, bool needs_grad);
};

// ---------------------------------------------------------------------------
// Layers

struct LstmParams {
  TensorRef wx;  // [d_in, 4H], gate order i,f,g,o
  TensorRef wh;  // [H, 4H]
  TensorRef b;   // [4H]
  int hidden() const { return wh->shape.at(0); }
};

struct LstmState {
  TensorRef h;  // [1,H]
  TensorRef c;  // [1,H]
};

struct LstmOut {
  TensorRef hidden_seq;  // [T,H]
  LstmState state;
};

// Standard LSTM recurrence over x [T,d_in]; zero initial state if none given.
LstmOut lstm_layer(Tape& tape, const TensorRef& x, const LstmParams& p,
                   std::optional<LstmState> init = std::nullopt);

// Scaled-dot-product attention with n_heads heads, concatenated and
// projected by out_w/out_b. Q [Tq,d], K/V [Tk,d], d divisible by n_heads.
// With causal=true, query row i attends keys j <= i + (Tk - Tq) (sequences
// aligned at their ends). weights_out, if given, receives the softmax
// weights as n_heads blocks of Tq*Tk row-major values.
TensorRef multi_head_attention(Tape& tape, const TensorRef& q,
                               const TensorRef& k, const TensorRef& v,
                               int n_heads, const TensorRef& out_w,
                               const TensorRef& out_b, bool causal = false,
                               std::vector<double>* weights_out = nullptr);

// ---------------------------------------------------------------------------
// Parameters and optimizer

enum class ParamGroup { generative, discriminative };

const char* to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& s);

// Named parameter collection partitioned into generative/discriminative
// groups. Group membership is fixed when a parameter is added.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    TensorRef tensor;
  };

  TensorRef add(const std::string& name, ParamGroup group, TensorRef t);
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<TensorRef> group(ParamGroup g) const;
  TensorRef find(const std::string& name) const;  // null if absent
  void zero_grad();
  int64_t numel() const;

 private:
  std::vector<Entry> entries_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-group optimizer state; slots align with the param vector the state
// was first used with.
struct AdamState {
  int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// One Adam update from the parameters' accumulated gradients. Touches only
// the given parameters.
void adam_step(std::span<const TensorRef> params, AdamState& state,
               const AdamConfig& cfg);

// ---------------------------------------------------------------------------
// Initialization

void init_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng);

}  // namespace cfa::nn
