#include "cfa/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cfa/checkpoint.hpp"
#include "cfa/errors.hpp"

namespace cfa {

using nn::ParamGroup;
using nn::Tape;
using nn::TensorRef;

namespace {

void check_known_keys(const nlohmann::json& j,
                      std::initializer_list<const char*> allowed,
                      const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (item.key() == a) ok = true;
    if (!ok) throw ConfigError("unknown field " + where + "." + item.key());
  }
}

TensorRef make_input_column(std::span<const double> values) {
  return nn::make_tensor({static_cast<int>(values.size()), 1},
                         std::vector<double>(values.begin(), values.end()));
}

std::vector<double> teacher_input(std::span<const double> context,
                                  std::span<const double> scaled_target) {
  require(!context.empty() && !scaled_target.empty(),
          "teacher forcing needs a context and a target");
  std::vector<double> seq(context.begin(), context.end());
  seq.insert(seq.end(), scaled_target.begin(), scaled_target.end() - 1);
  return seq;
}

}  // namespace

// ---------------------------------------------------------------------------
// Mean

const std::string& MeanForecaster::name() const {
  static const std::string n = "mean";
  return n;
}

nlohmann::json MeanForecaster::hyper() const {
  return nlohmann::json::object();
}

std::vector<double> MeanForecaster::forecast(std::span<const double> context,
                                             int horizon) const {
  require(!context.empty() && horizon >= 1, "forecast needs data");
  const double mean =
      std::accumulate(context.begin(), context.end(), 0.0) /
      static_cast<double>(context.size());
  return std::vector<double>(static_cast<size_t>(horizon), mean);
}

TensorRef MeanForecaster::teacher_forced(Tape& tape,
                                         std::span<const double> context,
                                         std::span<const double> scaled_target) {
  // No parameters: the prediction for every step is the running mean of
  // everything seen so far, matching the autoregressive rollout.
  const int h = static_cast<int>(scaled_target.size());
  std::vector<double> preds(static_cast<size_t>(h));
  double sum = std::accumulate(context.begin(), context.end(), 0.0);
  double count = static_cast<double>(context.size());
  for (int s = 0; s < h; ++s) {
    preds[s] = sum / count;
    if (s + 1 < h) {
      sum += scaled_target[s];
      count += 1.0;
    }
  }
  return tape.constant({h, 1}, std::move(preds));
}

std::vector<double> MeanForecaster::representation(
    std::span<const double> context) const {
  const double mean =
      std::accumulate(context.begin(), context.end(), 0.0) /
      static_cast<double>(context.size());
  return {mean};
}

// ---------------------------------------------------------------------------
// LSTM

nlohmann::json LstmHyper::to_json() const { return {{"hidden", hidden}}; }

LstmHyper LstmHyper::from_json(const nlohmann::json& j) {
  check_known_keys(j, {"hidden"}, "hyper");
  LstmHyper h;
  h.hidden = j.value("hidden", h.hidden);
  h.validate();
  return h;
}

void LstmHyper::validate() const {
  if (hidden < 1) throw ConfigError("hyper.hidden must be >= 1");
}

LstmForecaster::LstmForecaster(LstmHyper hyper) : hyper_(hyper) {
  hyper_.validate();
  const int h = hyper_.hidden;
  lstm_.wx = params_.add("lstm.wx", ParamGroup::generative,
                         nn::make_param({1, 4 * h}));
  lstm_.wh = params_.add("lstm.wh", ParamGroup::generative,
                         nn::make_param({h, 4 * h}));
  lstm_.b =
      params_.add("lstm.b", ParamGroup::generative, nn::make_param({4 * h}));
  head_w_ =
      params_.add("head.w", ParamGroup::generative, nn::make_param({h, 1}));
  head_b_ = params_.add("head.b", ParamGroup::generative, nn::make_param({1}));
}

LstmForecaster::LstmForecaster(LstmHyper hyper, uint64_t seed)
    : LstmForecaster(hyper) {
  Rng rng(seed);
  const int h = hyper_.hidden;
  nn::init_glorot(*lstm_.wx, 1, 4 * h, rng);
  nn::init_glorot(*lstm_.wh, h, 4 * h, rng);
  nn::init_glorot(*head_w_, h, 1, rng);
  // Forget gate starts open so early gradients reach across the window.
  for (int i = h; i < 2 * h; ++i) lstm_.b->v[i] = 1.0;
}

const std::string& LstmForecaster::name() const {
  static const std::string n = "lstm";
  return n;
}

nlohmann::json LstmForecaster::hyper() const { return hyper_.to_json(); }

nn::LstmState LstmForecaster::run_context(Tape& tape,
                                          std::span<const double> context) const {
  auto x = make_input_column(context);
  return nn::lstm_layer(tape, x, lstm_).state;
}

std::vector<double> LstmForecaster::forecast(std::span<const double> context,
                                             int horizon) const {
  require(!context.empty() && horizon >= 1, "forecast needs data");
  Tape tape(false);
  nn::LstmState st = run_context(tape, context);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(horizon));
  while (true) {
    auto pred = tape.linear(st.h, head_w_, head_b_);
    out.push_back(pred->v[0]);
    if (static_cast<int>(out.size()) == horizon) break;
    auto x = nn::make_tensor({1, 1}, {out.back()});
    st = nn::lstm_layer(tape, x, lstm_, st).state;
  }
  return out;
}

TensorRef LstmForecaster::teacher_forced(Tape& tape,
                                         std::span<const double> context,
                                         std::span<const double> scaled_target) {
  const auto seq = teacher_input(context, scaled_target);
  const int len = static_cast<int>(seq.size());
  const int h = static_cast<int>(scaled_target.size());
  auto x = make_input_column(seq);
  auto hidden = nn::lstm_layer(tape, x, lstm_).hidden_seq;
  auto rows = tape.slice_rows(hidden, len - h, len);
  return tape.linear(rows, head_w_, head_b_);
}

std::vector<double> LstmForecaster::representation(
    std::span<const double> context) const {
  Tape tape(false);
  nn::LstmState st = run_context(tape, context);
  return st.h->v;
}

// ---------------------------------------------------------------------------
// CFA

nlohmann::json CfaHyper::to_json() const {
  return {{"d_model", d_model},         {"n_heads", n_heads},
          {"n_conv_layers", n_conv_layers}, {"kernel_size", kernel_size},
          {"enc_hidden", enc_hidden},   {"dec_hidden", dec_hidden},
          {"disc_hidden", disc_hidden}, {"domain_k", domain_k}};
}

CfaHyper CfaHyper::from_json(const nlohmann::json& j) {
  check_known_keys(j,
                   {"d_model", "n_heads", "n_conv_layers", "kernel_size",
                    "enc_hidden", "dec_hidden", "disc_hidden", "domain_k"},
                   "hyper");
  CfaHyper h;
  h.d_model = j.value("d_model", h.d_model);
  h.n_heads = j.value("n_heads", h.n_heads);
  h.n_conv_layers = j.value("n_conv_layers", h.n_conv_layers);
  h.kernel_size = j.value("kernel_size", h.kernel_size);
  h.enc_hidden = j.value("enc_hidden", h.enc_hidden);
  h.dec_hidden = j.value("dec_hidden", h.dec_hidden);
  h.disc_hidden = j.value("disc_hidden", h.disc_hidden);
  h.domain_k = j.value("domain_k", h.domain_k);
  h.validate();
  return h;
}

void CfaHyper::validate() const {
  if (d_model < 1) throw ConfigError("hyper.d_model must be >= 1");
  if (n_heads < 1) throw ConfigError("hyper.n_heads must be >= 1");
  if (d_model % n_heads != 0)
    throw ConfigError("hyper.d_model must be divisible by hyper.n_heads");
  if (n_conv_layers < 0) throw ConfigError("hyper.n_conv_layers must be >= 0");
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("hyper.kernel_size must be odd and >= 1");
  if (enc_hidden < 1) throw ConfigError("hyper.enc_hidden must be >= 1");
  if (dec_hidden < 1) throw ConfigError("hyper.dec_hidden must be >= 1");
  if (disc_hidden < 1) throw ConfigError("hyper.disc_hidden must be >= 1");
  if (domain_k < 1) throw ConfigError("hyper.domain_k must be >= 1");
}

CfaModel::CfaModel(CfaHyper hyper) : hyper_(hyper) {
  hyper_.validate();
  build_params();
}

CfaModel::CfaModel(CfaHyper hyper, uint64_t seed) : CfaModel(hyper) {
  Rng rng(seed);
  const int d = hyper_.d_model, ks = hyper_.kernel_size;
  nn::init_glorot(*enc1_w_, 1, hyper_.enc_hidden, rng);
  nn::init_glorot(*enc2_w_, hyper_.enc_hidden, d, rng);
  for (auto& w : conv_w_) nn::init_glorot(*w, d * ks, d * ks, rng);
  nn::init_glorot(*k_w_, d, d, rng);
  nn::init_glorot(*q_w_, d, d, rng);
  nn::init_glorot(*v_w_, d, d, rng);
  nn::init_glorot(*attn_out_w_, d, d, rng);
  nn::init_glorot(*dec1_w_, d, hyper_.dec_hidden, rng);
  nn::init_glorot(*dec2_w_, hyper_.dec_hidden, 1, rng);
  nn::init_glorot(*disc1_w_, 2 * d, hyper_.disc_hidden, rng);
  nn::init_glorot(*disc2_w_, hyper_.disc_hidden, hyper_.domain_k, rng);
}

void CfaModel::build_params() {
  const int d = hyper_.d_model;
  auto gen = [&](const std::string& name, std::vector<int> shape) {
    return params_.add(name, ParamGroup::generative,
                       nn::make_param(std::move(shape)));
  };
  auto dis = [&](const std::string& name, std::vector<int> shape) {
    return params_.add(name, ParamGroup::discriminative,
                       nn::make_param(std::move(shape)));
  };
  enc1_w_ = gen("enc.mlp1.w", {1, hyper_.enc_hidden});
  enc1_b_ = gen("enc.mlp1.b", {hyper_.enc_hidden});
  enc2_w_ = gen("enc.mlp2.w", {hyper_.enc_hidden, d});
  enc2_b_ = gen("enc.mlp2.b", {d});
  for (int i = 0; i < hyper_.n_conv_layers; ++i) {
    const std::string base = "enc.conv" + std::to_string(i);
    conv_w_.push_back(gen(base + ".w", {hyper_.kernel_size, d, d}));
    conv_b_.push_back(gen(base + ".b", {d}));
  }
  k_w_ = gen("proj.k.w", {d, d});
  q_w_ = gen("proj.q.w", {d, d});
  v_w_ = gen("proj.v.w", {d, d});
  attn_out_w_ = gen("attn.out.w", {d, d});
  attn_out_b_ = gen("attn.out.b", {d});
  dec1_w_ = gen("dec.mlp1.w", {d, hyper_.dec_hidden});
  dec1_b_ = gen("dec.mlp1.b", {hyper_.dec_hidden});
  dec2_w_ = gen("dec.mlp2.w", {hyper_.dec_hidden, 1});
  dec2_b_ = gen("dec.mlp2.b", {1});
  disc1_w_ = dis("disc.mlp1.w", {2 * d, hyper_.disc_hidden});
  disc1_b_ = dis("disc.mlp1.b", {hyper_.disc_hidden});
  disc2_w_ = dis("disc.mlp2.w", {hyper_.disc_hidden, hyper_.domain_k});
  disc2_b_ = dis("disc.mlp2.b", {hyper_.domain_k});
}

const std::string& CfaModel::name() const {
  static const std::string n = "cfa";
  return n;
}

nlohmann::json CfaModel::hyper() const { return hyper_.to_json(); }

CfaModel::Encoded CfaModel::encode_project(Tape& tape,
                                           std::span<const double> seq) const {
  require(!seq.empty(), "encode needs a non-empty sequence");
  auto x = make_input_column(seq);
  auto e = tape.linear(tape.relu(tape.linear(x, enc1_w_, enc1_b_)), enc2_w_,
                       enc2_b_);
  for (size_t i = 0; i < conv_w_.size(); ++i) {
    if (i > 0) e = tape.relu(e);
    e = tape.conv1d(e, conv_w_[i], conv_b_[i], nn::ConvPad::causal);
  }
  Encoded enc;
  enc.k = tape.linear(e, k_w_, nullptr);
  enc.q = tape.linear(e, q_w_, nullptr);
  enc.v = tape.linear(e, v_w_, nullptr);
  return enc;
}

TensorRef CfaModel::decode(Tape& tape, const TensorRef& rows) const {
  return tape.linear(tape.relu(tape.linear(rows, dec1_w_, dec1_b_)), dec2_w_,
                     dec2_b_);
}

std::vector<double> CfaModel::forecast(std::span<const double> context,
                                       int horizon) const {
  require(!context.empty() && horizon >= 1, "forecast needs data");
  std::vector<double> seq(context.begin(), context.end());
  seq.reserve(seq.size() + static_cast<size_t>(horizon));
  for (int s = 0; s < horizon; ++s) {
    // Full re-encode each step; the causal stack makes this equivalent to
    // an incremental rollout.
    Tape tape(false);
    auto enc = encode_project(tape, seq);
    const int len = static_cast<int>(seq.size());
    auto q = tape.slice_rows(enc.q, len - 1, len);
    auto att = nn::multi_head_attention(tape, q, enc.k, enc.v, hyper_.n_heads,
                                        attn_out_w_, attn_out_b_,
                                        /*causal=*/true);
    seq.push_back(decode(tape, att)->v[0]);
  }
  return std::vector<double>(seq.end() - horizon, seq.end());
}

TensorRef CfaModel::teacher_forced(Tape& tape, std::span<const double> context,
                                   std::span<const double> scaled_target) {
  const auto seq = teacher_input(context, scaled_target);
  const int len = static_cast<int>(seq.size());
  const int h = static_cast<int>(scaled_target.size());
  auto enc = encode_project(tape, seq);
  auto q = tape.slice_rows(enc.q, len - h, len);
  auto att = nn::multi_head_attention(tape, q, enc.k, enc.v, hyper_.n_heads,
                                      attn_out_w_, attn_out_b_,
                                      /*causal=*/true, &last_attn_);
  return decode(tape, att);
}

std::vector<double> CfaModel::representation(
    std::span<const double> context) const {
  Tape tape(false);
  auto enc = encode_project(tape, context);
  return tape.mean_rows(enc.k)->v;
}

TensorRef CfaModel::discriminate(Tape& tape, std::span<const double> context,
                                 bool detach) {
  TensorRef pooled;
  if (detach) {
    Tape frozen(false);
    auto enc = encode_project(frozen, context);
    auto p = frozen.concat_cols(frozen.mean_rows(enc.k),
                                frozen.mean_rows(enc.q));
    pooled = tape.constant(p->shape, p->v);
  } else {
    auto enc = encode_project(tape, context);
    pooled = tape.concat_cols(tape.mean_rows(enc.k), tape.mean_rows(enc.q));
  }
  auto hidden = tape.relu(tape.linear(pooled, disc1_w_, disc1_b_));
  return tape.sigmoid(tape.linear(hidden, disc2_w_, disc2_b_));
}

// ---------------------------------------------------------------------------
// Construction and persistence

std::unique_ptr<Forecaster> make_forecaster(const std::string& model,
                                            const nlohmann::json& hyper,
                                            uint64_t seed) {
  const nlohmann::json h = hyper.is_null() ? nlohmann::json::object() : hyper;
  if (model == "mean") return std::make_unique<MeanForecaster>();
  if (model == "lstm")
    return std::make_unique<LstmForecaster>(LstmHyper::from_json(h), seed);
  if (model == "cfa")
    return std::make_unique<CfaModel>(CfaHyper::from_json(h), seed);
  throw ConfigError("unknown model: " + model);
}

void save_forecaster(const std::string& path, const Forecaster& model) {
  nn::save_checkpoint(path, const_cast<Forecaster&>(model).name(),
                      model.hyper(), model.params());
}

std::unique_ptr<Forecaster> load_forecaster(const std::string& path) {
  const auto meta = nn::peek_checkpoint(path);
  std::unique_ptr<Forecaster> model;
  if (meta.model == "mean") {
    model = std::make_unique<MeanForecaster>();
  } else if (meta.model == "lstm") {
    model = std::make_unique<LstmForecaster>(LstmHyper::from_json(meta.hyper));
  } else if (meta.model == "cfa") {
    model = std::make_unique<CfaModel>(CfaHyper::from_json(meta.hyper));
  } else {
    throw IoError("checkpoint has unknown model: " + meta.model);
  }
  nn::load_checkpoint(path, model->params());
  return model;
}

}  // namespace cfa
