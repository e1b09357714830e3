#include "cfa/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "cfa/errors.hpp"

namespace cfa::nn {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    require(d > 0, "tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

double Tensor::item() const {
  require(v.size() == 1, "item() needs a scalar tensor");
  return v[0];
}

void Tensor::ensure_grad() {
  if (g.size() != v.size()) g.assign(v.size(), 0.0);
}

void Tensor::zero_grad() { std::fill(g.begin(), g.end(), 0.0); }

bool Tensor::all_finite() const {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

TensorRef make_tensor(std::vector<int> shape) {
  auto t = std::make_shared<Tensor>();
  int64_t n = shape_numel(shape);
  t->shape = std::move(shape);
  t->v.assign(static_cast<size_t>(n), 0.0);
  return t;
}

TensorRef make_tensor(std::vector<int> shape, std::vector<double> values) {
  auto t = make_tensor(std::move(shape));
  require(static_cast<int64_t>(values.size()) == t->size(),
          "tensor value count does not match shape");
  t->v = std::move(values);
  return t;
}

TensorRef make_param(std::vector<int> shape) {
  auto t = make_tensor(std::move(shape));
  t->rg = true;
  t->ensure_grad();
  return t;
}

TensorRef Tape::fresh(std::vector<int> shape, bool needs_grad) {
  auto t = make_tensor(std::move(shape));
  if (grad_ && needs_grad) {
    t->rg = true;
    t->ensure_grad();
  }
  return t;
}

TensorRef Tape::constant(std::vector<int> shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values));
}

void Tape::backward(const TensorRef& loss, double seed) {
  require(loss->size() == 1, "backward expects a scalar loss");
  require(loss->rg, "backward expects a loss that requires grad");
  loss->g[0] += seed;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Linear

TensorRef Tape::linear(const TensorRef& x, const TensorRef& w,
                       const TensorRef& b) {
  require(x->shape.size() == 2 && w->shape.size() == 2,
          "linear expects 2-D input and weight");
  const int rows = x->rows(), din = x->cols();
  require(w->rows() == din, "linear weight rows must match input cols");
  const int dout = w->cols();
  if (b) {
    require(b->shape.size() == 1 && b->shape[0] == dout,
            "linear bias must be [d_out]");
  }

  bool needs = x->rg || w->rg || (b && b->rg);
  auto out = fresh({rows, dout}, needs);
  const double* xp = x->v.data();
  const double* wp = w->v.data();
  double* op = out->v.data();
  for (int r = 0; r < rows; ++r) {
    double* orow = op + static_cast<int64_t>(r) * dout;
    if (b) {
      std::memcpy(orow, b->v.data(), sizeof(double) * dout);
    }
    const double* xrow = xp + static_cast<int64_t>(r) * din;
    for (int i = 0; i < din; ++i) {
      const double xi = xrow[i];
      const double* wrow = wp + static_cast<int64_t>(i) * dout;
      for (int o = 0; o < dout; ++o) orow[o] += xi * wrow[o];
    }
  }

  if (!out->rg) return out;
  record([x, w, b, out, rows, din, dout]() {
    const double* gp = out->g.data();
    const double* xp = x->v.data();
    const double* wp = w->v.data();
    if (x->rg) {
      double* xg = x->g.data();
      for (int r = 0; r < rows; ++r) {
        const double* grow = gp + static_cast<int64_t>(r) * dout;
        double* xgrow = xg + static_cast<int64_t>(r) * din;
        for (int i = 0; i < din; ++i) {
          const double* wrow = wp + static_cast<int64_t>(i) * dout;
          double acc = 0.0;
          for (int o = 0; o < dout; ++o) acc += grow[o] * wrow[o];
          xgrow[i] += acc;
        }
      }
    }
    if (w->rg) {
      double* wg = w->g.data();
      for (int r = 0; r < rows; ++r) {
        const double* grow = gp + static_cast<int64_t>(r) * dout;
        const double* xrow = xp + static_cast<int64_t>(r) * din;
        for (int i = 0; i < din; ++i) {
          const double xi = xrow[i];
          double* wgrow = wg + static_cast<int64_t>(i) * dout;
          for (int o = 0; o < dout; ++o) wgrow[o] += xi * grow[o];
        }
      }
    }
    if (b && b->rg) {
      double* bg = b->g.data();
      for (int r = 0; r < rows; ++r) {
        const double* grow = gp + static_cast<int64_t>(r) * dout;
        for (int o = 0; o < dout; ++o) bg[o] += grow[o];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Conv1d

TensorRef Tape::conv1d(const TensorRef& x, const TensorRef& w,
                       const TensorRef& b, ConvPad pad) {
  require(x->shape.size() == 2, "conv1d expects input [T, c_in]");
  require(w->shape.size() == 3, "conv1d expects weight [ks, c_in, c_out]");
  const int tlen = x->shape[0], cin = x->shape[1];
  const int ks = w->shape[0], cout = w->shape[2];
  require(w->shape[1] == cin, "conv1d weight channel mismatch");
  require(ks >= 1, "conv1d kernel must be non-empty");
  if (pad == ConvPad::same) {
    require(ks % 2 == 1, "same-padded conv1d needs an odd kernel size");
  }
  if (b) {
    require(b->shape.size() == 1 && b->shape[0] == cout,
            "conv1d bias must be [c_out]");
  }

  // Output position t reads input positions t + off + dt for dt in [0, ks).
  const int off = pad == ConvPad::same ? -(ks / 2) : -(ks - 1);

  bool needs = x->rg || w->rg || (b && b->rg);
  auto out = fresh({tlen, cout}, needs);
  const double* xp = x->v.data();
  const double* wp = w->v.data();
  double* op = out->v.data();
  for (int t = 0; t < tlen; ++t) {
    double* orow = op + static_cast<int64_t>(t) * cout;
    if (b) {
      std::memcpy(orow, b->v.data(), sizeof(double) * cout);
    }
    for (int dt = 0; dt < ks; ++dt) {
      const int src = t + off + dt;
      if (src < 0 || src >= tlen) continue;
      const double* xrow = xp + static_cast<int64_t>(src) * cin;
      const double* wplane = wp + static_cast<int64_t>(dt) * cin * cout;
      for (int i = 0; i < cin; ++i) {
        const double xi = xrow[i];
        const double* wrow = wplane + static_cast<int64_t>(i) * cout;
        for (int o = 0; o < cout; ++o) orow[o] += xi * wrow[o];
      }
    }
  }

  if (!out->rg) return out;
  record([x, w, b, out, tlen, cin, ks, cout, off]() {
    const double* gp = out->g.data();
    const double* xp = x->v.data();
    const double* wp = w->v.data();
    for (int t = 0; t < tlen; ++t) {
      const double* grow = gp + static_cast<int64_t>(t) * cout;
      for (int dt = 0; dt < ks; ++dt) {
        const int src = t + off + dt;
        if (src < 0 || src >= tlen) continue;
        const double* wplane = wp + static_cast<int64_t>(dt) * cin * cout;
        if (x->rg) {
          double* xgrow = x->g.data() + static_cast<int64_t>(src) * cin;
          for (int i = 0; i < cin; ++i) {
            const double* wrow = wplane + static_cast<int64_t>(i) * cout;
            double acc = 0.0;
            for (int o = 0; o < cout; ++o) acc += grow[o] * wrow[o];
            xgrow[i] += acc;
          }
        }
        if (w->rg) {
          const double* xrow = xp + static_cast<int64_t>(src) * cin;
          double* wgplane = w->g.data() + static_cast<int64_t>(dt) * cin * cout;
          for (int i = 0; i < cin; ++i) {
            const double xi = xrow[i];
            double* wgrow = wgplane + static_cast<int64_t>(i) * cout;
            for (int o = 0; o < cout; ++o) wgrow[o] += xi * grow[o];
          }
        }
      }
      if (b && b->rg) {
        double* bg = b->g.data();
        for (int o = 0; o < cout; ++o) bg[o] += grow[o];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

TensorRef Tape::add(const TensorRef& a, const TensorRef& b) {
  require(a->shape == b->shape, "add expects matching shapes");
  auto out = fresh(a->shape, a->rg || b->rg);
  for (int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] + b->v[i];
  if (!out->rg) return out;
  record([a, b, out]() {
    if (a->rg)
      for (int64_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i];
    if (b->rg)
      for (int64_t i = 0; i < out->size(); ++i) b->g[i] += out->g[i];
  });
  return out;
}

TensorRef Tape::sub(const TensorRef& a, const TensorRef& b) {
  require(a->shape == b->shape, "sub expects matching shapes");
  auto out = fresh(a->shape, a->rg || b->rg);
  for (int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] - b->v[i];
  if (!out->rg) return out;
  record([a, b, out]() {
    if (a->rg)
      for (int64_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i];
    if (b->rg)
      for (int64_t i = 0; i < out->size(); ++i) b->g[i] -= out->g[i];
  });
  return out;
}

TensorRef Tape::mul(const TensorRef& a, const TensorRef& b) {
  require(a->shape == b->shape, "mul expects matching shapes");
  auto out = fresh(a->shape, a->rg || b->rg);
  for (int64_t i = 0; i < a->size(); ++i) out->v[i] = a->v[i] * b->v[i];
  if (!out->rg) return out;
  record([a, b, out]() {
    if (a->rg)
      for (int64_t i = 0; i < out->size(); ++i) a->g[i] += out->g[i] * b->v[i];
    if (b->rg)
      for (int64_t i = 0; i < out->size(); ++i) b->g[i] += out->g[i] * a->v[i];
  });
  return out;
}

TensorRef Tape::scale(const TensorRef& x, double c) {
  auto out = fresh(x->shape, x->rg);
  for (int64_t i = 0; i < x->size(); ++i) out->v[i] = c * x->v[i];
  if (!out->rg) return out;
  record([x, out, c]() {
    for (int64_t i = 0; i < out->size(); ++i) x->g[i] += c * out->g[i];
  });
  return out;
}

TensorRef Tape::relu(const TensorRef& x) {
  auto out = fresh(x->shape, x->rg);
  for (int64_t i = 0; i < x->size(); ++i)
    out->v[i] = x->v[i] > 0.0 ? x->v[i] : 0.0;
  if (!out->rg) return out;
  record([x, out]() {
    for (int64_t i = 0; i < out->size(); ++i)
      if (x->v[i] > 0.0) x->g[i] += out->g[i];
  });
  return out;
}

TensorRef Tape::sigmoid(const TensorRef& x) {
  auto out = fresh(x->shape, x->rg);
  for (int64_t i = 0; i < x->size(); ++i)
    out->v[i] = 1.0 / (1.0 + std::exp(-x->v[i]));
  if (!out->rg) return out;
  record([x, out]() {
    for (int64_t i = 0; i < out->size(); ++i) {
      const double s = out->v[i];
      x->g[i] += out->g[i] * s * (1.0 - s);
    }
  });
  return out;
}

TensorRef Tape::tanh_(const TensorRef& x) {
  auto out = fresh(x->shape, x->rg);
  for (int64_t i = 0; i < x->size(); ++i) out->v[i] = std::tanh(x->v[i]);
  if (!out->rg) return out;
  record([x, out]() {
    for (int64_t i = 0; i < out->size(); ++i) {
      const double t = out->v[i];
      x->g[i] += out->g[i] * (1.0 - t * t);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops

TensorRef Tape::slice_rows(const TensorRef& x, int r0, int r1) {
  require(x->shape.size() == 2, "slice_rows expects a 2-D tensor");
  require(0 <= r0 && r0 < r1 && r1 <= x->rows(), "slice_rows out of range");
  const int cols = x->cols();
  auto out = fresh({r1 - r0, cols}, x->rg);
  std::memcpy(out->v.data(), x->v.data() + static_cast<int64_t>(r0) * cols,
              sizeof(double) * out->v.size());
  if (!out->rg) return out;
  record([x, out, r0, cols]() {
    double* xg = x->g.data() + static_cast<int64_t>(r0) * cols;
    for (int64_t i = 0; i < out->size(); ++i) xg[i] += out->g[i];
  });
  return out;
}

TensorRef Tape::slice_cols(const TensorRef& x, int c0, int c1) {
  require(x->shape.size() == 2, "slice_cols expects a 2-D tensor");
  require(0 <= c0 && c0 < c1 && c1 <= x->cols(), "slice_cols out of range");
  const int rows = x->rows(), cols = x->cols(), w = c1 - c0;
  auto out = fresh({rows, w}, x->rg);
  for (int r = 0; r < rows; ++r)
    std::memcpy(out->v.data() + static_cast<int64_t>(r) * w,
                x->v.data() + static_cast<int64_t>(r) * cols + c0,
                sizeof(double) * w);
  if (!out->rg) return out;
  record([x, out, c0, rows, cols, w]() {
    for (int r = 0; r < rows; ++r) {
      double* xg = x->g.data() + static_cast<int64_t>(r) * cols + c0;
      const double* og = out->g.data() + static_cast<int64_t>(r) * w;
      for (int i = 0; i < w; ++i) xg[i] += og[i];
    }
  });
  return out;
}

TensorRef Tape::concat_rows(std::span<const TensorRef> parts) {
  require(!parts.empty(), "concat_rows needs at least one part");
  const int cols = parts[0]->cols();
  int rows = 0;
  bool needs = false;
  for (const auto& p : parts) {
    require(p->shape.size() == 2 && p->cols() == cols,
            "concat_rows parts must share the column count");
    rows += p->rows();
    needs = needs || p->rg;
  }
  auto out = fresh({rows, cols}, needs);
  int64_t at = 0;
  for (const auto& p : parts) {
    std::memcpy(out->v.data() + at, p->v.data(), sizeof(double) * p->v.size());
    at += p->size();
  }
  if (!out->rg) return out;
  std::vector<TensorRef> held(parts.begin(), parts.end());
  record([held = std::move(held), out]() {
    int64_t at = 0;
    for (const auto& p : held) {
      if (p->rg) {
        const double* og = out->g.data() + at;
        for (int64_t i = 0; i < p->size(); ++i) p->g[i] += og[i];
      }
      at += p->size();
    }
  });
  return out;
}

TensorRef Tape::concat_cols(const TensorRef& a, const TensorRef& b) {
  require(a->shape.size() == 2 && b->shape.size() == 2 && a->rows() == b->rows(),
          "concat_cols expects 2-D tensors with equal row counts");
  const int rows = a->rows(), ca = a->cols(), cb = b->cols();
  auto out = fresh({rows, ca + cb}, a->rg || b->rg);
  for (int r = 0; r < rows; ++r) {
    double* orow = out->v.data() + static_cast<int64_t>(r) * (ca + cb);
    std::memcpy(orow, a->v.data() + static_cast<int64_t>(r) * ca,
                sizeof(double) * ca);
    std::memcpy(orow + ca, b->v.data() + static_cast<int64_t>(r) * cb,
                sizeof(double) * cb);
  }
  if (!out->rg) return out;
  record([a, b, out, rows, ca, cb]() {
    for (int r = 0; r < rows; ++r) {
      const double* orow = out->g.data() + static_cast<int64_t>(r) * (ca + cb);
      if (a->rg) {
        double* ag = a->g.data() + static_cast<int64_t>(r) * ca;
        for (int i = 0; i < ca; ++i) ag[i] += orow[i];
      }
      if (b->rg) {
        double* bg = b->g.data() + static_cast<int64_t>(r) * cb;
        for (int i = 0; i < cb; ++i) bg[i] += orow[ca + i];
      }
    }
  });
  return out;
}

TensorRef Tape::mean_rows(const TensorRef& x) {
  require(x->shape.size() == 2, "mean_rows expects a 2-D tensor");
  const int rows = x->rows(), cols = x->cols();
  auto out = fresh({1, cols}, x->rg);
  const double inv = 1.0 / rows;
  for (int r = 0; r < rows; ++r) {
    const double* xrow = x->v.data() + static_cast<int64_t>(r) * cols;
    for (int c = 0; c < cols; ++c) out->v[c] += xrow[c] * inv;
  }
  if (!out->rg) return out;
  record([x, out, rows, cols, inv]() {
    for (int r = 0; r < rows; ++r) {
      double* xg = x->g.data() + static_cast<int64_t>(r) * cols;
      for (int c = 0; c < cols; ++c) xg[c] += out->g[c] * inv;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Losses

TensorRef Tape::mse(const TensorRef& pred, const TensorRef& target) {
  require(pred->shape == target->shape, "mse expects matching shapes");
  const int64_t n = pred->size();
  auto out = fresh({1}, pred->rg || target->rg);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = pred->v[i] - target->v[i];
    acc += d * d;
  }
  out->v[0] = acc / static_cast<double>(n);
  if (!out->rg) return out;
  record([pred, target, out, n]() {
    const double c = 2.0 * out->g[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      const double d = pred->v[i] - target->v[i];
      if (pred->rg) pred->g[i] += c * d;
      if (target->rg) target->g[i] -= c * d;
    }
  });
  return out;
}

TensorRef Tape::mae_sum(const TensorRef& pred, const TensorRef& target) {
  require(pred->shape == target->shape, "mae_sum expects matching shapes");
  const int64_t n = pred->size();
  auto out = fresh({1}, pred->rg || target->rg);
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(pred->v[i] - target->v[i]);
  out->v[0] = acc;
  if (!out->rg) return out;
  record([pred, target, out, n]() {
    for (int64_t i = 0; i < n; ++i) {
      const double d = pred->v[i] - target->v[i];
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (pred->rg) pred->g[i] += out->g[0] * s;
      if (target->rg) target->g[i] -= out->g[0] * s;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// LSTM

LstmOut lstm_layer(Tape& tape, const TensorRef& x, const LstmParams& p,
                   std::optional<LstmState> init) {
  require(x->shape.size() == 2, "lstm_layer expects input [T, d_in]");
  const int hidden = p.hidden();
  require(p.wx->shape.size() == 2 && p.wx->cols() == 4 * hidden &&
              p.wx->rows() == x->cols(),
          "lstm wx must be [d_in, 4H]");
  require(p.wh->shape.size() == 2 && p.wh->cols() == 4 * hidden,
          "lstm wh must be [H, 4H]");
  require(p.b->shape.size() == 1 && p.b->shape[0] == 4 * hidden,
          "lstm bias must be [4H]");

  LstmState st;
  if (init) {
    st = *init;
  } else {
    st.h = make_tensor({1, hidden});
    st.c = make_tensor({1, hidden});
  }

  const int tlen = x->rows();
  std::vector<TensorRef> hs;
  hs.reserve(tlen);
  for (int t = 0; t < tlen; ++t) {
    auto xt = tape.slice_rows(x, t, t + 1);
    auto z = tape.add(tape.linear(xt, p.wx, p.b),
                      tape.linear(st.h, p.wh, nullptr));
    auto i = tape.sigmoid(tape.slice_cols(z, 0, hidden));
    auto f = tape.sigmoid(tape.slice_cols(z, hidden, 2 * hidden));
    auto g = tape.tanh_(tape.slice_cols(z, 2 * hidden, 3 * hidden));
    auto o = tape.sigmoid(tape.slice_cols(z, 3 * hidden, 4 * hidden));
    st.c = tape.add(tape.mul(f, st.c), tape.mul(i, g));
    st.h = tape.mul(o, tape.tanh_(st.c));
    hs.push_back(st.h);
  }
  return {tape.concat_rows(hs), st};
}

// ---------------------------------------------------------------------------
// Attention

TensorRef multi_head_attention(Tape& tape, const TensorRef& q,
                               const TensorRef& k, const TensorRef& v,
                               int n_heads, const TensorRef& out_w,
                               const TensorRef& out_b, bool causal,
                               std::vector<double>* weights_out) {
  require(q->shape.size() == 2 && k->shape.size() == 2 && v->shape.size() == 2,
          "attention expects 2-D q/k/v");
  const int tq = q->rows(), tk = k->rows(), d = q->cols();
  require(k->cols() == d && v->cols() == d && v->rows() == tk,
          "attention q/k/v width mismatch");
  require(n_heads >= 1 && d % n_heads == 0,
          "attention width must be divisible by n_heads");
  const int dh = d / n_heads;
  const double alpha = 1.0 / std::sqrt(static_cast<double>(dh));
  // End-aligned causal mask: query row i may attend keys j <= i + shift.
  const int shift = tk - tq;
  require(!causal || shift >= 0,
          "causal attention needs at least as many keys as queries");

  // Softmax weights per head, kept for the backward pass.
  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(n_heads) * tq * tk, 0.0);
  auto ctx = make_tensor({tq, d});  // concatenated head outputs

  for (int h = 0; h < n_heads; ++h) {
    const int hc = h * dh;
    double* pp = probs->data() + static_cast<int64_t>(h) * tq * tk;
    for (int i = 0; i < tq; ++i) {
      const int jmax = causal ? std::min(tk - 1, i + shift) : tk - 1;
      double* prow = pp + static_cast<int64_t>(i) * tk;
      const double* qrow = q->v.data() + static_cast<int64_t>(i) * d + hc;
      double mx = -1e300;
      for (int j = 0; j <= jmax; ++j) {
        const double* krow = k->v.data() + static_cast<int64_t>(j) * d + hc;
        double s = 0.0;
        for (int c = 0; c < dh; ++c) s += qrow[c] * krow[c];
        s *= alpha;
        prow[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (int j = 0; j <= jmax; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        z += prow[j];
      }
      const double inv = 1.0 / z;
      double* crow = ctx->v.data() + static_cast<int64_t>(i) * d + hc;
      for (int j = 0; j <= jmax; ++j) {
        prow[j] *= inv;
        const double p = prow[j];
        const double* vrow = v->v.data() + static_cast<int64_t>(j) * d + hc;
        for (int c = 0; c < dh; ++c) crow[c] += p * vrow[c];
      }
    }
  }
  if (weights_out) *weights_out = *probs;

  bool needs = tape.grad_enabled() && (q->rg || k->rg || v->rg);
  if (needs) {
    ctx->rg = true;
    ctx->ensure_grad();
    tape.record([q, k, v, ctx, probs, n_heads, tq, tk, d, dh, alpha, causal,
                 shift]() {
      std::vector<double> dp(static_cast<size_t>(tk));
      for (int h = 0; h < n_heads; ++h) {
        const int hc = h * dh;
        const double* pp = probs->data() + static_cast<int64_t>(h) * tq * tk;
        for (int i = 0; i < tq; ++i) {
          const int jmax = causal ? std::min(tk - 1, i + shift) : tk - 1;
          const double* prow = pp + static_cast<int64_t>(i) * tk;
          const double* crow = ctx->g.data() + static_cast<int64_t>(i) * d + hc;
          // d(ctx)/d(probs) and accumulate into v.
          double dot = 0.0;
          for (int j = 0; j <= jmax; ++j) {
            const double* vrow = v->v.data() + static_cast<int64_t>(j) * d + hc;
            double acc = 0.0;
            for (int c = 0; c < dh; ++c) acc += crow[c] * vrow[c];
            dp[j] = acc;
            dot += acc * prow[j];
            if (v->rg) {
              double* vg = v->g.data() + static_cast<int64_t>(j) * d + hc;
              const double p = prow[j];
              for (int c = 0; c < dh; ++c) vg[c] += p * crow[c];
            }
          }
          // Softmax backward, then scores into q and k.
          const double* qrow = q->v.data() + static_cast<int64_t>(i) * d + hc;
          double* qg = q->rg ? q->g.data() + static_cast<int64_t>(i) * d + hc
                             : nullptr;
          for (int j = 0; j <= jmax; ++j) {
            const double ds = prow[j] * (dp[j] - dot) * alpha;
            if (ds == 0.0) continue;
            const double* krow = k->v.data() + static_cast<int64_t>(j) * d + hc;
            if (qg) {
              for (int c = 0; c < dh; ++c) qg[c] += ds * krow[c];
            }
            if (k->rg) {
              double* kg = k->g.data() + static_cast<int64_t>(j) * d + hc;
              for (int c = 0; c < dh; ++c) kg[c] += ds * qrow[c];
            }
          }
        }
      }
    });
  }
  return tape.linear(ctx, out_w, out_b);
}

// ---------------------------------------------------------------------------
// Parameters

const char* to_string(ParamGroup g) {
  return g == ParamGroup::generative ? "generative" : "discriminative";
}

ParamGroup param_group_from_string(const std::string& s) {
  if (s == "generative") return ParamGroup::generative;
  if (s == "discriminative") return ParamGroup::discriminative;
  throw ContractError("unknown parameter group: " + s);
}

TensorRef ParameterSet::add(const std::string& name, ParamGroup group,
                            TensorRef t) {
  require(t != nullptr && t->rg, "parameters must require grad");
  require(find(name) == nullptr, "duplicate parameter name: " + name);
  entries_.push_back({name, group, t});
  return entries_.back().tensor;
}

std::vector<TensorRef> ParameterSet::group(ParamGroup g) const {
  std::vector<TensorRef> out;
  for (const auto& e : entries_)
    if (e.group == g) out.push_back(e.tensor);
  return out;
}

TensorRef ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  return nullptr;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.tensor->zero_grad();
}

int64_t ParameterSet::numel() const {
  int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor->size();
  return n;
}

void adam_step(std::span<const TensorRef> params, AdamState& state,
               const AdamConfig& cfg) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->v.size(), 0.0);
      state.v[i].assign(params[i]->v.size(), 0.0);
    }
  }
  require(state.m.size() == params.size(),
          "optimizer state does not match the parameter list");
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    require(state.m[i].size() == p.v.size(), "optimizer slot size mismatch");
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (size_t j = 0; j < p.v.size(); ++j) {
      const double g = p.g[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.v[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

void init_glorot(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  require(fan_in > 0 && fan_out > 0, "glorot fans must be positive");
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& x : t.v) x = rng.uniform(-limit, limit);
}

}  // namespace cfa::nn
