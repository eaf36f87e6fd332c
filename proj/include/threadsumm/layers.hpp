#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "threadsumm/common.hpp"
#include "threadsumm/tensor.hpp"

// Building blocks of the hierarchical encoder: LSTM gates, bidirectional
// sequence encoding with trailing-padding masks, stacked valid convolutions
// with window-2 max pooling, content attention over pooled units, and the
// sigmoid scoring head.

namespace threadsumm {

inline constexpr double kInitLo = -0.05;
inline constexpr double kInitHi = 0.05;

struct LstmParams {
  Tensor w_xi, w_hi, b_i;
  Tensor w_xf, w_hf, b_f;
  Tensor w_xo, w_ho, b_o;
  Tensor w_xg, w_hg, b_g;

  std::size_t input_dim() const { return w_xi.shape()[1]; }
  std::size_t hidden_dim() const { return w_xi.shape()[0]; }
};

// Uniform init; the forget bias starts at one so memory flows early on.
inline LstmParams lstm_init(std::size_t input, std::size_t hidden, Rng& rng) {
  auto w = [&] { return Tensor::uniform({hidden, input}, rng, kInitLo, kInitHi); };
  auto r = [&] { return Tensor::uniform({hidden, hidden}, rng, kInitLo, kInitHi); };
  auto b = [&] { return Tensor::uniform({hidden}, rng, kInitLo, kInitHi); };
  LstmParams p{w(), r(), b(), w(), r(), Tensor({hidden}, 1.0),
               w(), r(), b(), w(), r(), b()};
  return p;
}

struct LstmState {
  Tensor h;
  Tensor c;
};

inline LstmState lstm_step(const LstmParams& p, const Tensor& x,
                           const LstmState& prev) {
  if (x.rank() != 1 || x.numel() != p.input_dim())
    throw ShapeError("lstm_step: input " + shape_str(x.shape()) +
                     " does not match weights " + shape_str(p.w_xi.shape()));
  auto gate = [&](const Tensor& wx, const Tensor& wh, const Tensor& b) {
    return add(add(matmul(wx, x), matmul(wh, prev.h)), b);
  };
  Tensor i = sigmoid(gate(p.w_xi, p.w_hi, p.b_i));
  Tensor f = sigmoid(gate(p.w_xf, p.w_hf, p.b_f));
  Tensor o = sigmoid(gate(p.w_xo, p.w_ho, p.b_o));
  Tensor g = tanh(gate(p.w_xg, p.w_hg, p.b_g));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

// Rows are [forward_h_t, backward_h_t]. Padding positions (mask false) skip
// the state update and come out as zero rows; padding is expected trailing
// but any mask works.
inline Tensor bilstm_encode(const LstmParams& fwd, const LstmParams& bwd,
                            const std::vector<Tensor>& xs,
                            const std::vector<bool>& mask = {}) {
  if (xs.empty()) throw ShapeError("bilstm_encode: empty sequence");
  if (!mask.empty() && mask.size() != xs.size())
    throw ShapeError("bilstm_encode: mask length " +
                     std::to_string(mask.size()) + " vs sequence length " +
                     std::to_string(xs.size()));
  const std::size_t T = xs.size();
  const std::size_t d = fwd.hidden_dim();
  if (bwd.hidden_dim() != d)
    throw ShapeError("bilstm_encode: direction widths disagree, " +
                     std::to_string(d) + " vs " +
                     std::to_string(bwd.hidden_dim()));
  auto real = [&](std::size_t t) { return mask.empty() || mask[t]; };

  Tensor zero_h = Tensor::zeros({d});
  std::vector<Tensor> fh(T, zero_h), bh(T, zero_h);

  LstmState st{zero_h, zero_h};
  for (std::size_t t = 0; t < T; ++t) {
    if (!real(t)) continue;
    st = lstm_step(fwd, xs[t], st);
    fh[t] = st.h;
  }
  st = {zero_h, zero_h};
  for (std::size_t t = T; t-- > 0;) {
    if (!real(t)) continue;
    st = lstm_step(bwd, xs[t], st);
    bh[t] = st.h;
  }

  std::vector<Tensor> rows;
  rows.reserve(T);
  for (std::size_t t = 0; t < T; ++t) rows.push_back(concat({fh[t], bh[t]}, 0));
  return stack_rows(rows);
}

// Valid 1-D convolution of a [T x w] matrix with one [j x w] filter:
// out[a] = <filter, input[a*stride .. a*stride+j-1]> + bias.
inline Tensor conv1d(const Tensor& input, const Tensor& filter,
                     const Tensor& bias, std::size_t stride = 1) {
  if (input.rank() != 2 || filter.rank() != 2)
    throw ShapeError("conv1d: need matrices, got " + shape_str(input.shape()) +
                     " and " + shape_str(filter.shape()));
  if (input.shape()[1] != filter.shape()[1])
    throw ShapeError("conv1d: widths disagree, " + shape_str(input.shape()) +
                     " vs " + shape_str(filter.shape()));
  if (bias.numel() != 1)
    throw ShapeError("conv1d: bias must be scalar, got " +
                     shape_str(bias.shape()));
  if (stride == 0) throw ConfigError("conv1d: stride must be positive");
  const std::size_t T = input.shape()[0];
  const std::size_t j = filter.shape()[0];
  const std::size_t w = input.shape()[1];
  if (j > T)
    throw ShapeError("conv1d: filter " + shape_str(filter.shape()) +
                     " longer than input " + shape_str(input.shape()));
  const std::size_t L = (T - j) / stride + 1;

  std::vector<double> out(L);
  const auto& iv = input.values();
  const auto& fv = filter.values();
  const double b0 = bias.values()[0];
  for (std::size_t a = 0; a < L; ++a) {
    double acc = b0;
    const double* win = iv.data() + a * stride * w;
    for (std::size_t r = 0; r < j; ++r)
      for (std::size_t c = 0; c < w; ++c) acc += fv[r * w + c] * win[r * w + c];
    out[a] = acc;
  }

  bool tracked = detail::track({&input, &filter, &bias});
  Tensor out_t = detail::finish("conv1d", {L}, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [input, filter, bias, stride, L, j,
                     w](const std::vector<double>& g, Tape& tape) {
          if (input.requires_grad()) {
            std::vector<double> gi(input.numel(), 0.0);
            const auto& fv = filter.values();
            for (std::size_t a = 0; a < L; ++a) {
              double* win = gi.data() + a * stride * w;
              for (std::size_t r = 0; r < j; ++r)
                for (std::size_t c = 0; c < w; ++c)
                  win[r * w + c] += g[a] * fv[r * w + c];
            }
            tape.accumulate(input.id(), gi);
          }
          if (filter.requires_grad()) {
            std::vector<double> gf(filter.numel(), 0.0);
            const auto& iv = input.values();
            for (std::size_t a = 0; a < L; ++a) {
              const double* win = iv.data() + a * stride * w;
              for (std::size_t r = 0; r < j; ++r)
                for (std::size_t c = 0; c < w; ++c)
                  gf[r * w + c] += g[a] * win[r * w + c];
            }
            tape.accumulate(filter.id(), gf);
          }
          if (bias.requires_grad()) {
            double s = 0.0;
            for (double v : g) s += v;
            tape.accumulate(bias.id(), {s});
          }
        });
  }
  return out_t;
}

// One bank of filters applied at the same receptive field.
struct ConvLayer {
  std::vector<Tensor> filters;  // each [field x width]
  std::vector<Tensor> biases;   // each [1]
};

// Stacked banks for one receptive field size; ReLU after every layer,
// window-2 max pooling once after the last.
struct ConvTower {
  std::size_t field = 2;
  std::vector<ConvLayer> layers;
};

struct ConvParams {
  std::vector<ConvTower> towers;  // one per receptive field size
  std::size_t stride = 1;

  std::size_t filter_count() const {
    return towers.empty() ? 0 : towers[0].layers.back().filters.size();
  }
  // rows needed so every tower still has >= 2 positions left to pool
  std::size_t min_rows() const {
    std::size_t need = 2;
    for (const auto& t : towers) {
      std::size_t n = t.layers.size() * (t.field - 1) + 3;
      need = std::max(need, n);
    }
    return need;
  }
};

inline ConvParams conv_init(std::size_t width, std::size_t n_filters,
                            const std::vector<std::size_t>& fields,
                            std::size_t depth, std::size_t stride, Rng& rng) {
  if (fields.empty()) throw ConfigError("conv_init: no receptive field sizes");
  if (n_filters == 0) throw ConfigError("conv_init: need at least one filter");
  if (depth == 0) throw ConfigError("conv_init: depth must be positive");
  ConvParams p;
  p.stride = stride;
  for (std::size_t f : fields) {
    if (f == 0) throw ConfigError("conv_init: field size must be positive");
    ConvTower tower;
    tower.field = f;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t in_w = l == 0 ? width : n_filters;
      ConvLayer layer;
      for (std::size_t k = 0; k < n_filters; ++k) {
        layer.filters.push_back(
            Tensor::uniform({f, in_w}, rng, kInitLo, kInitHi));
        layer.biases.push_back(Tensor::uniform({1}, rng, kInitLo, kInitHi));
      }
      tower.layers.push_back(std::move(layer));
    }
    p.towers.push_back(std::move(tower));
  }
  return p;
}

// Pooled feature rows plus the bookkeeping the attention mask and the
// report writer need.
struct PooledUnits {
  Tensor units;  // [P x n_filters]
  std::vector<bool> real;
  // token span covered by each unit, and by its dominant window
  std::vector<std::pair<std::size_t, std::size_t>> span;
  std::vector<std::pair<std::size_t, std::size_t>> dominant;
};

inline PooledUnits conv_pool_units(const ConvParams& p, const Tensor& input,
                                   std::size_t real_rows) {
  if (input.rank() != 2)
    throw ShapeError("conv_pool_units: need a matrix, got " +
                     shape_str(input.shape()));
  if (p.towers.empty()) throw ConfigError("conv_pool_units: no towers");
  const std::size_t T = input.shape()[0];
  if (real_rows == 0 || real_rows > T)
    throw ShapeError("conv_pool_units: real row count " +
                     std::to_string(real_rows) + " out of range for " +
                     shape_str(input.shape()));

  PooledUnits out;
  std::vector<Tensor> tower_units;
  for (const auto& tower : p.towers) {
    // input-row span of every position, updated layer by layer
    std::vector<std::pair<std::size_t, std::size_t>> span(T);
    for (std::size_t t = 0; t < T; ++t) span[t] = {t, t + 1};

    Tensor cur = input;
    std::vector<Tensor> maps;
    for (std::size_t l = 0; l < tower.layers.size(); ++l) {
      const auto& layer = tower.layers[l];
      maps.clear();
      maps.reserve(layer.filters.size());
      for (std::size_t k = 0; k < layer.filters.size(); ++k)
        maps.push_back(
            relu(conv1d(cur, layer.filters[k], layer.biases[k], p.stride)));
      const std::size_t L = maps[0].numel();
      std::vector<std::pair<std::size_t, std::size_t>> nspan(L);
      for (std::size_t a = 0; a < L; ++a)
        nspan[a] = {span[a * p.stride].first,
                    span[a * p.stride + tower.field - 1].second};
      span = std::move(nspan);
      if (l + 1 < tower.layers.size()) cur = transpose(stack_rows(maps));
    }

    const std::size_t L = maps[0].numel();
    if (L < 2)
      throw ShapeError("conv_pool_units: tower with field " +
                       std::to_string(tower.field) + " left only " +
                       std::to_string(L) + " positions; pad the input");
    const std::size_t P = L / 2;
    std::vector<Tensor> pooled;
    pooled.reserve(maps.size());
    for (auto& m : maps) pooled.push_back(maxpool1d(m));
    tower_units.push_back(transpose(stack_rows(pooled)));

    for (std::size_t r = 0; r < P; ++r) {
      out.real.push_back(span[2 * r].second <= real_rows);
      out.span.push_back({span[2 * r].first, span[2 * r + 1].second});
      // dominant window: the one winning the per-filter max most often
      std::size_t votes_first = 0;
      for (const auto& m : maps)
        if (m(2 * r) >= m(2 * r + 1)) ++votes_first;
      const std::size_t win = votes_first * 2 >= maps.size() ? 2 * r : 2 * r + 1;
      out.dominant.push_back(span[win]);
    }
  }
  out.units = tower_units.size() == 1 ? tower_units[0]
                                      : concat(tower_units, 0);
  return out;
}

struct AttnParams {
  Tensor w;  // [proj x width]
  Tensor b;  // [proj]
  Tensor u;  // [proj] context vector
};

inline AttnParams attn_init(std::size_t width, Rng& rng) {
  return {Tensor::uniform({width, width}, rng, kInitLo, kInitHi),
          Tensor::uniform({width}, rng, kInitLo, kInitHi),
          Tensor::uniform({width}, rng, kInitLo, kInitHi)};
}

enum class AttendOver { positions, filters };

struct AttnPooled {
  Tensor vec;
  std::vector<double> weights;  // zeros at masked rows; sums to 1
};

// Content attention over the rows of C. Masked (padding) rows get weight 0;
// if everything is masked the mask is ignored. use_attention=false swaps in
// uniform weights over the real rows. AttendOver::filters runs the same
// reduction over the transposed matrix, so the output width becomes the row
// count; the mask does not apply there.
inline AttnPooled attention_pool(const AttnParams& p, const Tensor& units,
                                 const std::vector<bool>& real = {},
                                 bool use_attention = true,
                                 AttendOver over = AttendOver::positions) {
  if (units.rank() != 2)
    throw ShapeError("attention_pool: need a matrix, got " +
                     shape_str(units.shape()));
  Tensor C = over == AttendOver::filters ? transpose(units) : units;
  const std::size_t P = C.shape()[0];

  std::vector<std::size_t> keep;
  if (over == AttendOver::positions && !real.empty()) {
    if (real.size() != P)
      throw ShapeError("attention_pool: mask length " +
                       std::to_string(real.size()) + " vs " +
                       std::to_string(P) + " rows");
    for (std::size_t i = 0; i < P; ++i)
      if (real[i]) keep.push_back(i);
  }
  if (keep.empty())
    for (std::size_t i = 0; i < P; ++i) keep.push_back(i);

  Tensor R = keep.size() == P ? C : gather_rows(C, keep);
  const std::size_t n = keep.size();

  Tensor alpha;
  if (use_attention) {
    const std::size_t proj = p.b.numel();
    if (p.w.rank() != 2 || p.w.shape()[0] != proj ||
        p.w.shape()[1] != R.shape()[1])
      throw ShapeError("attention_pool: projection " + shape_str(p.w.shape()) +
                       " does not match rows " + shape_str(R.shape()));
    Tensor ones = Tensor({1, n}, 1.0);
    Tensor scores = matmul(
        transpose(tanh(add(matmul(p.w, transpose(R)),
                           matmul(reshape(p.b, {proj, 1}), ones)))),
        p.u);
    alpha = softmax(scores);
  } else {
    alpha = Tensor({n}, 1.0 / static_cast<double>(n));
  }

  AttnPooled out;
  out.vec = matmul(transpose(R), alpha);
  out.weights.assign(P, 0.0);
  for (std::size_t i = 0; i < n; ++i) out.weights[keep[i]] = alpha(i);
  return out;
}

struct DenseParams {
  Tensor w;  // [width]
  Tensor b;  // [1]
};

inline DenseParams dense_init(std::size_t width, Rng& rng) {
  return {Tensor::uniform({width}, rng, kInitLo, kInitHi),
          Tensor::uniform({1}, rng, kInitLo, kInitHi)};
}

inline Tensor dense_sigmoid(const DenseParams& p, const Tensor& x) {
  if (x.rank() != 1 || x.numel() != p.w.numel())
    throw ShapeError("dense_sigmoid: input " + shape_str(x.shape()) +
                     " does not match weights " + shape_str(p.w.shape()));
  return sigmoid(add(matmul(p.w, x), p.b));
}

}  // namespace threadsumm
