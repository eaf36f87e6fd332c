#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "testutil.hpp"
#include "threadsumm/layers.hpp"

using namespace threadsumm;

namespace {

// reference math on plain doubles, no tensor machinery
std::vector<double> ref_affine(const Tensor& w, const std::vector<double>& x,
                               const Tensor& wh, const std::vector<double>& h,
                               const Tensor& b) {
  const std::size_t d = w.shape()[0], e = w.shape()[1];
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = b(i);
    for (std::size_t j = 0; j < e; ++j) acc += w(i, j) * x[j];
    for (std::size_t j = 0; j < d; ++j) acc += wh(i, j) * h[j];
    out[i] = acc;
  }
  return out;
}

double ref_sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

struct RefState {
  std::vector<double> h, c;
};

RefState ref_lstm_step(const LstmParams& p, const std::vector<double>& x,
                       const RefState& prev) {
  const std::size_t d = p.hidden_dim();
  auto i = ref_affine(p.w_xi, x, p.w_hi, prev.h, p.b_i);
  auto f = ref_affine(p.w_xf, x, p.w_hf, prev.h, p.b_f);
  auto o = ref_affine(p.w_xo, x, p.w_ho, prev.h, p.b_o);
  auto g = ref_affine(p.w_xg, x, p.w_hg, prev.h, p.b_g);
  RefState out{std::vector<double>(d), std::vector<double>(d)};
  for (std::size_t k = 0; k < d; ++k) {
    out.c[k] = ref_sig(f[k]) * prev.c[k] + ref_sig(i[k]) * std::tanh(g[k]);
    out.h[k] = ref_sig(o[k]) * std::tanh(out.c[k]);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor*>> lstm_param_refs(LstmParams& p) {
  return {{"w_xi", &p.w_xi}, {"w_hi", &p.w_hi}, {"b_i", &p.b_i},
          {"w_xf", &p.w_xf}, {"w_hf", &p.w_hf}, {"b_f", &p.b_f},
          {"w_xo", &p.w_xo}, {"w_ho", &p.w_ho}, {"b_o", &p.b_o},
          {"w_xg", &p.w_xg}, {"w_hg", &p.w_hg}, {"b_g", &p.b_g}};
}

}  // namespace

TEST_CASE("lstm_step with all-zero parameters and state yields zeros",
          "[layers]") {
  LstmParams p{Tensor::zeros({3, 2}), Tensor::zeros({3, 3}), Tensor::zeros({3}),
               Tensor::zeros({3, 2}), Tensor::zeros({3, 3}), Tensor::zeros({3}),
               Tensor::zeros({3, 2}), Tensor::zeros({3, 3}), Tensor::zeros({3}),
               Tensor::zeros({3, 2}), Tensor::zeros({3, 3}), Tensor::zeros({3})};
  LstmState st{Tensor::zeros({3}), Tensor::zeros({3})};
  Tensor x = Tensor::from({2}, {4.2, -1.3});
  auto out = lstm_step(p, x, st);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(out.h(k) == 0.0);
    CHECK(out.c(k) == 0.0);
  }
}

TEST_CASE("lstm_step matches an independent gate-by-gate evaluation",
          "[layers]") {
  Rng rng(3);
  LstmParams p = lstm_init(4, 3, rng);
  Tensor x = tsu::random_tensor({4}, rng);
  Tensor h0 = tsu::random_tensor({3}, rng);
  Tensor c0 = tsu::random_tensor({3}, rng);

  auto out = lstm_step(p, x, {h0, c0});
  auto ref = ref_lstm_step(p, x.values(), {h0.values(), c0.values()});
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(tsu::near(out.h(k), ref.h[k], 1e-12));
    CHECK(tsu::near(out.c(k), ref.c[k], 1e-12));
  }
}

TEST_CASE("forget-gate bias starts at one, everything else near zero",
          "[layers]") {
  Rng rng(10);
  LstmParams p = lstm_init(2, 4, rng);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(p.b_f(k) == 1.0);
    CHECK(std::abs(p.b_i(k)) <= 0.05);
  }
  for (double v : p.w_xi.values()) CHECK(std::abs(v) <= 0.05);
}

TEST_CASE("lstm_step gradients pass finite differences", "[layers]") {
  Rng rng(31);
  LstmParams p = lstm_init(3, 2, rng);
  Tensor x = tsu::random_tensor({3}, rng);
  Tensor h0 = tsu::random_tensor({2}, rng);
  Tensor c0 = tsu::random_tensor({2}, rng);
  auto params = lstm_param_refs(p);
  params.push_back({"x", &x});
  params.push_back({"h0", &h0});
  params.push_back({"c0", &c0});
  auto res = gradient_check(params, [&] {
    auto out = lstm_step(p, x, {h0, c0});
    return sum(concat({out.h, out.c}, 0));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("bilstm_encode stacks forward and backward states per row",
          "[layers]") {
  Rng rng(11);
  LstmParams fwd = lstm_init(3, 2, rng);
  LstmParams bwd = lstm_init(3, 2, rng);
  std::vector<Tensor> xs = {tsu::random_tensor({3}, rng),
                            tsu::random_tensor({3}, rng),
                            tsu::random_tensor({3}, rng)};
  Tensor H = bilstm_encode(fwd, bwd, xs);
  REQUIRE(H.shape() == Shape{3, 4});

  RefState f{{0, 0}, {0, 0}};
  std::vector<RefState> fs;
  for (const auto& x : xs) {
    f = ref_lstm_step(fwd, x.values(), f);
    fs.push_back(f);
  }
  RefState b{{0, 0}, {0, 0}};
  std::vector<RefState> bs(3);
  for (std::size_t t = 3; t-- > 0;) {
    b = ref_lstm_step(bwd, xs[t].values(), b);
    bs[t] = b;
  }
  for (std::size_t t = 0; t < 3; ++t) {
    CHECK(tsu::near(H(t, 0), fs[t].h[0], 1e-12));
    CHECK(tsu::near(H(t, 1), fs[t].h[1], 1e-12));
    CHECK(tsu::near(H(t, 2), bs[t].h[0], 1e-12));
    CHECK(tsu::near(H(t, 3), bs[t].h[1], 1e-12));
  }
}

TEST_CASE("bilstm_encode zeroes masked rows and skips their state updates",
          "[layers]") {
  Rng rng(12);
  LstmParams fwd = lstm_init(2, 2, rng);
  LstmParams bwd = lstm_init(2, 2, rng);
  std::vector<Tensor> xs = {tsu::random_tensor({2}, rng),
                            tsu::random_tensor({2}, rng),
                            tsu::random_tensor({2}, rng),
                            tsu::random_tensor({2}, rng)};
  std::vector<bool> mask = {true, true, false, false};
  Tensor H = bilstm_encode(fwd, bwd, xs, mask);
  for (std::size_t c = 0; c < 4; ++c) {
    CHECK(H(2, c) == 0.0);
    CHECK(H(3, c) == 0.0);
  }
  // the real prefix must read exactly as a 2-step sequence
  std::vector<Tensor> prefix = {xs[0], xs[1]};
  Tensor H2 = bilstm_encode(fwd, bwd, prefix);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 4; ++c) CHECK(H(t, c) == H2(t, c));
}

TEST_CASE("bilstm_encode gradients pass finite differences", "[layers]") {
  Rng rng(13);
  LstmParams fwd = lstm_init(2, 2, rng);
  LstmParams bwd = lstm_init(2, 2, rng);
  std::vector<Tensor> xs = {tsu::random_tensor({2}, rng),
                            tsu::random_tensor({2}, rng),
                            tsu::random_tensor({2}, rng)};
  auto params = lstm_param_refs(fwd);
  for (auto& [n, t] : lstm_param_refs(bwd)) params.push_back({"b." + n, t});
  Tensor r = tsu::random_tensor({3, 4}, rng);
  auto res = gradient_check(params, [&] {
    return sum(mul(bilstm_encode(fwd, bwd, xs), r));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv1d matches a brute-force sliding window", "[layers]") {
  Rng rng(5);
  Tensor input = tsu::random_tensor({4, 3}, rng);
  Tensor filter = tsu::random_tensor({2, 3}, rng);
  Tensor bias = tsu::random_tensor({1}, rng);
  Tensor out = conv1d(input, filter, bias);
  REQUIRE(out.shape() == Shape{3});
  for (std::size_t a = 0; a < 3; ++a) {
    double acc = bias(0);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 3; ++c) acc += filter(r, c) * input(a + r, c);
    CHECK(tsu::near(out(a), acc, 1e-12));
  }
}

TEST_CASE("conv1d honors the stride", "[layers]") {
  Rng rng(6);
  Tensor input = tsu::random_tensor({6, 2}, rng);
  Tensor filter = tsu::random_tensor({2, 2}, rng);
  Tensor bias = Tensor::zeros({1});
  Tensor out = conv1d(input, filter, bias, 2);
  REQUIRE(out.shape() == Shape{3});
  for (std::size_t a = 0; a < 3; ++a) {
    double acc = 0.0;
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t c = 0; c < 2; ++c)
        acc += filter(r, c) * input(2 * a + r, c);
    CHECK(tsu::near(out(a), acc, 1e-12));
  }
}

TEST_CASE("conv1d gradients pass finite differences", "[layers]") {
  Rng rng(51);
  Tensor input = tsu::random_tensor({5, 3}, rng);
  Tensor filter = tsu::random_tensor({2, 3}, rng);
  Tensor bias = tsu::random_tensor({1}, rng);
  Tensor r = tsu::random_tensor({4}, rng);
  auto res = gradient_check(
      {{"input", &input}, {"filter", &filter}, {"bias", &bias}},
      [&] { return sum(mul(conv1d(input, filter, bias), r)); });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv_pool_units pools window maxima per filter", "[layers]") {
  Rng rng(52);
  ConvParams p = conv_init(3, 2, {2}, 1, 1, rng);
  Tensor input = tsu::random_tensor({5, 3}, rng);
  PooledUnits pu = conv_pool_units(p, input, 5);
  // 5 rows, field 2 -> 4 positions -> 2 pooled units
  REQUIRE(pu.units.shape() == Shape{2, 2});
  for (std::size_t k = 0; k < 2; ++k) {
    std::vector<double> m(4);
    for (std::size_t a = 0; a < 4; ++a) {
      double acc = p.towers[0].layers[0].biases[k](0);
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c)
          acc += p.towers[0].layers[0].filters[k](r, c) * input(a + r, c);
      m[a] = acc > 0 ? acc : 0;
    }
    CHECK(tsu::near(pu.units(0, k), std::max(m[0], m[1]), 1e-12));
    CHECK(tsu::near(pu.units(1, k), std::max(m[2], m[3]), 1e-12));
  }
  CHECK(pu.real == std::vector<bool>{true, true});
  CHECK(pu.span[0] == std::pair<std::size_t, std::size_t>{0, 3});
  CHECK(pu.span[1] == std::pair<std::size_t, std::size_t>{2, 5});
}

TEST_CASE("conv_pool_units marks units that only cover padding", "[layers]") {
  Rng rng(53);
  ConvParams p = conv_init(2, 3, {2}, 1, 1, rng);
  Tensor input = tsu::random_tensor({7, 2}, rng);
  // rows 3.. are padding: positions 0,1,2 are fully real, units are
  // pairs (0,1) and (2,3) -> first real, second real via position 2
  PooledUnits pu = conv_pool_units(p, input, 4);
  REQUIRE(pu.real.size() == 3);
  CHECK(pu.real[0]);
  CHECK(pu.real[1]);
  CHECK_FALSE(pu.real[2]);
}

TEST_CASE("conv_pool_units stacks towers of different field sizes",
          "[layers]") {
  Rng rng(54);
  ConvParams p = conv_init(3, 2, {2, 3}, 1, 1, rng);
  Tensor input = tsu::random_tensor({7, 3}, rng);
  PooledUnits pu = conv_pool_units(p, input, 7);
  // field 2: 6 positions -> 3 units; field 3: 5 positions -> 2 units
  REQUIRE(pu.units.shape() == Shape{5, 2});
  REQUIRE(pu.real.size() == 5);
  CHECK(p.min_rows() == 5);
}

TEST_CASE("a two-layer tower shrinks positions and still differentiates",
          "[layers]") {
  Rng rng(55);
  ConvParams p = conv_init(3, 2, {2}, 2, 1, rng);
  Tensor input = tsu::random_tensor({6, 3}, rng);
  PooledUnits pu = conv_pool_units(p, input, 6);
  // 6 -> 5 -> 4 positions -> 2 units
  REQUIRE(pu.units.shape() == Shape{2, 2});

  std::vector<std::pair<std::string, Tensor*>> params;
  for (std::size_t l = 0; l < 2; ++l)
    for (std::size_t k = 0; k < 2; ++k) {
      params.push_back({"f", &p.towers[0].layers[l].filters[k]});
      params.push_back({"b", &p.towers[0].layers[l].biases[k]});
    }
  Tensor r = tsu::random_tensor({2, 2}, rng);
  auto res = gradient_check(params, [&] {
    return sum(mul(conv_pool_units(p, input, 6).units, r));
  });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("attention_pool matches a hand-rolled chain", "[layers]") {
  Rng rng(9);
  AttnParams p = attn_init(2, rng);
  Tensor C = tsu::random_tensor({3, 2}, rng);
  AttnPooled out = attention_pool(p, C);

  // reference: score_r = <tanh(W C_r + b), u>, alpha = softmax, sum
  std::vector<double> scores(3);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      double pr = p.b(i);
      for (std::size_t j = 0; j < 2; ++j) pr += p.w(i, j) * C(r, j);
      s += std::tanh(pr) * p.u(i);
    }
    scores[r] = s;
  }
  double mx = std::max({scores[0], scores[1], scores[2]});
  double z = 0.0;
  std::vector<double> alpha(3);
  for (std::size_t r = 0; r < 3; ++r) {
    alpha[r] = std::exp(scores[r] - mx);
    z += alpha[r];
  }
  for (auto& a : alpha) a /= z;
  for (std::size_t r = 0; r < 3; ++r)
    CHECK(tsu::near(out.weights[r], alpha[r], 1e-12));
  for (std::size_t j = 0; j < 2; ++j) {
    double acc = 0.0;
    for (std::size_t r = 0; r < 3; ++r) acc += alpha[r] * C(r, j);
    CHECK(tsu::near(out.vec(j), acc, 1e-12));
  }
}

TEST_CASE("attention weights sum to one and masked rows get zero",
          "[layers]") {
  Rng rng(91);
  AttnParams p = attn_init(3, rng);
  Tensor C = tsu::random_tensor({5, 3}, rng);
  AttnPooled out = attention_pool(p, C, {true, true, true, false, false});
  CHECK(out.weights[3] == 0.0);
  CHECK(out.weights[4] == 0.0);
  double s = 0.0;
  for (double w : out.weights) s += w;
  CHECK(tsu::near(s, 1.0, 1e-12));
  for (double w : out.weights) CHECK(w >= 0.0);
}

TEST_CASE("attention with everything masked falls back to all rows",
          "[layers]") {
  Rng rng(92);
  AttnParams p = attn_init(2, rng);
  Tensor C = tsu::random_tensor({3, 2}, rng);
  AttnPooled out = attention_pool(p, C, {false, false, false});
  double s = 0.0;
  for (double w : out.weights) s += w;
  CHECK(tsu::near(s, 1.0, 1e-12));
}

TEST_CASE("uniform pooling spreads weight evenly over real rows", "[layers]") {
  Rng rng(93);
  AttnParams p = attn_init(2, rng);
  Tensor C = tsu::random_tensor({4, 2}, rng);
  AttnPooled out = attention_pool(p, C, {true, true, true, false}, false);
  CHECK(tsu::near(out.weights[0], 1.0 / 3.0, 1e-12));
  CHECK(tsu::near(out.weights[1], 1.0 / 3.0, 1e-12));
  CHECK(tsu::near(out.weights[2], 1.0 / 3.0, 1e-12));
  CHECK(out.weights[3] == 0.0);
  for (std::size_t j = 0; j < 2; ++j) {
    double acc = (C(0, j) + C(1, j) + C(2, j)) / 3.0;
    CHECK(tsu::near(out.vec(j), acc, 1e-12));
  }
}

TEST_CASE("attention over the filter axis transposes the reduction",
          "[layers]") {
  Rng rng(94);
  AttnParams p = attn_init(4, rng);  // projection must match row length = P
  Tensor C = tsu::random_tensor({4, 3}, rng);
  AttnPooled out =
      attention_pool(p, C, {}, true, AttendOver::filters);
  REQUIRE(out.vec.shape() == Shape{4});
  REQUIRE(out.weights.size() == 3);
  double s = 0.0;
  for (double w : out.weights) s += w;
  CHECK(tsu::near(s, 1.0, 1e-12));
}

TEST_CASE("attention_pool gradients pass finite differences", "[layers]") {
  Rng rng(95);
  AttnParams p = attn_init(3, rng);
  Tensor C = tsu::random_tensor({4, 3}, rng);
  Tensor r = tsu::random_tensor({3}, rng);
  auto res = gradient_check(
      {{"w", &p.w}, {"b", &p.b}, {"u", &p.u}, {"C", &C}}, [&] {
        return sum(
            mul(attention_pool(p, C, {true, true, true, false}).vec, r));
      });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("dense_sigmoid is a sigmoid affine score", "[layers]") {
  Rng rng(2);
  DenseParams p = dense_init(4, rng);
  Tensor x = tsu::random_tensor({4}, rng);
  Tensor y = dense_sigmoid(p, x);
  double acc = p.b(0);
  for (std::size_t i = 0; i < 4; ++i) acc += p.w(i) * x(i);
  CHECK(tsu::near(y(0), 1.0 / (1.0 + std::exp(-acc)), 1e-12));
  CHECK(y(0) > 0.0);
  CHECK(y(0) < 1.0);
}

TEST_CASE("dense_sigmoid gradients pass finite differences", "[layers]") {
  Rng rng(21);
  DenseParams p = dense_init(5, rng);
  Tensor x = tsu::random_tensor({5}, rng);
  auto res = gradient_check({{"w", &p.w}, {"b", &p.b}, {"x", &x}},
                            [&] { return dense_sigmoid(p, x); });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("layer inits are deterministic in the seed", "[layers]") {
  Rng a(77), b(77);
  LstmParams pa = lstm_init(3, 2, a);
  LstmParams pb = lstm_init(3, 2, b);
  CHECK(pa.w_xg.values() == pb.w_xg.values());
  ConvParams ca = conv_init(4, 2, {2, 3}, 2, 1, a);
  ConvParams cb = conv_init(4, 2, {2, 3}, 2, 1, b);
  CHECK(ca.towers[1].layers[1].filters[1].values() ==
        cb.towers[1].layers[1].filters[1].values());
}
