#include <doctest.h>

#include <cmath>

#include "heightformer/decoder.hpp"
#include "heightformer/errors.hpp"
#include "support/gradcheck.hpp"

using namespace heightformer;
using hftest::random_tensor;

namespace {
DecoderConfig tiny_decoder_config(int n_bins, int d = 16) {
  DecoderConfig cfg;
  cfg.n_bins = n_bins;
  cfg.query_dim = d;
  cfg.heads = 4;
  cfg.token_cap_side = 6;
  return cfg;
}
}  // namespace

TEST_CASE("conv block follows the three-level shape schedule") {
  Rng rng(3);
  ParamStore ps;
  const int n = 4;
  const int hidden = 8;
  ConvBlock l1(ps, "l1", 64, hidden, 16 * n, rng);
  ConvBlock l2(ps, "l2", 16 * n, hidden, 4 * n, rng);
  ConvBlock l3(ps, "l3", 4 * n, hidden, n, rng);

  Tape t;
  Var y = t.input(random_tensor(rng, {4, 4, 64}));  // 64x64 image at stride 16
  Var p1 = l1(t, y, 4, 4);
  CHECK(p1.val().shape() == std::vector<int64_t>{4, 4, 16 * n});
  Var p2 = l2(t, p1, 16, 16);
  CHECK(p2.val().shape() == std::vector<int64_t>{16, 16, 4 * n});
  Var p3 = l3(t, p2, 64, 64);
  CHECK(p3.val().shape() == std::vector<int64_t>{64, 64, n});
}

TEST_CASE("relu output is non-negative") {
  Rng rng(5);
  Tape t;
  Var y = relu(t.input(random_tensor(rng, {6, 6, 3})));
  CHECK(y.val().min() >= 0.0);
}

TEST_CASE("transformer block") {
  Rng rng(7);

  SUBCASE("output shape is N x d at every level width") {
    for (int64_t level_c : {64, 16, 4}) {
      ParamStore ps;
      TransformerBlock tb(ps, "tb", level_c, 16, 4, 6, rng);
      Tape t;
      Var q = t.input(random_tensor(rng, {4, 16}));
      Var feat = t.input(random_tensor(rng, {8, 8, level_c}));
      CHECK(tb(t, q, feat).val().shape() == std::vector<int64_t>{4, 16});
    }
  }

  SUBCASE("identical tokens make cross-attention independent of the query projection") {
    ParamStore ps;
    TransformerBlock tb(ps, "tb", 8, 16, 4, 6, rng);
    Tensor q = random_tensor(rng, {4, 16});
    Tensor row = random_tensor(rng, {1, 1, 8});
    Tensor feat({5, 5, 8});
    for (int64_t i = 0; i < 25; ++i)
      for (int64_t c = 0; c < 8; ++c) feat[i * 8 + c] = row[c];

    Tape t1;
    Tensor out1 = tb(t1, t1.input(q), t1.input(feat)).val().clone();
    // scrambling the CA query projection must not change anything when all
    // keys are identical (attention weights are convex)
    Rng scramble(123);
    for (int64_t i = 0; i < tb.ca_q.w->value.numel(); ++i) tb.ca_q.w->value[i] = scramble.normal(0.0, 0.1);
    Tape t2;
    Tensor out2 = tb(t2, t2.input(q), t2.input(feat)).val().clone();
    for (int64_t i = 0; i < out1.numel(); ++i) CHECK(out1[i] == doctest::Approx(out2[i]).epsilon(1e-9));
  }

  SUBCASE("token cap pools oversized maps") {
    ParamStore ps;
    TransformerBlock tb(ps, "tb", 4, 16, 4, 2, rng);  // cap = 4 tokens
    Tape t;
    Var q = t.input(random_tensor(rng, {4, 16}));
    Var feat = t.input(random_tensor(rng, {8, 8, 4}));  // 64 tokens > 4
    CHECK(tb(t, q, feat).val().shape() == std::vector<int64_t>{4, 16});
  }

  SUBCASE("gradient vs finite differences on N=4, d=8, 3x3 feature map") {
    ParamStore ps;
    TransformerBlock tb(ps, "tb", 5, 8, 2, 6, rng);
    Tensor q = random_tensor(rng, {4, 8}, -0.5, 0.5);
    Tensor feat = random_tensor(rng, {3, 3, 5}, -0.5, 0.5);
    auto f = [&tb](Tape& t, const std::vector<Var>& v) { return tb(t, v[0], v[1]); };
    CHECK(hftest::grad_check_inputs(f, {q, feat}) < 1e-4);
    auto fp = [&tb, &q, &feat](Tape& t) { return tb(t, t.input(q), t.input(feat)); };
    CHECK(hftest::grad_check_params(fp, ps, 29, 1e-5, 8) < 1e-4);
  }
}

TEST_CASE("height regression") {
  Rng rng(11);

  SUBCASE("N=1: every pixel equals h_max") {
    Tape t;
    Var bins = t.input(random_tensor(rng, {1}));
    Var probs = t.input(random_tensor(rng, {3, 3, 1}));
    Var h = height_regression(t, bins, probs, 240.70033, 360.0037);
    for (int64_t i = 0; i < 9; ++i) CHECK(h.val()[i] == doctest::Approx(360.0037).epsilon(1e-12));
  }

  SUBCASE("N=2 uniform logits give the midpoint height") {
    Tape t;
    Var bins = t.input(Tensor::full({2}, 0.7));
    Var probs = t.input(Tensor::full({2, 2, 2}, -0.3));
    Var h = height_regression(t, bins, probs, 100.0, 200.0);
    for (int64_t i = 0; i < 4; ++i) CHECK(h.val()[i] == doctest::Approx(150.0).epsilon(1e-12));
  }

  SUBCASE("random logits stay within the height range; probabilities sum to 1") {
    const double h_min = -17.355, h_max = 106.171;
    const double slack = 1e-6 * (h_max - h_min);
    for (int trial = 0; trial < 1000; ++trial) {
      Tape t;
      t.set_grad_enabled(false);
      Var bins = t.input(random_tensor(rng, {5}, -6.0, 6.0));
      Var probs = t.input(random_tensor(rng, {2, 3, 5}, -6.0, 6.0));
      Var h = height_regression(t, bins, probs, h_min, h_max);
      CHECK(h.val().min() >= h_min - slack);
      CHECK(h.val().max() <= h_max + slack);
    }
    Tape t;
    Var probs = t.input(random_tensor(rng, {4, 4, 8}, -4.0, 4.0));
    Var p = softmax_lastdim(reshape(probs, {16, 8}));
    for (int64_t r = 0; r < 16; ++r) {
      double s = 0;
      for (int64_t i = 0; i < 8; ++i) s += p.val().at(r, i);
      CHECK(std::abs(s - 1.0) < 1e-5);
    }
  }

  SUBCASE("monotone response on a concentrated pixel") {
    // P mass concentrated on bin 1; raising bin-1's logit must not lower the height
    double prev = -1e9;
    for (double logit = -3.0; logit <= 3.0; logit += 0.25) {
      Tape t;
      Tensor b({3});
      b[0] = 0.2;
      b[1] = logit;
      b[2] = -0.4;
      Tensor pl({1, 1, 3});
      pl.at(0, 0, 0) = -8.0;
      pl.at(0, 0, 1) = 8.0;
      pl.at(0, 0, 2) = -8.0;
      Var h = height_regression(t, t.input(b), t.input(pl), 0.0, 1.0);
      CHECK(h.val()[0] >= prev - 1e-12);
      prev = h.val()[0];
    }
  }

  SUBCASE("bin_centers mode matches a hand computation") {
    Tape t;
    Tensor b = Tensor::from({3}, {0.1, 0.9, -0.4});
    Tensor pl = Tensor::from({1, 1, 3}, {0.3, -0.2, 0.5});
    Var h = height_regression(t, t.input(b), t.input(pl), 0.0, 1.0, BinMode::BinCenters);
    // manual: widths = softmax(b), centers_i = cumsum - w_i/2, probs = softmax(pl)
    double w[3], p[3], sw = 0, sp = 0;
    for (int i = 0; i < 3; ++i) sw += std::exp(b[i]);
    for (int i = 0; i < 3; ++i) w[i] = std::exp(b[i]) / sw;
    for (int i = 0; i < 3; ++i) sp += std::exp(pl[i]);
    for (int i = 0; i < 3; ++i) p[i] = std::exp(pl[i]) / sp;
    double cum = 0, expect = 0;
    for (int i = 0; i < 3; ++i) {
      cum += w[i];
      expect += (cum - w[i] / 2) * p[i];
    }
    CHECK(h.val()[0] == doctest::Approx(expect).epsilon(1e-12));
  }

  SUBCASE("fixed bin values") {
    Tensor u = fixed_bin_values(8, "uniform");
    CHECK(u[0] == doctest::Approx(0.0625));
    CHECK(u[7] == doctest::Approx(0.9375));
    for (int i = 1; i < 8; ++i) CHECK(u[i] - u[i - 1] == doctest::Approx(0.125));
    Tensor lg = fixed_bin_values(8, "log");
    for (int i = 1; i < 8; ++i) CHECK(lg[i] > lg[i - 1]);
    CHECK(lg.max() < 1.0);
    CHECK(lg.min() > 0.0);
  }

  SUBCASE("errors") {
    Tape t;
    Var bins = t.input(Tensor::zeros({4}));
    Var probs = t.input(Tensor::zeros({2, 2, 3}));
    CHECK_THROWS_AS(height_regression(t, bins, probs, 0.0, 1.0), ShapeError);
    Var probs4 = t.input(Tensor::zeros({2, 2, 4}));
    CHECK_THROWS_AS(height_regression(t, bins, probs4, 1.0, 1.0), DataError);
  }

  SUBCASE("gradient check") {
    Tensor b = random_tensor(rng, {4}, -1.0, 1.0);
    Tensor pl = random_tensor(rng, {3, 3, 4}, -1.0, 1.0);
    auto f = [](Tape& t, const std::vector<Var>& v) {
      return height_regression(t, v[0], v[1], 2.0, 12.0);
    };
    CHECK(hftest::grad_check_inputs(f, {b, pl}) < 1e-4);
  }
}

TEST_CASE("icg decoder end to end") {
  Rng rng(13);
  const int n = 8;
  DecoderConfig cfg = tiny_decoder_config(n);
  ParamStore ps;
  IcgDecoder dec(ps, "decoder", cfg, 12, rng);

  SUBCASE("shape chain for a 64x64 input") {
    Tape t;
    Var y = t.input(random_tensor(rng, {4, 4, 12}));
    auto out = dec(t, y, 64, 64);
    CHECK(out.bin_logits.val().shape() == std::vector<int64_t>{n});
    CHECK(out.prob_logits.val().shape() == std::vector<int64_t>{64, 64, n});
  }

  SUBCASE("different inputs give different bin sets; identical inputs identical ones") {
    Tensor y1 = random_tensor(rng, {4, 4, 12});
    Tensor y2 = random_tensor(rng, {4, 4, 12});
    Tape t1, t2, t3;
    Tensor b1 = dec(t1, t1.input(y1), 64, 64).bin_logits.val().clone();
    Tensor b2 = dec(t2, t2.input(y2), 64, 64).bin_logits.val().clone();
    Tensor b3 = dec(t3, t3.input(y1), 64, 64).bin_logits.val().clone();
    double diff12 = 0, diff13 = 0;
    for (int64_t i = 0; i < n; ++i) {
      diff12 += std::abs(b1[i] - b2[i]);
      diff13 += std::abs(b1[i] - b3[i]);
    }
    CHECK(diff12 > 1e-8);
    CHECK(diff13 == 0.0);
  }

  SUBCASE("schedule violations rejected") {
    Tape t;
    CHECK_THROWS_AS(dec(t, t.input(Tensor::zeros({4, 4, 12})), 60, 64), ShapeError);
    CHECK_THROWS_AS(dec(t, t.input(Tensor::zeros({4, 5, 12})), 64, 64), ShapeError);
    CHECK_THROWS_AS(dec(t, t.input(Tensor::zeros({4, 4, 11})), 64, 64), ShapeError);
  }

  SUBCASE("queries initialization is deterministic and within the truncation") {
    ParamStore ps1, ps2;
    Rng r1(7), r2(7);
    IcgDecoder d1(ps1, "d", cfg, 12, r1);
    IcgDecoder d2(ps2, "d", cfg, 12, r2);
    const Tensor& q1 = d1.queries().value;
    const Tensor& q2 = d2.queries().value;
    CHECK(q1.shape() == std::vector<int64_t>{n, 16});
    for (int64_t i = 0; i < q1.numel(); ++i) {
      CHECK(q1[i] == q2[i]);
      CHECK(std::abs(q1[i]) <= 2.0 * 0.02 + 1e-12);
    }
  }

  SUBCASE("full decoder gradient check on a 32x32, N=4 toy configuration") {
    DecoderConfig small = tiny_decoder_config(4, 8);
    small.heads = 2;
    small.pyramid_hidden = 6;
    ParamStore pst;
    Rng r(17);
    IcgDecoder toy(pst, "decoder", small, 8, r);
    Tensor y = random_tensor(r, {2, 2, 8}, -0.5, 0.5);
    auto f = [&toy](Tape& t, const std::vector<Var>& v) {
      auto out = toy(t, v[0], 32, 32);
      // couple both outputs into one differentiable map
      return concat_lastdim({reshape(out.bin_logits, {1, 4}),
                             reshape(adaptive_avgpool2d(out.prob_logits, 1, 1), {1, 4})});
    };
    CHECK(hftest::grad_check_inputs(f, {y}) < 1e-4);
  }
}
