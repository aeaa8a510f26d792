#include <doctest.h>

#include <cmath>

#include "heightformer/errors.hpp"
#include "heightformer/metrics.hpp"
#include "support/gradcheck.hpp"

using namespace heightformer;
using hftest::random_tensor;

namespace {

Tensor ones_mask(std::vector<int64_t> shape) { return Tensor::full(std::move(shape), 1.0); }

// Independent per-pixel loop oracle for all pooled metrics.
struct LoopOracle {
  double rel = 0, rmse_lit = 0, rmse_log = 0, d1 = 0, d2 = 0, d3 = 0;
};

LoopOracle naive_metrics(const std::vector<Tensor>& preds, const std::vector<Tensor>& gts,
                         const std::vector<Tensor>& masks, double shift, double eps) {
  double rel_sum = 0, lit_sum = 0, log_sum = 0;
  long long c1 = 0, c2 = 0, c3 = 0, n = 0;
  for (size_t k = 0; k < preds.size(); ++k) {
    for (int64_t i = 0; i < preds[k].numel(); ++i) {
      if (masks[k][i] <= 0.5) continue;
      const double p = preds[k][i] + shift;
      const double g = gts[k][i] + shift;
      if (g <= eps) continue;
      ++n;
      rel_sum += std::fabs(p - g) / g;
      lit_sum += (p - g) * (p - g);
      const double pc = std::max(p, eps);
      log_sum += std::pow(std::log(pc) - std::log(g), 2);
      if (p > eps) {
        const double r = std::max(pc / g, g / pc);
        if (r < 1.25) ++c1;
        if (r < 1.25 * 1.25) ++c2;
        if (r < 1.25 * 1.25 * 1.25) ++c3;
      }
    }
  }
  LoopOracle o;
  o.rel = rel_sum / n;
  o.rmse_lit = std::sqrt(lit_sum / n);
  o.rmse_log = std::sqrt(log_sum / n);
  o.d1 = double(c1) / n;
  o.d2 = double(c2) / n;
  o.d3 = double(c3) / n;
  return o;
}

}  // namespace

TEST_CASE("silog loss") {
  LossConfig cfg;  // alpha 10, lambda 0.85

  SUBCASE("zero for a perfect prediction") {
    Rng rng(3);
    Tensor gt = random_tensor(rng, {8, 8}, 1.0, 30.0);
    CHECK(silog_value(gt, gt, ones_mask({8, 8}), cfg) == doctest::Approx(0.0).epsilon(1e-12));
  }

  SUBCASE("constant log offset: silog(k*gt, gt) = alpha*|ln k|*sqrt(1-lambda)") {
    Rng rng(5);
    Tensor gt = random_tensor(rng, {16, 16}, 0.5, 50.0);
    Tensor mask = ones_mask({16, 16});
    for (double k : {0.5, 2.0, 10.0}) {
      Tensor pred = gt.clone();
      for (int64_t i = 0; i < pred.numel(); ++i) pred[i] *= k;
      const double expect = 10.0 * std::abs(std::log(k)) * std::sqrt(0.15);
      CHECK(silog_value(pred, gt, mask, cfg) == doctest::Approx(expect).epsilon(1e-9));
    }
    // spot value from the algebra: k=2 -> 10*ln2*sqrt(0.15)
    Tensor pred2 = gt.clone();
    for (int64_t i = 0; i < pred2.numel(); ++i) pred2[i] *= 2.0;
    CHECK(silog_value(pred2, gt, mask, cfg) == doctest::Approx(2.6845).epsilon(1e-4));
  }

  SUBCASE("lambda = 1 is invariant to global scaling") {
    Rng rng(7);
    LossConfig c1{10.0, 1.0};
    Tensor gt = random_tensor(rng, {12, 12}, 1.0, 20.0);
    Tensor pred = random_tensor(rng, {12, 12}, 1.0, 20.0);
    Tensor mask = ones_mask({12, 12});
    const double base = silog_value(pred, gt, mask, c1);
    for (double k : {0.5, 2.0, 10.0}) {
      Tensor scaled = pred.clone();
      for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= k;
      CHECK(silog_value(scaled, gt, mask, c1) == doctest::Approx(base).epsilon(1e-6));
    }
  }

  SUBCASE("non-negative on random inputs (lambda <= 1)") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor gt = random_tensor(rng, {6, 6}, 0.1, 40.0);
      Tensor pred = random_tensor(rng, {6, 6}, 0.1, 40.0);
      CHECK(silog_value(pred, gt, ones_mask({6, 6}), cfg) >= 0.0);
    }
  }

  SUBCASE("masking excludes pixels; empty mask is an error") {
    Rng rng(11);
    Tensor gt = random_tensor(rng, {4, 4}, 1.0, 5.0);
    Tensor pred = gt.clone();
    pred[3] = 1e6;  // huge error on a pixel we will mask out
    Tensor mask = ones_mask({4, 4});
    mask[3] = 0.0;
    CHECK(silog_value(pred, gt, mask, cfg) == doctest::Approx(0.0).epsilon(1e-12));
    Tape t;
    CHECK_THROWS_AS(silog_loss(t, t.input(pred), gt, Tensor::zeros({4, 4}), cfg), DataError);
  }

  SUBCASE("non-positive heights rejected") {
    Tensor gt = Tensor::full({2, 2}, 2.0);
    Tensor bad = gt.clone();
    bad[1] = -0.5;
    Tape t;
    CHECK_THROWS_AS(silog_loss(t, t.input(bad), gt, ones_mask({2, 2}), cfg), NumericError);
    CHECK_THROWS_AS(silog_loss(t, t.input(gt), bad, ones_mask({2, 2}), cfg), NumericError);
  }

  SUBCASE("gradient matches finite differences") {
    Rng rng(13);
    Tensor gt = random_tensor(rng, {5, 5}, 1.0, 10.0);
    Tensor pred = random_tensor(rng, {5, 5}, 1.0, 10.0);
    Tensor mask = ones_mask({5, 5});
    mask[7] = 0.0;
    auto f = [&](Tape& t, const std::vector<Var>& v) { return silog_loss(t, v[0], gt, mask, LossConfig{}); };
    CHECK(hftest::grad_check_inputs(f, {pred}) < 1e-4);
  }

  SUBCASE("pooled batch equals a single concatenated raster") {
    Rng rng(15);
    Tensor a = random_tensor(rng, {3, 4}, 1.0, 9.0);
    Tensor b = random_tensor(rng, {3, 4}, 1.0, 9.0);
    Tensor ga = random_tensor(rng, {3, 4}, 1.0, 9.0);
    Tensor gb = random_tensor(rng, {3, 4}, 1.0, 9.0);
    Tape t;
    double pooled =
        silog_loss_pooled(t, {t.input(a), t.input(b)}, {ga, gb}, {ones_mask({3, 4}), ones_mask({3, 4})},
                          LossConfig{})
            .val()[0];
    Tensor cat({6, 4}), gcat({6, 4});
    for (int64_t i = 0; i < 12; ++i) {
      cat[i] = a[i];
      cat[i + 12] = b[i];
      gcat[i] = ga[i];
      gcat[i + 12] = gb[i];
    }
    CHECK(silog_value(cat, gcat, ones_mask({6, 4}), LossConfig{}) == doctest::Approx(pooled).epsilon(1e-12));
  }
}

TEST_CASE("rel error") {
  SUBCASE("hand values") {
    Tensor gt = Tensor::from({1, 2}, {1.0, 1.0});
    Tensor pred = Tensor::from({1, 2}, {1.5, 0.5});
    CHECK(rel_error(pred, gt, ones_mask({1, 2})) == doctest::Approx(0.5));
    CHECK(rel_error(gt, gt, ones_mask({1, 2})) == doctest::Approx(0.0));
  }
  SUBCASE("tiny ground truth excluded with count") {
    Tensor gt = Tensor::from({1, 3}, {1.0, 0.0, 2.0});
    Tensor pred = Tensor::from({1, 3}, {1.1, 5.0, 2.2});
    int64_t excluded = 0;
    const double r = rel_error(pred, gt, ones_mask({1, 3}), 1e-6, &excluded);
    CHECK(excluded == 1);
    CHECK(r == doctest::Approx(0.1).epsilon(1e-9));
  }
  SUBCASE("empty mask") {
    Tensor x = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(rel_error(x, x, Tensor::zeros({2, 2})), DataError);
  }
}

TEST_CASE("rmse literal and log modes") {
  Tensor gt1 = Tensor::from({1, 1}, {1.0});
  Tensor pred2 = Tensor::from({1, 1}, {2.0});
  CHECK(rmse_log(pred2, gt1, ones_mask({1, 1}), RmseMode::Literal) == doctest::Approx(1.0));
  CHECK(rmse_log(pred2, gt1, ones_mask({1, 1}), RmseMode::Log) == doctest::Approx(std::log(2.0)));
  CHECK(rmse_log(gt1, gt1, ones_mask({1, 1}), RmseMode::Literal) == doctest::Approx(0.0));
  CHECK(rmse_log(gt1, gt1, ones_mask({1, 1}), RmseMode::Log) == doctest::Approx(0.0));

  // constant residual in literal mode gives |c|
  Rng rng(17);
  Tensor gt = random_tensor(rng, {4, 4}, 1.0, 5.0);
  Tensor pred = gt.clone();
  for (int64_t i = 0; i < pred.numel(); ++i) pred[i] -= 0.75;
  CHECK(rmse_log(pred, gt, ones_mask({4, 4}), RmseMode::Literal) == doctest::Approx(0.75).epsilon(1e-12));

  Tensor bad = gt.clone();
  bad[0] = -1.0;
  CHECK_THROWS_AS(rmse_log(bad, gt, ones_mask({4, 4}), RmseMode::Log), NumericError);
}

TEST_CASE("delta thresholds") {
  Tensor gt = Tensor::from({1, 1}, {1.0});
  Tensor pred = Tensor::from({1, 1}, {1.3});
  CHECK(delta_acc(pred, gt, ones_mask({1, 1}), 1) == doctest::Approx(0.0));
  CHECK(delta_acc(pred, gt, ones_mask({1, 1}), 2) == doctest::Approx(1.0));
  CHECK(delta_acc(pred, gt, ones_mask({1, 1}), 3) == doctest::Approx(1.0));
  CHECK(delta_acc(gt, gt, ones_mask({1, 1}), 1) == doctest::Approx(1.0));

  // near-zero prediction fails every threshold
  Tensor zero_pred = Tensor::from({1, 1}, {0.0});
  for (int i : {1, 2, 3}) CHECK(delta_acc(zero_pred, gt, ones_mask({1, 1}), i) == doctest::Approx(0.0));

  // nesting on random data
  Rng rng(19);
  Tensor g = random_tensor(rng, {8, 8}, 0.5, 10.0);
  Tensor p = random_tensor(rng, {8, 8}, 0.5, 10.0);
  const double d1 = delta_acc(p, g, ones_mask({8, 8}), 1);
  const double d2 = delta_acc(p, g, ones_mask({8, 8}), 2);
  const double d3 = delta_acc(p, g, ones_mask({8, 8}), 3);
  CHECK(d1 <= d2);
  CHECK(d2 <= d3);
}

TEST_CASE("evaluate") {
  SUBCASE("perfect single tile") {
    Rng rng(23);
    Tensor gt = random_tensor(rng, {8, 8}, 2.0, 30.0);
    MetricsReport r = evaluate({gt}, {gt}, {ones_mask({8, 8})}, /*h_min=*/0.0);
    CHECK(r.rel == doctest::Approx(0.0));
    CHECK(r.rmse_log == doctest::Approx(0.0));
    CHECK(r.delta1 == doctest::Approx(1.0));
    CHECK(r.delta2 == doctest::Approx(1.0));
    CHECK(r.delta3 == doctest::Approx(1.0));
    CHECK(r.valid_pixels == 64);
  }

  SUBCASE("equal-size tiles pool linearly") {
    Tensor gt = Tensor::full({4, 4}, 1.0);
    Tensor p1 = Tensor::full({4, 4}, 1.1);
    Tensor p2 = Tensor::full({4, 4}, 1.3);
    // h_min = 1 with offset 1 keeps heights unchanged
    MetricsReport r = evaluate({p1, p2}, {gt, gt}, {ones_mask({4, 4}), ones_mask({4, 4})}, 1.0);
    CHECK(r.rel == doctest::Approx(0.2).epsilon(1e-9));
    CHECK(r.per_tile.size() == 2);
    CHECK(r.per_tile[0].rel == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(r.per_tile[1].rel == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(r.tile_mean.rel == doctest::Approx(0.2).epsilon(1e-9));
  }

  SUBCASE("matches the naive loop oracle on 100 random 16x16 maps") {
    Rng rng(29);
    std::vector<Tensor> preds, gts, masks;
    for (int k = 0; k < 100; ++k) {
      preds.push_back(random_tensor(rng, {16, 16}, 0.0, 50.0));
      gts.push_back(random_tensor(rng, {16, 16}, 0.0, 50.0));
      Tensor m = ones_mask({16, 16});
      for (int64_t i = 0; i < 16; ++i) m[rng.uniform_int(256)] = 0.0;
      masks.push_back(m);
    }
    const double h_min = 0.0, offset = 1.0, eps = 1e-6;
    MetricsReport r = evaluate(preds, gts, masks, h_min, offset, eps);
    LoopOracle o = naive_metrics(preds, gts, masks, offset - h_min, eps);
    CHECK(std::abs(r.rel - o.rel) < 1e-9);
    CHECK(std::abs(r.rmse_log_literal - o.rmse_lit) < 1e-9);
    CHECK(std::abs(r.rmse_log - o.rmse_log) < 1e-9);
    CHECK(std::abs(r.delta1 - o.d1) < 1e-9);
    CHECK(std::abs(r.delta2 - o.d2) < 1e-9);
    CHECK(std::abs(r.delta3 - o.d3) < 1e-9);
  }

  SUBCASE("set size mismatch") {
    Tensor a = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(evaluate({a}, {a, a}, {a}, 0.0), DataError);
  }

  SUBCASE("json output is byte-stable and carries the fixed keys") {
    Rng rng(31);
    Tensor gt = random_tensor(rng, {6, 6}, 1.0, 9.0);
    Tensor pred = random_tensor(rng, {6, 6}, 1.0, 9.0);
    MetricsReport r1 = evaluate({pred}, {gt}, {ones_mask({6, 6})}, 0.0);
    MetricsReport r2 = evaluate({pred}, {gt}, {ones_mask({6, 6})}, 0.0);
    const std::string j1 = metrics_json(r1), j2 = metrics_json(r2);
    CHECK(j1 == j2);
    for (const char* key : {"\"rel\"", "\"rmse_log_literal\"", "\"rmse_log\"", "\"delta1\"", "\"delta2\"",
                            "\"delta3\"", "\"valid_pixels\"", "\"excluded_pixels\"", "\"offset_m\""})
      CHECK(j1.find(key) != std::string::npos);
    CHECK(metrics_table(r1).find("pooled") != std::string::npos);
  }
}
