#include "heightformer/decoder.hpp"

#include <cmath>

#include "heightformer/errors.hpp"

namespace heightformer {

void DecoderConfig::validate() const {
  if (n_bins < 1) throw UsageError("decoder: n_bins must be >= 1");
  if (query_dim < 1 || query_dim % heads != 0)
    throw UsageError("decoder: heads must divide query_dim");
  if (token_cap_side < 1) throw UsageError("decoder: token_cap_side must be >= 1");
  if (bin_mode != "literal" && bin_mode != "bin_centers")
    throw UsageError("decoder: bin_mode must be 'literal' or 'bin_centers'");
  if (fixed_partition != "uniform" && fixed_partition != "log")
    throw UsageError("decoder: fixed_partition must be 'uniform' or 'log'");
}

BinMode parse_bin_mode(const std::string& s) {
  if (s == "literal") return BinMode::Literal;
  if (s == "bin_centers") return BinMode::BinCenters;
  throw UsageError("unknown bin_mode: " + s);
}

Tensor fixed_bin_values(int n, const std::string& partition) {
  Tensor v({n});
  if (partition == "uniform") {
    for (int i = 0; i < n; ++i) v[i] = (i + 0.5) / n;
  } else if (partition == "log") {
    constexpr double kEps = 1e-2;
    for (int i = 0; i < n; ++i) v[i] = std::pow(kEps, 1.0 - (i + 0.5) / n);
  } else {
    throw UsageError("unknown fixed bin partition: " + partition);
  }
  return v;
}

Var height_regression(Tape& t, Var bins, Var prob_logits, double h_min, double h_max, BinMode mode) {
  if (h_max <= h_min) throw DataError("height_regression: degenerate height range");
  const int64_t n = bins.val().numel();
  if (prob_logits.val().ndim() != 3 || prob_logits.dim(2) != n)
    throw ShapeError("height_regression: bin count mismatch: bins " + std::to_string(n) +
                     " vs volume " + prob_logits.val().shape_str());
  const int64_t h = prob_logits.dim(0), w = prob_logits.dim(1);

  Var candidates;  // [N], values in [0,1]
  switch (mode) {
    case BinMode::Literal:
      candidates = reshape(softmax_lastdim(reshape(bins, {1, n})), {n, 1});
      break;
    case BinMode::BinCenters: {
      // centers_i = sum_{j<=i} w_j - w_i / 2 = (L - I/2) w
      Tensor lhalf({n, n});
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j <= i; ++j) lhalf.at(i, j) = (j == i) ? 0.5 : 1.0;
      Var widths = reshape(softmax_lastdim(reshape(bins, {1, n})), {n, 1});
      candidates = matmul(t.constant(lhalf), widths);
      break;
    }
    case BinMode::Values:
      candidates = reshape(bins, {n, 1});
      break;
  }

  Var probs = softmax_lastdim(reshape(prob_logits, {h * w, n}));
  Var unit = matmul(probs, candidates);  // [H*W, 1]
  Var meters = add_scalar(scale(unit, h_max - h_min), h_min);
  return reshape(meters, {h, w});
}

ConvBlock::ConvBlock(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t hidden, int64_t out_ch,
                     Rng& rng)
    : conv3(ps, name + ".conv3", in_ch, hidden, 3, 1, 1, rng),
      conv1(ps, name + ".conv1", hidden, out_ch, 1, 1, 0, rng),
      norm(ps, name + ".norm", out_ch) {}

Var ConvBlock::operator()(Tape& t, Var x, int64_t out_h, int64_t out_w) const {
  if (x.dim(0) != out_h || x.dim(1) != out_w) x = upsample_bilinear(x, static_cast<int>(out_h), static_cast<int>(out_w));
  Var y = relu(conv3(t, x));
  return norm(t, conv1(t, y));
}

TransformerBlock::TransformerBlock(ParamStore& ps, const std::string& name, int64_t level_channels,
                                   int64_t dim, int heads_, int token_cap_side_, Rng& rng)
    : embed(ps, name + ".embed", level_channels, dim, rng),
      ca_q(ps, name + ".ca.q", dim, dim, rng),
      ca_k(ps, name + ".ca.k", dim, dim, rng),
      ca_v(ps, name + ".ca.v", dim, dim, rng),
      ca_proj(ps, name + ".ca.proj", dim, dim, rng),
      norm1(ps, name + ".norm1", dim),
      sa_q(ps, name + ".sa.q", dim, dim, rng),
      sa_k(ps, name + ".sa.k", dim, dim, rng),
      sa_v(ps, name + ".sa.v", dim, dim, rng),
      sa_proj(ps, name + ".sa.proj", dim, dim, rng),
      norm2(ps, name + ".norm2", dim),
      ff1(ps, name + ".ff.fc1", dim, dim * 4, rng),
      ff2(ps, name + ".ff.fc2", dim * 4, dim, rng),
      norm3(ps, name + ".norm3", dim),
      heads(heads_),
      token_cap_side(token_cap_side_) {}

namespace {

// [T, d] -> [heads, T, dh]
Var heads_split(Var x, int64_t heads) {
  const int64_t tok = x.dim(0), d = x.dim(1);
  return permute(reshape(x, {tok, heads, d / heads}), {1, 0, 2});
}

Var heads_join(Var x) {
  const int64_t heads = x.dim(0), tok = x.dim(1), dh = x.dim(2);
  return reshape(permute(x, {1, 0, 2}), {tok, heads * dh});
}

// Multi-head attention between 2-D token stacks q:[Tq,d], kv:[Tk,d].
Var mha(Tape& t, Var qx, Var kx, Var vx, int64_t heads) {
  const int64_t d = qx.dim(1);
  const int64_t dh = d / heads;
  Var q = heads_split(qx, heads);
  Var k = heads_split(kx, heads);
  Var v = heads_split(vx, heads);
  Var scores = bmatmul(scale(q, 1.0 / std::sqrt(static_cast<double>(dh))), k, false, true);
  return heads_join(bmatmul(softmax_lastdim(scores), v));
}

}  // namespace

Var TransformerBlock::operator()(Tape& t, Var queries, Var level_feat) const {
  const int64_t h = level_feat.dim(0), w = level_feat.dim(1), c = level_feat.dim(2);
  Var feat = level_feat;
  const int64_t cap = static_cast<int64_t>(token_cap_side) * token_cap_side;
  if (h * w > cap) feat = adaptive_avgpool2d(feat, token_cap_side, token_cap_side);
  Var tokens = embed(t, reshape(feat, {feat.dim(0) * feat.dim(1), c}));

  Var ca = ca_proj(t, mha(t, ca_q(t, queries), ca_k(t, tokens), ca_v(t, tokens), heads));
  Var x = norm1(t, add(ca, queries));
  Var sa = sa_proj(t, mha(t, sa_q(t, x), sa_k(t, x), sa_v(t, x), heads));
  x = norm2(t, add(sa, x));
  Var ff = ff2(t, gelu(ff1(t, x)));
  return norm3(t, add(ff, x));
}

IcgDecoder::IcgDecoder(ParamStore& ps, const std::string& prefix, const DecoderConfig& cfg,
                       int64_t input_channels, Rng& rng)
    : cfg_(cfg), input_channels_(input_channels) {
  cfg_.validate();
  const int64_t n = cfg.n_bins;
  const int64_t d = cfg.query_dim;
  const int64_t hidden = cfg.resolved_pyramid_hidden();
  queries_ = &ps.create(prefix + ".queries", trunc_normal_init(rng, {n, d}));
  level1_ = ConvBlock(ps, prefix + ".level1", input_channels, hidden, 16 * n, rng);
  level2_ = ConvBlock(ps, prefix + ".level2", 16 * n, hidden, 4 * n, rng);
  level3_ = ConvBlock(ps, prefix + ".level3", 4 * n, hidden, n, rng);
  tb1_ = TransformerBlock(ps, prefix + ".tb1", 16 * n, d, cfg.heads, cfg.token_cap_side, rng);
  tb2_ = TransformerBlock(ps, prefix + ".tb2", 4 * n, d, cfg.heads, cfg.token_cap_side, rng);
  tb3_ = TransformerBlock(ps, prefix + ".tb3", n, d, cfg.heads, cfg.token_cap_side, rng);
  bin_head_ = Linear(ps, prefix + ".bin_head", d, 1, rng);
}

IcgDecoder::Output IcgDecoder::operator()(Tape& t, Var y_encoder, int64_t out_h, int64_t out_w) const {
  if (out_h % 16 != 0 || out_w % 16 != 0)
    throw ShapeError("decoder: output dims must be divisible by 16");
  if (y_encoder.val().ndim() != 3 || y_encoder.dim(0) != out_h / 16 || y_encoder.dim(1) != out_w / 16 ||
      y_encoder.dim(2) != input_channels_)
    throw ShapeError("decoder: encoder map " + y_encoder.val().shape_str() + " does not match schedule for " +
                     std::to_string(out_h) + "x" + std::to_string(out_w));

  Var p1 = level1_(t, y_encoder, out_h / 16, out_w / 16);
  Var q = tb1_(t, t.param(*queries_), p1);
  Var p2 = level2_(t, p1, out_h / 4, out_w / 4);
  q = tb2_(t, q, p2);
  Var p3 = level3_(t, p2, out_h, out_w);
  q = tb3_(t, q, p3);

  Output out;
  out.bin_logits = reshape(bin_head_(t, q), {static_cast<int64_t>(cfg_.n_bins)});
  out.prob_logits = p3;
  return out;
}

}  // namespace heightformer
