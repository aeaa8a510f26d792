#include "heightformer/encoder.hpp"

#include <cmath>

#include "heightformer/errors.hpp"

namespace heightformer {

void EncoderConfig::validate() const {
  if (n_bins < 1) throw UsageError("encoder: n_bins must be >= 1");
  if (window < 1) throw UsageError("encoder: window must be >= 1");
  if (mlp_ratio < 1) throw UsageError("encoder: mlp_ratio must be >= 1");
  if (swin_embed_dim < 1) throw UsageError("encoder: swin_embed_dim must be >= 1");
  for (int i = 0; i < 3; ++i) {
    if (swin_depths[i] < 2 || swin_depths[i] % 2 != 0)
      throw UsageError("encoder: swin_depths entries must be positive and even");
    const int dim = swin_embed_dim << i;
    if (dim % swin_heads[i] != 0) throw UsageError("encoder: heads must divide stage width");
    if (conv_stage_widths[i] < 1 || conv_stage_blocks[i] < 1)
      throw UsageError("encoder: conv stage widths/blocks must be positive");
  }
  if (resolved_branch_channels() < 1) throw UsageError("encoder: branch_channels must be >= 1");
}

std::pair<uint64_t, uint64_t> attention_cost(uint64_t h, uint64_t w, uint64_t c, uint64_t m) {
  const uint64_t hw = h * w;
  const uint64_t shared = 4 * hw * c * c;
  const uint64_t msa = shared + 2 * hw * hw * c;
  const uint64_t fsa = shared + 2 * m * m * hw * c;
  return {msa, fsa};
}

Var window_shift(Tape& t, Var x, int64_t dy, int64_t dx) { return roll2d(x, dy, dx); }

Tensor build_window_mask(int64_t padded_h, int64_t padded_w, int64_t valid_h, int64_t valid_w, int window,
                         int shift_y, int shift_x) {
  const int64_t m = window;
  const bool padded = padded_h != valid_h || padded_w != valid_w;
  if (!padded && shift_y == 0 && shift_x == 0) return Tensor();

  const int64_t nh = padded_h / m, nw = padded_w / m;
  const int64_t tokens = m * m;
  // Region index of each rolled-canvas position; wrapped rows/cols (the last
  // `shift` valid lines) form their own region. Padded positions get -1.
  auto region = [&](int64_t y, int64_t x) -> int {
    if (y >= valid_h || x >= valid_w) return -1;
    const int ry = (shift_y > 0 && y >= valid_h - shift_y) ? 1 : 0;
    const int rx = (shift_x > 0 && x >= valid_w - shift_x) ? 1 : 0;
    return ry * 2 + rx;
  };

  Tensor mask({nh * nw, tokens, tokens});
  for (int64_t wy = 0; wy < nh; ++wy) {
    for (int64_t wx = 0; wx < nw; ++wx) {
      const int64_t widx = wy * nw + wx;
      for (int64_t i = 0; i < tokens; ++i) {
        const int ri = region(wy * m + i / m, wx * m + i % m);
        for (int64_t j = 0; j < tokens; ++j) {
          const int rj = region(wy * m + j / m, wx * m + j % m);
          const bool ok = rj >= 0 && (ri < 0 || ri == rj);
          mask.at(widx, i, j) = ok ? 0.0 : -1e9;
        }
      }
    }
  }
  return mask;
}

WindowAttention::WindowAttention(ParamStore& ps, const std::string& name, int64_t dim, int heads_,
                                 int window_, Rng& rng)
    : q(ps, name + ".q", dim, dim, rng),
      k(ps, name + ".k", dim, dim, rng),
      v(ps, name + ".v", dim, dim, rng),
      proj(ps, name + ".proj", dim, dim, rng),
      heads(heads_),
      window(window_) {
  if (dim % heads != 0) throw UsageError("attention: heads must divide channel count");
}

namespace {

// [H,W,C] -> [nW, M*M, C]
Var partition_windows(Tape& t, Var x, int64_t m) {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int64_t nh = h / m, nw = w / m;
  Var r = reshape(x, {nh, m, nw, m, c});
  r = permute(r, {0, 2, 1, 3, 4});
  return reshape(r, {nh * nw, m * m, c});
}

Var merge_windows(Tape& t, Var x, int64_t h, int64_t w, int64_t m) {
  const int64_t nh = h / m, nw = w / m, c = x.dim(2);
  Var r = reshape(x, {nh, nw, m, m, c});
  r = permute(r, {0, 2, 1, 3, 4});
  return reshape(r, {h, w, c});
}

// [B, T, C] -> [B*heads, T, C/heads]
Var split_heads(Tape& t, Var x, int64_t heads) {
  const int64_t b = x.dim(0), tok = x.dim(1), c = x.dim(2);
  Var r = reshape(x, {b, tok, heads, c / heads});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {b * heads, tok, c / heads});
}

Var join_heads(Tape& t, Var x, int64_t heads) {
  const int64_t bh = x.dim(0), tok = x.dim(1), dh = x.dim(2);
  Var r = reshape(x, {bh / heads, heads, tok, dh});
  r = permute(r, {0, 2, 1, 3});
  return reshape(r, {bh / heads, tok, heads * dh});
}

}  // namespace

Var WindowAttention::operator()(Tape& t, Var x, int shift) const {
  const int64_t h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int64_t m = window;
  const int shift_y = (shift > 0 && h > m) ? shift : 0;
  const int shift_x = (shift > 0 && w > m) ? shift : 0;

  Var cur = x;
  if (shift_y || shift_x) cur = roll2d(cur, -shift_y, -shift_x);
  const int64_t pad_h = (m - h % m) % m;
  const int64_t pad_w = (m - w % m) % m;
  if (pad_h || pad_w) cur = pad2d(cur, 0, static_cast<int>(pad_h), 0, static_cast<int>(pad_w));
  const int64_t hp = h + pad_h, wp = w + pad_w;

  Var win = partition_windows(t, cur, m);  // [nW, M*M, C]
  const int64_t n_windows = win.dim(0), tokens = win.dim(1);
  const int64_t dh = c / heads;

  Var qv = split_heads(t, reshape(q(t, reshape(win, {n_windows * tokens, c})), {n_windows, tokens, c}), heads);
  Var kv = split_heads(t, reshape(k(t, reshape(win, {n_windows * tokens, c})), {n_windows, tokens, c}), heads);
  Var vv = split_heads(t, reshape(v(t, reshape(win, {n_windows * tokens, c})), {n_windows, tokens, c}), heads);

  Var scores = bmatmul(scale(qv, 1.0 / std::sqrt(static_cast<double>(dh))), kv, false, true);
  Tensor mask = build_window_mask(hp, wp, h, w, static_cast<int>(m), shift_y, shift_x);
  if (mask.defined()) scores = add_window_mask(scores, mask, heads);
  Var attn = softmax_lastdim(scores);
  Var out = join_heads(t, bmatmul(attn, vv), heads);  // [nW, M*M, C]
  out = proj(t, reshape(out, {n_windows * tokens, c}));
  out = merge_windows(t, reshape(out, {n_windows, tokens, c}), hp, wp, m);

  if (pad_h || pad_w) out = crop2d(out, 0, 0, h, w);
  if (shift_y || shift_x) out = roll2d(out, shift_y, shift_x);
  return out;
}

SwinBlock::SwinBlock(ParamStore& ps, const std::string& name, int64_t dim, int heads, int window,
                     int mlp_ratio, bool shifted_, Rng& rng)
    : norm1(ps, name + ".norm1", dim),
      norm2(ps, name + ".norm2", dim),
      attn(ps, name + ".attn", dim, heads, window, rng),
      fc1(ps, name + ".mlp.fc1", dim, dim * mlp_ratio, rng),
      fc2(ps, name + ".mlp.fc2", dim * mlp_ratio, dim, rng),
      shifted(shifted_) {}

Var SwinBlock::operator()(Tape& t, Var x) const {
  const int shift = shifted ? attn.window / 2 : 0;
  x = add(x, attn(t, norm1(t, x), shift));
  x = add(x, fc2(t, gelu(fc1(t, norm2(t, x)))));
  return x;
}

SwinBlockPair::SwinBlockPair(ParamStore& ps, const std::string& name, int64_t dim, int heads, int window,
                             int mlp_ratio, Rng& rng)
    : first(ps, name + ".blk0", dim, heads, window, mlp_ratio, false, rng),
      second(ps, name + ".blk1", dim, heads, window, mlp_ratio, true, rng) {}

Var SwinBlockPair::operator()(Tape& t, Var x) const { return second(t, first(t, x)); }

PatchMerge::PatchMerge(ParamStore& ps, const std::string& name, int64_t in_dim, Rng& rng)
    : norm(ps, name + ".norm", 4 * in_dim),
      reduce(ps, name + ".reduce", 4 * in_dim, 2 * in_dim, rng, Init::TruncNormal, /*bias=*/false) {}

Var PatchMerge::operator()(Tape& t, Var x) const {
  Var x00 = stride2_slice2d(x, 0, 0);
  Var x10 = stride2_slice2d(x, 1, 0);
  Var x01 = stride2_slice2d(x, 0, 1);
  Var x11 = stride2_slice2d(x, 1, 1);
  Var cat = concat_lastdim({x00, x10, x01, x11});
  return reduce(t, norm(t, cat));
}

PixelBranch::PixelBranch(ParamStore& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng) {
  stem = Conv2d(ps, name + ".stem", 3, cfg.conv_stem_width, 7, 2, 3, rng);
  stem_norm = ChannelNorm(ps, name + ".stem_norm", cfg.conv_stem_width);
  int64_t in_ch = cfg.conv_stem_width;
  for (int s = 0; s < 3; ++s) {
    const int64_t width = cfg.conv_stage_widths[s];
    for (int b = 0; b < cfg.conv_stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string bn = name + ".s" + std::to_string(s + 1) + ".b" + std::to_string(b);
      Block blk;
      blk.conv1 = Conv2d(ps, bn + ".conv1", in_ch, width, 3, stride, 1, rng);
      blk.norm1 = ChannelNorm(ps, bn + ".norm1", width);
      blk.conv2 = Conv2d(ps, bn + ".conv2", width, width, 3, 1, 1, rng);
      blk.norm2 = ChannelNorm(ps, bn + ".norm2", width);
      blk.has_down = stride != 1 || in_ch != width;
      if (blk.has_down) {
        blk.down = Conv2d(ps, bn + ".down", in_ch, width, 1, stride, 0, rng);
        blk.down_norm = ChannelNorm(ps, bn + ".down_norm", width);
      }
      blocks.push_back(std::move(blk));
      in_ch = width;
    }
  }
  out_proj = Conv2d(ps, name + ".proj", in_ch, cfg.resolved_branch_channels(), 1, 1, 0, rng);
}

Var PixelBranch::operator()(Tape& t, Var image) const {
  Var x = maxpool2d(relu(stem_norm(t, stem(t, image))), 3, 2, 1);
  for (const Block& b : blocks) {
    Var identity = b.has_down ? b.down_norm(t, b.down(t, x)) : x;
    Var y = relu(b.norm1(t, b.conv1(t, x)));
    y = b.norm2(t, b.conv2(t, y));
    x = relu(add(y, identity));
  }
  return out_proj(t, x);
}

PatchBranch::PatchBranch(ParamStore& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng) {
  const int64_t e = cfg.swin_embed_dim;
  embed = Conv2d(ps, name + ".embed", 3, e, 4, 4, 0, rng);
  embed_norm = ChannelNorm(ps, name + ".embed_norm", e);
  for (int p = 0; p < cfg.swin_depths[0] / 2; ++p)
    stage1.emplace_back(ps, name + ".s1.p" + std::to_string(p), e, cfg.swin_heads[0], cfg.window,
                        cfg.mlp_ratio, rng);
  merge1 = PatchMerge(ps, name + ".merge1", e, rng);
  for (int p = 0; p < cfg.swin_depths[1] / 2; ++p)
    stage2.emplace_back(ps, name + ".s2.p" + std::to_string(p), 2 * e, cfg.swin_heads[1], cfg.window,
                        cfg.mlp_ratio, rng);
  merge2 = PatchMerge(ps, name + ".merge2", 2 * e, rng);
  for (int p = 0; p < cfg.swin_depths[2] / 2; ++p)
    stage3.emplace_back(ps, name + ".s3.p" + std::to_string(p), 4 * e, cfg.swin_heads[2], cfg.window,
                        cfg.mlp_ratio, rng);
  out_norm = ChannelNorm(ps, name + ".out_norm", 4 * e);
  out_proj = Conv2d(ps, name + ".proj", 4 * e, cfg.resolved_branch_channels(), 1, 1, 0, rng);
}

Var PatchBranch::operator()(Tape& t, Var image) const {
  Var x = embed_norm(t, embed(t, image));
  for (const auto& p : stage1) x = p(t, x);
  x = merge1(t, x);
  for (const auto& p : stage2) x = p(t, x);
  x = merge2(t, x);
  for (const auto& p : stage3) x = p(t, x);
  return out_proj(t, out_norm(t, x));
}

FeatureCoupling::FeatureCoupling(ParamStore& ps, const std::string& name, int64_t channels, int64_t hidden,
                                 bool sigmoid, Rng& rng)
    : fc1(ps, name + ".fc1", channels, hidden, rng),
      fc2(ps, name + ".fc2", hidden, channels, rng),
      sigmoid_gate(sigmoid) {}

Var FeatureCoupling::operator()(Tape& t, Var x_conv, Var x_attn) const {
  if (x_conv.dim(0) != x_attn.dim(0) || x_conv.dim(1) != x_attn.dim(1))
    throw ShapeError("coupling: branch spatial dims differ");
  if (x_conv.dim(2) != x_attn.dim(2)) throw ShapeError("coupling: branch channel counts differ");
  Var x = concat_lastdim({x_conv, x_attn});
  const int64_t c = x.dim(2);
  Var avg = reshape(global_avgpool(x), {1, c});
  Var mx = reshape(global_maxpool(x), {1, c});
  Var s = add(fc2(t, relu(fc1(t, avg))), fc2(t, relu(fc1(t, mx))));
  Var gate = sigmoid_gate ? vsigmoid(s) : softmax_lastdim(s);
  return mul_channels(x, reshape(gate, {c}));
}

MibEncoder::MibEncoder(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg),
      pixel_(ps, prefix + ".pixel", cfg, rng),
      patch_(ps, prefix + ".patch", cfg, rng),
      coupling_(ps, prefix + ".couple", cfg.fused_channels(), cfg.resolved_coupling_hidden(),
                cfg.sigmoid_gate, rng) {
  cfg_.validate();
}

Var MibEncoder::operator()(Tape& t, Var image) const {
  if (image.val().ndim() != 3 || image.dim(2) != 3)
    throw ShapeError("encoder: expected [H,W,3] image, got " + image.val().shape_str());
  if (image.dim(0) % 32 != 0 || image.dim(1) % 32 != 0)
    throw ShapeError("encoder: input dims must be divisible by 32, got " + image.val().shape_str());
  Var conv_feat = pixel_(t, image);
  Var attn_feat = patch_(t, image);
  return coupling_(t, conv_feat, attn_feat);
}

}  // namespace heightformer
