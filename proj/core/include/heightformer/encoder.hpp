#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "heightformer/nn.hpp"

namespace heightformer {

struct EncoderConfig {
  int n_bins = 64;
  // Per-branch output width; 0 resolves to 128 * n_bins. The fused map is
  // always twice this (channel concatenation of the two branches).
  int branch_channels = 0;

  // convolutional branch
  int conv_stem_width = 64;
  std::array<int, 3> conv_stage_widths{64, 128, 256};
  std::array<int, 3> conv_stage_blocks{2, 2, 2};

  // windowed-attention branch
  int swin_embed_dim = 96;
  std::array<int, 3> swin_depths{2, 2, 6};
  std::array<int, 3> swin_heads{3, 6, 12};
  int window = 7;
  int mlp_ratio = 4;

  // channel-attention coupling
  int coupling_hidden = 0;  // 0 resolves to max(fused/64, 8)
  bool sigmoid_gate = false;

  int resolved_branch_channels() const { return branch_channels > 0 ? branch_channels : 128 * n_bins; }
  int fused_channels() const { return 2 * resolved_branch_channels(); }
  int resolved_coupling_hidden() const {
    return coupling_hidden > 0 ? coupling_hidden : std::max(fused_channels() / 64, 8);
  }
  void validate() const;
};

// Operation counts of global multi-head self-attention vs the windowed
// variant on an h x w x C map with window side M: (msa_ops, fsa_ops).
std::pair<uint64_t, uint64_t> attention_cost(uint64_t h, uint64_t w, uint64_t c, uint64_t m);

// Cyclic spatial roll; inverse is the negated offset.
Var window_shift(Tape& t, Var x, int64_t dy, int64_t dx);

// Additive attention mask for one window grid: 0 where query i may attend
// key j, -1e9 otherwise (cross-wrap pairs after a shift, padded keys).
// Shape [num_windows, M*M, M*M]; all-zero masks are returned empty.
Tensor build_window_mask(int64_t padded_h, int64_t padded_w, int64_t valid_h, int64_t valid_w, int window,
                         int shift_y, int shift_x);

// Multi-head self-attention restricted to non-overlapping M x M windows.
struct WindowAttention {
  Linear q, k, v, proj;
  int heads = 1;
  int window = 7;
  WindowAttention() = default;
  WindowAttention(ParamStore& ps, const std::string& name, int64_t dim, int heads, int window, Rng& rng);
  // x: [H,W,C]; shift in cells (0 or M/2).
  Var operator()(Tape& t, Var x, int shift) const;
};

struct SwinBlock {
  ChannelNorm norm1, norm2;
  WindowAttention attn;
  Linear fc1, fc2;
  bool shifted = false;
  SwinBlock() = default;
  SwinBlock(ParamStore& ps, const std::string& name, int64_t dim, int heads, int window, int mlp_ratio,
            bool shifted, Rng& rng);
  Var operator()(Tape& t, Var x) const;
};

// Plain block followed by the shifted block; the unit the attention stages
// are stacked from.
struct SwinBlockPair {
  SwinBlock first, second;
  SwinBlockPair() = default;
  SwinBlockPair(ParamStore& ps, const std::string& name, int64_t dim, int heads, int window, int mlp_ratio,
                Rng& rng);
  Var operator()(Tape& t, Var x) const;
};

// 2x2 neighborhood concat -> norm -> linear 4C -> 2C.
struct PatchMerge {
  ChannelNorm norm;
  Linear reduce;
  PatchMerge() = default;
  PatchMerge(ParamStore& ps, const std::string& name, int64_t in_dim, Rng& rng);
  Var operator()(Tape& t, Var x) const;
};

// Residual conv stack truncated at stride 16, then 1x1 projection.
struct PixelBranch {
  struct Block {
    Conv2d conv1, conv2;
    ChannelNorm norm1, norm2;
    Conv2d down;
    ChannelNorm down_norm;
    bool has_down = false;
  };
  Conv2d stem;
  ChannelNorm stem_norm;
  std::vector<Block> blocks;
  Conv2d out_proj;
  PixelBranch() = default;
  PixelBranch(ParamStore& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Var operator()(Tape& t, Var image) const;
};

// Hierarchical windowed-attention stack (strides 4/8/16), then 1x1 projection.
struct PatchBranch {
  Conv2d embed;
  ChannelNorm embed_norm;
  std::vector<SwinBlockPair> stage1, stage2, stage3;
  PatchMerge merge1, merge2;
  ChannelNorm out_norm;
  Conv2d out_proj;
  PatchBranch() = default;
  PatchBranch(ParamStore& ps, const std::string& name, const EncoderConfig& cfg, Rng& rng);
  Var operator()(Tape& t, Var image) const;
};

// Channel attention over the stacked branch features: shared MLP on pooled
// descriptors, normalized gate, channel-wise reweighting.
struct FeatureCoupling {
  Linear fc1, fc2;
  bool sigmoid_gate = false;
  FeatureCoupling() = default;
  FeatureCoupling(ParamStore& ps, const std::string& name, int64_t channels, int64_t hidden, bool sigmoid,
                  Rng& rng);
  Var operator()(Tape& t, Var x_conv, Var x_attn) const;
};

class MibEncoder {
 public:
  MibEncoder(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);
  // image: [H,W,3], H and W divisible by 32 -> [H/16, W/16, fused_channels].
  Var operator()(Tape& t, Var image) const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  PixelBranch pixel_;
  PatchBranch patch_;
  FeatureCoupling coupling_;
};

}  // namespace heightformer
