#pragma once

#include <memory>
#include <string>

#include "heightformer/nn.hpp"

namespace heightformer {

struct DecoderConfig {
  int n_bins = 64;
  int query_dim = 256;
  int heads = 8;
  // Levels whose token count exceeds cap^2 are adaptively pooled to
  // cap x cap before cross-attention.
  int token_cap_side = 24;
  int pyramid_hidden = 0;  // 0 resolves to max(16, 2*n_bins)
  // literal: candidate heights are softmax(bin logits) themselves.
  // bin_centers: softmax(bin logits) are bin widths; candidates are the
  // cumulative bin centers.
  std::string bin_mode = "literal";
  bool fixed_bins = false;                  // ablation: constant candidates
  std::string fixed_partition = "uniform";  // uniform | log

  int resolved_pyramid_hidden() const {
    return pyramid_hidden > 0 ? pyramid_hidden : std::max(16, 2 * n_bins);
  }
  void validate() const;
};

enum class BinMode {
  Literal,     // candidates = softmax(bins)
  BinCenters,  // candidates = centers of softmax(bins) widths
  Values,      // bins already are candidate heights in [0,1]
};

BinMode parse_bin_mode(const std::string& s);

// Fixed candidate height values in [0,1] for the ablation path.
Tensor fixed_bin_values(int n, const std::string& partition);

// Softmaxes the per-pixel class logits, reduces them against the candidate
// height vector and rescales into [h_min, h_max] meters.
// bins: [N] (logits or values per `mode`), prob_logits: [H,W,N].
Var height_regression(Tape& t, Var bins, Var prob_logits, double h_min, double h_max,
                      BinMode mode = BinMode::Literal);

// Upsample -> 3x3 conv -> ReLU -> 1x1 conv -> norm.
struct ConvBlock {
  Conv2d conv3, conv1;
  ChannelNorm norm;
  ConvBlock() = default;
  ConvBlock(ParamStore& ps, const std::string& name, int64_t in_ch, int64_t hidden, int64_t out_ch,
            Rng& rng);
  Var operator()(Tape& t, Var x, int64_t out_h, int64_t out_w) const;
};

// Query refinement: cross-attention over the level's embedded feature
// tokens, self-attention, feed-forward; post-norm residuals throughout.
struct TransformerBlock {
  Linear embed;
  Linear ca_q, ca_k, ca_v, ca_proj;
  ChannelNorm norm1;
  Linear sa_q, sa_k, sa_v, sa_proj;
  ChannelNorm norm2;
  Linear ff1, ff2;
  ChannelNorm norm3;
  int heads = 8;
  int token_cap_side = 24;
  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, const std::string& name, int64_t level_channels, int64_t dim, int heads,
                   int token_cap_side, Rng& rng);
  // queries: [N, d]; level_feat: [h, w, C_level] -> [N, d]
  Var operator()(Tape& t, Var queries, Var level_feat) const;
};

// Interleaved conv/transformer pyramid producing the image-adaptive bin
// logits and the full-resolution class-probability volume.
class IcgDecoder {
 public:
  IcgDecoder(ParamStore& ps, const std::string& prefix, const DecoderConfig& cfg, int64_t input_channels,
             Rng& rng);

  struct Output {
    Var bin_logits;   // [N]
    Var prob_logits;  // [H, W, N]
  };
  // y_encoder: [H/16, W/16, input_channels]; out_h/out_w: input image dims.
  Output operator()(Tape& t, Var y_encoder, int64_t out_h, int64_t out_w) const;

  const DecoderConfig& config() const { return cfg_; }
  Param& queries() { return *queries_; }

 private:
  DecoderConfig cfg_;
  int64_t input_channels_;
  Param* queries_ = nullptr;
  ConvBlock level1_, level2_, level3_;
  TransformerBlock tb1_, tb2_, tb3_;
  Linear bin_head_;
};

}  // namespace heightformer
