#pragma once

#include <memory>
#include <string>

#include "heightformer/decoder.hpp"
#include "heightformer/encoder.hpp"

namespace heightformer {

struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  double h_min = 0.0;
  double h_max = 1.0;
  void validate() const;
};

// Full network: multilevel-interaction encoder feeding the image-adaptive
// classification-regression decoder.
class HeightFormerModel {
 public:
  HeightFormerModel(const ModelConfig& cfg, uint64_t seed);

  struct Output {
    Var bins;      // [N] logits, or fixed candidate values in fixed-bin mode
    Var probs;     // [H, W, N] logits
    Var height_m;  // [H, W] meters
  };
  Output forward(Tape& t, Var image) const;

  struct Prediction {
    Tensor height_m;     // [H, W]
    Tensor bins;         // [N]
    Tensor prob_logits;  // [H, W, N]
  };
  // Gradient-free single-tile forward.
  Prediction predict(const Tensor& image) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }
  const MibEncoder& encoder() const { return *encoder_; }
  const IcgDecoder& decoder() const { return *decoder_; }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::unique_ptr<MibEncoder> encoder_;
  std::unique_ptr<IcgDecoder> decoder_;
};

}  // namespace heightformer
