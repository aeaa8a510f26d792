#include "heightformer/model.hpp"

#include "heightformer/errors.hpp"

namespace heightformer {

void ModelConfig::validate() const {
  encoder.validate();
  decoder.validate();
  if (encoder.n_bins != decoder.n_bins)
    throw UsageError("model: encoder and decoder bin counts differ");
  if (h_max <= h_min) throw DataError("model: degenerate height range");
}

HeightFormerModel::HeightFormerModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  encoder_ = std::make_unique<MibEncoder>(params_, "encoder", cfg_.encoder, rng);
  decoder_ = std::make_unique<IcgDecoder>(params_, "decoder", cfg_.decoder, cfg_.encoder.fused_channels(), rng);
}

HeightFormerModel::Output HeightFormerModel::forward(Tape& t, Var image) const {
  const int64_t h = image.dim(0), w = image.dim(1);
  Var y = (*encoder_)(t, image);
  IcgDecoder::Output dec = (*decoder_)(t, y, h, w);

  Output out;
  out.probs = dec.prob_logits;
  if (cfg_.decoder.fixed_bins) {
    out.bins = t.constant(fixed_bin_values(cfg_.decoder.n_bins, cfg_.decoder.fixed_partition));
    out.height_m = height_regression(t, out.bins, out.probs, cfg_.h_min, cfg_.h_max, BinMode::Values);
  } else {
    out.bins = dec.bin_logits;
    out.height_m = height_regression(t, out.bins, out.probs, cfg_.h_min, cfg_.h_max,
                                     parse_bin_mode(cfg_.decoder.bin_mode));
  }
  return out;
}

HeightFormerModel::Prediction HeightFormerModel::predict(const Tensor& image) const {
  Tape t;
  t.set_grad_enabled(false);
  Output out = forward(t, t.input(image));
  Prediction p;
  p.height_m = out.height_m.val();
  p.bins = out.bins.val();
  p.prob_logits = out.probs.val();
  return p;
}

}  // namespace heightformer
