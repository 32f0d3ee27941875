#include "dta/model.hpp"

#include <optional>

namespace dta {

namespace {

struct NoNoise : NoiseSource {
  Tensor draw(Eigen::Index) override {
    throw ContractError("SES noise requested in evaluation mode");
  }
};

}  // namespace

DtaModel::DtaModel(const ModelConfig& cfg, std::mt19937_64& init_rng)
    : cfg_((cfg.validate(), cfg)),
      drug_(cfg, init_rng),
      protein_(cfg, init_rng),
      fusion_(cfg, init_rng) {
  drug_.collect_parameters("drug", params_);
  protein_.collect_parameters("protein", params_);
  fusion_.collect_parameters("fusion", params_);
}

ForwardTrace DtaModel::forward(const EncodedPair& pair,
                               const ForwardOptions& opts) const {
  if (opts.train && opts.rng == nullptr)
    throw ContractError("training forward requires an RNG pool");

  NoNoise no_noise;
  std::optional<GaussianNoise> gaussian;
  NoiseSource* noise = opts.noise_override;
  if (noise == nullptr) {
    if (opts.train) {
      gaussian.emplace(opts.rng->stream(RngStream::kSesNoise));
      noise = &*gaussian;
    } else {
      noise = &no_noise;
    }
  }

  ForwardTrace trace;
  trace.latent = drug_.dual_view(pair.drug_tokens, opts, *noise);
  trace.h_conv = protein_.conv_stack(pair.target_tokens, opts);
  trace.salient = protein_.extract_salient(trace.h_conv, cfg_.top_k);

  Tensor c_ins = fusion_.build_context(trace.latent.z_ins,
                                       trace.salient.values, View::kInstance);
  Tensor c_dis = fusion_.build_context(
      trace.latent.z_dis, trace.salient.values, View::kDistribution);
  Tensor o_ins =
      fusion_.cross_attention(trace.salient.values, c_ins, View::kInstance)
          .output;
  Tensor o_dis = fusion_
                     .cross_attention(trace.salient.values, c_dis,
                                      View::kDistribution)
                     .output;
  trace.yhat = fusion_.predict(o_ins, o_dis, opts);
  return trace;
}

Tensor DtaModel::predict_from_hconv(const DualViewLatent& latent,
                                    const Tensor& h_conv,
                                    const ForwardOptions& opts) const {
  SalientFeatures salient = protein_.extract_salient(h_conv, cfg_.top_k);
  Tensor c_ins =
      fusion_.build_context(latent.z_ins, salient.values, View::kInstance);
  Tensor c_dis = fusion_.build_context(latent.z_dis, salient.values,
                                       View::kDistribution);
  Tensor o_ins =
      fusion_.cross_attention(salient.values, c_ins, View::kInstance).output;
  Tensor o_dis =
      fusion_.cross_attention(salient.values, c_dis, View::kDistribution)
          .output;
  return fusion_.predict(o_ins, o_dis, opts);
}

}  // namespace dta
