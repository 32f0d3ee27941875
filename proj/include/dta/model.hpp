#pragma once

#include "dta/data.hpp"
#include "dta/drug_encoder.hpp"
#include "dta/fusion.hpp"
#include "dta/protein_encoder.hpp"

namespace dta {

// Everything one forward pass produces, kept as live graph handles so
// callers can pull gradients (saliency) or replay the fusion stage.
struct ForwardTrace {
  Tensor yhat;  // [1]
  DualViewLatent latent;
  Tensor h_conv;
  SalientFeatures salient;
};

class DtaModel {
 public:
  DtaModel(const ModelConfig& cfg, std::mt19937_64& init_rng);

  ForwardTrace forward(const EncodedPair& pair,
                       const ForwardOptions& opts) const;

  // Fusion stage only, from an externally supplied feature map; used by
  // the saliency perturbation checks.
  Tensor predict_from_hconv(const DualViewLatent& latent,
                            const Tensor& h_conv,
                            const ForwardOptions& opts) const;

  const ModelConfig& config() const { return cfg_; }
  ParamList& parameters() { return params_; }
  const ParamList& parameters() const { return params_; }

  const DrugEncoder& drug() const { return drug_; }
  const ProteinEncoder& protein() const { return protein_; }
  const FusionPredictor& fusion() const { return fusion_; }

 private:
  ModelConfig cfg_;
  DrugEncoder drug_;
  ProteinEncoder protein_;
  FusionPredictor fusion_;
  ParamList params_;
};

}  // namespace dta
