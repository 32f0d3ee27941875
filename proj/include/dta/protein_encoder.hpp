#pragma once

#include <array>

#include "dta/nn.hpp"
#include "dta/ops.hpp"

namespace dta {

// The K x d_t salient activation matrix plus where each entry came from.
// Per-channel selection mixes positions across channels, so the source
// rows are retained for residue-level reporting.
struct SalientFeatures {
  Tensor values;                 // [K x d_t]
  IndexMatrix source_positions;  // [K x d_t], row index in H_conv
};

// Stacked conv feature extractor over the residue embedding followed by
// per-channel top-k selection.
class ProteinEncoder {
 public:
  ProteinEncoder(const ModelConfig& cfg, std::mt19937_64& init_rng);

  // embedding -> conv(same) -> relu -> conv(same) -> relu -> conv(valid)
  // -> relu -> dropout. Output length is L_t - (last width - 1).
  Tensor conv_stack(const std::vector<int>& tokens,
                    const ForwardOptions& opts) const;

  SalientFeatures extract_salient(const Tensor& h_conv, int k) const;

  Eigen::Index output_length(Eigen::Index input_length) const;

  void collect_parameters(const std::string& prefix, ParamList& out);

 private:
  struct ConvLayer {
    Tensor kernels, bias;
    Padding padding;
  };

  Scalar dropout_;
  Tensor embedding_;
  std::array<ConvLayer, 3> conv_;
};

}  // namespace dta
