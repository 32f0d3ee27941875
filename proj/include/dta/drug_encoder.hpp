#pragma once

#include <array>
#include <utility>

#include "dta/nn.hpp"
#include "dta/ops.hpp"

namespace dta {

// The four latent quantities of the dual-view mechanism, plus the raw
// log-variance heads they came from.
struct DualViewLatent {
  Tensor mu_ins, h_var_ins, sigma_ins, z_ins;
  Tensor mu_dis, h_var_dis, sigma_dis, z_dis;
};

// Reparameterized sampling with a hard lower bound on sigma:
// sigma = lambda * exp(0.5 * relu(h_var)); train draws z = mu + noise*sigma,
// evaluation returns mu itself. Returns (z, sigma).
std::pair<Tensor, Tensor> ses_sample(const Tensor& mu, const Tensor& h_var,
                                     Scalar lambda, const Tensor& noise,
                                     bool train_mode);

// Dual-view drug encoder: a shared gated-conv encoder produces the
// instance-level latent; a transposed-conv stack expands that latent back
// to the embedding shape and the SAME encoder re-reads it for the
// distribution-level latent. No reconstruction loss anywhere.
class DrugEncoder {
 public:
  DrugEncoder(const ModelConfig& cfg, std::mt19937_64& init_rng);

  Tensor embed(const std::vector<int>& tokens) const;

  // Three stacked gated conv layers, same-padded: length is preserved.
  Tensor gated_block(const Tensor& x) const;

  // gated block -> dropout -> mean over the length axis -> (mu, h_var).
  std::pair<Tensor, Tensor> shared_encode(const Tensor& x,
                                          const ForwardOptions& opts) const;

  // Expands a latent vector to the exact embedding shape [L_d x d_e].
  Tensor remap(const Tensor& z) const;

  DualViewLatent dual_view(const std::vector<int>& tokens,
                           const ForwardOptions& opts,
                           NoiseSource& noise) const;

  void collect_parameters(const std::string& prefix, ParamList& out);

 private:
  struct GatedLayer {
    Tensor linear_kernels, linear_bias;
    Tensor gate_kernels, gate_bias;
  };
  struct DeconvLayer {
    Tensor kernels, bias;  // [W x C_out x C_in]
    Eigen::Index stride;
  };

  int latent_dim_;
  Scalar sigma_floor_;
  Scalar dropout_;

  Tensor embedding_;
  std::array<GatedLayer, 3> gated_;
  Tensor mu_weight_, mu_bias_;
  Tensor var_weight_, var_bias_;
  std::array<DeconvLayer, 3> deconv_;
};

}  // namespace dta
