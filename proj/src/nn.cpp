#include "dta/nn.hpp"

#include <cmath>

#include "dta/error.hpp"

namespace dta {

Tensor glorot_uniform(Shape shape, Eigen::Index fan_in, Eigen::Index fan_out,
                      std::mt19937_64& rng) {
  const Scalar bound =
      std::sqrt(6.0 / static_cast<Scalar>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (Eigen::Index i = 0; i < t.size(); ++i)
    t.values()[i] = uniform(rng, -bound, bound);
  return t;
}

Tensor GaussianNoise::draw(Eigen::Index dim) {
  Tensor t = Tensor::zeros({dim});
  for (Eigen::Index i = 0; i < dim; ++i) t.values()[i] = normal(*rng_);
  return t;
}

Tensor FixedNoise::draw(Eigen::Index dim) {
  if (next_ >= draws_.size())
    throw ContractError("FixedNoise exhausted after " +
                        std::to_string(draws_.size()) + " draws");
  const auto& v = draws_[next_++];
  if (static_cast<Eigen::Index>(v.size()) != dim)
    throw ShapeError("FixedNoise draw has " + std::to_string(v.size()) +
                     " entries, expected " + std::to_string(dim));
  return Tensor::vector(v);
}

ModelConfig ModelConfig::micro() {
  ModelConfig cfg;
  cfg.drug_len = 12;
  cfg.target_len = 24;
  cfg.drug_embed_dim = 8;
  cfg.target_embed_dim = 8;
  cfg.latent_dim = 6;
  cfg.drug_filters = 8;
  cfg.target_filters = 8;
  cfg.top_k = 2;
  cfg.heads = 2;
  cfg.mlp_hidden = {16, 8};
  cfg.dropout = 0.0;
  return cfg;
}

void ModelConfig::validate() const {
  if (drug_vocab_rows < 2 || target_vocab_rows < 2)
    throw ParameterError("ModelConfig: vocabulary rows not set");
  if (target_filters % heads != 0)
    throw ParameterError("ModelConfig: target_filters " +
                         std::to_string(target_filters) +
                         " not divisible by heads " + std::to_string(heads));
  if (drug_len < 1 || target_len < 1)
    throw ParameterError("ModelConfig: sequence lengths must be positive");
  if (sigma_floor <= 0.0)
    throw ParameterError("ModelConfig: sigma_floor (lambda) must be > 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ParameterError("ModelConfig: dropout outside [0, 1)");
  if (drug_widths.size() != 3 || target_widths.size() != 3)
    throw ParameterError("ModelConfig: encoders use three conv layers");
}

}  // namespace dta
