#pragma once

#include <random>
#include <string>
#include <vector>

#include "dta/rng.hpp"
#include "dta/tensor.hpp"

namespace dta {

// Named handle into a module's parameter storage. Pinned first rows
// (embedding padding) receive neither gradient updates nor weight decay.
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool pinned_first_row = false;
};
using ParamList = std::vector<ParamRef>;

// Uniform in +-sqrt(6 / (fan_in + fan_out)); biases start at zero.
Tensor glorot_uniform(Shape shape, Eigen::Index fan_in, Eigen::Index fan_out,
                      std::mt19937_64& rng);

// SES noise injection point. The default implementation draws standard
// normal vectors from a stream; tests substitute frozen draws.
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Tensor draw(Eigen::Index dim) = 0;
};

class GaussianNoise : public NoiseSource {
 public:
  explicit GaussianNoise(std::mt19937_64& rng) : rng_(&rng) {}
  Tensor draw(Eigen::Index dim) override;

 private:
  std::mt19937_64* rng_;
};

class FixedNoise : public NoiseSource {
 public:
  explicit FixedNoise(std::vector<std::vector<Scalar>> draws)
      : draws_(std::move(draws)) {}
  Tensor draw(Eigen::Index dim) override;

 private:
  std::vector<std::vector<Scalar>> draws_;
  std::size_t next_ = 0;
};

// Per-forward switches. Training requires an RNG pool (dropout and SES
// noise); evaluation touches no randomness at all.
struct ForwardOptions {
  bool train = false;
  RngPool* rng = nullptr;
  NoiseSource* noise_override = nullptr;
};

// Architecture description. The defaults are the full-scale settings;
// micro() is the small configuration used by the gradient and overfit
// suites.
struct ModelConfig {
  int drug_vocab_rows = 0;    // embedding rows incl. padding + unknown
  int target_vocab_rows = 0;
  int drug_len = 100;         // L_d
  int target_len = 1000;      // L_t
  int drug_embed_dim = 128;   // drug token embedding width
  int target_embed_dim = 128;
  int latent_dim = 96;        // d_z
  int drug_filters = 128;
  std::vector<int> drug_widths{4, 4, 4};
  int target_filters = 128;  // d_t
  std::vector<int> target_widths{4, 8, 12};
  int top_k = 4;
  int heads = 4;
  std::vector<int> mlp_hidden{1024, 512};
  double dropout = 0.1;
  double sigma_floor = 0.1;  // lambda, the lower bound on SES sigma
  double ln_eps = 1e-5;

  static ModelConfig micro();
  void validate() const;
};

}  // namespace dta
