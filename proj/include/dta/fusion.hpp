#pragma once

#include <vector>

#include "dta/nn.hpp"
#include "dta/ops.hpp"

namespace dta {

enum class View { kInstance, kDistribution };

// Mean squared error over two equal-length rank-1 tensors.
Tensor mse_loss(const Tensor& predicted, const Tensor& observed);

// Joint context construction, cross-view multi-head attention, and the
// prediction head. The two views carry separate parameter sets throughout.
class FusionPredictor {
 public:
  FusionPredictor(const ModelConfig& cfg, std::mt19937_64& init_rng);

  // relu([row-broadcast(z) || H_t] W + b) with the view's projection.
  Tensor build_context(const Tensor& z, const Tensor& h_t, View view) const;

  struct Attention {
    Tensor output;                     // [K x d_t]
    std::vector<Tensor> head_weights;  // per head, rows sum to 1
  };
  // H_t is the query; the joint context serves as both key and value.
  // Scaling uses the per-head key dimension.
  Attention cross_attention(const Tensor& h_t, const Tensor& context,
                            View view) const;

  // MLP(LN([mean(O_ins) || mean(O_dis)])), scalar output, no output
  // activation.
  Tensor predict(const Tensor& o_ins, const Tensor& o_dis,
                 const ForwardOptions& opts) const;

  void collect_parameters(const std::string& prefix, ParamList& out);

 private:
  struct HeadParams {
    Tensor wq, bq, wk, bk, wv, bv;
  };
  struct ViewParams {
    Tensor context_weight, context_bias;
    std::vector<HeadParams> heads;
    Tensor out_weight, out_bias;
  };
  struct MlpLayer {
    Tensor weight, bias;
  };

  const ViewParams& view_params(View v) const {
    return v == View::kInstance ? instance_ : distribution_;
  }

  Eigen::Index head_dim_;
  Scalar dropout_;
  Scalar ln_eps_;
  ViewParams instance_, distribution_;
  Tensor ln_gain_, ln_shift_;
  std::vector<MlpLayer> mlp_;
};

}  // namespace dta
