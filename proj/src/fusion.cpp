#include "dta/fusion.hpp"

#include <cmath>

namespace dta {

Tensor mse_loss(const Tensor& predicted, const Tensor& observed) {
  if (predicted.rank() != 1 || observed.rank() != 1 ||
      predicted.size() != observed.size())
    throw ShapeError("mse_loss: predicted " + shape_str(predicted.shape()) +
                     " and observed " + shape_str(observed.shape()) +
                     " must be equal-length vectors");
  Tensor d = sub(predicted, observed);
  return mean_all(mul(d, d));
}

FusionPredictor::FusionPredictor(const ModelConfig& cfg,
                                 std::mt19937_64& rng)
    : head_dim_(cfg.target_filters / cfg.heads),
      dropout_(cfg.dropout),
      ln_eps_(cfg.ln_eps) {
  const Eigen::Index dz = cfg.latent_dim, dt = cfg.target_filters;
  const Eigen::Index dh = head_dim_;

  auto make_view = [&](ViewParams& view) {
    view.context_weight = glorot_uniform({dz + dt, dt}, dz + dt, dt, rng);
    view.context_bias = Tensor::zeros({dt}, true);
    view.heads.resize(cfg.heads);
    for (auto& head : view.heads) {
      head.wq = glorot_uniform({dt, dh}, dt, dh, rng);
      head.bq = Tensor::zeros({dh}, true);
      head.wk = glorot_uniform({dt, dh}, dt, dh, rng);
      head.bk = Tensor::zeros({dh}, true);
      head.wv = glorot_uniform({dt, dh}, dt, dh, rng);
      head.bv = Tensor::zeros({dh}, true);
    }
    view.out_weight = glorot_uniform({dt, dt}, dt, dt, rng);
    view.out_bias = Tensor::zeros({dt}, true);
  };
  make_view(instance_);
  make_view(distribution_);

  ln_gain_ = Tensor::constant({2 * dt}, 1.0, true);
  ln_shift_ = Tensor::zeros({2 * dt}, true);

  Eigen::Index in = 2 * dt;
  for (int width : cfg.mlp_hidden) {
    MlpLayer layer;
    layer.weight = glorot_uniform({in, width}, in, width, rng);
    layer.bias = Tensor::zeros({width}, true);
    mlp_.push_back(layer);
    in = width;
  }
  MlpLayer head;
  head.weight = glorot_uniform({in, 1}, in, 1, rng);
  head.bias = Tensor::zeros({1}, true);
  mlp_.push_back(head);
}

Tensor FusionPredictor::build_context(const Tensor& z, const Tensor& h_t,
                                      View view) const {
  const ViewParams& p = view_params(view);
  Tensor joint = concat({row_broadcast(z, h_t.dim(0)), h_t}, 1);
  return relu(dense(joint, p.context_weight, p.context_bias));
}

FusionPredictor::Attention FusionPredictor::cross_attention(
    const Tensor& h_t, const Tensor& context, View view) const {
  const ViewParams& p = view_params(view);
  const Scalar inv_sqrt_dh = 1.0 / std::sqrt(static_cast<Scalar>(head_dim_));
  Attention result;
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(p.heads.size());
  for (const HeadParams& head : p.heads) {
    Tensor q = dense(h_t, head.wq, head.bq);
    Tensor k = dense(context, head.wk, head.bk);
    Tensor v = dense(context, head.wv, head.bv);
    Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_dh);
    Tensor weights = softmax_rows(scores);
    result.head_weights.push_back(weights);
    head_outputs.push_back(matmul(weights, v));
  }
  Tensor merged = concat(head_outputs, 1);
  result.output = dense(merged, p.out_weight, p.out_bias);
  return result;
}

Tensor FusionPredictor::predict(const Tensor& o_ins, const Tensor& o_dis,
                                const ForwardOptions& opts) const {
  if (o_ins.shape() != o_dis.shape())
    throw ShapeError("predict: view outputs " + shape_str(o_ins.shape()) +
                     " and " + shape_str(o_dis.shape()) + " differ");
  Tensor pooled = concat({mean(o_ins, 0), mean(o_dis, 0)}, 0);
  Tensor h = layer_norm(pooled, ln_gain_, ln_shift_, ln_eps_);
  const std::size_t hidden_count = mlp_.size() - 1;
  for (std::size_t i = 0; i < hidden_count; ++i) {
    h = relu(dense(h, mlp_[i].weight, mlp_[i].bias));
    // Dropout sits between hidden layers only.
    if (i + 1 < hidden_count && opts.train && dropout_ > 0.0)
      h = dropout(h, dropout_, true, opts.rng->stream(RngStream::kDropout));
  }
  return dense(h, mlp_.back().weight, mlp_.back().bias);
}

void FusionPredictor::collect_parameters(const std::string& prefix,
                                         ParamList& out) {
  auto add_view = [&](const char* tag, ViewParams& view) {
    const std::string base = prefix + "." + tag;
    out.push_back({base + ".context.weight", view.context_weight});
    out.push_back({base + ".context.bias", view.context_bias});
    for (std::size_t h = 0; h < view.heads.size(); ++h) {
      const std::string hb = base + ".head" + std::to_string(h);
      out.push_back({hb + ".wq", view.heads[h].wq});
      out.push_back({hb + ".bq", view.heads[h].bq});
      out.push_back({hb + ".wk", view.heads[h].wk});
      out.push_back({hb + ".bk", view.heads[h].bk});
      out.push_back({hb + ".wv", view.heads[h].wv});
      out.push_back({hb + ".bv", view.heads[h].bv});
    }
    out.push_back({base + ".out.weight", view.out_weight});
    out.push_back({base + ".out.bias", view.out_bias});
  };
  add_view("instance", instance_);
  add_view("distribution", distribution_);
  out.push_back({prefix + ".ln.gain", ln_gain_});
  out.push_back({prefix + ".ln.shift", ln_shift_});
  for (std::size_t i = 0; i < mlp_.size(); ++i) {
    const std::string base = prefix + ".mlp" + std::to_string(i);
    out.push_back({base + ".weight", mlp_[i].weight});
    out.push_back({base + ".bias", mlp_[i].bias});
  }
}

}  // namespace dta
