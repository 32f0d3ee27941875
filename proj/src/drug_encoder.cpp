#include "dta/drug_encoder.hpp"

#include <cmath>

namespace dta {

std::pair<Tensor, Tensor> ses_sample(const Tensor& mu, const Tensor& h_var,
                                     Scalar lambda, const Tensor& noise,
                                     bool train_mode) {
  if (!(lambda > 0.0))
    throw ParameterError("ses_sample: lambda must be > 0, got " +
                         std::to_string(lambda));
  Tensor sigma = scale(exp(scale(relu(h_var), 0.5)), lambda);
  if (!train_mode) return {mu, sigma};  // z equals mu exactly
  if (!noise.defined())
    throw ContractError("ses_sample: training mode requires a noise vector");
  Tensor z = add(mu, mul(noise, sigma));
  return {z, sigma};
}

namespace {

// Three transposed-conv layers have to grow length 1 into exactly L. The
// intermediate lengths follow a cube-root progression; widths then fall
// out of (l_in - 1) * stride + w = l_out.
struct DeconvPlan {
  Eigen::Index lengths[4];  // 1, l1, l2, L
  Eigen::Index widths[3];
  Eigen::Index strides[3];
};

DeconvPlan plan_deconv(Eigen::Index target_len) {
  if (target_len < 3)
    throw ParameterError(
        "remap: three transposed-conv layers cannot reach length " +
        std::to_string(target_len) + "; achievable lengths are >= 3");
  DeconvPlan plan;
  const double cbrt = std::cbrt(static_cast<double>(target_len));
  Eigen::Index l1 =
      std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::llround(cbrt)));
  Eigen::Index l2 = std::max<Eigen::Index>(
      l1 + 1, static_cast<Eigen::Index>(std::llround(cbrt * cbrt)));
  l1 = std::min<Eigen::Index>(l1, target_len - 1);
  l2 = std::min<Eigen::Index>(l2, target_len);
  if (l2 <= l1) l2 = l1 + 1;
  if (l2 > target_len)
    throw ParameterError(
        "remap: three transposed-conv layers cannot reach length " +
        std::to_string(target_len) + "; achievable lengths are >= 3");
  plan.lengths[0] = 1;
  plan.lengths[1] = l1;
  plan.lengths[2] = l2;
  plan.lengths[3] = target_len;
  // Layer 1 starts from length 1, so any stride works and width == l1.
  plan.strides[0] = 1;
  plan.widths[0] = l1;
  for (int i = 1; i < 3; ++i) {
    const Eigen::Index in = plan.lengths[i], out = plan.lengths[i + 1];
    plan.strides[i] = (out - 1) / (in - 1);
    plan.widths[i] = out - (in - 1) * plan.strides[i];
  }
  return plan;
}

}  // namespace

DrugEncoder::DrugEncoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : latent_dim_(cfg.latent_dim),
      sigma_floor_(cfg.sigma_floor),
      dropout_(cfg.dropout) {
  const Eigen::Index v = cfg.drug_vocab_rows, e = cfg.drug_embed_dim;
  const Eigen::Index f = cfg.drug_filters, z = cfg.latent_dim;

  embedding_ = glorot_uniform({v, e}, v, e, rng);
  embedding_.values().segment(0, e).setZero();  // padding row pinned at zero

  Eigen::Index c_in = e;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Index w = cfg.drug_widths[i];
    gated_[i].linear_kernels =
        glorot_uniform({w, c_in, f}, w * c_in, w * f, rng);
    gated_[i].linear_bias = Tensor::zeros({f}, true);
    gated_[i].gate_kernels =
        glorot_uniform({w, c_in, f}, w * c_in, w * f, rng);
    gated_[i].gate_bias = Tensor::zeros({f}, true);
    c_in = f;
  }

  mu_weight_ = glorot_uniform({f, z}, f, z, rng);
  mu_bias_ = Tensor::zeros({z}, true);
  var_weight_ = glorot_uniform({f, z}, f, z, rng);
  var_bias_ = Tensor::zeros({z}, true);

  const DeconvPlan plan = plan_deconv(cfg.drug_len);
  Eigen::Index dc_in = z;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Index w = plan.widths[i];
    deconv_[i].kernels = glorot_uniform({w, e, dc_in}, w * dc_in, w * e, rng);
    deconv_[i].bias = Tensor::zeros({e}, true);
    deconv_[i].stride = plan.strides[i];
    dc_in = e;
  }
}

Tensor DrugEncoder::embed(const std::vector<int>& tokens) const {
  return embedding_lookup(embedding_, tokens, 0);
}

Tensor DrugEncoder::gated_block(const Tensor& x) const {
  Tensor h = x;
  for (const GatedLayer& layer : gated_) {
    Tensor lin = conv1d(h, layer.linear_kernels, layer.linear_bias,
                        Padding::kSame);
    Tensor gate =
        conv1d(h, layer.gate_kernels, layer.gate_bias, Padding::kSame);
    h = mul(lin, sigmoid(gate));
  }
  return h;
}

std::pair<Tensor, Tensor> DrugEncoder::shared_encode(
    const Tensor& x, const ForwardOptions& opts) const {
  Tensor h = gated_block(x);
  if (opts.train && dropout_ > 0.0)
    h = dropout(h, dropout_, true, opts.rng->stream(RngStream::kDropout));
  Tensor pooled = mean(h, 0);
  return {dense(pooled, mu_weight_, mu_bias_),
          dense(pooled, var_weight_, var_bias_)};
}

Tensor DrugEncoder::remap(const Tensor& z) const {
  Tensor h = reshape(z, {1, latent_dim_});
  for (std::size_t i = 0; i < deconv_.size(); ++i) {
    h = conv1d_transposed(h, deconv_[i].kernels, deconv_[i].bias,
                          deconv_[i].stride);
    if (i + 1 < deconv_.size()) h = relu(h);
  }
  return h;
}

DualViewLatent DrugEncoder::dual_view(const std::vector<int>& tokens,
                                      const ForwardOptions& opts,
                                      NoiseSource& noise) const {
  DualViewLatent out;
  Tensor x = embed(tokens);

  auto [mu_ins, h_var_ins] = shared_encode(x, opts);
  Tensor eps_ins = opts.train ? noise.draw(latent_dim_) : Tensor();
  auto [z_ins, sigma_ins] =
      ses_sample(mu_ins, h_var_ins, sigma_floor_, eps_ins, opts.train);

  Tensor remapped = remap(z_ins);
  auto [mu_dis, h_var_dis] = shared_encode(remapped, opts);
  // A fresh, independent draw for the distribution-level sample.
  Tensor eps_dis = opts.train ? noise.draw(latent_dim_) : Tensor();
  auto [z_dis, sigma_dis] =
      ses_sample(mu_dis, h_var_dis, sigma_floor_, eps_dis, opts.train);

  out.mu_ins = mu_ins;
  out.h_var_ins = h_var_ins;
  out.sigma_ins = sigma_ins;
  out.z_ins = z_ins;
  out.mu_dis = mu_dis;
  out.h_var_dis = h_var_dis;
  out.sigma_dis = sigma_dis;
  out.z_dis = z_dis;

  // The floor holds by construction; asserted on every pass.
  if (out.sigma_ins.values().minCoeff() < sigma_floor_ ||
      out.sigma_dis.values().minCoeff() < sigma_floor_)
    throw ContractError("SES sigma fell below its lower bound");
  return out;
}

void DrugEncoder::collect_parameters(const std::string& prefix,
                                     ParamList& out) {
  out.push_back({prefix + ".embedding", embedding_, true});
  for (int i = 0; i < 3; ++i) {
    const std::string base = prefix + ".gated" + std::to_string(i + 1);
    out.push_back({base + ".linear.kernels", gated_[i].linear_kernels});
    out.push_back({base + ".linear.bias", gated_[i].linear_bias});
    out.push_back({base + ".gate.kernels", gated_[i].gate_kernels});
    out.push_back({base + ".gate.bias", gated_[i].gate_bias});
  }
  out.push_back({prefix + ".mu.weight", mu_weight_});
  out.push_back({prefix + ".mu.bias", mu_bias_});
  out.push_back({prefix + ".var.weight", var_weight_});
  out.push_back({prefix + ".var.bias", var_bias_});
  for (int i = 0; i < 3; ++i) {
    const std::string base = prefix + ".deconv" + std::to_string(i + 1);
    out.push_back({base + ".kernels", deconv_[i].kernels});
    out.push_back({base + ".bias", deconv_[i].bias});
  }
}

}  // namespace dta
