#include "dta/protein_encoder.hpp"

namespace dta {

ProteinEncoder::ProteinEncoder(const ModelConfig& cfg, std::mt19937_64& rng)
    : dropout_(cfg.dropout) {
  const Eigen::Index v = cfg.target_vocab_rows, e = cfg.target_embed_dim;
  const Eigen::Index f = cfg.target_filters;

  embedding_ = glorot_uniform({v, e}, v, e, rng);
  embedding_.values().segment(0, e).setZero();  // padding row pinned at zero

  Eigen::Index c_in = e;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Index w = cfg.target_widths[i];
    conv_[i].kernels = glorot_uniform({w, c_in, f}, w * c_in, w * f, rng);
    conv_[i].bias = Tensor::zeros({f}, true);
    conv_[i].padding = i < 2 ? Padding::kSame : Padding::kValid;
    c_in = f;
  }
}

Eigen::Index ProteinEncoder::output_length(Eigen::Index input_length) const {
  return input_length - (conv_[2].kernels.dim(0) - 1);
}

Tensor ProteinEncoder::conv_stack(const std::vector<int>& tokens,
                                  const ForwardOptions& opts) const {
  const Eigen::Index l = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index shrink = conv_[2].kernels.dim(0) - 1;
  if (l <= shrink)
    throw ParameterError("protein sequence too short: " + std::to_string(l) +
                         " tokens, the conv stack needs more than " +
                         std::to_string(shrink));
  Tensor h = embedding_lookup(embedding_, tokens, 0);
  for (const ConvLayer& layer : conv_)
    h = relu(conv1d(h, layer.kernels, layer.bias, layer.padding));
  if (opts.train && dropout_ > 0.0)
    h = dropout(h, dropout_, true, opts.rng->stream(RngStream::kDropout));
  return h;
}

SalientFeatures ProteinEncoder::extract_salient(const Tensor& h_conv,
                                                int k) const {
  TopK selected = topk_per_channel(h_conv, k);
  SalientFeatures out;
  out.values = selected.values;
  out.source_positions = selected.indices;
  return out;
}

void ProteinEncoder::collect_parameters(const std::string& prefix,
                                        ParamList& out) {
  out.push_back({prefix + ".embedding", embedding_, true});
  for (int i = 0; i < 3; ++i) {
    const std::string base = prefix + ".conv" + std::to_string(i + 1);
    out.push_back({base + ".kernels", conv_[i].kernels});
    out.push_back({base + ".bias", conv_[i].bias});
  }
}

}  // namespace dta
