#pragma once

#include <random>
#include <vector>

#include "dta/tensor.hpp"

namespace dta {

enum class Padding { kValid, kSame };

// Per-channel selection result: column c of `values` holds the k largest
// entries of column c of the input, non-increasing; `indices` holds their
// source rows (ties resolved to the smaller row index).
struct TopK {
  Tensor values;        // [k x C]
  IndexMatrix indices;  // [k x C]
};

// Elementwise
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar c);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x [R x K] (or rank-1 [K]) times weight [K x C] plus bias [C].
Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias);

// Structure
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor row_broadcast(const Tensor& v, Eigen::Index rows);
Tensor mean(const Tensor& a, int axis);
Tensor mean_all(const Tensor& a);
Tensor sum_all(const Tensor& a);

// Lookup / regularization
// Row `padding_index` of the table never receives gradient.
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens,
                        int padding_index = 0);
// Inverted dropout; identity (same handle) when train is false.
Tensor dropout(const Tensor& a, Scalar rate, bool train, std::mt19937_64& rng);

// Sequence ops
// input [L x C_in], kernels [W x C_in x C_out], bias [C_out].
// Same padding is symmetric with the extra zero on the right for even W.
Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              Padding padding);
// input [L x C_in], kernels [W x C_out x C_in]; output length (L-1)*stride+W.
// Adjoint of the corresponding strided valid convolution (scatter-add).
Tensor conv1d_transposed(const Tensor& input, const Tensor& kernels,
                         const Tensor& bias, Eigen::Index stride);
TopK topk_per_channel(const Tensor& input, Eigen::Index k);
Tensor softmax_rows(const Tensor& input);
// Normalizes the last dimension to zero mean / unit variance (population
// variance, eps-guarded), then applies gain and shift elementwise.
Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& shift,
                  Scalar eps);

}  // namespace dta
