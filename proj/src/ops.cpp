#include "dta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "dta/rng.hpp"

namespace dta {

namespace {

using NodePtr = std::shared_ptr<TensorNode>;

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::active()) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->grad_enabled()) return true;
  return false;
}

// Gradient of `node` if backward reached it, nullptr otherwise.
const Array* incoming(const NodePtr& node) {
  return node->grad.size() == node->values.size() ? &node->grad : nullptr;
}

void accumulate(const NodePtr& node, const Array& g) {
  if (!node->grad_enabled) return;
  node->ensure_grad();
  node->grad += g;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": operand shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

MatMap as_matrix(Array& a, Eigen::Index r, Eigen::Index c) {
  return MatMap(a.data(), r, c);
}
ConstMatMap as_matrix(const Array& a, Eigen::Index r, Eigen::Index c) {
  return ConstMatMap(a.data(), r, c);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::from_array(a.shape(), Array(a.values() + b.values()));
  if (recording({&a, &b})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record("add", [an, bn, on] {
      if (const Array* g = incoming(on)) {
        accumulate(an, *g);
        accumulate(bn, *g);
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  Tensor out = Tensor::from_array(a.shape(), Array(a.values() - b.values()));
  if (recording({&a, &b})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record("sub", [an, bn, on] {
      if (const Array* g = incoming(on)) {
        accumulate(an, *g);
        accumulate(bn, Array(-*g));
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::from_array(a.shape(), Array(a.values() * b.values()));
  if (recording({&a, &b})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record("mul", [an, bn, on] {
      if (const Array* g = incoming(on)) {
        accumulate(an, Array(*g * bn->values));
        accumulate(bn, Array(*g * an->values));
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, Scalar c) {
  Tensor out = Tensor::from_array(a.shape(), Array(a.values() * c));
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("scale", [an, on, c] {
      if (const Array* g = incoming(on)) accumulate(an, Array(*g * c));
    });
  }
  return out;
}

Tensor exp(const Tensor& a) {
  Tensor out = Tensor::from_array(a.shape(), Array(a.values().exp()));
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("exp", [an, on] {
      if (const Array* g = incoming(on)) accumulate(an, Array(*g * on->values));
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& a) {
  Array y(a.size());
  const Array& x = a.values();
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (x[i] >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-x[i]));
    } else {
      const double e = std::exp(x[i]);
      y[i] = e / (1.0 + e);
    }
  }
  Tensor out = Tensor::from_array(a.shape(), std::move(y));
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("sigmoid", [an, on] {
      if (const Array* g = incoming(on))
        accumulate(an, Array(*g * on->values * (1.0 - on->values)));
    });
  }
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::from_array(a.shape(), Array(a.values().max(0.0)));
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("relu", [an, on] {
      if (const Array* g = incoming(on))
        accumulate(an, Array(*g * (an->values > 0.0).cast<Scalar>()));
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul expects rank-2 operands, got " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul: inner extents of " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()) + " differ");
  const Eigen::Index r = a.dim(0), k = a.dim(1), c = b.dim(1);
  Tensor out = Tensor::zeros({r, c});
  as_matrix(out.values(), r, c).noalias() =
      as_matrix(a.values(), r, k) * as_matrix(b.values(), k, c);
  if (recording({&a, &b})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), bn = b.node_ptr(), on = out.node_ptr();
    Tape::active()->record("matmul", [an, bn, on, r, k, c] {
      const Array* g = incoming(on);
      if (!g) return;
      auto gy = as_matrix(*g, r, c);
      if (an->grad_enabled) {
        an->ensure_grad();
        as_matrix(an->grad, r, k).noalias() +=
            gy * as_matrix(bn->values, k, c).transpose();
      }
      if (bn->grad_enabled) {
        bn->ensure_grad();
        as_matrix(bn->grad, k, c).noalias() +=
            as_matrix(an->values, r, k).transpose() * gy;
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose expects a rank-2 tensor, got " +
                     shape_str(a.shape()));
  const Eigen::Index r = a.dim(0), c = a.dim(1);
  Tensor out = Tensor::zeros({c, r});
  as_matrix(out.values(), c, r) = as_matrix(a.values(), r, c).transpose();
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("transpose", [an, on, r, c] {
      if (const Array* g = incoming(on)) {
        an->ensure_grad();
        as_matrix(an->grad, r, c) += as_matrix(*g, c, r).transpose();
      }
    });
  }
  return out;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2)
    throw ShapeError("dense: weight must be rank-2, got " +
                     shape_str(weight.shape()));
  if (x.rank() != 1 && x.rank() != 2)
    throw ShapeError("dense: input must be rank-1 or rank-2, got " +
                     shape_str(x.shape()));
  const Eigen::Index r = x.rows(), k = x.cols();
  const Eigen::Index c = weight.dim(1);
  if (weight.dim(0) != k)
    throw ShapeError("dense: input " + shape_str(x.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  if (bias.rank() != 1 || bias.dim(0) != c)
    throw ShapeError("dense: bias " + shape_str(bias.shape()) +
                     " does not match weight " + shape_str(weight.shape()));
  Shape out_shape = x.rank() == 1 ? Shape{c} : Shape{r, c};
  Tensor out = Tensor::zeros(std::move(out_shape));
  auto y = as_matrix(out.values(), r, c);
  y.noalias() = as_matrix(x.values(), r, k) * as_matrix(weight.values(), k, c);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), c);
  if (recording({&x, &weight, &bias})) {
    out.set_grad_enabled(true);
    auto xn = x.node_ptr(), wn = weight.node_ptr(), bn = bias.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record("dense", [xn, wn, bn, on, r, k, c] {
      const Array* g = incoming(on);
      if (!g) return;
      auto gy = as_matrix(*g, r, c);
      if (xn->grad_enabled) {
        xn->ensure_grad();
        as_matrix(xn->grad, r, k).noalias() +=
            gy * as_matrix(wn->values, k, c).transpose();
      }
      if (wn->grad_enabled) {
        wn->ensure_grad();
        as_matrix(wn->grad, k, c).noalias() +=
            as_matrix(xn->values, r, k).transpose() * gy;
      }
      if (bn->grad_enabled) {
        bn->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), c) +=
            gy.colwise().sum();
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  Tensor out = Tensor::from_array(std::move(shape), a.values());
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("reshape", [an, on] {
      if (const Array* g = incoming(on)) accumulate(an, *g);
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ParameterError("concat of zero tensors");
  const int rank = parts.front().rank();
  if (rank != 1 && rank != 2)
    throw ShapeError("concat supports rank-1 and rank-2 tensors");
  if (axis < 0 || axis >= rank)
    throw ParameterError("concat axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  for (const Tensor& p : parts)
    if (p.rank() != rank)
      throw ShapeError("concat: mixed ranks " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));

  Tensor out;
  if (rank == 1) {
    Eigen::Index total = 0;
    for (const Tensor& p : parts) total += p.size();
    out = Tensor::zeros({total});
    Eigen::Index offset = 0;
    for (const Tensor& p : parts) {
      out.values().segment(offset, p.size()) = p.values();
      offset += p.size();
    }
  } else if (axis == 0) {
    const Eigen::Index c = parts.front().dim(1);
    Eigen::Index total = 0;
    for (const Tensor& p : parts) {
      if (p.dim(1) != c)
        throw ShapeError("concat axis 0: column counts differ, " +
                         shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
      total += p.dim(0);
    }
    out = Tensor::zeros({total, c});
    Eigen::Index row = 0;
    for (const Tensor& p : parts) {
      as_matrix(out.values(), total, c).middleRows(row, p.dim(0)) = p.matrix();
      row += p.dim(0);
    }
  } else {
    const Eigen::Index r = parts.front().dim(0);
    Eigen::Index total = 0;
    for (const Tensor& p : parts) {
      if (p.dim(0) != r)
        throw ShapeError("concat axis 1: row counts differ, " +
                         shape_str(parts[0].shape()) + " vs " +
                         shape_str(p.shape()));
      total += p.dim(1);
    }
    out = Tensor::zeros({r, total});
    Eigen::Index col = 0;
    for (const Tensor& p : parts) {
      as_matrix(out.values(), r, total).middleCols(col, p.dim(1)) = p.matrix();
      col += p.dim(1);
    }
  }

  std::vector<const Tensor*> ptrs;
  for (const Tensor& p : parts) ptrs.push_back(&p);
  bool wants = Tape::active() != nullptr &&
               std::any_of(ptrs.begin(), ptrs.end(),
                           [](const Tensor* t) { return t->grad_enabled(); });
  if (wants) {
    out.set_grad_enabled(true);
    std::vector<NodePtr> nodes;
    for (const Tensor& p : parts) nodes.push_back(p.node_ptr());
    auto on = out.node_ptr();
    const Eigen::Index out_rows = out.rows(), out_cols = out.cols();
    Tape::active()->record("concat", [nodes, on, axis, rank, out_rows,
                                      out_cols] {
      const Array* g = incoming(on);
      if (!g) return;
      Eigen::Index offset = 0;
      for (const NodePtr& n : nodes) {
        const Eigen::Index nr = rank == 1 ? 1 : n->shape[0];
        const Eigen::Index nc = rank == 1 ? n->shape[0] : n->shape[1];
        if (n->grad_enabled) {
          n->ensure_grad();
          if (rank == 1) {
            n->grad += g->segment(offset, nc);
          } else if (axis == 0) {
            as_matrix(n->grad, nr, nc) +=
                as_matrix(*g, out_rows, out_cols).middleRows(offset, nr);
          } else {
            as_matrix(n->grad, nr, nc) +=
                as_matrix(*g, out_rows, out_cols).middleCols(offset, nc);
          }
        }
        offset += (rank == 1) ? nc : (axis == 0 ? nr : nc);
      }
    });
  }
  return out;
}

Tensor row_broadcast(const Tensor& v, Eigen::Index rows) {
  if (v.rank() != 1)
    throw ShapeError("row_broadcast expects a rank-1 tensor, got " +
                     shape_str(v.shape()));
  if (rows <= 0) throw ParameterError("row_broadcast: rows must be positive");
  const Eigen::Index c = v.dim(0);
  Tensor out = Tensor::zeros({rows, c});
  as_matrix(out.values(), rows, c).rowwise() =
      Eigen::Map<const Eigen::RowVectorXd>(v.values().data(), c);
  if (recording({&v})) {
    out.set_grad_enabled(true);
    auto vn = v.node_ptr(), on = out.node_ptr();
    Tape::active()->record("row_broadcast", [vn, on, rows, c] {
      if (const Array* g = incoming(on)) {
        vn->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(vn->grad.data(), c) +=
            as_matrix(*g, rows, c).colwise().sum();
      }
    });
  }
  return out;
}

Tensor mean(const Tensor& a, int axis) {
  if (a.rank() != 2)
    throw ShapeError("mean(axis) expects a rank-2 tensor, got " +
                     shape_str(a.shape()));
  if (axis != 0 && axis != 1)
    throw ParameterError("mean: axis must be 0 or 1");
  const Eigen::Index r = a.dim(0), c = a.dim(1);
  Tensor out;
  if (axis == 0) {
    out = Tensor::zeros({c});
    Eigen::Map<Eigen::RowVectorXd>(out.values().data(), c) =
        as_matrix(a.values(), r, c).colwise().mean();
  } else {
    out = Tensor::zeros({r});
    Eigen::Map<Eigen::VectorXd>(out.values().data(), r) =
        as_matrix(a.values(), r, c).rowwise().mean();
  }
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("mean", [an, on, axis, r, c] {
      const Array* g = incoming(on);
      if (!g) return;
      an->ensure_grad();
      auto ga = as_matrix(an->grad, r, c);
      if (axis == 0) {
        ga.rowwise() +=
            Eigen::Map<const Eigen::RowVectorXd>(g->data(), c) / Scalar(r);
      } else {
        ga.colwise() +=
            Eigen::Map<const Eigen::VectorXd>(g->data(), r) / Scalar(c);
      }
    });
  }
  return out;
}

Tensor mean_all(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().mean());
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    const Scalar inv = 1.0 / static_cast<Scalar>(a.size());
    Tape::active()->record("mean_all", [an, on, inv] {
      if (const Array* g = incoming(on))
        accumulate(an, Array(Array::Constant(an->values.size(), (*g)[0] * inv)));
    });
  }
  return out;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::scalar(a.values().sum());
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("sum_all", [an, on] {
      if (const Array* g = incoming(on))
        accumulate(an, Array(Array::Constant(an->values.size(), (*g)[0])));
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& tokens,
                        int padding_index) {
  if (table.rank() != 2)
    throw ShapeError("embedding_lookup: table must be rank-2, got " +
                     shape_str(table.shape()));
  const Eigen::Index v = table.dim(0), e = table.dim(1);
  const Eigen::Index l = static_cast<Eigen::Index>(tokens.size());
  if (l == 0) throw ParameterError("embedding_lookup: empty token sequence");
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] < 0 || tokens[i] >= v)
      throw ParameterError("embedding_lookup: token index " +
                           std::to_string(tokens[i]) + " at position " +
                           std::to_string(i) + " outside table of " +
                           std::to_string(v) + " rows");
  Tensor out = Tensor::zeros({l, e});
  auto y = as_matrix(out.values(), l, e);
  auto t = as_matrix(table.values(), v, e);
  for (Eigen::Index i = 0; i < l; ++i) y.row(i) = t.row(tokens[i]);
  if (recording({&table})) {
    out.set_grad_enabled(true);
    auto tn = table.node_ptr(), on = out.node_ptr();
    Tape::active()->record("embedding_lookup",
                           [tn, on, tokens, padding_index, v, e, l] {
      const Array* g = incoming(on);
      if (!g || !tn->grad_enabled) return;
      tn->ensure_grad();
      auto gt = as_matrix(tn->grad, v, e);
      auto gy = as_matrix(*g, l, e);
      for (Eigen::Index i = 0; i < l; ++i)
        if (tokens[i] != padding_index) gt.row(tokens[i]) += gy.row(i);
    });
  }
  return out;
}

Tensor dropout(const Tensor& a, Scalar rate, bool train,
               std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw ParameterError("dropout rate " + std::to_string(rate) +
                         " outside [0, 1)");
  if (!train || rate == 0.0) return a;
  const Scalar keep = 1.0 - rate;
  Array mask(a.size());
  for (Eigen::Index i = 0; i < mask.size(); ++i)
    mask[i] = uniform01(rng) >= rate ? 1.0 / keep : 0.0;
  Tensor out = Tensor::from_array(a.shape(), Array(a.values() * mask));
  if (recording({&a})) {
    out.set_grad_enabled(true);
    auto an = a.node_ptr(), on = out.node_ptr();
    Tape::active()->record("dropout", [an, on, mask = std::move(mask)] {
      if (const Array* g = incoming(on)) accumulate(an, Array(*g * mask));
    });
  }
  return out;
}

namespace {

struct ConvDims {
  Eigen::Index l, c_in, w, c_out, pad_left, l_out;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernels,
                   const Tensor& bias, Padding padding) {
  if (input.rank() != 2)
    throw ShapeError("conv1d: input must be rank-2 [L x C_in], got " +
                     shape_str(input.shape()));
  if (kernels.rank() != 3)
    throw ShapeError("conv1d: kernels must be rank-3 [W x C_in x C_out], got " +
                     shape_str(kernels.shape()));
  ConvDims d;
  d.l = input.dim(0);
  d.c_in = input.dim(1);
  d.w = kernels.dim(0);
  d.c_out = kernels.dim(2);
  if (kernels.dim(1) != d.c_in)
    throw ShapeError("conv1d: input channels of " + shape_str(input.shape()) +
                     " do not match kernel channels of " +
                     shape_str(kernels.shape()));
  if (bias.rank() != 1 || bias.dim(0) != d.c_out)
    throw ShapeError("conv1d: bias " + shape_str(bias.shape()) +
                     " does not match kernels " + shape_str(kernels.shape()));
  if (padding == Padding::kValid) {
    if (d.w > d.l)
      throw ShapeError("conv1d: kernel width " + std::to_string(d.w) +
                       " exceeds input length " + std::to_string(d.l) +
                       " under valid padding");
    d.pad_left = 0;
    d.l_out = d.l - d.w + 1;
  } else {
    d.pad_left = (d.w - 1) / 2;  // extra pad lands on the right for even W
    d.l_out = d.l;
  }
  return d;
}

// Gathers sliding windows into [L_out x W*C_in]; out-of-range reads are zero.
MatrixRM im2col(const Array& x, const ConvDims& d) {
  MatrixRM cols = MatrixRM::Zero(d.l_out, d.w * d.c_in);
  auto xm = as_matrix(x, d.l, d.c_in);
  for (Eigen::Index o = 0; o < d.l_out; ++o) {
    for (Eigen::Index w = 0; w < d.w; ++w) {
      const Eigen::Index src = o + w - d.pad_left;
      if (src < 0 || src >= d.l) continue;
      cols.row(o).segment(w * d.c_in, d.c_in) = xm.row(src);
    }
  }
  return cols;
}

}  // namespace

Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias,
              Padding padding) {
  const ConvDims d = conv_dims(input, kernels, bias, padding);
  MatrixRM cols = im2col(input.values(), d);
  Tensor out = Tensor::zeros({d.l_out, d.c_out});
  auto y = as_matrix(out.values(), d.l_out, d.c_out);
  y.noalias() = cols * as_matrix(kernels.values(), d.w * d.c_in, d.c_out);
  y.rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), d.c_out);
  if (recording({&input, &kernels, &bias})) {
    out.set_grad_enabled(true);
    auto xn = input.node_ptr(), kn = kernels.node_ptr(), bn = bias.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record("conv1d", [xn, kn, bn, on, d] {
      const Array* g = incoming(on);
      if (!g) return;
      auto gy = as_matrix(*g, d.l_out, d.c_out);
      if (kn->grad_enabled) {
        // Windows are rebuilt here instead of cached; the input tensor is
        // alive anyway and the protein-length maps are large.
        MatrixRM cols = im2col(xn->values, d);
        kn->ensure_grad();
        as_matrix(kn->grad, d.w * d.c_in, d.c_out).noalias() +=
            cols.transpose() * gy;
      }
      if (bn->grad_enabled) {
        bn->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), d.c_out) +=
            gy.colwise().sum();
      }
      if (xn->grad_enabled) {
        xn->ensure_grad();
        MatrixRM gcols =
            gy * as_matrix(kn->values, d.w * d.c_in, d.c_out).transpose();
        auto gx = as_matrix(xn->grad, d.l, d.c_in);
        for (Eigen::Index o = 0; o < d.l_out; ++o) {
          for (Eigen::Index w = 0; w < d.w; ++w) {
            const Eigen::Index src = o + w - d.pad_left;
            if (src < 0 || src >= d.l) continue;
            gx.row(src) += gcols.row(o).segment(w * d.c_in, d.c_in);
          }
        }
      }
    });
  }
  return out;
}

Tensor conv1d_transposed(const Tensor& input, const Tensor& kernels,
                         const Tensor& bias, Eigen::Index stride) {
  if (stride < 1)
    throw ParameterError("conv1d_transposed: stride must be >= 1, got " +
                         std::to_string(stride));
  if (input.rank() != 2)
    throw ShapeError("conv1d_transposed: input must be rank-2 [L x C_in], got " +
                     shape_str(input.shape()));
  if (kernels.rank() != 3)
    throw ShapeError(
        "conv1d_transposed: kernels must be rank-3 [W x C_out x C_in], got " +
        shape_str(kernels.shape()));
  const Eigen::Index l = input.dim(0), c_in = input.dim(1);
  const Eigen::Index w = kernels.dim(0), c_out = kernels.dim(1);
  if (kernels.dim(2) != c_in)
    throw ShapeError("conv1d_transposed: input channels of " +
                     shape_str(input.shape()) +
                     " do not match kernel channels of " +
                     shape_str(kernels.shape()));
  if (bias.rank() != 1 || bias.dim(0) != c_out)
    throw ShapeError("conv1d_transposed: bias " + shape_str(bias.shape()) +
                     " does not match kernels " + shape_str(kernels.shape()));
  const Eigen::Index l_out = (l - 1) * stride + w;
  Tensor out = Tensor::zeros({l_out, c_out});
  auto y = as_matrix(out.values(), l_out, c_out);
  auto x = as_matrix(input.values(), l, c_in);
  for (Eigen::Index i = 0; i < l; ++i) {
    for (Eigen::Index ww = 0; ww < w; ++ww) {
      ConstMatMap kw(kernels.values().data() + ww * c_out * c_in, c_out, c_in);
      y.row(i * stride + ww) += (kw * x.row(i).transpose()).transpose();
    }
  }
  y.rowwise() +=
      Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), c_out);
  if (recording({&input, &kernels, &bias})) {
    out.set_grad_enabled(true);
    auto xn = input.node_ptr(), kn = kernels.node_ptr(), bn = bias.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record("conv1d_transposed", [xn, kn, bn, on, l, c_in, w,
                                                 c_out, l_out, stride] {
      const Array* g = incoming(on);
      if (!g) return;
      auto gy = as_matrix(*g, l_out, c_out);
      auto x = as_matrix(xn->values, l, c_in);
      if (xn->grad_enabled) {
        xn->ensure_grad();
        auto gx = as_matrix(xn->grad, l, c_in);
        for (Eigen::Index i = 0; i < l; ++i)
          for (Eigen::Index ww = 0; ww < w; ++ww) {
            ConstMatMap kw(kn->values.data() + ww * c_out * c_in, c_out, c_in);
            gx.row(i) += gy.row(i * stride + ww) * kw;
          }
      }
      if (kn->grad_enabled) {
        kn->ensure_grad();
        for (Eigen::Index ww = 0; ww < w; ++ww) {
          MatMap gkw(kn->grad.data() + ww * c_out * c_in, c_out, c_in);
          for (Eigen::Index i = 0; i < l; ++i)
            gkw.noalias() +=
                gy.row(i * stride + ww).transpose() * x.row(i);
        }
      }
      if (bn->grad_enabled) {
        bn->ensure_grad();
        Eigen::Map<Eigen::RowVectorXd>(bn->grad.data(), c_out) +=
            gy.colwise().sum();
      }
    });
  }
  return out;
}

TopK topk_per_channel(const Tensor& input, Eigen::Index k) {
  if (input.rank() != 2)
    throw ShapeError("topk_per_channel expects rank-2 input, got " +
                     shape_str(input.shape()));
  const Eigen::Index l = input.dim(0), c = input.dim(1);
  if (k < 1 || k > l)
    throw ParameterError("topk_per_channel: k=" + std::to_string(k) +
                         " outside [1, L=" + std::to_string(l) + "]");
  TopK result;
  result.values = Tensor::zeros({k, c});
  result.indices.resize(k, c);
  auto x = as_matrix(input.values(), l, c);
  auto v = as_matrix(result.values.values(), k, c);
  std::vector<int> order(l);
  for (Eigen::Index col = 0; col < c; ++col) {
    std::iota(order.begin(), order.end(), 0);
    // Largest value first; tie goes to the smaller row index.
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](int a, int b) {
                        if (x(a, col) != x(b, col)) return x(a, col) > x(b, col);
                        return a < b;
                      });
    for (Eigen::Index i = 0; i < k; ++i) {
      result.indices(i, col) = order[i];
      v(i, col) = x(order[i], col);
    }
  }
  if (recording({&input})) {
    result.values.set_grad_enabled(true);
    auto xn = input.node_ptr(), on = result.values.node_ptr();
    IndexMatrix idx = result.indices;
    Tape::active()->record("topk_per_channel", [xn, on, idx, k, l, c] {
      const Array* g = incoming(on);
      if (!g) return;
      xn->ensure_grad();
      auto gx = as_matrix(xn->grad, l, c);
      auto gy = as_matrix(*g, k, c);
      for (Eigen::Index col = 0; col < c; ++col)
        for (Eigen::Index i = 0; i < k; ++i)
          gx(idx(i, col), col) += gy(i, col);
    });
  }
  return result;
}

Tensor softmax_rows(const Tensor& input) {
  if (input.rank() != 2)
    throw ShapeError("softmax_rows expects rank-2 input, got " +
                     shape_str(input.shape()));
  const Eigen::Index r = input.dim(0), c = input.dim(1);
  Tensor out = Tensor::zeros({r, c});
  auto x = as_matrix(input.values(), r, c);
  auto y = as_matrix(out.values(), r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Scalar m = x.row(i).maxCoeff();
    y.row(i) = (x.row(i).array() - m).exp();
    y.row(i) /= y.row(i).sum();
  }
  if (recording({&input})) {
    out.set_grad_enabled(true);
    auto xn = input.node_ptr(), on = out.node_ptr();
    Tape::active()->record("softmax_rows", [xn, on, r, c] {
      const Array* g = incoming(on);
      if (!g) return;
      xn->ensure_grad();
      auto gx = as_matrix(xn->grad, r, c);
      auto gy = as_matrix(*g, r, c);
      auto y = as_matrix(on->values, r, c);
      for (Eigen::Index i = 0; i < r; ++i) {
        const Scalar dot = gy.row(i).dot(y.row(i));
        gx.row(i).array() +=
            (gy.row(i).array() - dot) * y.row(i).array();
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& input, const Tensor& gain, const Tensor& shift,
                  Scalar eps) {
  if (input.rank() != 1 && input.rank() != 2)
    throw ShapeError("layer_norm expects rank-1 or rank-2 input, got " +
                     shape_str(input.shape()));
  const Eigen::Index r = input.rows(), d = input.cols();
  if (gain.rank() != 1 || gain.dim(0) != d || shift.rank() != 1 ||
      shift.dim(0) != d)
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) +
                     " / shift " + shape_str(shift.shape()) +
                     " do not match input " + shape_str(input.shape()));
  Tensor out = Tensor::zeros(input.shape());
  MatrixRM xhat(r, d);
  Eigen::VectorXd inv_sd(r);
  auto x = as_matrix(input.values(), r, d);
  auto y = as_matrix(out.values(), r, d);
  auto gvec = Eigen::Map<const Eigen::RowVectorXd>(gain.values().data(), d);
  auto svec = Eigen::Map<const Eigen::RowVectorXd>(shift.values().data(), d);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Scalar mu = x.row(i).mean();
    const Scalar var = (x.row(i).array() - mu).square().mean();
    inv_sd[i] = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_sd[i];
    y.row(i) = xhat.row(i).cwiseProduct(gvec) + svec;
  }
  if (recording({&input, &gain, &shift})) {
    out.set_grad_enabled(true);
    auto xn = input.node_ptr(), gn = gain.node_ptr(), sn = shift.node_ptr(),
         on = out.node_ptr();
    Tape::active()->record(
        "layer_norm",
        [xn, gn, sn, on, r, d, xhat = std::move(xhat),
         inv_sd = std::move(inv_sd)] {
          const Array* g = incoming(on);
          if (!g) return;
          auto gy = as_matrix(*g, r, d);
          auto gvec =
              Eigen::Map<const Eigen::RowVectorXd>(gn->values.data(), d);
          if (xn->grad_enabled) {
            xn->ensure_grad();
            auto gx = as_matrix(xn->grad, r, d);
            for (Eigen::Index i = 0; i < r; ++i) {
              Eigen::RowVectorXd dxhat = gy.row(i).cwiseProduct(gvec);
              const Scalar m1 = dxhat.mean();
              const Scalar m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
              gx.row(i).array() +=
                  inv_sd[i] *
                  (dxhat.array() - m1 - xhat.row(i).array() * m2);
            }
          }
          if (gn->grad_enabled) {
            gn->ensure_grad();
            Eigen::Map<Eigen::RowVectorXd> gg(gn->grad.data(), d);
            for (Eigen::Index i = 0; i < r; ++i)
              gg += gy.row(i).cwiseProduct(xhat.row(i));
          }
          if (sn->grad_enabled) {
            sn->ensure_grad();
            Eigen::Map<Eigen::RowVectorXd> gs(sn->grad.data(), d);
            gs += gy.colwise().sum();
          }
        });
  }
  return out;
}

}  // namespace dta
