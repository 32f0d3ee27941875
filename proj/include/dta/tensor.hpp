#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dta/error.hpp"

namespace dta {

// Double precision throughout; finite-difference checks rely on it.
using Scalar = double;
using Array = Eigen::ArrayXd;  // flat row-major storage for every tensor
using MatrixRM =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

using Shape = std::vector<Eigen::Index>;

std::string shape_str(const Shape& s);
Eigen::Index shape_numel(const Shape& s);

struct TensorNode {
  Shape shape;
  Array values;
  Array grad;  // stays empty until a backward pass reaches this node
  bool grad_enabled = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad = Array::Zero(values.size());
  }
};

// Shared handle to a shaped real array. Copies alias the same storage;
// values are treated as immutable once an op has consumed them.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool grad_enabled = false);
  static Tensor constant(Shape shape, Scalar value, bool grad_enabled = false);
  static Tensor from(Shape shape, std::vector<Scalar> values,
                     bool grad_enabled = false);
  static Tensor from_array(Shape shape, const Array& values,
                     bool grad_enabled = false);
  static Tensor scalar(Scalar value);
  static Tensor vector(std::vector<Scalar> values, bool grad_enabled = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  int rank() const { return static_cast<int>(node()->shape.size()); }
  Eigen::Index dim(int i) const { return node()->shape.at(i); }
  Eigen::Index size() const { return node()->values.size(); }
  // Rank-2 helpers (rank-1 tensors read as a single row).
  Eigen::Index rows() const { return rank() == 1 ? 1 : dim(0); }
  Eigen::Index cols() const { return rank() == 1 ? dim(0) : dim(1); }

  bool grad_enabled() const { return node()->grad_enabled; }
  void set_grad_enabled(bool enabled) { node()->grad_enabled = enabled; }

  Array& values() { return node()->values; }
  const Array& values() const { return node()->values; }

  bool has_grad() const { return node()->grad.size() == size(); }
  Array& grad() {
    node()->ensure_grad();
    return node()->grad;
  }
  const Array& grad() const {
    if (!has_grad())
      throw ContractError("tensor has no gradient; run backward first");
    return node()->grad;
  }
  void zero_grad() {
    if (has_grad()) node()->grad.setZero();
  }
  void drop_grad() { node()->grad.resize(0); }

  Scalar item() const {
    if (size() != 1)
      throw ContractError("item() requires a single-element tensor, shape is " +
                          shape_str(shape()));
    return node()->values[0];
  }
  Scalar at(Eigen::Index i) const { return node()->values[i]; }
  Scalar at(Eigen::Index r, Eigen::Index c) const {
    return node()->values[r * cols() + c];
  }

  MatMap matrix() { return MatMap(values().data(), rows(), cols()); }
  ConstMatMap matrix() const {
    return ConstMatMap(values().data(), rows(), cols());
  }
  MatMap grad_matrix() { return MatMap(grad().data(), rows(), cols()); }

  std::shared_ptr<TensorNode> node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}

  TensorNode* node() {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_.get();
  }
  const TensorNode* node() const {
    if (!node_) throw ContractError("use of an undefined tensor");
    return node_.get();
  }

  std::shared_ptr<TensorNode> node_;
};

// Ordered log of executed ops. Backward replays it once, in reverse
// execution order; clearing releases every intermediate it kept alive.
class Tape {
 public:
  void record(const char* op, std::function<void()> pull) {
    steps_.push_back({op, std::move(pull)});
  }

  // Seeds d(loss)/d(loss) = 1 and pulls gradients through every recorded
  // op. A second call without a fresh forward pass is rejected.
  void backward(const Tensor& loss);

  void clear() {
    steps_.clear();
    spent_ = false;
  }

  std::size_t size() const { return steps_.size(); }
  bool spent() const { return spent_; }

  static Tape* active();

 private:
  struct Step {
    const char* op;
    std::function<void()> pull;
  };
  std::vector<Step> steps_;
  bool spent_ = false;

  friend class Recording;
};

// RAII guard: while alive, ops on this thread append to the given tape.
class Recording {
 public:
  explicit Recording(Tape& tape);
  ~Recording();
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Tape* previous_;
};

}  // namespace dta
