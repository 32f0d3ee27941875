#include "dta/tensor.hpp"

#include <sstream>

namespace dta {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << " x ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

Eigen::Index shape_numel(const Shape& s) {
  Eigen::Index n = 1;
  for (auto d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

static std::shared_ptr<TensorNode> make_node(Shape shape, Array values,
                                             bool grad_enabled) {
  if (values.size() != shape_numel(shape))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(shape));
  auto node = std::make_shared<TensorNode>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  node->grad_enabled = grad_enabled;
  return node;
}

Tensor Tensor::zeros(Shape shape, bool grad_enabled) {
  auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), Array::Zero(n), grad_enabled));
}

Tensor Tensor::constant(Shape shape, Scalar value, bool grad_enabled) {
  auto n = shape_numel(shape);
  return Tensor(make_node(std::move(shape), Array::Constant(n, value),
                          grad_enabled));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values,
                    bool grad_enabled) {
  Array a = Eigen::Map<const Array>(values.data(),
                                    static_cast<Eigen::Index>(values.size()));
  return Tensor(make_node(std::move(shape), std::move(a), grad_enabled));
}

Tensor Tensor::from_array(Shape shape, const Array& values, bool grad_enabled) {
  return Tensor(make_node(std::move(shape), values, grad_enabled));
}

Tensor Tensor::scalar(Scalar value) {
  return Tensor(make_node({1}, Array::Constant(1, value), false));
}

Tensor Tensor::vector(std::vector<Scalar> values, bool grad_enabled) {
  Shape shape{static_cast<Eigen::Index>(values.size())};
  return from(std::move(shape), std::move(values), grad_enabled);
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Recording::Recording(Tape& tape) : previous_(g_active_tape) {
  g_active_tape = &tape;
}

Recording::~Recording() { g_active_tape = previous_; }

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward expects a scalar loss, got shape " +
                        shape_str(loss.shape()));
  if (steps_.empty())
    throw ContractError("backward on an empty computation record");
  if (spent_)
    throw ContractError(
        "computation record already consumed; run a fresh forward pass");
  spent_ = true;
  loss.node_ptr()->ensure_grad();
  loss.node_ptr()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) it->pull();
}

}  // namespace dta
