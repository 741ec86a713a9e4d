#include "l2p/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace l2p {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (Index e : shape)
    if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::full(Shape shape, Scalar value, bool requires_grad) {
  check_shape(shape);
  const Index n = shape_size(shape);
  return from(std::move(shape), Vector<Scalar>::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::span<const Scalar> values,
                                    bool requires_grad) {
  Vector<Scalar> v(static_cast<Index>(values.size()));
  std::copy(values.begin(), values.end(), v.data());
  return from(std::move(shape), std::move(v), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, std::initializer_list<Scalar> values,
                                    bool requires_grad) {
  return from(std::move(shape), std::span<const Scalar>(values.begin(), values.size()),
              requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from(Shape shape, Vector<Scalar> values, bool requires_grad) {
  check_shape(shape);
  if (shape_size(shape) != values.size())
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(shape_size(shape)) + " values, got " +
                         std::to_string(values.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return from(Shape{}, Vector<Scalar>::Constant(1, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::make_result(Shape shape, Vector<Scalar> value,
                                           std::vector<std::shared_ptr<Node>> parents,
                                           std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool any = false;
  if (g_grad_enabled)
    for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  const Index r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
void Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw StateError("requires_grad can only be changed on leaf tensors");
  node_->requires_grad = flag;
  if (!flag) clear_grad();
}

template <typename Scalar>
const Vector<Scalar>& Tensor<Scalar>::grad() const {
  if (!node_->has_grad)
    throw StateError("tensor '" + node_->name + "' has no gradient");
  return node_->grad;
}

template <typename Scalar>
void Tensor<Scalar>::clear_grad() {
  node_->grad.resize(0);
  node_->has_grad = false;
}

template <typename Scalar>
void Tensor<Scalar>::backward() const {
  if (size() != 1)
    throw DimensionError("backward() needs a scalar root, got " + shape_string(shape()));
  Graph<Scalar>::from_root(*this).backward(Vector<Scalar>::Ones(1));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return from(shape(), Vector<Scalar>(values()), false);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::clone() const {
  auto t = from(shape(), Vector<Scalar>(values()), requires_grad());
  t.set_name(name());
  return t;
}

template <typename Scalar>
Graph<Scalar> Graph<Scalar>::from_root(const Tensor<Scalar>& root) {
  Graph g;
  if (!root.requires_grad()) return g;
  // Iterative post-order DFS; reversing the post-order yields children first.
  std::vector<Node*> post;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      post.push_back(node);
      stack.pop_back();
    }
  }
  g.order_.assign(post.rbegin(), post.rend());
  return g;
}

template <typename Scalar>
void Graph<Scalar>::backward(const Vector<Scalar>& seed) const {
  if (order_.empty()) return;
  for (Node* n : order_) n->grad_buffer();
  order_.front()->grad += seed;
  for (Node* n : order_)
    if (n->backward) n->backward(*n);
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;

}  // namespace l2p
