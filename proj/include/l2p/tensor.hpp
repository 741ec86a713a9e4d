#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "l2p/errors.hpp"

namespace l2p {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;

template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

Index shape_size(const Shape& shape);

/// Whether operations currently record graph history (per thread).
bool grad_enabled();

/// Disables graph recording for its lifetime; used by inference paths.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
std::string shape_string(const Shape& shape);

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Vector<Scalar> value;
  Vector<Scalar> grad;
  bool requires_grad = false;
  bool has_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads `self.grad` and accumulates into the parents that require grad.
  std::function<void(Node& self)> backward;

  void accumulate(const Eigen::Ref<const Vector<Scalar>>& g) {
    if (!requires_grad) return;
    if (!has_grad) {
      grad = g;
      has_grad = true;
    } else {
      grad += g;
    }
  }
  Vector<Scalar>& grad_buffer() {
    if (!has_grad) {
      grad = Vector<Scalar>::Zero(value.size());
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array that participates in a reverse-mode graph.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Results of operations record their inputs only when at least one input
/// requires a gradient, so computations over frozen tensors build no graph.
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from(Shape shape, std::span<const Scalar> values, bool requires_grad = false);
  static Tensor from(Shape shape, std::initializer_list<Scalar> values, bool requires_grad = false);
  static Tensor from(Shape shape, Vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  /// Internal constructor used by operations.
  static Tensor make_result(Shape shape, Vector<Scalar> value,
                            std::vector<std::shared_ptr<Node>> parents,
                            std::function<void(Node&)> backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return node_->value.size(); }

  const Vector<Scalar>& values() const { return node_->value; }
  /// Direct write access, reserved for optimizers and initializers.
  Vector<Scalar>& mutable_values() { return node_->value; }
  Scalar item() const;
  Scalar operator[](Index i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  /// Only leaves may change this flag.
  void set_requires_grad(bool flag);

  bool has_grad() const { return node_->has_grad; }
  const Vector<Scalar>& grad() const;
  void clear_grad();

  const std::string& name() const { return node_->name; }
  void set_name(std::string name) { node_->name = std::move(name); }

  bool is_leaf() const { return node_->parents.empty(); }

  /// Runs the reverse pass from this scalar, seeding d(self)/d(self) = 1.
  void backward() const;

  /// Copy of the values with no graph history.
  Tensor detach() const;
  /// Deep copy, preserving requires_grad but not graph history or grad.
  Tensor clone() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>::from(shape(), Vector<Other>(values().template cast<Other>()),
                               requires_grad());
  }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

/// The reverse-pass order for the graph reachable from a root.
///
/// Nodes are listed so that every node precedes all of its parents; the record
/// contains only nodes that require a gradient.
template <typename Scalar>
class Graph {
 public:
  using Node = detail::Node<Scalar>;

  static Graph from_root(const Tensor<Scalar>& root);

  const std::vector<Node*>& order() const { return order_; }
  std::size_t size() const { return order_.size(); }

  /// Seeds the root with `seed` and propagates to every reachable node.
  void backward(const Vector<Scalar>& seed) const;

 private:
  std::vector<Node*> order_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace l2p
