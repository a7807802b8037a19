#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace gvit {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

namespace detail {

// One recorded value on the tape. Interior nodes own their parents so the
// graph lives exactly as long as the outputs that reference it.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward;
};

}  // namespace detail

/// Dense row-major array of doubles with optional gradient tracking.
///
/// Copies share storage (handle semantics), which is what lets parameters be
/// updated in place by the optimizer while graphs referencing them stay valid.
/// Use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Row-major literal, e.g. from_rows({{1, 2}, {3, 4}}).
  static Tensor from_rows(const std::vector<std::vector<double>>& rows,
                          bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  /// In-place access for optimizers and initializers. Not recorded on the tape.
  std::span<double> mutable_values();
  double operator[](std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const;
  double item() const;

  bool requires_grad() const;
  /// Gradient buffer; empty until backward() reaches this tensor.
  std::span<const double> grad() const;
  void zero_grad();

  /// Independent leaf copy of the values.
  Tensor clone(bool requires_grad = false) const;
  /// Same values, detached from the tape.
  Tensor detach() const;

  bool defined() const { return static_cast<bool>(node_); }
  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor from_node(std::shared_ptr<detail::Node> node);

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Throws NumericError if any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* where);

/// Builds an op result. Records parents and the backward closure only when
/// gradient mode is on and some parent requires a gradient.
Tensor make_result(Shape shape, std::vector<double> values,
                   std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

/// Reverse-mode sweep from a scalar loss. Every reachable gradient buffer is
/// reset before propagation, so calls never accumulate across invocations.
void backward(const Tensor& loss);

/// RAII scope disabling tape recording on the current thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

}  // namespace gvit
