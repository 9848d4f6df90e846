#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ct {

using Shape = std::vector<std::int64_t>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

std::int64_t numel_of(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node;
using BackwardFn = std::function<void(Node& out)>;

// One entry in the computation record. Leaves have no inputs and no
// backward rule; every op result links to the nodes it was computed from.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward_fn;

  bool is_leaf() const { return inputs.empty(); }
  float* grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const float> values() const { return node_->value; }
  std::span<float> mutable_values() { return node_->value; }
  std::vector<float> to_vector() const { return node_->value; }
  float item() const;
  float at(std::int64_t flat) const { return node_->value.at(static_cast<std::size_t>(flat)); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const float> grad() const { return node_->grad; }
  std::span<float> mutable_grad();
  void zero_grad();

  // Same values, cut from the computation record.
  Tensor detach() const;

  const char* op_name() const { return node_->op; }
  std::uint64_t node_id() const { return node_->id; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Runs reverse-mode differentiation from a scalar loss. Intermediate grads are
// recomputed on every call; leaf grads accumulate until zeroed.
void backward(const Tensor& loss);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Creates an op result. When recording is off, or no input tracks gradients,
// the result is a constant and `fn` is dropped.
Tensor record(const char* op, Shape shape, std::vector<float> value,
              std::initializer_list<Tensor> inputs, BackwardFn fn);
Tensor record(const char* op, Shape shape, std::vector<float> value,
              const std::vector<Tensor>& inputs, BackwardFn fn);

}  // namespace ct
