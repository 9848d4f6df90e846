#include "ct/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ct {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;

std::shared_ptr<Node> new_node(Shape shape, std::vector<float> value, bool requires_grad) {
  if (numel_of(shape) != static_cast<std::int64_t>(value.size())) {
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(value.size()));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->id = g_next_id++;
  return node;
}

}  // namespace

std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

float* Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), 0.0f);
  return grad.data();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  const auto n = numel_of(shape);
  return Tensor(new_node(std::move(shape), std::vector<float>(static_cast<std::size_t>(n), value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({}, {value}, requires_grad); }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("dim: axis out of range for shape " + to_string(shape()));
  return node_->shape[static_cast<std::size_t>(axis)];
}

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: expected a single value, shape is " + to_string(shape()));
  return node_->value[0];
}

std::span<float> Tensor::mutable_grad() {
  node_->grad_buffer();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0f); }

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->value, false)); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor record(const char* op, Shape shape, std::vector<float> value, const std::vector<Tensor>& inputs,
              BackwardFn fn) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) track = track || t.requires_grad();
  }
  auto node = new_node(std::move(shape), std::move(value), track);
  node->op = op;
  if (track) {
    node->inputs.reserve(inputs.size());
    for (const auto& t : inputs) node->inputs.push_back(t.node());
    node->backward_fn = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor record(const char* op, Shape shape, std::vector<float> value, std::initializer_list<Tensor> inputs,
              BackwardFn fn) {
  return record(op, std::move(shape), std::move(value), std::vector<Tensor>(inputs), std::move(fn));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, shape is " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  Node* root = loss.node().get();
  if (!root->requires_grad) return;

  // Post-order DFS gives inputs before consumers; walk it backwards.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0f);
  }
  if (root->is_leaf()) {
    root->grad_buffer()[0] += 1.0f;
    return;
  }
  root->grad[0] = 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->is_leaf() && n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace ct
