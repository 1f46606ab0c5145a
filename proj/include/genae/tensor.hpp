#pragma once

// Dense N-d tensor with a dynamic reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared Node. Every differentiable op
// allocates a fresh contiguous output node holding its parents and a backward
// closure; backward() walks the reachable nodes in reverse topological order
// and accumulates (+=) into parent gradients.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <vector>

namespace genae {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Thread-local execution state

namespace detail {
inline thread_local bool grad_enabled = true;
inline thread_local bool bf16_enabled = false;
inline thread_local std::uint64_t mac_count = 0;
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled; }
inline bool bf16_enabled() { return detail::bf16_enabled; }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Emulates bfloat16 evaluation: every op output is rounded to 8 mantissa bits.
class Bf16Guard {
 public:
  explicit Bf16Guard(bool on = true) : prev_(detail::bf16_enabled) { detail::bf16_enabled = on; }
  ~Bf16Guard() { detail::bf16_enabled = prev_; }
  Bf16Guard(const Bf16Guard&) = delete;
  Bf16Guard& operator=(const Bf16Guard&) = delete;

 private:
  bool prev_;
};

// Multiply-accumulate counter fed by the GEMM/conv/attention kernels.
class MacCounter {
 public:
  MacCounter() : start_(detail::mac_count) {}
  std::uint64_t count() const { return detail::mac_count - start_; }

 private:
  std::uint64_t start_;
};

inline void count_macs(std::uint64_t n) { detail::mac_count += n; }

namespace detail {
// Backward passes reuse the forward kernels; only forward work is counted.
struct NoCount {
  std::uint64_t saved = mac_count;
  NoCount() = default;
  NoCount(const NoCount&) = delete;
  NoCount& operator=(const NoCount&) = delete;
  ~NoCount() { mac_count = saved; }
};
}  // namespace detail

// Round-to-nearest-even to bfloat16, returned as float.
inline float round_bf16(float v) {
  if (!std::isfinite(v)) return v;
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  const std::uint32_t lsb = (u >> 16) & 1u;
  u += 0x7fffu + lsb;
  u &= 0xffff0000u;
  return std::bit_cast<float>(u);
}

template <class T>
inline void apply_bf16(std::vector<T>& v) {
  if constexpr (std::is_same_v<T, float>) {
    if (detail::bf16_enabled)
      for (auto& x : v) x = round_bf16(x);
  }
}

// ---------------------------------------------------------------------------

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool retain_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  int saved_buffers = 0;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->data.assign(genae::numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (genae::numel(shape) != data.size())
      throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match " +
                                  std::to_string(data.size()) + " values");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }
  explicit Tensor(NodePtr n) : node_(std::move(n)) {}

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, std::vector<T>{v}, requires_grad); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }
  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.back() + c]; }

  bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::vector<T>& grad_values() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }
  Tensor& retain_grad() {
    node_->retain_grad = true;
    return *this;
  }
  bool is_leaf() const { return node_->is_leaf(); }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
  }

  // Shares no storage with the source; the copy is a fresh leaf.
  Tensor detach() const { return Tensor(node_->shape, node_->data, false); }
  Tensor clone() const { return detach(); }

  void backward() const;

  Node<T>* node() const { return node_.get(); }
  const NodePtr& node_ptr() const { return node_; }

 private:
  NodePtr node_;
};

// Topologically ordered view of the tape reachable from a root (parents first).
template <class T>
struct Graph {
  std::shared_ptr<Node<T>> root;  // keeps every traced node alive
  std::vector<Node<T>*> nodes;

  static Graph trace(const Tensor<T>& root) {
    Graph g;
    g.root = root.node_ptr();
    std::unordered_set<Node<T>*> seen;
    // Iterative post-order DFS; deep graphs would overflow a recursive walk.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        g.nodes.push_back(n);
        stack.pop_back();
      }
    }
    return g;
  }

  int saved_buffers(const std::string& op) const {
    int total = 0;
    for (auto* n : nodes)
      if (op == n->op) total += n->saved_buffers;
    return total;
  }
  std::size_t count(const std::string& op) const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](auto* n) { return op == n->op; }));
  }
};

template <class T>
void Tensor<T>::backward() const {
  if (numel() != 1 || (rank() != 0 && !(rank() == 1 && dim(0) == 1)))
    throw std::invalid_argument("backward(): loss must be a scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;
  auto g = Graph<T>::trace(*this);
  for (auto* n : g.nodes)
    if (!n->is_leaf()) n->grad.clear();
  node_->ensure_grad()[0] += T(1);
  for (auto it = g.nodes.rbegin(); it != g.nodes.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward_fn(*n);
    if (!n->retain_grad && n != node_.get()) {
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
}

// Builds an op output. The backward closure receives the output node and must
// only accumulate into parents that require grad.
template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs, const char* op,
                  std::function<void(Node<T>&)> backward, int saved_buffers = 0) {
  apply_bf16(data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward_fn = std::move(backward);
    node->saved_buffers = saved_buffers;
  }
  return Tensor<T>(std::move(node));
}

template <class T>
Tensor<T> make_op(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs, const char* op,
                  std::function<void(Node<T>&)> backward, int saved_buffers = 0) {
  apply_bf16(data);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& t : inputs) node->parents.push_back(t.node_ptr());
    node->backward_fn = std::move(backward);
    node->saved_buffers = saved_buffers;
  }
  return Tensor<T>(std::move(node));
}

// Parent i's gradient buffer, or nullptr when it does not need one.
template <class T>
inline T* parent_grad(Node<T>& n, std::size_t i) {
  auto& p = *n.parents[i];
  return p.requires_grad ? p.ensure_grad().data() : nullptr;
}

template <class T>
inline const T* parent_data(const Node<T>& n, std::size_t i) {
  return n.parents[i]->data.data();
}

}  // namespace genae
