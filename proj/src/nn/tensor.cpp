#include "prccf/nn/tensor.hpp"

#include <unordered_set>

#include "prccf/errors.hpp"

namespace prccf::nn {
namespace {
thread_local bool g_grad_enabled = true;
}

void detail::Node::accumulate(const Matrix& delta) {
  if (!requires_grad) return;
  if (grad.size() == 0)
    grad = delta;
  else
    grad += delta;
}

Tensor::Tensor(Matrix value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw ContractViolation("item() on a non-scalar tensor");
  return value()(0, 0);
}

Tensor Tensor::make(Matrix value, std::vector<Tensor> parents, std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(value));
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->parents.reserve(parents.size());
  for (auto& p : parents) out.node_->parents.push_back(p.node_);
  out.node_->backward = std::move(backward);
  return out;
}

void Tensor::backward() const {
  if (rows() != 1 || cols() != 1) throw ContractViolation("backward() needs a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() > 0) n->backward(*n);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace prccf::nn
