#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lfdm/tensor.hpp"

namespace lfdm {

// Define-by-run reverse-mode autodiff. Every op builds a Node whose
// backward_fn reads node.grad and accumulates into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad() {
    if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
    return grad;
  }
};

class Var {
 public:
  Var() : n_(std::make_shared<Node>()) {}
  explicit Var(Tensor value, bool requires_grad = false)
      : n_(std::make_shared<Node>()) {
    n_->value = std::move(value);
    n_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  const Tensor& val() const { return n_->value; }
  Tensor& val() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool rg) { n_->requires_grad = rg; }
  std::shared_ptr<Node> node() const { return n_; }
  void zero_grad() {
    if (!n_->grad.empty())
      for (int64_t i = 0; i < n_->grad.numel(); ++i) n_->grad[i] = 0.0f;
  }

  const std::vector<int>& shape() const { return n_->value.shape(); }
  int dim(int i) const { return n_->value.dim(i); }
  int64_t numel() const { return n_->value.numel(); }

 private:
  std::shared_ptr<Node> n_;
};

// Runs reverse-mode accumulation from a scalar (or any) root with seed
// gradient 1. Grads of leaf parameters persist until zero_grad().
void backward(const Var& root);

// Helper for op implementations.
Var make_op(Tensor value, std::vector<Var> parents,
            std::function<void(Node&)> backward_fn);

}  // namespace lfdm
