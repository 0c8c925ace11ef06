#include "ldrc/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace ldrc {

std::string Shape4::str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
}

std::int64_t flat_index(const Shape4& s, int n, int c, int h, int w) {
    return ((std::int64_t(n) * s.c + c) * s.h + h) * s.w + w;
}

Tensor::Tensor(Shape4 shape, float fill) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
        throw Error("tensor: non-positive dimension in shape " + shape.str());
    node_ = std::make_shared<detail::Node>();
    node_->shape = shape;
    node_->data.assign(size_t(shape.numel()), fill);
}

Tensor::Tensor(Shape4 shape, std::vector<float> values) {
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0)
        throw Error("tensor: non-positive dimension in shape " + shape.str());
    if (std::int64_t(values.size()) != shape.numel())
        throw Error("tensor: data length " + std::to_string(values.size()) +
                    " does not match shape " + shape.str());
    node_ = std::make_shared<detail::Node>();
    node_->shape = shape;
    node_->data = std::move(values);
}

float& Tensor::at(int n, int c, int h, int w) {
    return node_->data[size_t(flat_index(node_->shape, n, c, h, w))];
}

float Tensor::at(int n, int c, int h, int w) const {
    return node_->data[size_t(flat_index(node_->shape, n, c, h, w))];
}

float Tensor::grad_at(int n, int c, int h, int w) const {
    if (node_->grad.empty()) throw Error("tensor: grad not populated");
    return node_->grad[size_t(flat_index(node_->shape, n, c, h, w))];
}

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->data.size(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw Error("tensor: item() requires a single-element tensor, got " +
                                  shape().str());
    return node_->data[0];
}

Tensor Tensor::detach() const {
    Tensor t(shape());
    t.node_->data = node_->data;
    return t;
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

Graph Graph::trace(const Tensor& loss) {
    Graph g;
    g.root_ = loss.node().get();

    // Iterative post-order DFS over requires_grad parents: parents end up
    // before children, so the reverse sweep sees every child first.
    std::unordered_set<detail::Node*> visited;
    struct Frame {
        detail::Node* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    if (g.root_->requires_grad) {
        stack.push_back({g.root_, 0});
        visited.insert(g.root_);
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::Node* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            g.order_.push_back(f.node);
            stack.pop_back();
        }
    }
    return g;
}

void Graph::run_backward() {
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::Node* n = *it;
        if (n->backward_fn) n->backward_fn();
    }
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw Error("backward: loss must be scalar, got shape " + loss.shape().str());
    if (!loss.requires_grad()) return;  // nothing reachable requires grad
    auto root = loss.node();
    root->ensure_grad();
    root->grad[0] += 1.0f;
    Graph::trace(loss).run_backward();
}

void check_finite(std::span<const float> v, const char* op) {
    for (float x : v) {
        if (!std::isfinite(x))
            throw Error(std::string(op) + ": non-finite value in result");
    }
}

void check_finite(const Tensor& t, const char* op) {
    check_finite(std::span<const float>(t.values()), op);
}

}  // namespace ldrc
