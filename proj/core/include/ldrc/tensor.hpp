#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldrc {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense 4-D shape, NCHW.
struct Shape4 {
    int n = 0, c = 0, h = 0, w = 0;

    std::int64_t numel() const {
        return std::int64_t(n) * c * h * w;
    }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

namespace detail {

struct Node {
    Shape4 shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until first needed; same length as data afterwards
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // reads this->grad, accumulates into parents

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
    }
};

}  // namespace detail

// Shared handle to a tensor node. Copies alias the same storage, so a Tensor
// held by an optimizer and the same Tensor inside a layer see one buffer.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape4 shape, float fill = 0.0f);
    Tensor(Shape4 shape, std::vector<float> values);

    static Tensor zeros(Shape4 shape) { return Tensor(shape, 0.0f); }
    static Tensor full(Shape4 shape, float v) { return Tensor(shape, v); }
    static Tensor scalar(float v) { return Tensor(Shape4{1, 1, 1, 1}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape4& shape() const { return node_->shape; }
    std::int64_t numel() const { return node_->shape.numel(); }

    float* data() { return node_->data.data(); }
    const float* data() const { return node_->data.data(); }
    std::vector<float>& values() { return node_->data; }
    const std::vector<float>& values() const { return node_->data; }

    float& at(int n, int c, int h, int w);
    float at(int n, int c, int h, int w) const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v);

    // Empty vector until a backward pass (or zero_grad) touched this tensor.
    const std::vector<float>& grad() const { return node_->grad; }
    std::vector<float>& grad() { return node_->grad; }
    float grad_at(int n, int c, int h, int w) const;
    void zero_grad();

    float item() const;

    // Detached value copy (no graph history, requires_grad off).
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return node_; }
    static Tensor wrap(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

// The tape traced backwards from a loss: nodes in topological order
// (parents before children), each visited exactly once.
class Graph {
public:
    static Graph trace(const Tensor& loss);
    const std::vector<detail::Node*>& nodes() const { return order_; }
    void run_backward();

private:
    std::vector<detail::Node*> order_;
    detail::Node* root_ = nullptr;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate (sum) into any
// existing grad buffers; call zero_grad between steps.
void backward(const Tensor& loss);

// Named map of trainable tensors.
using ParamMap = std::map<std::string, Tensor>;

// Non-finite values are treated as an immediate error, not propagated.
void check_finite(const Tensor& t, const char* op);
void check_finite(std::span<const float> v, const char* op);

std::int64_t flat_index(const Shape4& s, int n, int c, int h, int w);

}  // namespace ldrc
