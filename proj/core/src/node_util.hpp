#pragma once

#include <memory>
#include <vector>

#include "ldrc/tensor.hpp"

namespace ldrc::detail {

using NodePtr = std::shared_ptr<Node>;

inline NodePtr make_op_node(Shape4 shape, const char* op, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = shape;
    n->data.resize(size_t(shape.numel()));
    n->op = op;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

}  // namespace ldrc::detail
