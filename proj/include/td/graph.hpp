#pragma once

#include <array>
#include <unordered_map>
#include <vector>

#include "td/tensor.hpp"

namespace td {

using NodeId = int;
using GradMap = std::unordered_map<NodeId, Tensor>;

// Reverse-mode tape. Nodes are appended in topological order; values are
// computed eagerly at insertion. Tensors are immutable once inserted, so
// independent graphs can be evaluated concurrently.
class Graph {
public:
    enum class Op {
        Leaf,
        MatMul,
        Transpose,
        Reshape,
        SoftmaxRows,
        Relu,
        Log,
        Abs,
        Add,
        Sub,
        Mul,
        Scale,
        MaskLast,
        MaskFirst,
        BiasLast,
        ReduceMean,
        Conv1d,
        Conv2d,
    };

    // Leaf marked as parameter participates in backward()'s result map.
    NodeId parameter(Tensor value) { return leaf(std::move(value), true); }
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    NodeId matmul(NodeId a, NodeId b);
    NodeId transpose(NodeId a);
    NodeId reshape(NodeId a, std::vector<int> shape);
    NodeId softmax_rows(NodeId x);
    NodeId relu(NodeId x);
    NodeId log(NodeId x);
    NodeId abs(NodeId x);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId mask_channels_last(NodeId a, NodeId mask);
    NodeId mask_channels_first(NodeId a, NodeId mask);
    NodeId bias_last(NodeId a, NodeId bias);
    NodeId reduce_mean(NodeId x);
    NodeId conv1d_same3(NodeId x, NodeId w, NodeId b);
    NodeId conv2d_same3(NodeId x, NodeId w, NodeId b);

    const Tensor& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    std::size_t node_count() const { return nodes_.size(); }
    bool is_parameter(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).param; }

    // Gradients of a scalar loss w.r.t. every parameter leaf. Parameters the
    // loss does not depend on get zero gradients of the matching shape.
    GradMap backward(NodeId loss) const;

    // Smallest |x| fed into any ReLU or abs node; infinity when none exist.
    // Gradient checks reject instances that sit too close to a kink.
    double min_abs_kink_input() const;

private:
    struct Node {
        Op op = Op::Leaf;
        std::array<NodeId, 3> in{-1, -1, -1};
        int nin = 0;
        Tensor value;
        double scalar = 0.0;
        bool param = false;
    };

    NodeId leaf(Tensor value, bool param);
    NodeId push(Op op, std::array<NodeId, 3> in, int nin, Tensor value, double scalar = 0.0);
    const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

    std::vector<Node> nodes_;
};

}  // namespace td
