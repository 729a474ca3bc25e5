#include "td/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "td/ops.hpp"

namespace td {

NodeId Graph::leaf(Tensor value, bool param) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.param = param;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::push(Op op, std::array<NodeId, 3> in, int nin, Tensor value, double scalar) {
    for (int i = 0; i < nin; ++i)
        if (in[static_cast<std::size_t>(i)] < 0 ||
            in[static_cast<std::size_t>(i)] >= static_cast<NodeId>(nodes_.size()))
            throw ShapeError("graph: input node out of range");
    Node n;
    n.op = op;
    n.in = in;
    n.nin = nin;
    n.value = std::move(value);
    n.scalar = scalar;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    return push(Op::MatMul, {a, b, -1}, 2, ops::matmul(value(a), value(b)));
}
NodeId Graph::transpose(NodeId a) {
    return push(Op::Transpose, {a, -1, -1}, 1, ops::transpose(value(a)));
}
NodeId Graph::reshape(NodeId a, std::vector<int> shape) {
    return push(Op::Reshape, {a, -1, -1}, 1, ops::reshape(value(a), std::move(shape)));
}
NodeId Graph::softmax_rows(NodeId x) {
    return push(Op::SoftmaxRows, {x, -1, -1}, 1, ops::softmax_rows(value(x)));
}
NodeId Graph::relu(NodeId x) { return push(Op::Relu, {x, -1, -1}, 1, ops::relu(value(x))); }
NodeId Graph::log(NodeId x) { return push(Op::Log, {x, -1, -1}, 1, ops::log_elem(value(x))); }
NodeId Graph::abs(NodeId x) { return push(Op::Abs, {x, -1, -1}, 1, ops::abs_elem(value(x))); }
NodeId Graph::add(NodeId a, NodeId b) {
    return push(Op::Add, {a, b, -1}, 2, ops::add(value(a), value(b)));
}
NodeId Graph::sub(NodeId a, NodeId b) {
    return push(Op::Sub, {a, b, -1}, 2, ops::sub(value(a), value(b)));
}
NodeId Graph::mul(NodeId a, NodeId b) {
    return push(Op::Mul, {a, b, -1}, 2, ops::mul(value(a), value(b)));
}
NodeId Graph::scale(NodeId a, double c) {
    return push(Op::Scale, {a, -1, -1}, 1, ops::scale(value(a), c), c);
}
NodeId Graph::mask_channels_last(NodeId a, NodeId mask) {
    return push(Op::MaskLast, {a, mask, -1}, 2, ops::mask_channels_last(value(a), value(mask)));
}
NodeId Graph::mask_channels_first(NodeId a, NodeId mask) {
    return push(Op::MaskFirst, {a, mask, -1}, 2, ops::mask_channels_first(value(a), value(mask)));
}
NodeId Graph::bias_last(NodeId a, NodeId bias) {
    return push(Op::BiasLast, {a, bias, -1}, 2, ops::bias_last(value(a), value(bias)));
}
NodeId Graph::reduce_mean(NodeId x) {
    return push(Op::ReduceMean, {x, -1, -1}, 1, ops::reduce_mean(value(x)));
}
NodeId Graph::conv1d_same3(NodeId x, NodeId w, NodeId b) {
    return push(Op::Conv1d, {x, w, b}, 3, ops::conv1d_same3(value(x), value(w), value(b)));
}
NodeId Graph::conv2d_same3(NodeId x, NodeId w, NodeId b) {
    return push(Op::Conv2d, {x, w, b}, 3, ops::conv2d_same3(value(x), value(w), value(b)));
}

double Graph::min_abs_kink_input() const {
    double best = std::numeric_limits<double>::infinity();
    for (const Node& n : nodes_) {
        if (n.op != Op::Relu && n.op != Op::Abs) continue;
        for (double v : value(n.in[0]).data) best = std::min(best, std::fabs(v));
    }
    return best;
}

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

GradMap Graph::backward(NodeId loss) const {
    const Node& ln = node(loss);
    if (ln.value.size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.value.shape));

    // grads[i] empty until node i receives a contribution.
    std::vector<Tensor> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss)] = Tensor::scalar(1.0);

    auto grad_into = [&](NodeId id) -> Tensor& {
        Tensor& g = grads[static_cast<std::size_t>(id)];
        if (g.data.empty()) g = Tensor::zeros(node(id).value.shape);
        return g;
    };

    for (NodeId id = loss; id >= 0; --id) {
        const Node& n = node(id);
        const Tensor& gy = grads[static_cast<std::size_t>(id)];
        if (gy.data.empty() || n.op == Op::Leaf) continue;

        switch (n.op) {
            case Op::MatMul: {
                const Tensor& a = value(n.in[0]);
                const Tensor& b = value(n.in[1]);
                accumulate(grad_into(n.in[0]), ops::matmul(gy, ops::transpose(b)));
                accumulate(grad_into(n.in[1]), ops::matmul(ops::transpose(a), gy));
                break;
            }
            case Op::Transpose:
                accumulate(grad_into(n.in[0]), ops::transpose(gy));
                break;
            case Op::Reshape:
                accumulate(grad_into(n.in[0]), ops::reshape(gy, value(n.in[0]).shape));
                break;
            case Op::SoftmaxRows: {
                const Tensor& y = n.value;
                const int m = y.dim(0), cols = y.dim(1);
                Tensor gx = Tensor::zeros(y.shape);
                for (int i = 0; i < m; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * cols;
                    double dot = 0.0;
                    for (int j = 0; j < cols; ++j) dot += gy.data[off + j] * y.data[off + j];
                    for (int j = 0; j < cols; ++j)
                        gx.data[off + j] = y.data[off + j] * (gy.data[off + j] - dot);
                }
                accumulate(grad_into(n.in[0]), gx);
                break;
            }
            case Op::Relu: {
                const Tensor& x = value(n.in[0]);
                Tensor gx = gy;
                for (std::size_t i = 0; i < gx.size(); ++i)
                    if (x.data[i] <= 0.0) gx.data[i] = 0.0;  // subgradient 0 at the kink
                accumulate(grad_into(n.in[0]), gx);
                break;
            }
            case Op::Log: {
                const Tensor& x = value(n.in[0]);
                Tensor gx = gy;
                for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] /= x.data[i];
                accumulate(grad_into(n.in[0]), gx);
                break;
            }
            case Op::Abs: {
                const Tensor& x = value(n.in[0]);
                Tensor gx = gy;
                for (std::size_t i = 0; i < gx.size(); ++i) {
                    if (x.data[i] < 0.0)
                        gx.data[i] = -gx.data[i];
                    else if (x.data[i] == 0.0)
                        gx.data[i] = 0.0;
                }
                accumulate(grad_into(n.in[0]), gx);
                break;
            }
            case Op::Add:
                accumulate(grad_into(n.in[0]), gy);
                accumulate(grad_into(n.in[1]), gy);
                break;
            case Op::Sub: {
                accumulate(grad_into(n.in[0]), gy);
                accumulate(grad_into(n.in[1]), ops::scale(gy, -1.0));
                break;
            }
            case Op::Mul:
                accumulate(grad_into(n.in[0]), ops::mul(gy, value(n.in[1])));
                accumulate(grad_into(n.in[1]), ops::mul(gy, value(n.in[0])));
                break;
            case Op::Scale:
                accumulate(grad_into(n.in[0]), ops::scale(gy, n.scalar));
                break;
            case Op::MaskLast: {
                const Tensor& x = value(n.in[0]);
                const Tensor& m = value(n.in[1]);
                accumulate(grad_into(n.in[0]), ops::mask_channels_last(gy, m));
                Tensor gm = Tensor::zeros(m.shape);
                const std::size_t c = static_cast<std::size_t>(x.shape.back());
                for (std::size_t i = 0; i < x.size(); ++i)
                    gm.data[i / c] += gy.data[i] * x.data[i];
                accumulate(grad_into(n.in[1]), gm);
                break;
            }
            case Op::MaskFirst: {
                const Tensor& x = value(n.in[0]);
                const Tensor& m = value(n.in[1]);
                accumulate(grad_into(n.in[0]), ops::mask_channels_first(gy, m));
                Tensor gm = Tensor::zeros(m.shape);
                const std::size_t loc = m.size();
                for (std::size_t i = 0; i < x.size(); ++i)
                    gm.data[i % loc] += gy.data[i] * x.data[i];
                accumulate(grad_into(n.in[1]), gm);
                break;
            }
            case Op::BiasLast: {
                accumulate(grad_into(n.in[0]), gy);
                const Tensor& b = value(n.in[1]);
                Tensor gb = Tensor::zeros(b.shape);
                const std::size_t c = b.size();
                for (std::size_t i = 0; i < gy.size(); ++i) gb.data[i % c] += gy.data[i];
                accumulate(grad_into(n.in[1]), gb);
                break;
            }
            case Op::ReduceMean: {
                const Tensor& x = value(n.in[0]);
                const double g = gy.data[0] / static_cast<double>(x.size());
                accumulate(grad_into(n.in[0]), Tensor::full(x.shape, g));
                break;
            }
            case Op::Conv1d: {
                const Tensor& x = value(n.in[0]);
                const Tensor& w = value(n.in[1]);
                const int cin = x.dim(0), len = x.dim(1), cout = w.dim(0);
                Tensor gx = Tensor::zeros(x.shape);
                Tensor gw = Tensor::zeros(w.shape);
                Tensor gb = Tensor::zeros(value(n.in[2]).shape);
                for (int co = 0; co < cout; ++co)
                    for (int l = 0; l < len; ++l) {
                        const double g = gy.data[static_cast<std::size_t>(co) * len + l];
                        gb.data[static_cast<std::size_t>(co)] += g;
                        for (int ci = 0; ci < cin; ++ci)
                            for (int dk = 0; dk < 3; ++dk) {
                                const int src = l + dk - 1;
                                if (src < 0 || src >= len) continue;
                                const std::size_t wi =
                                    (static_cast<std::size_t>(co) * cin + ci) * 3 + dk;
                                const std::size_t xi = static_cast<std::size_t>(ci) * len + src;
                                gx.data[xi] += g * w.data[wi];
                                gw.data[wi] += g * x.data[xi];
                            }
                    }
                accumulate(grad_into(n.in[0]), gx);
                accumulate(grad_into(n.in[1]), gw);
                accumulate(grad_into(n.in[2]), gb);
                break;
            }
            case Op::Conv2d: {
                const Tensor& x = value(n.in[0]);
                const Tensor& w = value(n.in[1]);
                const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
                Tensor gx = Tensor::zeros(x.shape);
                Tensor gw = Tensor::zeros(w.shape);
                Tensor gb = Tensor::zeros(value(n.in[2]).shape);
                for (int co = 0; co < cout; ++co)
                    for (int r = 0; r < h; ++r)
                        for (int cidx = 0; cidx < wd; ++cidx) {
                            const double g =
                                gy.data[(static_cast<std::size_t>(co) * h + r) * wd + cidx];
                            gb.data[static_cast<std::size_t>(co)] += g;
                            for (int ci = 0; ci < cin; ++ci)
                                for (int dr = 0; dr < 3; ++dr)
                                    for (int dc = 0; dc < 3; ++dc) {
                                        const int sr = r + dr - 1, sc = cidx + dc - 1;
                                        if (sr < 0 || sr >= h || sc < 0 || sc >= wd) continue;
                                        const std::size_t wi =
                                            ((static_cast<std::size_t>(co) * cin + ci) * 3 + dr) *
                                                3 + dc;
                                        const std::size_t xi =
                                            (static_cast<std::size_t>(ci) * h + sr) * wd + sc;
                                        gx.data[xi] += g * w.data[wi];
                                        gw.data[wi] += g * x.data[xi];
                                    }
                        }
                accumulate(grad_into(n.in[0]), gx);
                accumulate(grad_into(n.in[1]), gw);
                accumulate(grad_into(n.in[2]), gb);
                break;
            }
            case Op::Leaf:
                break;
        }
    }

    GradMap out;
    for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
        const Node& n = node(id);
        if (!n.param) continue;
        Tensor& g = grads[static_cast<std::size_t>(id)];
        out.emplace(id, g.data.empty() ? Tensor::zeros(n.value.shape) : std::move(g));
    }
    return out;
}

}  // namespace td
