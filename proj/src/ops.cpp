#include "td/ops.hpp"

#include <algorithm>
#include <cmath>

namespace td::ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expected rank-2 operands, got " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p) {
            const double av = a.data[static_cast<std::size_t>(i) * k + p];
            for (int j = 0; j < n; ++j)
                out.data[static_cast<std::size_t>(i) * n + j] +=
                    av * b.data[static_cast<std::size_t>(p) * n + j];
        }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(a.shape));
    const int m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out.data[static_cast<std::size_t>(j) * m + i] =
                a.data[static_cast<std::size_t>(i) * n + j];
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (shape_size(shape) != a.size())
        throw ShapeError("reshape: element count mismatch " + shape_str(a.shape) +
                         " -> " + shape_str(shape));
    return Tensor(std::move(shape), a.data);
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + shape_str(x.shape));
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        const double* row = &x.data[static_cast<std::size_t>(i) * n];
        double* orow = &out.data[static_cast<std::size_t>(i) * n];
        double mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
            orow[j] = std::exp(row[j] - mx);
            sum += orow[j];
        }
        for (int j = 0; j < n; ++j) orow[j] /= sum;
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = std::max(v, 0.0);
    return out;
}

Tensor log_elem(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = std::log(v);
    return out;
}

Tensor abs_elem(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = std::fabs(v);
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data) v *= c;
    return out;
}

Tensor mask_channels_last(const Tensor& a, const Tensor& mask) {
    if (a.rank() < 2 || mask.rank() != a.rank() - 1 ||
        !std::equal(mask.shape.begin(), mask.shape.end(), a.shape.begin()))
        throw ShapeError("mask_channels_last: mask " + shape_str(mask.shape) +
                         " incompatible with " + shape_str(a.shape));
    const std::size_t c = static_cast<std::size_t>(a.shape.back());
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i / c];
    return out;
}

Tensor mask_channels_first(const Tensor& a, const Tensor& mask) {
    if (a.rank() < 2 || mask.rank() != a.rank() - 1 ||
        !std::equal(mask.shape.begin(), mask.shape.end(), a.shape.begin() + 1))
        throw ShapeError("mask_channels_first: mask " + shape_str(mask.shape) +
                         " incompatible with " + shape_str(a.shape));
    const std::size_t loc = mask.size();
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= mask.data[i % loc];
    return out;
}

Tensor bias_last(const Tensor& a, const Tensor& bias) {
    if (bias.rank() != 1 || bias.dim(0) != a.shape.back())
        throw ShapeError("bias_last: bias " + shape_str(bias.shape) +
                         " incompatible with " + shape_str(a.shape));
    const std::size_t c = bias.size();
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bias.data[i % c];
    return out;
}

Tensor reduce_mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("reduce_mean: empty tensor");
    double s = 0.0;
    for (double v : x.data) s += v;
    return Tensor::scalar(s / static_cast<double>(x.size()));
}

Tensor conv1d_same3(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1)
        throw ShapeError("conv1d_same3: expected x[Cin,L], w[Cout,Cin,3], b[Cout]");
    const int cin = x.dim(0), len = x.dim(1);
    const int cout = w.dim(0);
    if (w.dim(1) != cin || w.dim(2) != 3 || b.dim(0) != cout)
        throw ShapeError("conv1d_same3: weight " + shape_str(w.shape) + " / bias " +
                         shape_str(b.shape) + " incompatible with input " + shape_str(x.shape));
    Tensor out = Tensor::zeros({cout, len});
    for (int co = 0; co < cout; ++co)
        for (int l = 0; l < len; ++l) {
            double acc = b.data[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < cin; ++ci)
                for (int dk = 0; dk < 3; ++dk) {
                    const int src = l + dk - 1;
                    if (src < 0 || src >= len) continue;
                    acc += x.data[static_cast<std::size_t>(ci) * len + src] *
                           w.data[(static_cast<std::size_t>(co) * cin + ci) * 3 + dk];
                }
            out.data[static_cast<std::size_t>(co) * len + l] = acc;
        }
    return out;
}

Tensor conv2d_same3(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw ShapeError("conv2d_same3: expected x[Cin,H,W], w[Cout,Cin,3,3], b[Cout]");
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0);
    if (w.dim(1) != cin || w.dim(2) != 3 || w.dim(3) != 3 || b.dim(0) != cout)
        throw ShapeError("conv2d_same3: weight " + shape_str(w.shape) + " / bias " +
                         shape_str(b.shape) + " incompatible with input " + shape_str(x.shape));
    Tensor out = Tensor::zeros({cout, h, wd});
    for (int co = 0; co < cout; ++co)
        for (int r = 0; r < h; ++r)
            for (int cidx = 0; cidx < wd; ++cidx) {
                double acc = b.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int dr = 0; dr < 3; ++dr)
                        for (int dc = 0; dc < 3; ++dc) {
                            const int sr = r + dr - 1, sc = cidx + dc - 1;
                            if (sr < 0 || sr >= h || sc < 0 || sc >= wd) continue;
                            acc += x.data[(static_cast<std::size_t>(ci) * h + sr) * wd + sc] *
                                   w.data[((static_cast<std::size_t>(co) * cin + ci) * 3 + dr) * 3 + dc];
                        }
                out.data[(static_cast<std::size_t>(co) * h + r) * wd + cidx] = acc;
            }
    return out;
}

}  // namespace td::ops
