#include "td/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "td/distill.hpp"
#include "td/graph.hpp"
#include "td/ops.hpp"
#include "td/random.hpp"
#include "td/scene.hpp"

namespace td::oracle {

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("oracle matmul: bad shapes");
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a.data[static_cast<std::size_t>(i) * k + p] *
                       b.data[static_cast<std::size_t>(p) * n + j];
            out.data[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("oracle transpose: rank-2 only");
    Tensor out = Tensor::zeros({a.dim(1), a.dim(0)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < a.dim(1); ++j)
            out.data[static_cast<std::size_t>(j) * a.dim(0) + i] =
                a.data[static_cast<std::size_t>(i) * a.dim(1) + j];
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("oracle softmax: rank-2 only");
    const int m = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j)
            sum += std::exp(x.data[static_cast<std::size_t>(i) * n + j]);
        for (int j = 0; j < n; ++j)
            out.data[static_cast<std::size_t>(i) * n + j] =
                std::exp(x.data[static_cast<std::size_t>(i) * n + j]) / sum;
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data)
        if (v < 0.0) v = 0.0;
    return out;
}

Tensor conv1d_same3(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
        w.dim(2) != 3 || b.dim(0) != w.dim(0))
        throw ShapeError("oracle conv1d: bad shapes");
    const int cin = x.dim(0), len = x.dim(1), cout = w.dim(0);
    Tensor out = Tensor::zeros({cout, len});
    for (int co = 0; co < cout; ++co)
        for (int l = 0; l < len; ++l) {
            double acc = b.data[static_cast<std::size_t>(co)];
            for (int ci = 0; ci < cin; ++ci)
                for (int t = -1; t <= 1; ++t) {
                    const int src = l + t;
                    if (src < 0 || src >= len) continue;
                    acc += x.data[static_cast<std::size_t>(ci) * len + src] *
                           w.data[(static_cast<std::size_t>(co) * cin + ci) * 3 +
                                  static_cast<std::size_t>(t + 1)];
                }
            out.data[static_cast<std::size_t>(co) * len + l] = acc;
        }
    return out;
}

Tensor conv2d_same3(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1 || w.dim(1) != x.dim(0) ||
        w.dim(2) != 3 || w.dim(3) != 3 || b.dim(0) != w.dim(0))
        throw ShapeError("oracle conv2d: bad shapes");
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2), cout = w.dim(0);
    Tensor out = Tensor::zeros({cout, h, wd});
    for (int co = 0; co < cout; ++co)
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < wd; ++c) {
                double acc = b.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int dr = -1; dr <= 1; ++dr)
                        for (int dc = -1; dc <= 1; ++dc) {
                            const int sr = r + dr, sc = c + dc;
                            if (sr < 0 || sr >= h || sc < 0 || sc >= wd) continue;
                            acc += x.data[(static_cast<std::size_t>(ci) * h + sr) * wd + sc] *
                                   w.data[((static_cast<std::size_t>(co) * cin + ci) * 3 +
                                           static_cast<std::size_t>(dr + 1)) *
                                              3 +
                                          static_cast<std::size_t>(dc + 1)];
                        }
                out.data[(static_cast<std::size_t>(co) * h + r) * wd + c] = acc;
            }
    return out;
}

double reduce_mean(const Tensor& x) {
    if (x.size() == 0) throw ShapeError("oracle reduce_mean: empty tensor");
    double s = 0.0;
    for (double v : x.data) s += v;
    return s / static_cast<double>(x.size());
}

Tensor oracle_forward(const std::string& op, const std::vector<Tensor>& inputs) {
    auto need = [&](std::size_t n) {
        if (inputs.size() != n)
            throw std::invalid_argument("oracle_forward: " + op + " expects " +
                                        std::to_string(n) + " inputs");
    };
    if (op == "matmul") {
        need(2);
        return matmul(inputs[0], inputs[1]);
    }
    if (op == "transpose") {
        need(1);
        return transpose(inputs[0]);
    }
    if (op == "softmax_rows") {
        need(1);
        return softmax_rows(inputs[0]);
    }
    if (op == "relu") {
        need(1);
        return relu(inputs[0]);
    }
    if (op == "conv1d_same3") {
        need(3);
        return conv1d_same3(inputs[0], inputs[1], inputs[2]);
    }
    if (op == "conv2d_same3") {
        need(3);
        return conv2d_same3(inputs[0], inputs[1], inputs[2]);
    }
    if (op == "reduce_mean") {
        need(1);
        return Tensor::scalar(reduce_mean(inputs[0]));
    }
    throw std::invalid_argument("oracle_forward: unknown op '" + op + "'");
}

namespace {

// softmax(q k^T / sqrt(C)) v, term by term.
Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
    Tensor scores = matmul(q, transpose(k));
    const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    for (double& s : scores.data) s *= inv;
    return matmul(softmax_rows(scores), v);
}

Tensor frame_tokens(const Tensor& f) {  // [C,H,W] -> [L,C]
    const int c = f.dim(0), h = f.dim(1), w = f.dim(2);
    Tensor tok = Tensor::zeros({h * w, c});
    for (int ci = 0; ci < c; ++ci)
        for (int l = 0; l < h * w; ++l)
            tok.data[static_cast<std::size_t>(l) * c + ci] =
                f.data[static_cast<std::size_t>(ci) * h * w + l];
    return tok;
}

Tensor tokens_frame(const Tensor& tok, int c, int h, int w) {  // [L,C] -> [C,H,W]
    Tensor f = Tensor::zeros({c, h, w});
    for (int ci = 0; ci < c; ++ci)
        for (int l = 0; l < h * w; ++l)
            f.data[static_cast<std::size_t>(ci) * h * w + l] =
                tok.data[static_cast<std::size_t>(l) * c + ci];
    return f;
}

double mse(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.size());
}

}  // namespace

std::vector<Tensor> tsa_aggregate(const std::vector<Tensor>& teacher_frames, int t_stu) {
    const int t_tea = static_cast<int>(teacher_frames.size());
    const int k = t_tea - t_stu;
    if (t_stu < 1 || k < 0 || k >= 8) throw ShapeError("oracle tsa: bad frame counts");
    std::vector<Tensor> out;
    for (int t = 0; t < t_stu; ++t) {
        Tensor agg = Tensor::zeros(teacher_frames[0].shape);
        for (int t1 = 0; t1 <= t + k; ++t1) {
            Tensor term = naive_attention(teacher_frames[static_cast<std::size_t>(t1)],
                                          teacher_frames[static_cast<std::size_t>(t)],
                                          teacher_frames[static_cast<std::size_t>(t1)]);
            for (std::size_t i = 0; i < agg.size(); ++i) agg.data[i] += term.data[i];
        }
        out.push_back(std::move(agg));
    }
    return out;
}

std::vector<Tensor> tsa_aggregate_swapped(const std::vector<Tensor>& teacher_frames, int t_stu) {
    const int t_tea = static_cast<int>(teacher_frames.size());
    const int k = t_tea - t_stu;
    if (t_stu < 1 || k < 0 || k >= 8) throw ShapeError("oracle tsa swapped: bad frame counts");
    std::vector<Tensor> out;
    for (int t = 0; t < t_stu; ++t) {
        Tensor agg = Tensor::zeros(teacher_frames[0].shape);
        for (int t1 = 0; t1 <= t + k; ++t1) {
            Tensor term = naive_attention(teacher_frames[static_cast<std::size_t>(t)],
                                          teacher_frames[static_cast<std::size_t>(t1)],
                                          teacher_frames[static_cast<std::size_t>(t1)]);
            for (std::size_t i = 0; i < agg.size(); ++i) agg.data[i] += term.data[i];
        }
        out.push_back(std::move(agg));
    }
    return out;
}

std::vector<Tensor> tsa_aggregate_pv(const std::vector<Tensor>& teacher_frames, int t_stu) {
    const int c = teacher_frames[0].dim(0), h = teacher_frames[0].dim(1),
              w = teacher_frames[0].dim(2);
    std::vector<Tensor> tokens;
    for (const Tensor& f : teacher_frames) tokens.push_back(frame_tokens(f));
    std::vector<Tensor> agg = tsa_aggregate(tokens, t_stu);
    std::vector<Tensor> out;
    for (const Tensor& a : agg) out.push_back(tokens_frame(a, c, h, w));
    return out;
}

Tensor generator_apply(const Tensor& frame, const OracleGenerator& gen) {
    if (gen.two_d) return conv2d_same3(relu(conv2d_same3(frame, gen.w1, gen.b1)), gen.w2, gen.b2);
    // BEV frame [Nq,C]: run the 1D convolution along the query axis
    Tensor x = transpose(frame);
    Tensor y = conv1d_same3(relu(conv1d_same3(x, gen.w1, gen.b1)), gen.w2, gen.b2);
    return transpose(y);
}

namespace {

Tensor mask_frame_last(const Tensor& frame, const Tensor& mask, int t) {
    // [Nq,C] frame, [T,Nq] mask
    Tensor out = frame;
    const int nq = frame.dim(0), c = frame.dim(1);
    for (int q = 0; q < nq; ++q)
        for (int ci = 0; ci < c; ++ci)
            out.data[static_cast<std::size_t>(q) * c + ci] *=
                mask.data[static_cast<std::size_t>(t) * nq + q];
    return out;
}

Tensor mask_frame_first(const Tensor& frame, const Tensor& mask, int t) {
    // [C,H,W] frame, [T,H,W] mask
    Tensor out = frame;
    const int c = frame.dim(0);
    const std::size_t loc = static_cast<std::size_t>(frame.dim(1)) * frame.dim(2);
    for (int ci = 0; ci < c; ++ci)
        for (std::size_t l = 0; l < loc; ++l)
            out.data[static_cast<std::size_t>(ci) * loc + l] *=
                mask.data[static_cast<std::size_t>(t) * loc + l];
    return out;
}

}  // namespace

double rc_bev(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
              const OracleGenerator& gen, const Tensor& mask) {
    const int t_stu = static_cast<int>(student.size());
    std::vector<Tensor> agg = tsa_aggregate(teacher, t_stu);
    double loss = 0.0;
    for (int t = 0; t < t_stu; ++t) {
        Tensor gen_out =
            generator_apply(mask_frame_last(student[static_cast<std::size_t>(t)], mask, t), gen);
        loss += mse(gen_out, agg[static_cast<std::size_t>(t)]);
    }
    return loss / t_stu;
}

double rc_pv(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
             const OracleGenerator& gen, const Tensor& mask) {
    const int t_stu = static_cast<int>(student.size());
    std::vector<Tensor> agg = tsa_aggregate_pv(teacher, t_stu);
    double loss = 0.0;
    for (int t = 0; t < t_stu; ++t) {
        Tensor gen_out =
            generator_apply(mask_frame_first(student[static_cast<std::size_t>(t)], mask, t), gen);
        loss += mse(gen_out, agg[static_cast<std::size_t>(t)]);
    }
    return loss / t_stu;
}

double spatial_reconstruction(const std::vector<Tensor>& student,
                              const std::vector<Tensor>& teacher, const OracleGenerator& gen,
                              const Tensor& mask) {
    const int t_stu = static_cast<int>(student.size());
    double loss = 0.0;
    for (int t = 0; t < t_stu; ++t) {
        Tensor gen_out =
            generator_apply(mask_frame_first(student[static_cast<std::size_t>(t)], mask, t), gen);
        loss += mse(gen_out, teacher[static_cast<std::size_t>(t)]);
    }
    return loss / t_stu;
}

double trd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, double tau) {
    const int t = static_cast<int>(student.size());
    double loss = 0.0;
    int pairs = 0;
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) {
            Tensor s_stu = matmul(student[static_cast<std::size_t>(i)],
                                  transpose(student[static_cast<std::size_t>(j)]));
            Tensor s_tea = matmul(teacher[static_cast<std::size_t>(i)],
                                  transpose(teacher[static_cast<std::size_t>(j)]));
            for (double& v : s_stu.data) v /= tau;
            for (double& v : s_tea.data) v /= tau;
            Tensor p = softmax_rows(s_stu);
            Tensor q = softmax_rows(s_tea);
            double pair_loss = 0.0;
            for (std::size_t n = 0; n < p.size(); ++n)
                pair_loss += p.data[n] * (std::log(p.data[n]) - std::log(q.data[n]));
            loss += pair_loss / static_cast<double>(p.size());
            ++pairs;
        }
    return loss / pairs;
}

double dc(const Tensor& student, const Tensor& teacher) {
    require_same_shape(student, teacher, "oracle dc");
    return mse(student, teacher);
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
    Tensor grad = Tensor::zeros(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = probe.data[i];
        probe.data[i] = keep + step;
        const double hi = f(probe);
        probe.data[i] = keep - step;
        const double lo = f(probe);
        probe.data[i] = keep;
        grad.data[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Gradient check suite
// ---------------------------------------------------------------------------

namespace {

constexpr double kGradTol = 1e-5;
constexpr double kFdStep = 1e-5;
constexpr double kKinkMargin = 1e-3;

Tensor random_tensor(std::vector<int> shape, RandomSource& rs, double sd = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = sd * rs.normal();
    return t;
}

struct BuiltGraph {
    Graph g;
    NodeId loss = -1;
    std::vector<NodeId> params;
};

// Builds the loss graph from one concrete set of input tensors. The same
// builder serves the analytic pass and every finite-difference probe.
using Builder = std::function<BuiltGraph(const std::vector<Tensor>&)>;

struct Check {
    std::string name;
    std::function<std::vector<Tensor>(RandomSource&)> make_inputs;
    Builder build;
};

GradCheckReport run_check(const Check& chk, RandomSource& rs, bool corrupt) {
    GradCheckReport rep;
    rep.op = chk.name;
    rep.tolerance = kGradTol;

    std::vector<Tensor> inputs;
    BuiltGraph built;
    bool ok = false;
    for (int attempt = 0; attempt < 64; ++attempt) {
        inputs = chk.make_inputs(rs);
        built = chk.build(inputs);
        if (built.g.min_abs_kink_input() > kKinkMargin) {
            ok = true;
            break;
        }
    }
    if (!ok) {
        rep.pass = false;
        rep.max_rel_err = std::numeric_limits<double>::infinity();
        return rep;
    }

    GradMap grads = built.g.backward(built.loss);
    for (std::size_t p = 0; p < inputs.size(); ++p) {
        Tensor analytic = grads.at(built.params[p]);
        if (corrupt)
            for (double& v : analytic.data) v = v * 1.01 + 1e-4;
        auto f = [&](const Tensor& x) {
            std::vector<Tensor> probe = inputs;
            probe[p] = x;
            BuiltGraph bg = chk.build(probe);
            return bg.g.value(bg.loss).item();
        };
        Tensor fd = finite_diff_grad(f, inputs[p], kFdStep);
        for (std::size_t i = 0; i < fd.size(); ++i) {
            const double a = analytic.data[i], b = fd.data[i];
            const double abs_err = std::fabs(a - b);
            const double rel = abs_err / std::max({std::fabs(a), std::fabs(b), 1e-4});
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
        }
    }
    rep.pass = rep.max_rel_err < rep.tolerance;
    return rep;
}

// Graph-side transcription of the teacher aggregation, used only to check
// gradients of the attention composite.
NodeId graph_tsa(Graph& g, const std::vector<NodeId>& frames, int t_stu, int channels) {
    const int k = static_cast<int>(frames.size()) - t_stu;
    const double inv = 1.0 / std::sqrt(static_cast<double>(channels));
    NodeId total = -1;
    for (int t = 0; t < t_stu; ++t) {
        NodeId agg = -1;
        for (int t1 = 0; t1 <= t + k; ++t1) {
            NodeId scores = g.scale(
                g.matmul(frames[static_cast<std::size_t>(t1)],
                         g.transpose(frames[static_cast<std::size_t>(t)])),
                inv);
            NodeId term = g.matmul(g.softmax_rows(scores), frames[static_cast<std::size_t>(t1)]);
            agg = agg < 0 ? term : g.add(agg, term);
        }
        NodeId m = g.reduce_mean(g.mul(agg, agg));
        total = total < 0 ? m : g.add(total, m);
    }
    return total;
}

std::vector<Check> make_checks(std::uint64_t seed) {
    std::vector<Check> checks;

    checks.push_back({"matmul",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs),
                                                     random_tensor({4, 2}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId a = b.g.parameter(in[0]);
                          NodeId c = b.g.parameter(in[1]);
                          NodeId m = b.g.matmul(a, c);
                          b.loss = b.g.reduce_mean(b.g.mul(m, m));
                          b.params = {a, c};
                          return b;
                      }});

    checks.push_back({"softmax_rows",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs),
                                                     random_tensor({3, 4}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId w = b.g.parameter(in[1]);
                          b.loss = b.g.reduce_mean(b.g.mul(b.g.softmax_rows(x), w));
                          b.params = {x, w};
                          return b;
                      }});

    checks.push_back({"relu",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId r = b.g.relu(x);
                          b.loss = b.g.reduce_mean(b.g.mul(r, r));
                          b.params = {x};
                          return b;
                      }});

    checks.push_back({"conv1d_same3",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({2, 5}, rs),
                                                     random_tensor({3, 2, 3}, rs),
                                                     random_tensor({3}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId w = b.g.parameter(in[1]);
                          NodeId bias = b.g.parameter(in[2]);
                          NodeId y = b.g.conv1d_same3(x, w, bias);
                          b.loss = b.g.reduce_mean(b.g.mul(y, y));
                          b.params = {x, w, bias};
                          return b;
                      }});

    checks.push_back({"conv2d_same3",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({2, 4, 4}, rs),
                                                     random_tensor({2, 2, 3, 3}, rs),
                                                     random_tensor({2}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId w = b.g.parameter(in[1]);
                          NodeId bias = b.g.parameter(in[2]);
                          NodeId y = b.g.conv2d_same3(x, w, bias);
                          b.loss = b.g.reduce_mean(b.g.mul(y, y));
                          b.params = {x, w, bias};
                          return b;
                      }});

    checks.push_back({"elementwise",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 3}, rs),
                                                     random_tensor({3, 3}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId a = b.g.parameter(in[0]);
                          NodeId c = b.g.parameter(in[1]);
                          NodeId y = b.g.mul(b.g.add(a, c), b.g.scale(b.g.sub(a, c), 0.5));
                          b.loss = b.g.reduce_mean(y);
                          b.params = {a, c};
                          return b;
                      }});

    checks.push_back({"mask_broadcast",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({4, 3}, rs),
                                                     random_tensor({4}, rs),
                                                     random_tensor({2, 3, 3}, rs),
                                                     random_tensor({3, 3}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId m = b.g.parameter(in[1]);
                          NodeId x2 = b.g.parameter(in[2]);
                          NodeId m2 = b.g.parameter(in[3]);
                          NodeId y = b.g.mask_channels_last(x, m);
                          NodeId y2 = b.g.mask_channels_first(x2, m2);
                          b.loss = b.g.add(b.g.reduce_mean(b.g.mul(y, y)),
                                           b.g.reduce_mean(b.g.mul(y2, y2)));
                          b.params = {x, m, x2, m2};
                          return b;
                      }});

    checks.push_back({"bias_last",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs),
                                                     random_tensor({4}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId bias = b.g.parameter(in[1]);
                          NodeId y = b.g.bias_last(x, bias);
                          b.loss = b.g.reduce_mean(b.g.mul(y, y));
                          b.params = {x, bias};
                          return b;
                      }});

    checks.push_back({"reduce_mean",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({2, 3}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          b.loss = b.g.reduce_mean(x);
                          b.params = {x};
                          return b;
                      }});

    checks.push_back({"log",
                      [](RandomSource& rs) {
                          Tensor t = random_tensor({3, 3}, rs, 0.3);
                          for (double& v : t.data) v = std::fabs(v) + 0.5;
                          return std::vector<Tensor>{t, random_tensor({3, 3}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId w = b.g.parameter(in[1]);
                          b.loss = b.g.reduce_mean(b.g.mul(b.g.log(x), w));
                          b.params = {x, w};
                          return b;
                      }});

    checks.push_back({"abs",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          b.loss = b.g.reduce_mean(b.g.abs(x));
                          b.params = {x};
                          return b;
                      }});

    checks.push_back({"transpose_reshape",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 4}, rs)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          NodeId y = b.g.reshape(b.g.transpose(x), {2, 6});
                          b.loss = b.g.reduce_mean(b.g.mul(y, y));
                          b.params = {x};
                          return b;
                      }});

    checks.push_back({"tsa_aggregate",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 2}, rs, 0.6),
                                                     random_tensor({3, 2}, rs, 0.6)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          std::vector<NodeId> frames{b.g.parameter(in[0]), b.g.parameter(in[1])};
                          b.loss = graph_tsa(b.g, frames, 1, 2);
                          b.params = frames;
                          return b;
                      }});

    checks.push_back({"generator",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{
                              random_tensor({4, 2}, rs), random_tensor({2, 2, 3}, rs, 0.7),
                              random_tensor({2}, rs, 0.5), random_tensor({2, 2, 3}, rs, 0.7),
                              random_tensor({2}, rs, 0.5)};
                      },
                      [](const std::vector<Tensor>& in) {
                          BuiltGraph b;
                          NodeId x = b.g.parameter(in[0]);
                          distill::GeneratorNodes gen;
                          gen.two_d = false;
                          gen.w1 = b.g.parameter(in[1]);
                          gen.b1 = b.g.parameter(in[2]);
                          gen.w2 = b.g.parameter(in[3]);
                          gen.b2 = b.g.parameter(in[4]);
                          NodeId y = distill::generate_frame(b.g, x, gen);
                          b.loss = b.g.reduce_mean(b.g.mul(y, y));
                          b.params = {x, gen.w1, gen.b1, gen.w2, gen.b2};
                          return b;
                      }});

    const std::uint64_t fixture_seed = seed ^ 0xABCDEF1234567890ULL;

    checks.push_back(
        {"rc_bev_loss",
         [](RandomSource& rs) {
             std::vector<Tensor> in;
             in.push_back(random_tensor({3, 2}, rs));  // student frame 0
             in.push_back(random_tensor({3, 2}, rs));  // student frame 1
             in.push_back(random_tensor({2, 2, 3}, rs, 0.7));
             in.push_back(random_tensor({2}, rs, 0.5));
             in.push_back(random_tensor({2, 2, 3}, rs, 0.7));
             in.push_back(random_tensor({2}, rs, 0.5));
             return in;
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             RandomSource trs(fixture_seed);
             std::vector<Tensor> tea;
             for (int t = 0; t < 3; ++t) tea.push_back(random_tensor({3, 2}, trs, 0.6));
             distill::FeatureSet teacher = distill::FeatureSet::from_frames(tea);
             distill::MaskPlan mp = distill::generate_mask({2, 3}, 0.4, fixture_seed + 1);

             BuiltGraph b;
             distill::FeatureNodes stu;
             stu.queries = 3;
             stu.channels = 2;
             stu.frames = {b.g.parameter(in[0]), b.g.parameter(in[1])};
             distill::GeneratorNodes gen;
             gen.two_d = false;
             gen.w1 = b.g.parameter(in[2]);
             gen.b1 = b.g.parameter(in[3]);
             gen.w2 = b.g.parameter(in[4]);
             gen.b2 = b.g.parameter(in[5]);
             b.loss = distill::rc_bev_loss(b.g, stu, teacher, gen, mp);
             b.params = {stu.frames[0], stu.frames[1], gen.w1, gen.b1, gen.w2, gen.b2};
             return b;
         }});

    checks.push_back(
        {"rc_pv_loss",
         [](RandomSource& rs) {
             std::vector<Tensor> in;
             in.push_back(random_tensor({2, 3, 3}, rs));  // student frame
             in.push_back(random_tensor({2, 2, 3, 3}, rs, 0.4));
             in.push_back(random_tensor({2}, rs, 0.5));
             in.push_back(random_tensor({2, 2, 3, 3}, rs, 0.4));
             in.push_back(random_tensor({2}, rs, 0.5));
             return in;
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             RandomSource trs(fixture_seed + 2);
             std::vector<Tensor> tea;
             for (int t = 0; t < 2; ++t) tea.push_back(random_tensor({2, 3, 3}, trs, 0.6));
             distill::PvFeatureSet teacher = distill::PvFeatureSet::from_frames(tea, 3);
             distill::MaskPlan mp = distill::generate_mask({1, 3, 3}, 0.4, fixture_seed + 3);

             BuiltGraph b;
             distill::PvFeatureNodes stu;
             stu.channels = 2;
             stu.height = 3;
             stu.width = 3;
             stu.level = 3;
             stu.frames = {b.g.parameter(in[0])};
             distill::GeneratorNodes gen;
             gen.two_d = true;
             gen.w1 = b.g.parameter(in[1]);
             gen.b1 = b.g.parameter(in[2]);
             gen.w2 = b.g.parameter(in[3]);
             gen.b2 = b.g.parameter(in[4]);
             b.loss = distill::rc_pv_loss(b.g, stu, teacher, gen, mp);
             b.params = {stu.frames[0], gen.w1, gen.b1, gen.w2, gen.b2};
             return b;
         }});

    checks.push_back(
        {"spatial_reconstruction_loss",
         [](RandomSource& rs) {
             std::vector<Tensor> in;
             in.push_back(random_tensor({2, 3, 3}, rs));
             in.push_back(random_tensor({2, 2, 3, 3}, rs, 0.4));
             in.push_back(random_tensor({2}, rs, 0.5));
             in.push_back(random_tensor({2, 2, 3, 3}, rs, 0.4));
             in.push_back(random_tensor({2}, rs, 0.5));
             return in;
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             RandomSource trs(fixture_seed + 4);
             std::vector<Tensor> tea{random_tensor({2, 3, 3}, trs, 0.6)};
             distill::PvFeatureSet teacher = distill::PvFeatureSet::from_frames(tea, 1);
             distill::MaskPlan mp = distill::generate_mask({1, 3, 3}, 0.4, fixture_seed + 5);

             BuiltGraph b;
             distill::PvFeatureNodes stu;
             stu.channels = 2;
             stu.height = 3;
             stu.width = 3;
             stu.level = 1;
             stu.frames = {b.g.parameter(in[0])};
             distill::GeneratorNodes gen;
             gen.two_d = true;
             gen.w1 = b.g.parameter(in[1]);
             gen.b1 = b.g.parameter(in[2]);
             gen.w2 = b.g.parameter(in[3]);
             gen.b2 = b.g.parameter(in[4]);
             b.loss = distill::spatial_reconstruction_loss(b.g, stu, teacher, gen, mp);
             b.params = {stu.frames[0], gen.w1, gen.b1, gen.w2, gen.b2};
             return b;
         }});

    checks.push_back(
        {"trd_loss",
         [](RandomSource& rs) {
             return std::vector<Tensor>{random_tensor({3, 2}, rs, 0.5),
                                        random_tensor({3, 2}, rs, 0.5)};
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             RandomSource trs(fixture_seed + 6);
             std::vector<Tensor> tea;
             for (int t = 0; t < 2; ++t) tea.push_back(random_tensor({3, 2}, trs, 0.5));
             distill::FeatureSet teacher = distill::FeatureSet::from_frames(tea);

             BuiltGraph b;
             distill::FeatureNodes stu;
             stu.queries = 3;
             stu.channels = 2;
             stu.frames = {b.g.parameter(in[0]), b.g.parameter(in[1])};
             b.loss = distill::trd_loss(b.g, stu, teacher, 0.5);
             b.params = stu.frames;
             return b;
         }});

    checks.push_back({"dc_loss",
                      [](RandomSource& rs) {
                          return std::vector<Tensor>{random_tensor({3, 2}, rs)};
                      },
                      [fixture_seed](const std::vector<Tensor>& in) {
                          RandomSource trs(fixture_seed + 7);
                          Tensor teacher = random_tensor({3, 2}, trs);
                          BuiltGraph b;
                          NodeId d = b.g.parameter(in[0]);
                          b.loss = distill::dc_loss(b.g, d, teacher);
                          b.params = {d};
                          return b;
                      }});

    // encoder and decoder parameters through the toy task + decoded-feature
    // losses
    checks.push_back(
        {"encoder_params",
         [](RandomSource& rs) {
             scene::EncoderParams p = scene::make_encoder(2, rs.next_u64());
             std::vector<Tensor> in;
             for (auto& [name, t] : p.named_params()) in.push_back(*t);
             return in;
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             scene::SceneSample s = scene::generate_scene(fixture_seed + 8, 3, 3);
             scene::DecoderParams dec = scene::make_decoder(2, fixture_seed + 9);

             BuiltGraph b;
             scene::EncoderNodes enc;
             enc.w_emb = b.g.parameter(in[0]);
             enc.b_emb = b.g.parameter(in[1]);
             enc.wq = b.g.parameter(in[2]);
             enc.wk = b.g.parameter(in[3]);
             enc.wv = b.g.parameter(in[4]);
             enc.pv_w = b.g.parameter(in[5]);
             enc.pv_b = b.g.parameter(in[6]);
             enc.pv_w_lo = b.g.parameter(in[7]);
             enc.pv_b_lo = b.g.parameter(in[8]);
             scene::EncodeResult er = scene::encode(b.g, enc, s, 2, 4, 3, 3);
             scene::DecoderNodes dn = scene::add_decoder(b.g, dec, false);
             scene::DecodeResult dr = scene::decode_and_regress(b.g, dn, er.bev);
             NodeId pv_term = b.g.reduce_mean(
                 b.g.mul(er.pv3.frames[0], er.pv3.frames[0]));
             NodeId pv1_term = b.g.reduce_mean(
                 b.g.mul(er.pv1.frames[0], er.pv1.frames[0]));
             b.loss = b.g.add(b.g.add(scene::task_loss(b.g, dr.predictions, s), pv_term),
                              pv1_term);
             b.params = {enc.w_emb, enc.b_emb, enc.wq,      enc.wk,     enc.wv,
                         enc.pv_w,  enc.pv_b,  enc.pv_w_lo, enc.pv_b_lo};
             return b;
         }});

    checks.push_back(
        {"decoder_params",
         [](RandomSource& rs) {
             scene::DecoderParams p = scene::make_decoder(2, rs.next_u64());
             std::vector<Tensor> in;
             for (auto& [name, t] : p.named_params()) in.push_back(*t);
             return in;
         },
         [fixture_seed](const std::vector<Tensor>& in) {
             scene::SceneSample s = scene::generate_scene(fixture_seed + 10, 3, 3);
             scene::EncoderParams enc_p = scene::make_encoder(2, fixture_seed + 11);
             RandomSource trs(fixture_seed + 12);
             Tensor teacher_d = random_tensor({4, 2}, trs, 0.5);

             BuiltGraph b;
             scene::EncoderNodes enc = scene::add_encoder(b.g, enc_p, false);
             scene::EncodeResult er = scene::encode(b.g, enc, s, 2, 4, 3, 3);
             scene::DecoderNodes dn;
             dn.w1 = b.g.parameter(in[0]);
             dn.b1 = b.g.parameter(in[1]);
             dn.w2 = b.g.parameter(in[2]);
             dn.b2 = b.g.parameter(in[3]);
             dn.w_head = b.g.parameter(in[4]);
             dn.b_head = b.g.parameter(in[5]);
             scene::DecodeResult dr = scene::decode_and_regress(b.g, dn, er.bev);
             b.loss = b.g.add(scene::task_loss(b.g, dr.predictions, s),
                              distill::dc_loss(b.g, dr.decoded, teacher_d));
             b.params = {dn.w1, dn.b1, dn.w2, dn.b2, dn.w_head, dn.b_head};
             return b;
         }});

    return checks;
}

}  // namespace

std::vector<GradCheckReport> gradcheck_all(std::uint64_t seed, const std::string& corrupt_op) {
    RandomSource rs(seed);
    std::vector<GradCheckReport> reports;
    for (const Check& chk : make_checks(seed))
        reports.push_back(run_check(chk, rs, chk.name == corrupt_op));
    return reports;
}

// ---------------------------------------------------------------------------
// Forward equivalence suite
// ---------------------------------------------------------------------------

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "equivalence");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

EquivReport run_equiv(const std::string& op, int instances, double tolerance,
                      const std::function<double(RandomSource&)>& one) {
    EquivReport r;
    r.op = op;
    r.instances = instances;
    r.tolerance = tolerance;
    RandomSource rs(0x5eed0000u + std::hash<std::string>{}(op));
    for (int i = 0; i < instances; ++i) r.max_abs_err = std::max(r.max_abs_err, one(rs));
    r.pass = r.max_abs_err < tolerance;
    return r;
}

int rand_dim(RandomSource& rs, int lo, int hi) {
    return lo + static_cast<int>(rs.next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

std::vector<EquivReport> forward_equivalence(std::uint64_t seed, int instances_per_op) {
    constexpr double kTol = 1e-10;
    std::vector<EquivReport> out;
    RandomSource seeder(seed);
    const std::uint64_t base = seeder.next_u64();

    out.push_back(run_equiv("matmul", instances_per_op, kTol, [&](RandomSource& rs) {
        const int m = rand_dim(rs, 1, 6), k = rand_dim(rs, 1, 6), n = rand_dim(rs, 1, 6);
        Tensor a = random_tensor({m, k}, rs), b = random_tensor({k, n}, rs);
        return max_abs_diff(ops::matmul(a, b), matmul(a, b));
    }));

    out.push_back(run_equiv("softmax_rows", instances_per_op, kTol, [&](RandomSource& rs) {
        Tensor x = random_tensor({rand_dim(rs, 1, 5), rand_dim(rs, 1, 5)}, rs, 2.0);
        return max_abs_diff(ops::softmax_rows(x), softmax_rows(x));
    }));

    out.push_back(run_equiv("relu", instances_per_op, 0.0 + kTol, [&](RandomSource& rs) {
        Tensor x = random_tensor({rand_dim(rs, 1, 5), rand_dim(rs, 1, 5)}, rs);
        return max_abs_diff(ops::relu(x), relu(x));
    }));

    out.push_back(run_equiv("conv1d_same3", instances_per_op, kTol, [&](RandomSource& rs) {
        const int cin = rand_dim(rs, 1, 3), cout = rand_dim(rs, 1, 3), len = rand_dim(rs, 3, 7);
        Tensor x = random_tensor({cin, len}, rs);
        Tensor w = random_tensor({cout, cin, 3}, rs);
        Tensor b = random_tensor({cout}, rs);
        return max_abs_diff(ops::conv1d_same3(x, w, b), conv1d_same3(x, w, b));
    }));

    out.push_back(run_equiv("conv2d_same3", instances_per_op, kTol, [&](RandomSource& rs) {
        const int cin = rand_dim(rs, 1, 2), cout = rand_dim(rs, 1, 2);
        const int h = rand_dim(rs, 3, 5), w = rand_dim(rs, 3, 5);
        Tensor x = random_tensor({cin, h, w}, rs);
        Tensor k = random_tensor({cout, cin, 3, 3}, rs);
        Tensor b = random_tensor({cout}, rs);
        return max_abs_diff(ops::conv2d_same3(x, k, b), conv2d_same3(x, k, b));
    }));

    out.push_back(run_equiv("reduce_mean", instances_per_op, kTol, [&](RandomSource& rs) {
        Tensor x = random_tensor({rand_dim(rs, 1, 5), rand_dim(rs, 1, 5)}, rs);
        return std::fabs(ops::reduce_mean(x).item() - reduce_mean(x));
    }));

    out.push_back(run_equiv("elementwise", instances_per_op, kTol, [&](RandomSource& rs) {
        const int m = rand_dim(rs, 1, 5), n = rand_dim(rs, 1, 5);
        Tensor a = random_tensor({m, n}, rs), b = random_tensor({m, n}, rs);
        double worst = 0.0;
        Tensor naive = a;
        for (std::size_t i = 0; i < naive.size(); ++i) naive.data[i] = a.data[i] + b.data[i];
        worst = std::max(worst, max_abs_diff(ops::add(a, b), naive));
        for (std::size_t i = 0; i < naive.size(); ++i) naive.data[i] = a.data[i] - b.data[i];
        worst = std::max(worst, max_abs_diff(ops::sub(a, b), naive));
        for (std::size_t i = 0; i < naive.size(); ++i) naive.data[i] = a.data[i] * b.data[i];
        worst = std::max(worst, max_abs_diff(ops::mul(a, b), naive));
        for (std::size_t i = 0; i < naive.size(); ++i) naive.data[i] = a.data[i] * 0.37;
        worst = std::max(worst, max_abs_diff(ops::scale(a, 0.37), naive));
        return worst;
    }));

    out.push_back(run_equiv("tsa_aggregate", instances_per_op, kTol, [&](RandomSource& rs) {
        const int t_stu = rand_dim(rs, 1, 2), k = rand_dim(rs, 0, 2);
        const int nq = rand_dim(rs, 2, 4), c = rand_dim(rs, 1, 3);
        std::vector<Tensor> tea;
        for (int t = 0; t < t_stu + k; ++t) tea.push_back(random_tensor({nq, c}, rs, 0.7));
        distill::FeatureSet impl = distill::tsa_aggregate(distill::FeatureSet::from_frames(tea),
                                                          t_stu);
        std::vector<Tensor> ref = tsa_aggregate(tea, t_stu);
        double worst = 0.0;
        for (int t = 0; t < t_stu; ++t)
            worst = std::max(worst, max_abs_diff(impl.frame(t), ref[static_cast<std::size_t>(t)]));
        return worst;
    }));

    out.push_back(run_equiv("generator", instances_per_op, kTol, [&](RandomSource& rs) {
        const int nq = rand_dim(rs, 3, 5), c = rand_dim(rs, 1, 3);
        Tensor frame = random_tensor({nq, c}, rs);
        OracleGenerator og;
        og.two_d = false;
        og.w1 = random_tensor({c, c, 3}, rs, 0.7);
        og.b1 = random_tensor({c}, rs, 0.5);
        og.w2 = random_tensor({c, c, 3}, rs, 0.7);
        og.b2 = random_tensor({c}, rs, 0.5);
        Graph g;
        distill::GeneratorNodes gen;
        gen.two_d = false;
        gen.w1 = g.constant(og.w1);
        gen.b1 = g.constant(og.b1);
        gen.w2 = g.constant(og.w2);
        gen.b2 = g.constant(og.b2);
        NodeId y = distill::generate_frame(g, g.constant(frame), gen);
        return max_abs_diff(g.value(y), generator_apply(frame, og));
    }));

    out.push_back(run_equiv("rc_bev_loss", instances_per_op, kTol, [&](RandomSource& rs) {
        const int t_stu = rand_dim(rs, 1, 2), k = rand_dim(rs, 0, 2);
        const int nq = rand_dim(rs, 2, 4), c = rand_dim(rs, 1, 2);
        std::vector<Tensor> stu, tea;
        for (int t = 0; t < t_stu; ++t) stu.push_back(random_tensor({nq, c}, rs));
        for (int t = 0; t < t_stu + k; ++t) tea.push_back(random_tensor({nq, c}, rs));
        OracleGenerator og;
        og.two_d = false;
        og.w1 = random_tensor({c, c, 3}, rs, 0.7);
        og.b1 = random_tensor({c}, rs, 0.5);
        og.w2 = random_tensor({c, c, 3}, rs, 0.7);
        og.b2 = random_tensor({c}, rs, 0.5);
        distill::MaskPlan mp = distill::generate_mask({t_stu, nq}, 0.5, rs.next_u64());

        Graph g;
        distill::FeatureNodes sn;
        sn.queries = nq;
        sn.channels = c;
        for (const Tensor& f : stu) sn.frames.push_back(g.constant(f));
        distill::GeneratorNodes gen;
        gen.two_d = false;
        gen.w1 = g.constant(og.w1);
        gen.b1 = g.constant(og.b1);
        gen.w2 = g.constant(og.w2);
        gen.b2 = g.constant(og.b2);
        NodeId loss = distill::rc_bev_loss(g, sn, distill::FeatureSet::from_frames(tea), gen, mp);
        return std::fabs(g.value(loss).item() - rc_bev(stu, tea, og, mp.mask));
    }));

    out.push_back(run_equiv("rc_pv_loss", instances_per_op, kTol, [&](RandomSource& rs) {
        const int t_stu = rand_dim(rs, 1, 2), k = rand_dim(rs, 0, 1);
        const int h = rand_dim(rs, 3, 4), w = rand_dim(rs, 3, 4), c = rand_dim(rs, 1, 2);
        std::vector<Tensor> stu, tea;
        for (int t = 0; t < t_stu; ++t) stu.push_back(random_tensor({c, h, w}, rs));
        for (int t = 0; t < t_stu + k; ++t) tea.push_back(random_tensor({c, h, w}, rs));
        OracleGenerator og;
        og.two_d = true;
        og.w1 = random_tensor({c, c, 3, 3}, rs, 0.4);
        og.b1 = random_tensor({c}, rs, 0.5);
        og.w2 = random_tensor({c, c, 3, 3}, rs, 0.4);
        og.b2 = random_tensor({c}, rs, 0.5);
        distill::MaskPlan mp = distill::generate_mask({t_stu, h, w}, 0.5, rs.next_u64());

        Graph g;
        distill::PvFeatureNodes sn;
        sn.channels = c;
        sn.height = h;
        sn.width = w;
        sn.level = 3;
        for (const Tensor& f : stu) sn.frames.push_back(g.constant(f));
        distill::GeneratorNodes gen;
        gen.two_d = true;
        gen.w1 = g.constant(og.w1);
        gen.b1 = g.constant(og.b1);
        gen.w2 = g.constant(og.w2);
        gen.b2 = g.constant(og.b2);
        NodeId loss = distill::rc_pv_loss(g, sn, distill::PvFeatureSet::from_frames(tea, 3), gen,
                                          mp);
        return std::fabs(g.value(loss).item() - rc_pv(stu, tea, og, mp.mask));
    }));

    out.push_back(run_equiv("spatial_reconstruction_loss", instances_per_op, kTol,
                            [&](RandomSource& rs) {
        const int t_stu = rand_dim(rs, 1, 2);
        const int h = rand_dim(rs, 3, 4), w = rand_dim(rs, 3, 4), c = rand_dim(rs, 1, 2);
        std::vector<Tensor> stu, tea;
        for (int t = 0; t < t_stu; ++t) {
            stu.push_back(random_tensor({c, h, w}, rs));
            tea.push_back(random_tensor({c, h, w}, rs));
        }
        OracleGenerator og;
        og.two_d = true;
        og.w1 = random_tensor({c, c, 3, 3}, rs, 0.4);
        og.b1 = random_tensor({c}, rs, 0.5);
        og.w2 = random_tensor({c, c, 3, 3}, rs, 0.4);
        og.b2 = random_tensor({c}, rs, 0.5);
        distill::MaskPlan mp = distill::generate_mask({t_stu, h, w}, 0.5, rs.next_u64());

        Graph g;
        distill::PvFeatureNodes sn;
        sn.channels = c;
        sn.height = h;
        sn.width = w;
        sn.level = 1;
        for (const Tensor& f : stu) sn.frames.push_back(g.constant(f));
        distill::GeneratorNodes gen;
        gen.two_d = true;
        gen.w1 = g.constant(og.w1);
        gen.b1 = g.constant(og.b1);
        gen.w2 = g.constant(og.w2);
        gen.b2 = g.constant(og.b2);
        NodeId loss = distill::spatial_reconstruction_loss(
            g, sn, distill::PvFeatureSet::from_frames(tea, 1), gen, mp);
        return std::fabs(g.value(loss).item() - spatial_reconstruction(stu, tea, og, mp.mask));
    }));

    out.push_back(run_equiv("trd_loss", instances_per_op, kTol, [&](RandomSource& rs) {
        const int t = rand_dim(rs, 2, 3), nq = rand_dim(rs, 2, 4), c = rand_dim(rs, 1, 3);
        std::vector<Tensor> stu, tea;
        for (int i = 0; i < t; ++i) {
            stu.push_back(random_tensor({nq, c}, rs, 0.7));
            tea.push_back(random_tensor({nq, c}, rs, 0.7));
        }
        Graph g;
        distill::FeatureNodes sn;
        sn.queries = nq;
        sn.channels = c;
        for (const Tensor& f : stu) sn.frames.push_back(g.constant(f));
        NodeId loss = distill::trd_loss(g, sn, distill::FeatureSet::from_frames(tea), 0.5);
        return std::fabs(g.value(loss).item() - trd(stu, tea, 0.5));
    }));

    out.push_back(run_equiv("dc_loss", instances_per_op, kTol, [&](RandomSource& rs) {
        const int nq = rand_dim(rs, 2, 5), c = rand_dim(rs, 1, 4);
        Tensor a = random_tensor({nq, c}, rs), b = random_tensor({nq, c}, rs);
        Graph g;
        NodeId loss = distill::dc_loss(g, g.constant(a), b);
        return std::fabs(g.value(loss).item() - dc(a, b));
    }));

    (void)base;
    return out;
}

}  // namespace td::oracle
