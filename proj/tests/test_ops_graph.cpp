#include <cmath>

#include "doctest.h"
#include "td/graph.hpp"
#include "td/ops.hpp"
#include "td/oracle.hpp"
#include "td/random.hpp"

using td::Graph;
using td::GradMap;
using td::NodeId;
using td::Tensor;

TEST_CASE("matmul against hand-computed values") {
    Tensor a{{2, 3}, {1, 2, 3, 4, 5, 6}};
    Tensor b{{3, 2}, {7, 8, 9, 10, 11, 12}};
    Tensor c = td::ops::matmul(a, b);
    CHECK(c.shape == std::vector<int>{2, 2});
    CHECK(c.data[0] == 58);
    CHECK(c.data[1] == 64);
    CHECK(c.data[2] == 139);
    CHECK(c.data[3] == 154);
    CHECK_THROWS_AS(td::ops::matmul(a, a), td::ShapeError);
}

TEST_CASE("softmax rows normalize and match the max-shift form") {
    Tensor x{{2, 3}, {1.0, 2.0, 3.0, -5.0, 0.0, 5.0}};
    Tensor y = td::ops::softmax_rows(x);
    for (int r = 0; r < 2; ++r) {
        double s = y.data[3 * r] + y.data[3 * r + 1] + y.data[3 * r + 2];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
    // large offsets must not overflow thanks to the per-row max subtraction
    Tensor big{{1, 2}, {1000.0, 1001.0}};
    Tensor yb = td::ops::softmax_rows(big);
    CHECK(yb.data[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
}

TEST_CASE("conv kernels against the oracle on fixed input") {
    Tensor x{{1, 4}, {1, 2, 3, 4}};
    Tensor w{{1, 1, 3}, {1, 0, -1}};
    Tensor b{{1}, {0.5}};
    Tensor y = td::ops::conv1d_same3(x, w, b);
    // zero padding: y[l] = x[l-1] - x[l+1] + 0.5
    CHECK(y.data[0] == doctest::Approx(-1.5));
    CHECK(y.data[1] == doctest::Approx(-1.5));
    CHECK(y.data[2] == doctest::Approx(-1.5));
    CHECK(y.data[3] == doctest::Approx(3.5));

    td::RandomSource rs(42);
    Tensor x2 = Tensor::zeros({2, 5, 4});
    for (double& v : x2.data) v = rs.normal();
    Tensor w2 = Tensor::zeros({3, 2, 3, 3});
    for (double& v : w2.data) v = rs.normal();
    Tensor b2 = Tensor::zeros({3});
    Tensor got = td::ops::conv2d_same3(x2, w2, b2);
    Tensor ref = td::oracle::conv2d_same3(x2, w2, b2);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-12));
}

TEST_CASE("graph backward matches finite differences on a small chain") {
    td::RandomSource rs(7);
    Tensor a0 = Tensor::zeros({2, 3});
    Tensor b0 = Tensor::zeros({3, 2});
    for (double& v : a0.data) v = rs.normal();
    for (double& v : b0.data) v = rs.normal();

    auto loss_value = [&](const Tensor& a, const Tensor& b) {
        Graph g;
        NodeId an = g.constant(a), bn = g.constant(b);
        NodeId y = g.softmax_rows(g.matmul(an, bn));
        return g.value(g.reduce_mean(g.mul(y, y))).item();
    };

    Graph g;
    NodeId an = g.parameter(a0), bn = g.parameter(b0);
    NodeId y = g.softmax_rows(g.matmul(an, bn));
    GradMap grads = g.backward(g.reduce_mean(g.mul(y, y)));

    Tensor fd = td::oracle::finite_diff_grad(
        [&](const Tensor& a) { return loss_value(a, b0); }, a0, 1e-6);
    const Tensor& an_grad = grads.at(an);
    for (std::size_t i = 0; i < fd.size(); ++i)
        CHECK(an_grad.data[i] == doctest::Approx(fd.data[i]).epsilon(1e-6));
    CHECK(grads.count(bn) == 1);
}

TEST_CASE("backward rejects non-scalar losses and ignores constants") {
    Graph g;
    NodeId p = g.parameter(Tensor{{2, 2}, {1, 2, 3, 4}});
    CHECK_THROWS_AS(g.backward(p), td::ShapeError);
    NodeId c = g.constant(Tensor::scalar(3.0));
    GradMap grads = g.backward(g.reduce_mean(g.scale(p, 2.0)));
    CHECK(grads.count(p) == 1);
    CHECK(grads.count(c) == 0);
    // unreached parameters still get zero gradients
    Graph g2;
    NodeId used = g2.parameter(Tensor::scalar(1.0));
    NodeId unused = g2.parameter(Tensor{{3}, {1, 2, 3}});
    GradMap grads2 = g2.backward(g2.reduce_mean(used));
    CHECK(grads2.at(unused).data == std::vector<double>{0, 0, 0});
}

TEST_CASE("gradcheck harness catches a corrupted gradient") {
    bool matmul_failed = false;
    bool rest_ok = true;
    for (const auto& rep : td::oracle::gradcheck_all(5, "matmul")) {
        if (rep.op == "matmul")
            matmul_failed = !rep.pass;
        else
            rest_ok = rest_ok && rep.pass;
    }
    CHECK(matmul_failed);
    CHECK(rest_ok);
    // same fixture applied to a convolution gradient
    bool conv_failed = false;
    for (const auto& rep : td::oracle::gradcheck_all(5, "conv1d_same3"))
        if (rep.op == "conv1d_same3") conv_failed = !rep.pass;
    CHECK(conv_failed);
}

TEST_CASE("random source is deterministic with draws in (0,1)") {
    td::RandomSource a(123), b(123);
    for (int i = 0; i < 1000; ++i) CHECK(a.uniform() == b.uniform());

    td::RandomSource c(9);
    double sum = 0.0;
    bool in_range = true;
    for (int i = 0; i < 100000; ++i) {
        double u = c.uniform();
        in_range = in_range && u > 0.0 && u < 1.0;
        sum += u;
    }
    CHECK(in_range);
    CHECK(std::fabs(sum / 100000.0 - 0.5) < 0.01);
    CHECK(td::RandomSource(124).next_u64() != td::RandomSource(123).next_u64());
}

TEST_CASE("matmul commutes with row permutation of the left operand") {
    td::RandomSource rs(6);
    Tensor a = Tensor::zeros({3, 4}), b = Tensor::zeros({4, 2});
    for (double& v : a.data) v = rs.normal();
    for (double& v : b.data) v = rs.normal();
    const int perm[3] = {2, 0, 1};
    Tensor pa = Tensor::zeros({3, 4});
    for (int r = 0; r < 3; ++r)
        for (int j = 0; j < 4; ++j)
            pa.data[static_cast<std::size_t>(r) * 4 + j] =
                a.data[static_cast<std::size_t>(perm[r]) * 4 + j];
    Tensor full = td::ops::matmul(a, b);
    Tensor permuted = td::ops::matmul(pa, b);
    for (int r = 0; r < 3; ++r)
        for (int j = 0; j < 2; ++j)
            CHECK(permuted.data[static_cast<std::size_t>(r) * 2 + j] ==
                  full.data[static_cast<std::size_t>(perm[r]) * 2 + j]);
}
