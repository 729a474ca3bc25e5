#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "td/tensor.hpp"

namespace td::oracle {

// Brute-force reference implementations. Everything here is written as plain
// nested loops and shares no compute path with the graph kernels; only the
// Tensor container is common.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor conv1d_same3(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor conv2d_same3(const Tensor& x, const Tensor& w, const Tensor& b);
double reduce_mean(const Tensor& x);

// Dispatch by operation id; unknown ids are rejected.
Tensor oracle_forward(const std::string& op, const std::vector<Tensor>& inputs);

// Composite references: direct transcriptions of the loss definitions.
struct OracleGenerator {
    bool two_d = false;
    Tensor w1, b1, w2, b2;
};

std::vector<Tensor> tsa_aggregate(const std::vector<Tensor>& teacher_frames, int t_stu);
std::vector<Tensor> tsa_aggregate_pv(const std::vector<Tensor>& teacher_frames, int t_stu);
// Alternative reading of the aggregation with the roles of query and key
// swapped (term = softmax(F^t (F^{t1})^T / sqrt(C)) F^{t1}). Kept for
// comparison only; the literal form above is the implemented default.
std::vector<Tensor> tsa_aggregate_swapped(const std::vector<Tensor>& teacher_frames, int t_stu);
Tensor generator_apply(const Tensor& frame, const OracleGenerator& gen);

double rc_bev(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
              const OracleGenerator& gen, const Tensor& mask);
double rc_pv(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher,
             const OracleGenerator& gen, const Tensor& mask);
double spatial_reconstruction(const std::vector<Tensor>& student,
                              const std::vector<Tensor>& teacher, const OracleGenerator& gen,
                              const Tensor& mask);
double trd(const std::vector<Tensor>& student, const std::vector<Tensor>& teacher, double tau);
double dc(const Tensor& student, const Tensor& teacher);

// Central differences (f(x+he) - f(x-he)) / 2h per coordinate.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step);

struct GradCheckReport {
    std::string op;
    double max_rel_err = 0;
    double max_abs_err = 0;
    double tolerance = 0;
    bool pass = false;
};

// Analytic gradients of every primitive and every composite loss against
// central finite differences on small random instances. `corrupt_op` is a
// test fixture: the named check's analytic gradient is perturbed so the
// report must fail.
std::vector<GradCheckReport> gradcheck_all(std::uint64_t seed, const std::string& corrupt_op = "");

struct EquivReport {
    std::string op;
    double max_abs_err = 0;
    int instances = 0;
    double tolerance = 0;
    bool pass = false;
};

// Forward values of graph kernels and composite losses against this module.
std::vector<EquivReport> forward_equivalence(std::uint64_t seed, int instances_per_op = 100);

}  // namespace td::oracle
