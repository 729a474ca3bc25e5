// Acceptance gate: one line per criterion, nonzero exit if any fails.
//
// Heavier than the unit tests; runs the oracle suites and several full
// toy-scale training arms.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "td/distill.hpp"
#include "td/oracle.hpp"
#include "td/random.hpp"
#include "td/scene.hpp"
#include "td/train.hpp"

namespace {

int failures = 0;

void report(int index, const std::string& name, bool pass, const std::string& detail = "") {
    std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", index, name.c_str(),
                detail.empty() ? "" : " — ", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

td::train::TrainConfig toy_config() {
    td::train::TrainConfig cfg;  // defaults are the toy-scale settings
    cfg.seed = 7;
    cfg.epochs = 300;
    return cfg;
}

td::train::TrainConfig small_config() {
    td::train::TrainConfig cfg;
    cfg.seed = 7;
    cfg.nq = 8;
    cfg.channels = 4;
    cfg.height = 4;
    cfg.width = 4;
    cfg.t_stu = 2;
    cfg.t_tea = 4;
    cfg.num_objects = 2;
    cfg.train_scenes = 8;
    cfg.eval_scenes = 4;
    cfg.batch = 4;
    cfg.epochs = 2;
    cfg.teacher_epochs = 2;
    return cfg;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace

int main() {
    const std::uint64_t seed = 7;

    // 1. oracle equivalence on >= 100 random instances per op, 1e-10, < 60 s
    {
        const auto t0 = std::chrono::steady_clock::now();
        auto reports = td::oracle::forward_equivalence(seed, 100);
        const double secs = seconds_since(t0);
        bool pass = secs < 60.0 && !reports.empty();
        double worst = 0;
        for (const auto& r : reports) {
            pass = pass && r.pass && r.instances >= 100 && r.tolerance <= 1e-10;
            worst = std::max(worst, r.max_abs_err);
        }
        report(1, "oracle equivalence", pass,
               std::to_string(reports.size()) + " ops, worst " + fmt(worst) + ", " + fmt(secs) +
                   " s");
    }

    // 2. gradient correctness: 100% of reports pass at 1e-5 relative
    {
        auto reports = td::oracle::gradcheck_all(seed);
        bool pass = !reports.empty();
        double worst = 0;
        for (const auto& r : reports) {
            pass = pass && r.pass && r.tolerance <= 1e-5;
            worst = std::max(worst, r.max_rel_err);
        }
        // the checker itself must catch a corrupted gradient
        bool control = false;
        for (const auto& r : td::oracle::gradcheck_all(seed, "matmul"))
            if (r.op == "matmul" && !r.pass) control = true;
        report(2, "gradient correctness", pass && control,
               std::to_string(reports.size()) + " checks, worst rel err " + fmt(worst));
    }

    // 3. trivial-zero suite
    {
        namespace distill = td::distill;
        td::RandomSource rs(seed);
        const int nq = 6, c = 3, t_stu = 2, t_tea = 4, h = 4, w = 4;
        auto nonneg_frames = [&rs](int count, std::vector<int> shape) {
            std::vector<td::Tensor> out;
            for (int t = 0; t < count; ++t) {
                td::Tensor f = td::Tensor::zeros(shape);
                for (double& v : f.data) v = std::fabs(rs.normal());
                out.push_back(std::move(f));
            }
            return out;
        };

        bool pass = true;
        // Eq. 4 analog: BEV reconstruction of the exact aggregate
        {
            distill::FeatureSet teacher =
                distill::FeatureSet::from_frames(nonneg_frames(t_tea, {nq, c}));
            distill::FeatureSet agg = distill::tsa_aggregate(teacher, t_stu);
            td::Graph g;
            distill::FeatureNodes stu;
            stu.queries = nq;
            stu.channels = c;
            for (int t = 0; t < t_stu; ++t) stu.frames.push_back(g.constant(agg.frame(t)));
            distill::GeneratorNodes gn =
                distill::add_generator(g, distill::identity_generator(c, false), false);
            distill::MaskPlan mp = distill::generate_mask({t_stu, nq}, 0.0, 1);
            pass = pass && g.value(distill::rc_bev_loss(g, stu, teacher, gn, mp)).item() == 0.0;
        }
        // Eq. 5 analog: PV reconstruction of the exact aggregate
        {
            distill::PvFeatureSet teacher =
                distill::PvFeatureSet::from_frames(nonneg_frames(t_tea, {c, h, w}), 3);
            distill::PvFeatureSet agg = distill::tsa_aggregate_pv(teacher, t_stu);
            td::Graph g;
            distill::PvFeatureNodes stu;
            stu.channels = c;
            stu.height = h;
            stu.width = w;
            stu.level = 3;
            for (int t = 0; t < t_stu; ++t) stu.frames.push_back(g.constant(agg.frame(t)));
            distill::GeneratorNodes gn =
                distill::add_generator(g, distill::identity_generator(c, true), false);
            distill::MaskPlan mp = distill::generate_mask({t_stu, h, w}, 0.0, 1);
            pass = pass && g.value(distill::rc_pv_loss(g, stu, teacher, gn, mp)).item() == 0.0;
        }
        // Eq. 6: identical student/teacher relations
        double kl;
        {
            auto frames = nonneg_frames(t_stu, {nq, c});
            distill::FeatureSet teacher = distill::FeatureSet::from_frames(frames);
            td::Graph g;
            distill::FeatureNodes stu;
            stu.queries = nq;
            stu.channels = c;
            for (const td::Tensor& f : frames) stu.frames.push_back(g.constant(f));
            kl = g.value(distill::trd_loss(g, stu, teacher, 0.5)).item();
            pass = pass && std::fabs(kl) < 1e-12;
        }
        // Eq. 7: identical decoded features
        {
            td::Graph g;
            td::Tensor d = nonneg_frames(1, {nq, c})[0];
            pass = pass && g.value(distill::dc_loss(g, g.constant(d), d)).item() == 0.0;
        }
        report(3, "trivial-zero suite", pass, "trd residual " + fmt(std::fabs(kl)));
    }

    // 4. mode gating: forbidden configs fail; reports carry only permitted
    //    components
    {
        namespace distill = td::distill;
        bool partial_rejects = false, full_rejects = false;
        try {
            distill::DistillConfig::make(0.5, 0.5, 1e-4, 1e-3, 1.0, 1.0, 4, 8, 16, 8, 8, 8, 1);
        } catch (const std::invalid_argument&) {
            partial_rejects = true;
        }
        try {
            distill::DistillConfig::make(0.5, 0.5, 1e-4, 0.0, 1.0, 1.0, 8, 8, 16, 8, 8, 8, 1);
        } catch (const std::invalid_argument&) {
            full_rejects = true;
        }

        td::train::TrainConfig partial = small_config();
        td::train::TrainResult rp = td::train::train_distill(partial);
        bool partial_clean = rp.mode == distill::Mode::PartialFrames;
        for (const auto& e : rp.curve) partial_clean = partial_clean && e.trd == 0.0;

        td::train::TrainConfig full = small_config();
        full.t_stu = full.t_tea;
        td::train::TrainResult rf = td::train::train_distill(full);
        bool full_clean = rf.mode == distill::Mode::FullFrames;
        for (const auto& e : rf.curve)
            full_clean = full_clean && e.rc_bev == 0.0 && e.rc_pv == 0.0;

        // gated components must be absent from the emitted reports
        auto slurp = [](const std::string& path) {
            std::string out;
            if (FILE* f = std::fopen(path.c_str(), "rb")) {
                char buf[4096];
                std::size_t n;
                while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
                std::fclose(f);
            }
            return out;
        };
        const std::string mp =
            slurp(td::train::write_run_report(rp, "acceptance_runs/gate-partial", 0.0));
        const std::string mf =
            slurp(td::train::write_run_report(rf, "acceptance_runs/gate-full", 0.0));
        const bool report_clean = !mp.empty() && mp.find("\"trd\"") == std::string::npos &&
                                  !mf.empty() && mf.find("\"rc_bev\"") == std::string::npos &&
                                  mf.find("\"rc_pv\"") == std::string::npos;

        report(4, "mode-gating conformance",
               partial_rejects && full_rejects && partial_clean && full_clean && report_clean);
    }

    // 5. distillation efficacy, seed 7, T_tea=8 / T_stu=4, both arms < 10 min
    td::train::TrainResult distilled, baseline;
    {
        const auto t0 = std::chrono::steady_clock::now();
        td::train::TrainConfig cfg = toy_config();
        distilled = td::train::train_distill(cfg);
        td::train::TrainConfig base = cfg;
        base.alpha1 = base.alpha2 = base.alpha3 = base.alpha4 = 0.0;
        baseline = td::train::train_distill(base);
        const double secs = seconds_since(t0);

        const bool align = distilled.final_eval.alignment_mse < baseline.final_eval.alignment_mse;
        const bool vel =
            distilled.final_eval.velocity_error < baseline.final_eval.velocity_error;
        report(5, "distillation efficacy", align && vel && secs < 600.0,
               "alignment " + fmt(distilled.final_eval.alignment_mse) + " vs " +
                   fmt(baseline.final_eval.alignment_mse) + ", vel err " +
                   fmt(distilled.final_eval.velocity_error) + " vs " +
                   fmt(baseline.final_eval.velocity_error) + " m/s, " + fmt(secs) + " s");
    }

    // 6. full-frames TRD analog: T_stu = T_tea = 8
    {
        td::train::TrainConfig cfg = toy_config();
        cfg.t_stu = cfg.t_tea;
        td::train::TrainResult with = td::train::train_distill(cfg);
        td::train::TrainConfig base = cfg;
        base.alpha1 = base.alpha2 = base.alpha3 = base.alpha4 = 0.0;
        td::train::TrainResult without = td::train::train_distill(base);
        const bool pass =
            with.final_eval.velocity_error <= without.final_eval.velocity_error;
        report(6, "full-frames TRD analog", pass,
               "vel err " + fmt(with.final_eval.velocity_error) + " vs " +
                   fmt(without.final_eval.velocity_error) + " m/s");
    }

    // 7. mask-ratio ablation harness: Table 3 grid, well-formed, deterministic
    {
        td::train::TrainConfig base = small_config();
        auto rows = td::train::run_ablation("mask-ratio", base);
        auto rows2 = td::train::run_ablation("mask-ratio", base);
        bool pass = rows.size() == 5;
        const char* expect[] = {"mask_ratio=0.4", "mask_ratio=0.5", "mask_ratio=0.6",
                                "mask_ratio=0.75", "mask_ratio=0.9"};
        for (std::size_t i = 0; i < rows.size() && pass; ++i) {
            pass = rows[i].label == expect[i] && std::isfinite(rows[i].eval.velocity_error);
        }
        pass = pass && td::train::ablation_csv(rows) == td::train::ablation_csv(rows2);
        report(7, "mask-ratio ablation harness", pass);
    }

    // 8. determinism: identical configs → bit-identical metric files
    {
        td::train::TrainConfig cfg = small_config();
        td::train::TrainResult a = td::train::train_distill(cfg);
        td::train::TrainResult b = td::train::train_distill(cfg);
        std::string ma = td::train::write_run_report(a, "acceptance_runs/det-a", 1.0);
        std::string mb = td::train::write_run_report(b, "acceptance_runs/det-b", 2.0);
        auto slurp = [](const std::string& path) {
            std::string out;
            if (FILE* f = std::fopen(path.c_str(), "rb")) {
                char buf[4096];
                std::size_t n;
                while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) out.append(buf, n);
                std::fclose(f);
            }
            return out;
        };
        const std::string fa = slurp(ma), fb = slurp(mb);
        bool files_same = !fa.empty() && fa == fb;

        td::distill::MaskPlan mp1 = td::distill::generate_mask({8, 16}, 0.5, 1234);
        td::distill::MaskPlan mp2 = td::distill::generate_mask({8, 16}, 0.5, 1234);
        report(8, "determinism", files_same && mp1.mask.data == mp2.mask.data);
    }

    // 9. invariant suite
    {
        namespace distill = td::distill;
        bool pass = true;

        // attention rows normalize: constant-one values reproduce exactly
        distill::FeatureSet ones =
            distill::FeatureSet::from_frames({td::Tensor::full({5, 3}, 1.0)});
        for (double v : distill::tsa_aggregate(ones, 1).frame(0).data)
            pass = pass && std::fabs(v - 1.0) < 1e-12;

        // permutation equivariance of the aggregation
        {
            td::RandomSource rs(seed + 1);
            td::Tensor f0 = td::Tensor::zeros({4, 2}), f1 = td::Tensor::zeros({4, 2});
            for (double& v : f0.data) v = rs.normal();
            for (double& v : f1.data) v = rs.normal();
            const int perm[4] = {2, 0, 3, 1};
            auto permute = [&perm](const td::Tensor& t) {
                td::Tensor out = td::Tensor::zeros(t.shape);
                for (int r = 0; r < 4; ++r)
                    for (int c = 0; c < 2; ++c)
                        out.data[static_cast<std::size_t>(r) * 2 + c] =
                            t.data[static_cast<std::size_t>(perm[r]) * 2 + c];
                return out;
            };
            distill::FeatureSet plain = distill::tsa_aggregate(
                distill::FeatureSet::from_frames({f0, f1}), 1);
            distill::FeatureSet perm_agg = distill::tsa_aggregate(
                distill::FeatureSet::from_frames({permute(f0), permute(f1)}), 1);
            td::Tensor expect = permute(plain.frame(0));
            for (std::size_t i = 0; i < expect.size(); ++i)
                pass = pass &&
                       std::fabs(perm_agg.frame(0).data[i] - expect.data[i]) < 1e-12;
        }

        // frozen teacher, nonnegative losses, bookkeeping (from criterion 5's
        // distilled arm)
        pass = pass && distilled.teacher_checksum_before == distilled.teacher_checksum_after;
        pass = pass && distilled.bookkeeping_max_err < 1e-9;
        for (const auto& e : distilled.curve) {
            pass = pass && e.task >= 0.0 && e.rc_bev >= 0.0 && e.rc_pv >= 0.0 && e.dc >= 0.0 &&
                   e.trd >= -1e-12;
        }
        report(9, "invariant suite", pass,
               "bookkeeping max err " + fmt(distilled.bookkeeping_max_err));
    }

    if (failures) std::printf("%d criterion(s) FAILED\n", failures);
    else std::printf("all 9 criteria passed\n");
    return failures == 0 ? 0 : 1;
}
