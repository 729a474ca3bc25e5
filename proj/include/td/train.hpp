#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "td/distill.hpp"
#include "td/scene.hpp"

namespace td::train {

// Bad configuration input (unknown key, unparsable value, out-of-range
// setting). The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::uint64_t seed = 1;

    // feature geometry
    int nq = 16, channels = 8, height = 8, width = 8;
    int t_stu = 4, t_tea = 8;
    int num_objects = 3;

    // data
    int train_scenes = 64, eval_scenes = 16;

    // optimization
    int batch = 8;
    int epochs = 40;
    int teacher_epochs = 60;
    double lr = 2e-4, min_lr = 1e-6;
    double teacher_lr = 1e-2;
    double weight_decay = 0.01;

    // distillation
    double mask_ratio = 0.5;
    double tau = 0.5;
    double alpha1 = 5e-4, alpha2 = 1e-3, alpha3 = 1.0, alpha4 = 1.0;

    void validate() const;  // throws ConfigError
};

// Strict key=value parser ('#' comments, blank lines allowed). Unknown keys
// and malformed values are rejected.
TrainConfig parse_config_text(const std::string& text);
TrainConfig parse_config_file(const std::string& path);
// Applies one key=value override on top of an existing config.
void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value);

struct EvalMetrics {
    double alignment_mse = 0;     // MSE(student BEV frame, aggregated teacher frame)
    double position_error = 0;    // meters
    double velocity_error = 0;    // m/s
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double total = 0;                 // task + weighted distillation sum
    double task = 0;
    double rc_bev = 0, rc_pv = 0, dc = 0, trd = 0;  // unweighted components
};

struct TrainResult {
    TrainConfig cfg;
    distill::Mode mode = distill::Mode::PartialFrames;
    std::vector<EpochRecord> curve;
    EvalMetrics teacher_eval;   // frozen teacher on the held-out scenes
    EvalMetrics initial_eval;   // student before any training
    EvalMetrics final_eval;
    double teacher_checksum_before = 0;
    double teacher_checksum_after = 0;
    // max |total - (task + sum_i alpha_i * c_i)| observed over all steps
    double bookkeeping_max_err = 0;
};

// Pretrains and freezes the teacher, then trains the student under the
// configured distillation losses. Deterministic given cfg.
TrainResult train_distill(const TrainConfig& cfg);

// Writes metrics.json (no wall-clock content, byte-identical across reruns of
// the same config), report.json (includes wall time) and curves.csv into
// out_dir; creates the directory. Returns the metrics.json path.
std::string write_run_report(const TrainResult& r, const std::string& out_dir,
                             double wall_seconds);

// Resolves the run output root: $TD_RUN_ROOT if set, else "runs".
std::string run_root();
// Creates a unique <root>/<stamp>-seed<N> run directory.
std::string make_run_dir(const std::string& root, std::uint64_t seed);

struct VerifyResult {
    bool pass = true;
    std::string failing;  // name of the first failing check, empty when pass
    std::string json;     // full machine-readable report
};

// Oracle equivalence, gradient checks (including the corrupted-gradient
// negative control) and the structural invariants.
VerifyResult run_verification_suite(std::uint64_t seed);

struct AblationRow {
    std::string label;
    EvalMetrics eval;
    double final_total = 0;
};

// kind: "mask-ratio", "loss-weights", "frame-count" or "loss-components".
std::vector<AblationRow> run_ablation(const std::string& kind, const TrainConfig& base);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace td::train
