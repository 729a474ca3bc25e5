// Command-line harness: verification suite, training runs, ablation grids and
// run-report inspection.
//
// Exit codes: 0 success, 1 failed checks or failed run, 2 bad usage/config.

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "td/train.hpp"

namespace {

int cmd_verify(std::uint64_t seed, const std::string& out_path) {
    td::train::VerifyResult res = td::train::run_verification_suite(seed);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << res.json << "\n";
    } else {
        std::cout << res.json << "\n";
    }
    if (!res.pass) {
        std::cerr << "verification failed: " << res.failing << "\n";
        return 1;
    }
    return 0;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              std::string out_dir) {
    td::train::TrainConfig cfg = td::train::parse_config_file(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    cfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    td::train::TrainResult res = td::train::train_distill(cfg);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (out_dir.empty()) out_dir = td::train::make_run_dir(td::train::run_root(), cfg.seed);
    const std::string metrics = td::train::write_run_report(res, out_dir, wall);

    std::cout << "run dir: " << out_dir << "\n"
              << "mode: "
              << (res.mode == td::distill::Mode::FullFrames ? "full-frames" : "partial-frames")
              << "\n"
              << "teacher  pos err " << res.teacher_eval.position_error << " m, vel err "
              << res.teacher_eval.velocity_error << " m/s\n"
              << "student  pos err " << res.final_eval.position_error << " m, vel err "
              << res.final_eval.velocity_error << " m/s, alignment mse "
              << res.final_eval.alignment_mse << "\n"
              << "metrics: " << metrics << "\n";
    if (res.teacher_checksum_before != res.teacher_checksum_after) {
        std::cerr << "teacher parameters changed during distillation\n";
        return 1;
    }
    return 0;
}

int cmd_ablate(const std::string& kind, const std::string& config_path,
               const std::string& out_path) {
    td::train::TrainConfig cfg = td::train::parse_config_file(config_path);
    std::vector<td::train::AblationRow> rows = td::train::run_ablation(kind, cfg);
    const std::string csv = td::train::ablation_csv(rows);
    if (!out_path.empty()) {
        std::ofstream out(out_path);
        out << csv;
    }
    std::cout << csv;
    return 0;
}

int cmd_report(const std::string& run_dir) {
    std::ifstream metrics(run_dir + "/metrics.json");
    std::ifstream curves(run_dir + "/curves.csv");
    if (!metrics || !curves) {
        std::cerr << "no metrics.json/curves.csv under " << run_dir << "\n";
        return 2;
    }
    std::cout << curves.rdbuf();
    nlohmann::ordered_json j;
    metrics >> j;
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal knowledge-distillation toy harness"};
    app.require_subcommand(1);

    std::uint64_t verify_seed = 1;
    std::string verify_out;
    CLI::App* verify = app.add_subcommand("verify", "run the oracle and invariant checks");
    verify->add_option("--seed", verify_seed, "verification seed");
    verify->add_option("--out", verify_out, "write the JSON report here instead of stdout");

    std::string train_config, train_out;
    std::int64_t train_seed = -1;
    CLI::App* train = app.add_subcommand("train", "pretrain the teacher, distill the student");
    train->add_option("--config", train_config, "key=value config file")->required();
    train->add_option("--seed", train_seed, "override the config seed");
    train->add_option("--out", train_out, "run directory (default: fresh dir under the run root)");

    std::string ablate_kind, ablate_config, ablate_out;
    CLI::App* ablate = app.add_subcommand("ablate", "sweep one knob and print a CSV table");
    ablate->add_option("--kind", ablate_kind,
                       "mask-ratio | loss-weights | frame-count | loss-components")
        ->required();
    ablate->add_option("--config", ablate_config, "base config file")->required();
    ablate->add_option("--out", ablate_out, "also write the CSV here");

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "print the metrics of a finished run");
    report->add_option("--run", report_dir, "run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (verify->parsed()) return cmd_verify(verify_seed, verify_out);
        if (train->parsed()) return cmd_train(train_config, train_seed, train_out);
        if (ablate->parsed()) return cmd_ablate(ablate_kind, ablate_config, ablate_out);
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const td::train::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
