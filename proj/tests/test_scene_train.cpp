#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "td/optim.hpp"
#include "td/scene.hpp"
#include "td/train.hpp"

using td::Tensor;
namespace scene = td::scene;
namespace train = td::train;

TEST_CASE("scene kinematics: constant velocity, newest frame first") {
    scene::SceneSample s = scene::generate_scene(17, 3, 6);
    REQUIRE(s.objects.size() == 3);
    for (int obj = 0; obj < 3; ++obj) {
        auto now = s.object_world_pos(obj, 0);
        auto past = s.object_world_pos(obj, 4);
        // frame index 4 lies 4 * dt in the past
        CHECK(now[0] - past[0] ==
              doctest::Approx(s.objects[obj].vx * 4 * scene::kFrameDt).epsilon(1e-12));
        CHECK(now[1] - past[1] ==
              doctest::Approx(s.objects[obj].vy * 4 * scene::kFrameDt).epsilon(1e-12));
        double speed = std::hypot(s.objects[obj].vx, s.objects[obj].vy);
        CHECK(speed <= scene::kMaxSpeed);
        CHECK(std::fabs(s.ground_truth[obj][0]) <= scene::kBevExtent);
        CHECK(std::fabs(s.ground_truth[obj][1]) <= scene::kBevExtent);
    }
    // scenes replay bit-exactly from their seed
    scene::SceneSample again = scene::generate_scene(17, 3, 6);
    CHECK(again.ground_truth == s.ground_truth);
}

TEST_CASE("ego alignment composes additively over frame offsets") {
    scene::SceneSample s = scene::generate_scene(3, 2, 6);
    scene::QueryState q;
    q.x = 12.0;
    q.y = -4.0;
    q.vx = 3.0;
    q.vy = -1.0;
    std::span<const std::array<double, 2>> deltas(s.ego_delta);

    scene::QueryState direct = scene::ego_align(q, 3, deltas);
    scene::QueryState two = scene::ego_align(q, 2, deltas);
    scene::QueryState step = scene::ego_align(two, 1, deltas.subspan(2));
    CHECK(direct.x == doctest::Approx(step.x).epsilon(1e-12));
    CHECK(direct.y == doctest::Approx(step.y).epsilon(1e-12));
    // velocity and extents are invariant under alignment
    CHECK(direct.vx == q.vx);
    CHECK(direct.vy == q.vy);
    CHECK(direct.w == q.w);
    // offset zero is the identity
    scene::QueryState same = scene::ego_align(q, 0, deltas);
    CHECK(same.x == q.x);
    CHECK(same.y == q.y);
}

TEST_CASE("scene serialization round-trips") {
    scene::SceneSample s = scene::generate_scene(91, 4, 8);
    scene::SceneSample r = scene::deserialize_scene(scene::serialize_scene(s));
    CHECK(r.frames == s.frames);
    CHECK(r.num_objects == s.num_objects);
    CHECK(r.seed == s.seed);
    CHECK(r.ground_truth == s.ground_truth);
    CHECK(r.ego_delta == s.ego_delta);
    REQUIRE(r.objects.size() == s.objects.size());
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
        CHECK(r.objects[i].x0 == s.objects[i].x0);
        CHECK(r.objects[i].vx == s.objects[i].vx);
        CHECK(r.objects[i].yaw == s.objects[i].yaw);
    }
}

TEST_CASE("task metrics are zero for predictions placed on the objects") {
    scene::SceneSample s = scene::generate_scene(5, 2, 4);
    // one query per object, normalized exactly to the ground truth
    Tensor pred = Tensor::zeros({2, 4});
    for (int i = 0; i < 2; ++i) {
        pred.data[4 * i + 0] = s.ground_truth[i][0] / scene::kBevExtent;
        pred.data[4 * i + 1] = s.ground_truth[i][1] / scene::kBevExtent;
        pred.data[4 * i + 2] = s.ground_truth[i][2] / scene::kMaxSpeed;
        pred.data[4 * i + 3] = s.ground_truth[i][3] / scene::kMaxSpeed;
    }
    scene::TaskMetrics m = scene::task_metrics(pred, s);
    CHECK(m.mean_position_error == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.mean_velocity_error == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("AdamW matches a hand-rolled three-step reference") {
    td::optim::AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.beta1 = 0.9;
    cfg.beta2 = 0.99;
    cfg.eps = 1e-8;
    cfg.weight_decay = 0.01;
    td::optim::AdamW opt(cfg);

    Tensor p = Tensor{{2}, {1.0, -2.0}};
    Tensor g1 = Tensor{{2}, {0.5, -0.25}};
    Tensor g2 = Tensor{{2}, {-0.1, 0.4}};
    Tensor g3 = Tensor{{2}, {0.2, 0.2}};

    double rp[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
    const double grads[3][2] = {{0.5, -0.25}, {-0.1, 0.4}, {0.2, 0.2}};
    for (int t = 1; t <= 3; ++t)
        for (int i = 0; i < 2; ++i) {
            const double g = grads[t - 1][i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.99 * v[i] + 0.01 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.99, t));
            rp[i] -= 0.1 * (mh / (std::sqrt(vh) + 1e-8) + 0.01 * rp[i]);
        }

    opt.step("p", p, g1);
    opt.step("p", p, g2);
    opt.step("p", p, g3);
    CHECK(p.data[0] == doctest::Approx(rp[0]).epsilon(1e-15));
    CHECK(p.data[1] == doctest::Approx(rp[1]).epsilon(1e-15));
}

TEST_CASE("cosine schedule hits both endpoints and stays monotone") {
    const double base = 1e-2, floor = 1e-4;
    CHECK(td::optim::cosine_lr(base, floor, 0, 100) == doctest::Approx(base));
    CHECK(td::optim::cosine_lr(base, floor, 99, 100) == doctest::Approx(floor));
    double prev = base + 1;
    for (int s = 0; s < 100; ++s) {
        double lr = td::optim::cosine_lr(base, floor, s, 100);
        CHECK(lr < prev);
        prev = lr;
    }
    CHECK_THROWS_AS(td::optim::cosine_lr(base, floor, 100, 100), std::invalid_argument);
}

TEST_CASE("config parser is strict about keys and values") {
    train::TrainConfig cfg = train::parse_config_text(
        "# comment\n"
        "seed = 9\n"
        "t_stu=2\n"
        "mask_ratio = 0.75  # inline comment\n");
    CHECK(cfg.seed == 9);
    CHECK(cfg.t_stu == 2);
    CHECK(cfg.mask_ratio == 0.75);

    CHECK_THROWS_AS(train::parse_config_text("bogus_key = 1\n"), train::ConfigError);
    CHECK_THROWS_AS(train::parse_config_text("epochs = banana\n"), train::ConfigError);
    CHECK_THROWS_AS(train::parse_config_text("epochs\n"), train::ConfigError);
    CHECK_THROWS_AS(train::parse_config_text("mask_ratio = 1.5\n"), train::ConfigError);
    CHECK_THROWS_AS(train::parse_config_text("t_stu = 4\nt_tea = 20\n"), train::ConfigError);
}

TEST_CASE("encode rejects requests beyond the recorded history") {
    scene::SceneSample s = scene::generate_scene(8, 2, 3);
    scene::EncoderParams p = scene::make_encoder(4, 1);
    td::Graph g;
    scene::EncoderNodes en = scene::add_encoder(g, p, false);
    CHECK_NOTHROW(scene::encode(g, en, s, 3, 8, 4, 4));
    td::Graph g2;
    scene::EncoderNodes en2 = scene::add_encoder(g2, p, false);
    CHECK_THROWS_AS(scene::encode(g2, en2, s, 4, 8, 4, 4), std::invalid_argument);
}

TEST_CASE("one epoch on one scene completes with finite losses") {
    train::TrainConfig cfg;
    cfg.nq = 8;
    cfg.channels = 4;
    cfg.height = 4;
    cfg.width = 4;
    cfg.t_stu = 2;
    cfg.t_tea = 4;
    cfg.num_objects = 2;
    cfg.train_scenes = 1;
    cfg.eval_scenes = 1;
    cfg.batch = 1;
    cfg.epochs = 1;
    cfg.teacher_epochs = 1;
    train::TrainResult r = train::train_distill(cfg);
    REQUIRE(r.curve.size() == 1);
    CHECK(std::isfinite(r.curve[0].total));
    CHECK(std::isfinite(r.final_eval.velocity_error));
    CHECK(r.teacher_checksum_before == r.teacher_checksum_after);
    CHECK(r.bookkeeping_max_err < 1e-9);

    cfg.epochs = 0;
    CHECK_THROWS_AS(train::train_distill(cfg), train::ConfigError);
}

TEST_CASE("ablation grids are well formed and reject unknown kinds") {
    train::TrainConfig base;
    base.nq = 8;
    base.channels = 4;
    base.height = 4;
    base.width = 4;
    base.t_stu = 2;
    base.t_tea = 4;
    base.num_objects = 2;
    base.train_scenes = 4;
    base.eval_scenes = 2;
    base.batch = 4;
    base.epochs = 1;
    base.teacher_epochs = 1;

    auto rows = train::run_ablation("mask-ratio", base);
    REQUIRE(rows.size() == 5);
    CHECK(rows[0].label == "mask_ratio=0.4");
    CHECK(rows[4].label == "mask_ratio=0.9");
    std::string csv = train::ablation_csv(rows);
    CHECK(csv.find("variant,alignment_mse") == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

    CHECK_THROWS_AS(train::run_ablation("", base), train::ConfigError);
    CHECK_THROWS_AS(train::run_ablation("bogus", base), train::ConfigError);
}
