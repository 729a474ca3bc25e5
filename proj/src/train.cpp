#include "td/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "td/optim.hpp"
#include "td/oracle.hpp"
#include "td/random.hpp"

namespace td::train {

namespace {

using json = nlohmann::ordered_json;

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    RandomSource rs(a ^ (b * 0x9E3779B97F4A7C15ULL) ^ 0xD1B54A32D192ED03ULL);
    return rs.next_u64();
}

}  // namespace

void TrainConfig::validate() const {
    auto bad = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (nq < 1 || channels < 1) bad("nq and channels must be positive");
    if (height < 3 || width < 3) bad("height and width must be at least 3");
    if (t_stu < 1) bad("t_stu must be positive");
    if (t_tea < t_stu) bad("t_tea must be >= t_stu");
    if (t_tea - t_stu >= 8) bad("frame gap t_tea - t_stu must be below 8");
    if (num_objects < 1) bad("num_objects must be positive");
    if (num_objects > nq) bad("num_objects must not exceed nq");
    if (train_scenes < 1 || eval_scenes < 1) bad("scene counts must be positive");
    if (batch < 1) bad("batch must be positive");
    if (epochs < 1) bad("epochs must be positive");
    if (teacher_epochs < 0) bad("teacher_epochs must be nonnegative");
    if (!(lr > 0) || !(teacher_lr > 0)) bad("learning rates must be positive");
    if (!(min_lr >= 0) || min_lr > lr) bad("min_lr must be in [0, lr]");
    if (!(weight_decay >= 0)) bad("weight_decay must be nonnegative");
    if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) bad("mask_ratio must be in [0,1]");
    if (!(tau > 0)) bad("tau must be positive");
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0)
        bad("loss weights must be nonnegative");
}

namespace {

long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long out = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for '" + key + "': " + v);
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing characters");
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for '" + key + "': " + v);
    }
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void apply_override(TrainConfig& cfg, const std::string& key, const std::string& value) {
    if (key == "seed")
        cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "nq")
        cfg.nq = static_cast<int>(parse_int(key, value));
    else if (key == "channels")
        cfg.channels = static_cast<int>(parse_int(key, value));
    else if (key == "height")
        cfg.height = static_cast<int>(parse_int(key, value));
    else if (key == "width")
        cfg.width = static_cast<int>(parse_int(key, value));
    else if (key == "t_stu")
        cfg.t_stu = static_cast<int>(parse_int(key, value));
    else if (key == "t_tea")
        cfg.t_tea = static_cast<int>(parse_int(key, value));
    else if (key == "num_objects")
        cfg.num_objects = static_cast<int>(parse_int(key, value));
    else if (key == "train_scenes")
        cfg.train_scenes = static_cast<int>(parse_int(key, value));
    else if (key == "eval_scenes")
        cfg.eval_scenes = static_cast<int>(parse_int(key, value));
    else if (key == "batch")
        cfg.batch = static_cast<int>(parse_int(key, value));
    else if (key == "epochs")
        cfg.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "teacher_epochs")
        cfg.teacher_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "lr")
        cfg.lr = parse_double(key, value);
    else if (key == "min_lr")
        cfg.min_lr = parse_double(key, value);
    else if (key == "teacher_lr")
        cfg.teacher_lr = parse_double(key, value);
    else if (key == "weight_decay")
        cfg.weight_decay = parse_double(key, value);
    else if (key == "mask_ratio")
        cfg.mask_ratio = parse_double(key, value);
    else if (key == "tau")
        cfg.tau = parse_double(key, value);
    else if (key == "alpha1")
        cfg.alpha1 = parse_double(key, value);
    else if (key == "alpha2")
        cfg.alpha2 = parse_double(key, value);
    else if (key == "alpha3")
        cfg.alpha3 = parse_double(key, value);
    else if (key == "alpha4")
        cfg.alpha4 = parse_double(key, value);
    else
        throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: line " + std::to_string(lineno) +
                              " is not key=value: " + line);
        apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

namespace {

struct TeacherModel {
    scene::EncoderParams enc;
    scene::DecoderParams dec;
};

struct StudentModel {
    scene::EncoderParams enc;
    scene::DecoderParams dec;
    distill::GeneratorParams gen_bev, gen_pv3, gen_pv1;
};

double checksum(std::vector<std::pair<std::string, Tensor*>> params) {
    double s = 0.0;
    for (auto& [name, t] : params)
        for (double v : t->data) s += v + 0.5 * std::fabs(v);
    return s;
}

double teacher_checksum(TeacherModel& m) {
    double s = checksum(m.enc.named_params());
    return s + checksum(m.dec.named_params());
}

// Per-graph binding of named parameter tensors to their graph leaves.
struct Bound {
    std::vector<std::string> names;
    std::vector<Tensor*> tensors;
    std::vector<NodeId> ids;

    void add(const std::string& name, Tensor* t, NodeId id) {
        names.push_back(name);
        tensors.push_back(t);
        ids.push_back(id);
    }
};

scene::EncoderNodes bind_encoder(Graph& g, scene::EncoderParams& p, Bound& b) {
    scene::EncoderNodes n = scene::add_encoder(g, p, true);
    b.add("enc.w_emb", &p.w_emb, n.w_emb);
    b.add("enc.b_emb", &p.b_emb, n.b_emb);
    b.add("enc.wq", &p.wq, n.wq);
    b.add("enc.wk", &p.wk, n.wk);
    b.add("enc.wv", &p.wv, n.wv);
    b.add("enc.pv_w", &p.pv_w, n.pv_w);
    b.add("enc.pv_b", &p.pv_b, n.pv_b);
    b.add("enc.pv_w_lo", &p.pv_w_lo, n.pv_w_lo);
    b.add("enc.pv_b_lo", &p.pv_b_lo, n.pv_b_lo);
    return n;
}

scene::DecoderNodes bind_decoder(Graph& g, scene::DecoderParams& p, Bound& b) {
    scene::DecoderNodes n = scene::add_decoder(g, p, true);
    b.add("dec.w1", &p.w1, n.w1);
    b.add("dec.b1", &p.b1, n.b1);
    b.add("dec.w2", &p.w2, n.w2);
    b.add("dec.b2", &p.b2, n.b2);
    b.add("dec.w_head", &p.w_head, n.w_head);
    b.add("dec.b_head", &p.b_head, n.b_head);
    return n;
}

distill::GeneratorNodes bind_generator(Graph& g, distill::GeneratorParams& p,
                                       const std::string& prefix, Bound& b) {
    distill::GeneratorNodes n = distill::add_generator(g, p, true);
    b.add(prefix + ".w1", &p.w1, n.w1);
    b.add(prefix + ".b1", &p.b1, n.b1);
    b.add(prefix + ".w2", &p.w2, n.w2);
    b.add(prefix + ".b2", &p.b2, n.b2);
    return n;
}

struct TeacherOut {
    distill::FeatureSet bev;     // all t_tea frames
    distill::PvFeatureSet pv3;   // all t_tea frames
    distill::PvFeatureSet pv1;   // first t_stu frames (same-frame targets)
    Tensor decoded;              // [Nq, C]
};

TeacherOut teacher_forward(const TeacherModel& m, const scene::SceneSample& s,
                           const TrainConfig& cfg) {
    Graph g;
    scene::EncoderNodes en = scene::add_encoder(g, m.enc, false);
    scene::DecoderNodes dn = scene::add_decoder(g, m.dec, false);
    scene::EncodeResult er = scene::encode(g, en, s, cfg.t_tea, cfg.nq, cfg.height, cfg.width);
    scene::DecodeResult dr = scene::decode_and_regress(g, dn, er.bev);

    TeacherOut out;
    std::vector<Tensor> bev, pv3, pv1;
    for (int t = 0; t < cfg.t_tea; ++t) {
        bev.push_back(g.value(er.bev.frames[static_cast<std::size_t>(t)]));
        pv3.push_back(g.value(er.pv3.frames[static_cast<std::size_t>(t)]));
        if (t < cfg.t_stu) pv1.push_back(g.value(er.pv1.frames[static_cast<std::size_t>(t)]));
    }
    out.bev = distill::FeatureSet::from_frames(bev);
    out.pv3 = distill::PvFeatureSet::from_frames(pv3, 3);
    out.pv1 = distill::PvFeatureSet::from_frames(pv1, 1);
    out.decoded = g.value(dr.decoded);
    return out;
}

distill::FeatureSet truncate_frames(const distill::FeatureSet& fs, int t) {
    std::vector<Tensor> frames;
    for (int i = 0; i < t; ++i) frames.push_back(fs.frame(i));
    return distill::FeatureSet::from_frames(frames);
}

struct StepLosses {
    double total = 0, task = 0, rc_bev = 0, rc_pv = 0, dc = 0, trd = 0;
    double bookkeeping_err = 0;
};

// One student forward/backward on a single scene; gradients are accumulated
// into grad_acc keyed by parameter name.
StepLosses student_step(StudentModel& m, const TeacherOut& tea, const scene::SceneSample& s,
                        const TrainConfig& cfg, const distill::DistillConfig& dcfg,
                        std::uint64_t mask_seed,
                        std::unordered_map<std::string, Tensor>* grad_acc) {
    Graph g;
    Bound b;
    scene::EncoderNodes en = bind_encoder(g, m.enc, b);
    scene::DecoderNodes dn = bind_decoder(g, m.dec, b);
    scene::EncodeResult er = scene::encode(g, en, s, cfg.t_stu, cfg.nq, cfg.height, cfg.width);
    scene::DecodeResult dr = scene::decode_and_regress(g, dn, er.bev);
    NodeId task = scene::task_loss(g, dr.predictions, s);

    std::optional<NodeId> c_rc_bev, c_rc_pv, c_dc, c_trd;
    if (dcfg.alpha1 > 0) {
        distill::GeneratorNodes gb = bind_generator(g, m.gen_bev, "gen_bev", b);
        distill::MaskPlan mp =
            distill::generate_mask({cfg.t_stu, cfg.nq}, dcfg.lambda, mix(mask_seed, 11));
        c_rc_bev = distill::rc_bev_loss(g, er.bev, tea.bev, gb, mp);
    }
    if (dcfg.alpha2 > 0) {
        distill::GeneratorNodes g3 = bind_generator(g, m.gen_pv3, "gen_pv3", b);
        distill::GeneratorNodes g1 = bind_generator(g, m.gen_pv1, "gen_pv1", b);
        distill::MaskPlan mp3 = distill::generate_mask({cfg.t_stu, cfg.height, cfg.width},
                                                       dcfg.lambda, mix(mask_seed, 12));
        distill::MaskPlan mp1 = distill::generate_mask({cfg.t_stu, cfg.height, cfg.width},
                                                       dcfg.lambda, mix(mask_seed, 13));
        NodeId lvl3 = distill::rc_pv_loss(g, er.pv3, tea.pv3, g3, mp3);
        NodeId lvl1 = distill::spatial_reconstruction_loss(g, er.pv1, tea.pv1, g1, mp1);
        c_rc_pv = g.add(lvl3, lvl1);
    }
    if (dcfg.alpha3 > 0) c_dc = distill::dc_loss(g, dr.decoded, tea.decoded);
    if (dcfg.alpha4 > 0)
        c_trd = distill::trd_loss(g, er.bev, truncate_frames(tea.bev, cfg.t_stu), dcfg.tau);

    NodeId distill_sum = distill::total_distill_loss(g, dcfg, c_rc_bev, c_rc_pv, c_dc, c_trd);
    NodeId total = g.add(task, distill_sum);

    StepLosses out;
    out.total = g.value(total).item();
    out.task = g.value(task).item();
    if (c_rc_bev) out.rc_bev = g.value(*c_rc_bev).item();
    if (c_rc_pv) out.rc_pv = g.value(*c_rc_pv).item();
    if (c_dc) out.dc = g.value(*c_dc).item();
    if (c_trd) out.trd = g.value(*c_trd).item();
    out.bookkeeping_err =
        std::fabs(out.total - (out.task + dcfg.alpha1 * out.rc_bev + dcfg.alpha2 * out.rc_pv +
                               dcfg.alpha3 * out.dc + dcfg.alpha4 * out.trd));

    if (grad_acc) {
        GradMap grads = g.backward(total);
        for (std::size_t i = 0; i < b.ids.size(); ++i) {
            const Tensor& grad = grads.at(b.ids[i]);
            auto it = grad_acc->find(b.names[i]);
            if (it == grad_acc->end()) {
                grad_acc->emplace(b.names[i], grad);
            } else {
                for (std::size_t j = 0; j < grad.size(); ++j)
                    it->second.data[j] += grad.data[j];
            }
        }
    }
    return out;
}

// Teacher pretraining step: plain task loss on all t_tea frames.
double teacher_step(TeacherModel& m, const scene::SceneSample& s, const TrainConfig& cfg,
                    std::unordered_map<std::string, Tensor>* grad_acc) {
    Graph g;
    Bound b;
    scene::EncoderNodes en = bind_encoder(g, m.enc, b);
    scene::DecoderNodes dn = bind_decoder(g, m.dec, b);
    scene::EncodeResult er = scene::encode(g, en, s, cfg.t_tea, cfg.nq, cfg.height, cfg.width);
    scene::DecodeResult dr = scene::decode_and_regress(g, dn, er.bev);
    NodeId loss = scene::task_loss(g, dr.predictions, s);

    if (grad_acc) {
        GradMap grads = g.backward(loss);
        for (std::size_t i = 0; i < b.ids.size(); ++i) {
            const Tensor& grad = grads.at(b.ids[i]);
            auto it = grad_acc->find(b.names[i]);
            if (it == grad_acc->end()) {
                grad_acc->emplace(b.names[i], grad);
            } else {
                for (std::size_t j = 0; j < grad.size(); ++j)
                    it->second.data[j] += grad.data[j];
            }
        }
    }
    return g.value(loss).item();
}

void apply_batch(optim::AdamW& opt, std::unordered_map<std::string, Tensor>& grad_acc,
                 const std::vector<std::pair<std::string, Tensor*>>& params, int batch_size,
                 double lr) {
    for (auto& [name, tensor] : params) {
        auto it = grad_acc.find(name);
        if (it == grad_acc.end()) continue;  // component inactive this run
        Tensor& grad = it->second;
        for (double& v : grad.data) v /= batch_size;
        opt.step(name, *tensor, grad, lr);
    }
    grad_acc.clear();
}

std::vector<std::pair<std::string, Tensor*>> student_params(StudentModel& m,
                                                            const distill::DistillConfig& dcfg) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [n, t] : m.enc.named_params()) out.emplace_back("enc." + n, t);
    for (auto& [n, t] : m.dec.named_params()) out.emplace_back("dec." + n, t);
    auto add_gen = [&out](const std::string& prefix, distill::GeneratorParams& p) {
        out.emplace_back(prefix + ".w1", &p.w1);
        out.emplace_back(prefix + ".b1", &p.b1);
        out.emplace_back(prefix + ".w2", &p.w2);
        out.emplace_back(prefix + ".b2", &p.b2);
    };
    if (dcfg.alpha1 > 0) add_gen("gen_bev", m.gen_bev);
    if (dcfg.alpha2 > 0) {
        add_gen("gen_pv3", m.gen_pv3);
        add_gen("gen_pv1", m.gen_pv1);
    }
    return out;
}

EvalMetrics evaluate_student(const StudentModel& m, const TeacherModel& tea,
                             const std::vector<scene::SceneSample>& scenes,
                             const TrainConfig& cfg) {
    EvalMetrics out;
    for (const scene::SceneSample& s : scenes) {
        Graph g;
        scene::EncoderNodes en = scene::add_encoder(g, m.enc, false);
        scene::DecoderNodes dn = scene::add_decoder(g, m.dec, false);
        scene::EncodeResult er = scene::encode(g, en, s, cfg.t_stu, cfg.nq, cfg.height, cfg.width);
        scene::DecodeResult dr = scene::decode_and_regress(g, dn, er.bev);
        scene::TaskMetrics tm = scene::task_metrics(g.value(dr.predictions), s);
        out.position_error += tm.mean_position_error;
        out.velocity_error += tm.mean_velocity_error;

        TeacherOut to = teacher_forward(tea, s, cfg);
        distill::FeatureSet agg = distill::tsa_aggregate(to.bev, cfg.t_stu);
        double mse = 0.0;
        for (int t = 0; t < cfg.t_stu; ++t) {
            const Tensor& stu = g.value(er.bev.frames[static_cast<std::size_t>(t)]);
            Tensor ref = agg.frame(t);
            double frame_mse = 0.0;
            for (std::size_t i = 0; i < ref.size(); ++i) {
                const double d = stu.data[i] - ref.data[i];
                frame_mse += d * d;
            }
            mse += frame_mse / static_cast<double>(ref.size());
        }
        out.alignment_mse += mse / cfg.t_stu;
    }
    const double n = static_cast<double>(scenes.size());
    out.alignment_mse /= n;
    out.position_error /= n;
    out.velocity_error /= n;
    return out;
}

EvalMetrics evaluate_teacher(const TeacherModel& tea,
                             const std::vector<scene::SceneSample>& scenes,
                             const TrainConfig& cfg) {
    EvalMetrics out;
    for (const scene::SceneSample& s : scenes) {
        Graph g;
        scene::EncoderNodes en = scene::add_encoder(g, tea.enc, false);
        scene::DecoderNodes dn = scene::add_decoder(g, tea.dec, false);
        scene::EncodeResult er = scene::encode(g, en, s, cfg.t_tea, cfg.nq, cfg.height, cfg.width);
        scene::DecodeResult dr = scene::decode_and_regress(g, dn, er.bev);
        scene::TaskMetrics tm = scene::task_metrics(g.value(dr.predictions), s);
        out.position_error += tm.mean_position_error;
        out.velocity_error += tm.mean_velocity_error;
    }
    out.position_error /= scenes.size();
    out.velocity_error /= scenes.size();
    return out;
}

}  // namespace

TrainResult train_distill(const TrainConfig& cfg) {
    cfg.validate();

    TrainResult res;
    res.cfg = cfg;
    const bool full = cfg.t_stu == cfg.t_tea;
    res.mode = full ? distill::Mode::FullFrames : distill::Mode::PartialFrames;

    // Mode gating: partial frames drops the temporal-relation term, full
    // frames drops the masked reconstruction terms.
    const double a1 = full ? 0.0 : cfg.alpha1;
    const double a2 = full ? 0.0 : cfg.alpha2;
    const double a4 = full ? cfg.alpha4 : 0.0;
    distill::DistillConfig dcfg =
        distill::DistillConfig::make(cfg.mask_ratio, cfg.tau, a1, a2, cfg.alpha3, a4, cfg.t_stu,
                                     cfg.t_tea, cfg.nq, cfg.channels, cfg.height, cfg.width,
                                     cfg.seed);

    std::vector<scene::SceneSample> train_set, eval_set;
    for (int i = 0; i < cfg.train_scenes; ++i)
        train_set.push_back(scene::generate_scene(mix(cfg.seed, 0x1000 + i), cfg.num_objects,
                                                  cfg.t_tea));
    for (int i = 0; i < cfg.eval_scenes; ++i)
        eval_set.push_back(scene::generate_scene(mix(cfg.seed, 0x200000 + i), cfg.num_objects,
                                                 cfg.t_tea));

    // --- teacher pretraining on the task loss, then frozen ---
    TeacherModel tea{scene::make_encoder(cfg.channels, mix(cfg.seed, 1)),
                     scene::make_decoder(cfg.channels, mix(cfg.seed, 2))};
    {
        optim::AdamWConfig oc;
        oc.lr = cfg.teacher_lr;
        oc.weight_decay = cfg.weight_decay;
        optim::AdamW opt(oc);
        auto params = [&tea] {
            std::vector<std::pair<std::string, Tensor*>> p;
            for (auto& [n, t] : tea.enc.named_params()) p.emplace_back("enc." + n, t);
            for (auto& [n, t] : tea.dec.named_params()) p.emplace_back("dec." + n, t);
            return p;
        }();
        const int steps_per_epoch = (cfg.train_scenes + cfg.batch - 1) / cfg.batch;
        const int total_steps = std::max(1, cfg.teacher_epochs * steps_per_epoch);
        int step = 0;
        for (int epoch = 0; epoch < cfg.teacher_epochs; ++epoch) {
            std::unordered_map<std::string, Tensor> grad_acc;
            int in_batch = 0;
            for (int i = 0; i < cfg.train_scenes; ++i) {
                teacher_step(tea, train_set[static_cast<std::size_t>(i)], cfg, &grad_acc);
                if (++in_batch == cfg.batch || i + 1 == cfg.train_scenes) {
                    apply_batch(opt, grad_acc, params, in_batch,
                                optim::cosine_lr(cfg.teacher_lr, cfg.min_lr, step, total_steps));
                    ++step;
                    in_batch = 0;
                }
            }
        }
    }
    res.teacher_checksum_before = teacher_checksum(tea);
    res.teacher_eval = evaluate_teacher(tea, eval_set, cfg);

    // Teacher feature targets are fixed once the teacher is frozen; compute
    // them once per scene.
    std::vector<TeacherOut> teacher_train;
    for (const scene::SceneSample& s : train_set) teacher_train.push_back(teacher_forward(tea, s, cfg));

    // --- student ---
    StudentModel stu;
    stu.enc = scene::make_encoder(cfg.channels, mix(cfg.seed, 3));
    stu.dec = scene::make_decoder(cfg.channels, mix(cfg.seed, 4));
    {
        RandomSource rs(mix(cfg.seed, 5));
        stu.gen_bev = distill::make_generator(cfg.channels, false, rs);
        stu.gen_pv3 = distill::make_generator(cfg.channels, true, rs);
        stu.gen_pv1 = distill::make_generator(cfg.channels, true, rs);
    }

    res.initial_eval = evaluate_student(stu, tea, eval_set, cfg);

    optim::AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.weight_decay = cfg.weight_decay;
    optim::AdamW opt(oc);
    auto params = student_params(stu, dcfg);
    const int steps_per_epoch = (cfg.train_scenes + cfg.batch - 1) / cfg.batch;
    const int total_steps = cfg.epochs * steps_per_epoch;
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        std::unordered_map<std::string, Tensor> grad_acc;
        int in_batch = 0;
        for (int i = 0; i < cfg.train_scenes; ++i) {
            StepLosses sl = student_step(stu, teacher_train[static_cast<std::size_t>(i)],
                                         train_set[static_cast<std::size_t>(i)], cfg, dcfg,
                                         mix(cfg.seed, 0x4000000ULL +
                                                           static_cast<std::uint64_t>(epoch) *
                                                               1000003ULL +
                                                           static_cast<std::uint64_t>(i)),
                                         &grad_acc);
            rec.total += sl.total;
            rec.task += sl.task;
            rec.rc_bev += sl.rc_bev;
            rec.rc_pv += sl.rc_pv;
            rec.dc += sl.dc;
            rec.trd += sl.trd;
            res.bookkeeping_max_err = std::max(res.bookkeeping_max_err, sl.bookkeeping_err);
            if (++in_batch == cfg.batch || i + 1 == cfg.train_scenes) {
                const double lr = optim::cosine_lr(cfg.lr, cfg.min_lr, step, total_steps);
                rec.lr = lr;
                apply_batch(opt, grad_acc, params, in_batch, lr);
                ++step;
                in_batch = 0;
            }
        }
        rec.total /= cfg.train_scenes;
        rec.task /= cfg.train_scenes;
        rec.rc_bev /= cfg.train_scenes;
        rec.rc_pv /= cfg.train_scenes;
        rec.dc /= cfg.train_scenes;
        rec.trd /= cfg.train_scenes;
        res.curve.push_back(rec);
    }

    res.final_eval = evaluate_student(stu, tea, eval_set, cfg);
    res.teacher_checksum_after = teacher_checksum(tea);
    return res;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

json config_json(const TrainConfig& c) {
    return json{{"seed", c.seed},
                {"nq", c.nq},
                {"channels", c.channels},
                {"height", c.height},
                {"width", c.width},
                {"t_stu", c.t_stu},
                {"t_tea", c.t_tea},
                {"num_objects", c.num_objects},
                {"train_scenes", c.train_scenes},
                {"eval_scenes", c.eval_scenes},
                {"batch", c.batch},
                {"epochs", c.epochs},
                {"teacher_epochs", c.teacher_epochs},
                {"lr", c.lr},
                {"min_lr", c.min_lr},
                {"teacher_lr", c.teacher_lr},
                {"weight_decay", c.weight_decay},
                {"mask_ratio", c.mask_ratio},
                {"tau", c.tau},
                {"alpha1", c.alpha1},
                {"alpha2", c.alpha2},
                {"alpha3", c.alpha3},
                {"alpha4", c.alpha4}};
}

json eval_json(const EvalMetrics& m) {
    return json{{"alignment_mse", m.alignment_mse},
                {"position_error_m", m.position_error},
                {"velocity_error_mps", m.velocity_error}};
}

json metrics_json(const TrainResult& r) {
    json j;
    j["config"] = config_json(r.cfg);
    j["mode"] = r.mode == distill::Mode::FullFrames ? "full-frames" : "partial-frames";
    j["teacher_eval"] = eval_json(r.teacher_eval);
    j["initial_eval"] = eval_json(r.initial_eval);
    j["final_eval"] = eval_json(r.final_eval);
    j["teacher_frozen"] = r.teacher_checksum_before == r.teacher_checksum_after;
    j["bookkeeping_max_err"] = r.bookkeeping_max_err;
    if (!r.curve.empty()) {
        // gated components are absent, not zero: partial frames carry no
        // temporal-relation term, full frames no reconstruction terms
        const EpochRecord& last = r.curve.back();
        json losses{{"total", last.total}, {"task", last.task}};
        if (r.mode == distill::Mode::PartialFrames) {
            losses["rc_bev"] = last.rc_bev;
            losses["rc_pv"] = last.rc_pv;
        } else {
            losses["trd"] = last.trd;
        }
        losses["dc"] = last.dc;
        j["final_train_loss"] = losses;
    }
    return j;
}

}  // namespace

std::string write_run_report(const TrainResult& r, const std::string& out_dir,
                             double wall_seconds) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    const std::string metrics_path = (fs::path(out_dir) / "metrics.json").string();
    {
        std::ofstream out(metrics_path);
        out << metrics_json(r).dump(2) << "\n";
    }
    {
        json rep = metrics_json(r);
        rep["wall_seconds"] = wall_seconds;
        std::ofstream out(fs::path(out_dir) / "report.json");
        out << rep.dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "curves.csv");
        out << "epoch,lr,total,task,rc_bev,rc_pv,dc,trd\n";
        out.precision(17);
        for (const EpochRecord& e : r.curve)
            out << e.epoch << "," << e.lr << "," << e.total << "," << e.task << "," << e.rc_bev
                << "," << e.rc_pv << "," << e.dc << "," << e.trd << "\n";
    }
    return metrics_path;
}

std::string run_root() {
    if (const char* env = std::getenv("TD_RUN_ROOT"); env && *env) return env;
    return "runs";
}

std::string make_run_dir(const std::string& root, std::uint64_t seed) {
    namespace fs = std::filesystem;
    const auto stamp = static_cast<long long>(std::time(nullptr));
    for (int i = 0;; ++i) {
        fs::path dir = fs::path(root) / ("run-" + std::to_string(stamp) + "-seed" +
                                         std::to_string(seed) +
                                         (i == 0 ? "" : "-" + std::to_string(i)));
        if (!fs::exists(dir)) {
            fs::create_directories(dir);
            return dir.string();
        }
    }
}

// ---------------------------------------------------------------------------
// Verification suite
// ---------------------------------------------------------------------------

namespace {

struct CheckOutcome {
    std::string name;
    bool pass = false;
    json detail;
};

CheckOutcome invariant_checks(std::uint64_t seed) {
    CheckOutcome out;
    out.name = "invariants";
    out.pass = true;
    json detail = json::array();
    auto record = [&](const std::string& what, bool ok) {
        detail.push_back(json{{"invariant", what}, {"pass", ok}});
        if (!ok) out.pass = false;
    };

    // Mask replay: same seed, same plan; entries binary; edge ratios.
    {
        distill::MaskPlan a = distill::generate_mask({4, 16}, 0.5, seed);
        distill::MaskPlan b = distill::generate_mask({4, 16}, 0.5, seed);
        bool same = a.mask.data == b.mask.data;
        bool binary = std::all_of(a.mask.data.begin(), a.mask.data.end(),
                                  [](double v) { return v == 0.0 || v == 1.0; });
        distill::MaskPlan none = distill::generate_mask({4, 16}, 0.0, seed);
        distill::MaskPlan all = distill::generate_mask({4, 16}, 1.0, seed);
        bool edges = none.masked_count() == 0 && all.masked_count() == all.mask.size();
        record("mask_replay_deterministic", same);
        record("mask_entries_binary", binary);
        record("mask_edge_ratios", edges);
    }

    // Trivial zeros: student equal to its target with an identity generator
    // and no masking makes each loss exactly zero.
    {
        RandomSource rs(seed ^ 0x77);
        const int nq = 5, c = 3, t_stu = 2, t_tea = 3;
        std::vector<Tensor> tea_frames;
        for (int t = 0; t < t_tea; ++t) {
            Tensor f = Tensor::zeros({nq, c});
            for (double& v : f.data) v = std::fabs(rs.normal());
            tea_frames.push_back(f);
        }
        distill::FeatureSet teacher = distill::FeatureSet::from_frames(tea_frames);
        distill::FeatureSet agg = distill::tsa_aggregate(teacher, t_stu);
        distill::MaskPlan no_mask = distill::generate_mask({t_stu, nq}, 0.0, seed);
        distill::GeneratorParams idg = distill::identity_generator(c, false);

        Graph g;
        distill::FeatureNodes stu;
        stu.queries = nq;
        stu.channels = c;
        for (int t = 0; t < t_stu; ++t) stu.frames.push_back(g.constant(agg.frame(t)));
        distill::GeneratorNodes gn = distill::add_generator(g, idg, false);
        double rc = g.value(distill::rc_bev_loss(g, stu, teacher, gn, no_mask)).item();
        record("rc_bev_zero_on_exact_match", rc == 0.0);

        distill::FeatureSet tea_trunc;
        {
            std::vector<Tensor> f;
            for (int t = 0; t < t_stu; ++t) f.push_back(tea_frames[static_cast<std::size_t>(t)]);
            tea_trunc = distill::FeatureSet::from_frames(f);
        }
        Graph g2;
        distill::FeatureNodes stu2;
        stu2.queries = nq;
        stu2.channels = c;
        for (int t = 0; t < t_stu; ++t)
            stu2.frames.push_back(g2.constant(tea_frames[static_cast<std::size_t>(t)]));
        double kl = g2.value(distill::trd_loss(g2, stu2, tea_trunc, 0.5)).item();
        record("trd_zero_on_identical_features", std::fabs(kl) < 1e-12);

        Graph g3;
        Tensor d = Tensor::zeros({nq, c});
        for (double& v : d.data) v = rs.normal();
        double dcv = g3.value(distill::dc_loss(g3, g3.constant(d), d)).item();
        record("dc_zero_on_identical_features", dcv == 0.0);
    }

    // Mode gating is enforced at configuration time.
    {
        bool partial_rejects_trd = false;
        try {
            distill::DistillConfig::make(0.5, 0.5, 1e-4, 1e-3, 1.0, 1.0, 4, 8, 16, 8, 8, 8, 1);
        } catch (const std::invalid_argument&) {
            partial_rejects_trd = true;
        }
        bool full_rejects_rc = false;
        try {
            distill::DistillConfig::make(0.5, 0.5, 1e-4, 0.0, 1.0, 1.0, 8, 8, 16, 8, 8, 8, 1);
        } catch (const std::invalid_argument&) {
            full_rejects_rc = true;
        }
        record("gating_partial_rejects_trd_weight", partial_rejects_trd);
        record("gating_full_rejects_rc_weight", full_rejects_rc);
    }

    out.detail = std::move(detail);
    return out;
}

}  // namespace

VerifyResult run_verification_suite(std::uint64_t seed) {
    VerifyResult res;
    json report;
    report["seed"] = seed;

    json equiv = json::array();
    for (const oracle::EquivReport& r : oracle::forward_equivalence(seed)) {
        equiv.push_back(json{{"op", r.op},
                             {"instances", r.instances},
                             {"max_abs_err", r.max_abs_err},
                             {"tolerance", r.tolerance},
                             {"pass", r.pass}});
        if (!r.pass && res.pass) {
            res.pass = false;
            res.failing = "equivalence:" + r.op;
        }
    }
    report["forward_equivalence"] = std::move(equiv);

    json grad = json::array();
    for (const oracle::GradCheckReport& r : oracle::gradcheck_all(seed)) {
        grad.push_back(json{{"op", r.op},
                            {"max_rel_err", r.max_rel_err},
                            {"max_abs_err", r.max_abs_err},
                            {"tolerance", r.tolerance},
                            {"pass", r.pass}});
        if (!r.pass && res.pass) {
            res.pass = false;
            res.failing = "gradcheck:" + r.op;
        }
    }
    report["gradcheck"] = std::move(grad);

    // Negative control: a deliberately corrupted analytic gradient must be
    // caught, otherwise the checker itself is broken.
    {
        bool caught = false;
        for (const oracle::GradCheckReport& r : oracle::gradcheck_all(seed, "matmul"))
            if (r.op == "matmul" && !r.pass) caught = true;
        report["gradcheck_negative_control"] = json{{"pass", caught}};
        if (!caught && res.pass) {
            res.pass = false;
            res.failing = "gradcheck_negative_control";
        }
    }

    CheckOutcome inv = invariant_checks(seed);
    report["invariants"] = inv.detail;
    if (!inv.pass && res.pass) {
        res.pass = false;
        for (const json& item : inv.detail)
            if (!item["pass"].get<bool>()) {
                res.failing = "invariant:" + item["invariant"].get<std::string>();
                break;
            }
    }

    report["pass"] = res.pass;
    res.json = report.dump(2);
    return res;
}

// ---------------------------------------------------------------------------
// Ablations
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_ablation(const std::string& kind, const TrainConfig& base) {
    base.validate();
    std::vector<std::pair<std::string, TrainConfig>> grid;

    if (kind == "mask-ratio") {
        for (double r : {0.4, 0.5, 0.6, 0.75, 0.9}) {
            TrainConfig c = base;
            c.mask_ratio = r;
            std::ostringstream label;
            label << "mask_ratio=" << r;
            grid.emplace_back(label.str(), c);
        }
    } else if (kind == "loss-weights") {
        for (double a : {1e-5, 2e-5, 5e-5, 1e-4, 2e-4}) {
            TrainConfig c = base;
            c.alpha1 = a;
            std::ostringstream label;
            label << "alpha1=" << a;
            grid.emplace_back(label.str(), c);
        }
    } else if (kind == "frame-count") {
        for (int t : {2, 4, 8}) {
            TrainConfig c = base;
            c.t_stu = t;
            if (c.t_tea < t) c.t_tea = t;
            grid.emplace_back("t_stu=" + std::to_string(t), c);
        }
    } else if (kind == "loss-components") {
        auto variant = [&](const std::string& label, double a1, double a2, double a3, double a4) {
            TrainConfig c = base;
            c.alpha1 = a1;
            c.alpha2 = a2;
            c.alpha3 = a3;
            c.alpha4 = a4;
            grid.emplace_back(label, c);
        };
        variant("none", 0, 0, 0, 0);
        variant("full", base.alpha1, base.alpha2, base.alpha3, base.alpha4);
        variant("no_rc_bev", 0, base.alpha2, base.alpha3, base.alpha4);
        variant("no_rc_pv", base.alpha1, 0, base.alpha3, base.alpha4);
        variant("no_dc", base.alpha1, base.alpha2, 0, base.alpha4);
        variant("no_trd", base.alpha1, base.alpha2, base.alpha3, 0);
    } else {
        throw ConfigError("ablate: unknown kind '" + kind + "'");
    }

    std::vector<AblationRow> rows;
    for (auto& [label, cfg] : grid) {
        TrainResult r = train_distill(cfg);
        AblationRow row;
        row.label = label;
        row.eval = r.final_eval;
        row.final_total = r.curve.empty() ? 0.0 : r.curve.back().total;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out.precision(17);
    out << "variant,alignment_mse,position_error_m,velocity_error_mps,final_train_total\n";
    for (const AblationRow& r : rows)
        out << r.label << "," << r.eval.alignment_mse << "," << r.eval.position_error << ","
            << r.eval.velocity_error << "," << r.final_total << "\n";
    return out.str();
}

}  // namespace td::train
