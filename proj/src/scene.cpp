#include "td/scene.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "td/ops.hpp"

namespace td::scene {

namespace {

constexpr double kPi = 3.14159265358979323846;

}  // namespace

std::array<double, 2> SceneSample::object_world_pos(int obj, int t) const {
    const ObjectTrack& o = objects.at(static_cast<std::size_t>(obj));
    const double elapsed = static_cast<double>(frames - 1 - t) * kFrameDt;
    return {o.x0 + o.vx * elapsed, o.y0 + o.vy * elapsed};
}

std::array<double, 2> SceneSample::ego_pos(int t) const {
    std::array<double, 2> p{0.0, 0.0};
    for (int f = 0; f < t; ++f) {
        p[0] += ego_delta.at(static_cast<std::size_t>(f))[0];
        p[1] += ego_delta.at(static_cast<std::size_t>(f))[1];
    }
    return p;
}

SceneSample generate_scene(std::uint64_t seed, int num_objects, int frames) {
    if (num_objects < 1 || frames < 1)
        throw std::invalid_argument("generate_scene: need num_objects >= 1 and frames >= 1");
    SceneSample s;
    s.frames = frames;
    s.num_objects = num_objects;
    s.seed = seed;
    RandomSource rs(seed);
    for (int i = 0; i < num_objects; ++i) {
        ObjectTrack o;
        // current-frame position uniform in the BEV extent, walked back to
        // scene start along the constant velocity
        const double cx = rs.uniform(-kBevExtent, kBevExtent);
        const double cy = rs.uniform(-kBevExtent, kBevExtent);
        const double speed = rs.uniform(0.0, kMaxSpeed);
        const double heading = rs.uniform(-kPi, kPi);
        o.vx = speed * std::cos(heading);
        o.vy = speed * std::sin(heading);
        const double total = static_cast<double>(frames - 1) * kFrameDt;
        o.x0 = cx - o.vx * total;
        o.y0 = cy - o.vy * total;
        o.z0 = rs.uniform(-1.5, 1.5);
        o.w = rs.uniform(0.5, 4.0);
        o.l = rs.uniform(0.5, 4.0);
        o.h = rs.uniform(0.5, 4.0);
        o.yaw = rs.uniform(-kPi, kPi);
        s.objects.push_back(o);
    }
    s.ego_delta.resize(static_cast<std::size_t>(frames));
    for (auto& d : s.ego_delta) {
        d[0] = rs.uniform(-5.0, 5.0);
        d[1] = rs.uniform(-5.0, 5.0);
    }
    for (int i = 0; i < num_objects; ++i) {
        auto p = s.object_world_pos(i, 0);  // ego_pos(0) is the origin
        s.ground_truth.push_back({p[0], p[1], s.objects[static_cast<std::size_t>(i)].vx,
                                  s.objects[static_cast<std::size_t>(i)].vy});
    }
    return s;
}

QueryState ego_align(const QueryState& q, int frame_offset,
                     std::span<const std::array<double, 2>> ego_deltas) {
    if (frame_offset < 0) throw std::invalid_argument("ego_align: negative frame offset");
    if (static_cast<std::size_t>(frame_offset) > ego_deltas.size())
        throw std::invalid_argument("ego_align: offset exceeds available ego deltas");
    QueryState out = q;
    out.x -= q.vx * frame_offset * kFrameDt;
    out.y -= q.vy * frame_offset * kFrameDt;
    for (int f = 0; f < frame_offset; ++f) {
        out.x -= ego_deltas[static_cast<std::size_t>(f)][0];
        out.y -= ego_deltas[static_cast<std::size_t>(f)][1];
    }
    return out;
}

std::string serialize_scene(const SceneSample& s) {
    std::ostringstream os;
    os.precision(17);
    os << s.seed << ' ' << s.frames << ' ' << s.num_objects;
    for (const ObjectTrack& o : s.objects)
        os << ' ' << o.x0 << ' ' << o.y0 << ' ' << o.z0 << ' ' << o.vx << ' ' << o.vy << ' '
           << o.w << ' ' << o.l << ' ' << o.h << ' ' << o.yaw;
    for (const auto& d : s.ego_delta) os << ' ' << d[0] << ' ' << d[1];
    return os.str();
}

SceneSample deserialize_scene(const std::string& line) {
    std::istringstream is(line);
    SceneSample s;
    if (!(is >> s.seed >> s.frames >> s.num_objects) || s.frames < 1 || s.num_objects < 1)
        throw std::invalid_argument("deserialize_scene: malformed record header");
    s.objects.resize(static_cast<std::size_t>(s.num_objects));
    for (ObjectTrack& o : s.objects)
        if (!(is >> o.x0 >> o.y0 >> o.z0 >> o.vx >> o.vy >> o.w >> o.l >> o.h >> o.yaw))
            throw std::invalid_argument("deserialize_scene: truncated object list");
    s.ego_delta.resize(static_cast<std::size_t>(s.frames));
    for (auto& d : s.ego_delta)
        if (!(is >> d[0] >> d[1]))
            throw std::invalid_argument("deserialize_scene: truncated ego motion");
    for (int i = 0; i < s.num_objects; ++i) {
        auto p = s.object_world_pos(i, 0);
        s.ground_truth.push_back({p[0], p[1], s.objects[static_cast<std::size_t>(i)].vx,
                                  s.objects[static_cast<std::size_t>(i)].vy});
    }
    return s;
}

std::vector<std::pair<std::string, Tensor*>> EncoderParams::named_params() {
    return {{"w_emb", &w_emb},   {"b_emb", &b_emb},       {"wq", &wq},
            {"wk", &wk},         {"wv", &wv},             {"pv_w", &pv_w},
            {"pv_b", &pv_b},     {"pv_w_lo", &pv_w_lo},   {"pv_b_lo", &pv_b_lo}};
}

EncoderParams make_encoder(int channels, std::uint64_t seed) {
    RandomSource rs(seed);
    auto init = [&](std::vector<int> shape, double sd) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.data) v = sd * rs.normal();
        return t;
    };
    EncoderParams p;
    p.w_emb = init({kObsDim, channels}, 0.4);
    p.b_emb = Tensor::zeros({channels});
    const double attn_sd = 1.0 / std::sqrt(static_cast<double>(channels));
    p.wq = init({channels, channels}, attn_sd);
    p.wk = init({channels, channels}, attn_sd);
    p.wv = init({channels, channels}, attn_sd);
    p.pv_w = init({channels, 2}, 0.4);
    p.pv_b = Tensor::zeros({channels});
    p.pv_w_lo = init({channels, 2}, 0.4);
    p.pv_b_lo = Tensor::zeros({channels});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> DecoderParams::named_params() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}, {"w_head", &w_head},
            {"b_head", &b_head}};
}

DecoderParams make_decoder(int channels, std::uint64_t seed) {
    RandomSource rs(seed);
    auto init = [&](std::vector<int> shape, double sd) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.data) v = sd * rs.normal();
        return t;
    };
    DecoderParams p;
    const double sd = 1.0 / std::sqrt(static_cast<double>(channels));
    p.w1 = init({channels, channels}, sd);
    p.b1 = Tensor::zeros({channels});
    p.w2 = init({channels, channels}, sd);
    p.b2 = Tensor::zeros({channels});
    p.w_head = init({channels, 4}, 0.3);
    p.b_head = Tensor::zeros({4});
    return p;
}

EncoderNodes add_encoder(Graph& g, const EncoderParams& p, bool trainable) {
    auto ins = [&](const Tensor& t) { return trainable ? g.parameter(t) : g.constant(t); };
    EncoderNodes n;
    n.w_emb = ins(p.w_emb);
    n.b_emb = ins(p.b_emb);
    n.wq = ins(p.wq);
    n.wk = ins(p.wk);
    n.wv = ins(p.wv);
    n.pv_w = ins(p.pv_w);
    n.pv_b = ins(p.pv_b);
    n.pv_w_lo = ins(p.pv_w_lo);
    n.pv_b_lo = ins(p.pv_b_lo);
    return n;
}

DecoderNodes add_decoder(Graph& g, const DecoderParams& p, bool trainable) {
    auto ins = [&](const Tensor& t) { return trainable ? g.parameter(t) : g.constant(t); };
    DecoderNodes n;
    n.w1 = ins(p.w1);
    n.b1 = ins(p.b1);
    n.w2 = ins(p.w2);
    n.b2 = ins(p.b2);
    n.w_head = ins(p.w_head);
    n.b_head = ins(p.b_head);
    return n;
}

namespace {

// Row-major anchor grid covering the BEV extent.
std::vector<std::array<double, 2>> anchor_grid(int nq) {
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(nq))));
    std::vector<std::array<double, 2>> anchors;
    anchors.reserve(static_cast<std::size_t>(nq));
    for (int q = 0; q < nq; ++q) {
        const int r = q / cols, c = q % cols;
        const int rows = (nq + cols - 1) / cols;
        const double ax = -kBevExtent + (2.0 * kBevExtent) * (c + 0.5) / cols;
        const double ay = -kBevExtent + (2.0 * kBevExtent) * (r + 0.5) / rows;
        anchors.push_back({ax, ay});
    }
    return anchors;
}

}  // namespace

Tensor build_observation(const SceneSample& s, int frame, int nq) {
    if (frame < 0 || frame >= s.frames)
        throw std::invalid_argument("build_observation: frame out of range");
    const auto anchors = anchor_grid(nq);
    const auto ego = s.ego_pos(frame);
    constexpr double sigma = 20.0;
    Tensor obs = Tensor::zeros({nq, kObsDim});
    for (int q = 0; q < nq; ++q) {
        QueryState anchor;
        anchor.x = anchors[static_cast<std::size_t>(q)][0];
        anchor.y = anchors[static_cast<std::size_t>(q)][1];
        QueryState aligned = ego_align(anchor, frame, s.ego_delta);
        double occ = 0, wvx = 0, wvy = 0;
        for (int i = 0; i < s.num_objects; ++i) {
            const auto wp = s.object_world_pos(i, frame);
            const double ox = wp[0] - ego[0], oy = wp[1] - ego[1];
            const double dx = ox - aligned.x, dy = oy - aligned.y;
            const double wgt = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            occ += wgt;
            wvx += wgt * s.objects[static_cast<std::size_t>(i)].vx / kMaxSpeed;
            wvy += wgt * s.objects[static_cast<std::size_t>(i)].vy / kMaxSpeed;
        }
        double* row = &obs.data[static_cast<std::size_t>(q) * kObsDim];
        row[0] = occ;
        row[1] = wvx;
        row[2] = wvy;
        row[3] = anchor.x / kBevExtent;
        row[4] = anchor.y / kBevExtent;
        row[5] = 1.0;
    }
    return obs;
}

Tensor build_pv_basis(const SceneSample& s, int frame, int height, int width, double sigma_a,
                      double sigma_b) {
    if (frame < 0 || frame >= s.frames)
        throw std::invalid_argument("build_pv_basis: frame out of range");
    const auto ego = s.ego_pos(frame);
    Tensor basis = Tensor::zeros({2, height * width});
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            const double cy = -kBevExtent + (2.0 * kBevExtent) * (r + 0.5) / height;
            const double cx = -kBevExtent + (2.0 * kBevExtent) * (c + 0.5) / width;
            double a = 0, b = 0;
            for (int i = 0; i < s.num_objects; ++i) {
                const auto wp = s.object_world_pos(i, frame);
                const double dx = wp[0] - ego[0] - cx, dy = wp[1] - ego[1] - cy;
                const double d2 = dx * dx + dy * dy;
                a += std::exp(-d2 / (2.0 * sigma_a * sigma_a));
                b += std::exp(-d2 / (2.0 * sigma_b * sigma_b));
            }
            const std::size_t l = static_cast<std::size_t>(r) * width + c;
            basis.data[l] = a;
            basis.data[static_cast<std::size_t>(height) * width + l] = b;
        }
    return basis;
}

namespace {

NodeId pv_frame(Graph& g, NodeId pv_w, NodeId pv_b, const Tensor& basis, int c, int h, int w) {
    NodeId ch = g.matmul(pv_w, g.constant(basis));  // [C,L]
    NodeId biased = g.transpose(g.bias_last(g.transpose(ch), pv_b));
    return g.reshape(biased, {c, h, w});
}

}  // namespace

EncodeResult encode(Graph& g, const EncoderNodes& enc, const SceneSample& s, int t_in, int nq,
                    int height, int width) {
    if (t_in < 1 || t_in > s.frames)
        throw std::invalid_argument("encode: t_in must lie in [1, scene frames]");
    const int c = g.value(enc.b_emb).dim(0);
    EncodeResult out;
    out.bev.queries = nq;
    out.bev.channels = c;
    out.pv3.channels = c;
    out.pv3.height = height;
    out.pv3.width = width;
    out.pv3.level = 3;
    out.pv1 = out.pv3;
    out.pv1.level = 1;
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
    for (int t = 0; t < t_in; ++t) {
        NodeId obs = g.constant(build_observation(s, t, nq));
        NodeId f = g.bias_last(g.matmul(obs, enc.w_emb), enc.b_emb);
        NodeId qn = g.matmul(f, enc.wq);
        NodeId kn = g.matmul(f, enc.wk);
        NodeId vn = g.matmul(f, enc.wv);
        NodeId attn = g.softmax_rows(g.scale(g.matmul(qn, g.transpose(kn)), inv_sqrt_c));
        out.bev.frames.push_back(g.add(f, g.matmul(attn, vn)));

        out.pv3.frames.push_back(pv_frame(g, enc.pv_w, enc.pv_b,
                                          build_pv_basis(s, t, height, width, kPvSigmaA3,
                                                         kPvSigmaB3),
                                          c, height, width));
        out.pv1.frames.push_back(pv_frame(g, enc.pv_w_lo, enc.pv_b_lo,
                                          build_pv_basis(s, t, height, width, kPvSigmaA1,
                                                         kPvSigmaB1),
                                          c, height, width));
    }
    return out;
}

DecodeResult decode_and_regress(Graph& g, const DecoderNodes& dec,
                                const distill::FeatureNodes& features) {
    if (features.frames.empty()) throw ShapeError("decode_and_regress: no frames");
    NodeId pooled = features.frames[0];
    for (std::size_t t = 1; t < features.frames.size(); ++t)
        pooled = g.add(pooled, features.frames[t]);
    pooled = g.scale(pooled, 1.0 / static_cast<double>(features.frames.size()));
    NodeId hidden = g.relu(g.bias_last(g.matmul(pooled, dec.w1), dec.b1));
    DecodeResult out;
    out.decoded = g.bias_last(g.matmul(hidden, dec.w2), dec.b2);
    out.predictions = g.bias_last(g.matmul(out.decoded, dec.w_head), dec.b_head);
    return out;
}

namespace {

// Index of the predicted query nearest to each ground-truth object, in
// normalized position space.
std::vector<int> match_objects(const Tensor& predictions, const SceneSample& s) {
    const int nq = predictions.dim(0);
    std::vector<int> match(static_cast<std::size_t>(s.num_objects), 0);
    for (int i = 0; i < s.num_objects; ++i) {
        const double gx = s.ground_truth[static_cast<std::size_t>(i)][0] / kBevExtent;
        const double gy = s.ground_truth[static_cast<std::size_t>(i)][1] / kBevExtent;
        double best = std::numeric_limits<double>::infinity();
        for (int q = 0; q < nq; ++q) {
            const double dx = predictions.data[static_cast<std::size_t>(q) * 4 + 0] - gx;
            const double dy = predictions.data[static_cast<std::size_t>(q) * 4 + 1] - gy;
            const double d = dx * dx + dy * dy;
            if (d < best) {
                best = d;
                match[static_cast<std::size_t>(i)] = q;
            }
        }
    }
    return match;
}

Tensor normalized_targets(const SceneSample& s) {
    Tensor t = Tensor::zeros({s.num_objects, 4});
    for (int i = 0; i < s.num_objects; ++i) {
        t.data[static_cast<std::size_t>(i) * 4 + 0] =
            s.ground_truth[static_cast<std::size_t>(i)][0] / kBevExtent;
        t.data[static_cast<std::size_t>(i) * 4 + 1] =
            s.ground_truth[static_cast<std::size_t>(i)][1] / kBevExtent;
        t.data[static_cast<std::size_t>(i) * 4 + 2] =
            s.ground_truth[static_cast<std::size_t>(i)][2] / kMaxSpeed;
        t.data[static_cast<std::size_t>(i) * 4 + 3] =
            s.ground_truth[static_cast<std::size_t>(i)][3] / kMaxSpeed;
    }
    return t;
}

}  // namespace

NodeId task_loss(Graph& g, NodeId predictions, const SceneSample& s) {
    const Tensor& pred = g.value(predictions);
    if (pred.rank() != 2 || pred.dim(1) != 4)
        throw ShapeError("task_loss: predictions must be [Nq,4]");
    const auto match = match_objects(pred, s);
    Tensor sel = Tensor::zeros({s.num_objects, pred.dim(0)});
    for (int i = 0; i < s.num_objects; ++i)
        sel.data[static_cast<std::size_t>(i) * pred.dim(0) +
                 match[static_cast<std::size_t>(i)]] = 1.0;
    NodeId picked = g.matmul(g.constant(sel), predictions);
    NodeId diff = g.sub(picked, g.constant(normalized_targets(s)));
    return g.reduce_mean(g.abs(diff));
}

TaskMetrics task_metrics(const Tensor& predictions, const SceneSample& s) {
    const auto match = match_objects(predictions, s);
    TaskMetrics m;
    for (int i = 0; i < s.num_objects; ++i) {
        const std::size_t q = static_cast<std::size_t>(match[static_cast<std::size_t>(i)]);
        const double px = predictions.data[q * 4 + 0] * kBevExtent;
        const double py = predictions.data[q * 4 + 1] * kBevExtent;
        const double pvx = predictions.data[q * 4 + 2] * kMaxSpeed;
        const double pvy = predictions.data[q * 4 + 3] * kMaxSpeed;
        const auto& gt = s.ground_truth[static_cast<std::size_t>(i)];
        m.mean_position_error += std::hypot(px - gt[0], py - gt[1]);
        m.mean_velocity_error += std::hypot(pvx - gt[2], pvy - gt[3]);
    }
    m.mean_position_error /= s.num_objects;
    m.mean_velocity_error /= s.num_objects;
    return m;
}

}  // namespace td::scene
