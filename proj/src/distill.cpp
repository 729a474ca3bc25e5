#include "td/distill.hpp"

#include <cmath>
#include <cstring>

#include "td/ops.hpp"

namespace td::distill {

namespace {

Tensor slice_first_axis(const Tensor& t, int idx) {
    if (t.rank() < 2) throw ShapeError("slice: need rank >= 2, got " + shape_str(t.shape));
    if (idx < 0 || idx >= t.dim(0))
        throw ShapeError("slice: frame index " + std::to_string(idx) + " out of range for " +
                         shape_str(t.shape));
    std::vector<int> rest(t.shape.begin() + 1, t.shape.end());
    const std::size_t n = shape_size(rest);
    std::vector<double> d(t.data.begin() + static_cast<std::ptrdiff_t>(n) * idx,
                          t.data.begin() + static_cast<std::ptrdiff_t>(n) * (idx + 1));
    return Tensor(std::move(rest), std::move(d));
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
    if (frames.empty()) throw ShapeError("stack: no frames");
    std::vector<int> shape{static_cast<int>(frames.size())};
    shape.insert(shape.end(), frames[0].shape.begin(), frames[0].shape.end());
    Tensor out = Tensor::zeros(shape);
    std::size_t off = 0;
    for (const Tensor& f : frames) {
        require_same_shape(f, frames[0], "stack");
        std::copy(f.data.begin(), f.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += f.size();
    }
    return out;
}

void check_frame_gap(int t_stu, int t_tea) {
    const int k = t_tea - t_stu;
    if (t_stu < 1 || k < 0 || k >= 8)
        throw ShapeError("frame counts violate T_tea = T_stu + k with 0 <= k < 8: T_stu=" +
                         std::to_string(t_stu) + " T_tea=" + std::to_string(t_tea));
}

// One Eq.-style attention term: softmax(q k^T / sqrt(C)) v on plain tensors.
Tensor attention_term(const Tensor& q, const Tensor& k, const Tensor& v) {
    const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    Tensor scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_c);
    return ops::matmul(ops::softmax_rows(scores), v);
}

}  // namespace

FeatureSet FeatureSet::from_frames(const std::vector<Tensor>& frame_tensors) {
    Tensor v = stack_frames(frame_tensors);
    if (v.rank() != 3) throw ShapeError("FeatureSet: frames must be [Nq,C]");
    FeatureSet fs;
    fs.frames = v.dim(0);
    fs.queries = v.dim(1);
    fs.channels = v.dim(2);
    fs.values = std::move(v);
    return fs;
}

Tensor FeatureSet::frame(int t) const { return slice_first_axis(values, t); }

PvFeatureSet PvFeatureSet::from_frames(const std::vector<Tensor>& frame_tensors, int level) {
    Tensor v = stack_frames(frame_tensors);
    if (v.rank() != 4) throw ShapeError("PvFeatureSet: frames must be [C,H,W]");
    PvFeatureSet fs;
    fs.frames = v.dim(0);
    fs.channels = v.dim(1);
    fs.height = v.dim(2);
    fs.width = v.dim(3);
    fs.level = level;
    if (fs.height < 3 || fs.width < 3)
        throw ShapeError("PvFeatureSet: H and W must be >= 3 for 3x3 kernels");
    fs.values = std::move(v);
    return fs;
}

Tensor PvFeatureSet::frame(int t) const { return slice_first_axis(values, t); }

Tensor MaskPlan::frame(int t) const { return slice_first_axis(mask, t); }

std::size_t MaskPlan::masked_count() const {
    std::size_t n = 0;
    for (double v : mask.data)
        if (v == 0.0) ++n;
    return n;
}

MaskPlan generate_mask(const std::vector<int>& shape, double ratio, std::uint64_t seed) {
    if (!(ratio >= 0.0 && ratio <= 1.0))
        throw std::invalid_argument("generate_mask: ratio must lie in [0,1]");
    if (shape.size() < 2) throw ShapeError("generate_mask: need frame x location extents");
    MaskPlan mp;
    mp.seed = seed;
    mp.ratio = ratio;
    mp.mask = Tensor::zeros(shape);
    RandomSource rs(seed);
    for (double& v : mp.mask.data) v = rs.uniform() < ratio ? 0.0 : 1.0;
    return mp;
}

FeatureSet tsa_aggregate(const FeatureSet& teacher, int t_stu) {
    check_frame_gap(t_stu, teacher.frames);
    const int k = teacher.frames - t_stu;
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(t_stu));
    for (int t = 0; t < t_stu; ++t) {
        Tensor key = teacher.frame(t);
        Tensor agg = Tensor::zeros({teacher.queries, teacher.channels});
        for (int t1 = 0; t1 <= t + k; ++t1) {
            Tensor qv = teacher.frame(t1);
            agg = ops::add(agg, attention_term(qv, key, qv));
        }
        out.push_back(std::move(agg));
    }
    return FeatureSet::from_frames(out);
}

namespace {

// [C,H,W] -> [L,C] token matrix and back.
Tensor to_tokens(const Tensor& f) {
    return ops::transpose(ops::reshape(f, {f.dim(0), f.dim(1) * f.dim(2)}));
}
Tensor from_tokens(const Tensor& tok, int c, int h, int w) {
    return ops::reshape(ops::transpose(tok), {c, h, w});
}

}  // namespace

PvFeatureSet tsa_aggregate_pv(const PvFeatureSet& teacher, int t_stu) {
    check_frame_gap(t_stu, teacher.frames);
    const int k = teacher.frames - t_stu;
    std::vector<Tensor> out;
    out.reserve(static_cast<std::size_t>(t_stu));
    for (int t = 0; t < t_stu; ++t) {
        Tensor key = to_tokens(teacher.frame(t));
        Tensor agg = Tensor::zeros(key.shape);
        for (int t1 = 0; t1 <= t + k; ++t1) {
            Tensor qv = to_tokens(teacher.frame(t1));
            agg = ops::add(agg, attention_term(qv, key, qv));
        }
        out.push_back(from_tokens(agg, teacher.channels, teacher.height, teacher.width));
    }
    return PvFeatureSet::from_frames(out, teacher.level);
}

GeneratorParams make_generator(int channels, bool two_d, RandomSource& rs) {
    GeneratorParams p;
    p.two_d = two_d;
    const int taps = two_d ? 9 : 3;
    const double sd = 1.0 / std::sqrt(static_cast<double>(channels * taps));
    auto init = [&](std::vector<int> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.data) v = sd * rs.normal();
        return t;
    };
    if (two_d) {
        p.w1 = init({channels, channels, 3, 3});
        p.w2 = init({channels, channels, 3, 3});
    } else {
        p.w1 = init({channels, channels, 3});
        p.w2 = init({channels, channels, 3});
    }
    p.b1 = Tensor::zeros({channels});
    p.b2 = Tensor::zeros({channels});
    return p;
}

GeneratorParams identity_generator(int channels, bool two_d) {
    GeneratorParams p;
    p.two_d = two_d;
    if (two_d) {
        p.w1 = Tensor::zeros({channels, channels, 3, 3});
        p.w2 = Tensor::zeros({channels, channels, 3, 3});
        for (int c = 0; c < channels; ++c) {
            p.w1.data[((static_cast<std::size_t>(c) * channels + c) * 3 + 1) * 3 + 1] = 1.0;
            p.w2.data[((static_cast<std::size_t>(c) * channels + c) * 3 + 1) * 3 + 1] = 1.0;
        }
    } else {
        p.w1 = Tensor::zeros({channels, channels, 3});
        p.w2 = Tensor::zeros({channels, channels, 3});
        for (int c = 0; c < channels; ++c) {
            p.w1.data[(static_cast<std::size_t>(c) * channels + c) * 3 + 1] = 1.0;
            p.w2.data[(static_cast<std::size_t>(c) * channels + c) * 3 + 1] = 1.0;
        }
    }
    p.b1 = Tensor::zeros({channels});
    p.b2 = Tensor::zeros({channels});
    return p;
}

GeneratorNodes add_generator(Graph& g, const GeneratorParams& p, bool trainable) {
    GeneratorNodes n;
    n.two_d = p.two_d;
    n.w1 = trainable ? g.parameter(p.w1) : g.constant(p.w1);
    n.b1 = trainable ? g.parameter(p.b1) : g.constant(p.b1);
    n.w2 = trainable ? g.parameter(p.w2) : g.constant(p.w2);
    n.b2 = trainable ? g.parameter(p.b2) : g.constant(p.b2);
    return n;
}

FeatureNodes insert_features(Graph& g, const FeatureSet& fs, bool trainable) {
    FeatureNodes fn;
    fn.queries = fs.queries;
    fn.channels = fs.channels;
    for (int t = 0; t < fs.frames; ++t) {
        Tensor f = fs.frame(t);
        fn.frames.push_back(trainable ? g.parameter(std::move(f)) : g.constant(std::move(f)));
    }
    return fn;
}

PvFeatureNodes insert_features_pv(Graph& g, const PvFeatureSet& fs, bool trainable) {
    PvFeatureNodes fn;
    fn.channels = fs.channels;
    fn.height = fs.height;
    fn.width = fs.width;
    fn.level = fs.level;
    for (int t = 0; t < fs.frames; ++t) {
        Tensor f = fs.frame(t);
        fn.frames.push_back(trainable ? g.parameter(std::move(f)) : g.constant(std::move(f)));
    }
    return fn;
}

NodeId generate_frame(Graph& g, NodeId frame, const GeneratorNodes& gen) {
    if (gen.two_d) {
        if (g.value(frame).rank() != 3)
            throw ShapeError("generate_frame: 2D generator expects a [C,H,W] frame");
        NodeId h = g.conv2d_same3(frame, gen.w1, gen.b1);
        return g.conv2d_same3(g.relu(h), gen.w2, gen.b2);
    }
    if (g.value(frame).rank() != 2)
        throw ShapeError("generate_frame: 1D generator expects a [Nq,C] frame");
    // query axis is the 1D spatial axis, channels run the kernels
    NodeId x = g.transpose(frame);
    NodeId h = g.conv1d_same3(x, gen.w1, gen.b1);
    return g.transpose(g.conv1d_same3(g.relu(h), gen.w2, gen.b2));
}

FeatureNodes generate_features(Graph& g, const FeatureNodes& masked, const GeneratorNodes& gen) {
    if (gen.two_d) throw ShapeError("generate_features: BEV features need a 1D generator");
    FeatureNodes out;
    out.queries = masked.queries;
    out.channels = masked.channels;
    for (NodeId f : masked.frames) out.frames.push_back(generate_frame(g, f, gen));
    return out;
}

PvFeatureNodes generate_features_pv(Graph& g, const PvFeatureNodes& masked,
                                    const GeneratorNodes& gen) {
    if (!gen.two_d) throw ShapeError("generate_features_pv: PV features need a 2D generator");
    PvFeatureNodes out = masked;
    out.frames.clear();
    for (NodeId f : masked.frames) out.frames.push_back(generate_frame(g, f, gen));
    return out;
}

namespace {

// Mean over frames of per-frame mean squared errors; frames share a shape so
// this equals the mean over all T x ... entries.
NodeId mean_sq_over_frames(Graph& g, const std::vector<NodeId>& pred,
                           const std::vector<NodeId>& target_consts) {
    NodeId acc = -1;
    for (std::size_t t = 0; t < pred.size(); ++t) {
        NodeId diff = g.sub(pred[t], target_consts[t]);
        NodeId m = g.reduce_mean(g.mul(diff, diff));
        acc = (acc < 0) ? m : g.add(acc, m);
    }
    return g.scale(acc, 1.0 / static_cast<double>(pred.size()));
}

}  // namespace

NodeId rc_bev_loss(Graph& g, const FeatureNodes& student, const FeatureSet& teacher,
                   const GeneratorNodes& gen, const MaskPlan& mp) {
    const int t_stu = static_cast<int>(student.frames.size());
    check_frame_gap(t_stu, teacher.frames);
    if (student.queries != teacher.queries || student.channels != teacher.channels)
        throw ShapeError("rc_bev_loss: student/teacher query or channel mismatch");
    if (mp.mask.rank() != 2 || mp.mask.dim(0) != t_stu || mp.mask.dim(1) != student.queries)
        throw ShapeError("rc_bev_loss: mask shape " + shape_str(mp.mask.shape) +
                         " does not match [T_stu,Nq]");

    FeatureSet agg = tsa_aggregate(teacher, t_stu);
    std::vector<NodeId> generated, targets;
    for (int t = 0; t < t_stu; ++t) {
        NodeId masked = g.mask_channels_last(student.frames[static_cast<std::size_t>(t)],
                                             g.constant(mp.frame(t)));
        generated.push_back(generate_frame(g, masked, gen));
        targets.push_back(g.constant(agg.frame(t)));
    }
    return mean_sq_over_frames(g, generated, targets);
}

NodeId rc_pv_loss(Graph& g, const PvFeatureNodes& student, const PvFeatureSet& teacher,
                  const GeneratorNodes& gen, const MaskPlan& mp) {
    if (student.level != 3 || teacher.level != 3)
        throw ShapeError("rc_pv_loss: temporal PV reconstruction applies to FPN level 3 only");
    const int t_stu = static_cast<int>(student.frames.size());
    check_frame_gap(t_stu, teacher.frames);
    if (student.channels != teacher.channels || student.height != teacher.height ||
        student.width != teacher.width)
        throw ShapeError("rc_pv_loss: student/teacher extent mismatch");
    if (mp.mask.rank() != 3 || mp.mask.dim(0) != t_stu || mp.mask.dim(1) != student.height ||
        mp.mask.dim(2) != student.width)
        throw ShapeError("rc_pv_loss: mask shape " + shape_str(mp.mask.shape) +
                         " does not match [T_stu,H,W]");

    PvFeatureSet agg = tsa_aggregate_pv(teacher, t_stu);
    std::vector<NodeId> generated, targets;
    for (int t = 0; t < t_stu; ++t) {
        NodeId masked = g.mask_channels_first(student.frames[static_cast<std::size_t>(t)],
                                              g.constant(mp.frame(t)));
        generated.push_back(generate_frame(g, masked, gen));
        targets.push_back(g.constant(agg.frame(t)));
    }
    return mean_sq_over_frames(g, generated, targets);
}

NodeId spatial_reconstruction_loss(Graph& g, const PvFeatureNodes& student,
                                   const PvFeatureSet& teacher, const GeneratorNodes& gen,
                                   const MaskPlan& mp) {
    if (student.level == 3 || teacher.level == 3)
        throw ShapeError("spatial_reconstruction_loss: level 3 uses rc_pv_loss");
    if (student.level < 0 || student.level > 2 || teacher.level != student.level)
        throw ShapeError("spatial_reconstruction_loss: levels must match and lie in {0,1,2}");
    const int t_stu = static_cast<int>(student.frames.size());
    if (teacher.frames < t_stu)
        throw ShapeError("spatial_reconstruction_loss: teacher must cover the student frames");
    if (student.channels != teacher.channels || student.height != teacher.height ||
        student.width != teacher.width)
        throw ShapeError("spatial_reconstruction_loss: extent mismatch");
    if (mp.mask.rank() != 3 || mp.mask.dim(0) != t_stu || mp.mask.dim(1) != student.height ||
        mp.mask.dim(2) != student.width)
        throw ShapeError("spatial_reconstruction_loss: mask shape mismatch");

    std::vector<NodeId> generated, targets;
    for (int t = 0; t < t_stu; ++t) {
        NodeId masked = g.mask_channels_first(student.frames[static_cast<std::size_t>(t)],
                                              g.constant(mp.frame(t)));
        generated.push_back(generate_frame(g, masked, gen));
        targets.push_back(g.constant(teacher.frame(t)));
    }
    return mean_sq_over_frames(g, generated, targets);
}

Tensor similarity(const FeatureSet& f, int i, int j) {
    if (i == j) throw ShapeError("similarity: self-similarity (i == j) is excluded");
    if (i < 0 || j < 0 || i >= f.frames || j >= f.frames)
        throw ShapeError("similarity: frame index out of range");
    return ops::matmul(f.frame(i), ops::transpose(f.frame(j)));
}

NodeId trd_loss(Graph& g, const FeatureNodes& student, const FeatureSet& teacher, double tau) {
    if (!(tau > 0.0)) throw std::invalid_argument("trd_loss: temperature must be positive");
    const int t = static_cast<int>(student.frames.size());
    if (t != teacher.frames)
        throw ShapeError("trd_loss: student and teacher must see the same frame count");
    if (t < 2) throw ShapeError("trd_loss: needs at least two frames to form a pair");
    if (student.queries != teacher.queries || student.channels != teacher.channels)
        throw ShapeError("trd_loss: query or channel mismatch");

    const double inv_tau = 1.0 / tau;
    NodeId acc = -1;
    int pairs = 0;
    for (int i = 0; i < t; ++i)
        for (int j = i + 1; j < t; ++j) {
            NodeId s_stu = g.matmul(student.frames[static_cast<std::size_t>(i)],
                                    g.transpose(student.frames[static_cast<std::size_t>(j)]));
            NodeId p = g.softmax_rows(g.scale(s_stu, inv_tau));
            Tensor s_tea = similarity(teacher, i, j);
            Tensor q = ops::softmax_rows(ops::scale(s_tea, inv_tau));
            NodeId log_q = g.constant(ops::log_elem(q));
            NodeId term = g.mul(p, g.sub(g.log(p), log_q));
            NodeId pair_loss = g.reduce_mean(term);
            acc = (acc < 0) ? pair_loss : g.add(acc, pair_loss);
            ++pairs;
        }
    return g.scale(acc, 1.0 / static_cast<double>(pairs));
}

NodeId dc_loss(Graph& g, NodeId student_decoded, const Tensor& teacher_decoded) {
    require_same_shape(g.value(student_decoded), teacher_decoded, "dc_loss");
    NodeId diff = g.sub(student_decoded, g.constant(teacher_decoded));
    return g.reduce_mean(g.mul(diff, diff));
}

DistillConfig DistillConfig::make(double lambda, double tau, double alpha1, double alpha2,
                                  double alpha3, double alpha4, int t_stu, int t_tea, int nq,
                                  int channels, int height, int width, std::uint64_t seed) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw std::invalid_argument("DistillConfig: lambda must lie in [0,1]");
    if (!(tau > 0.0)) throw std::invalid_argument("DistillConfig: tau must be positive");
    if (alpha1 < 0 || alpha2 < 0 || alpha3 < 0 || alpha4 < 0)
        throw std::invalid_argument("DistillConfig: loss weights must be nonnegative");
    check_frame_gap(t_stu, t_tea);
    if (nq < 1 || channels < 1 || height < 3 || width < 3)
        throw std::invalid_argument("DistillConfig: bad feature extents");

    DistillConfig cfg;
    cfg.lambda = lambda;
    cfg.tau = tau;
    cfg.alpha1 = alpha1;
    cfg.alpha2 = alpha2;
    cfg.alpha3 = alpha3;
    cfg.alpha4 = alpha4;
    cfg.t_stu = t_stu;
    cfg.t_tea = t_tea;
    cfg.nq = nq;
    cfg.channels = channels;
    cfg.height = height;
    cfg.width = width;
    cfg.seed = seed;
    cfg.mode = t_stu < t_tea ? Mode::PartialFrames : Mode::FullFrames;
    if (cfg.mode == Mode::PartialFrames && alpha4 != 0.0)
        throw std::invalid_argument("DistillConfig: partial frames require alpha4 = 0");
    if (cfg.mode == Mode::FullFrames && (alpha1 != 0.0 || alpha2 != 0.0))
        throw std::invalid_argument("DistillConfig: full frames require alpha1 = alpha2 = 0");
    return cfg;
}

NodeId total_distill_loss(Graph& g, const DistillConfig& cfg, std::optional<NodeId> rc_bev,
                          std::optional<NodeId> rc_pv, std::optional<NodeId> dc,
                          std::optional<NodeId> trd) {
    struct Item {
        double w;
        std::optional<NodeId> node;
        const char* name;
    };
    const Item items[] = {{cfg.alpha1, rc_bev, "rc_bev"},
                          {cfg.alpha2, rc_pv, "rc_pv"},
                          {cfg.alpha3, dc, "dc"},
                          {cfg.alpha4, trd, "trd"}};
    NodeId acc = -1;
    for (const Item& it : items) {
        if (it.w == 0.0) continue;
        if (!it.node)
            throw std::invalid_argument(std::string("total_distill_loss: weight for ") + it.name +
                                        " is nonzero but the component is absent");
        NodeId term = g.scale(*it.node, it.w);
        acc = (acc < 0) ? term : g.add(acc, term);
    }
    return acc < 0 ? g.constant(Tensor::scalar(0.0)) : acc;
}

}  // namespace td::distill
