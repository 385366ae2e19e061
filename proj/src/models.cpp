#include "fallnet/models.hpp"

#include <algorithm>
#include <stdexcept>

namespace fallnet {

const std::vector<ModelKind>& all_model_kinds() {
    static const std::vector<ModelKind> kinds = {
        ModelKind::SimpleCnn, ModelKind::SimpleGru,  ModelKind::CoarseFineCnn,
        ModelKind::CnnLstm,   ModelKind::CnnGru,     ModelKind::EnsembleCfg,
    };
    return kinds;
}

std::string model_kind_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::SimpleCnn: return "simple_cnn";
    case ModelKind::SimpleGru: return "simple_gru";
    case ModelKind::CoarseFineCnn: return "coarse_fine_cnn";
    case ModelKind::CnnLstm: return "cnn_lstm";
    case ModelKind::CnnGru: return "cnn_gru";
    case ModelKind::EnsembleCfg: return "ensemble_cfg";
    }
    throw std::invalid_argument("model_kind_name: unknown kind");
}

std::string model_display_name(ModelKind kind) {
    switch (kind) {
    case ModelKind::SimpleCnn: return "Simple CNN";
    case ModelKind::SimpleGru: return "Simple GRU";
    case ModelKind::CoarseFineCnn: return "Coarse-fine CNN";
    case ModelKind::CnnLstm: return "CNN-LSTM";
    case ModelKind::CnnGru: return "CNN-GRU";
    case ModelKind::EnsembleCfg: return "Ensemble (coarse-fine CNN + GRU)";
    }
    throw std::invalid_argument("model_display_name: unknown kind");
}

std::optional<ModelKind> model_kind_from_name(std::string_view name) {
    for (ModelKind k : all_model_kinds()) {
        if (model_kind_name(k) == name) return k;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Model base

real Model::nondiff_margin() const {
    return std::numeric_limits<real>::infinity();
}

size_t Model::predict(const Tensor& segment) {
    Tensor p = predict_proba(segment);
    size_t best = 0;
    for (size_t i = 1; i < p.size(); ++i) {
        if (p[i] > p[best]) best = i;
    }
    return best;
}

void Model::zero_grads() {
    for (ParamRef& ref : params()) {
        ref.grad->fill(0);
    }
}

void Model::scale_grads(real s) {
    for (ParamRef& ref : params()) {
        Tensor& g = *ref.grad;
        for (size_t i = 0; i < g.size(); ++i) {
            g[i] *= s;
        }
    }
}

size_t Model::param_count() {
    size_t n = 0;
    for (ParamRef& ref : params()) {
        n += ref.value->size();
    }
    return n;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

void require_segment(const Tensor& seg, const ZooConfig& cfg, const char* who) {
    if (seg.rank() != 2 || seg.dim(0) != cfg.input_rows || seg.dim(1) != cfg.input_cols) {
        throw std::invalid_argument(std::string(who) + ": expected segment " +
                                    shape_to_string({cfg.input_rows, cfg.input_cols}) +
                                    ", got " + seg.shape_str());
    }
}

// [rows x cols] segment -> [cols x rows] sequence (time-major).
Tensor to_sequence(const Tensor& seg) {
    size_t rows = seg.dim(0), cols = seg.dim(1);
    Tensor seq({cols, rows});
    for (size_t t = 0; t < cols; ++t) {
        for (size_t r = 0; r < rows; ++r) {
            seq.at(t, r) = seg.at(r, t);
        }
    }
    return seq;
}

Tensor sequence_grad_to_segment(const Tensor& dseq, size_t rows, size_t cols) {
    Tensor dseg({rows, cols});
    for (size_t t = 0; t < cols; ++t) {
        for (size_t r = 0; r < rows; ++r) {
            dseg.at(r, t) = dseq.at(t, r);
        }
    }
    return dseg;
}

// [c x 1 x W] feature map -> [W x c] sequence (time = width axis).
Tensor map_to_sequence(const Tensor& map) {
    size_t c = map.dim(0), w = map.dim(2);
    if (map.dim(1) != 1) {
        throw std::invalid_argument("map_to_sequence: expected height 1, got " +
                                    map.shape_str());
    }
    Tensor seq({w, c});
    for (size_t t = 0; t < w; ++t) {
        for (size_t ch = 0; ch < c; ++ch) {
            seq.at(t, ch) = map.at(ch, 0, t);
        }
    }
    return seq;
}

Tensor sequence_grad_to_map(const Tensor& dseq, const std::vector<size_t>& map_shape) {
    Tensor dmap(map_shape);
    size_t c = map_shape[0], w = map_shape[2];
    for (size_t t = 0; t < w; ++t) {
        for (size_t ch = 0; ch < c; ++ch) {
            dmap.at(ch, 0, t) = dseq.at(t, ch);
        }
    }
    return dmap;
}

void push_dense(std::vector<ParamRef>& out, const std::string& prefix, DenseLayer& d) {
    out.push_back({prefix + ".w", &d.w, &d.dw});
    out.push_back({prefix + ".b", &d.b, &d.db});
}

void push_conv(std::vector<ParamRef>& out, const std::string& prefix, Conv2dLayer& c) {
    out.push_back({prefix + ".filters", &c.filters, &c.dfilters});
    out.push_back({prefix + ".bias", &c.bias, &c.dbias});
}

void push_gru(std::vector<ParamRef>& out, const std::string& prefix, GruLayer& l) {
    out.push_back({prefix + ".w_r", &l.p.w_r, &l.g.w_r});
    out.push_back({prefix + ".w_z", &l.p.w_z, &l.g.w_z});
    out.push_back({prefix + ".w_h", &l.p.w_h, &l.g.w_h});
    out.push_back({prefix + ".b_r", &l.p.b_r, &l.g.b_r});
    out.push_back({prefix + ".b_z", &l.p.b_z, &l.g.b_z});
    out.push_back({prefix + ".b_h", &l.p.b_h, &l.g.b_h});
}

void push_lstm(std::vector<ParamRef>& out, const std::string& prefix, LstmLayer& l) {
    out.push_back({prefix + ".w_i", &l.p.w_i, &l.g.w_i});
    out.push_back({prefix + ".w_f", &l.p.w_f, &l.g.w_f});
    out.push_back({prefix + ".w_o", &l.p.w_o, &l.g.w_o});
    out.push_back({prefix + ".w_c", &l.p.w_c, &l.g.w_c});
    out.push_back({prefix + ".b_i", &l.p.b_i, &l.g.b_i});
    out.push_back({prefix + ".b_f", &l.p.b_f, &l.g.b_f});
    out.push_back({prefix + ".b_o", &l.p.b_o, &l.g.b_o});
    out.push_back({prefix + ".b_c", &l.p.b_c, &l.g.b_c});
}

void push_stack(std::vector<ParamRef>& out, const std::string& prefix, ConvStack& s) {
    for (size_t i = 0; i < s.convs.size(); ++i) {
        push_conv(out, prefix + ".conv" + std::to_string(i + 1), s.convs[i]);
    }
}

} // namespace

// ---------------------------------------------------------------------------
// ConvStack

Tensor ConvStack::forward_map(const Tensor& x) {
    Tensor cur = x;
    for (size_t i = 0; i < convs.size(); ++i) {
        cur = convs[i].forward(cur);
        cur = relus[i].forward(cur);
        cur = pools[i].forward(cur);
    }
    return cur;
}

Tensor ConvStack::backward_map(const Tensor& upstream) {
    Tensor cur = upstream;
    for (size_t i = convs.size(); i-- > 0;) {
        cur = pools[i].backward(cur);
        cur = relus[i].backward(cur);
        cur = convs[i].backward(cur);
    }
    return cur;
}

real ConvStack::nondiff_margin() const {
    real m = std::numeric_limits<real>::infinity();
    for (const ReluLayer& r : relus) {
        m = std::min(m, r.kink_margin());
    }
    for (const MaxPool2dLayer& p : pools) {
        m = std::min(m, p.tie_margin());
    }
    return m;
}

namespace {

std::vector<size_t> conv_out_shape(const std::vector<size_t>& in, size_t oc, size_t kh,
                                   size_t kw) {
    if (in[1] < kh || in[2] < kw) {
        throw std::invalid_argument("conv stack: map " + shape_to_string(in) +
                                    " smaller than kernel " + shape_to_string({kh, kw}));
    }
    return {oc, in[1] - kh + 1, in[2] - kw + 1};
}

std::vector<size_t> pool_out_shape(const std::vector<size_t>& in, size_t ph, size_t pw) {
    std::vector<size_t> out = {in[0], in[1] / ph, in[2] / pw};
    if (out[1] == 0 || out[2] == 0) {
        throw std::invalid_argument("conv stack: map " + shape_to_string(in) +
                                    " smaller than pool window " + shape_to_string({ph, pw}));
    }
    return out;
}

} // namespace

ConvStack make_coarse_stack(const ZooConfig& cfg, SeededRng rng) {
    ConvStack s;
    std::vector<size_t> shape = {1, cfg.input_rows, cfg.input_cols};
    s.convs.emplace_back(1, cfg.conv_filters, 3, 3, rng.split("conv1"));
    shape = conv_out_shape(shape, cfg.conv_filters, 3, 3);
    s.relus.emplace_back();
    s.pools.emplace_back(1, 2);
    shape = pool_out_shape(shape, 1, 2);
    s.map_shape = shape;
    s.flat_len = shape_size(shape);
    return s;
}

ConvStack make_fine_stack(const ZooConfig& cfg, SeededRng rng) {
    ConvStack s;
    std::vector<size_t> shape = {1, cfg.input_rows, cfg.input_cols};
    s.convs.emplace_back(1, cfg.conv_filters, 3, 3, rng.split("conv1"));
    shape = conv_out_shape(shape, cfg.conv_filters, 3, 3);
    s.relus.emplace_back();
    s.pools.emplace_back(1, 2);
    shape = pool_out_shape(shape, 1, 2);
    s.convs.emplace_back(cfg.conv_filters, cfg.conv_filters, 1, 3, rng.split("conv2"));
    shape = conv_out_shape(shape, cfg.conv_filters, 1, 3);
    s.relus.emplace_back();
    s.pools.emplace_back(1, 2);
    shape = pool_out_shape(shape, 1, 2);
    s.map_shape = shape;
    s.flat_len = shape_size(shape);
    return s;
}

// ---------------------------------------------------------------------------
// GruStack

Tensor GruStack::forward_flat(const Tensor& seq) {
    steps_ = seq.dim(0);
    Tensor h1 = l1.forward(seq);
    Tensor h2 = l2.forward(h1);
    size_t hid = l2.p.hidden();
    if (last_only) {
        Tensor out({hid});
        for (size_t i = 0; i < hid; ++i) {
            out[i] = h2.at(steps_ - 1, i);
        }
        return out;
    }
    return flatten(h2);
}

Tensor GruStack::backward_flat(const Tensor& upstream) {
    size_t hid = l2.p.hidden();
    Tensor u2({steps_, hid});
    if (last_only) {
        for (size_t i = 0; i < hid; ++i) {
            u2.at(steps_ - 1, i) = upstream[i];
        }
    } else {
        u2 = upstream.reshaped({steps_, hid});
    }
    Tensor d1 = l2.backward(u2);
    return l1.backward(d1);
}

GruStack make_gru_stack(size_t input_dim, size_t steps, const ZooConfig& cfg, bool last_only,
                        SeededRng rng) {
    GruStack s;
    s.l1 = GruLayer(input_dim, cfg.gru_hidden, rng.split("gru1"));
    s.l2 = GruLayer(cfg.gru_hidden, cfg.gru_hidden, rng.split("gru2"));
    s.last_only = last_only;
    s.flat_len = last_only ? cfg.gru_hidden : steps * cfg.gru_hidden;
    return s;
}

// ---------------------------------------------------------------------------
// Baselines: shared flat-features -> dense -> head classifier.

namespace {

struct ClassifierHead {
    DenseLayer fc, head;

    ClassifierHead() = default;
    ClassifierHead(size_t flat_len, const ZooConfig& cfg, SeededRng rng)
        : fc(flat_len, cfg.dense_units, DenseAct::Relu, rng.split("fc1")),
          head(cfg.dense_units, cfg.classes, DenseAct::None, rng.split("head")) {}

    Tensor forward_logits(const Tensor& flat) {
        return head.forward(fc.forward(flat));
    }

    Tensor backward(const Tensor& dlogits) {
        return fc.backward(head.backward(dlogits));
    }

    void push_params(std::vector<ParamRef>& out) {
        push_dense(out, "fc1", fc);
        push_dense(out, "head", head);
    }
};

// Common baseline plumbing: subclasses produce a flat feature vector and
// route its gradient back; the classifier head and loss are shared.
class BaselineModel : public Model {
public:
    std::vector<ParamRef> params() final {
        std::vector<ParamRef> out;
        push_feature_params(out);
        clf_.push_params(out);
        return out;
    }

    Tensor predict_proba(const Tensor& segment) final {
        return softmax(forward_logits(segment));
    }

    real loss_value(const Tensor& segment, size_t label, real /*aux_weight*/) final {
        return softmax_xent(forward_logits(segment), label).loss;
    }

    LossBreakdown forward_backward(const Tensor& segment, size_t label,
                                   real /*aux_weight*/) final {
        SoftmaxXent sx = softmax_xent(forward_logits(segment), label);
        Tensor dflat = clf_.backward(softmax_xent_backward(sx.probs, label));
        input_grad_ = backward_features(dflat);
        LossBreakdown lb;
        lb.total = lb.main = sx.loss;
        return lb;
    }

    real nondiff_margin() const final {
        return std::min(feature_margin(), clf_.fc.kink_margin());
    }

protected:
    BaselineModel(ModelKind kind, const ZooConfig& cfg) : Model(kind, cfg) {}

    virtual Tensor forward_features(const Tensor& segment) = 0;
    virtual Tensor backward_features(const Tensor& dflat) = 0;
    virtual void push_feature_params(std::vector<ParamRef>& out) = 0;
    virtual real feature_margin() const = 0;

    ClassifierHead clf_;

private:
    Tensor forward_logits(const Tensor& segment) {
        require_segment(segment, cfg_, "model forward");
        return clf_.forward_logits(forward_features(segment));
    }
};

class SimpleCnnModel final : public BaselineModel {
public:
    SimpleCnnModel(const ZooConfig& cfg, SeededRng rng)
        : BaselineModel(ModelKind::SimpleCnn, cfg),
          cnn_(make_coarse_stack(cfg, rng.split("cnn"))) {
        clf_ = ClassifierHead(cnn_.flat_len, cfg, rng);
    }

protected:
    Tensor forward_features(const Tensor& seg) override {
        return flatten(cnn_.forward_map(seg.reshaped({1, cfg_.input_rows, cfg_.input_cols})));
    }

    Tensor backward_features(const Tensor& dflat) override {
        Tensor dimg = cnn_.backward_map(dflat.reshaped(cnn_.map_shape));
        return dimg.reshaped({cfg_.input_rows, cfg_.input_cols});
    }

    void push_feature_params(std::vector<ParamRef>& out) override {
        push_stack(out, "cnn", cnn_);
    }

    real feature_margin() const override { return cnn_.nondiff_margin(); }

private:
    ConvStack cnn_;
};

class SimpleGruModel final : public BaselineModel {
public:
    SimpleGruModel(const ZooConfig& cfg, SeededRng rng)
        : BaselineModel(ModelKind::SimpleGru, cfg),
          gru_(make_gru_stack(cfg.input_rows, cfg.input_cols, cfg, false, rng)) {
        clf_ = ClassifierHead(gru_.flat_len, cfg, rng);
    }

protected:
    Tensor forward_features(const Tensor& seg) override {
        return gru_.forward_flat(to_sequence(seg));
    }

    Tensor backward_features(const Tensor& dflat) override {
        return sequence_grad_to_segment(gru_.backward_flat(dflat), cfg_.input_rows,
                                        cfg_.input_cols);
    }

    void push_feature_params(std::vector<ParamRef>& out) override {
        push_gru(out, "gru1", gru_.l1);
        push_gru(out, "gru2", gru_.l2);
    }

    real feature_margin() const override {
        return std::numeric_limits<real>::infinity();
    }

private:
    GruStack gru_;
};

class CoarseFineCnnModel final : public BaselineModel {
public:
    CoarseFineCnnModel(const ZooConfig& cfg, SeededRng rng)
        : BaselineModel(ModelKind::CoarseFineCnn, cfg),
          coarse_(make_coarse_stack(cfg, rng.split("coarse"))),
          fine_(make_fine_stack(cfg, rng.split("fine"))) {
        clf_ = ClassifierHead(coarse_.flat_len + fine_.flat_len, cfg, rng);
    }

protected:
    Tensor forward_features(const Tensor& seg) override {
        Tensor img = seg.reshaped({1, cfg_.input_rows, cfg_.input_cols});
        return concat({flatten(coarse_.forward_map(img)), flatten(fine_.forward_map(img))});
    }

    Tensor backward_features(const Tensor& dflat) override {
        Tensor dc({coarse_.flat_len});
        Tensor df({fine_.flat_len});
        std::copy(dflat.data(), dflat.data() + dc.size(), dc.data());
        std::copy(dflat.data() + dc.size(), dflat.data() + dflat.size(), df.data());
        Tensor dimg = coarse_.backward_map(dc.reshaped(coarse_.map_shape));
        Tensor dimg2 = fine_.backward_map(df.reshaped(fine_.map_shape));
        return add(dimg, dimg2).reshaped({cfg_.input_rows, cfg_.input_cols});
    }

    void push_feature_params(std::vector<ParamRef>& out) override {
        push_stack(out, "coarse", coarse_);
        push_stack(out, "fine", fine_);
    }

    real feature_margin() const override {
        return std::min(coarse_.nondiff_margin(), fine_.nondiff_margin());
    }

private:
    ConvStack coarse_, fine_;
};

// CNN front end (fine-stack geometry) feeding a two-layer recurrent stack;
// the [c x 1 x W] feature map is read as a W-step sequence of c-dim vectors.
template <typename RnnLayer>
class CnnRnnModel final : public BaselineModel {
public:
    CnnRnnModel(ModelKind kind, const char* rnn_prefix, const ZooConfig& cfg, SeededRng rng)
        : BaselineModel(kind, cfg),
          rnn_prefix_(rnn_prefix),
          cnn_(make_fine_stack(cfg, rng.split("cnn"))) {
        size_t steps = cnn_.map_shape[2];
        size_t feat = cnn_.map_shape[0];
        if (cnn_.map_shape[1] != 1) {
            throw std::invalid_argument("cnn-rnn model: conv stack must collapse height to 1, got " +
                                        shape_to_string(cnn_.map_shape));
        }
        rnn1_ = RnnLayer(feat, cfg.gru_hidden, rng.split(rnn_prefix_ + "1"));
        rnn2_ = RnnLayer(cfg.gru_hidden, cfg.gru_hidden, rng.split(rnn_prefix_ + "2"));
        clf_ = ClassifierHead(steps * cfg.gru_hidden, cfg, rng);
    }

protected:
    Tensor forward_features(const Tensor& seg) override {
        Tensor map = cnn_.forward_map(seg.reshaped({1, cfg_.input_rows, cfg_.input_cols}));
        return flatten(rnn2_.forward(rnn1_.forward(map_to_sequence(map))));
    }

    Tensor backward_features(const Tensor& dflat) override {
        size_t steps = cnn_.map_shape[2];
        Tensor d2 = rnn2_.backward(dflat.reshaped({steps, cfg_.gru_hidden}));
        Tensor dseq = rnn1_.backward(d2);
        Tensor dimg = cnn_.backward_map(sequence_grad_to_map(dseq, cnn_.map_shape));
        return dimg.reshaped({cfg_.input_rows, cfg_.input_cols});
    }

    void push_feature_params(std::vector<ParamRef>& out) override {
        push_stack(out, "cnn", cnn_);
        if constexpr (std::is_same_v<RnnLayer, LstmLayer>) {
            push_lstm(out, rnn_prefix_ + "1", rnn1_);
            push_lstm(out, rnn_prefix_ + "2", rnn2_);
        } else {
            push_gru(out, rnn_prefix_ + "1", rnn1_);
            push_gru(out, rnn_prefix_ + "2", rnn2_);
        }
    }

    real feature_margin() const override { return cnn_.nondiff_margin(); }

private:
    std::string rnn_prefix_;
    ConvStack cnn_;
    RnnLayer rnn1_, rnn2_;
};

} // namespace

// ---------------------------------------------------------------------------
// EnsembleModel

EnsembleModel::EnsembleModel(const ZooConfig& cfg, SeededRng rng)
    : Model(ModelKind::EnsembleCfg, cfg),
      coarse_(make_coarse_stack(cfg, rng.split("coarse"))),
      fine_(make_fine_stack(cfg, rng.split("fine"))),
      temporal_(make_gru_stack(cfg.input_rows, cfg.input_cols, cfg, cfg.temporal_last_only,
                               rng.split("temporal"))),
      trunk_(concat_len(), cfg.dense_units, DenseAct::Relu, rng.split("trunk")),
      head_(cfg.dense_units, cfg.classes, DenseAct::None, rng.split("head")) {
    if (cfg.aux_heads) {
        aux_coarse_ = DenseLayer(coarse_.flat_len, cfg.classes, DenseAct::None,
                                 rng.split("aux_coarse"));
        aux_fine_ = DenseLayer(fine_.flat_len, cfg.classes, DenseAct::None,
                               rng.split("aux_fine"));
        aux_temporal_ = DenseLayer(temporal_.flat_len, cfg.classes, DenseAct::None,
                                   rng.split("aux_temporal"));
    }
}

std::vector<ParamRef> EnsembleModel::params() {
    std::vector<ParamRef> out;
    push_stack(out, "coarse", coarse_);
    push_stack(out, "fine", fine_);
    push_gru(out, "temporal.gru1", temporal_.l1);
    push_gru(out, "temporal.gru2", temporal_.l2);
    push_dense(out, "trunk", trunk_);
    push_dense(out, "head", head_);
    if (cfg_.aux_heads) {
        push_dense(out, "aux_coarse", aux_coarse_);
        push_dense(out, "aux_fine", aux_fine_);
        push_dense(out, "aux_temporal", aux_temporal_);
    }
    return out;
}

EnsembleModel::Forward EnsembleModel::run_forward(const Tensor& segment) {
    require_segment(segment, cfg_, "model forward");
    Forward fw;
    Tensor img = segment.reshaped({1, cfg_.input_rows, cfg_.input_cols});
    fw.flat_coarse = flatten(coarse_.forward_map(img));
    fw.flat_fine = flatten(fine_.forward_map(img));
    fw.flat_temporal = temporal_.forward_flat(to_sequence(segment));
    Tensor z = concat({fw.flat_coarse, fw.flat_fine, fw.flat_temporal});
    fw.logits_main = head_.forward(trunk_.forward(z));
    if (cfg_.aux_heads) {
        fw.logits_aux.push_back(aux_coarse_.forward(fw.flat_coarse));
        fw.logits_aux.push_back(aux_fine_.forward(fw.flat_fine));
        fw.logits_aux.push_back(aux_temporal_.forward(fw.flat_temporal));
    }
    return fw;
}

Tensor EnsembleModel::predict_proba(const Tensor& segment) {
    return softmax(run_forward(segment).logits_main);
}

EnsembleOutputs EnsembleModel::forward_outputs(const Tensor& segment) {
    Forward fw = run_forward(segment);
    EnsembleOutputs out;
    out.probs_main = softmax(fw.logits_main);
    for (const Tensor& logits : fw.logits_aux) {
        out.probs_aux.push_back(softmax(logits));
    }
    return out;
}

real EnsembleModel::loss_value(const Tensor& segment, size_t label, real aux_weight) {
    Forward fw = run_forward(segment);
    real total = softmax_xent(fw.logits_main, label).loss;
    for (const Tensor& logits : fw.logits_aux) {
        total += aux_weight * softmax_xent(logits, label).loss;
    }
    return total;
}

LossBreakdown EnsembleModel::forward_backward(const Tensor& segment, size_t label,
                                              real aux_weight) {
    Forward fw = run_forward(segment);
    LossBreakdown lb;

    SoftmaxXent main = softmax_xent(fw.logits_main, label);
    lb.main = main.loss;
    Tensor dz = trunk_.backward(head_.backward(softmax_xent_backward(main.probs, label)));

    Tensor dc({coarse_.flat_len});
    Tensor df({fine_.flat_len});
    Tensor dt({temporal_.flat_len});
    const real* pz = dz.data();
    std::copy(pz, pz + dc.size(), dc.data());
    std::copy(pz + dc.size(), pz + dc.size() + df.size(), df.data());
    std::copy(pz + dc.size() + df.size(), pz + dz.size(), dt.data());

    if (cfg_.aux_heads) {
        SoftmaxXent sc = softmax_xent(fw.logits_aux[0], label);
        SoftmaxXent sf = softmax_xent(fw.logits_aux[1], label);
        SoftmaxXent st = softmax_xent(fw.logits_aux[2], label);
        lb.aux_coarse = sc.loss;
        lb.aux_fine = sf.loss;
        lb.aux_temporal = st.loss;
        if (aux_weight != 0) {
            Tensor gc = scale(softmax_xent_backward(sc.probs, label), aux_weight);
            Tensor gf = scale(softmax_xent_backward(sf.probs, label), aux_weight);
            Tensor gt = scale(softmax_xent_backward(st.probs, label), aux_weight);
            dc = add(dc, aux_coarse_.backward(gc));
            df = add(df, aux_fine_.backward(gf));
            dt = add(dt, aux_temporal_.backward(gt));
        }
    }

    Tensor dimg = coarse_.backward_map(dc.reshaped(coarse_.map_shape));
    dimg = add(dimg, fine_.backward_map(df.reshaped(fine_.map_shape)));
    Tensor dseg = dimg.reshaped({cfg_.input_rows, cfg_.input_cols});
    Tensor dseq = temporal_.backward_flat(dt);
    input_grad_ =
        add(dseg, sequence_grad_to_segment(dseq, cfg_.input_rows, cfg_.input_cols));

    lb.total = lb.main + aux_weight * (lb.aux_coarse + lb.aux_fine + lb.aux_temporal);
    return lb;
}

real EnsembleModel::nondiff_margin() const {
    real m = std::min(coarse_.nondiff_margin(), fine_.nondiff_margin());
    return std::min(m, trunk_.kink_margin());
}

// ---------------------------------------------------------------------------

std::unique_ptr<Model> build_model(ModelKind kind, const ZooConfig& cfg, SeededRng rng) {
    switch (kind) {
    case ModelKind::SimpleCnn:
        return std::make_unique<SimpleCnnModel>(cfg, rng);
    case ModelKind::SimpleGru:
        return std::make_unique<SimpleGruModel>(cfg, rng);
    case ModelKind::CoarseFineCnn:
        return std::make_unique<CoarseFineCnnModel>(cfg, rng);
    case ModelKind::CnnLstm:
        return std::make_unique<CnnRnnModel<LstmLayer>>(ModelKind::CnnLstm, "lstm", cfg, rng);
    case ModelKind::CnnGru:
        return std::make_unique<CnnRnnModel<GruLayer>>(ModelKind::CnnGru, "gru", cfg, rng);
    case ModelKind::EnsembleCfg:
        return std::make_unique<EnsembleModel>(cfg, rng);
    }
    throw std::invalid_argument("build_model: unknown kind");
}

} // namespace fallnet
