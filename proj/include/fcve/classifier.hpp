#ifndef FCVE_CLASSIFIER_HPP
#define FCVE_CLASSIFIER_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fcve/dataset.hpp"
#include "fcve/errors.hpp"
#include "fcve/filters.hpp"
#include "fcve/nn.hpp"
#include "fcve/tensor.hpp"

namespace fcve {

// The model under explanation: conv stack -> last conv layer of n filters ->
// global average pooling -> dense softmax head. The last activation is a
// rectifier, so pooled features are always >= 0.

struct Prediction {
    std::vector<float> logits;
    std::vector<float> probabilities;
    int class_index = -1;
};

struct EpochMetrics {
    double train_loss = 0, train_acc = 0;
    double val_loss = 0, val_acc = 0;
};

template <typename T>
struct ClassifierModelT {
    int n = 64;          // last-conv filter count
    int class_count = 10;
    int ch1 = 32, ch2 = 32, ch3 = 64;
    int in_h = 28, in_w = 28;           // input plane, pooled twice: /4
    ParamPack<T> params;
    int64_t w1 = 0, b1 = 0, w2 = 0, b2 = 0, w3 = 0, b3 = 0, w4 = 0, b4 = 0,
            wh = 0, bh = 0;
    bool trained = false;
    std::vector<EpochMetrics> history;

    int conv_depth() const { return 4; }
    int fm_h() const { return in_h / 4; }
    int fm_w() const { return in_w / 4; }

    const T* p(int64_t off) const { return params.theta.data() + off; }
    T* p(int64_t off) { return params.theta.data() + off; }
};

using ClassifierModel = ClassifierModelT<float>;

template <typename T>
ClassifierModelT<T> make_classifier(int n, int class_count, uint64_t seed,
                                    int in_h = 28, int in_w = 28) {
    if (in_h % 4 != 0 || in_w % 4 != 0)
        throw ShapeMismatch("classifier: input extent must be divisible by 4");
    ClassifierModelT<T> m;
    m.n = n;
    m.class_count = class_count;
    m.in_h = in_h;
    m.in_w = in_w;
    auto& pk = m.params;
    m.w1 = pk.add("classifier.conv1.w", {3, 3, 1, m.ch1});
    m.b1 = pk.add("classifier.conv1.b", {m.ch1});
    m.w2 = pk.add("classifier.conv2.w", {3, 3, m.ch1, m.ch2});
    m.b2 = pk.add("classifier.conv2.b", {m.ch2});
    m.w3 = pk.add("classifier.conv3.w", {3, 3, m.ch2, m.ch3});
    m.b3 = pk.add("classifier.conv3.b", {m.ch3});
    m.w4 = pk.add("classifier.conv4.w", {3, 3, m.ch3, n});
    m.b4 = pk.add("classifier.conv4.b", {n});
    m.wh = pk.add("classifier.head.w", {n, class_count});
    m.bh = pk.add("classifier.head.b", {class_count});
    std::mt19937_64 rng(mix_seed(seed, 0xC1A5));
    he_normal_init(m.p(m.w1), 9 * 1 * m.ch1, 9 * 1, rng);
    he_normal_init(m.p(m.w2), 9 * m.ch1 * m.ch2, 9 * m.ch1, rng);
    he_normal_init(m.p(m.w3), 9 * m.ch2 * m.ch3, 9 * m.ch2, rng);
    he_normal_init(m.p(m.w4), 9 * m.ch3 * n, 9 * m.ch3, rng);
    he_normal_init(m.p(m.wh), static_cast<int64_t>(n) * class_count, n, rng);
    return m;
}

// ---------------------------------------------------------------------------
// Chunked forward/backward over the column-block layout (see nn.hpp).
// ---------------------------------------------------------------------------

template <typename T>
struct ClassifierWork {
    MatX<T> x0, a1, p1, a2, p2, a3, a4;
    std::vector<uint8_t> m1, m2;
    MatX<T> g, logits, probs;
    MatX<T> cols1, cols2, cols3, cols4;
    MatX<T> d_a4, d_a3, d_p2, d_a2, d_p1, d_a1, dcols;
    MatX<T> dg, dlogits;
    int cap = 0;

    void resize(const ClassifierModelT<T>& m, int b) {
        if (b <= cap) return;
        cap = b;
        const int hw0 = m.in_h * m.in_w, hw1 = hw0 / 4, hw2 = hw0 / 16;
        x0.resize(1, static_cast<int64_t>(b) * hw0);
        a1.resize(m.ch1, static_cast<int64_t>(b) * hw0);
        p1.resize(m.ch1, static_cast<int64_t>(b) * hw1);
        a2.resize(m.ch2, static_cast<int64_t>(b) * hw1);
        p2.resize(m.ch2, static_cast<int64_t>(b) * hw2);
        a3.resize(m.ch3, static_cast<int64_t>(b) * hw2);
        a4.resize(m.n, static_cast<int64_t>(b) * hw2);
        m1.resize(static_cast<size_t>(m.ch1) * b * hw1);
        m2.resize(static_cast<size_t>(m.ch2) * b * hw2);
        g.resize(m.n, b);
        logits.resize(m.class_count, b);
        probs.resize(m.class_count, b);
        cols1.resize(9, static_cast<int64_t>(b) * hw0);
        cols2.resize(9 * m.ch1, static_cast<int64_t>(b) * hw1);
        cols3.resize(9 * m.ch2, static_cast<int64_t>(b) * hw2);
        cols4.resize(9 * m.ch3, static_cast<int64_t>(b) * hw2);
        d_a4.resize(m.n, static_cast<int64_t>(b) * hw2);
        d_a3.resize(m.ch3, static_cast<int64_t>(b) * hw2);
        d_p2.resize(m.ch2, static_cast<int64_t>(b) * hw2);
        d_a2.resize(m.ch2, static_cast<int64_t>(b) * hw1);
        d_p1.resize(m.ch1, static_cast<int64_t>(b) * hw1);
        d_a1.resize(m.ch1, static_cast<int64_t>(b) * hw0);
        dcols.resize(9 * m.ch3, static_cast<int64_t>(b) * hw1); // max dcols extent
        dg.resize(m.n, b);
        dlogits.resize(m.class_count, b);
    }
};

template <typename T>
void conv3x3_forward(const T* w, const T* bias, const MatX<T>& in, int c_in,
                     int c_out, int b, int h, int wd, MatX<T>& cols, MatX<T>& out) {
    im2col3x3(in.data(), c_in, b, h, wd, cols.data());
    const int64_t ncols = static_cast<int64_t>(b) * h * wd;
    MapConstMat<T> wm(w, c_out, 9 * c_in);
    out.leftCols(ncols).noalias() = wm * cols.leftCols(ncols);
    out.leftCols(ncols).colwise() += Eigen::Map<const VecX<T>>(bias, c_out);
}

// dout is consumed in place (relu mask already applied by caller).
// din (optional) receives the input gradient; dw/db accumulate.
template <typename T>
void conv3x3_backward(const T* w, const MatX<T>& cols, const MatX<T>& dout,
                      int c_in, int c_out, int b, int h, int wd, T* dw, T* db,
                      MatX<T>& dcols, MatX<T>* din) {
    const int64_t ncols = static_cast<int64_t>(b) * h * wd;
    MapMat<T> dwm(dw, c_out, 9 * c_in);
    dwm.noalias() += dout.leftCols(ncols) * cols.leftCols(ncols).transpose();
    Eigen::Map<VecX<T>>(db, c_out) += dout.leftCols(ncols).rowwise().sum();
    if (din) {
        MapConstMat<T> wm(w, c_out, 9 * c_in);
        dcols.topLeftCorner(9 * c_in, ncols).noalias() =
            wm.transpose() * dout.leftCols(ncols);
        din->leftCols(ncols).setZero();
        col2im3x3_add(dcols.data(), c_in, b, h, wd, din->data());
    }
}

// Gathers images (or arbitrary feature planes) into the x0 column block.
template <typename T, typename U>
void gather_images(const std::vector<TensorT<U>>& images, const int* idx, int b,
                   MatX<T>& x0) {
    const int64_t px = images[idx[0]].size();
    for (int i = 0; i < b; ++i) {
        const auto& img = images[idx[i]];
        for (int64_t j = 0; j < px; ++j)
            x0.data()[i * px + j] = static_cast<T>(img.v[j]);
    }
}

// Runs the conv stack + head on ws.x0 (first b planes must be filled).
template <typename T>
void classifier_forward_chunk(const ClassifierModelT<T>& m, int b,
                              ClassifierWork<T>& ws) {
    const int h0 = m.in_h, w0 = m.in_w, h1 = h0 / 2, w1 = w0 / 2, h2 = h0 / 4,
              w2 = w0 / 4;
    conv3x3_forward(m.p(m.w1), m.p(m.b1), ws.x0, 1, m.ch1, b, h0, w0, ws.cols1, ws.a1);
    relu_inplace(ws.a1.data(), static_cast<int64_t>(m.ch1) * b * h0 * w0);
    maxpool2x2(ws.a1.data(), m.ch1, b, h0, w0, ws.p1.data(), ws.m1.data());
    conv3x3_forward(m.p(m.w2), m.p(m.b2), ws.p1, m.ch1, m.ch2, b, h1, w1, ws.cols2, ws.a2);
    relu_inplace(ws.a2.data(), static_cast<int64_t>(m.ch2) * b * h1 * w1);
    maxpool2x2(ws.a2.data(), m.ch2, b, h1, w1, ws.p2.data(), ws.m2.data());
    conv3x3_forward(m.p(m.w3), m.p(m.b3), ws.p2, m.ch2, m.ch3, b, h2, w2, ws.cols3, ws.a3);
    relu_inplace(ws.a3.data(), static_cast<int64_t>(m.ch3) * b * h2 * w2);
    conv3x3_forward(m.p(m.w4), m.p(m.b4), ws.a3, m.ch3, m.n, b, h2, w2, ws.cols4, ws.a4);
    relu_inplace(ws.a4.data(), static_cast<int64_t>(m.n) * b * h2 * w2);
    gap_forward(ws.a4.data(), m.n, b, h2 * w2, ws.g.data());
    MapConstMat<T> whm(m.p(m.wh), m.class_count, m.n);
    ws.logits.leftCols(b).noalias() = whm * ws.g.leftCols(b);
    ws.logits.leftCols(b).colwise() +=
        Eigen::Map<const VecX<T>>(m.p(m.bh), m.class_count);
}

// Cross-entropy backward through the whole stack; returns summed CE.
// grad must be theta-sized and zeroed by the caller per accumulation scope.
template <typename T>
double classifier_backward_chunk(const ClassifierModelT<T>& m, const int* labels,
                                 int b, ClassifierWork<T>& ws, std::vector<T>& grad) {
    const int h0 = m.in_h, w0 = m.in_w, h1 = h0 / 2, w1 = w0 / 2, h2 = h0 / 4,
              w2 = w0 / 4;
    double loss = softmax_ce(ws.logits.data(), labels, m.class_count, b,
                             ws.probs.data(), ws.dlogits.data());
    T* gr = grad.data();
    // head
    MapMat<T> dwh(gr + m.wh, m.class_count, m.n);
    dwh.noalias() += ws.dlogits.leftCols(b) * ws.g.leftCols(b).transpose();
    Eigen::Map<VecX<T>>(gr + m.bh, m.class_count) +=
        ws.dlogits.leftCols(b).rowwise().sum();
    MapConstMat<T> whm(m.p(m.wh), m.class_count, m.n);
    ws.dg.leftCols(b).noalias() = whm.transpose() * ws.dlogits.leftCols(b);
    // gap -> conv4
    gap_backward(ws.dg.data(), m.n, b, h2 * w2, ws.d_a4.data());
    relu_backward_inplace(ws.a4.data(), ws.d_a4.data(),
                          static_cast<int64_t>(m.n) * b * h2 * w2);
    conv3x3_backward(m.p(m.w4), ws.cols4, ws.d_a4, m.ch3, m.n, b, h2, w2,
                     gr + m.w4, gr + m.b4, ws.dcols, &ws.d_a3);
    relu_backward_inplace(ws.a3.data(), ws.d_a3.data(),
                          static_cast<int64_t>(m.ch3) * b * h2 * w2);
    conv3x3_backward(m.p(m.w3), ws.cols3, ws.d_a3, m.ch2, m.ch3, b, h2, w2,
                     gr + m.w3, gr + m.b3, ws.dcols, &ws.d_p2);
    ws.d_a2.leftCols(static_cast<int64_t>(b) * h1 * w1).setZero();
    maxpool2x2_backward(ws.d_p2.data(), ws.m2.data(), m.ch2, b, h1, w1,
                        ws.d_a2.data());
    relu_backward_inplace(ws.a2.data(), ws.d_a2.data(),
                          static_cast<int64_t>(m.ch2) * b * h1 * w1);
    conv3x3_backward(m.p(m.w2), ws.cols2, ws.d_a2, m.ch1, m.ch2, b, h1, w1,
                     gr + m.w2, gr + m.b2, ws.dcols, &ws.d_p1);
    ws.d_a1.leftCols(static_cast<int64_t>(b) * h0 * w0).setZero();
    maxpool2x2_backward(ws.d_p1.data(), ws.m1.data(), m.ch1, b, h0, w0,
                        ws.d_a1.data());
    relu_backward_inplace(ws.a1.data(), ws.d_a1.data(),
                          static_cast<int64_t>(m.ch1) * b * h0 * w0);
    conv3x3_backward(m.p(m.w1), ws.cols1, ws.d_a1, 1, m.ch1, b, h0, w0,
                     gr + m.w1, gr + m.b1, ws.dcols, static_cast<MatX<T>*>(nullptr));
    return loss;
}

// ---------------------------------------------------------------------------
// Public single-image / vector-level operations
// ---------------------------------------------------------------------------

struct ForwardResult {
    Tensor feature_map;               // {n, h', w'}, values >= 0
    std::vector<float> pooled;        // length n, channel means of feature_map
    Prediction prediction;
};

// column-block [C x HW] (single plane) <-> {C,H,W} tensor
template <typename T>
TensorT<T> cols_to_fm(const MatX<T>& act, int c, int h, int w) {
    TensorT<T> fm({c, h, w});
    for (int j = 0; j < h * w; ++j)
        for (int ci = 0; ci < c; ++ci)
            fm.v[static_cast<size_t>(ci) * h * w + j] = act.data()[j * c + ci];
    return fm;
}

template <typename T>
void fm_to_cols(const TensorT<T>& fm, MatX<T>& act) {
    const int c = fm.dims[0], hw = fm.dims[1] * fm.dims[2];
    for (int j = 0; j < hw; ++j)
        for (int ci = 0; ci < c; ++ci)
            act.data()[j * c + ci] = fm.v[static_cast<size_t>(ci) * hw + j];
}

template <typename T>
Prediction head_prediction(const ClassifierModelT<T>& m, const std::vector<T>& feat) {
    Prediction pred;
    pred.logits.resize(m.class_count);
    pred.probabilities.resize(m.class_count);
    MapConstMat<T> whm(m.p(m.wh), m.class_count, m.n);
    VecX<T> lg = whm * Eigen::Map<const VecX<T>>(feat.data(), m.n) +
                 Eigen::Map<const VecX<T>>(m.p(m.bh), m.class_count);
    std::vector<T> probs(m.class_count);
    softmax_vec(lg.data(), m.class_count, probs.data());
    int arg = 0;
    for (int i = 0; i < m.class_count; ++i) {
        pred.logits[i] = static_cast<float>(lg[i]);
        pred.probabilities[i] = static_cast<float>(probs[i]);
        if (probs[i] > probs[arg]) arg = i;
    }
    pred.class_index = arg;
    return pred;
}

ForwardResult forward(const ClassifierModel& model, const Image& image);

Prediction classify_modified(const ClassifierModel& model,
                             const std::vector<float>& pooled,
                             const McMask* mc, const MiDelta* mi);

Tensor modify_feature_map(const Tensor& fm, const McMask* mc, const MiDelta* mi);

struct TrainOptions {
    int epochs = 10;
    float lr = 1e-3f;
    int batch_size = 128;
    uint64_t seed = 7;
    int threads = 0; // 0 = hardware
};

ClassifierModel train_classifier(const LabeledDataset& train,
                                 const LabeledDataset* val, int n,
                                 const TrainOptions& opts);

struct EvalResult {
    double accuracy = 0;
    std::vector<double> per_class_recall;
};

EvalResult evaluate(const ClassifierModel& model, const LabeledDataset& dataset,
                    const std::vector<int>& disabled_filters = {}, int threads = 0);

// Pooled features for every example, as a [n x count] matrix (one column per
// example). Shared cache for CFE training, metrics and ablations.
MatX<float> pooled_features(const ClassifierModel& model,
                            const LabeledDataset& dataset, int threads = 0);
MatX<float> pooled_features_images(const ClassifierModel& model,
                                   const std::vector<Image>& images,
                                   int threads = 0);

uint64_t param_checksum(const ClassifierModel& model);

// Mean CE loss (and optionally its analytic gradient) on a micro-batch; used
// by training tests and finite-difference checks, in float or double.
template <typename T>
double classifier_loss(const ClassifierModelT<T>& m,
                       const std::vector<TensorT<T>>& images,
                       const std::vector<int>& labels,
                       std::vector<T>* grad = nullptr) {
    const int b = static_cast<int>(images.size());
    ClassifierWork<T> ws;
    ws.resize(m, b);
    std::vector<int> idx(b);
    for (int i = 0; i < b; ++i) idx[i] = i;
    gather_images(images, idx.data(), b, ws.x0);
    classifier_forward_chunk(m, b, ws);
    if (!grad) {
        std::vector<T> probs(static_cast<size_t>(m.class_count) * b);
        return softmax_ce(ws.logits.data(), labels.data(), m.class_count, b,
                          probs.data(), static_cast<T*>(nullptr)) / b;
    }
    grad->assign(m.params.theta.size(), T(0));
    double loss = classifier_backward_chunk(m, labels.data(), b, ws, *grad);
    for (auto& gv : *grad) gv /= static_cast<T>(b);
    return loss / b;
}

template <typename T, typename U>
ClassifierModelT<U> classifier_cast(const ClassifierModelT<T>& m) {
    ClassifierModelT<U> out;
    out.n = m.n; out.class_count = m.class_count;
    out.ch1 = m.ch1; out.ch2 = m.ch2; out.ch3 = m.ch3;
    out.in_h = m.in_h; out.in_w = m.in_w;
    out.w1 = m.w1; out.b1 = m.b1; out.w2 = m.w2; out.b2 = m.b2;
    out.w3 = m.w3; out.b3 = m.b3; out.w4 = m.w4; out.b4 = m.b4;
    out.wh = m.wh; out.bh = m.bh;
    out.trained = m.trained;
    out.params.infos = m.params.infos;
    out.params.theta.resize(m.params.theta.size());
    for (size_t i = 0; i < m.params.theta.size(); ++i)
        out.params.theta[i] = static_cast<U>(m.params.theta[i]);
    return out;
}

} // namespace fcve

#endif
