#ifndef FCVE_DECODER_HPP
#define FCVE_DECODER_HPP

#include <cstdint>
#include <vector>

#include "fcve/cfe.hpp"
#include "fcve/classifier.hpp"

namespace fcve {

// Asymmetric decoder: reconstructs input images from last-conv feature maps.
// Three deconvolution stages (the first two preceded by 2x nearest-neighbor
// upsampling) plus a sigmoid-bounded output convolution; strictly shallower
// than the encoder's four conv layers.

template <typename T>
struct DecoderModelT {
    int n = 64;
    int fm_h = 7, fm_w = 7;
    int c1 = 32, c2 = 16, c3 = 16;
    ParamPack<T> params;
    int64_t wd1 = 0, bd1 = 0, wd2 = 0, bd2 = 0, wd3 = 0, bd3 = 0, wo = 0, bo = 0;
    bool trained = false;
    std::vector<double> train_mae_history;

    int depth() const { return 3; }            // deconvolution stages
    int out_h() const { return fm_h * 4; }
    int out_w() const { return fm_w * 4; }
    const T* p(int64_t off) const { return params.theta.data() + off; }
    T* p(int64_t off) { return params.theta.data() + off; }
};

using DecoderModel = DecoderModelT<float>;

template <typename T>
DecoderModelT<T> make_decoder(int n, int encoder_conv_depth, uint64_t seed,
                              int fm_h = 7, int fm_w = 7) {
    DecoderModelT<T> m;
    m.n = n;
    m.fm_h = fm_h;
    m.fm_w = fm_w;
    if (m.depth() >= encoder_conv_depth)
        throw ShapeMismatch("decoder: depth must stay below encoder conv depth");
    auto& pk = m.params;
    m.wd1 = pk.add("decoder.deconv1.w", {3, 3, n, m.c1});
    m.bd1 = pk.add("decoder.deconv1.b", {m.c1});
    m.wd2 = pk.add("decoder.deconv2.w", {3, 3, m.c1, m.c2});
    m.bd2 = pk.add("decoder.deconv2.b", {m.c2});
    m.wd3 = pk.add("decoder.deconv3.w", {3, 3, m.c2, m.c3});
    m.bd3 = pk.add("decoder.deconv3.b", {m.c3});
    m.wo = pk.add("decoder.out.w", {3, 3, m.c3, 1});
    m.bo = pk.add("decoder.out.b", {1});
    std::mt19937_64 rng(mix_seed(seed, 0xDEC0));
    he_normal_init(m.p(m.wd1), 9 * n * m.c1, 9 * n, rng);
    he_normal_init(m.p(m.wd2), 9 * m.c1 * m.c2, 9 * m.c1, rng);
    he_normal_init(m.p(m.wd3), 9 * m.c2 * m.c3, 9 * m.c2, rng);
    he_normal_init(m.p(m.wo), 9 * m.c3, 9 * m.c3, rng);
    return m;
}

template <typename T>
struct DecoderWork {
    MatX<T> u1, d1, u2, d2, d3, y;
    MatX<T> cols1, cols2, cols3, colso;
    MatX<T> dy, dd3, dd2, du2, dd1, du1, df, dcols;
    int cap = 0;

    void resize(const DecoderModelT<T>& m, int b) {
        if (b <= cap) return;
        cap = b;
        const int hw1 = m.fm_h * 2 * m.fm_w * 2, hw2 = hw1 * 4;
        u1.resize(m.n, static_cast<int64_t>(b) * hw1);
        d1.resize(m.c1, static_cast<int64_t>(b) * hw1);
        u2.resize(m.c1, static_cast<int64_t>(b) * hw2);
        d2.resize(m.c2, static_cast<int64_t>(b) * hw2);
        d3.resize(m.c3, static_cast<int64_t>(b) * hw2);
        y.resize(1, static_cast<int64_t>(b) * hw2);
        cols1.resize(9 * m.n, static_cast<int64_t>(b) * hw1);
        cols2.resize(9 * m.c1, static_cast<int64_t>(b) * hw2);
        cols3.resize(9 * m.c2, static_cast<int64_t>(b) * hw2);
        colso.resize(9 * m.c3, static_cast<int64_t>(b) * hw2);
        dy.resize(1, static_cast<int64_t>(b) * hw2);
        dd3.resize(m.c3, static_cast<int64_t>(b) * hw2);
        dd2.resize(m.c2, static_cast<int64_t>(b) * hw2);
        du2.resize(m.c1, static_cast<int64_t>(b) * hw2);
        dd1.resize(m.c1, static_cast<int64_t>(b) * hw1);
        du1.resize(m.n, static_cast<int64_t>(b) * hw1);
        df.resize(m.n, static_cast<int64_t>(b) * m.fm_h * m.fm_w);
        dcols.resize(9 * std::max({m.n, m.c1, m.c2, m.c3}),
                     static_cast<int64_t>(b) * hw2);
    }
};

// f: [n x b*fm_h*fm_w] feature columns; leaves the raster in ws.y
template <typename T>
void decoder_forward_chunk(const DecoderModelT<T>& m, const MatX<T>& f, int b,
                           DecoderWork<T>& ws) {
    const int h0 = m.fm_h, w0 = m.fm_w, h1 = 2 * h0, w1 = 2 * w0, h2 = 4 * h0,
              w2 = 4 * w0;
    upsample2x(f.data(), m.n, b, h0, w0, ws.u1.data());
    conv3x3_forward(m.p(m.wd1), m.p(m.bd1), ws.u1, m.n, m.c1, b, h1, w1, ws.cols1, ws.d1);
    relu_inplace(ws.d1.data(), static_cast<int64_t>(m.c1) * b * h1 * w1);
    upsample2x(ws.d1.data(), m.c1, b, h1, w1, ws.u2.data());
    conv3x3_forward(m.p(m.wd2), m.p(m.bd2), ws.u2, m.c1, m.c2, b, h2, w2, ws.cols2, ws.d2);
    relu_inplace(ws.d2.data(), static_cast<int64_t>(m.c2) * b * h2 * w2);
    conv3x3_forward(m.p(m.wd3), m.p(m.bd3), ws.d2, m.c2, m.c3, b, h2, w2, ws.cols3, ws.d3);
    relu_inplace(ws.d3.data(), static_cast<int64_t>(m.c3) * b * h2 * w2);
    conv3x3_forward(m.p(m.wo), m.p(m.bo), ws.d3, m.c3, 1, b, h2, w2, ws.colso, ws.y);
    sigmoid_inplace(ws.y.data(), static_cast<int64_t>(b) * h2 * w2);
}

// Mean-absolute-error against target rasters x [1 x b*HW]; returns the summed
// absolute error (caller divides by pixel count). grad accumulates raw sums.
template <typename T>
double decoder_backward_chunk(const DecoderModelT<T>& m, const MatX<T>& x, int b,
                              DecoderWork<T>& ws, std::vector<T>& grad) {
    const int h0 = m.fm_h, w0 = m.fm_w, h1 = 2 * h0, w1 = 2 * w0, h2 = 4 * h0,
              w2 = 4 * w0;
    const int64_t px = static_cast<int64_t>(b) * h2 * w2;
    double abs_sum = 0;
    for (int64_t i = 0; i < px; ++i) {
        const T r = ws.y.data()[i] - x.data()[i];
        abs_sum += std::abs(static_cast<double>(r));
        // d|y-x|/dy, then through sigmoid: y*(1-y)
        const T s = r > T(0) ? T(1) : (r < T(0) ? T(-1) : T(0));
        ws.dy.data()[i] = s * ws.y.data()[i] * (T(1) - ws.y.data()[i]);
    }
    T* gr = grad.data();
    conv3x3_backward(m.p(m.wo), ws.colso, ws.dy, m.c3, 1, b, h2, w2, gr + m.wo,
                     gr + m.bo, ws.dcols, &ws.dd3);
    relu_backward_inplace(ws.d3.data(), ws.dd3.data(),
                          static_cast<int64_t>(m.c3) * b * h2 * w2);
    conv3x3_backward(m.p(m.wd3), ws.cols3, ws.dd3, m.c2, m.c3, b, h2, w2,
                     gr + m.wd3, gr + m.bd3, ws.dcols, &ws.dd2);
    relu_backward_inplace(ws.d2.data(), ws.dd2.data(),
                          static_cast<int64_t>(m.c2) * b * h2 * w2);
    conv3x3_backward(m.p(m.wd2), ws.cols2, ws.dd2, m.c1, m.c2, b, h2, w2,
                     gr + m.wd2, gr + m.bd2, ws.dcols, &ws.du2);
    upsample2x_backward(ws.du2.data(), m.c1, b, h1, w1, ws.dd1.data());
    relu_backward_inplace(ws.d1.data(), ws.dd1.data(),
                          static_cast<int64_t>(m.c1) * b * h1 * w1);
    conv3x3_backward(m.p(m.wd1), ws.cols1, ws.dd1, m.n, m.c1, b, h1, w1,
                     gr + m.wd1, gr + m.bd1, ws.dcols, static_cast<MatX<T>*>(nullptr));
    return abs_sum;
}

// Per-pixel-mean MAE loss on a micro-batch, with optional analytic gradient;
// the finite-difference harness drives this in double precision.
template <typename T>
double decoder_loss(const DecoderModelT<T>& m, const MatX<T>& f,
                    const MatX<T>& x, int b, std::vector<T>* grad = nullptr) {
    DecoderWork<T> ws;
    ws.resize(m, b);
    decoder_forward_chunk(m, f, b, ws);
    const double px = static_cast<double>(b) * m.out_h() * m.out_w();
    if (!grad) {
        double abs_sum = 0;
        for (int64_t i = 0; i < static_cast<int64_t>(px); ++i)
            abs_sum += std::abs(static_cast<double>(ws.y.data()[i] - x.data()[i]));
        return abs_sum / px;
    }
    grad->assign(m.params.theta.size(), T(0));
    double abs_sum = decoder_backward_chunk(m, x, b, ws, *grad);
    for (auto& gv : *grad) gv /= static_cast<T>(px);
    return abs_sum / px;
}

Image decode(const DecoderModel& decoder, const Tensor& feature_map);

struct DecoderTrainOptions {
    int epochs = 5;
    float lr = 1e-3f;
    int batch_size = 128;
    uint64_t seed = 7;
    int threads = 0;
};

DecoderModel train_decoder(DecoderModel decoder, const ClassifierModel& classifier,
                           const LabeledDataset& dataset,
                           const DecoderTrainOptions& opts);

double reconstruction_mae(const ClassifierModel& classifier,
                          const DecoderModel& decoder,
                          const LabeledDataset& dataset, int threads = 0);

// ---------------------------------------------------------------------------
// Counterfactual episodes
// ---------------------------------------------------------------------------

enum class CfMode {
    combined, // decode (fm * mc + mi): mask and delta applied together
    mi_only   // decode (fm + mi)
};

struct Explanation {
    Image source;
    int inferred = -1;
    int target = -1;
    McMask mc;
    MiDelta mi;
    Image reconstruction;  // unmodified decode
    Image contrastive;     // MC-only decode
    Image counterfactual;  // MI-applied decode (per CfMode)
    bool flipped = false;  // MI-modified prediction equals the target
    double proximity = 0;  // per-pixel L1 between source and counterfactual
};

Explanation explain_with_filters(const ClassifierModel& classifier,
                                 const DecoderModel& decoder, const Image& image,
                                 int target, const McMask& mc, const MiDelta& mi,
                                 CfMode mode = CfMode::combined);

Explanation generate_counterfactual(const ClassifierModel& classifier,
                                    const CfeModel& cfe, const DecoderModel& decoder,
                                    const Image& image, int target,
                                    CfMode mode = CfMode::combined);

std::vector<Explanation>
generate_counterfactuals(const ClassifierModel& classifier, const CfeModel& cfe,
                         const DecoderModel& decoder,
                         const std::vector<Image>& sources,
                         const std::vector<int>& targets,
                         CfMode mode = CfMode::combined, int threads = 0);

uint64_t param_checksum(const DecoderModel& model);

template <typename T, typename U>
DecoderModelT<U> decoder_cast(const DecoderModelT<T>& m) {
    DecoderModelT<U> out;
    out.n = m.n; out.fm_h = m.fm_h; out.fm_w = m.fm_w;
    out.c1 = m.c1; out.c2 = m.c2; out.c3 = m.c3;
    out.wd1 = m.wd1; out.bd1 = m.bd1; out.wd2 = m.wd2; out.bd2 = m.bd2;
    out.wd3 = m.wd3; out.bd3 = m.bd3; out.wo = m.wo; out.bo = m.bo;
    out.trained = m.trained;
    out.params.infos = m.params.infos;
    out.params.theta.resize(m.params.theta.size());
    for (size_t i = 0; i < m.params.theta.size(); ++i)
        out.params.theta[i] = static_cast<U>(m.params.theta[i]);
    return out;
}

} // namespace fcve

#endif
