#include "fcve/decoder.hpp"

#include <algorithm>
#include <cmath>

#include "fcve/util.hpp"

namespace fcve {

static constexpr int kChunk = 32;

Image decode(const DecoderModel& decoder, const Tensor& feature_map) {
    if (feature_map.dims !=
        std::vector<int>{decoder.n, decoder.fm_h, decoder.fm_w})
        throw ShapeMismatch("decode: feature map shape does not match decoder");
    DecoderWork<float> ws;
    ws.resize(decoder, 1);
    MatX<float> f(decoder.n, decoder.fm_h * decoder.fm_w);
    fm_to_cols(feature_map, f);
    decoder_forward_chunk(decoder, f, 1, ws);
    Image out({1, decoder.out_h(), decoder.out_w()});
    for (int64_t i = 0; i < out.size(); ++i)
        out.v[i] = std::clamp(ws.y.data()[i], 0.0f, 1.0f);
    return out;
}

uint64_t param_checksum(const DecoderModel& model) {
    return fnv1a_vec(model.params.theta);
}

// Last-conv feature columns for the whole dataset, cached once per training
// run; the classifier is frozen so this is loop-invariant.
static MatX<float> feature_cache(const ClassifierModel& clf,
                                 const LabeledDataset& ds, int threads) {
    const int count = static_cast<int>(ds.size());
    const int hw = clf.fm_h() * clf.fm_w();
    MatX<float> cache(clf.n, static_cast<int64_t>(count) * hw);
    const int nthreads = resolve_threads(threads);
    const int nchunks = (count + kChunk - 1) / kChunk;
    std::vector<ClassifierWork<float>> work(nthreads);
    parallel_chunks(nchunks, nthreads, [&](int ci, int wi) {
        const int coff = ci * kChunk;
        const int cb = std::min(kChunk, count - coff);
        auto& ws = work[wi];
        ws.resize(clf, kChunk);
        std::vector<int> idx(cb);
        for (int i = 0; i < cb; ++i) idx[i] = coff + i;
        gather_images(ds.images, idx.data(), cb, ws.x0);
        classifier_forward_chunk(clf, cb, ws);
        cache.middleCols(static_cast<int64_t>(coff) * hw, static_cast<int64_t>(cb) * hw) =
            ws.a4.leftCols(static_cast<int64_t>(cb) * hw);
    });
    return cache;
}

DecoderModel train_decoder(DecoderModel decoder, const ClassifierModel& classifier,
                           const LabeledDataset& dataset,
                           const DecoderTrainOptions& opts) {
    if (dataset.split != Split::train)
        throw BadValue("train_decoder: dataset split must be train");
    if (dataset.empty()) throw EmptyDataset("train_decoder: empty dataset");
    if (opts.epochs < 1 || !(opts.lr > 0))
        throw BadValue("train_decoder: epochs >= 1 and lr > 0 required");
    if (classifier.n != decoder.n)
        throw ShapeMismatch("train_decoder: filter count mismatch");
    const uint64_t frozen = param_checksum(classifier);

    const int threads = resolve_threads(opts.threads);
    const int hw_f = decoder.fm_h * decoder.fm_w;
    const int hw_y = decoder.out_h() * decoder.out_w();
    MatX<float> features = feature_cache(classifier, dataset, threads);

    const int max_chunks = (opts.batch_size + kChunk - 1) / kChunk;
    std::vector<DecoderWork<float>> work(threads);
    std::vector<MatX<float>> fbuf(threads), xbuf(threads);
    for (int i = 0; i < threads; ++i) {
        fbuf[i].resize(decoder.n, static_cast<int64_t>(kChunk) * hw_f);
        xbuf[i].resize(1, static_cast<int64_t>(kChunk) * hw_y);
    }
    std::vector<std::vector<float>> chunk_grad(max_chunks);
    std::vector<double> chunk_abs(max_chunks);
    std::vector<float> grad(decoder.params.theta.size());
    Adam<float> adam(static_cast<int64_t>(decoder.params.theta.size()), opts.lr);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        BatchPlan plan = make_batches(dataset, opts.batch_size,
                                      mix_seed(opts.seed, 0xD000 + epoch), true);
        double epoch_abs = 0;
        for (int bi = 0; bi < plan.batch_count(); ++bi) {
            auto [first, last] = plan.batch_range(bi);
            const int bsize = last - first;
            const int nchunks = (bsize + kChunk - 1) / kChunk;
            parallel_chunks(nchunks, threads, [&](int ci, int wi) {
                const int coff = first + ci * kChunk;
                const int cb = std::min(kChunk, last - coff);
                auto& ws = work[wi];
                ws.resize(decoder, kChunk);
                auto& f = fbuf[wi];
                auto& x = xbuf[wi];
                for (int i = 0; i < cb; ++i) {
                    const int idx = plan.order[coff + i];
                    f.middleCols(static_cast<int64_t>(i) * hw_f, hw_f) =
                        features.middleCols(static_cast<int64_t>(idx) * hw_f, hw_f);
                    std::copy(dataset.images[idx].v.begin(),
                              dataset.images[idx].v.end(),
                              x.data() + static_cast<int64_t>(i) * hw_y);
                }
                decoder_forward_chunk(decoder, f, cb, ws);
                chunk_grad[ci].assign(decoder.params.theta.size(), 0.0f);
                chunk_abs[ci] =
                    decoder_backward_chunk(decoder, x, cb, ws, chunk_grad[ci]);
            });
            std::fill(grad.begin(), grad.end(), 0.0f);
            double batch_abs = 0;
            for (int ci = 0; ci < nchunks; ++ci) {
                const auto& cg = chunk_grad[ci];
                for (size_t i = 0; i < grad.size(); ++i) grad[i] += cg[i];
                batch_abs += chunk_abs[ci];
            }
            if (!std::isfinite(batch_abs))
                throw DivergenceDetected("train_decoder: non-finite loss");
            const float inv = 1.0f / (static_cast<float>(bsize) * hw_y);
            for (auto& gv : grad) gv *= inv;
            adam.step(decoder.params.theta, grad);
            epoch_abs += batch_abs;
        }
        decoder.train_mae_history.push_back(
            epoch_abs / (static_cast<double>(dataset.size()) * hw_y));
    }

    if (param_checksum(classifier) != frozen)
        throw FrozenViolation("train_decoder: classifier parameters changed");
    decoder.trained = true;
    return decoder;
}

double reconstruction_mae(const ClassifierModel& classifier,
                          const DecoderModel& decoder,
                          const LabeledDataset& dataset, int threads) {
    if (dataset.empty()) throw EmptyDataset("reconstruction_mae: empty dataset");
    const int count = static_cast<int>(dataset.size());
    const int nthreads = resolve_threads(threads);
    const int nchunks = (count + kChunk - 1) / kChunk;
    const int hw_y = decoder.out_h() * decoder.out_w();
    std::vector<ClassifierWork<float>> cwork(nthreads);
    std::vector<DecoderWork<float>> dwork(nthreads);
    std::vector<double> chunk_abs(nchunks, 0.0);
    parallel_chunks(nchunks, nthreads, [&](int ci, int wi) {
        const int coff = ci * kChunk;
        const int cb = std::min(kChunk, count - coff);
        auto& cws = cwork[wi];
        auto& dws = dwork[wi];
        cws.resize(classifier, kChunk);
        dws.resize(decoder, kChunk);
        std::vector<int> idx(cb);
        for (int i = 0; i < cb; ++i) idx[i] = coff + i;
        gather_images(dataset.images, idx.data(), cb, cws.x0);
        classifier_forward_chunk(classifier, cb, cws);
        decoder_forward_chunk(decoder, cws.a4, cb, dws);
        double abs_sum = 0;
        for (int i = 0; i < cb; ++i) {
            const auto& img = dataset.images[coff + i];
            const float* y = dws.y.data() + static_cast<int64_t>(i) * hw_y;
            for (int j = 0; j < hw_y; ++j)
                abs_sum += std::abs(static_cast<double>(img.v[j] - y[j]));
        }
        chunk_abs[ci] = abs_sum;
    });
    double total = 0;
    for (double a : chunk_abs) total += a;
    return total / (static_cast<double>(count) * hw_y);
}

// ---------------------------------------------------------------------------
// Counterfactual episodes
// ---------------------------------------------------------------------------

static double pair_proximity(const Image& a, const Image& b) {
    double s = 0;
    for (int64_t i = 0; i < a.size(); ++i)
        s += std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]));
    return s / static_cast<double>(a.size());
}

Explanation explain_with_filters(const ClassifierModel& classifier,
                                 const DecoderModel& decoder, const Image& image,
                                 int target, const McMask& mc, const MiDelta& mi,
                                 CfMode mode) {
    ForwardResult fr = forward(classifier, image);
    Explanation e;
    e.source = image;
    e.inferred = fr.prediction.class_index;
    e.target = target;
    e.mc = mc;
    e.mi = mi;
    e.reconstruction = decode(decoder, fr.feature_map);
    e.contrastive = decode(decoder, modify_feature_map(fr.feature_map, &mc, nullptr));
    const McMask* cf_mask = mode == CfMode::combined ? &mc : nullptr;
    e.counterfactual =
        decode(decoder, modify_feature_map(fr.feature_map, cf_mask, &mi));
    // validity is judged on the MI-altered features alone
    e.flipped =
        classify_modified(classifier, fr.pooled, nullptr, &mi).class_index == target;
    e.proximity = pair_proximity(e.source, e.counterfactual);
    return e;
}

Explanation generate_counterfactual(const ClassifierModel& classifier,
                                    const CfeModel& cfe, const DecoderModel& decoder,
                                    const Image& image, int target, CfMode mode) {
    if (!classifier.trained || !cfe.trained || !decoder.trained)
        throw UntrainedModel("generate_counterfactual: model weights missing");
    ForwardResult fr = forward(classifier, image);
    auto [mc, mi] = predict_filters(cfe, fr.pooled, target);
    return explain_with_filters(classifier, decoder, image, target, mc, mi, mode);
}

std::vector<Explanation>
generate_counterfactuals(const ClassifierModel& classifier, const CfeModel& cfe,
                         const DecoderModel& decoder,
                         const std::vector<Image>& sources,
                         const std::vector<int>& targets, CfMode mode,
                         int threads) {
    if (sources.size() != targets.size())
        throw LengthMismatch("generate_counterfactuals: sources/targets mismatch");
    if (!classifier.trained || !cfe.trained || !decoder.trained)
        throw UntrainedModel("generate_counterfactuals: model weights missing");
    const int count = static_cast<int>(sources.size());
    std::vector<Explanation> out(count);
    const int nthreads = resolve_threads(threads);
    const int nchunks = (count + kChunk - 1) / kChunk;
    std::vector<ClassifierWork<float>> cwork(nthreads);
    parallel_chunks(nchunks, nthreads, [&](int ci, int wi) {
        const int coff = ci * kChunk;
        const int cb = std::min(kChunk, count - coff);
        auto& cws = cwork[wi];
        cws.resize(classifier, kChunk);
        std::vector<int> idx(cb);
        for (int i = 0; i < cb; ++i) idx[i] = coff + i;
        gather_images(sources, idx.data(), cb, cws.x0);
        classifier_forward_chunk(classifier, cb, cws);
        for (int i = 0; i < cb; ++i) {
            const int gi = coff + i;
            std::vector<float> pooled(cws.g.data() + static_cast<int64_t>(i) * classifier.n,
                                      cws.g.data() + static_cast<int64_t>(i + 1) * classifier.n);
            Tensor fm = cols_to_fm(
                MatX<float>(cws.a4.middleCols(
                    static_cast<int64_t>(i) * classifier.fm_h() * classifier.fm_w(),
                    classifier.fm_h() * classifier.fm_w())),
                classifier.n, classifier.fm_h(), classifier.fm_w());
            auto [mc, mi] = predict_filters(cfe, pooled, targets[gi]);
            Explanation e;
            e.source = sources[gi];
            e.inferred = head_prediction(classifier, pooled).class_index;
            e.target = targets[gi];
            e.mc = mc;
            e.mi = mi;
            e.reconstruction = decode(decoder, fm);
            e.contrastive = decode(decoder, modify_feature_map(fm, &mc, nullptr));
            const McMask* cf_mask = mode == CfMode::combined ? &mc : nullptr;
            e.counterfactual = decode(decoder, modify_feature_map(fm, cf_mask, &mi));
            e.flipped = classify_modified(classifier, pooled, nullptr, &mi)
                            .class_index == targets[gi];
            e.proximity = pair_proximity(e.source, e.counterfactual);
            out[gi] = std::move(e);
        }
    });
    return out;
}

} // namespace fcve
