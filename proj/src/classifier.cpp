#include "fcve/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "fcve/util.hpp"

namespace fcve {

static constexpr int kChunk = 32;

ForwardResult forward(const ClassifierModel& model, const Image& image) {
    if (image.dims != std::vector<int>{1, model.in_h, model.in_w})
        throw ShapeMismatch("forward: image shape does not match model input");
    ClassifierWork<float> ws;
    ws.resize(model, 1);
    std::copy(image.v.begin(), image.v.end(), ws.x0.data());
    classifier_forward_chunk(model, 1, ws);

    ForwardResult r;
    r.feature_map = cols_to_fm(ws.a4, model.n, model.fm_h(), model.fm_w());
    r.pooled.assign(ws.g.data(), ws.g.data() + model.n);
    r.prediction = head_prediction(model, r.pooled);
    return r;
}

Prediction classify_modified(const ClassifierModel& model,
                             const std::vector<float>& pooled,
                             const McMask* mc, const MiDelta* mi) {
    if (static_cast<int>(pooled.size()) != model.n)
        throw LengthMismatch("classify_modified: pooled feature length != n");
    if (mc && static_cast<int>(mc->values.size()) != model.n)
        throw LengthMismatch("classify_modified: mc mask length != n");
    if (mi && static_cast<int>(mi->values.size()) != model.n)
        throw LengthMismatch("classify_modified: mi delta length != n");
    std::vector<float> feat = pooled;
    if (mc)
        for (int i = 0; i < model.n; ++i) feat[i] *= mc->values[i];
    if (mi)
        for (int i = 0; i < model.n; ++i) feat[i] += mi->values[i];
    return head_prediction(model, feat);
}

Tensor modify_feature_map(const Tensor& fm, const McMask* mc, const MiDelta* mi) {
    const int c = fm.dims[0];
    if (mc && static_cast<int>(mc->values.size()) != c)
        throw LengthMismatch("modify_feature_map: mc mask length != channels");
    if (mi && static_cast<int>(mi->values.size()) != c)
        throw LengthMismatch("modify_feature_map: mi delta length != channels");
    Tensor out = fm;
    const int64_t hw = static_cast<int64_t>(fm.dims[1]) * fm.dims[2];
    for (int ci = 0; ci < c; ++ci) {
        float* plane = out.data() + ci * hw;
        const float scale = mc ? mc->values[ci] : 1.0f;
        const float add = mi ? mi->values[ci] : 0.0f;
        for (int64_t j = 0; j < hw; ++j) plane[j] = plane[j] * scale + add;
    }
    return out;
}

uint64_t param_checksum(const ClassifierModel& model) {
    return fnv1a_vec(model.params.theta);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

ClassifierModel train_classifier(const LabeledDataset& train,
                                 const LabeledDataset* val, int n,
                                 const TrainOptions& opts) {
    if (train.split != Split::train)
        throw BadValue("train_classifier: dataset split must be train");
    if (train.empty()) throw EmptyDataset("train_classifier: empty dataset");
    if (opts.epochs < 1 || !(opts.lr > 0))
        throw BadValue("train_classifier: epochs >= 1 and lr > 0 required");

    ClassifierModel model = make_classifier<float>(n, train.class_count, opts.seed);
    const int threads = resolve_threads(opts.threads);
    const int max_chunks = (opts.batch_size + kChunk - 1) / kChunk;

    std::vector<ClassifierWork<float>> work(threads);
    std::vector<std::vector<float>> chunk_grad(max_chunks);
    std::vector<double> chunk_loss(max_chunks);
    std::vector<int> chunk_correct(max_chunks);
    std::vector<float> grad(model.params.theta.size());
    Adam<float> adam(static_cast<int64_t>(model.params.theta.size()), opts.lr);

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        BatchPlan plan = make_batches(train, opts.batch_size,
                                      mix_seed(opts.seed, 0x1000 + epoch), true);
        double epoch_loss = 0;
        int64_t epoch_correct = 0;
        for (int bi = 0; bi < plan.batch_count(); ++bi) {
            auto [first, last] = plan.batch_range(bi);
            const int bsize = last - first;
            const int nchunks = (bsize + kChunk - 1) / kChunk;
            parallel_chunks(nchunks, threads, [&](int ci, int wi) {
                const int coff = first + ci * kChunk;
                const int cb = std::min(kChunk, last - coff);
                auto& ws = work[wi];
                ws.resize(model, kChunk);
                std::vector<int> idx(plan.order.begin() + coff,
                                     plan.order.begin() + coff + cb);
                std::vector<int> lbl(cb);
                for (int i = 0; i < cb; ++i) lbl[i] = train.labels[idx[i]];
                gather_images(train.images, idx.data(), cb, ws.x0);
                classifier_forward_chunk(model, cb, ws);
                chunk_grad[ci].assign(model.params.theta.size(), 0.0f);
                chunk_loss[ci] =
                    classifier_backward_chunk(model, lbl.data(), cb, ws, chunk_grad[ci]);
                int correct = 0;
                for (int i = 0; i < cb; ++i) {
                    int arg = 0;
                    const float* col = ws.probs.data() + i * model.class_count;
                    for (int k = 1; k < model.class_count; ++k)
                        if (col[k] > col[arg]) arg = k;
                    correct += (arg == lbl[i]);
                }
                chunk_correct[ci] = correct;
            });
            // reduce in chunk order
            std::fill(grad.begin(), grad.end(), 0.0f);
            double batch_loss = 0;
            for (int ci = 0; ci < nchunks; ++ci) {
                const auto& cg = chunk_grad[ci];
                for (size_t i = 0; i < grad.size(); ++i) grad[i] += cg[i];
                batch_loss += chunk_loss[ci];
                epoch_correct += chunk_correct[ci];
            }
            if (!std::isfinite(batch_loss))
                throw DivergenceDetected("train_classifier: non-finite loss");
            const float inv = 1.0f / bsize;
            for (auto& gv : grad) gv *= inv;
            adam.step(model.params.theta, grad);
            epoch_loss += batch_loss;
        }
        EpochMetrics em;
        em.train_loss = epoch_loss / train.size();
        em.train_acc = static_cast<double>(epoch_correct) / train.size();
        if (val && !val->empty()) {
            auto ev = evaluate(model, *val, {}, threads);
            em.val_acc = ev.accuracy;
        }
        model.history.push_back(em);
    }
    model.trained = true;
    return model;
}

// ---------------------------------------------------------------------------
// Evaluation / feature extraction
// ---------------------------------------------------------------------------

EvalResult evaluate(const ClassifierModel& model, const LabeledDataset& dataset,
                    const std::vector<int>& disabled_filters, int threads) {
    if (dataset.empty()) throw EmptyDataset("evaluate: empty dataset");
    for (int i : disabled_filters)
        if (i < 0 || i >= model.n)
            throw LengthMismatch("evaluate: disabled filter index out of range");
    const McMask mask = ablation_mask(model.n, disabled_filters);

    const int count = static_cast<int>(dataset.size());
    const int nthreads = resolve_threads(threads);
    const int nchunks = (count + kChunk - 1) / kChunk;
    std::vector<ClassifierWork<float>> work(nthreads);
    const int k = model.class_count;
    std::vector<std::vector<int64_t>> correct(nchunks), support(nchunks);

    parallel_chunks(nchunks, nthreads, [&](int ci, int wi) {
        const int coff = ci * kChunk;
        const int cb = std::min(kChunk, count - coff);
        auto& ws = work[wi];
        ws.resize(model, kChunk);
        std::vector<int> idx(cb);
        for (int i = 0; i < cb; ++i) idx[i] = coff + i;
        gather_images(dataset.images, idx.data(), cb, ws.x0);
        classifier_forward_chunk(model, cb, ws);
        correct[ci].assign(k, 0);
        support[ci].assign(k, 0);
        MapConstMat<float> whm(model.p(model.wh), k, model.n);
        Eigen::Map<const VecX<float>> mv(mask.values.data(), model.n);
        MatX<float> gm = ws.g.leftCols(cb).array().colwise() * mv.array();
        MatX<float> lg = whm * gm;
        lg.colwise() += Eigen::Map<const VecX<float>>(model.p(model.bh), k);
        for (int i = 0; i < cb; ++i) {
            int arg = 0;
            for (int j = 1; j < k; ++j)
                if (lg(j, i) > lg(arg, i)) arg = j;
            const int label = dataset.labels[coff + i];
            ++support[ci][label];
            if (arg == label) ++correct[ci][label];
        }
    });

    EvalResult r;
    r.per_class_recall.assign(k, 0.0);
    std::vector<int64_t> tot_correct(k, 0), tot_support(k, 0);
    for (int ci = 0; ci < nchunks; ++ci)
        for (int j = 0; j < k; ++j) {
            tot_correct[j] += correct[ci][j];
            tot_support[j] += support[ci][j];
        }
    int64_t all_correct = 0;
    for (int j = 0; j < k; ++j) {
        all_correct += tot_correct[j];
        r.per_class_recall[j] =
            tot_support[j] ? static_cast<double>(tot_correct[j]) / tot_support[j] : 0.0;
    }
    r.accuracy = static_cast<double>(all_correct) / count;
    return r;
}

MatX<float> pooled_features_images(const ClassifierModel& model,
                                   const std::vector<Image>& images, int threads) {
    const int count = static_cast<int>(images.size());
    MatX<float> out(model.n, count);
    if (count == 0) return out;
    const int nthreads = resolve_threads(threads);
    const int nchunks = (count + kChunk - 1) / kChunk;
    std::vector<ClassifierWork<float>> work(nthreads);
    parallel_chunks(nchunks, nthreads, [&](int ci, int wi) {
        const int coff = ci * kChunk;
        const int cb = std::min(kChunk, count - coff);
        auto& ws = work[wi];
        ws.resize(model, kChunk);
        std::vector<int> idx(cb);
        for (int i = 0; i < cb; ++i) idx[i] = coff + i;
        gather_images(images, idx.data(), cb, ws.x0);
        classifier_forward_chunk(model, cb, ws);
        out.middleCols(coff, cb) = ws.g.leftCols(cb);
    });
    return out;
}

MatX<float> pooled_features(const ClassifierModel& model,
                            const LabeledDataset& dataset, int threads) {
    return pooled_features_images(model, dataset.images, threads);
}

} // namespace fcve
