#include "fcve/cfe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fcve/util.hpp"

namespace fcve {

std::vector<float> thresholded_relu(const std::vector<float>& v, float t) {
    std::vector<float> out = v;
    for (auto& x : out)
        if (x < t) x = 0.0f;
    return out;
}

std::pair<McMask, MiDelta> predict_filters(const CfeModel& cfe,
                                           const std::vector<float>& pooled,
                                           int target) {
    if (static_cast<int>(pooled.size()) != cfe.n)
        throw LengthMismatch("predict_filters: pooled feature length != n");
    if (target < 0 || target >= cfe.class_count)
        throw LengthMismatch("predict_filters: target class out of range");
    MatX<float> g(cfe.n, 1);
    std::copy(pooled.begin(), pooled.end(), g.data());
    MatX<float> mask, delta;
    predict_filters_batch(cfe, g, &target, 1, mask, delta);
    McMask mc;
    MiDelta mi;
    mc.values.assign(mask.data(), mask.data() + cfe.n);
    mi.values.assign(delta.data(), delta.data() + cfe.n);
    return {std::move(mc), std::move(mi)};
}

uint64_t param_checksum(const CfeModel& model) {
    return fnv1a_vec(model.params.theta);
}

// argmax of head(g) per column
static std::vector<int> head_argmax(const ClassifierModel& clf,
                                    const MatX<float>& g) {
    const int k = clf.class_count, b = static_cast<int>(g.cols());
    MapConstMat<float> wh(clf.p(clf.wh), k, clf.n);
    MatX<float> lg = wh * g;
    lg.colwise() += Eigen::Map<const VecX<float>>(clf.p(clf.bh), k);
    std::vector<int> out(b);
    for (int i = 0; i < b; ++i) {
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (lg(j, i) > lg(arg, i)) arg = j;
        out[i] = arg;
    }
    return out;
}

CfeTrainResult train_cfe(CfeModel cfe, const ClassifierModel& classifier,
                         const LabeledDataset& dataset,
                         const CfeTrainOptions& opts) {
    if (dataset.empty()) throw EmptyDataset("train_cfe: empty dataset");
    if (opts.epochs < 1 || !(opts.lr > 0))
        throw BadValue("train_cfe: epochs >= 1 and lr > 0 required");
    const uint64_t frozen = param_checksum(classifier);

    // classifier is frozen, so pooled features are computed once
    MatX<float> pooled = pooled_features(classifier, dataset, opts.threads);
    std::vector<int> preds = head_argmax(classifier, pooled);
    std::vector<int> correct_idx;
    for (size_t i = 0; i < dataset.size(); ++i)
        if (preds[i] == dataset.labels[i]) correct_idx.push_back(static_cast<int>(i));
    if (correct_idx.empty())
        throw EmptyDataset("train_cfe: no correctly classified examples");

    const int k = cfe.class_count;
    Adam<float> adam(static_cast<int64_t>(cfe.params.theta.size()), opts.lr);
    std::vector<float> grad;
    CfeTrainResult result;

    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        std::mt19937_64 rng(mix_seed(opts.seed, 0x7A60 + epoch));
        std::vector<int> order = correct_idx;
        std::shuffle(order.begin(), order.end(), rng);
        std::uniform_int_distribution<int> pick(0, k - 2);

        double ep_ce_mc = 0, ep_ce_mi = 0, ep_support = 0;
        int nbatches = 0;
        for (size_t off = 0; off < order.size(); off += opts.batch_size) {
            const int b = static_cast<int>(
                std::min<size_t>(opts.batch_size, order.size() - off));
            MatX<float> g(cfe.n, b);
            std::vector<int> labels(b), targets(b);
            for (int i = 0; i < b; ++i) {
                const int idx = order[off + i];
                g.col(i) = pooled.col(idx);
                labels[i] = dataset.labels[idx];
                int t = pick(rng);
                targets[i] = t >= labels[i] ? t + 1 : t;
            }
            double ce_mc = 0, ce_mi = 0, support = 0;
            double loss = cfe_loss_grad(cfe, classifier, g, labels.data(),
                                        targets.data(), b, &grad, &ce_mc, &ce_mi,
                                        &support);
            if (!std::isfinite(loss))
                throw DivergenceDetected("train_cfe: non-finite loss");
            adam.step(cfe.params.theta, grad);
            ep_ce_mc += ce_mc;
            ep_ce_mi += ce_mi;
            ep_support += support;
            ++nbatches;
        }
        result.history.push_back(
            {ep_ce_mc / nbatches, ep_ce_mi / nbatches, ep_support / nbatches});
    }

    if (param_checksum(classifier) != frozen)
        throw FrozenViolation("train_cfe: classifier parameters changed");
    cfe.trained = true;
    result.model = std::move(cfe);
    return result;
}

double mc_validity(const CfeModel& cfe, const ClassifierModel& classifier,
                   const LabeledDataset& dataset, int threads) {
    if (dataset.empty()) throw EmptyDataset("mc_validity: empty dataset");
    MatX<float> pooled = pooled_features(classifier, dataset, threads);
    std::vector<int> preds = head_argmax(classifier, pooled);

    const int k = cfe.class_count;
    int64_t kept = 0, total = 0;
    std::vector<int> idx, targets;
    for (size_t i = 0; i < dataset.size(); ++i) {
        if (preds[i] != dataset.labels[i]) continue;
        idx.push_back(static_cast<int>(i));
        const int c = preds[i];
        targets.push_back((c + 1 + static_cast<int>(total) % (k - 1)) % k);
        ++total;
    }
    if (idx.empty()) return 0.0;

    const int step = 512;
    for (size_t off = 0; off < idx.size(); off += step) {
        const int b = static_cast<int>(std::min<size_t>(step, idx.size() - off));
        MatX<float> g(cfe.n, b);
        for (int i = 0; i < b; ++i) g.col(i) = pooled.col(idx[off + i]);
        MatX<float> mask, delta;
        predict_filters_batch(cfe, g, targets.data() + off, b, mask, delta);
        MatX<float> gm = g.cwiseProduct(mask);
        std::vector<int> after = head_argmax(classifier, gm);
        for (int i = 0; i < b; ++i)
            if (after[i] == preds[idx[off + i]]) ++kept;
    }
    return static_cast<double>(kept) / static_cast<double>(total);
}

std::vector<std::pair<int, double>>
class_filter_importance_cached(const CfeModel& cfe, const MatX<float>& pooled,
                               const std::vector<int>& labels, int class_index) {
    std::vector<int> members;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == class_index) members.push_back(static_cast<int>(i));
    if (members.empty())
        throw NoClassExamples("class_filter_importance: no examples of class");

    const int k = cfe.class_count, n = cfe.n;
    std::vector<int64_t> counts(n, 0);
    int64_t trials = 0;
    const int step = 512;
    for (int target = 0; target < k; ++target) {
        if (target == class_index) continue;
        for (size_t off = 0; off < members.size(); off += step) {
            const int b = static_cast<int>(std::min<size_t>(step, members.size() - off));
            MatX<float> g(n, b);
            std::vector<int> tg(b, target);
            for (int i = 0; i < b; ++i) g.col(i) = pooled.col(members[off + i]);
            MatX<float> mask, delta;
            predict_filters_batch(cfe, g, tg.data(), b, mask, delta);
            for (int i = 0; i < b; ++i)
                for (int f = 0; f < n; ++f)
                    if (mask(f, i) > 0.0f) ++counts[f];
            trials += b;
        }
    }

    std::vector<std::pair<int, double>> ranked(n);
    for (int f = 0; f < n; ++f)
        ranked[f] = {f, static_cast<double>(counts[f]) / static_cast<double>(trials)};
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return ranked;
}

std::vector<std::pair<int, double>>
class_filter_importance(const CfeModel& cfe, const ClassifierModel& classifier,
                        const LabeledDataset& dataset, int class_index,
                        int threads) {
    if (class_index < 0 || class_index >= dataset.class_count)
        throw NoClassExamples("class_filter_importance: class index out of range");
    MatX<float> pooled = pooled_features(classifier, dataset, threads);
    return class_filter_importance_cached(cfe, pooled, dataset.labels, class_index);
}

} // namespace fcve
