#ifndef FCVE_CFE_HPP
#define FCVE_CFE_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "fcve/classifier.hpp"
#include "fcve/filters.hpp"

namespace fcve {

// Counterfactual filter explainer: two dense heads over [pooled features ;
// one-hot target class]. The MC head (sigmoid + thresholded ReLU) yields a
// near-binary multiplicative mask that should keep the original prediction;
// the MI head (plain ReLU) yields non-negative additive deltas that should
// flip the prediction to the target class.

template <typename T>
struct CfeModelT {
    int n = 64;
    int class_count = 10;
    T threshold = T(0.5);
    T lambda_mc = T(0.01), lambda_mi = T(0.01);
    ParamPack<T> params;
    int64_t wmc = 0, bmc = 0, wmi = 0, bmi = 0;
    bool trained = false;

    int in_width() const { return n + class_count; }
    const T* p(int64_t off) const { return params.theta.data() + off; }
    T* p(int64_t off) { return params.theta.data() + off; }
};

using CfeModel = CfeModelT<float>;

template <typename T>
CfeModelT<T> make_cfe(int n, int class_count, uint64_t seed,
                      T lambda_mc = T(0.01), T lambda_mi = T(0.01)) {
    CfeModelT<T> m;
    m.n = n;
    m.class_count = class_count;
    m.lambda_mc = lambda_mc;
    m.lambda_mi = lambda_mi;
    const int in = m.in_width();
    m.wmc = m.params.add("cfe.mc_head.w", {in, n});
    m.bmc = m.params.add("cfe.mc_head.b", {n});
    m.wmi = m.params.add("cfe.mi_head.w", {in, n});
    m.bmi = m.params.add("cfe.mi_head.b", {n});
    std::mt19937_64 rng(mix_seed(seed, 0xCFE0));
    he_normal_init(m.p(m.wmc), static_cast<int64_t>(in) * n, in, rng);
    he_normal_init(m.p(m.wmi), static_cast<int64_t>(in) * n, in, rng);
    return m;
}

// out[i] = 0 if v[i] < t, else v[i] (values at the threshold pass unchanged)
std::vector<float> thresholded_relu(const std::vector<float>& v, float t);

std::pair<McMask, MiDelta> predict_filters(const CfeModel& cfe,
                                           const std::vector<float>& pooled,
                                           int target);

// Batch form over pooled-feature columns; one target per column.
template <typename T>
void predict_filters_batch(const CfeModelT<T>& cfe, const MatX<T>& g,
                           const int* targets, int b, MatX<T>& mask,
                           MatX<T>& delta) {
    const int in = cfe.in_width();
    MatX<T> z = MatX<T>::Zero(in, b);
    z.topRows(cfe.n) = g.leftCols(b);
    for (int i = 0; i < b; ++i) z(cfe.n + targets[i], i) = T(1);
    MapConstMat<T> wmc(cfe.p(cfe.wmc), cfe.n, in), wmi(cfe.p(cfe.wmi), cfe.n, in);
    mask.resize(cfe.n, b);
    delta.resize(cfe.n, b);
    mask.noalias() = wmc * z;
    mask.colwise() += Eigen::Map<const VecX<T>>(cfe.p(cfe.bmc), cfe.n);
    sigmoid_open01_inplace(mask.data(), static_cast<int64_t>(cfe.n) * b);
    for (int64_t i = 0; i < static_cast<int64_t>(cfe.n) * b; ++i)
        if (mask.data()[i] < cfe.threshold) mask.data()[i] = T(0);
    delta.noalias() = wmi * z;
    delta.colwise() += Eigen::Map<const VecX<T>>(cfe.p(cfe.bmi), cfe.n);
    relu_inplace(delta.data(), static_cast<int64_t>(cfe.n) * b);
}

// Mean training loss over a batch: CE(head(g*mask), label) + lambda_mc*|mask|_1
// + CE(head(g+delta), target) + lambda_mi*|delta|_1. The thresholded ReLU is
// treated as identity in the backward pass (straight-through), so sparsity
// pressure keeps acting on entries already below the threshold.
template <typename T>
double cfe_loss_grad(const CfeModelT<T>& cfe, const ClassifierModelT<T>& clf,
                     const MatX<T>& g, const int* labels, const int* targets,
                     int b, std::vector<T>* grad, double* ce_mc = nullptr,
                     double* ce_mi = nullptr, double* support = nullptr) {
    const int n = cfe.n, k = cfe.class_count, in = cfe.in_width();
    MatX<T> z = MatX<T>::Zero(in, b);
    z.topRows(n) = g.leftCols(b);
    for (int i = 0; i < b; ++i) z(n + targets[i], i) = T(1);

    MapConstMat<T> wmc(cfe.p(cfe.wmc), n, in), wmi(cfe.p(cfe.wmi), n, in);
    MatX<T> s = wmc * z;
    s.colwise() += Eigen::Map<const VecX<T>>(cfe.p(cfe.bmc), n);
    sigmoid_open01_inplace(s.data(), static_cast<int64_t>(n) * b);
    MatX<T> mask = s;
    for (int64_t i = 0; i < static_cast<int64_t>(n) * b; ++i)
        if (mask.data()[i] < cfe.threshold) mask.data()[i] = T(0);
    MatX<T> mi_pre = wmi * z;
    mi_pre.colwise() += Eigen::Map<const VecX<T>>(cfe.p(cfe.bmi), n);
    MatX<T> delta = mi_pre;
    relu_inplace(delta.data(), static_cast<int64_t>(n) * b);

    MapConstMat<T> wh(clf.p(clf.wh), k, n);
    Eigen::Map<const VecX<T>> bh(clf.p(clf.bh), k);
    MatX<T> gm = g.leftCols(b).cwiseProduct(mask);
    MatX<T> ga = g.leftCols(b) + delta;
    MatX<T> logits1 = wh * gm, logits2 = wh * ga;
    logits1.colwise() += bh;
    logits2.colwise() += bh;

    MatX<T> probs(k, b), dlogits1(k, b), dlogits2(k, b);
    const double loss_mc =
        softmax_ce(logits1.data(), labels, k, b, probs.data(), dlogits1.data());
    const double loss_mi =
        softmax_ce(logits2.data(), targets, k, b, probs.data(), dlogits2.data());
    const double l1_mask = static_cast<double>(mask.sum());
    const double l1_delta = static_cast<double>(delta.sum());
    if (ce_mc) *ce_mc = loss_mc / b;
    if (ce_mi) *ce_mi = loss_mi / b;
    if (support)
        *support = (mask.array() > T(0)).template cast<double>().sum() / b;

    if (grad) {
        grad->assign(cfe.params.theta.size(), T(0));
        T* gr = grad->data();
        // MC branch: dmask = Wh^T dlogits1 * g + lambda; through threshold as
        // identity, then sigmoid derivative on the clamped output
        MatX<T> dmask = (wh.transpose() * dlogits1).cwiseProduct(g.leftCols(b));
        dmask.array() += cfe.lambda_mc;
        MatX<T> dmc_pre =
            dmask.cwiseProduct(s.cwiseProduct(MatX<T>::Constant(n, b, T(1)) - s));
        MapMat<T> dwmc(gr + cfe.wmc, n, in);
        dwmc.noalias() = dmc_pre * z.transpose();
        Eigen::Map<VecX<T>>(gr + cfe.bmc, n) = dmc_pre.rowwise().sum();
        // MI branch: plain ReLU gate
        MatX<T> ddelta = wh.transpose() * dlogits2;
        ddelta.array() += cfe.lambda_mi;
        for (int64_t i = 0; i < static_cast<int64_t>(n) * b; ++i)
            if (!(mi_pre.data()[i] > T(0))) ddelta.data()[i] = T(0);
        MapMat<T> dwmi(gr + cfe.wmi, n, in);
        dwmi.noalias() = ddelta * z.transpose();
        Eigen::Map<VecX<T>>(gr + cfe.bmi, n) = ddelta.rowwise().sum();
        const T inv = T(1) / b;
        for (auto& gv : *grad) gv *= inv;
    }
    return (loss_mc + loss_mi + cfe.lambda_mc * l1_mask + cfe.lambda_mi * l1_delta) / b;
}

struct CfeEpochMetrics {
    double ce_mc = 0, ce_mi = 0, mask_support = 0;
};

struct CfeTrainOptions {
    int epochs = 8;
    float lr = 1e-3f;
    int batch_size = 128;
    uint64_t seed = 7;
    int threads = 0;
};

struct CfeTrainResult {
    CfeModel model;
    std::vector<CfeEpochMetrics> history;
};

// Trains the heads on correctly classified examples with uniformly sampled
// targets != label; the classifier stays bitwise frozen.
CfeTrainResult train_cfe(CfeModel cfe, const ClassifierModel& classifier,
                         const LabeledDataset& dataset,
                         const CfeTrainOptions& opts);

// Fraction of correctly classified images whose prediction survives the MC
// mask. Target conditioning cycles deterministically over non-inferred classes.
double mc_validity(const CfeModel& cfe, const ClassifierModel& classifier,
                   const LabeledDataset& dataset, int threads = 0);

// score[k] = frequency of filter k in the MC mask support over the class's
// examples (averaged over all conditioning targets != class). Descending,
// ties broken by lower index.
std::vector<std::pair<int, double>>
class_filter_importance(const CfeModel& cfe, const ClassifierModel& classifier,
                        const LabeledDataset& dataset, int class_index,
                        int threads = 0);

std::vector<std::pair<int, double>>
class_filter_importance_cached(const CfeModel& cfe, const MatX<float>& pooled,
                               const std::vector<int>& labels, int class_index);

uint64_t param_checksum(const CfeModel& model);

template <typename T, typename U>
CfeModelT<U> cfe_cast(const CfeModelT<T>& m) {
    CfeModelT<U> out;
    out.n = m.n; out.class_count = m.class_count;
    out.threshold = static_cast<U>(m.threshold);
    out.lambda_mc = static_cast<U>(m.lambda_mc);
    out.lambda_mi = static_cast<U>(m.lambda_mi);
    out.wmc = m.wmc; out.bmc = m.bmc; out.wmi = m.wmi; out.bmi = m.bmi;
    out.trained = m.trained;
    out.params.infos = m.params.infos;
    out.params.theta.resize(m.params.theta.size());
    for (size_t i = 0; i < m.params.theta.size(); ++i)
        out.params.theta[i] = static_cast<U>(m.params.theta[i]);
    return out;
}

} // namespace fcve

#endif
