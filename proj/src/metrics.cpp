#include "fcve/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fcve/util.hpp"

namespace fcve {

double proximity(const std::vector<Image>& sources,
                 const std::vector<Image>& counterfactuals) {
    if (sources.empty()) throw EmptyInput("proximity: empty input");
    if (sources.size() != counterfactuals.size())
        throw LengthMismatch("proximity: list lengths differ");
    double total = 0;
    for (size_t i = 0; i < sources.size(); ++i) {
        const auto& a = sources[i];
        const auto& b = counterfactuals[i];
        if (!a.same_shape(b)) throw ShapeMismatch("proximity: image shapes differ");
        double s = 0;
        for (int64_t j = 0; j < a.size(); ++j)
            s += std::abs(static_cast<double>(a.v[j]) - static_cast<double>(b.v[j]));
        total += s / static_cast<double>(a.size());
    }
    return total / static_cast<double>(sources.size());
}

DistributionStats distribution_stats(const std::vector<std::vector<double>>& features) {
    if (features.size() < 2)
        throw TooFewSamples("distribution_stats: need at least 2 samples");
    const int d = static_cast<int>(features[0].size());
    for (const auto& f : features)
        if (static_cast<int>(f.size()) != d)
            throw DimensionMismatch("distribution_stats: ragged feature vectors");
    const int n = static_cast<int>(features.size());
    DistributionStats st;
    st.count = n;
    st.mean = Eigen::VectorXd::Zero(d);
    for (const auto& f : features)
        st.mean += Eigen::Map<const Eigen::VectorXd>(f.data(), d);
    st.mean /= n;
    Eigen::MatrixXd s = Eigen::MatrixXd::Zero(d, d);
    for (const auto& f : features) {
        Eigen::VectorXd dev = Eigen::Map<const Eigen::VectorXd>(f.data(), d) - st.mean;
        s.noalias() += dev * dev.transpose();
    }
    s /= (n - 1);
    st.covariance = 0.5 * (s + s.transpose());
    return st;
}

DistributionStats distribution_stats_cols(const MatX<float>& features) {
    std::vector<std::vector<double>> v(features.cols());
    for (int i = 0; i < features.cols(); ++i) {
        v[i].resize(features.rows());
        for (int j = 0; j < features.rows(); ++j)
            v[i][j] = static_cast<double>(features(j, i));
    }
    return distribution_stats(v);
}

Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& psd) {
    if (psd.rows() != psd.cols())
        throw NonSymmetric("matrix_sqrt: matrix is not square");
    const double asym = (psd - psd.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-6)
        throw NonSymmetric("matrix_sqrt: asymmetry exceeds 1e-6");
    const Eigen::MatrixXd sym = 0.5 * (psd + psd.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    Eigen::VectorXd lam = eig.eigenvalues();
    constexpr double eps = 1e-6;
    if (lam.minCoeff() < eps) lam.array() += eps;
    lam = lam.cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

double fid(const DistributionStats& a, const DistributionStats& b) {
    if (a.mean.size() != b.mean.size())
        throw DimensionMismatch("fid: dimension mismatch");
    const Eigen::MatrixXd sqrt_a = matrix_sqrt(a.covariance);
    // symmetrized product keeps the eigensolver on a symmetric matrix
    const Eigen::MatrixXd inner = sqrt_a * b.covariance * sqrt_a;
    const Eigen::MatrixXd cross = matrix_sqrt(inner);
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double trace_term =
        (a.covariance + b.covariance - 2.0 * cross).trace();
    return std::max(0.0, mean_term + trace_term);
}

double flip_rate(const std::vector<Explanation>& explanations) {
    if (explanations.empty()) throw EmptyInput("flip_rate: empty input");
    int64_t flipped = 0;
    for (const auto& e : explanations) flipped += e.flipped ? 1 : 0;
    return static_cast<double>(flipped) / static_cast<double>(explanations.size());
}

// accuracy and class recall from cached pooled features under a filter mask
static std::pair<double, double>
masked_eval(const ClassifierModel& clf, const MatX<float>& pooled,
            const std::vector<int>& labels, const McMask& mask, int class_index) {
    const int k = clf.class_count;
    MapConstMat<float> wh(clf.p(clf.wh), k, clf.n);
    Eigen::Map<const VecX<float>> mv(mask.values.data(), clf.n);
    MatX<float> gm = pooled.array().colwise() * mv.array();
    MatX<float> lg = wh * gm;
    lg.colwise() += Eigen::Map<const VecX<float>>(clf.p(clf.bh), k);
    int64_t correct = 0, cls_correct = 0, cls_support = 0;
    for (int i = 0; i < lg.cols(); ++i) {
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (lg(j, i) > lg(arg, i)) arg = j;
        if (arg == labels[i]) ++correct;
        if (labels[i] == class_index) {
            ++cls_support;
            if (arg == labels[i]) ++cls_correct;
        }
    }
    const double acc = static_cast<double>(correct) / lg.cols();
    const double recall =
        cls_support ? static_cast<double>(cls_correct) / cls_support : 0.0;
    return {acc, recall};
}

FaithfulnessReport faithfulness_study(const ClassifierModel& classifier,
                                      const CfeModel& cfe,
                                      const LabeledDataset& dataset,
                                      int class_index, int k, int trials,
                                      uint64_t seed, int threads) {
    if (dataset.empty()) throw EmptyDataset("faithfulness_study: empty dataset");
    if (k < 0 || k > classifier.n)
        throw BadValue("faithfulness_study: k out of [0, n]");
    if (trials < 1) throw BadValue("faithfulness_study: trials must be >= 1");

    MatX<float> pooled = pooled_features(classifier, dataset, threads);
    auto ranked =
        class_filter_importance_cached(cfe, pooled, dataset.labels, class_index);

    FaithfulnessReport rep;
    rep.class_index = class_index;
    rep.k = k;
    rep.trials = trials;

    auto [base_acc, base_recall] = masked_eval(classifier, pooled, dataset.labels,
                                               ones_mask(classifier.n), class_index);
    rep.baseline_accuracy = base_acc;
    rep.baseline_recall = base_recall;

    for (int i = 0; i < k; ++i) rep.targeted_filters.push_back(ranked[i].first);
    auto [tgt_acc, tgt_recall] =
        masked_eval(classifier, pooled, dataset.labels,
                    ablation_mask(classifier.n, rep.targeted_filters), class_index);
    rep.targeted_recall_drop = (base_recall - tgt_recall) * 100.0;
    rep.accuracy_drop = (base_acc - tgt_acc) * 100.0;

    double random_drop = 0;
    std::vector<int> all(classifier.n);
    std::iota(all.begin(), all.end(), 0);
    for (int t = 0; t < trials; ++t) {
        std::mt19937_64 rng(mix_seed(seed, 0xAB1A + t));
        std::vector<int> pickpool = all;
        std::shuffle(pickpool.begin(), pickpool.end(), rng);
        pickpool.resize(k);
        auto [racc, rrecall] =
            masked_eval(classifier, pooled, dataset.labels,
                        ablation_mask(classifier.n, pickpool), class_index);
        (void)racc;
        random_drop += (base_recall - rrecall) * 100.0;
    }
    rep.random_recall_drop = random_drop / trials;
    return rep;
}

} // namespace fcve
