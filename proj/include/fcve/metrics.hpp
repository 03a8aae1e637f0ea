#ifndef FCVE_METRICS_HPP
#define FCVE_METRICS_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "fcve/cfe.hpp"
#include "fcve/classifier.hpp"
#include "fcve/decoder.hpp"
#include "fcve/tensor.hpp"

namespace fcve {

// Mean per-pixel L1 distance between paired image lists, normalized by C*H*W.
double proximity(const std::vector<Image>& sources,
                 const std::vector<Image>& counterfactuals);

// Gaussian fit of a feature set, the Frechet-distance inputs.
struct DistributionStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance; // (S + S^T)/2, 1/(count-1) normalization
    int count = 0;
};

DistributionStats distribution_stats(const std::vector<std::vector<double>>& features);
DistributionStats distribution_stats_cols(const MatX<float>& features);

// Symmetric PSD square root via eigendecomposition. eps*I is added when the
// smallest eigenvalue falls below eps = 1e-6; residual negative eigenvalues
// are clamped to zero.
Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& psd);

// |mu - mu'|^2 + Tr(S + S' - 2*sqrt(S^{1/2} S' S^{1/2})); round-off negatives
// are clamped to zero.
double fid(const DistributionStats& a, const DistributionStats& b);

double flip_rate(const std::vector<Explanation>& explanations);

struct FaithfulnessReport {
    int class_index = 0;
    int k = 0;
    int trials = 0;
    double baseline_recall = 0, baseline_accuracy = 0;
    double targeted_recall_drop = 0;  // percentage points
    double random_recall_drop = 0;    // mean over trials, points
    double accuracy_drop = 0;         // points, targeted condition
    std::vector<int> targeted_filters;
};

// Disables the top-k filters ranked by class_filter_importance and compares
// the class recall drop against `trials` random k-subsets of filters.
FaithfulnessReport faithfulness_study(const ClassifierModel& classifier,
                                      const CfeModel& cfe,
                                      const LabeledDataset& dataset,
                                      int class_index, int k, int trials,
                                      uint64_t seed, int threads = 0);

} // namespace fcve

#endif
