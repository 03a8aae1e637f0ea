#ifndef FCVE_DATASET_HPP
#define FCVE_DATASET_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fcve/idx.hpp"
#include "fcve/tensor.hpp"

namespace fcve {

enum class Split { train, val, test };

struct LabeledDataset {
    std::vector<Image> images;
    std::vector<int> labels;
    Split split = Split::train;
    int class_count = 0;

    size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }
};

// v -> v/255, appending a channel dimension. Input must be rank 3 (count,H,W).
std::vector<Image> normalize(const RawIdxTensor& raw);

std::vector<int> labels_from_idx(const RawIdxTensor& raw);

LabeledDataset make_dataset(std::vector<Image> images, std::vector<int> labels,
                            Split split, int class_count);

// Stratified split: per-class counts via largest remainder so the validation
// set has exactly round(size*val_fraction) examples and every class is within
// one example of its proportional share. Deterministic for a fixed seed.
std::pair<LabeledDataset, LabeledDataset>
split_dataset(const LabeledDataset& dataset, double val_fraction, uint64_t seed);

// One epoch's batch order. Holds indices only; gather images on demand.
struct BatchPlan {
    std::vector<int> order; // permutation of dataset indices
    int batch_size = 1;

    int batch_count() const {
        return static_cast<int>((order.size() + batch_size - 1) / batch_size);
    }
    // [first, last) index range of batch i within `order`
    std::pair<int, int> batch_range(int i) const {
        int first = i * batch_size;
        int last = std::min<int>(first + batch_size, static_cast<int>(order.size()));
        return {first, last};
    }
};

BatchPlan make_batches(const LabeledDataset& dataset, int batch_size,
                       uint64_t seed, bool shuffle);

struct Batch {
    std::vector<Image> images;
    std::vector<int> labels;
};

Batch gather_batch(const LabeledDataset& dataset, const BatchPlan& plan, int i);

// Dataset files on disk use the conventional IDX names; ".gz" also accepted.
LabeledDataset load_idx_dataset(const std::string& data_dir, bool train_split,
                                Split tag);

} // namespace fcve

#endif
