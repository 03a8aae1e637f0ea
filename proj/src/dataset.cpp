#include "fcve/dataset.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "fcve/errors.hpp"

namespace fcve {

std::vector<Image> normalize(const RawIdxTensor& raw) {
    if (raw.dims.size() != 3)
        throw RankMismatch("normalize: expected rank-3 idx tensor (count,H,W)");
    const int count = raw.dims[0], h = raw.dims[1], w = raw.dims[2];
    std::vector<Image> out;
    out.reserve(count);
    const uint8_t* p = raw.payload.data();
    for (int i = 0; i < count; ++i) {
        Image img({1, h, w});
        for (int j = 0; j < h * w; ++j)
            img.v[j] = static_cast<float>(p[j]) / 255.0f;
        p += static_cast<size_t>(h) * w;
        out.push_back(std::move(img));
    }
    return out;
}

std::vector<int> labels_from_idx(const RawIdxTensor& raw) {
    if (raw.dims.size() != 1)
        throw RankMismatch("labels: expected rank-1 idx tensor");
    return std::vector<int>(raw.payload.begin(), raw.payload.end());
}

LabeledDataset make_dataset(std::vector<Image> images, std::vector<int> labels,
                            Split split, int class_count) {
    if (images.size() != labels.size())
        throw LengthMismatch("dataset: images/labels length mismatch");
    for (int l : labels)
        if (l < 0 || l >= class_count)
            throw BadValue("dataset: label outside [0, class_count)");
    LabeledDataset d;
    d.images = std::move(images);
    d.labels = std::move(labels);
    d.split = split;
    d.class_count = class_count;
    return d;
}

std::pair<LabeledDataset, LabeledDataset>
split_dataset(const LabeledDataset& dataset, double val_fraction, uint64_t seed) {
    if (dataset.empty()) throw EmptyDataset("split: empty dataset");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw BadValue("split: val_fraction must be in (0,1)");

    const int k = dataset.class_count;
    std::vector<std::vector<int>> by_class(k);
    for (size_t i = 0; i < dataset.size(); ++i)
        by_class[dataset.labels[i]].push_back(static_cast<int>(i));

    // per-class validation counts: floor(share) plus largest remainders until
    // the total hits round(N * val_fraction)
    const int want_total =
        static_cast<int>(std::llround(val_fraction * static_cast<double>(dataset.size())));
    std::vector<int> take(k, 0);
    std::vector<std::pair<double, int>> rema; // (-remainder, class)
    int base_total = 0;
    for (int c = 0; c < k; ++c) {
        double share = val_fraction * static_cast<double>(by_class[c].size());
        take[c] = static_cast<int>(share);
        base_total += take[c];
        rema.push_back({-(share - take[c]), c});
    }
    std::sort(rema.begin(), rema.end()); // most-fractional first, ties by class
    for (int i = 0; i < want_total - base_total && i < k; ++i) {
        int c = rema[i].second;
        if (take[c] < static_cast<int>(by_class[c].size())) ++take[c];
    }

    std::mt19937_64 rng(seed);
    LabeledDataset tr, va;
    tr.split = Split::train;
    va.split = Split::val;
    tr.class_count = va.class_count = k;
    std::vector<int> tr_idx, va_idx;
    for (int c = 0; c < k; ++c) {
        auto idx = by_class[c];
        std::shuffle(idx.begin(), idx.end(), rng);
        for (size_t i = 0; i < idx.size(); ++i)
            (i < static_cast<size_t>(take[c]) ? va_idx : tr_idx).push_back(idx[i]);
    }
    // keep original dataset order inside each side
    std::sort(tr_idx.begin(), tr_idx.end());
    std::sort(va_idx.begin(), va_idx.end());
    for (int i : tr_idx) {
        tr.images.push_back(dataset.images[i]);
        tr.labels.push_back(dataset.labels[i]);
    }
    for (int i : va_idx) {
        va.images.push_back(dataset.images[i]);
        va.labels.push_back(dataset.labels[i]);
    }
    return {std::move(tr), std::move(va)};
}

BatchPlan make_batches(const LabeledDataset& dataset, int batch_size,
                       uint64_t seed, bool shuffle) {
    if (batch_size < 1) throw BadValue("batches: size must be >= 1");
    BatchPlan plan;
    plan.batch_size = batch_size;
    plan.order.resize(dataset.size());
    std::iota(plan.order.begin(), plan.order.end(), 0);
    if (shuffle) {
        std::mt19937_64 rng(seed);
        std::shuffle(plan.order.begin(), plan.order.end(), rng);
    }
    return plan;
}

Batch gather_batch(const LabeledDataset& dataset, const BatchPlan& plan, int i) {
    auto [first, last] = plan.batch_range(i);
    Batch b;
    b.images.reserve(last - first);
    b.labels.reserve(last - first);
    for (int j = first; j < last; ++j) {
        b.images.push_back(dataset.images[plan.order[j]]);
        b.labels.push_back(dataset.labels[plan.order[j]]);
    }
    return b;
}

static std::string find_idx_file(const std::string& dir, const std::string& stem) {
    for (const char* suffix : {"", ".gz"}) {
        std::string path = dir + "/" + stem + suffix;
        if (std::FILE* f = std::fopen(path.c_str(), "rb")) {
            std::fclose(f);
            return path;
        }
    }
    throw MissingData("dataset file not found: " + dir + "/" + stem + "[.gz]");
}

LabeledDataset load_idx_dataset(const std::string& data_dir, bool train_split,
                                Split tag) {
    const char* img_stem = train_split ? "train-images-idx3-ubyte" : "t10k-images-idx3-ubyte";
    const char* lbl_stem = train_split ? "train-labels-idx1-ubyte" : "t10k-labels-idx1-ubyte";
    auto imgs = normalize(load_idx(read_file_auto(find_idx_file(data_dir, img_stem))));
    auto lbls = labels_from_idx(load_idx(read_file_auto(find_idx_file(data_dir, lbl_stem))));
    int k = 0;
    for (int l : lbls) k = std::max(k, l + 1);
    return make_dataset(std::move(imgs), std::move(lbls), tag, k);
}

} // namespace fcve
