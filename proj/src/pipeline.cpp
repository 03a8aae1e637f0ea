#include "fcve/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <random>

#include "fcve/util.hpp"

namespace fcve {

WeightPaths weight_paths(const RunConfig& cfg) {
    WeightPaths p;
    p.classifier = cfg.output_dir + "/classifier.fcvw";
    p.cfe = cfg.output_dir + "/cfe.fcvw";
    p.decoder = cfg.output_dir + "/decoder.fcvw";
    p.fid_extractor = cfg.output_dir + "/fid_extractor.fcvw";
    return p;
}

LabeledDataset load_split(const RunConfig& cfg, bool train_files, Split tag) {
    const std::string nested = cfg.data_dir + "/" + cfg.dataset;
    if (std::filesystem::is_directory(nested))
        return load_idx_dataset(nested, train_files, tag);
    return load_idx_dataset(cfg.data_dir, train_files, tag);
}

ModelStore pack_to_store(const ParamPack<float>& pack) {
    ModelStore store;
    for (const auto& info : pack.infos) {
        std::vector<float> data(pack.theta.begin() + info.offset,
                                pack.theta.begin() + info.offset + info.count);
        store.put(info.name, info.dims, std::move(data));
    }
    return store;
}

void pack_from_store(const ModelStore& store, ParamPack<float>& pack) {
    for (const auto& info : pack.infos) {
        const StoredTensor& t = store.get(info.name);
        if (t.dims != info.dims)
            throw ShapeMismatch("stored tensor " + info.name +
                                " does not match the configured architecture");
        std::copy(t.data.begin(), t.data.end(), pack.theta.begin() + info.offset);
    }
}

void save_classifier(const ClassifierModel& model, const std::string& path) {
    save_weights(pack_to_store(model.params), path);
}

ClassifierModel load_classifier(const std::string& path, const RunConfig& cfg) {
    ModelStore store = load_weights(path);
    const int k = store.get("classifier.head.b").dims[0];
    ClassifierModel model = make_classifier<float>(cfg.n, k, cfg.seed);
    pack_from_store(store, model.params);
    model.trained = true;
    return model;
}

void save_cfe(const CfeModel& model, const std::string& path) {
    save_weights(pack_to_store(model.params), path);
}

CfeModel load_cfe(const std::string& path, const RunConfig& cfg) {
    ModelStore store = load_weights(path);
    const int k = static_cast<int>(store.get("cfe.mc_head.w").dims[0]) - cfg.n;
    CfeModel model = make_cfe<float>(cfg.n, k, cfg.seed,
                                     static_cast<float>(cfg.lambda_mc),
                                     static_cast<float>(cfg.lambda_mi));
    pack_from_store(store, model.params);
    model.trained = true;
    return model;
}

void save_decoder(const DecoderModel& model, const std::string& path) {
    save_weights(pack_to_store(model.params), path);
}

DecoderModel load_decoder(const std::string& path, const RunConfig& cfg) {
    ModelStore store = load_weights(path);
    DecoderModel model = make_decoder<float>(cfg.n, 4, cfg.seed);
    pack_from_store(store, model.params);
    model.trained = true;
    return model;
}

ClassifierModel pipeline_train_classifier(const RunConfig& cfg,
                                          const LabeledDataset& train,
                                          const LabeledDataset* val) {
    TrainOptions opts;
    opts.epochs = cfg.epochs_classifier;
    opts.lr = static_cast<float>(cfg.lr_classifier);
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    return train_classifier(train, val, cfg.n, opts);
}

ClassifierModel pipeline_train_fid_extractor(const RunConfig& cfg,
                                             const LabeledDataset& train) {
    TrainOptions opts;
    opts.epochs = cfg.epochs_fid;
    opts.lr = static_cast<float>(cfg.lr_classifier);
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed + 101; // held-out seed, disjoint from the pipeline seed
    opts.threads = cfg.threads;
    return train_classifier(train, nullptr, cfg.n, opts);
}

CfeTrainResult pipeline_train_cfe(const RunConfig& cfg,
                                  const ClassifierModel& classifier,
                                  const LabeledDataset& train) {
    CfeModel cfe = make_cfe<float>(cfg.n, classifier.class_count, cfg.seed,
                                   static_cast<float>(cfg.lambda_mc),
                                   static_cast<float>(cfg.lambda_mi));
    CfeTrainOptions opts;
    opts.epochs = cfg.epochs_cfe;
    opts.lr = static_cast<float>(cfg.lr_cfe);
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    return train_cfe(std::move(cfe), classifier, train, opts);
}

DecoderModel pipeline_train_decoder(const RunConfig& cfg,
                                    const ClassifierModel& classifier,
                                    const LabeledDataset& train) {
    DecoderModel dec = make_decoder<float>(cfg.n, classifier.conv_depth(), cfg.seed);
    DecoderTrainOptions opts;
    opts.epochs = cfg.epochs_decoder;
    opts.lr = static_cast<float>(cfg.lr_decoder);
    opts.batch_size = cfg.batch_size;
    opts.seed = cfg.seed;
    opts.threads = cfg.threads;
    return train_decoder(std::move(dec), classifier, train, opts);
}

PairSample sample_counterfactual_pairs(const ClassifierModel& classifier,
                                       const LabeledDataset& test, int count,
                                       uint64_t seed, int threads) {
    if (test.empty()) throw EmptyDataset("sample_counterfactual_pairs: empty dataset");
    MatX<float> pooled = pooled_features(classifier, test, threads);
    const int k = classifier.class_count;
    MapConstMat<float> wh(classifier.p(classifier.wh), k, classifier.n);
    MatX<float> lg = wh * pooled;
    lg.colwise() += Eigen::Map<const VecX<float>>(classifier.p(classifier.bh), k);

    std::vector<int> correct;
    for (int i = 0; i < lg.cols(); ++i) {
        int arg = 0;
        for (int j = 1; j < k; ++j)
            if (lg(j, i) > lg(arg, i)) arg = j;
        if (arg == test.labels[i]) correct.push_back(i);
    }
    std::mt19937_64 rng(mix_seed(seed, 0xE7A1));
    std::shuffle(correct.begin(), correct.end(), rng);
    if (static_cast<int>(correct.size()) > count) correct.resize(count);

    PairSample out;
    std::uniform_int_distribution<int> pick(0, k - 2);
    for (int idx : correct) {
        out.sources.push_back(test.images[idx]);
        out.source_labels.push_back(test.labels[idx]);
        int t = pick(rng);
        out.targets.push_back(t >= test.labels[idx] ? t + 1 : t);
    }
    return out;
}

EvalMetrics evaluate_explanations(const ClassifierModel& classifier,
                                  const CfeModel& cfe, const DecoderModel& decoder,
                                  const ClassifierModel& fid_extractor,
                                  const LabeledDataset& test, int count,
                                  uint64_t seed, CfMode mode, int threads) {
    PairSample pairs =
        sample_counterfactual_pairs(classifier, test, count, seed, threads);
    auto explanations = generate_counterfactuals(
        classifier, cfe, decoder, pairs.sources, pairs.targets, mode, threads);

    EvalMetrics m;
    m.pairs = static_cast<int>(explanations.size());
    std::vector<Image> counterfactuals;
    counterfactuals.reserve(explanations.size());
    for (const auto& e : explanations) counterfactuals.push_back(e.counterfactual);
    m.proximity_value = proximity(pairs.sources, counterfactuals);
    m.flip = flip_rate(explanations);

    MatX<float> cf_feat =
        pooled_features_images(fid_extractor, counterfactuals, threads);
    MatX<float> real_feat = pooled_features(fid_extractor, test, threads);
    m.fid_value = fid(distribution_stats_cols(cf_feat),
                      distribution_stats_cols(real_feat));
    return m;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

void write_kv_report(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write report: " + path);
    for (const auto& [key, value] : rows)
        std::fprintf(f, "%s: %s\n", key.c_str(), value.c_str());
    std::fclose(f);
}

void write_metrics_csv(const std::string& path, const std::string& dataset,
                       const std::vector<std::pair<std::string, double>>& rows) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw Error("cannot write metrics table: " + path);
    std::fprintf(f, "metric,dataset,value\n");
    for (const auto& [metric, value] : rows)
        std::fprintf(f, "%s,%s,%s\n", metric.c_str(), dataset.c_str(),
                     format_double(value).c_str());
    std::fclose(f);
}

} // namespace fcve
