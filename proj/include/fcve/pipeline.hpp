#ifndef FCVE_PIPELINE_HPP
#define FCVE_PIPELINE_HPP

#include <string>
#include <utility>
#include <vector>

#include "fcve/cfe.hpp"
#include "fcve/classifier.hpp"
#include "fcve/config.hpp"
#include "fcve/decoder.hpp"
#include "fcve/metrics.hpp"
#include "fcve/model_store.hpp"

namespace fcve {

// fixed weight-file names inside output_dir; stage ordering is enforced by
// their presence
struct WeightPaths {
    std::string classifier, cfe, decoder, fid_extractor;
};
WeightPaths weight_paths(const RunConfig& cfg);

// data_dir may point at the IDX files directly or at a parent holding a
// per-dataset subdirectory named after cfg.dataset
LabeledDataset load_split(const RunConfig& cfg, bool train_files, Split tag);

ModelStore pack_to_store(const ParamPack<float>& pack);
void pack_from_store(const ModelStore& store, ParamPack<float>& pack);

void save_classifier(const ClassifierModel& model, const std::string& path);
ClassifierModel load_classifier(const std::string& path, const RunConfig& cfg);
void save_cfe(const CfeModel& model, const std::string& path);
CfeModel load_cfe(const std::string& path, const RunConfig& cfg);
void save_decoder(const DecoderModel& model, const std::string& path);
DecoderModel load_decoder(const std::string& path, const RunConfig& cfg);

ClassifierModel pipeline_train_classifier(const RunConfig& cfg,
                                          const LabeledDataset& train,
                                          const LabeledDataset* val);
// held-out seed variant backing the default FID feature extractor
ClassifierModel pipeline_train_fid_extractor(const RunConfig& cfg,
                                             const LabeledDataset& train);
CfeTrainResult pipeline_train_cfe(const RunConfig& cfg,
                                  const ClassifierModel& classifier,
                                  const LabeledDataset& train);
DecoderModel pipeline_train_decoder(const RunConfig& cfg,
                                    const ClassifierModel& classifier,
                                    const LabeledDataset& train);

// Deterministically samples correctly classified test images and uniform
// targets != inferred class.
struct PairSample {
    std::vector<Image> sources;
    std::vector<int> source_labels;
    std::vector<int> targets;
};
PairSample sample_counterfactual_pairs(const ClassifierModel& classifier,
                                       const LabeledDataset& test, int count,
                                       uint64_t seed, int threads = 0);

struct EvalMetrics {
    double proximity_value = 0;
    double flip = 0;
    double fid_value = 0;
    int pairs = 0;
};
EvalMetrics evaluate_explanations(const ClassifierModel& classifier,
                                  const CfeModel& cfe, const DecoderModel& decoder,
                                  const ClassifierModel& fid_extractor,
                                  const LabeledDataset& test, int count,
                                  uint64_t seed, CfMode mode, int threads = 0);

// report writers (key: value text, and the fixed-header csv table)
void write_kv_report(const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& rows);
void write_metrics_csv(const std::string& path, const std::string& dataset,
                       const std::vector<std::pair<std::string, double>>& rows);
std::string format_double(double v);

} // namespace fcve

#endif
