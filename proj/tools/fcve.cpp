// Command-line driver for the counterfactual visual explanation pipeline:
// train-classifier / train-cfe / train-decoder / explain / evaluate /
// faithfulness. Exit codes: 0 ok, 2 config error, 3 missing prerequisite,
// 4 runtime or training failure.

#include <CLI11.hpp>
#include <cstdio>
#include <fcntl.h>
#include <filesystem>
#include <unistd.h>

#include "fcve/pipeline.hpp"
#include "fcve/pgm.hpp"
#include "fcve/util.hpp"

namespace fs = std::filesystem;
using namespace fcve;

namespace {

// single-writer guard on output_dir
class OutputLock {
public:
    explicit OutputLock(const std::string& dir) : path_(dir + "/.fcve.lock") {
        fs::create_directories(dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw Error("output_dir is locked by another run (remove " + path_ +
                        " if stale)");
    }
    ~OutputLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    OutputLock(const OutputLock&) = delete;
    OutputLock& operator=(const OutputLock&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

struct Cli {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;

    RunConfig resolve() const {
        RunConfig cfg =
            config_path.empty() ? RunConfig{} : load_config_file(config_path);
        for (const auto& [key, value] : overrides)
            apply_config_line(cfg, key, value, 0);
        validate_config(cfg);
        return cfg;
    }
};

void add_config_options(CLI::App* cmd, Cli& cli) {
    cmd->add_option("--config", cli.config_path, "config file (key = value lines)");
    static const char* keys[] = {
        "dataset",       "data_dir",        "seed",        "n",
        "epochs_classifier", "epochs_cfe",  "epochs_decoder", "epochs_fid",
        "lr_classifier", "lr_cfe",          "lr_decoder",  "lambda_mc",
        "lambda_mi",     "batch_size",      "val_fraction", "output_dir",
        "threads"};
    for (const char* key : keys) {
        std::string flag = "--" + std::string(key);
        std::replace(flag.begin(), flag.end(), '_', '-');
        cmd->add_option_function<std::string>(
            flag,
            [&cli, key](const std::string& v) { cli.overrides.emplace_back(key, v); },
            std::string("override config key ") + key);
    }
}

void echo_config(const RunConfig& cfg) {
    std::printf("resolved config:\n");
    std::string text = config_to_string(cfg);
    // indent for readability
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        std::printf("  %s\n", text.substr(pos, nl - pos).c_str());
        pos = nl + 1;
    }
}

ClassifierModel require_classifier(const RunConfig& cfg) {
    const auto paths = weight_paths(cfg);
    if (!fs::exists(paths.classifier))
        throw MissingWeights("missing classifier weights: " + paths.classifier +
                             " (run train-classifier first)");
    return load_classifier(paths.classifier, cfg);
}

CfeModel require_cfe(const RunConfig& cfg) {
    const auto paths = weight_paths(cfg);
    if (!fs::exists(paths.cfe))
        throw MissingWeights("missing cfe weights: " + paths.cfe +
                             " (run train-cfe first)");
    return load_cfe(paths.cfe, cfg);
}

DecoderModel require_decoder(const RunConfig& cfg) {
    const auto paths = weight_paths(cfg);
    if (!fs::exists(paths.decoder))
        throw MissingWeights("missing decoder weights: " + paths.decoder +
                             " (run train-decoder first)");
    return load_decoder(paths.decoder, cfg);
}

ClassifierModel ensure_fid_extractor(const RunConfig& cfg,
                                     const LabeledDataset& train) {
    const auto paths = weight_paths(cfg);
    if (fs::exists(paths.fid_extractor)) {
        RunConfig probe = cfg;
        return load_classifier(paths.fid_extractor, probe);
    }
    std::printf("training FID feature extractor (seed %llu, %d epochs)...\n",
                static_cast<unsigned long long>(cfg.seed + 101), cfg.epochs_fid);
    ClassifierModel ext = pipeline_train_fid_extractor(cfg, train);
    save_classifier(ext, paths.fid_extractor);
    return ext;
}

int cmd_train_classifier(const RunConfig& cfg) {
    OutputLock lock(cfg.output_dir);
    LabeledDataset full = load_split(cfg, true, Split::train);
    auto [train, val] = split_dataset(full, cfg.val_fraction, cfg.seed);
    std::printf("train %zu / val %zu examples, %d classes\n", train.size(),
                val.size(), train.class_count);
    ClassifierModel model = pipeline_train_classifier(cfg, train, &val);
    for (size_t e = 0; e < model.history.size(); ++e)
        std::printf("epoch %zu: train loss %.4f acc %.4f | val acc %.4f\n", e + 1,
                    model.history[e].train_loss, model.history[e].train_acc,
                    model.history[e].val_acc);
    const auto paths = weight_paths(cfg);
    save_classifier(model, paths.classifier);
    std::printf("saved %s\n", paths.classifier.c_str());
    try {
        LabeledDataset test = load_split(cfg, false, Split::test);
        auto ev = evaluate(model, test, {}, cfg.threads);
        std::printf("test accuracy: %.4f\n", ev.accuracy);
    } catch (const MissingData&) {
        std::printf("test files not found; skipping test evaluation\n");
    }
    return 0;
}

int cmd_train_cfe(const RunConfig& cfg) {
    OutputLock lock(cfg.output_dir);
    ClassifierModel classifier = require_classifier(cfg);
    LabeledDataset full = load_split(cfg, true, Split::train);
    auto [train, val] = split_dataset(full, cfg.val_fraction, cfg.seed);
    CfeTrainResult result = pipeline_train_cfe(cfg, classifier, train);
    for (size_t e = 0; e < result.history.size(); ++e)
        std::printf("epoch %zu: ce_mc %.4f ce_mi %.4f mask support %.1f\n", e + 1,
                    result.history[e].ce_mc, result.history[e].ce_mi,
                    result.history[e].mask_support);
    const double validity = mc_validity(result.model, classifier, val, cfg.threads);
    std::printf("mc validity on val: %.4f\n", validity);
    const auto paths = weight_paths(cfg);
    save_cfe(result.model, paths.cfe);
    std::printf("saved %s\n", paths.cfe.c_str());
    return 0;
}

int cmd_train_decoder(const RunConfig& cfg) {
    OutputLock lock(cfg.output_dir);
    ClassifierModel classifier = require_classifier(cfg);
    LabeledDataset full = load_split(cfg, true, Split::train);
    auto [train, val] = split_dataset(full, cfg.val_fraction, cfg.seed);
    DecoderModel decoder = pipeline_train_decoder(cfg, classifier, train);
    for (size_t e = 0; e < decoder.train_mae_history.size(); ++e)
        std::printf("epoch %zu: train MAE %.4f\n", e + 1,
                    decoder.train_mae_history[e]);
    std::printf("val reconstruction MAE: %.4f\n",
                reconstruction_mae(classifier, decoder, val, cfg.threads));
    const auto paths = weight_paths(cfg);
    save_decoder(decoder, paths.decoder);
    std::printf("saved %s\n", paths.decoder.c_str());
    return 0;
}

int cmd_explain(const RunConfig& cfg, int source_class, int target_class,
                int count, const std::string& mode_name) {
    OutputLock lock(cfg.output_dir);
    ClassifierModel classifier = require_classifier(cfg);
    CfeModel cfe = require_cfe(cfg);
    DecoderModel decoder = require_decoder(cfg);
    LabeledDataset test = load_split(cfg, false, Split::test);
    const CfMode mode =
        mode_name == "mi-only" ? CfMode::mi_only : CfMode::combined;

    // correctly classified members of the source class, deterministic order
    MatX<float> pooled = pooled_features(classifier, test, cfg.threads);
    std::vector<int> members;
    for (size_t i = 0; i < test.size(); ++i) {
        if (test.labels[i] != source_class) continue;
        std::vector<float> g(pooled.col(i).data(), pooled.col(i).data() + cfg.n);
        if (head_prediction(classifier, g).class_index == source_class)
            members.push_back(static_cast<int>(i));
    }
    if (members.empty())
        throw NoClassExamples("explain: no correctly classified source-class images");
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xE8));
    std::shuffle(members.begin(), members.end(), rng);
    if (static_cast<int>(members.size()) > count) members.resize(count);

    std::vector<Image> sources;
    std::vector<int> targets(members.size(), target_class);
    for (int idx : members) sources.push_back(test.images[idx]);
    auto explanations = generate_counterfactuals(classifier, cfe, decoder, sources,
                                                 targets, mode, cfg.threads);

    std::vector<std::vector<Image>> grid;
    std::vector<Image> counterfactuals;
    for (const auto& e : explanations) {
        grid.push_back({e.source, e.reconstruction, e.contrastive, e.counterfactual});
        counterfactuals.push_back(e.counterfactual);
    }
    const std::string grid_path = cfg.output_dir + "/explain_grid.pgm";
    write_image_grid(grid, grid_path);
    const std::string report_path = cfg.output_dir + "/explain_metrics.txt";
    write_kv_report(report_path,
                    {{"source_class", std::to_string(source_class)},
                     {"target_class", std::to_string(target_class)},
                     {"count", std::to_string(explanations.size())},
                     {"flip_rate", format_double(flip_rate(explanations))},
                     {"proximity", format_double(proximity(sources, counterfactuals))}});
    std::printf("wrote %s and %s\n", grid_path.c_str(), report_path.c_str());
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, int count, const std::string& mode_name,
                 const std::string& extractor_path) {
    OutputLock lock(cfg.output_dir);
    ClassifierModel classifier = require_classifier(cfg);
    CfeModel cfe = require_cfe(cfg);
    DecoderModel decoder = require_decoder(cfg);
    LabeledDataset test = load_split(cfg, false, Split::test);
    const CfMode mode =
        mode_name == "mi-only" ? CfMode::mi_only : CfMode::combined;

    ClassifierModel extractor = [&] {
        if (!extractor_path.empty()) return load_classifier(extractor_path, cfg);
        LabeledDataset full = load_split(cfg, true, Split::train);
        auto [train, val] = split_dataset(full, cfg.val_fraction, cfg.seed);
        return ensure_fid_extractor(cfg, train);
    }();

    EvalMetrics m = evaluate_explanations(classifier, cfe, decoder, extractor, test,
                                          count, cfg.seed, mode, cfg.threads);
    const std::string csv_path = cfg.output_dir + "/metrics.csv";
    write_metrics_csv(csv_path, cfg.dataset,
                      {{"proximity", m.proximity_value},
                       {"fid", m.fid_value},
                       {"flip_rate", m.flip}});
    const std::string report_path = cfg.output_dir + "/evaluate_report.txt";
    write_kv_report(report_path, {{"pairs", std::to_string(m.pairs)},
                                  {"proximity", format_double(m.proximity_value)},
                                  {"fid", format_double(m.fid_value)},
                                  {"flip_rate", format_double(m.flip)}});
    std::printf("pairs %d | proximity %.4f | fid %.4f | flip_rate %.4f\n", m.pairs,
                m.proximity_value, m.fid_value, m.flip);
    std::printf("wrote %s and %s\n", csv_path.c_str(), report_path.c_str());
    return 0;
}

int cmd_faithfulness(const RunConfig& cfg, int class_index, int k, int trials) {
    OutputLock lock(cfg.output_dir);
    ClassifierModel classifier = require_classifier(cfg);
    CfeModel cfe = require_cfe(cfg);
    LabeledDataset test = load_split(cfg, false, Split::test);
    if (k <= 0) k = std::max(1, static_cast<int>(std::lround(0.1 * cfg.n)));
    FaithfulnessReport rep = faithfulness_study(classifier, cfe, test, class_index,
                                                k, trials, cfg.seed, cfg.threads);
    std::string filters;
    for (size_t i = 0; i < rep.targeted_filters.size(); ++i)
        filters += (i ? " " : "") + std::to_string(rep.targeted_filters[i]);
    const std::string report_path = cfg.output_dir + "/faithfulness_report.txt";
    write_kv_report(
        report_path,
        {{"class_index", std::to_string(rep.class_index)},
         {"k", std::to_string(rep.k)},
         {"trials", std::to_string(rep.trials)},
         {"baseline_recall", format_double(rep.baseline_recall)},
         {"baseline_accuracy", format_double(rep.baseline_accuracy)},
         {"targeted_recall_drop_points", format_double(rep.targeted_recall_drop)},
         {"random_recall_drop_points", format_double(rep.random_recall_drop)},
         {"accuracy_drop_points", format_double(rep.accuracy_drop)},
         {"targeted_filters", filters}});
    write_metrics_csv(cfg.output_dir + "/faithfulness.csv", cfg.dataset,
                      {{"targeted_recall_drop_points", rep.targeted_recall_drop},
                       {"random_recall_drop_points", rep.random_recall_drop},
                       {"accuracy_drop_points", rep.accuracy_drop}});
    std::printf("class %d k=%d: targeted drop %.1f pts, random drop %.1f pts, "
                "accuracy drop %.1f pts\n",
                rep.class_index, rep.k, rep.targeted_recall_drop,
                rep.random_recall_drop, rep.accuracy_drop);
    std::printf("wrote %s\n", report_path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"counterfactual visual explanations for small CNN classifiers"};
    app.require_subcommand(1);

    Cli cli;
    int source_class = 7, target_class = 9, count = 6;
    int eval_count = 500;
    int fclass = 7, fk = 0, ftrials = 10;
    std::string cf_mode = "combined", extractor_path;

    auto* tc = app.add_subcommand("train-classifier", "train the classifier");
    add_config_options(tc, cli);
    auto* tf = app.add_subcommand("train-cfe", "train the MC/MI filter predictor");
    add_config_options(tf, cli);
    auto* td = app.add_subcommand("train-decoder", "train the reconstruction decoder");
    add_config_options(td, cli);

    auto* ex = app.add_subcommand("explain", "write a counterfactual image grid");
    add_config_options(ex, cli);
    ex->add_option("--source-class", source_class, "source class index");
    ex->add_option("--target-class", target_class, "counterfactual target class");
    ex->add_option("--count", count, "number of rows");
    ex->add_option("--cf-mode", cf_mode, "counterfactual rendering: combined|mi-only")
        ->check(CLI::IsMember({"combined", "mi-only"}));

    auto* ev = app.add_subcommand("evaluate", "proximity / FID / flip-rate table");
    add_config_options(ev, cli);
    ev->add_option("--count", eval_count, "number of (source,target) pairs");
    ev->add_option("--cf-mode", cf_mode, "counterfactual rendering: combined|mi-only")
        ->check(CLI::IsMember({"combined", "mi-only"}));
    ev->add_option("--fid-extractor", extractor_path,
                   "weights file of a custom FID feature extractor");

    auto* fa = app.add_subcommand("faithfulness", "filter-ablation recall study");
    add_config_options(fa, cli);
    fa->add_option("--class", fclass, "class index to ablate");
    fa->add_option("--k", fk, "filters to disable (default: 10% of n)");
    fa->add_option("--trials", ftrials, "random-subset trials");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg = cli.resolve();
        echo_config(cfg);
        if (tc->parsed()) return cmd_train_classifier(cfg);
        if (tf->parsed()) return cmd_train_cfe(cfg);
        if (td->parsed()) return cmd_train_decoder(cfg);
        if (ex->parsed())
            return cmd_explain(cfg, source_class, target_class, count, cf_mode);
        if (ev->parsed()) return cmd_evaluate(cfg, eval_count, cf_mode, extractor_path);
        if (fa->parsed()) return cmd_faithfulness(cfg, fclass, fk, ftrials);
        return 2;
    } catch (const UnknownKey& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const BadValue& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const MissingWeights& e) {
        std::fprintf(stderr, "missing prerequisite: %s\n", e.what());
        return 3;
    } catch (const MissingData& e) {
        std::fprintf(stderr, "missing prerequisite: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}
