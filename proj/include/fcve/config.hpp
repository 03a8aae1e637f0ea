#ifndef FCVE_CONFIG_HPP
#define FCVE_CONFIG_HPP

#include <cstdint>
#include <string>

namespace fcve {

// Run configuration; `key = value` lines, '#' comments, unknown keys rejected.
struct RunConfig {
    std::string dataset = "mnist"; // mnist | fmnist
    std::string data_dir = "data";
    uint64_t seed = 7;
    int n = 64;
    int epochs_classifier = 10;
    int epochs_cfe = 8;
    int epochs_decoder = 5;
    int epochs_fid = 5; // FID feature extractor training
    double lr_classifier = 1e-3;
    double lr_cfe = 1e-3;
    double lr_decoder = 1e-3;
    double lambda_mc = 0.01;
    double lambda_mi = 0.01;
    int batch_size = 128;
    double val_fraction = 0.1;
    std::string output_dir = "out";
    int threads = 0; // 0 = hardware concurrency; results do not depend on it
};

RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);
void apply_config_line(RunConfig& cfg, const std::string& key,
                       const std::string& value, int line_no);
void validate_config(const RunConfig& cfg);
std::string config_to_string(const RunConfig& cfg);

} // namespace fcve

#endif
