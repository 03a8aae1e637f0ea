#include "fcve/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fcve/errors.hpp"

namespace fcve {

static std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

static std::string at_line(int line_no) {
    return line_no > 0 ? " (line " + std::to_string(line_no) + ")" : "";
}

template <typename T>
static T parse_number(const std::string& key, const std::string& value, int line_no) {
    std::istringstream ss(value);
    T out;
    ss >> out;
    std::string rest;
    if (ss.fail() || (ss >> rest && !rest.empty()))
        throw BadValue("bad value for " + key + ": '" + value + "'" + at_line(line_no));
    return out;
}

void apply_config_line(RunConfig& cfg, const std::string& key,
                       const std::string& value, int line_no) {
    auto positive_int = [&](const char* name) {
        int v = parse_number<int>(name, value, line_no);
        if (v < 1) throw BadValue(std::string(name) + " must be >= 1" + at_line(line_no));
        return v;
    };
    auto positive_real = [&](const char* name) {
        double v = parse_number<double>(name, value, line_no);
        if (!(v > 0)) throw BadValue(std::string(name) + " must be > 0" + at_line(line_no));
        return v;
    };
    auto nonneg_real = [&](const char* name) {
        double v = parse_number<double>(name, value, line_no);
        if (v < 0) throw BadValue(std::string(name) + " must be >= 0" + at_line(line_no));
        return v;
    };

    if (key == "dataset") {
        if (value != "mnist" && value != "fmnist")
            throw BadValue("dataset must be mnist or fmnist" + at_line(line_no));
        cfg.dataset = value;
    } else if (key == "data_dir") {
        cfg.data_dir = value;
    } else if (key == "output_dir") {
        cfg.output_dir = value;
    } else if (key == "seed") {
        cfg.seed = parse_number<uint64_t>("seed", value, line_no);
    } else if (key == "n") {
        cfg.n = positive_int("n");
    } else if (key == "epochs_classifier") {
        cfg.epochs_classifier = positive_int("epochs_classifier");
    } else if (key == "epochs_cfe") {
        cfg.epochs_cfe = positive_int("epochs_cfe");
    } else if (key == "epochs_decoder") {
        cfg.epochs_decoder = positive_int("epochs_decoder");
    } else if (key == "epochs_fid") {
        cfg.epochs_fid = positive_int("epochs_fid");
    } else if (key == "lr_classifier") {
        cfg.lr_classifier = positive_real("lr_classifier");
    } else if (key == "lr_cfe") {
        cfg.lr_cfe = positive_real("lr_cfe");
    } else if (key == "lr_decoder") {
        cfg.lr_decoder = positive_real("lr_decoder");
    } else if (key == "lambda_mc") {
        cfg.lambda_mc = nonneg_real("lambda_mc");
    } else if (key == "lambda_mi") {
        cfg.lambda_mi = nonneg_real("lambda_mi");
    } else if (key == "batch_size") {
        cfg.batch_size = positive_int("batch_size");
    } else if (key == "val_fraction") {
        double v = parse_number<double>("val_fraction", value, line_no);
        if (!(v > 0.0 && v < 1.0))
            throw BadValue("val_fraction must be in (0,1)" + at_line(line_no));
        cfg.val_fraction = v;
    } else if (key == "threads") {
        int v = parse_number<int>("threads", value, line_no);
        if (v < 0) throw BadValue("threads must be >= 0" + at_line(line_no));
        cfg.threads = v;
    } else {
        throw UnknownKey("unknown config key: " + key + at_line(line_no));
    }
}

void validate_config(const RunConfig& cfg) {
    RunConfig probe = cfg; // reuse the per-key validators
    apply_config_line(probe, "dataset", cfg.dataset, 0);
    apply_config_line(probe, "n", std::to_string(cfg.n), 0);
    apply_config_line(probe, "batch_size", std::to_string(cfg.batch_size), 0);
    if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0))
        throw BadValue("val_fraction must be in (0,1)");
    if (cfg.epochs_classifier < 1 || cfg.epochs_cfe < 1 || cfg.epochs_decoder < 1 ||
        cfg.epochs_fid < 1)
        throw BadValue("epoch counts must be >= 1");
    if (!(cfg.lr_classifier > 0 && cfg.lr_cfe > 0 && cfg.lr_decoder > 0))
        throw BadValue("learning rates must be > 0");
    if (cfg.lambda_mc < 0 || cfg.lambda_mi < 0)
        throw BadValue("sparsity weights must be >= 0");
    if (cfg.threads < 0) throw BadValue("threads must be >= 0");
}

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (size_t hash = line.find('#'); hash != std::string::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw BadValue("expected 'key = value'" + at_line(line_no));
        apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)),
                          line_no);
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw BadValue("cannot open config file: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config(ss.str());
}

std::string config_to_string(const RunConfig& cfg) {
    std::ostringstream s;
    s << "dataset = " << cfg.dataset << "\n"
      << "data_dir = " << cfg.data_dir << "\n"
      << "seed = " << cfg.seed << "\n"
      << "n = " << cfg.n << "\n"
      << "epochs_classifier = " << cfg.epochs_classifier << "\n"
      << "epochs_cfe = " << cfg.epochs_cfe << "\n"
      << "epochs_decoder = " << cfg.epochs_decoder << "\n"
      << "epochs_fid = " << cfg.epochs_fid << "\n"
      << "lr_classifier = " << cfg.lr_classifier << "\n"
      << "lr_cfe = " << cfg.lr_cfe << "\n"
      << "lr_decoder = " << cfg.lr_decoder << "\n"
      << "lambda_mc = " << cfg.lambda_mc << "\n"
      << "lambda_mi = " << cfg.lambda_mi << "\n"
      << "batch_size = " << cfg.batch_size << "\n"
      << "val_fraction = " << cfg.val_fraction << "\n"
      << "output_dir = " << cfg.output_dir << "\n"
      << "threads = " << cfg.threads << "\n";
    return s.str();
}

} // namespace fcve
