#pragma once

#include <string>

#include "dsa/model.hpp"

namespace dsa {

// Everything that, together with the input files, determines a run.
// Serialized as flat "key = value" lines with dotted section names.
struct RunConfig {
    ModelConfig model;

    std::string optimizer = "adam";  // adam | adadelta
    double lr = 0.001;
    double l2 = 0.00001;
    double adadelta_rho = 0.9;

    double patience = 0.001;  // improvement margin for the halving schedule
    int patience_steps = 5;   // consecutive stalls before halving

    int batch_size = 256;
    int max_epochs = 10;
    double early_stop_acc = 0.0;  // >0: stop once eval-mode train accuracy reaches it

    std::string train_path;
    std::string eval_path;
    std::string vectors_path;
    double oov_bound = 0.005;

    unsigned long long seed = 42;
    int threads = 1;
    std::string precision = "double";  // double | single
    std::string output_dir = "run";

    void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string serialize_run_config(const RunConfig& cfg);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace dsa
