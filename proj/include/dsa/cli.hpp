#pragma once

#include <iosfwd>
#include <string>

#include "dsa/config.hpp"

namespace dsa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;  // configuration or usage problems
inline constexpr int kExitData = 3;    // data, format, or I/O problems

int run_train(const RunConfig& cfg, std::ostream& out, std::ostream& err);
int run_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& report_path,
             std::ostream& out, std::ostream& err);
int run_encode(const std::string& ckpt_path, const std::string& in_path, const std::string& out_path,
               std::ostream& out, std::ostream& err);
int run_analyze(const std::string& ckpt_path, const std::string& in_path, const std::string& mode,
                const std::string& out_dir, std::ostream& out, std::ostream& err);
int run_params(const std::string& config_path, std::ostream& out, std::ostream& err);

// Full argv entry point (subcommand parsing + exit-code mapping).
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dsa::cli
