#pragma once

#include "qndspin/config.hpp"

#include <exception>
#include <filesystem>
#include <iosfwd>

namespace qndspin::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

/// Exit code for an exception escaping a subcommand.
int exit_code(const std::exception& e);

/// shots.csv and provenance.json in `out_dir`.
void cmd_simulate(const config::RunConfig& cfg, const std::filesystem::path& out_dir);
/// report.json, cutoff_scan.csv and noise_scaling.csv in `out_dir`.
void cmd_analyze(const std::filesystem::path& dataset, const config::RunConfig& cfg,
                 const std::filesystem::path& out_dir);
/// fid_estimate.json in `out_dir`; on a failed fit, fidfit.log and rethrow.
void cmd_fidfit(const std::filesystem::path& samples, const config::RunConfig& cfg,
                const std::filesystem::path& out_dir);
/// g1_calibration.json in `out_dir`.
void cmd_calibrate(const std::filesystem::path& pairs, const config::RunConfig& cfg,
                   const std::filesystem::path& out_dir);

/// Command-line entry point. Diagnostics go to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qndspin::cli
