#pragma once

#include "qndspin/analysis.hpp"
#include "qndspin/magnetometry.hpp"
#include "qndspin/probe.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <vector>

namespace qndspin::report {

/// Report document for analyze: "v0", "reference", "bins", "skipped_bins",
/// "fits", "cutoff_scan", "correlation", "residual_polarization".
nlohmann::json analysis_json(const analysis::DatasetAnalysis& a);

/// Columns C, xi2, xi2_stderr, n_selected; one row per scanned cutoff.
void write_cutoff_scan_csv(std::ostream& out, const analysis::DatasetAnalysis& a);
/// Columns n_atoms, v1_tilde, v2_tilde, v_cond_tilde; one row per bin.
void write_noise_scaling_csv(std::ostream& out, const analysis::DatasetAnalysis& a);

struct FidTrace {
    std::vector<magnetometry::FidSample> z;
    std::vector<magnetometry::FidSample> y;
};

/// Columns t_us, theta_rad, branch (z or y), any order.
FidTrace read_fid_csv(std::istream& in);
void write_fid_csv(std::ostream& out, const FidTrace& trace);
nlohmann::json field_estimate_json(const magnetometry::FieldEstimate& e);

/// Columns phi_rad, n_atoms, any order.
std::vector<probe::CalibrationPair> read_pairs_csv(std::istream& in);
void write_pairs_csv(std::ostream& out, const std::vector<probe::CalibrationPair>& pairs);
nlohmann::json calibration_json(const probe::G1Calibration& c);

}  // namespace qndspin::report
