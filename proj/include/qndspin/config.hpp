#pragma once

#include "qndspin/analysis.hpp"
#include "qndspin/sequence.hpp"
#include "qndspin/spin.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace qndspin::config {

/// Everything a run needs. Defaults reproduce the experiment's regime.
struct RunConfig {
    spin::PhysicalConstants constants;
    sequence::SequenceConfig sequence;
    sequence::CampaignConfig campaign;
    analysis::AnalysisOptions analysis;
    std::string output_dir = "out";
    int workers = 1;
};

/// Cutoff grid "start:stop:step", inclusive of stop.
std::vector<double> parse_range(const std::string& spec);

/// Default cutoff scan, 0.25 to 3.0 in steps of 0.25.
std::vector<double> default_cutoff_scan();

/// Builds a RunConfig from JSON. Unknown keys and invalid values are all
/// reported together in one ConfigError, one diagnostic per line. A
/// provenance record ({"config": ..., "provenance": ...}) is accepted too.
RunConfig from_json(const nlohmann::json& j);
RunConfig load(const std::filesystem::path& path);

/// Fully resolved config; from_json(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& c);

/// Analysis options with probe, f and detector noise taken from the sequence.
analysis::AnalysisOptions resolved_analysis(const RunConfig& c);

}  // namespace qndspin::config
