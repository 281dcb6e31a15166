#include "qndspin/config.hpp"

#include "qndspin/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace qndspin::config {

using nlohmann::json;

namespace {

// Collects every problem in a config before failing.
class Reader {
public:
    void fail(const std::string& path, const std::string& msg) {
        errors_.push_back(path + ": " + msg);
    }

    // Returns the object at `key` (or null) after rejecting unknown keys.
    const json* section(const json& parent, const std::string& key, const std::string& path,
                        const std::set<std::string>& allowed) {
        if (!parent.contains(key)) return nullptr;
        const json& s = parent.at(key);
        const std::string p = path.empty() ? key : path + "." + key;
        if (!s.is_object()) {
            fail(p, "expected an object");
            return nullptr;
        }
        check_keys(s, p, allowed);
        return &s;
    }

    void check_keys(const json& obj, const std::string& path, const std::set<std::string>& allowed) {
        for (const auto& [k, v] : obj.items())
            if (!allowed.count(k)) fail(path.empty() ? k : path + "." + k, "unknown key");
    }

    void number(const json* obj, const std::string& key, const std::string& path, double& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_number()) return fail(path + "." + key, "expected a number");
        out = v.get<double>();
        if (!std::isfinite(out)) fail(path + "." + key, "must be finite");
    }

    template <class Int>
    void integer(const json* obj, const std::string& key, const std::string& path, Int& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_number_integer()) return fail(path + "." + key, "expected an integer");
        if constexpr (std::is_unsigned_v<Int>) {
            if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0)
                out = v.get<Int>();
            else
                fail(path + "." + key, "must be >= 0");
        } else {
            out = v.get<Int>();
        }
    }

    void boolean(const json* obj, const std::string& key, const std::string& path, bool& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_boolean()) return fail(path + "." + key, "expected true or false");
        out = v.get<bool>();
    }

    void string(const json* obj, const std::string& key, const std::string& path, std::string& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_string()) return fail(path + "." + key, "expected a string");
        out = v.get<std::string>();
    }

    void vec3(const json* obj, const std::string& key, const std::string& path, Vec3& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_array() || v.size() != 3) return fail(path + "." + key, "expected [x, y, z]");
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_number()) return fail(path + "." + key, "expected numbers");
            out[i] = v[i].get<double>();
        }
    }

    void mat3(const json* obj, const std::string& key, const std::string& path, Mat3& out) {
        if (!obj || !obj->contains(key)) return;
        const json& v = obj->at(key);
        if (!v.is_array() || v.size() != 3) return fail(path + "." + key, "expected a 3x3 array");
        for (int i = 0; i < 3; ++i) {
            if (!v[i].is_array() || v[i].size() != 3)
                return fail(path + "." + key, "expected a 3x3 array");
            for (int j = 0; j < 3; ++j) {
                if (!v[i][j].is_number()) return fail(path + "." + key, "expected numbers");
                out(i, j) = v[i][j].get<double>();
            }
        }
    }

    template <class Fn>
    void check(const std::string& path, Fn&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            fail(path, e.what());
        }
    }

    void finish() const {
        if (errors_.empty()) return;
        std::string msg = fmt::format("invalid config ({} problem{}):", errors_.size(),
                                      errors_.size() == 1 ? "" : "s");
        for (const auto& e : errors_) msg += "\n  " + e;
        throw ConfigError(msg);
    }

private:
    std::vector<std::string> errors_;
};

json to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

json to_json(const Mat3& m) {
    json out = json::array();
    for (int i = 0; i < 3; ++i) out.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
    return out;
}

}  // namespace

std::vector<double> parse_range(const std::string& spec) {
    std::vector<double> parts;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ':')) {
        try {
            std::size_t used = 0;
            parts.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(fmt::format("cutoff scan '{}': '{}' is not a number", spec, item));
        }
    }
    if (parts.size() != 3) throw ConfigError(fmt::format("cutoff scan '{}': expected start:stop:step", spec));
    const double start = parts[0], stop = parts[1], step = parts[2];
    if (!(step > 0.0) || stop < start)
        throw ConfigError(fmt::format("cutoff scan '{}': need step > 0 and stop >= start", spec));
    std::vector<double> out;
    const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
    for (long i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
    return out;
}

std::vector<double> default_cutoff_scan() { return parse_range("0.25:3.0:0.25"); }

RunConfig from_json(const json& input) {
    if (!input.is_object()) throw ConfigError("config must be a JSON object");
    const json& j = (input.contains("config") && input.contains("provenance")) ? input.at("config") : input;
    if (!j.is_object()) throw ConfigError("config must be a JSON object");

    RunConfig c;
    c.analysis.cutoff_scan = default_cutoff_scan();
    Reader r;
    r.check_keys(j, "", {"master_seed", "output_dir", "workers", "constants", "field", "probe",
                         "sequence", "campaign", "analysis"});
    if (j.contains("master_seed")) {
        const json& seed = j["master_seed"];
        if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<std::int64_t>() < 0))
            r.fail("master_seed", "expected a non-negative integer");
        else
            c.campaign.master_seed = j["master_seed"].get<std::uint64_t>();
    }
    r.string(&j, "output_dir", "", c.output_dir);
    r.integer(&j, "workers", "", c.workers);
    if (c.workers < 1) r.fail("workers", "must be >= 1");

    if (const json* s = r.section(j, "constants", "", {"wavelength_m", "interaction_area_m2"})) {
        r.number(s, "wavelength_m", "constants", c.constants.wavelength);
        r.number(s, "interaction_area_m2", "constants", c.constants.interaction_area);
    }
    if (!(c.constants.wavelength > 0.0)) r.fail("constants.wavelength_m", "must be > 0");
    if (!(c.constants.interaction_area > 0.0)) r.fail("constants.interaction_area_m2", "must be > 0");

    auto& seq = c.sequence;
    if (const json* s = r.section(j, "field", "", {"b_gauss", "gyromagnetic_ratio"})) {
        r.vec3(s, "b_gauss", "field", seq.field.b);
        r.number(s, "gyromagnetic_ratio", "field", seq.field.gyromagnetic_ratio);
    }
    if (const json* s = r.section(j, "probe", "",
                                  {"g1", "g2", "n_photons", "pulse_duration_s", "efficiency",
                                   "readout_sigma_override", "transverse_backaction"})) {
        r.number(s, "g1", "probe", seq.probe.g1);
        r.number(s, "g2", "probe", seq.probe.g2);
        r.number(s, "n_photons", "probe", seq.probe.n_photons);
        r.number(s, "pulse_duration_s", "probe", seq.probe.pulse_duration);
        r.number(s, "efficiency", "probe", seq.probe.efficiency);
        if (s->contains("readout_sigma_override") && !s->at("readout_sigma_override").is_null()) {
            double v = 0.0;
            r.number(s, "readout_sigma_override", "probe", v);
            seq.probe.readout_sigma_override = v;
        }
        r.boolean(s, "transverse_backaction", "probe", seq.probe.transverse_backaction);
    }
    if (const json* s = r.section(j, "sequence", "",
                                  {"n_pulses", "pulses_per_period", "f", "prep_noise_cov",
                                   "prep_mean_offset", "prep_noise_ref_atoms", "detector_noise_cov",
                                   "diffusion_per_period", "intra_pulse_rotation"})) {
        r.integer(s, "n_pulses", "sequence", seq.n_pulses);
        r.integer(s, "pulses_per_period", "sequence", seq.pulses_per_period);
        r.number(s, "f", "sequence", seq.f);
        r.mat3(s, "prep_noise_cov", "sequence", seq.prep_noise_cov);
        r.vec3(s, "prep_mean_offset", "sequence", seq.prep_mean_offset);
        r.number(s, "prep_noise_ref_atoms", "sequence", seq.prep_noise_ref_atoms);
        r.mat3(s, "detector_noise_cov", "sequence", seq.detector_noise_cov);
        r.number(s, "diffusion_per_period", "sequence", seq.diffusion_per_period);
        r.boolean(s, "intra_pulse_rotation", "sequence", seq.intra_pulse_rotation);
    }
    r.check("sequence", [&] {
        sequence::validate(seq);
        sequence::pulse_schedule(seq);
    });

    auto& camp = c.campaign;
    if (const json* s = r.section(j, "campaign", "",
                                  {"n_cycles", "sequences_per_cycle", "loss_fraction",
                                   "initial_atoms", "atom_jitter", "reference_shots_per_cycle"})) {
        r.integer(s, "n_cycles", "campaign", camp.n_cycles);
        r.integer(s, "sequences_per_cycle", "campaign", camp.sequences_per_cycle);
        r.number(s, "loss_fraction", "campaign", camp.loss_fraction);
        r.number(s, "initial_atoms", "campaign", camp.initial_atoms);
        r.number(s, "atom_jitter", "campaign", camp.atom_jitter);
        r.integer(s, "reference_shots_per_cycle", "campaign", camp.reference_shots_per_cycle);
    }
    r.check("campaign", [&] { sequence::validate(camp); });

    auto& an = c.analysis;
    if (const json* s = r.section(j, "analysis", "",
                                  {"bins", "min_shots_per_bin", "cutoff", "cutoff_scan",
                                   "scan_n_atoms", "selection_mean", "readout_subtraction",
                                   "bootstrap_resamples", "seed"})) {
        r.integer(s, "bins", "analysis", an.n_bins);
        r.integer(s, "min_shots_per_bin", "analysis", an.min_shots_per_bin);
        r.number(s, "cutoff", "analysis", an.cutoff);
        if (s->contains("cutoff_scan")) {
            const json& v = s->at("cutoff_scan");
            if (v.is_string()) {
                r.check("analysis.cutoff_scan", [&] { an.cutoff_scan = parse_range(v.get<std::string>()); });
            } else if (v.is_array() && std::all_of(v.begin(), v.end(), [](const json& x) { return x.is_number(); })) {
                an.cutoff_scan = v.get<std::vector<double>>();
            } else {
                r.fail("analysis.cutoff_scan", "expected \"start:stop:step\" or an array of numbers");
            }
        }
        r.number(s, "scan_n_atoms", "analysis", an.scan_n_atoms);
        std::string mode;
        r.string(s, "selection_mean", "analysis", mode);
        if (mode == "global")
            an.selection_mean = analysis::SelectionMean::global;
        else if (!mode.empty() && mode != "per_bin")
            r.fail("analysis.selection_mean", "expected \"per_bin\" or \"global\"");
        mode.clear();
        r.string(s, "readout_subtraction", "analysis", mode);
        if (mode == "analytic")
            an.readout = analysis::ReadoutSubtraction::analytic;
        else if (!mode.empty() && mode != "reference")
            r.fail("analysis.readout_subtraction", "expected \"reference\" or \"analytic\"");
        r.integer(s, "bootstrap_resamples", "analysis", an.bootstrap_resamples);
        r.integer(s, "seed", "analysis", an.seed);
    }
    r.check("analysis", [&] { analysis::validate(an); });
    r.finish();
    return c;
}

RunConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot read config '{}'", path.string()));
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("config '{}' is not valid JSON: {}", path.string(), e.what()));
    }
    return from_json(j);
}

json to_json(const RunConfig& c) {
    const auto& seq = c.sequence;
    const auto& an = c.analysis;
    json j;
    j["master_seed"] = c.campaign.master_seed;
    j["output_dir"] = c.output_dir;
    j["workers"] = c.workers;
    j["constants"] = {{"wavelength_m", c.constants.wavelength},
                      {"interaction_area_m2", c.constants.interaction_area}};
    j["field"] = {{"b_gauss", to_json(seq.field.b)},
                  {"gyromagnetic_ratio", seq.field.gyromagnetic_ratio}};
    j["probe"] = {{"g1", seq.probe.g1},
                  {"g2", seq.probe.g2},
                  {"n_photons", seq.probe.n_photons},
                  {"pulse_duration_s", seq.probe.pulse_duration},
                  {"efficiency", seq.probe.efficiency},
                  {"readout_sigma_override", seq.probe.readout_sigma_override
                                                 ? json(*seq.probe.readout_sigma_override)
                                                 : json(nullptr)},
                  {"transverse_backaction", seq.probe.transverse_backaction}};
    j["sequence"] = {{"n_pulses", seq.n_pulses},
                     {"pulses_per_period", seq.pulses_per_period},
                     {"f", seq.f},
                     {"prep_noise_cov", to_json(seq.prep_noise_cov)},
                     {"prep_mean_offset", to_json(seq.prep_mean_offset)},
                     {"prep_noise_ref_atoms", seq.prep_noise_ref_atoms},
                     {"detector_noise_cov", to_json(seq.detector_noise_cov)},
                     {"diffusion_per_period", seq.diffusion_per_period},
                     {"intra_pulse_rotation", seq.intra_pulse_rotation}};
    j["campaign"] = {{"n_cycles", c.campaign.n_cycles},
                     {"sequences_per_cycle", c.campaign.sequences_per_cycle},
                     {"loss_fraction", c.campaign.loss_fraction},
                     {"initial_atoms", c.campaign.initial_atoms},
                     {"atom_jitter", c.campaign.atom_jitter},
                     {"reference_shots_per_cycle", c.campaign.reference_shots_per_cycle}};
    j["analysis"] = {
        {"bins", an.n_bins},
        {"min_shots_per_bin", an.min_shots_per_bin},
        {"cutoff", an.cutoff},
        {"cutoff_scan", an.cutoff_scan},
        {"scan_n_atoms", an.scan_n_atoms},
        {"selection_mean", an.selection_mean == analysis::SelectionMean::global ? "global" : "per_bin"},
        {"readout_subtraction",
         an.readout == analysis::ReadoutSubtraction::analytic ? "analytic" : "reference"},
        {"bootstrap_resamples", an.bootstrap_resamples},
        {"seed", an.seed}};
    return j;
}

analysis::AnalysisOptions resolved_analysis(const RunConfig& c) {
    analysis::AnalysisOptions o = c.analysis;
    o.probe = c.sequence.probe;
    o.f = c.sequence.f;
    o.detector_noise_cov = c.sequence.detector_noise_cov;
    o.workers = c.workers;
    return o;
}

}  // namespace qndspin::config
