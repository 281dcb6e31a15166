#include "qndspin/report.hpp"

#include "qndspin/error.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

namespace qndspin::report {

using nlohmann::json;

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json mat(const Mat3& m) {
    json out = json::array();
    for (int i = 0; i < 3; ++i) out.push_back(json::array({num(m(i, 0)), num(m(i, 1)), num(m(i, 2))}));
    return out;
}

json witness(const analysis::WitnessResult& w) {
    return {{"xi2", num(w.xi2)},
            {"xi2_stderr", num(w.xi2_stderr)},
            {"ent_bound", num(w.entangled_atoms_lower_bound)},
            {"significance_sigmas", num(w.significance_sigmas)},
            {"negative_variance", w.negative_variance}};
}

json selection(const analysis::SelectionResult& s) {
    json j = witness(s.witness);
    j["C"] = s.cutoff;
    j["n_selected"] = s.n_selected;
    j["v2_tilde"] = num(s.v2_tilde);
    return j;
}

json fit(const analysis::FitEntry& e) {
    if (!e.result) return {{"error", e.error}};
    const auto& r = *e.result;
    json params = json::object();
    for (std::size_t i = 0; i < r.names.size(); ++i)
        params[r.names[i]] = {{"value", num(r.params[i])}, {"stderr", num(r.stderrs[i])}};
    return {{"model", r.model_tag}, {"params", params}, {"residual_norm", num(r.residual_norm)}};
}

std::string shortest(double v) { return fmt::format("{}", v); }

// Minimal CSV table: header names mapped to column indices.
struct Table {
    std::map<std::string, std::size_t> columns;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
};

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        const auto b = cell.find_first_not_of(" \t\r");
        const auto e = cell.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

Table read_table(std::istream& in, const std::vector<std::string>& required) {
    Table t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        auto cells = split(line);
        if (!have_header) {
            for (std::size_t i = 0; i < cells.size(); ++i) t.columns[cells[i]] = i;
            for (const auto& r : required)
                if (!t.columns.count(r)) throw SchemaError(fmt::format("missing column '{}'", r));
            have_header = true;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw SchemaError(fmt::format("line {}: expected {} fields, found {}", line_no,
                                          t.columns.size(), cells.size()));
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(line_no);
    }
    if (!have_header) throw SchemaError("empty file: no header");
    return t;
}

double parse_double(const Table& t, std::size_t row, const std::string& column) {
    const std::string& s = t.rows[row][t.columns.at(column)];
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw SchemaError(fmt::format("line {}: column '{}': '{}' is not a finite number",
                                      t.line_numbers[row], column, s));
    return v;
}

}  // namespace

json analysis_json(const analysis::DatasetAnalysis& a) {
    json j;
    j["v0"] = num(a.v0);
    j["reference"] = {{"n_shots", a.reference.n_shots},
                      {"v0_measured", num(a.reference.v0)},
                      {"gamma0", mat(a.reference.gamma0)},
                      {"v1_tilde", num(a.reference_v1_tilde)},
                      {"v2_tilde", num(a.reference_v2_tilde)}};
    j["n_atom_shots"] = a.n_atom_shots;

    json bins = json::array();
    for (const auto& b : a.bins) {
        const auto& c = b.cov;
        // The headline witness is the conditional (QND-squeezed) path.
        json o = witness(b.conditional);
        o["index"] = b.index;
        o["n_shots"] = c.n_shots;
        o["n_atoms_mean"] = num(c.n_atoms_mean);
        o["n_atoms_min"] = num(b.n_atoms_min);
        o["n_atoms_max"] = num(b.n_atoms_max);
        o["v1_tilde"] = num(c.v1_tilde);
        o["v2_tilde"] = num(c.v2_tilde);
        o["v_cond_tilde"] = num(c.v_cond_tilde);
        o["gamma1"] = mat(c.gamma1);
        o["gamma2"] = mat(c.gamma2);
        o["gamma12"] = mat(c.gamma12);
        o["gamma_cond"] = mat(c.gamma_cond);
        o["gamma1_singular"] = c.gamma1_singular;
        o["first"] = witness(b.first);
        o["second"] = witness(b.second);
        o["selection"] = selection(b.selection);
        bins.push_back(std::move(o));
    }
    j["bins"] = std::move(bins);

    json skipped = json::array();
    for (const auto& s : a.skipped)
        skipped.push_back({{"index", s.index}, {"n_shots", s.n_shots}, {"reason", s.reason}});
    j["skipped_bins"] = std::move(skipped);

    json fits = json::object();
    for (const auto& [name, entry] : a.fits) fits[name] = fit(entry);
    j["fits"] = std::move(fits);

    json scan = json::array();
    for (const auto& s : a.cutoff_scan) scan.push_back(selection(s));
    j["cutoff_scan"] = std::move(scan);
    j["cutoff_scan_bin"] = a.scan_bin ? json(*a.scan_bin) : json(nullptr);

    if (a.correlation) {
        json rho = json::array();
        for (int i = 0; i < 6; ++i) {
            json row = json::array();
            for (int k = 0; k < 6; ++k) row.push_back(num(a.correlation->rho(i, k)));
            rho.push_back(std::move(row));
        }
        j["correlation"] = {{"channels", {"f1_z", "f1_y", "f1_x", "f2_z", "f2_y", "f2_x"}},
                            {"rho", std::move(rho)},
                            {"degenerate_channels", a.correlation->degenerate_channels}};
    } else {
        j["correlation"] = nullptr;
    }
    if (a.residual_polarization)
        j["residual_polarization"] = {num((*a.residual_polarization)[0]),
                                      num((*a.residual_polarization)[1])};
    else
        j["residual_polarization"] = nullptr;
    return j;
}

void write_cutoff_scan_csv(std::ostream& out, const analysis::DatasetAnalysis& a) {
    out << "C,xi2,xi2_stderr,n_selected\n";
    for (const auto& s : a.cutoff_scan)
        fmt::print(out, "{},{},{},{}\n", shortest(s.cutoff), shortest(s.witness.xi2),
                   shortest(s.witness.xi2_stderr), s.n_selected);
}

void write_noise_scaling_csv(std::ostream& out, const analysis::DatasetAnalysis& a) {
    out << "n_atoms,v1_tilde,v2_tilde,v_cond_tilde\n";
    for (const auto& b : a.bins)
        fmt::print(out, "{},{},{},{}\n", shortest(b.cov.n_atoms_mean), shortest(b.cov.v1_tilde),
                   shortest(b.cov.v2_tilde), shortest(b.cov.v_cond_tilde));
}

FidTrace read_fid_csv(std::istream& in) {
    const Table t = read_table(in, {"t_us", "theta_rad", "branch"});
    FidTrace trace;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        magnetometry::FidSample s{parse_double(t, i, "t_us") * 1e-6, parse_double(t, i, "theta_rad")};
        const std::string& branch = t.rows[i][t.columns.at("branch")];
        if (branch == "z")
            trace.z.push_back(s);
        else if (branch == "y")
            trace.y.push_back(s);
        else
            throw SchemaError(fmt::format("line {}: column 'branch': expected z or y, found '{}'",
                                          t.line_numbers[i], branch));
    }
    if (trace.z.empty() && trace.y.empty()) throw SchemaError("no FID samples");
    return trace;
}

void write_fid_csv(std::ostream& out, const FidTrace& trace) {
    out << "t_us,theta_rad,branch\n";
    for (const auto& s : trace.z) fmt::print(out, "{},{},z\n", shortest(s.t * 1e6), shortest(s.theta));
    for (const auto& s : trace.y) fmt::print(out, "{},{},y\n", shortest(s.t * 1e6), shortest(s.theta));
}

json field_estimate_json(const magnetometry::FieldEstimate& e) {
    json cov = json::array();
    for (int i = 0; i < 5; ++i) {
        json row = json::array();
        for (int k = 0; k < 5; ++k) row.push_back(num(e.covariance(i, k)));
        cov.push_back(std::move(row));
    }
    json alt = json::array();
    for (const auto& b : e.equivalent_solutions)
        alt.push_back({{"bx_mG", num(b[0] * 1e3)}, {"by_mG", num(b[1] * 1e3)}, {"bz_mG", num(b[2] * 1e3)}});
    return {{"bx_mG", num(e.b[0] * 1e3)},
            {"by_mG", num(e.b[1] * 1e3)},
            {"bz_mG", num(e.b[2] * 1e3)},
            {"t2_us", num(e.t2 * 1e6)},
            {"f0", num(e.f0)},
            {"covariance_order", {"bx_mG", "by_mG", "bz_mG", "t2_us", "f0"}},
            {"covariance", std::move(cov)},
            {"residual_norm", num(e.residual_norm)},
            {"evaluations", e.evaluations},
            {"equivalent_solutions", std::move(alt)},
            {"transverse_unidentifiable", e.transverse_unidentifiable},
            {"magnitude_unidentifiable", e.magnitude_unidentifiable},
            {"flags", e.flags}};
}

std::vector<probe::CalibrationPair> read_pairs_csv(std::istream& in) {
    const Table t = read_table(in, {"phi_rad", "n_atoms"});
    std::vector<probe::CalibrationPair> pairs;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        pairs.push_back({parse_double(t, i, "phi_rad"), parse_double(t, i, "n_atoms")});
    return pairs;
}

void write_pairs_csv(std::ostream& out, const std::vector<probe::CalibrationPair>& pairs) {
    out << "phi_rad,n_atoms\n";
    for (const auto& p : pairs) fmt::print(out, "{},{}\n", shortest(p.phi), shortest(p.n_atoms));
}

json calibration_json(const probe::G1Calibration& c) {
    return {{"g1", c.g1},
            {"g1_stderr", c.standard_error},
            {"residual_norm", c.residual_norm},
            {"n_pairs", c.n_pairs}};
}

}  // namespace qndspin::report
