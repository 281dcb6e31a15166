#include "qndspin/cli.hpp"

#include "qndspin/error.hpp"
#include "qndspin/magnetometry.hpp"
#include "qndspin/report.hpp"
#include "qndspin/sequence.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <fstream>
#include <optional>
#include <sstream>

namespace qndspin::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Files are staged as temporaries and renamed together on commit; anything
// staged is removed if the command fails first.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;

    ~OutputSet() {
        std::error_code ec;
        for (const auto& [tmp, final] : staged_) fs::remove(tmp, ec);
    }

    void add(const std::string& name, const std::string& content) {
        std::error_code ec;
        fs::create_directories(dir_, ec);
        if (ec) throw ConfigError(fmt::format("cannot create output directory '{}': {}", dir_.string(), ec.message()));
        const fs::path final = dir_ / name;
        fs::path tmp = final;
        tmp += ".tmp";
        staged_.emplace_back(tmp, final);
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << content;
        out.close();
        if (!out) throw ConfigError(fmt::format("cannot write '{}'", tmp.string()));
    }

    void commit() {
        for (const auto& [tmp, final] : staged_) fs::rename(tmp, final);
        staged_.clear();
    }

private:
    fs::path dir_;
    std::vector<std::pair<fs::path, fs::path>> staged_;
};

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot read '{}'", path.string()));
    return in;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

int exit_code(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
    if (dynamic_cast<const DataError*>(&e)) return kExitData;
    if (dynamic_cast<const NumericalError*>(&e)) return kExitNumerical;
    if (dynamic_cast<const DomainError*>(&e)) return kExitConfig;
    return 1;
}

void cmd_simulate(const config::RunConfig& cfg, const fs::path& out_dir) {
    const auto dataset = sequence::run_campaign(cfg.campaign, cfg.sequence, cfg.workers);
    std::ostringstream shots;
    sequence::write_dataset_csv(shots, dataset);
    json prov = {{"config", config::to_json(cfg)},
                 {"provenance",
                  {{"tool", "qndspin"},
                   {"command", "simulate"},
                   {"master_seed", cfg.campaign.master_seed},
                   {"n_shots", dataset.size()}}}};
    OutputSet out(out_dir);
    out.add("shots.csv", shots.str());
    out.add("provenance.json", dump(prov));
    out.commit();
}

void cmd_analyze(const fs::path& dataset_path, const config::RunConfig& cfg, const fs::path& out_dir) {
    auto in = open_input(dataset_path);
    const auto dataset = sequence::read_dataset_csv(in);
    const auto result = analysis::analyze_dataset(dataset, config::resolved_analysis(cfg));
    std::ostringstream cutoff_scan, noise_scaling;
    report::write_cutoff_scan_csv(cutoff_scan, result);
    report::write_noise_scaling_csv(noise_scaling, result);
    OutputSet out(out_dir);
    out.add("report.json", dump(report::analysis_json(result)));
    out.add("cutoff_scan.csv", cutoff_scan.str());
    out.add("noise_scaling.csv", noise_scaling.str());
    out.commit();
}

void cmd_fidfit(const fs::path& samples, const config::RunConfig& cfg, const fs::path& out_dir) {
    auto in = open_input(samples);
    const auto trace = report::read_fid_csv(in);
    try {
        const auto est = magnetometry::fit_fid(trace.z, trace.y, cfg.sequence.probe.g1,
                                               cfg.sequence.field.gyromagnetic_ratio);
        OutputSet out(out_dir);
        out.add("fid_estimate.json", dump(report::field_estimate_json(est)));
        out.commit();
    } catch (const FitError& e) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        std::ofstream log(out_dir / "fidfit.log", std::ios::trunc);
        log << e.what() << "\n";
        log << e.trace();
        throw;
    }
}

void cmd_calibrate(const fs::path& pairs_path, const config::RunConfig& cfg, const fs::path& out_dir) {
    auto in = open_input(pairs_path);
    const auto pairs = report::read_pairs_csv(in);
    const auto cal = probe::calibrate_g1(pairs, cfg.sequence.f);
    OutputSet out(out_dir);
    out.add("g1_calibration.json", dump(report::calibration_json(cal)));
    out.commit();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stroboscopic QND spin-squeezing simulator and analyzer", "qndspin"};
    app.require_subcommand(1);

    std::string config_path, out_dir, cutoff_scan, input;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::size_t> bins;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config or provenance file");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_option("--workers", workers, "worker threads")->check(CLI::PositiveNumber);
    };
    auto* sim = app.add_subcommand("simulate", "simulate a campaign, write shots.csv");
    common(sim);
    sim->add_option("--seed", seed, "master seed");

    auto* ana = app.add_subcommand("analyze", "analyze a shot dataset");
    common(ana);
    ana->add_option("dataset", input, "shot CSV")->required();
    ana->add_option("--seed", seed, "bootstrap seed");
    ana->add_option("--cutoff-scan", cutoff_scan, "selection cutoffs start:stop:step");
    ana->add_option("--bins", bins, "number of atom-number bins")->check(CLI::PositiveNumber);

    auto* fid = app.add_subcommand("fidfit", "fit a free-induction-decay trace");
    common(fid);
    fid->add_option("samples", input, "FID CSV")->required();

    auto* cal = app.add_subcommand("calibrate", "calibrate G1 from (phi, N) pairs");
    common(cal);
    cal->add_option("pairs", input, "pairs CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        config::RunConfig cfg;
        if (!config_path.empty())
            cfg = config::load(config_path);
        else
            cfg.analysis.cutoff_scan = config::default_cutoff_scan();
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (workers) cfg.workers = *workers;
        if (bins) cfg.analysis.n_bins = *bins;
        if (!cutoff_scan.empty()) cfg.analysis.cutoff_scan = config::parse_range(cutoff_scan);
        if (seed) {
            if (*sim)
                cfg.campaign.master_seed = *seed;
            else
                cfg.analysis.seed = *seed;
        }
        cfg = config::from_json(config::to_json(cfg));  // revalidate overrides

        if (*sim) {
            cmd_simulate(cfg, cfg.output_dir);
        } else if (*ana) {
            cmd_analyze(input, cfg, cfg.output_dir);
        } else if (*fid) {
            cmd_fidfit(input, cfg, cfg.output_dir);
        } else {
            cmd_calibrate(input, cfg, cfg.output_dir);
        }
        fmt::print(out, "wrote {}\n", fs::path(cfg.output_dir).string());
        return kExitOk;
    } catch (const std::exception& e) {
        fmt::print(err, "error: {}\n", e.what());
        return exit_code(e);
    }
}

}  // namespace qndspin::cli
