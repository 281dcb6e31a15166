#include "qndspin/sequence.hpp"

#include "parallel.hpp"
#include "qndspin/error.hpp"
#include "stats_detail.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace qndspin::sequence {

using probe::Component;
using spin::CollectiveSpinState;

namespace {

constexpr std::uint64_t kCampaignStreamTag = 0x6361'6d70;  // "camp"

// Position of an initial-frame component in the (z, y, x) record order.
int record_slot(Component c) {
    switch (c) {
        case Component::z: return 0;
        case Component::y: return 1;
        case Component::x: return 2;
    }
    return 0;
}

Component dominant_component(const Vec3& row) {
    Eigen::Index i = 0;
    row.cwiseAbs().maxCoeff(&i);
    return static_cast<Component>(i);
}

// Draws mean + cov^{1/2} z, tolerating singular covariances.
Vec3 sample_gaussian(const Vec3& mean, const Mat3& cov, Rng& rng) {
    std::normal_distribution<double> unit(0.0, 1.0);
    const Vec3 z(unit(rng), unit(rng), unit(rng));
    if (cov.isZero(0.0)) return mean;
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const Vec3 root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return mean + eig.eigenvectors() * root.asDiagonal() * z;
}

Vec3 sample_detector_noise(const Mat3& cov, Rng& rng) {
    return sample_gaussian(Vec3::Zero(), cov, rng);
}

struct Schedule {
    Mat3 step;      // lab-frame rotation between pulses
    Mat3 mid_pulse; // extra rotation applied when reading (identity unless enabled)
};

Schedule make_schedule(const SequenceConfig& cfg) {
    const double period = spin::larmor_period(cfg.field);
    Schedule s;
    s.step = spin::larmor_rotation_matrix(cfg.field, period / cfg.pulses_per_period);
    s.mid_pulse = cfg.intra_pulse_rotation
                      ? spin::larmor_rotation_matrix(cfg.field, cfg.probe.pulse_duration / 2.0)
                      : Mat3::Identity();
    return s;
}

// Shared sequence loop. With `rng == nullptr` only the estimator covariance
// is propagated and the true vector stays at the prior mean.
ShotRecord propagate(const SequenceConfig& cfg, double n_atoms, Rng* rng, int n_pulses,
                     SequenceTrace* trace, CollectiveSpinState* final_state) {
    const Schedule sched = make_schedule(cfg);
    const auto labels = pulse_schedule(cfg);
    const double sigma = probe::readout_noise_sigma(cfg.probe);
    const double backaction_sigma = cfg.probe.g1 * std::sqrt(cfg.probe.n_photons) / 2.0;
    const Vec3 read_row = sched.mid_pulse.transpose() * Vec3::UnitZ();

    CollectiveSpinState est = prepared_state(cfg, n_atoms);
    Vec3 spin_lab = est.mean;
    if (rng) spin_lab = sample_gaussian(est.mean, est.cov, *rng);
    if (trace) trace->prior = est;

    ShotRecord rec;
    rec.n_atoms = n_atoms;
    rec.is_reference = (n_atoms == 0.0);
    rec.pulse_labels = labels;

    Mat3 to_lab = Mat3::Identity();
    Vec3 detector = Vec3::Zero();
    std::normal_distribution<double> unit(0.0, 1.0);
    for (int k = 0; k < n_pulses; ++k) {
        if (k > 0) {
            spin_lab = sched.step * spin_lab;
            est = spin::apply_rotation(est, sched.step);
            to_lab = sched.step * to_lab;
        }
        if (k > 0 && k % cfg.pulses_per_period == 0 && cfg.diffusion_per_period > 0.0) {
            if (rng) {
                const double s = std::sqrt(cfg.diffusion_per_period);
                spin_lab += s * Vec3(unit(*rng), unit(*rng), unit(*rng));
            }
            est.cov += cfg.diffusion_per_period * Mat3::Identity();
        }
        if (k % cfg.pulses_per_period == 0 && rng && !cfg.detector_noise_cov.isZero(0.0))
            detector = sample_detector_noise(cfg.detector_noise_cov, *rng);

        const int slot = record_slot(labels[k]);
        double measured = read_row.dot(spin_lab);
        if (rng) {
            auto outcome = probe::measure(sched.mid_pulse * spin_lab, cfg.probe, *rng);
            measured = outcome.measured_value + detector[slot];
        }
        est = probe::condition_on_readout(est, read_row, measured, sigma * sigma);

        if (cfg.probe.transverse_backaction) {
            est.cov += probe::backaction_covariance(est, cfg.probe);
            if (rng) {
                spin_lab = spin::axis_angle_rotation(Vec3::UnitZ(), backaction_sigma * unit(*rng)) *
                           spin_lab;
            }
        }
        if (trace) trace->posteriors[k] = spin::apply_rotation(est, to_lab.transpose());

        Vec3& round = (k < cfg.pulses_per_period) ? rec.f1 : rec.f2;
        round[slot] = measured;
    }
    if (final_state) *final_state = spin::apply_rotation(est, to_lab.transpose());
    return rec;
}

}  // namespace

spin::MagneticField default_field() {
    spin::MagneticField field;
    field.b = Vec3::Ones().normalized() * 16.9e-3;
    return field;
}

void validate(const SequenceConfig& cfg) {
    probe::validate(cfg.probe);
    if (!(cfg.field.gyromagnetic_ratio > 0.0))
        throw DomainError("field.gyromagnetic_ratio must be > 0");
    if (cfg.field.magnitude() == 0.0) throw DomainError("field must be nonzero for stroboscopic probing");
    if (cfg.pulses_per_period != 3 || cfg.n_pulses != 6)
        throw DomainError("sequence: records hold two rounds of three pulses "
                          "(n_pulses = 6, pulses_per_period = 3)");
    if (!is_symmetric_psd(cfg.prep_noise_cov))
        throw DomainError("sequence.prep_noise_cov must be symmetric PSD");
    if (!is_symmetric_psd(cfg.detector_noise_cov))
        throw DomainError("sequence.detector_noise_cov must be symmetric PSD");
    if (!(cfg.diffusion_per_period >= 0.0))
        throw DomainError("sequence.diffusion_per_period must be >= 0");
    if (!(cfg.prep_noise_ref_atoms >= 0.0))
        throw DomainError("sequence.prep_noise_ref_atoms must be >= 0");
    if (!(cfg.f == 0.5 || cfg.f == 1.0 || cfg.f == 1.5 || cfg.f == 2.0))
        throw DomainError("sequence.f must be one of 1/2, 1, 3/2, 2");
}

std::array<Component, 6> pulse_schedule(const SequenceConfig& cfg) {
    const Schedule sched = make_schedule(cfg);
    std::array<Component, 6> labels{};
    Mat3 to_lab = Mat3::Identity();
    for (int k = 0; k < 6; ++k) {
        if (k > 0) to_lab = sched.step * to_lab;
        const Vec3 row = (Vec3::UnitZ().transpose() * sched.mid_pulse * to_lab).transpose();
        labels[k] = dominant_component(row);
    }
    for (int round = 0; round < 2; ++round) {
        int seen = 0;
        for (int k = 0; k < 3; ++k) seen |= 1 << static_cast<int>(labels[3 * round + k]);
        if (seen != 0b111)
            throw ConfigError("pulse schedule does not visit all three components in a Larmor "
                              "period; the field must point along [1,1,1]");
    }
    return labels;
}

CollectiveSpinState prepared_state(const SequenceConfig& cfg, double n_atoms) {
    CollectiveSpinState s = spin::make_tss(n_atoms, cfg.f);
    if (n_atoms == 0.0) return s;
    const double scale = cfg.prep_noise_ref_atoms > 0.0 ? n_atoms / cfg.prep_noise_ref_atoms : 1.0;
    return spin::add_technical_noise(s, scale * scale * cfg.prep_noise_cov,
                                     scale * cfg.prep_mean_offset);
}

ShotRecord run_sequence(const SequenceConfig& cfg, double n_atoms, Rng& rng, SequenceTrace* trace) {
    return propagate(cfg, n_atoms, &rng, cfg.n_pulses, trace, nullptr);
}

CollectiveSpinState predicted_posterior(const SequenceConfig& cfg, double n_atoms, int n_pulses) {
    if (n_pulses < 0 || n_pulses > cfg.n_pulses)
        throw DomainError("predicted_posterior: pulse count out of range");
    CollectiveSpinState out = prepared_state(cfg, n_atoms);
    if (n_pulses > 0) propagate(cfg, n_atoms, nullptr, n_pulses, nullptr, &out);
    return out;
}

Mat3 predicted_conditional_covariance(const SequenceConfig& cfg, double n_atoms) {
    if (!cfg.detector_noise_cov.isZero(0.0))
        throw DomainError("predicted_conditional_covariance assumes uncorrelated readout noise");
    const CollectiveSpinState after_first = predicted_posterior(cfg, n_atoms, 3);
    const Schedule sched = make_schedule(cfg);
    const auto labels = pulse_schedule(cfg);

    // Readout rows of pulses 4..6 in the preparation frame, in record order.
    Mat3 rows = Mat3::Zero();
    Mat3 to_lab = sched.step * sched.step;
    for (int k = 3; k < 6; ++k) {
        to_lab = sched.step * to_lab;
        rows.row(record_slot(labels[k])) = Vec3::UnitZ().transpose() * sched.mid_pulse * to_lab;
    }
    const double sigma = probe::readout_noise_sigma(cfg.probe);
    const Mat3 spread = after_first.cov + cfg.diffusion_per_period * Mat3::Identity();
    return symmetrize(rows * spread * rows.transpose() + sigma * sigma * Mat3::Identity());
}

void validate(const CampaignConfig& cfg) {
    if (cfg.n_cycles < 0) throw DomainError("campaign.n_cycles must be >= 0");
    if (cfg.sequences_per_cycle < 0) throw DomainError("campaign.sequences_per_cycle must be >= 0");
    if (!(cfg.loss_fraction >= 0.0 && cfg.loss_fraction < 1.0))
        throw DomainError("campaign.loss_fraction must lie in [0, 1)");
    if (!(cfg.initial_atoms >= 0.0)) throw DomainError("campaign.initial_atoms must be >= 0");
    if (!(cfg.atom_jitter >= 0.0 && cfg.atom_jitter < 1.0))
        throw DomainError("campaign.atom_jitter must lie in [0, 1)");
    if (cfg.reference_shots_per_cycle < 0)
        throw DomainError("campaign.reference_shots_per_cycle must be >= 0");
}

double atoms_at_sequence(double n0, double loss_fraction, int seq_index) {
    return n0 * std::pow(1.0 - loss_fraction, seq_index);
}

Dataset run_campaign(const CampaignConfig& cfg, const SequenceConfig& seq_cfg, int workers) {
    validate(cfg);
    validate(seq_cfg);
    const std::size_t per_cycle =
        static_cast<std::size_t>(cfg.sequences_per_cycle + cfg.reference_shots_per_cycle);
    Dataset out(per_cycle * static_cast<std::size_t>(cfg.n_cycles));

    detail::parallel_for(static_cast<std::size_t>(cfg.n_cycles), workers, [&](std::size_t cycle) {
        Rng rng = make_stream(cfg.master_seed, cycle, kCampaignStreamTag);
        std::uniform_real_distribution<double> jitter(-1.0, 1.0);
        const double n0 = cfg.initial_atoms * (1.0 + cfg.atom_jitter * jitter(rng));
        ShotRecord* slot = out.data() + cycle * per_cycle;
        for (int s = 0; s < cfg.sequences_per_cycle + cfg.reference_shots_per_cycle; ++s) {
            const bool reference = s >= cfg.sequences_per_cycle;
            const double n = reference ? 0.0 : atoms_at_sequence(n0, cfg.loss_fraction, s);
            ShotRecord rec = run_sequence(seq_cfg, n, rng);
            rec.is_reference = reference;
            rec.cycle_id = static_cast<std::int64_t>(cycle);
            rec.seq_index = s;
            slot[s] = rec;
        }
    });
    return out;
}

ReferenceNoise reference_variance(const Dataset& dataset) {
    std::vector<Vec3> first, second;
    for (const auto& r : dataset) {
        if (!r.is_reference) continue;
        first.push_back(r.f1);
        second.push_back(r.f2);
    }
    if (first.size() < 2)
        throw EstimationError(fmt::format(
            "reference_variance: need at least two reference shots, found {}", first.size()));
    ReferenceNoise out;
    out.n_shots = first.size();
    out.gamma0_first = detail::covariance(first);
    out.gamma0_second = detail::covariance(second);
    out.gamma0 = 0.5 * (out.gamma0_first + out.gamma0_second);
    out.v0 = out.gamma0.trace();
    return out;
}

void write_dataset_csv(std::ostream& out, const Dataset& dataset) {
    out << kDatasetHeader << '\n';
    for (const auto& r : dataset) {
        out << fmt::format("{},{},{},{},{},{},{},{},{},{}\n", r.cycle_id, r.seq_index,
                           r.is_reference ? 1 : 0, r.n_atoms, r.f1[0], r.f1[1], r.f1[2], r.f2[0],
                           r.f2[1], r.f2[2]);
    }
}

namespace {

std::vector<std::string> split_csv_line(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    for (auto& c : cells) {
        const auto b = c.find_first_not_of(" \t");
        const auto e = c.find_last_not_of(" \t");
        c = (b == std::string::npos) ? std::string{} : c.substr(b, e - b + 1);
    }
    return cells;
}

template <class T>
T parse_cell(const std::string& cell, const char* column, std::size_t line_no) {
    T value{};
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc{} || ptr != cell.data() + cell.size())
        throw SchemaError(fmt::format("line {}: column '{}' is not a number: '{}'", line_no,
                                      column, cell));
    return value;
}

}  // namespace

Dataset read_dataset_csv(std::istream& in) {
    static const std::array<const char*, 10> columns = {
        "cycle_id", "seq_index", "is_reference", "n_atoms", "f1_z",
        "f1_y",     "f1_x",      "f2_z",         "f2_y",    "f2_x"};
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("dataset is empty: missing header");
    const auto header = split_csv_line(line);
    for (std::size_t i = 0; i < columns.size(); ++i) {
        if (i >= header.size())
            throw SchemaError(fmt::format("dataset header: missing column '{}'", columns[i]));
        if (header[i] != columns[i])
            throw SchemaError(fmt::format("dataset header: expected column '{}' at position {}, "
                                          "found '{}'",
                                          columns[i], i + 1, header[i]));
    }
    if (header.size() > columns.size())
        throw SchemaError(fmt::format("dataset header: unexpected column '{}'", header[columns.size()]));

    Dataset out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != columns.size())
            throw SchemaError(fmt::format("line {}: expected {} columns, found {}", line_no,
                                          columns.size(), cells.size()));
        ShotRecord r;
        r.cycle_id = parse_cell<std::int64_t>(cells[0], columns[0], line_no);
        r.seq_index = parse_cell<std::int64_t>(cells[1], columns[1], line_no);
        const auto ref = parse_cell<int>(cells[2], columns[2], line_no);
        if (ref != 0 && ref != 1)
            throw SchemaError(fmt::format("line {}: column 'is_reference' must be 0 or 1", line_no));
        r.is_reference = ref == 1;
        r.n_atoms = parse_cell<double>(cells[3], columns[3], line_no);
        for (int k = 0; k < 3; ++k) {
            r.f1[k] = parse_cell<double>(cells[4 + k], columns[4 + k], line_no);
            r.f2[k] = parse_cell<double>(cells[7 + k], columns[7 + k], line_no);
        }
        if (r.is_reference && r.n_atoms != 0.0)
            throw SchemaError(fmt::format("line {}: reference shot with nonzero n_atoms", line_no));
        r.pulse_labels = {Component::z, Component::y, Component::x,
                          Component::z, Component::y, Component::x};
        out.push_back(r);
    }
    return out;
}

}  // namespace qndspin::sequence
