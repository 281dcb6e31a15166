#include "qndspin/analysis.hpp"
#include "qndspin/config.hpp"
#include "qndspin/error.hpp"
#include "qndspin/magnetometry.hpp"
#include "qndspin/probe.hpp"
#include "qndspin/report.hpp"
#include "qndspin/sequence.hpp"
#include "qndspin/spin.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>

namespace py = pybind11;
using namespace qndspin;

namespace {

// Configs and reports cross the boundary as JSON text; the Python layer
// converts them with the json module.
config::RunConfig parse_config(const std::string& text) {
    return config::from_json(text.empty() ? nlohmann::json::object() : nlohmann::json::parse(text));
}

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::dict dataset_to_arrays(const sequence::Dataset& data) {
    const auto n = static_cast<py::ssize_t>(data.size());
    py::array_t<std::int64_t> cycle(n), seq(n);
    py::array_t<bool> ref(n);
    Array atoms(n), f1({n, py::ssize_t{3}}), f2({n, py::ssize_t{3}});
    auto c = cycle.mutable_unchecked<1>();
    auto s = seq.mutable_unchecked<1>();
    auto r = ref.mutable_unchecked<1>();
    auto a = atoms.mutable_unchecked<1>();
    auto x1 = f1.mutable_unchecked<2>();
    auto x2 = f2.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i) {
        const auto& rec = data[static_cast<std::size_t>(i)];
        c(i) = rec.cycle_id;
        s(i) = rec.seq_index;
        r(i) = rec.is_reference;
        a(i) = rec.n_atoms;
        for (py::ssize_t k = 0; k < 3; ++k) {
            x1(i, k) = rec.f1[k];
            x2(i, k) = rec.f2[k];
        }
    }
    py::dict out;
    out["cycle_id"] = cycle;
    out["seq_index"] = seq;
    out["is_reference"] = ref;
    out["n_atoms"] = atoms;
    out["f1"] = f1;
    out["f2"] = f2;
    return out;
}

sequence::Dataset arrays_to_dataset(const py::dict& d) {
    const auto atoms = d["n_atoms"].cast<Array>();
    const auto f1 = d["f1"].cast<Array>();
    const auto f2 = d["f2"].cast<Array>();
    const auto n = atoms.shape(0);
    if (f1.ndim() != 2 || f2.ndim() != 2 || f1.shape(0) != n || f2.shape(0) != n ||
        f1.shape(1) != 3 || f2.shape(1) != 3)
        throw SchemaError("f1 and f2 must have shape (n_shots, 3)");
    const auto cycle = d.contains("cycle_id") ? d["cycle_id"].cast<py::array_t<std::int64_t>>()
                                              : py::array_t<std::int64_t>(n);
    const auto seq = d.contains("seq_index") ? d["seq_index"].cast<py::array_t<std::int64_t>>()
                                             : py::array_t<std::int64_t>(n);
    sequence::Dataset data(static_cast<std::size_t>(n));
    auto a = atoms.unchecked<1>();
    auto x1 = f1.unchecked<2>();
    auto x2 = f2.unchecked<2>();
    auto c = cycle.unchecked<1>();
    auto s = seq.unchecked<1>();
    for (py::ssize_t i = 0; i < n; ++i) {
        auto& rec = data[static_cast<std::size_t>(i)];
        rec.n_atoms = a(i);
        rec.is_reference = a(i) == 0.0;
        rec.cycle_id = d.contains("cycle_id") ? c(i) : 0;
        rec.seq_index = d.contains("seq_index") ? s(i) : 0;
        for (py::ssize_t k = 0; k < 3; ++k) {
            rec.f1[k] = x1(i, k);
            rec.f2[k] = x2(i, k);
        }
    }
    return data;
}

std::vector<magnetometry::FidSample> samples_of(const Array& t, const Array& theta) {
    if (t.ndim() != 1 || theta.ndim() != 1 || t.shape(0) != theta.shape(0))
        throw SchemaError("t and theta must be 1-d arrays of equal length");
    std::vector<magnetometry::FidSample> out;
    for (py::ssize_t i = 0; i < t.shape(0); ++i) out.push_back({t.at(i), theta.at(i)});
    return out;
}

magnetometry::FidBranch branch_of(const std::string& b) {
    if (b == "z") return magnetometry::FidBranch::z;
    if (b == "y") return magnetometry::FidBranch::y;
    throw DomainError("branch must be 'z' or 'y'");
}

}  // namespace

PYBIND11_MODULE(_qndspin, m) {
    m.doc() = "Collective-spin QND measurement simulation and analysis";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base);
    py::register_exception<DomainError>(m, "DomainError", base);
    auto data = py::register_exception<DataError>(m, "DataError", base);
    py::register_exception<SchemaError>(m, "SchemaError", data);
    py::register_exception<EstimationError>(m, "EstimationError", data);
    auto numerical = py::register_exception<NumericalError>(m, "NumericalError", base);
    py::register_exception<FitError>(m, "FitError", numerical);

    m.def("default_config", [] { return config::to_json(config::RunConfig{}).dump(); });
    m.def("normalize_config", [](const std::string& text) { return config::to_json(parse_config(text)).dump(); },
          py::arg("config"));

    m.def("tss_variance", &spin::tss_variance, py::arg("n_atoms"), py::arg("f") = 1.0);
    m.def("larmor_rotation_matrix",
          [](const Vec3& b, double t, double gamma) {
              return spin::larmor_rotation_matrix({b, gamma}, t);
          },
          py::arg("b"), py::arg("t"), py::arg("gamma") = spin::kDefaultGyromagneticRatio);
    m.def("readout_noise_sigma",
          [](const std::string& cfg) { return probe::readout_noise_sigma(parse_config(cfg).sequence.probe); },
          py::arg("config") = "");
    m.def("snr", [](double n, const std::string& cfg) { return probe::snr(parse_config(cfg).sequence.probe, n); },
          py::arg("n_atoms"), py::arg("config") = "");
    m.def("pulse_schedule", [](const std::string& cfg) {
        std::string out;
        for (auto c : sequence::pulse_schedule(parse_config(cfg).sequence)) out += probe::component_name(c);
        return out;
    }, py::arg("config") = "");
    m.def("predicted_conditional_covariance",
          [](double n, const std::string& cfg) {
              return sequence::predicted_conditional_covariance(parse_config(cfg).sequence, n);
          },
          py::arg("n_atoms"), py::arg("config") = "");

    m.def("simulate",
          [](const std::string& cfg_text, int workers) {
              const auto cfg = parse_config(cfg_text);
              sequence::Dataset data;
              {
                  py::gil_scoped_release release;
                  data = sequence::run_campaign(cfg.campaign, cfg.sequence, workers);
              }
              return dataset_to_arrays(data);
          },
          py::arg("config") = "", py::arg("workers") = 1);
    m.def("simulate_shots",
          [](double n, int count, std::uint64_t seed, const std::string& cfg_text) {
              const auto cfg = parse_config(cfg_text);
              sequence::Dataset data;
              {
                  py::gil_scoped_release release;
                  Rng rng = make_stream(seed, 0, 0);
                  for (int i = 0; i < count; ++i) data.push_back(sequence::run_sequence(cfg.sequence, n, rng));
              }
              return dataset_to_arrays(data);
          },
          py::arg("n_atoms"), py::arg("count"), py::arg("seed") = 1, py::arg("config") = "");
    m.def("analyze",
          [](const py::dict& d, const std::string& cfg_text) {
              const auto cfg = parse_config(cfg_text);
              const auto data = arrays_to_dataset(d);
              analysis::DatasetAnalysis result;
              {
                  py::gil_scoped_release release;
                  result = analysis::analyze_dataset(data, config::resolved_analysis(cfg));
              }
              return report::analysis_json(result).dump();
          },
          py::arg("dataset"), py::arg("config") = "");

    m.def("conditional_covariance",
          [](const Mat3& g1, const Mat3& g2, const Mat3& g12) {
              const auto c = analysis::conditional_covariance(g1, g2, g12);
              return py::make_tuple(c.value, c.singular);
          },
          py::arg("gamma1"), py::arg("gamma2"), py::arg("gamma12"));
    m.def("squeezing_parameter",
          [](double v, double n, double f, double se) {
              const auto w = analysis::squeezing_parameter(v, n, f, se);
              py::dict out;
              out["xi2"] = w.xi2;
              out["xi2_stderr"] = w.xi2_stderr;
              out["ent_bound"] = w.entangled_atoms_lower_bound;
              out["significance_sigmas"] = w.significance_sigmas;
              out["negative_variance"] = w.negative_variance;
              return out;
          },
          py::arg("v_tilde"), py::arg("n_atoms"), py::arg("f") = 1.0, py::arg("v_tilde_stderr") = 0.0);

    m.def("fid_signal",
          [](const Array& t, const Vec3& b, const std::string& branch, double f0, double g1, double t2,
             double gamma) {
              const auto br = branch_of(branch);
              Array out(t.request().shape);
              const double* in = t.data();
              double* o = out.mutable_data();
              for (py::ssize_t i = 0; i < t.size(); ++i)
                  o[i] = magnetometry::fid_signal(in[i], b, br, f0, g1, t2, gamma);
              return out;
          },
          py::arg("t"), py::arg("b"), py::arg("branch"), py::arg("f0"), py::arg("g1"), py::arg("t2"),
          py::arg("gamma") = spin::kDefaultGyromagneticRatio);
    m.def("fit_fid",
          [](const Array& tz, const Array& thz, std::optional<Array> ty, std::optional<Array> thy,
             double g1, double gamma) {
              const auto z = samples_of(tz, thz);
              std::vector<magnetometry::FidSample> y;
              if (ty && thy) y = samples_of(*ty, *thy);
              return report::field_estimate_json(magnetometry::fit_fid(z, y, g1, gamma)).dump();
          },
          py::arg("t_z"), py::arg("theta_z"), py::arg("t_y") = py::none(), py::arg("theta_y") = py::none(),
          py::arg("g1") = 9.0e-8, py::arg("gamma") = spin::kDefaultGyromagneticRatio);
}
