// Python surface for the differentiable top-k operator and the attention
// forward. Matrices cross the boundary as numpy arrays; the trainer and CLI
// stay native.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <vector>

#include "sparsek/attention.hpp"
#include "sparsek/sparsek_op.hpp"
#include "sparsek/stream.hpp"

namespace py = pybind11;
using namespace sparsek;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

MatT<double> mat_from(const DoubleArray& a, const char* name) {
    if (a.ndim() != 2) throw ShapeError(std::string(name) + ": expected a 2-D array");
    MatT<double> m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::memcpy(m.data.data(), a.data(), m.data.size() * sizeof(double));
    return m;
}

py::array_t<double> mat_to(const MatT<double>& m) {
    py::array_t<double> out({m.rows, m.cols});
    std::memcpy(out.mutable_data(), m.data.data(), m.data.size() * sizeof(double));
    return out;
}

py::array_t<double> vec_to(const std::vector<double>& v) {
    py::array_t<double> out(v.size());
    std::memcpy(out.mutable_data(), v.data(), v.size() * sizeof(double));
    return out;
}

py::object tau_to(double tau) {
    if (std::isfinite(tau)) return py::float_(tau);
    return py::none();  // infeasible prefix: every weight saturates
}

py::dict solution_dict(const SparseKSolution& sol, std::size_t full_len) {
    std::vector<double> p;
    if (sol.indices.empty()) {
        p = sol.p;
        p.resize(full_len, 0.0);
    } else {
        p.assign(full_len, 0.0);
        for (std::size_t slot = 0; slot < sol.indices.size(); ++slot)
            p[sol.indices[slot]] = sol.p[slot];
    }
    py::dict d;
    d["p"] = vec_to(p);
    d["tau"] = tau_to(sol.tau);
    d["u_count"] = sol.u_count;
    d["w_count"] = sol.w_count;
    d["degenerate"] = sol.degenerate;
    return d;
}

KeyMode key_mode_from(const std::string& s) {
    if (s == "soft") return KeyMode::soft;
    if (s == "hard") return KeyMode::hard;
    throw ArgumentError("key_mode must be 'soft' or 'hard'");
}

MaskApply mask_mode_from(const std::string& s) {
    if (s == "soft") return MaskApply::soft;
    if (s == "straight_through") return MaskApply::straight_through;
    throw ArgumentError("mask_mode must be 'soft' or 'straight_through'");
}

}  // namespace

PYBIND11_MODULE(_sparsek, m) {
    m.doc() = "Differentiable top-k selection and the attention forward built on it";
    m.attr("__version__") = "0.1.0";

    py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def(
        "sparsek",
        [](std::vector<double> z, double k, std::size_t sort_cap) {
            const SparseKSolution sol = sort_cap > 0 ? sparsek_partial(z, KBudget(k), sort_cap)
                                                     : sparsek::sparsek(z, KBudget(k));
            return solution_dict(sol, z.size());
        },
        py::arg("z"), py::arg("k"), py::arg("sort_cap") = 0,
        "Clamped-shift projection of scores z onto the k-budget box; returns "
        "p, tau and the breakpoint counts. sort_cap > 0 solves on the top "
        "scores only, falling back to the full solve when the cut cannot be "
        "certified.");

    m.def(
        "sparsek_jvp",
        [](std::vector<double> z, double k, std::vector<double> v) {
            if (v.size() != z.size()) throw ShapeError("sparsek_jvp: v must match z");
            const SparseKSolution sol = sparsek::sparsek(z, KBudget(k));
            return vec_to(sparsek_jvp(sol, v));
        },
        py::arg("z"), py::arg("k"), py::arg("v"),
        "Directional derivative of the projection at z in direction v "
        "(support-mean-centered on the fractional set).");

    py::class_<StreamState>(m, "Stream",
                            "Incremental solver: push scores one at a time and read the "
                            "same solution the batch solver gives on the prefix. Evictions "
                            "are permanent; tau never decreases.")
        .def(py::init([](double k, std::size_t heap_cap) {
                 return StreamState{KBudget(k), heap_cap};
             }),
             py::arg("k"), py::arg("heap_cap") = 0)
        .def(
            "push",
            [](StreamState& st, double z) {
                const StreamStepResult r = st.push(z);
                py::dict d;
                d["tau"] = tau_to(r.tau);
                d["t"] = r.t;
                d["inserted"] = r.inserted;
                d["evicted"] = r.evicted;
                return d;
            },
            py::arg("z"))
        .def("solution",
             [](const StreamState& st) { return solution_dict(st.solution(), st.t()); })
        .def_property_readonly("tau", [](const StreamState& st) { return tau_to(st.tau()); })
        .def_property_readonly("t", &StreamState::t)
        .def_property_readonly("survivors", &StreamState::survivor_count)
        .def("is_evicted", &StreamState::is_evicted, py::arg("index"));

    m.def(
        "attention",
        [](const DoubleArray& x, const DoubleArray& wq, const DoubleArray& wk,
           const DoubleArray& wv, const DoubleArray& wo, std::vector<double> w_score, double k,
           std::size_t window, std::size_t heads, const std::string& key_mode,
           const std::string& mask_mode, double slope_eps, bool slope_enabled) {
            AttnParams<double> params{mat_from(wq, "wq"), mat_from(wk, "wk"),
                                      mat_from(wv, "wv"), mat_from(wo, "wo")};
            ScoringParams scoring;
            scoring.w_score = std::move(w_score);
            scoring.slope_eps = slope_eps;
            scoring.slope_enabled = slope_enabled;
            AttnConfig cfg;
            cfg.k = k;
            cfg.window = window;
            cfg.heads = heads;
            cfg.key_mode = key_mode_from(key_mode);
            cfg.mask_mode = mask_mode_from(mask_mode);
            return mat_to(sparsek_attention(mat_from(x, "x"), params, scoring, cfg));
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("wo"),
        py::arg("w_score"), py::arg("k"), py::arg("window"), py::arg("heads") = 1,
        py::arg("key_mode") = "hard", py::arg("mask_mode") = "soft",
        py::arg("slope_eps") = 0.01, py::arg("slope_enabled") = true,
        "Causal attention where each query sees its sliding window plus the "
        "top-k scored positions that already left it.");

    m.def(
        "dense_attention",
        [](const DoubleArray& x, const DoubleArray& wq, const DoubleArray& wk,
           const DoubleArray& wv, const DoubleArray& wo, std::size_t heads) {
            AttnParams<double> params{mat_from(wq, "wq"), mat_from(wk, "wk"),
                                      mat_from(wv, "wv"), mat_from(wo, "wo")};
            AttnConfig cfg;
            cfg.heads = heads;
            const MatT<double> xm = mat_from(x, "x");
            return mat_to(
                dense_causal_attention(xm, params, cfg.effective_scale(xm.cols), heads));
        },
        py::arg("x"), py::arg("wq"), py::arg("wk"), py::arg("wv"), py::arg("wo"),
        py::arg("heads") = 1, "Quadratic causal softmax attention, the reference baseline.");
}
