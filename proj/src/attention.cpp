#include "sparsek/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sparsek/cache.hpp"

namespace sparsek {

double AttnConfig::effective_scale(std::size_t d_model) const {
    return scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(head_dim(d_model)));
}

void AttnConfig::validate(std::size_t d_model, const ScoringParams& scoring) const {
    if (heads == 0) throw ConfigError("attention: heads must be positive");
    if (d_model == 0 || d_model % heads != 0)
        throw ConfigError("attention: d_model must be a positive multiple of heads");
    if (!std::isfinite(k) || k < 0.0) throw ConfigError("attention: k must be finite and >= 0");
    if (!std::isfinite(scale) || scale < 0.0) throw ConfigError("attention: bad scale");
    if (group_size == 0) throw ConfigError("attention: group_size must be positive");
    if (linear_mix) {
        if (scoring.norm_mode != NormMode::timestep_norm)
            throw ConfigError(
                "linear mix requires timestep normalization; raw scores make the "
                "linear branch blow up");
    } else if (window == 0 && std::floor(k) < 1.0) {
        throw ConfigError(
            "attention: window + floor(k) must be >= 1 (only the linear mix can "
            "run with neither)");
    }
    if (k > 0.0 && scoring.w_score.size() != d_model)
        throw ConfigError("attention: w_score length must equal d_model");
    scoring.validate();
}

template <class T>
MatT<T> sparsek_attention(const MatT<T>& x, const AttnParams<T>& params,
                          const ScoringParams& scoring, const AttnConfig& cfg, AttnTape<T>* tape,
                          const LinearMixParams<T>* lin) {
    SparseKvCache<T> cache(cfg, x.cols, scoring);
    return cache.forward_chunk(x, params, tape, lin);
}

template <class T>
MatT<T> linear_mix_attention(const MatT<T>& x, const AttnParams<T>& params,
                             const ScoringParams& scoring, const AttnConfig& cfg,
                             const LinearMixParams<T>& lin, AttnTape<T>* tape) {
    AttnConfig c = cfg;
    c.linear_mix = true;
    SparseKvCache<T> cache(c, x.cols, scoring);
    return cache.forward_chunk(x, params, tape, &lin);
}

template <class T>
MatT<T> multi_head(const std::vector<MatT<T>>& head_outputs, const MatT<T>& wo) {
    if (head_outputs.empty()) throw ArgumentError("multi_head: no heads");
    const std::size_t n = head_outputs[0].rows;
    std::size_t d = 0;
    for (const auto& h : head_outputs) {
        if (h.rows != n) throw ShapeError("multi_head: row count mismatch");
        d += h.cols;
    }
    if (wo.rows != d) throw ShapeError("multi_head: wo rows must equal concatenated width");
    MatT<T> concat(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t off = 0;
        for (const auto& h : head_outputs) {
            std::copy(h.row(i), h.row(i) + h.cols, concat.row(i) + off);
            off += h.cols;
        }
    }
    return matmul(concat, wo);
}

template <class T>
MatT<T> dense_causal_attention(const MatT<T>& x, const AttnParams<T>& params, double scale,
                               std::size_t heads, MatT<T>* head_concat_out) {
    const std::size_t n = x.rows, d = x.cols;
    if (heads == 0 || d % heads) throw ConfigError("dense attention: bad head count");
    const std::size_t p = d / heads;
    MatT<T> q = matmul(x, params.wq);
    MatT<T> k = matmul(x, params.wk);
    MatT<T> v = matmul(x, params.wv);
    MatT<T> concat(n, d);
    std::vector<T> a;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t hh = 0; hh < heads; ++hh) {
            const std::size_t off = hh * p;
            a.assign(i + 1, T(0));
            T maxa = std::numeric_limits<T>::lowest();
            for (std::size_t j = 0; j <= i; ++j) {
                T dot = T(0);
                for (std::size_t c = 0; c < p; ++c) dot += q(i, off + c) * k(j, off + c);
                a[j] = T(scale) * dot;
                if (a[j] > maxa) maxa = a[j];
            }
            T den = T(0);
            for (std::size_t j = 0; j <= i; ++j) {
                a[j] = std::exp(a[j] - maxa);
                den += a[j];
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const T pi = a[j] / den;
                for (std::size_t c = 0; c < p; ++c) concat(i, off + c) += pi * v(j, off + c);
            }
        }
    }
    if (head_concat_out) *head_concat_out = concat;
    return matmul(concat, params.wo);
}

template <class T>
AttnGrads<T> dense_causal_attention_backward(const MatT<T>& x, const AttnParams<T>& params,
                                             double scale, std::size_t heads,
                                             const MatT<T>& head_concat, const MatT<T>& grad_out) {
    const std::size_t n = x.rows, d = x.cols, p = d / heads;
    MatT<T> q = matmul(x, params.wq);
    MatT<T> k = matmul(x, params.wk);
    MatT<T> v = matmul(x, params.wv);

    Tensor2 ghc(n, d), dq(n, d), dk(n, d), dv(n, d);
    Tensor2 dwo(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < d; ++r) {
            const double h = static_cast<double>(head_concat(i, r));
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double go = static_cast<double>(grad_out(i, c));
                dwo(r, c) += h * go;
                acc += go * static_cast<double>(params.wo(r, c));
            }
            ghc(i, r) = acc;
        }

    std::vector<T> a;
    std::vector<double> pis, bs;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t hh = 0; hh < heads; ++hh) {
            const std::size_t off = hh * p;
            a.assign(i + 1, T(0));
            T maxa = std::numeric_limits<T>::lowest();
            for (std::size_t j = 0; j <= i; ++j) {
                T dot = T(0);
                for (std::size_t c = 0; c < p; ++c) dot += q(i, off + c) * k(j, off + c);
                a[j] = T(scale) * dot;
                if (a[j] > maxa) maxa = a[j];
            }
            T den = T(0);
            for (std::size_t j = 0; j <= i; ++j) {
                a[j] = std::exp(a[j] - maxa);
                den += a[j];
            }
            pis.assign(i + 1, 0.0);
            bs.assign(i + 1, 0.0);
            double s = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                pis[j] = static_cast<double>(a[j] / den);
                double b = 0.0;
                for (std::size_t c = 0; c < p; ++c)
                    b += ghc(i, off + c) * static_cast<double>(v(j, off + c));
                bs[j] = b;
                s += pis[j] * b;
                for (std::size_t c = 0; c < p; ++c) dv(j, off + c) += pis[j] * ghc(i, off + c);
            }
            for (std::size_t j = 0; j <= i; ++j) {
                const double cj = scale * pis[j] * (bs[j] - s);
                for (std::size_t c = 0; c < p; ++c) {
                    dq(i, off + c) += cj * static_cast<double>(k(j, off + c));
                    dk(j, off + c) += cj * static_cast<double>(q(i, off + c));
                }
            }
        }
    }

    AttnGrads<T> g;
    g.dx = MatT<T>(n, d);
    g.dwq = MatT<T>(d, d);
    g.dwk = MatT<T>(d, d);
    g.dwv = MatT<T>(d, d);
    g.dwo = MatT<T>(d, d);
    Tensor2 dwq(d, d), dwk(d, d), dwv(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            const double xv = static_cast<double>(x(i, r));
            for (std::size_t c = 0; c < d; ++c) {
                acc += dq(i, c) * static_cast<double>(params.wq(r, c)) +
                       dk(i, c) * static_cast<double>(params.wk(r, c)) +
                       dv(i, c) * static_cast<double>(params.wv(r, c));
                dwq(r, c) += xv * dq(i, c);
                dwk(r, c) += xv * dk(i, c);
                dwv(r, c) += xv * dv(i, c);
            }
            g.dx(i, r) = static_cast<T>(acc);
        }
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            g.dwo(r, c) = static_cast<T>(dwo(r, c));
            g.dwq(r, c) = static_cast<T>(dwq(r, c));
            g.dwk(r, c) = static_cast<T>(dwk(r, c));
            g.dwv(r, c) = static_cast<T>(dwv(r, c));
        }
    return g;
}

namespace {

// elu'(a): 1 above zero, exp(a) below (the positive feature map's slope).
inline double elu_slope(double a) { return a > 0.0 ? 1.0 : std::exp(a); }

}  // namespace

template <class T>
AttnGrads<T> sparsek_attention_backward(const AttnTape<T>& tape, const MatT<T>& grad_out,
                                        const AttnParams<T>& params, const ScoringParams& scoring,
                                        const LinearMixParams<T>* lin) {
    const std::size_t n = tape.queries.size();
    const std::size_t d = tape.d_model;
    if (tape.x.rows != n || tape.head_concat.rows != n)
        throw ArgumentError("backward: tape does not cover the sequence");
    if (grad_out.rows != n || grad_out.cols != d) throw ShapeError("backward: grad_out shape");
    const AttnConfig& cfg = tape.cfg;
    if (cfg.linear_mix && !lin) throw ConfigError("backward: linear mix needs feature parameters");
    const std::size_t heads = cfg.heads, p = d / heads;
    const double scale = cfg.effective_scale(d);

    // Chunk start of every position; gradients never cross to the left of it.
    std::vector<std::size_t> cs_of(n, 0);
    for (std::size_t ci = 0; ci < tape.chunk_starts.size(); ++ci) {
        const std::size_t lo = tape.chunk_starts[ci];
        const std::size_t hi = ci + 1 < tape.chunk_starts.size() ? tape.chunk_starts[ci + 1] : n;
        for (std::size_t i = lo; i < hi; ++i) cs_of[i] = lo;
    }

    Tensor2 ghc(n, d), dq(n, d), dk(n, d), dv(n, d), dwo(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < d; ++r) {
            const double h = static_cast<double>(tape.head_concat(i, r));
            double acc = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double go = static_cast<double>(grad_out(i, c));
                dwo(r, c) += h * go;
                acc += go * static_cast<double>(params.wo(r, c));
            }
            ghc(i, r) = acc;
        }

    std::vector<double> gu(n, 0.0), graw(n, 0.0);
    std::vector<double> gm, pis, bws;
    std::vector<Tensor2> dfeat;
    std::vector<Tensor2> gphi_k;  // per head, n x p
    std::vector<double> phi_q, phi_k, o_h, num;
    if (cfg.linear_mix) {
        dfeat.assign(heads, Tensor2(p, p));
        gphi_k.assign(heads, Tensor2(n, p));
    }

    for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = tape.queries[i];
        const std::size_t cs = cs_of[i];
        const std::size_t n_att = rec.att.size();
        gm.assign(rec.n_sel, 0.0);

        if (!cfg.linear_mix) {
            for (std::size_t hh = 0; hh < heads; ++hh) {
                const std::size_t off = hh * p;
                const T maxa = rec.maxa[hh], den = rec.denom[hh];
                pis.assign(n_att, 0.0);
                bws.assign(n_att, 0.0);
                double s = 0.0;
                for (std::size_t jdx = 0; jdx < n_att; ++jdx) {
                    const std::size_t j = rec.att[jdx];
                    T dot = T(0);
                    for (std::size_t c = 0; c < p; ++c) dot += tape.q(i, off + c) * tape.k(j, off + c);
                    T aj = T(scale) * dot;
                    if (cfg.key_mode == KeyMode::soft && jdx < rec.n_sel)
                        aj *= T(rec.gate[jdx]);
                    const double pi = static_cast<double>(std::exp(aj - maxa) / den);
                    const double wv = (jdx < rec.n_sel && cfg.mask_mode == MaskApply::soft)
                                          ? rec.gate[jdx]
                                          : 1.0;
                    double b = 0.0;
                    for (std::size_t c = 0; c < p; ++c)
                        b += ghc(i, off + c) * static_cast<double>(tape.v(j, off + c));
                    pis[jdx] = pi;
                    bws[jdx] = wv * b;
                    s += pi * wv * b;
                    if (j >= cs) {
                        const double c0 = pi * wv;
                        for (std::size_t c = 0; c < p; ++c) dv(j, off + c) += c0 * ghc(i, off + c);
                    }
                    // Value-path gate gradient; straight-through runs the hard
                    // forward through this same soft pullback.
                    if (jdx < rec.n_sel) gm[jdx] += pi * b;
                }
                for (std::size_t jdx = 0; jdx < n_att; ++jdx) {
                    const std::size_t j = rec.att[jdx];
                    const double cj = pis[jdx] * (bws[jdx] - s);
                    const bool gated_key = cfg.key_mode == KeyMode::soft && jdx < rec.n_sel;
                    const double kap = gated_key ? rec.gate[jdx] : 1.0;
                    const double coef = scale * cj * kap;
                    for (std::size_t c = 0; c < p; ++c)
                        dq(i, off + c) += coef * static_cast<double>(tape.k(j, off + c));
                    if (j >= cs)
                        for (std::size_t c = 0; c < p; ++c)
                            dk(j, off + c) += coef * static_cast<double>(tape.q(i, off + c));
                    if (gated_key) {
                        double dot = 0.0;
                        for (std::size_t c = 0; c < p; ++c)
                            dot += static_cast<double>(tape.q(i, off + c)) *
                                   static_cast<double>(tape.k(j, off + c));
                        gm[jdx] += scale * cj * dot;
                    }
                }
            }
        } else {
            for (std::size_t hh = 0; hh < heads; ++hh) {
                const std::size_t off = hh * p;
                const MatT<T>& feat = lin->feat[hh];
                // phi on the query slice, in double.
                std::vector<double> pre_q(p, 0.0);
                phi_q.assign(p, 0.0);
                for (std::size_t r = 0; r < p; ++r) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < p; ++c)
                        acc += static_cast<double>(feat(r, c)) *
                               static_cast<double>(tape.q(i, off + c));
                    pre_q[r] = acc;
                    phi_q[r] = acc > 0.0 ? acc + 1.0 : std::exp(acc);
                }
                auto gate_of = [&](std::size_t j, std::size_t& cursor, bool& selected) {
                    selected = false;
                    while (cursor < n_att && rec.att[cursor] < j) ++cursor;
                    if (cursor < n_att && rec.att[cursor] == j) {
                        if (cursor < rec.n_sel) {
                            selected = true;
                            return rec.gate[cursor];
                        }
                        return 1.0;
                    }
                    return 0.0;
                };

                // Recompute the mixture readout directly.
                num.assign(p, 0.0);
                double den = 0.0;
                {
                    std::size_t cursor = 0;
                    for (std::size_t j = 0; j <= i; ++j) {
                        bool selected;
                        const double m = gate_of(j, cursor, selected);
                        phi_k.assign(p, 0.0);
                        double lam = 0.0;
                        for (std::size_t r = 0; r < p; ++r) {
                            double acc = 0.0;
                            for (std::size_t c = 0; c < p; ++c)
                                acc += static_cast<double>(feat(r, c)) *
                                       static_cast<double>(tape.k(j, off + c));
                            const double f = acc > 0.0 ? acc + 1.0 : std::exp(acc);
                            phi_k[r] = f;
                            lam += phi_q[r] * f;
                        }
                        double w = (1.0 - m) * lam;
                        if (m > 0.0) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < p; ++c)
                                dot += static_cast<double>(tape.q(i, off + c)) *
                                       static_cast<double>(tape.k(j, off + c));
                            w += m * std::exp(scale * dot);
                        }
                        for (std::size_t c = 0; c < p; ++c)
                            num[c] += w * static_cast<double>(tape.v(j, off + c));
                        den += w;
                    }
                }
                if (!(den > 0.0)) throw NumericError("linear mix backward: nonpositive denominator");
                o_h.assign(p, 0.0);
                for (std::size_t c = 0; c < p; ++c) o_h[c] = num[c] / den;
                double go_dot_o = 0.0;
                for (std::size_t c = 0; c < p; ++c) go_dot_o += ghc(i, off + c) * o_h[c];

                std::vector<double> gphi_q(p, 0.0);
                std::size_t cursor = 0;
                std::size_t sel_cursor = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    bool selected;
                    const double m = gate_of(j, cursor, selected);
                    phi_k.assign(p, 0.0);
                    double lam = 0.0;
                    for (std::size_t r = 0; r < p; ++r) {
                        double acc = 0.0;
                        for (std::size_t c = 0; c < p; ++c)
                            acc += static_cast<double>(feat(r, c)) *
                                   static_cast<double>(tape.k(j, off + c));
                        const double f = acc > 0.0 ? acc + 1.0 : std::exp(acc);
                        phi_k[r] = f;
                        lam += phi_q[r] * f;
                    }
                    double e = 0.0;
                    double w = (1.0 - m) * lam;
                    if (m > 0.0) {
                        double dot = 0.0;
                        for (std::size_t c = 0; c < p; ++c)
                            dot += static_cast<double>(tape.q(i, off + c)) *
                                   static_cast<double>(tape.k(j, off + c));
                        e = std::exp(scale * dot);
                        w += m * e;
                    }
                    double bv = 0.0;
                    for (std::size_t c = 0; c < p; ++c)
                        bv += ghc(i, off + c) * static_cast<double>(tape.v(j, off + c));
                    const double rj = (bv - go_dot_o) / den;
                    if (j >= cs) {
                        const double c0 = w / den;
                        for (std::size_t c = 0; c < p; ++c) dv(j, off + c) += c0 * ghc(i, off + c);
                    }
                    if (m > 0.0) {
                        const double dd = rj * m * e * scale;
                        for (std::size_t c = 0; c < p; ++c)
                            dq(i, off + c) += dd * static_cast<double>(tape.k(j, off + c));
                        if (j >= cs)
                            for (std::size_t c = 0; c < p; ++c)
                                dk(j, off + c) += dd * static_cast<double>(tape.q(i, off + c));
                    }
                    const double glam = rj * (1.0 - m);
                    for (std::size_t r = 0; r < p; ++r) gphi_q[r] += glam * phi_k[r];
                    if (j >= cs)
                        for (std::size_t r = 0; r < p; ++r)
                            gphi_k[hh](j, r) += glam * phi_q[r];
                    if (selected) {
                        while (sel_cursor < rec.n_sel && rec.att[sel_cursor] < j) ++sel_cursor;
                        gm[sel_cursor] += rj * (e - lam);
                    }
                }
                // Query-side feature backward.
                for (std::size_t r = 0; r < p; ++r) {
                    const double dpre = gphi_q[r] * elu_slope(pre_q[r]);
                    for (std::size_t c = 0; c < p; ++c) {
                        dfeat[hh](r, c) += dpre * static_cast<double>(tape.q(i, off + c));
                        dq(i, off + c) += dpre * static_cast<double>(feat(r, c));
                    }
                }
            }
        }

        // Selection pullback: spread the gate gradients over the fractional
        // support of the state this query froze, minus the support mean. Only
        // positions from the query's own chunk receive anything.
        if (rec.n_sel) {
            const std::size_t state_t = i - cfg.window;
            const double tau = tape.tau_push[state_t];
            double gsum = 0.0;
            std::size_t cnt = 0;
            {
                std::size_t sel = 0;
                for (std::size_t j = 0; j <= state_t; ++j) {
                    while (sel < rec.n_sel && rec.att[sel] < j) ++sel;
                    const double f = tape.u[j] - tau;
                    if (f > 0.0 && f < 1.0) {
                        ++cnt;
                        if (sel < rec.n_sel && rec.att[sel] == j) gsum += gm[sel];
                    }
                }
            }
            if (cnt) {
                const double mean = gsum / static_cast<double>(cnt);
                std::size_t sel = 0;
                for (std::size_t j = 0; j <= state_t; ++j) {
                    while (sel < rec.n_sel && rec.att[sel] < j) ++sel;
                    const double f = tape.u[j] - tau;
                    if (f > 0.0 && f < 1.0 && j >= cs) {
                        const double gmj =
                            (sel < rec.n_sel && rec.att[sel] == j) ? gm[sel] : 0.0;
                        gu[j] += gmj - mean;
                    }
                }
            }
        }
    }

    // Scores back to raws. The cumulative statistics make this O(n^2);
    // positions left of a chunk start stay frozen.
    if (cfg.k > 0.0) {
        if (scoring.norm_mode == NormMode::none) {
            for (std::size_t j = 0; j < n; ++j) graw[j] = gu[j];
        } else {
            for (std::size_t j = 0; j < n; ++j) {
                if (gu[j] == 0.0) continue;
                const double cnt = static_cast<double>(j + 1);
                const double s = tape.norm_sdev[j];
                const double mu = tape.norm_mean[j];
                const double yj = (tape.raw[j] - mu) / s;
                const double coef = gu[j] / s;
                for (std::size_t j2 = cs_of[j]; j2 <= j; ++j2) {
                    const double delta = j2 == j ? 1.0 : 0.0;
                    graw[j2] +=
                        coef * (delta - 1.0 / cnt - yj * (tape.raw[j2] - mu) / (cnt * s));
                }
            }
        }
    }

    AttnGrads<T> g;
    g.dx = MatT<T>(n, d);
    g.dwq = MatT<T>(d, d);
    g.dwk = MatT<T>(d, d);
    g.dwv = MatT<T>(d, d);
    g.dwo = MatT<T>(d, d);
    g.dw_score.assign(cfg.k > 0.0 ? d : scoring.w_score.size(), 0.0);
    if (cfg.k > 0.0)
        for (std::size_t j = 0; j < n; ++j) {
            if (graw[j] == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c)
                g.dw_score[c] += graw[j] * static_cast<double>(tape.x(j, c));
        }

    // Feature-map pullback on the key side, one pass per position.
    if (cfg.linear_mix) {
        g.dfeat.assign(heads, MatT<T>(p, p));
        for (std::size_t hh = 0; hh < heads; ++hh) {
            const std::size_t off = hh * p;
            const MatT<T>& feat = lin->feat[hh];
            for (std::size_t j = 0; j < n; ++j) {
                bool any = false;
                for (std::size_t r = 0; r < p; ++r)
                    if (gphi_k[hh](j, r) != 0.0) {
                        any = true;
                        break;
                    }
                if (!any) continue;
                for (std::size_t r = 0; r < p; ++r) {
                    double pre = 0.0;
                    for (std::size_t c = 0; c < p; ++c)
                        pre += static_cast<double>(feat(r, c)) *
                               static_cast<double>(tape.k(j, off + c));
                    const double dpre = gphi_k[hh](j, r) * elu_slope(pre);
                    if (dpre == 0.0) continue;
                    for (std::size_t c = 0; c < p; ++c) {
                        dfeat[hh](r, c) += dpre * static_cast<double>(tape.k(j, off + c));
                        dk(j, off + c) += dpre * static_cast<double>(feat(r, c));
                    }
                }
            }
            for (std::size_t r = 0; r < p; ++r)
                for (std::size_t c = 0; c < p; ++c)
                    g.dfeat[hh](r, c) = static_cast<T>(dfeat[hh](r, c));
        }
    }

    Tensor2 dwq(d, d), dwk(d, d), dwv(d, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t r = 0; r < d; ++r) {
            double acc = 0.0;
            const double xv = static_cast<double>(tape.x(i, r));
            for (std::size_t c = 0; c < d; ++c) {
                acc += dq(i, c) * static_cast<double>(params.wq(r, c)) +
                       dk(i, c) * static_cast<double>(params.wk(r, c)) +
                       dv(i, c) * static_cast<double>(params.wv(r, c));
                dwq(r, c) += xv * dq(i, c);
                dwk(r, c) += xv * dk(i, c);
                dwv(r, c) += xv * dv(i, c);
            }
            if (cfg.k > 0.0) acc += graw[i] * scoring.w_score[r];
            g.dx(i, r) = static_cast<T>(acc);
        }
    for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) {
            g.dwo(r, c) = static_cast<T>(dwo(r, c));
            g.dwq(r, c) = static_cast<T>(dwq(r, c));
            g.dwk(r, c) = static_cast<T>(dwk(r, c));
            g.dwv(r, c) = static_cast<T>(dwv(r, c));
        }
    return g;
}

template MatT<double> sparsek_attention(const MatT<double>&, const AttnParams<double>&,
                                        const ScoringParams&, const AttnConfig&,
                                        AttnTape<double>*, const LinearMixParams<double>*);
template MatT<float> sparsek_attention(const MatT<float>&, const AttnParams<float>&,
                                       const ScoringParams&, const AttnConfig&, AttnTape<float>*,
                                       const LinearMixParams<float>*);
template AttnGrads<double> sparsek_attention_backward(const AttnTape<double>&,
                                                      const MatT<double>&,
                                                      const AttnParams<double>&,
                                                      const ScoringParams&,
                                                      const LinearMixParams<double>*);
template AttnGrads<float> sparsek_attention_backward(const AttnTape<float>&, const MatT<float>&,
                                                     const AttnParams<float>&,
                                                     const ScoringParams&,
                                                     const LinearMixParams<float>*);
template MatT<double> linear_mix_attention(const MatT<double>&, const AttnParams<double>&,
                                           const ScoringParams&, const AttnConfig&,
                                           const LinearMixParams<double>&, AttnTape<double>*);
template MatT<float> linear_mix_attention(const MatT<float>&, const AttnParams<float>&,
                                          const ScoringParams&, const AttnConfig&,
                                          const LinearMixParams<float>&, AttnTape<float>*);
template MatT<double> multi_head(const std::vector<MatT<double>>&, const MatT<double>&);
template MatT<float> multi_head(const std::vector<MatT<float>>&, const MatT<float>&);
template MatT<double> dense_causal_attention(const MatT<double>&, const AttnParams<double>&,
                                             double, std::size_t, MatT<double>*);
template MatT<float> dense_causal_attention(const MatT<float>&, const AttnParams<float>&, double,
                                            std::size_t, MatT<float>*);
template AttnGrads<double> dense_causal_attention_backward(const MatT<double>&,
                                                           const AttnParams<double>&, double,
                                                           std::size_t, const MatT<double>&,
                                                           const MatT<double>&);
template AttnGrads<float> dense_causal_attention_backward(const MatT<float>&,
                                                          const AttnParams<float>&, double,
                                                          std::size_t, const MatT<float>&,
                                                          const MatT<float>&);

}  // namespace sparsek
