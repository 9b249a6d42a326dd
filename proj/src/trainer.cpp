#include "sparsek/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <thread>
#include <utility>

#include "sparsek/common.hpp"

namespace sparsek {

namespace {

constexpr double kLnEps = 1e-5;

struct View {
    double* p;
    std::size_t n;
    bool decay;
};

std::vector<View> views_of(Model& m) {
    std::vector<View> out;
    for_each_param(m, [&](auto&&, double* p, std::size_t n, bool decay) {
        out.push_back(View{p, n, decay});
    });
    return out;
}

struct ConstView {
    const double* p;
    std::size_t n;
};

std::vector<ConstView> views_of(const Model& m) {
    std::vector<ConstView> out;
    for_each_param(m, [&](auto&&, const double* p, std::size_t n, bool) {
        out.push_back(ConstView{p, n});
    });
    return out;
}

void add_scaled(Model& dst, const Model& src, double s) {
    auto dv = views_of(dst);
    auto sv = views_of(static_cast<const Model&>(src));
    for (std::size_t t = 0; t < dv.size(); ++t)
        for (std::size_t i = 0; i < dv[t].n; ++i) dv[t].p[i] += s * sv[t].p[i];
}

Tensor2 transpose(const Tensor2& a) {
    Tensor2 out(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
    return out;
}

void add_row_bias(Tensor2& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) a(i, j) += b[j];
}

void layer_norm_fwd(const Tensor2& x, const std::vector<double>& g, const std::vector<double>& b,
                    Tensor2& y, std::vector<double>& mean, std::vector<double>& rstd) {
    const std::size_t n = x.rows, d = x.cols;
    y = Tensor2(n, d);
    mean.resize(n);
    rstd.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double r = 1.0 / std::sqrt(var + kLnEps);
        mean[i] = mu;
        rstd[i] = r;
        for (std::size_t j = 0; j < d; ++j) y(i, j) = g[j] * (x(i, j) - mu) * r + b[j];
    }
}

Tensor2 layer_norm_bwd(const Tensor2& dy, const Tensor2& x, const std::vector<double>& mean,
                       const std::vector<double>& rstd, const std::vector<double>& g,
                       std::vector<double>& dg, std::vector<double>& db) {
    const std::size_t n = x.rows, d = x.cols;
    Tensor2 dx(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = rstd[i];
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(i, j) - mean[i]) * r;
            const double dyv = dy(i, j);
            dg[j] += dyv * xh;
            db[j] += dyv;
            const double dxh = dyv * g[j];
            m1 += dxh;
            m2 += dxh * xh;
        }
        m1 /= static_cast<double>(d);
        m2 /= static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(i, j) - mean[i]) * r;
            dx(i, j) = r * (dy(i, j) * g[j] - m1 - xh * m2);
        }
    }
    return dx;
}

// Exact GELU, x * Phi(x) with the standard-normal CDF.
constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

Model allocate_model(const ToyModelConfig& cfg) {
    Model m;
    m.cfg = cfg;
    const std::size_t d = cfg.dim, hd = 4 * cfg.dim;
    m.tok_emb = Tensor2(cfg.vocab, d);
    m.pos_emb = Tensor2(cfg.context, d);
    m.layers.resize(cfg.layers);
    for (auto& lp : m.layers) {
        lp.ln1_g.assign(d, 0.0);
        lp.ln1_b.assign(d, 0.0);
        lp.ln2_g.assign(d, 0.0);
        lp.ln2_b.assign(d, 0.0);
        lp.attn.wq = Tensor2(d, d);
        lp.attn.wk = Tensor2(d, d);
        lp.attn.wv = Tensor2(d, d);
        lp.attn.wo = Tensor2(d, d);
        if (cfg.uses_selection()) lp.w_score.assign(d, 0.0);
        if (cfg.uses_linear_mix()) {
            const std::size_t p = d / cfg.heads;
            lp.feat.feat.assign(cfg.heads, Tensor2(p, p));
        }
        lp.w1 = Tensor2(d, hd);
        lp.b1.assign(hd, 0.0);
        lp.w2 = Tensor2(hd, d);
        lp.b2.assign(d, 0.0);
    }
    m.lnf_g.assign(d, 0.0);
    m.lnf_b.assign(d, 0.0);
    m.head = Tensor2(d, cfg.vocab);
    return m;
}

void fill_normal_vec(Rng& rng, std::vector<double>& v, double scale) {
    for (double& x : v) x = scale * rng.normal();
}

void fill_normal_mat(Rng& rng, Tensor2& m, double scale) {
    for (double& x : m.data) x = scale * rng.normal();
}

// Boundary margin of one selection tape: finite differences stay on the
// analytic branch only when no score sits near the clamp levels tau / tau+1
// and the retained top-floor(k) set is separated from the rest.
bool tape_separated(const AttnTape<double>& tape, double margin) {
    const std::size_t kfloor = static_cast<std::size_t>(std::floor(tape.cfg.k));
    std::vector<double> exited;
    for (std::size_t e = 0; e < tape.tau_push.size(); ++e) {
        const double tau = tape.tau_push[e];
        if (std::isfinite(tau)) {
            for (std::size_t j = 0; j <= e; ++j) {
                if (std::fabs(tape.u[j] - tau) < margin) return false;
                if (std::fabs(tape.u[j] - (tau + 1.0)) < margin) return false;
            }
        }
        exited.push_back(tape.u[e]);
        if (kfloor > 0 && exited.size() > kfloor) {
            std::vector<double> s = exited;
            std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(kfloor) - 1,
                             s.end(), std::greater<>());
            const double in_set =
                *std::min_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(kfloor));
            const double out_set =
                *std::max_element(s.begin() + static_cast<std::ptrdiff_t>(kfloor), s.end());
            if (in_set - out_set < margin) return false;
        }
    }
    return true;
}

void run_stack(const Model& m, const std::vector<std::uint16_t>& toks, ForwardTrace& tr) {
    const ToyModelConfig& cfg = m.cfg;
    const std::size_t n = toks.size(), d = cfg.dim;
    if (n == 0) throw ShapeError("model: empty input");
    if (n > cfg.context) throw ShapeError("model: input longer than the context length");
    for (std::uint16_t t : toks)
        if (t >= cfg.vocab) throw ArgumentError("model: token id out of vocabulary range");

    Tensor2 x(n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) x(i, j) = m.tok_emb(toks[i], j) + m.pos_emb(i, j);

    const AttnConfig ecfg = cfg.effective_attn();
    const double scale = ecfg.effective_scale(d);
    tr.layers.assign(cfg.layers, LayerTrace{});
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        LayerTrace& lt = tr.layers[l];
        const LayerParams& lp = m.layers[l];
        lt.ln1_in = x;
        layer_norm_fwd(x, lp.ln1_g, lp.ln1_b, lt.a, lt.ln1_mean, lt.ln1_rstd);
        Tensor2 attn_out;
        if (cfg.kind == AttnKind::full) {
            attn_out = dense_causal_attention(lt.a, lp.attn, scale, cfg.heads, &lt.head_concat);
        } else {
            ScoringParams sc = cfg.scoring;
            sc.w_score = lp.w_score;
            const LinearMixParams<double>* lin = cfg.uses_linear_mix() ? &lp.feat : nullptr;
            attn_out = sparsek_attention(lt.a, lp.attn, sc, ecfg, &lt.tape, lin);
        }
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += attn_out.data[i];
        lt.ln2_in = x;
        layer_norm_fwd(x, lp.ln2_g, lp.ln2_b, lt.b, lt.ln2_mean, lt.ln2_rstd);
        lt.h1 = matmul(lt.b, lp.w1);
        add_row_bias(lt.h1, lp.b1);
        lt.g1 = lt.h1;
        for (double& v : lt.g1.data) v = gelu(v);
        Tensor2 mlp = matmul(lt.g1, lp.w2);
        add_row_bias(mlp, lp.b2);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += mlp.data[i];
    }
    tr.lnf_in = x;
    layer_norm_fwd(x, m.lnf_g, m.lnf_b, tr.xf, tr.lnf_mean, tr.lnf_rstd);
    tr.logits = matmul(tr.xf, m.head);
}

// Per-prediction weights: empty means uniform. The weighted total must be
// positive or the loss is undefined.
std::vector<double> prediction_weights(const Sample& s, std::size_t n_pred) {
    if (s.loss_weight.empty()) return std::vector<double>(n_pred, 1.0);
    if (s.loss_weight.size() != n_pred)
        throw ShapeError("sample: loss_weight length must equal the prediction count");
    return s.loss_weight;
}

double checked_weight_total(const std::vector<double>& w) {
    double total = 0.0;
    for (double v : w) {
        if (!(v >= 0.0)) throw ArgumentError("sample: loss weights must be finite and >= 0");
        total += v;
    }
    if (total <= 0.0) throw ArgumentError("sample: no positive loss weight");
    return total;
}

void put_bytes(std::ostream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void put_u8(std::ostream& out, std::uint8_t v) { put_bytes(out, &v, 1); }

void put_u16(std::ostream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(out, b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void get_bytes(std::istream& in, void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n))
        throw IoError("checkpoint: truncated file");
}

std::uint8_t get_u8(std::istream& in) {
    std::uint8_t v;
    get_bytes(in, &v, 1);
    return v;
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    get_bytes(in, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    get_bytes(in, b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) { return std::bit_cast<double>(get_u64(in)); }

template <class E>
E checked_enum(std::uint8_t raw, std::uint8_t max_value, const char* what) {
    if (raw > max_value) throw IoError(std::string("checkpoint: bad ") + what);
    return static_cast<E>(raw);
}

std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

const char* to_string(AttnKind kind) {
    switch (kind) {
        case AttnKind::full: return "full";
        case AttnKind::sw: return "sw";
        case AttnKind::sparsek_sw: return "sparsek_sw";
        case AttnKind::sparsek_linear_sw: return "sparsek_linear_sw";
    }
    return "?";
}

AttnKind attn_kind_from_string(const std::string& name) {
    if (name == "full") return AttnKind::full;
    if (name == "sw") return AttnKind::sw;
    if (name == "sparsek_sw") return AttnKind::sparsek_sw;
    if (name == "sparsek_linear_sw") return AttnKind::sparsek_linear_sw;
    throw ConfigError("unknown attention kind: " + name);
}

AttnConfig ToyModelConfig::effective_attn() const {
    AttnConfig c = attn;
    c.heads = heads;
    c.linear_mix = uses_linear_mix();
    if (kind == AttnKind::sw) c.k = 0.0;
    return c;
}

std::size_t ToyModelConfig::max_kv_per_query() const {
    switch (kind) {
        case AttnKind::full: return context;
        case AttnKind::sw: return std::min(attn.window, context);
        default:
            return std::min(attn.window + static_cast<std::size_t>(std::floor(attn.k)), context);
    }
}

void ToyModelConfig::validate() const {
    if (vocab < 2 || vocab > 65536) throw ConfigError("model: vocab must be in [2, 65536]");
    if (dim == 0 || heads == 0 || dim % heads != 0)
        throw ConfigError("model: dim must be a positive multiple of heads");
    if (layers == 0) throw ConfigError("model: layers must be positive");
    if (context < 2) throw ConfigError("model: context must be >= 2");
    if (uses_selection() && !(attn.k > 0.0))
        throw ConfigError("model: sparsek kinds need a positive selection budget k");
    if (kind == AttnKind::sw && attn.window == 0)
        throw ConfigError("model: sw kind needs a positive window");
    if (kind != AttnKind::full) {
        ScoringParams probe = scoring;
        probe.w_score.assign(uses_selection() ? dim : 0, 0.0);
        effective_attn().validate(dim, probe);
    }
}

Model make_model(const ToyModelConfig& cfg, Rng& rng) {
    cfg.validate();
    Model m = allocate_model(cfg);
    const double d = static_cast<double>(cfg.dim);
    const std::size_t p = cfg.dim / cfg.heads;
    // Residual-branch outputs are shrunk with depth so the stream's variance
    // stays flat at init.
    const double res = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.layers));
    fill_normal_mat(rng, m.tok_emb, 0.02);
    fill_normal_mat(rng, m.pos_emb, 0.02);
    for (auto& lp : m.layers) {
        lp.ln1_g.assign(cfg.dim, 1.0);
        lp.ln2_g.assign(cfg.dim, 1.0);
        fill_normal_mat(rng, lp.attn.wq, 1.0 / std::sqrt(d));
        fill_normal_mat(rng, lp.attn.wk, 1.0 / std::sqrt(d));
        fill_normal_mat(rng, lp.attn.wv, 1.0 / std::sqrt(d));
        fill_normal_mat(rng, lp.attn.wo, res / std::sqrt(d));
        if (!lp.w_score.empty()) fill_normal_vec(rng, lp.w_score, 1.0 / std::sqrt(d));
        for (auto& f : lp.feat.feat)
            fill_normal_mat(rng, f, 1.0 / std::sqrt(static_cast<double>(p)));
        fill_normal_mat(rng, lp.w1, 1.0 / std::sqrt(d));
        fill_normal_mat(rng, lp.w2, res / std::sqrt(4.0 * d));
    }
    m.lnf_g.assign(cfg.dim, 1.0);
    fill_normal_mat(rng, m.head, 1.0 / std::sqrt(d));
    return m;
}

Model zeros_like(const Model& m) { return allocate_model(m.cfg); }

std::size_t param_count(const Model& m) {
    std::size_t total = 0;
    for (const ConstView& v : views_of(m)) total += v.n;
    return total;
}

double model_forward(const Model& m, const Sample& sample, ForwardTrace* trace) {
    ForwardTrace local;
    ForwardTrace& tr = trace ? *trace : local;
    if (sample.tokens.size() < 2) throw ShapeError("sample: need at least two tokens");
    const std::size_t n_pred = sample.tokens.size() - 1;
    for (std::uint16_t t : sample.tokens)
        if (t >= m.cfg.vocab) throw ArgumentError("model: token id out of vocabulary range");
    const std::vector<std::uint16_t> input(sample.tokens.begin(), sample.tokens.end() - 1);
    run_stack(m, input, tr);

    const std::vector<double> w = prediction_weights(sample, n_pred);
    const double total_w = checked_weight_total(w);
    const std::size_t vocab = m.cfg.vocab;
    tr.nll.resize(n_pred);
    double loss = 0.0;
    for (std::size_t i = 0; i < n_pred; ++i) {
        const double* row = tr.logits.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(row[j] - mx);
        const double lse = mx + std::log(acc);
        tr.nll[i] = lse - row[sample.tokens[i + 1]];
        loss += w[i] * tr.nll[i];
    }
    tr.loss = loss / total_w;
    return tr.loss;
}

Tensor2 model_logits(const Model& m, const std::vector<std::uint16_t>& tokens) {
    ForwardTrace tr;
    run_stack(m, tokens, tr);
    return std::move(tr.logits);
}

Model model_backward(const Model& m, const Sample& sample, const ForwardTrace& trace) {
    const ToyModelConfig& cfg = m.cfg;
    const std::size_t n_pred = sample.tokens.size() - 1;
    const std::size_t d = cfg.dim, vocab = cfg.vocab;
    const std::vector<double> w = prediction_weights(sample, n_pred);
    const double total_w = checked_weight_total(w);

    Model g = zeros_like(m);
    Tensor2 dlogits(n_pred, vocab);
    for (std::size_t i = 0; i < n_pred; ++i) {
        const double* row = trace.logits.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
        double acc = 0.0;
        for (std::size_t j = 0; j < vocab; ++j) acc += std::exp(row[j] - mx);
        const double wi = w[i] / total_w;
        for (std::size_t j = 0; j < vocab; ++j)
            dlogits(i, j) = wi * std::exp(row[j] - mx) / acc;
        dlogits(i, sample.tokens[i + 1]) -= wi;
    }

    g.head = matmul(transpose(trace.xf), dlogits);
    const Tensor2 dxf = matmul(dlogits, transpose(m.head));
    Tensor2 dx = layer_norm_bwd(dxf, trace.lnf_in, trace.lnf_mean, trace.lnf_rstd, m.lnf_g,
                                g.lnf_g, g.lnf_b);

    const AttnConfig ecfg = cfg.effective_attn();
    const double scale = ecfg.effective_scale(d);
    for (std::size_t li = cfg.layers; li-- > 0;) {
        const LayerTrace& lt = trace.layers[li];
        const LayerParams& lp = m.layers[li];
        LayerParams& gl = g.layers[li];

        // MLP branch; dx is the gradient at the block output.
        Tensor2 dh1 = matmul(dx, transpose(lp.w2));
        g.layers[li].w2 = matmul(transpose(lt.g1), dx);
        for (std::size_t j = 0; j < d; ++j)
            for (std::size_t i = 0; i < dx.rows; ++i) gl.b2[j] += dx(i, j);
        for (std::size_t i = 0; i < dh1.data.size(); ++i)
            dh1.data[i] *= gelu_grad(lt.h1.data[i]);
        for (std::size_t j = 0; j < 4 * d; ++j)
            for (std::size_t i = 0; i < dh1.rows; ++i) gl.b1[j] += dh1(i, j);
        gl.w1 = matmul(transpose(lt.b), dh1);
        const Tensor2 db = matmul(dh1, transpose(lp.w1));
        const Tensor2 dmid =
            layer_norm_bwd(db, lt.ln2_in, lt.ln2_mean, lt.ln2_rstd, lp.ln2_g, gl.ln2_g, gl.ln2_b);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += dmid.data[i];

        // Attention branch.
        AttnGrads<double> ag;
        if (cfg.kind == AttnKind::full) {
            ag = dense_causal_attention_backward(lt.a, lp.attn, scale, cfg.heads, lt.head_concat,
                                                 dx);
        } else {
            ScoringParams sc = cfg.scoring;
            sc.w_score = lp.w_score;
            const LinearMixParams<double>* lin = cfg.uses_linear_mix() ? &lp.feat : nullptr;
            ag = sparsek_attention_backward(lt.tape, dx, lp.attn, sc, lin);
        }
        gl.attn.wq = std::move(ag.dwq);
        gl.attn.wk = std::move(ag.dwk);
        gl.attn.wv = std::move(ag.dwv);
        gl.attn.wo = std::move(ag.dwo);
        if (!gl.w_score.empty()) gl.w_score = ag.dw_score;
        for (std::size_t h = 0; h < gl.feat.feat.size(); ++h) gl.feat.feat[h] = ag.dfeat[h];
        const Tensor2 din =
            layer_norm_bwd(ag.dx, lt.ln1_in, lt.ln1_mean, lt.ln1_rstd, lp.ln1_g, gl.ln1_g,
                           gl.ln1_b);
        for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += din.data[i];
    }

    for (std::size_t i = 0; i < n_pred; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            g.pos_emb(i, j) += dx(i, j);
            g.tok_emb(sample.tokens[i], j) += dx(i, j);
        }
    return g;
}

double lr_at(const TrainHparams& hp, std::size_t step) {
    const double peak = hp.lr, floor_lr = hp.lr * hp.final_lr_frac;
    if (hp.warmup > 0 && step <= hp.warmup)
        return peak * static_cast<double>(step) / static_cast<double>(hp.warmup);
    if (step >= hp.steps || hp.steps <= hp.warmup) return floor_lr;
    const double progress = static_cast<double>(step - hp.warmup) /
                            static_cast<double>(hp.steps - hp.warmup);
    return floor_lr + 0.5 * (peak - floor_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

TrainState init_train_state(const ToyModelConfig& cfg) {
    cfg.validate();
    TrainState st;
    Rng rng(cfg.seed);
    st.model = make_model(cfg, rng);
    st.rng = rng;  // sampling continues the init stream
    const std::size_t total = param_count(st.model);
    st.adam_m.assign(total, 0.0);
    st.adam_v.assign(total, 0.0);
    return st;
}

StepStats train_step(TrainState& state, const std::vector<Sample>& batch,
                     const TrainHparams& hp) {
    if (batch.empty()) throw ArgumentError("train_step: empty batch");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t bsz = batch.size();

    Model grads = zeros_like(state.model);
    std::vector<double> losses(bsz, 0.0);
    const std::size_t workers = std::min(std::max<std::size_t>(hp.threads, 1), bsz);
    if (workers == 1) {
        for (std::size_t s = 0; s < bsz; ++s) {
            ForwardTrace tr;
            losses[s] = model_forward(state.model, batch[s], &tr);
            add_scaled(grads, model_backward(state.model, batch[s], tr), 1.0);
        }
    } else {
        std::vector<Model> wgrads;
        wgrads.reserve(workers);
        for (std::size_t i = 0; i < workers; ++i) wgrads.push_back(zeros_like(state.model));
        const std::size_t chunk = (bsz + workers - 1) / workers;
        std::vector<std::thread> pool;
        for (std::size_t wi = 0; wi < workers; ++wi) {
            const std::size_t lo = wi * chunk, hi = std::min(bsz, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi, wi] {
                for (std::size_t s = lo; s < hi; ++s) {
                    ForwardTrace tr;
                    losses[s] = model_forward(state.model, batch[s], &tr);
                    add_scaled(wgrads[wi], model_backward(state.model, batch[s], tr), 1.0);
                }
            });
        }
        for (auto& t : pool) t.join();
        for (const Model& wg : wgrads) add_scaled(grads, wg, 1.0);
    }

    double loss = 0.0;
    for (double v : losses) loss += v;
    loss /= static_cast<double>(bsz);
    const std::size_t step_now = state.step + 1;

    auto gv = views_of(grads);
    for (View& v : gv)
        for (std::size_t i = 0; i < v.n; ++i) v.p[i] /= static_cast<double>(bsz);

    if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged at step " << step_now << " (loss " << loss
            << "); last-step gradient norms:";
        for_each_param(grads, [&](auto&& name, const double* p, std::size_t n, bool) {
            double sq = 0.0;
            for (std::size_t i = 0; i < n; ++i) sq += p[i] * p[i];
            msg << ' ' << name << '=' << std::sqrt(sq);
        });
        throw NumericError(msg.str());
    }

    double sq = 0.0;
    for (const View& v : gv)
        for (std::size_t i = 0; i < v.n; ++i) sq += v.p[i] * v.p[i];
    const double gnorm = std::sqrt(sq);
    const double clip_scale =
        (hp.clip > 0.0 && gnorm > hp.clip) ? hp.clip / gnorm : 1.0;

    const double lr = lr_at(hp, step_now);
    const double bias1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step_now));
    const double bias2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step_now));
    auto pv = views_of(state.model);
    std::size_t off = 0;
    for (std::size_t t = 0; t < pv.size(); ++t) {
        for (std::size_t i = 0; i < pv[t].n; ++i, ++off) {
            const double gr = gv[t].p[i] * clip_scale;
            state.adam_m[off] = hp.beta1 * state.adam_m[off] + (1.0 - hp.beta1) * gr;
            state.adam_v[off] = hp.beta2 * state.adam_v[off] + (1.0 - hp.beta2) * gr * gr;
            const double mhat = state.adam_m[off] / bias1;
            const double vhat = state.adam_v[off] / bias2;
            const double prev = pv[t].p[i];
            double upd = lr * mhat / (std::sqrt(vhat) + hp.adam_eps);
            if (pv[t].decay) upd += lr * hp.weight_decay * prev;
            pv[t].p[i] = prev - upd;
        }
    }

    state.step = step_now;
    const double wall =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const StepStats stats{step_now, loss, lr, wall};
    state.history.push_back(stats);
    return stats;
}

void train_loop(TrainState& state, const SampleFn& draw, const TrainHparams& hp,
                const std::string& metrics_csv) {
    std::ofstream csv;
    if (!metrics_csv.empty()) {
        const bool fresh = state.step == 0 || !std::filesystem::exists(metrics_csv);
        csv.open(metrics_csv, fresh ? std::ios::trunc : std::ios::app);
        if (!csv) throw IoError("cannot open metrics file: " + metrics_csv);
        if (fresh) csv << "step,loss,lr,wall_ms\n";
    }
    while (state.step < hp.steps) {
        std::vector<Sample> batch;
        batch.reserve(hp.batch);
        for (std::size_t b = 0; b < hp.batch; ++b) batch.push_back(draw(state.rng));
        const StepStats s = train_step(state, batch, hp);
        if (csv.is_open()) {
            csv << s.step << ',' << format_g(s.loss) << ',' << format_g(s.lr) << ','
                << format_g(s.wall_ms) << '\n';
            csv.flush();
        }
    }
}

TrainState train(const ToyModelConfig& cfg, const SampleFn& draw, const TrainHparams& hp,
                 const std::string& metrics_csv) {
    TrainState st = init_train_state(cfg);
    train_loop(st, draw, hp, metrics_csv);
    return st;
}

void write_metrics_csv(const std::string& path, const std::vector<StepStats>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open metrics file: " + path);
    out << "step,loss,lr,wall_ms\n";
    for (const StepStats& s : history)
        out << s.step << ',' << format_g(s.loss) << ',' << format_g(s.lr) << ','
            << format_g(s.wall_ms) << '\n';
    if (!out) throw IoError("failed writing metrics file: " + path);
}

void save_checkpoint(const std::string& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    const ToyModelConfig& cfg = state.model.cfg;
    put_bytes(out, "SPKT", 4);
    put_u16(out, 1);
    put_u64(out, cfg.vocab);
    put_u64(out, cfg.dim);
    put_u64(out, cfg.layers);
    put_u64(out, cfg.heads);
    put_u64(out, cfg.context);
    put_u8(out, static_cast<std::uint8_t>(cfg.kind));
    put_u64(out, cfg.seed);
    put_f64(out, cfg.attn.k);
    put_u64(out, cfg.attn.window);
    put_f64(out, cfg.attn.scale);
    put_u8(out, static_cast<std::uint8_t>(cfg.attn.key_mode));
    put_u8(out, static_cast<std::uint8_t>(cfg.attn.value_mode));
    put_u8(out, static_cast<std::uint8_t>(cfg.attn.mask_mode));
    put_u64(out, cfg.attn.group_size);
    put_f64(out, cfg.scoring.slope_eps);
    put_u8(out, cfg.scoring.slope_enabled ? 1 : 0);
    put_u8(out, static_cast<std::uint8_t>(cfg.scoring.norm_mode));
    put_u8(out, static_cast<std::uint8_t>(cfg.scoring.slope_order));
    put_u64(out, state.step);
    const auto pv = views_of(state.model);
    std::size_t total = 0;
    for (const ConstView& v : pv) total += v.n;
    put_u64(out, total);
    for (const ConstView& v : pv)
        for (std::size_t i = 0; i < v.n; ++i) put_f64(out, v.p[i]);
    if (state.adam_m.size() != total || state.adam_v.size() != total)
        throw ArgumentError("checkpoint: optimizer state size mismatch");
    for (double v : state.adam_m) put_f64(out, v);
    for (double v : state.adam_v) put_f64(out, v);
    put_u64(out, state.rng.state());
    put_u8(out, state.rng.have_spare() ? 1 : 0);
    put_f64(out, state.rng.spare_value());
    put_u64(out, state.history.size());
    for (const StepStats& s : state.history) {
        put_u64(out, s.step);
        put_f64(out, s.loss);
        put_f64(out, s.lr);
        put_f64(out, s.wall_ms);
    }
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    get_bytes(in, magic, 4);
    if (std::string(magic, 4) != "SPKT") throw IoError("checkpoint: bad magic");
    if (get_u16(in) != 1) throw IoError("checkpoint: unsupported version");
    ToyModelConfig cfg;
    cfg.vocab = get_u64(in);
    cfg.dim = get_u64(in);
    cfg.layers = get_u64(in);
    cfg.heads = get_u64(in);
    cfg.context = get_u64(in);
    cfg.kind = checked_enum<AttnKind>(get_u8(in), 3, "attention kind");
    cfg.seed = get_u64(in);
    cfg.attn.k = get_f64(in);
    cfg.attn.window = get_u64(in);
    cfg.attn.scale = get_f64(in);
    cfg.attn.key_mode = checked_enum<KeyMode>(get_u8(in), 1, "key mode");
    cfg.attn.value_mode = checked_enum<ValueMode>(get_u8(in), 0, "value mode");
    cfg.attn.mask_mode = checked_enum<MaskApply>(get_u8(in), 1, "mask mode");
    cfg.attn.group_size = get_u64(in);
    cfg.attn.heads = cfg.heads;
    cfg.scoring.slope_eps = get_f64(in);
    cfg.scoring.slope_enabled = get_u8(in) != 0;
    cfg.scoring.norm_mode = checked_enum<NormMode>(get_u8(in), 1, "norm mode");
    cfg.scoring.slope_order = checked_enum<SlopeOrder>(get_u8(in), 1, "slope order");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint: invalid config: ") + e.what());
    }

    TrainState st;
    st.model = allocate_model(cfg);
    st.step = get_u64(in);
    const std::uint64_t total = get_u64(in);
    if (total != param_count(st.model))
        throw IoError("checkpoint: parameter count does not match the config");
    for (View& v : views_of(st.model))
        for (std::size_t i = 0; i < v.n; ++i) v.p[i] = get_f64(in);
    st.adam_m.resize(total);
    st.adam_v.resize(total);
    for (double& v : st.adam_m) v = get_f64(in);
    for (double& v : st.adam_v) v = get_f64(in);
    const std::uint64_t rs = get_u64(in);
    const bool spare = get_u8(in) != 0;
    st.rng.set_state(rs, spare, get_f64(in));
    const std::uint64_t hist = get_u64(in);
    st.history.resize(hist);
    for (StepStats& s : st.history) {
        s.step = get_u64(in);
        s.loss = get_f64(in);
        s.lr = get_f64(in);
        s.wall_ms = get_f64(in);
        if (!std::isfinite(s.loss)) throw IoError("checkpoint: non-finite loss history");
    }
    return st;
}

std::vector<std::uint16_t> bytes_to_tokens(const std::string& text) {
    std::vector<std::uint16_t> out(text.size());
    for (std::size_t i = 0; i < text.size(); ++i)
        out[i] = static_cast<std::uint8_t>(text[i]);
    return out;
}

Corpus load_corpus(const std::string& path) {
    namespace fs = std::filesystem;
    const auto read_file = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoError("cannot open corpus file: " + p.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return bytes_to_tokens(buf.str());
    };
    Corpus corpus;
    std::error_code ec;
    if (fs::is_regular_file(path, ec)) {
        corpus.documents.push_back(read_file(path));
    } else if (fs::is_directory(path, ec)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) corpus.documents.push_back(read_file(f));
    } else {
        throw IoError("corpus path is neither a file nor a directory: " + path);
    }
    if (corpus.documents.empty()) throw IoError("corpus: no files under " + path);
    return corpus;
}

CorpusSampler::CorpusSampler(Corpus corpus, std::size_t context)
    : corpus_(std::move(corpus)), context_(context) {
    for (std::size_t i = 0; i < corpus_.documents.size(); ++i)
        if (corpus_.documents[i].size() >= context_ + 1) usable_.push_back(i);
    if (usable_.empty())
        throw ConfigError(
            "corpus: every document is shorter than context+1 tokens; short documents are "
            "skipped, not packed");
}

Sample CorpusSampler::operator()(Rng& rng) const {
    const std::size_t doc =
        usable_[static_cast<std::size_t>(rng.uniform_int(
            0, static_cast<std::int64_t>(usable_.size()) - 1))];
    const auto& toks = corpus_.documents[doc];
    const std::size_t max_start = toks.size() - (context_ + 1);
    const std::size_t start = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(max_start)));
    Sample s;
    s.tokens.assign(toks.begin() + static_cast<std::ptrdiff_t>(start),
                    toks.begin() + static_cast<std::ptrdiff_t>(start + context_ + 1));
    return s;
}

double eval_ppl(const TrainState& state, const Corpus& corpus) {
    const std::size_t n = state.model.cfg.context;
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& doc : corpus.documents) {
        std::size_t pos = 0;
        while (pos + 1 < doc.size()) {
            const std::size_t take = std::min(n + 1, doc.size() - pos);
            Sample s;
            s.tokens.assign(doc.begin() + static_cast<std::ptrdiff_t>(pos),
                            doc.begin() + static_cast<std::ptrdiff_t>(pos + take));
            ForwardTrace tr;
            model_forward(state.model, s, &tr);
            for (double v : tr.nll) total += v;
            count += tr.nll.size();
            pos += take - 1;
        }
    }
    if (count == 0) throw ArgumentError("eval_ppl: corpus has no predictable tokens");
    return std::exp(total / static_cast<double>(count));
}

double eval_loss(const TrainState& state, const SampleFn& draw, std::size_t samples, Rng& rng) {
    if (samples == 0) throw ArgumentError("eval_loss: need at least one sample");
    double total = 0.0;
    for (std::size_t i = 0; i < samples; ++i) total += model_forward(state.model, draw(rng));
    return total / static_cast<double>(samples);
}

std::vector<std::uint16_t> generate(const TrainState& state,
                                    const std::vector<std::uint16_t>& prompt,
                                    std::size_t n_tokens, double temperature, Rng& rng) {
    if (prompt.empty()) throw ArgumentError("generate: empty prompt");
    const std::size_t ctx = state.model.cfg.context;
    std::vector<std::uint16_t> out = prompt;
    for (std::size_t t = 0; t < n_tokens; ++t) {
        const std::size_t lo = out.size() > ctx ? out.size() - ctx : 0;
        const std::vector<std::uint16_t> window(out.begin() + static_cast<std::ptrdiff_t>(lo),
                                                out.end());
        const Tensor2 logits = model_logits(state.model, window);
        const double* row = logits.row(logits.rows - 1);
        std::uint16_t pick = 0;
        if (temperature <= 0.0) {
            for (std::size_t j = 1; j < logits.cols; ++j)
                if (row[j] > row[pick]) pick = static_cast<std::uint16_t>(j);
        } else {
            std::vector<double> scaled(logits.cols);
            for (std::size_t j = 0; j < logits.cols; ++j) scaled[j] = row[j] / temperature;
            const std::vector<double> probs = softmax_row(scaled);
            const double r = rng.uniform();
            double acc = 0.0;
            pick = static_cast<std::uint16_t>(logits.cols - 1);
            for (std::size_t j = 0; j < probs.size(); ++j) {
                acc += probs[j];
                if (r < acc) {
                    pick = static_cast<std::uint16_t>(j);
                    break;
                }
            }
        }
        out.push_back(pick);
    }
    return out;
}

Sample make_passkey_task(Rng& rng, std::size_t context_len, std::size_t window,
                         std::size_t distance, std::size_t passkey_len) {
    if (passkey_len == 0) throw ArgumentError("passkey: need at least one digit");
    if (context_len <= window) throw ArgumentError("passkey: context must exceed the window");
    if (context_len < passkey_len + 2)
        throw ArgumentError("passkey: context too short for the key and query blocks");
    const std::size_t q_pos = context_len - passkey_len;
    // The key block [marker, digits] must sit fully before the query marker.
    const std::size_t min_dist = passkey_len + 1;
    if (distance == 0) {
        const std::size_t lo = std::max(window + 1, min_dist);
        if (lo > q_pos)
            throw ArgumentError("passkey: no room beyond the window at this context length");
        distance = static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(q_pos)));
    }
    if (distance < min_dist || distance > q_pos)
        throw ArgumentError("passkey: distance out of range");

    Sample s;
    s.tokens.assign(context_len + 1, kTaskFiller);
    const std::size_t k_pos = q_pos - distance;
    s.tokens[k_pos] = kTaskKey;
    s.tokens[q_pos] = kTaskQuery;
    for (std::size_t j = 0; j < passkey_len; ++j) {
        const auto digit = static_cast<std::uint16_t>(rng.uniform_int(0, 9));
        s.tokens[k_pos + 1 + j] = digit;
        s.tokens[q_pos + 1 + j] = digit;
    }
    s.loss_weight.assign(context_len, 0.0);
    for (std::size_t i = q_pos; i < context_len; ++i) s.loss_weight[i] = 1.0;
    s.answer_begin = q_pos + 1;
    s.answer_len = passkey_len;
    return s;
}

Sample make_recall_task(Rng& rng, std::size_t context_len, std::size_t payload_len) {
    if (payload_len == 0) throw ArgumentError("recall: need a non-empty payload");
    if (context_len < 2 * payload_len + kRecallPeriod + 3)
        throw ArgumentError("recall: context too short for payload, filler period and query");
    Sample s;
    s.tokens.assign(context_len + 1, kTaskFiller);
    const std::size_t q_pos = context_len - payload_len;
    s.tokens[0] = kTaskKey;
    s.tokens[payload_len + 1] = kTaskSep;
    s.tokens[q_pos] = kTaskQuery;
    for (std::size_t j = 0; j < payload_len; ++j) {
        const auto digit = static_cast<std::uint16_t>(rng.uniform_int(0, 9));
        s.tokens[1 + j] = digit;
        s.tokens[q_pos + 1 + j] = digit;
    }
    // Letter filler copies the token one period back, with occasional fresh
    // draws. The innovations keep old periods from standing in for recent
    // ones, so only a retention policy that moves with the query tracks it.
    const std::size_t f0 = payload_len + 2;
    for (std::size_t i = f0; i < q_pos; ++i)
        s.tokens[i] = i >= f0 + kRecallPeriod && rng.uniform_int(0, 9) != 0
                          ? s.tokens[i - kRecallPeriod]
                          : static_cast<std::uint16_t>(kTaskLetterBase + rng.uniform_int(0, 9));
    s.loss_weight.assign(context_len, 1.0);
    for (std::size_t i = q_pos; i < context_len; ++i) s.loss_weight[i] = 4.0;
    s.answer_begin = q_pos + 1;
    s.answer_len = payload_len;
    return s;
}

double passkey_accuracy(const TrainState& state, std::size_t window, std::size_t distance,
                        std::size_t passkey_len, std::size_t trials, Rng& rng) {
    if (trials == 0) throw ArgumentError("passkey_accuracy: need at least one trial");
    const std::size_t n = state.model.cfg.context;
    std::size_t correct = 0, total = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const Sample s = make_passkey_task(rng, n, window, distance, passkey_len);
        const std::vector<std::uint16_t> input(s.tokens.begin(), s.tokens.end() - 1);
        const Tensor2 logits = model_logits(state.model, input);
        for (std::size_t j = 0; j < passkey_len; ++j) {
            const std::size_t row_idx = s.answer_begin - 1 + j;
            const double* row = logits.row(row_idx);
            std::size_t arg = 0;
            for (std::size_t c = 1; c < logits.cols; ++c)
                if (row[c] > row[arg]) arg = c;
            if (arg == s.tokens[s.answer_begin + j]) ++correct;
            ++total;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(total);
}

ModelGradCheck model_gradcheck(const ToyModelConfig& cfg, std::uint64_t seed, double tol,
                               std::size_t coords_per_tensor, double h) {
    cfg.validate();
    constexpr std::size_t kMaxSeeds = 80;
    constexpr double kMargin = 2e-3;
    ModelGradCheck report;
    for (std::size_t attempt = 0; attempt < kMaxSeeds; ++attempt) {
        const std::uint64_t s = seed + attempt;
        Rng rng(s);
        Model model = make_model(cfg, rng);
        Sample sample;
        sample.tokens.resize(cfg.context + 1);
        for (auto& t : sample.tokens)
            t = static_cast<std::uint16_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(cfg.vocab) - 1));

        ForwardTrace tr;
        model_forward(model, sample, &tr);
        bool ok = true;
        if (cfg.uses_selection())
            for (const LayerTrace& lt : tr.layers)
                if (!tape_separated(lt.tape, kMargin)) {
                    ok = false;
                    break;
                }
        if (!ok) continue;

        const Model grads = model_backward(model, sample, tr);
        auto pv = views_of(model);
        auto gv = views_of(static_cast<const Model&>(grads));
        report = ModelGradCheck{};
        report.seed_used = s;
        report.seeds_tried = attempt + 1;
        for (std::size_t t = 0; t < pv.size(); ++t) {
            const std::size_t take = std::min(coords_per_tensor, pv[t].n);
            for (std::size_t c = 0; c < take; ++c) {
                const std::size_t idx = (c * pv[t].n) / take;
                double* p = pv[t].p + idx;
                const double save = *p;
                *p = save + h;
                const double fp = model_forward(model, sample);
                *p = save - h;
                const double fm = model_forward(model, sample);
                *p = save;
                const double fd = (fp - fm) / (2.0 * h);
                const double an = gv[t].p[idx];
                const double denom = std::max(1e-6, std::fabs(fd) + std::fabs(an));
                report.max_rel_err = std::max(report.max_rel_err, std::fabs(fd - an) / denom);
                ++report.coords;
            }
        }
        report.pass = report.max_rel_err <= tol;
        return report;
    }
    report.seeds_tried = kMaxSeeds;
    report.pass = false;
    return report;
}

}  // namespace sparsek
