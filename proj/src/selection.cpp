#include "sparsek/selection.hpp"

#include <cmath>

namespace sparsek {

void ScoringParams::validate() const {
    if (!(slope_eps > 0.0)) throw ArgumentError("ScoringParams: slope_eps must be positive");
    for (double v : w_score)
        if (!std::isfinite(v)) throw NumericError("ScoringParams: non-finite w_score");
}

double TimestepNormState::push(double r) {
    if (!std::isfinite(r)) throw NumericError("timestep_norm: non-finite input");
    ++count;
    const double delta = r - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (r - mean);
    return (r - mean) / std::sqrt(variance() + eps);
}

std::vector<double> score_tokens(const Tensor2& x, const ScoringParams& params,
                                 TimestepNormState& norm, std::size_t base_pos) {
    params.validate();
    if (x.cols != params.w_score.size())
        throw ShapeError("score_tokens: x.cols != w_score length");
    std::vector<double> u(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        u[i] = detail::score_one(x.row(i), x.cols, params, norm, base_pos + i).u;
    return u;
}

std::vector<double> init_mimic_attention(const Tensor2& wq, const Tensor2& wk,
                                         Rng* fallback_rng, bool* used_fallback) {
    if (wq.rows != wk.rows || wq.cols != wk.cols)
        throw ShapeError("init_mimic_attention: W_Q and W_K shapes differ");
    if (used_fallback) *used_fallback = false;
    const std::size_t d = wq.rows, p = wq.cols;
    // w' = W_Q W_K^T 1: row sums of W_K give K^T 1 in head space.
    std::vector<double> ksum(p, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < p; ++j) ksum[j] += wk(i, j);
    std::vector<double> w(d, 0.0);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < p; ++j) w[i] += wq(i, j) * ksum[j];
        norm_sq += w[i] * w[i];
    }
    if (norm_sq < 1e-24) {
        if (used_fallback) *used_fallback = true;
        Rng local(0x5eedu);
        Rng& rng = fallback_rng ? *fallback_rng : local;
        norm_sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            w[i] = 0.02 * rng.normal();
            norm_sq += w[i] * w[i];
        }
    }
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (double& v : w) v *= inv;
    return w;
}

SelectionMask build_mask(const std::vector<double>& u_prefix, KBudget k,
                         SelectionMask::Mode mode) {
    if (u_prefix.empty()) throw ArgumentError("build_mask: empty prefix");
    SelectionMask mask;
    mask.mode = mode;
    mask.hard = topk_hard(u_prefix, static_cast<std::size_t>(std::floor(k.k)));
    mask.soft = sparsek(u_prefix, k).p;
    for (std::size_t i = 0; i < mask.hard.size(); ++i)
        if (mask.hard[i] == 1.0) mask.indices.push_back(i);
    return mask;
}

}  // namespace sparsek
