#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "sparsek/common.hpp"
#include "sparsek/numerics.hpp"
#include "sparsek/sparsek_op.hpp"

namespace sparsek {

enum class NormMode { none, timestep_norm };
// The normalization/slope interaction is ambiguous in prose; both orders are
// available. norm_then_slope keeps the ramp out of the standardized statistics
// so it can do its retention job, and is the default.
enum class SlopeOrder { slope_then_norm, norm_then_slope };

struct ScoringParams {
    std::vector<double> w_score;
    double slope_eps = 0.01;  // must stay positive; disable via slope_enabled
    bool slope_enabled = true;
    NormMode norm_mode = NormMode::timestep_norm;
    SlopeOrder slope_order = SlopeOrder::norm_then_slope;

    void validate() const;
};

// Cumulative standardization state (Welford). Feeding a sequence step-by-step
// and feeding it in one call produce identical results.
struct TimestepNormState {
    std::size_t count = 0;
    double mean = 0.0;
    double m2 = 0.0;
    double eps = 1e-5;

    // Absorbs r and returns (r - mean_t) / sqrt(var_t + eps) with the
    // statistics taken over everything seen so far including r.
    double push(double r);
    double variance() const { return count ? m2 / static_cast<double>(count) : 0.0; }
};

struct SelectionMask {
    enum class Mode { hard, soft, straight_through };
    std::vector<double> hard;           // m_topk indicator
    std::vector<double> soft;           // m_sparsek weights in [0,1]
    std::vector<std::size_t> indices;   // selected positions, ascending
    Mode mode = Mode::hard;
};

// Scores for the rows of x: raw_i = x_i . w_score, then normalization and the
// position slope i*eps (1-indexed) in the configured order. The norm state
// carries across calls, so appending rows extends the score sequence without
// touching earlier values. `base_pos` is the number of rows already scored.
std::vector<double> score_tokens(const Tensor2& x, const ScoringParams& params,
                                 TimestepNormState& norm, std::size_t base_pos = 0);

namespace detail {

// One position's score with the recurrents backward needs. `raw` is the value
// the normalizer saw (slope included when it runs first); mean/sdev are the
// cumulative statistics at this step.
struct ScoreSideRec {
    double raw, u, mean, sdev;
};

// Shared by score_tokens and the attention engine so both paths stay
// bit-identical. Entries are widened to double before any score arithmetic.
template <class T>
inline ScoreSideRec score_one(const T* xrow, std::size_t cols, const ScoringParams& params,
                              TimestepNormState& norm, std::size_t pos_zero_based) {
    double raw = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
        raw += static_cast<double>(xrow[c]) * params.w_score[c];
    if (!std::isfinite(raw)) throw NumericError("score: non-finite value");
    const double slope =
        params.slope_enabled ? static_cast<double>(pos_zero_based + 1) * params.slope_eps : 0.0;
    ScoreSideRec rec{};
    if (params.norm_mode == NormMode::none) {
        rec.raw = raw;
        rec.u = raw + slope;
        rec.mean = 0.0;
        rec.sdev = 1.0;
    } else if (params.slope_order == SlopeOrder::slope_then_norm) {
        rec.raw = raw + slope;
        rec.u = norm.push(rec.raw);
        rec.mean = norm.mean;
        rec.sdev = std::sqrt(norm.variance() + norm.eps);
    } else {
        rec.raw = raw;
        rec.u = norm.push(raw) + slope;
        rec.mean = norm.mean;
        rec.sdev = std::sqrt(norm.variance() + norm.eps);
    }
    return rec;
}

}  // namespace detail

// w' = W_Q W_K^T 1, normalized to unit length. A vanishing w' falls back to a
// small random direction; *used_fallback reports that.
std::vector<double> init_mimic_attention(const Tensor2& wq, const Tensor2& wk,
                                         Rng* fallback_rng = nullptr,
                                         bool* used_fallback = nullptr);

SelectionMask build_mask(const std::vector<double>& u_prefix, KBudget k,
                         SelectionMask::Mode mode);

}  // namespace sparsek
