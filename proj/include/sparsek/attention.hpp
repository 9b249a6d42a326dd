#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sparsek/numerics.hpp"
#include "sparsek/selection.hpp"

namespace sparsek {

enum class KeyMode { soft, hard };
enum class ValueMode { soft };
// How the soft weights reach the values: applied directly, or hard forward
// with the soft solution carrying the backward (straight-through).
enum class MaskApply { soft, straight_through };

struct AttnConfig {
    double k = 8.0;            // selection budget; 0 disables selection (pure window)
    std::size_t window = 8;    // sliding-window size w
    std::size_t heads = 1;
    double scale = 0.0;        // 0: use 1/sqrt(head_dim)
    KeyMode key_mode = KeyMode::hard;
    ValueMode value_mode = ValueMode::soft;
    MaskApply mask_mode = MaskApply::soft;
    std::size_t group_size = 128;  // blocked query execution; never changes results
    bool linear_mix = false;

    std::size_t head_dim(std::size_t d_model) const { return d_model / heads; }
    double effective_scale(std::size_t d_model) const;
    void validate(std::size_t d_model, const ScoringParams& scoring) const;
};

template <class T>
struct AttnParams {
    MatT<T> wq, wk, wv, wo;  // d x d; head h owns columns [h*p, (h+1)*p)
};

// Head-wise feature map phi(x) = elu(W_f x) + 1 (strictly positive).
template <class T>
struct LinearMixParams {
    std::vector<MatT<T>> feat;  // one p x p matrix per head
};

// Everything backward needs. Softmax rows are recomputed from the saved
// max/denominator statistics instead of being stored.
template <class T>
struct AttnTape {
    MatT<T> x, q, k, v;    // full-sequence inputs and projections
    MatT<T> head_concat;   // pre-output-projection head outputs
    // Score-side recurrents, one slot per position.
    std::vector<double> raw;       // x_i . w_score
    std::vector<double> u;         // final frozen scores
    std::vector<double> norm_mean; // cumulative mean at step i
    std::vector<double> norm_sdev; // sqrt(var_i + eps) at step i
    std::vector<double> tau_push;  // stream tau after score i entered
    struct QueryRec {
        std::uint32_t n_sel = 0;            // first n_sel attended entries are selected
        std::vector<std::uint32_t> att;     // attended positions, ascending
        std::vector<double> gate;           // soft weight per selected entry
        std::vector<T> maxa;                // per head: softmax max
        std::vector<T> denom;               // per head: softmax denominator
    };
    std::vector<QueryRec> queries;
    std::vector<std::size_t> chunk_starts;  // gradient-stop boundaries
    AttnConfig cfg;
    std::size_t d_model = 0;
};

template <class T>
struct AttnGrads {
    MatT<T> dx, dwq, dwk, dwv, dwo;
    std::vector<double> dw_score;
    std::vector<MatT<T>> dfeat;  // per head, linear mix only
};

// SparseK attention over a full sequence: query i attends the sliding window
// plus the hard top-floor(k) of the frozen scores over positions that left the
// window, with soft weights on the selected values. Equals chunked_forward
// with a single chunk.
template <class T>
MatT<T> sparsek_attention(const MatT<T>& x, const AttnParams<T>& params,
                          const ScoringParams& scoring, const AttnConfig& cfg,
                          AttnTape<T>* tape = nullptr,
                          const LinearMixParams<T>* lin = nullptr);

template <class T>
AttnGrads<T> sparsek_attention_backward(const AttnTape<T>& tape, const MatT<T>& grad_out,
                                        const AttnParams<T>& params,
                                        const ScoringParams& scoring,
                                        const LinearMixParams<T>* lin = nullptr);

// Gated mixture of exact attention (gate m) and positive-feature linear
// attention (gate 1 - m) over all causal positions; linear part runs on
// prefix accumulators. Requires timestep normalization.
template <class T>
MatT<T> linear_mix_attention(const MatT<T>& x, const AttnParams<T>& params,
                             const ScoringParams& scoring, const AttnConfig& cfg,
                             const LinearMixParams<T>& lin, AttnTape<T>* tape = nullptr);

// Concatenate per-head outputs and apply the output projection.
template <class T>
MatT<T> multi_head(const std::vector<MatT<T>>& head_outputs, const MatT<T>& wo);

// Dense causal reference (also the `full` trainer kind). O(n^2), row-streamed.
template <class T>
MatT<T> dense_causal_attention(const MatT<T>& x, const AttnParams<T>& params, double scale,
                               std::size_t heads = 1, MatT<T>* head_concat_out = nullptr);

template <class T>
AttnGrads<T> dense_causal_attention_backward(const MatT<T>& x, const AttnParams<T>& params,
                                             double scale, std::size_t heads,
                                             const MatT<T>& head_concat, const MatT<T>& grad_out);

}  // namespace sparsek
