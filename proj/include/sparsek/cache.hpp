#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sparsek/attention.hpp"
#include "sparsek/stream.hpp"

namespace sparsek {

// Recurrent SparseK attention state: a bounded key/value store holding the
// top-floor(k) scored positions that have left the sliding window, the window
// ring itself, the score stream (for tau and soft weights), and the
// normalization state. Feeding a sequence chunk-by-chunk reproduces the
// unchunked forward exactly; pruning is irreversible and ledgered.
template <class T>
class SparseKvCache {
  public:
    SparseKvCache(const AttnConfig& cfg, std::size_t d_model, const ScoringParams& scoring);

    // Process chunk rows [len x d_model] in sequence order; returns outputs.
    // With a tape, activations are recorded for backward (training mode keeps
    // every projected row; generation passes no tape and stays bounded).
    MatT<T> forward_chunk(const MatT<T>& x_chunk, const AttnParams<T>& params,
                          AttnTape<T>* tape = nullptr,
                          const LinearMixParams<T>* lin = nullptr);

    std::size_t capacity() const { return cap_; }
    std::size_t size() const { return cache_pos_.size(); }
    std::size_t window_fill() const { return ring_.size(); }
    std::size_t positions_seen() const { return t_; }
    // Peak simultaneously retained KV entries (cache + ring + in-flight row).
    std::size_t peak_kv() const { return peak_kv_; }
    bool ever_evicted(std::size_t pos) const {
        return pos < cache_evicted_.size() && cache_evicted_[pos];
    }
    // Positions whose KV was dropped since the last call (the prune report).
    std::vector<std::size_t> drain_evictions();
    std::vector<std::size_t> retained_positions() const;  // ascending
    double frozen_score(std::size_t pos) const { return scores_.at(pos); }
    const StreamState& stream() const;  // throws when k = 0 (no selection)

    void serialize(std::vector<std::uint8_t>& out) const;
    static SparseKvCache deserialize(const std::uint8_t* data, std::size_t len,
                                     const AttnConfig& cfg, std::size_t d_model,
                                     const ScoringParams& scoring);

  private:
    struct Kv {
        std::vector<T> k, v;  // d_model each, heads side by side
    };
    struct CacheSlot {
        double score;
        std::size_t pos;
    };
    void exit_window(std::size_t pos, AttnTape<T>* tape);
    void admit_to_cache(std::size_t pos);
    void drop_kv(std::size_t pos);
    const Kv& find_kv(std::size_t pos) const;
    void note_peak();

    AttnConfig cfg_;
    std::size_t d_model_, cap_;
    ScoringParams scoring_;
    TimestepNormState norm_;
    std::optional<StreamState> stream_;       // absent when k = 0
    std::size_t t_ = 0;
    std::vector<double> scores_;              // frozen u_i for every position seen
    std::deque<std::size_t> ring_;            // window-resident positions
    std::vector<CacheSlot> cache_heap_;       // min-heap: (score asc, pos desc)
    std::vector<std::size_t> cache_pos_;      // retained positions, kept sorted
    std::unordered_map<std::size_t, Kv> kv_;  // ring + cache entries
    // Rows evicted mid-block stay readable here until the block completes, so
    // earlier queries in the block see the values their snapshot referenced.
    std::unordered_map<std::size_t, Kv> grave_;
    std::vector<bool> cache_evicted_;
    std::vector<std::size_t> pending_evictions_;
    std::size_t peak_kv_ = 0;
    // Linear-mix prefix accumulators, per head: M [p x p] and b_phi [p].
    std::vector<std::vector<T>> lin_m_;
    std::vector<std::vector<T>> lin_b_;
};

template <class T>
MatT<T> chunked_forward(const MatT<T>& x, std::size_t chunk_len, const AttnParams<T>& params,
                        const ScoringParams& scoring, const AttnConfig& cfg,
                        AttnTape<T>* tape = nullptr, const LinearMixParams<T>* lin = nullptr);

// Explicit prune report (pruning itself runs as positions leave the window).
template <class T>
std::vector<std::size_t> prune_cache(SparseKvCache<T>& cache);

// One decoding step: O(k + window) work, independent of history length.
template <class T>
std::vector<T> generate_step(SparseKvCache<T>& cache, const std::vector<T>& new_token_state,
                             const AttnParams<T>& params,
                             const LinearMixParams<T>* lin = nullptr);

// Versioned snapshot ("SPKC", version, little-endian payload) for resumable
// generation.
template <class T>
void save_cache_snapshot(const SparseKvCache<T>& cache, const std::string& path);
template <class T>
SparseKvCache<T> load_cache_snapshot(const std::string& path, const AttnConfig& cfg,
                                     std::size_t d_model, const ScoringParams& scoring);

}  // namespace sparsek
