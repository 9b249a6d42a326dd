#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sparsek/selection.hpp"
#include "sparsek/sparsek_op.hpp"

namespace sparsek {

struct StreamStepResult {
    double tau = kNegInf;
    std::size_t t = 0;                  // elements pushed so far
    bool inserted = false;              // false: z_t arrived below tau and never survived
    std::vector<std::size_t> evicted;   // indices leaving the survivor set on this push
    bool cap_forced = false;            // a bounded heap_s dropped a survivor to fit
};

// Incremental SparseK over a growing prefix. Two min-heaps with maintained
// sums: heap_f holds candidates for saturation (z >= tau + 1), heap_s all
// survivors (z > tau); heap_f membership is a subset of heap_s membership.
// Each push inserts per the tau-relative conditions, then resumes the (u, w)
// scan from (|heap_f|, |heap_s|), popping minima until acceptance. tau never
// decreases, and a popped survivor never returns.
class StreamState {
  public:
    explicit StreamState(KBudget k, std::size_t heap_cap = 0);  // heap_cap 0 = unbounded

    StreamStepResult push(double z_t);

    // Solution over current survivors, ascending original index; `indices`
    // carries the original positions. Infeasible regime (t <= k): all ones.
    SparseKSolution solution() const;

    double tau() const { return tau_; }
    std::size_t t() const { return t_; }
    double k() const { return k_; }
    std::size_t survivor_count() const { return heap_s_.size(); }
    std::size_t saturated_count() const { return heap_f_.size(); }
    bool is_evicted(std::size_t index) const { return evicted_[index]; }
    std::uint64_t cap_drops() const { return cap_drops_; }
    std::uint64_t total_heap_ops() const { return heap_ops_; }

    // Largest drift between a maintained sum and its from-scratch recount.
    double sum_drift() const;

    struct Entry {
        double value;
        std::size_t index;
    };
    const std::vector<Entry>& survivors_raw() const { return heap_s_; }

    void serialize(std::vector<std::uint8_t>& out) const;
    static StreamState deserialize(const std::uint8_t* data, std::size_t len, std::size_t* used);

  private:
    void pop_s(StreamStepResult& step);
    void pop_f();
    void refresh_sums();

    double k_;
    std::size_t heap_cap_;
    double tau_ = kNegInf;
    std::size_t t_ = 0;
    std::vector<Entry> heap_s_, heap_f_;  // binary min-heaps via std::push_heap
    double sum_s_ = 0.0, sum_f_ = 0.0;
    std::vector<bool> evicted_;
    std::uint64_t cap_drops_ = 0;
    std::uint64_t heap_ops_ = 0;
    std::uint64_t pushes_since_refresh_ = 0;
};

StreamState stream_init(KBudget k);

// Spec-level step: push one value and materialize the restricted solution.
// Hot paths (benchmarks, attention) use StreamState::push directly and read
// the lightweight step result instead.
SparseKSolution stream_push(StreamState& state, double z_t);

// Hard top-floor(k) indicator over survivors plus the soft weights; errors on
// an empty state.
SelectionMask stream_mask(const StreamState& state);

}  // namespace sparsek
