#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sparsek/numerics.hpp"

namespace sparsek {

// Selection budget: the target sum of the relaxed mask. Real values are legal;
// only positivity is required.
struct KBudget {
    double k;
    explicit KBudget(double kk);
};

// Solution of the projection of z onto {0 <= p <= 1, sum(p) = k}:
//   p = clamp(z - tau, 0, 1)
// u_count entries sit at 1 (full_set), w_count entries are nonzero, and
// support holds the fractional indices (w_count - u_count of them).
struct SparseKSolution {
    std::vector<double> p;
    double tau = kNegInf;
    std::size_t u_count = 0;
    std::size_t w_count = 0;
    std::vector<std::size_t> support;   // 0 < p < 1, ascending
    std::vector<std::size_t> full_set;  // p == 1, ascending
    bool degenerate = false;            // empty support (tau reported mid-interval)
    bool infeasible = false;            // m < k: all-ones mask, tau = -inf
    // Stream results are restricted to surviving stream positions; `indices`
    // then maps local slots to original positions. Empty means the identity.
    std::vector<std::size_t> indices;
};

// Exact batch evaluation. Sorts descending, then walks candidate (u, w) pairs
// downward from (m, m) — ascending in threshold — accepting the first pair with
// z_(w) > tau and (u == 0 or z_(u) >= tau + 1). Candidates leave in breakpoint
// order: the w-end drops when z_(w) <= z_(u) - 1, the u-end otherwise.
SparseKSolution sparsek(const std::vector<double>& z, KBudget k);

struct PartialSortStats {
    std::uint64_t calls = 0;
    std::uint64_t fallbacks = 0;
};

// Same result restricted to the sort_cap largest values; falls back to the full
// evaluation when the scan cannot certify the answer within the cap (the
// accepted w touches sort_cap with values below it still unexamined).
SparseKSolution sparsek_partial(const std::vector<double>& z, KBudget k, std::size_t sort_cap,
                                PartialSortStats* stats = nullptr);

// J(z) v = s (x) (v - mean_support(v)) with s the indicator of the support;
// zero whenever the support is empty.
std::vector<double> sparsek_jvp(const SparseKSolution& sol, const std::vector<double>& v);

// 0/1 indicator of the k largest entries; ties go to the lower index; all ones
// when there are k entries or fewer.
std::vector<double> topk_hard(const std::vector<double>& z, std::size_t k);

// Straight-through pairing: hard forward, soft solution as gradient carrier.
struct StResult {
    std::vector<double> forward;
    SparseKSolution backward_carrier;
};
StResult sparsek_st(const std::vector<double>& z, KBudget k);

}  // namespace sparsek
