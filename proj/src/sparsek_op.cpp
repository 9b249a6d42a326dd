#include "sparsek/sparsek_op.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sparsek {

KBudget::KBudget(double kk) : k(kk) {
    if (!(kk > 0.0) || !std::isfinite(kk))
        throw ArgumentError("KBudget: k must be positive and finite");
}

namespace {

void check_finite(const std::vector<double>& z, const char* who) {
    for (double v : z)
        if (!std::isfinite(v)) throw NumericError(std::string(who) + ": non-finite input");
}

SparseKSolution all_ones(std::size_t m, double tau, bool infeasible) {
    SparseKSolution sol;
    sol.p.assign(m, 1.0);
    sol.tau = tau;
    sol.u_count = m;
    sol.w_count = m;
    sol.full_set.resize(m);
    std::iota(sol.full_set.begin(), sol.full_set.end(), std::size_t{0});
    sol.degenerate = true;
    sol.infeasible = infeasible;
    return sol;
}

// Populate p and the index sets from tau. Membership is decided by value, so
// tied entries always land in the same class regardless of sort position.
void finish(SparseKSolution& sol, const std::vector<double>& z) {
    const std::size_t m = z.size();
    sol.p.resize(m);
    sol.u_count = 0;
    sol.w_count = 0;
    sol.support.clear();
    sol.full_set.clear();
    for (std::size_t j = 0; j < m; ++j) {
        double pj = z[j] - sol.tau;
        pj = pj < 0.0 ? 0.0 : (pj > 1.0 ? 1.0 : pj);
        sol.p[j] = pj;
        if (pj == 1.0) {
            ++sol.u_count;
            ++sol.w_count;
            sol.full_set.push_back(j);
        } else if (pj > 0.0) {
            ++sol.w_count;
            sol.support.push_back(j);
        }
    }
    sol.degenerate = sol.support.empty();
}

// Core scan over sorted values. zs must be sorted descending and hold either
// the whole input (exact mode) or its sort_cap largest entries. Returns false
// when acceptance lands on w == zs.size() with values below the cap unexamined
// (truncated mode cannot certify z_(w+1) <= tau then).
bool scan_sorted(const std::vector<double>& zs, double k, bool truncated, double* tau_out) {
    const std::size_t c = zs.size();
    std::vector<double> csum(c + 1, 0.0);
    for (std::size_t i = 0; i < c; ++i) csum[i + 1] = csum[i] + zs[i];

    std::size_t u = c, w = c;
    while (true) {
        if (u == w) {
            // All-saturated candidate: valid only for integral budgets whose
            // tau interval [z_(u+1), z_(u) - 1] is nonempty.
            const bool budget_hits = std::abs(static_cast<double>(u) - k) <= 1e-9;
            const double hi = zs[u - 1] - 1.0;  // u >= 1 here: u == w == 0 cannot sum to k > 0
            const double lo = (u < c) ? zs[u] : hi - 1.0;
            if (budget_hits && lo <= hi) {
                if (truncated && w == c) return false;
                *tau_out = 0.5 * (lo + hi);
                return true;
            }
            --u;  // unsaturation breakpoint z_(u) - 1 precedes the eviction of z_(w) = z_(u)
            continue;
        }
        const double tau = (csum[w] - csum[u] + static_cast<double>(u) - k) /
                           static_cast<double>(w - u);
        if (zs[w - 1] > tau && (u == 0 || zs[u - 1] >= tau + 1.0)) {
            if (truncated && w == c) return false;
            *tau_out = tau;
            return true;
        }
        if (u == 0 || zs[w - 1] <= zs[u - 1] - 1.0) {
            --w;  // eviction breakpoint z_(w) comes first
            if (w == 0) throw NumericError("sparsek: scan exhausted (internal)");
        } else {
            --u;
        }
    }
}

}  // namespace

SparseKSolution sparsek(const std::vector<double>& z, KBudget k) {
    if (z.empty()) throw ArgumentError("sparsek: empty input");
    check_finite(z, "sparsek");
    const std::size_t m = z.size();
    if (k.k > static_cast<double>(m)) return all_ones(m, kNegInf, true);

    std::vector<double> zs(z);
    std::sort(zs.begin(), zs.end(), std::greater<double>());
    SparseKSolution sol;
    scan_sorted(zs, k.k, false, &sol.tau);
    finish(sol, z);
    return sol;
}

SparseKSolution sparsek_partial(const std::vector<double>& z, KBudget k, std::size_t sort_cap,
                                PartialSortStats* stats) {
    if (z.empty()) throw ArgumentError("sparsek_partial: empty input");
    if (static_cast<double>(sort_cap) < std::ceil(k.k))
        throw ArgumentError("sparsek_partial: sort_cap below ceil(k)");
    if (stats) ++stats->calls;
    check_finite(z, "sparsek_partial");
    const std::size_t m = z.size();
    if (k.k > static_cast<double>(m)) return all_ones(m, kNegInf, true);
    if (sort_cap >= m) return sparsek(z, k);

    std::vector<double> zs(z);
    std::nth_element(zs.begin(), zs.begin() + sort_cap, zs.end(), std::greater<double>());
    zs.resize(sort_cap);
    std::sort(zs.begin(), zs.end(), std::greater<double>());

    SparseKSolution sol;
    if (!scan_sorted(zs, k.k, true, &sol.tau)) {
        if (stats) ++stats->fallbacks;
        return sparsek(z, k);
    }
    finish(sol, z);
    return sol;
}

std::vector<double> sparsek_jvp(const SparseKSolution& sol, const std::vector<double>& v) {
    if (v.size() != sol.p.size()) throw ShapeError("sparsek_jvp: v length mismatch");
    std::vector<double> out(v.size(), 0.0);
    if (sol.support.empty()) return out;
    double acc = 0.0;
    for (std::size_t j : sol.support) acc += v[j];
    const double vbar = acc / static_cast<double>(sol.support.size());
    for (std::size_t j : sol.support) out[j] = v[j] - vbar;
    return out;
}

std::vector<double> topk_hard(const std::vector<double>& z, std::size_t k) {
    const std::size_t m = z.size();
    if (k >= m) return std::vector<double>(m, 1.0);
    std::vector<double> out(m, 0.0);
    if (k == 0) return out;
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    auto better = [&z](std::size_t a, std::size_t b) {
        return z[a] > z[b] || (z[a] == z[b] && a < b);
    };
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(), better);
    for (std::size_t i = 0; i < k; ++i) out[idx[i]] = 1.0;
    return out;
}

StResult sparsek_st(const std::vector<double>& z, KBudget k) {
    StResult r;
    r.backward_carrier = sparsek(z, k);
    r.forward = topk_hard(z, static_cast<std::size_t>(std::floor(k.k)));
    return r;
}

}  // namespace sparsek
