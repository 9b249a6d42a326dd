#include "sparsek/stream.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace sparsek {

namespace {

// Min-heap on value; ties surface the larger index first so the earlier
// insertion survives longer, matching the cache's retention rule.
struct HeapCmp {
    bool operator()(const StreamState::Entry& a, const StreamState::Entry& b) const {
        return a.value > b.value || (a.value == b.value && a.index < b.index);
    }
};

template <class T>
void put_raw(std::vector<std::uint8_t>& out, const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
}

template <class T>
T get_raw(const std::uint8_t* data, std::size_t len, std::size_t& off) {
    if (off + sizeof(T) > len) throw IoError("stream state: truncated buffer");
    T v;
    std::memcpy(&v, data + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

StreamState::StreamState(KBudget k, std::size_t heap_cap) : k_(k.k), heap_cap_(heap_cap) {}

StreamState stream_init(KBudget k) { return StreamState(k); }

void StreamState::pop_s(StreamStepResult& step) {
    std::pop_heap(heap_s_.begin(), heap_s_.end(), HeapCmp{});
    const Entry e = heap_s_.back();
    heap_s_.pop_back();
    sum_s_ -= e.value;
    evicted_[e.index] = true;
    step.evicted.push_back(e.index);
    ++heap_ops_;
}

void StreamState::pop_f() {
    std::pop_heap(heap_f_.begin(), heap_f_.end(), HeapCmp{});
    sum_f_ -= heap_f_.back().value;
    heap_f_.pop_back();
    ++heap_ops_;
}

void StreamState::refresh_sums() {
    sum_s_ = 0.0;
    for (const Entry& e : heap_s_) sum_s_ += e.value;
    sum_f_ = 0.0;
    for (const Entry& e : heap_f_) sum_f_ += e.value;
}

double StreamState::sum_drift() const {
    double ss = 0.0, sf = 0.0;
    for (const Entry& e : heap_s_) ss += e.value;
    for (const Entry& e : heap_f_) sf += e.value;
    return std::max(std::abs(ss - sum_s_), std::abs(sf - sum_f_));
}

StreamStepResult StreamState::push(double z_t) {
    if (!std::isfinite(z_t)) throw NumericError("stream_push: non-finite value");
    StreamStepResult step;
    const std::size_t index = t_++;
    step.t = t_;
    evicted_.push_back(false);
    if (++pushes_since_refresh_ >= (1u << 16)) {
        refresh_sums();
        pushes_since_refresh_ = 0;
    }

    if (!(z_t > tau_)) {
        // Arrived at or below the threshold: zero mass now and forever.
        evicted_[index] = true;
        step.tau = tau_;
        return step;
    }
    step.inserted = true;
    heap_s_.push_back({z_t, index});
    std::push_heap(heap_s_.begin(), heap_s_.end(), HeapCmp{});
    sum_s_ += z_t;
    ++heap_ops_;
    if (z_t >= tau_ + 1.0) {
        heap_f_.push_back({z_t, index});
        std::push_heap(heap_f_.begin(), heap_f_.end(), HeapCmp{});
        sum_f_ += z_t;
        ++heap_ops_;
    }

    if (heap_cap_ > 0) {
        while (heap_s_.size() > heap_cap_) {
            if (!heap_f_.empty() && heap_f_.front().index == heap_s_.front().index) pop_f();
            pop_s(step);
            step.cap_forced = true;
            ++cap_drops_;
        }
    }

    if (static_cast<double>(t_) < k_) {
        step.tau = kNegInf;  // budget not binding yet: everything survives at weight 1
        return step;
    }

    // Resume the descending (u, w) scan from the heap sizes.
    bool popped_s_this_scan = false;
    double last_s_pop = 0.0;
    while (true) {
        const std::size_t u = heap_f_.size();
        const std::size_t w = heap_s_.size();
        if (u == w) {
            // Empty support: any tau in [z_(u+1), min_F - 1] yields the same
            // mask. The last value popped from S this scan is z_(u+1); absent
            // one, the interval floor is bounded below by the previous tau.
            const double hi = heap_f_.front().value - 1.0;
            const double lo = popped_s_this_scan ? last_s_pop : std::max(tau_, hi - 1.0);
            if (std::abs(static_cast<double>(u) - k_) <= 1e-9) {
                tau_ = std::max(tau_, 0.5 * (lo + hi));
                break;
            }
            pop_f();
            continue;
        }
        const double tau_cand = (sum_s_ - sum_f_ + static_cast<double>(u) - k_) /
                                static_cast<double>(w - u);
        if (heap_s_.front().value > tau_cand &&
            (u == 0 || heap_f_.front().value >= tau_cand + 1.0)) {
            tau_ = tau_cand;
            break;
        }
        if (u == 0 || heap_s_.front().value <= heap_f_.front().value - 1.0) {
            last_s_pop = heap_s_.front().value;
            popped_s_this_scan = true;
            pop_s(step);
            if (heap_s_.empty()) throw NumericError("stream scan exhausted (internal)");
        } else {
            pop_f();
        }
    }
    step.tau = tau_;
    return step;
}

SparseKSolution StreamState::solution() const {
    SparseKSolution sol;
    std::vector<Entry> surv(heap_s_);
    std::sort(surv.begin(), surv.end(),
              [](const Entry& a, const Entry& b) { return a.index < b.index; });
    const std::size_t n = surv.size();
    sol.indices.reserve(n);
    sol.p.reserve(n);
    if (static_cast<double>(t_) < k_) {
        sol.tau = kNegInf;
        sol.infeasible = true;
        sol.degenerate = true;
        for (const Entry& e : surv) {
            sol.indices.push_back(e.index);
            sol.p.push_back(1.0);
            sol.full_set.push_back(sol.p.size() - 1);
        }
        sol.u_count = sol.w_count = n;
        return sol;
    }
    sol.tau = tau_;
    for (const Entry& e : surv) {
        sol.indices.push_back(e.index);
        double p = e.value - tau_;
        p = p < 0.0 ? 0.0 : (p > 1.0 ? 1.0 : p);
        sol.p.push_back(p);
        const std::size_t slot = sol.p.size() - 1;
        if (p == 1.0) {
            ++sol.u_count;
            ++sol.w_count;
            sol.full_set.push_back(slot);
        } else if (p > 0.0) {
            ++sol.w_count;
            sol.support.push_back(slot);
        }
    }
    sol.degenerate = sol.support.empty();
    return sol;
}

SparseKSolution stream_push(StreamState& state, double z_t) {
    state.push(z_t);
    return state.solution();
}

SelectionMask stream_mask(const StreamState& state) {
    if (state.t() == 0) throw ArgumentError("stream_mask: empty state");
    SelectionMask mask;
    mask.mode = SelectionMask::Mode::soft;
    const SparseKSolution sol = state.solution();
    const std::size_t n = sol.p.size();
    mask.soft = sol.p;
    const std::size_t kk = static_cast<std::size_t>(std::floor(state.k()));
    std::vector<std::size_t> slots(n);
    std::iota(slots.begin(), slots.end(), std::size_t{0});
    // Ranking on (p desc, original index asc) equals ranking on the scores:
    // every saturated entry belongs to the top-floor(k) (at most k entries can
    // sit at 1), and p is strictly increasing in the score across the
    // fractional band where the cut actually falls.
    mask.hard.assign(n, 0.0);
    std::sort(slots.begin(), slots.end(), [&](std::size_t a, std::size_t b) {
        if (sol.p[a] != sol.p[b]) return sol.p[a] > sol.p[b];
        return sol.indices[a] < sol.indices[b];
    });
    for (std::size_t i = 0; i < std::min(kk, n); ++i) mask.hard[slots[i]] = 1.0;
    for (std::size_t i = 0; i < n; ++i)
        if (mask.hard[i] == 1.0) mask.indices.push_back(sol.indices[i]);
    return mask;
}

void StreamState::serialize(std::vector<std::uint8_t>& out) const {
    put_raw(out, k_);
    put_raw(out, static_cast<std::uint64_t>(heap_cap_));
    put_raw(out, tau_);
    put_raw(out, static_cast<std::uint64_t>(t_));
    put_raw(out, sum_s_);
    put_raw(out, sum_f_);
    put_raw(out, cap_drops_);
    put_raw(out, heap_ops_);
    put_raw(out, pushes_since_refresh_);
    auto put_heap = [&out](const std::vector<Entry>& h) {
        put_raw(out, static_cast<std::uint64_t>(h.size()));
        for (const Entry& e : h) {
            put_raw(out, e.value);
            put_raw(out, static_cast<std::uint64_t>(e.index));
        }
    };
    put_heap(heap_s_);
    put_heap(heap_f_);
    put_raw(out, static_cast<std::uint64_t>(evicted_.size()));
    std::uint8_t byte = 0;
    for (std::size_t i = 0; i < evicted_.size(); ++i) {
        if (evicted_[i]) byte |= static_cast<std::uint8_t>(1u << (i % 8));
        if (i % 8 == 7 || i + 1 == evicted_.size()) {
            out.push_back(byte);
            byte = 0;
        }
    }
}

StreamState StreamState::deserialize(const std::uint8_t* data, std::size_t len,
                                     std::size_t* used) {
    std::size_t off = 0;
    const double k = get_raw<double>(data, len, off);
    const auto cap = static_cast<std::size_t>(get_raw<std::uint64_t>(data, len, off));
    StreamState st{KBudget(k), cap};
    st.tau_ = get_raw<double>(data, len, off);
    st.t_ = static_cast<std::size_t>(get_raw<std::uint64_t>(data, len, off));
    st.sum_s_ = get_raw<double>(data, len, off);
    st.sum_f_ = get_raw<double>(data, len, off);
    st.cap_drops_ = get_raw<std::uint64_t>(data, len, off);
    st.heap_ops_ = get_raw<std::uint64_t>(data, len, off);
    st.pushes_since_refresh_ = get_raw<std::uint64_t>(data, len, off);
    auto get_heap = [&](std::vector<Entry>& h) {
        const auto n = static_cast<std::size_t>(get_raw<std::uint64_t>(data, len, off));
        h.clear();
        h.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            Entry e;
            e.value = get_raw<double>(data, len, off);
            e.index = static_cast<std::size_t>(get_raw<std::uint64_t>(data, len, off));
            h.push_back(e);
        }
    };
    get_heap(st.heap_s_);
    get_heap(st.heap_f_);
    const auto nbits = static_cast<std::size_t>(get_raw<std::uint64_t>(data, len, off));
    st.evicted_.assign(nbits, false);
    for (std::size_t i = 0; i < nbits; i += 8) {
        const auto byte = get_raw<std::uint8_t>(data, len, off);
        for (std::size_t b = 0; b < 8 && i + b < nbits; ++b)
            st.evicted_[i + b] = (byte >> b) & 1u;
    }
    if (used) *used = off;
    return st;
}

}  // namespace sparsek
