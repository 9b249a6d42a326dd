#include "sparsek/cache.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace sparsek {

namespace {

constexpr std::uint16_t kSnapshotVersion = 1;

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

struct Reader {
    const std::uint8_t* p;
    std::size_t len, off = 0;

    Reader(const std::uint8_t* data, std::size_t n) : p(data), len(n) {}

    void need(std::size_t n) const {
        if (off + n > len) throw IoError("cache snapshot: truncated payload");
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return p[off++];
    }
};

// Min-heap front = lowest score, ties broken toward the later position, so the
// front is always the first entry a better newcomer should displace.
struct SlotCmp {
    template <class Slot>
    bool operator()(const Slot& a, const Slot& b) const {
        return a.score > b.score || (a.score == b.score && a.pos < b.pos);
    }
};

template <class T>
void append_rows(MatT<T>& dst, const MatT<T>& src) {
    if (dst.rows == 0) {
        dst = src;
        return;
    }
    if (dst.cols != src.cols) throw ShapeError("tape append: column mismatch");
    dst.data.insert(dst.data.end(), src.data.begin(), src.data.end());
    dst.rows += src.rows;
}

// phi(z) = elu(W z) + 1 on one head slice; strictly positive.
template <class T>
void feature_map(const MatT<T>& w, const T* z, std::vector<T>& out) {
    const std::size_t p = w.rows;
    out.assign(p, T(0));
    for (std::size_t r = 0; r < p; ++r) {
        T acc = T(0);
        for (std::size_t c = 0; c < p; ++c) acc += w(r, c) * z[c];
        out[r] = acc > T(0) ? acc + T(1) : std::exp(acc);
    }
}

}  // namespace

template <class T>
SparseKvCache<T>::SparseKvCache(const AttnConfig& cfg, std::size_t d_model,
                                const ScoringParams& scoring)
    : cfg_(cfg),
      d_model_(d_model),
      cap_(cfg.k > 0.0 ? static_cast<std::size_t>(std::floor(cfg.k)) : 0),
      scoring_(scoring) {
    cfg_.validate(d_model, scoring);
    if (cfg_.k > 0.0) stream_.emplace(KBudget(cfg_.k));
    if (cfg_.linear_mix) {
        const std::size_t p = cfg_.head_dim(d_model_);
        lin_m_.assign(cfg_.heads, std::vector<T>(p * p, T(0)));
        lin_b_.assign(cfg_.heads, std::vector<T>(p, T(0)));
    }
}

template <class T>
const StreamState& SparseKvCache<T>::stream() const {
    if (!stream_) throw ConfigError("cache: no selection stream (k = 0)");
    return *stream_;
}

template <class T>
void SparseKvCache<T>::note_peak() {
    const std::size_t held = ring_.size() + cache_pos_.size();
    if (held > peak_kv_) peak_kv_ = held;
}

template <class T>
void SparseKvCache<T>::drop_kv(std::size_t pos) {
    auto it = kv_.find(pos);
    if (it != kv_.end()) {
        grave_.emplace(pos, std::move(it->second));
        kv_.erase(it);
    }
    if (cache_evicted_.size() <= pos) cache_evicted_.resize(pos + 1, false);
    cache_evicted_[pos] = true;
    pending_evictions_.push_back(pos);
}

template <class T>
const typename SparseKvCache<T>::Kv& SparseKvCache<T>::find_kv(std::size_t pos) const {
    auto it = kv_.find(pos);
    if (it != kv_.end()) return it->second;
    auto git = grave_.find(pos);
    if (git != grave_.end()) return git->second;
    throw NumericError("cache: attended position has no stored row");
}

template <class T>
void SparseKvCache<T>::admit_to_cache(std::size_t pos) {
    const double s = scores_[pos];
    if (cache_heap_.size() < cap_) {
        cache_heap_.push_back(CacheSlot{s, pos});
        std::push_heap(cache_heap_.begin(), cache_heap_.end(), SlotCmp{});
        cache_pos_.push_back(pos);  // pos exceeds every retained position
        return;
    }
    const CacheSlot worst = cache_heap_.front();
    // Equal scores keep the earlier position; the newcomer always has the
    // larger one.
    if (s < worst.score || s == worst.score) {
        drop_kv(pos);
        return;
    }
    std::pop_heap(cache_heap_.begin(), cache_heap_.end(), SlotCmp{});
    cache_heap_.back() = CacheSlot{s, pos};
    std::push_heap(cache_heap_.begin(), cache_heap_.end(), SlotCmp{});
    drop_kv(worst.pos);
    auto it = std::lower_bound(cache_pos_.begin(), cache_pos_.end(), worst.pos);
    cache_pos_.erase(it);
    cache_pos_.push_back(pos);
}

template <class T>
void SparseKvCache<T>::exit_window(std::size_t pos, AttnTape<T>* tape) {
    if (!stream_) {
        // No selection budget: every departing row is dropped.
        drop_kv(pos);
        return;
    }
    StreamStepResult step = stream_->push(scores_[pos]);
    if (tape) tape->tau_push.push_back(step.tau);
    // Entries at or below tau carry weight zero and cannot outrank any cache
    // member (those all sit strictly above tau), so they are dropped at entry.
    // Stream evictions of older indices never touch the cache: a top-floor(k)
    // position keeps positive weight for as long as it holds that rank.
    if (!step.inserted || cap_ == 0) {
        drop_kv(pos);
        return;
    }
    admit_to_cache(pos);
}

template <class T>
MatT<T> SparseKvCache<T>::forward_chunk(const MatT<T>& x_chunk, const AttnParams<T>& params,
                                        AttnTape<T>* tape, const LinearMixParams<T>* lin) {
    const std::size_t len = x_chunk.rows, d = d_model_;
    if (x_chunk.cols != d) throw ShapeError("forward_chunk: row width != d_model");
    if (params.wq.rows != d || params.wq.cols != d || params.wk.rows != d ||
        params.wk.cols != d || params.wv.rows != d || params.wv.cols != d ||
        params.wo.rows != d || params.wo.cols != d)
        throw ShapeError("forward_chunk: projection shapes must be d_model x d_model");
    if (cfg_.linear_mix) {
        if (!lin) throw ConfigError("forward_chunk: linear mix needs feature parameters");
        const std::size_t p = cfg_.head_dim(d);
        if (lin->feat.size() != cfg_.heads) throw ShapeError("forward_chunk: one feature map per head");
        for (const auto& f : lin->feat)
            if (f.rows != p || f.cols != p) throw ShapeError("forward_chunk: feature maps are head_dim x head_dim");
    }
    if (tape && tape->queries.size() != t_)
        throw ArgumentError("forward_chunk: tape must accompany every chunk from the start");

    const std::size_t heads = cfg_.heads, p = cfg_.head_dim(d);
    const double scale = cfg_.effective_scale(d);
    const std::size_t chunk_base = t_;

    MatT<T> q = matmul(x_chunk, params.wq);
    MatT<T> k = matmul(x_chunk, params.wk);
    MatT<T> v = matmul(x_chunk, params.wv);

    // Frozen scores for the chunk. Without a budget the score subsystem idles.
    for (std::size_t i = 0; i < len; ++i) {
        if (cfg_.k > 0.0) {
            auto rec = detail::score_one(x_chunk.row(i), d, scoring_, norm_, chunk_base + i);
            scores_.push_back(rec.u);
            if (tape) {
                tape->raw.push_back(rec.raw);
                tape->u.push_back(rec.u);
                tape->norm_mean.push_back(rec.mean);
                tape->norm_sdev.push_back(rec.sdev);
            }
        } else {
            scores_.push_back(0.0);
            if (tape) {
                tape->raw.push_back(0.0);
                tape->u.push_back(0.0);
                tape->norm_mean.push_back(0.0);
                tape->norm_sdev.push_back(1.0);
            }
        }
    }

    if (tape) {
        tape->chunk_starts.push_back(chunk_base);
        tape->cfg = cfg_;
        tape->d_model = d;
        append_rows(tape->x, x_chunk);
        append_rows(tape->q, q);
        append_rows(tape->k, k);
        append_rows(tape->v, v);
    }

    struct Snap {
        std::vector<std::uint32_t> att;
        std::uint32_t n_sel = 0;
        std::vector<double> gate;
    };

    MatT<T> head_out(len, d);
    std::vector<Snap> snaps;
    std::vector<T> a_buf, phi_q, phi_k;
    // The linear path reads prefix accumulators that advance with every
    // position, so it runs per position; grouping is output-invariant anyway.
    const std::size_t group = cfg_.linear_mix ? 1 : cfg_.group_size;

    for (std::size_t block = 0; block < len; block += group) {
        const std::size_t block_end = std::min(len, block + group);
        snaps.clear();

        // Pass 1: advance the recurrent state one position at a time and pin
        // down what each query will read.
        for (std::size_t i = block; i < block_end; ++i) {
            const std::size_t pos = chunk_base + i;
            Kv row;
            row.k.assign(k.row(i), k.row(i) + d);
            row.v.assign(v.row(i), v.row(i) + d);
            kv_.emplace(pos, std::move(row));
            ring_.push_back(pos);
            note_peak();
            if (cfg_.linear_mix) {
                for (std::size_t hh = 0; hh < heads; ++hh) {
                    feature_map(lin->feat[hh], k.row(i) + hh * p, phi_k);
                    const T* vh = v.row(i) + hh * p;
                    std::vector<T>& m = lin_m_[hh];
                    std::vector<T>& b = lin_b_[hh];
                    for (std::size_t r = 0; r < p; ++r) {
                        for (std::size_t c = 0; c < p; ++c) m[r * p + c] += phi_k[r] * vh[c];
                        b[r] += phi_k[r];
                    }
                }
            }
            if (ring_.size() > cfg_.window) {
                exit_window(ring_.front(), tape);
                ring_.pop_front();
                note_peak();
            }

            Snap s;
            s.att.reserve(cache_pos_.size() + ring_.size() + 1);
            for (std::size_t cp : cache_pos_) s.att.push_back(static_cast<std::uint32_t>(cp));
            s.n_sel = static_cast<std::uint32_t>(s.att.size());
            if (s.n_sel) {
                const double tau = stream_->tau();
                s.gate.reserve(s.n_sel);
                for (std::uint32_t j = 0; j < s.n_sel; ++j)
                    s.gate.push_back(std::min(1.0, std::max(0.0, scores_[s.att[j]] - tau)));
            }
            for (std::size_t rp : ring_) s.att.push_back(static_cast<std::uint32_t>(rp));
            if (cfg_.window == 0 && !cfg_.linear_mix) {
                // Nothing window-resident: the query still reads itself with
                // weight one unless selection already covers it. The linear
                // path reaches every position through its accumulators.
                const bool selected =
                    !cache_pos_.empty() && cache_pos_.back() == pos;
                if (!selected) s.att.push_back(static_cast<std::uint32_t>(pos));
            }
            if (tape) {
                typename AttnTape<T>::QueryRec rec;
                rec.n_sel = s.n_sel;
                rec.att = s.att;
                rec.gate = s.gate;
                tape->queries.push_back(std::move(rec));
            }
            snaps.push_back(std::move(s));
            ++t_;
        }

        // Pass 2: attention on the pinned snapshots. No state mutates here,
        // which is what makes the group size invisible in the output.
        for (std::size_t i = block; i < block_end; ++i) {
            const Snap& s = snaps[i - block];
            const T* qrow = q.row(i);
            T* orow = head_out.row(i);

            if (cfg_.linear_mix) {
                for (std::size_t hh = 0; hh < heads; ++hh) {
                    const std::size_t off = hh * p;
                    feature_map(lin->feat[hh], qrow + off, phi_q);
                    std::vector<T> num(p, T(0));
                    T den = T(0);
                    for (std::size_t jdx = 0; jdx < s.att.size(); ++jdx) {
                        const std::size_t jp = s.att[jdx];
                        const double m = jdx < s.n_sel ? s.gate[jdx] : 1.0;
                        const Kv& kvj = find_kv(jp);
                        const T* kj = kvj.k.data() + off;
                        const T* vj = kvj.v.data() + off;
                        T dot = T(0);
                        for (std::size_t c = 0; c < p; ++c) dot += qrow[off + c] * kj[c];
                        const T e = std::exp(T(scale) * dot);
                        feature_map(lin->feat[hh], kj, phi_k);
                        T lam = T(0);
                        for (std::size_t c = 0; c < p; ++c) lam += phi_q[c] * phi_k[c];
                        const T wexact = T(m) * e;
                        const T wlin = T(m) * lam;
                        for (std::size_t c = 0; c < p; ++c) num[c] += wexact * vj[c] - wlin * vj[c];
                        den += wexact - wlin;
                    }
                    const std::vector<T>& m_acc = lin_m_[hh];
                    const std::vector<T>& b_acc = lin_b_[hh];
                    for (std::size_t r = 0; r < p; ++r) {
                        for (std::size_t c = 0; c < p; ++c) num[c] += phi_q[r] * m_acc[r * p + c];
                        den += phi_q[r] * b_acc[r];
                    }
                    if (!(den > T(0)))
                        throw NumericError("linear mix: nonpositive denominator");
                    for (std::size_t c = 0; c < p; ++c) orow[off + c] = num[c] / den;
                }
                continue;
            }

            for (std::size_t hh = 0; hh < heads; ++hh) {
                const std::size_t off = hh * p;
                a_buf.assign(s.att.size(), T(0));
                T maxa = std::numeric_limits<T>::lowest();
                for (std::size_t jdx = 0; jdx < s.att.size(); ++jdx) {
                    const Kv& kvj = find_kv(s.att[jdx]);
                    const T* kj = kvj.k.data() + off;
                    T dot = T(0);
                    for (std::size_t c = 0; c < p; ++c) dot += qrow[off + c] * kj[c];
                    T aj = T(scale) * dot;
                    if (cfg_.key_mode == KeyMode::soft && jdx < s.n_sel)
                        aj *= T(s.gate[jdx]);
                    a_buf[jdx] = aj;
                    if (aj > maxa) maxa = aj;
                }
                T den = T(0);
                for (std::size_t jdx = 0; jdx < s.att.size(); ++jdx) {
                    a_buf[jdx] = std::exp(a_buf[jdx] - maxa);
                    den += a_buf[jdx];
                }
                for (std::size_t jdx = 0; jdx < s.att.size(); ++jdx) {
                    const T pi = a_buf[jdx] / den;
                    T wv = T(1);
                    if (jdx < s.n_sel && cfg_.mask_mode == MaskApply::soft)
                        wv = T(s.gate[jdx]);
                    const Kv& kvj = find_kv(s.att[jdx]);
                    const T* vj = kvj.v.data() + off;
                    const T c0 = pi * wv;
                    for (std::size_t c = 0; c < p; ++c) orow[off + c] += c0 * vj[c];
                }
                if (tape) {
                    auto& rec = tape->queries[chunk_base + i];
                    rec.maxa.push_back(maxa);
                    rec.denom.push_back(den);
                }
            }
        }
        grave_.clear();
    }

    if (tape) append_rows(tape->head_concat, head_out);
    return matmul(head_out, params.wo);
}

template <class T>
std::vector<std::size_t> SparseKvCache<T>::drain_evictions() {
    std::vector<std::size_t> out;
    out.swap(pending_evictions_);
    return out;
}

template <class T>
std::vector<std::size_t> SparseKvCache<T>::retained_positions() const {
    std::vector<std::size_t> out(cache_pos_.begin(), cache_pos_.end());
    out.insert(out.end(), ring_.begin(), ring_.end());
    return out;
}

template <class T>
void SparseKvCache<T>::serialize(std::vector<std::uint8_t>& out) const {
    put_u64(out, d_model_);
    put_u64(out, cfg_.heads);
    put_u64(out, cfg_.window);
    put_u64(out, cap_);
    put_f64(out, cfg_.k);
    out.push_back(cfg_.linear_mix ? 1 : 0);
    out.push_back(stream_ ? 1 : 0);
    put_u64(out, t_);
    put_u64(out, scores_.size());
    for (double s : scores_) put_f64(out, s);
    put_u64(out, norm_.count);
    put_f64(out, norm_.mean);
    put_f64(out, norm_.m2);
    put_f64(out, norm_.eps);
    if (stream_) {
        std::vector<std::uint8_t> blob;
        stream_->serialize(blob);
        put_u64(out, blob.size());
        out.insert(out.end(), blob.begin(), blob.end());
    }
    put_u64(out, ring_.size());
    for (std::size_t r : ring_) put_u64(out, r);
    put_u64(out, cache_heap_.size());
    for (const CacheSlot& slot : cache_heap_) {
        put_f64(out, slot.score);
        put_u64(out, slot.pos);
    }
    put_u64(out, cache_pos_.size());
    for (std::size_t cp : cache_pos_) put_u64(out, cp);
    // KV rows in ring-then-cache order keeps the byte stream deterministic.
    put_u64(out, ring_.size() + cache_pos_.size());
    auto put_kv = [&](std::size_t pos) {
        const Kv& row = kv_.at(pos);
        put_u64(out, pos);
        for (T x : row.k) put_f64(out, static_cast<double>(x));
        for (T x : row.v) put_f64(out, static_cast<double>(x));
    };
    for (std::size_t r : ring_) put_kv(r);
    for (std::size_t cp : cache_pos_) put_kv(cp);
    put_u64(out, cache_evicted_.size());
    std::uint8_t acc = 0;
    for (std::size_t i = 0; i < cache_evicted_.size(); ++i) {
        if (cache_evicted_[i]) acc |= static_cast<std::uint8_t>(1u << (i % 8));
        if (i % 8 == 7) {
            out.push_back(acc);
            acc = 0;
        }
    }
    if (cache_evicted_.size() % 8) out.push_back(acc);
    put_u64(out, pending_evictions_.size());
    for (std::size_t pe : pending_evictions_) put_u64(out, pe);
    put_u64(out, peak_kv_);
    if (cfg_.linear_mix) {
        for (std::size_t hh = 0; hh < cfg_.heads; ++hh) {
            for (T x : lin_m_[hh]) put_f64(out, static_cast<double>(x));
            for (T x : lin_b_[hh]) put_f64(out, static_cast<double>(x));
        }
    }
}

template <class T>
SparseKvCache<T> SparseKvCache<T>::deserialize(const std::uint8_t* data, std::size_t len,
                                               const AttnConfig& cfg, std::size_t d_model,
                                               const ScoringParams& scoring) {
    Reader r(data, len);
    SparseKvCache out(cfg, d_model, scoring);
    if (r.u64() != d_model || r.u64() != cfg.heads || r.u64() != cfg.window ||
        r.u64() != out.cap_)
        throw IoError("cache snapshot: configuration mismatch");
    if (r.f64() != cfg.k) throw IoError("cache snapshot: budget mismatch");
    if ((r.u8() != 0) != cfg.linear_mix) throw IoError("cache snapshot: mode mismatch");
    const bool has_stream = r.u8() != 0;
    if (has_stream != out.stream_.has_value()) throw IoError("cache snapshot: stream mismatch");
    out.t_ = r.u64();
    out.scores_.resize(r.u64());
    for (double& s : out.scores_) s = r.f64();
    out.norm_.count = r.u64();
    out.norm_.mean = r.f64();
    out.norm_.m2 = r.f64();
    out.norm_.eps = r.f64();
    if (has_stream) {
        const std::size_t blob_len = r.u64();
        r.need(blob_len);
        std::size_t used = 0;
        out.stream_ = StreamState::deserialize(data + r.off, blob_len, &used);
        if (used != blob_len) throw IoError("cache snapshot: stream blob length mismatch");
        r.off += blob_len;
    }
    out.ring_.clear();
    for (std::size_t i = 0, n = r.u64(); i < n; ++i) out.ring_.push_back(r.u64());
    out.cache_heap_.clear();
    for (std::size_t i = 0, n = r.u64(); i < n; ++i) {
        CacheSlot slot;
        slot.score = r.f64();
        slot.pos = r.u64();
        out.cache_heap_.push_back(slot);
    }
    out.cache_pos_.clear();
    for (std::size_t i = 0, n = r.u64(); i < n; ++i) out.cache_pos_.push_back(r.u64());
    out.kv_.clear();
    for (std::size_t i = 0, n = r.u64(); i < n; ++i) {
        const std::size_t pos = r.u64();
        Kv row;
        row.k.resize(d_model);
        row.v.resize(d_model);
        for (T& x : row.k) x = static_cast<T>(r.f64());
        for (T& x : row.v) x = static_cast<T>(r.f64());
        out.kv_.emplace(pos, std::move(row));
    }
    const std::size_t nbits = r.u64();
    out.cache_evicted_.assign(nbits, false);
    for (std::size_t i = 0; i < nbits; i += 8) {
        const std::uint8_t byte = r.u8();
        for (std::size_t b = 0; b < 8 && i + b < nbits; ++b)
            out.cache_evicted_[i + b] = (byte >> b) & 1u;
    }
    out.pending_evictions_.clear();
    for (std::size_t i = 0, n = r.u64(); i < n; ++i) out.pending_evictions_.push_back(r.u64());
    out.peak_kv_ = r.u64();
    if (cfg.linear_mix) {
        const std::size_t p = cfg.head_dim(d_model);
        for (std::size_t hh = 0; hh < cfg.heads; ++hh) {
            for (std::size_t i = 0; i < p * p; ++i) out.lin_m_[hh][i] = static_cast<T>(r.f64());
            for (std::size_t i = 0; i < p; ++i) out.lin_b_[hh][i] = static_cast<T>(r.f64());
        }
    }
    if (r.off != len) throw IoError("cache snapshot: trailing bytes");
    return out;
}

template <class T>
MatT<T> chunked_forward(const MatT<T>& x, std::size_t chunk_len, const AttnParams<T>& params,
                        const ScoringParams& scoring, const AttnConfig& cfg, AttnTape<T>* tape,
                        const LinearMixParams<T>* lin) {
    if (chunk_len == 0) throw ArgumentError("chunked_forward: chunk_len must be positive");
    SparseKvCache<T> cache(cfg, x.cols, scoring);
    MatT<T> out(x.rows, x.cols);
    for (std::size_t base = 0; base < x.rows; base += chunk_len) {
        const std::size_t n = std::min(chunk_len, x.rows - base);
        MatT<T> chunk(n, x.cols);
        std::copy(x.row(base), x.row(base) + n * x.cols, chunk.data.begin());
        MatT<T> y = cache.forward_chunk(chunk, params, tape, lin);
        std::copy(y.data.begin(), y.data.end(), out.row(base));
    }
    return out;
}

template <class T>
std::vector<std::size_t> prune_cache(SparseKvCache<T>& cache) {
    return cache.drain_evictions();
}

template <class T>
std::vector<T> generate_step(SparseKvCache<T>& cache, const std::vector<T>& new_token_state,
                             const AttnParams<T>& params, const LinearMixParams<T>* lin) {
    MatT<T> x(1, new_token_state.size());
    std::copy(new_token_state.begin(), new_token_state.end(), x.data.begin());
    MatT<T> y = cache.forward_chunk(x, params, nullptr, lin);
    return y.data;
}

template <class T>
void save_cache_snapshot(const SparseKvCache<T>& cache, const std::string& path) {
    std::vector<std::uint8_t> payload;
    cache.serialize(payload);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("SPKC", 4);
    const std::uint16_t ver = kSnapshotVersion;
    f.put(static_cast<char>(ver & 0xff));
    f.put(static_cast<char>(ver >> 8));
    std::vector<std::uint8_t> lenb;
    put_u64(lenb, payload.size());
    f.write(reinterpret_cast<const char*>(lenb.data()), 8);
    f.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
    if (!f) throw IoError("write failed: " + path);
}

template <class T>
SparseKvCache<T> load_cache_snapshot(const std::string& path, const AttnConfig& cfg,
                                     std::size_t d_model, const ScoringParams& scoring) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "SPKC", 4) != 0) throw IoError("not a cache snapshot: " + path);
    const int lo = f.get(), hi = f.get();
    if (lo < 0 || hi < 0) throw IoError("cache snapshot: truncated header");
    const std::uint16_t ver = static_cast<std::uint16_t>(lo | (hi << 8));
    if (ver != kSnapshotVersion) throw IoError("cache snapshot: unsupported version");
    std::uint8_t lenb[8];
    f.read(reinterpret_cast<char*>(lenb), 8);
    if (!f) throw IoError("cache snapshot: truncated header");
    std::uint64_t plen = 0;
    for (int i = 0; i < 8; ++i) plen |= static_cast<std::uint64_t>(lenb[i]) << (8 * i);
    std::vector<std::uint8_t> payload(plen);
    f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(plen));
    if (!f) throw IoError("cache snapshot: truncated payload");
    return SparseKvCache<T>::deserialize(payload.data(), payload.size(), cfg, d_model, scoring);
}

template class SparseKvCache<double>;
template class SparseKvCache<float>;

template MatT<double> chunked_forward(const MatT<double>&, std::size_t, const AttnParams<double>&,
                                      const ScoringParams&, const AttnConfig&, AttnTape<double>*,
                                      const LinearMixParams<double>*);
template MatT<float> chunked_forward(const MatT<float>&, std::size_t, const AttnParams<float>&,
                                     const ScoringParams&, const AttnConfig&, AttnTape<float>*,
                                     const LinearMixParams<float>*);
template std::vector<std::size_t> prune_cache(SparseKvCache<double>&);
template std::vector<std::size_t> prune_cache(SparseKvCache<float>&);
template std::vector<double> generate_step(SparseKvCache<double>&, const std::vector<double>&,
                                           const AttnParams<double>&,
                                           const LinearMixParams<double>*);
template std::vector<float> generate_step(SparseKvCache<float>&, const std::vector<float>&,
                                          const AttnParams<float>&, const LinearMixParams<float>*);
template void save_cache_snapshot(const SparseKvCache<double>&, const std::string&);
template void save_cache_snapshot(const SparseKvCache<float>&, const std::string&);
template SparseKvCache<double> load_cache_snapshot(const std::string&, const AttnConfig&,
                                                   std::size_t, const ScoringParams&);
template SparseKvCache<float> load_cache_snapshot(const std::string&, const AttnConfig&,
                                                  std::size_t, const ScoringParams&);

}  // namespace sparsek
