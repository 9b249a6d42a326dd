#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <vector>

#include "sparsek/common.hpp"

namespace sparsek {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Row-major dense matrix. Default scalar is double; float instantiations back
// the 32-bit compute mode. All public operations keep entries finite unless
// their error contract fired first.
template <class T>
struct MatT {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    MatT() = default;
    MatT(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    T* row(std::size_t r) { return data.data() + r * cols; }

    static MatT identity(std::size_t n) {
        MatT m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = T(1);
        return m;
    }

    template <class U>
    MatT<U> cast() const {
        MatT<U> out(rows, cols);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor2 = MatT<double>;
using Tensor2f = MatT<float>;

// Counter-based generator (splitmix64). Identical seeds give identical streams
// on every platform; no libstdc++ distributions involved.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive range
        return lo + static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = uniform(-1.0, 1.0);
            v = uniform(-1.0, 1.0);
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double mul = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * mul;
        have_spare_ = true;
        return u * mul;
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s, bool spare, double spare_val) {
        state_ = s;
        have_spare_ = spare;
        spare_ = spare_val;
    }
    bool have_spare() const { return have_spare_; }
    double spare_value() const { return spare_; }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Standard product with a fixed sequential reduction per output element.
template <class T>
MatT<T> matmul(const MatT<T>& a, const MatT<T>& b);

// Max-subtracted softmax. Masked entries are encoded as -inf and come back as
// exact zeros; a fully masked row is an error (empty attention support).
std::vector<double> softmax_row(const std::vector<double>& s);

// Central difference (f(z + h v) - f(z - h v)) / (2h).
std::vector<double> finite_diff_jvp(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& z, const std::vector<double>& v, double h);

void fill_normal(Rng& rng, Tensor2& m, double scale);

}  // namespace sparsek
