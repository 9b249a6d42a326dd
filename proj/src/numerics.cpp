#include "sparsek/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace sparsek {

template <class T>
MatT<T> matmul(const MatT<T>& a, const MatT<T>& b) {
    if (a.cols != b.rows)
        throw ShapeError("matmul: inner dimensions disagree (" + std::to_string(a.cols) +
                         " vs " + std::to_string(b.rows) + ")");
    MatT<T> out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* orow = out.row(i);
        for (std::size_t kk = 0; kk < a.cols; ++kk) {
            const T av = arow[kk];
            const T* brow = b.row(kk);
            for (std::size_t j = 0; j < b.cols; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

template MatT<double> matmul(const MatT<double>&, const MatT<double>&);
template MatT<float> matmul(const MatT<float>&, const MatT<float>&);

std::vector<double> softmax_row(const std::vector<double>& s) {
    double mx = kNegInf;
    for (double v : s) {
        if (std::isnan(v)) throw NumericError("softmax_row: NaN input");
        mx = std::max(mx, v);
    }
    if (mx == kNegInf) throw NumericError("softmax_row: all entries masked");
    std::vector<double> out(s.size(), 0.0);
    double denom = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == kNegInf) continue;  // masked entries stay exactly zero
        out[i] = std::exp(s[i] - mx);
        denom += out[i];
    }
    for (double& v : out) v /= denom;
    return out;
}

std::vector<double> finite_diff_jvp(
    const std::function<std::vector<double>(const std::vector<double>&)>& f,
    const std::vector<double>& z, const std::vector<double>& v, double h) {
    if (h <= 0.0) throw ArgumentError("finite_diff_jvp: h must be positive");
    if (z.size() != v.size()) throw ShapeError("finite_diff_jvp: z/v length mismatch");
    std::vector<double> zp = z, zm = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
        zp[i] += h * v[i];
        zm[i] -= h * v[i];
    }
    const std::vector<double> fp = f(zp);
    const std::vector<double> fm = f(zm);
    if (fp.size() != fm.size()) throw ShapeError("finite_diff_jvp: f output length varies");
    std::vector<double> out(fp.size());
    for (std::size_t i = 0; i < fp.size(); ++i) out[i] = (fp[i] - fm[i]) / (2.0 * h);
    return out;
}

void fill_normal(Rng& rng, Tensor2& m, double scale) {
    for (double& v : m.data) v = scale * rng.normal();
}

}  // namespace sparsek
