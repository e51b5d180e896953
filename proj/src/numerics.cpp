#include "ulab/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace ulab {

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

void Matrix::set_row(std::size_t r, const Vector& v) {
    if (v.size() != cols_) throw std::invalid_argument("set_row: length mismatch");
    std::copy(v.begin(), v.end(), row(r));
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw std::invalid_argument("matmul: shape mismatch");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* brow = b.row(k);
            double* crow = c.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Vector matvec(const Matrix& a, const Vector& x) {
    if (a.cols() != x.size()) throw std::invalid_argument("matvec: shape mismatch");
    Vector y(a.rows(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x[j];
        y[i] = acc;
    }
    return y;
}

Matrix outer(const Vector& u, const Vector& v) {
    Matrix m(u.size(), v.size());
    for (std::size_t i = 0; i < u.size(); ++i)
        for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
    return m;
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
    if (!x.same_shape(y)) throw std::invalid_argument("axpy: shape mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += alpha * x.data()[i];
}

void axpy(double alpha, const Vector& x, Vector& y) {
    if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

double dot(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double norm2(const Vector& v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Matrix& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * a.data()[i];
    return std::sqrt(acc);
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i]));
    return m;
}

bool all_finite(const Matrix& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a.data()[i])) return false;
    return true;
}

bool all_finite(const Vector& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

double symmetry_gap(const Matrix& a) {
    double gap = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            gap = std::max(gap, std::abs(a(i, j) - a(j, i)));
    return gap;
}

namespace {

void require_symmetric(const Matrix& a, const char* who) {
    if (a.rows() != a.cols())
        throw NotSymmetricError(std::string(who) + ": matrix not square");
    if (symmetry_gap(a) > 1e-10 * std::max(1.0, max_abs(a)))
        throw NotSymmetricError(std::string(who) + ": matrix not symmetric");
}

/// In-place lower Cholesky factor; throws NotSpd on a tiny or negative pivot.
Matrix cholesky(const Matrix& a) {
    const std::size_t n = a.rows();
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i) trace += a(i, i);
    const double pivot_floor = 1e-12 * trace / static_cast<double>(n == 0 ? 1 : n);

    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = a(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > pivot_floor))
            throw NotSpdError("cholesky: pivot " + std::to_string(d) + " at row " +
                              std::to_string(j));
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

}  // namespace

Matrix cholesky_spd(const Matrix& a) {
    require_symmetric(a, "cholesky_spd");
    return cholesky(a);
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
    require_symmetric(a, "solve_spd");
    if (a.rows() != b.rows()) throw std::invalid_argument("solve_spd: rhs shape mismatch");
    const Matrix l = cholesky(a);
    const std::size_t n = a.rows();

    Matrix x = b;
    // forward: L y = b
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = x(i, c);
            for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
            x(i, c) = s / l(i, i);
        }
        // backward: L^T x = y
        for (std::size_t ii = n; ii-- > 0;) {
            double s = x(ii, c);
            for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

Vector solve_spd(const Matrix& a, const Vector& b) {
    Matrix rhs(b.size(), 1);
    for (std::size_t i = 0; i < b.size(); ++i) rhs(i, 0) = b[i];
    Matrix x = solve_spd(a, rhs);
    Vector out(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) out[i] = x(i, 0);
    return out;
}

EigResult sym_eig_psd(const Matrix& a) {
    require_symmetric(a, "sym_eig_psd");
    const std::size_t n = a.rows();
    Matrix d = a;
    Matrix v = Matrix::identity(n);

    const double off_tol = 1e-14 * std::max(1.0, frobenius_norm(a));
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += d(p, q) * d(p, q);
        if (std::sqrt(off) <= off_tol) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                if (d(p, q) == 0.0) continue;
                const double theta = (d(q, q) - d(p, p)) / (2.0 * d(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    const double dkp = d(k, p), dkq = d(k, q);
                    d(k, p) = c * dkp - s * dkq;
                    d(k, q) = s * dkp + c * dkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double dpk = d(p, k), dqk = d(q, k);
                    d(p, k) = c * dpk - s * dqk;
                    d(q, k) = s * dpk + c * dqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t i, std::size_t j) { return d(i, i) > d(j, j); });

    EigResult res;
    res.values.resize(n);
    res.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double lam = d(order[j], order[j]);
        if (lam < 0.0 && lam >= -1e-10) lam = 0.0;
        res.values[j] = lam;
        for (std::size_t i = 0; i < n; ++i) res.vectors(i, j) = v(i, order[j]);
    }
    return res;
}

Matrix sqrtm_psd(const Matrix& a) {
    EigResult eig = sym_eig_psd(a);
    const std::size_t n = a.rows();
    Matrix r(n, n);
    for (std::size_t k = 0; k < n; ++k) {
        const double s = std::sqrt(std::max(eig.values[k], 0.0));
        if (s == 0.0) continue;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                r(i, j) += s * eig.vectors(i, k) * eig.vectors(j, k);
    }
    // symmetrize away the last bits of rotation error
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double m = 0.5 * (r(i, j) + r(j, i));
            r(i, j) = r(j, i) = m;
        }
    return r;
}

namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

}  // namespace

std::uint64_t RngState::next_u64() {
    ++counter_;
    return mix64(seed_ + kGamma * counter_);
}

double RngState::next_uniform() {
    // 53-bit mantissa draw mapped to (0, 1]
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngState::next_gauss() {
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector RngState::gauss(std::size_t n) {
    Vector v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = next_gauss();
    return v;
}

RngState RngState::child(std::uint64_t stream) const {
    std::uint64_t s = mix64(seed_ + 0xD1B54A32D192ED03ull);
    s = mix64(s ^ (stream + kGamma));
    return RngState(s);
}

RngState RngState::child(std::string_view name) const { return child(fnv1a64(name)); }

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

void save_matrix(std::ostream& os, const Matrix& m) {
    os << "ULAB1 MAT " << m.rows() << " " << m.cols() << "\n";
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) os << " ";
            os << format_double(m(i, j));
        }
        os << "\n";
    }
}

Matrix load_matrix(std::istream& is) {
    std::string magic, kind;
    std::size_t rows = 0, cols = 0;
    if (!(is >> magic >> kind >> rows >> cols) || magic != "ULAB1" || kind != "MAT")
        throw IoError("load_matrix: bad header");
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            if (!(is >> m(i, j))) throw IoError("load_matrix: truncated data");
    return m;
}

void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    std::ofstream os(path);
    if (!os) throw IoError("save_matrix: cannot open " + path.string());
    save_matrix(os, m);
    if (!os) throw IoError("save_matrix: write failed for " + path.string());
}

Matrix load_matrix(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("load_matrix: cannot open " + path.string());
    return load_matrix(is);
}

}  // namespace ulab
