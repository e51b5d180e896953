#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

// Dense double-precision linear algebra and a counter-based RNG.
// Everything here is sized for small problems (dims <= 16 for the
// factorizations); there is deliberately no sparse or blocked path.

namespace ulab {

using Vector = std::vector<double>;

struct NotSpdError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NotSymmetricError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Row-major dense matrix.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    Vector row_vec(std::size_t r) const {
        return Vector(row(r), row(r) + cols_);
    }
    void set_row(std::size_t r, const Vector& v);

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

  private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix transpose(const Matrix& a);
Matrix matmul(const Matrix& a, const Matrix& b);
Vector matvec(const Matrix& a, const Vector& x);
Matrix outer(const Vector& u, const Vector& v);

void axpy(double alpha, const Matrix& x, Matrix& y);  // y += alpha * x
void axpy(double alpha, const Vector& x, Vector& y);

double dot(const Vector& a, const Vector& b);
double norm2(const Vector& v);
double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
bool all_finite(const Matrix& a);
bool all_finite(const Vector& v);

/// Max |a(i,j) - a(j,i)|; 0 for empty.
double symmetry_gap(const Matrix& a);

/// Solve a * x = b for SPD a via Cholesky. Throws NotSpd when a is not
/// symmetric (gap > 1e-10 relative) or a pivot falls below
/// 1e-12 * trace(a) / rows.
Matrix solve_spd(const Matrix& a, const Matrix& b);
Vector solve_spd(const Matrix& a, const Vector& b);

/// Lower Cholesky factor of an SPD matrix (a = L L^T). Same error rules
/// as solve_spd.
Matrix cholesky_spd(const Matrix& a);

struct EigResult {
    Vector values;    // nonincreasing; negatives in [-1e-10, 0) clamped to 0
    Matrix vectors;   // columns are eigenvectors, a = V diag(values) V^T
};

/// Cyclic Jacobi eigendecomposition for small symmetric PSD matrices.
EigResult sym_eig_psd(const Matrix& a);

/// Symmetric PSD square root via the eigendecomposition.
Matrix sqrtm_psd(const Matrix& a);

/// Counter-based random stream: the draw sequence is a pure function of
/// (seed, counter), so a stream can be copied, replayed, or split into
/// independent child streams without shared state.
class RngState {
  public:
    explicit RngState(std::uint64_t seed, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    std::uint64_t next_u64();
    double next_uniform();  // (0, 1]
    double next_gauss();    // standard normal, Box-Muller
    Vector gauss(std::size_t n);

    /// Child stream i: seed' = mix(mix(seed + C) ^ (i + GAMMA)), counter 0.
    RngState child(std::uint64_t stream) const;
    RngState child(std::string_view name) const;  // FNV-1a of name, then child()

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

std::uint64_t fnv1a64(std::string_view s);

// "ULAB1 MAT rows cols" header, then one line per row with 17
// significant digits per entry. Round-trips doubles exactly.
void save_matrix(std::ostream& os, const Matrix& m);
Matrix load_matrix(std::istream& is);
void save_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix load_matrix(const std::filesystem::path& path);

std::string format_double(double v);  // %.17g, used by all text outputs

}  // namespace ulab
