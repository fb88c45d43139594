#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace soctwin {

/// Row-major bitmap; one byte per voxel, nonzero means set.
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int w, int h, bool fill = false);

    std::size_t size() const noexcept { return bits.size(); }
    bool operator()(int x, int y) const { return bits[index(x, y)] != 0; }
    bool at(std::size_t i) const { return bits[i] != 0; }
    void set(int x, int y, bool v) { bits[index(x, y)] = v ? 1 : 0; }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }
    std::size_t count() const noexcept;

    friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// The anatomy Omega: voxels that carry tumour state. Never empty.
class DomainMask {
public:
    /// Single inside voxel; placeholder for default-constructed records.
    DomainMask() : DomainMask(BinaryMask(1, 1, true)) {}
    explicit DomainMask(BinaryMask mask);
    static DomainMask full(int width, int height);

    int width() const noexcept { return mask_.width; }
    int height() const noexcept { return mask_.height; }
    std::size_t size() const noexcept { return mask_.size(); }
    bool inside(std::size_t i) const { return mask_.bits[i] != 0; }
    bool inside(int x, int y) const { return mask_(x, y); }
    const BinaryMask& mask() const noexcept { return mask_; }
    std::size_t count() const noexcept { return count_; }

    friend bool operator==(const DomainMask& a, const DomainMask& b) { return a.mask_ == b.mask_; }

private:
    BinaryMask mask_;
    std::size_t count_ = 0;
};

/// Dense row-major 2D field with uniform spacing (mm per voxel).
class ScalarField {
public:
    ScalarField() = default;
    ScalarField(int width, int height, double spacing, double fill = 0.0);
    ScalarField(int width, int height, double spacing, std::vector<double> values);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double spacing() const noexcept { return spacing_; }
    std::size_t size() const noexcept { return values_.size(); }

    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator()(int x, int y) { return values_[index(x, y)]; }
    double operator()(int x, int y) const { return values_[index(x, y)]; }
    std::size_t index(int x, int y) const noexcept {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x);
    }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }

    bool same_shape(const ScalarField& other) const noexcept {
        return width_ == other.width_ && height_ == other.height_;
    }
    bool same_shape(const BinaryMask& m) const noexcept { return width_ == m.width && height_ == m.height; }
    bool same_shape(const DomainMask& m) const noexcept {
        return width_ == m.width() && height_ == m.height();
    }

    /// Throws ValidationError if any value is NaN or infinite.
    void check_finite(const char* what = "field") const;

    double min() const;
    double max() const;
    double sum() const;
    double norm2() const;

    friend bool operator==(const ScalarField&, const ScalarField&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    double spacing_ = 1.0;
    std::vector<double> values_;
};

/// Zero every voxel that lies outside `domain`.
void restrict_to(ScalarField& field, const DomainMask& domain);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

/// Matrix-free five-point Laplacian with zero-flux (mirror) closure at the
/// domain-mask edge. Neighbours outside the mask take the centre value, so
/// the stencil only couples inside voxels and the operator is the (weighted)
/// graph Laplacian of the mask: symmetric, negative semidefinite, mass
/// conserving.
///
/// An optional per-voxel diffusivity multiplier turns the operator into
/// div(m grad u); face coefficients are the arithmetic mean of the two
/// adjacent multipliers.
class LaplacianOperator {
public:
    LaplacianOperator(DomainMask domain, double spacing);
    LaplacianOperator(DomainMask domain, double spacing, const ScalarField& diffusivity);

    const DomainMask& domain() const noexcept { return domain_; }
    double spacing() const noexcept { return spacing_; }
    int width() const noexcept { return domain_.width(); }
    int height() const noexcept { return domain_.height(); }

    ScalarField apply(const ScalarField& u) const;
    void apply(std::span<const double> u, std::span<double> out) const;

    /// -diag(L): sum of face weights of voxel i divided by dx^2.
    double neg_diagonal(std::size_t i) const noexcept { return neg_diag_[i]; }
    /// Largest -diag(L) over the domain; bounds the spectral radius by 2x.
    double max_neg_diagonal() const noexcept { return max_neg_diag_; }

private:
    void build(const ScalarField* diffusivity);

    DomainMask domain_;
    double spacing_;
    // Face weights already divided by dx^2. east_[i] couples i and i+1,
    // south_[i] couples i and i+width. Zero when either voxel is outside.
    std::vector<double> east_;
    std::vector<double> south_;
    std::vector<double> neg_diag_;
    double max_neg_diag_ = 0.0;
};

struct CgOptions {
    double tol = 1e-8;   // relative residual ||Ax-b|| / ||b||
    int max_iter = 0;    // 0 selects 10 * (width + height)
};

struct CgResult {
    ScalarField x;
    int iterations = 0;
    double residual = 0.0;  // final relative residual
};

using LinearOperator = std::function<void(std::span<const double>, std::span<double>)>;

/// Jacobi-preconditioned conjugate gradients on the inside voxels of
/// `domain`. `apply_A` must be symmetric positive definite there; `diagonal`
/// is its diagonal (the preconditioner). The iterate starts at b, so A = I
/// and b = 0 both return immediately. Iteration order is fixed; the result is
/// a deterministic function of the inputs.
///
/// Throws SolverError if the relative residual is still above `tol` after
/// the iteration budget.
CgResult cg_solve(const LinearOperator& apply_A, std::span<const double> diagonal,
                  const ScalarField& b, const DomainMask& domain, const CgOptions& options = {});

/// Solves (I - shift * L) x = b, shift = dt * D >= 0.
CgResult solve_implicit(const LaplacianOperator& L, double shift, const ScalarField& b,
                        const CgOptions& options = {});

/// Chebyshev (square) structuring element of the given radius.
BinaryMask dilate(const BinaryMask& mask, int radius);
BinaryMask erode(const BinaryMask& mask, int radius);

/// Voxels where field >= level, limited to the domain when one is given.
BinaryMask threshold(const ScalarField& field, double level, const DomainMask* domain = nullptr);

}  // namespace soctwin
