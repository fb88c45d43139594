#include "soctwin/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "soctwin/error.hpp"

namespace soctwin {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Shape: return "shape";
        case ErrorKind::Validation: return "validation";
        case ErrorKind::Config: return "config";
        case ErrorKind::Solver: return "solver";
        case ErrorKind::Format: return "format";
        case ErrorKind::Io: return "io";
        case ErrorKind::State: return "state";
        case ErrorKind::Divergence: return "divergence";
    }
    return "unknown";
}

BinaryMask::BinaryMask(int w, int h, bool fill) : width(w), height(h) {
    if (w <= 0 || h <= 0) {
        throw ValidationError("mask dimensions must be positive", "mask");
    }
    bits.assign(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill ? 1 : 0);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

DomainMask::DomainMask(BinaryMask mask) : mask_(std::move(mask)) {
    if (mask_.width <= 0 || mask_.height <= 0 ||
        mask_.bits.size() != static_cast<std::size_t>(mask_.width) * static_cast<std::size_t>(mask_.height)) {
        throw ShapeError("domain mask storage does not match its dimensions");
    }
    for (auto& b : mask_.bits) b = b ? 1 : 0;
    count_ = mask_.count();
    if (count_ == 0) {
        throw ValidationError("domain mask has no inside voxel", "domain");
    }
}

DomainMask DomainMask::full(int width, int height) { return DomainMask(BinaryMask(width, height, true)); }

ScalarField::ScalarField(int width, int height, double spacing, double fill)
    : ScalarField(width, height, spacing,
                  std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                          static_cast<std::size_t>(std::max(height, 0)),
                                      fill)) {}

ScalarField::ScalarField(int width, int height, double spacing, std::vector<double> values)
    : width_(width), height_(height), spacing_(spacing), values_(std::move(values)) {
    if (width <= 0 || height <= 0) {
        throw ValidationError("field dimensions must be positive", "field");
    }
    if (!(spacing > 0.0) || !std::isfinite(spacing)) {
        throw ValidationError("field spacing must be positive and finite", "spacing");
    }
    if (values_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw ShapeError("field value count " + std::to_string(values_.size()) + " != " +
                         std::to_string(width) + "x" + std::to_string(height));
    }
}

void ScalarField::check_finite(const char* what) const {
    for (double v : values_) {
        if (!std::isfinite(v)) throw ValidationError(std::string(what) + " contains a non-finite value", what);
    }
}

double ScalarField::min() const { return *std::min_element(values_.begin(), values_.end()); }
double ScalarField::max() const { return *std::max_element(values_.begin(), values_.end()); }

double ScalarField::sum() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s;
}

double ScalarField::norm2() const { return soctwin::norm2(values_); }

void restrict_to(ScalarField& field, const DomainMask& domain) {
    if (!field.same_shape(domain)) throw ShapeError("field and domain differ in shape");
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (!domain.inside(i)) field[i] = 0.0;
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------

LaplacianOperator::LaplacianOperator(DomainMask domain, double spacing)
    : domain_(std::move(domain)), spacing_(spacing) {
    build(nullptr);
}

LaplacianOperator::LaplacianOperator(DomainMask domain, double spacing, const ScalarField& diffusivity)
    : domain_(std::move(domain)), spacing_(spacing) {
    if (!diffusivity.same_shape(domain_)) throw ShapeError("diffusivity map and domain differ in shape");
    for (std::size_t i = 0; i < diffusivity.size(); ++i) {
        if (domain_.inside(i) && !(diffusivity[i] > 0.0 && std::isfinite(diffusivity[i]))) {
            throw ValidationError("diffusivity multipliers must be positive and finite", "diffusivity");
        }
    }
    build(&diffusivity);
}

void LaplacianOperator::build(const ScalarField* diffusivity) {
    if (!(spacing_ > 0.0) || !std::isfinite(spacing_)) {
        throw ValidationError("spacing must be positive", "spacing");
    }
    const int w = width();
    const int h = height();
    const std::size_t n = domain_.size();
    const double inv_h2 = 1.0 / (spacing_ * spacing_);
    east_.assign(n, 0.0);
    south_.assign(n, 0.0);
    neg_diag_.assign(n, 0.0);

    auto face = [&](std::size_t i, std::size_t j) {
        const double m = diffusivity ? 0.5 * ((*diffusivity)[i] + (*diffusivity)[j]) : 1.0;
        return m * inv_h2;
    };

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = domain_.mask().index(x, y);
            if (!domain_.inside(i)) continue;
            if (x + 1 < w && domain_.inside(i + 1)) {
                const double f = face(i, i + 1);
                east_[i] = f;
                neg_diag_[i] += f;
                neg_diag_[i + 1] += f;
            }
            if (y + 1 < h && domain_.inside(i + static_cast<std::size_t>(w))) {
                const std::size_t j = i + static_cast<std::size_t>(w);
                const double f = face(i, j);
                south_[i] = f;
                neg_diag_[i] += f;
                neg_diag_[j] += f;
            }
        }
    }
    max_neg_diag_ = n ? *std::max_element(neg_diag_.begin(), neg_diag_.end()) : 0.0;
}

ScalarField LaplacianOperator::apply(const ScalarField& u) const {
    if (!u.same_shape(domain_)) throw ShapeError("laplacian: field and domain differ in shape");
    ScalarField out(u.width(), u.height(), u.spacing(), 0.0);
    apply(u.values(), out.values());
    return out;
}

void LaplacianOperator::apply(std::span<const double> u, std::span<double> out) const {
    const std::size_t n = domain_.size();
    const std::size_t w = static_cast<std::size_t>(width());
    std::fill(out.begin(), out.end(), 0.0);
    // Accumulate flux face by face; each face touches two voxels with
    // opposite signs so the sum over the domain vanishes exactly in exact
    // arithmetic.
    for (std::size_t i = 0; i < n; ++i) {
        if (east_[i] != 0.0) {
            const double flux = east_[i] * (u[i + 1] - u[i]);
            out[i] += flux;
            out[i + 1] -= flux;
        }
        if (south_[i] != 0.0) {
            const double flux = south_[i] * (u[i + w] - u[i]);
            out[i] += flux;
            out[i + w] -= flux;
        }
    }
}

// ---------------------------------------------------------------------------

CgResult cg_solve(const LinearOperator& apply_A, std::span<const double> diagonal, const ScalarField& b,
                  const DomainMask& domain, const CgOptions& options) {
    if (!b.same_shape(domain)) throw ShapeError("cg: rhs and domain differ in shape");
    if (diagonal.size() != b.size()) throw ShapeError("cg: diagonal length differs from rhs");
    b.check_finite("rhs");

    const std::size_t n = b.size();
    const int max_iter = options.max_iter > 0 ? options.max_iter : 10 * (b.width() + b.height());

    CgResult result;
    result.x = b;
    restrict_to(result.x, domain);
    std::span<double> x = result.x.values();

    std::vector<double> bb(b.values().begin(), b.values().end());
    for (std::size_t i = 0; i < n; ++i) {
        if (!domain.inside(i)) bb[i] = 0.0;
    }
    const double bnorm = norm2(bb);
    if (bnorm == 0.0) {
        result.residual = 0.0;
        return result;
    }
    const double target = options.tol * bnorm;

    std::vector<double> r(n), z(n), p(n), ap(n);
    auto residual_from_scratch = [&] {
        apply_A(x, ap);
        for (std::size_t i = 0; i < n; ++i) r[i] = domain.inside(i) ? bb[i] - ap[i] : 0.0;
        return norm2(r);
    };

    double rnorm = residual_from_scratch();
    int it = 0;
    // Outer loop restarts from the true residual when the recurrence
    // reports convergence that the true residual does not confirm.
    while (rnorm > target && it < max_iter) {
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = domain.inside(i) ? r[i] / diagonal[i] : 0.0;
            p[i] = z[i];
        }
        double rz = dot(r, z);
        while (it < max_iter) {
            apply_A(p, ap);
            for (std::size_t i = 0; i < n; ++i) {
                if (!domain.inside(i)) ap[i] = 0.0;
            }
            const double pap = dot(p, ap);
            if (!(pap > 0.0)) {
                throw SolverError("cg: operator is not positive definite on the search direction",
                                  rnorm / bnorm, it);
            }
            const double alpha = rz / pap;
            for (std::size_t i = 0; i < n; ++i) {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            ++it;
            if (norm2(r) <= target) break;
            for (std::size_t i = 0; i < n; ++i) z[i] = domain.inside(i) ? r[i] / diagonal[i] : 0.0;
            const double rz_new = dot(r, z);
            const double beta = rz_new / rz;
            rz = rz_new;
            for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        }
        rnorm = residual_from_scratch();
    }

    result.iterations = it;
    result.residual = rnorm / bnorm;
    if (rnorm > target) {
        throw SolverError("cg: no convergence after " + std::to_string(it) + " iterations (relative residual " +
                              std::to_string(result.residual) + ")",
                          result.residual, it);
    }
    return result;
}

CgResult solve_implicit(const LaplacianOperator& L, double shift, const ScalarField& b, const CgOptions& options) {
    if (!(shift >= 0.0) || !std::isfinite(shift)) {
        throw ValidationError("implicit solve requires dt * D >= 0", "shift");
    }
    if (!b.same_shape(L.domain())) throw ShapeError("implicit solve: rhs and operator differ in shape");
    const std::size_t n = b.size();
    std::vector<double> diag(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) diag[i] = 1.0 + shift * L.neg_diagonal(i);

    std::vector<double> lu(n);
    LinearOperator apply_A = [&](std::span<const double> u, std::span<double> out) {
        L.apply(u, lu);
        for (std::size_t i = 0; i < n; ++i) out[i] = u[i] - shift * lu[i];
    };
    return cg_solve(apply_A, diag, b, L.domain(), options);
}

// ---------------------------------------------------------------------------

namespace {

// One separable pass: out[i] = any(in[i-r .. i+r]) along stride.
void dilate_line(const std::uint8_t* in, std::uint8_t* out, int len, std::ptrdiff_t stride, int radius) {
    std::vector<int> prefix(static_cast<std::size_t>(len) + 1, 0);
    for (int i = 0; i < len; ++i) prefix[i + 1] = prefix[i] + (in[i * stride] ? 1 : 0);
    for (int i = 0; i < len; ++i) {
        const int lo = std::max(0, i - radius);
        const int hi = std::min(len, i + radius + 1);
        out[i * stride] = (prefix[hi] - prefix[lo]) > 0 ? 1 : 0;
    }
}

}  // namespace

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius < 0) throw ValidationError("dilation radius must be >= 0", "radius");
    if (radius == 0) return mask;
    BinaryMask tmp(mask.width, mask.height);
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        const std::size_t row = mask.index(0, y);
        dilate_line(mask.bits.data() + row, tmp.bits.data() + row, mask.width, 1, radius);
    }
    for (int x = 0; x < mask.width; ++x) {
        dilate_line(tmp.bits.data() + x, out.bits.data() + x, mask.height, mask.width, radius);
    }
    return out;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
    if (radius < 0) throw ValidationError("erosion radius must be >= 0", "radius");
    if (radius == 0) return mask;
    // Voxels beyond the grid edge count as unset.
    BinaryMask padded(mask.width + 2 * radius, mask.height + 2 * radius, true);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) padded.set(x + radius, y + radius, !mask(x, y));
    }
    const BinaryMask grown = dilate(padded, radius);
    BinaryMask out(mask.width, mask.height);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) out.set(x, y, !grown(x + radius, y + radius));
    }
    return out;
}

BinaryMask threshold(const ScalarField& field, double level, const DomainMask* domain) {
    if (domain && !field.same_shape(*domain)) throw ShapeError("threshold: field and domain differ in shape");
    BinaryMask out(field.width(), field.height());
    for (std::size_t i = 0; i < field.size(); ++i) {
        const bool in = !domain || domain->inside(i);
        out.bits[i] = (in && field[i] >= level) ? 1 : 0;
    }
    return out;
}

}  // namespace soctwin
