#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>
#include <boost/numeric/odeint.hpp>

#include "soctwin/grid.hpp"
#include "soctwin/imex.hpp"
#include "soctwin/patient.hpp"
#include "soctwin/rng.hpp"

namespace soctwin::test {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("soctwin_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

inline ScalarField random_field(int w, int h, double spacing, Rng& rng, double lo = 0.0, double hi = 1.0,
                                const DomainMask* domain = nullptr) {
    ScalarField f(w, h, spacing);
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = rng.uniform(lo, hi);
    if (domain) restrict_to(f, *domain);
    return f;
}

inline BinaryMask random_mask(int w, int h, Rng& rng, double p = 0.5) {
    BinaryMask m(w, h);
    for (auto& b : m.bits) b = rng.bernoulli(p) ? 1 : 0;
    return m;
}

inline BinaryMask disk(int w, int h, double cx, double cy, double r) {
    BinaryMask m(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) m.set(x, y, true);
    return m;
}

/// Random blob-shaped anatomy that still contains the grid centre.
inline DomainMask random_domain(int w, int h, Rng& rng) {
    BinaryMask m(w, h);
    const double rx = rng.uniform(0.35, 0.5) * w, ry = rng.uniform(0.35, 0.5) * h;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = (x + 0.5 - w / 2.0) / rx, dy = (y + 0.5 - h / 2.0) / ry;
            if (dx * dx + dy * dy <= 1.0) m.set(x, y, true);
        }
    return DomainMask(m);
}

inline double linf(const ScalarField& a, const ScalarField& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double l2_diff(const ScalarField& a, const ScalarField& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Dense assembly of the zero-flux graph Laplacian: each pair of inside
/// 4-neighbours exchanges with weight 1/dx^2, nothing else couples.
inline Eigen::MatrixXd dense_laplacian(const DomainMask& dom, double dx) {
    const int w = dom.width(), h = dom.height();
    const auto n = static_cast<Eigen::Index>(w) * h;
    Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
    const double c = 1.0 / (dx * dx);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!dom.inside(x, y)) continue;
            const Eigen::Index i = static_cast<Eigen::Index>(y) * w + x;
            const int nb[4][2] = {{x + 1, y}, {x - 1, y}, {x, y + 1}, {x, y - 1}};
            for (const auto& p : nb) {
                if (p[0] < 0 || p[0] >= w || p[1] < 0 || p[1] >= h || !dom.inside(p[0], p[1])) continue;
                const Eigen::Index j = static_cast<Eigen::Index>(p[1]) * w + p[0];
                L(i, j) += c;
                L(i, i) -= c;
            }
        }
    return L;
}

inline Eigen::VectorXd to_eigen(const ScalarField& f) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) v[static_cast<Eigen::Index>(i)] = f[i];
    return v;
}

/// Solves (I - s L) x = b densely, outside voxels pinned to 0.
inline Eigen::VectorXd dense_implicit_solve(const DomainMask& dom, double dx, double s, const ScalarField& b) {
    const Eigen::MatrixXd L = dense_laplacian(dom, dx);
    const auto n = L.rows();
    Eigen::MatrixXd A = Eigen::MatrixXd::Identity(n, n) - s * L;
    Eigen::VectorXd rhs = to_eigen(b);
    for (Eigen::Index i = 0; i < n; ++i)
        if (!dom.inside(static_cast<std::size_t>(i))) rhs[i] = 0.0;
    return A.partialPivLu().solve(rhs);
}

/// dN/dt = a N - b N^2 integrated by adaptive Dormand-Prince.
inline double ode_reference(double x, double a, double b, double dt, double rtol = 1e-13) {
    using State = double;
    namespace oi = boost::numeric::odeint;
    State n = x;
    auto rhs = [a, b](const State& v, State& dv, double) { dv = a * v - b * v * v; };
    oi::integrate_adaptive(oi::make_controlled(1e-300, rtol, oi::runge_kutta_dopri5<State>()), rhs, n, 0.0, dt,
                           dt / 100.0);
    return n;
}

/// Small in-memory patient on a full rectangular anatomy.
inline PatientRecord simple_patient(int w, int h, const std::vector<double>& days,
                                    const std::vector<BinaryMask>& masks) {
    PatientRecord p;
    p.id = "P0";
    p.anatomy.domain = DomainMask::full(w, h);
    p.anatomy.spacing = 1.0;
    for (std::size_t i = 0; i < days.size(); ++i) {
        Observation o;
        o.day = days[i];
        o.mask = masks[i];
        p.observations.push_back(o);
    }
    return p;
}

}  // namespace soctwin::test
