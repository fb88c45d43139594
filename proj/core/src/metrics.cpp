#include "soctwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "soctwin/error.hpp"

namespace soctwin {

double dsc(const BinaryMask& a, const BinaryMask& b) {
    if (a.width != b.width || a.height != b.height) throw ShapeError("dsc: masks differ in shape");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a.at(i);
        const bool y = b.at(i);
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double mask_volume(const BinaryMask& m, double spacing) {
    if (!(spacing > 0.0)) throw ValidationError("spacing must be > 0", "spacing");
    return static_cast<double>(m.count()) * spacing * spacing;
}

double max_feret_diameter(const BinaryMask& m, double spacing) {
    // Extreme pairs always lie on the boundary, so only boundary voxels are
    // compared.
    std::vector<std::pair<int, int>> edge;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m(x, y)) continue;
            const bool interior = x > 0 && y > 0 && x + 1 < m.width && y + 1 < m.height && m(x - 1, y) &&
                                  m(x + 1, y) && m(x, y - 1) && m(x, y + 1);
            if (!interior) edge.emplace_back(x, y);
        }
    }
    long best = 0;
    for (std::size_t i = 0; i < edge.size(); ++i) {
        for (std::size_t j = i + 1; j < edge.size(); ++j) {
            const long dx = edge[i].first - edge[j].first;
            const long dy = edge[i].second - edge[j].second;
            best = std::max(best, dx * dx + dy * dy);
        }
    }
    return std::sqrt(static_cast<double>(best)) * spacing;
}

std::optional<double> time_to_progression(std::span<const VolumePoint> trajectory, double voxel_area,
                                          const ProgressionRule& rule) {
    if (trajectory.empty()) throw ValidationError("time_to_progression: empty trajectory", "trajectory");
    for (std::size_t i = 1; i < trajectory.size(); ++i) {
        if (trajectory[i].day < trajectory[i - 1].day) {
            throw ValidationError("time_to_progression: trajectory not sorted by day", "trajectory");
        }
    }
    double nadir = trajectory.front().volume;
    for (const auto& p : trajectory) {
        if (p.volume >= rule.ratio * nadir && p.volume - nadir >= rule.min_increase_voxels * voxel_area &&
            p.volume > nadir) {
            return p.day;
        }
        nadir = std::min(nadir, p.volume);
    }
    return std::nullopt;
}

ErrorSummary mae_rmse(std::span<const double> predicted, std::span<const double> truth) {
    if (predicted.size() != truth.size()) throw ShapeError("mae_rmse: length mismatch");
    if (predicted.empty()) throw ValidationError("mae_rmse: empty input", "predicted");
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double e = predicted[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(predicted.size());
    return {abs_sum / n, std::sqrt(sq_sum / n)};
}

MeanStd mean_std(std::span<const double> values) {
    if (values.empty()) return {};
    double s = 0.0;
    for (double v : values) s += v;
    const double mean = s / static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size()))};
}

}  // namespace soctwin
