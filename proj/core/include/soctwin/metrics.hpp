#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "soctwin/grid.hpp"

namespace soctwin {

/// 2|a n b| / (|a| + |b|); two empty masks agree perfectly (1).
double dsc(const BinaryMask& a, const BinaryMask& b);

/// Voxel count times dx^2.
double mask_volume(const BinaryMask& m, double spacing);

/// Largest centre-to-centre distance between two mask voxels, in mm.
double max_feret_diameter(const BinaryMask& m, double spacing);

struct ProgressionRule {
    double ratio = 1.25;          // volume >= ratio * nadir
    double min_increase_voxels = 2.0;  // and volume - nadir >= this many voxel areas
};

struct VolumePoint {
    double day = 0.0;
    double volume = 0.0;
};

/// First day at which the volume exceeds the running post-treatment nadir
/// by the rule's ratio and absolute margin. std::nullopt when never.
/// Throws ValidationError on an empty or unsorted trajectory.
std::optional<double> time_to_progression(std::span<const VolumePoint> trajectory, double voxel_area,
                                          const ProgressionRule& rule = {});

struct ErrorSummary {
    double mae = 0.0;
    double rmse = 0.0;
};

ErrorSummary mae_rmse(std::span<const double> predicted, std::span<const double> truth);

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // population standard deviation
};

MeanStd mean_std(std::span<const double> values);

}  // namespace soctwin
