#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace partseg {

using Vec3 = std::array<double, 3>;

/// N points in model units, stored interleaved (x0 y0 z0 x1 ...).
class PointCloud {
public:
    PointCloud() = default;
    PointCloud(std::string shape_id, std::vector<double> xyz);
    PointCloud(std::string shape_id, std::span<const Vec3> points);

    const std::string& shape_id() const noexcept { return shape_id_; }
    void set_shape_id(std::string id) { shape_id_ = std::move(id); }

    std::size_t size() const noexcept { return xyz_.size() / 3; }
    bool empty() const noexcept { return xyz_.empty(); }

    Vec3 point(std::size_t i) const { return {xyz_[3 * i], xyz_[3 * i + 1], xyz_[3 * i + 2]}; }
    std::span<const double> xyz() const noexcept { return xyz_; }
    std::span<double> xyz() noexcept { return xyz_; }

    /// Throws InvalidData when empty or when any coordinate is non-finite.
    void validate() const;

    PointCloud select(std::span<const std::size_t> indices) const;

    bool operator==(const PointCloud&) const = default;

private:
    std::string shape_id_;
    std::vector<double> xyz_;
};

/// Greedy furthest point sampling starting from index 0; ties go to the lowest index.
std::vector<std::size_t> furthest_point_sample(const PointCloud& cloud, std::size_t k);

/// Same contract, plain loops; kept as the test reference for the parallel sampler.
std::vector<std::size_t> furthest_point_sample_serial(const PointCloud& cloud, std::size_t k);

/// Centers at the centroid and scales the farthest point to unit distance.
PointCloud normalize(const PointCloud& cloud);

// Point-cloud files. Binary: "PNPC", u32 LE count, then count×3 LE float32.
// Text: one "x y z" line per point.
void write_cloud_binary(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud_binary(const std::filesystem::path& path);
void write_cloud_text(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud_text(const std::filesystem::path& path);

/// Dispatches on the magic bytes; the shape id defaults to the file stem.
PointCloud read_cloud(const std::filesystem::path& path);

}  // namespace partseg
