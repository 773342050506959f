#include "partseg/geometry.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "partseg/error.hpp"
#include "partseg/kernels.hpp"

namespace partseg {

static_assert(std::endian::native == std::endian::little,
              "point-cloud IO assumes a little-endian host");

PointCloud::PointCloud(std::string shape_id, std::vector<double> xyz)
    : shape_id_(std::move(shape_id)), xyz_(std::move(xyz)) {
    if (xyz_.size() % 3 != 0) throw InvalidData("coordinate count is not a multiple of 3");
}

PointCloud::PointCloud(std::string shape_id, std::span<const Vec3> points)
    : shape_id_(std::move(shape_id)) {
    xyz_.reserve(points.size() * 3);
    for (const auto& p : points) xyz_.insert(xyz_.end(), p.begin(), p.end());
}

void PointCloud::validate() const {
    if (empty()) throw InvalidData("point cloud '" + shape_id_ + "' has no points");
    for (std::size_t i = 0; i < xyz_.size(); ++i)
        if (!std::isfinite(xyz_[i]))
            throw InvalidData("point cloud '" + shape_id_ + "': non-finite coordinate at point " +
                              std::to_string(i / 3));
}

PointCloud PointCloud::select(std::span<const std::size_t> indices) const {
    std::vector<double> out;
    out.reserve(indices.size() * 3);
    for (auto i : indices) {
        if (i >= size()) throw InvalidArgument("point index out of range");
        out.insert(out.end(), xyz_.begin() + static_cast<std::ptrdiff_t>(3 * i),
                   xyz_.begin() + static_cast<std::ptrdiff_t>(3 * i + 3));
    }
    return PointCloud(shape_id_, std::move(out));
}

namespace {

template <typename Update>
std::vector<std::size_t> fps_impl(const PointCloud& cloud, std::size_t k, Update update) {
    const std::size_t n = cloud.size();
    if (k == 0 || k > n)
        throw InvalidArgument("furthest_point_sample: k must be in [1, " + std::to_string(n) +
                              "], got " + std::to_string(k));
    std::vector<std::size_t> picked;
    picked.reserve(k);
    std::vector<double> dist(n, std::numeric_limits<double>::infinity());
    std::size_t current = 0;
    for (std::size_t s = 0; s < k; ++s) {
        picked.push_back(current);
        dist[current] = -1.0;  // never re-selected, even among duplicate points
        const Vec3 q = cloud.point(current);
        current = update(cloud.xyz(), std::span<const double, 3>(q), std::span<double>(dist));
    }
    return picked;
}

}  // namespace

std::vector<std::size_t> furthest_point_sample(const PointCloud& cloud, std::size_t k) {
    return fps_impl(cloud, k, [](auto xyz, auto q, auto dist) {
        return kernels::fps_update(xyz, q, dist);
    });
}

std::vector<std::size_t> furthest_point_sample_serial(const PointCloud& cloud, std::size_t k) {
    return fps_impl(cloud, k, [](auto xyz, auto q, auto dist) {
        return kernels::serial::fps_update(xyz, q, dist);
    });
}

PointCloud normalize(const PointCloud& cloud) {
    cloud.validate();
    const std::size_t n = cloud.size();
    Vec3 centroid{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) centroid[c] += cloud.xyz()[3 * i + c];
    for (auto& c : centroid) c /= static_cast<double>(n);

    std::vector<double> out(cloud.xyz().begin(), cloud.xyz().end());
    double max_norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double sq = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
            out[3 * i + c] -= centroid[c];
            sq += out[3 * i + c] * out[3 * i + c];
        }
        max_norm = std::max(max_norm, std::sqrt(sq));
    }
    if (max_norm > 0.0)
        for (auto& v : out) v /= max_norm;
    return PointCloud(cloud.shape_id(), std::move(out));
}

namespace {

constexpr char kCloudMagic[4] = {'P', 'N', 'P', 'C'};

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    return in;
}

}  // namespace

void write_cloud_binary(const PointCloud& cloud, const std::filesystem::path& path) {
    auto out = open_out(path);
    out.write(kCloudMagic, 4);
    const auto count = static_cast<std::uint32_t>(cloud.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    std::vector<float> payload(cloud.xyz().begin(), cloud.xyz().end());
    out.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PointCloud read_cloud_binary(const std::filesystem::path& path) {
    auto in = open_in(path);
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kCloudMagic, 4) != 0)
        throw FormatError(path.string(), 0, "missing PNPC magic");
    std::uint32_t count = 0;
    if (!in.read(reinterpret_cast<char*>(&count), sizeof count))
        throw FormatError(path.string(), 4, "truncated point count");
    std::vector<float> payload(static_cast<std::size_t>(count) * 3);
    if (!in.read(reinterpret_cast<char*>(payload.data()),
                 static_cast<std::streamsize>(payload.size() * sizeof(float))))
        throw FormatError(path.string(), 8 + static_cast<std::size_t>(in.gcount()),
                          "truncated coordinate payload");
    if (in.peek() != std::char_traits<char>::eof())
        throw FormatError(path.string(), 8 + payload.size() * sizeof(float),
                          "trailing bytes after payload");
    PointCloud cloud(path.stem().string(), std::vector<double>(payload.begin(), payload.end()));
    cloud.validate();
    return cloud;
}

void write_cloud_text(const PointCloud& cloud, const std::filesystem::path& path) {
    auto out = open_out(path);
    out.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto p = cloud.point(i);
        out << p[0] << ' ' << p[1] << ' ' << p[2] << '\n';
    }
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PointCloud read_cloud_text(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::vector<double> xyz;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ss(line);
        double x, y, z;
        std::string rest;
        if (!(ss >> x >> y >> z) || (ss >> rest))
            throw FormatError(path.string(), line_no, "expected three numbers");
        xyz.insert(xyz.end(), {x, y, z});
    }
    PointCloud cloud(path.stem().string(), std::move(xyz));
    cloud.validate();
    return cloud;
}

PointCloud read_cloud(const std::filesystem::path& path) {
    char magic[4] = {};
    {
        auto in = open_in(path);
        in.read(magic, 4);
    }
    if (std::memcmp(magic, kCloudMagic, 4) == 0) return read_cloud_binary(path);
    return read_cloud_text(path);
}

}  // namespace partseg
