#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <algorithm>
#include <random>
#include <set>

#include "partseg/error.hpp"
#include "partseg/geometry.hpp"

using namespace partseg;
namespace fs = std::filesystem;

namespace {

PointCloud random_cloud(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-2.0, 3.0);
    std::vector<double> xyz(3 * n);
    for (auto& v : xyz) v = u(rng);
    return PointCloud("c" + std::to_string(seed), std::move(xyz));
}

fs::path temp_path(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "partseg_test_geometry";
    fs::create_directories(dir);
    return dir / name;
}

double sq_dist(const Vec3& a, const Vec3& b) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

}  // namespace

TEST_CASE("fps starts at index 0 and returns distinct indices") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto cloud = random_cloud(seed, 50 + seed * 7);
        const auto picks = furthest_point_sample(cloud, 32);
        REQUIRE(picks.size() == 32);
        CHECK(picks.front() == 0);
        CHECK(std::set<std::size_t>(picks.begin(), picks.end()).size() == picks.size());
        CHECK(picks == furthest_point_sample_serial(cloud, 32));
    }
}

TEST_CASE("fps picks the farthest remaining point each step") {
    const auto cloud = random_cloud(99, 120);
    const auto picks = furthest_point_sample(cloud, 20);
    for (std::size_t s = 1; s < picks.size(); ++s) {
        double best = -1.0;
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < cloud.size(); ++i) {
            double d = 1e300;
            for (std::size_t j = 0; j < s; ++j) d = std::min(d, sq_dist(cloud.point(i), cloud.point(picks[j])));
            if (d > best) {
                best = d;
                best_i = i;
            }
        }
        CHECK(picks[s] == best_i);
    }
}

TEST_CASE("fps on a line and with duplicates") {
    const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {3, 0, 0}};
    const PointCloud cloud("line", pts);
    CHECK(furthest_point_sample(cloud, 3) == std::vector<std::size_t>{0, 3, 1});
    const auto all = furthest_point_sample(cloud, 5);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 5);
    CHECK_THROWS_AS(furthest_point_sample(cloud, 6), InvalidArgument);
    CHECK_THROWS_AS(furthest_point_sample(cloud, 0), InvalidArgument);
    CHECK(furthest_point_sample(cloud, 1) == std::vector<std::size_t>{0});

    const std::vector<Vec3> spread{{0, 0, 0}, {10, 0, 0}, {1, 0, 0}, {9, 0, 0}};
    CHECK(furthest_point_sample(PointCloud("x", spread), 3) == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("fps minimum pairwise distance is non-increasing in k") {
    const auto cloud = random_cloud(12, 150);
    const auto picks = furthest_point_sample(cloud, 150);
    double prev = 1e300;
    for (std::size_t k = 2; k <= picks.size(); ++k) {
        double m = 1e300;
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j)
                m = std::min(m, sq_dist(cloud.point(picks[i]), cloud.point(picks[j])));
        CHECK(m <= prev);
        prev = m;
    }
    std::vector<std::size_t> sorted = picks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("normalize centers and scales to the unit ball") {
    const auto cloud = random_cloud(4, 200);
    const auto n = normalize(cloud);
    Vec3 c{0, 0, 0};
    double max_r = 0.0;
    for (std::size_t i = 0; i < n.size(); ++i) {
        const auto p = n.point(i);
        for (int k = 0; k < 3; ++k) c[k] += p[k] / static_cast<double>(n.size());
        max_r = std::max(max_r, std::sqrt(sq_dist(p, {0, 0, 0})));
    }
    for (double v : c) CHECK(std::abs(v) < 1e-12);
    CHECK(max_r == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n.shape_id() == cloud.shape_id());

    const std::vector<Vec3> pair{{2, 0, 0}, {-2, 0, 0}};
    const auto np = normalize(PointCloud("p", pair));
    CHECK(np.point(0) == Vec3{1, 0, 0});
    CHECK(np.point(1) == Vec3{-1, 0, 0});
    const std::vector<Vec3> single{{5, 6, 7}};
    CHECK(normalize(PointCloud("s", single)).point(0) == Vec3{0, 0, 0});

    std::vector<double> bad{0, 0, 0, NAN, 1, 1};
    CHECK_THROWS_AS(normalize(PointCloud("bad", bad)), InvalidData);
}

TEST_CASE("binary and text clouds round trip") {
    const std::vector<Vec3> pts{{0.5, -1.25, 2.0}, {3.0, 4.0, 5.0}};
    const PointCloud cloud("shape", pts);
    const auto bin = temp_path("shape.pnpc");
    write_cloud_binary(cloud, bin);
    const auto back = read_cloud(bin);
    CHECK(back == cloud);

    const auto txt = temp_path("shape.xyz");
    write_cloud_text(cloud, txt);
    CHECK(read_cloud(txt) == cloud);
    CHECK(read_cloud_text(txt) == cloud);
}

TEST_CASE("malformed clouds report where they fail") {
    const auto bin = temp_path("trunc.pnpc");
    {
        std::ofstream out(bin, std::ios::binary);
        const std::uint32_t count = 4;
        out.write("PNPC", 4);
        out.write(reinterpret_cast<const char*>(&count), 4);
        const float f[3] = {1, 2, 3};
        out.write(reinterpret_cast<const char*>(f), sizeof f);
    }
    try {
        read_cloud_binary(bin);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.location() == 20);
    }

    const auto txt = temp_path("bad.xyz");
    {
        std::ofstream out(txt);
        out << "1 2 3\n4 5\n";
    }
    try {
        read_cloud_text(txt);
        FAIL("expected a format error");
    } catch (const FormatError& e) {
        CHECK(e.location() == 2);
    }
    CHECK_THROWS_AS(read_cloud(temp_path("missing.pnpc")), IoError);
}

TEST_CASE("select keeps order and id") {
    const auto cloud = random_cloud(1, 10);
    const std::vector<std::size_t> idx{3, 1};
    const auto sub = cloud.select(idx);
    CHECK(sub.size() == 2);
    CHECK(sub.point(0) == cloud.point(3));
    CHECK(sub.point(1) == cloud.point(1));
    CHECK(sub.shape_id() == cloud.shape_id());
}
