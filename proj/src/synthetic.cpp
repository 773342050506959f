#include "partseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "partseg/error.hpp"

namespace partseg {

namespace {

// Chair node ids.
enum : NodeId {
    kChair = 0,
    kChairBack = 1,
    kChairSeat = 2,
    kChairBase = 3,
    kChairArm = 4,
    kBackSurface = 5,
    kBackVerticalBar = 6,
    kRegularLegBase = 7,
    kStarLegBase = 8,
    kRegularLeg = 9,
    kCentralSupport = 10,
    kStarLeg = 11,
    kArmHorizontalBar = 12,
    kArmVerticalBar = 13,
};

// Lamp node ids.
enum : NodeId {
    kLamp = 0,
    kLampBase = 1,
    kLampBody = 2,
    kLampShade = 3,
    kRoundBase = 4,
    kLegBase = 5,
    kPole = 6,
    kLampLeg = 7,
};

Template chair_template() {
    using K = NodeKind;
    std::vector<TemplateNode> nodes{
        {kChair, "chair", K::And, {kChairBack, kChairSeat, kChairBase, kChairArm}},
        {kChairBack, "chair_back", K::And, {kBackSurface, kBackVerticalBar}},
        {kChairSeat, "chair_seat", K::Leaf, {}},
        {kChairBase, "chair_base", K::Or, {kRegularLegBase, kStarLegBase}},
        {kChairArm, "chair_arm", K::And, {kArmHorizontalBar, kArmVerticalBar}},
        {kBackSurface, "back_surface", K::Leaf, {}},
        {kBackVerticalBar, "back_frame_vertical_bar", K::Leaf, {}},
        {kRegularLegBase, "regular_leg_base", K::And, {kRegularLeg}},
        {kStarLegBase, "star_leg_base", K::And, {kCentralSupport, kStarLeg}},
        {kRegularLeg, "leg", K::Leaf, {}},
        {kCentralSupport, "central_support", K::Leaf, {}},
        {kStarLeg, "leg", K::Leaf, {}},
        {kArmHorizontalBar, "arm_horizontal_bar", K::Leaf, {}},
        {kArmVerticalBar, "arm_near_vertical_bar", K::Leaf, {}},
    };
    std::map<int, std::vector<NodeId>> levels{
        {1, {kChairBack, kChairSeat, kChairBase, kChairArm}},
        {2, {kChairSeat, kChairArm, kBackSurface, kBackVerticalBar, kRegularLegBase, kStarLegBase}},
        {3, {kChairSeat, kBackSurface, kBackVerticalBar, kRegularLeg, kCentralSupport, kStarLeg,
             kArmHorizontalBar, kArmVerticalBar}},
    };
    return Template("chair", std::move(nodes), kChair, std::move(levels));
}

Template lamp_template() {
    using K = NodeKind;
    std::vector<TemplateNode> nodes{
        {kLamp, "lamp", K::And, {kLampBase, kLampBody, kLampShade}},
        {kLampBase, "lamp_base", K::Or, {kRoundBase, kLegBase}},
        {kLampBody, "lamp_body", K::And, {kPole}},
        {kLampShade, "lamp_shade", K::Leaf, {}},
        {kRoundBase, "round_base", K::Leaf, {}},
        {kLegBase, "leg_base", K::And, {kLampLeg}},
        {kPole, "pole", K::Leaf, {}},
        {kLampLeg, "leg", K::Leaf, {}},
    };
    std::map<int, std::vector<NodeId>> levels{
        {1, {kLampBase, kLampBody, kLampShade}},
        {3, {kLampShade, kRoundBase, kPole, kLampLeg}},
    };
    return Template("lamp", std::move(nodes), kLamp, std::move(levels));
}

// Distributions written out by hand so streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
    bool chance(double p) { return uniform() < p; }
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct Primitive {
    enum class Kind { Box, Cylinder, Tube } kind = Kind::Box;
    Vec3 lo{}, hi{};        // box extent
    Vec3 base{};            // cylinder bottom center (axis along +y)
    double radius = 0.0;
    double height = 0.0;

    static Primitive box(Vec3 lo, Vec3 hi) {
        Primitive p;
        p.kind = Kind::Box;
        for (int c = 0; c < 3; ++c) {
            p.lo[c] = std::min(lo[c], hi[c]);
            p.hi[c] = std::max(lo[c], hi[c]);
        }
        return p;
    }
    static Primitive box_centered(Vec3 center, Vec3 size) {
        return box({center[0] - size[0] / 2, center[1] - size[1] / 2, center[2] - size[2] / 2},
                   {center[0] + size[0] / 2, center[1] + size[1] / 2, center[2] + size[2] / 2});
    }
    static Primitive cylinder(Vec3 base, double radius, double height, bool capped = true) {
        Primitive p;
        p.kind = capped ? Kind::Cylinder : Kind::Tube;
        p.base = base;
        p.radius = radius;
        p.height = height;
        return p;
    }

    double area() const {
        if (kind == Kind::Box) {
            const double a = hi[0] - lo[0], b = hi[1] - lo[1], c = hi[2] - lo[2];
            return 2.0 * (a * b + a * c + b * c);
        }
        const double side = 2.0 * std::numbers::pi * radius * height;
        return kind == Kind::Tube ? side : side + 2.0 * std::numbers::pi * radius * radius;
    }

    Vec3 sample(Rng& rng) const {
        if (kind == Kind::Box) {
            const Vec3 size{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
            // Faces normal to x, y, z, weighted by area (each appears twice).
            const double ax = size[1] * size[2], ay = size[0] * size[2], az = size[0] * size[1];
            const double pick = rng.uniform() * (ax + ay + az);
            const int axis = pick < ax ? 0 : (pick < ax + ay ? 1 : 2);
            Vec3 p{};
            for (int c = 0; c < 3; ++c) p[c] = lo[c] + rng.uniform() * size[c];
            p[axis] = rng.chance(0.5) ? lo[axis] : hi[axis];
            return p;
        }
        const double side = 2.0 * std::numbers::pi * radius * height;
        const double cap = kind == Kind::Tube ? 0.0 : std::numbers::pi * radius * radius;
        const double pick = rng.uniform() * (side + 2.0 * cap);
        const double theta = 2.0 * std::numbers::pi * rng.uniform();
        if (pick < side) {
            return {base[0] + radius * std::cos(theta), base[1] + height * rng.uniform(),
                    base[2] + radius * std::sin(theta)};
        }
        const double r = radius * std::sqrt(rng.uniform());
        const double y = pick < side + cap ? base[1] : base[1] + height;
        return {base[0] + r * std::cos(theta), y, base[2] + r * std::sin(theta)};
    }
};

/// Accumulates the instance tree and the primitive behind each leaf in creation order,
/// which is also the depth-first leaf order because subtrees are built one at a time.
struct ShapeBuilder {
    std::vector<Primitive> primitives;

    InstanceNode& child(InstanceNode& parent, NodeId node) {
        parent.children.push_back(InstanceNode{node, {}, {}});
        return parent.children.back();
    }
    void leaf(InstanceNode& parent, NodeId node, const Primitive& prim) {
        child(parent, node);
        primitives.push_back(prim);
    }
};

InstanceNode build_chair(Rng& rng, ShapeBuilder& b) {
    const double w = rng.uniform(0.40, 0.60);
    const double d = rng.uniform(0.38, 0.55);
    const double seat_y = rng.uniform(0.38, 0.50);
    const double seat_t = rng.uniform(0.03, 0.06);
    const double back_h = rng.uniform(0.35, 0.55);
    const double surface_h = rng.uniform(0.10, 0.18);
    const double back_t = 0.03;
    const int bars = 2 + static_cast<int>(rng.below(2));
    const bool star_base = rng.chance(0.4);
    const bool arms = rng.chance(0.5);
    const double seat_top = seat_y + seat_t;

    InstanceNode root{kChair, {}, {}};

    {
        auto& back = b.child(root, kChairBack);
        const double top = seat_top + back_h;
        const double z0 = -d / 2;
        b.leaf(back, kBackSurface,
               Primitive::box({-w / 2, top - surface_h, z0}, {w / 2, top, z0 + back_t}));
        const double bar_w = 0.025;
        for (int i = 0; i < bars; ++i) {
            const double x = -w / 2 + (i + 1) * w / (bars + 1);
            b.leaf(back, kBackVerticalBar,
                   Primitive::box({x - bar_w / 2, seat_top, z0 + 0.002},
                                  {x + bar_w / 2, top - surface_h, z0 + 0.002 + bar_w}));
        }
    }

    b.leaf(root, kChairSeat, Primitive::box({-w / 2, seat_y, -d / 2}, {w / 2, seat_top, d / 2}));

    {
        auto& base = b.child(root, kChairBase);
        if (!star_base) {
            auto& regular = b.child(base, kRegularLegBase);
            const double leg = rng.uniform(0.035, 0.05);
            for (int sx : {-1, 1})
                for (int sz : {-1, 1}) {
                    const double x = sx * (w / 2 - leg / 2);
                    const double z = sz * (d / 2 - leg / 2);
                    b.leaf(regular, kRegularLeg,
                           Primitive::box({x - leg / 2, 0.0, z - leg / 2},
                                          {x + leg / 2, seat_y, z + leg / 2}));
                }
        } else {
            auto& star = b.child(base, kStarLegBase);
            const double foot_h = 0.05;
            b.leaf(star, kCentralSupport,
                   Primitive::cylinder({0.0, foot_h, 0.0}, rng.uniform(0.025, 0.035),
                                       seat_y - foot_h));
            const double reach = rng.uniform(0.24, 0.32);
            const double arm_w = 0.04;
            for (double sign : {1.0, -1.0}) {
                b.leaf(star, kStarLeg,
                       Primitive::box({0.0, 0.0, -arm_w / 2}, {sign * reach, foot_h, arm_w / 2}));
                b.leaf(star, kStarLeg,
                       Primitive::box({-arm_w / 2, 0.0, 0.0}, {arm_w / 2, foot_h, sign * reach}));
            }
        }
    }

    if (arms) {
        const double arm_h = rng.uniform(0.18, 0.25);
        const double t = 0.03;
        for (int side : {-1, 1}) {
            auto& arm = b.child(root, kChairArm);
            const double x = side * (w / 2 - t / 2);
            b.leaf(arm, kArmHorizontalBar,
                   Primitive::box({x - t / 2, seat_top + arm_h, -d / 2 + 0.05},
                                  {x + t / 2, seat_top + arm_h + 0.035, d / 2}));
            b.leaf(arm, kArmVerticalBar,
                   Primitive::box({x - t / 2, seat_top, d / 2 - 0.06},
                                  {x + t / 2, seat_top + arm_h, d / 2 - 0.03}));
        }
    }
    return root;
}

InstanceNode build_lamp(Rng& rng, ShapeBuilder& b) {
    const bool legs = rng.chance(0.5);
    const double base_top = rng.uniform(0.03, 0.06);
    const double pole_h = rng.uniform(0.45, 0.75);
    const double shade_r = rng.uniform(0.12, 0.18);
    const double shade_h = rng.uniform(0.15, 0.25);

    InstanceNode root{kLamp, {}, {}};
    {
        auto& base = b.child(root, kLampBase);
        if (!legs) {
            b.leaf(base, kRoundBase,
                   Primitive::cylinder({0.0, 0.0, 0.0}, rng.uniform(0.14, 0.2), base_top));
        } else {
            auto& leg_base = b.child(base, kLegBase);
            const double reach = rng.uniform(0.15, 0.22);
            const double t = 0.03;
            b.leaf(leg_base, kLampLeg, Primitive::box({0.0, 0.0, -t / 2}, {reach, base_top, t / 2}));
            b.leaf(leg_base, kLampLeg, Primitive::box({-reach, 0.0, -t / 2}, {0.0, base_top, t / 2}));
            b.leaf(leg_base, kLampLeg, Primitive::box({-t / 2, 0.0, 0.0}, {t / 2, base_top, reach}));
            b.leaf(leg_base, kLampLeg, Primitive::box({-t / 2, 0.0, -reach}, {t / 2, base_top, 0.0}));
        }
    }
    {
        auto& body = b.child(root, kLampBody);
        b.leaf(body, kPole, Primitive::cylinder({0.0, base_top, 0.0}, 0.015, pole_h));
    }
    b.leaf(root, kLampShade,
           Primitive::cylinder({0.0, base_top + pole_h - shade_h * 0.6, 0.0}, shade_r, shade_h,
                               false));
    return root;
}

void collect_leaves(InstanceNode& n, std::vector<InstanceNode*>& out) {
    if (n.children.empty()) out.push_back(&n);
    for (auto& c : n.children) collect_leaves(c, out);
}

/// Per-primitive point budget: a floor per part, the rest by largest-remainder over area.
std::vector<std::size_t> point_quotas(const std::vector<Primitive>& prims, std::size_t total) {
    const std::size_t parts = prims.size();
    const std::size_t floor_per_part = std::max<std::size_t>(1, std::min<std::size_t>(16, total / (2 * parts)));
    std::vector<std::size_t> quota(parts, floor_per_part);
    const std::size_t spare = total - floor_per_part * parts;
    double area_sum = 0.0;
    for (const auto& p : prims) area_sum += p.area();
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t given = 0;
    for (std::size_t i = 0; i < parts; ++i) {
        const double exact = static_cast<double>(spare) * prims[i].area() / area_sum;
        const auto whole = static_cast<std::size_t>(std::floor(exact));
        quota[i] += whole;
        given += whole;
        remainders.emplace_back(-(exact - static_cast<double>(whole)), i);
    }
    std::sort(remainders.begin(), remainders.end());
    for (std::size_t k = 0; given < spare; ++k, ++given) ++quota[remainders[k % parts].second];
    return quota;
}

}  // namespace

std::vector<std::string> synthetic_categories() { return {"chair", "lamp"}; }

Template builtin_template(std::string_view category) {
    if (category == "chair") return chair_template();
    if (category == "lamp") return lamp_template();
    throw InvalidArgument("unknown synthetic category '" + std::string(category) + "'");
}

SyntheticShape generate_synthetic(const SyntheticShapeSpec& spec) {
    if (spec.category != "chair" && spec.category != "lamp")
        throw InvalidArgument("unknown synthetic category '" + spec.category + "'");
    if (!(spec.jitter_sigma >= 0.0) || !std::isfinite(spec.jitter_sigma))
        throw InvalidArgument("jitter_sigma must be a finite non-negative value");

    Rng rng(spec.seed);
    ShapeBuilder builder;
    InstanceNode root = spec.category == "chair" ? build_chair(rng, builder) : build_lamp(rng, builder);
    const auto& prims = builder.primitives;
    if (spec.points_per_shape < prims.size())
        throw InvalidArgument("points_per_shape " + std::to_string(spec.points_per_shape) +
                              " is below the " + std::to_string(prims.size()) +
                              " primitives of this shape");

    std::vector<InstanceNode*> leaves;
    collect_leaves(root, leaves);
    const auto quotas = point_quotas(prims, spec.points_per_shape);

    // Oversample each primitive's surface, thin it with furthest point sampling.
    std::vector<double> xyz;
    std::vector<std::size_t> owner;
    xyz.reserve(spec.points_per_shape * 3);
    for (std::size_t i = 0; i < prims.size(); ++i) {
        std::vector<Vec3> candidates(quotas[i] * 4);
        for (auto& c : candidates) c = prims[i].sample(rng);
        const PointCloud pool("", candidates);
        for (std::size_t idx : furthest_point_sample(pool, quotas[i])) {
            const Vec3 p = pool.point(idx);
            xyz.insert(xyz.end(), p.begin(), p.end());
            owner.push_back(i);
        }
    }
    if (spec.jitter_sigma > 0.0)
        for (auto& v : xyz) v += spec.jitter_sigma * rng.normal();

    // Shuffle so point order carries no part information.
    const std::size_t n = owner.size();
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<double> shuffled(3 * n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t src = perm[pos];
        for (int c = 0; c < 3; ++c) shuffled[3 * pos + c] = xyz[3 * src + c];
        leaves[owner[src]]->point_indices.push_back(pos);
    }

    char id[64];
    std::snprintf(id, sizeof id, "%s_%016llx", spec.category.c_str(),
                  static_cast<unsigned long long>(spec.seed));
    SyntheticShape shape;
    shape.cloud = PointCloud(id, std::move(shuffled));
    shape.annotation.shape_id = id;
    shape.annotation.category = spec.category;
    shape.annotation.point_count = n;
    shape.annotation.root = std::move(root);
    return shape;
}

}  // namespace partseg
