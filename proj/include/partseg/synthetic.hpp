#pragma once

// Procedural stand-ins for annotated CAD shapes: each category assembles axis-aligned
// boxes and cylinders whose instance tree follows the category's built-in template.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "partseg/annotation.hpp"
#include "partseg/geometry.hpp"
#include "partseg/template.hpp"

namespace partseg {

struct SyntheticShapeSpec {
    std::string category = "chair";
    std::uint64_t seed = 0;
    std::size_t points_per_shape = 1024;
    double jitter_sigma = 0.0;
};

struct SyntheticShape {
    PointCloud cloud;
    Annotation annotation;
};

std::vector<std::string> synthetic_categories();

/// Throws InvalidArgument for an unknown category.
Template builtin_template(std::string_view category);

/// Deterministic per spec. The shape id is "<category>_<seed as 16 hex digits>".
SyntheticShape generate_synthetic(const SyntheticShapeSpec& spec);

}  // namespace partseg
