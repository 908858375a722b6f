#pragma once

#include "vibus/scene_data.hpp"

#include <cstdint>
#include <vector>

namespace vibus {

/// Regular icosahedron inscribed in the unit sphere.
SceneMesh make_icosahedron();

/// Icosahedron subdivided `subdivisions` times and projected onto a sphere.
SceneMesh make_icosphere(int subdivisions, double radius = 1.0);

/// nx x ny vertex grid in the z = 0 plane with the given spacing.
SceneMesh make_grid(int nx, int ny, double spacing = 1.0);

/// Grid with every vertex displaced by up to `jitter` (relative to the
/// spacing) in x and y and by a random height in z.
SceneMesh make_random_mesh(std::uint64_t seed, int nx, int ny, double jitter = 0.25);

struct LabeledScene {
  SceneMesh mesh;
  std::vector<int> labels;  // dense ground truth
};

/// A floor and two walls meeting in a corner, as one connected mesh with
/// categories 0 (floor), 1 (wall x = 0), 2 (wall y = 0). Colors are noisy
/// per-plane tints; the extent varies with the seed.
LabeledScene make_three_plane_scene(std::uint64_t seed, int resolution = 16);

/// `count` distinct vertices drawn uniformly without replacement.
SparseLabelSet sample_sparse_labels(const std::vector<int>& dense, std::size_t count, std::uint64_t seed,
                                    int num_categories = kDefaultNumCategories);

}  // namespace vibus
