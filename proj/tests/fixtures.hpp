#pragma once

#include "hfdtm/dataio.hpp"

#include <random>
#include <string>

namespace hfdtm::testing {

/// K intersections with `per` movements each; the first movement of each
/// intersection is a corridor through and the last of intersection 0 is
/// structurally zero when `with_zero` is set.
inline CorridorTopology small_topology(std::size_t k, std::size_t per, bool with_zero = true) {
  CorridorTopology t;
  t.n_movements = k * per;
  for (std::size_t g = 0; g < k; ++g) {
    t.groups.emplace_back();
    t.group_names.push_back("I" + std::to_string(g + 1));
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t i = g * per + j;
      t.movement_ids.push_back("I" + std::to_string(g + 1) + ":M" + std::to_string(j));
      t.groups.back().push_back(i);
      const bool zero = with_zero && g == 0 && j == per - 1 && per > 1;
      t.zero_mask.push_back(zero ? 0.0 : 1.0);
      if (!zero) t.active_idx.push_back(i);
      if (j == 0) t.corridor_idx.push_back(i);
    }
  }
  t.validate();
  return t;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

inline Batch random_batch(std::mt19937_64& rng, std::size_t b, std::size_t t, std::size_t n) {
  Batch batch;
  for (std::size_t s = 0; s < t; ++s) {
    batch.steps.push_back(random_matrix(rng, static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n), 0.5));
  }
  batch.target = random_matrix(rng, static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(n), 0.5);
  std::uniform_int_distribution<std::size_t> hour(0, 23);
  for (std::size_t i = 0; i < b; ++i) batch.hours.push_back(hour(rng));
  return batch;
}

}  // namespace hfdtm::testing
