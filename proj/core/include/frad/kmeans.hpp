#ifndef FRAD_KMEANS_HPP
#define FRAD_KMEANS_HPP

#include <cstdint>
#include <vector>

#include "frad/tensor.hpp"

namespace frad {

// Plain seeded Lloyd's algorithm. Used to derive frame pseudo-labels for
// the token-prediction pretraining objective.
struct KMeans {
  Tensor centroids;  // [k, d]
};

// points: [n, d]. Initialization picks k distinct points; an emptied
// cluster is reseeded to the point farthest from its assigned centroid.
// Throws std::invalid_argument when k < 1 or k > n.
KMeans kmeans_fit(const Tensor& points, int k, int iters, std::uint64_t seed);

// Nearest centroid per row (squared L2, ties to the lowest index).
std::vector<int> kmeans_assign(const KMeans& model, const Tensor& points);

}  // namespace frad

#endif
