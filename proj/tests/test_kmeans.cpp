#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "frad/kmeans.hpp"
#include "frad/rng.hpp"
#include "frad/tensor.hpp"

using namespace frad;

namespace {

// Three well-separated 2-d blobs, 20 points each.
Tensor blob_points(std::uint64_t seed) {
  const double centers[3][2] = {{0.0, 0.0}, {10.0, 0.0}, {0.0, 10.0}};
  Rng rng(seed);
  Tensor pts = Tensor::zeros({60, 2});
  for (int i = 0; i < 60; ++i) {
    pts.at(i, 0) = centers[i / 20][0] + 0.3 * rng.normal();
    pts.at(i, 1) = centers[i / 20][1] + 0.3 * rng.normal();
  }
  return pts;
}

}  // namespace

TEST_CASE("recovers well-separated blobs") {
  const Tensor pts = blob_points(11);
  const KMeans km = kmeans_fit(pts, 3, 25, 99);
  const auto labels = kmeans_assign(km, pts);

  // Each blob lands in a single cluster and every centroid sits near a
  // blob center.
  for (int b = 0; b < 3; ++b) {
    for (int i = 1; i < 20; ++i) CHECK(labels[b * 20 + i] == labels[b * 20]);
  }
  CHECK(labels[0] != labels[20]);
  CHECK(labels[20] != labels[40]);
  CHECK(labels[0] != labels[40]);
  for (int b = 0; b < 3; ++b) {
    const int c = labels[b * 20];
    double cx = 0.0, cy = 0.0;
    for (int i = 0; i < 20; ++i) {
      cx += pts.at(b * 20 + i, 0) / 20.0;
      cy += pts.at(b * 20 + i, 1) / 20.0;
    }
    CHECK(km.centroids.at(c, 0) == doctest::Approx(cx).epsilon(1e-9));
    CHECK(km.centroids.at(c, 1) == doctest::Approx(cy).epsilon(1e-9));
  }
}

TEST_CASE("k equal to n makes every point its own centroid") {
  Tensor pts = Tensor::matrix(4, 1, {0.0, 1.0, 5.0, 9.0});
  const KMeans km = kmeans_fit(pts, 4, 5, 3);
  const auto labels = kmeans_assign(km, pts);
  for (int i = 0; i < 4; ++i) {
    CHECK(km.centroids.at(labels[i], 0) == doctest::Approx(pts.at(i, 0)).epsilon(1e-12));
  }
}

TEST_CASE("cluster count is validated") {
  Tensor pts = Tensor::matrix(3, 1, {0.0, 1.0, 2.0});
  CHECK_THROWS_AS(kmeans_fit(pts, 0, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(kmeans_fit(pts, 4, 5, 1), std::invalid_argument);
}

TEST_CASE("same seed reproduces the fit exactly") {
  const Tensor pts = blob_points(5);
  const KMeans a = kmeans_fit(pts, 3, 10, 123);
  const KMeans b = kmeans_fit(pts, 3, 10, 123);
  CHECK(a.centroids.data == b.centroids.data);
}

TEST_CASE("assignment breaks ties toward the lower centroid index") {
  KMeans km;
  km.centroids = Tensor::matrix(2, 1, {0.0, 2.0});
  const auto labels = kmeans_assign(km, Tensor::matrix(1, 1, {1.0}));
  CHECK(labels[0] == 0);
}

TEST_CASE("assignment rejects mismatched feature width") {
  KMeans km;
  km.centroids = Tensor::matrix(2, 2, {0.0, 0.0, 1.0, 1.0});
  CHECK_THROWS_AS(kmeans_assign(km, Tensor::matrix(1, 3, {0.0, 0.0, 0.0})), ShapeError);
}

TEST_CASE("degenerate duplicated points do not break the fit") {
  // Everything identical: clusters empty out, reseeding must stay finite.
  Tensor pts = Tensor::zeros({50, 2});
  const KMeans km = kmeans_fit(pts, 3, 10, 7);
  CHECK(km.centroids.rows() == 3);
  CHECK(km.centroids.all_finite());
}
