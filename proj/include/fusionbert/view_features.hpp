#pragma once

// Deterministic stand-in for an image encoder: a coarse depth/shading/color
// descriptor of the cloud as seen from one direction, mixed to C dims by a
// fixed seeded Gaussian projection.

#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include "fusionbert/geometry.hpp"
#include "fusionbert/mvagg.hpp"
#include "fusionbert/tensor_file.hpp"

namespace fusionbert::views {

using geometry::PointCloud;
using geometry::Vec3;

inline constexpr std::size_t kGrid = 8;
inline constexpr std::size_t kRawDim = kGrid * kGrid * 3;
// Points whose normal makes n.v >= this with the viewing direction are hidden.
inline constexpr double kVisibleBelow = 0.2;

// Orthonormal frame whose third axis is the viewing direction.
inline std::array<Vec3, 3> view_frame(const Vec3& v) {
  const Vec3 helper = std::abs(v[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  const double hv = geometry::dot3(helper, v);
  Vec3 x{helper[0] - hv * v[0], helper[1] - hv * v[1], helper[2] - hv * v[2]};
  const double xn = geometry::norm3(x);
  for (auto& c : x) c /= xn;
  return {x, geometry::cross(v, x), v};
}

// 8x8 cells x (max height toward the camera, mean n.v, mean luminance).
// Empty cells stay zero.
inline std::vector<double> raw_view_descriptor(const PointCloud& pc, const Vec3& view_dir) {
  const double n = geometry::norm3(view_dir);
  if (!(n > 0)) throw DataError("view features: zero view direction");
  if (std::abs(n - 1.0) > 1e-5) throw DataError("view features: view direction must be unit length");
  const auto frame = view_frame(view_dir);
  const auto norm = geometry::normalize_cloud(pc);

  std::vector<double> depth(kGrid * kGrid, -1e300), shade(kGrid * kGrid, 0), lum(kGrid * kGrid, 0);
  std::vector<std::size_t> count(kGrid * kGrid, 0);
  for (const auto& p : norm.points) {
    const Vec3 pos{p[0], p[1], p[2]}, nrm{p[6], p[7], p[8]};
    const double nv = geometry::dot3(nrm, view_dir);
    if (!(nv < kVisibleBelow)) continue;
    const double u = (geometry::dot3(pos, frame[0]) + 1) / 2, w = (geometry::dot3(pos, frame[1]) + 1) / 2;
    const auto cell_of = [](double t) {
      return std::min(kGrid - 1, static_cast<std::size_t>(std::clamp(t, 0.0, 1.0) * kGrid));
    };
    const std::size_t c = cell_of(w) * kGrid + cell_of(u);
    depth[c] = std::max(depth[c], -geometry::dot3(pos, frame[2]));
    shade[c] += nv;
    lum[c] += 0.299 * p[3] + 0.587 * p[4] + 0.114 * p[5];
    ++count[c];
  }
  std::vector<double> raw(kRawDim, 0.0);
  for (std::size_t c = 0; c < kGrid * kGrid; ++c) {
    if (!count[c]) continue;
    raw[3 * c] = depth[c];
    raw[3 * c + 1] = shade[c] / static_cast<double>(count[c]);
    raw[3 * c + 2] = lum[c] / static_cast<double>(count[c]);
  }
  return raw;
}

class SyntheticViewProvider {
 public:
  SyntheticViewProvider(std::size_t dim, std::uint64_t seed) : dim_(dim), proj_({kRawDim, dim}) {
    if (!dim) throw DataError("view features: C must be >= 1");
    Rng rng(derive_seed(seed, "view-projection"));
    for (auto& v : proj_.data()) v = rng.normal();
  }

  std::vector<float> operator()(const PointCloud& pc, const Vec3& view_dir) const {
    const auto raw = raw_view_descriptor(pc, view_dir);
    std::vector<double> f(dim_, 0.0);
    for (std::size_t i = 0; i < kRawDim; ++i)
      if (raw[i] != 0)
        for (std::size_t j = 0; j < dim_; ++j) f[j] += raw[i] * proj_.at(i, j);
    double n = 0;
    for (auto v : f) n += v * v;
    n = std::sqrt(n);
    if (!(n > 0) || !std::isfinite(n)) throw NumericError("view features: degenerate descriptor");
    std::vector<float> out(dim_);
    for (std::size_t j = 0; j < dim_; ++j) out[j] = static_cast<float>(f[j] / n);
    return out;
  }

  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  Tensor<double> proj_;
};

inline std::vector<float> synthetic_view_features(const PointCloud& pc, const Vec3& view_dir, std::size_t C,
                                                  std::uint64_t seed) {
  return SyntheticViewProvider(C, seed)(pc, view_dir);
}

// Precomputed V x C features from an FBT1 file.
inline mvagg::MultiViewFeatures<float> load_view_features(const std::filesystem::path& p) {
  auto t = io::load_tensor<float>(p);
  if (t.rank() != 2)
    throw DataError(p.string() + ": view features must be a rank-2 V x C tensor, got " + dims_str(t.dims()));
  t.require_finite(p.string());
  return mvagg::MultiViewFeatures<float>(std::move(t));
}

}  // namespace fusionbert::views
