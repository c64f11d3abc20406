#pragma once

// Mesh ingestion and point-set geometry: OBJ loading, area-weighted surface
// sampling with face normals, normalization, farthest point sampling and
// kNN patch grouping.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fusionbert/error.hpp"
#include "fusionbert/rng.hpp"
#include "fusionbert/tensor.hpp"

namespace fusionbert::geometry {

using Vec3 = std::array<double, 3>;

inline Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

/// Gray fill for meshes without per-vertex color.
inline constexpr float kTexturelessGray = 0.8f;

struct MeshModel {
  std::vector<Vec3> vertices;
  std::vector<Vec3> colors;  // empty, or one RGB per vertex in [0,1]
  std::vector<std::array<std::uint32_t, 3>> faces;

  bool has_colors() const { return !colors.empty(); }

  double face_area(std::size_t f) const {
    const auto& [a, b, c] = faces[f];
    return 0.5 * norm3(cross(sub(vertices[b], vertices[a]), sub(vertices[c], vertices[a])));
  }
};

// One point: [x, y, z, R, G, B, Nx, Ny, Nz].
using Point = std::array<float, 9>;

struct PointCloud {
  std::vector<Point> points;

  std::size_t size() const { return points.size(); }

  template <typename T>
  Tensor<T> to_tensor() const {
    Tensor<T> t({points.size(), 9});
    for (std::size_t i = 0; i < points.size(); ++i)
      for (std::size_t j = 0; j < 9; ++j) t.at(i, j) = static_cast<T>(points[i][j]);
    return t;
  }

  template <typename T>
  static PointCloud from_tensor(const Tensor<T>& t) {
    if (t.rank() != 2 || t.cols() != 9)
      throw DataError("point cloud: expected N x 9 tensor, got " + dims_str(t.dims()));
    t.require_finite("point cloud");
    PointCloud pc;
    pc.points.resize(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < 9; ++j) pc.points[i][j] = static_cast<float>(t.at(i, j));
    return pc;
  }
};

// P patches of N' points each. Member positions are relative to the patch
// center; the center's absolute position is kept for positional embedding.
struct PatchSet {
  std::size_t patch_size = 0;
  std::vector<std::size_t> centers;
  std::vector<std::array<float, 3>> center_positions;
  std::vector<std::size_t> members;  // P * N' point indices, patch-major
  std::vector<Point> rows;           // P * N' rows, positions re-centered

  std::size_t count() const { return centers.size(); }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_double(std::string_view tok, std::size_t line) {
  double v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || !std::isfinite(v))
    throw DataError("obj line " + std::to_string(line) + ": bad number '" + std::string(tok) + "'");
  return v;
}

// Resolves "i", "i/t", "i//n", "i/t/n" (1-based, negative = relative).
inline std::uint32_t parse_face_index(std::string_view tok, std::size_t nverts, std::size_t line) {
  tok = tok.substr(0, tok.find('/'));
  long long v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || p != tok.data() + tok.size() || v == 0)
    throw DataError("obj line " + std::to_string(line) + ": bad face index '" + std::string(tok) + "'");
  const long long idx = v > 0 ? v - 1 : static_cast<long long>(nverts) + v;
  if (idx < 0 || idx >= static_cast<long long>(nverts))
    throw DataError("obj line " + std::to_string(line) + ": face index " + std::to_string(v) +
                    " out of range");
  return static_cast<std::uint32_t>(idx);
}

}  // namespace detail

// Parses `v x y z [r g b]` and `f` records; polygons are fan-triangulated.
// Texture coordinates, vertex normals and grouping records are ignored.
inline MeshModel load_obj(std::string_view text) {
  MeshModel mesh;
  std::vector<std::vector<std::uint32_t>> polys;
  std::optional<bool> colored;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos)
      line = detail::trim(line.substr(0, hash));
    if (line.empty()) continue;
    const auto tok = detail::split_ws(line);
    const auto& kw = tok[0];
    if (kw == "v") {
      if (tok.size() != 4 && tok.size() != 7)
        throw DataError("obj line " + std::to_string(line_no) + ": vertex needs 3 or 6 numbers");
      const bool has_rgb = tok.size() == 7;
      if (colored && *colored != has_rgb)
        throw DataError("obj line " + std::to_string(line_no) + ": inconsistent vertex colors");
      colored = has_rgb;
      mesh.vertices.push_back({detail::parse_double(tok[1], line_no),
                               detail::parse_double(tok[2], line_no),
                               detail::parse_double(tok[3], line_no)});
      if (has_rgb) {
        Vec3 c{detail::parse_double(tok[4], line_no), detail::parse_double(tok[5], line_no),
               detail::parse_double(tok[6], line_no)};
        for (double x : c)
          if (x < 0.0 || x > 1.0)
            throw DataError("obj line " + std::to_string(line_no) + ": color outside [0,1]");
        mesh.colors.push_back(c);
      }
    } else if (kw == "f") {
      if (tok.size() < 4)
        throw DataError("obj line " + std::to_string(line_no) + ": face needs >= 3 vertices");
      std::vector<std::uint32_t> poly;
      for (std::size_t i = 1; i < tok.size(); ++i)
        poly.push_back(detail::parse_face_index(tok[i], mesh.vertices.size(), line_no));
      polys.push_back(std::move(poly));
    } else if (kw == "vn" || kw == "vt" || kw == "vp" || kw == "o" || kw == "g" || kw == "s" ||
               kw == "usemtl" || kw == "mtllib" || kw == "l") {
      continue;
    } else {
      throw DataError("obj line " + std::to_string(line_no) + ": unknown record '" +
                      std::string(kw) + "'");
    }
  }
  for (const auto& poly : polys) {
    for (std::size_t i = 1; i + 1 < poly.size(); ++i) {
      mesh.faces.push_back({poly[0], poly[i], poly[i + 1]});
      if (!(mesh.face_area(mesh.faces.size() - 1) > 0.0)) mesh.faces.pop_back();
    }
  }
  if (mesh.faces.empty()) throw DataError("obj: no valid (non-degenerate) faces");
  return mesh;
}

inline std::string write_obj(const MeshModel& mesh) {
  std::ostringstream os;
  os.precision(9);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const auto& v = mesh.vertices[i];
    os << "v " << v[0] << ' ' << v[1] << ' ' << v[2];
    if (mesh.has_colors()) {
      const auto& c = mesh.colors[i];
      os << ' ' << c[0] << ' ' << c[1] << ' ' << c[2];
    }
    os << '\n';
  }
  for (const auto& f : mesh.faces) os << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
  return os.str();
}

struct SurfaceSample {
  PointCloud cloud;
  std::vector<std::uint32_t> face_of_point;
};

// Area-weighted uniform surface sampling. Each point inherits the unit normal
// of its face (orientation from winding order) and barycentric vertex color,
// or the gray fill when the mesh carries no color.
inline SurfaceSample sample_surface_detailed(const MeshModel& mesh, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw DataError("sample_surface: N must be >= 1");
  if (mesh.has_colors() && mesh.colors.size() != mesh.vertices.size())
    throw DataError("sample_surface: color count does not match vertex count");
  std::vector<double> cdf(mesh.faces.size());
  std::vector<Vec3> normals(mesh.faces.size());
  double total = 0;
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    for (auto vi : mesh.faces[f])
      if (vi >= mesh.vertices.size()) throw DataError("sample_surface: face index out of range");
    const auto& [a, b, c] = mesh.faces[f];
    Vec3 nrm = cross(sub(mesh.vertices[b], mesh.vertices[a]), sub(mesh.vertices[c], mesh.vertices[a]));
    const double len = norm3(nrm);
    if (len > 0) nrm = {nrm[0] / len, nrm[1] / len, nrm[2] / len};
    normals[f] = nrm;
    total += 0.5 * len;
    cdf[f] = total;
  }
  if (!(total > 0)) throw DataError("sample_surface: all faces are degenerate");

  Rng rng(seed);
  SurfaceSample out;
  out.cloud.points.resize(n);
  out.face_of_point.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    std::size_t f = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    f = std::min(f, cdf.size() - 1);
    // Rounding can push u to the total; never land on a zero-area tail face.
    while (f > 0 && cdf[f] == cdf[f - 1]) --f;
    const double r1 = std::sqrt(rng.uniform()), r2 = rng.uniform();
    const double wa = 1 - r1, wb = r1 * (1 - r2), wc = r1 * r2;
    const auto& [a, b, c] = mesh.faces[f];
    auto& p = out.cloud.points[i];
    for (int k = 0; k < 3; ++k) {
      p[k] = static_cast<float>(wa * mesh.vertices[a][k] + wb * mesh.vertices[b][k] +
                                wc * mesh.vertices[c][k]);
      p[3 + k] = mesh.has_colors()
                     ? static_cast<float>(wa * mesh.colors[a][k] + wb * mesh.colors[b][k] +
                                          wc * mesh.colors[c][k])
                     : kTexturelessGray;
      p[6 + k] = static_cast<float>(normals[f][k]);
    }
    for (int k = 3; k < 6; ++k) p[k] = std::clamp(p[k], 0.0f, 1.0f);
    out.face_of_point[i] = static_cast<std::uint32_t>(f);
  }
  return out;
}

inline PointCloud sample_surface(const MeshModel& mesh, std::size_t n, std::uint64_t seed) {
  return sample_surface_detailed(mesh, n, seed).cloud;
}

// Centers positions at the centroid and scales the farthest point to radius 1.
inline PointCloud normalize_cloud(PointCloud pc) {
  if (pc.points.empty()) throw DataError("normalize_cloud: empty cloud");
  Vec3 c{0, 0, 0};
  for (const auto& p : pc.points)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (auto& v : c) v /= static_cast<double>(pc.points.size());
  double r = 0;
  for (const auto& p : pc.points) r = std::max(r, norm3({p[0] - c[0], p[1] - c[1], p[2] - c[2]}));
  const double s = r > 0 ? 1.0 / r : 1.0;
  for (auto& p : pc.points)
    for (int k = 0; k < 3; ++k) p[k] = static_cast<float>((p[k] - c[k]) * s);
  return pc;
}

inline double sq_dist(const Point& a, const Point& b) {
  const double dx = double(a[0]) - b[0], dy = double(a[1]) - b[1], dz = double(a[2]) - b[2];
  return dx * dx + dy * dy + dz * dz;
}

// Greedy farthest point sampling over positions. Ties go to the lowest index.
inline std::vector<std::size_t> farthest_point_sample(const PointCloud& pc, std::size_t count,
                                                      std::size_t start = 0) {
  const std::size_t n = pc.size();
  if (count < 1 || count > n)
    throw DataError("farthest_point_sample: need 1 <= P <= N (P=" + std::to_string(count) +
                    ", N=" + std::to_string(n) + ")");
  if (start >= n) throw DataError("farthest_point_sample: start index out of range");
  std::vector<double> min_d(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> out{start};
  out.reserve(count);
  std::size_t last = start;
  while (out.size() < count) {
    std::size_t best = 0;
    double best_d = -1;
    for (std::size_t i = 0; i < n; ++i) {
      min_d[i] = std::min(min_d[i], sq_dist(pc.points[i], pc.points[last]));
      if (min_d[i] > best_d) {
        best_d = min_d[i];
        best = i;
      }
    }
    out.push_back(best);
    last = best;
  }
  return out;
}

// For each center, its `patch_size` nearest points by position (ties by index).
inline PatchSet knn_group(const PointCloud& pc, const std::vector<std::size_t>& centers,
                          std::size_t patch_size) {
  const std::size_t n = pc.size();
  if (patch_size < 1 || patch_size > n)
    throw DataError("knn_group: need 1 <= N' <= N (N'=" + std::to_string(patch_size) +
                    ", N=" + std::to_string(n) + ")");
  PatchSet ps;
  ps.patch_size = patch_size;
  ps.centers = centers;
  ps.members.reserve(centers.size() * patch_size);
  ps.rows.reserve(centers.size() * patch_size);
  std::vector<std::pair<double, std::size_t>> d(n);
  for (auto c : centers) {
    if (c >= n) throw DataError("knn_group: center index out of range");
    const auto& cp = pc.points[c];
    for (std::size_t i = 0; i < n; ++i) d[i] = {sq_dist(pc.points[i], cp), i};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(patch_size), d.end());
    ps.center_positions.push_back({cp[0], cp[1], cp[2]});
    for (std::size_t k = 0; k < patch_size; ++k) {
      const auto idx = d[k].second;
      ps.members.push_back(idx);
      Point row = pc.points[idx];
      for (int j = 0; j < 3; ++j) row[j] = row[j] - cp[j];
      ps.rows.push_back(row);
    }
  }
  return ps;
}

}  // namespace fusionbert::geometry
