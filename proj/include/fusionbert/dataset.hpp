#pragma once

// Procedural desk-scale corpus: six mesh families with per-object seeded
// deformations and class color schemes, quasi-uniform view directions, and
// per-view synthetic image features.
//
// Layout:
//   <root>/manifest.txt
//   <root>/<id>/mesh.obj
//   <root>/<id>/view_dirs.fbt   V x 3 viewing directions
//   <root>/<id>/views/<k>.fbt   1 x C feature of view k
//   <root>/<id>/text.fbt        C-vector class text feature (optional)

#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "fusionbert/training.hpp"
#include "fusionbert/view_features.hpp"

namespace fusionbert::data {

namespace fs = std::filesystem;
using geometry::MeshModel;
using geometry::Vec3;

inline const std::vector<std::string>& family_names() {
  static const std::vector<std::string> names{"box", "ellipsoid", "cylinder", "cone", "torus", "lbracket"};
  return names;
}

struct DatasetOptions {
  std::size_t objects = 64;
  std::size_t classes = 6;
  std::size_t views = 12;
  std::size_t points = 2048;
  std::size_t feature_dim = 64;
  bool text = true;
  bool textureless = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (classes < 1 || classes > family_names().size())
      throw DataError("dataset: classes must be in [1, " + std::to_string(family_names().size()) + "]");
    if (objects < classes) throw DataError("dataset: need objects >= classes");
    if (!views) throw DataError("dataset: views must be >= 1");
    if (!points) throw DataError("dataset: points must be >= 1");
    if (!feature_dim) throw DataError("dataset: feature_dim must be >= 1");
  }
};

struct ManifestEntry {
  std::string object_id;
  std::string label;
  std::size_t views = 0;
  bool has_text = false;

  fs::path mesh(const fs::path& root) const { return root / object_id / "mesh.obj"; }
  fs::path view_dirs(const fs::path& root) const { return root / object_id / "view_dirs.fbt"; }
  fs::path view(const fs::path& root, std::size_t k) const {
    return root / object_id / "views" / (std::to_string(k) + ".fbt");
  }
  fs::path text(const fs::path& root) const { return root / object_id / "text.fbt"; }
};

struct DatasetManifest {
  fs::path root;
  std::uint64_t seed = 0;
  std::size_t points = 0;
  std::size_t feature_dim = 0;
  bool textureless = false;
  std::vector<ManifestEntry> entries;
};

namespace detail {

struct MeshBuilder {
  MeshModel mesh;

  std::uint32_t vertex(const Vec3& p) {
    mesh.vertices.push_back(p);
    return static_cast<std::uint32_t>(mesh.vertices.size() - 1);
  }

  // Adds a triangle wound so its normal points away from `inside`.
  void tri(std::uint32_t a, std::uint32_t b, std::uint32_t c, const Vec3& inside) {
    const auto& A = mesh.vertices[a];
    const Vec3 n = geometry::cross(geometry::sub(mesh.vertices[b], A), geometry::sub(mesh.vertices[c], A));
    if (geometry::norm3(n) < 1e-12) return;
    const Vec3 centroid{(A[0] + mesh.vertices[b][0] + mesh.vertices[c][0]) / 3,
                        (A[1] + mesh.vertices[b][1] + mesh.vertices[c][1]) / 3,
                        (A[2] + mesh.vertices[b][2] + mesh.vertices[c][2]) / 3};
    if (geometry::dot3(n, geometry::sub(centroid, inside)) < 0) std::swap(b, c);
    mesh.faces.push_back({a, b, c});
  }

  void quad(std::uint32_t a, std::uint32_t b, std::uint32_t c, std::uint32_t d, const Vec3& inside) {
    tri(a, b, c, inside);
    tri(a, c, d, inside);
  }

  void box(const Vec3& lo, const Vec3& hi) {
    const Vec3 mid{(lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2};
    std::uint32_t v[8];
    for (int i = 0; i < 8; ++i)
      v[i] = vertex({i & 1 ? hi[0] : lo[0], i & 2 ? hi[1] : lo[1], i & 4 ? hi[2] : lo[2]});
    quad(v[0], v[1], v[3], v[2], mid);
    quad(v[4], v[5], v[7], v[6], mid);
    quad(v[0], v[1], v[5], v[4], mid);
    quad(v[2], v[3], v[7], v[6], mid);
    quad(v[0], v[2], v[6], v[4], mid);
    quad(v[1], v[3], v[7], v[5], mid);
  }

  // Surface of revolution about z: radius(t) at height z(t), t in [0,1],
  // closed with a fan at each end whose radius is nonzero.
  void revolve(const std::function<double(double)>& radius, const std::function<double(double)>& height,
               std::size_t rings, std::size_t segs) {
    std::vector<std::vector<std::uint32_t>> ring(rings + 1);
    for (std::size_t r = 0; r <= rings; ++r) {
      const double t = double(r) / rings, rad = radius(t), z = height(t);
      for (std::size_t s = 0; s < segs; ++s) {
        const double a = 2 * std::numbers::pi * s / segs;
        ring[r].push_back(vertex({rad * std::cos(a), rad * std::sin(a), z}));
      }
    }
    for (std::size_t r = 0; r < rings; ++r) {
      const Vec3 inside{0, 0, (height(double(r) / rings) + height(double(r + 1) / rings)) / 2};
      for (std::size_t s = 0; s < segs; ++s) {
        const std::size_t s1 = (s + 1) % segs;
        tri(ring[r][s], ring[r][s1], ring[r + 1][s1], inside);
        tri(ring[r][s], ring[r + 1][s1], ring[r + 1][s], inside);
      }
    }
    for (std::size_t end : {std::size_t{0}, rings}) {
      if (radius(double(end) / rings) < 1e-9) continue;
      const double z = height(double(end) / rings);
      const double other = height(end == 0 ? 1.0 : 0.0);
      const auto c = vertex({0, 0, z});
      const Vec3 inside{0, 0, z + (other - z) * 0.5};
      for (std::size_t s = 0; s < segs; ++s) tri(c, ring[end][s], ring[end][(s + 1) % segs], inside);
    }
  }

  void torus(double R, double r, std::size_t segs, std::size_t tube) {
    std::vector<std::vector<std::uint32_t>> v(segs);
    for (std::size_t i = 0; i < segs; ++i) {
      const double a = 2 * std::numbers::pi * i / segs;
      for (std::size_t j = 0; j < tube; ++j) {
        const double b = 2 * std::numbers::pi * j / tube;
        const double w = R + r * std::cos(b);
        v[i].push_back(vertex({w * std::cos(a), w * std::sin(a), r * std::sin(b)}));
      }
    }
    for (std::size_t i = 0; i < segs; ++i) {
      const std::size_t i1 = (i + 1) % segs;
      const double a = 2 * std::numbers::pi * (i + 0.5) / segs;
      const Vec3 core{R * std::cos(a), R * std::sin(a), 0};
      for (std::size_t j = 0; j < tube; ++j) {
        const std::size_t j1 = (j + 1) % tube;
        quad(v[i][j], v[i1][j], v[i1][j1], v[i][j1], core);
      }
    }
  }
};

inline MeshModel family_mesh(std::size_t family, Rng& rng) {
  MeshBuilder b;
  switch (family) {
    case 0:
      b.box({-rng.uniform(0.4, 1.0), -rng.uniform(0.4, 1.0), -rng.uniform(0.4, 1.0)},
            {rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0), rng.uniform(0.4, 1.0)});
      break;
    case 1: {
      const double bulge = rng.uniform(-0.3, 0.3);
      b.revolve([bulge](double t) { return std::sin(std::numbers::pi * t) * (1 + bulge * (t - 0.5)); },
                [](double t) { return -std::cos(std::numbers::pi * t); }, 12, 20);
      break;
    }
    case 2: {
      const double h = rng.uniform(0.6, 1.6), taper = rng.uniform(0.7, 1.0);
      b.revolve([taper](double t) { return 1 - (1 - taper) * t; }, [h](double t) { return h * (t - 0.5) * 2; },
                4, 20);
      break;
    }
    case 3: {
      const double h = rng.uniform(1.0, 2.2), tip = rng.uniform(0.0, 0.25);
      b.revolve([tip](double t) { return 1 - (1 - tip) * t; }, [h](double t) { return h * (t - 0.5); }, 4, 20);
      break;
    }
    case 4:
      b.torus(1.0, rng.uniform(0.2, 0.45), 24, 12);
      break;
    default: {
      const double arm = rng.uniform(1.0, 2.0), leg = rng.uniform(1.0, 2.0), t = rng.uniform(0.25, 0.5),
                   w = rng.uniform(0.4, 1.0);
      b.box({0, 0, -w}, {arm, t, w});
      b.box({0, t, -w}, {t, leg, w});
      break;
    }
  }
  return b.mesh;
}

inline Vec3 class_color(std::size_t family) {
  static const Vec3 colors[] = {{0.85, 0.25, 0.2}, {0.2, 0.6, 0.85}, {0.3, 0.75, 0.3},
                                {0.9, 0.75, 0.2}, {0.6, 0.3, 0.75}, {0.9, 0.5, 0.15}};
  return colors[family % 6];
}

// Anisotropic scale, tilt and spin, then a height-graded class color with a
// per-object tint.
inline void deform_and_color(MeshModel& m, std::size_t family, Rng& rng) {
  const Vec3 s{rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3), rng.uniform(0.7, 1.3)};
  const double tilt = rng.uniform(-0.35, 0.35), spin = rng.uniform(0, 2 * std::numbers::pi);
  const double ct = std::cos(tilt), st = std::sin(tilt), cs = std::cos(spin), ss = std::sin(spin);
  double zmin = 1e300, zmax = -1e300;
  for (auto& v : m.vertices) {
    const Vec3 a{v[0] * s[0], v[1] * s[1], v[2] * s[2]};
    const Vec3 b{a[0], ct * a[1] - st * a[2], st * a[1] + ct * a[2]};
    v = {cs * b[0] - ss * b[1], ss * b[0] + cs * b[1], b[2]};
    zmin = std::min(zmin, v[2]);
    zmax = std::max(zmax, v[2]);
  }
  const Vec3 base = class_color(family);
  const Vec3 tint{rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15)};
  const double grade = rng.uniform(0.2, 0.6);
  m.colors.clear();
  for (const auto& v : m.vertices) {
    const double h = zmax > zmin ? (v[2] - zmin) / (zmax - zmin) : 0.5;
    Vec3 c;
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(base[k] * (1 - grade + grade * h) + tint[k], 0.0, 1.0);
    m.colors.push_back(c);
  }
}

}  // namespace detail

// Fibonacci lattice under a seeded random rotation; each entry is the
// direction the camera looks along (toward the object).
inline std::vector<Vec3> view_directions(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  double q[4];
  double qn = 0;
  for (auto& c : q) {
    c = rng.normal();
    qn += c * c;
  }
  qn = std::sqrt(qn);
  for (auto& c : q) c /= qn;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  const double R[3][3] = {{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                          {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                          {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
  const double golden = std::numbers::pi * (3 - std::sqrt(5.0));
  std::vector<Vec3> out;
  for (std::size_t k = 0; k < n; ++k) {
    const double zz = 1 - 2 * (k + 0.5) / n, r = std::sqrt(1 - zz * zz), a = golden * k;
    const Vec3 p{r * std::cos(a), r * std::sin(a), zz};
    Vec3 d;
    for (int i = 0; i < 3; ++i) d[i] = -(R[i][0] * p[0] + R[i][1] * p[1] + R[i][2] * p[2]);
    const double dn = geometry::norm3(d);
    for (auto& c : d) c /= dn;
    out.push_back(d);
  }
  return out;
}

inline std::vector<float> text_feature(const std::string& label, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "text/" + label));
  std::vector<double> v(dim);
  double n = 0;
  for (auto& x : v) {
    x = rng.normal();
    n += x * x;
  }
  n = std::sqrt(n);
  std::vector<float> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

inline std::string object_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "obj_%04zu", i);
  return buf;
}

inline std::uint64_t cloud_seed(std::uint64_t seed, const std::string& id) { return derive_seed(seed, id + "/cloud"); }

// The colored mesh of object i; identical geometry whether or not the
// dataset is textureless.
inline MeshModel generate_mesh(std::size_t i, std::size_t classes, std::uint64_t seed) {
  const std::size_t family = i % classes;
  Rng rng(derive_seed(seed, object_id(i) + "/mesh"));
  auto m = detail::family_mesh(family, rng);
  detail::deform_and_color(m, family, rng);
  return m;
}

inline std::string manifest_text(const DatasetManifest& m) {
  std::ostringstream os;
  os << "fusionbert-dataset 1\n"
     << "seed " << m.seed << "\npoints " << m.points << "\nfeature_dim " << m.feature_dim << "\ntextureless "
     << (m.textureless ? 1 : 0) << '\n';
  for (const auto& e : m.entries)
    os << "object " << e.object_id << ' ' << e.label << ' ' << e.views << ' ' << (e.has_text ? 1 : 0) << '\n';
  return os.str();
}

inline DatasetManifest generate_synthetic_dataset(const DatasetOptions& opt, const fs::path& out_dir) {
  opt.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw DataError("gen-data: cannot create " + out_dir.string());
  DatasetManifest man{out_dir, opt.seed, opt.points, opt.feature_dim, opt.textureless, {}};
  const views::SyntheticViewProvider provider(opt.feature_dim, opt.seed);
  for (std::size_t i = 0; i < opt.objects; ++i) {
    const auto id = object_id(i);
    const auto label = family_names()[i % opt.classes];
    ManifestEntry e{id, label, opt.views, opt.text};
    fs::create_directories(out_dir / id / "views");
    auto mesh = generate_mesh(i, opt.classes, opt.seed);
    // Views always see the colored object; only the 3D asset loses color.
    const auto cloud = geometry::sample_surface(mesh, opt.points, cloud_seed(opt.seed, id));
    const auto dirs = view_directions(opt.views, derive_seed(opt.seed, id + "/views"));
    Tensor<float> dir_t({opt.views, 3});
    for (std::size_t k = 0; k < opt.views; ++k) {
      for (int c = 0; c < 3; ++c) dir_t.at(k, c) = static_cast<float>(dirs[k][c]);
      const Tensor<float> f({1, opt.feature_dim}, provider(cloud, dirs[k]));
      io::save_tensor(e.view(out_dir, k), f);
    }
    io::save_tensor(e.view_dirs(out_dir), dir_t);
    if (opt.textureless) mesh.colors.clear();
    io::write_text(e.mesh(out_dir), geometry::write_obj(mesh));
    if (opt.text) io::save_tensor(e.text(out_dir), Tensor<float>::vector(text_feature(label, opt.feature_dim, opt.seed)));
    man.entries.push_back(e);
  }
  io::write_text(out_dir / "manifest.txt", manifest_text(man));
  return man;
}

inline DatasetManifest load_manifest(const fs::path& root) {
  const auto path = root / "manifest.txt";
  std::istringstream in(io::read_text(path));
  DatasetManifest m;
  m.root = root;
  std::string line, key;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw DataError(path.string() + " line " + std::to_string(line_no) + ": " + why);
  };
  std::unordered_set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ls >> key;
    if (line_no == 1) {
      int version = 0;
      if (key != "fusionbert-dataset" || !(ls >> version) || version != 1) fail("not a dataset manifest");
      continue;
    }
    if (key == "seed") {
      ls >> m.seed;
    } else if (key == "points") {
      ls >> m.points;
    } else if (key == "feature_dim") {
      ls >> m.feature_dim;
    } else if (key == "textureless") {
      int f = 0;
      ls >> f;
      m.textureless = f != 0;
    } else if (key == "object") {
      ManifestEntry e;
      int text = 0;
      if (!(ls >> e.object_id >> e.label >> e.views >> text)) fail("malformed object entry");
      e.has_text = text != 0;
      if (!e.views) fail("object " + e.object_id + " has no views");
      if (!ids.insert(e.object_id).second) fail("duplicate object id " + e.object_id);
      m.entries.push_back(std::move(e));
      continue;
    } else {
      fail("unknown key '" + key + "'");
    }
    if (ls.fail()) fail("malformed value for " + key);
  }
  if (line_no == 0) throw DataError(path.string() + ": empty manifest");
  if (m.entries.empty()) throw DataError(path.string() + ": no objects");
  if (!m.points || !m.feature_dim) throw DataError(path.string() + ": missing points or feature_dim");
  for (const auto& e : m.entries) {
    std::vector<fs::path> need{e.mesh(root)};
    for (std::size_t k = 0; k < e.views; ++k) need.push_back(e.view(root, k));
    if (e.has_text) need.push_back(e.text(root));
    for (const auto& p : need)
      if (!fs::exists(p)) throw DataError("dataset: missing file " + p.string());
  }
  return m;
}

inline mvagg::MultiViewFeatures<float> load_object_views(const DatasetManifest& m, const ManifestEntry& e) {
  Tensor<float> X({e.views, m.feature_dim});
  for (std::size_t k = 0; k < e.views; ++k) {
    const auto row = views::load_view_features(e.view(m.root, k));
    if (row.views() != 1 || row.dim() != m.feature_dim)
      throw DataError(e.view(m.root, k).string() + ": expected 1 x " + std::to_string(m.feature_dim) +
                      " view feature, got " + dims_str(row.X.dims()));
    std::copy(row.X.data().begin(), row.X.data().end(), X.row(k).begin());
  }
  return mvagg::MultiViewFeatures<float>(std::move(X));
}

inline training::TripletSample load_sample(const DatasetManifest& m, const ManifestEntry& e) {
  const auto mesh = geometry::load_obj(io::read_text(e.mesh(m.root)));
  training::TripletSample s{e.object_id, load_object_views(m, e), std::nullopt,
                            geometry::sample_surface(mesh, m.points, cloud_seed(m.seed, e.object_id))};
  if (e.has_text) {
    auto t = io::load_tensor<float>(e.text(m.root));
    if (t.rank() != 1 || t.size() != m.feature_dim)
      throw DataError(e.text(m.root).string() + ": expected a " + std::to_string(m.feature_dim) + "-vector");
    t.require_finite(e.text(m.root).string());
    s.text_feature = t.data();
  }
  return s;
}

inline std::vector<training::TripletSample> load_dataset(const DatasetManifest& m) {
  std::vector<training::TripletSample> out;
  for (const auto& e : m.entries) out.push_back(load_sample(m, e));
  return out;
}

}  // namespace fusionbert::data
