#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "fusionbert/config.hpp"
#include "fusionbert/dataset.hpp"

using namespace fusionbert;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("fusionbert_test_" + name)) {
    fs::remove_all(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

data::DatasetOptions small_options(std::uint64_t seed = 3) {
  data::DatasetOptions o;
  o.objects = 6;
  o.classes = 6;
  o.views = 3;
  o.points = 256;
  o.feature_dim = 16;
  o.seed = seed;
  return o;
}

std::map<std::string, std::vector<unsigned char>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<unsigned char>> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = io::read_file(e.path());
  return out;
}

double norm(const std::vector<float>& v) {
  double s = 0;
  for (auto x : v) s += double(x) * x;
  return std::sqrt(s);
}

geometry::PointCloud plane_cloud(float normal_z) {
  geometry::PointCloud pc;
  for (int i = 0; i < 4; ++i) {
    geometry::Point p{};
    p[0] = i % 2 ? 0.5f : -0.5f;
    p[1] = i / 2 ? 0.5f : -0.5f;
    p[3] = p[4] = p[5] = 1.0f;
    p[8] = normal_z;
    pc.points.push_back(p);
  }
  return pc;
}

}  // namespace

TEST(SyntheticDataset, GenerationIsByteIdentical) {
  TempDir a("gen_a"), b("gen_b");
  data::generate_synthetic_dataset(small_options(), a.path());
  data::generate_synthetic_dataset(small_options(), b.path());
  const auto ta = tree_bytes(a.path()), tb = tree_bytes(b.path());
  EXPECT_EQ(ta.size(), 1u + 6u * (1 + 1 + 3 + 1));
  EXPECT_EQ(ta, tb);
}

TEST(SyntheticDataset, SeedChangesContent) {
  TempDir a("seed_a"), b("seed_b");
  data::generate_synthetic_dataset(small_options(3), a.path());
  data::generate_synthetic_dataset(small_options(4), b.path());
  EXPECT_NE(io::read_file(a.path() / "obj_0000" / "mesh.obj"), io::read_file(b.path() / "obj_0000" / "mesh.obj"));
}

TEST(SyntheticDataset, LoadsWithExpectedShapes) {
  TempDir d("load");
  data::generate_synthetic_dataset(small_options(), d.path());
  const auto m = data::load_manifest(d.path());
  ASSERT_EQ(m.entries.size(), 6u);
  EXPECT_EQ(m.entries[0].object_id, "obj_0000");
  EXPECT_EQ(m.entries[2].label, "cylinder");
  const auto samples = data::load_dataset(m);
  for (const auto& s : samples) {
    EXPECT_EQ(s.view_features.views(), 3u);
    EXPECT_EQ(s.view_features.dim(), 16u);
    EXPECT_EQ(s.point_cloud.points.size(), 256u);
    for (std::size_t v = 0; v < 3; ++v) {
      std::vector<float> row(s.view_features.X.row(v).begin(), s.view_features.X.row(v).end());
      EXPECT_NEAR(norm(row), 1.0, 1e-5);
    }
    ASSERT_TRUE(s.text_feature.has_value());
    EXPECT_NEAR(norm(*s.text_feature), 1.0, 1e-5);
  }
  EXPECT_EQ(*samples[0].text_feature, data::text_feature("box", 16, 3));
}

TEST(SyntheticDataset, MeshesAreClosedOutwardSurfaces) {
  for (std::size_t i = 0; i < 6; ++i) {
    const auto mesh = geometry::load_obj(geometry::write_obj(data::generate_mesh(i, 6, 9)));
    ASSERT_FALSE(mesh.faces.empty());
    EXPECT_EQ(mesh.colors.size(), mesh.vertices.size());
    const auto pc = geometry::sample_surface(mesh, 4000, 10);
    geometry::Vec3 c{0, 0, 0};
    for (const auto& p : pc.points)
      for (int k = 0; k < 3; ++k) c[k] += p[k] / 4000.0;
    // Outward normals make the divergence-theorem volume positive.
    double flux = 0;
    for (const auto& p : pc.points)
      for (int k = 0; k < 3; ++k) flux += (p[k] - c[k]) * p[6 + k];
    EXPECT_GT(flux, 0) << data::family_names()[i];
  }
}

TEST(SyntheticDataset, TexturelessKeepsGeometryAndViews) {
  TempDir c("colored"), t("textureless");
  auto opt = small_options();
  data::generate_synthetic_dataset(opt, c.path());
  opt.textureless = true;
  data::generate_synthetic_dataset(opt, t.path());
  const auto sc = data::load_dataset(data::load_manifest(c.path()));
  const auto mt = data::load_manifest(t.path());
  EXPECT_TRUE(mt.textureless);
  const auto st = data::load_dataset(mt);
  for (std::size_t i = 0; i < sc.size(); ++i) {
    EXPECT_EQ(sc[i].view_features.X.data(), st[i].view_features.X.data());
    ASSERT_EQ(sc[i].point_cloud.points.size(), st[i].point_cloud.points.size());
    for (std::size_t p = 0; p < st[i].point_cloud.points.size(); ++p) {
      const auto& a = sc[i].point_cloud.points[p];
      const auto& b = st[i].point_cloud.points[p];
      for (int k : {0, 1, 2, 6, 7, 8}) ASSERT_EQ(a[k], b[k]);
      for (int k : {3, 4, 5}) ASSERT_FLOAT_EQ(b[k], 0.8f);
    }
  }
}

TEST(SyntheticDataset, ViewDirectionsAreDistinctUnitVectors) {
  const auto dirs = data::view_directions(12, 5);
  ASSERT_EQ(dirs.size(), 12u);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    EXPECT_NEAR(geometry::norm3(dirs[i]), 1.0, 1e-12);
    for (std::size_t j = 0; j < i; ++j) EXPECT_LT(geometry::dot3(dirs[i], dirs[j]), 0.99);
  }
  EXPECT_EQ(dirs, data::view_directions(12, 5));
  EXPECT_NE(dirs, data::view_directions(12, 6));
}

TEST(SyntheticDataset, OptionErrors) {
  TempDir d("opt_err");
  auto o = small_options();
  o.classes = 7;
  EXPECT_THROW(data::generate_synthetic_dataset(o, d.path()), DataError);
  o = small_options();
  o.objects = 3;
  EXPECT_THROW(data::generate_synthetic_dataset(o, d.path()), DataError);
  o = small_options();
  o.views = 0;
  EXPECT_THROW(data::generate_synthetic_dataset(o, d.path()), DataError);
}

TEST(Manifest, RejectsMalformedOrIncompleteDatasets) {
  TempDir d("manifest");
  data::generate_synthetic_dataset(small_options(), d.path());
  const auto manifest = d.path() / "manifest.txt";
  const auto good = io::read_text(manifest);
  auto expect_bad = [&](const std::string& text) {
    io::write_text(manifest, text);
    EXPECT_THROW(data::load_manifest(d.path()), DataError) << text;
  };
  expect_bad("");
  expect_bad("not-a-dataset 1\n" + good.substr(good.find('\n') + 1));
  expect_bad(good + "colour red\n");
  expect_bad(good + "object obj_0000 box 3 1\n");
  expect_bad(good + "object obj_0099 box\n");
  io::write_text(manifest, good);
  fs::remove(d.path() / "obj_0003" / "views" / "2.fbt");
  EXPECT_THROW(data::load_manifest(d.path()), DataError);
  EXPECT_THROW(data::load_manifest(d.path() / "missing"), Error);
}

TEST(ViewFeatures, DeterministicUnitAndDirectionSensitive) {
  const auto pc = geometry::sample_surface(data::generate_mesh(1, 6, 2), 1024, 3);
  const views::SyntheticViewProvider p(32, 4);
  const auto a = p(pc, {0, 0, 1}), b = p(pc, {0, 0, 1}), c = p(pc, {1, 0, 0});
  EXPECT_EQ(a, b);
  EXPECT_NEAR(norm(a), 1.0, 1e-6);
  EXPECT_NE(a, c);
  EXPECT_EQ(a, views::synthetic_view_features(pc, {0, 0, 1}, 32, 4));
  EXPECT_NE(a, views::synthetic_view_features(pc, {0, 0, 1}, 32, 5));
}

TEST(ViewFeatures, RawDescriptorCellsAndVisibility) {
  // Four unit-colored points facing a camera that looks down -z.
  const auto raw = views::raw_view_descriptor(plane_cloud(1.0f), {0, 0, -1});
  std::size_t filled = 0;
  for (std::size_t c = 0; c < views::kGrid * views::kGrid; ++c) {
    if (raw[3 * c] == 0 && raw[3 * c + 1] == 0 && raw[3 * c + 2] == 0) continue;
    ++filled;
    EXPECT_DOUBLE_EQ(raw[3 * c + 1], -1.0);
    EXPECT_NEAR(raw[3 * c + 2], 1.0, 1e-6);
  }
  EXPECT_EQ(filled, 4u);
  const auto hidden = views::raw_view_descriptor(plane_cloud(-1.0f), {0, 0, -1});
  for (auto v : hidden) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(views::SyntheticViewProvider(8, 1)(plane_cloud(-1.0f), {0, 0, -1}), NumericError);
}

TEST(ViewFeatures, InputErrors) {
  const auto pc = plane_cloud(1.0f);
  EXPECT_THROW(views::raw_view_descriptor(pc, {0, 0, 0}), DataError);
  EXPECT_THROW(views::raw_view_descriptor(pc, {0, 0, 2}), DataError);
  EXPECT_THROW(views::SyntheticViewProvider(0, 1), DataError);

  TempDir d("vf");
  fs::create_directories(d.path());
  io::save_tensor(d.path() / "r1.fbt", Tensor<float>::vector({1, 2, 3}));
  EXPECT_THROW(views::load_view_features(d.path() / "r1.fbt"), DataError);
  io::save_tensor(d.path() / "nan.fbt", Tensor<float>({2, 2}, std::vector<float>{1, 0, NAN, 1}));
  try {
    views::load_view_features(d.path() / "nan.fbt");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1 col 0"), std::string::npos) << e.what();
  }
  io::save_tensor(d.path() / "ok.fbt", Tensor<float>({2, 2}, std::vector<float>{1, 0, 0, 1}));
  EXPECT_EQ(views::load_view_features(d.path() / "ok.fbt").views(), 2u);
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config(
      "# run\n"
      "seed = 17\n"
      "stage1.epochs = 5   # short\n"
      "stage2.lr = 0.01\n"
      "data.textureless = true\n"
      "eval.views = 1, 3\n");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.data.seed, 17u);
  EXPECT_EQ(c.stage1.seed, 17u);
  EXPECT_EQ(c.stage2.seed, 17u);
  EXPECT_EQ(c.stage1.epochs, 5u);
  EXPECT_DOUBLE_EQ(c.stage2.lr, 0.01);
  EXPECT_TRUE(c.data.textureless);
  EXPECT_EQ(c.eval_views, (std::vector<std::size_t>{1, 3}));
  EXPECT_EQ(c.stage1.stage, 1);
  EXPECT_EQ(c.stage2.stage, 2);
  EXPECT_EQ(c.model.describe(), ModelConfig::desk().describe());
}

TEST(Config, PaperShapeProfileAppliedFirst) {
  const auto c = parse_config("encoder.layers = 2\nprofile = paper-shape\n");
  EXPECT_EQ(c.model.encoder.layers, 2u);
  EXPECT_EQ(c.model.encoder.hidden, 512u);
  EXPECT_EQ(c.model.encoder.joint_dim, 1280u);
  EXPECT_EQ(c.model.aggregator.feature_dim, 1280u);
  EXPECT_EQ(c.data.feature_dim, 1280u);
}

TEST(Config, ErrorsAreUsageErrors) {
  for (const char* bad : {"stage1.epoch = 3\n", "seed = 1\nseed = 2\n", "seed = -1\n", "stage1.lr = fast\n",
                          "data.text = maybe\n", "just a line\n", " = 3\n", "profile = huge\n",
                          "data.classes = 9\n", "stage1.tau_init = 5\n", "eval.ks = \n",
                          "encoder.joint_dim = 32\n"}) {
    EXPECT_THROW(parse_config(bad), UsageError) << bad;
  }
  EXPECT_THROW(load_config("/nonexistent/run.cfg"), UsageError);
}
