#include <CLI11.hpp>

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "fusionbert/config.hpp"
#include "fusionbert/pipeline.hpp"
#include "selftest.hpp"

namespace fb = fusionbert;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  fb::RunConfig load() const {
    fb::RunConfig c = config.empty() ? fb::RunConfig() : fb::load_config(config);
    if (seed) c.set_seed(*seed);
    return c;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "flat key = value run configuration");
  sub->add_option("--seed", c.seed, "override the configured seed");
}

std::vector<std::size_t> parse_list(const std::string& flag, const std::string& v) {
  try {
    return fb::parse_size_list(flag, v);
  } catch (const fb::Error& e) {
    throw fb::UsageError(std::string("--") + flag + ": expected a comma-separated list of integers");
  }
}

std::vector<fb::training::TripletSample> load_data(const std::string& dir) {
  return fb::data::load_dataset(fb::data::load_manifest(dir));
}

void print_rows(const std::vector<fb::pipeline::EvalRow>& rows) {
  std::cout << "views,K,recall\n" << std::fixed << std::setprecision(4);
  for (const auto& r : rows) std::cout << r.views << ',' << r.k << ',' << r.recall << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fusionbert: multi-view image to 3D shape retrieval"};
  app.require_subcommand(1);

  Common gen_c, train_c, e3_c, ev_c, idx_c, q_c, eval_c, st_c;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, gen_c);
  std::string gen_out;
  bool gen_textureless = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--textureless", gen_textureless, "write meshes without vertex colors");

  auto* train = app.add_subcommand("train", "run one training stage");
  add_common(train, train_c);
  int stage = 0;
  std::string train_data, train_out, train_init, train_log;
  train->add_option("--stage", stage, "1 or 2")->required()->check(CLI::IsMember({1, 2}));
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint to write")->required();
  train->add_option("--init", train_init, "stage-1 checkpoint (stage 2 only)");
  train->add_option("--log", train_log, "append step,stage,loss,tau lines to this CSV");

  auto* e3 = app.add_subcommand("embed-3d", "embed meshes into the joint space");
  add_common(e3, e3_c);
  std::string e3_ckpt, e3_mesh, e3_data, e3_out;
  e3->add_option("--ckpt", e3_ckpt, "checkpoint")->required();
  auto* e3_src = e3->add_option_group("source");
  e3_src->add_option("--mesh", e3_mesh, "single OBJ file");
  e3_src->add_option("--data", e3_data, "dataset directory (all objects, manifest order)");
  e3_src->require_option(1);
  e3->add_option("--out", e3_out, "FBT1 output, one row per object")->required();

  auto* ev = app.add_subcommand("embed-views", "fuse view features into one embedding");
  add_common(ev, ev_c);
  std::string ev_ckpt, ev_views, ev_out;
  bool ev_mean = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--views", ev_views, "FBT1 V x C view features")->required();
  ev->add_option("--out", ev_out, "FBT1 output [1, C]")->required();
  ev->add_flag("--mean-pool", ev_mean, "use the mean-pool baseline instead of the aggregator");

  auto* idx = app.add_subcommand("build-index", "embed a dataset and write an FBIX index");
  add_common(idx, idx_c);
  std::string idx_ckpt, idx_data, idx_out;
  idx->add_option("--ckpt", idx_ckpt, "checkpoint")->required();
  idx->add_option("--data", idx_data, "dataset directory")->required();
  idx->add_option("--out", idx_out, "index file")->required();

  auto* q = app.add_subcommand("query", "top-K search of an index");
  add_common(q, q_c);
  std::string q_index, q_emb;
  std::size_t q_k = 5;
  q->add_option("--index", q_index, "index file")->required();
  q->add_option("--embedding", q_emb, "FBT1 query embedding [1, d] or [d]")->required();
  q->add_option("--topk", q_k, "K")->required();

  auto* ev_all = app.add_subcommand("eval", "Recall@K of fused view queries against the 3D index");
  add_common(ev_all, eval_c);
  std::string eval_ckpt, eval_data, eval_index, eval_views, eval_ks;
  bool eval_mean = false;
  ev_all->add_option("--ckpt", eval_ckpt, "checkpoint")->required();
  ev_all->add_option("--data", eval_data, "dataset directory")->required();
  ev_all->add_option("--index", eval_index, "prebuilt index (default: embed the dataset)");
  ev_all->add_option("--views", eval_views, "view counts, e.g. 1,3,6");
  ev_all->add_option("--ks", eval_ks, "K values, e.g. 1,3,5,10");
  ev_all->add_flag("--mean-pool", eval_mean, "use the mean-pool baseline instead of the aggregator");

  auto* st = app.add_subcommand("selftest", "run the built-in oracle and property checks");
  add_common(st, st_c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      auto cfg = gen_c.load();
      if (gen_textureless) cfg.data.textureless = true;
      const auto m = fb::data::generate_synthetic_dataset(cfg.data, gen_out);
      std::cout << "wrote " << m.entries.size() << " objects to " << gen_out << '\n';
    } else if (train->parsed()) {
      const auto cfg = train_c.load();
      const auto data = load_data(train_data);
      std::ofstream log_file;
      if (!train_log.empty()) {
        log_file.open(train_log, std::ios::app);
        if (!log_file) throw fb::DataError("cannot open log " + train_log);
      }
      std::ostream* log = train_log.empty() ? nullptr : &log_file;
      std::unique_ptr<fb::FusionModel<float>> model;
      fb::training::TrainReport rep;
      const auto t0 = std::chrono::steady_clock::now();
      if (stage == 1) {
        if (!train_init.empty()) throw fb::UsageError("--init is only valid with --stage 2");
        model = fb::FusionModel<float>::create(cfg.model, cfg.seed);
        rep = fb::training::train_stage1(*model, data, cfg.stage1, log);
      } else {
        if (train_init.empty()) throw fb::UsageError("--stage 2 requires --init <stage-1 checkpoint>");
        model = fb::FusionModel<float>::load(cfg.model, train_init);
        rep = fb::training::train_stage2(*model, data, cfg.stage2, log);
      }
      model->save(train_out);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::cout << "stage " << stage << ": " << rep.log.size() << " steps, first loss " << rep.log.front().loss
                << ", last loss " << rep.log.back().loss << ", tau " << rep.log.back().tau << ", " << std::fixed
                << std::setprecision(1) << secs << " s\n";
    } else if (e3->parsed()) {
      const auto cfg = e3_c.load();
      const auto model = fb::FusionModel<float>::load(cfg.model, e3_ckpt);
      std::vector<fb::geometry::PointCloud> clouds;
      if (!e3_mesh.empty()) {
        clouds.push_back(fb::geometry::sample_surface(fb::geometry::load_obj(fb::io::read_text(e3_mesh)),
                                                      cfg.data.points, fb::derive_seed(cfg.seed, "embed-3d")));
      } else {
        for (auto& s : load_data(e3_data)) clouds.push_back(std::move(s.point_cloud));
      }
      const std::size_t d = cfg.model.encoder.joint_dim;
      fb::Tensor<float> out({clouds.size(), d});
      for (std::size_t i = 0; i < clouds.size(); ++i) {
        const auto e = fb::training::visual_embedding(model->encoder(),
                                                      fb::encoder3d::prepare_patches(clouds[i], cfg.model.encoder));
        std::copy(e.begin(), e.end(), out.row(i).begin());
      }
      fb::io::save_tensor(e3_out, out);
    } else if (ev->parsed()) {
      const auto cfg = ev_c.load();
      const auto model = fb::FusionModel<float>::load(cfg.model, ev_ckpt);
      const auto views = fb::views::load_view_features(ev_views);
      const auto f = fb::pipeline::fuse_views(*model, views.X,
                                              ev_mean ? fb::pipeline::Pooling::Mean : fb::pipeline::Pooling::Aggregator);
      fb::io::save_tensor(ev_out, fb::Tensor<float>({1, f.size()}, f));
    } else if (idx->parsed()) {
      const auto cfg = idx_c.load();
      const auto model = fb::FusionModel<float>::load(cfg.model, idx_ckpt);
      const auto index = fb::retrieval::build_index(fb::pipeline::embed_shapes(*model, load_data(idx_data)));
      fb::retrieval::save_index(idx_out, index);
      std::cout << "indexed " << index.size() << " objects (d=" << index.dim() << ")\n";
    } else if (q->parsed()) {
      const auto index = fb::retrieval::load_index(q_index);
      const auto t = fb::io::load_tensor<float>(q_emb);
      if (t.rank() > 2 || (t.rank() == 2 && t.rows() != 1))
        throw fb::DataError(q_emb + ": expected a single embedding, got " + fb::dims_str(t.dims()));
      t.require_finite(q_emb);
      std::cout << "rank,id,score\n" << std::fixed << std::setprecision(6);
      const auto res = fb::retrieval::query_topk(index, t.data(), q_k);
      for (std::size_t i = 0; i < res.size(); ++i) std::cout << i + 1 << ',' << res[i].id << ',' << res[i].score << '\n';
    } else if (ev_all->parsed()) {
      auto cfg = eval_c.load();
      if (!eval_views.empty()) cfg.eval_views = parse_list("views", eval_views);
      if (!eval_ks.empty()) cfg.eval_ks = parse_list("ks", eval_ks);
      const auto model = fb::FusionModel<float>::load(cfg.model, eval_ckpt);
      const auto data = load_data(eval_data);
      const auto index = eval_index.empty() ? fb::retrieval::build_index(fb::pipeline::embed_shapes(*model, data))
                                            : fb::retrieval::load_index(eval_index);
      print_rows(fb::pipeline::evaluate(*model, data, index, cfg.eval_views, cfg.eval_ks, cfg.seed,
                                        eval_mean ? fb::pipeline::Pooling::Mean : fb::pipeline::Pooling::Aggregator));
    } else if (st->parsed()) {
      const auto cfg = st_c.load();
      const int failed = fb::selftest::run(cfg.seed, std::cout);
      if (failed) {
        std::cerr << "error: " << failed << " selftest check(s) failed\n";
        return 2;
      }
    }
  } catch (const fb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
