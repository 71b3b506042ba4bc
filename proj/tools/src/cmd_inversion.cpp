#include <fstream>

#include "cli_common.hpp"
#include "npath/image_io.hpp"
#include "npath/pathways.hpp"
#include "npath/topics.hpp"

namespace npath::cli {
namespace {

void write_energy(RunManifest& m, const InversionResult& r) {
  std::ofstream out(m.output("energy.csv"));
  write_energy_csv(out, r);
  out.close();
  m.add_output("energy.csv");
}

void write_summary(RunManifest& m, const std::vector<std::pair<std::string, std::string>>& rows) {
  std::ofstream out(m.output("summary.csv"));
  out << "metric,value\n";
  for (const auto& [k, v] : rows) out << k << ',' << v << '\n';
  out.close();
  m.add_output("summary.csv");
}

std::filesystem::path stats_path_for(const std::string& db, const std::string& explicit_path) {
  if (!explicit_path.empty()) return explicit_path;
  return std::filesystem::path(db).parent_path() / "db_stats.csv";
}

struct InvertOptions {
  InversionConfig config;
  std::string weights, image, layer = "pool5", init = "mean-noise", permutation = "1,2,0", db, db_stats;
  int k = 10;
};

void register_invert(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<InvertOptions>();
  Command& cmd = add_command(commands, root, "invert", "Reconstruct an image from its features at one layer");
  cmd.app->add_option("--weights", o->weights)->required();
  cmd.app->add_option("--image", o->image, "source P6 image whose features are inverted")->required();
  cmd.app->add_option("--layer", o->layer, "pool5, fc6, fc7, fc8 or a layer index");
  cmd.app->add_option("--init", o->init, "starting image")
      ->check(CLI::IsMember({"mean", "mean-noise", "source", "shuffled", "retrieval"}));
  cmd.app->add_option("--permutation", o->permutation, "channel order for --init shuffled");
  cmd.app->add_option("--db", o->db, "feature patch database (retrieval init, patch prior)");
  cmd.app->add_option("--db-stats", o->db_stats, "typical image statistics; default db_stats.csv next to --db");
  cmd.app->add_option("--k", o->k, "neighbours per pool5 location for retrieval init");
  add_inversion_options(cmd.app, o->config);
  cmd.run = [o](RunManifest& m) {
    const LoadedNetwork net = load_network(o->weights, m);
    const Tensor source = read_ppm(o->image);
    m.add_input(o->image);
    check(source.shape() == net.spec.input, "invert: image shape does not match the network input");
    const Tensor x0 = whiten(source, net.weights.input_stats);
    const std::size_t layer = resolve_layer(net.spec, o->layer);
    const Tensor phi0 = forward(net.weights, net.spec, x0, nullptr, layer).activations[layer];

    InversionConfig c = o->config;
    c.seed = m.seed;
    std::optional<PatchDatabase> db;
    if (!o->db.empty()) {
      db = load_patch_database(o->db);
      m.add_input(o->db);
    }
    check(c.r_gamma == 0.0 || db, "invert: --r-gamma > 0 needs --db");
    InversionResult result;
    if (o->init == "retrieval") {
      check(db.has_value(), "invert: --init retrieval needs --db");
      check(layer == net.spec.topology().pool5, "invert: --init retrieval works on pool5 features only");
      const auto stats_path = stats_path_for(o->db, o->db_stats);
      const ChannelStats typical = read_stats_csv(stats_path);
      m.add_input(stats_path);
      PriorInversion p = invert_with_prior(phi0, net.weights, net.spec, c, *db, typical, o->k);
      write_ppm(m.output("init.ppm"), to_display(p.init.image, net.weights.input_stats));
      m.add_output("init.ppm");
      result = std::move(p.run);
    } else {
      const std::map<std::string, InitMode> modes{{"mean", InitMode::mean},
                                                  {"mean-noise", InitMode::mean_noise},
                                                  {"source", InitMode::given_image},
                                                  {"shuffled", InitMode::channel_shuffled}};
      c.init_mode = modes.at(o->init);
      c.channel_permutation = parse_permutation(o->permutation);
      result = invert(FeatureObjective{layer, phi0}, net.weights, net.spec, c, db ? &*db : nullptr, {&x0, nullptr});
    }
    const Tensor shown = to_display(result.image, net.weights.input_stats);
    write_ppm(m.output("inverted.ppm"), shown);
    m.add_output("inverted.ppm");
    write_energy(m, result);
    write_summary(m, {{"layer", std::to_string(layer)},
                      {"iterations", std::to_string(result.energy_trace.size())},
                      {"final_feature_error", format_double(result.final_feature_error)},
                      {"relative_l2", format_double(relative_l2(source, shown))}});
  };
}

struct ClassvizOptions {
  InversionConfig config;
  std::string weights, init = "mean-noise", window, window_mask, topic_model, hash, hash_image,
      hash_level = "m7", db;
  int target = -1, topic_index = -1;
  double tau = 0.1;
  bool dropout = false;
  double dropout_rate = 0.5;
};

MaskSet build_pathway(const ClassvizOptions& o, const LoadedNetwork& net, RunManifest& m) {
  const Topology topo = net.spec.topology();
  const Shape& p5 = topo.output_shapes[topo.pool5];
  const bool hashed = !o.hash.empty() || !o.hash_image.empty();
  check(o.hash.empty() || o.hash_image.empty(), "classviz: give either --hash or --hash-image");
  check(!hashed || (o.window.empty() && o.window_mask.empty() && o.topic_model.empty() && !o.dropout),
        "classviz: a hash code fixes every mask; it cannot be combined with window, topic or dropout masks");
  check(o.window.empty() || o.window_mask.empty(), "classviz: give either --window or --window-mask");
  check(o.topic_model.empty() || !o.dropout, "classviz: topic and dropout masks both set m7");
  check(o.topic_model.empty() == (o.topic_index < 0), "classviz: --topic-model and --topic-index go together");

  if (!o.hash.empty()) {
    m.add_input(o.hash);
    return load_hash(o.hash).masks;
  }
  if (!o.hash_image.empty()) {
    const Tensor img = read_ppm(o.hash_image);
    m.add_input(o.hash_image);
    const HashCode h = capture_hash(whiten(img, net.weights.input_stats), net.weights, net.spec,
                                    parse_hash_level(o.hash_level));
    save_hash(m.output("hash.nphc"), h);
    m.add_output("hash.nphc");
    return h.masks;
  }
  MaskSet ms;
  if (!o.window.empty()) {
    const SpatialMask w = parse_window(o.window, static_cast<int>(p5[1]), static_cast<int>(p5[2]));
    ms = spatial_mask_to_maskset(w, static_cast<int>(p5[0]));
  } else if (!o.window_mask.empty()) {
    const Tensor grid = read_pgm_mask(o.window_mask);
    m.add_input(o.window_mask);
    check(grid.dim(0) == p5[1] && grid.dim(1) == p5[2], "classviz: --window-mask must match the pool5 grid");
    Tensor m5(p5);
    const std::size_t plane = p5[1] * p5[2];
    for (std::size_t c = 0; c < p5[0]; ++c)
      for (std::size_t i = 0; i < plane; ++i) m5[c * plane + i] = grid[i];
    ms.impose(MaskSite::m5, std::move(m5));
  }
  if (o.dropout) {
    const MaskSet d = sample_dropout_maskset(m.seed, o.dropout_rate, net.spec);
    ms.impose(MaskSite::m6, d.get(MaskSite::m6));
    ms.impose(MaskSite::m7, d.get(MaskSite::m7));
  }
  if (!o.topic_model.empty()) {
    const TopicModel tm = load_topic_model(o.topic_model);
    m.add_input(o.topic_model);
    check(o.topic_index < tm.topics(), "classviz: --topic-index out of range");
    const Eigen::VectorXd b = tm.basis.row(o.topic_index).transpose();
    ms.impose(MaskSite::m7, topic_mask(std::vector<double>(b.data(), b.data() + b.size()), o.tau).get(MaskSite::m7));
  }
  return ms;
}

void register_classviz(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<ClassvizOptions>();
  Command& cmd = add_command(commands, root, "classviz", "Visualize a class, optionally through a chosen neural pathway");
  cmd.app->add_option("--weights", o->weights)->required();
  cmd.app->add_option("--class", o->target)->required();
  cmd.app->add_option("--init", o->init)->check(CLI::IsMember({"mean", "mean-noise"}));
  cmd.app->add_option("--window", o->window, "open pool5 window r0,c0,k or r0,c0,kr,kc");
  cmd.app->add_option("--window-mask", o->window_mask, "P5 mask over the pool5 grid");
  cmd.app->add_option("--topic-model", o->topic_model, "fitted topic model; its topic selects m7");
  cmd.app->add_option("--topic-index", o->topic_index);
  cmd.app->add_option("--tau", o->tau, "relative threshold turning a topic into an m7 mask");
  cmd.app->add_flag("--dropout", o->dropout, "sample one m6/m7 pair from --seed");
  cmd.app->add_option("--dropout-rate", o->dropout_rate);
  cmd.app->add_option("--hash", o->hash, "hash code file fixing the masks");
  cmd.app->add_option("--hash-image", o->hash_image, "capture the hash code of this P6 image");
  cmd.app->add_option("--hash-level", o->hash_level)->check(CLI::IsMember({"m7", "m6-7", "m5-7"}));
  cmd.app->add_option("--db", o->db, "class patch database for the patch prior");
  add_inversion_options(cmd.app, o->config);
  cmd.run = [o](RunManifest& m) {
    const LoadedNetwork net = load_network(o->weights, m);
    check(o->target >= 0 && o->target < net.spec.class_count, "classviz: --class out of range");
    const MaskSet pathway = build_pathway(*o, net, m);
    InversionConfig c = o->config;
    c.seed = m.seed;
    c.init_mode = o->init == "mean" ? InitMode::mean : InitMode::mean_noise;
    std::optional<PatchDatabase> db;
    if (!o->db.empty()) {
      db = load_patch_database(o->db);
      m.add_input(o->db);
    }
    check(c.r_gamma == 0.0 || db, "classviz: --r-gamma > 0 needs --db");
    const InversionResult r =
        invert(ClassObjective{o->target, pathway}, net.weights, net.spec, c, db ? &*db : nullptr);
    write_ppm(m.output("classviz.ppm"), to_display(r.image, net.weights.input_stats));
    m.add_output("classviz.ppm");
    write_energy(m, r);
    const Tensor logits = forward(net.weights, net.spec, r.image).logits;
    write_summary(m, {{"class", std::to_string(o->target)},
                      {"pathway_score", format_double(data_score_class(r.image, net.weights, net.spec, o->target, &pathway).energy)},
                      {"logit", format_double(logits[static_cast<std::size_t>(o->target)])}});
  };
}

struct EvalOptions {
  InversionConfig config;
  std::string reference, estimate, weights, data, db, db_stats;
  int count = 20, k = 10;
  double prior_r_gamma = 1e-4;
};

void eval_pairs(const EvalOptions& o, RunManifest& m) {
  const Dataset ref = load_dataset(o.reference);
  m.add_input(o.reference);
  m.add_input(o.estimate);
  std::ofstream out(m.output("metrics.csv"));
  out << "image,relative_l2\n";
  double total = 0.0;
  for (const auto& item : ref.items) {
    const Tensor est = read_ppm(std::filesystem::path(o.estimate) / item.name);
    const double e = relative_l2(item.image, est);
    total += e;
    out << item.name << ',' << format_double(e) << '\n';
  }
  out.close();
  m.add_output("metrics.csv");
  write_summary(m, {{"images", std::to_string(ref.size())},
                    {"mean_relative_l2", format_double(total / static_cast<double>(ref.size()))}});
}

// Random init, retrieval init without prior, retrieval init with the patch prior, per image.
void eval_table(const EvalOptions& o, RunManifest& m) {
  check(!o.weights.empty() && !o.data.empty() && !o.db.empty(), "eval: the table protocol needs --weights, --data and --db");
  const LoadedNetwork net = load_network(o.weights, m);
  const Dataset data = load_dataset(o.data);
  m.add_input(o.data);
  const PatchDatabase db = load_patch_database(o.db);
  m.add_input(o.db);
  const auto stats_path = stats_path_for(o.db, o.db_stats);
  const ChannelStats typical = read_stats_csv(stats_path);
  m.add_input(stats_path);
  check(o.count > 0, "eval: --count must be positive");
  const std::size_t layer = net.spec.topology().pool5;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(o.count), data.size());

  InversionConfig base = o.config;
  base.seed = m.seed;
  base.r_gamma = 0.0;
  std::ofstream out(m.output("table.csv"));
  out << "image,random_init,retrieval_init,patch_prior\n";
  std::array<double, 3> sums{};
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor& img = data.items[i].image;
    const Tensor phi0 = forward(net.weights, net.spec, whiten(img, net.weights.input_stats), nullptr, layer).activations[layer];
    InversionConfig rand_cfg = base;
    rand_cfg.init_mode = InitMode::mean_noise;
    const InversionResult ra = invert(FeatureObjective{layer, phi0}, net.weights, net.spec, rand_cfg, nullptr);
    const InversionResult rb = invert_with_prior(phi0, net.weights, net.spec, base, db, typical, o.k).run;
    InversionConfig prior_cfg = base;
    prior_cfg.r_gamma = o.prior_r_gamma;
    const InversionResult rc = invert_with_prior(phi0, net.weights, net.spec, prior_cfg, db, typical, o.k).run;
    const std::array<double, 3> e{relative_l2(img, to_display(ra.image, net.weights.input_stats)),
                                  relative_l2(img, to_display(rb.image, net.weights.input_stats)),
                                  relative_l2(img, to_display(rc.image, net.weights.input_stats))};
    out << data.items[i].name;
    for (std::size_t j = 0; j < 3; ++j) {
      out << ',' << format_double(e[j]);
      sums[j] += e[j];
    }
    out << '\n';
  }
  out.close();
  m.add_output("table.csv");
  const double dn = static_cast<double>(n);
  write_summary(m, {{"images", std::to_string(n)},
                    {"mean_random_init", format_double(sums[0] / dn)},
                    {"mean_retrieval_init", format_double(sums[1] / dn)},
                    {"mean_patch_prior", format_double(sums[2] / dn)}});
}

void register_eval(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<EvalOptions>();
  Command& cmd = add_command(commands, root, "eval", "Relative L2 errors: image pairs, or the three-way inversion comparison");
  cmd.app->add_option("--reference", o->reference, "dataset directory of original images");
  cmd.app->add_option("--estimate", o->estimate, "directory with same-named reconstructions");
  cmd.app->add_option("--weights", o->weights, "table protocol: network");
  cmd.app->add_option("--data", o->data, "table protocol: images to invert");
  cmd.app->add_option("--db", o->db, "table protocol: feature patch database");
  cmd.app->add_option("--db-stats", o->db_stats, "default db_stats.csv next to --db");
  cmd.app->add_option("--count", o->count, "table protocol: images taken from the front of --data");
  cmd.app->add_option("--k", o->k);
  cmd.app->add_option("--prior-r-gamma", o->prior_r_gamma, "patch prior weight of the third column");
  add_inversion_options(cmd.app, o->config);
  cmd.run = [o](RunManifest& m) {
    const bool pairs = !o->reference.empty() || !o->estimate.empty();
    if (pairs) {
      check(!o->reference.empty() && !o->estimate.empty(), "eval: --reference and --estimate go together");
      check(o->weights.empty() && o->data.empty() && o->db.empty(), "eval: pair mode takes no network or database");
      eval_pairs(*o, m);
    } else {
      eval_table(*o, m);
    }
  };
}

}  // namespace

void register_inversion_commands(std::vector<Command>& commands, CLI::App& root) {
  register_invert(commands, root);
  register_classviz(commands, root);
  register_eval(commands, root);
}

}  // namespace npath::cli
