#include <fstream>

#include "cli_common.hpp"
#include "npath/patch_prior.hpp"
#include "npath/synthetic.hpp"

namespace npath::cli {
namespace {

void register_synth(std::vector<Command>& commands, CLI::App& root) {
  auto scene = std::make_shared<SceneConfig>();
  Command& cmd = add_command(commands, root, "synth", "Generate a toy scene dataset (P6 images, labels.txt, P5 object masks)");
  cmd.app->add_option("--per-class", scene->per_class);
  cmd.app->add_option("--classes", scene->classes);
  cmd.app->add_option("--image-size", scene->image_size);
  cmd.app->add_option("--styles", scene->styles);
  cmd.app->add_option("--noise", scene->noise);
  cmd.run = [scene](RunManifest& m) {
    SceneConfig c = *scene;
    c.seed = m.seed;
    const auto samples = make_scene_samples(c);
    const Dataset d = make_scenes(c);
    save_dataset(m.out_dir, d);
    std::filesystem::create_directories(m.out_dir / "masks");
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::string mask = "masks/" + std::filesystem::path(d.items[i].name).stem().string() + ".pgm";
      write_pgm_mask(m.output(mask), samples[i].object_mask);
      m.add_output(d.items[i].name);
      m.add_output(mask);
    }
    m.add_output("labels.txt");
  };
}

void write_accuracy(RunManifest& m, const NetworkSpec& spec, const NetworkWeights& w, const Dataset& train,
                    const Dataset* val) {
  std::ofstream out(m.output("accuracy.csv"));
  out << "split,images,accuracy\n";
  out << "train," << train.size() << ',' << format_double(accuracy(spec, w, train)) << '\n';
  if (val) out << "val," << val->size() << ',' << format_double(accuracy(spec, w, *val)) << '\n';
  out.close();
  m.add_output("accuracy.csv");
}

struct TrainOptions {
  TrainParams params;
  std::string data, val;
  int conv1 = 8, conv2 = 16, fc = 64;
};

void register_train(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<TrainOptions>();
  Command& cmd = add_command(commands, root, "train", "Train the toy network on a dataset directory");
  cmd.app->add_option("--data", o->data, "training dataset directory")->required();
  cmd.app->add_option("--val", o->val, "optional validation dataset directory");
  cmd.app->add_option("--epochs", o->params.epochs);
  cmd.app->add_option("--learning-rate", o->params.learning_rate);
  cmd.app->add_option("--batch-size", o->params.batch_size);
  cmd.app->add_option("--momentum", o->params.momentum);
  cmd.app->add_option("--weight-decay", o->params.weight_decay);
  cmd.app->add_option("--conv1", o->conv1, "conv1 channels");
  cmd.app->add_option("--conv2", o->conv2, "conv2 channels");
  cmd.app->add_option("--fc", o->fc, "fc6/fc7 width");
  cmd.run = [o](RunManifest& m) {
    const Dataset train = load_dataset(o->data);
    m.add_input(o->data);
    const Tensor& first = train.items.front().image;
    check(first.dim(1) == first.dim(2), "train: images must be square");
    const NetworkSpec spec = toy_spec(static_cast<int>(first.dim(1)), train.class_count, o->conv1, o->conv2, o->fc);
    TrainParams p = o->params;
    p.seed = m.seed;
    const NetworkWeights w = train_toy(spec, train, p);
    save_weights(m.output("weights.npsw"), spec, w);
    m.add_output("weights.npsw");
    if (!o->val.empty()) {
      const Dataset val = load_dataset(o->val);
      m.add_input(o->val);
      write_accuracy(m, spec, w, train, &val);
    } else {
      write_accuracy(m, spec, w, train, nullptr);
    }
  };
}

struct BuildDbOptions {
  std::string weights, data, kind = "feature";
  int label = -1;
  int patch_size = 0;
  int stride = 0;
  std::size_t capacity = 100000;
};

void register_build_db(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<BuildDbOptions>();
  Command& cmd = add_command(commands, root, "build-db", "Build a patch database for the inversion or class-visualization prior");
  cmd.app->add_option("--weights", o->weights, "network weights (feature databases)");
  cmd.app->add_option("--data", o->data, "dataset directory")->required();
  cmd.app->add_option("--kind", o->kind, "feature: pool5 features with receptive-field crops; class: dense patches of one class")
      ->check(CLI::IsMember({"feature", "class"}));
  cmd.app->add_option("--class", o->label, "class to sample (class databases; -1 for all images)");
  cmd.app->add_option("--patch-size", o->patch_size, "0: derived from the pool5 receptive field");
  cmd.app->add_option("--stride", o->stride, "class databases; 0: half the patch size");
  cmd.app->add_option("--capacity", o->capacity, "feature databases are subsampled to at most this many entries");
  cmd.run = [o](RunManifest& m) {
    const Dataset data = load_dataset(o->data);
    m.add_input(o->data);
    const Dataset chosen = o->label >= 0 ? data.of_class(o->label) : data;
    check(!chosen.empty(), "build-db: no images of class " + std::to_string(o->label));
    if (o->kind == "feature") {
      check(!o->weights.empty(), "build-db: feature databases need --weights");
      const LoadedNetwork net = load_network(o->weights, m);
      const int p = o->patch_size > 0 ? o->patch_size : default_patch_size(pool5_receptive_field_size(net.spec));
      const PatchDatabase db = build_database(chosen.images(), net.weights, net.spec, p, o->capacity, m.seed);
      save_patch_database(m.output("db.nppd"), db);
      write_stats_csv(m.output("db_stats.csv"), typical_whitened_stats(chosen.images(), net.weights.input_stats));
      m.add_output("db_stats.csv");
    } else {
      int p = o->patch_size;
      if (p <= 0) {
        check(!o->weights.empty(), "build-db: give --patch-size or --weights to derive it");
        p = default_patch_size(pool5_receptive_field_size(load_network(o->weights, m).spec));
      }
      const PatchDatabase db = build_class_database(chosen.images(), p, o->stride > 0 ? o->stride : std::max(1, p / 2));
      save_patch_database(m.output("db.nppd"), db);
    }
    m.add_output("db.nppd");
  };
}

}  // namespace

void register_data_commands(std::vector<Command>& commands, CLI::App& root) {
  register_synth(commands, root);
  register_train(commands, root);
  register_build_db(commands, root);
}

}  // namespace npath::cli
