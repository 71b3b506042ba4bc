#include <fstream>
#include <numeric>
#include <sstream>

#include "cli_common.hpp"
#include "npath/completion.hpp"
#include "npath/image_io.hpp"
#include "npath/pathways.hpp"
#include "npath/topics.hpp"

namespace npath::cli {
namespace {

// "<file> <attribute>" per line; files missing from the map are unlabeled (-1).
std::map<std::string, int> read_attributes(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(static_cast<bool>(in), "attribute file not found: " + path.string());
  std::map<std::string, int> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    int a = -1;
    check(static_cast<bool>(ls >> name >> a) && a >= 0, path.string() + ": malformed row \"" + line + "\"");
    out[name] = a;
  }
  return out;
}

struct TopicsOptions {
  std::string weights, data, attributes, query, mode = "knn";
  int label = 0, rank = 6, iterations = 500, topic_index = 0;
};

void register_topics(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<TopicsOptions>();
  Command& cmd = add_command(commands, root, "topics", "Factorize one class's fc7 features into topics, score and retrieve");
  cmd.app->add_option("--weights", o->weights)->required();
  cmd.app->add_option("--data", o->data)->required();
  cmd.app->add_option("--class", o->label)->required();
  cmd.app->add_option("--rank", o->rank, "number of topics");
  cmd.app->add_option("--iterations", o->iterations);
  cmd.app->add_option("--attributes", o->attributes, "\"<file> <attribute>\" lines for topic scoring");
  cmd.app->add_option("--query", o->query, "P6 image; ranks the class images against it");
  cmd.app->add_option("--mode", o->mode, "knn: fc7 distance; topic: distance of topic projections")
      ->check(CLI::IsMember({"knn", "topic"}));
  cmd.app->add_option("--topic-index", o->topic_index);
  cmd.run = [o](RunManifest& m) {
    const LoadedNetwork net = load_network(o->weights, m);
    const Dataset data = load_dataset(o->data);
    m.add_input(o->data);
    const Dataset cls = data.of_class(o->label);
    check(!cls.empty(), "topics: no images of class " + std::to_string(o->label));
    std::vector<Tensor> inputs;
    for (const auto& item : cls.items) inputs.push_back(whiten(item.image, net.weights.input_stats));
    const Eigen::MatrixXd V = extract_fc7(inputs, net.weights, net.spec);
    TopicModel model = nmf(V, o->rank, o->iterations, m.seed);
    model.class_id = o->label;
    save_topic_model(m.output("topics.nptm"), model);
    m.add_output("topics.nptm");

    std::ofstream coef(m.output("coefficients.csv"));
    coef << "image";
    for (int k = 0; k < model.topics(); ++k) coef << ",topic_" << k;
    coef << '\n';
    for (std::size_t i = 0; i < cls.size(); ++i) {
      coef << cls.items[i].name;
      for (int k = 0; k < model.topics(); ++k)
        coef << ',' << format_double(model.coefficients(static_cast<Eigen::Index>(i), k));
      coef << '\n';
    }
    coef.close();
    m.add_output("coefficients.csv");

    if (!o->attributes.empty()) {
      const auto attrs = read_attributes(o->attributes);
      m.add_input(o->attributes);
      std::vector<int> labels;
      int count = 0;
      for (const auto& item : cls.items) {
        const auto it = attrs.find(item.name);
        labels.push_back(it == attrs.end() ? -1 : it->second);
        count = std::max(count, labels.back() + 1);
      }
      check(count > 0, "topics: no image of the class carries an attribute");
      const Eigen::MatrixXd scores = score_topics(model, labels, count);
      std::ofstream out(m.output("topic_scores.csv"));
      out << "topic,attribute,score\n";
      for (int k = 0; k < model.topics(); ++k)
        for (int a = 0; a < count; ++a) out << k << ',' << a << ',' << format_double(scores(k, a)) << '\n';
      out.close();
      m.add_output("topic_scores.csv");
    }

    if (!o->query.empty()) {
      check(o->topic_index >= 0 && o->topic_index < model.topics(), "topics: --topic-index out of range");
      const Tensor q = read_ppm(o->query);
      m.add_input(o->query);
      const Eigen::MatrixXd qf = extract_fc7({whiten(q, net.weights.input_stats)}, net.weights, net.spec);
      const auto mode = o->mode == "knn" ? RetrievalMode::knn_fc7 : RetrievalMode::topic_projection;
      const auto ranked = retrieve(qf.row(0).transpose(), V, mode, &model, o->topic_index);
      std::ofstream out(m.output("ranking.csv"));
      out << "rank,image,distance\n";
      for (std::size_t r = 0; r < ranked.size(); ++r)
        out << r << ',' << cls.items[ranked[r].id].name << ',' << format_double(ranked[r].score) << '\n';
      out.close();
      m.add_output("ranking.csv");
    }
  };
}

struct CompleteOptions {
  InversionConfig config;
  std::string weights, image, mask, topic_model, db;
  int target = -1, saliency_class = -1, topic_index = -1, min_region = -1;
  double percentile = 95.0, tau = 0.1;
};

void register_complete(std::vector<Command>& commands, CLI::App& root) {
  auto o = std::make_shared<CompleteOptions>();
  Command& cmd = add_command(commands, root, "complete", "Fill a masked image region toward a class through a pathway");
  cmd.app->add_option("--weights", o->weights)->required();
  cmd.app->add_option("--image", o->image, "P6 image to edit")->required();
  cmd.app->add_option("--mask", o->mask, "P5 mask, nonzero = editable");
  cmd.app->add_option("--saliency-class", o->saliency_class, "derive the mask from this class's saliency instead");
  cmd.app->add_option("--percentile", o->percentile, "saliency threshold percentile");
  cmd.app->add_option("--min-region", o->min_region, "smallest kept saliency component; -1: 1% of the image");
  cmd.app->add_option("--class", o->target, "class to complete toward; -1: top context prediction");
  cmd.app->add_option("--topic-model", o->topic_model, "topic model whose topic selects m7");
  cmd.app->add_option("--topic-index", o->topic_index);
  cmd.app->add_option("--tau", o->tau);
  cmd.app->add_option("--db", o->db, "class patch database for the patch prior");
  add_inversion_options(cmd.app, o->config);
  cmd.run = [o](RunManifest& m) {
    const LoadedNetwork net = load_network(o->weights, m);
    const Tensor image = read_ppm(o->image);
    m.add_input(o->image);
    check(image.shape() == net.spec.input, "complete: image shape does not match the network input");
    check(o->mask.empty() != (o->saliency_class < 0), "complete: give exactly one of --mask and --saliency-class");
    check(o->topic_model.empty() == (o->topic_index < 0), "complete: --topic-model and --topic-index go together");
    Tensor mask;
    if (!o->mask.empty()) {
      mask = read_pgm_mask(o->mask);
      m.add_input(o->mask);
      check(mask.dim(0) == image.dim(1) && mask.dim(1) == image.dim(2), "complete: mask size differs from the image");
    } else {
      check(o->saliency_class < net.spec.class_count, "complete: --saliency-class out of range");
      const int area = static_cast<int>(image.dim(1) * image.dim(2));
      const int min_region = o->min_region >= 0 ? o->min_region : std::max(1, area / 100);
      const SaliencyMask s = saliency_mask(image, o->saliency_class, net.weights, net.spec, o->percentile, min_region);
      check(!s.zero_gradient, "complete: the saliency gradient is zero everywhere");
      mask = s.mask;
    }
    write_pgm_mask(m.output("mask.pgm"), mask);
    m.add_output("mask.pgm");

    const std::vector<int> ranking = predict_context_class(image, mask, net.weights, net.spec);
    const int target = o->target >= 0 ? o->target : ranking.front();
    check(target < net.spec.class_count, "complete: --class out of range");
    std::ofstream pred(m.output("prediction.csv"));
    pred << "rank,class\n";
    for (std::size_t r = 0; r < ranking.size(); ++r) pred << r << ',' << ranking[r] << '\n';
    pred.close();
    m.add_output("prediction.csv");

    MaskSet pathway;
    if (!o->topic_model.empty()) {
      const TopicModel tm = load_topic_model(o->topic_model);
      m.add_input(o->topic_model);
      check(o->topic_index < tm.topics(), "complete: --topic-index out of range");
      const Eigen::VectorXd b = tm.basis.row(o->topic_index).transpose();
      pathway = topic_mask(std::vector<double>(b.data(), b.data() + b.size()), o->tau);
    }
    std::optional<PatchDatabase> db;
    if (!o->db.empty()) {
      db = load_patch_database(o->db);
      m.add_input(o->db);
    }
    InversionConfig c = o->config;
    c.seed = m.seed;
    check(c.r_gamma == 0.0 || db, "complete: --r-gamma > 0 needs --db");
    const CompletionResult r = complete(image, mask, target, pathway, net.weights, net.spec, c, db ? &*db : nullptr);
    write_ppm(m.output("completed.ppm"), r.image);
    m.add_output("completed.ppm");
    std::ofstream energy(m.output("energy.csv"));
    write_energy_csv(energy, r.run);
    energy.close();
    m.add_output("energy.csv");

    const auto logit = [&](const Tensor& raw) {
      return forward(net.weights, net.spec, whiten(raw, net.weights.input_stats)).logits[static_cast<std::size_t>(target)];
    };
    std::ofstream summary(m.output("summary.csv"));
    summary << "metric,value\n"
            << "class," << target << '\n'
            << "editable_pixels," << static_cast<long>(std::accumulate(mask.values().begin(), mask.values().end(), 0.0)) << '\n'
            << "logit_mean_fill," << format_double(logit(mean_fill(image, mask, net.weights))) << '\n'
            << "logit_completed," << format_double(logit(r.image)) << '\n';
    summary.close();
    m.add_output("summary.csv");
  };
}

}  // namespace

void register_topic_commands(std::vector<Command>& commands, CLI::App& root) {
  register_topics(commands, root);
  register_complete(commands, root);
}

}  // namespace npath::cli
