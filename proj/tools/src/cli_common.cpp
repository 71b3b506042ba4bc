#include "cli_common.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace npath::cli {

Command& add_command(std::vector<Command>& commands, CLI::App& root, const std::string& name,
                     const std::string& description) {
  Command c;
  c.app = root.add_subcommand(name, description);
  c.options = std::make_shared<CommandOptions>();
  c.app->add_option("--config", c.options->config, "key=value file; flags given on the command line win");
  c.app->add_option("--out-dir", c.options->out_dir, "directory for every artifact and manifest.json")->required();
  c.app->add_option("--seed", c.options->seed, "the only source of randomness");
  commands.push_back(std::move(c));
  return commands.back();
}

void add_inversion_options(CLI::App* app, InversionConfig& c) {
  app->add_option("--r-alpha", c.r_alpha, "weight of ||I||^2");
  app->add_option("--r-beta", c.r_beta, "weight of ||grad I||^2");
  app->add_option("--r-gamma", c.r_gamma, "weight of the patch prior");
  app->add_option("--step-size", c.step_size);
  app->add_option("--momentum", c.momentum);
  app->add_option("--step-growth", c.step_growth, "step multiplier after an accepted move");
  app->add_option("--iterations", c.iterations);
  app->add_option("--rematch-interval", c.rematch_interval);
  app->add_option("--init-noise", c.init_noise, "std of the noise added to the mean image");
  app->add_option("--patch-stride", c.patch_stride, "0: half the patch size");
}

LoadedNetwork load_network(const std::string& path, RunManifest& manifest) {
  LoadedNetwork net = load_weights(path);
  manifest.add_input(path);
  return net;
}

std::array<int, 3> parse_permutation(const std::string& text) {
  std::array<int, 3> p{};
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  check(static_cast<bool>(in >> p[0] >> c1 >> p[1] >> c2 >> p[2]) && c1 == ',' && c2 == ',' && in.peek() == EOF,
        "permutation \"" + text + "\": expected three comma-separated channel indices");
  std::array<bool, 3> seen{};
  for (int v : p) {
    check(v >= 0 && v < 3 && !seen[static_cast<std::size_t>(v)], "permutation \"" + text + "\" is not a permutation of 0,1,2");
    seen[static_cast<std::size_t>(v)] = true;
  }
  return p;
}

std::size_t resolve_layer(const NetworkSpec& spec, const std::string& name) {
  const Topology topo = spec.topology();
  if (name == "pool5") return topo.pool5;
  if (name == "fc6") return topo.relu[0];
  if (name == "fc7") return topo.relu[1];
  if (name == "fc8") return topo.fc[2];
  std::size_t idx = 0;
  try {
    std::size_t used = 0;
    idx = std::stoul(name, &used);
    check(used == name.size(), "");
  } catch (const std::exception&) {
    fail("unknown layer \"" + name + "\" (expected pool5, fc6, fc7, fc8 or a layer index)");
  }
  check(idx < spec.layers.size(), "layer index " + name + " out of range");
  return idx;
}

void write_stats_csv(const std::filesystem::path& path, const ChannelStats& stats) {
  std::ofstream out(path);
  check(static_cast<bool>(out), "cannot write " + path.string());
  out << "channel,mean,std\n";
  for (std::size_t c = 0; c < stats.mean.size(); ++c)
    out << c << ',' << format_double(stats.mean[c]) << ',' << format_double(stats.std[c]) << '\n';
}

ChannelStats read_stats_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(static_cast<bool>(in), "statistics file not found: " + path.string());
  std::string line;
  std::getline(in, line);
  check(line == "channel,mean,std", path.string() + ": expected header channel,mean,std");
  ChannelStats s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t c = 0;
    double mean = 0, sd = 0;
    char a = 0, b = 0;
    check(static_cast<bool>(ls >> c >> a >> mean >> b >> sd) && a == ',' && b == ',' && c == s.mean.size(),
          path.string() + ": malformed row \"" + line + "\"");
    s.mean.push_back(mean);
    s.std.push_back(sd);
  }
  check(!s.mean.empty(), path.string() + ": no rows");
  return s;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace npath::cli
