#pragma once

#include <CLI11.hpp>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "manifest.hpp"
#include "npath/inversion.hpp"
#include "npath/training.hpp"

namespace npath::cli {

using Runner = std::function<void(RunManifest&)>;

struct CommandOptions {
  std::string config;
  std::string out_dir;
  unsigned long long seed = 1;
};

struct Command {
  CLI::App* app = nullptr;
  std::shared_ptr<CommandOptions> options;
  Runner run;
};

/// Adds a subcommand carrying the options every command shares: --config, --out-dir, --seed.
Command& add_command(std::vector<Command>& commands, CLI::App& root, const std::string& name,
                     const std::string& description);

void register_data_commands(std::vector<Command>& commands, CLI::App& root);
void register_inversion_commands(std::vector<Command>& commands, CLI::App& root);
void register_topic_commands(std::vector<Command>& commands, CLI::App& root);

/// Optimizer and prior flags shared by invert, classviz, complete and eval.
void add_inversion_options(CLI::App* app, InversionConfig& config);

LoadedNetwork load_network(const std::string& path, RunManifest& manifest);

/// "1,2,0" -> {1, 2, 0}; must be a permutation of 0..2.
std::array<int, 3> parse_permutation(const std::string& text);

/// Layer by name (pool5, fc6, fc7, fc8) or by index.
std::size_t resolve_layer(const NetworkSpec& spec, const std::string& name);

void write_stats_csv(const std::filesystem::path& path, const ChannelStats& stats);
ChannelStats read_stats_csv(const std::filesystem::path& path);

std::string format_double(double v);

}  // namespace npath::cli
