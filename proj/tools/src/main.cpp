#include <iostream>

#include "cli_common.hpp"

namespace {

using npath::cli::Command;

// Value of --config after the subcommand, if any.
std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 2; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

// Config entries become "--key=value" right after the subcommand name, so anything given on the
// command line comes later and wins under the take-last policy. Keys may sit at top level or in
// a [<subcommand>] section.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  const std::string path = find_config(args);
  if (path.empty()) return args;
  npath::check(std::filesystem::is_regular_file(path), "config file not found: " + path);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_file(path);
  } catch (const CLI::Error& e) {
    npath::fail("config file " + path + ": " + e.what());
  }
  std::vector<std::string> out(args.begin(), args.begin() + 2);
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const bool ours = item.parents.empty() || (item.parents.size() == 1 && item.parents[0] == args[1]);
    if (!ours) continue;
    npath::check(item.name != "config" && item.name != "out-dir" && item.name != "out_dir",
                 "config file " + path + ": " + item.name + " must be given on the command line");
    for (const auto& value : item.inputs) out.push_back("--" + item.name + "=" + value);
  }
  out.insert(out.end(), args.begin() + 2, args.end());
  return out;
}

std::map<std::string, std::string> resolved_options(const CLI::App& app) {
  std::map<std::string, std::string> out;
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "config" || name == "out-dir" || name == "seed") continue;
    const auto& results = opt->results();
    out[name] = results.empty() ? opt->get_default_str() : results.back();
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App root{"Neural pathway analysis and feature inversion for small convolutional networks", "npath"};
  root.option_defaults()->always_capture_default()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  root.require_subcommand(1);
  std::vector<Command> commands;
  npath::cli::register_data_commands(commands, root);
  npath::cli::register_inversion_commands(commands, root);
  npath::cli::register_topic_commands(commands, root);

  std::vector<std::string> args(argv, argv + argc);
  if (args.size() >= 2 && root.get_subcommand_no_throw(args[1]) != nullptr) args = expand_config(args);
  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    root.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = root.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const Command& cmd : commands) {
    if (!cmd.app->parsed()) continue;
    npath::cli::RunManifest m;
    m.command = cmd.app->get_name();
    m.seed = cmd.options->seed;
    m.out_dir = cmd.options->out_dir;
    m.config = resolved_options(*cmd.app);
    std::filesystem::create_directories(m.out_dir);
    cmd.run(m);
    m.write();
    std::cout << m.command << ": wrote " << m.outputs.size() << " artifacts to " << m.out_dir.string() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const npath::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const npath::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 1;
  }
}
