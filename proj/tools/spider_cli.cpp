#include "spider/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Sparse traffic sampling and reconstruction"};
  app.require_subcommand(1);

  struct Args {
    std::string config;
    std::uint64_t seed = 1;
    std::string out_dir;
  };
  std::vector<Args> args(spider::pipeline_commands().size());
  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& cmd = spider::pipeline_commands()[i];
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("config", args[i].config, "JSON config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", args[i].seed, "master seed")->required();
    sub->add_option("--out-dir", args[i].out_dir, "output directory")->required();
  }
  CLI11_PARSE(app, argc, argv);

  for (std::size_t i = 0; i < args.size(); ++i) {
    const auto& cmd = spider::pipeline_commands()[i];
    if (!app.got_subcommand(cmd.name)) continue;
    try {
      const auto ctx = spider::load_run_context(args[i].config, args[i].seed, args[i].out_dir);
      std::cout << cmd.run(ctx).dump(2) << '\n';
      return 0;
    } catch (const spider::Error& e) {
      std::cerr << cmd.name << ": " << e.what() << '\n';
      return 2;
    } catch (const std::exception& e) {
      std::cerr << cmd.name << ": " << e.what() << '\n';
      return 1;
    }
  }
  return 1;
}
