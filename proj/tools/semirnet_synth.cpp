// Writes the synthetic irony task (data, concept tables, run config) to a directory.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "semirnet/error.hpp"
#include "semirnet/synthetic.hpp"

int main(int argc, char** argv) {
  semirnet::SyntheticConfig cfg;
  std::string out = "synthetic";

  CLI::App app{"Generate the synthetic irony task"};
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--seed", cfg.seed, "generator seed")->capture_default_str();
  app.add_option("--samples", cfg.samples, "total number of posts")->capture_default_str();
  app.add_option("--topics", cfg.topics, "number of topics")->capture_default_str();
  app.add_option("--held-out-rate", cfg.held_out_rate, "chance a val/test word is unseen in training")
      ->capture_default_str();
  app.add_option("--coverage", cfg.coverage, "chance a word has concept data")->capture_default_str();
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    const auto task = semirnet::make_synthetic_task(cfg);
    semirnet::write_synthetic_task(task, out);
    std::cout << "wrote " << task.train.size() << "/" << task.val.size() << "/" << task.test.size()
              << " posts and " << task.table.size() << " concept vectors to " << out << "\n";
  } catch (const semirnet::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return semirnet::exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
