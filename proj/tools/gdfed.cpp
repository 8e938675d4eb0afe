#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gdfed/config.hpp"
#include "gdfed/error.hpp"
#include "gdfed/harness.hpp"

namespace {

int exit_code_for(const std::string& category) {
  if (category == "config") return 2;
  if (category == "io") return 3;
  if (category == "protocol") return 4;
  if (category == "format") return 5;
  if (category == "argument") return 6;
  if (category == "structural") return 7;
  return 1;
}

void print_summary(const gdfed::ExperimentResult& r) {
  for (const auto& rec : r.records) {
    std::printf("round %u  %-9s loss %.6f  ppl %.4f  up %llu B  down %llu B  %lld ms\n", rec.round,
                gdfed::mode_name(rec.mode), rec.train_loss, rec.eval_perplexity.value_or(0.0),
                static_cast<unsigned long long>(rec.uplink_bytes),
                static_cast<unsigned long long>(rec.downlink_bytes),
                static_cast<long long>(rec.wall_ms));
  }
  if (r.bleu) std::printf("bleu %.6f\n", *r.bleu);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LoRA fine-tuning of a toy language model with delta aggregation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> transport;
  std::optional<std::string> out_dir;

  CLI::App* run = app.add_subcommand("run", "Run one mode and write its reports");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--mode", mode, "federated|central|local")
      ->check(CLI::IsMember({"federated", "central", "local"}));
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--transport", transport, "memory|tcp")->check(CLI::IsMember({"memory", "tcp"}));
  run->add_option("--out", out_dir, "Output directory");

  CLI::App* compare = app.add_subcommand("compare", "Run all three modes and write joint reports");
  compare->add_option("--config", config_path, "Config file")->required();
  compare->add_option("--seed", seed, "Override the config seed");
  compare->add_option("--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    gdfed::ExperimentConfig cfg = gdfed::load_config(config_path);
    if (mode) cfg.mode = gdfed::parse_mode(*mode);
    if (seed) cfg.seed = *seed;
    if (transport) cfg.transport = *transport == "tcp" ? gdfed::TransportKind::Tcp
                                                       : gdfed::TransportKind::Memory;
    if (out_dir) cfg.output_dir = *out_dir;
    cfg.validate();

    if (run->parsed()) {
      const gdfed::ExperimentResult r = gdfed::run_experiment(cfg);
      gdfed::write_run_report(cfg, r);
      print_summary(r);
    } else {
      const gdfed::ComparisonResult c = gdfed::compare_modes(cfg);
      gdfed::write_comparison(cfg, c);
      std::cout << c.totals_csv << c.summary_json;
    }
    return 0;
  } catch (const gdfed::Error& e) {
    std::cerr << e.category() << ": " << e.what() << '\n';
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "internal: " << e.what() << '\n';
    return 1;
  }
}
