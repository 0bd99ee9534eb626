#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "maskft/experiment.hpp"

using namespace maskft;

int main(int argc, char** argv) {
  CLI::App app{"masked-update finetuning lab"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", config_path, "experiment config file")->required();

  std::string plot_csv, plot_x = "id_acc", plot_y = "ood_avg", plot_out = "frontier.svg";
  auto* plot = app.add_subcommand("plot", "scatter the ID-OOD frontier from a results csv");
  plot->add_option("csv", plot_csv, "results.csv from a run")->required();
  plot->add_option("--x", plot_x, "x column (default id_acc)");
  plot->add_option("--y", plot_y, "y column (default ood_avg)");
  plot->add_option("--out", plot_out, "output svg path");

  std::string cmp_csv, cmp_baseline;
  auto* cmp = app.add_subcommand("compare", "seed-paired deltas against a baseline method");
  cmp->add_option("csv", cmp_csv, "results.csv from a run")->required();
  cmp->add_option("--baseline", cmp_baseline, "baseline method name")->required();

  auto* oracle = app.add_subcommand("oracle", "run a built-in numerical check");
  std::string oracle_kind;
  oracle->add_option("kind", oracle_kind, "quad | bvcl")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      ExperimentConfig cfg;
      try {
        cfg = load_experiment_config(config_path);
      } catch (const std::exception& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return 2;
      }
      const std::string dir = run_experiment_to_dir(cfg);
      const CsvFile results = read_csv(dir + "/results.csv");
      std::size_t failed = 0;
      const std::size_t cst = results.column("status");
      for (const auto& row : results.rows)
        if (row[cst].rfind("failed", 0) == 0) ++failed;
      std::cout << "results written to " << dir << " (" << results.rows.size() << " rows";
      if (failed) std::cout << ", " << failed << " failed";
      std::cout << ")\n";
      return failed ? 1 : 0;
    }
    if (*plot) {
      plot_frontier(plot_csv, plot_x, plot_y, plot_out);
      std::cout << "wrote " << plot_out << "\n";
      return 0;
    }
    if (*cmp) {
      const auto rows = compare_to_baseline(read_csv(cmp_csv), cmp_baseline);
      std::cout << "method,variant,id_delta,ood_delta,paired_seeds\n";
      for (const auto& r : rows) {
        std::printf("%s,%s,%+.4f,%+.4f,%zu\n", r.method.c_str(), r.variant.c_str(), r.id_delta,
                    r.ood_delta, r.paired_seeds);
      }
      return 0;
    }
    if (*oracle) {
      bool ok;
      if (oracle_kind == "quad") {
        ok = quad_oracle(std::cout);
      } else if (oracle_kind == "bvcl") {
        ok = bvcl_oracle(std::cout);
      } else {
        std::cerr << "unknown oracle '" << oracle_kind << "' (expected quad or bvcl)\n";
        return 2;
      }
      return ok ? 0 : 1;
    }
  } catch (const ConfigError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
