#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "maskft/analysis.hpp"
#include "maskft/data.hpp"
#include "maskft/net.hpp"
#include "maskft/trainer.hpp"

namespace maskft {

inline constexpr const char* kLibraryVersion = "0.1.0";

/// Parse failure with the offending config location.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& message);
  std::size_t line;
};

/// One method row of the experiment: trainer config plus runner-level
/// behavior (soup size, optional wise-ft merge after training).
struct MethodConfig {
  std::string name;  // row label, defaults to the kind
  std::string kind;  // zeroshot|full|movingavg|soup|linear_probe|lora|random_mask|mixout|gmixout
  FinetuneConfig train;
  std::size_t soup_size = 5;
  double wise_ft_coeff = -1.0;  // < 0: off
  bool loss_logit_adjusted = false;
};

struct SweepAxis {
  std::string method;  // method name the axis applies to
  std::string field;
  std::vector<double> values;
};

struct ExperimentConfig {
  std::string task_kind = "cluster";  // cluster | longtail | csv
  TaskSpec task;
  std::string csv_path;

  // input_dim and class_count are filled from the task at run time
  NetworkSpec net{0, {16}, 8, 0, Activation::Tanh, 0.07};

  std::uint64_t pretrain_iterations = 600;
  double pretrain_lr = 0.01;
  std::size_t pretrain_batch = 32;
  double pretrain_warmup = 0.1;
  double pretrain_weight_decay = 0.0;

  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "out";
  std::size_t run_cap = 500;

  std::vector<MethodConfig> methods;
  std::vector<SweepAxis> sweeps;

  std::string raw_text;  // original config file contents, when loaded from one

  void validate() const;  // throws ConfigError
};

/// Flat key-value config with [task] / [net] / [pretrain] / [run] /
/// [method <name>] / [sweep] sections. Errors carry line numbers.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::string& path);

struct RunRow {
  std::string method;
  std::string variant;  // swept hyperparameters, "" when none
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport eval;
  CostReport cost;
  double final_loss = 0.0;
  double wall_ms_per_step = 0.0;
};

struct ResultTable {
  std::vector<std::string> ood_names;
  std::vector<RunRow> rows;

  /// Per-run rows followed by mean/std aggregate rows per (method, variant).
  /// Timing is excluded so reruns are byte-identical; it goes to
  /// timings_csv().
  std::string to_csv() const;
  std::string timings_csv() const;
};

/// Pretrains the anchor on the bundle's superset task and re-initializes the
/// prototype head from the class-mean probe.
ParamSet build_anchor(const SplitBundle& bundle, const NetworkSpec& net,
                      const ExperimentConfig& cfg, std::uint64_t seed);

/// Expands sweeps, runs every (method, variant, seed) job on a bounded
/// worker pool (MASKFT_WORKERS), and returns all rows. Failed runs are
/// recorded, never dropped.
ResultTable run_experiment(const ExperimentConfig& cfg);

/// run_experiment plus the on-disk layout: results.csv, timings.csv,
/// manifest.json and per-run trajectory/checkpoint files. Returns the
/// output directory.
std::string run_experiment_to_dir(const ExperimentConfig& cfg);

/// Minimal CSV reader: header + rows, no quoting (none of our writers quote).
struct CsvFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;  // throws listing the name
};
CsvFile read_csv(const std::string& path);

struct FrontierPoint {
  std::string method;
  double x = 0.0, y = 0.0;
  double dx = 0.0, dy = 0.0;  // error bars (std over seeds)
};

/// Scatter of seed-mean rows from a results CSV. Throws when the named
/// columns are missing.
std::vector<FrontierPoint> frontier_points(const CsvFile& csv, const std::string& x_col,
                                           const std::string& y_col);

/// Self-contained SVG scatter; one glyph per method, error bars, legend, and
/// a marked zero-shot reference point when a "zeroshot" method is present.
std::string render_frontier_svg(const std::vector<FrontierPoint>& points,
                                const std::string& x_label, const std::string& y_label);

void plot_frontier(const std::string& results_csv, const std::string& x_col,
                   const std::string& y_col, const std::string& out_svg);

struct CompareRow {
  std::string method;
  std::string variant;
  double id_delta = 0.0;
  double ood_delta = 0.0;
  std::size_t paired_seeds = 0;
};

/// Seed-paired (ID, OOD) deltas of every method against the baseline method.
std::vector<CompareRow> compare_to_baseline(const CsvFile& csv, const std::string& baseline);

/// Monte-Carlo + lower-bound check of the masked-quadratic expectation.
/// Prints per-check lines; returns true when everything holds.
bool quad_oracle(std::ostream& os);

/// Decomposition identity + locality-remainder scaling check.
bool bvcl_oracle(std::ostream& os);

std::uint64_t fnv1a64(const std::string& bytes);

namespace detail {
/// Shared by the config parser and the sweep expander.
void apply_sweep_value(MethodConfig& m, const std::string& field, double value);
}  // namespace detail

}  // namespace maskft
