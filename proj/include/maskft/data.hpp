#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maskft/tensor.hpp"

namespace maskft {

/// One labeled split: row b of x pairs with y[b].
struct Split {
  Matrix x;
  std::vector<int> y;
  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
};

/// Synthetic task description. Classes are gaussian clusters centered on the
/// unit sphere; the pretraining task is a superset (more classes, per-sample
/// random rotations) so the anchor generalizes across orientations.
struct TaskSpec {
  std::size_t class_count = 8;
  std::size_t input_dim = 16;
  std::size_t samples_per_class = 20;  // id-train
  double cluster_std = 0.35;

  double rotation_deg = 45.0;   // covariate-shift OOD split
  double corruption_std = 0.5;  // corruption OOD split
  double imbalance_ratio = 1.0; // long-tail train counts; 1 = balanced
  // fixed rotation of the downstream domain away from the pretraining
  // orientation (the id splits are one "domain" of the broader task)
  double domain_deg = 0.0;

  std::size_t val_per_class = 20;
  std::size_t test_per_class = 50;
  std::size_t pretrain_class_factor = 2;
  std::size_t pretrain_per_class = 40;
  double pretrain_aug_deg = 60.0;
  std::size_t probe_per_class = 5;

  std::uint64_t seed = 0;
};

/// All splits for one task instance. Splits are disjoint by construction
/// (drawn from separate rng streams).
struct SplitBundle {
  Split pretrain;  // superset task, labels in [0, pretrain_class_count)
  Split probe;     // head-init probe: downstream classes, pretrain distribution
  Split id_train, id_val, id_test;
  std::vector<std::pair<std::string, Split>> ood_tests;

  std::vector<std::size_t> train_class_counts;
  std::size_t class_count = 0;
  std::size_t pretrain_class_count = 0;
  Matrix rotation;  // stored covariate-shift rotation; empty when unused
};

/// Gaussian class clusters with covariate-rotation and corruption OOD splits.
SplitBundle make_cluster_task(const TaskSpec& spec);

/// Exponentially decaying per-class train counts
/// (n_c = round(n_max * ratio^(c/(C-1))), min 1) with a balanced test split.
SplitBundle make_longtail(const TaskSpec& spec);

/// Per-class counts used by make_longtail.
std::vector<std::size_t> longtail_counts(std::size_t class_count, std::size_t n_max, double ratio);

/// Class priors from train counts (for the logit-adjusted loss).
std::vector<double> class_priors(const std::vector<std::size_t>& counts);

/// CSV ingestion. Header row: feature columns, then a "label" column, and an
/// optional "split" column with values pretrain|probe|train|val|test|ood:<name>.
/// Rows with non-numeric cells, bad labels, or ragged layout raise a parse
/// error listing the offending line numbers.
struct CsvSchema {
  std::size_t class_count = 0;  // declared number of classes
};
SplitBundle load_csv(const std::string& path, const CsvSchema& schema);

/// Binary dump of every split (container kind 3) plus a JSON sidecar manifest
/// (class counts, shift parameters, seed).
void save_bundle(const SplitBundle& bundle, const TaskSpec& spec, const std::string& path_base);
SplitBundle load_bundle(const std::string& path_base);

}  // namespace maskft
