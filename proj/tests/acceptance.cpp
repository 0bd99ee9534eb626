// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavier statistical and end-to-end checks live here; the
// fast per-module cases are in the unit suites.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include "maskft/analysis.hpp"
#include "maskft/experiment.hpp"
#include "maskft/serialize.hpp"
#include "maskft/trainer.hpp"

using namespace maskft;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int criterion, const std::string& what, bool ok) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, what.c_str());
  if (!ok) ++failures;
}

bool params_bit_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.get(i) != b.get(i)) return false;
  return true;
}

// ---------------------------------------------------------------- criterion 1

bool gradient_correctness() {
  Rng meta(515, 0);
  const double h = 1e-5, tol = 1e-6;
  double worst = 0.0;
  for (int instance = 0; instance < 100; ++instance) {
    Rng r = meta.split(static_cast<std::uint64_t>(instance));
    NetworkSpec spec;
    spec.input_dim = 3 + r.next_below(4);
    spec.hidden_dims = {4 + r.next_below(5)};
    if (r.next_below(3) == 0) spec.hidden_dims.push_back(3 + r.next_below(4));
    spec.feature_dim = 3 + r.next_below(3);
    spec.class_count = 2 + r.next_below(3);
    // central differences need a smooth map; relu kinks make the oracle
    // itself invalid at crossings (relu instances are covered by the fixed
    // unit-suite cases)
    spec.activation = Activation::Tanh;
    spec.temperature = 1.0;

    ParamSet p = init_params(spec, r);
    const std::size_t batch = 3 + r.next_below(4);
    Matrix x = gaussian(batch, spec.input_dim, 0.0, 1.0, r);
    std::vector<int> y(batch);
    for (int& v : y) v = static_cast<int>(r.next_below(spec.class_count));
    LossKind kind = LossKind::cross_entropy();
    if (instance % 3 == 0) {
      std::vector<double> priors(spec.class_count);
      double s = 0.0;
      for (double& q : priors) {
        q = 0.2 + r.next_double();
        s += q;
      }
      for (double& q : priors) q /= s;
      kind = LossKind::logit_adjusted(priors);
    }

    const ParamSet grad = backward(p, x, y, kind);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.get(i);
      p.set(i, orig + h);
      const double up = forward_loss(p, x, y, kind);
      p.set(i, orig - h);
      const double down = forward_loss(p, x, y, kind);
      p.set(i, orig);
      const double fd = (up - down) / (2.0 * h);
      const double a = grad.get(i);
      const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
      worst = std::max(worst, rel);
    }
  }
  std::printf("  100 instances, worst per-coordinate relative error %.3e (tol %.0e)\n", worst, tol);
  return worst < tol;
}

// ---------------------------------------------------------------- criterion 4

FinetuneConfig small_config(MethodKind method, std::uint64_t iters) {
  FinetuneConfig c;
  c.method = method;
  c.iterations = iters;
  c.lr = 5e-3;
  c.weight_decay = 0.05;
  c.batch_size = 8;
  c.warmup_fraction = 0.1;
  c.seed = 11;
  return c;
}

struct SmallFixture {
  SplitBundle bundle;
  ParamSet anchor;
};

SmallFixture small_fixture(std::uint64_t seed) {
  TaskSpec task;
  task.class_count = 4;
  task.input_dim = 6;
  task.samples_per_class = 12;
  task.cluster_std = 0.2;
  task.pretrain_per_class = 6;
  task.seed = seed;
  SmallFixture f;
  f.bundle = make_cluster_task(task);
  NetworkSpec spec;
  spec.input_dim = 6;
  spec.hidden_dims = {10};
  spec.feature_dim = 5;
  spec.class_count = 4;
  spec.temperature = 0.07;
  Rng rng(seed, 50);
  f.anchor = init_params(spec, rng);
  f.anchor.prototypes = prototypes_from_class_means(f.anchor, f.bundle.probe.x, f.bundle.probe.y, 4);
  return f;
}

bool reduction_suite() {
  bool ok = true;
  SmallFixture f = small_fixture(31);
  const Split& data = f.bundle.id_train;

  // (a) random-mask p=0 vs full: bit-equal trajectory and parameters
  {
    TrainResult full = train(f.anchor, small_config(MethodKind::full(), 50), data);
    TrainResult rm = train(f.anchor, small_config(MethodKind::random_mask(0.0), 50), data);
    bool eq = params_bit_equal(full.final_params, rm.final_params);
    for (std::size_t i = 0; i < full.log.rows.size(); ++i)
      eq = eq && full.log.rows[i].loss == rm.log.rows[i].loss;
    std::printf("  (a) random-mask p=0 == full: %s\n", eq ? "bit-equal" : "MISMATCH");
    ok = ok && eq;
  }

  // (b) single-episode gmixout, lambda=0, p=0 vs full
  {
    TrainResult full = train(f.anchor, small_config(MethodKind::full(), 48), data);
    TrainResult gm = train(f.anchor, small_config(MethodKind::gmixout(0.0, 0.0, 1), 48), data);
    const bool eq = params_bit_equal(full.final_params, gm.final_params);
    std::printf("  (b) gmixout(I=1, lambda=0, p=0) == full: %s\n", eq ? "bit-equal" : "MISMATCH");
    ok = ok && eq;
  }

  // (c) masked coordinates bit-equal to the anchor within every episode,
  // via a step-by-step replica of the training loop whose end state must
  // match train() exactly
  {
    FinetuneConfig cfg = small_config(MethodKind::gmixout(0.8, 0.5, 4), 40);
    const TrainResult reference = train(f.anchor, cfg, data);

    TrainState s = init_train_state(f.anchor, cfg);
    const std::uint64_t k = cfg.episode_length();
    std::vector<std::size_t> perm(data.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::size_t cursor = perm.size();
    bool masked_ok = true;

    for (std::uint64_t iter = 0; iter < cfg.iterations; ++iter) {
      if (iter % k == 0) run_episode_boundary(s);

      std::vector<bool> active(s.anchor.size(), false);
      for (std::size_t i : s.delta.indices) active[i] = true;
      for (std::size_t i : s.bias_delta.indices) active[i] = true;

      if (cursor >= perm.size()) {
        shuffle(perm, s.order_rng);
        cursor = 0;
      }
      const std::size_t take = std::min<std::size_t>(cfg.batch_size, perm.size() - cursor);
      Split batch;
      batch.x = Matrix(take, data.x.cols);
      batch.y.resize(take);
      for (std::size_t i = 0; i < take; ++i) {
        for (std::size_t j = 0; j < data.x.cols; ++j) batch.x(i, j) = data.x(perm[cursor + i], j);
        batch.y[i] = data.y[perm[cursor + i]];
      }
      cursor += take;

      const ParamSet eff = state_effective_params(s);
      for (std::size_t i = 0; i < eff.size(); ++i)
        if (!active[i] && eff.get(i) != s.anchor.get(i)) masked_ok = false;

      const ParamSet grads = backward(eff, batch.x, batch.y, cfg.loss);
      std::vector<double> g;
      for (std::size_t i : s.delta.indices) g.push_back(s.rescale * grads.get(i));
      for (std::size_t i : s.bias_delta.indices) g.push_back(grads.get(i));
      std::vector<double> values = s.delta.values;
      values.insert(values.end(), s.bias_delta.values.begin(), s.bias_delta.values.end());
      adamw_step(values, g, s.moments, lr_at(iter, cfg.iterations, cfg.lr, cfg.warmup_fraction),
                 cfg.weight_decay);
      std::copy(values.begin(), values.begin() + static_cast<long>(s.delta.values.size()),
                s.delta.values.begin());
      std::copy(values.begin() + static_cast<long>(s.delta.values.size()), values.end(),
                s.bias_delta.values.begin());
    }
    run_episode_boundary(s);
    const bool replica_ok = params_bit_equal(s.anchor, reference.final_params);
    std::printf("  (c) masked coordinates == anchor at every step: %s (loop replica %s)\n",
                masked_ok ? "bit-equal" : "MISMATCH", replica_ok ? "bit-equal" : "DIVERGED");
    ok = ok && masked_ok && replica_ok;
  }

  // (d) merged inference logits == training-time effective logits
  {
    double worst = 0.0;
    Rng rng(77, 2);
    auto idx = bernoulli_indices(f.anchor.size(), 0.3, rng);
    SparseDelta d = SparseDelta::zeros(idx);
    for (double& v : d.values) v = rng.next_gaussian(0.0, 0.2);
    const double rescale = mask_rescale(0.7);
    ParamSet eff = effective_params(f.anchor, d, rescale);
    ParamSet merged = merge_for_inference(f.anchor, d, rescale);
    Rng lrng(77, 3);
    LoraDelta lora = init_lora(f.anchor, 2, 0.0, false, false, lrng);
    for (Matrix& a : lora.a)
      for (double& v : a.data) v = lrng.next_gaussian(0.0, 0.3);
    ParamSet lora_eff = merge_for_inference(f.anchor, lora);
    for (int t = 0; t < 100; ++t) {
      Matrix x = gaussian(1, 6, 0.0, 1.0, rng);
      Matrix a = forward(eff, x), b = forward(merged, x);
      Matrix c = forward(lora_eff, x), e = forward(merge_for_inference(f.anchor, lora), x);
      for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
        worst = std::max(worst, std::abs(c.data[i] - e.data[i]));
      }
    }
    std::printf("  (d) merged vs effective logits, 100 inputs: max |diff| %.3e\n", worst);
    ok = ok && worst < 1e-12;
  }
  return ok;
}

// ---------------------------------------------------------------- criterion 5

bool mask_statistics() {
  bool ok = true;
  const std::size_t n = 200, resamples = 10000;
  Rng rng(2026, 4);
  for (double p : {0.5, 0.9, 0.99}) {
    std::size_t kept = 0;
    for (std::size_t r = 0; r < resamples; ++r) kept += bernoulli_indices(n, 1.0 - p, rng).size();
    const double total = static_cast<double>(n) * resamples;
    const double rate = kept / total;
    const double sigma = std::sqrt((1.0 - p) * p / total);
    const double dev = std::abs(rate - (1.0 - p));
    std::printf("  p=%.2f: keep rate %.5f vs %.5f (|dev| %.2e, 5 sigma %.2e)\n", p, rate, 1.0 - p,
                dev, 5.0 * sigma);
    ok = ok && dev < 5.0 * sigma;
  }

  // expectation preservation of the rescale, 3 sigma per coordinate
  const double p = 0.9, rescale = mask_rescale(p);
  const std::size_t dim = 12, reps = 100000;
  std::vector<double> delta(dim);
  Rng vr(2026, 5);
  for (double& v : delta) v = vr.next_gaussian(0.0, 1.0);
  std::vector<double> acc(dim, 0.0);
  for (std::size_t r = 0; r < reps; ++r)
    for (std::size_t j : bernoulli_indices(dim, 1.0 - p, vr)) acc[j] += rescale * delta[j];
  bool within = true;
  const double q = 1.0 - p;
  for (std::size_t j = 0; j < dim; ++j) {
    const double mean = acc[j] / static_cast<double>(reps);
    const double sigma = rescale * std::abs(delta[j]) * std::sqrt(q * (1.0 - q) / reps);
    if (std::abs(mean - delta[j]) >= 3.0 * sigma + 1e-12) within = false;
  }
  std::printf("  rescale expectation preserved per coordinate at 3 sigma: %s\n",
              within ? "yes" : "NO");
  return ok && within;
}

// ------------------------------------------------------- criteria 6 and 7

// Desk-scale default preset; mirrored in configs/cluster_default.cfg.
ExperimentConfig desk_preset() {
  ExperimentConfig cfg;
  cfg.task.class_count = 8;
  cfg.task.input_dim = 16;
  cfg.task.samples_per_class = 10;
  cfg.task.cluster_std = 0.22;
  cfg.task.rotation_deg = 30.0;
  cfg.task.domain_deg = 45.0;
  cfg.task.corruption_std = 0.6;
  cfg.task.val_per_class = 10;
  cfg.task.test_per_class = 40;
  cfg.task.pretrain_class_factor = 2;
  cfg.task.pretrain_per_class = 100;
  cfg.task.pretrain_aug_deg = 45.0;
  cfg.task.probe_per_class = 5;
  cfg.net.hidden_dims = {32};
  cfg.net.feature_dim = 8;
  cfg.net.temperature = 0.07;
  cfg.pretrain_iterations = 1500;
  cfg.pretrain_lr = 0.02;
  cfg.pretrain_batch = 32;
  cfg.run_cap = 500;
  return cfg;
}

MethodConfig preset_method(const std::string& kind, std::uint64_t iters) {
  MethodConfig m;
  m.name = kind;
  m.kind = kind;
  m.train.iterations = iters;
  m.train.lr = 0.02;
  m.train.weight_decay = 0.1;
  m.train.batch_size = 16;
  m.train.warmup_fraction = 0.1;
  if (kind == "zeroshot") {
    m.train.method = MethodKind::full();
    m.train.iterations = 0;
  } else if (kind == "full") {
    m.train.method = MethodKind::full();
  } else if (kind == "movingavg") {
    m.train.method = MethodKind::full();
    m.train.moving_average = 0.99;
  } else if (kind == "soup") {
    m.train.method = MethodKind::full();
    m.soup_size = 5;
  } else if (kind == "random_mask") {
    m.train.method = MethodKind::random_mask(0.9);
    m.train.lr = 0.005;
  } else if (kind == "gmixout") {
    m.train.method = MethodKind::gmixout(0.9, 0.95, 30);
    m.train.lr = 0.005;
  } else if (kind == "mixout") {
    m.train.method = MethodKind::mixout(0.9);
    m.train.lr = 0.005;
  } else if (kind == "lora") {
    m.train.method = MethodKind::lora(0);
  } else if (kind == "linear_probe") {
    m.train.method = MethodKind::linear_probe();
  }
  return m;
}

struct MeanRow {
  double id = 0.0, rot = 0.0, ood = 0.0;
  int n = 0;
};

std::map<std::string, MeanRow> seed_means(const ResultTable& t) {
  std::map<std::string, MeanRow> agg;
  for (const auto& r : t.rows) {
    if (!r.ok) continue;
    MeanRow& m = agg[r.method + (r.variant.empty() ? "" : " " + r.variant)];
    m.id += r.eval.id_accuracy;
    m.ood += r.eval.ood_average;
    for (const auto& [name, acc] : r.eval.ood_accuracy)
      if (name == "rotation") m.rot += acc;
    m.n++;
  }
  for (auto& [k, m] : agg) {
    m.id /= m.n;
    m.rot /= m.n;
    m.ood /= m.n;
  }
  return agg;
}

void write_table(const ResultTable& t, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream os(dir + "/results.csv", std::ios::trunc);
  os << t.to_csv();
}

bool trend_reproduction(const std::string& out_dir) {
  ExperimentConfig cfg = desk_preset();
  cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  cfg.output_dir = out_dir + "/trend";
  for (const char* k : {"zeroshot", "full", "movingavg", "soup", "linear_probe", "lora",
                        "random_mask", "mixout", "gmixout"})
    cfg.methods.push_back(preset_method(k, 1000));
  const ResultTable t = run_experiment(cfg);
  write_table(t, cfg.output_dir);
  plot_frontier(cfg.output_dir + "/results.csv", "id_acc", "ood_rotation_acc",
                cfg.output_dir + "/frontier.svg");

  std::size_t failed_runs = 0;
  for (const auto& r : t.rows)
    if (!r.ok) ++failed_runs;
  const auto means = seed_means(t);
  std::printf("  %-13s %8s %8s %8s   (12-seed means)\n", "method", "id", "rot-ood", "ood-avg");
  for (const auto& [k, m] : means)
    std::printf("  %-13s %8.4f %8.4f %8.4f\n", k.c_str(), m.id, m.rot, m.ood);

  const MeanRow zs = means.at("zeroshot");
  const MeanRow full = means.at("full");
  const MeanRow rm = means.at("random_mask");
  const MeanRow gm = means.at("gmixout");

  const bool part_i = full.rot < zs.rot && full.id > zs.id;
  const bool part_ii = gm.rot > full.rot && gm.rot > rm.rot && std::abs(gm.id - rm.id) <= 0.03;
  std::printf("  (i) full-ft trades ood for id vs zero-shot (covariate shift): %s\n",
              part_i ? "yes" : "NO");
  std::printf("  (ii) gmixout ood > full and random-mask, id within 3pt of random-mask: %s\n",
              part_ii ? "yes" : "NO");
  if (failed_runs) std::printf("  %zu runs failed\n", failed_runs);
  return part_i && part_ii && failed_runs == 0;
}

void check_svg(const std::string& path, bool& ok) {
  std::ifstream is(path);
  if (!is) {
    ok = false;
    return;
  }
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool good = text.rfind("<?xml", 0) == 0;
  while (i < text.size()) {
    if (text[i] != '<') {
      ++i;
      continue;
    }
    const auto end = text.find('>', i);
    if (end == std::string::npos) {
      good = false;
      break;
    }
    std::string tag = text.substr(i + 1, end - i - 1);
    if (!tag.empty() && tag.front() == '?') {
    } else if (!tag.empty() && tag.front() == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) {
        good = false;
        break;
      }
      stack.pop_back();
    } else if (!tag.empty() && tag.back() != '/') {
      const auto sp = tag.find_first_of(" \t");
      stack.push_back(sp == std::string::npos ? tag : tag.substr(0, sp));
    }
    i = end + 1;
  }
  good = good && stack.empty() && text.find("href") == std::string::npos;
  ok = ok && good;
}

bool knob_sweeps(const std::string& out_dir) {
  bool ok = true;

  // lambda sweep on gmixout
  {
    ExperimentConfig cfg = desk_preset();
    cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    cfg.output_dir = out_dir + "/lambda_sweep";
    cfg.methods.push_back(preset_method("zeroshot", 0));
    cfg.methods.push_back(preset_method("gmixout", 1000));
    cfg.sweeps.push_back({"gmixout", "lambda", {0.0, 0.25, 0.5, 0.75, 1.0}});
    const ResultTable t = run_experiment(cfg);
    write_table(t, cfg.output_dir);
    plot_frontier(cfg.output_dir + "/results.csv", "id_acc", "ood_rotation_acc",
                  cfg.output_dir + "/frontier.svg");
    const auto means = seed_means(t);
    const double id0 = means.at("gmixout lambda=0").id;
    const double id1 = means.at("gmixout lambda=1").id;
    const double rot0 = means.at("gmixout lambda=0").rot;
    const double rot1 = means.at("gmixout lambda=1").rot;
    std::printf("  lambda=0: id %.4f rot %.4f | lambda=1: id %.4f rot %.4f\n", id0, rot0, id1,
                rot1);
    const bool endpoints = id1 <= id0 || rot1 >= rot0;
    const bool conservative = id1 <= id0;
    std::printf("  lambda=1 more conservative on id than lambda=0: %s\n",
                conservative ? "yes" : "NO");
    check_svg(cfg.output_dir + "/frontier.svg", ok);
    std::printf("  frontier svg: %s/frontier.svg\n", cfg.output_dir.c_str());
    ok = ok && endpoints && conservative;
  }

  // sparsity sweep on the budget-matched mask method
  {
    ExperimentConfig cfg = desk_preset();
    cfg.seeds = {1, 2, 3, 4, 5, 6, 7, 8};
    cfg.output_dir = out_dir + "/sparsity_sweep";
    cfg.methods.push_back(preset_method("zeroshot", 0));
    cfg.methods.push_back(preset_method("random_mask", 1000));
    cfg.sweeps.push_back({"random_mask", "sparsity", {0.01, 0.05, 0.1}});
    const ResultTable t = run_experiment(cfg);
    write_table(t, cfg.output_dir);
    plot_frontier(cfg.output_dir + "/results.csv", "id_acc", "ood_rotation_acc",
                  cfg.output_dir + "/frontier.svg");
    const auto means = seed_means(t);
    const double id001 = means.at("random_mask sparsity=0.01").id;
    const double id005 = means.at("random_mask sparsity=0.05").id;
    const double id010 = means.at("random_mask sparsity=0.1").id;
    std::printf("  sparsity id: 0.01 -> %.4f, 0.05 -> %.4f, 0.1 -> %.4f\n", id001, id005, id010);
    const bool monotone = id001 <= id005 + 1e-12 && id005 <= id010 + 1e-12;
    std::printf("  id non-decreasing in sparsity: %s\n", monotone ? "yes" : "NO");
    check_svg(cfg.output_dir + "/frontier.svg", ok);
    std::printf("  frontier svg: %s/frontier.svg\n", cfg.output_dir.c_str());
    ok = ok && monotone;
  }
  return ok;
}

// ---------------------------------------------------------------- criterion 8

bool determinism_and_golden(const std::string& out_dir) {
  bool ok = true;

  ExperimentConfig cfg;
  cfg.task.class_count = 3;
  cfg.task.input_dim = 5;
  cfg.task.samples_per_class = 8;
  cfg.task.pretrain_per_class = 6;
  cfg.task.test_per_class = 6;
  cfg.task.val_per_class = 3;
  cfg.pretrain_iterations = 30;
  cfg.seeds = {1, 2};
  MethodConfig m = preset_method("random_mask", 20);
  cfg.methods.push_back(m);
  cfg.output_dir = out_dir + "/det_a";
  run_experiment_to_dir(cfg);
  cfg.output_dir = out_dir + "/det_b";
  run_experiment_to_dir(cfg);
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  const bool identical =
      slurp(out_dir + "/det_a/results.csv") == slurp(out_dir + "/det_b/results.csv") &&
      !slurp(out_dir + "/det_a/results.csv").empty();
  std::printf("  rerun produces byte-identical results.csv: %s\n", identical ? "yes" : "NO");
  ok = ok && identical;

  // 4-row csv ingestion golden
  const std::string csv_path = out_dir + "/golden.csv";
  {
    std::ofstream os(csv_path);
    os << "f0,f1,label,split\n0.5,1.5,0,train\n-1,2,1,val\n3.25,-0.5,1,test\n0,0,0,ood:shift\n";
  }
  bool golden = false;
  try {
    SplitBundle b = load_csv(csv_path, CsvSchema{2});
    golden = b.id_train.size() == 1 && b.id_val.size() == 1 && b.id_test.size() == 1 &&
             b.ood_tests.size() == 1 && b.ood_tests[0].first == "shift" &&
             b.id_train.x(0, 1) == 1.5 && b.id_test.y[0] == 1;
  } catch (const std::exception&) {
  }
  std::printf("  4-row csv ingestion golden: %s\n", golden ? "exact" : "WRONG");
  ok = ok && golden;

  // svg well-formedness on a fresh tiny plot
  std::vector<FrontierPoint> pts{{"zeroshot", 0.7, 0.6, 0.0, 0.0}, {"full", 0.9, 0.4, 0.01, 0.01}};
  const std::string svg_path = out_dir + "/tiny.svg";
  {
    std::ofstream os(svg_path);
    os << render_frontier_svg(pts, "id_acc", "ood_avg");
  }
  bool svg_ok = true;
  check_svg(svg_path, svg_ok);
  std::printf("  emitted svg parses as well-formed xml: %s\n", svg_ok ? "yes" : "NO");
  return ok && svg_ok;
}

// ---------------------------------------------------------------- criterion 9

bool cost_counters() {
  bool ok = true;
  SmallFixture f = small_fixture(41);
  const Split& data = f.bundle.id_train;
  const NetworkSpec& spec = f.anchor.spec;

  const std::size_t ck = spec.class_count * spec.feature_dim;
  TrainResult lp = train(f.anchor, small_config(MethodKind::linear_probe(), 10), data);
  std::printf("  linear-probe trainable %zu == C*k %zu\n", lp.cost.trainable_total, ck);
  ok = ok && lp.cost.trainable_total == ck;

  std::size_t lora_expected = 0;
  for (const Matrix& w : f.anchor.weights) lora_expected += 3 * (w.rows + w.cols);
  TrainResult lora = train(f.anchor, small_config(MethodKind::lora(3), 10), data);
  std::printf("  lora trainable %zu == sum r(m+n) %zu\n", lora.cost.trainable_total, lora_expected);
  ok = ok && lora.cost.trainable_total == lora_expected;

  const double p = 0.8;
  const std::size_t maskable = maskable_indices(f.anchor, true).size();
  TrainResult rm = train(f.anchor, small_config(MethodKind::random_mask(p), 10), data);
  TrainResult gm = train(f.anchor, small_config(MethodKind::gmixout(p, 0.5, 2), 10), data);
  TrainResult mo = train(f.anchor, small_config(MethodKind::mixout(p), 10), data);
  const double expect = (1.0 - p) * static_cast<double>(maskable);
  const double sigma = std::sqrt(p * (1.0 - p) * static_cast<double>(maskable));
  const bool rm_ok = std::abs(static_cast<double>(rm.cost.trainable_masked) - expect) < 5.0 * sigma;
  const bool gm_ok = std::abs(static_cast<double>(gm.cost.trainable_masked) - expect) < 5.0 * sigma;
  std::printf("  |S|: random-mask %zu, gmixout %zu vs (1-p)*maskable %.1f (5 sigma %.1f)\n",
              rm.cost.trainable_masked, gm.cost.trainable_masked, expect, 5.0 * sigma);
  ok = ok && rm_ok && gm_ok;

  std::printf("  resident delta: mixout %zu == maskable %zu; gmixout %zu == |S| %zu\n",
              mo.cost.resident_delta_values, maskable, gm.cost.resident_delta_values,
              gm.cost.trainable_masked);
  ok = ok && mo.cost.resident_delta_values == maskable &&
       gm.cost.resident_delta_values == gm.cost.trainable_masked;

  // analytic madds vs a hand count: 6*10 + 10*5 + 4*5 = 130
  const std::size_t madds = forward_madds_per_example(spec);
  std::printf("  forward madds per example %zu == hand count 130\n", madds);
  ok = ok && madds == 130;

  const std::size_t full_total = train(f.anchor, small_config(MethodKind::full(), 5), data)
                                     .cost.trainable_total;
  std::printf("  full trainable %zu == param count %zu\n", full_total, f.anchor.size());
  ok = ok && full_total == f.anchor.size();
  return ok;
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string out_dir = "acceptance_out";
  fs::create_directories(out_dir);

  report(1, "analytic backward matches central finite differences (rel < 1e-6, 100 instances)",
         gradient_correctness());

  std::ostringstream quad;
  const bool c2 = quad_oracle(quad);
  std::fputs(quad.str().c_str(), stdout);
  report(2, "masked-quadratic expectation: monte-carlo within 4 sigma, lower bound holds", c2);

  std::ostringstream bvcl;
  const bool c3 = bvcl_oracle(bvcl);
  std::fputs(bvcl.str().c_str(), stdout);
  report(3, "decomposition identity to 1e-10 and O(locality) remainder scaling >= 3.5x", c3);

  report(4, "reduction suite: exact trajectory and merge equalities", reduction_suite());
  report(5, "mask keep-rate within 5 sigma and rescale expectation within 3 sigma",
         mask_statistics());
  report(6, "desk-scale trend: finetuning trades ood for id; gmixout recovers ood",
         trend_reproduction(out_dir));
  report(7, "lambda and sparsity knobs move the id-ood frontier as expected",
         knob_sweeps(out_dir));
  report(8, "determinism goldens: rerun-identical csv, ingestion golden, svg parses",
         determinism_and_golden(out_dir));
  report(9, "cost counters match closed forms; mixout/gmixout storage asymmetry",
         cost_counters());

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %d criterion(s) failed, %.1f s total\n", failures == 0 ? "OK" : "FAILED",
              failures, secs);
  return failures == 0 ? 0 : 1;
}
