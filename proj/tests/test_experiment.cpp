#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "maskft/experiment.hpp"
#include "support.hpp"

using namespace maskft;
namespace fs = std::filesystem;

namespace {

// A deliberately tiny experiment so the whole pipeline runs in milliseconds.
const char* kTinyConfig = R"(# tiny smoke config
[task]
kind = cluster
classes = 3
input_dim = 5
samples_per_class = 8
cluster_std = 0.2
test_per_class = 6
val_per_class = 3
pretrain_per_class = 6
probe_per_class = 4
seed = 1

[net]
hidden = 8
feature_dim = 4
temperature = 0.07

[pretrain]
iterations = 40
lr = 0.02
batch = 16

[run]
seeds = 1
output = exp_test_out

[method full]
iterations = 25
lr = 0.01
batch = 8
)";

std::string read_file(const std::string& path) {
  std::ifstream is(path);
  REQUIRE(is);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Minimal well-formedness scan: every tag closes, attributes stay quoted,
// no external references.
void check_well_formed_xml(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool seen_decl = false;
  while (i < text.size()) {
    if (text[i] != '<') {
      REQUIRE(text[i] != '>');
      ++i;
      continue;
    }
    const auto end = text.find('>', i);
    REQUIRE(end != std::string::npos);
    std::string tag = text.substr(i + 1, end - i - 1);
    if (!tag.empty() && tag.front() == '?') {
      seen_decl = true;
    } else if (!tag.empty() && tag.front() == '/') {
      REQUIRE(!stack.empty());
      CHECK(stack.back() == tag.substr(1));
      stack.pop_back();
    } else if (!tag.empty() && tag.back() == '/') {
      // self-closing
    } else {
      const auto sp = tag.find_first_of(" \t");
      stack.push_back(sp == std::string::npos ? tag : tag.substr(0, sp));
    }
    // attribute quotes balance inside the tag
    CHECK(std::count(tag.begin(), tag.end(), '"') % 2 == 0);
    i = end + 1;
  }
  CHECK(seen_decl);
  CHECK(stack.empty());
  CHECK(text.find("href") == std::string::npos);  // self-contained
}

}  // namespace

TEST_CASE("config parser: defaults, sections, and sweeps") {
  ExperimentConfig cfg = parse_experiment_config(kTinyConfig);
  CHECK(cfg.task.class_count == 3);
  CHECK(cfg.net.hidden_dims == std::vector<std::size_t>{8});
  CHECK(cfg.methods.size() == 1);
  CHECK(cfg.methods[0].kind == "full");
  CHECK(cfg.methods[0].train.iterations == 25);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1});

  std::string with_sweep = std::string(kTinyConfig) +
                           "[method gmixout]\niterations = 10\n[sweep]\ngmixout.lambda = 0,0.5,1\n";
  ExperimentConfig s = parse_experiment_config(with_sweep);
  CHECK(s.sweeps.size() == 1);
  CHECK(s.sweeps[0].values == std::vector<double>{0.0, 0.5, 1.0});
}

TEST_CASE("config parser: errors carry line numbers") {
  CHECK_THROWS_WITH_AS(parse_experiment_config("[bogus]\n"), doctest::Contains("line 1"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("[task]\nclasses = many\n"),
                       doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("[task]\nnot_a_field = 3\n"),
                       doctest::Contains("not_a_field"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_experiment_config("stray = 1\n"),
                       doctest::Contains("outside any section"), ConfigError);
  CHECK_THROWS_AS(parse_experiment_config("[method warp]\n"), ConfigError);

  // sweep axis must name a real method and field
  std::string bad_axis = std::string(kTinyConfig) + "[sweep]\nfull.warp = 1,2\n";
  CHECK_THROWS_WITH_AS(parse_experiment_config(bad_axis), doctest::Contains("unknown field"),
                       ConfigError);
  std::string bad_method = std::string(kTinyConfig) + "[sweep]\nnope.lr = 1,2\n";
  CHECK_THROWS_WITH_AS(parse_experiment_config(bad_method), doctest::Contains("unknown method"),
                       ConfigError);

  // run cap bounds grid x seeds
  std::string over_cap = std::string(kTinyConfig) +
                         "[sweep]\nfull.lr = 1,2,3,4,5,6,7,8,9,10\n";
  ExperimentConfig capped = parse_experiment_config(over_cap);  // 10 runs, default cap fine
  CHECK(capped.sweeps[0].values.size() == 10);
  std::string tight = over_cap + "[run]\ncap = 5\n";
  CHECK_THROWS_WITH_AS(parse_experiment_config(tight), doctest::Contains("cap"), ConfigError);

  // duplicate method names
  std::string dup = std::string(kTinyConfig) + "[method full]\niterations = 5\n";
  CHECK_THROWS_WITH_AS(parse_experiment_config(dup), doctest::Contains("duplicate"), ConfigError);
}

TEST_CASE("minimal experiment produces one row per (method, seed) plus aggregates") {
  ExperimentConfig cfg = parse_experiment_config(kTinyConfig);
  ResultTable t = run_experiment(cfg);
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].ok);
  CHECK(t.rows[0].method == "full");
  CHECK(t.rows[0].eval.id_accuracy >= 0.0);

  const std::string csv = t.to_csv();
  std::istringstream is(csv);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 1 + 1 + 2);  // header + run row + mean/std
}

TEST_CASE("sweep cardinality: 5 lambdas x 3 seeds gives 15 run rows") {
  std::string text = std::string(kTinyConfig) +
                     "[method gmixout]\niterations = 12\nepisodes = 3\n"
                     "[sweep]\ngmixout.lambda = 0,0.25,0.5,0.75,1\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  cfg.seeds = {1, 2, 3};
  cfg.pretrain_iterations = 20;
  ResultTable t = run_experiment(cfg);
  // full: 3 rows, gmixout: 5 variants x 3 seeds
  CHECK(t.rows.size() == 3 + 15);
  std::size_t gm = 0;
  std::set<std::string> variants;
  for (const auto& r : t.rows) {
    CHECK(r.ok);
    if (r.method == "gmixout") {
      ++gm;
      variants.insert(r.variant);
    }
  }
  CHECK(gm == 15);
  CHECK(variants.size() == 5);
}

TEST_CASE("worker count does not affect the results") {
  std::string text = std::string(kTinyConfig) + "[method random_mask]\niterations = 12\np = 0.5\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  cfg.seeds = {1, 2, 3};
  setenv("MASKFT_WORKERS", "1", 1);
  const std::string serial = run_experiment(cfg).to_csv();
  setenv("MASKFT_WORKERS", "4", 1);
  const std::string parallel = run_experiment(cfg).to_csv();
  unsetenv("MASKFT_WORKERS");
  CHECK(serial == parallel);
  CHECK(!serial.empty());
}

TEST_CASE("two sweep axes on one method expand to the full grid") {
  std::string text = std::string(kTinyConfig) +
                     "[method gmixout]\niterations = 12\nepisodes = 3\n"
                     "[sweep]\ngmixout.lambda = 0,0.5\ngmixout.p = 0.5,0.8,0.9\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  ResultTable t = run_experiment(cfg);
  std::set<std::string> variants;
  for (const auto& r : t.rows)
    if (r.method == "gmixout") variants.insert(r.variant);
  CHECK(variants.size() == 6);  // 2 lambdas x 3 mask probabilities
  CHECK(t.rows.size() == 1 + 6);
  for (const auto& r : t.rows) CHECK(r.ok);
}

TEST_CASE("identical configs rerun to byte-identical results csv") {
  ExperimentConfig cfg = parse_experiment_config(kTinyConfig);
  cfg.output_dir = "exp_test_det_a";
  run_experiment_to_dir(cfg);
  cfg.output_dir = "exp_test_det_b";
  run_experiment_to_dir(cfg);
  const std::string a = read_file("exp_test_det_a/results.csv");
  const std::string b = read_file("exp_test_det_b/results.csv");
  CHECK(a == b);
  CHECK(fs::exists("exp_test_det_a/manifest.json"));
  CHECK(fs::exists("exp_test_det_a/timings.csv"));
  CHECK(fs::exists("exp_test_det_a/runs/full__base__s1/trajectory.csv"));
  CHECK(fs::exists("exp_test_det_a/runs/full__base__s1/model.gmxl"));
  fs::remove_all("exp_test_det_a");
  fs::remove_all("exp_test_det_b");
}

TEST_CASE("failed runs are recorded, never dropped") {
  // gmixout with more episodes than iterations fails at train time
  std::string text = std::string(kTinyConfig) + "[method gmixout]\niterations = 4\nepisodes = 50\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  ResultTable t = run_experiment(cfg);
  REQUIRE(t.rows.size() == 2);
  std::size_t ok = 0, failed = 0;
  for (const auto& r : t.rows) {
    if (r.ok) ++ok;
    else ++failed;
  }
  CHECK(ok == 1);
  CHECK(failed == 1);
  const std::string csv = t.to_csv();
  CHECK(csv.find("failed:") != std::string::npos);

  // every row, including failed ones, carries the full column count
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  const auto fields = [](const std::string& s) {
    return std::count(s.begin(), s.end(), ',');
  };
  const auto expected = fields(line);
  while (std::getline(lines, line)) CHECK(fields(line) == expected);
}

TEST_CASE("frontier plot: svg is well-formed and contains the data") {
  ExperimentConfig cfg = parse_experiment_config(kTinyConfig);
  ResultTable t = run_experiment(cfg);
  {
    std::ofstream os("exp_test_plot.csv");
    os << t.to_csv();
  }
  const CsvFile csv = read_csv("exp_test_plot.csv");
  auto pts = frontier_points(csv, "id_acc", "ood_avg");
  REQUIRE(pts.size() == 1);
  const std::string svg = render_frontier_svg(pts, "id_acc", "ood_avg");
  check_well_formed_xml(svg);
  CHECK(svg.find("circle") != std::string::npos);
  CHECK(svg.find("<text") != std::string::npos);
  std::remove("exp_test_plot.csv");

  CHECK_THROWS_WITH_AS(frontier_points(csv, "id_acc", "no_such"), doctest::Contains("no_such"),
                       std::runtime_error);
}

TEST_CASE("frontier plot: one legend entry per method, points inside the frame") {
  std::vector<FrontierPoint> pts{
      {"full", 0.90, 0.40, 0.02, 0.03},
      {"gmixout", 0.85, 0.62, 0.01, 0.02},
      {"zeroshot", 0.70, 0.60, 0.0, 0.0},
  };
  const std::string svg = render_frontier_svg(pts, "id", "ood");
  check_well_formed_xml(svg);
  // legend text entries
  for (const char* name : {"zeroshot", "full", "gmixout"})
    CHECK(svg.find(std::string(">") + name + "<") != std::string::npos);

  // every plotted coordinate stays inside the plot frame (72..616, 24..424)
  std::size_t pos = 0, glyphs = 0;
  while ((pos = svg.find("cx=\"", pos)) != std::string::npos) {
    pos += 4;
    const double cx = std::stod(svg.substr(pos));
    const auto cyp = svg.find("cy=\"", pos) + 4;
    const double cy = std::stod(svg.substr(cyp));
    CHECK(cx > 72.0);
    CHECK(cx < 616.0);
    CHECK(cy > 24.0);
    CHECK(cy < 424.0);
    ++glyphs;
  }
  CHECK(glyphs >= 1);
  // the zero-shot reference gets dashed crosshair lines
  CHECK(svg.find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("compare: a method against itself is all zeros") {
  std::string text = std::string(kTinyConfig) + "[method random_mask]\niterations = 12\np = 0.5\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  cfg.seeds = {1, 2};
  ResultTable t = run_experiment(cfg);
  {
    std::ofstream os("exp_test_cmp.csv");
    os << t.to_csv();
  }
  const CsvFile csv = read_csv("exp_test_cmp.csv");
  auto rows = compare_to_baseline(csv, "full");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    if (r.method == "full") {
      CHECK(r.id_delta == 0.0);
      CHECK(r.ood_delta == 0.0);
      CHECK(r.paired_seeds == 2);
    }
  }
  CHECK_THROWS_WITH_AS(compare_to_baseline(csv, "absent"), doctest::Contains("not found"),
                       std::runtime_error);
  std::remove("exp_test_cmp.csv");
}

TEST_CASE("compare: hand csv with a 0.05 offset") {
  {
    std::ofstream os("exp_test_hand.csv");
    os << "method,variant,seed,status,id_acc,ood_avg\n";
    os << "base,,1,ok,0.80,0.60\n";
    os << "better,,1,ok,0.85,0.65\n";
  }
  auto rows = compare_to_baseline(read_csv("exp_test_hand.csv"), "base");
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    if (r.method == "better") {
      CHECK(r.id_delta == doctest::Approx(0.05).epsilon(1e-9));
      CHECK(r.ood_delta == doctest::Approx(0.05).epsilon(1e-9));
    }
  }
  std::remove("exp_test_hand.csv");
}

TEST_CASE("built-in oracles hold") {
  std::ostringstream quiet;
  CHECK(quad_oracle(quiet));
  CHECK(bvcl_oracle(quiet));
}

TEST_CASE("shipped config presets parse and validate") {
  const std::string base = std::string(MASKFT_SOURCE_DIR) + "/configs/";
  for (const char* name : {"cluster_default.cfg", "lambda_sweep.cfg", "sparsity_sweep.cfg",
                           "episode_sweep.cfg", "longtail.cfg"}) {
    ExperimentConfig cfg = load_experiment_config(base + name);
    CHECK(!cfg.methods.empty());
    CHECK(!cfg.seeds.empty());
  }
  ExperimentConfig def = load_experiment_config(base + "cluster_default.cfg");
  CHECK(def.methods.size() == 9);
  CHECK(def.task.domain_deg == 45.0);
  // the gmixout preset trains 10% of the maskable weights over 30 episodes
  for (const auto& m : def.methods) {
    if (m.kind == "gmixout") {
      CHECK(m.train.method.mask_prob == doctest::Approx(0.9).epsilon(1e-12));
      CHECK(m.train.method.episodes == 30);
    }
  }
}

TEST_CASE("wise-ft merge folds the run back toward the anchor") {
  // coeff 0 discards the finetuned weights entirely, so the row must score
  // exactly like zero-shot
  std::string text = std::string(kTinyConfig) +
                     "[method zeroshot]\n[method wise0 kind=full]\niterations = 15\nwise_ft = 0\n"
                     "[method wise1 kind=full]\niterations = 15\nwise_ft = 1\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  ResultTable t = run_experiment(cfg);
  const RunRow *zs = nullptr, *w0 = nullptr, *w1 = nullptr, *full = nullptr;
  for (const auto& r : t.rows) {
    if (r.method == "zeroshot") zs = &r;
    if (r.method == "wise0") w0 = &r;
    if (r.method == "wise1") w1 = &r;
    if (r.method == "full") full = &r;
  }
  REQUIRE(zs);
  REQUIRE(w0);
  REQUIRE(w1);
  REQUIRE(full);
  CHECK(w0->eval.id_accuracy == zs->eval.id_accuracy);
  CHECK(w0->eval.ood_average == zs->eval.ood_average);
  // coeff 1 keeps the finetuned model; with matching train settings it may
  // differ from the 25-iteration full row, but it must not equal zero-shot
  // unless training was a no-op
  CHECK(w1->ok);
}

TEST_CASE("soup and zero-shot method kinds run end to end") {
  std::string text = std::string(kTinyConfig) +
                     "[method zeroshot]\n[method soup]\niterations = 10\nsoup_size = 3\n";
  ExperimentConfig cfg = parse_experiment_config(text);
  ResultTable t = run_experiment(cfg);
  REQUIRE(t.rows.size() == 3);
  const RunRow* zs = nullptr;
  const RunRow* sp = nullptr;
  const RunRow* full = nullptr;
  for (const auto& r : t.rows) {
    if (r.method == "zeroshot") zs = &r;
    if (r.method == "soup") sp = &r;
    if (r.method == "full") full = &r;
  }
  REQUIRE(zs);
  REQUIRE(sp);
  REQUIRE(full);
  CHECK(zs->ok);
  CHECK(sp->ok);
  // soup reports the summed member budgets (paper-style cost accounting)
  CHECK(sp->cost.counters.trainable_total == 3 * full->cost.counters.trainable_total);
}
