#include "maskft/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "maskft/serialize.hpp"

namespace fs = std::filesystem;

namespace maskft {

namespace {

constexpr std::uint64_t kStreamNetInit = 100;

const double kNan = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string sanitize(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.') ? c : '_';
  return out.empty() ? std::string("base") : out;
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

struct ExpandedMethod {
  MethodConfig method;
  std::string variant;
};

std::vector<ExpandedMethod> expand_methods(const ExperimentConfig& cfg) {
  std::vector<ExpandedMethod> out;
  for (const auto& m : cfg.methods) {
    std::vector<const SweepAxis*> axes;
    for (const auto& ax : cfg.sweeps)
      if (ax.method == m.name) axes.push_back(&ax);
    if (axes.empty()) {
      out.push_back({m, ""});
      continue;
    }
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      MethodConfig combo = m;
      std::string variant;
      for (std::size_t a = 0; a < axes.size(); ++a) {
        const double v = axes[a]->values[idx[a]];
        detail::apply_sweep_value(combo, axes[a]->field, v);
        if (!variant.empty()) variant += " ";
        variant += axes[a]->field + "=" + fmt(v);
      }
      out.push_back({std::move(combo), variant});
      std::size_t a = 0;
      while (a < axes.size() && ++idx[a] == axes[a]->values.size()) {
        idx[a] = 0;
        ++a;
      }
      if (a == axes.size()) break;
    }
  }
  return out;
}

SplitBundle make_task_bundle(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.task_kind == "csv") return load_csv(cfg.csv_path, CsvSchema{cfg.task.class_count});
  TaskSpec spec = cfg.task;
  spec.seed = cfg.task.seed + seed;
  return cfg.task_kind == "longtail" ? make_longtail(spec) : make_cluster_task(spec);
}

std::size_t auto_lora_rank(const ParamSet& anchor, double budget_fraction) {
  std::size_t mn = 0, mpn = 0;
  for (const Matrix& w : anchor.weights) {
    mn += w.size();
    mpn += w.rows + w.cols;
  }
  const double r = budget_fraction * static_cast<double>(mn) / static_cast<double>(mpn);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r)));
}

std::size_t worker_count(std::size_t jobs) {
  std::size_t n = 0;
  if (const char* env = std::getenv("MASKFT_WORKERS")) {
    n = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  }
  if (n == 0) n = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), 8);
  return std::max<std::size_t>(1, std::min(n, jobs == 0 ? 1 : jobs));
}

struct AnchorKit {
  SplitBundle bundle;
  ParamSet anchor;
};

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ParamSet build_anchor(const SplitBundle& bundle, const NetworkSpec& net,
                      const ExperimentConfig& cfg, std::uint64_t seed) {
  if (bundle.id_train.empty()) throw std::invalid_argument("build_anchor: empty id-train split");
  NetworkSpec down_spec = net;
  down_spec.input_dim = bundle.id_train.x.cols;
  down_spec.class_count = bundle.class_count;

  ParamSet pretrained;
  if (!bundle.pretrain.empty() && cfg.pretrain_iterations > 0) {
    NetworkSpec pre_spec = down_spec;
    pre_spec.class_count = bundle.pretrain_class_count;
    Rng init_rng(seed, kStreamNetInit);
    ParamSet p0 = init_params(pre_spec, init_rng);
    FinetuneConfig pre_cfg;
    pre_cfg.method = MethodKind::full();
    pre_cfg.iterations = cfg.pretrain_iterations;
    pre_cfg.lr = cfg.pretrain_lr;
    pre_cfg.batch_size = cfg.pretrain_batch;
    pre_cfg.warmup_fraction = cfg.pretrain_warmup;
    pre_cfg.weight_decay = cfg.pretrain_weight_decay;
    pre_cfg.seed = seed;
    pretrained = train(p0, pre_cfg, bundle.pretrain).final_params;
  } else {
    NetworkSpec spec = down_spec;
    Rng init_rng(seed, kStreamNetInit);
    pretrained = init_params(spec, init_rng);
  }

  ParamSet anchor;
  anchor.spec = down_spec;
  anchor.weights = pretrained.weights;
  anchor.biases = pretrained.biases;
  if (!bundle.probe.empty()) {
    anchor.prototypes =
        prototypes_from_class_means(pretrained, bundle.probe.x, bundle.probe.y, down_spec.class_count);
  } else if (pretrained.prototypes.rows == down_spec.class_count) {
    anchor.prototypes = pretrained.prototypes;
  } else {
    Rng proto_rng(seed, kStreamNetInit + 1);
    anchor.prototypes = gaussian(down_spec.class_count, down_spec.feature_dim, 0.0,
                                 1.0 / std::sqrt(static_cast<double>(down_spec.feature_dim)),
                                 proto_rng);
  }
  return anchor;
}

namespace {

// One (method-combo, seed) execution; shared by the in-memory and on-disk
// entry points.
RunRow run_job(const ExpandedMethod& em, std::uint64_t seed,
               const AnchorKit& kit, const std::string* run_dir) {
  RunRow row;
  row.method = em.method.name;
  row.variant = em.variant;
  row.seed = seed;
  try {
    FinetuneConfig tc = em.method.train;
    tc.seed = seed;
    if (em.method.loss_logit_adjusted)
      tc.loss = LossKind::logit_adjusted(class_priors(kit.bundle.train_class_counts));
    if (em.method.kind == "lora" && tc.method.rank == 0)
      tc.method.rank = auto_lora_rank(kit.anchor, 0.1);

    NetworkSpec spec = kit.anchor.spec;
    ParamSet final_model;
    TrainResult result;
    if (em.method.kind == "soup") {
      std::vector<ParamSet> members;
      double loss_sum = 0.0;
      std::size_t loss_n = 0;
      CostCounters total{};
      for (std::size_t mten = 0; mten < em.method.soup_size; ++mten) {
        FinetuneConfig mc = tc;
        mc.seed = seed * 1000003ULL + mten;
        TrainResult r = train(kit.anchor, mc, kit.bundle.id_train);
        members.push_back(r.final_params);
        if (!r.log.rows.empty()) {
          loss_sum += r.log.rows.back().loss;
          ++loss_n;
        }
        total.trainable_total += r.cost.trainable_total;
        total.trainable_masked += r.cost.trainable_masked;
        total.trainable_dense_bias += r.cost.trainable_dense_bias;
        total.resident_delta_values += r.cost.resident_delta_values;
        total.resident_bias_values += r.cost.resident_bias_values;
        total.resident_moment_values += r.cost.resident_moment_values;
        total.wall_ms_per_step += r.cost.wall_ms_per_step;
        if (mten == 0) result = std::move(r);
      }
      final_model = soup(members);
      total.method = "soup";
      result.cost = total;
      row.final_loss = loss_n ? loss_sum / static_cast<double>(loss_n) : kNan;
    } else {
      result = train(kit.anchor, tc, kit.bundle.id_train);
      final_model = result.final_params;
      row.final_loss =
          result.log.rows.empty() ? kNan : result.log.rows.back().loss;
    }
    if (em.method.wise_ft_coeff >= 0.0)
      final_model = wise_ft(kit.anchor, final_model, em.method.wise_ft_coeff);

    row.eval = evaluate(final_model, kit.bundle);
    row.cost = training_cost_report(result, spec);
    row.wall_ms_per_step = result.cost.wall_ms_per_step;
    row.ok = true;

    if (run_dir) {
      result.log.to_csv(*run_dir + "/trajectory.csv");
      save_params(final_model, *run_dir + "/model.gmxl");
    }
  } catch (const std::exception& e) {
    row.ok = false;
    row.error = csv_safe(e.what());
  }
  return row;
}

ResultTable run_experiment_impl(const ExperimentConfig& cfg, const std::string* out_dir) {
  cfg.validate();
  const auto expanded = expand_methods(cfg);

  // anchors are shared by every method within a replicate seed
  std::map<std::uint64_t, AnchorKit> kits;
  for (std::uint64_t seed : cfg.seeds) {
    if (kits.count(seed)) continue;
    AnchorKit kit;
    kit.bundle = make_task_bundle(cfg, seed);
    kit.anchor = build_anchor(kit.bundle, cfg.net, cfg, cfg.task.seed + seed);
    kits.emplace(seed, std::move(kit));
  }

  ResultTable table;
  for (const auto& [name, split] : kits.begin()->second.bundle.ood_tests) {
    (void)split;
    table.ood_names.push_back(name);
  }

  struct Job {
    const ExpandedMethod* em;
    std::uint64_t seed;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (const auto& em : expanded)
    for (std::uint64_t seed : cfg.seeds) {
      std::string dir;
      if (out_dir) {
        dir = *out_dir + "/runs/" + sanitize(em.method.name) + "__" + sanitize(em.variant) +
              "__s" + std::to_string(seed);
        fs::create_directories(dir);
      }
      jobs.push_back({&em, seed, std::move(dir)});
    }

  table.rows.resize(jobs.size());
  std::atomic<std::size_t> next{0};
  const std::size_t workers = worker_count(jobs.size());
  auto work = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      const Job& j = jobs[i];
      table.rows[i] =
          run_job(*j.em, j.seed, kits.at(j.seed), j.dir.empty() ? nullptr : &j.dir);
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return table;
}

struct Agg {
  std::vector<double> sum, sum_sq;
  std::size_t n = 0;
  void add(const std::vector<double>& vals) {
    if (sum.empty()) {
      sum.assign(vals.size(), 0.0);
      sum_sq.assign(vals.size(), 0.0);
    }
    for (std::size_t i = 0; i < vals.size(); ++i) {
      sum[i] += vals[i];
      sum_sq[i] += vals[i] * vals[i];
    }
    ++n;
  }
  std::vector<double> mean() const {
    std::vector<double> m(sum.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = sum[i] / static_cast<double>(n);
    return m;
  }
  std::vector<double> stddev() const {
    std::vector<double> s(sum.size());
    if (n < 2) return s;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double mu = sum[i] / static_cast<double>(n);
      const double var =
          std::max(0.0, (sum_sq[i] - static_cast<double>(n) * mu * mu) / static_cast<double>(n - 1));
      s[i] = std::sqrt(var);
    }
    return s;
  }
};

std::vector<double> numeric_fields(const RunRow& r) {
  std::vector<double> v{r.final_loss,
                        r.eval.id_accuracy,
                        r.eval.ood_average,
                        r.eval.balanced_accuracy,
                        r.eval.many_accuracy,
                        r.eval.medium_accuracy,
                        r.eval.few_accuracy,
                        r.eval.macro_f1};
  for (const auto& [name, acc] : r.eval.ood_accuracy) {
    (void)name;
    v.push_back(acc);
  }
  v.push_back(static_cast<double>(r.cost.counters.trainable_total));
  v.push_back(static_cast<double>(r.cost.counters.trainable_masked));
  v.push_back(static_cast<double>(r.cost.counters.trainable_dense_bias));
  v.push_back(static_cast<double>(r.cost.counters.resident_delta_values));
  v.push_back(static_cast<double>(r.cost.counters.resident_bias_values));
  v.push_back(static_cast<double>(r.cost.counters.resident_moment_values));
  v.push_back(static_cast<double>(r.cost.madds_per_example));
  return v;
}

}  // namespace

ResultTable run_experiment(const ExperimentConfig& cfg) { return run_experiment_impl(cfg, nullptr); }

std::string ResultTable::to_csv() const {
  std::string header = "method,variant,seed,status,final_loss,id_acc,ood_avg,balanced_acc,many_acc,"
                       "medium_acc,few_acc,macro_f1";
  for (const auto& n : ood_names) header += ",ood_" + n + "_acc";
  header += ",trainable_total,trainable_masked,trainable_dense_bias,resident_delta,resident_bias,"
            "resident_moments,madds_per_example";
  std::string out = header + "\n";

  auto emit_numeric = [&](const std::vector<double>& vals) {
    std::string s;
    for (double v : vals) s += "," + fmt(v);
    return s;
  };

  for (const RunRow& r : rows) {
    out += r.method + "," + r.variant + "," + std::to_string(r.seed) + ",";
    if (!r.ok) {
      out += "failed: " + r.error;
      const std::size_t ncols = 8 + ood_names.size() + 7;  // fields after status
      for (std::size_t i = 0; i < ncols; ++i) out += ",";
      out += "\n";
      continue;
    }
    out += "ok" + emit_numeric(numeric_fields(r)) + "\n";
  }

  // aggregates per (method, variant) over ok rows, in first-seen order
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, Agg> aggs;
  for (const RunRow& r : rows) {
    if (!r.ok) continue;
    const auto key = std::make_pair(r.method, r.variant);
    if (!aggs.count(key)) keys.push_back(key);
    aggs[key].add(numeric_fields(r));
  }
  for (const auto& key : keys) {
    const Agg& a = aggs.at(key);
    out += key.first + "," + key.second + ",mean,agg" + emit_numeric(a.mean()) + "\n";
    out += key.first + "," + key.second + ",std,agg" + emit_numeric(a.stddev()) + "\n";
  }
  return out;
}

std::string ResultTable::timings_csv() const {
  std::string out = "method,variant,seed,wall_ms_per_step\n";
  for (const RunRow& r : rows) {
    if (!r.ok) continue;
    out += r.method + "," + r.variant + "," + std::to_string(r.seed) + "," +
           fmt(r.wall_ms_per_step) + "\n";
  }
  return out;
}

std::string run_experiment_to_dir(const ExperimentConfig& cfg) {
  cfg.validate();
  fs::create_directories(cfg.output_dir);
  fs::create_directories(cfg.output_dir + "/runs");
  ResultTable table = run_experiment_impl(cfg, &cfg.output_dir);

  {
    std::ofstream os(cfg.output_dir + "/results.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + cfg.output_dir + "/results.csv");
    os << table.to_csv();
  }
  {
    std::ofstream os(cfg.output_dir + "/timings.csv", std::ios::trunc);
    os << table.timings_csv();
  }
  {
    nlohmann::json manifest;
    manifest["library_version"] = kLibraryVersion;
    std::string canon = cfg.raw_text;
    if (canon.empty())  // programmatic configs hash a structural summary
      for (const auto& m : cfg.methods) canon += m.name + ";" + m.kind + ";";
    manifest["config_hash"] = fnv1a64(canon + cfg.task_kind + std::to_string(cfg.task.seed));
    manifest["rows"] = table.rows.size();
    std::size_t failures = 0;
    for (const auto& r : table.rows)
      if (!r.ok) ++failures;
    manifest["failed_rows"] = failures;
    manifest["anchor_update"] = "integrate unless a method overrides it";
    std::ofstream os(cfg.output_dir + "/manifest.json", std::ios::trunc);
    os << manifest.dump(2) << "\n";
  }
  return cfg.output_dir;
}

CsvFile read_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: cannot open " + path);
  CsvFile f;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    if (first) {
      f.header = cells;
      first = false;
    } else {
      cells.resize(f.header.size());
      f.rows.push_back(cells);
    }
  }
  return f;
}

std::size_t CsvFile::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw std::runtime_error("csv: missing column '" + name + "'");
}

std::vector<FrontierPoint> frontier_points(const CsvFile& csv, const std::string& x_col,
                                           const std::string& y_col) {
  const std::size_t cm = csv.column("method");
  const std::size_t cv = csv.column("variant");
  const std::size_t cs = csv.column("seed");
  const std::size_t cx = csv.column(x_col);
  const std::size_t cy = csv.column(y_col);

  auto value = [](const std::string& s) { return s.empty() ? kNan : std::stod(s); };

  std::vector<FrontierPoint> points;
  std::map<std::pair<std::string, std::string>, std::size_t> by_key;
  for (const auto& row : csv.rows) {
    if (row[cs] == "mean") {
      FrontierPoint p;
      p.method = row[cm];
      p.x = value(row[cx]);
      p.y = value(row[cy]);
      by_key[{row[cm], row[cv]}] = points.size();
      points.push_back(p);
    }
  }
  for (const auto& row : csv.rows) {
    if (row[cs] == "std") {
      auto it = by_key.find({row[cm], row[cv]});
      if (it != by_key.end()) {
        points[it->second].dx = value(row[cx]);
        points[it->second].dy = value(row[cy]);
      }
    }
  }
  if (points.empty()) throw std::runtime_error("plot: no aggregate (seed=mean) rows in csv");
  for (auto& p : points) {
    if (std::isnan(p.x) || std::isnan(p.y))
      throw std::runtime_error("plot: method '" + p.method + "' has no value for the chosen axes");
    if (std::isnan(p.dx)) p.dx = 0.0;
    if (std::isnan(p.dy)) p.dy = 0.0;
  }
  return points;
}

void plot_frontier(const std::string& results_csv, const std::string& x_col,
                   const std::string& y_col, const std::string& out_svg) {
  const CsvFile csv = read_csv(results_csv);
  const auto points = frontier_points(csv, x_col, y_col);
  const std::string svg = render_frontier_svg(points, x_col, y_col);
  std::ofstream os(out_svg, std::ios::trunc);
  if (!os) throw std::runtime_error("plot: cannot write " + out_svg);
  os << svg;
}

std::vector<CompareRow> compare_to_baseline(const CsvFile& csv, const std::string& baseline) {
  const std::size_t cm = csv.column("method");
  const std::size_t cv = csv.column("variant");
  const std::size_t cs = csv.column("seed");
  const std::size_t cst = csv.column("status");
  const std::size_t cid = csv.column("id_acc");
  const std::size_t cood = csv.column("ood_avg");

  auto is_run_row = [&](const std::vector<std::string>& row) {
    return row[cst] == "ok" && row[cs] != "mean" && row[cs] != "std";
  };

  auto cell = [](const std::string& s) { return s.empty() ? kNan : std::stod(s); };

  std::map<std::string, std::pair<double, double>> base_by_seed;
  std::string base_variant;
  bool base_seen = false, base_multi = false;
  std::vector<std::string> available;
  for (const auto& row : csv.rows) {
    if (!is_run_row(row)) continue;
    if (std::find(available.begin(), available.end(), row[cm]) == available.end())
      available.push_back(row[cm]);
    if (row[cm] != baseline) continue;
    if (!base_seen) {
      base_variant = row[cv];
      base_seen = true;
    } else if (row[cv] != base_variant) {
      base_multi = true;
    }
    base_by_seed[row[cs]] = {cell(row[cid]), cell(row[cood])};
  }
  if (!base_seen) {
    std::string msg = "compare: baseline method '" + baseline + "' not found; available:";
    for (const auto& a : available) msg += " " + a;
    throw std::runtime_error(msg);
  }
  if (base_multi)
    throw std::runtime_error("compare: baseline '" + baseline +
                             "' has several swept variants; narrow the sweep first");

  std::vector<CompareRow> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& row : csv.rows) {
    if (!is_run_row(row)) continue;
    const auto it = base_by_seed.find(row[cs]);
    if (it == base_by_seed.end()) continue;
    const auto key = std::make_pair(row[cm], row[cv]);
    if (!index.count(key)) {
      index[key] = out.size();
      out.push_back({key.first, key.second, 0.0, 0.0, 0});
    }
    CompareRow& c = out[index[key]];
    const double id = cell(row[cid]), ood = cell(row[cood]);
    // deltas only where both sides carry the metric (e.g. no ood splits)
    if (!std::isnan(id) && !std::isnan(it->second.first)) c.id_delta += id - it->second.first;
    if (!std::isnan(ood) && !std::isnan(it->second.second)) c.ood_delta += ood - it->second.second;
    c.paired_seeds += 1;
  }
  for (auto& c : out) {
    if (c.paired_seeds > 0) {
      c.id_delta /= static_cast<double>(c.paired_seeds);
      c.ood_delta /= static_cast<double>(c.paired_seeds);
    }
  }
  return out;
}

bool quad_oracle(std::ostream& os) {
  bool all_ok = true;
  Rng rng(20240331, 7);

  auto random_problem = [&rng](std::size_t dim, bool zero_grad) {
    QuadraticProblem q;
    Matrix a = gaussian(dim, dim, 0.0, 1.0, rng);
    q.hessian = matmul(transpose(a), a);
    for (std::size_t i = 0; i < dim; ++i) q.hessian(i, i) += 0.1;
    q.gradient.assign(dim, 0.0);
    if (!zero_grad)
      for (double& g : q.gradient) g = rng.next_gaussian(0.0, 1.0);
    q.base = rng.next_gaussian(0.0, 1.0);
    q.validate();
    return q;
  };

  const double ps[] = {0.3, 0.6, 0.9};
  for (int t = 0; t < 3; ++t) {
    const QuadraticProblem q = random_problem(5, false);
    std::vector<double> delta(5);
    for (double& d : delta) d = rng.next_gaussian(0.0, 0.5);
    const double closed = mixout_quadratic_expected_loss(q, delta, ps[t]);
    const auto [mc, sem] = mixout_quadratic_monte_carlo(q, delta, ps[t], 1000000, rng);
    const double err = std::abs(mc - closed);
    const bool ok = err <= 4.0 * sem;
    all_ok = all_ok && ok;
    char buf[200];
    std::snprintf(buf, sizeof buf,
                  "monte-carlo p=%.1f: closed=%.6f mc=%.6f |diff|=%.2e 4*sem=%.2e %s\n", ps[t],
                  closed, mc, err, 4.0 * sem, ok ? "ok" : "FAIL");
    os << buf;
  }

  std::size_t bound_ok = 0;
  const std::size_t trials = 200;
  for (std::size_t t = 0; t < trials; ++t) {
    const QuadraticProblem q = random_problem(5, true);
    std::vector<double> delta(5);
    for (double& d : delta) d = rng.next_gaussian(0.0, 1.0);
    const double p = rng.next_double() * 0.98;
    const double expected = mixout_quadratic_expected_loss(q, delta, p);
    const double bound = mixout_quadratic_lower_bound(q, delta, p);
    if (expected >= bound - 1e-12) ++bound_ok;
  }
  os << "lower bound (g=0, H pd): " << bound_ok << "/" << trials
     << (bound_ok == trials ? " ok\n" : " FAIL\n");
  all_ok = all_ok && bound_ok == trials;
  return all_ok;
}

bool bvcl_oracle(std::ostream& os) {
  bool all_ok = true;
  Rng rng(911, 3);

  NetworkSpec spec;
  spec.input_dim = 6;
  spec.hidden_dims = {10};
  spec.feature_dim = 5;
  spec.class_count = 3;
  spec.temperature = 1.0;

  auto perturbed = [&](const ParamSet& base, double scale, Rng& r) {
    ParamSet p = base;
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) p.add(i, r.next_gaussian(0.0, scale));
    return p;
  };

  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Rng r = rng.split(static_cast<std::uint64_t>(trial));
    ParamSet base = init_params(spec, r);
    const std::size_t m = 3 + static_cast<std::size_t>(r.next_below(5));
    std::vector<ParamSet> models;
    for (std::size_t i = 0; i < m; ++i) models.push_back(perturbed(base, 0.05, r));
    RegressionSet data;
    data.x = gaussian(12, spec.input_dim, 0.0, 1.0, r);
    data.y.resize(12);
    for (double& y : data.y) y = r.next_gaussian(0.0, 1.0);
    const BVCLReport rep = bvcl_estimate(models, data, BvclMode::PredictionEnsemble);
    worst = std::max(worst, std::abs(rep.reconstructed_error - rep.direct_error));
  }
  os << "prediction-ensemble identity over 50 ensembles: worst |recon-direct|=" << worst
     << (worst <= 1e-10 ? " ok\n" : " FAIL\n");
  all_ok = all_ok && worst <= 1e-10;

  // O(locality) remainder: |direct - reconstructed| must shrink ~4x when the
  // perturbation radius halves
  double err_full = 0.0, err_half = 0.0;
  const int trials = 20;
  for (int trial = 0; trial < trials; ++trial) {
    Rng r = rng.split(1000 + static_cast<std::uint64_t>(trial));
    ParamSet base = init_params(spec, r);
    const std::size_t m = 4;
    std::vector<std::vector<double>> dirs(m);
    for (auto& d : dirs) {
      d.resize(base.size());
      for (double& v : d) v = r.next_gaussian(0.0, 1.0);
    }
    RegressionSet data;
    data.x = gaussian(12, spec.input_dim, 0.0, 1.0, r);
    data.y.resize(12);
    for (double& y : data.y) y = r.next_gaussian(0.0, 1.0);
    auto run_at = [&](double eps) {
      std::vector<ParamSet> models;
      for (std::size_t i = 0; i < m; ++i) {
        ParamSet p = base;
        for (std::size_t j = 0; j < dirs[i].size(); ++j) p.add(j, eps * dirs[i][j]);
        models.push_back(std::move(p));
      }
      const BVCLReport rep = bvcl_estimate(models, data, BvclMode::WeightAverage);
      return std::abs(rep.direct_error - rep.reconstructed_error);
    };
    const double eps = 0.02;
    err_full += run_at(eps);
    err_half += run_at(eps / 2.0);
  }
  const double ratio = err_full / err_half;
  os << "weight-average remainder: mean err(eps)/err(eps/2)=" << ratio
     << (ratio >= 3.5 ? " ok (>=3.5)\n" : " FAIL (<3.5)\n");
  all_ok = all_ok && ratio >= 3.5;
  return all_ok;
}

}  // namespace maskft
