#include "maskft/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "maskft/serialize.hpp"

namespace maskft {

namespace {

constexpr double kPi = 3.14159265358979323846;

// rng streams per purpose, all derived from the task seed
enum Stream : std::uint64_t {
  kMeans = 10,
  kPretrain = 11,
  kPretrainAug = 12,
  kProbe = 13,
  kIdTrain = 14,
  kIdVal = 15,
  kIdTest = 16,
  kOodRot = 17,
  kRotPlane = 18,
  kOodNoise = 19,
  kLongtail = 20,
  kDomainRot = 21,
};

// Unit vector uniform on the sphere.
std::vector<double> sphere_point(std::size_t d, Rng& rng) {
  std::vector<double> v(d);
  double s = 0.0;
  for (double& x : v) {
    x = rng.next_gaussian(0.0, 1.0);
    s += x * x;
  }
  const double inv = 1.0 / std::sqrt(s);
  for (double& x : v) x *= inv;
  return v;
}

// Orthonormal basis via Gram-Schmidt over gaussian draws.
std::vector<std::vector<double>> random_basis(std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < d) {
    std::vector<double> v(d);
    for (double& x : v) x = rng.next_gaussian(0.0, 1.0);
    for (const auto& u : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < d; ++i) dot += u[i] * v[i];
      for (std::size_t i = 0; i < d; ++i) v[i] -= dot * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    if (n < 1e-12) continue;  // re-draw on (vanishing-probability) degeneracy
    const double inv = 1.0 / std::sqrt(n);
    for (double& x : v) x *= inv;
    basis.push_back(std::move(v));
  }
  return basis;
}

// Rotation by angle_rad in every disjoint 2-plane of a random orthonormal
// basis: R = Q blockdiag(rot) Q^T. Returns a dense d x d matrix.
Matrix multi_plane_rotation(std::size_t d, double angle_rad, Rng& rng) {
  const auto basis = random_basis(d, rng);
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  Matrix r = identity(d);
  for (std::size_t p = 0; p + 1 < d; p += 2) {
    const auto& u = basis[p];
    const auto& v = basis[p + 1];
    // R += (c-1)(uu^T + vv^T) + s(vu^T - uv^T)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        r(i, j) += (c - 1.0) * (u[i] * u[j] + v[i] * v[j]) + s * (v[i] * u[j] - u[i] * v[j]);
  }
  return r;
}

// In-place rotation of one row by angle in every plane of a fresh random
// basis; used for pretraining augmentation.
void rotate_row(double* x, std::size_t d, double angle_rad, Rng& rng) {
  const auto basis = random_basis(d, rng);
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  for (std::size_t p = 0; p + 1 < d; p += 2) {
    const auto& u = basis[p];
    const auto& v = basis[p + 1];
    double du = 0.0, dv = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      du += u[i] * x[i];
      dv += v[i] * x[i];
    }
    for (std::size_t i = 0; i < d; ++i)
      x[i] += (c - 1.0) * (du * u[i] + dv * v[i]) + s * (du * v[i] - dv * u[i]);
  }
}

Split draw_split(const std::vector<std::vector<double>>& means,
                 const std::vector<std::size_t>& counts, double cluster_std, Rng& rng) {
  std::size_t total = 0;
  for (std::size_t n : counts) total += n;
  const std::size_t d = means.empty() ? 0 : means[0].size();
  Split s;
  s.x = Matrix(total, d);
  s.y.reserve(total);
  std::size_t row = 0;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i) {
      for (std::size_t j = 0; j < d; ++j)
        s.x(row, j) = means[c][j] + rng.next_gaussian(0.0, cluster_std);
      s.y.push_back(static_cast<int>(c));
      ++row;
    }
  }
  return s;
}

Split apply_rotation(const Split& base, const Matrix& r) {
  Split out;
  out.y = base.y;
  out.x = matmul(base.x, transpose(r));  // row vectors: x' = R x
  return out;
}

std::vector<std::vector<double>> draw_means(std::size_t count, std::size_t d, Rng& rng) {
  std::vector<std::vector<double>> means;
  means.reserve(count);
  for (std::size_t c = 0; c < count; ++c) means.push_back(sphere_point(d, rng));
  return means;
}

SplitBundle make_base(const TaskSpec& spec, const std::vector<std::size_t>& train_counts) {
  const std::size_t d = spec.input_dim;
  const std::size_t cc = spec.class_count;
  const std::size_t pc = cc * std::max<std::size_t>(spec.pretrain_class_factor, 1);

  Rng means_rng(spec.seed, kMeans);
  const auto means = draw_means(pc, d, means_rng);
  const std::vector<std::vector<double>> down_means(means.begin(),
                                                    means.begin() + static_cast<long>(cc));

  SplitBundle b;
  b.class_count = cc;
  b.pretrain_class_count = pc;
  b.train_class_counts = train_counts;

  // pretraining: superset classes, per-sample random rotations up to aug_deg
  Rng pre_rng(spec.seed, kPretrain);
  Rng aug_rng(spec.seed, kPretrainAug);
  b.pretrain = draw_split(means, std::vector<std::size_t>(pc, spec.pretrain_per_class),
                          spec.cluster_std, pre_rng);
  const double aug_rad = spec.pretrain_aug_deg * kPi / 180.0;
  if (aug_rad > 0.0) {
    for (std::size_t i = 0; i < b.pretrain.size(); ++i) {
      const double a = aug_rng.next_double() * aug_rad;
      rotate_row(&b.pretrain.x.data[i * d], d, a, aug_rng);
    }
  }

  // probe: canonical (unaugmented) draws of the downstream classes, standing
  // in for clean per-class reference embeddings
  Rng probe_rng(spec.seed, kProbe);
  b.probe = draw_split(down_means, std::vector<std::size_t>(cc, spec.probe_per_class),
                       spec.cluster_std, probe_rng);

  Rng train_rng(spec.seed, kIdTrain);
  b.id_train = draw_split(down_means, train_counts, spec.cluster_std, train_rng);
  Rng val_rng(spec.seed, kIdVal);
  b.id_val = draw_split(down_means, std::vector<std::size_t>(cc, spec.val_per_class),
                        spec.cluster_std, val_rng);
  Rng test_rng(spec.seed, kIdTest);
  b.id_test = draw_split(down_means, std::vector<std::size_t>(cc, spec.test_per_class),
                         spec.cluster_std, test_rng);

  // the downstream domain sits at a fixed orientation offset from the
  // pretraining distribution; the probe keeps the canonical orientation
  if (spec.domain_deg > 0.0) {
    Rng dom_rng(spec.seed, kDomainRot);
    const Matrix q = multi_plane_rotation(d, spec.domain_deg * kPi / 180.0, dom_rng);
    b.id_train = apply_rotation(b.id_train, q);
    b.id_val = apply_rotation(b.id_val, q);
    b.id_test = apply_rotation(b.id_test, q);
  }
  return b;
}

int parse_int(const std::string& tok, std::size_t line, std::vector<std::string>& errors) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    errors.push_back("line " + std::to_string(line) + ": bad integer '" + tok + "'");
    return -1;
  }
}

double parse_num(const std::string& tok, std::size_t line, std::vector<std::string>& errors) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    errors.push_back("line " + std::to_string(line) + ": non-numeric cell '" + tok + "'");
    return 0.0;
  }
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(line);
  while (std::getline(ss, cur, ',')) {
    // trim spaces
    const auto a = cur.find_first_not_of(" \t\r");
    const auto z = cur.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? "" : cur.substr(a, z - a + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

std::vector<std::size_t> longtail_counts(std::size_t class_count, std::size_t n_max, double ratio) {
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw std::invalid_argument("longtail_counts: ratio must be in (0,1]");
  std::vector<std::size_t> counts(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    const double expo = class_count > 1
                            ? static_cast<double>(c) / static_cast<double>(class_count - 1)
                            : 0.0;
    const double n = static_cast<double>(n_max) * std::pow(ratio, expo);
    counts[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  return counts;
}

std::vector<double> class_priors(const std::vector<std::size_t>& counts) {
  double total = 0.0;
  for (std::size_t n : counts) total += static_cast<double>(n);
  std::vector<double> priors(counts.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    priors[c] = static_cast<double>(counts[c]) / total;
  return priors;
}

SplitBundle make_cluster_task(const TaskSpec& spec) {
  SplitBundle b = make_base(
      spec, std::vector<std::size_t>(spec.class_count, spec.samples_per_class));

  // Covariate shift: the ood domain sits at rotation_deg from the canonical
  // (pretraining) orientation, independent of the id domain's own offset. The
  // stored matrix maps id-test inputs onto the ood domain, so labels carry
  // over exactly and angle 0 with domain 0 reproduces the clean split.
  Rng plane_rng(spec.seed, kRotPlane);
  Matrix to_ood =
      multi_plane_rotation(spec.input_dim, spec.rotation_deg * kPi / 180.0, plane_rng);
  if (spec.domain_deg > 0.0) {
    Rng dom_rng(spec.seed, kDomainRot);
    const Matrix q = multi_plane_rotation(spec.input_dim, spec.domain_deg * kPi / 180.0, dom_rng);
    to_ood = matmul(to_ood, transpose(q));  // undo the id-domain offset first
  }
  b.rotation = to_ood;
  b.ood_tests.emplace_back("rotation", apply_rotation(b.id_test, b.rotation));

  // Corruption: the id domain's own test samples under additive noise.
  Rng noise_rng(spec.seed, kOodNoise);
  Split noisy = b.id_test;
  for (double& v : noisy.x.data) v += noise_rng.next_gaussian(0.0, spec.corruption_std);
  b.ood_tests.emplace_back("corruption", std::move(noisy));
  return b;
}

SplitBundle make_longtail(const TaskSpec& spec) {
  const auto counts = longtail_counts(spec.class_count, spec.samples_per_class, spec.imbalance_ratio);
  return make_base(spec, counts);
}

SplitBundle load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("csv: missing file: " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("csv: no data rows in " + path);
  const auto header = split_line(line);
  std::size_t label_col = header.size(), split_col = header.size();
  std::vector<std::size_t> feature_cols;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "label")
      label_col = i;
    else if (header[i] == "split")
      split_col = i;
    else
      feature_cols.push_back(i);
  }
  if (label_col == header.size()) throw std::runtime_error("csv: header has no 'label' column");
  if (feature_cols.empty()) throw std::runtime_error("csv: header has no feature columns");

  struct RawRow {
    std::vector<double> x;
    int y;
    std::string split;
  };
  std::vector<RawRow> rows;
  std::vector<std::string> errors;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size()) {
      errors.push_back("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " cells, got " +
                       std::to_string(cells.size()));
      continue;
    }
    RawRow r;
    for (std::size_t c : feature_cols) r.x.push_back(parse_num(cells[c], line_no, errors));
    r.y = parse_int(cells[label_col], line_no, errors);
    if (r.y >= 0 && schema.class_count > 0 &&
        static_cast<std::size_t>(r.y) >= schema.class_count) {
      errors.push_back("line " + std::to_string(line_no) + ": label " + std::to_string(r.y) +
                       " out of range for " + std::to_string(schema.class_count) + " classes");
    }
    r.split = split_col < header.size() ? cells[split_col] : "train";
    if (r.split != "pretrain" && r.split != "probe" && r.split != "train" && r.split != "val" &&
        r.split != "test" && r.split.rfind("ood:", 0) != 0) {
      errors.push_back("line " + std::to_string(line_no) + ": unknown split '" + r.split + "'");
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty() && errors.empty()) throw std::runtime_error("csv: no data rows in " + path);
  if (!errors.empty()) {
    std::string msg = "csv: parse errors in " + path + ":";
    for (const auto& e : errors) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }

  SplitBundle b;
  b.class_count = schema.class_count;
  auto fill = [&](const std::string& name) {
    Split s;
    std::vector<const RawRow*> sel;
    for (const auto& r : rows)
      if (r.split == name) sel.push_back(&r);
    if (sel.empty()) return s;
    s.x = Matrix(sel.size(), feature_cols.size());
    for (std::size_t i = 0; i < sel.size(); ++i) {
      for (std::size_t j = 0; j < feature_cols.size(); ++j) s.x(i, j) = sel[i]->x[j];
      s.y.push_back(sel[i]->y);
    }
    return s;
  };
  b.pretrain = fill("pretrain");
  b.probe = fill("probe");
  b.id_train = fill("train");
  b.id_val = fill("val");
  b.id_test = fill("test");
  std::vector<std::string> ood_names;
  for (const auto& r : rows) {
    if (r.split.rfind("ood:", 0) == 0) {
      const std::string n = r.split.substr(4);
      if (std::find(ood_names.begin(), ood_names.end(), n) == ood_names.end())
        ood_names.push_back(n);
    }
  }
  for (const auto& n : ood_names) b.ood_tests.emplace_back(n, fill("ood:" + n));

  b.train_class_counts.assign(schema.class_count, 0);
  for (int y : b.id_train.y) b.train_class_counts[static_cast<std::size_t>(y)]++;
  b.pretrain_class_count = 0;
  for (int y : b.pretrain.y)
    b.pretrain_class_count = std::max(b.pretrain_class_count, static_cast<std::size_t>(y) + 1);
  return b;
}

namespace {

void put_split(std::ostream& os, const std::string& name, const Split& s) {
  wire::put_u32(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  wire::put_matrix(os, s.x);
  wire::put_u64(os, s.y.size());
  for (int y : s.y) wire::put_u32(os, static_cast<std::uint32_t>(y));
}

std::pair<std::string, Split> get_split(std::istream& is) {
  const std::uint32_t len = wire::get_u32(is, "name length");
  std::string name(len, '\0');
  is.read(name.data(), len);
  Split s;
  s.x = wire::get_matrix(is);
  const std::uint64_t n = wire::get_u64(is, "label count");
  s.y.resize(n);
  for (auto& y : s.y) y = static_cast<int>(wire::get_u32(is, "label"));
  return {name, s};
}

}  // namespace

void save_bundle(const SplitBundle& b, const TaskSpec& spec, const std::string& path_base) {
  std::ofstream os = wire::open_out(path_base + ".gmxl");
  wire::put_header(os, wire::kKindMatrixSet);
  wire::put_u32(os, static_cast<std::uint32_t>(5 + b.ood_tests.size() + (b.rotation.empty() ? 0 : 1)));
  put_split(os, "pretrain", b.pretrain);
  put_split(os, "probe", b.probe);
  put_split(os, "train", b.id_train);
  put_split(os, "val", b.id_val);
  put_split(os, "test", b.id_test);
  for (const auto& [name, split] : b.ood_tests) put_split(os, "ood:" + name, split);
  if (!b.rotation.empty()) put_split(os, "rotation", Split{b.rotation, {}});
  if (!os) throw std::runtime_error("container: write failed: " + path_base + ".gmxl");

  nlohmann::json manifest;
  manifest["class_count"] = b.class_count;
  manifest["pretrain_class_count"] = b.pretrain_class_count;
  manifest["train_class_counts"] = b.train_class_counts;
  manifest["seed"] = spec.seed;
  manifest["rotation_deg"] = spec.rotation_deg;
  manifest["corruption_std"] = spec.corruption_std;
  manifest["imbalance_ratio"] = spec.imbalance_ratio;
  manifest["cluster_std"] = spec.cluster_std;
  std::ofstream ms(path_base + ".json");
  if (!ms) throw std::runtime_error("csv: cannot write manifest: " + path_base + ".json");
  ms << manifest.dump(2) << "\n";
}

SplitBundle load_bundle(const std::string& path_base) {
  std::ifstream is = wire::open_checked(path_base + ".gmxl", wire::kKindMatrixSet);
  SplitBundle b;
  const std::uint32_t count = wire::get_u32(is, "split count");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, split] = get_split(is);
    if (name == "pretrain")
      b.pretrain = std::move(split);
    else if (name == "probe")
      b.probe = std::move(split);
    else if (name == "train")
      b.id_train = std::move(split);
    else if (name == "val")
      b.id_val = std::move(split);
    else if (name == "test")
      b.id_test = std::move(split);
    else if (name == "rotation")
      b.rotation = std::move(split.x);
    else if (name.rfind("ood:", 0) == 0)
      b.ood_tests.emplace_back(name.substr(4), std::move(split));
    else
      throw std::runtime_error("container: unknown split '" + name + "'");
  }
  std::ifstream ms(path_base + ".json");
  if (ms) {
    nlohmann::json manifest = nlohmann::json::parse(ms);
    b.class_count = manifest.value("class_count", std::size_t{0});
    b.pretrain_class_count = manifest.value("pretrain_class_count", std::size_t{0});
    b.train_class_counts = manifest.value("train_class_counts", std::vector<std::size_t>{});
  }
  return b;
}

}  // namespace maskft
