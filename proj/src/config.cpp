#include <fstream>
#include <sstream>

#include "maskft/experiment.hpp"

namespace maskft {

ConfigError::ConfigError(std::size_t line_, const std::string& message)
    : std::runtime_error("config line " + std::to_string(line_) + ": " + message), line(line_) {}

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto z = s.find_last_not_of(" \t\r");
  return s.substr(a, z - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(trim(tok));
  return out;
}

double parse_double(const std::string& v, std::size_t line) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(line, "expected a number, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& v, std::size_t line) {
  try {
    std::size_t used = 0;
    const unsigned long long d = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(line, "expected a non-negative integer, got '" + v + "'");
  }
}

MethodConfig default_method(const std::string& kind, std::size_t line) {
  MethodConfig m;
  m.name = kind;
  m.kind = kind;
  m.train.iterations = 300;
  m.train.lr = 0.01;
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
  } else if (kind == "linear_probe") {
    m.train.method = MethodKind::linear_probe();
  } else if (kind == "lora") {
    m.train.method = MethodKind::lora(0);  // 0 = match the 10% mask budget
  } else if (kind == "random_mask") {
    m.train.method = MethodKind::random_mask(0.9);
  } else if (kind == "mixout") {
    m.train.method = MethodKind::mixout(0.9);
  } else if (kind == "gmixout") {
    m.train.method = MethodKind::gmixout(0.9, 0.5, 30);
  } else {
    throw ConfigError(line, "unknown method kind '" + kind + "'");
  }
  return m;
}

// Shared by the [method] sections and the sweep expander.
void set_method_field(MethodConfig& m, const std::string& key, double value, std::size_t line) {
  if (key == "p")
    m.train.method.mask_prob = value;
  else if (key == "sparsity")
    m.train.method.mask_prob = 1.0 - value;
  else if (key == "lambda")
    m.train.method.ema_coeff = value;
  else if (key == "episodes")
    m.train.method.episodes = static_cast<std::uint64_t>(value);
  else if (key == "episode_len")
    m.train.method.episode_len = static_cast<std::uint64_t>(value);
  else if (key == "rank")
    m.train.method.rank = static_cast<std::size_t>(value);
  else if (key == "alpha")
    m.train.method.lora_alpha = value;
  else if (key == "iterations")
    m.train.iterations = static_cast<std::uint64_t>(value);
  else if (key == "lr")
    m.train.lr = value;
  else if (key == "weight_decay")
    m.train.weight_decay = value;
  else if (key == "batch")
    m.train.batch_size = static_cast<std::size_t>(value);
  else if (key == "warmup")
    m.train.warmup_fraction = value;
  else if (key == "moving_average")
    m.train.moving_average = value;
  else if (key == "soup_size")
    m.soup_size = static_cast<std::size_t>(value);
  else if (key == "wise_ft")
    m.wise_ft_coeff = value;
  else
    throw ConfigError(line, "unknown method field '" + key + "'");
}

bool is_numeric_method_field(const std::string& key) {
  static const char* kFields[] = {"p",          "sparsity", "lambda",       "episodes",
                                  "episode_len", "rank",     "alpha",        "iterations",
                                  "lr",         "weight_decay", "batch",    "warmup",
                                  "moving_average", "soup_size", "wise_ft"};
  for (const char* f : kFields)
    if (key == f) return true;
  return false;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError(0, "[run] seeds must not be empty");
  if (methods.empty()) throw ConfigError(0, "at least one [method ...] section is required");
  if (task_kind != "cluster" && task_kind != "longtail" && task_kind != "csv")
    throw ConfigError(0, "task kind must be cluster, longtail, or csv");
  if (task_kind == "csv" && csv_path.empty())
    throw ConfigError(0, "csv task needs a path field");
  std::size_t grid = 0;
  for (const auto& m : methods) {
    std::size_t combos = 1;
    for (const auto& ax : sweeps)
      if (ax.method == m.name) combos *= ax.values.size();
    grid += combos;
  }
  if (grid * seeds.size() > run_cap)
    throw ConfigError(0, "grid size " + std::to_string(grid) + " x " +
                             std::to_string(seeds.size()) + " seeds exceeds the run cap of " +
                             std::to_string(run_cap));
  for (const auto& ax : sweeps) {
    bool found = false;
    for (const auto& m : methods)
      if (m.name == ax.method) found = true;
    if (!found) throw ConfigError(0, "sweep axis targets unknown method '" + ax.method + "'");
    if (!is_numeric_method_field(ax.field))
      throw ConfigError(0, "sweep axis names unknown field '" + ax.field + "'");
    if (ax.values.empty()) throw ConfigError(0, "sweep axis '" + ax.field + "' has no values");
  }
}

ExperimentConfig parse_experiment_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.methods.clear();

  std::istringstream is(text);
  std::string raw;
  std::size_t line_no = 0;
  std::string section;
  MethodConfig* method = nullptr;

  auto handle_kv = [&](const std::string& key, const std::string& value, std::size_t line) {
    if (section == "task") {
      if (key == "kind") cfg.task_kind = value;
      else if (key == "path") cfg.csv_path = value;
      else if (key == "classes") cfg.task.class_count = parse_u64(value, line);
      else if (key == "input_dim") cfg.task.input_dim = parse_u64(value, line);
      else if (key == "samples_per_class") cfg.task.samples_per_class = parse_u64(value, line);
      else if (key == "cluster_std") cfg.task.cluster_std = parse_double(value, line);
      else if (key == "rotation_deg") cfg.task.rotation_deg = parse_double(value, line);
      else if (key == "domain_deg") cfg.task.domain_deg = parse_double(value, line);
      else if (key == "corruption_std") cfg.task.corruption_std = parse_double(value, line);
      else if (key == "imbalance_ratio") cfg.task.imbalance_ratio = parse_double(value, line);
      else if (key == "val_per_class") cfg.task.val_per_class = parse_u64(value, line);
      else if (key == "test_per_class") cfg.task.test_per_class = parse_u64(value, line);
      else if (key == "pretrain_class_factor") cfg.task.pretrain_class_factor = parse_u64(value, line);
      else if (key == "pretrain_per_class") cfg.task.pretrain_per_class = parse_u64(value, line);
      else if (key == "pretrain_aug_deg") cfg.task.pretrain_aug_deg = parse_double(value, line);
      else if (key == "probe_per_class") cfg.task.probe_per_class = parse_u64(value, line);
      else if (key == "seed") cfg.task.seed = parse_u64(value, line);
      else throw ConfigError(line, "unknown [task] field '" + key + "'");
    } else if (section == "net") {
      if (key == "hidden") {
        cfg.net.hidden_dims.clear();
        for (const auto& tok : split_commas(value))
          cfg.net.hidden_dims.push_back(parse_u64(tok, line));
      } else if (key == "feature_dim") {
        cfg.net.feature_dim = parse_u64(value, line);
      } else if (key == "activation") {
        if (value == "tanh") cfg.net.activation = Activation::Tanh;
        else if (value == "relu") cfg.net.activation = Activation::Relu;
        else throw ConfigError(line, "activation must be tanh or relu");
      } else if (key == "temperature") {
        cfg.net.temperature = parse_double(value, line);
      } else {
        throw ConfigError(line, "unknown [net] field '" + key + "'");
      }
    } else if (section == "pretrain") {
      if (key == "iterations") cfg.pretrain_iterations = parse_u64(value, line);
      else if (key == "lr") cfg.pretrain_lr = parse_double(value, line);
      else if (key == "batch") cfg.pretrain_batch = parse_u64(value, line);
      else if (key == "warmup") cfg.pretrain_warmup = parse_double(value, line);
      else if (key == "weight_decay") cfg.pretrain_weight_decay = parse_double(value, line);
      else throw ConfigError(line, "unknown [pretrain] field '" + key + "'");
    } else if (section == "run") {
      if (key == "seeds") {
        cfg.seeds.clear();
        for (const auto& tok : split_commas(value)) cfg.seeds.push_back(parse_u64(tok, line));
      } else if (key == "output") {
        cfg.output_dir = value;
      } else if (key == "cap") {
        cfg.run_cap = parse_u64(value, line);
      } else {
        throw ConfigError(line, "unknown [run] field '" + key + "'");
      }
    } else if (section == "method") {
      if (!method) throw ConfigError(line, "method field outside a [method] section");
      if (key == "kind") throw ConfigError(line, "kind must be set in the section header");
      if (key == "loss") {
        if (value == "ce") method->loss_logit_adjusted = false;
        else if (value == "la") method->loss_logit_adjusted = true;
        else throw ConfigError(line, "loss must be ce or la");
      } else if (key == "anchor_update") {
        if (value == "integrate") method->train.anchor_update = AnchorUpdate::Integrate;
        else if (value == "literal") method->train.anchor_update = AnchorUpdate::Literal;
        else throw ConfigError(line, "anchor_update must be integrate or literal");
      } else if (key == "mask_prototypes") {
        method->train.mask_prototypes = value == "true" || value == "1";
      } else {
        set_method_field(*method, key, parse_double(value, line), line);
      }
    } else if (section == "sweep") {
      const auto dot = key.find('.');
      if (dot == std::string::npos)
        throw ConfigError(line, "sweep keys use the form method.field");
      SweepAxis ax;
      ax.method = key.substr(0, dot);
      ax.field = key.substr(dot + 1);
      for (const auto& tok : split_commas(value)) ax.values.push_back(parse_double(tok, line));
      cfg.sweeps.push_back(std::move(ax));
    } else {
      throw ConfigError(line, "field outside any section");
    }
  };

  while (std::getline(is, raw)) {
    ++line_no;
    std::string line = trim(raw);
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = trim(line.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line_no, "unterminated section header");
      const std::string inner = trim(line.substr(1, line.size() - 2));
      const auto space = inner.find(' ');
      if (space == std::string::npos) {
        section = inner;
        method = nullptr;
        if (section != "task" && section != "net" && section != "pretrain" && section != "run" &&
            section != "sweep")
          throw ConfigError(line_no, "unknown section [" + inner + "]");
      } else {
        const std::string head = trim(inner.substr(0, space));
        if (head != "method") throw ConfigError(line_no, "unknown section [" + inner + "]");
        section = "method";
        std::string rest = trim(inner.substr(space + 1));
        // [method NAME] or [method NAME kind=KIND]
        std::string name = rest, kind;
        const auto sp2 = rest.find(' ');
        if (sp2 != std::string::npos) {
          name = trim(rest.substr(0, sp2));
          const std::string opt = trim(rest.substr(sp2 + 1));
          if (opt.rfind("kind=", 0) == 0) kind = opt.substr(5);
          else throw ConfigError(line_no, "unexpected token '" + opt + "' in method header");
        }
        if (kind.empty()) kind = name;
        cfg.methods.push_back(default_method(kind, line_no));
        cfg.methods.back().name = name;
        method = &cfg.methods.back();
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line_no, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "empty key");
    handle_kv(key, value, line_no);
  }

  for (const auto& m : cfg.methods) {
    for (const auto& other : cfg.methods) {
      if (&m != &other && m.name == other.name)
        throw ConfigError(0, "duplicate method name '" + m.name + "'");
    }
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  ExperimentConfig cfg = parse_experiment_config(ss.str());
  cfg.raw_text = ss.str();
  return cfg;
}

namespace detail {
void apply_sweep_value(MethodConfig& m, const std::string& field, double value) {
  set_method_field(m, field, value, 0);
}
}  // namespace detail

}  // namespace maskft
