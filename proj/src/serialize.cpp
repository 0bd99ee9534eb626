#include "maskft/serialize.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace maskft {

namespace wire {

namespace {
constexpr char kMagic[4] = {'G', 'M', 'X', 'L'};
constexpr std::uint32_t kVersion = 1;

void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error(std::string("container: truncated while reading ") + what);
}
}  // namespace

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put_bytes(os, b, 8);
}

void put_f64(std::ostream& os, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(os, bits);
}

void put_matrix(std::ostream& os, const Matrix& m) {
  put_u64(os, m.rows);
  put_u64(os, m.cols);
  for (double v : m.data) put_f64(os, v);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  get_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  get_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double get_f64(std::istream& is, const char* what) {
  std::uint64_t bits = get_u64(is, what);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

Matrix get_matrix(std::istream& is) {
  Matrix m;
  m.rows = static_cast<std::size_t>(get_u64(is, "rows"));
  m.cols = static_cast<std::size_t>(get_u64(is, "cols"));
  m.data.resize(m.rows * m.cols);
  for (double& v : m.data) v = get_f64(is, "payload");
  return m;
}

void put_header(std::ostream& os, std::uint32_t kind) {
  put_bytes(os, kMagic, 4);
  put_u32(os, kVersion);
  put_u32(os, kind);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("container: cannot open for writing: " + path);
  return os;
}

std::ifstream open_checked(const std::string& path, std::uint32_t expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("container: cannot open: " + path);
  char magic[4];
  get_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("container: bad magic in " + path);
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw std::runtime_error("container: unsupported version " + std::to_string(version));
  const std::uint32_t kind = get_u32(is, "kind");
  if (kind != expected_kind)
    throw std::runtime_error("container: wrong payload kind in " + path);
  return is;
}

}  // namespace wire

void save_params(const ParamSet& params, const std::string& path) {
  std::ofstream os = wire::open_out(path);
  wire::put_header(os, wire::kKindParams);
  const auto& spec = params.spec;
  wire::put_u64(os, spec.input_dim);
  wire::put_u64(os, spec.hidden_dims.size());
  for (std::size_t h : spec.hidden_dims) wire::put_u64(os, h);
  wire::put_u64(os, spec.feature_dim);
  wire::put_u64(os, spec.class_count);
  wire::put_u32(os, spec.activation == Activation::Tanh ? 0 : 1);
  wire::put_f64(os, spec.temperature);
  wire::put_u32(os, static_cast<std::uint32_t>(params.weights.size() * 2 + 1));
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    wire::put_matrix(os, params.weights[l]);
    wire::put_matrix(os, params.biases[l]);
  }
  wire::put_matrix(os, params.prototypes);
  if (!os) throw std::runtime_error("container: write failed: " + path);
}

ParamSet load_params(const std::string& path) {
  std::ifstream is = wire::open_checked(path, wire::kKindParams);
  ParamSet p;
  p.spec.input_dim = static_cast<std::size_t>(wire::get_u64(is, "input_dim"));
  const std::uint64_t nh = wire::get_u64(is, "hidden count");
  for (std::uint64_t i = 0; i < nh; ++i)
    p.spec.hidden_dims.push_back(static_cast<std::size_t>(wire::get_u64(is, "hidden dim")));
  p.spec.feature_dim = static_cast<std::size_t>(wire::get_u64(is, "feature_dim"));
  p.spec.class_count = static_cast<std::size_t>(wire::get_u64(is, "class_count"));
  p.spec.activation = wire::get_u32(is, "activation") == 0 ? Activation::Tanh : Activation::Relu;
  p.spec.temperature = wire::get_f64(is, "temperature");
  const std::uint32_t blocks = wire::get_u32(is, "block count");
  if (blocks != nh * 2 + 3)
    throw std::runtime_error("container: block count does not match network header");
  for (std::uint64_t l = 0; l + 1 < blocks; l += 2) {
    p.weights.push_back(wire::get_matrix(is));
    p.biases.push_back(wire::get_matrix(is));
  }
  p.prototypes = wire::get_matrix(is);
  return p;
}

void save_delta(const SparseDelta& delta, const std::string& path) {
  std::ofstream os = wire::open_out(path);
  wire::put_header(os, wire::kKindDelta);
  wire::put_u64(os, delta.indices.size());
  for (std::size_t i : delta.indices) wire::put_u64(os, i);
  for (double v : delta.values) wire::put_f64(os, v);
  if (!os) throw std::runtime_error("container: write failed: " + path);
}

SparseDelta load_delta(const std::string& path) {
  std::ifstream is = wire::open_checked(path, wire::kKindDelta);
  SparseDelta d;
  const std::uint64_t n = wire::get_u64(is, "count");
  d.indices.resize(n);
  d.values.resize(n);
  for (auto& i : d.indices) i = static_cast<std::size_t>(wire::get_u64(is, "index"));
  for (auto& v : d.values) v = wire::get_f64(is, "value");
  return d;
}

}  // namespace maskft
