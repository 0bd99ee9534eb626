#pragma once

#include <fstream>
#include <iosfwd>
#include <string>

#include "maskft/net.hpp"
#include "maskft/param.hpp"

namespace maskft {

// Little-endian binary container, shared by checkpoints and dataset dumps.
//
//   magic   "GMXL" (4 bytes)
//   version u32 (currently 1)
//   kind    u32 (1 = ParamSet, 2 = SparseDelta, 3 = labeled matrix set)
//
// ParamSet payload: network header (input_dim u64, hidden count u64 +
// dims, feature_dim u64, class_count u64, activation u32, temperature f64),
// then a shape table (block count u32, rows/cols u64 per block) and the
// f64 payload per block, in global-index order.
//
// SparseDelta payload: count u64, indices u64[count], values f64[count].
//
// Labeled matrix set payload: entry count u32, then per entry a name
// (u32 length + bytes), rows/cols u64, f64 payload, and an i32 label row
// (cols entries) when the flag byte is set.

void save_params(const ParamSet& params, const std::string& path);
ParamSet load_params(const std::string& path);

void save_delta(const SparseDelta& delta, const std::string& path);
SparseDelta load_delta(const std::string& path);

/// Low-level little-endian primitives shared by every container writer.
namespace wire {
void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_f64(std::ostream& os, double v);
void put_matrix(std::ostream& os, const Matrix& m);
std::uint32_t get_u32(std::istream& is, const char* what);
std::uint64_t get_u64(std::istream& is, const char* what);
double get_f64(std::istream& is, const char* what);
Matrix get_matrix(std::istream& is);
/// Writes magic + version + kind.
void put_header(std::ostream& os, std::uint32_t kind);
/// Opens and checks magic/version/kind; throws std::runtime_error otherwise.
std::ifstream open_checked(const std::string& path, std::uint32_t expected_kind);
std::ofstream open_out(const std::string& path);

constexpr std::uint32_t kKindParams = 1;
constexpr std::uint32_t kKindDelta = 2;
constexpr std::uint32_t kKindMatrixSet = 3;
}  // namespace wire

}  // namespace maskft
