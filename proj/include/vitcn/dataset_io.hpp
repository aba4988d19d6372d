#pragma once

#include <string>
#include <vector>

#include "vitcn/rpm.hpp"

namespace vitcn {

// RPMS container, all little-endian:
//   "RPMS" | version u16 | problem count u32
//   per problem:
//     config u8 | answer u8 | seed u64 | rule bytes (3 x u8)
//     17 panel records (9 matrix + 8 candidates), 17 bytes each:
//       entity count u8, then 4 entity slots of (shape u8, size u8, color u8,
//       cell u8), unused slots zeroed
//     16 rasters of 96*96 bytes (pixel = round(value * 255))
// Rule byte: 0 constant, 1..4 progression (+1, -1, +2, -2), 5 distribute-three.

inline constexpr uint16_t kDatasetVersion = 1;
inline constexpr int64_t kDatasetHeaderBytes = 4 + 2 + 4;
inline constexpr int64_t kPanelRecordBytes = 1 + 4 * 4;
inline constexpr int64_t kProblemRecordBytes =
    1 + 1 + 8 + 3 + 17 * kPanelRecordBytes + 16 * kPanelPixels;

inline constexpr int64_t dataset_file_bytes(int64_t problem_count) {
    return kDatasetHeaderBytes + problem_count * kProblemRecordBytes;
}

void write_dataset(const std::vector<RpmProblem>& problems, const std::string& path);
std::vector<RpmProblem> read_dataset(const std::string& path);

} // namespace vitcn
