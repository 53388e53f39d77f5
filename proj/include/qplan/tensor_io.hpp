#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qplan/linalg.hpp"

namespace qplan {

// Container layout, all integers little-endian:
//   "QDT1" | version u16 | ndim u16 | dims u64 x ndim | dtype u8 | payload (row-major)
constexpr std::uint16_t kTensorVersion = 1;

enum class DType : std::uint8_t {
    F32 = 0,
    F64 = 1,
    I32 = 2,
};

using IntMatrix = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic>;

std::vector<std::uint8_t> encode_tensor(const Matrix& m, DType dtype = DType::F32);
std::vector<std::uint8_t> encode_tensor(const IntMatrix& m);

/// Decodes a 1-D (as a column) or 2-D tensor of any dtype into doubles.
Matrix decode_tensor(const std::vector<std::uint8_t>& bytes);
IntMatrix decode_int_tensor(const std::vector<std::uint8_t>& bytes);

void write_tensor(const Matrix& m, const std::filesystem::path& path, DType dtype = DType::F32);
void write_tensor(const IntMatrix& m, const std::filesystem::path& path);
Matrix read_tensor(const std::filesystem::path& path);
IntMatrix read_int_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Rounds every entry to the nearest float, so a matrix survives an F32 round trip.
Matrix to_float_precision(const Matrix& m);

}  // namespace qplan
