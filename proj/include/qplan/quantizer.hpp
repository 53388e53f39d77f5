#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "qplan/linalg.hpp"

namespace qplan {

/// Scale assigned to an all-zero token or channel; its codes stay at zero.
constexpr double kSigmaFloor = 1e-8;
constexpr int kDefaultIntegrationPoints = 20000;
constexpr int kMinIntegrationPoints = 1024;
constexpr int kMinBits = 1;
constexpr int kMaxBits = 16;

/// MSE-optimal clip for the b-bit clipped uniform quantizer on N(0, 1).
struct DistortionEntry {
    double kappa = 0.0;   // minimum normalized MSE
    double a_star = 0.0;  // clip, in standard deviations
};

/// kappa(b) / A*(b) lookup. Immutable once built; kappa strictly decreases and
/// a_star strictly increases with b.
class DistortionTable {
public:
    DistortionTable() = default;
    explicit DistortionTable(std::map<int, DistortionEntry> entries);

    bool contains(int bits) const { return entries_.count(bits) != 0; }
    const DistortionEntry& at(int bits) const;
    double kappa(int bits) const { return at(bits).kappa; }
    double a_star(int bits) const { return at(bits).a_star; }
    std::vector<int> bits() const;
    bool empty() const { return entries_.empty(); }
    const std::map<int, DistortionEntry>& entries() const { return entries_; }

    friend bool operator==(const DistortionTable& a, const DistortionTable& b);

private:
    std::map<int, DistortionEntry> entries_;
};

/// Step of the b-bit grid with clip a: 2a / (2^b - 1).
double quantizer_step(double a, int bits);

/// Integer grid index of clipped_uniform_quantize(z, a, b). Ties round away from zero.
std::int32_t quantizer_code(double z, double a, int bits);

/// step * round(clip(z, -a, a) / step). Saturates at a + step / 2.
double clipped_uniform_quantize(double z, double a, int bits);

/// E[(Z - Q_{a,b}(Z))^2] for Z ~ N(0, 1), by composite Simpson on [-8, 8]. The
/// grid is split at every decision threshold so each panel integrates a smooth
/// function.
double gaussian_quantizer_mse(double a, int bits, int integration_points = kDefaultIntegrationPoints);

/// Minimizes gaussian_quantizer_mse over the clip for each requested bit-width.
DistortionTable build_distortion_table(std::span<const int> bit_set,
                                       int integration_points = kDefaultIntegrationPoints);

template <typename Derived>
double token_sigma(const Eigen::MatrixBase<Derived>& row)
{
    if (row.size() == 0) {
        throw Error(ErrorCode::InvalidInput, "token_sigma: empty token");
    }
    const double ms = row.template cast<double>().squaredNorm() / static_cast<double>(row.size());
    return ms > 0.0 ? std::sqrt(ms) : kSigmaFloor;
}

enum class QuantAxis { PerToken, PerChannel };

/// Integer codes with one scale per row (a token for activations, an output
/// channel for weights). Value = codes(i, j) * step * scales(i).
struct QuantizedTensor {
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic> codes;
    Vector scales;
    int bits = 0;
    double step = 0.0;  // normalized step, 2 A*(b) / (2^b - 1)
    QuantAxis axis = QuantAxis::PerToken;

    Index rows() const { return codes.rows(); }
    Index cols() const { return codes.cols(); }

    friend bool operator==(const QuantizedTensor& a, const QuantizedTensor& b)
    {
        return a.bits == b.bits && a.step == b.step && a.axis == b.axis &&
               a.codes.rows() == b.codes.rows() && a.codes.cols() == b.codes.cols() &&
               a.codes == b.codes && a.scales.size() == b.scales.size() && a.scales == b.scales;
    }
};

/// Quantizes each row r as scales(r) * Q(row / scales(r)) with clip a_star.
QuantizedTensor quantize_rows_with_scales(const Matrix& m, const Vector& scales, int bits,
                                          double a_star, QuantAxis axis);

/// Hadamard-rotates each token (row of x), then quantizes it with its own RMS scale.
QuantizedTensor quantize_activations(const Matrix& x, const Matrix& h, int bits,
                                     const DistortionTable& table);

/// Per-output-channel quantization of a (Hadamard-domain) weight residual.
QuantizedTensor quantize_weights_per_channel(const Matrix& w_res, int bits,
                                             const DistortionTable& table);

Matrix dequantize(const QuantizedTensor& q);

}  // namespace qplan
