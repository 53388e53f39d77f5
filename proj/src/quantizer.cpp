#include "qplan/quantizer.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <string>

namespace qplan {

namespace {

constexpr double kIntegrationLimit = 8.0;
constexpr double kCoarseLo = 0.5;
constexpr double kCoarseHi = 6.0;
constexpr double kCoarseStep = 0.01;
constexpr double kGoldenTol = 1e-6;

void check_bits(int bits)
{
    if (bits < kMinBits || bits > kMaxBits) {
        throw Error(ErrorCode::InvalidInput,
                    "bit-width " + std::to_string(bits) + " outside [1, 16]");
    }
}

double levels(int bits)
{
    return std::ldexp(1.0, bits) - 1.0;
}

double normal_pdf(double z)
{
    return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

// Composite Simpson of (z - c)^2 phi(z) over [lo, hi] with spacing close to h.
double simpson_panel(double lo, double hi, double c, double h)
{
    if (hi <= lo) {
        return 0.0;
    }
    auto n = static_cast<long>(std::ceil((hi - lo) / h));
    n = std::max(2L, n + (n & 1L));
    const double dz = (hi - lo) / static_cast<double>(n);
    auto f = [c](double z) {
        const double e = z - c;
        return e * e * normal_pdf(z);
    };
    double acc = f(lo) + f(hi);
    for (long i = 1; i < n; ++i) {
        acc += f(lo + static_cast<double>(i) * dz) * ((i & 1L) ? 4.0 : 2.0);
    }
    return acc * dz / 3.0;
}

}  // namespace

DistortionTable::DistortionTable(std::map<int, DistortionEntry> entries)
    : entries_(std::move(entries))
{
    const DistortionEntry* prev = nullptr;
    for (const auto& [b, e] : entries_) {
        check_bits(b);
        if (!(e.kappa >= 0.0) || !(e.a_star > 0.0) || !std::isfinite(e.kappa) ||
            !std::isfinite(e.a_star)) {
            throw Error(ErrorCode::InvalidInput,
                        "distortion entry for " + std::to_string(b) + " bits is not valid");
        }
        if (prev != nullptr && !(e.kappa < prev->kappa && e.a_star > prev->a_star)) {
            throw Error(ErrorCode::InvalidInput,
                        "distortion table not monotone at " + std::to_string(b) + " bits");
        }
        prev = &e;
    }
}

const DistortionEntry& DistortionTable::at(int bits) const
{
    auto it = entries_.find(bits);
    if (it == entries_.end()) {
        throw Error(ErrorCode::InvalidInput,
                    "no distortion entry for " + std::to_string(bits) + " bits");
    }
    return it->second;
}

std::vector<int> DistortionTable::bits() const
{
    std::vector<int> out;
    out.reserve(entries_.size());
    for (const auto& kv : entries_) {
        out.push_back(kv.first);
    }
    return out;
}

bool operator==(const DistortionTable& a, const DistortionTable& b)
{
    if (a.entries_.size() != b.entries_.size()) {
        return false;
    }
    for (auto ia = a.entries_.begin(), ib = b.entries_.begin(); ia != a.entries_.end(); ++ia, ++ib) {
        if (ia->first != ib->first || ia->second.kappa != ib->second.kappa ||
            ia->second.a_star != ib->second.a_star) {
            return false;
        }
    }
    return true;
}

double quantizer_step(double a, int bits)
{
    return 2.0 * a / levels(bits);
}

std::int32_t quantizer_code(double z, double a, int bits)
{
    const double clipped = std::clamp(z, -a, a);
    // clipped / a is exactly +-1 at saturation, so the tie at the clip is exact.
    const double scaled = clipped / a * (0.5 * levels(bits));
    return static_cast<std::int32_t>(std::round(scaled));
}

double clipped_uniform_quantize(double z, double a, int bits)
{
    return static_cast<double>(quantizer_code(z, a, bits)) * quantizer_step(a, bits);
}

double gaussian_quantizer_mse(double a, int bits, int integration_points)
{
    check_bits(bits);
    if (!(a > 0.0)) {
        throw Error(ErrorCode::InvalidInput, "clip must be positive");
    }
    const double delta = quantizer_step(a, bits);
    const double h = 2.0 * kIntegrationLimit / static_cast<double>(integration_points);
    const long half_levels = 1L << (bits - 1);

    // Nonnegative half line; the quantizer is odd so the integrand is even.
    double total = 0.0;
    for (long k = 0; k < half_levels; ++k) {
        const double lo = std::max(0.0, (static_cast<double>(k) - 0.5) * delta);
        if (lo >= kIntegrationLimit) {
            break;
        }
        const double hi = std::min((static_cast<double>(k) + 0.5) * delta, kIntegrationLimit);
        total += simpson_panel(lo, hi, static_cast<double>(k) * delta, h);
    }
    if (a < kIntegrationLimit) {
        total += simpson_panel(a, kIntegrationLimit, a + 0.5 * delta, h);
    }
    return 2.0 * total;
}

DistortionTable build_distortion_table(std::span<const int> bit_set, int integration_points)
{
    if (bit_set.empty()) {
        throw Error(ErrorCode::InvalidInput, "build_distortion_table: empty bit set");
    }
    if (integration_points < kMinIntegrationPoints) {
        throw Error(ErrorCode::InvalidInput,
                    "integration_points must be >= " + std::to_string(kMinIntegrationPoints));
    }
    const std::set<int> unique(bit_set.begin(), bit_set.end());
    std::map<int, DistortionEntry> entries;
    for (int b : unique) {
        check_bits(b);
        auto mse = [&](double a) { return gaussian_quantizer_mse(a, b, integration_points); };

        const auto steps = static_cast<int>(std::lround((kCoarseHi - kCoarseLo) / kCoarseStep));
        double best_a = kCoarseLo;
        double best = mse(best_a);
        for (int i = 1; i <= steps; ++i) {
            const double a = kCoarseLo + kCoarseStep * i;
            const double v = mse(a);
            if (v < best) {
                best = v;
                best_a = a;
            }
        }

        // Golden-section refinement inside the bracketing coarse cells.
        const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
        double lo = std::max(best_a - kCoarseStep, 1e-6);
        double hi = best_a + kCoarseStep;
        double x1 = hi - inv_phi * (hi - lo);
        double x2 = lo + inv_phi * (hi - lo);
        double f1 = mse(x1);
        double f2 = mse(x2);
        while (hi - lo > kGoldenTol) {
            if (f1 <= f2) {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - inv_phi * (hi - lo);
                f1 = mse(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + inv_phi * (hi - lo);
                f2 = mse(x2);
            }
        }
        const double a_star = 0.5 * (lo + hi);
        double kappa = mse(a_star);
        double chosen = a_star;
        if (best < kappa) {
            kappa = best;
            chosen = best_a;
        }
        entries.emplace(b, DistortionEntry{kappa, chosen});
    }
    return DistortionTable(std::move(entries));
}

QuantizedTensor quantize_rows_with_scales(const Matrix& m, const Vector& scales, int bits,
                                          double a_star, QuantAxis axis)
{
    check_bits(bits);
    if (scales.size() != m.rows()) {
        throw Error(ErrorCode::ShapeError, "one scale per row required");
    }
    QuantizedTensor q;
    q.bits = bits;
    q.axis = axis;
    q.step = quantizer_step(a_star, bits);
    q.scales = scales;
    q.codes.resize(m.rows(), m.cols());
    for (Index i = 0; i < m.rows(); ++i) {
        const double s = scales(i);
        for (Index j = 0; j < m.cols(); ++j) {
            q.codes(i, j) = quantizer_code(m(i, j) / s, a_star, bits);
        }
    }
    return q;
}

namespace {

Vector row_rms(const Matrix& m)
{
    Vector s(m.rows());
    for (Index i = 0; i < m.rows(); ++i) {
        s(i) = token_sigma(m.row(i));
    }
    return s;
}

}  // namespace

QuantizedTensor quantize_activations(const Matrix& x, const Matrix& h, int bits,
                                     const DistortionTable& table)
{
    if (h.rows() != h.cols() || x.cols() != h.rows()) {
        throw Error(ErrorCode::ShapeError,
                    "activations have " + std::to_string(x.cols()) + " channels, Hadamard is " +
                        std::to_string(h.rows()) + "x" + std::to_string(h.cols()));
    }
    if (!is_power_of_two(x.cols())) {
        throw Error(ErrorCode::UnsupportedDimension, "channel count must be a power of two");
    }
    // Row form of z = H^T x for every token.
    const Matrix z = x * h;
    return quantize_rows_with_scales(z, row_rms(z), bits, table.a_star(bits), QuantAxis::PerToken);
}

QuantizedTensor quantize_weights_per_channel(const Matrix& w_res, int bits,
                                             const DistortionTable& table)
{
    if (w_res.cols() == 0) {
        throw Error(ErrorCode::ShapeError, "weight has no input channels");
    }
    return quantize_rows_with_scales(w_res, row_rms(w_res), bits, table.a_star(bits),
                                     QuantAxis::PerChannel);
}

Matrix dequantize(const QuantizedTensor& q)
{
    Matrix m = q.codes.cast<double>() * q.step;
    for (Index i = 0; i < m.rows(); ++i) {
        m.row(i) *= q.scales(i);
    }
    return m;
}

}  // namespace qplan
