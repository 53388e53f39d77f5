#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/special_functions/erf.hpp>

#include "qplan/error.hpp"

namespace qplan::oracle {

std::string to_string(Method m)
{
    switch (m) {
    case Method::MonteCarlo: return "monte-carlo";
    case Method::Exhaustive: return "exhaustive";
    case Method::NumericIntegration: return "numeric-integration";
    case Method::Analytic: return "analytic";
    }
    return "unknown";
}

double reference_quantize(double z, double a, int bits)
{
    const double levels = std::ldexp(1.0, bits) - 1.0;  // 2^b - 1
    const double step = 2.0 * a / levels;
    const double c = std::min(std::max(z, -a), a);
    const double scaled = c / a * levels / 2.0;
    const double code = scaled >= 0.0 ? std::floor(scaled + 0.5) : -std::floor(-scaled + 0.5);
    return code * step;
}

OracleResult mc_gaussian_mse(double sigma, int bits, double a, std::int64_t samples, std::uint64_t seed)
{
    if (samples < kMinMcSamples) {
        throw Error(ErrorCode::InvalidInput, "mc_gaussian_mse needs at least 1e6 samples");
    }
    if (sigma == 0.0) {
        return {0.0, Method::MonteCarlo, samples};
    }
    // Independent stream: 64-bit Mersenne twister feeding the Marsaglia polar method.
    std::mt19937_64 gen(seed);
    auto unit = [&] { return static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
    long double acc = 0.0L;
    std::int64_t n = 0;
    while (n < samples) {
        double x, y, s;
        do {
            x = unit();
            y = unit();
            s = x * x + y * y;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        for (double g : {x * f, y * f}) {
            if (n == samples) break;
            const double z = sigma * g;
            const double e = reference_quantize(z, a, bits) - z;
            acc += static_cast<long double>(e * e);
            ++n;
        }
    }
    return {static_cast<double>(acc / static_cast<long double>(samples)), Method::MonteCarlo, samples};
}

OracleResult stratified_gaussian_mse(double sigma, int bits, double a, std::int64_t samples, std::uint64_t seed)
{
    if (samples < kMinMcSamples) {
        throw Error(ErrorCode::InvalidInput, "stratified_gaussian_mse needs at least 1e6 samples");
    }
    if (sigma == 0.0) {
        return {0.0, Method::MonteCarlo, samples};
    }
    std::mt19937_64 gen(seed);
    const double n = static_cast<double>(samples);
    long double acc = 0.0L;
    for (std::int64_t i = 0; i < samples; ++i) {
        double u = (static_cast<double>(i) + static_cast<double>(gen() >> 11) * 0x1.0p-53) / n;
        u = std::min(std::max(u, 1e-300), 1.0 - 0x1.0p-53);
        const double z = -sigma * std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u);
        const double e = reference_quantize(z, a, bits) - z;
        acc += static_cast<long double>(e * e);
    }
    return {static_cast<double>(acc / static_cast<long double>(samples)), Method::MonteCarlo, samples};
}

namespace {

double phi(double x)
{
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

double cdf(double x)
{
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

// Integral of (z - c)^2 phi(z) over [l, u]; l may be -inf and u +inf.
double cell_error(double l, double u, double c)
{
    auto zphi = [](double z) { return std::isinf(z) ? 0.0 : z * phi(z); };
    auto ph = [](double z) { return std::isinf(z) ? 0.0 : phi(z); };
    const double mass = cdf(u) - cdf(l);
    const double second = mass - (zphi(u) - zphi(l));
    const double first = -(ph(u) - ph(l));
    return second - 2.0 * c * first + c * c * mass;
}

}  // namespace

OracleResult analytic_gaussian_mse(double a, int bits)
{
    const double levels = std::ldexp(1.0, bits) - 1.0;
    const double step = 2.0 * a / levels;
    const auto top = static_cast<std::int64_t>(std::ldexp(1.0, bits - 1));
    const double inf = std::numeric_limits<double>::infinity();
    double total = 0.0;
    std::int64_t cells = 0;
    // Code k covers [(k - 1/2) step, (k + 1/2) step); the outermost codes
    // absorb everything beyond the clip point, which sits at (top - 1/2) step.
    for (std::int64_t k = -top; k <= top; ++k) {
        const double l = k == -top ? -inf : (static_cast<double>(k) - 0.5) * step;
        const double u = k == top ? inf : (static_cast<double>(k) + 0.5) * step;
        total += cell_error(l, u, static_cast<double>(k) * step);
        ++cells;
    }
    return {total, Method::Analytic, cells};
}

double analytic_optimal_clip(int bits, double lo, double hi, int grid)
{
    double best_a = lo;
    double best = analytic_gaussian_mse(lo, bits).value;
    for (int i = 1; i < grid; ++i) {
        const double a = lo + (hi - lo) * i / (grid - 1);
        const double v = analytic_gaussian_mse(a, bits).value;
        if (v < best) {
            best = v;
            best_a = a;
        }
    }
    return best_a;
}

AllocationResult exhaustive_allocation(const std::vector<LayerStats>& stats, double b_target, int b_min,
                                       int b_max)
{
    std::vector<std::size_t> active;
    double total_n = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats[i].active) {
            active.push_back(i);
            total_n += static_cast<double>(stats[i].param_count);
        }
    }
    const auto budget = static_cast<std::int64_t>(std::floor(b_target * total_n));
    AllocationResult best;
    best.bits.resize(stats.size());
    std::vector<int> cur(active.size(), b_min);
    const int span = b_max - b_min + 1;
    std::int64_t combos = 1;
    for (std::size_t k = 0; k < active.size(); ++k) combos *= span;

    for (std::int64_t c = 0; c < combos; ++c) {
        std::int64_t rest = c;
        for (std::size_t k = active.size(); k-- > 0;) {
            cur[k] = b_min + static_cast<int>(rest % span);
            rest /= span;
        }
        std::int64_t used = 0;
        double obj = 0.0;
        for (std::size_t k = 0; k < active.size(); ++k) {
            const auto& s = stats[active[k]];
            used += s.param_count * cur[k];
            obj += static_cast<double>(s.param_count) * s.mean_var / std::pow(4.0, cur[k]);
        }
        ++best.states;
        if (used > budget) continue;
        if (!best.feasible || obj < best.objective) {
            best.feasible = true;
            best.objective = obj;
            for (std::size_t k = 0; k < active.size(); ++k) best.bits[active[k]] = cur[k];
        }
    }
    return best;
}

ScheduleResult exhaustive_schedule(const std::vector<double>& variances, double b_target,
                                   const std::vector<int>& bit_set,
                                   const std::function<double(int)>& kappa, int max_segments)
{
    std::vector<int> bits = bit_set;
    std::sort(bits.begin(), bits.end());
    bits.erase(std::unique(bits.begin(), bits.end()), bits.end());
    const auto T = variances.size();
    const auto budget = static_cast<std::int64_t>(std::floor(b_target * static_cast<double>(T)));
    const std::size_t limit = max_segments == 0 ? T : static_cast<std::size_t>(max_segments);

    ScheduleResult best;
    std::vector<std::size_t> digit(T, 0);
    for (;;) {
        ++best.states;
        std::int64_t used = 0;
        double cost = 0.0;
        int runs = 0;
        for (std::size_t t = 0; t < T; ++t) {
            const int b = bits[digit[t]];
            used += b;
            cost += kappa(b) * variances[t];
            if (t == 0 || digit[t] != digit[t - 1]) ++runs;
        }
        if (used <= budget && static_cast<std::size_t>(runs) <= limit) {
            bool take = !best.feasible;
            if (!take) {
                const double tol = 1e-12 * std::max(std::abs(cost), std::abs(best.cost));
                if (cost < best.cost - tol) {
                    take = true;
                } else if (cost <= best.cost + tol && runs < best.segments) {
                    take = true;
                }
            }
            if (take) {
                best.feasible = true;
                best.cost = cost;
                best.segments = runs;
                best.bits.clear();
                for (std::size_t t = 0; t < T; ++t) best.bits.push_back(bits[digit[t]]);
            }
        }
        // Next sequence in lexicographic order.
        std::size_t t = T;
        while (t > 0 && digit[t - 1] + 1 == bits.size()) {
            digit[t - 1] = 0;
            --t;
        }
        if (t == 0) break;
        ++digit[t - 1];
    }
    return best;
}

BlockSearchResult exhaustive_block_search(const Matrix& w_res, Index r)
{
    const Index out = w_res.rows();
    const Index in = w_res.cols();
    const std::int64_t cap = static_cast<std::int64_t>(r) * (out + in);
    struct Scored {
        BlockConfig cfg;
        double err;
    };
    std::vector<Scored> scored;
    for (Index so = 1; so <= out; ++so) {
        if (out % so != 0) continue;
        for (Index si = 1; si <= in; ++si) {
            if (in % si != 0) continue;
            const std::int64_t b = (out / so) * (in / si) * (so + si + 1);
            if (b > cap) continue;
            double tail = 0.0;
            for (Index p = 0; p < out; p += so) {
                for (Index q = 0; q < in; q += si) {
                    const auto f = svd(w_res.block(p, q, so, si));
                    for (Index k = 1; k < f.singular_values.size(); ++k) {
                        tail += f.singular_values(k) * f.singular_values(k);
                    }
                }
            }
            scored.push_back({{so, si, b}, std::sqrt(tail)});
        }
    }
    if (scored.empty()) {
        throw Error(ErrorCode::NoFeasibleConfig, "no tiling fits the budget");
    }
    double min_err = scored.front().err;
    for (const auto& s : scored) min_err = std::min(min_err, s.err);
    const double tol = 1e-9 * std::max(w_res.norm(), 1e-300);
    const Scored* pick = nullptr;
    for (const auto& s : scored) {
        if (s.err > min_err + tol) continue;
        if (pick == nullptr) {
            pick = &s;
            continue;
        }
        const auto key = [](const BlockConfig& c) {
            return std::tuple(c.budget, std::abs(c.s_o - c.s_i), c.s_o);
        };
        if (key(s.cfg) < key(pick->cfg)) pick = &s;
    }
    return {pick->cfg, pick->err, static_cast<std::int64_t>(scored.size())};
}

double spearman(const std::vector<double>& a, const std::vector<double>& b)
{
    if (a.size() != b.size() || a.size() < 2) {
        throw Error(ErrorCode::InvalidInput, "spearman needs two equal-length samples");
    }
    auto ranks = [](const std::vector<double>& v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double num = 0.0, da = 0.0, db = 0.0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return (da == 0.0 || db == 0.0) ? 0.0 : num / std::sqrt(da * db);
}

}  // namespace qplan::oracle
