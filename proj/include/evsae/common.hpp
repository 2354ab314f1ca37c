#pragma once

#include <bit>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace evsae {

static_assert(std::endian::native == std::endian::little,
              "on-disk format is little-endian; big-endian hosts are unsupported");

// ---------------------------------------------------------------------------
// Error taxonomy. Every named failure mode in the toolkit is a distinct type
// so callers (and tests) can catch exactly what they expect.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : Error { using Error::Error; };
struct MissingFile : Error { using Error::Error; };
struct FormatVersionMismatch : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteActivation : Error { using Error::Error; };
struct UnknownLayer : Error { using Error::Error; };
struct InvalidBudget : Error { using Error::Error; };
struct DivergedLoss : Error { using Error::Error; };
struct DegenerateVariance : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct AllZeroDescriptor : Error { using Error::Error; };
struct AnnotatorUnavailable : Error { using Error::Error; };
struct MalformedAnnotation : Error { using Error::Error; };
struct EmptyClusterSet : Error { using Error::Error; };
struct InsufficientAliveFeatures : Error { using Error::Error; };
struct ZeroState : Error { using Error::Error; };
struct InvalidConfig : Error { using Error::Error; };
struct HookShapeMismatch : Error { using Error::Error; };
struct DegenerateClassSplit : Error { using Error::Error; };

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 is fully specified by the standard; the
// distributions below are hand-rolled so streams are identical on every
// platform (std::normal_distribution et al. are implementation-defined).
// ---------------------------------------------------------------------------

class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n)
    uint64_t below(uint64_t n) {
        if (n == 0) throw Error("Rng::below: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do { x = gen_(); } while (x >= limit);
        return x % n;
    }

    // standard normal via Marsaglia polar (no trig, stable across libms)
    double normal() {
        if (have_spare_) { have_spare_ = false; return spare_; }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        have_spare_ = true;
        return u * f;
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates, explicit draws for cross-platform reproducibility
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct elements of `pool`, order randomized, pool untouched
    template <typename T>
    std::vector<T> sample(std::vector<T> pool, size_t k) {
        if (k > pool.size()) throw Error("Rng::sample: k exceeds pool size");
        for (size_t i = 0; i < k; ++i) {
            const size_t j = i + static_cast<size_t>(below(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Formatting helpers. All report output goes through snprintf with explicit
// precision so emitted bytes are identical across runs.
// ---------------------------------------------------------------------------

__attribute__((format(printf, 1, 2)))
inline std::string format(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    char buf[512];
    vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    return std::string(buf);
}

// "48.8% (-21.2)" — success rate with delta in percentage points
inline std::string format_sr_with_delta(double sr, double delta_pp) {
    return format("%.1f%% (%+.1f)", 100.0 * sr, delta_pp);
}

// "86.7 ± 3.8" — mean/stddev success rate in percent
inline std::string format_mean_std(double mean, double stddev) {
    return format("%.1f \xC2\xB1 %.1f", 100.0 * mean, 100.0 * stddev);
}

// "70.0%" — plain success rate
inline std::string format_sr(double sr) { return format("%.1f%%", 100.0 * sr); }

}  // namespace evsae
