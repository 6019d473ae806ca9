#pragma once

#include <cstdint>
#include <random>

namespace tna {

/// Deterministic random stream identified by (seed, stream_id).
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. All distributions are implemented here rather than taken from
/// <random>, whose distribution algorithms are implementation-defined.
class SeededRng {
public:
    SeededRng(std::uint64_t seed, std::uint64_t stream_id = 0);

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform();

    /// Uniform integer on [0, bound). bound must be > 0.
    std::uint64_t uniform_index(std::uint64_t bound);

    /// Standard normal (Marsaglia polar method).
    double normal();

    /// Gamma(shape, 1) via Marsaglia-Tsang; shape < 1 uses the U^(1/a) boost.
    double gamma(double shape);

    /// A child stream derived from this stream's seed.
    SeededRng child(std::uint64_t stream_id) const { return SeededRng(seed_, stream_id); }

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::mt19937_64 engine_;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

/// Beta(alpha, beta) draw as X / (X + Y), X ~ Gamma(alpha), Y ~ Gamma(beta).
double sample_beta(double alpha, double beta, SeededRng& rng);

}  // namespace tna
