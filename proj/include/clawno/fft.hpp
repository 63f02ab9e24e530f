#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

namespace clawno {

using Complex = std::complex<double>;

/**
 * Complex-to-complex FFT over a row-major multi-dimensional array.
 *
 * forward() is unnormalized, inverse() divides by the total size, so
 * inverse(forward(x)) == x. Execution is safe from multiple threads; planning
 * is serialized internally.
 */
class FftPlan {
public:
    explicit FftPlan(std::vector<std::size_t> dims);
    ~FftPlan();
    FftPlan(const FftPlan&) = delete;
    FftPlan& operator=(const FftPlan&) = delete;
    FftPlan(FftPlan&&) noexcept;
    FftPlan& operator=(FftPlan&&) noexcept;

    std::size_t size() const { return size_; }
    const std::vector<std::size_t>& dims() const { return dims_; }

    /// In-place transforms on a buffer of size() entries.
    void forward(std::span<Complex> data) const;
    void inverse(std::span<Complex> data) const;

    /// Convenience: real input promoted to complex, then forward().
    void forward_real(std::span<const double> in, std::span<Complex> out) const;

private:
    struct Impl;
    std::vector<std::size_t> dims_;
    std::size_t size_ = 0;
    std::unique_ptr<Impl> impl_;
};

/// Signed integer frequency of FFT bin `k` on an axis of `n` points
/// (0, 1, ..., n/2-1, -n/2, ..., -1).
inline long signed_frequency(std::size_t k, std::size_t n) {
    return k < (n + 1) / 2 ? long(k) : long(k) - long(n);
}

}  // namespace clawno
