#include "clawno/fft.hpp"

#include <fftw3.h>

#include <mutex>
#include <stdexcept>

namespace clawno {

namespace {
std::mutex& planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace

struct FftPlan::Impl {
    fftw_plan fwd = nullptr;
    fftw_plan bwd = nullptr;
};

FftPlan::FftPlan(std::vector<std::size_t> dims) : dims_(std::move(dims)), impl_(std::make_unique<Impl>()) {
    if (dims_.empty()) throw std::invalid_argument("FFT needs at least one dimension");
    size_ = 1;
    std::vector<int> n(dims_.size());
    for (std::size_t k = 0; k < dims_.size(); ++k) {
        if (dims_[k] == 0) throw std::invalid_argument("FFT dimension of size zero");
        n[k] = int(dims_[k]);
        size_ *= dims_[k];
    }
    std::vector<Complex> scratch(size_);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    std::lock_guard lock(planner_mutex());
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    impl_->fwd = fftw_plan_dft(int(n.size()), n.data(), buf, buf, FFTW_FORWARD, flags);
    impl_->bwd = fftw_plan_dft(int(n.size()), n.data(), buf, buf, FFTW_BACKWARD, flags);
    if (!impl_->fwd || !impl_->bwd) throw std::runtime_error("FFTW planning failed");
}

FftPlan::~FftPlan() {
    if (!impl_) return;
    std::lock_guard lock(planner_mutex());
    if (impl_->fwd) fftw_destroy_plan(impl_->fwd);
    if (impl_->bwd) fftw_destroy_plan(impl_->bwd);
}

FftPlan::FftPlan(FftPlan&&) noexcept = default;
FftPlan& FftPlan::operator=(FftPlan&&) noexcept = default;

void FftPlan::forward(std::span<Complex> data) const {
    if (data.size() != size_) throw std::invalid_argument("FFT buffer size mismatch");
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(impl_->fwd, buf, buf);
}

void FftPlan::inverse(std::span<Complex> data) const {
    if (data.size() != size_) throw std::invalid_argument("FFT buffer size mismatch");
    auto* buf = reinterpret_cast<fftw_complex*>(data.data());
    fftw_execute_dft(impl_->bwd, buf, buf);
    const double scale = 1.0 / double(size_);
    for (auto& z : data) z *= scale;
}

void FftPlan::forward_real(std::span<const double> in, std::span<Complex> out) const {
    if (in.size() != size_ || out.size() != size_)
        throw std::invalid_argument("FFT buffer size mismatch");
    for (std::size_t i = 0; i < size_; ++i) out[i] = Complex(in[i], 0.0);
    forward(out);
}

}  // namespace clawno
