#include "svcca/linalg.hpp"

#include <numbers>

#include <unsupported/Eigen/FFT>

namespace svcca::linalg {

namespace {

std::atomic<FlopTally*> g_active_tally{nullptr};

using cd = std::complex<double>;

VectorXcd direct_dft(const VectorXcd& x, double sign) {
  const Index n = x.size();
  VectorXcd out = VectorXcd::Zero(n);
  for (Index k = 0; k < n; ++k) {
    cd acc{0.0, 0.0};
    for (Index j = 0; j < n; ++j) {
      // reduce jk mod n before the angle to keep the twiddle exact for large n
      const double angle = sign * 2.0 * std::numbers::pi * double((j * k) % n) / double(n);
      acc += x(j) * cd(std::cos(angle), std::sin(angle));
    }
    out(k) = acc;
  }
  add_flops(FlopKind::transforms, 8.0 * double(n) * double(n));
  return out;
}

VectorXcd transform(const VectorXcd& x, bool inverse) {
  const Index n = x.size();
  if (n <= 1) return x;  // kissfft mishandles a single point
  VectorXcd out;
  if (is_power_of_two(n)) {
    thread_local Eigen::FFT<double> fft = [] {
      Eigen::FFT<double> f;
      f.SetFlag(Eigen::FFT<double>::Unscaled);
      return f;
    }();
    if (inverse)
      fft.inv(out, x);
    else
      fft.fwd(out, x);
    add_flops(FlopKind::transforms, 5.0 * double(n) * std::log2(double(std::max<Index>(n, 2))));
  } else {
    out = direct_dft(x, inverse ? 1.0 : -1.0);
  }
  return out / std::sqrt(double(n));
}

MatrixXcd transform2(const MatrixXcd& c, bool inverse) {
  if (c.rows() != c.cols()) throw FormatError("dft2: channel must be square");
  const Index n = c.rows();
  MatrixXcd tmp(n, n);
  for (Index j = 0; j < n; ++j) tmp.col(j) = transform(c.col(j), inverse);
  MatrixXcd out(n, n);
  for (Index i = 0; i < n; ++i) out.row(i) = transform(tmp.row(i).transpose(), inverse).transpose();
  return out;
}

}  // namespace

void add_flops(FlopKind kind, double count) {
  FlopTally* tally = g_active_tally.load(std::memory_order_acquire);
  if (tally == nullptr) return;
  const auto n = static_cast<std::uint64_t>(count);
  switch (kind) {
    case FlopKind::decomposition: tally->decomposition += n; break;
    case FlopKind::products: tally->products += n; break;
    case FlopKind::transforms: tally->transforms += n; break;
  }
}

FlopScope::FlopScope(FlopTally& tally) : previous_(g_active_tally.exchange(&tally)) {}

FlopScope::~FlopScope() { g_active_tally.store(previous_); }

bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

MatrixXcd dft_matrix(Index n) {
  MatrixXcd f(n, n);
  const double scale = 1.0 / std::sqrt(double(n));
  for (Index j = 0; j < n; ++j)
    for (Index k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * double((j * k) % n) / double(n);
      f(j, k) = scale * cd(std::cos(angle), std::sin(angle));
    }
  return f;
}

VectorXcd dft(const VectorXcd& x) { return transform(x, false); }
VectorXcd idft(const VectorXcd& x) { return transform(x, true); }

MatrixXcd dft2(const MatrixXcd& channel) { return transform2(channel, false); }
MatrixXcd idft2(const MatrixXcd& spectrum) { return transform2(spectrum, true); }

}  // namespace svcca::linalg
