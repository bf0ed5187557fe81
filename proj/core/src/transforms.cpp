#include "sapg/transforms.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numeric>
#include <random>

namespace sapg {

ImageVector LinearOperator::apply(const ImageVector& x) const {
  if (!(x.shape() == input_shape())) {
    throw Error(ErrorKind::dimension,
                "operator input shape " + to_string(x.shape()) + " != " + to_string(input_shape()));
  }
  ImageVector out(output_shape(), output_tag());
  apply(x.values(), out.values());
  return out;
}

ImageVector LinearOperator::adjoint(const ImageVector& y) const {
  if (!(y.shape() == output_shape())) {
    throw Error(ErrorKind::dimension,
                "operator adjoint input shape " + to_string(y.shape()) + " != " + to_string(output_shape()));
  }
  ImageVector out(input_shape(), input_tag());
  adjoint(y.values(), out.values());
  return out;
}

void IdentityOperator::apply(std::span<const double> in, std::span<double> out) const {
  std::copy(in.begin(), in.end(), out.begin());
}

void IdentityOperator::adjoint(std::span<const double> in, std::span<double> out) const {
  std::copy(in.begin(), in.end(), out.begin());
}

DiagonalOperator::DiagonalOperator(Shape shape, std::vector<double> diagonal) : shape_(shape), diag_(std::move(diagonal)) {
  if (diag_.size() != shape_.size()) throw_dimension("DiagonalOperator.diagonal", shape_.size(), diag_.size());
}

void DiagonalOperator::apply(std::span<const double> in, std::span<double> out) const {
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = diag_[i] * in[i];
}

double DiagonalOperator::norm_sq() const {
  double m = 0.0;
  for (double v : diag_) m = std::max(m, v * v);
  return m;
}

ComposedOperator::ComposedOperator(OperatorPtr outer, OperatorPtr inner) : outer_(std::move(outer)), inner_(std::move(inner)) {
  if (!(outer_->input_shape() == inner_->output_shape())) {
    throw Error(ErrorKind::dimension, "ComposedOperator: inner output " + to_string(inner_->output_shape()) +
                                          " != outer input " + to_string(outer_->input_shape()));
  }
}

void ComposedOperator::apply(std::span<const double> in, std::span<double> out) const {
  std::vector<double> mid(inner_->output_shape().size());
  inner_->apply(in, mid);
  outer_->apply(mid, out);
}

void ComposedOperator::adjoint(std::span<const double> in, std::span<double> out) const {
  std::vector<double> mid(outer_->input_shape().size());
  outer_->adjoint(in, mid);
  inner_->adjoint(mid, out);
}

// ---------------------------------------------------------------------------
// Circulant blur

namespace {
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

struct FftwBuffer {
  explicit FftwBuffer(std::size_t bytes) : ptr(fftw_malloc(bytes)) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  void* ptr;
};
}  // namespace

struct CirculantBlur::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  ~Plans() {
    std::lock_guard lock(fftw_planner_mutex());
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

CirculantBlur::CirculantBlur(Shape image_shape, Shape psf_shape, std::vector<double> psf)
    : shape_(image_shape), psf_shape_(psf_shape), psf_(std::move(psf)) {
  if (psf_.size() != psf_shape_.size()) throw_dimension("CirculantBlur.psf", psf_shape_.size(), psf_.size());
  if (psf_shape_.rows > shape_.rows || psf_shape_.cols > shape_.cols) {
    throw Error(ErrorKind::dimension, "CirculantBlur: psf larger than image");
  }
  const double total = std::accumulate(psf_.begin(), psf_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-12) throw Error(ErrorKind::domain, "CirculantBlur: psf entries must sum to 1");

  const int rows = static_cast<int>(shape_.rows);
  const int cols = static_cast<int>(shape_.cols);
  const std::size_t half = shape_.cols / 2 + 1;
  const std::size_t real_n = shape_.size();
  const std::size_t cplx_n = shape_.rows * half;

  FftwBuffer real_buf(sizeof(double) * real_n);
  FftwBuffer cplx_buf(sizeof(fftw_complex) * cplx_n);
  auto* r = static_cast<double*>(real_buf.ptr);
  auto* c = static_cast<fftw_complex*>(cplx_buf.ptr);

  plans_ = std::make_shared<Plans>();
  {
    std::lock_guard lock(fftw_planner_mutex());
    plans_->forward = fftw_plan_dft_r2c_2d(rows, cols, r, c, FFTW_ESTIMATE);
    plans_->backward = fftw_plan_dft_c2r_2d(rows, cols, c, r, FFTW_ESTIMATE);
  }

  // Wrap the kernel so its centre sits at the origin.
  std::fill(r, r + real_n, 0.0);
  const std::size_t cr = psf_shape_.rows / 2;
  const std::size_t cc = psf_shape_.cols / 2;
  for (std::size_t a = 0; a < psf_shape_.rows; ++a) {
    for (std::size_t b = 0; b < psf_shape_.cols; ++b) {
      const std::size_t i = (a + shape_.rows - cr) % shape_.rows;
      const std::size_t j = (b + shape_.cols - cc) % shape_.cols;
      r[i * shape_.cols + j] += psf_[a * psf_shape_.cols + b];
    }
  }
  fftw_execute_dft_r2c(plans_->forward, r, c);
  otf_.resize(cplx_n);
  norm_sq_ = 0.0;
  for (std::size_t k = 0; k < cplx_n; ++k) {
    otf_[k] = {c[k][0], c[k][1]};
    norm_sq_ = std::max(norm_sq_, std::norm(otf_[k]));
  }
}

CirculantBlur CirculantBlur::uniform(Shape image_shape, std::size_t size) {
  const double w = 1.0 / static_cast<double>(size * size);
  return {image_shape, Shape::image(size, size), std::vector<double>(size * size, w)};
}

void CirculantBlur::filter(std::span<const double> in, std::span<double> out, bool conjugate) const {
  const std::size_t real_n = shape_.size();
  const std::size_t cplx_n = otf_.size();
  FftwBuffer real_buf(sizeof(double) * real_n);
  FftwBuffer cplx_buf(sizeof(fftw_complex) * cplx_n);
  auto* r = static_cast<double*>(real_buf.ptr);
  auto* c = static_cast<fftw_complex*>(cplx_buf.ptr);
  std::copy(in.begin(), in.end(), r);
  fftw_execute_dft_r2c(plans_->forward, r, c);
  for (std::size_t k = 0; k < cplx_n; ++k) {
    const std::complex<double> h = conjugate ? std::conj(otf_[k]) : otf_[k];
    const std::complex<double> v = std::complex<double>(c[k][0], c[k][1]) * h;
    c[k][0] = v.real();
    c[k][1] = v.imag();
  }
  fftw_execute_dft_c2r(plans_->backward, c, r);
  const double scale = 1.0 / static_cast<double>(real_n);
  for (std::size_t i = 0; i < real_n; ++i) out[i] = r[i] * scale;
}

void CirculantBlur::apply(std::span<const double> in, std::span<double> out) const { filter(in, out, false); }
void CirculantBlur::adjoint(std::span<const double> in, std::span<double> out) const { filter(in, out, true); }

// ---------------------------------------------------------------------------
// Haar wavelets

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;

std::size_t band_rows(const Shape& s, std::size_t level) { return s.is_1d ? 1 : s.rows >> level; }
std::size_t band_cols(const Shape& s, std::size_t level) { return s.cols >> level; }
}  // namespace

WaveletBasis::WaveletBasis(WaveletKind kind, std::size_t levels, Shape image_shape)
    : kind_(kind), levels_(levels), image_shape_(image_shape) {
  if (levels_ == 0) throw Error(ErrorKind::domain, "WaveletBasis: levels must be >= 1");
  if (kind_ == WaveletKind::orthogonal) {
    const std::size_t m = std::size_t{1} << levels_;
    const bool rows_ok = image_shape_.is_1d || image_shape_.rows % m == 0;
    if (!rows_ok || image_shape_.cols % m != 0) {
      throw Error(ErrorKind::dimension, "WaveletBasis: image shape " + to_string(image_shape_) +
                                            " not divisible by 2^" + std::to_string(levels_));
    }
  }
}

Shape WaveletBasis::coefficient_shape() const {
  if (kind_ == WaveletKind::orthogonal) return image_shape_;
  const std::size_t bands = 1 + bands_per_level() * levels_;
  if (image_shape_.is_1d) return Shape::line(bands * image_shape_.cols);
  return Shape::image(bands * image_shape_.rows, image_shape_.cols);
}

ImageVector WaveletBasis::analysis(const ImageVector& image) const {
  if (!(image.shape() == image_shape_)) {
    throw Error(ErrorKind::dimension, "haar_analysis: image shape " + to_string(image.shape()) + " != " +
                                          to_string(image_shape_));
  }
  ImageVector out(coefficient_shape(), DomainTag::coefficient);
  analysis(image.values(), out.values());
  return out;
}

ImageVector WaveletBasis::synthesis(const ImageVector& coeffs) const {
  if (!(coeffs.shape() == coefficient_shape())) {
    throw Error(ErrorKind::dimension, "haar_synthesis: coefficient shape " + to_string(coeffs.shape()) + " != " +
                                          to_string(coefficient_shape()));
  }
  ImageVector out(image_shape_, DomainTag::pixel);
  synthesis(coeffs.values(), out.values());
  return out;
}

void WaveletBasis::analysis(std::span<const double> image, std::span<double> coeffs) const {
  if (kind_ == WaveletKind::orthogonal) {
    analysis_orthogonal(image, coeffs);
  } else {
    analysis_undecimated(image, coeffs);
  }
}

void WaveletBasis::synthesis(std::span<const double> coeffs, std::span<double> image) const {
  if (kind_ == WaveletKind::orthogonal) {
    synthesis_orthogonal(coeffs, image);
  } else {
    synthesis_undecimated(coeffs, image);
  }
}

void WaveletBasis::analysis_orthogonal(std::span<const double> image, std::span<double> coeffs) const {
  const std::size_t cols = image_shape_.cols;
  std::vector<double> m(image.begin(), image.end());
  std::vector<double> tmp(std::max(image_shape_.rows, cols));

  for (std::size_t l = 0; l < levels_; ++l) {
    const std::size_t rr = band_rows(image_shape_, l);
    const std::size_t cc = band_cols(image_shape_, l);
    for (std::size_t r = 0; r < rr; ++r) {
      double* row = &m[r * cols];
      for (std::size_t k = 0; k < cc / 2; ++k) {
        tmp[k] = (row[2 * k] + row[2 * k + 1]) * kInvSqrt2;
        tmp[cc / 2 + k] = (row[2 * k] - row[2 * k + 1]) * kInvSqrt2;
      }
      std::copy(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(cc), row);
    }
    if (image_shape_.is_1d) continue;
    for (std::size_t c = 0; c < cc; ++c) {
      for (std::size_t k = 0; k < rr / 2; ++k) {
        const double a = m[(2 * k) * cols + c];
        const double b = m[(2 * k + 1) * cols + c];
        tmp[k] = (a + b) * kInvSqrt2;
        tmp[rr / 2 + k] = (a - b) * kInvSqrt2;
      }
      for (std::size_t r = 0; r < rr; ++r) m[r * cols + c] = tmp[r];
    }
  }

  if (image_shape_.is_1d) {
    std::copy(m.begin(), m.end(), coeffs.begin());
    return;
  }
  // Pack the Mallat layout coarse-to-fine.
  std::size_t pos = 0;
  const std::size_t ar = band_rows(image_shape_, levels_);
  const std::size_t ac = band_cols(image_shape_, levels_);
  for (std::size_t r = 0; r < ar; ++r)
    for (std::size_t c = 0; c < ac; ++c) coeffs[pos++] = m[r * cols + c];
  for (std::size_t l = levels_; l >= 1; --l) {
    const std::size_t br = band_rows(image_shape_, l);
    const std::size_t bc = band_cols(image_shape_, l);
    const std::size_t offsets[3][2] = {{0, bc}, {br, 0}, {br, bc}};
    for (const auto& off : offsets)
      for (std::size_t r = 0; r < br; ++r)
        for (std::size_t c = 0; c < bc; ++c) coeffs[pos++] = m[(off[0] + r) * cols + off[1] + c];
  }
}

void WaveletBasis::synthesis_orthogonal(std::span<const double> coeffs, std::span<double> image) const {
  const std::size_t cols = image_shape_.cols;
  std::vector<double> m(coeffs.size());
  if (image_shape_.is_1d) {
    std::copy(coeffs.begin(), coeffs.end(), m.begin());
  } else {
    std::size_t pos = 0;
    const std::size_t ar = band_rows(image_shape_, levels_);
    const std::size_t ac = band_cols(image_shape_, levels_);
    for (std::size_t r = 0; r < ar; ++r)
      for (std::size_t c = 0; c < ac; ++c) m[r * cols + c] = coeffs[pos++];
    for (std::size_t l = levels_; l >= 1; --l) {
      const std::size_t br = band_rows(image_shape_, l);
      const std::size_t bc = band_cols(image_shape_, l);
      const std::size_t offsets[3][2] = {{0, bc}, {br, 0}, {br, bc}};
      for (const auto& off : offsets)
        for (std::size_t r = 0; r < br; ++r)
          for (std::size_t c = 0; c < bc; ++c) m[(off[0] + r) * cols + off[1] + c] = coeffs[pos++];
    }
  }

  std::vector<double> tmp(std::max(image_shape_.rows, cols));
  for (std::size_t l = levels_; l-- > 0;) {
    const std::size_t rr = band_rows(image_shape_, l);
    const std::size_t cc = band_cols(image_shape_, l);
    if (!image_shape_.is_1d) {
      for (std::size_t c = 0; c < cc; ++c) {
        for (std::size_t k = 0; k < rr / 2; ++k) {
          const double a = m[k * cols + c];
          const double d = m[(rr / 2 + k) * cols + c];
          tmp[2 * k] = (a + d) * kInvSqrt2;
          tmp[2 * k + 1] = (a - d) * kInvSqrt2;
        }
        for (std::size_t r = 0; r < rr; ++r) m[r * cols + c] = tmp[r];
      }
    }
    for (std::size_t r = 0; r < rr; ++r) {
      double* row = &m[r * cols];
      for (std::size_t k = 0; k < cc / 2; ++k) {
        const double a = row[k];
        const double d = row[cc / 2 + k];
        tmp[2 * k] = (a + d) * kInvSqrt2;
        tmp[2 * k + 1] = (a - d) * kInvSqrt2;
      }
      std::copy(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(cc), row);
    }
  }
  std::copy(m.begin(), m.end(), image.begin());
}

// Undecimated transform: at level l the filters (1/2)(1, +-1) act with a
// periodic hole of 2^(l-1) samples. |H|^2 + |G|^2 = 1 makes the analysis a
// Parseval frame, so the adjoint is also the left inverse.
void WaveletBasis::analysis_undecimated(std::span<const double> image, std::span<double> coeffs) const {
  const std::size_t rows = image_shape_.rows;
  const std::size_t cols = image_shape_.cols;
  const std::size_t n = rows * cols;
  const std::size_t bpl = bands_per_level();
  std::vector<double> approx(image.begin(), image.end());
  std::vector<double> lo(n), hi(n);

  for (std::size_t l = 1; l <= levels_; ++l) {
    const std::size_t s = std::size_t{1} << (l - 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double a = approx[r * cols + c];
        const double b = approx[r * cols + (c + s) % cols];
        lo[r * cols + c] = 0.5 * (a + b);
        hi[r * cols + c] = 0.5 * (a - b);
      }
    }
    // Detail bands for level l go to band index 1 + bpl * (levels - l) + orientation - 1.
    const std::size_t first_band = 1 + bpl * (levels_ - l);
    if (image_shape_.is_1d) {
      std::copy(hi.begin(), hi.end(), coeffs.begin() + static_cast<std::ptrdiff_t>(first_band * n));
      approx = lo;
      continue;
    }
    double* hl = &coeffs[(first_band + 0) * n];
    double* lh = &coeffs[(first_band + 1) * n];
    double* hh = &coeffs[(first_band + 2) * n];
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t rs = (r + s) % rows;
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const std::size_t j = rs * cols + c;
        approx[i] = 0.5 * (lo[i] + lo[j]);
        lh[i] = 0.5 * (lo[i] - lo[j]);
        hl[i] = 0.5 * (hi[i] + hi[j]);
        hh[i] = 0.5 * (hi[i] - hi[j]);
      }
    }
  }
  std::copy(approx.begin(), approx.end(), coeffs.begin());
}

void WaveletBasis::synthesis_undecimated(std::span<const double> coeffs, std::span<double> image) const {
  const std::size_t rows = image_shape_.rows;
  const std::size_t cols = image_shape_.cols;
  const std::size_t n = rows * cols;
  const std::size_t bpl = bands_per_level();
  std::vector<double> approx(coeffs.begin(), coeffs.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<double> lo(n), hi(n);

  for (std::size_t l = levels_; l >= 1; --l) {
    const std::size_t s = std::size_t{1} << (l - 1);
    const std::size_t first_band = 1 + bpl * (levels_ - l);
    if (image_shape_.is_1d) {
      lo = approx;
      std::copy(coeffs.begin() + static_cast<std::ptrdiff_t>(first_band * n),
                coeffs.begin() + static_cast<std::ptrdiff_t>((first_band + 1) * n), hi.begin());
    } else {
      const double* hl = &coeffs[(first_band + 0) * n];
      const double* lh = &coeffs[(first_band + 1) * n];
      const double* hh = &coeffs[(first_band + 2) * n];
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t rm = (r + rows - s % rows) % rows;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          const std::size_t j = rm * cols + c;
          lo[i] = 0.5 * (approx[i] + approx[j]) + 0.5 * (lh[i] - lh[j]);
          hi[i] = 0.5 * (hl[i] + hl[j]) + 0.5 * (hh[i] - hh[j]);
        }
      }
    }
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        const std::size_t j = r * cols + (c + cols - s % cols) % cols;
        approx[i] = 0.5 * (lo[i] + lo[j]) + 0.5 * (hi[i] - hi[j]);
      }
    }
  }
  std::copy(approx.begin(), approx.end(), image.begin());
}

SubbandIndex WaveletBasis::block_index(std::size_t coefficient) const {
  if (coefficient >= coefficient_count()) throw Error(ErrorKind::dimension, "block_index: coefficient out of range");
  const std::size_t bpl = bands_per_level();
  if (kind_ == WaveletKind::undecimated) {
    const std::size_t band = coefficient / image_shape_.size();
    if (band == 0) return {levels_, 0};
    return {levels_ - (band - 1) / bpl, static_cast<int>((band - 1) % bpl) + 1};
  }
  std::size_t pos = band_rows(image_shape_, levels_) * band_cols(image_shape_, levels_);
  if (coefficient < pos) return {levels_, 0};
  for (std::size_t l = levels_; l >= 1; --l) {
    const std::size_t band = band_rows(image_shape_, l) * band_cols(image_shape_, l);
    if (coefficient < pos + bpl * band) return {l, static_cast<int>((coefficient - pos) / band) + 1};
    pos += bpl * band;
  }
  return {1, static_cast<int>(bpl)};
}

BlockList WaveletBasis::level_blocks() const {
  BlockList blocks;
  const std::size_t bpl = bands_per_level();
  if (kind_ == WaveletKind::undecimated) {
    const std::size_t n = image_shape_.size();
    blocks.push_back({0, n, 1.0});
    for (std::size_t l = 0; l < levels_; ++l) blocks.push_back({n + l * bpl * n, bpl * n, 1.0});
    return blocks;
  }
  std::size_t pos = band_rows(image_shape_, levels_) * band_cols(image_shape_, levels_);
  blocks.push_back({0, pos, 1.0});
  for (std::size_t l = levels_; l >= 1; --l) {
    const std::size_t size = bpl * band_rows(image_shape_, l) * band_cols(image_shape_, l);
    blocks.push_back({pos, size, 1.0});
    pos += size;
  }
  return blocks;
}

// ---------------------------------------------------------------------------
// Noise and metrics

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "laplace") return NoiseKind::laplace;
  throw Error(ErrorKind::config, "unknown noise kind '" + s + "'");
}

std::string to_string(NoiseKind kind) { return kind == NoiseKind::gaussian ? "gaussian" : "laplace"; }

double sigma2_for_snr(const ImageVector& x, double snr_db) {
  if (!std::isfinite(snr_db)) throw Error(ErrorKind::domain, "add_noise: snr_db must be finite");
  const double energy = vec::norm2_sq(x.values());
  if (energy == 0.0) throw Error(ErrorKind::domain, "add_noise: signal is identically zero");
  return energy / static_cast<double>(x.size()) * std::pow(10.0, -snr_db / 10.0);
}

NoisyObservation add_noise(const ImageVector& x, double snr_db, NoiseKind kind, std::uint64_t seed) {
  const double sigma2 = sigma2_for_snr(x, snr_db);
  std::mt19937_64 rng(seed);
  NoisyObservation obs{x, sigma2};
  if (kind == NoiseKind::gaussian) {
    std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
    for (double& v : obs.y.raw()) v += normal(rng);
  } else {
    // Laplace(0, b) has variance 2 b^2; sampled as the difference of two exponentials.
    const double b = std::sqrt(sigma2 / 2.0);
    std::exponential_distribution<double> expo(1.0);
    for (double& v : obs.y.raw()) {
      const double e1 = expo(rng);
      const double e2 = expo(rng);
      v += b * (e1 - e2);
    }
  }
  return obs;
}

double mse_db(const ImageVector& x, const ImageVector& ref) {
  x.require_same_shape(ref, "mse_db.ref");
  const double mse = vec::dist_sq(x.values(), ref.values()) / static_cast<double>(x.size());
  if (mse == 0.0) return -kExactPsnr;
  return 10.0 * std::log10(mse);
}

double psnr(const ImageVector& x, const ImageVector& ref) { return -mse_db(x, ref); }

}  // namespace sapg
