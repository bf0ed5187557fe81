#pragma once

#include <complex>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sapg/blocks.hpp"
#include "sapg/image.hpp"

namespace sapg {

/// Linear map between flat arrays with a consistent adjoint.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual Shape input_shape() const = 0;
  virtual Shape output_shape() const = 0;
  virtual DomainTag input_tag() const { return DomainTag::pixel; }
  virtual DomainTag output_tag() const { return DomainTag::pixel; }

  virtual void apply(std::span<const double> in, std::span<double> out) const = 0;
  virtual void adjoint(std::span<const double> in, std::span<double> out) const = 0;

  /// Upper bound on the squared operator norm.
  virtual double norm_sq() const = 0;
  /// True when A * A^T is the identity (rows orthonormal).
  virtual bool is_coisometry() const { return false; }

  ImageVector apply(const ImageVector& x) const;
  ImageVector adjoint(const ImageVector& y) const;
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(Shape shape, DomainTag tag = DomainTag::pixel) : shape_(shape), tag_(tag) {}
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  DomainTag input_tag() const override { return tag_; }
  DomainTag output_tag() const override { return tag_; }
  void apply(std::span<const double> in, std::span<double> out) const override;
  void adjoint(std::span<const double> in, std::span<double> out) const override;
  double norm_sq() const override { return 1.0; }
  bool is_coisometry() const override { return true; }
  using LinearOperator::adjoint;
  using LinearOperator::apply;

 private:
  Shape shape_;
  DomainTag tag_;
};

/// Positive diagonal scaling; used as a gradient preconditioner.
class DiagonalOperator final : public LinearOperator {
 public:
  DiagonalOperator(Shape shape, std::vector<double> diagonal);
  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  void apply(std::span<const double> in, std::span<double> out) const override;
  void adjoint(std::span<const double> in, std::span<double> out) const override { apply(in, out); }
  double norm_sq() const override;
  using LinearOperator::adjoint;
  using LinearOperator::apply;

 private:
  Shape shape_;
  std::vector<double> diag_;
};

/// outer * inner.
class ComposedOperator final : public LinearOperator {
 public:
  ComposedOperator(OperatorPtr outer, OperatorPtr inner);
  Shape input_shape() const override { return inner_->input_shape(); }
  Shape output_shape() const override { return outer_->output_shape(); }
  DomainTag input_tag() const override { return inner_->input_tag(); }
  DomainTag output_tag() const override { return outer_->output_tag(); }
  void apply(std::span<const double> in, std::span<double> out) const override;
  void adjoint(std::span<const double> in, std::span<double> out) const override;
  double norm_sq() const override { return outer_->norm_sq() * inner_->norm_sq(); }
  bool is_coisometry() const override { return outer_->is_coisometry() && inner_->is_coisometry(); }
  using LinearOperator::adjoint;
  using LinearOperator::apply;

 private:
  OperatorPtr outer_;
  OperatorPtr inner_;
};

/// Periodic convolution computed in the frequency domain with a cached OTF.
class CirculantBlur final : public LinearOperator {
 public:
  /// `psf` is a kernel of shape psf_shape, centred at (psf_rows/2, psf_cols/2); entries must sum to 1.
  CirculantBlur(Shape image_shape, Shape psf_shape, std::vector<double> psf);
  static CirculantBlur uniform(Shape image_shape, std::size_t size);

  Shape input_shape() const override { return shape_; }
  Shape output_shape() const override { return shape_; }
  void apply(std::span<const double> in, std::span<double> out) const override;
  void adjoint(std::span<const double> in, std::span<double> out) const override;
  double norm_sq() const override { return norm_sq_; }
  using LinearOperator::adjoint;
  using LinearOperator::apply;

  const std::vector<double>& psf() const { return psf_; }
  Shape psf_shape() const { return psf_shape_; }
  std::span<const std::complex<double>> otf() const { return otf_; }

 private:
  void filter(std::span<const double> in, std::span<double> out, bool conjugate) const;

  Shape shape_;
  Shape psf_shape_;
  std::vector<double> psf_;
  std::vector<std::complex<double>> otf_;
  double norm_sq_ = 1.0;
  struct Plans;
  std::shared_ptr<Plans> plans_;
};

enum class WaveletKind { orthogonal, undecimated };

/// Sub-band position of a coefficient. Orientation 0 is the approximation band;
/// 1, 2, 3 are horizontal, vertical and diagonal detail.
struct SubbandIndex {
  std::size_t level = 0;
  int orientation = 0;
};

/// Multilevel 2-D (or 1-D) Haar transform.
///
/// Orthogonal coefficients are packed coarse-to-fine: the level-L approximation
/// band first, then the detail bands of level L, L-1, ..., 1, each band stored
/// row-major. Every level therefore occupies one contiguous index range.
///
/// The undecimated transform is a Parseval frame: analysis has W^T W = I and
/// synthesis is W^T. Its coefficients are (1 + 3L) (or 1 + L in 1-D) full-size
/// bands, ordered approximation first and then levels L..1.
class WaveletBasis {
 public:
  WaveletBasis(WaveletKind kind, std::size_t levels, Shape image_shape);

  WaveletKind kind() const { return kind_; }
  std::size_t levels() const { return levels_; }
  Shape image_shape() const { return image_shape_; }
  Shape coefficient_shape() const;
  std::size_t coefficient_count() const { return coefficient_shape().size(); }

  ImageVector analysis(const ImageVector& image) const;
  ImageVector synthesis(const ImageVector& coeffs) const;
  void analysis(std::span<const double> image, std::span<double> coeffs) const;
  void synthesis(std::span<const double> coeffs, std::span<double> image) const;

  SubbandIndex block_index(std::size_t coefficient) const;
  /// Partition by level: block 0 is the approximation band, then one block per
  /// level (all orientations) from coarsest to finest.
  BlockList level_blocks() const;

 private:
  void analysis_orthogonal(std::span<const double> image, std::span<double> coeffs) const;
  void synthesis_orthogonal(std::span<const double> coeffs, std::span<double> image) const;
  void analysis_undecimated(std::span<const double> image, std::span<double> coeffs) const;
  void synthesis_undecimated(std::span<const double> coeffs, std::span<double> image) const;
  std::size_t bands_per_level() const { return image_shape_.is_1d ? 1 : 3; }

  WaveletKind kind_;
  std::size_t levels_;
  Shape image_shape_;
};

/// Maps coefficients to the image domain (Psi^T in synthesis formulations).
class SynthesisOperator final : public LinearOperator {
 public:
  explicit SynthesisOperator(WaveletBasis basis) : basis_(std::move(basis)) {}
  Shape input_shape() const override { return basis_.coefficient_shape(); }
  Shape output_shape() const override { return basis_.image_shape(); }
  DomainTag input_tag() const override { return DomainTag::coefficient; }
  void apply(std::span<const double> in, std::span<double> out) const override { basis_.synthesis(in, out); }
  void adjoint(std::span<const double> in, std::span<double> out) const override { basis_.analysis(in, out); }
  double norm_sq() const override { return 1.0; }
  bool is_coisometry() const override { return true; }
  using LinearOperator::adjoint;
  using LinearOperator::apply;
  const WaveletBasis& basis() const { return basis_; }

 private:
  WaveletBasis basis_;
};

enum class NoiseKind { gaussian, laplace };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind kind);

struct NoisyObservation {
  ImageVector y;
  double sigma2 = 0.0;
};

/// Adds i.i.d. noise with variance sigma2 = ||x||^2 / d * 10^(-snr_db / 10).
NoisyObservation add_noise(const ImageVector& x, double snr_db, NoiseKind kind, std::uint64_t seed);

/// Noise variance giving the requested SNR for a signal.
double sigma2_for_snr(const ImageVector& x, double snr_db);

/// Reported PSNR when the two images coincide exactly (and -kExactPsnr for mse_db).
inline constexpr double kExactPsnr = 1.0e9;

/// -10 log10(||x - ref||^2 / d).
double psnr(const ImageVector& x, const ImageVector& ref);
/// 10 log10(||x - ref||^2 / d); always equal to -psnr.
double mse_db(const ImageVector& x, const ImageVector& ref);

}  // namespace sapg
