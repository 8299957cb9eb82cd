#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "lagtrack/types.hpp"

namespace lagtrack {

/// 8-bit interleaved RGB raster, row-major.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0) {}

  std::uint8_t& at(int row, int col, int band) {
    return data[(static_cast<size_t>(row) * width + col) * 3 + band];
  }
  std::uint8_t at(int row, int col, int band) const {
    return data[(static_cast<size_t>(row) * width + col) * 3 + band];
  }
  bool empty() const { return data.empty(); }
};

/// Integer pixel position, x = column, y = row.
using Pixel = Eigen::Vector2i;

/// Three bands of a sub-image, values on the 0..255 scale.
struct RgbPatch {
  std::array<Eigen::MatrixXd, 3> bands;

  int rows() const { return static_cast<int>(bands[0].rows()); }
  int cols() const { return static_cast<int>(bands[0].cols()); }
};

/// Extracts a rows x cols patch whose center pixel (index rows/2, cols/2) is
/// `center`. Throws SizeError if the patch does not lie fully inside.
RgbPatch extract_patch(const RgbImage& image, const Pixel& center, int rows, int cols);

bool patch_fits(const RgbImage& image, const Pixel& center, int rows, int cols);

/// Per-band 256-bin counts.
using BandHistograms = std::array<std::array<double, 256>, 3>;

BandHistograms histogram(const RgbPatch& patch);

/// Maps every band onto the cumulative distribution of `reference`.
RgbPatch match_histogram(const RgbPatch& patch, const BandHistograms& reference);

/// A preprocessed, single-band sub-image.
struct SubImage {
  Eigen::MatrixXd pixels;
  Pixel anchor = Pixel::Zero();
  // Low-information patch (fog, blank frame); callers treat it as missing.
  bool degenerate = false;

  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
};

struct PreprocessOptions {
  int median_kernel = 5;
  // Minimum variance of the leading principal component, in 8-bit units.
  double degenerate_variance = 1e-6;
};

/// First principal component of the RGB values, Z-normalized over the patch.
/// Sets `degenerate` when the patch carries no variance.
Eigen::MatrixXd principal_intensity(const RgbPatch& patch, bool& degenerate,
                                    double degenerate_variance = 1e-6);

/// Median filter with the window clipped to the array.
Eigen::MatrixXd median_filter(const Eigen::MatrixXd& values, int kernel);

/// Histogram matching (when a reference histogram is given), principal
/// component projection with Z-normalization, then median highpass.
SubImage preprocess(const RgbPatch& raw, const BandHistograms* reference_histogram,
                    const Pixel& anchor = Pixel::Zero(), const PreprocessOptions& options = {});

/// Area-averaged SSD between a reference template and every full-overlap
/// placement inside a test sub-image, plus the terms that turn it into a
/// likelihood exp(-l / (sigma_ell^2 + sigma_m^2)).
///
/// Index (row i, col j) of `log_ssd` corresponds to the offset
/// (offset_origin.x + j, offset_origin.y + i), with offset (0, 0) placing
/// the template center on the test center.
struct LikelihoodSurface {
  Eigen::MatrixXd log_ssd;
  Vec2 offset_origin = Vec2::Zero();
  double sigma_ell = 0.25;
  double sigma_m = 0.0;
  double min_log_ssd = 0.0;
  double boundary_floor = 0.0;

  int rows() const { return static_cast<int>(log_ssd.rows()); }
  int cols() const { return static_cast<int>(log_ssd.cols()); }
  double scale() const;
  /// Likelihood at a grid node, normalized so the best node is 1.
  double likelihood(int row, int col) const;
};

LikelihoodSurface make_likelihood_surface(Eigen::MatrixXd log_ssd, const Vec2& offset_origin,
                                          double sigma_ell, double sigma_m);

LikelihoodSurface match(const SubImage& reference, const SubImage& test, double sigma_ell,
                        double sigma_m);

struct PeakEstimate {
  Vec2 offset = Vec2::Zero();
  bool on_boundary = false;
};

/// Maximum-likelihood offset refined by a quadratic fit over the 3x3
/// neighbourhood of the discrete optimum of the SSD surface.
PeakEstimate subpixel_peak(const LikelihoodSurface& surface);

/// Bilinear interpolation of the likelihood at a continuous offset; offsets
/// outside the surface get the boundary floor.
double evaluate_likelihood(const LikelihoodSurface& surface, const Vec2& offset);

}  // namespace lagtrack
