#include "lagtrack/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace lagtrack {

bool patch_fits(const RgbImage& image, const Pixel& center, int rows, int cols) {
  const int top = center.y() - rows / 2;
  const int left = center.x() - cols / 2;
  return rows > 0 && cols > 0 && top >= 0 && left >= 0 && top + rows <= image.height &&
         left + cols <= image.width;
}

RgbPatch extract_patch(const RgbImage& image, const Pixel& center, int rows, int cols) {
  if (!patch_fits(image, center, rows, cols)) {
    throw Error(ErrorCode::SizeError, "sub-image does not fit inside parent image");
  }
  const int top = center.y() - rows / 2;
  const int left = center.x() - cols / 2;
  RgbPatch patch;
  for (int b = 0; b < 3; ++b) {
    patch.bands[b].resize(rows, cols);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        patch.bands[b](r, c) = image.at(top + r, left + c, b);
      }
    }
  }
  return patch;
}

namespace {

int to_bin(double value) {
  return std::clamp(static_cast<int>(std::lround(value)), 0, 255);
}

}  // namespace

BandHistograms histogram(const RgbPatch& patch) {
  BandHistograms hist{};
  for (int b = 0; b < 3; ++b) {
    const auto& band = patch.bands[b];
    for (Eigen::Index i = 0; i < band.size(); ++i) {
      hist[b][to_bin(band.data()[i])] += 1.0;
    }
  }
  return hist;
}

RgbPatch match_histogram(const RgbPatch& patch, const BandHistograms& reference) {
  const BandHistograms source = histogram(patch);
  RgbPatch out = patch;
  for (int b = 0; b < 3; ++b) {
    std::array<double, 256> src_cdf{};
    std::array<double, 256> ref_cdf{};
    double src_total = 0.0;
    double ref_total = 0.0;
    for (int v = 0; v < 256; ++v) {
      src_total += source[b][v];
      ref_total += reference[b][v];
      src_cdf[v] = src_total;
      ref_cdf[v] = ref_total;
    }
    if (src_total <= 0.0 || ref_total <= 0.0) continue;
    std::array<double, 256> lut{};
    for (int v = 0; v < 256; ++v) {
      // Smallest reference level whose CDF reaches the source CDF. Integer
      // counts are compared by cross-multiplication so self-matching is exact.
      const double target = src_cdf[v] * ref_total;
      int r = 0;
      while (r < 255 && ref_cdf[r] * src_total < target) ++r;
      lut[v] = r;
    }
    auto& band = out.bands[b];
    for (Eigen::Index i = 0; i < band.size(); ++i) {
      band.data()[i] = lut[to_bin(band.data()[i])];
    }
  }
  return out;
}

Eigen::MatrixXd principal_intensity(const RgbPatch& patch, bool& degenerate,
                                    double degenerate_variance) {
  const int rows = patch.rows();
  const int cols = patch.cols();
  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;
  Eigen::Matrix<double, Eigen::Dynamic, 3> samples(n, 3);
  for (int b = 0; b < 3; ++b) {
    samples.col(b) = patch.bands[b].reshaped();
  }
  const Eigen::RowVector3d mean = samples.colwise().mean();
  samples.rowwise() -= mean;
  const Mat3 cov = (samples.transpose() * samples) / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  Vec3 axis = eig.eigenvectors().col(2);
  // Orient the component so brighter pixels map to larger values; reference
  // and test patches must agree on the sign.
  if (axis.sum() < 0.0) axis = -axis;

  Eigen::VectorXd projected = samples * axis;
  const double variance = projected.squaredNorm() / static_cast<double>(n);
  degenerate = !(variance > degenerate_variance);
  if (degenerate) {
    return Eigen::MatrixXd::Zero(rows, cols);
  }
  projected.array() -= projected.mean();
  const double sd = std::sqrt(projected.squaredNorm() / static_cast<double>(n));
  projected /= sd;
  return projected.reshaped(rows, cols);
}

Eigen::MatrixXd median_filter(const Eigen::MatrixXd& values, int kernel) {
  const int half = kernel / 2;
  const int rows = static_cast<int>(values.rows());
  const int cols = static_cast<int>(values.cols());
  Eigen::MatrixXd out(rows, cols);
  std::vector<double> window;
  window.reserve(static_cast<size_t>(kernel) * kernel);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      window.clear();
      for (int rr = std::max(0, r - half); rr <= std::min(rows - 1, r + half); ++rr) {
        for (int cc = std::max(0, c - half); cc <= std::min(cols - 1, c + half); ++cc) {
          window.push_back(values(rr, cc));
        }
      }
      const size_t mid = window.size() / 2;
      std::nth_element(window.begin(), window.begin() + static_cast<long>(mid), window.end());
      double median = window[mid];
      if (window.size() % 2 == 0) {
        const double lower = *std::max_element(window.begin(), window.begin() + static_cast<long>(mid));
        median = 0.5 * (median + lower);
      }
      out(r, c) = median;
    }
  }
  return out;
}

SubImage preprocess(const RgbPatch& raw, const BandHistograms* reference_histogram,
                    const Pixel& anchor, const PreprocessOptions& options) {
  SubImage out;
  out.anchor = anchor;
  const RgbPatch matched = reference_histogram ? match_histogram(raw, *reference_histogram) : raw;
  Eigen::MatrixXd intensity =
      principal_intensity(matched, out.degenerate, options.degenerate_variance);
  if (out.degenerate) {
    out.pixels = std::move(intensity);
    return out;
  }
  out.pixels = intensity - median_filter(intensity, options.median_kernel);
  return out;
}

double LikelihoodSurface::scale() const {
  return std::max(sigma_ell * sigma_ell + sigma_m * sigma_m, 1e-12);
}

double LikelihoodSurface::likelihood(int row, int col) const {
  return std::exp(-(log_ssd(row, col) - min_log_ssd) / scale());
}

LikelihoodSurface make_likelihood_surface(Eigen::MatrixXd log_ssd, const Vec2& offset_origin,
                                          double sigma_ell, double sigma_m) {
  LikelihoodSurface s;
  s.log_ssd = std::move(log_ssd);
  s.offset_origin = offset_origin;
  s.sigma_ell = sigma_ell;
  s.sigma_m = sigma_m;
  s.min_log_ssd = s.log_ssd.minCoeff();
  // The boundary floor is the smallest likelihood on the outer ring, which is
  // the largest SSD there.
  const int rows = s.rows();
  const int cols = s.cols();
  double worst = -std::numeric_limits<double>::infinity();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      if (r == 0 || c == 0 || r == rows - 1 || c == cols - 1) {
        worst = std::max(worst, s.log_ssd(r, c));
      }
    }
  }
  s.boundary_floor = std::exp(-(worst - s.min_log_ssd) / s.scale());
  return s;
}

LikelihoodSurface match(const SubImage& reference, const SubImage& test, double sigma_ell,
                        double sigma_m) {
  const int mr = reference.rows();
  const int nr = reference.cols();
  const int mt = test.rows();
  const int nt = test.cols();
  if (mr <= 0 || nr <= 0 || mr > mt || nr > nt) {
    throw Error(ErrorCode::SizeError, "reference sub-image does not fit inside test sub-image");
  }
  const int out_rows = mt - mr + 1;
  const int out_cols = nt - nr + 1;
  Eigen::MatrixXd ssd(out_rows, out_cols);
  const double area = static_cast<double>(mr) * nr;
  for (int i = 0; i < out_rows; ++i) {
    for (int j = 0; j < out_cols; ++j) {
      ssd(i, j) = (reference.pixels - test.pixels.block(i, j, mr, nr)).squaredNorm() / area;
    }
  }
  // Offset (0, 0) aligns the template center (index m/2) with the test
  // center (index m_t/2).
  const Vec2 origin(static_cast<double>(nr / 2 - nt / 2), static_cast<double>(mr / 2 - mt / 2));
  return make_likelihood_surface(std::move(ssd), origin, sigma_ell, sigma_m);
}

PeakEstimate subpixel_peak(const LikelihoodSurface& surface) {
  Eigen::Index best_r = 0;
  Eigen::Index best_c = 0;
  surface.log_ssd.minCoeff(&best_r, &best_c);
  PeakEstimate peak;
  peak.offset = surface.offset_origin + Vec2(static_cast<double>(best_c), static_cast<double>(best_r));
  if (best_r == 0 || best_c == 0 || best_r == surface.rows() - 1 ||
      best_c == surface.cols() - 1) {
    peak.on_boundary = true;
    return peak;
  }
  // Least-squares quadratic f = a + b x + c y + d x^2 + e x y + g y^2 on the
  // 3x3 neighbourhood; x is the column offset, y the row offset.
  Eigen::Matrix<double, 9, 6> design;
  Eigen::Matrix<double, 9, 1> values;
  int k = 0;
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) {
      design.row(k) << 1.0, dx, dy, dx * dx, dx * dy, dy * dy;
      values(k) = surface.log_ssd(best_r + dy, best_c + dx);
      ++k;
    }
  }
  const Eigen::Matrix<double, 6, 1> q = design.colPivHouseholderQr().solve(values);
  Mat2 hessian;
  hessian << 2.0 * q(3), q(4), q(4), 2.0 * q(5);
  if (hessian.determinant() <= 0.0 || hessian(0, 0) <= 0.0) {
    return peak;
  }
  Vec2 delta = hessian.ldlt().solve(-Vec2(q(1), q(2)));
  delta = delta.cwiseMax(-1.0).cwiseMin(1.0);
  peak.offset += delta;
  return peak;
}

double evaluate_likelihood(const LikelihoodSurface& surface, const Vec2& offset) {
  const double fc = offset.x() - surface.offset_origin.x();
  const double fr = offset.y() - surface.offset_origin.y();
  const int rows = surface.rows();
  const int cols = surface.cols();
  if (!(fc >= 0.0 && fr >= 0.0 && fc <= cols - 1 && fr <= rows - 1)) {
    return surface.boundary_floor;
  }
  const int c0 = std::min(static_cast<int>(fc), std::max(cols - 2, 0));
  const int r0 = std::min(static_cast<int>(fr), std::max(rows - 2, 0));
  const int c1 = std::min(c0 + 1, cols - 1);
  const int r1 = std::min(r0 + 1, rows - 1);
  const double tc = fc - c0;
  const double tr = fr - r0;
  const double top = (1.0 - tc) * surface.likelihood(r0, c0) + tc * surface.likelihood(r0, c1);
  const double bottom = (1.0 - tc) * surface.likelihood(r1, c0) + tc * surface.likelihood(r1, c1);
  return (1.0 - tr) * top + tr * bottom;
}

}  // namespace lagtrack
