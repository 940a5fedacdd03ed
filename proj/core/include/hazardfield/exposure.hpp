#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "hazardfield/geometry.hpp"
#include "hazardfield/gp.hpp"

namespace hazardfield {

enum class KernelKind { Exponential, Gaussian };

KernelKind kernel_kind_from_string(const std::string& name);
std::string to_string(KernelKind kind);

/// Distance kernel K(d / rho): 1 at distance zero, strictly decreasing.
struct DistanceKernel {
  KernelKind kind = KernelKind::Exponential;
  double bandwidth = 0.1;  // rho, km
};

/// exp(-d/rho) or exp(-(d/rho)^2) by kind.
double kernel_eval(const DistanceKernel& kernel, double d);

/// dK/drho at fixed distance.
double kernel_drho(const DistanceKernel& kernel, double d);

/// Adaptive 15-point Gauss-Kronrod integration by interval bisection.
/// Throws QuadratureError (carrying the best estimate and error bound) if the
/// tolerance is not met within the depth limit.
double adaptive_gauss_kronrod(const std::function<double(double)>& f, double a, double b,
                              double abs_tol = 1e-10, double rel_tol = 1e-8,
                              int max_depth = 50);

/// Precomputed centroid distances and cell widths for the discretized
/// exposure sum. Cells are flattened segment-major in partition order.
class ExposureTables {
 public:
  ExposureTables(const PartitionedNetwork& partition, const std::vector<Point>& households);

  const Eigen::MatrixXd& distances() const { return dist_; }  // J x Mtot
  const Eigen::VectorXd& widths() const { return width_; }    // Mtot
  std::size_t n_households() const { return static_cast<std::size_t>(dist_.rows()); }
  std::size_t n_cells() const { return static_cast<std::size_t>(dist_.cols()); }

 private:
  Eigen::MatrixXd dist_;
  Eigen::VectorXd width_;
};

Eigen::VectorXd flatten_field(const LatentField& field);

/// Discretized exposure for household j:
///   sum_m K(d_{jm} / rho) exp(z_m) Delta_m
double discretized_exposure(const Eigen::VectorXd& z_flat, const DistanceKernel& kernel,
                            const ExposureTables& tables, std::size_t household);
double discretized_exposure(const LatentField& field, const DistanceKernel& kernel,
                            const ExposureTables& tables, std::size_t household);

/// Exact exposure to one segment under a continuous intensity, via adaptive
/// quadrature split at the polyline vertices.
double quadrature_exposure(const std::function<double(double)>& intensity,
                           const DistanceKernel& kernel, const CanalSegment& segment,
                           const Point& household);

/// Sum of quadrature_exposure over all segments.
double true_total_exposure(const CanalNetwork& network,
                           const std::map<std::string, std::function<double(double)>>& intensities,
                           const DistanceKernel& kernel, const Point& household);

/// Computable upper bound on |discretized - exact| for a field known at cell
/// centroids. Per-cell distance inf/sup come from dense arc subsampling; the
/// within-cell field variation is bounded with neighboring-centroid
/// differences (an approximation of the exact sup, documented as such).
double discretization_error_bound(const LatentField& field, const DistanceKernel& kernel,
                                  const PartitionedNetwork& partition, const Point& household,
                                  int subsamples_per_cell = 10);

}  // namespace hazardfield
