#include "hazardfield/exposure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hazardfield/errors.hpp"

namespace hazardfield {

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "exponential") return KernelKind::Exponential;
  if (name == "gaussian") return KernelKind::Gaussian;
  throw ConfigError("unknown kernel kind '" + name + "' (exponential|gaussian)");
}

std::string to_string(KernelKind kind) {
  return kind == KernelKind::Exponential ? "exponential" : "gaussian";
}

double kernel_eval(const DistanceKernel& kernel, double d) {
  const double r = d / kernel.bandwidth;
  return kernel.kind == KernelKind::Exponential ? std::exp(-r) : std::exp(-r * r);
}

double kernel_drho(const DistanceKernel& kernel, double d) {
  const double rho = kernel.bandwidth;
  const double k = kernel_eval(kernel, d);
  return kernel.kind == KernelKind::Exponential ? k * d / (rho * rho)
                                                : k * 2.0 * d * d / (rho * rho * rho);
}

namespace {

// 15-point Kronrod abscissae/weights and the embedded 7-point Gauss weights.
constexpr double kXgk[8] = {
    0.9914553711208126392068546975263285, 0.9491079123427585245261896840478513,
    0.8648644233597690727897127886409262, 0.7415311855993944398638647732807884,
    0.5860872354676911302941448382587296, 0.4058451513773971669066064120769615,
    0.2077849550078984676006894037732449, 0.0};
constexpr double kWgk[8] = {
    0.0229353220105292249637320080589695, 0.0630920926299785532907006631892042,
    0.1047900103222501838398763225415180, 0.1406532597155259187451895905102379,
    0.1690047266392679028265834265985503, 0.1903505780647854099132564024210137,
    0.2044329400752988924141619992346491, 0.2094821410847278280129991748917143};
constexpr double kWg[4] = {
    0.1294849661688696932706114326790820, 0.2797053914892766679014677714237796,
    0.3818300505051189449503697754889751, 0.4179591836734693877551020408163265};

struct Gk15 {
  double kronrod;
  double err;
  double resabs;  // integral of |f|, for the rounding floor
};

Gk15 gk15(const std::function<double(double)>& f, double a, double b) {
  const double c = 0.5 * (a + b);
  const double h = 0.5 * (b - a);
  double fv[15];
  fv[7] = f(c);
  double kron = kWgk[7] * fv[7];
  double gauss = kWg[3] * fv[7];
  double resabs = kWgk[7] * std::abs(fv[7]);
  for (int i = 0; i < 7; ++i) {
    const double x = h * kXgk[i];
    fv[i] = f(c - x);
    fv[14 - i] = f(c + x);
    const double fsum = fv[i] + fv[14 - i];
    kron += kWgk[i] * fsum;
    resabs += kWgk[i] * (std::abs(fv[i]) + std::abs(fv[14 - i]));
    if (i % 2 == 1) gauss += kWg[i / 2] * fsum;
  }
  // QUADPACK-style sharpened error estimate.
  const double reskh = 0.5 * kron;
  double resasc = kWgk[7] * std::abs(fv[7] - reskh);
  for (int i = 0; i < 7; ++i) {
    resasc += kWgk[i] * (std::abs(fv[i] - reskh) + std::abs(fv[14 - i] - reskh));
  }
  const double ah = std::abs(h);
  resasc *= ah;
  resabs *= ah;
  double err = std::abs((kron - gauss) * h);
  if (resasc != 0.0 && err != 0.0) {
    err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
  }
  const double uround = std::numeric_limits<double>::epsilon();
  if (resabs > std::numeric_limits<double>::min() / (50.0 * uround)) {
    err = std::max(err, 50.0 * uround * resabs);
  }
  return Gk15{kron * h, err, resabs};
}

double gk_recurse(const std::function<double(double)>& f, double a, double b, double abs_tol,
                  double rel_tol, int depth, int max_depth) {
  const Gk15 est = gk15(f, a, b);
  const double uround = std::numeric_limits<double>::epsilon();
  if (est.err <= std::max(abs_tol, rel_tol * std::abs(est.kronrod)) ||
      est.err <= 100.0 * uround * est.resabs) {
    return est.kronrod;
  }
  if (depth >= max_depth) {
    throw QuadratureError("adaptive Gauss-Kronrod: tolerance not reached at depth " +
                              std::to_string(max_depth),
                          est.kronrod, est.err);
  }
  const double m = 0.5 * (a + b);
  return gk_recurse(f, a, m, 0.5 * abs_tol, rel_tol, depth + 1, max_depth) +
         gk_recurse(f, m, b, 0.5 * abs_tol, rel_tol, depth + 1, max_depth);
}

}  // namespace

double adaptive_gauss_kronrod(const std::function<double(double)>& f, double a, double b,
                              double abs_tol, double rel_tol, int max_depth) {
  if (a == b) return 0.0;
  return gk_recurse(f, a, b, abs_tol, rel_tol, 0, max_depth);
}

ExposureTables::ExposureTables(const PartitionedNetwork& partition,
                               const std::vector<Point>& households) {
  std::size_t m_total = partition.total_cells();
  dist_.resize(static_cast<Eigen::Index>(households.size()), static_cast<Eigen::Index>(m_total));
  width_.resize(static_cast<Eigen::Index>(m_total));
  Eigen::Index col = 0;
  for (const auto& part : partition.partitions()) {
    for (const auto& cell : part.cells) {
      width_[col] = cell.width;
      for (std::size_t j = 0; j < households.size(); ++j) {
        dist_(static_cast<Eigen::Index>(j), col) = euclid_distance(households[j], cell.centroid);
      }
      ++col;
    }
  }
}

Eigen::VectorXd flatten_field(const LatentField& field) {
  Eigen::Index total = 0;
  for (const auto& z : field.z) total += z.size();
  Eigen::VectorXd flat(total);
  Eigen::Index at = 0;
  for (const auto& z : field.z) {
    flat.segment(at, z.size()) = z;
    at += z.size();
  }
  return flat;
}

double discretized_exposure(const Eigen::VectorXd& z_flat, const DistanceKernel& kernel,
                            const ExposureTables& tables, std::size_t household) {
  if (z_flat.size() != tables.widths().size()) {
    throw std::invalid_argument("discretized_exposure: field/table dimension mismatch");
  }
  const Eigen::ArrayXd d =
      tables.distances().row(static_cast<Eigen::Index>(household)).transpose().array();
  Eigen::ArrayXd k;
  if (kernel.kind == KernelKind::Exponential) {
    k = (-d / kernel.bandwidth).exp();
  } else {
    k = (-(d / kernel.bandwidth).square()).exp();
  }
  return (k * z_flat.array().exp() * tables.widths().array()).sum();
}

double discretized_exposure(const LatentField& field, const DistanceKernel& kernel,
                            const ExposureTables& tables, std::size_t household) {
  return discretized_exposure(flatten_field(field), kernel, tables, household);
}

double quadrature_exposure(const std::function<double(double)>& intensity,
                           const DistanceKernel& kernel, const CanalSegment& segment,
                           const Point& household) {
  const auto integrand = [&](double arc) {
    const Point at = segment.point_at(arc);
    return kernel_eval(kernel, euclid_distance(at, household)) * intensity(arc);
  };
  // Split at polyline vertices: the distance function has kinks there.
  const auto& cum = segment.cumulative_arclength();
  double total = 0.0;
  for (std::size_t i = 1; i < cum.size(); ++i) {
    total += adaptive_gauss_kronrod(integrand, cum[i - 1], cum[i]);
  }
  return total;
}

double true_total_exposure(const CanalNetwork& network,
                           const std::map<std::string, std::function<double(double)>>& intensities,
                           const DistanceKernel& kernel, const Point& household) {
  double total = 0.0;
  for (const auto& seg : network.segments()) {
    const auto it = intensities.find(seg.id());
    if (it == intensities.end()) {
      throw ConfigError("no intensity for segment '" + seg.id() + "'");
    }
    total += quadrature_exposure(it->second, kernel, seg, household);
  }
  return total;
}

double discretization_error_bound(const LatentField& field, const DistanceKernel& kernel,
                                  const PartitionedNetwork& partition, const Point& household,
                                  int subsamples_per_cell) {
  if (subsamples_per_cell < 2) {
    throw std::invalid_argument("discretization_error_bound: subsamples_per_cell must be >= 2");
  }
  const auto& parts = partition.partitions();
  if (field.z.size() != parts.size()) {
    throw std::invalid_argument("discretization_error_bound: field/partition mismatch");
  }
  double bound = 0.0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& seg = partition.network().segment(parts[p].segment_id);
    const auto& z = field.z[p];
    const Eigen::Index m = z.size();
    for (Eigen::Index i = 0; i < m; ++i) {
      const Cell& cell = parts[p].cells[static_cast<std::size_t>(i)];
      double dmin = std::numeric_limits<double>::infinity();
      double dmax = 0.0;
      for (int s = 0; s < subsamples_per_cell; ++s) {
        const double arc = cell.a + (cell.b - cell.a) * s / (subsamples_per_cell - 1);
        const double d = euclid_distance(seg.point_at(arc), household);
        dmin = std::min(dmin, d);
        dmax = std::max(dmax, d);
      }
      // Within-cell field variation proxied by the larger neighboring
      // centroid difference; the field level is bounded from the same
      // neighborhood.
      double gap = 0.0;
      double zmax = z[i];
      if (i > 0) {
        gap = std::max(gap, std::abs(z[i] - z[i - 1]));
        zmax = std::max(zmax, z[i - 1]);
      }
      if (i + 1 < m) {
        gap = std::max(gap, std::abs(z[i + 1] - z[i]));
        zmax = std::max(zmax, z[i + 1]);
      }
      const double level = std::exp(zmax + gap);
      const double k_hi = kernel_eval(kernel, dmin);
      const double k_lo = kernel_eval(kernel, dmax);
      bound += k_hi * level * gap * cell.width;          // field-variation term
      bound += (k_hi - k_lo) * level * cell.width;       // kernel-variation term
    }
  }
  return bound;
}

}  // namespace hazardfield
