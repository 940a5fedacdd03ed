#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hazardfield/geometry.hpp"
#include "hazardfield/rng.hpp"

namespace hazardfield {

struct GpHyperparams {
  double lengthscale = 1.0;  // omega, km
  double marginal_sd = 1.0;  // alpha, fixed to 1 for identifiability
};

/// Exponentiated quadratic kernel: alpha^2 exp(-d^2 / (2 omega^2)).
double sqexp_cov(double d, double lengthscale, double marginal_sd = 1.0);

/// omega rescaled by the cell-width ratio, so that correlations across cells
/// on grids of different resolution match the reference grid.
double scaled_lengthscale(double omega, double width_target, double width_reference);

/// Pairwise sq-exp covariance of along-segment centroid positions.
Eigen::MatrixXd segment_cov_matrix(const std::vector<double>& centroid_arcs,
                                   double lengthscale, double marginal_sd = 1.0);

struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;  // value added to the diagonal, 0 if none was needed
};

/// Cholesky with adaptive diagonal jitter: starts at 1e-10 * alpha^2, doubles
/// until the factorization succeeds, and fails once jitter would exceed
/// 1e-4 * alpha^2. `context` names the offending configuration (e.g. omega)
/// in the error message.
CholeskyFactor jittered_cholesky(const Eigen::MatrixXd& cov, double marginal_sd,
                                 const std::string& context);

struct IntersectionValueDist {
  double mean = 0.0;
  double sd = 1.0;
};

/// Distribution of the field value at an intersection given the standardized
/// values at its upstream anchors, at along-canal distances d1 and d2:
///   mean = (w1 z1 + w2 z2) / sqrt(2),  w = exp(-d^2 / (2 omega^2))
///   sd   = sqrt(1 - (w1^2 + w2^2) / 2)
IntersectionValueDist intersection_value_dist(double z1, double z2, double d1,
                                              double d2, double omega);

/// k-anchor generalization used by the construction (k = 2 gives the above).
IntersectionValueDist intersection_value_dist_k(const Eigen::VectorXd& standardized_values,
                                                const Eigen::VectorXd& distances,
                                                double omega);

struct ConditionalSegmentDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

/// Conditional law of a segment's centroid values given the intersection
/// value Z(p) with moments (mu_p, sigma_p):
///   mean = sigma_p^-2 k(p) (Z(p) - mu_p)
///   cov  = Sigma - sigma_p^-2 k(p) k(p)'
/// where k(p) is the covariance vector between the centroids and p.
/// sigma_p == 0 degenerates to conditioning on the known value under the
/// unit-marginal kernel.
ConditionalSegmentDist conditional_segment_dist(const std::vector<double>& centroid_arcs,
                                                double cond_arc, double z_p, double mu_p,
                                                double sigma_p, double omega,
                                                double marginal_sd = 1.0);

/// Latent log-intensity field on a partitioned network. Field values at
/// declared intersections are single scalars shared by all touching segments.
struct LatentField {
  std::vector<Eigen::VectorXd> z;  // per segment, aligned with the partition
  Eigen::VectorXd source_values;   // per declared source
  Eigen::VectorXd node_values;     // per intersection node (grouped anchors)
};

/// An intersection node: spatially coincident declared anchors grouped into
/// one shared field value.
struct FieldNode {
  Point location;
  std::vector<std::pair<std::size_t, double>> touches;  // (segment index, arc)
  // anchors, resolved in flow order
  struct Anchor {
    bool from_source = false;
    std::size_t index = 0;  // into sources (from_source) or nodes
    double distance = 0.0;  // along-canal km
    double weight = 0.0;    // exp(-d^2 / (2 omega^2))
  };
  std::vector<Anchor> anchors;
  double sigma = 1.0;  // conditional sd given anchors
};

/// Deterministic non-centered map from iid standard-normal innovations to a
/// LatentField, realizing the flow-ordered constrained construction:
/// sources are N(0,1), intersection values are conditioned on their upstream
/// anchors, and segment interiors are conditioned on one intersection value.
/// All factors are precomputed for a fixed (network, partition, omega).
class FieldConstruction {
 public:
  FieldConstruction(const CanalNetwork& network, const PartitionedNetwork& partition,
                    double omega, double marginal_sd = 1.0);

  std::size_t n_sources() const { return sources_.size(); }
  std::size_t n_nodes() const { return nodes_.size(); }
  std::size_t n_cells() const { return n_cells_; }
  std::size_t n_innovations() const { return n_sources() + n_nodes() + n_cells(); }
  double omega() const { return omega_; }

  const std::vector<FieldNode>& nodes() const { return nodes_; }
  const PartitionedNetwork& partition() const { return *partition_; }

  /// Which node realizes the shared value of intersection declaration i, as
  /// seen from either declared anchor (both resolve to the same node).
  std::size_t node_of_intersection(std::size_t decl_index) const;

  /// Innovation vector layout: [sources | nodes | cells(segment-major)].
  LatentField field_from_innovations(const Eigen::VectorXd& eps) const;

  /// Pull gradient w.r.t. cell values back to the innovation vector.
  /// grad_cells is segment-major flattened, matching the partition.
  Eigen::VectorXd innovation_gradient(const Eigen::VectorXd& grad_cells) const;

  /// Directional derivative of the flattened cell values w.r.t. omega at the
  /// construction's omega, for a given innovation vector.
  Eigen::VectorXd cell_values_domega(const Eigen::VectorXd& eps) const;

  /// Draws iid innovations and maps them through the construction.
  LatentField sample_prior(RngStream& rng) const;

  /// Log density of the constructed field in field space, with the gradient
  /// w.r.t. all field values (sources, nodes, cells in layout order).
  double log_prior_density(const LatentField& field, Eigen::VectorXd* grad = nullptr) const;

  /// Recovers innovations from a field (inverse of field_from_innovations).
  Eigen::VectorXd innovations_from_field(const LatentField& field) const;

  /// Flattens per-segment z into the segment-major cell vector.
  Eigen::VectorXd flatten(const LatentField& field) const;

  /// Marginal variance of each cell value under the construction
  /// (including jitter), segment-major.
  Eigen::VectorXd cell_marginal_variance() const;

 private:
  struct SegmentPlan {
    enum class Cond { None, Source, Node } cond = Cond::None;
    std::size_t cond_index = 0;  // into sources_ or nodes_
    double cond_arc = 0.0;
    double eff_omega = 0.0;
    double cond_sigma = 1.0;          // sd of the conditioning value
    Eigen::VectorXd kp;               // cov(centroids, conditioning point)
    Eigen::VectorXd mean_coef;        // mean = mean_coef * driver
    Eigen::MatrixXd L;                // cholesky of the conditional covariance
    double jitter = 0.0;
    std::size_t offset = 0;           // into the flattened cell vector
    std::size_t m = 0;
    std::vector<double> arcs;
    double width = 0.0;
  };

  void build_nodes();
  void build_segments();
  double driver_sigma(const SegmentPlan& s) const;

  const CanalNetwork* network_;
  const PartitionedNetwork* partition_;
  double omega_;
  double alpha_;
  std::vector<EndpointDecl> sources_;
  std::vector<FieldNode> nodes_;
  std::vector<std::size_t> decl_to_node_;
  std::vector<SegmentPlan> segments_;
  std::size_t n_cells_ = 0;
  double reference_width_ = 0.0;
};

}  // namespace hazardfield
