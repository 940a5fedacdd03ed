#include "hazardfield/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace {
constexpr double kNodeTol = 1e-9;       // spatial grouping of intersection anchors
constexpr double kJitterStart = 1e-10;  // relative to alpha^2
constexpr double kJitterCap = 1e-4;     // relative to alpha^2
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}  // namespace

double sqexp_cov(double d, double lengthscale, double marginal_sd) {
  if (lengthscale <= 0.0) {
    throw std::domain_error("sqexp_cov: lengthscale must be > 0");
  }
  const double r = d / lengthscale;
  return marginal_sd * marginal_sd * std::exp(-0.5 * r * r);
}

double scaled_lengthscale(double omega, double width_target, double width_reference) {
  if (width_target <= 0.0 || width_reference <= 0.0) {
    throw std::domain_error("scaled_lengthscale: widths must be > 0");
  }
  return omega * width_target / width_reference;
}

Eigen::MatrixXd segment_cov_matrix(const std::vector<double>& centroid_arcs,
                                   double lengthscale, double marginal_sd) {
  const Eigen::Index m = static_cast<Eigen::Index>(centroid_arcs.size());
  Eigen::MatrixXd cov(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    cov(i, i) = marginal_sd * marginal_sd;
    for (Eigen::Index j = 0; j < i; ++j) {
      const double c = sqexp_cov(std::abs(centroid_arcs[i] - centroid_arcs[j]),
                                 lengthscale, marginal_sd);
      cov(i, j) = c;
      cov(j, i) = c;
    }
  }
  return cov;
}

CholeskyFactor jittered_cholesky(const Eigen::MatrixXd& cov, double marginal_sd,
                                 const std::string& context) {
  const double alpha2 = marginal_sd * marginal_sd;
  Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
  if (sym.cwiseAbs().maxCoeff() == 0.0) {
    // Exactly singular limit (e.g. a fully correlated segment): the factor is
    // the zero matrix, no jitter needed.
    return CholeskyFactor{Eigen::MatrixXd::Zero(sym.rows(), sym.cols()), 0.0};
  }
  double jitter = 0.0;
  while (true) {
    Eigen::MatrixXd trial = sym;
    if (jitter > 0.0) trial.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(trial);
    if (llt.info() == Eigen::Success) {
      return CholeskyFactor{llt.matrixL(), jitter};
    }
    jitter = (jitter == 0.0) ? kJitterStart * alpha2 : 2.0 * jitter;
    if (jitter > kJitterCap * alpha2) {
      throw NumericalError("Cholesky failed after max jitter " +
                           std::to_string(kJitterCap * alpha2) + " (" + context + ")");
    }
  }
}

IntersectionValueDist intersection_value_dist(double z1, double z2, double d1,
                                              double d2, double omega) {
  Eigen::VectorXd z(2), d(2);
  z << z1, z2;
  d << d1, d2;
  return intersection_value_dist_k(z, d, omega);
}

IntersectionValueDist intersection_value_dist_k(const Eigen::VectorXd& standardized_values,
                                                const Eigen::VectorXd& distances,
                                                double omega) {
  if (omega <= 0.0) throw std::domain_error("intersection_value_dist: omega must be > 0");
  const Eigen::Index k = distances.size();
  if (k == 0) return IntersectionValueDist{0.0, 1.0};
  double mean = 0.0;
  double wsq = 0.0;
  for (Eigen::Index a = 0; a < k; ++a) {
    if (distances[a] < 0.0) {
      throw std::domain_error("intersection_value_dist: distances must be >= 0");
    }
    const double w = std::exp(-distances[a] * distances[a] / (2.0 * omega * omega));
    mean += w * standardized_values[a];
    wsq += w * w;
  }
  const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(k));
  mean *= inv_sqrt_k;
  double var = 1.0 - wsq / static_cast<double>(k);
  if (var < -1e-12) {
    throw NumericalError("intersection_value_dist: negative variance " + std::to_string(var));
  }
  var = std::max(var, 0.0);
  return IntersectionValueDist{mean, std::sqrt(var)};
}

ConditionalSegmentDist conditional_segment_dist(const std::vector<double>& centroid_arcs,
                                                double cond_arc, double z_p, double mu_p,
                                                double sigma_p, double omega,
                                                double marginal_sd) {
  const Eigen::Index m = static_cast<Eigen::Index>(centroid_arcs.size());
  Eigen::VectorXd kp(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    kp[i] = sqexp_cov(std::abs(centroid_arcs[i] - cond_arc), omega, marginal_sd);
  }
  const Eigen::MatrixXd sigma = segment_cov_matrix(centroid_arcs, omega, marginal_sd);
  ConditionalSegmentDist out;
  if (sigma_p > 0.0) {
    const double inv_var = 1.0 / (sigma_p * sigma_p);
    out.mean = inv_var * (z_p - mu_p) * kp;
    out.cov = sigma - inv_var * kp * kp.transpose();
  } else {
    // Degenerate conditioning value: condition directly on the known value
    // under the unit-marginal kernel.
    const double inv_var = 1.0 / (marginal_sd * marginal_sd);
    out.mean = inv_var * z_p * kp;
    out.cov = sigma - inv_var * kp * kp.transpose();
  }
  return out;
}

FieldConstruction::FieldConstruction(const CanalNetwork& network,
                                     const PartitionedNetwork& partition, double omega,
                                     double marginal_sd)
    : network_(&network), partition_(&partition), omega_(omega), alpha_(marginal_sd) {
  if (omega_ <= 0.0) throw std::domain_error("FieldConstruction: omega must be > 0");
  sources_ = network.sources();
  reference_width_ = 0.0;
  for (const auto& part : partition.partitions()) {
    for (const auto& cell : part.cells) reference_width_ = std::max(reference_width_, cell.width);
  }
  build_nodes();
  build_segments();
}

void FieldConstruction::build_nodes() {
  const auto& decls = network_->intersections();
  decl_to_node_.resize(decls.size());

  // Group spatially coincident anchors into nodes.
  for (std::size_t d = 0; d < decls.size(); ++d) {
    const Point loc = network_->locate({decls[d].segment_a, decls[d].arc_a});
    std::size_t node = nodes_.size();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (euclid_distance(nodes_[i].location, loc) <= kNodeTol) {
        node = i;
        break;
      }
    }
    if (node == nodes_.size()) {
      FieldNode fresh;
      fresh.location = loc;
      nodes_.push_back(fresh);
    }
    auto add_touch = [&](const std::string& seg, double arc) {
      const std::size_t si = network_->segment_index(seg);
      for (const auto& [s, a] : nodes_[node].touches) {
        if (s == si && std::abs(a - arc) <= kNodeTol) return;
      }
      nodes_[node].touches.emplace_back(si, arc);
    };
    add_touch(decls[d].segment_a, decls[d].arc_a);
    add_touch(decls[d].segment_b, decls[d].arc_b);
    decl_to_node_[d] = node;
  }
  if (nodes_.empty()) return;

  if (sources_.empty()) {
    throw ConfigError("constrained field construction requires declared sources");
  }

  // Flow order: nodes sorted by along-network distance to the nearest source.
  std::vector<double> flow_dist(nodes_.size(), std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& [seg, arc] = nodes_[i].touches.front();
    const NetworkLocation here{network_->segments()[seg].id(), arc};
    for (const auto& src : sources_) {
      const auto d = network_distance(*network_, {src.segment, src.arc}, here);
      if (d) flow_dist[i] = std::min(flow_dist[i], *d);
    }
    if (!std::isfinite(flow_dist[i])) {
      throw ConfigError("intersection node is unreachable from every source; "
                        "flow order undefined");
    }
  }
  std::vector<std::size_t> order(nodes_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return flow_dist[a] < flow_dist[b]; });
  std::vector<FieldNode> reordered;
  reordered.reserve(nodes_.size());
  std::vector<std::size_t> new_index(nodes_.size());
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    new_index[order[rank]] = rank;
    reordered.push_back(nodes_[order[rank]]);
  }
  nodes_ = std::move(reordered);
  for (auto& d : decl_to_node_) d = new_index[d];

  // Upstream anchors: per touched segment, the nearest source or
  // earlier-in-order node on that segment.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    for (const auto& [seg, arc] : node.touches) {
      bool found = false;
      FieldNode::Anchor best;
      auto consider = [&](bool from_source, std::size_t idx, double cand_arc) {
        const double d = std::abs(arc - cand_arc);
        if (!found || d < best.distance - kNodeTol ||
            (d < best.distance + kNodeTol && from_source && !best.from_source)) {
          best.from_source = from_source;
          best.index = idx;
          best.distance = d;
          found = true;
        }
      };
      for (std::size_t s = 0; s < sources_.size(); ++s) {
        if (network_->segment_index(sources_[s].segment) == seg) {
          consider(true, s, sources_[s].arc);
        }
      }
      for (std::size_t j = 0; j < i; ++j) {
        for (const auto& [jseg, jarc] : nodes_[j].touches) {
          if (jseg == seg) consider(false, j, jarc);
        }
      }
      if (found) node.anchors.push_back(best);
    }
    if (node.anchors.empty()) {
      throw ConfigError("intersection node has no upstream source or intersection; "
                        "check source declarations");
    }
    const double k = static_cast<double>(node.anchors.size());
    double wsq = 0.0;
    for (auto& a : node.anchors) {
      a.weight = std::exp(-a.distance * a.distance / (2.0 * omega_ * omega_));
      wsq += a.weight * a.weight;
    }
    double var = 1.0 - wsq / k;
    if (var < -1e-12) {
      throw NumericalError("intersection variance negative at omega=" + std::to_string(omega_));
    }
    node.sigma = std::sqrt(std::max(var, 0.0));
  }
}

void FieldConstruction::build_segments() {
  const auto& parts = partition_->partitions();
  segments_.resize(parts.size());
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto& plan = segments_[p];
    const std::size_t seg_index = network_->segment_index(parts[p].segment_id);
    plan.offset = offset;
    plan.m = parts[p].cells.size();
    offset += plan.m;
    plan.width = parts[p].cells.front().width;
    plan.eff_omega = scaled_lengthscale(omega_, plan.width, reference_width_);
    plan.arcs.reserve(plan.m);
    for (const auto& cell : parts[p].cells) plan.arcs.push_back(cell.centroid_arc);

    // Conditioning point: the touching intersection node latest in flow
    // order; otherwise a declared source on the segment; otherwise none.
    bool have_node = false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      for (const auto& [s, arc] : nodes_[i].touches) {
        if (s == seg_index) {
          plan.cond = SegmentPlan::Cond::Node;
          plan.cond_index = i;
          plan.cond_arc = arc;
          have_node = true;
        }
      }
    }
    if (!have_node) {
      for (std::size_t s = 0; s < sources_.size(); ++s) {
        if (network_->segment_index(sources_[s].segment) == seg_index) {
          plan.cond = SegmentPlan::Cond::Source;
          plan.cond_index = s;
          plan.cond_arc = sources_[s].arc;
          break;
        }
      }
    }

    Eigen::MatrixXd cov;
    if (plan.cond == SegmentPlan::Cond::None) {
      cov = segment_cov_matrix(plan.arcs, plan.eff_omega, alpha_);
      plan.mean_coef = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(plan.m));
      plan.kp = plan.mean_coef;
      plan.cond_sigma = 1.0;
    } else {
      plan.cond_sigma =
          (plan.cond == SegmentPlan::Cond::Node) ? nodes_[plan.cond_index].sigma : 1.0;
      const auto dist = conditional_segment_dist(plan.arcs, plan.cond_arc, /*z_p=*/1.0,
                                                 /*mu_p=*/0.0, plan.cond_sigma,
                                                 plan.eff_omega, alpha_);
      cov = dist.cov;
      plan.kp.resize(static_cast<Eigen::Index>(plan.m));
      for (std::size_t i = 0; i < plan.m; ++i) {
        plan.kp[static_cast<Eigen::Index>(i)] =
            sqexp_cov(std::abs(plan.arcs[i] - plan.cond_arc), plan.eff_omega, alpha_);
      }
      // mean = sigma^-2 kp (Z - mu) = (kp / sigma) * eps_p when sigma > 0;
      // the degenerate case conditions on the known value directly.
      plan.mean_coef = (plan.cond_sigma > 0.0) ? (plan.kp / plan.cond_sigma).eval()
                                               : (plan.kp / (alpha_ * alpha_)).eval();
    }
    const auto chol = jittered_cholesky(
        cov, alpha_, "omega=" + std::to_string(omega_) + ", segment '" +
                         parts[p].segment_id + "'");
    plan.L = chol.lower;
    plan.jitter = chol.jitter;
  }
  n_cells_ = offset;
}

std::size_t FieldConstruction::node_of_intersection(std::size_t decl_index) const {
  return decl_to_node_.at(decl_index);
}

namespace {
// Innovation layout helpers: [sources | nodes | cells].
struct Layout {
  std::size_t n_src, n_node;
  std::size_t src(std::size_t i) const { return i; }
  std::size_t node(std::size_t i) const { return n_src + i; }
  std::size_t cell(std::size_t offset, std::size_t i) const { return n_src + n_node + offset + i; }
};
}  // namespace

LatentField FieldConstruction::field_from_innovations(const Eigen::VectorXd& eps) const {
  if (static_cast<std::size_t>(eps.size()) != n_innovations()) {
    throw std::invalid_argument("field_from_innovations: innovation size mismatch");
  }
  const Layout lay{n_sources(), n_nodes()};
  LatentField field;
  field.source_values.resize(static_cast<Eigen::Index>(n_sources()));
  for (std::size_t s = 0; s < n_sources(); ++s) {
    field.source_values[static_cast<Eigen::Index>(s)] = eps[static_cast<Eigen::Index>(lay.src(s))];
  }
  field.node_values.resize(static_cast<Eigen::Index>(n_nodes()));
  for (std::size_t i = 0; i < n_nodes(); ++i) {
    const auto& node = nodes_[i];
    const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
    double mu = 0.0;
    for (const auto& a : node.anchors) {
      const std::size_t idx = a.from_source ? lay.src(a.index) : lay.node(a.index);
      mu += a.weight * eps[static_cast<Eigen::Index>(idx)];
    }
    mu *= inv_sqrt_k;
    field.node_values[static_cast<Eigen::Index>(i)] =
        mu + node.sigma * eps[static_cast<Eigen::Index>(lay.node(i))];
  }
  field.z.resize(segments_.size());
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    const auto& plan = segments_[p];
    const Eigen::VectorXd eps_seg =
        eps.segment(static_cast<Eigen::Index>(lay.cell(plan.offset, 0)),
                    static_cast<Eigen::Index>(plan.m));
    double driver = 0.0;
    if (plan.cond == SegmentPlan::Cond::Source) {
      driver = eps[static_cast<Eigen::Index>(lay.src(plan.cond_index))];
    } else if (plan.cond == SegmentPlan::Cond::Node) {
      const auto& node = nodes_[plan.cond_index];
      if (plan.cond_sigma > 0.0) {
        driver = eps[static_cast<Eigen::Index>(lay.node(plan.cond_index))];
      } else {
        const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
        for (const auto& a : node.anchors) {
          const std::size_t idx = a.from_source ? lay.src(a.index) : lay.node(a.index);
          driver += inv_sqrt_k * a.weight * eps[static_cast<Eigen::Index>(idx)];
        }
      }
    }
    field.z[p] = plan.mean_coef * driver +
                 plan.L.template triangularView<Eigen::Lower>() * eps_seg;
  }
  return field;
}

Eigen::VectorXd FieldConstruction::innovation_gradient(const Eigen::VectorXd& grad_cells) const {
  const Layout lay{n_sources(), n_nodes()};
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_innovations()));
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    const auto& plan = segments_[p];
    const Eigen::VectorXd g = grad_cells.segment(static_cast<Eigen::Index>(plan.offset),
                                                 static_cast<Eigen::Index>(plan.m));
    grad.segment(static_cast<Eigen::Index>(lay.cell(plan.offset, 0)),
                 static_cast<Eigen::Index>(plan.m)) +=
        plan.L.template triangularView<Eigen::Lower>().transpose() * g;
    const double driver_adj = plan.mean_coef.dot(g);
    if (plan.cond == SegmentPlan::Cond::Source) {
      grad[static_cast<Eigen::Index>(lay.src(plan.cond_index))] += driver_adj;
    } else if (plan.cond == SegmentPlan::Cond::Node) {
      const auto& node = nodes_[plan.cond_index];
      if (plan.cond_sigma > 0.0) {
        grad[static_cast<Eigen::Index>(lay.node(plan.cond_index))] += driver_adj;
      } else {
        const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
        for (const auto& a : node.anchors) {
          const std::size_t idx = a.from_source ? lay.src(a.index) : lay.node(a.index);
          grad[static_cast<Eigen::Index>(idx)] += inv_sqrt_k * a.weight * driver_adj;
        }
      }
    }
  }
  return grad;
}

namespace {
// dL for Sigma = L L': dL = L * Phi(L^-1 dSigma L^-T), Phi = lower with halved diagonal.
Eigen::MatrixXd cholesky_derivative(const Eigen::MatrixXd& L, const Eigen::MatrixXd& dSigma) {
  const Eigen::MatrixXd inner =
      L.triangularView<Eigen::Lower>().solve(
          L.triangularView<Eigen::Lower>().solve(dSigma).transpose()).transpose();
  Eigen::MatrixXd phi = inner.triangularView<Eigen::StrictlyLower>();
  phi.diagonal() = 0.5 * inner.diagonal();
  return L.triangularView<Eigen::Lower>() * phi;
}
}  // namespace

Eigen::VectorXd FieldConstruction::cell_values_domega(const Eigen::VectorXd& eps) const {
  const Layout lay{n_sources(), n_nodes()};
  // Node weight/sigma derivatives w.r.t. omega.
  std::vector<std::vector<double>> dweight(nodes_.size());
  std::vector<double> dsigma(nodes_.size(), 0.0);
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& node = nodes_[i];
    const double k = static_cast<double>(node.anchors.size());
    double acc = 0.0;
    dweight[i].resize(node.anchors.size());
    for (std::size_t a = 0; a < node.anchors.size(); ++a) {
      const double d = node.anchors[a].distance;
      const double w = node.anchors[a].weight;
      dweight[i][a] = w * d * d / (omega_ * omega_ * omega_);
      acc += w * dweight[i][a];
    }
    dsigma[i] = (node.sigma > 0.0) ? -acc / (k * node.sigma) : 0.0;
  }

  Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_cells_));
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    const auto& plan = segments_[p];
    const Eigen::Index m = static_cast<Eigen::Index>(plan.m);
    const double r = plan.eff_omega / omega_;  // fixed width ratio
    const double eff = plan.eff_omega;

    // dSigma, dkp under the segment's effective lengthscale.
    Eigen::MatrixXd sigma(m, m), dsig(m, m);
    for (Eigen::Index i = 0; i < m; ++i) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        const double d = std::abs(plan.arcs[static_cast<std::size_t>(i)] -
                                  plan.arcs[static_cast<std::size_t>(j)]);
        const double v = sqexp_cov(d, eff, alpha_);
        const double dv = v * d * d * r / (eff * eff * eff);
        sigma(i, j) = sigma(j, i) = v;
        dsig(i, j) = dsig(j, i) = dv;
      }
    }
    Eigen::VectorXd dkp = Eigen::VectorXd::Zero(m);
    Eigen::MatrixXd dcov = dsig;
    Eigen::VectorXd dcoef = Eigen::VectorXd::Zero(m);
    double driver = 0.0;
    double ddriver = 0.0;
    if (plan.cond != SegmentPlan::Cond::None) {
      for (Eigen::Index i = 0; i < m; ++i) {
        const double d = std::abs(plan.arcs[static_cast<std::size_t>(i)] - plan.cond_arc);
        dkp[i] = plan.kp[i] * d * d * r / (eff * eff * eff);
      }
      const double s = plan.cond_sigma;
      double ds = 0.0;
      if (plan.cond == SegmentPlan::Cond::Node) ds = dsigma[plan.cond_index];
      if (plan.cond == SegmentPlan::Cond::Source || s > 0.0) {
        const double sv = (plan.cond == SegmentPlan::Cond::Source) ? 1.0 : s;
        const double dsv = (plan.cond == SegmentPlan::Cond::Source) ? 0.0 : ds;
        dcov -= (dkp * plan.kp.transpose() + plan.kp * dkp.transpose()) / (sv * sv);
        dcov += 2.0 * dsv / (sv * sv * sv) * plan.kp * plan.kp.transpose();
        dcoef = dkp / sv - plan.kp * dsv / (sv * sv);
        driver = (plan.cond == SegmentPlan::Cond::Source)
                     ? eps[static_cast<Eigen::Index>(lay.src(plan.cond_index))]
                     : eps[static_cast<Eigen::Index>(lay.node(plan.cond_index))];
      } else {
        // Degenerate conditioning: coef = kp, driver = mu_p(omega).
        dcov -= (dkp * plan.kp.transpose() + plan.kp * dkp.transpose()) / (alpha_ * alpha_);
        dcoef = dkp / (alpha_ * alpha_);
        const auto& node = nodes_[plan.cond_index];
        const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
        for (std::size_t a = 0; a < node.anchors.size(); ++a) {
          const std::size_t idx = node.anchors[a].from_source ? lay.src(node.anchors[a].index)
                                                              : lay.node(node.anchors[a].index);
          driver += inv_sqrt_k * node.anchors[a].weight * eps[static_cast<Eigen::Index>(idx)];
          ddriver += inv_sqrt_k * dweight[plan.cond_index][a] * eps[static_cast<Eigen::Index>(idx)];
        }
      }
    }
    const Eigen::MatrixXd dL = cholesky_derivative(plan.L, dcov);
    const Eigen::VectorXd eps_seg =
        eps.segment(static_cast<Eigen::Index>(lay.cell(plan.offset, 0)), m);
    out.segment(static_cast<Eigen::Index>(plan.offset), m) =
        dcoef * driver + plan.mean_coef * ddriver + dL * eps_seg;
  }
  return out;
}

LatentField FieldConstruction::sample_prior(RngStream& rng) const {
  Eigen::VectorXd eps(static_cast<Eigen::Index>(n_innovations()));
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
  return field_from_innovations(eps);
}

Eigen::VectorXd FieldConstruction::flatten(const LatentField& field) const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(n_cells_));
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    flat.segment(static_cast<Eigen::Index>(segments_[p].offset),
                 static_cast<Eigen::Index>(segments_[p].m)) = field.z[p];
  }
  return flat;
}

double FieldConstruction::log_prior_density(const LatentField& field,
                                            Eigen::VectorXd* grad) const {
  if (field.z.size() != segments_.size() ||
      static_cast<std::size_t>(field.source_values.size()) != n_sources() ||
      static_cast<std::size_t>(field.node_values.size()) != n_nodes()) {
    throw std::invalid_argument("log_prior_density: field dimensions do not match partition");
  }
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    if (static_cast<std::size_t>(field.z[p].size()) != segments_[p].m) {
      throw std::invalid_argument("log_prior_density: field dimensions do not match partition");
    }
  }

  const std::size_t n_src = n_sources();
  const std::size_t n_node = n_nodes();
  double logp = 0.0;

  // Forward: node means and residuals in flow order.
  std::vector<double> mu(n_node, 0.0), resid(n_node, 0.0);
  auto standardized = [&](const FieldNode::Anchor& a) {
    return a.from_source ? field.source_values[static_cast<Eigen::Index>(a.index)]
                         : resid[a.index];
  };
  for (std::size_t i = 0; i < n_node; ++i) {
    const auto& node = nodes_[i];
    const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
    for (const auto& a : node.anchors) mu[i] += a.weight * standardized(a);
    mu[i] *= inv_sqrt_k;
    const double z = field.node_values[static_cast<Eigen::Index>(i)];
    if (node.sigma > 0.0) {
      resid[i] = (z - mu[i]) / node.sigma;
      logp += -0.5 * resid[i] * resid[i] - std::log(node.sigma) - 0.5 * kLog2Pi;
    } else {
      if (std::abs(z - mu[i]) > 1e-12) return -std::numeric_limits<double>::infinity();
      resid[i] = 0.0;
    }
  }
  for (std::size_t s = 0; s < n_src; ++s) {
    const double z = field.source_values[static_cast<Eigen::Index>(s)];
    logp += -0.5 * z * z - 0.5 * kLog2Pi;
  }

  // Segment terms and cell gradients.
  std::vector<double> adj_mu(n_node, 0.0), adj_z_node(n_node, 0.0), adj_src(n_src, 0.0);
  Eigen::VectorXd grad_cells = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_cells_));
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    const auto& plan = segments_[p];
    double driver = 0.0;
    if (plan.cond == SegmentPlan::Cond::Source) {
      driver = field.source_values[static_cast<Eigen::Index>(plan.cond_index)];
    } else if (plan.cond == SegmentPlan::Cond::Node) {
      driver = (plan.cond_sigma > 0.0) ? resid[plan.cond_index] : mu[plan.cond_index];
    }
    const Eigen::VectorXd r = field.z[p] - plan.mean_coef * driver;
    const Eigen::VectorXd half = plan.L.triangularView<Eigen::Lower>().solve(r);
    logp += -0.5 * half.squaredNorm() - plan.L.diagonal().array().log().sum() -
            0.5 * static_cast<double>(plan.m) * kLog2Pi;
    if (grad) {
      const Eigen::VectorXd q =
          plan.L.triangularView<Eigen::Lower>().transpose().solve(half);  // Sigma^-1 r
      grad_cells.segment(static_cast<Eigen::Index>(plan.offset),
                         static_cast<Eigen::Index>(plan.m)) = -q;
      const double dv = plan.mean_coef.dot(q);  // d logp / d driver
      if (plan.cond == SegmentPlan::Cond::Source) {
        adj_src[plan.cond_index] += dv;
      } else if (plan.cond == SegmentPlan::Cond::Node) {
        if (plan.cond_sigma > 0.0) {
          // driver = (Z_p - mu_p) / sigma_p
          adj_z_node[plan.cond_index] += dv / plan.cond_sigma;
          adj_mu[plan.cond_index] -= dv / plan.cond_sigma;
        } else {
          adj_mu[plan.cond_index] += dv;
        }
      }
    }
  }

  if (grad) {
    // Own node density terms.
    for (std::size_t i = 0; i < n_node; ++i) {
      if (nodes_[i].sigma > 0.0) {
        adj_z_node[i] += -resid[i] / nodes_[i].sigma;
        adj_mu[i] += resid[i] / nodes_[i].sigma;
      }
    }
    // Reverse sweep through anchors: mu_i depends on upstream residuals.
    for (std::size_t ii = n_node; ii-- > 0;) {
      const auto& node = nodes_[ii];
      const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
      for (const auto& a : node.anchors) {
        const double adj_u = adj_mu[ii] * inv_sqrt_k * a.weight;
        if (a.from_source) {
          adj_src[a.index] += adj_u;
        } else if (nodes_[a.index].sigma > 0.0) {
          adj_z_node[a.index] += adj_u / nodes_[a.index].sigma;
          adj_mu[a.index] -= adj_u / nodes_[a.index].sigma;
        }
      }
    }
    for (std::size_t s = 0; s < n_src; ++s) {
      adj_src[s] += -field.source_values[static_cast<Eigen::Index>(s)];
    }
    grad->resize(static_cast<Eigen::Index>(n_src + n_node + n_cells_));
    for (std::size_t s = 0; s < n_src; ++s) (*grad)[static_cast<Eigen::Index>(s)] = adj_src[s];
    for (std::size_t i = 0; i < n_node; ++i) {
      (*grad)[static_cast<Eigen::Index>(n_src + i)] = adj_z_node[i];
    }
    grad->tail(static_cast<Eigen::Index>(n_cells_)) = grad_cells;
  }
  return logp;
}

Eigen::VectorXd FieldConstruction::innovations_from_field(const LatentField& field) const {
  const Layout lay{n_sources(), n_nodes()};
  Eigen::VectorXd eps(static_cast<Eigen::Index>(n_innovations()));
  for (std::size_t s = 0; s < n_sources(); ++s) {
    eps[static_cast<Eigen::Index>(lay.src(s))] =
        field.source_values[static_cast<Eigen::Index>(s)];
  }
  std::vector<double> resid(n_nodes(), 0.0);
  for (std::size_t i = 0; i < n_nodes(); ++i) {
    const auto& node = nodes_[i];
    const double inv_sqrt_k = 1.0 / std::sqrt(static_cast<double>(node.anchors.size()));
    double mu = 0.0;
    for (const auto& a : node.anchors) {
      mu += a.weight * (a.from_source ? field.source_values[static_cast<Eigen::Index>(a.index)]
                                      : resid[a.index]);
    }
    mu *= inv_sqrt_k;
    if (node.sigma <= 0.0) {
      throw NumericalError("innovations_from_field: degenerate node");
    }
    resid[i] = (field.node_values[static_cast<Eigen::Index>(i)] - mu) / node.sigma;
    eps[static_cast<Eigen::Index>(lay.node(i))] = resid[i];
  }
  for (std::size_t p = 0; p < segments_.size(); ++p) {
    const auto& plan = segments_[p];
    double driver = 0.0;
    if (plan.cond == SegmentPlan::Cond::Source) {
      driver = field.source_values[static_cast<Eigen::Index>(plan.cond_index)];
    } else if (plan.cond == SegmentPlan::Cond::Node) {
      driver = resid[plan.cond_index];
    }
    const Eigen::VectorXd r = field.z[p] - plan.mean_coef * driver;
    eps.segment(static_cast<Eigen::Index>(lay.cell(plan.offset, 0)),
                static_cast<Eigen::Index>(plan.m)) =
        plan.L.triangularView<Eigen::Lower>().solve(r);
  }
  return eps;
}

double FieldConstruction::driver_sigma(const SegmentPlan& s) const {
  if (s.cond == SegmentPlan::Cond::None) return 0.0;
  if (s.cond == SegmentPlan::Cond::Source || s.cond_sigma > 0.0) return 1.0;
  // Degenerate node driver is mu_p, a weighted sum of independent innovations.
  const auto& node = nodes_[s.cond_index];
  const double k = static_cast<double>(node.anchors.size());
  double var = 0.0;
  for (const auto& a : node.anchors) var += a.weight * a.weight / k;
  return std::sqrt(var);
}

Eigen::VectorXd FieldConstruction::cell_marginal_variance() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(n_cells_));
  for (const auto& plan : segments_) {
    const double ds = driver_sigma(plan);
    for (std::size_t i = 0; i < plan.m; ++i) {
      const Eigen::Index row = static_cast<Eigen::Index>(i);
      const double lvar = plan.L.row(row).head(row + 1).squaredNorm();
      out[static_cast<Eigen::Index>(plan.offset + i)] =
          plan.mean_coef[row] * plan.mean_coef[row] * ds * ds + lvar;
    }
  }
  return out;
}

}  // namespace hazardfield
