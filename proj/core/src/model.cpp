#include "hazardfield/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLn2 = 0.6931471805599453094172321214582;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}  // namespace

std::size_t SurveyDataset::household_index(const std::string& id) const {
  for (std::size_t j = 0; j < households.size(); ++j) {
    if (households[j].id == id) return j;
  }
  throw ConfigError("observation references unknown household '" + id + "'");
}

void SurveyDataset::validate() const {
  std::set<std::string> ids;
  for (const auto& h : households) {
    if (!ids.insert(h.id).second) {
      throw ConfigError("duplicate household id '" + h.id + "'");
    }
    if (!households.empty() && h.covariates.size() != households.front().covariates.size()) {
      throw ConfigError("household '" + h.id + "' has inconsistent covariate dimension");
    }
  }
  for (const auto& o : observations) {
    if (o.outcome != 0 && o.outcome != 1) {
      throw ConfigError("outcome for household '" + o.household_id + "' is not binary");
    }
    if (ids.find(o.household_id) == ids.end()) {
      throw ConfigError("observation references unknown household '" + o.household_id + "'");
    }
  }
}

void ModelSpec::validate() const {
  if (lambda_scale <= 0.0 || gamma_scale <= 0.0 || rho_scale <= 0.0) {
    throw ConfigError("prior scales must be > 0");
  }
  if (!sample_omega && omega <= 0.0) throw ConfigError("fixed omega must be > 0");
  if (sample_omega && (omega_shape <= 0.0 || omega_rate <= 0.0)) {
    throw ConfigError("omega prior shape/rate must be > 0");
  }
}

double infection_prob(double rate) {
  if (rate < 0.0) throw std::domain_error("infection_prob: rate must be >= 0");
  return -std::expm1(-rate);
}

double log1m_exp_neg(double eta) {
  if (eta <= 0.0) return kNegInf;
  return eta < kLn2 ? std::log(-std::expm1(-eta)) : std::log1p(-std::exp(-eta));
}

double pairwise_tree_sum(const double* data, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += data[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_tree_sum(data, half) + pairwise_tree_sum(data + half, n - half);
}

Posterior::Posterior(const CanalNetwork& network, const PartitionedNetwork& partition,
                     const SurveyDataset& dataset, const ModelSpec& spec)
    : network_(&network), partition_(&partition), spec_(spec) {
  spec_.validate();
  dataset.validate();
  const std::size_t J = dataset.households.size();
  if (J == 0) throw ConfigError("dataset has no households");

  std::vector<Point> locations(J);
  p_ = static_cast<std::size_t>(dataset.households.front().covariates.size());
  covariates_.resize(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(p_));
  n_infected_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(J));
  n_clear_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(J));
  group_of_.resize(J, 0);

  std::map<std::string, std::size_t> by_id;
  std::set<int> groups;
  for (std::size_t j = 0; j < J; ++j) {
    const auto& h = dataset.households[j];
    locations[j] = h.location;
    covariates_.row(static_cast<Eigen::Index>(j)) = h.covariates.transpose();
    by_id[h.id] = j;
    groups.insert(h.group);
  }
  group_ids_.assign(groups.begin(), groups.end());
  for (std::size_t j = 0; j < J; ++j) {
    const int g = dataset.households[j].group;
    group_of_[j] = static_cast<int>(
        std::lower_bound(group_ids_.begin(), group_ids_.end(), g) - group_ids_.begin());
  }
  for (const auto& obs : dataset.observations) {
    const std::size_t j = by_id.at(obs.household_id);
    if (obs.outcome == 1) {
      n_infected_[static_cast<Eigen::Index>(j)] += 1.0;
    } else {
      n_clear_[static_cast<Eigen::Index>(j)] += 1.0;
    }
  }

  tables_ = std::make_unique<ExposureTables>(partition, locations);
  if (!spec_.sample_omega) {
    construction_ = std::make_unique<FieldConstruction>(network, partition, spec_.omega);
  } else {
    // Structure probe at a tiny, always-factorizable lengthscale; only the
    // node/segment layout is reused, per-evaluation factors are rebuilt at
    // the sampled omega.
    construction_ = std::make_unique<FieldConstruction>(network, partition, 1e-3);
  }

  base_dim_ = spec_.group_baselines ? group_ids_.size() : 1;
  const std::size_t n_eps = construction_->n_innovations();
  omega_slot_ = base_dim_ + 1 + p_;
  eps_offset_ = omega_slot_ + (spec_.sample_omega ? 1 : 0);
  dim_ = eps_offset_ + n_eps;

  if (spec_.group_baselines) {
    for (int g : group_ids_) names_.push_back("beta_local." + std::to_string(g));
  } else {
    names_.push_back("lambda");
  }
  names_.push_back("rho");
  for (std::size_t l = 0; l < p_; ++l) names_.push_back("gamma." + std::to_string(l + 1));
  if (spec_.sample_omega) names_.push_back("omega");
  for (const auto& part : partition.partitions()) {
    for (std::size_t m = 0; m < part.cells.size(); ++m) {
      names_.push_back("z." + part.segment_id + "." + std::to_string(m + 1));
    }
  }
  for (std::size_t s = 0; s < construction_->n_sources(); ++s) {
    names_.push_back("zsrc." + std::to_string(s + 1));
  }
  for (std::size_t i = 0; i < construction_->n_nodes(); ++i) {
    names_.push_back("znode." + std::to_string(i + 1));
  }
  for (const auto& h : dataset.households) names_.push_back("theta." + h.id);
}

Posterior::Unpacked Posterior::unpack(const Eigen::VectorXd& u) const {
  if (static_cast<std::size_t>(u.size()) != dim_) {
    throw std::invalid_argument("state dimension mismatch");
  }
  Unpacked s;
  if (spec_.group_baselines) {
    s.beta_local = u.head(static_cast<Eigen::Index>(base_dim_));
  } else {
    s.lambda_b = std::exp(u[0]);
  }
  s.rho = std::exp(u[static_cast<Eigen::Index>(base_dim_)]);
  s.gamma = u.segment(static_cast<Eigen::Index>(base_dim_ + 1), static_cast<Eigen::Index>(p_));
  s.omega = spec_.sample_omega ? std::exp(u[static_cast<Eigen::Index>(omega_slot_)]) : spec_.omega;
  s.eps = u.tail(static_cast<Eigen::Index>(dim_ - eps_offset_));
  return s;
}

const FieldConstruction& Posterior::construction_for(
    double omega, std::unique_ptr<FieldConstruction>& holder) const {
  if (!spec_.sample_omega) return *construction_;
  holder = std::make_unique<FieldConstruction>(*network_, *partition_, omega);
  return *holder;
}

double Posterior::log_likelihood(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  if (!u.allFinite()) throw std::invalid_argument("log_likelihood: non-finite state");
  const Unpacked s = unpack(u);
  if (grad) grad->setZero(static_cast<Eigen::Index>(dim_));

  std::unique_ptr<FieldConstruction> holder;
  const FieldConstruction* cons_ptr = nullptr;
  try {
    cons_ptr = &construction_for(s.omega, holder);
  } catch (const NumericalError&) {
    // A sampled omega outside the factorizable range is out of support;
    // the sampler treats it as a divergence, not an error.
    return kNegInf;
  }
  const FieldConstruction& cons = *cons_ptr;
  const LatentField field = cons.field_from_innovations(s.eps);
  const Eigen::VectorXd z_flat = cons.flatten(field);

  const Eigen::Index J = tables_->distances().rows();
  const auto D = tables_->distances().array();
  Eigen::ArrayXXd K;
  if (spec_.kernel == KernelKind::Exponential) {
    K = (-D / s.rho).exp();
  } else {
    K = (-(D / s.rho).square()).exp();
  }
  const Eigen::ArrayXd wz = z_flat.array().exp() * tables_->widths().array();
  const Eigen::VectorXd theta = K.matrix() * wz.matrix();

  const Eigen::VectorXd xg = covariates_ * s.gamma;
  Eigen::VectorXd eta(J), contrib(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    const double base =
        spec_.group_baselines ? std::exp(s.beta_local[group_of_[static_cast<std::size_t>(j)]])
                              : s.lambda_b;
    eta[j] = std::exp(xg[j]) * (base + theta[j]);
    if (eta[j] <= 0.0 && n_infected_[j] > 0.0) return kNegInf;
    contrib[j] = n_infected_[j] * log1m_exp_neg(eta[j]) - n_clear_[j] * eta[j];
  }
  const double ll = pairwise_tree_sum(contrib.data(), static_cast<std::size_t>(J));
  if (!grad) return ll;
  if (!std::isfinite(ll)) return ll;

  // d ll / d eta_j, then chain to every unconstrained coordinate.
  Eigen::VectorXd g_eta(J), w(J);
  for (Eigen::Index j = 0; j < J; ++j) {
    g_eta[j] = n_infected_[j] / std::expm1(eta[j]) - n_clear_[j];
    w[j] = g_eta[j] * std::exp(xg[j]);
  }

  if (spec_.group_baselines) {
    for (Eigen::Index j = 0; j < J; ++j) {
      const int g = group_of_[static_cast<std::size_t>(j)];
      (*grad)[g] += w[j] * std::exp(s.beta_local[g]);
    }
  } else {
    (*grad)[0] = s.lambda_b * w.sum();
  }

  // rho (as log rho)
  const Eigen::ArrayXXd KD = K * D;
  double dtheta_rho_dot;
  if (spec_.kernel == KernelKind::Exponential) {
    dtheta_rho_dot = (w.transpose() * (KD.matrix() * wz.matrix()))(0) / (s.rho * s.rho);
  } else {
    dtheta_rho_dot =
        2.0 * (w.transpose() * ((KD * D).matrix() * wz.matrix()))(0) / (s.rho * s.rho * s.rho);
  }
  (*grad)[static_cast<Eigen::Index>(base_dim_)] = s.rho * dtheta_rho_dot;

  // gamma
  const Eigen::VectorXd ge = g_eta.cwiseProduct(eta);
  grad->segment(static_cast<Eigen::Index>(base_dim_ + 1), static_cast<Eigen::Index>(p_)) =
      covariates_.transpose() * ge;

  // field cells -> innovations
  const Eigen::VectorXd grad_cells =
      (K.matrix().transpose() * w).array() * wz;
  grad->tail(static_cast<Eigen::Index>(dim_ - eps_offset_)) = cons.innovation_gradient(grad_cells);

  // omega (as log omega)
  if (spec_.sample_omega) {
    const Eigen::VectorXd dz = cons.cell_values_domega(s.eps);
    (*grad)[static_cast<Eigen::Index>(omega_slot_)] = s.omega * grad_cells.dot(dz);
  }
  return ll;
}

double Posterior::log_prior(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  if (!u.allFinite()) throw std::invalid_argument("log_prior: non-finite state");
  const Unpacked s = unpack(u);
  if (grad) grad->setZero(static_cast<Eigen::Index>(dim_));
  double lp = 0.0;

  auto half_normal_logpdf = [](double x, double scale) {
    return 0.5 * std::log(2.0 / M_PI) - std::log(scale) - 0.5 * x * x / (scale * scale);
  };

  if (spec_.group_baselines) {
    for (std::size_t g = 0; g < base_dim_; ++g) {
      const double b = s.beta_local[static_cast<Eigen::Index>(g)];
      lp += -0.5 * b * b - 0.5 * kLog2Pi;
      if (grad) (*grad)[static_cast<Eigen::Index>(g)] = -b;
    }
  } else {
    lp += half_normal_logpdf(s.lambda_b, spec_.lambda_scale) + u[0];
    if (grad) {
      (*grad)[0] = 1.0 - s.lambda_b * s.lambda_b / (spec_.lambda_scale * spec_.lambda_scale);
    }
  }

  const Eigen::Index rho_slot = static_cast<Eigen::Index>(base_dim_);
  lp += half_normal_logpdf(s.rho, spec_.rho_scale) + u[rho_slot];
  if (grad) (*grad)[rho_slot] = 1.0 - s.rho * s.rho / (spec_.rho_scale * spec_.rho_scale);

  for (std::size_t l = 0; l < p_; ++l) {
    const Eigen::Index slot = static_cast<Eigen::Index>(base_dim_ + 1 + l);
    const double g = u[slot];
    lp += -0.5 * g * g / (spec_.gamma_scale * spec_.gamma_scale) -
          std::log(spec_.gamma_scale) - 0.5 * kLog2Pi;
    if (grad) (*grad)[slot] = -g / (spec_.gamma_scale * spec_.gamma_scale);
  }

  if (spec_.sample_omega) {
    const Eigen::Index slot = static_cast<Eigen::Index>(omega_slot_);
    lp += spec_.omega_shape * std::log(spec_.omega_rate) - std::lgamma(spec_.omega_shape) +
          spec_.omega_shape * u[slot] - spec_.omega_rate * s.omega;
    if (grad) (*grad)[slot] = spec_.omega_shape - spec_.omega_rate * s.omega;
  }

  lp += -0.5 * s.eps.squaredNorm() -
        0.5 * static_cast<double>(s.eps.size()) * kLog2Pi;
  if (grad) grad->tail(s.eps.size()) = -s.eps;
  return lp;
}

double Posterior::log_posterior(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
  Eigen::VectorXd gl, gp;
  const double ll = log_likelihood(u, grad ? &gl : nullptr);
  if (!std::isfinite(ll)) {
    if (grad) grad->setZero(static_cast<Eigen::Index>(dim_));
    return ll;
  }
  const double lp = log_prior(u, grad ? &gp : nullptr);
  if (grad) *grad = gl + gp;
  return ll + lp;
}

double Posterior::per_obs_rate(const Eigen::VectorXd& u, std::size_t household) const {
  const Unpacked s = unpack(u);
  std::unique_ptr<FieldConstruction> holder;
  const FieldConstruction& cons = construction_for(s.omega, holder);
  const Eigen::VectorXd z_flat = cons.flatten(cons.field_from_innovations(s.eps));
  const DistanceKernel kernel{spec_.kernel, s.rho};
  const double theta = discretized_exposure(z_flat, kernel, *tables_, household);
  const double base = spec_.group_baselines ? std::exp(s.beta_local[group_of_[household]])
                                            : s.lambda_b;
  const double xg = covariates_.row(static_cast<Eigen::Index>(household)) * s.gamma;
  return std::exp(xg) * (base + theta);
}

Eigen::VectorXd Posterior::constrained_draw(const Eigen::VectorXd& u) const {
  const Unpacked s = unpack(u);
  std::unique_ptr<FieldConstruction> holder;
  const FieldConstruction& cons = construction_for(s.omega, holder);
  const LatentField field = cons.field_from_innovations(s.eps);
  const Eigen::VectorXd z_flat = cons.flatten(field);

  const Eigen::Index J = tables_->distances().rows();
  const auto D = tables_->distances().array();
  Eigen::ArrayXXd K;
  if (spec_.kernel == KernelKind::Exponential) {
    K = (-D / s.rho).exp();
  } else {
    K = (-(D / s.rho).square()).exp();
  }
  const Eigen::VectorXd theta =
      K.matrix() * (z_flat.array().exp() * tables_->widths().array()).matrix();

  Eigen::VectorXd out(static_cast<Eigen::Index>(names_.size()));
  Eigen::Index at = 0;
  if (spec_.group_baselines) {
    out.segment(at, static_cast<Eigen::Index>(base_dim_)) = s.beta_local;
    at += static_cast<Eigen::Index>(base_dim_);
  } else {
    out[at++] = s.lambda_b;
  }
  out[at++] = s.rho;
  out.segment(at, static_cast<Eigen::Index>(p_)) = s.gamma;
  at += static_cast<Eigen::Index>(p_);
  if (spec_.sample_omega) out[at++] = s.omega;
  out.segment(at, z_flat.size()) = z_flat;
  at += z_flat.size();
  out.segment(at, field.source_values.size()) = field.source_values;
  at += field.source_values.size();
  out.segment(at, field.node_values.size()) = field.node_values;
  at += field.node_values.size();
  out.segment(at, J) = theta;
  return out;
}

std::vector<double> change_in_odds(const Eigen::MatrixXd& draws,
                                   const std::vector<std::string>& names,
                                   const PartitionedNetwork& partition, KernelKind kernel,
                                   const Point& s1, const Point& s2) {
  auto column = [&](const std::string& name) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == name) return static_cast<Eigen::Index>(c);
    }
    throw ConfigError("draws are missing parameter '" + name + "'");
  };
  const Eigen::Index lambda_col = column("lambda");
  const Eigen::Index rho_col = column("rho");

  std::vector<Eigen::Index> z_cols;
  std::vector<double> width, dist1, dist2;
  for (const auto& part : partition.partitions()) {
    for (std::size_t m = 0; m < part.cells.size(); ++m) {
      z_cols.push_back(column("z." + part.segment_id + "." + std::to_string(m + 1)));
      width.push_back(part.cells[m].width);
      dist1.push_back(euclid_distance(s1, part.cells[m].centroid));
      dist2.push_back(euclid_distance(s2, part.cells[m].centroid));
    }
  }

  std::vector<double> out(static_cast<std::size_t>(draws.rows()));
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    const double lambda = draws(r, lambda_col);
    const DistanceKernel k{kernel, draws(r, rho_col)};
    double theta1 = 0.0, theta2 = 0.0;
    for (std::size_t m = 0; m < z_cols.size(); ++m) {
      const double mass = std::exp(draws(r, z_cols[m])) * width[m];
      theta1 += kernel_eval(k, dist1[m]) * mass;
      theta2 += kernel_eval(k, dist2[m]) * mass;
    }
    out[static_cast<std::size_t>(r)] =
        std::expm1(-(lambda + theta2)) / std::expm1(-(lambda + theta1)) - 1.0;
  }
  return out;
}

Eigen::VectorXd min_distance_predictor(const CanalNetwork& network,
                                       const SurveyDataset& dataset) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(dataset.households.size()));
  for (std::size_t j = 0; j < dataset.households.size(); ++j) {
    const double d = min_distance_to_network(network, dataset.households[j].location);
    if (d <= 0.0) {
      throw ConfigError("household '" + dataset.households[j].id +
                        "' lies on the canal (distance 0); apply a distance floor upstream");
    }
    out[static_cast<Eigen::Index>(j)] = std::log(d);
  }
  return out;
}

}  // namespace hazardfield
