#include "hazardfield/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hazardfield/errors.hpp"

namespace hazardfield {

double quantile(std::vector<double> draws, double p) {
  if (draws.empty()) throw std::invalid_argument("quantile of empty draws");
  p = std::clamp(p, 0.0, 1.0);
  std::sort(draws.begin(), draws.end());
  const double h = (static_cast<double>(draws.size()) - 1.0) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, draws.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return draws[lo] + frac * (draws[hi] - draws[lo]);
}

double inverse_normal_cdf(double p) {
  // Acklam's rational approximation, |relative error| < 1.15e-9.
  if (p <= 0.0 || p >= 1.0) {
    throw std::domain_error("inverse_normal_cdf: p must be in (0, 1)");
  }
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double q, r;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  q = p - 0.5;
  r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

namespace {

std::vector<Eigen::VectorXd> split_chains(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<Eigen::VectorXd> out;
  for (const auto& chain : chains) {
    const Eigen::Index n = chain.size() / 2;
    if (n < 1) continue;
    out.push_back(chain.head(n));
    out.push_back(chain.tail(n));
  }
  return out;
}

// Pooled average ranks (ties averaged), then inverse-normal with the
// fractional offset (r - 3/8) / (S + 1/4).
std::vector<Eigen::VectorXd> rank_normalize(const std::vector<Eigen::VectorXd>& seqs) {
  std::size_t total = 0;
  for (const auto& s : seqs) total += static_cast<std::size_t>(s.size());
  std::vector<std::pair<double, std::size_t>> pooled;
  pooled.reserve(total);
  std::size_t at = 0;
  for (const auto& s : seqs) {
    for (Eigen::Index i = 0; i < s.size(); ++i) pooled.emplace_back(s[i], at++);
  }
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<double> rank(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && pooled[j + 1].first == pooled[i].first) ++j;
    const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k) rank[pooled[k].second] = avg;
    i = j + 1;
  }
  std::vector<Eigen::VectorXd> out;
  out.reserve(seqs.size());
  const double denom = static_cast<double>(total) + 0.25;
  at = 0;
  for (const auto& s : seqs) {
    Eigen::VectorXd z(s.size());
    for (Eigen::Index k = 0; k < s.size(); ++k) {
      z[k] = inverse_normal_cdf((rank[at++] - 0.375) / denom);
    }
    out.push_back(std::move(z));
  }
  return out;
}

bool zero_within_variance(const std::vector<Eigen::VectorXd>& seqs) {
  for (const auto& s : seqs) {
    for (Eigen::Index i = 1; i < s.size(); ++i) {
      if (s[i] != s[0]) return false;
    }
  }
  return true;
}

std::optional<double> rhat_of(const std::vector<Eigen::VectorXd>& seqs) {
  const std::size_t m = seqs.size();
  if (m < 2) return std::nullopt;
  const double n = static_cast<double>(seqs.front().size());
  if (n < 2) return std::nullopt;
  double w = 0.0;
  std::vector<double> means(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = seqs[c].mean();
    w += (seqs[c].array() - means[c]).square().sum() / (n - 1.0);
  }
  w /= static_cast<double>(m);
  if (w <= 0.0) return std::nullopt;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b_over_n = 0.0;
  for (const double mu : means) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= static_cast<double>(m - 1);
  const double var_plus = w * (n - 1.0) / n + b_over_n;
  return std::sqrt(var_plus / w);
}

std::optional<double> ess_of(const std::vector<Eigen::VectorXd>& seqs) {
  const std::size_t m = seqs.size();
  if (m < 2) return std::nullopt;
  const Eigen::Index n = seqs.front().size();
  if (n < 4) return std::nullopt;
  if (zero_within_variance(seqs)) return std::nullopt;

  std::vector<double> means(m);
  std::vector<Eigen::VectorXd> centered(m);
  double w = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = seqs[c].mean();
    centered[c] = seqs[c].array() - means[c];
    w += centered[c].squaredNorm() / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b_over_n = 0.0;
  for (const double mu : means) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= static_cast<double>(m - 1);
  const double var_plus = w * (n - 1.0) / static_cast<double>(n) + b_over_n;
  if (var_plus <= 0.0) return std::nullopt;

  auto mean_acov = [&](Eigen::Index t) {
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      acc += centered[c].head(n - t).dot(centered[c].tail(n - t)) / static_cast<double>(n);
    }
    return acc / static_cast<double>(m);
  };

  // Geyer initial-monotone paired sums of autocorrelations.
  double tau = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    const double rho_even = 1.0 - (w - mean_acov(t)) / var_plus;
    const double rho_odd = 1.0 - (w - mean_acov(t + 1)) / var_plus;
    double pair = rho_even + rho_odd;
    if (pair < 0.0 && t > 0) break;
    pair = std::min(pair, prev_pair);
    pair = std::max(pair, 0.0);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  tau -= 1.0;  // rho_0 = 1 was double-counted inside the first pair
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m) * static_cast<double>(n)));
  const double total = static_cast<double>(m) * static_cast<double>(n);
  return std::min(total / tau, total * std::log10(total));
}

}  // namespace

std::optional<double> split_rhat_rank_normalized(const std::vector<Eigen::VectorXd>& chains) {
  const auto seqs = split_chains(chains);
  if (seqs.size() < 2) return std::nullopt;
  if (zero_within_variance(seqs)) return std::nullopt;
  return rhat_of(rank_normalize(seqs));
}

std::optional<double> ess_bulk(const std::vector<Eigen::VectorXd>& chains) {
  const auto seqs = split_chains(chains);
  if (seqs.size() < 2) return std::nullopt;
  if (zero_within_variance(seqs)) return std::nullopt;
  return ess_of(rank_normalize(seqs));
}

std::optional<double> ess_tail(const std::vector<Eigen::VectorXd>& chains) {
  std::vector<double> pooled;
  for (const auto& c : chains) {
    pooled.insert(pooled.end(), c.data(), c.data() + c.size());
  }
  if (pooled.empty()) return std::nullopt;
  std::optional<double> worst;
  for (const double p : {0.05, 0.95}) {
    const double q = quantile(pooled, p);
    std::vector<Eigen::VectorXd> indicator;
    indicator.reserve(chains.size());
    for (const auto& c : chains) {
      indicator.push_back((c.array() <= q).cast<double>());
    }
    const auto seqs = split_chains(indicator);
    if (seqs.size() < 2 || zero_within_variance(seqs)) return std::nullopt;
    const auto e = ess_of(seqs);
    if (!e) return std::nullopt;
    if (!worst || *e < *worst) worst = e;
  }
  return worst;
}

const ParameterSummary& FitReport::parameter(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return p;
  }
  throw ConfigError("no summary for parameter '" + name + "'");
}

FitReport summarize(const std::vector<ChainOutput>& chains, int max_tree_depth) {
  if (chains.empty()) throw std::invalid_argument("summarize: no chains");
  FitReport report;
  const auto& names = chains.front().names;
  for (const auto& c : chains) {
    report.divergences += c.divergence_count();
    report.max_depth_hits += c.max_depth_hits(max_tree_depth);
  }
  report.parameters.reserve(names.size());
  for (std::size_t col = 0; col < names.size(); ++col) {
    ParameterSummary s;
    s.name = names[col];
    std::vector<Eigen::VectorXd> per_chain;
    std::vector<double> pooled;
    for (const auto& c : chains) {
      per_chain.push_back(c.draws.col(static_cast<Eigen::Index>(col)));
      pooled.insert(pooled.end(), per_chain.back().data(),
                    per_chain.back().data() + per_chain.back().size());
    }
    const double n = static_cast<double>(pooled.size());
    double mean = 0.0;
    for (const double x : pooled) mean += x;
    mean /= n;
    double ss = 0.0;
    for (const double x : pooled) ss += (x - mean) * (x - mean);
    s.mean = mean;
    s.sd = (n > 1) ? std::sqrt(ss / (n - 1.0)) : 0.0;
    s.q01 = quantile(pooled, 0.01);
    s.q10 = quantile(pooled, 0.10);
    s.q50 = quantile(pooled, 0.50);
    s.q90 = quantile(pooled, 0.90);
    s.q99 = quantile(pooled, 0.99);
    s.rhat = split_rhat_rank_normalized(per_chain);
    s.ess_bulk = ess_bulk(per_chain);
    s.ess_tail = ess_tail(per_chain);
    report.parameters.push_back(std::move(s));
  }
  return report;
}

}  // namespace hazardfield
