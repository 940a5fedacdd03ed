#include <doctest.h>

#include <cmath>

#include "hazardfield/diagnostics.hpp"
#include "hazardfield/errors.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/sampler.hpp"

namespace hf = hazardfield;

namespace {

hf::LogDensityGradient standard_normal(int dim) {
  return [dim](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad) *grad = -x;
    (void)dim;
    return -0.5 * x.squaredNorm();
  };
}

hf::LogDensityGradient scaled_normal(const Eigen::VectorXd& sd) {
  return [sd](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    const Eigen::ArrayXd v = sd.array().square();
    if (grad) *grad = (-x.array() / v).matrix();
    return -0.5 * (x.array().square() / v).sum();
  };
}

}  // namespace

TEST_CASE("leapfrog reversibility") {
  const auto logp = standard_normal(5);
  hf::RngStream rng(3);
  Eigen::VectorXd q(5), p(5);
  for (int i = 0; i < 5; ++i) {
    q[i] = rng.normal();
    p[i] = rng.normal();
  }
  const Eigen::VectorXd q0 = q, p0 = p;
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(5);
  const int steps = 25;
  for (int s = 0; s < steps; ++s) REQUIRE(hf::leapfrog(logp, q, p, 0.05, inv_mass));
  p = -p;  // negate momentum and integrate back
  for (int s = 0; s < steps; ++s) REQUIRE(hf::leapfrog(logp, q, p, 0.05, inv_mass));
  CHECK((q - q0).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((p + p0).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("leapfrog with zero momentum and zero gradient keeps the state") {
  const auto flat = [](const Eigen::VectorXd& x, Eigen::VectorXd* grad) {
    if (grad) grad->setZero(x.size());
    return 0.0;
  };
  Eigen::VectorXd q = Eigen::VectorXd::Constant(3, 1.5);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3);
  REQUIRE(hf::leapfrog(flat, q, p, 0.3, Eigen::VectorXd::Ones(3)));
  CHECK((q.array() == 1.5).all());
  CHECK((p.array() == 0.0).all());
}

TEST_CASE("leapfrog energy error scales as step squared") {
  // harmonic oscillator: H = q^2/2 + p^2/2
  const auto logp = standard_normal(1);
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(1);
  auto max_energy_error = [&](double step) {
    Eigen::VectorXd q(1), p(1);
    q[0] = 1.0;
    p[0] = 0.0;
    const double h0 = 0.5 * (q[0] * q[0] + p[0] * p[0]);
    double worst = 0.0;
    const int steps = static_cast<int>(std::round(10.0 / step));
    for (int s = 0; s < steps; ++s) {
      REQUIRE(hf::leapfrog(logp, q, p, step, inv_mass));
      worst = std::max(worst, std::abs(0.5 * (q[0] * q[0] + p[0] * p[0]) - h0));
    }
    return worst;
  };
  const double coarse = max_energy_error(0.1);
  const double fine = max_energy_error(0.05);
  CHECK(coarse / fine == doctest::Approx(4.0).epsilon(0.25));
}

TEST_CASE("nuts_transition is deterministic under a fixed seed") {
  const auto logp = standard_normal(4);
  const Eigen::VectorXd inv_mass = Eigen::VectorXd::Ones(4);
  Eigen::VectorXd qa = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd qb = Eigen::VectorXd::Zero(4);
  hf::RngStream ra(11), rb(11);
  for (int i = 0; i < 50; ++i) {
    hf::nuts_transition(logp, qa, 0.5, inv_mass, ra, 10, 1000.0);
    hf::nuts_transition(logp, qb, 0.5, inv_mass, rb, 10, 1000.0);
  }
  CHECK((qa - qb).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a hard barrier produces divergences but the chain stays in support") {
  // density: standard normal for x > 0, -inf otherwise
  const auto barrier = [](const Eigen::VectorXd& x, Eigen::VectorXd* grad) -> double {
    if (x[0] <= 0.0) return -std::numeric_limits<double>::infinity();
    if (grad) *grad = -x;
    return -0.5 * x.squaredNorm();
  };
  hf::RngStream rng(5);
  Eigen::VectorXd q = Eigen::VectorXd::Constant(1, 0.05);
  int divergences = 0;
  for (int i = 0; i < 200; ++i) {
    const auto stats = hf::nuts_transition(barrier, q, 0.4, Eigen::VectorXd::Ones(1), rng, 8,
                                           1000.0);
    divergences += stats.divergent;
    REQUIRE(q[0] > 0.0);
  }
  CHECK(divergences > 0);
}

TEST_CASE("sampler calibration on the 10-d standard normal") {
  const int dim = 10;
  hf::SamplerConfig config;
  config.chains = 4;
  config.warmup_iters = 2000;
  config.sampling_iters = 2000;
  config.target_accept = 0.95;
  config.seed = 20240817;
  config.threads = 2;

  std::vector<std::string> names;
  for (int i = 0; i < dim; ++i) names.push_back("x." + std::to_string(i + 1));
  const auto chains = hf::run_chains(
      standard_normal(dim), dim, [](const Eigen::VectorXd& u) { return u; }, names, config);
  REQUIRE(chains.size() == 4);

  int divergences = 0;
  double accept_acc = 0.0;
  std::size_t accept_n = 0;
  for (const auto& c : chains) {
    REQUIRE(c.draws.rows() == 2000);
    divergences += c.divergence_count();
    for (const double a : c.accept_stat) {
      accept_acc += a;
      ++accept_n;
    }
  }
  CHECK(divergences == 0);
  const double accept_mean = accept_acc / static_cast<double>(accept_n);
  CHECK(accept_mean > 0.88);
  CHECK(accept_mean < 1.0);

  for (int d = 0; d < dim; ++d) {
    std::vector<Eigen::VectorXd> cols;
    std::vector<double> pooled;
    for (const auto& c : chains) {
      cols.push_back(c.draws.col(d));
      pooled.insert(pooled.end(), cols.back().data(), cols.back().data() + cols.back().size());
    }
    const double n = static_cast<double>(pooled.size());
    double mean = 0.0;
    for (const double x : pooled) mean += x;
    mean /= n;
    double var = 0.0;
    for (const double x : pooled) var += (x - mean) * (x - mean);
    var /= (n - 1.0);

    const auto ess = hf::ess_bulk(cols);
    REQUIRE(ess.has_value());
    const double se = std::sqrt(var / *ess);
    CHECK(std::abs(mean) < 3.0 * se);
    CHECK(var == doctest::Approx(1.0).epsilon(0.10));
    const auto rhat = hf::split_rhat_rank_normalized(cols);
    REQUIRE(rhat.has_value());
    CHECK(*rhat < 1.01);
  }
}

TEST_CASE("KS test on NUTS marginals against the standard normal") {
  const int dim = 3;
  hf::SamplerConfig config;
  config.chains = 4;
  config.warmup_iters = 500;
  config.sampling_iters = 1000;
  config.target_accept = 0.9;
  config.seed = 99;
  config.threads = 2;
  std::vector<std::string> names = {"a", "b", "c"};
  const auto chains = hf::run_chains(
      standard_normal(dim), dim, [](const Eigen::VectorXd& u) { return u; }, names, config);

  // n = 4000 pooled draws per marginal, KS at alpha = 0.01
  for (int d = 0; d < dim; ++d) {
    std::vector<double> x;
    for (const auto& c : chains) {
      x.insert(x.end(), c.draws.col(d).data(), c.draws.col(d).data() + c.draws.rows());
    }
    std::sort(x.begin(), x.end());
    const double n = static_cast<double>(x.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double cdf = 0.5 * std::erfc(-x[i] / std::sqrt(2.0));
      ks = std::max(ks, std::abs(cdf - (static_cast<double>(i) + 1.0) / n));
      ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
    }
    CHECK(ks < 1.628 / std::sqrt(n));
  }
}

TEST_CASE("adaptation recovers an ill-scaled diagonal metric") {
  Eigen::VectorXd sd(2);
  sd << 1.0, 100.0;
  hf::SamplerConfig config;
  config.warmup_iters = 2000;
  config.sampling_iters = 10;
  config.target_accept = 0.9;
  config.seed = 7;
  hf::RngStream rng = hf::RngStream::keyed(7, 0);
  const auto adapted =
      hf::adapt(scaled_normal(sd), Eigen::VectorXd::Zero(2), config, rng);
  CHECK(adapted.inv_mass[0] == doctest::Approx(1.0).epsilon(2.0));
  CHECK(adapted.inv_mass[1] / 10000.0 > 1.0 / 3.0);
  CHECK(adapted.inv_mass[1] / 10000.0 < 3.0);
}

TEST_CASE("a higher acceptance target never yields a larger step size") {
  const auto logp = standard_normal(5);
  auto adapted_step = [&](double target) {
    hf::SamplerConfig config;
    config.warmup_iters = 1000;
    config.sampling_iters = 10;
    config.target_accept = target;
    config.seed = 4242;
    hf::RngStream rng = hf::RngStream::keyed(4242, 0);
    return hf::adapt(logp, Eigen::VectorXd::Zero(5), config, rng).step;
  };
  CHECK(adapted_step(0.95) <= adapted_step(0.8));
}

TEST_CASE("chains run concurrently equal chains run sequentially") {
  const auto logp = standard_normal(3);
  hf::SamplerConfig config;
  config.chains = 4;
  config.warmup_iters = 300;
  config.sampling_iters = 200;
  config.seed = 321;
  std::vector<std::string> names = {"a", "b", "c"};
  const auto report = [](const Eigen::VectorXd& u) { return u; };

  config.threads = 1;
  const auto seq = hf::run_chains(logp, 3, report, names, config);
  config.threads = 4;
  const auto par = hf::run_chains(logp, 3, report, names, config);
  REQUIRE(seq.size() == par.size());
  for (std::size_t c = 0; c < seq.size(); ++c) {
    CHECK((seq[c].draws - par[c].draws).cwiseAbs().maxCoeff() == 0.0);
    CHECK(seq[c].divergent == par[c].divergent);
  }
  // divergence count equals the sum of flags
  for (const auto& c : seq) {
    int total = 0;
    for (const auto f : c.divergent) total += f;
    CHECK(c.divergence_count() == total);
  }
}

TEST_CASE("initialization failure aborts with a sampler error") {
  const auto nowhere = [](const Eigen::VectorXd&, Eigen::VectorXd*) {
    return -std::numeric_limits<double>::infinity();
  };
  hf::SamplerConfig config;
  config.chains = 1;
  config.warmup_iters = 150;
  config.sampling_iters = 10;
  config.seed = 1;
  CHECK_THROWS_AS(hf::run_chains(nowhere, 2, [](const Eigen::VectorXd& u) { return u; },
                                 {"a", "b"}, config),
                  hf::SamplerError);
}

TEST_CASE("sampler config validation") {
  hf::SamplerConfig config;
  config.warmup_iters = 100;  // below the minimum for windowed adaptation
  CHECK_THROWS_AS(config.validate(), hf::ConfigError);
  config.warmup_iters = 150;
  config.target_accept = 1.5;
  CHECK_THROWS_AS(config.validate(), hf::ConfigError);
  config.target_accept = 0.9;
  CHECK_NOTHROW(config.validate());
}
