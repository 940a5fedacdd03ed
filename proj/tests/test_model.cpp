#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hazardfield/errors.hpp"
#include "hazardfield/model.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/simstudy.hpp"

namespace hf = hazardfield;

namespace {

hf::SurveyDataset random_dataset(int j, int i, hf::RngStream& rng) {
  hf::SurveyDataset ds;
  for (int a = 0; a < j; ++a) {
    hf::Household h;
    h.id = std::to_string(a + 1);
    h.location = {rng.uniform(0.0, 10.0), rng.uniform(0.0, 4.0)};
    h.group = 0;
    h.covariates.resize(1);
    h.covariates[0] = rng.normal();
    ds.households.push_back(std::move(h));
    for (int b = 0; b < i; ++b) {
      ds.observations.push_back({std::to_string(a + 1), rng.bernoulli(0.2) ? 1 : 0});
    }
  }
  return ds;
}

struct Setup {
  hf::CanalNetwork network = hf::paper_geometry_split();
  hf::PartitionedNetwork partition;
  hf::SurveyDataset dataset;
  hf::ModelSpec spec;

  Setup(int m, int j, int i, std::uint64_t seed, bool sample_omega = false, bool groups = false)
      : partition(hf::build_partition(network, hf::paper_grid(m))) {
    hf::RngStream rng(seed);
    dataset = random_dataset(j, i, rng);
    if (groups) {
      for (std::size_t a = 0; a < dataset.households.size(); ++a) {
        dataset.households[a].group = static_cast<int>(a % 3);
      }
    }
    spec.sample_omega = sample_omega;
    spec.omega = 0.35;
    spec.group_baselines = groups;
  }
};

Eigen::VectorXd random_state(const hf::Posterior& post, hf::RngStream& rng, double scale = 0.3) {
  Eigen::VectorXd u(static_cast<Eigen::Index>(post.dim()));
  for (Eigen::Index k = 0; k < u.size(); ++k) u[k] = scale * rng.normal();
  return u;
}

void check_gradient(const hf::Posterior& post,
                    double (hf::Posterior::*fn)(const Eigen::VectorXd&, Eigen::VectorXd*) const,
                    const Eigen::VectorXd& u) {
  Eigen::VectorXd grad;
  (post.*fn)(u, &grad);
  const double h = 1e-5;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    Eigen::VectorXd up = u, dn = u;
    up[k] += h;
    dn[k] -= h;
    const double fd = ((post.*fn)(up, nullptr) - (post.*fn)(dn, nullptr)) / (2.0 * h);
    if (std::abs(grad[k]) < 1e-8) {
      CHECK(std::abs(fd - grad[k]) < 1e-6);
    } else {
      CHECK(fd == doctest::Approx(grad[k]).epsilon(1e-5));
    }
  }
}

}  // namespace

TEST_CASE("infection_prob closed forms") {
  CHECK(hf::infection_prob(0.0) == doctest::Approx(0.0));
  CHECK(hf::infection_prob(0.05) == doctest::Approx(0.0487706).epsilon(1e-5));
  CHECK(hf::infection_prob(1e6) == doctest::Approx(1.0));
  CHECK_THROWS_AS(hf::infection_prob(-0.1), std::domain_error);
}

TEST_CASE("log1m_exp_neg is stable across the full range") {
  for (double eta = 1e-12; eta < 50.0; eta *= 3.7) {
    const long double exact = std::log(-std::expm1l(-static_cast<long double>(eta)));
    CHECK(hf::log1m_exp_neg(eta) ==
          doctest::Approx(static_cast<double>(exact)).epsilon(1e-12));
  }
  CHECK(hf::log1m_exp_neg(0.0) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("pairwise_tree_sum equals sequential summation") {
  hf::RngStream rng(8);
  std::vector<double> x(1234);
  long double want = 0.0;
  for (auto& v : x) {
    v = rng.normal();
    want += v;
  }
  CHECK(hf::pairwise_tree_sum(x.data(), x.size()) ==
        doctest::Approx(static_cast<double>(want)).epsilon(1e-13));
}

TEST_CASE("per_obs_rate closed forms") {
  Setup s(8, 4, 2, 21);
  s.dataset.households[0].covariates[0] = 1.0;
  s.dataset.households[0].location = {5.0, 200.0};  // effectively zero exposure
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);

  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.dim()));
  u[0] = std::log(0.05);  // lambda_b
  u[1] = std::log(0.1);   // rho
  u[2] = 0.0;             // gamma
  CHECK(post.per_obs_rate(u, 0) == doctest::Approx(0.05).epsilon(1e-6));

  // x=1, gamma=-0.15, lambda=0.05, theta ~ 0 at this distance
  u[2] = -0.15;
  CHECK(post.per_obs_rate(u, 0) == doctest::Approx(std::exp(-0.15) * 0.05).epsilon(1e-6));
  // the derived value from the study parameters with theta = 0.1
  CHECK(std::exp(-0.15) * (0.05 + 0.1) == doctest::Approx(0.129106).epsilon(1e-5));

  // doubling exp(gamma'x) doubles the rate
  const double r1 = post.per_obs_rate(u, 1);
  Eigen::VectorXd u2 = u;
  u2[2] += std::log(2.0) / s.dataset.households[1].covariates[0];
  const double r2 = post.per_obs_rate(u2, 1);
  CHECK(r2 / r1 == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("log_likelihood equals the per-observation brute force") {
  hf::RngStream rng(90);
  for (int rep = 0; rep < 50; ++rep) {
    Setup s(6, 1 + static_cast<int>(rng.uniform_int(10)),
            1 + static_cast<int>(rng.uniform_int(5)), 1000 + static_cast<std::uint64_t>(rep));
    const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
    const Eigen::VectorXd u = random_state(post, rng);

    const double got = post.log_likelihood(u);
    long double want = 0.0;
    for (const auto& obs : s.dataset.observations) {
      const std::size_t j = s.dataset.household_index(obs.household_id);
      const double eta = post.per_obs_rate(u, j);
      want += (obs.outcome == 1) ? hf::log1m_exp_neg(eta) : -eta;
    }
    CHECK(got == doctest::Approx(static_cast<double>(want)).epsilon(1e-12));
  }
}

TEST_CASE("log_likelihood gradient matches finite differences") {
  hf::RngStream rng(7);
  Setup s(6, 8, 3, 77);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  for (int rep = 0; rep < 5; ++rep) {
    check_gradient(post, &hf::Posterior::log_likelihood, random_state(post, rng));
  }
}

TEST_CASE("log_prior gradient matches finite differences") {
  hf::RngStream rng(13);
  Setup s(6, 5, 2, 31);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  for (int rep = 0; rep < 5; ++rep) {
    check_gradient(post, &hf::Posterior::log_prior, random_state(post, rng));
  }
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.dim()));
  CHECK(std::isfinite(post.log_prior(zero)));
}

TEST_CASE("log_posterior gradient matches finite differences at 20 random states") {
  hf::RngStream rng(17);
  Setup s(6, 10, 3, 55);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  for (int rep = 0; rep < 20; ++rep) {
    check_gradient(post, &hf::Posterior::log_posterior, random_state(post, rng));
  }
}

TEST_CASE("gradients with sampled omega and group baselines") {
  hf::RngStream rng(19);
  Setup s(6, 6, 2, 91, /*sample_omega=*/true, /*groups=*/true);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  const Eigen::Index omega_slot = static_cast<Eigen::Index>(post.n_groups() + 1 + 1);
  for (int rep = 0; rep < 5; ++rep) {
    Eigen::VectorXd u = random_state(post, rng, 0.2);
    u[omega_slot] = std::log(0.3) + 0.05 * rng.normal();  // inside the factorizable range
    check_gradient(post, &hf::Posterior::log_posterior, u);
  }
}

TEST_CASE("hostile sampled omega is out of support, not an error") {
  Setup s(8, 4, 2, 23, /*sample_omega=*/true);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  hf::RngStream rng(1);
  Eigen::VectorXd u = random_state(post, rng, 0.1);
  u[3] = std::log(6.0);  // way past the factorizable boundary
  Eigen::VectorXd grad;
  CHECK(post.log_posterior(u, &grad) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("log_posterior is likelihood plus prior and order-invariant") {
  hf::RngStream rng(23);
  Setup s(6, 7, 3, 47);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  const Eigen::VectorXd u = random_state(post, rng);
  CHECK(post.log_posterior(u) ==
        doctest::Approx(post.log_likelihood(u) + post.log_prior(u)).epsilon(1e-14));

  hf::SurveyDataset shuffled = s.dataset;
  std::reverse(shuffled.observations.begin(), shuffled.observations.end());
  const hf::Posterior post2(s.network, s.partition, shuffled, s.spec);
  CHECK(post2.log_likelihood(u) == doctest::Approx(post.log_likelihood(u)).epsilon(1e-14));
}

TEST_CASE("posterior density is invariant under segment relabeling") {
  auto make = [](bool swapped) {
    const double h = 8.0 / 3.0;
    std::vector<hf::CanalSegment> segments;
    if (!swapped) {
      segments.emplace_back("x1", std::vector<hf::Point>{{0.0, 0.0}, {10.0, 0.0}});
      segments.emplace_back("x2", std::vector<hf::Point>{{0.0, h}, {10.0, h}});
      segments.emplace_back("y1", std::vector<hf::Point>{{5.0, 0.0}, {5.0, h}});
      segments.emplace_back("y2", std::vector<hf::Point>{{5.0, h}, {5.0, 4.0}});
    } else {
      segments.emplace_back("x2", std::vector<hf::Point>{{0.0, h}, {10.0, h}});
      segments.emplace_back("x1", std::vector<hf::Point>{{0.0, 0.0}, {10.0, 0.0}});
      segments.emplace_back("y2", std::vector<hf::Point>{{5.0, h}, {5.0, 4.0}});
      segments.emplace_back("y1", std::vector<hf::Point>{{5.0, 0.0}, {5.0, h}});
    }
    std::vector<hf::IntersectionDecl> isect{
        {"x1", 5.0, "y1", 0.0}, {"x2", 5.0, "y1", h}, {"x2", 5.0, "y2", 0.0}};
    std::vector<hf::EndpointDecl> eps{{"x1", 0.0, hf::EndpointKind::Source},
                                      {"x2", 0.0, hf::EndpointKind::Source},
                                      {"y2", 4.0 - h, hf::EndpointKind::Source},
                                      {"x1", 10.0, hf::EndpointKind::Sink},
                                      {"x2", 10.0, hf::EndpointKind::Sink}};
    return hf::CanalNetwork(std::move(segments), std::move(isect), std::move(eps));
  };
  const hf::CanalNetwork net_a = make(false);
  const hf::CanalNetwork net_b = make(true);
  const auto part_a = hf::build_partition(net_a, hf::paper_grid(8));
  const auto part_b = hf::build_partition(net_b, hf::paper_grid(8));

  hf::RngStream rng(3);
  hf::SurveyDataset ds = random_dataset(6, 3, rng);
  hf::ModelSpec spec;
  const hf::Posterior post_a(net_a, part_a, ds, spec);
  const hf::Posterior post_b(net_b, part_b, ds, spec);
  REQUIRE(post_a.dim() == post_b.dim());

  const Eigen::VectorXd ua = random_state(post_a, rng);
  Eigen::VectorXd ub = ua;
  const hf::FieldConstruction& cons_a = post_a.construction();
  const hf::FieldConstruction& cons_b = post_b.construction();
  const Eigen::VectorXd eps_a = ua.tail(static_cast<Eigen::Index>(cons_a.n_innovations()));
  const hf::LatentField field_a = cons_a.field_from_innovations(eps_a);
  hf::LatentField field_b;
  field_b.source_values.resize(field_a.source_values.size());
  field_b.node_values.resize(field_a.node_values.size());
  const auto src_a = net_a.sources();
  const auto src_b = net_b.sources();
  for (std::size_t i = 0; i < src_b.size(); ++i) {
    for (std::size_t k = 0; k < src_a.size(); ++k) {
      if (src_a[k].segment == src_b[i].segment) {
        field_b.source_values[static_cast<Eigen::Index>(i)] =
            field_a.source_values[static_cast<Eigen::Index>(k)];
      }
    }
  }
  for (std::size_t i = 0; i < cons_b.nodes().size(); ++i) {
    for (std::size_t k = 0; k < cons_a.nodes().size(); ++k) {
      if (hf::euclid_distance(cons_b.nodes()[i].location, cons_a.nodes()[k].location) < 1e-9) {
        field_b.node_values[static_cast<Eigen::Index>(i)] =
            field_a.node_values[static_cast<Eigen::Index>(k)];
      }
    }
  }
  field_b.z.resize(part_b.partitions().size());
  for (std::size_t p = 0; p < part_b.partitions().size(); ++p) {
    for (std::size_t q = 0; q < part_a.partitions().size(); ++q) {
      if (part_a.partitions()[q].segment_id == part_b.partitions()[p].segment_id) {
        field_b.z[p] = field_a.z[q];
      }
    }
  }
  ub.tail(static_cast<Eigen::Index>(cons_b.n_innovations())) =
      cons_b.innovations_from_field(field_b);

  CHECK(post_b.log_posterior(ub) == doctest::Approx(post_a.log_posterior(ua)).epsilon(1e-9));
}

TEST_CASE("posterior is finite at the reference state for generated datasets") {
  const hf::CanalNetwork net = hf::paper_geometry_split();
  const auto partition = hf::build_partition(net, hf::paper_grid(8));
  const auto intensities = hf::true_intensities();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    hf::StudyScenario scenario;
    scenario.households = 12;
    scenario.obs_per_household = 3;
    scenario.population = 100;
    scenario.seed = seed;
    hf::RngStream rng(seed);
    auto [ds, truth] = hf::generate_dataset(scenario, net, intensities, hf::paper_region(),
                                            hf::TruthParams{}, rng);
    hf::ModelSpec spec;
    const hf::Posterior post(net, partition, ds, spec);
    const Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.dim()));
    CHECK(std::isfinite(post.log_posterior(u)));
  }
}

TEST_CASE("constrained_draw reports every named parameter") {
  Setup s(8, 5, 2, 61);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  hf::RngStream rng(2);
  const Eigen::VectorXd u = random_state(post, rng);
  const Eigen::VectorXd draw = post.constrained_draw(u);
  const auto& names = post.parameter_names();
  REQUIRE(static_cast<std::size_t>(draw.size()) == names.size());
  CHECK(names.front() == "lambda");
  CHECK(draw[0] == doctest::Approx(std::exp(u[0])));
  int thetas = 0, zs = 0;
  for (const auto& n : names) {
    thetas += (n.rfind("theta.", 0) == 0);
    zs += (n.rfind("z.", 0) == 0 && n.rfind("znode", 0) != 0 && n.rfind("zsrc", 0) != 0);
  }
  CHECK(thetas == 5);
  CHECK(zs == 8 + 8 + 4 + 4);
}

TEST_CASE("non-finite states are rejected") {
  Setup s(6, 4, 2, 3);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(post.dim()));
  u[0] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(post.log_likelihood(u), std::invalid_argument);
}

TEST_CASE("change_in_odds identities") {
  Setup s(8, 4, 2, 101);
  const hf::Posterior post(s.network, s.partition, s.dataset, s.spec);
  hf::RngStream rng(5);

  const int n = 25;
  Eigen::MatrixXd draws(n, static_cast<Eigen::Index>(post.parameter_names().size()));
  for (int r = 0; r < n; ++r) {
    draws.row(r) = post.constrained_draw(random_state(post, rng)).transpose();
  }
  const auto& names = post.parameter_names();

  const hf::Point s1{0.1, 0.2};
  const auto same =
      hf::change_in_odds(draws, names, s.partition, hf::KernelKind::Exponential, s1, s1);
  for (const double v : same) CHECK(v == doctest::Approx(0.0));

  const hf::Point s2{5.0, 300.0};
  const auto far =
      hf::change_in_odds(draws, names, s.partition, hf::KernelKind::Exponential, s1, s2);
  for (const double v : far) CHECK(v < 0.0);

  auto col = [&](const std::string& name) {
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == name) return static_cast<Eigen::Index>(c);
    }
    REQUIRE(false);
    return Eigen::Index{0};
  };
  for (int r = 0; r < n; ++r) {
    const double lambda = draws(r, col("lambda"));
    const double rho = draws(r, col("rho"));
    double theta1 = 0.0, theta2 = 0.0;
    for (const auto& part : s.partition.partitions()) {
      for (std::size_t m = 0; m < part.cells.size(); ++m) {
        const double z = draws(r, col("z." + part.segment_id + "." + std::to_string(m + 1)));
        const double mass = std::exp(z) * part.cells[m].width;
        theta1 += std::exp(-hf::euclid_distance(s1, part.cells[m].centroid) / rho) * mass;
        theta2 += std::exp(-hf::euclid_distance(s2, part.cells[m].centroid) / rho) * mass;
      }
    }
    const double want =
        (std::exp(-(lambda + theta2)) - 1.0) / (std::exp(-(lambda + theta1)) - 1.0) - 1.0;
    CHECK(far[static_cast<std::size_t>(r)] == doctest::Approx(want).epsilon(1e-12));
  }

  std::vector<std::string> bad_names = names;
  bad_names[0] = "not_lambda";
  CHECK_THROWS_AS(
      hf::change_in_odds(draws, bad_names, s.partition, hf::KernelKind::Exponential, s1, s2),
      hf::ConfigError);
}

TEST_CASE("min_distance_predictor is the log of the minimum distance") {
  const hf::CanalNetwork net = hf::paper_geometry();
  hf::SurveyDataset ds;
  auto add = [&](const std::string& id, double x, double y) {
    hf::Household h;
    h.id = id;
    h.location = {x, y};
    h.covariates.resize(0);
    ds.households.push_back(h);
  };
  add("one_km", 0.0, -1.0);
  add("e_km", 0.0, -std::exp(1.0));
  const Eigen::VectorXd pred = hf::min_distance_predictor(net, ds);
  CHECK(pred[0] == doctest::Approx(0.0));
  CHECK(pred[1] == doctest::Approx(1.0));

  hf::RngStream rng(44);
  hf::SurveyDataset many;
  for (int k = 0; k < 20; ++k) {
    hf::Household h;
    h.id = std::to_string(k);
    h.location = {rng.uniform(0.0, 10.0), rng.uniform(-3.0, -0.1)};
    h.covariates.resize(0);
    many.households.push_back(h);
  }
  const Eigen::VectorXd logd = hf::min_distance_predictor(net, many);
  for (int a = 0; a < 20; ++a) {
    for (int b = 0; b < 20; ++b) {
      const double da = hf::min_distance_to_network(net, many.households[a].location);
      const double db = hf::min_distance_to_network(net, many.households[b].location);
      if (da < db) CHECK(logd[a] < logd[b]);
    }
  }

  hf::SurveyDataset on_canal;
  add("zero", 5.0, 0.0);
  on_canal.households.push_back(ds.households.back());
  CHECK_THROWS_AS(hf::min_distance_predictor(net, on_canal), hf::ConfigError);
}

TEST_CASE("dataset validation catches broken inputs") {
  hf::SurveyDataset ds;
  hf::Household h;
  h.id = "a";
  h.covariates.resize(1);
  h.covariates[0] = 0.0;
  ds.households.push_back(h);
  ds.observations.push_back({"missing", 1});
  CHECK_THROWS_AS(ds.validate(), hf::ConfigError);
  ds.observations[0] = {"a", 2};
  CHECK_THROWS_AS(ds.validate(), hf::ConfigError);
  ds.observations[0] = {"a", 1};
  CHECK_NOTHROW(ds.validate());
}
