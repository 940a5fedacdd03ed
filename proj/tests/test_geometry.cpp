#include <doctest.h>

#include <cmath>

#include "hazardfield/errors.hpp"
#include "hazardfield/geometry.hpp"
#include "hazardfield/rng.hpp"
#include "hazardfield/simstudy.hpp"

namespace hf = hazardfield;

namespace {

hf::CanalSegment straight_x(double length = 10.0) {
  return hf::CanalSegment("s", {{0.0, 0.0}, {length, 0.0}});
}

// Dense-sampling oracle for the minimum point-to-network distance.
double min_distance_dense(const hf::CanalNetwork& net, const hf::Point& p, int samples) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& seg : net.segments()) {
    for (int i = 0; i <= samples; ++i) {
      const double arc = seg.length() * i / samples;
      best = std::min(best, hf::euclid_distance(seg.point_at(arc), p));
    }
  }
  return best;
}

// Brute-force path enumeration on the 3-segment paper network: all simple
// routes between two points via the declared intersections.
double paper_path_oracle(const hf::Point& a_loc, const hf::Point& b_loc,
                         const hf::CanalNetwork& net, const hf::NetworkLocation& a,
                         const hf::NetworkLocation& b) {
  // Transfer points: (x1,5)=(y,0) and (x2,5)=(y,8/3).
  struct Station {
    std::string seg;
    double arc;
  };
  const double h = 8.0 / 3.0;
  const std::vector<std::vector<Station>> transfers = {
      {{"x1", 5.0}, {"y", 0.0}},
      {{"x2", 5.0}, {"y", h}},
  };
  auto same_seg = [&](const hf::NetworkLocation& u, const hf::NetworkLocation& v) {
    return u.segment == v.segment ? std::abs(u.arc - v.arc)
                                  : std::numeric_limits<double>::infinity();
  };
  double best = same_seg(a, b);
  // one transfer
  for (const auto& t : transfers) {
    for (const auto& sa : t) {
      for (const auto& sb : t) {
        const double d1 = same_seg(a, {sa.seg, sa.arc});
        const double d2 = same_seg({sb.seg, sb.arc}, b);
        best = std::min(best, d1 + d2);
      }
    }
  }
  // two transfers (through y between the two intersections)
  for (const auto& t1 : transfers) {
    for (const auto& t2 : transfers) {
      if (&t1 == &t2) continue;
      for (const auto& sa : t1) {
        for (const auto& mid1 : t1) {
          for (const auto& mid2 : t2) {
            for (const auto& sb : t2) {
              const double d = same_seg(a, {sa.seg, sa.arc}) +
                               same_seg({mid1.seg, mid1.arc}, {mid2.seg, mid2.arc}) +
                               same_seg({sb.seg, sb.arc}, b);
              best = std::min(best, d);
            }
          }
        }
      }
    }
  }
  (void)a_loc;
  (void)b_loc;
  (void)net;
  return best;
}

}  // namespace

TEST_CASE("point_at interpolates along straight and bent polylines") {
  const auto seg = straight_x();
  const hf::Point mid = seg.point_at(5.0);
  CHECK(mid.x == doctest::Approx(5.0));
  CHECK(mid.y == doctest::Approx(0.0));

  const hf::Point start = seg.point_at(0.0);
  CHECK(start.x == doctest::Approx(0.0));

  const hf::CanalSegment bent("b", {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}});
  const hf::Point p = bent.point_at(1.5);
  CHECK(p.x == doctest::Approx(1.0));
  CHECK(p.y == doctest::Approx(0.5));

  CHECK_THROWS_AS(seg.point_at(-0.5), std::domain_error);
  CHECK_THROWS_AS(seg.point_at(10.5), std::domain_error);
}

TEST_CASE("segment construction validates vertices") {
  CHECK_THROWS_AS(hf::CanalSegment("one", {{0.0, 0.0}}), hf::ConfigError);
  CHECK_THROWS_AS(hf::CanalSegment("dup", {{0.0, 0.0}, {0.0, 0.0}}), hf::ConfigError);
}

TEST_CASE("build_partition matches the stated grid") {
  const hf::CanalNetwork net = hf::paper_geometry();
  const auto part = hf::build_partition(net, {{"x1", 40}, {"x2", 40}, {"y", 40}});
  const auto& x1 = part.partition("x1");
  CHECK(x1.cells.size() == 40);
  CHECK(x1.cells[0].centroid_arc == doctest::Approx(0.125));
  CHECK(x1.cells[0].width == doctest::Approx(0.25));
  CHECK(x1.cells[0].centroid.x == doctest::Approx(0.125));

  // degenerate partition
  const auto single = hf::build_partition(net, {{"x1", 1}, {"x2", 1}, {"y", 1}});
  const auto& sx = single.partition("x1");
  CHECK(sx.cells.size() == 1);
  CHECK(sx.cells[0].centroid_arc == doctest::Approx(5.0));
  CHECK(sx.cells[0].width == doctest::Approx(10.0));

  CHECK_THROWS_AS(hf::build_partition(net, {{"x1", 0}, {"x2", 1}, {"y", 1}}), hf::ConfigError);
}

TEST_CASE("split y reproduces the supplement grid widths") {
  const hf::CanalNetwork net = hf::paper_geometry_split();
  for (const int m : {20, 40, 160}) {
    const auto part = hf::build_partition(net, hf::paper_grid(m));
    const auto& y1 = part.partition("y1");
    const auto& y2 = part.partition("y2");
    CHECK(y1.cells.size() == static_cast<std::size_t>(m / 2));
    CHECK(y2.cells.size() == static_cast<std::size_t>(m / 2));
    for (const auto& c : y1.cells) CHECK(c.width == doctest::Approx(16.0 / (3.0 * m)));
    for (const auto& c : y2.cells) CHECK(c.width == doctest::Approx(8.0 / (3.0 * m)));
  }
}

TEST_CASE("partition tiles each segment exactly") {
  const hf::CanalNetwork net = hf::paper_geometry_split();
  const auto part = hf::build_partition(net, hf::paper_grid(40));
  for (const auto& sp : part.partitions()) {
    const auto& seg = net.segment(sp.segment_id);
    double total = 0.0;
    for (std::size_t i = 0; i < sp.cells.size(); ++i) {
      total += sp.cells[i].width;
      CHECK(sp.cells[i].centroid_arc ==
            doctest::Approx(0.5 * (sp.cells[i].a + sp.cells[i].b)));
      if (i > 0) CHECK(sp.cells[i].a == doctest::Approx(sp.cells[i - 1].b));
    }
    CHECK(total == doctest::Approx(seg.length()).epsilon(1e-12));
  }
}

TEST_CASE("refining the grid splits cells symmetrically around parents") {
  const hf::CanalNetwork net = hf::paper_geometry();
  const auto coarse = hf::build_partition(net, {{"x1", 20}, {"x2", 20}, {"y", 20}});
  const auto fine = hf::build_partition(net, {{"x1", 40}, {"x2", 40}, {"y", 40}});
  const auto& c = coarse.partition("x1").cells;
  const auto& f = fine.partition("x1").cells;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double mid = 0.5 * (f[2 * i].centroid_arc + f[2 * i + 1].centroid_arc);
    CHECK(mid == doctest::Approx(c[i].centroid_arc).epsilon(1e-12));
  }
}

TEST_CASE("euclid_distance basics") {
  CHECK(hf::euclid_distance({0.0, 0.0}, {3.0, 4.0}) == doctest::Approx(5.0));
  CHECK(hf::euclid_distance({1.0, 2.0}, {1.0, 2.0}) == doctest::Approx(0.0));
  CHECK(hf::euclid_distance({1.0, 1.0}, {1.0, 2.0}) == doctest::Approx(1.0));
}

TEST_CASE("network_distance on the paper geometry") {
  const hf::CanalNetwork net = hf::paper_geometry();
  // same segment
  auto d = hf::network_distance(net, {"x1", 2.0}, {"x1", 5.0});
  REQUIRE(d.has_value());
  CHECK(*d == doctest::Approx(3.0));
  // source of x1 to the x1/y intersection
  d = hf::network_distance(net, {"x1", 0.0}, {"x1", 5.0});
  CHECK(*d == doctest::Approx(5.0));
  // through the intersection onto y
  d = hf::network_distance(net, {"x1", 5.0}, {"y", 1.0});
  CHECK(*d == doctest::Approx(1.0));
  // x1 to x2 must route through y
  d = hf::network_distance(net, {"x1", 5.0}, {"x2", 5.0});
  CHECK(*d == doctest::Approx(8.0 / 3.0));

  // oracle comparison on random pairs
  hf::RngStream rng(42);
  for (int t = 0; t < 50; ++t) {
    const std::vector<std::string> ids = {"x1", "x2", "y"};
    const std::string sa = ids[rng.uniform_int(3)];
    const std::string sb = ids[rng.uniform_int(3)];
    const hf::NetworkLocation a{sa, rng.uniform(0.0, net.segment(sa).length())};
    const hf::NetworkLocation b{sb, rng.uniform(0.0, net.segment(sb).length())};
    const auto got = hf::network_distance(net, a, b);
    REQUIRE(got.has_value());
    const double want = paper_path_oracle(net.locate(a), net.locate(b), net, a, b);
    CHECK(*got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("network_distance reports unreachable points") {
  std::vector<hf::CanalSegment> segments;
  segments.emplace_back("a", std::vector<hf::Point>{{0.0, 0.0}, {1.0, 0.0}});
  segments.emplace_back("b", std::vector<hf::Point>{{0.0, 5.0}, {1.0, 5.0}});
  const hf::CanalNetwork net(std::move(segments), {}, {});
  CHECK_FALSE(hf::network_distance(net, {"a", 0.5}, {"b", 0.5}).has_value());
}

TEST_CASE("network_distance satisfies the triangle inequality") {
  const hf::CanalNetwork net = hf::paper_geometry();
  hf::RngStream rng(7);
  const std::vector<std::string> ids = {"x1", "x2", "y"};
  for (int t = 0; t < 40; ++t) {
    hf::NetworkLocation loc[3];
    for (auto& l : loc) {
      l.segment = ids[rng.uniform_int(3)];
      l.arc = rng.uniform(0.0, net.segment(l.segment).length());
    }
    const double dab = *hf::network_distance(net, loc[0], loc[1]);
    const double dbc = *hf::network_distance(net, loc[1], loc[2]);
    const double dac = *hf::network_distance(net, loc[0], loc[2]);
    CHECK(dac <= dab + dbc + 1e-12);
  }
}

TEST_CASE("min_distance_to_network: projections and endpoints") {
  std::vector<hf::CanalSegment> segments;
  segments.emplace_back("s", std::vector<hf::Point>{{0.0, 0.0}, {10.0, 0.0}});
  const hf::CanalNetwork net(std::move(segments), {}, {});
  CHECK(hf::min_distance_to_network(net, {5.0, 1.0}) == doctest::Approx(1.0));
  CHECK(hf::min_distance_to_network(net, {-1.0, 0.0}) == doctest::Approx(1.0));
}

TEST_CASE("min_distance_to_network agrees with a dense-sampling oracle") {
  const hf::CanalNetwork net = hf::paper_geometry();
  const hf::Point p{5.0, 1.0};
  const double exact = hf::min_distance_to_network(net, p);
  const double dense = min_distance_dense(net, p, 100000);
  CHECK(exact == doctest::Approx(dense).epsilon(1e-6));
  CHECK(exact <= dense + 1e-12);

  // lower-bound property at random probes against random canal points
  hf::RngStream rng(9);
  for (int t = 0; t < 20; ++t) {
    const hf::Point probe{rng.uniform(-1.0, 11.0), rng.uniform(-1.0, 5.0)};
    const double dmin = hf::min_distance_to_network(net, probe);
    for (int s = 0; s < 500; ++s) {
      const auto& seg = net.segments()[rng.uniform_int(net.segments().size())];
      const double arc = rng.uniform(0.0, seg.length());
      CHECK(dmin <= hf::euclid_distance(probe, seg.point_at(arc)) + 1e-12);
    }
  }
}

TEST_CASE("intersections must coincide spatially") {
  std::vector<hf::CanalSegment> segments;
  segments.emplace_back("a", std::vector<hf::Point>{{0.0, 0.0}, {10.0, 0.0}});
  segments.emplace_back("b", std::vector<hf::Point>{{5.0, -2.0}, {5.0, 2.0}});
  std::vector<hf::IntersectionDecl> bad{{"a", 5.0, "b", 0.0}};
  CHECK_THROWS_AS(hf::CanalNetwork(std::move(segments), std::move(bad), {}), hf::ConfigError);
}

TEST_CASE("duplicate segment ids are rejected") {
  std::vector<hf::CanalSegment> segments;
  segments.emplace_back("a", std::vector<hf::Point>{{0.0, 0.0}, {1.0, 0.0}});
  segments.emplace_back("a", std::vector<hf::Point>{{0.0, 1.0}, {1.0, 1.0}});
  CHECK_THROWS_AS(hf::CanalNetwork(std::move(segments), {}, {}), hf::ConfigError);
}

TEST_CASE("paper geometry facts") {
  const hf::CanalNetwork net = hf::paper_geometry();
  CHECK(net.segment("x1").length() == doctest::Approx(10.0));
  CHECK(net.segment("y").length() == doctest::Approx(4.0));
  const hf::Point p1 = net.locate({"x1", 5.0});
  CHECK(p1.x == doctest::Approx(5.0));
  CHECK(p1.y == doctest::Approx(0.0));
  const hf::Point p2 = net.locate({"y", 8.0 / 3.0});
  CHECK(p2.x == doctest::Approx(5.0));
  CHECK(p2.y == doctest::Approx(8.0 / 3.0));
  // x2 crosses y at x2 arc 5
  const hf::Point p3 = net.locate({"x2", 5.0});
  CHECK(hf::euclid_distance(p2, p3) < 1e-12);
}
