#include "hazardfield/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <set>
#include <stdexcept>

#include "hazardfield/errors.hpp"

namespace hazardfield {

namespace {
constexpr double kAnchorTol = 1e-9;    // spatial coincidence of intersection anchors, km
constexpr double kArcTol = 1e-9;       // arc-coordinate slack for point_at and station merging
}  // namespace

double euclid_distance(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

CanalSegment::CanalSegment(std::string id, std::vector<Point> vertices)
    : id_(std::move(id)), vertices_(std::move(vertices)) {
  if (vertices_.size() < 2) {
    throw ConfigError("segment '" + id_ + "' needs at least 2 vertices");
  }
  cum_.resize(vertices_.size());
  cum_[0] = 0.0;
  for (std::size_t i = 1; i < vertices_.size(); ++i) {
    const double leg = euclid_distance(vertices_[i - 1], vertices_[i]);
    if (leg <= 0.0) {
      throw ConfigError("segment '" + id_ + "' has coincident consecutive vertices");
    }
    cum_[i] = cum_[i - 1] + leg;
  }
}

Point CanalSegment::point_at(double arc) const {
  if (arc < -kArcTol || arc > length() + kArcTol) {
    throw std::domain_error("arc " + std::to_string(arc) + " outside [0, " +
                            std::to_string(length()) + "] on segment '" + id_ + "'");
  }
  arc = std::clamp(arc, 0.0, length());
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), arc);
  std::size_t hi = std::min<std::size_t>(it - cum_.begin(), cum_.size() - 1);
  const std::size_t lo = hi - 1;
  const double t = (arc - cum_[lo]) / (cum_[hi] - cum_[lo]);
  return Point{vertices_[lo].x + t * (vertices_[hi].x - vertices_[lo].x),
               vertices_[lo].y + t * (vertices_[hi].y - vertices_[lo].y)};
}

Point CanalSegment::tangent_at(double arc) const {
  if (arc < -kArcTol || arc > length() + kArcTol) {
    throw std::domain_error("arc outside [0, length] on segment '" + id_ + "'");
  }
  arc = std::clamp(arc, 0.0, length());
  const auto it = std::upper_bound(cum_.begin(), cum_.end(), arc);
  std::size_t hi = std::min<std::size_t>(it - cum_.begin(), cum_.size() - 1);
  const std::size_t lo = hi - 1;
  const double len = cum_[hi] - cum_[lo];
  return Point{(vertices_[hi].x - vertices_[lo].x) / len,
               (vertices_[hi].y - vertices_[lo].y) / len};
}

CanalNetwork::CanalNetwork(std::vector<CanalSegment> segments,
                           std::vector<IntersectionDecl> intersections,
                           std::vector<EndpointDecl> endpoints)
    : segments_(std::move(segments)),
      intersections_(std::move(intersections)),
      endpoints_(std::move(endpoints)) {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (!index_.emplace(segments_[i].id(), i).second) {
      throw ConfigError("duplicate segment id '" + segments_[i].id() + "'");
    }
  }
  for (const auto& isect : intersections_) {
    const Point a = segment(isect.segment_a).point_at(isect.arc_a);
    const Point b = segment(isect.segment_b).point_at(isect.arc_b);
    if (euclid_distance(a, b) > kAnchorTol) {
      throw ConfigError("intersection anchors on '" + isect.segment_a + "' and '" +
                        isect.segment_b + "' do not coincide");
    }
  }
  for (const auto& ep : endpoints_) {
    segment(ep.segment).point_at(ep.arc);  // validates segment id and arc range
  }
}

std::vector<EndpointDecl> CanalNetwork::sources() const {
  std::vector<EndpointDecl> out;
  for (const auto& ep : endpoints_) {
    if (ep.kind == EndpointKind::Source) out.push_back(ep);
  }
  return out;
}

std::vector<EndpointDecl> CanalNetwork::sinks() const {
  std::vector<EndpointDecl> out;
  for (const auto& ep : endpoints_) {
    if (ep.kind == EndpointKind::Sink) out.push_back(ep);
  }
  return out;
}

std::size_t CanalNetwork::segment_index(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) {
    throw ConfigError("unknown segment id '" + id + "'");
  }
  return it->second;
}

const CanalSegment& CanalNetwork::segment(const std::string& id) const {
  return segments_[segment_index(id)];
}

double CanalNetwork::total_length() const {
  double total = 0.0;
  for (const auto& s : segments_) total += s.length();
  return total;
}

Point CanalNetwork::locate(const NetworkLocation& loc) const {
  return segment(loc.segment).point_at(loc.arc);
}

PartitionedNetwork::PartitionedNetwork(const CanalNetwork* network,
                                       std::vector<SegmentPartition> partitions)
    : network_(network), parts_(std::move(partitions)) {}

const SegmentPartition& PartitionedNetwork::partition(const std::string& segment_id) const {
  for (const auto& p : parts_) {
    if (p.segment_id == segment_id) return p;
  }
  throw ConfigError("no partition for segment '" + segment_id + "'");
}

std::size_t PartitionedNetwork::total_cells() const {
  std::size_t n = 0;
  for (const auto& p : parts_) n += p.cells.size();
  return n;
}

PartitionedNetwork build_partition(const CanalNetwork& network,
                                   const std::map<std::string, int>& cells_per_segment) {
  std::vector<SegmentPartition> parts;
  parts.reserve(network.segments().size());
  for (const auto& seg : network.segments()) {
    const auto it = cells_per_segment.find(seg.id());
    if (it == cells_per_segment.end()) {
      throw ConfigError("no cell count for segment '" + seg.id() + "'");
    }
    const int m = it->second;
    if (m < 1) {
      throw ConfigError("cell count for segment '" + seg.id() + "' must be >= 1");
    }
    const double len = seg.length();
    SegmentPartition part;
    part.segment_id = seg.id();
    part.cells.reserve(static_cast<std::size_t>(m));
    for (int n = 1; n <= m; ++n) {
      Cell cell;
      cell.a = len * (n - 1) / m;
      cell.b = len * n / m;
      cell.centroid_arc = len * (2 * n - 1) / (2.0 * m);
      cell.width = cell.b - cell.a;
      cell.centroid = seg.point_at(cell.centroid_arc);
      part.cells.push_back(cell);
    }
    parts.push_back(std::move(part));
  }
  return PartitionedNetwork(&network, std::move(parts));
}

namespace {

// Station graph for along-network shortest paths. Vertices are the declared
// intersections (anchor pairs merged), segment endpoints, declared
// sources/sinks, and the two query points; edges join consecutive stations
// along a segment.
struct StationGraph {
  // (segment index, arc) -> vertex id, with arc-tolerant lookup per segment
  std::vector<std::vector<std::pair<double, int>>> stations;  // per segment, sorted by arc
  int n_vertices = 0;
  std::vector<std::vector<std::pair<int, double>>> adj;

  int find(std::size_t seg, double arc) const {
    for (const auto& [a, v] : stations[seg]) {
      if (std::abs(a - arc) <= kArcTol) return v;
    }
    return -1;
  }
};

StationGraph build_station_graph(const CanalNetwork& net,
                                 const std::vector<NetworkLocation>& extra) {
  StationGraph g;
  const auto& segs = net.segments();
  g.stations.resize(segs.size());

  auto add_station = [&](std::size_t seg, double arc) -> int {
    int v = g.find(seg, arc);
    if (v >= 0) return v;
    v = g.n_vertices++;
    g.stations[seg].emplace_back(arc, v);
    return v;
  };

  struct Merge {
    int a;
    int b;
  };
  std::vector<Merge> merges;

  for (std::size_t s = 0; s < segs.size(); ++s) {
    add_station(s, 0.0);
    add_station(s, segs[s].length());
  }
  for (const auto& isect : net.intersections()) {
    const int va = add_station(net.segment_index(isect.segment_a), isect.arc_a);
    const int vb = add_station(net.segment_index(isect.segment_b), isect.arc_b);
    merges.push_back({va, vb});
  }
  for (const auto& ep : net.endpoints()) {
    add_station(net.segment_index(ep.segment), ep.arc);
  }
  for (const auto& loc : extra) {
    add_station(net.segment_index(loc.segment), loc.arc);
  }

  // Union-find to merge intersection anchors into a single vertex.
  std::vector<int> parent(g.n_vertices);
  for (int i = 0; i < g.n_vertices; ++i) parent[i] = i;
  auto root = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& m : merges) parent[root(m.a)] = root(m.b);

  for (auto& st : g.stations) {
    std::sort(st.begin(), st.end());
    for (auto& [arc, v] : st) v = root(v);
  }

  g.adj.resize(g.n_vertices);
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const auto& st = g.stations[s];
    for (std::size_t i = 1; i < st.size(); ++i) {
      const double w = st[i].first - st[i - 1].first;
      g.adj[st[i - 1].second].emplace_back(st[i].second, w);
      g.adj[st[i].second].emplace_back(st[i - 1].second, w);
    }
  }
  return g;
}

}  // namespace

std::optional<double> network_distance(const CanalNetwork& network,
                                       const NetworkLocation& a,
                                       const NetworkLocation& b) {
  network.locate(a);  // validates that both points lie on the network
  network.locate(b);
  const StationGraph g = build_station_graph(network, {a, b});
  const std::size_t sa = network.segment_index(a.segment);
  const std::size_t sb = network.segment_index(b.segment);
  const int va = g.find(sa, a.arc);
  const int vb = g.find(sb, b.arc);

  std::vector<double> dist(static_cast<std::size_t>(g.n_vertices),
                           std::numeric_limits<double>::infinity());
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  dist[va] = 0.0;
  heap.emplace(0.0, va);
  while (!heap.empty()) {
    const auto [d, v] = heap.top();
    heap.pop();
    if (d > dist[v]) continue;
    for (const auto& [u, w] : g.adj[v]) {
      if (d + w < dist[u]) {
        dist[u] = d + w;
        heap.emplace(dist[u], u);
      }
    }
  }
  if (!std::isfinite(dist[vb])) return std::nullopt;
  return dist[vb];
}

double min_distance_to_network(const CanalNetwork& network, const Point& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& seg : network.segments()) {
    const auto& v = seg.vertices();
    for (std::size_t i = 1; i < v.size(); ++i) {
      const double dx = v[i].x - v[i - 1].x;
      const double dy = v[i].y - v[i - 1].y;
      const double len2 = dx * dx + dy * dy;
      double t = ((p.x - v[i - 1].x) * dx + (p.y - v[i - 1].y) * dy) / len2;
      t = std::clamp(t, 0.0, 1.0);
      const Point foot{v[i - 1].x + t * dx, v[i - 1].y + t * dy};
      best = std::min(best, euclid_distance(p, foot));
    }
  }
  return best;
}

}  // namespace hazardfield
