#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace hazardfield {

/// Planar point, coordinates in km.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

double euclid_distance(const Point& a, const Point& b);

/// A location on the network: a segment plus an arc-length coordinate.
struct NetworkLocation {
  std::string segment;
  double arc = 0.0;  // km from the segment's first vertex
};

/// Arc-length-parameterized polyline. The cumulative arc length starts at 0
/// at the first vertex and increases strictly to the segment length.
class CanalSegment {
 public:
  CanalSegment(std::string id, std::vector<Point> vertices);

  const std::string& id() const { return id_; }
  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<double>& cumulative_arclength() const { return cum_; }
  double length() const { return cum_.back(); }

  /// Position of the point at the given arc-length coordinate.
  /// Throws std::domain_error if arc is outside [0, length].
  Point point_at(double arc) const;

  /// Unit tangent of the leg containing the given arc position.
  Point tangent_at(double arc) const;

 private:
  std::string id_;
  std::vector<Point> vertices_;
  std::vector<double> cum_;
};

struct IntersectionDecl {
  std::string segment_a;
  double arc_a = 0.0;
  std::string segment_b;
  double arc_b = 0.0;
};

enum class EndpointKind { Source, Sink };

struct EndpointDecl {
  std::string segment;
  double arc = 0.0;
  EndpointKind kind = EndpointKind::Source;
};

/// The hazard network: segments plus declared intersections, sources and
/// sinks. Intersections are declared, never auto-detected; the two anchor
/// points of a declaration must coincide spatially within 1e-9 km.
/// Immutable after construction and safe to share across threads.
class CanalNetwork {
 public:
  CanalNetwork(std::vector<CanalSegment> segments,
               std::vector<IntersectionDecl> intersections,
               std::vector<EndpointDecl> endpoints);

  const std::vector<CanalSegment>& segments() const { return segments_; }
  const std::vector<IntersectionDecl>& intersections() const { return intersections_; }
  const std::vector<EndpointDecl>& endpoints() const { return endpoints_; }
  std::vector<EndpointDecl> sources() const;
  std::vector<EndpointDecl> sinks() const;

  std::size_t segment_index(const std::string& id) const;
  const CanalSegment& segment(const std::string& id) const;
  double total_length() const;

  Point locate(const NetworkLocation& loc) const;

 private:
  std::vector<CanalSegment> segments_;
  std::vector<IntersectionDecl> intersections_;
  std::vector<EndpointDecl> endpoints_;
  std::map<std::string, std::size_t> index_;
};

/// One partition cell: interval [a,b] in arc length with its centroid.
struct Cell {
  double a = 0.0;
  double b = 0.0;
  double centroid_arc = 0.0;
  double width = 0.0;
  Point centroid;
};

struct SegmentPartition {
  std::string segment_id;
  std::vector<Cell> cells;
};

/// Equi-width cells per segment realizing the discretization grid.
class PartitionedNetwork {
 public:
  PartitionedNetwork(const CanalNetwork* network,
                     std::vector<SegmentPartition> partitions);

  const CanalNetwork& network() const { return *network_; }
  const std::vector<SegmentPartition>& partitions() const { return parts_; }
  const SegmentPartition& partition(const std::string& segment_id) const;
  std::size_t total_cells() const;

 private:
  const CanalNetwork* network_;
  std::vector<SegmentPartition> parts_;
};

/// Builds M equi-width cells per segment. Every count must be >= 1.
PartitionedNetwork build_partition(const CanalNetwork& network,
                                   const std::map<std::string, int>& cells_per_segment);

/// Shortest along-canal path length between two on-network points, using the
/// declared intersections as transfer points. Empty if the points are not
/// connected.
std::optional<double> network_distance(const CanalNetwork& network,
                                       const NetworkLocation& a,
                                       const NetworkLocation& b);

/// Exact minimum distance from a point to the network polylines
/// (per-leg projection).
double min_distance_to_network(const CanalNetwork& network, const Point& p);

}  // namespace hazardfield
