#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cornercert/errors.hpp"
#include "cornercert/geometry.hpp"
#include "cornercert/io.hpp"
#include "cornercert/lipschitz.hpp"
#include "cornercert/network.hpp"

namespace cornercert {

struct Box2 {
  double x_min = -2.0, x_max = 2.0;
  double y_min = -2.0, y_max = 2.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  void validate() const {
    if (!(x_max > x_min) || !(y_max > y_min)) throw ParameterError("degenerate box");
  }
};

/// Ordered 2-D vertex chain: a decision boundary, robust frontier, or
/// certified frontier. For closed chains the last vertex connects back to the
/// first without being repeated.
struct Polyline {
  std::vector<Eigen::Vector2d> vertices;
  bool closed = false;
};

enum class CertMethod { Global, Local, Region };

inline std::string cert_method_name(CertMethod m) {
  switch (m) {
    case CertMethod::Global: return "global";
    case CertMethod::Local: return "local";
    case CertMethod::Region: return "region";
  }
  throw UnsupportedError("unknown certification method");
}

struct CertResult {
  bool certified = false;
  double max_radius = 0.0;    // largest radius the method certifies at x
  double margin = 0.0;        // classification margin at x
  double constant_used = 0.0; // Lipschitz constant of the binding pair (NaN for region)
  CertMethod method = CertMethod::Global;
};

// Points exactly on a frontier count as robust/certified; the relative slack
// absorbs last-ulp rounding of inputs sampled on the frontier itself.
inline constexpr double kFrontierSlack = 1e-9;

/// Ground-truth answering machine for a decision boundary: the label field
/// and the exact (or toleranced, for polyline-backed) distance to it.
struct BoundaryOracle {
  std::function<int(const Eigen::Vector2d&)> label_of;
  std::function<double(const Eigen::Vector2d&)> distance_of;
};

struct OracleVerdict {
  bool robust = false;
  double distance = 0.0;
};

inline OracleVerdict robust_oracle(const BoundaryOracle& oracle, const Eigen::Vector2d& x,
                                   double eps) {
  const double dist = oracle.distance_of(x);
  return {dist >= eps * (1.0 - kFrontierSlack), dist};
}

inline BoundaryOracle make_corner_oracle() {
  BoundaryOracle o;
  o.label_of = [](const Eigen::Vector2d& p) { return std::max(p.x(), p.y()) > 0.0 ? 1 : 0; };
  o.distance_of = [](const Eigen::Vector2d& p) { return std::abs(corner_signed_distance(p)); };
  return o;
}

inline double point_to_segment_distance(const Eigen::Vector2d& p, const Eigen::Vector2d& a,
                                        const Eigen::Vector2d& b) {
  const Eigen::Vector2d ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

inline double point_to_polyline_distance(const std::vector<Polyline>& polys,
                                         const Eigen::Vector2d& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& poly : polys) {
    const auto& v = poly.vertices;
    for (std::size_t i = 0; i + 1 < v.size(); ++i)
      best = std::min(best, point_to_segment_distance(p, v[i], v[i + 1]));
    if (poly.closed && v.size() > 2)
      best = std::min(best, point_to_segment_distance(p, v.back(), v.front()));
  }
  return best;
}

/// Oracle backed by an extracted boundary polyline; distances are accurate to
/// the extraction grid tolerance.
inline BoundaryOracle make_polyline_oracle(std::vector<Polyline> boundary,
                                           std::function<int(const Eigen::Vector2d&)> labeler) {
  bool has_segment = false;
  for (const auto& poly : boundary) has_segment |= poly.vertices.size() >= 2;
  if (!has_segment) throw ParameterError("degenerate boundary polyline");
  BoundaryOracle o;
  o.label_of = std::move(labeler);
  auto shared = std::make_shared<std::vector<Polyline>>(std::move(boundary));
  o.distance_of = [shared](const Eigen::Vector2d& p) {
    return point_to_polyline_distance(*shared, p);
  };
  return o;
}

// ---------------------------------------------------------------------------
// Certification procedures
// ---------------------------------------------------------------------------

/// Global-Lipschitz certification: certified iff the margin over every class
/// exceeds eps times the pair bound, i.e. min_i (f_j - f_i - eps K_ji) >= 0.
inline CertResult certify_global(const Network& net, const LipschitzBound& bound,
                                 const Eigen::VectorXd& x, double eps) {
  if (eps < 0.0) throw ParameterError("certify_global: eps must be >= 0");
  const Eigen::VectorXd f = forward(net, x);
  const int j = argmax_class(f);
  CertResult r;
  r.method = CertMethod::Global;
  r.max_radius = std::numeric_limits<double>::infinity();
  r.margin = std::numeric_limits<double>::infinity();
  r.constant_used = 0.0;
  for (int i = 0; i < f.size(); ++i) {
    if (i == j) continue;
    const double m = f[j] - f[i];
    r.margin = std::min(r.margin, m);
    const double k = bound.at(j, i);
    // K == 0 means f_j - f_i has a constant sign in every direction: the pair
    // can never flip, so it certifies at any radius.
    const double radius = k > 0.0 ? m / k : std::numeric_limits<double>::infinity();
    if (radius < r.max_radius) {
      r.max_radius = radius;
      r.constant_used = k;
    }
  }
  r.certified = r.max_radius >= eps;
  return r;
}

/// Local-Lipschitz certification per Definition-5-style estimates. The local
/// constants are sampling lower bounds, so a certificate from this method is
/// optimistic rather than sound; it exists to study the method's limits.
inline CertResult certify_local(const Network& net, const Eigen::VectorXd& x, double eps,
                                int budget, std::uint64_t seed = kLocalLipschitzSeed) {
  if (eps <= 0.0) throw ParameterError("certify_local: eps must be positive");
  const Eigen::VectorXd f = forward(net, x);
  const int j = argmax_class(f);
  CertResult r;
  r.method = CertMethod::Local;
  r.max_radius = std::numeric_limits<double>::infinity();
  r.margin = std::numeric_limits<double>::infinity();
  r.constant_used = 0.0;
  for (int i = 0; i < f.size(); ++i) {
    if (i == j) continue;
    const double m = f[j] - f[i];
    r.margin = std::min(r.margin, m);
    const double k = local_lipschitz_pair(net, x, j, i, eps, budget, seed).lower;
    const double radius = k > 0.0 ? m / k : std::numeric_limits<double>::infinity();
    if (radius < r.max_radius) {
      r.max_radius = radius;
      r.constant_used = k;
    }
  }
  r.certified = r.max_radius >= eps;
  return r;
}

/// Activation-region certification for 1-hidden-layer nets: certified iff the
/// eps-ball stays inside x's activation region and the region's local linear
/// boundary is at least eps away. Distances are exact point-to-hyperplane.
inline CertResult certify_region(const Network& net, const Eigen::VectorXd& x, double eps) {
  if (eps < 0.0) throw ParameterError("certify_region: eps must be >= 0");
  if (net.layers.size() != 2)
    throw UnsupportedError("certify_region requires exactly one hidden layer");
  const auto& hidden = net.layers.front();
  if (hidden.activation != Activation::MinMax && hidden.activation != Activation::ReLU)
    throw UnsupportedError("certify_region requires a MinMax or ReLU hidden layer");

  const Eigen::MatrixXd& w1 = hidden.dense.weights;  // in x H
  const Eigen::VectorXd h = w1.transpose() * x + hidden.dense.bias;
  double region_dist = std::numeric_limits<double>::infinity();
  if (hidden.activation == Activation::MinMax) {
    for (Eigen::Index p = 0; p + 1 < h.size(); p += 2) {
      const Eigen::VectorXd n = w1.col(p) - w1.col(p + 1);
      const double nn = n.norm();
      if (nn > 0.0) region_dist = std::min(region_dist, std::abs(h[p] - h[p + 1]) / nn);
    }
  } else {
    for (Eigen::Index u = 0; u < h.size(); ++u) {
      const double nn = w1.col(u).norm();
      if (nn > 0.0) region_dist = std::min(region_dist, std::abs(h[u]) / nn);
    }
  }

  // Effective first-layer map with the activation frozen to x's pattern.
  Eigen::MatrixXd routed(w1.rows(), w1.cols());
  if (hidden.activation == Activation::MinMax) {
    for (Eigen::Index p = 0; p + 1 < h.size(); p += 2) {
      const bool ordered = h[p] <= h[p + 1];
      routed.col(p) = ordered ? w1.col(p) : w1.col(p + 1);
      routed.col(p + 1) = ordered ? w1.col(p + 1) : w1.col(p);
    }
  } else {
    for (Eigen::Index u = 0; u < h.size(); ++u) {
      if (h[u] > 0.0)
        routed.col(u) = w1.col(u);
      else
        routed.col(u).setZero();
    }
  }
  const Eigen::MatrixXd effective = routed * net.layers.back().dense.weights;  // in x m

  const Eigen::VectorXd f = forward(net, x);
  const int j = argmax_class(f);
  double boundary_dist = std::numeric_limits<double>::infinity();
  for (int i = 0; i < f.size(); ++i) {
    if (i == j) continue;
    const Eigen::VectorXd n = effective.col(j) - effective.col(i);
    const double nn = n.norm();
    const double gap = f[j] - f[i];
    if (nn > 0.0)
      boundary_dist = std::min(boundary_dist, gap / nn);
    else if (gap == 0.0)
      boundary_dist = 0.0;  // classes tie throughout the region
  }

  CertResult r;
  r.method = CertMethod::Region;
  r.max_radius = std::min(region_dist, boundary_dist);
  r.margin = margin(net, x);
  r.constant_used = std::numeric_limits<double>::quiet_NaN();
  r.certified = r.max_radius >= eps;
  return r;
}

// ---------------------------------------------------------------------------
// Level-set extraction (marching squares)
// ---------------------------------------------------------------------------

namespace detail {

struct SegmentSink {
  // edge key -> interpolated crossing point
  std::map<std::uint64_t, Eigen::Vector2d> points;
  // segments as pairs of edge keys
  std::vector<std::pair<std::uint64_t, std::uint64_t>> segments;
};

inline std::uint64_t edge_key(int ix, int iy, int nodes_per_row, bool vertical) {
  return (static_cast<std::uint64_t>(iy) * nodes_per_row + ix) * 2 + (vertical ? 1 : 0);
}

}  // namespace detail

/// Marching-squares extraction of {p : field(p) = level} over a box sampled at
/// `resolution` cells per axis. Vertices sit on grid edges, so their spacing
/// and their distance to the true level set are bounded by the cell diagonal.
inline std::vector<Polyline> extract_field_level_set(
    const std::function<double(const Eigen::Vector2d&)>& field, double level, const Box2& box,
    int resolution) {
  box.validate();
  if (resolution < 16) throw ParameterError("extract_level_set: resolution must be >= 16");
  const int res = resolution;
  const int nodes = res + 1;
  const double dx = box.width() / res;
  const double dy = box.height() / res;

  auto node_x = [&](int ix) { return box.x_min + ix * dx; };
  auto node_y = [&](int iy) { return box.y_min + iy * dy; };

  std::vector<double> val(static_cast<std::size_t>(nodes) * nodes);
  for (int iy = 0; iy < nodes; ++iy)
    for (int ix = 0; ix < nodes; ++ix)
      val[static_cast<std::size_t>(iy) * nodes + ix] =
          field(Eigen::Vector2d(node_x(ix), node_y(iy))) - level;

  detail::SegmentSink sink;
  auto value_at = [&](int ix, int iy) { return val[static_cast<std::size_t>(iy) * nodes + ix]; };

  // Edge endpoints per cell: 0 = bottom, 1 = right, 2 = top, 3 = left.
  auto edge_point = [&](int cx, int cy, int edge) -> std::pair<std::uint64_t, Eigen::Vector2d> {
    int ax, ay, bx, by;
    bool vertical = false;
    int ex, ey;
    switch (edge) {
      case 0: ax = cx; ay = cy; bx = cx + 1; by = cy; ex = cx; ey = cy; break;
      case 1: ax = cx + 1; ay = cy; bx = cx + 1; by = cy + 1; vertical = true; ex = cx + 1; ey = cy; break;
      case 2: ax = cx; ay = cy + 1; bx = cx + 1; by = cy + 1; ex = cx; ey = cy + 1; break;
      default: ax = cx; ay = cy; bx = cx; by = cy + 1; vertical = true; ex = cx; ey = cy; break;
    }
    const double va = value_at(ax, ay);
    const double vb = value_at(bx, by);
    const double t = va / (va - vb);
    Eigen::Vector2d a(node_x(ax), node_y(ay));
    Eigen::Vector2d b(node_x(bx), node_y(by));
    return {detail::edge_key(ex, ey, nodes, vertical), a + t * (b - a)};
  };

  auto emit = [&](int cx, int cy, int e0, int e1) {
    auto [k0, p0] = edge_point(cx, cy, e0);
    auto [k1, p1] = edge_point(cx, cy, e1);
    sink.points[k0] = p0;
    sink.points[k1] = p1;
    sink.segments.emplace_back(k0, k1);
  };

  for (int cy = 0; cy < res; ++cy) {
    for (int cx = 0; cx < res; ++cx) {
      const bool b0 = value_at(cx, cy) > 0.0;
      const bool b1 = value_at(cx + 1, cy) > 0.0;
      const bool b2 = value_at(cx + 1, cy + 1) > 0.0;
      const bool b3 = value_at(cx, cy + 1) > 0.0;
      const int c = (b0 ? 1 : 0) | (b1 ? 2 : 0) | (b2 ? 4 : 0) | (b3 ? 8 : 0);
      switch (c) {
        case 0: case 15: break;
        case 1: case 14: emit(cx, cy, 3, 0); break;
        case 2: case 13: emit(cx, cy, 0, 1); break;
        case 3: case 12: emit(cx, cy, 3, 1); break;
        case 4: case 11: emit(cx, cy, 1, 2); break;
        case 6: case 9:  emit(cx, cy, 0, 2); break;
        case 7: case 8:  emit(cx, cy, 3, 2); break;
        case 5: case 10: {
          // Saddle: disambiguate with the cell-center sample.
          const Eigen::Vector2d center(node_x(cx) + 0.5 * dx, node_y(cy) + 0.5 * dy);
          const bool center_pos = field(center) - level > 0.0;
          const bool corners_pos = (c == 5);
          if (center_pos == corners_pos) {
            emit(cx, cy, 3, 2);
            emit(cx, cy, 0, 1);
          } else {
            emit(cx, cy, 3, 0);
            emit(cx, cy, 1, 2);
          }
          break;
        }
      }
    }
  }

  // Chain segments into polylines via edge adjacency.
  std::map<std::uint64_t, std::vector<std::size_t>> by_edge;
  for (std::size_t s = 0; s < sink.segments.size(); ++s) {
    by_edge[sink.segments[s].first].push_back(s);
    by_edge[sink.segments[s].second].push_back(s);
  }
  std::vector<bool> used(sink.segments.size(), false);

  auto walk = [&](std::size_t seg0, std::uint64_t start_edge) {
    Polyline poly;
    std::uint64_t cur = start_edge;
    poly.vertices.push_back(sink.points.at(cur));
    std::size_t seg = seg0;
    while (true) {
      used[seg] = true;
      const auto [a, b] = sink.segments[seg];
      cur = (a == cur) ? b : a;
      poly.vertices.push_back(sink.points.at(cur));
      std::size_t next = seg;
      for (std::size_t cand : by_edge.at(cur))
        if (!used[cand]) { next = cand; break; }
      if (next == seg) break;
      seg = next;
    }
    if (poly.vertices.size() > 2 && (poly.vertices.front() - poly.vertices.back()).norm() == 0.0) {
      poly.vertices.pop_back();
      poly.closed = true;
    }
    // Consecutive duplicates appear when the curve passes through a node.
    auto& v = poly.vertices;
    v.erase(std::unique(v.begin(), v.end(),
                        [](const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
                          return (p - q).norm() == 0.0;
                        }),
            v.end());
    return poly;
  };

  std::vector<Polyline> result;
  // Open chains first, starting from degree-1 edges; remaining segments form cycles.
  for (const auto& [edge, segs] : by_edge) {
    if (segs.size() != 1 || used[segs[0]]) continue;
    Polyline poly = walk(segs[0], edge);
    if (poly.vertices.size() >= 2) result.push_back(std::move(poly));
  }
  for (std::size_t s = 0; s < sink.segments.size(); ++s) {
    if (used[s]) continue;
    Polyline poly = walk(s, sink.segments[s].first);
    if (poly.vertices.size() >= 2) result.push_back(std::move(poly));
  }
  return result;
}

inline double signed_margin(const Network& net, const Eigen::Vector2d& p) {
  const Eigen::VectorXd f = forward(net, Eigen::VectorXd(p));
  return f[1] - f[0];
}

/// Level set of the signed margin f1 - f0 of a binary network.
inline std::vector<Polyline> extract_level_set(const Network& net, double level, const Box2& box,
                                               int resolution) {
  if (net.num_classes != 2)
    throw UnsupportedError("extract_level_set is defined for binary networks");
  return extract_field_level_set(
      [&](const Eigen::Vector2d& p) { return signed_margin(net, p); }, level, box, resolution);
}

inline std::vector<Polyline> decision_boundary(const Network& net, const Box2& box,
                                               int resolution) {
  return extract_level_set(net, 0.0, box, resolution);
}

/// Frontier of the global-Lipschitz certified region of a binary net: the two
/// level curves f1 - f0 = +/- eps*K.
inline std::vector<Polyline> certified_frontier(const Network& net, const LipschitzBound& bound,
                                                double eps, const Box2& box, int resolution) {
  if (net.num_classes != 2)
    throw UnsupportedError("certified_frontier is defined for binary networks");
  const double level = eps * bound.at(1, 0);
  std::vector<Polyline> out = extract_level_set(net, level, box, resolution);
  std::vector<Polyline> neg = extract_level_set(net, -level, box, resolution);
  out.insert(out.end(), std::make_move_iterator(neg.begin()), std::make_move_iterator(neg.end()));
  return out;
}

/// Points at oracle distance exactly eps from the decision boundary.
inline std::vector<Polyline> robust_frontier(const BoundaryOracle& oracle, double eps,
                                             const Box2& box, int resolution) {
  return extract_field_level_set(
      [&](const Eigen::Vector2d& p) { return oracle.distance_of(p); }, eps, box, resolution);
}

// ---------------------------------------------------------------------------
// Region masks and verified-robust accuracy
// ---------------------------------------------------------------------------

enum class CellTag : std::uint8_t { Neither = 0, CertifiedOnly = 1, RobustOnly = 2, Both = 3 };

/// Per-cell certified/robust classification of a box, sampled at cell centers.
struct RegionMask {
  Box2 box;
  int resolution = 0;
  std::vector<CellTag> cells;  // row-major, cells[iy * resolution + ix]

  CellTag at(int ix, int iy) const { return cells[static_cast<std::size_t>(iy) * resolution + ix]; }
  double cell_width() const { return box.width() / resolution; }
  double cell_height() const { return box.height() / resolution; }
  double cell_area() const { return cell_width() * cell_height(); }
  Eigen::Vector2d cell_center(int ix, int iy) const {
    return {box.x_min + (ix + 0.5) * cell_width(), box.y_min + (iy + 0.5) * cell_height()};
  }
  long count(CellTag tag) const {
    return std::count(cells.begin(), cells.end(), tag);
  }
  double area(CellTag tag) const { return count(tag) * cell_area(); }
  double robust_not_certified_area() const { return area(CellTag::RobustOnly); }
  long certified_not_robust_count() const { return count(CellTag::CertifiedOnly); }
};

inline RegionMask region_masks(const Network& net, const LipschitzBound& bound,
                               const BoundaryOracle& oracle, double eps, const Box2& box,
                               int resolution = 512) {
  box.validate();
  if (resolution < 1) throw ParameterError("region_masks: resolution must be >= 1");
  RegionMask mask;
  mask.box = box;
  mask.resolution = resolution;
  mask.cells.resize(static_cast<std::size_t>(resolution) * resolution);
  for (int iy = 0; iy < resolution; ++iy) {
    for (int ix = 0; ix < resolution; ++ix) {
      const Eigen::Vector2d p = mask.cell_center(ix, iy);
      const bool cert = certify_global(net, bound, p, eps).certified;
      const bool rob = robust_oracle(oracle, p, eps).robust;
      CellTag tag = CellTag::Neither;
      if (cert && rob) tag = CellTag::Both;
      else if (cert) tag = CellTag::CertifiedOnly;
      else if (rob) tag = CellTag::RobustOnly;
      mask.cells[static_cast<std::size_t>(iy) * resolution + ix] = tag;
    }
  }
  return mask;
}

struct VraStats {
  double accuracy = 0.0;
  double certified_fraction = 0.0;
  double vra = 0.0;
  double robust_fraction = 0.0;
  double robust_but_uncertified_fraction = 0.0;
};

/// Accuracy, certified fraction, and verified robust accuracy of a labeled
/// point set, with the robust fractions judged by the oracle.
inline VraStats vra(const Network& net, const LipschitzBound& bound,
                    const std::vector<Eigen::Vector2d>& points, const std::vector<int>& labels,
                    double eps, const BoundaryOracle& oracle) {
  if (points.empty()) throw ParameterError("vra: empty dataset");
  if (points.size() != labels.size()) throw ParameterError("vra: points/labels size mismatch");
  VraStats s;
  const double n = static_cast<double>(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Eigen::VectorXd x = points[i];
    const bool correct = predict(net, x) == labels[i];
    const bool cert = certify_global(net, bound, x, eps).certified;
    const bool rob = robust_oracle(oracle, points[i], eps).robust;
    s.accuracy += correct;
    s.certified_fraction += cert;
    s.vra += correct && cert;
    s.robust_fraction += rob;
    s.robust_but_uncertified_fraction += rob && !cert;
  }
  s.accuracy /= n;
  s.certified_fraction /= n;
  s.vra /= n;
  s.robust_fraction /= n;
  s.robust_but_uncertified_fraction /= n;
  return s;
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

inline std::string polylines_to_csv(const std::vector<Polyline>& polys) {
  std::ostringstream out;
  out << "polyline,closed,x,y\n";
  for (std::size_t i = 0; i < polys.size(); ++i)
    for (const auto& v : polys[i].vertices)
      out << i << ',' << (polys[i].closed ? 1 : 0) << ',' << format_double(v.x()) << ','
          << format_double(v.y()) << '\n';
  return out.str();
}

inline std::string mask_to_csv(const RegionMask& mask) {
  std::ostringstream out;
  out << "x,y,certified,robust\n";
  for (int iy = 0; iy < mask.resolution; ++iy)
    for (int ix = 0; ix < mask.resolution; ++ix) {
      const Eigen::Vector2d c = mask.cell_center(ix, iy);
      const CellTag t = mask.at(ix, iy);
      const bool cert = t == CellTag::Both || t == CellTag::CertifiedOnly;
      const bool rob = t == CellTag::Both || t == CellTag::RobustOnly;
      out << format_double(c.x()) << ',' << format_double(c.y()) << ',' << (cert ? 1 : 0) << ','
          << (rob ? 1 : 0) << '\n';
    }
  return out.str();
}

}  // namespace cornercert
