#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cornercert/errors.hpp"
#include "cornercert/geometry.hpp"
#include "cornercert/io.hpp"

namespace cornercert {

/// Synthetic corner task: class 0 fills the region at distance >= eps on the
/// negative side of the corner boundary, class 1 sits exactly on the eps
/// offset curve around it, so the cross-class margin is exactly 2*eps.
struct CornerDataset {
  std::vector<Eigen::Vector2d> points;
  std::vector<int> labels;
  double eps = 0.5;
  std::uint64_t seed = 0;
  int n_per_class = 0;
  double box_halfwidth = 2.0;
};

inline CornerDataset make_corner_dataset(double eps, int n_per_class, std::uint64_t seed,
                                         double box_halfwidth = 2.0) {
  if (eps <= 0.0) throw ParameterError("corner dataset: eps must be positive");
  if (n_per_class < 1) throw ParameterError("corner dataset: n_per_class must be >= 1");
  if (box_halfwidth <= 2.0 * eps)
    throw ParameterError("corner dataset: box_halfwidth must exceed 2*eps");

  CornerDataset ds;
  ds.eps = eps;
  ds.seed = seed;
  ds.n_per_class = n_per_class;
  ds.box_halfwidth = box_halfwidth;
  ds.points.reserve(2 * static_cast<std::size_t>(n_per_class));
  ds.labels.reserve(2 * static_cast<std::size_t>(n_per_class));

  std::mt19937_64 rng(seed);
  const double hw = box_halfwidth;

  // Class 0: uniform in the square {max(p1, p2) <= -eps} within the box.
  std::uniform_real_distribution<double> neg(-hw, -eps);
  for (int k = 0; k < n_per_class; ++k) {
    const double x1 = neg(rng);
    const double x2 = neg(rng);
    ds.points.emplace_back(x1, x2);
    ds.labels.push_back(0);
  }

  // Class 1: uniform by arc length on the eps offset curve, clipped to the
  // box: vertical piece (eps, [-hw, 0]), quarter arc of radius eps,
  // horizontal piece ([-hw, 0], eps).
  const double arc_len = eps * std::numbers::pi / 2.0;
  const double total = 2.0 * hw + arc_len;
  std::uniform_real_distribution<double> along(0.0, total);
  for (int k = 0; k < n_per_class; ++k) {
    const double u = along(rng);
    Eigen::Vector2d p;
    if (u < hw) {
      p = {eps, u - hw};
    } else if (u < hw + arc_len) {
      const double theta = (u - hw) / eps;
      p = {eps * std::cos(theta), eps * std::sin(theta)};
    } else {
      p = {-(u - hw - arc_len), eps};
    }
    ds.points.push_back(p);
    ds.labels.push_back(1);
  }
  return ds;
}

inline std::string dataset_to_csv(const CornerDataset& ds) {
  std::ostringstream out;
  out << "x1,x2,label\n";
  for (std::size_t i = 0; i < ds.points.size(); ++i)
    out << format_double(ds.points[i].x()) << ',' << format_double(ds.points[i].y()) << ','
        << ds.labels[i] << '\n';
  return out.str();
}

inline nlohmann::json dataset_params_json(const CornerDataset& ds) {
  return {{"eps", ds.eps},
          {"seed", ds.seed},
          {"n_per_class", ds.n_per_class},
          {"box_halfwidth", ds.box_halfwidth}};
}

inline void save_dataset(const CornerDataset& ds, const std::string& csv_path,
                         const std::string& sidecar_path) {
  write_text_file(csv_path, dataset_to_csv(ds));
  write_text_file(sidecar_path, dataset_params_json(ds).dump(2) + "\n");
}

/// Parses "x1,x2,label" CSV; generation parameters are restored from the
/// sidecar by the caller when available.
inline CornerDataset load_dataset_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  CornerDataset ds;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line != "x1,x2,label") throw ParseError("expected header 'x1,x2,label'", lineno);
      continue;
    }
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string sx, sy, sl;
    if (!std::getline(row, sx, ',') || !std::getline(row, sy, ',') || !std::getline(row, sl))
      throw ParseError("expected 'x1,x2,label'", lineno);
    try {
      ds.points.emplace_back(std::stod(sx), std::stod(sy));
      ds.labels.push_back(std::stoi(sl));
    } catch (const std::exception&) {
      throw ParseError("malformed number", lineno);
    }
    if (ds.labels.back() != 0 && ds.labels.back() != 1)
      throw ParseError("label must be 0 or 1", lineno);
  }
  if (ds.points.empty()) throw ParseError("dataset has no points", lineno);
  ds.n_per_class = 0;
  return ds;
}

}  // namespace cornercert
