#include "portdet/ellipse.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Dense>

#include "portdet/errors.hpp"

namespace portdet {
namespace {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Row5 = Eigen::Matrix<double, 1, 5>;

Row5 design_row(const Vec2& p) {
  Row5 r;
  r << p.x() * p.x(), p.x() * p.y(), p.y() * p.y(), p.x(), p.y();
  return r;
}

Conic from_vec(const Vec5& e) { return Conic{e(0), e(1), e(2), e(3), e(4)}; }

// Centre/axes of a x^2 + b xy + c y^2 + d x + e y + f = 0.
std::optional<EllipseAxes> axes_from_coefficients(double a, double b, double c, double d, double e, double f) {
  const double det = 4.0 * a * c - b * b;
  if (!(det > 0.0) || !std::isfinite(det)) return std::nullopt;
  const double x0 = (b * e - 2.0 * c * d) / det;
  const double y0 = (b * d - 2.0 * a * e) / det;
  const double f0 = f + 0.5 * (d * x0 + e * y0);

  const double mean = 0.5 * (a + c);
  const double radius = std::hypot(0.5 * (a - c), 0.5 * b);
  const double l_hi = mean + radius;
  const double l_lo = mean - radius;
  const double s_hi = -f0 / l_hi;
  const double s_lo = -f0 / l_lo;
  if (!(s_hi > 0.0) || !(s_lo > 0.0) || !std::isfinite(s_hi) || !std::isfinite(s_lo)) return std::nullopt;

  // Eigenvector of l_hi points along 0.5 atan2(b, a - c).
  const double phi = 0.5 * std::atan2(b, a - c);
  EllipseAxes out;
  out.center = Vec2(x0, y0);
  if (s_lo >= s_hi) {
    out.a = std::sqrt(s_lo);
    out.b = std::sqrt(s_hi);
    out.theta = phi + 0.5 * kPi;
  } else {
    out.a = std::sqrt(s_hi);
    out.b = std::sqrt(s_lo);
    out.theta = phi;
  }
  if (out.a - out.b <= 1e-12 * out.a) {
    out.theta = 0.0;
  } else {
    out.theta = std::fmod(out.theta, kPi);
    if (out.theta < 0.0) out.theta += kPi;
    if (out.theta >= kPi) out.theta -= kPi;
  }
  return out;
}

constexpr int kMaxRefineRounds = 8;

}  // namespace

void RansacConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("ransac: max_iterations must be >= 1");
  if (!(inlier_tolerance > 0.0)) throw ConfigError("ransac: inlier_tolerance must be positive");
  if (!(min_axis_ratio > 0.0 && min_axis_ratio <= 1.0)) throw ConfigError("ransac: min_axis_ratio must lie in (0, 1]");
}

EllipseAxes PointNormalization::invert(const EllipseAxes& e) const {
  EllipseAxes out = e;
  out.center = invert(e.center);
  out.a = e.a / scale;
  out.b = e.b / scale;
  return out;
}

std::optional<NormalizedPoints> normalize_points(std::span<const Vec2> points) {
  if (points.size() < 5) return std::nullopt;
  Vec2 centroid = Vec2::Zero();
  for (const auto& p : points) centroid += p;
  centroid /= static_cast<double>(points.size());
  double sq = 0.0;
  for (const auto& p : points) sq += (p - centroid).squaredNorm();
  const double rms = std::sqrt(sq / static_cast<double>(points.size()));
  if (!(rms > 1e-12 * std::max(1.0, centroid.norm()))) return std::nullopt;

  NormalizedPoints out;
  out.transform.centroid = centroid;
  out.transform.scale = std::sqrt(2.0) / rms;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back(out.transform.apply(p));
  return out;
}

std::optional<Conic> fit_conic_5pts(std::span<const Vec2, 5> points) {
  Eigen::Matrix<double, 5, 5> m;
  for (int i = 0; i < 5; ++i) m.row(i) = design_row(points[i]);
  Eigen::FullPivLU<Eigen::Matrix<double, 5, 5>> lu(m);
  lu.setThreshold(1e-10);
  if (lu.rank() < 5) return std::nullopt;
  const Vec5 e = lu.solve(Vec5::Constant(-1.0));
  if (!e.allFinite()) return std::nullopt;
  const Conic c = from_vec(e);
  if (!c.is_ellipse()) return std::nullopt;
  return c;
}

std::optional<EllipseAxes> conic_to_axes(const Conic& c) {
  if (!c.is_ellipse()) return std::nullopt;
  return axes_from_coefficients(c.A, c.B, c.C, c.D, c.E, Conic::F);
}

std::optional<Conic> axes_to_conic(const EllipseAxes& e) {
  if (!(e.b > 0.0) || e.a < e.b) return std::nullopt;
  const double cs = std::cos(e.theta), sn = std::sin(e.theta);
  const double ia = 1.0 / (e.a * e.a), ib = 1.0 / (e.b * e.b);
  const double a = cs * cs * ia + sn * sn * ib;
  const double b = 2.0 * cs * sn * (ia - ib);
  const double c = sn * sn * ia + cs * cs * ib;
  const double x0 = e.center.x(), y0 = e.center.y();
  const double d = -2.0 * a * x0 - b * y0;
  const double ee = -b * x0 - 2.0 * c * y0;
  const double quad = a * x0 * x0 + b * x0 * y0 + c * y0 * y0;
  const double f = quad - 1.0;
  if (std::abs(f) <= 1e-12 * (quad + 1.0)) return std::nullopt;
  return Conic{a / f, b / f, c / f, d / f, ee / f};
}

std::optional<Conic> denormalize(const Conic& c, const PointNormalization& t) {
  const double s = t.scale, mx = t.centroid.x(), my = t.centroid.y();
  const double a = c.A * s * s, b = c.B * s * s, cc = c.C * s * s;
  const double ds = c.D * s, es = c.E * s;
  const double d = -2.0 * a * mx - b * my + ds;
  const double e = -2.0 * cc * my - b * mx + es;
  const double f = a * mx * mx + b * mx * my + cc * my * my - ds * mx - es * my + Conic::F;
  const double magnitude = std::abs(a * mx * mx) + std::abs(b * mx * my) + std::abs(cc * my * my) +
                           std::abs(ds * mx) + std::abs(es * my) + 1.0;
  if (std::abs(f) <= 1e-12 * magnitude) return std::nullopt;
  return Conic{a / f, b / f, cc / f, d / f, e / f};
}

double point_distance(const EllipseAxes& e, const Vec2& pt) {
  const Vec2 d = pt - e.center;
  const double u = d.dot(e.major_dir());
  const double v = d.dot(e.minor_dir());
  const double a2 = e.a * e.a, b2 = e.b * e.b;
  const double rho = std::sqrt(u * u / a2 + v * v / b2);
  const double grad = std::sqrt(u * u / (a2 * a2) + v * v / (b2 * b2));
  if (grad < 1e-12 / std::max(e.a, 1.0) || rho < 1e-12) return std::numeric_limits<double>::max();
  return std::abs(rho - 1.0) * rho / grad;
}

std::optional<Conic> refine_least_squares_normalized(std::span<const Vec2> normalized_inliers) {
  if (normalized_inliers.size() < 5) return std::nullopt;
  Eigen::Matrix<double, Eigen::Dynamic, 5> m(static_cast<Eigen::Index>(normalized_inliers.size()), 5);
  for (std::size_t i = 0; i < normalized_inliers.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = design_row(normalized_inliers[i]);
  }
  Eigen::ColPivHouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 5>> qr(m);
  qr.setThreshold(1e-10);
  if (qr.rank() < 5) return std::nullopt;
  const Vec5 e = qr.solve(Eigen::VectorXd::Constant(m.rows(), -1.0));
  if (!e.allFinite()) return std::nullopt;
  return from_vec(e);
}

std::optional<Conic> refine_least_squares(std::span<const Vec2> inliers) {
  const auto norm = normalize_points(inliers);
  if (!norm) return std::nullopt;
  const auto c = refine_least_squares_normalized(norm->points);
  if (!c) return std::nullopt;
  return denormalize(*c, norm->transform);
}

std::optional<Conic> refine_sampson(std::span<const Vec2> points, int iterations) {
  const auto norm = normalize_points(points);
  if (!norm || norm->points.size() < 5) return std::nullopt;
  const auto& q = norm->points;
  const auto rows = static_cast<Eigen::Index>(q.size());
  Eigen::VectorXd w = Eigen::VectorXd::Ones(rows);
  std::optional<Conic> c;
  for (int it = 0; it <= iterations; ++it) {
    Eigen::Matrix<double, Eigen::Dynamic, 5> m(rows, 5);
    for (Eigen::Index i = 0; i < rows; ++i) m.row(i) = w(i) * design_row(q[static_cast<std::size_t>(i)]);
    Eigen::ColPivHouseholderQR<Eigen::Matrix<double, Eigen::Dynamic, 5>> qr(m);
    qr.setThreshold(1e-10);
    if (qr.rank() < 5) return std::nullopt;
    const Vec5 e = qr.solve(Eigen::VectorXd(-w));
    if (!e.allFinite()) return std::nullopt;
    c = from_vec(e);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Vec2& p = q[static_cast<std::size_t>(i)];
      const double gx = 2 * c->A * p.x() + c->B * p.y() + c->D, gy = c->B * p.x() + 2 * c->C * p.y() + c->E;
      w(i) = 1.0 / std::max(std::hypot(gx, gy), 1e-9);
    }
  }
  return denormalize(*c, norm->transform);
}

double algebraic_rms(const Conic& c, std::span<const Vec2> normalized_points) {
  if (normalized_points.empty()) return 0.0;
  double sq = 0.0;
  for (const auto& p : normalized_points) sq += c(p) * c(p);
  return std::sqrt(sq / static_cast<double>(normalized_points.size()));
}

std::optional<RansacResult> ransac_ellipse(std::span<const Vec2> points, const RansacConfig& cfg) {
  cfg.validate();
  const auto norm = normalize_points(points);
  if (!norm) return std::nullopt;
  const std::size_t n = points.size();
  const auto& q = norm->points;
  const auto& frame = norm->transform;

  const auto count_inliers = [&](const EllipseAxes& e) {
    std::size_t count = 0;
    for (const auto& p : points) count += point_distance(e, p) <= cfg.inlier_tolerance;
    return count;
  };
  const auto acceptable = [&](const Conic& c) -> std::optional<EllipseAxes> {
    const auto axes_n = conic_to_axes(c);
    if (!axes_n) return std::nullopt;
    const EllipseAxes axes = frame.invert(*axes_n);
    if (axes.b / axes.a < cfg.min_axis_ratio) return std::nullopt;
    return axes;
  };

  const auto inlier_set = [&](const EllipseAxes& e) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (point_distance(e, points[i]) <= cfg.inlier_tolerance) idx.push_back(i);
    }
    return idx;
  };
  const auto refit = [&](const std::vector<std::size_t>& idx) -> std::optional<std::pair<Conic, EllipseAxes>> {
    std::vector<Vec2> inlier_pts;
    inlier_pts.reserve(idx.size());
    for (const auto i : idx) inlier_pts.push_back(q[i]);
    const auto conic = refine_least_squares_normalized(inlier_pts);
    if (!conic) return std::nullopt;
    const auto axes = acceptable(*conic);
    if (!axes) return std::nullopt;
    return std::make_pair(*conic, *axes);
  };

  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  RansacResult best;
  best.frame = frame;
  std::size_t best_raw = 0;   // inliers of the best raw hypothesis
  std::size_t best_count = 0; // inliers of the best refined model
  bool found = false;
  std::array<std::size_t, 5> idx{};
  std::array<Vec2, 5> sample;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    best.iterations = it + 1;
    for (std::size_t k = 0; k < 5; ++k) {
      std::size_t candidate;
      do {
        candidate = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), candidate) !=
               idx.begin() + static_cast<std::ptrdiff_t>(k));
      idx[k] = candidate;
      sample[k] = q[candidate];
    }
    const auto conic = fit_conic_5pts(std::span<const Vec2, 5>(sample));
    if (!conic) continue;
    const auto axes = acceptable(*conic);
    if (!axes) continue;
    const std::size_t count = count_inliers(*axes);
    if (count <= best_raw) continue;
    best_raw = count;

    // A new best hypothesis is refitted on its inliers until the inlier set
    // reaches a fixed point; models compete on their final inlier count.
    Conic model_conic = *conic;
    EllipseAxes model = *axes;
    std::vector<std::size_t> support = inlier_set(model);
    bool refined = false;
    for (int round = 0; round < kMaxRefineRounds; ++round) {
      const auto next = refit(support);
      if (!next) break;
      model_conic = next->first;
      model = next->second;
      refined = true;
      auto next_support = inlier_set(model);
      if (next_support == support) break;
      support = std::move(next_support);
    }
    const std::size_t model_count = refined ? inlier_set(model).size() : count;
    if (!found || model_count > best_count) {
      found = true;
      best_count = model_count;
      best.hypothesis = *axes;
      best.normalized_hypothesis = *conic;
      best.ellipse = model;
      best.normalized_conic = model_conic;
      best.refined = refined;
    }
    if (count == n || best_count == n) {
      best.early_exit = true;
      break;
    }
  }
  if (!found) return std::nullopt;

  for (std::size_t i = 0; i < n; ++i) {
    if (point_distance(best.ellipse, points[i]) <= cfg.inlier_tolerance) best.inliers.push_back(i);
  }
  return best;
}

}  // namespace portdet
