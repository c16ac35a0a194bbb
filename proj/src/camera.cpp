#include "stylenerf/camera.hpp"

#include "stylenerf/error.hpp"

#include <cmath>
#include <numbers>

namespace snerf {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kPitchLimit = std::numbers::pi / 2 - 1e-6;
}  // namespace

void PoseDistribution::validate() const {
  if (kind == PoseDistKind::Gaussian) {
    if (pitch_b < 0 || yaw_b < 0) throw ConfigError("gaussian pose std must be >= 0");
  } else if (pitch_a > pitch_b || yaw_a > yaw_b) {
    throw ConfigError("uniform pose range needs low <= high");
  }
}

void PoseDistribution::canonicalize(double& pitch, double& yaw) const {
  if (kind == PoseDistKind::Gaussian) {
    pitch = std::clamp(pitch, pitch_a - 4 * pitch_b, pitch_a + 4 * pitch_b);
    yaw = std::clamp(yaw, yaw_a - 4 * yaw_b, yaw_a + 4 * yaw_b);
  } else {
    pitch = std::clamp(pitch, pitch_a, pitch_b);
    yaw = std::clamp(yaw, yaw_a, yaw_b);
  }
}

void CameraPose::validate() const {
  if (!(radius > 0)) throw ArgumentError("camera radius must be positive");
  if (!(fov > 0 && fov < 180)) throw ArgumentError("fov must lie in (0, 180) degrees");
  if (!std::isfinite(theta) || !std::isfinite(phi)) throw ArgumentError("non-finite camera angle");
}

Eigen::Vector3d CameraPose::position() const {
  return radius * Eigen::Vector3d(std::cos(theta) * std::sin(phi), std::sin(theta),
                                  std::cos(theta) * std::cos(phi));
}

void to_json(nlohmann::json& j, const CameraPose& p) {
  j = nlohmann::json{{"theta", p.theta}, {"phi", p.phi}, {"radius", p.radius}, {"fov", p.fov}};
}

void from_json(const nlohmann::json& j, CameraPose& p) {
  p.theta = j.value("theta", 0.0);
  p.phi = j.value("phi", 0.0);
  p.radius = j.value("radius", 1.0);
  p.fov = j.value("fov", 12.0);
}

CameraPose canonical_pose(const CameraPose& pose) {
  CameraPose c = pose;
  c.phi = pose.phi - kTwoPi * std::floor(pose.phi / kTwoPi);
  if (c.phi >= kTwoPi) c.phi = 0.0;
  c.theta = std::clamp(pose.theta, -kPitchLimit, kPitchLimit);
  return c;
}

CameraPose sample_pose(const PoseDistribution& dist, Rng& rng, double radius, double fov) {
  CameraPose p;
  p.radius = radius;
  p.fov = fov;
  if (dist.kind == PoseDistKind::Gaussian) {
    p.theta = dist.pitch_a + dist.pitch_b * rng.normal();
    p.phi = dist.yaw_a + dist.yaw_b * rng.normal();
  } else {
    p.theta = rng.uniform(dist.pitch_a, dist.pitch_b);
    p.phi = rng.uniform(dist.yaw_a, dist.yaw_b);
  }
  return p;
}

RayBundle rays_through(const CameraPose& pose_in, const std::vector<Eigen::Vector2d>& plane_points,
                       double bound_radius, double near_epsilon) {
  pose_in.validate();
  const CameraPose pose = canonical_pose(pose_in);
  const Eigen::Vector3d origin = pose.position();
  const Eigen::Vector3d forward = -origin.normalized();
  Eigen::Vector3d right = forward.cross(Eigen::Vector3d::UnitY());
  right.normalize();
  const Eigen::Vector3d up = right.cross(forward);
  const double half = std::tan(pose.fov * std::numbers::pi / 360.0);

  const auto n = static_cast<ad::Index>(plane_points.size());
  RayBundle rb;
  rb.origins.resize(n, 3);
  rb.directions.resize(n, 3);
  rb.near.resize(n);
  rb.far.resize(n);
  rb.hit.assign(static_cast<std::size_t>(n), 0);
  const double c = origin.squaredNorm() - bound_radius * bound_radius;
  for (ad::Index i = 0; i < n; ++i) {
    const auto& uv = plane_points[static_cast<std::size_t>(i)];
    Eigen::Vector3d d = forward + half * (uv.x() * right + uv.y() * up);
    d.normalize();
    rb.origins.row(i) = origin.transpose();
    rb.directions.row(i) = d.transpose();
    const double b = origin.dot(d);
    const double disc = b * b - c;
    rb.near[i] = 0.0;
    rb.far[i] = 0.0;
    if (disc > 0) {
      const double root = std::sqrt(disc);
      const double t0 = -b - root;
      const double t1 = -b + root;
      if (t1 > near_epsilon) {
        rb.near[i] = std::max(t0, near_epsilon);
        rb.far[i] = t1;
        rb.hit[static_cast<std::size_t>(i)] = 1;
      }
    }
  }
  return rb;
}

RayBundle generate_rays(const CameraPose& pose, int resolution, double bound_radius,
                        double near_epsilon) {
  if (resolution < 1) throw ArgumentError("resolution must be >= 1");
  std::vector<Eigen::Vector2d> pts;
  pts.reserve(static_cast<std::size_t>(resolution) * resolution);
  for (int i = 0; i < resolution; ++i)
    for (int j = 0; j < resolution; ++j)
      pts.emplace_back(pixel_center(j, resolution), -pixel_center(i, resolution));
  RayBundle rb = rays_through(pose, pts, bound_radius, near_epsilon);
  rb.height = rb.width = resolution;
  return rb;
}

CorrespondingRays corresponding_rays(const CameraPose& pose, int low_res, int high_res,
                                     double bound_radius, double near_epsilon) {
  if (low_res < 1 || high_res < low_res || high_res % low_res != 0) {
    throw ArgumentError("high resolution must be a multiple of the low resolution");
  }
  const int factor = high_res / low_res;
  if ((factor & (factor - 1)) != 0) throw ArgumentError("resolution ratio must be a power of two");
  CorrespondingRays out;
  out.high = generate_rays(pose, high_res, bound_radius, near_epsilon);
  std::vector<Eigen::Vector2d> pts;
  for (int i = 0; i < low_res; ++i)
    for (int j = 0; j < low_res; ++j) {
      const int hi = i * factor;
      const int hj = j * factor;
      pts.emplace_back(pixel_center(hj, high_res), -pixel_center(hi, high_res));
      out.index_map.push_back(static_cast<ad::Index>(hi) * high_res + hj);
    }
  out.low = rays_through(pose, pts, bound_radius, near_epsilon);
  out.low.height = out.low.width = low_res;
  return out;
}

RayBundle RayBundle::concat(const std::vector<RayBundle>& parts) {
  RayBundle out;
  ad::Index total = 0;
  for (const auto& p : parts) total += p.size();
  out.origins.resize(total, 3);
  out.directions.resize(total, 3);
  out.near.resize(total);
  out.far.resize(total);
  ad::Index at = 0;
  for (const auto& p : parts) {
    out.origins.middleRows(at, p.size()) = p.origins;
    out.directions.middleRows(at, p.size()) = p.directions;
    out.near.segment(at, p.size()) = p.near;
    out.far.segment(at, p.size()) = p.far;
    out.hit.insert(out.hit.end(), p.hit.begin(), p.hit.end());
    at += p.size();
  }
  if (!parts.empty()) {
    out.height = parts.front().height;
    out.width = parts.front().width;
  }
  return out;
}

RayBundle RayBundle::select(const std::vector<ad::Index>& rows) const {
  RayBundle out;
  const auto n = static_cast<ad::Index>(rows.size());
  out.origins.resize(n, 3);
  out.directions.resize(n, 3);
  out.near.resize(n);
  out.far.resize(n);
  for (ad::Index i = 0; i < n; ++i) {
    const ad::Index r = rows[static_cast<std::size_t>(i)];
    out.origins.row(i) = origins.row(r);
    out.directions.row(i) = directions.row(r);
    out.near[i] = near[r];
    out.far[i] = far[r];
    out.hit.push_back(hit[static_cast<std::size_t>(r)]);
  }
  out.height = 1;
  out.width = static_cast<int>(n);
  return out;
}

}  // namespace snerf
