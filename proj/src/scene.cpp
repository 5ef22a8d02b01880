#include "drope/scene.hpp"

#include "drope/errors.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

namespace drope
{
namespace
{

double bin_center(std::size_t index, std::size_t bins, double bound)
{
  return -bound + 2.0 * bound * static_cast<double>(index) / static_cast<double>(bins - 1);
}

void require_finite(double value, const char * what)
{
  if (!std::isfinite(value)) {
    throw std::invalid_argument(fmt::format("{} is not finite", what));
  }
}

double distance(Vec2 a, Vec2 b) { return norm(a - b); }

}  // namespace

ActionBin ActionBin::from_flat(std::size_t index)
{
  if (index >= kActionCount) {
    throw std::out_of_range(fmt::format("action index {} outside the {}-bin grid", index, kActionCount));
  }
  return {index / kYawRateBins, index % kYawRateBins};
}

ControlAction ControlAction::from_bin(ActionBin bin)
{
  if (bin.accel >= kAccelBins || bin.yaw_rate >= kYawRateBins) {
    throw std::out_of_range("action bin outside the grid");
  }
  return {bin_center(bin.accel, kAccelBins, kMaxAccel), bin_center(bin.yaw_rate, kYawRateBins, kMaxYawRate), bin};
}

AgentState kinematic_step(const AgentState & state, const ControlAction & action, double dt)
{
  require_finite(state.x, "x");
  require_finite(state.y, "y");
  require_finite(state.v, "speed");
  require_finite(action.accel, "acceleration");
  require_finite(action.yaw_rate, "yaw rate");
  require_finite(dt, "dt");
  if (dt <= 0.0) {
    throw std::invalid_argument("dt must be positive");
  }
  AgentState next;
  next.v = std::max(0.0, state.v + action.accel * dt);
  next.yaw = Angle(state.yaw.radians() + action.yaw_rate * dt);
  const double heading = next.yaw.radians();
  next.x = state.x + next.v * std::cos(heading) * dt;
  next.y = state.y + next.v * std::sin(heading) * dt;
  return next;
}

double MapSegment::arc_length() const
{
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    total += distance(points[i - 1], points[i]);
  }
  return total;
}

MapSegment make_segment(std::vector<Vec2> points, std::size_t polyline)
{
  if (points.empty()) {
    throw std::invalid_argument("map segment needs at least one point");
  }
  MapSegment seg;
  const std::size_t mid = (points.size() - 1) / 2;
  seg.anchor = points[mid];
  if (mid + 1 < points.size()) {
    const Vec2 dir = points[mid + 1] - points[mid];
    seg.heading = Angle(std::atan2(dir.y, dir.x));
  }
  const Matrix2 to_local = rotate2d(-seg.heading.radians());
  seg.local_shape.reserve(points.size());
  for (const Vec2 & p : points) {
    seg.local_shape.push_back(to_local * (p - seg.anchor));
  }
  seg.points = std::move(points);
  seg.polyline = polyline;
  return seg;
}

std::vector<MapSegment> segment_polyline(std::span<const Vec2> points, std::size_t polyline, double max_length)
{
  if (points.empty()) {
    throw std::invalid_argument("empty polyline");
  }
  if (!(max_length > 0.0)) {
    throw std::invalid_argument("segment length limit must be positive");
  }
  std::vector<MapSegment> out;
  std::vector<Vec2> current = {points[0]};
  double length = 0.0;
  // Slack so that evenly sampled roads whose spacing divides the limit cut
  // exactly on a sample instead of one ulp short of it.
  const double tol = 1e-9 * max_length;
  for (std::size_t i = 1; i < points.size(); ++i) {
    Vec2 from = current.back();
    const Vec2 to = points[i];
    double step = distance(from, to);
    while (length + step > max_length + tol) {
      if (max_length - length <= tol) {
        // Already full: close on the last sample.
        out.push_back(make_segment(current, polyline));
        current = {current.back()};
        length = 0.0;
        continue;
      }
      const double t = (max_length - length) / step;
      const Vec2 cut = from + t * (to - from);
      current.push_back(cut);
      out.push_back(make_segment(std::move(current), polyline));
      current = {cut};
      from = cut;
      step = distance(from, to);
      length = 0.0;
    }
    current.push_back(to);
    length += step;
  }
  if (out.empty() || current.size() > 1) {
    out.push_back(make_segment(std::move(current), polyline));
  }
  return out;
}

void Scene::validate() const
{
  if (agents.empty()) {
    throw std::invalid_argument("scene has no agents");
  }
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument("scene dt must be positive");
  }
  const std::size_t t_hist = agents.front().history.size();
  const std::size_t t_fut = agents.front().future.size();
  if (t_hist == 0) {
    throw std::invalid_argument("agent tracks need at least one history state");
  }
  auto check_state = [](const AgentState & s) {
    require_finite(s.x, "agent x");
    require_finite(s.y, "agent y");
    require_finite(s.v, "agent speed");
    if (s.v < 0.0) {
      throw std::invalid_argument("agent speed is negative");
    }
  };
  for (const auto & track : agents) {
    if (track.history.size() != t_hist || track.future.size() != t_fut) {
      throw std::invalid_argument(fmt::format("agent {} track length differs from the first agent", track.id));
    }
    std::ranges::for_each(track.history, check_state);
    std::ranges::for_each(track.future, check_state);
  }
  for (const auto & line : polylines) {
    if (line.points.empty()) {
      throw std::invalid_argument(fmt::format("polyline {} has no points", line.id));
    }
    for (const Vec2 & p : line.points) {
      require_finite(p.x, "polyline x");
      require_finite(p.y, "polyline y");
    }
  }
}

std::vector<MapSegment> Scene::segments(double max_length) const
{
  std::vector<MapSegment> out;
  for (std::size_t i = 0; i < polylines.size(); ++i) {
    auto pieces = segment_polyline(polylines[i].points, i, max_length);
    std::ranges::move(pieces, std::back_inserter(out));
  }
  return out;
}

namespace
{

nlohmann::json state_json(const AgentState & s)
{
  return {{"x", s.x}, {"y", s.y}, {"yaw", s.yaw.radians()}, {"v", s.v}};
}

AgentState state_from_json(const nlohmann::json & j)
{
  AgentState s;
  s.x = j.at("x").get<double>();
  s.y = j.at("y").get<double>();
  s.yaw = Angle(j.at("yaw").get<double>());
  s.v = j.at("v").get<double>();
  return s;
}

}  // namespace

nlohmann::json to_json(const Scene & scene)
{
  nlohmann::json agents = nlohmann::json::array();
  for (const auto & track : scene.agents) {
    nlohmann::json history = nlohmann::json::array();
    nlohmann::json future = nlohmann::json::array();
    for (const auto & s : track.history) history.push_back(state_json(s));
    for (const auto & s : track.future) future.push_back(state_json(s));
    agents.push_back({{"id", track.id}, {"history", history}, {"future", future}});
  }
  nlohmann::json polylines = nlohmann::json::array();
  for (const auto & line : scene.polylines) {
    nlohmann::json points = nlohmann::json::array();
    for (const Vec2 & p : line.points) points.push_back({p.x, p.y});
    polylines.push_back({{"id", line.id}, {"points", points}});
  }
  return {
    {"scene_id", scene.scene_id}, {"dt", scene.dt}, {"agents", agents}, {"map", {{"polylines", polylines}}}};
}

Scene scene_from_json(const nlohmann::json & doc)
{
  Scene scene;
  try {
    scene.scene_id = doc.at("scene_id").get<std::string>();
    scene.dt = doc.value("dt", 0.5);
    for (const auto & a : doc.at("agents")) {
      AgentTrack track;
      track.id = a.at("id").get<std::int64_t>();
      for (const auto & s : a.at("history")) track.history.push_back(state_from_json(s));
      if (a.contains("future")) {
        for (const auto & s : a.at("future")) track.future.push_back(state_from_json(s));
      }
      scene.agents.push_back(std::move(track));
    }
    if (doc.contains("map")) {
      for (const auto & l : doc.at("map").at("polylines")) {
        Polyline line;
        line.id = l.at("id").get<std::int64_t>();
        for (const auto & p : l.at("points")) {
          if (!p.is_array() || p.size() != 2) {
            throw std::invalid_argument("polyline points are [x, y] pairs");
          }
          line.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
        scene.polylines.push_back(std::move(line));
      }
    }
  } catch (const nlohmann::json::exception & e) {
    throw std::invalid_argument(fmt::format("malformed scene: {}", e.what()));
  }
  scene.validate();
  return scene;
}

Scene load_scene(const std::filesystem::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw IoError(fmt::format("cannot open scene file {}", path.string()));
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::parse_error & e) {
    throw std::invalid_argument(fmt::format("{}: {}", path.string(), e.what()));
  }
  return scene_from_json(doc);
}

void save_scene(const Scene & scene, const std::filesystem::path & path)
{
  std::ofstream out(path);
  if (!out) {
    throw IoError(fmt::format("cannot write scene file {}", path.string()));
  }
  out << to_json(scene).dump(2) << '\n';
  if (!out) {
    throw IoError(fmt::format("write to {} failed", path.string()));
  }
}

Scene translated(const Scene & scene, Vec2 offset)
{
  Scene out = scene;
  for (auto & track : out.agents) {
    for (auto * states : {&track.history, &track.future}) {
      for (auto & s : *states) {
        s.x += offset.x;
        s.y += offset.y;
      }
    }
  }
  for (auto & line : out.polylines) {
    for (Vec2 & p : line.points) p = p + offset;
  }
  return out;
}

Scene rotated(const Scene & scene, double angle)
{
  const Matrix2 rot = rotate2d(angle);
  Scene out = scene;
  for (auto & track : out.agents) {
    for (auto * states : {&track.history, &track.future}) {
      for (auto & s : *states) {
        const Vec2 p = rot * s.position();
        s.x = p.x;
        s.y = p.y;
        s.yaw = Angle(s.yaw.radians() + angle);
      }
    }
  }
  for (auto & line : out.polylines) {
    for (Vec2 & p : line.points) p = rot * p;
  }
  return out;
}

namespace
{

// Point and tangent heading at arc length s along the lane `offset` meters to
// the left of the reference line.
std::pair<Vec2, double> lane_point(const SceneGenConfig & config, double s, double offset)
{
  if (config.road == RoadShape::kStraight) {
    return {{s, offset}, 0.0};
  }
  const double radius = 1.0 / config.curvature;
  const double phi = s / radius;
  const double r = radius - offset;
  return {{r * std::sin(phi), radius - r * std::cos(phi)}, phi};
}

double lane_offset(const SceneGenConfig & config, std::size_t lane)
{
  return (static_cast<double>(lane) - 0.5 * static_cast<double>(config.lanes - 1)) * config.lane_width;
}

}  // namespace

Scene generate_scene(const SceneGenConfig & config, std::uint64_t seed)
{
  if (config.lanes == 0 || config.min_agents == 0 || config.min_agents > config.max_agents ||
      config.history_steps == 0 || !(config.dt > 0.0) || !(config.point_spacing > 0.0) ||
      !(config.road_length > 0.0) || config.min_speed < 0.0 || config.max_speed < config.min_speed) {
    throw ConfigurationError("invalid scene generator configuration");
  }
  if (config.road == RoadShape::kArc && !(config.curvature > 0.0)) {
    throw ConfigurationError("arc roads need a positive curvature");
  }
  std::mt19937_64 rng(seed);
  Scene scene;
  scene.scene_id = fmt::format("synthetic-{}-{}", config.road == RoadShape::kStraight ? "straight" : "arc", seed);
  scene.dt = config.dt;

  const auto samples = static_cast<std::size_t>(std::floor(config.road_length / config.point_spacing));
  for (std::size_t lane = 0; lane < config.lanes; ++lane) {
    Polyline line;
    line.id = static_cast<std::int64_t>(lane);
    for (std::size_t k = 0; k <= samples; ++k) {
      line.points.push_back(
        lane_point(config, static_cast<double>(k) * config.point_spacing, lane_offset(config, lane)).first);
    }
    scene.polylines.push_back(std::move(line));
  }
  if (config.stop_sign) {
    const double edge = lane_offset(config, config.lanes - 1) + config.lane_width;
    scene.polylines.push_back({static_cast<std::int64_t>(config.lanes), {lane_point(config, 0.8 * config.road_length, edge).first}});
  }

  std::uniform_int_distribution<std::size_t> count(config.min_agents, config.max_agents);
  std::uniform_int_distribution<std::size_t> lane_pick(0, config.lanes - 1);
  std::uniform_real_distribution<double> start(0.05 * config.road_length, 0.45 * config.road_length);
  std::uniform_real_distribution<double> speed(config.min_speed, config.max_speed);
  std::uniform_real_distribution<double> accel(-0.5, 0.5);
  const std::size_t n = count(rng);
  for (std::size_t a = 0; a < n; ++a) {
    const double offset = lane_offset(config, lane_pick(rng));
    const auto [p, heading] = lane_point(config, start(rng), offset);
    AgentState s{p.x, p.y, Angle(heading), speed(rng)};
    ControlAction u;
    if (!config.constant_velocity) {
      u.accel = accel(rng);
      if (config.road == RoadShape::kArc) {
        u.yaw_rate = std::clamp(s.v * config.curvature, -kMaxYawRate, kMaxYawRate);
      }
    }
    AgentTrack track;
    track.id = static_cast<std::int64_t>(a);
    track.history.push_back(s);
    for (std::size_t k = 1; k < config.history_steps + config.future_steps; ++k) {
      s = kinematic_step(s, u, config.dt);
      (k < config.history_steps ? track.history : track.future).push_back(s);
    }
    scene.agents.push_back(std::move(track));
  }
  scene.validate();
  return scene;
}

}  // namespace drope
