#ifndef DROPE__SCENE_HPP_
#define DROPE__SCENE_HPP_

#include "drope/rotary.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace drope
{

struct AgentState
{
  double x{0.0};
  double y{0.0};
  Angle yaw{};
  double v{0.0};  // m/s, never negative

  Vec2 position() const noexcept { return {x, y}; }
  friend bool operator==(const AgentState &, const AgentState &) = default;
};

// Bounds of the control grid.
inline constexpr double kMaxAccel = 4.0;     // m/s^2
inline constexpr double kMaxYawRate = 1.0;   // rad/s
inline constexpr std::size_t kAccelBins = 9;
inline constexpr std::size_t kYawRateBins = 9;
inline constexpr std::size_t kActionCount = kAccelBins * kYawRateBins;

struct ActionBin
{
  std::size_t accel{0};
  std::size_t yaw_rate{0};

  std::size_t flat() const noexcept { return accel * kYawRateBins + yaw_rate; }
  static ActionBin from_flat(std::size_t index);  // throws std::out_of_range
  friend bool operator==(const ActionBin &, const ActionBin &) = default;
};

// Bin centers are evenly spaced and include both bounds, so (4, 4) is exactly
// zero acceleration and zero yaw rate.
inline constexpr ActionBin kZeroActionBin{kAccelBins / 2, kYawRateBins / 2};

struct ControlAction
{
  double accel{0.0};     // m/s^2
  double yaw_rate{0.0};  // rad/s
  std::optional<ActionBin> bin;

  static ControlAction from_bin(ActionBin bin);
  friend bool operator==(const ControlAction &, const ControlAction &) = default;
};

/// Semi-implicit unicycle: speed and yaw are updated first, then the position
/// advances along the new heading.
/// Throws std::invalid_argument for non-finite input or dt <= 0. The grid
/// bounds constrain what policies can emit, not the integrator itself.
AgentState kinematic_step(const AgentState & state, const ControlAction & action, double dt);

inline constexpr double kMaxSegmentLength = 25.0;  // m

/// A piece of map polyline re-expressed around its anchor point.
struct MapSegment
{
  std::vector<Vec2> points;
  Vec2 anchor;
  Angle heading;
  std::vector<Vec2> local_shape;  // R(-heading) * (p - anchor)
  std::size_t polyline{0};        // index of the source polyline in the scene

  double arc_length() const;
};

/// Anchor is the middle point (index (n-1)/2), heading points at the next
/// point; a lone point gets heading 0.
MapSegment make_segment(std::vector<Vec2> points, std::size_t polyline = 0);

/// Cuts a polyline into pieces no longer than `max_length`, inserting
/// interpolated points at the cuts.
std::vector<MapSegment> segment_polyline(
  std::span<const Vec2> points, std::size_t polyline = 0, double max_length = kMaxSegmentLength);

struct AgentTrack
{
  std::int64_t id{0};
  std::vector<AgentState> history;
  std::vector<AgentState> future;  // ground-truth continuation, may be empty
};

struct Polyline
{
  std::int64_t id{0};
  std::vector<Vec2> points;
};

struct Scene
{
  std::string scene_id;
  double dt{0.5};
  std::vector<AgentTrack> agents;
  std::vector<Polyline> polylines;

  std::size_t history_steps() const { return agents.empty() ? 0 : agents.front().history.size(); }
  std::size_t future_steps() const { return agents.empty() ? 0 : agents.front().future.size(); }

  // Throws std::invalid_argument: no agents, ragged tracks, empty histories,
  // empty polylines, dt <= 0, negative speeds or non-finite numbers.
  void validate() const;
  std::vector<MapSegment> segments(double max_length = kMaxSegmentLength) const;
};

nlohmann::json to_json(const Scene & scene);
Scene scene_from_json(const nlohmann::json & doc);  // throws std::invalid_argument
Scene load_scene(const std::filesystem::path & path);  // IoError if unreadable
void save_scene(const Scene & scene, const std::filesystem::path & path);

/// Every position (agents and map) moved by `offset`.
Scene translated(const Scene & scene, Vec2 offset);
/// Every position rotated about the origin and every heading advanced by `angle`.
Scene rotated(const Scene & scene, double angle);

enum class RoadShape { kStraight, kArc };

struct SceneGenConfig
{
  RoadShape road{RoadShape::kStraight};
  double curvature{0.01};  // 1/m, arcs only
  double road_length{120.0};
  std::size_t lanes{2};
  double lane_width{3.5};
  double point_spacing{0.5};
  std::size_t min_agents{2};
  std::size_t max_agents{8};
  std::size_t history_steps{4};
  std::size_t future_steps{16};
  double dt{0.5};
  double min_speed{3.0};
  double max_speed{12.0};
  bool constant_velocity{false};  // every agent drives straight at fixed speed
  bool stop_sign{true};
};

/// Seeded synthetic scene. Agent motion is produced by kinematic_step with a
/// per-agent constant control, so histories and futures are exact replays.
Scene generate_scene(const SceneGenConfig & config, std::uint64_t seed);

}  // namespace drope

#endif  // DROPE__SCENE_HPP_
