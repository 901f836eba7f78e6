#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pnmcts {

enum class Approach { North, East, South, West };
enum class Turn { Left, Straight, Right };

const char* to_string(Approach a);
const char* to_string(Turn t);
Approach approach_from_string(std::string_view s);
Turn turn_from_string(std::string_view s);

/// A zone inside the intersection where two movement paths cross.
/// `extent_m` is the longitudinal size of the zone along a crossing path.
struct CollisionArea {
  std::string id;
  double extent_m = 0.0;
};

/// One entry of a movement's ordered collision-area sequence.
struct AreaVisit {
  std::string area;
  double arc_m = 0.0;  // arc distance from the stop line
};

/// A (approach, turn) path through the intersection with its ordered
/// collision-area sequence. Right turns have an empty sequence in the
/// bundled layout.
struct Movement {
  Approach approach = Approach::North;
  Turn turn = Turn::Straight;
  std::vector<AreaVisit> sequence;
};

struct IntersectionLayout {
  std::string id;
  std::vector<CollisionArea> areas;
  std::vector<Movement> movements;
  int max_areas_per_movement = 3;

  /// Index into `areas`, or -1 when the id is unknown.
  int area_index(std::string_view area_id) const;
  const Movement* find_movement(Approach a, Turn t) const;
};

inline constexpr double kVehicleLengthM = 5.0;
inline constexpr double kIntraPlatoonGapM = 2.0;

/// A group of up to four vehicles traveling together on one movement,
/// scheduled as a unit.
struct Platoon {
  int id = 0;
  Approach approach = Approach::North;
  Turn turn = Turn::Straight;
  double speed_mps = 5.0;
  double distance_m = 0.0;  // head of platoon to the stop line
  int vehicle_count = 1;

  double length_m() const {
    return kVehicleLengthM * vehicle_count + kIntraPlatoonGapM * (vehicle_count - 1);
  }
};

struct AreaOccupancy {
  std::string area;
  double t_entry = 0.0;
  double t_exit = 0.0;
};

/// Throws std::invalid_argument naming the offending field when a layout
/// invariant is violated (unknown area reference, duplicate id, ...).
void validate_layout(const IntersectionLayout& layout);

/// Parses and validates a layout file (see layouts/fourway3lane.json).
IntersectionLayout load_layout(const std::filesystem::path& path);

/// The bundled four-way three-lane layout: 8 areas A-H, 12 movements,
/// right turns cross nothing. Matches layouts/fourway3lane.json.
IntersectionLayout default_fourway3lane();

/// Projects a platoon's kinematics onto occupancy intervals, one per
/// collision area on its movement, in path order:
///   t_entry = (distance + arc) / speed
///   t_exit  = (distance + arc + length + extent) / speed
std::vector<AreaOccupancy> project_occupancy(const Platoon& p, const IntersectionLayout& layout);

}  // namespace pnmcts
