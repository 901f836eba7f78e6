#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pnmcts/board.hpp"
#include "pnmcts/search.hpp"
#include "pnmcts/training.hpp"

namespace pnmcts {

enum class ControllerKind { FixedTime, Fifo, Agent };

const char* to_string(ControllerKind k);
ControllerKind controller_from_string(const std::string& s);

/// Pre-set signal schedule: phases cycle in order, each phase's first
/// `lost_time_s` seconds discharge nothing.
/// Phase map: 0 N/S straight+right, 1 N/S left, 2 E/W straight+right, 3 E/W left.
struct FixedTimePlan {
  std::vector<double> phase_durations_s{15.0, 15.0, 15.0, 15.0};
  double lost_time_s = 3.0;
  double saturation_headway_s = 2.0;
  // per-intersection cycle offset spread; uncoordinated controllers
  double offset_step_s = 25.0;

  double cycle_s() const;
  bool green(double t, Approach approach, Turn turn) const;
  double offset_for(int node_index) const;
};

struct ExperimentSpec {
  std::string id = "exp";
  int grid = 3;  // 1 or 3 intersections per side
  double demand_vph = 600.0;  // vehicles/h per entrance road
  double horizon_s = 600.0;
  double warmup_s = 60.0;
  std::uint64_t seed = 1;
  std::vector<ControllerKind> controllers;  // grid*grid entries, row-major
  double decision_interval_s = 2.0;
  double link_length_m = 70.0;
  double link_speed_mps = 10.0;
  double crossing_speed_mps = 5.0;  // platoon speed through the box
  double box_length_m = 24.0;
  FixedTimePlan plan;
};

/// Controller deployment for the grid sweep: scenario 1 is all fixed-time,
/// later scenarios replace fixed-time with agents center-outward, scenario 6
/// is all agents (counts 0, 1, 3, 5, 7, 9 on a 3x3 grid).
std::vector<ControllerKind> sweep_controllers(int grid, int scenario);

std::vector<ExperimentSpec> load_experiments(const std::filesystem::path& path);

struct VehicleRecord {
  int id = 0;
  double entry_time_s = 0.0;
  std::optional<double> exit_time_s;
  std::vector<int> route_links;
};

struct QueuedVehicle {
  int id = 0;
  Approach approach = Approach::North;
  Turn turn = Turn::Straight;
  double speed_mps = 5.0;
  double distance_m = 0.0;
  double gap_to_prev_s = 0.0;  // headway behind the previous queue entry
};

struct FormedPlatoon {
  Platoon platoon;  // kinematics read from the head vehicle
  std::vector<int> vehicle_ids;
};

/// Groups consecutive same-movement vehicles within the headway into platoons
/// of at most max_size.
std::vector<FormedPlatoon> form_platoons(std::span<const QueuedVehicle> queue, int max_size = 4,
                                         double max_headway_s = 2.0);

struct LinkTime {
  std::string link;
  int from_node = -1;  // -1: boundary
  int to_node = -1;
  double mean_travel_s = 0.0;
  int count = 0;
};

struct ExperimentResult {
  std::string spec_id;
  std::uint64_t seed = 0;
  std::optional<double> att_s;  // absent when nothing exited
  int tt_veh = 0;
  long safety_violations = 0;
  int injected = 0;
  int exited = 0;
  long solver_calls = 0;
  long solver_fallbacks = 0;  // schedule solves that fell back to FIFO
  std::vector<LinkTime> per_link;
};

/// Deterministic 0.1 s fixed-tick point-queue world: links with finite
/// storage (a stopped vehicle occupies 7 m), per-movement lane queues,
/// Poisson demand at every entrance, uniform random turns, and one
/// controller per intersection. Fifo and Agent controllers commit
/// occupancy-interval schedules over the shared intersection layout;
/// committed entry times are followed exactly and re-enter later solves as a
/// residual board clipped to the future.
class NetworkWorld {
 public:
  NetworkWorld(const ExperimentSpec& spec, std::shared_ptr<const IntersectionLayout> layout,
               const NetParams* net, const SearchConfig& search_cfg, const RewardParams& params);
  ~NetworkWorld();
  NetworkWorld(const NetworkWorld&) = delete;
  NetworkWorld& operator=(const NetworkWorld&) = delete;

  void step();  // advance one 0.1 s tick
  void run_until(double t_s);

  double clock_s() const;
  int injected() const;
  int exited() const;
  /// Vehicles currently held anywhere in the world (conservation check).
  int in_network() const;
  long safety_violations() const;
  const std::vector<VehicleRecord>& records() const;

  /// Test hook: spawn one vehicle on the entrance at `side` of edge
  /// intersection `index`, following `turns` at successive intersections.
  int inject_vehicle(Approach side, int index, const std::vector<Turn>& turns);

  ExperimentResult result() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ExperimentResult run_experiment(const ExperimentSpec& spec,
                                std::shared_ptr<const IntersectionLayout> layout,
                                const NetParams* net, const SearchConfig& search_cfg,
                                const RewardParams& params);

}  // namespace pnmcts
