#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pnmcts/geometry.hpp"
#include "pnmcts/types.hpp"

namespace pnmcts {

enum class RowKind : std::uint8_t { Empty, New, Residual };

/// Occupancy interval of one platoon in one collision area, seconds from
/// the board's reference instant.
struct Interval {
  double entry = 0.0;
  double exit = 0.0;
};

/// Delay one `new` row by `moves` * 0.1 s. Rows are 0-based.
struct Action {
  int row = 0;
  int moves = 1;
};

struct RewardParams {
  double t_max_s = 30.0;        // crossing-time ceiling
  int s_max = 20;               // step ceiling
  double alpha = 0.5;           // crossing-time vs step-count weight
  double fail_step_reward = -1e-3;
  double fail_time_reward = -1.0;
};

enum class Status : std::uint8_t { Solved, FailSteps, FailTime };

const char* to_string(Status s);

struct EpisodeOutcome {
  Status status = Status::Solved;
  double t_cross_s = 0.0;  // last exit over all present rows
  int steps = 0;
  double reward = 0.0;

  bool solved() const { return status == Status::Solved; }
};

/// The schedulable game state: a fixed 16-row grid of per-(platoon, area)
/// occupancy intervals. Absent cells are a real variant, not a sentinel.
/// Boards are immutable values from the scheduler's point of view: `apply`
/// returns a shifted copy.
class Board {
 public:
  static constexpr int kMaxRows = 16;
  static constexpr int kMaxMoves = 20;
  static constexpr int kActionCount = kMaxRows * kMaxMoves;  // 320
  static constexpr double kMoveSeconds = 0.1;

  Board() = default;
  explicit Board(std::shared_ptr<const IntersectionLayout> layout);

  const IntersectionLayout& layout() const { return *layout_; }
  const std::shared_ptr<const IntersectionLayout>& layout_ptr() const { return layout_; }
  int area_count() const { return area_count_; }
  int step_count() const { return step_count_; }
  void set_step_count(int n) { step_count_ = n; }

  RowKind kind(int row) const { return kinds_[row]; }
  void set_kind(int row, RowKind k) { kinds_[row] = k; }

  const std::optional<Interval>& cell(int row, int area) const {
    return cells_[row * area_count_ + area];
  }
  void set_cell(int row, int area, std::optional<Interval> v) {
    cells_[row * area_count_ + area] = v;
  }

  /// Accumulated delay applied to the row since it was laid down.
  double row_delay(int row) const { return delays_[row]; }
  void set_row_delay(int row, double d) { delays_[row] = d; }

  const std::optional<Platoon>& row_platoon(int row) const { return platoons_[row]; }
  void set_row_platoon(int row, std::optional<Platoon> p) { platoons_[row] = std::move(p); }

  bool row_empty(int row) const;
  bool row_occupied(int row) const { return kinds_[row] != RowKind::Empty; }
  int occupied_rows() const;

  /// Largest t_exit in the row; -inf style nullopt when the row has no cells.
  std::optional<double> row_max_exit(int row) const;
  /// Smallest t_entry in the row.
  std::optional<double> row_min_entry(int row) const;
  /// Largest t_exit over the whole board (0 when empty).
  double max_exit() const;

  /// Shift every present cell of the row by dt seconds (both endpoints).
  void shift_row(int row, double dt);

  friend bool operator==(const Board& a, const Board& b);

 private:
  std::shared_ptr<const IntersectionLayout> layout_;
  int area_count_ = 0;
  std::vector<std::optional<Interval>> cells_;
  std::array<RowKind, kMaxRows> kinds_{};
  std::array<double, kMaxRows> delays_{};
  std::array<std::optional<Platoon>, kMaxRows> platoons_{};
  int step_count_ = 0;
};

struct AreaConflict {
  std::string area;
  int row_i = 0;  // row_i < row_j; pairs reported once
  int row_j = 0;

  friend bool operator==(const AreaConflict&, const AreaConflict&) = default;
};

inline int action_id(Action a) { return a.row * Board::kMaxMoves + (a.moves - 1); }
inline Action action_from_id(int id) {
  return Action{id / Board::kMaxMoves, id % Board::kMaxMoves + 1};
}

/// Lays out one `new` row per platoon (in order, from row 0) via
/// project_occupancy; remaining rows empty; step count 0.
/// Throws when more than kMaxRows/2 platoons are given.
Board from_scenario(const std::vector<Platoon>& platoons,
                    std::shared_ptr<const IntersectionLayout> layout);

/// Freezes the occupied rows of `resolved` as residual rows and appends the
/// fresh board's new rows below them. Conflicts between the two groups are
/// expected: they are what the scheduler must resolve. Throws when the
/// combined occupied rows exceed capacity or `resolved` has conflicts.
Board overlay(const Board& resolved, const Board& fresh);

/// Every pair of rows whose intervals at the same area overlap with positive
/// measure (touching endpoints do not conflict). Sorted by (area, i, j).
std::vector<AreaConflict> conflicts(const Board& b);

/// Flat kMaxRows x kMaxMoves mask: action (row, a) is legal iff the row is a
/// non-empty `new` row and the delayed row still exits by t_max.
MaskX legal_actions(const Board& b, const RewardParams& params);

/// Applies a legal delay action: every present cell of the target row shifts
/// by +0.1*moves on both endpoints; step count increments. Throws on illegal
/// actions (residual/empty row, out-of-range move, t_max violation).
Board apply(const Board& b, Action act, const RewardParams& params = {});

/// Terminal test. Precedence: any exit beyond t_max -> FailTime; otherwise
/// conflict-free -> Solved with reward
///   alpha*(1 - t_cross/t_max) + (1-alpha)*(1 - steps/s_max);
/// otherwise step budget exhausted -> FailSteps; otherwise not terminal.
std::optional<EpisodeOutcome> evaluate(const Board& b, const RewardParams& params);

/// Failure outcome for a non-terminal board with no legal action left.
EpisodeOutcome dead_end_outcome(const Board& b, const RewardParams& params);

/// Fixed-length feature vector: per cell (entry/t_max, exit/t_max), absent
/// cells (-1,-1); then one kind flag per row (0 empty, 0.5 new, 1 residual).
VecX encode(const Board& b, const RewardParams& params);

/// Length of encode() for a layout: 2*kMaxRows*areas + kMaxRows.
int encoded_size(const IntersectionLayout& layout);

/// The part of a schedule still ahead after `elapsed_s` seconds of execution:
/// every interval shifts earlier by that amount, fully elapsed intervals are
/// dropped, partially elapsed ones truncate at zero, emptied rows clear.
Board clip_to_future(const Board& b, double elapsed_s);

/// Canonical hash of the 0.1 s-quantized grid plus row kinds.
std::uint64_t fingerprint(const Board& b);

/// Human-readable grid dump for debugging.
std::string to_grid_string(const Board& b);

}  // namespace pnmcts
