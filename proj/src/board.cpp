#include "pnmcts/board.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace pnmcts {

namespace {

// Slack for t_max comparisons; true boundaries are multiples of 0.1 s so a
// nanosecond of slack only absorbs float noise.
constexpr double kTimeEps = 1e-9;

}  // namespace

const char* to_string(Status s) {
  switch (s) {
    case Status::Solved: return "solved";
    case Status::FailSteps: return "fail_steps";
    case Status::FailTime: return "fail_time";
  }
  return "?";
}

Board::Board(std::shared_ptr<const IntersectionLayout> layout)
    : layout_(std::move(layout)), area_count_(static_cast<int>(layout_->areas.size())) {
  cells_.assign(static_cast<std::size_t>(kMaxRows) * area_count_, std::nullopt);
  kinds_.fill(RowKind::Empty);
  delays_.fill(0.0);
}

bool Board::row_empty(int row) const {
  for (int a = 0; a < area_count_; ++a) {
    if (cell(row, a)) return false;
  }
  return true;
}

int Board::occupied_rows() const {
  int n = 0;
  for (int r = 0; r < kMaxRows; ++r) {
    if (row_occupied(r)) ++n;
  }
  return n;
}

std::optional<double> Board::row_max_exit(int row) const {
  std::optional<double> out;
  for (int a = 0; a < area_count_; ++a) {
    if (const auto& c = cell(row, a)) {
      if (!out || c->exit > *out) out = c->exit;
    }
  }
  return out;
}

std::optional<double> Board::row_min_entry(int row) const {
  std::optional<double> out;
  for (int a = 0; a < area_count_; ++a) {
    if (const auto& c = cell(row, a)) {
      if (!out || c->entry < *out) out = c->entry;
    }
  }
  return out;
}

double Board::max_exit() const {
  double out = 0.0;
  for (int r = 0; r < kMaxRows; ++r) {
    if (auto e = row_max_exit(r)) out = std::max(out, *e);
  }
  return out;
}

void Board::shift_row(int row, double dt) {
  for (int a = 0; a < area_count_; ++a) {
    if (auto& c = cells_[row * area_count_ + a]) {
      c->entry += dt;
      c->exit += dt;
    }
  }
  delays_[row] += dt;
}

bool operator==(const Board& a, const Board& b) {
  if (a.area_count_ != b.area_count_ || a.step_count_ != b.step_count_ || a.kinds_ != b.kinds_)
    return false;
  for (std::size_t i = 0; i < a.cells_.size(); ++i) {
    const auto& x = a.cells_[i];
    const auto& y = b.cells_[i];
    if (x.has_value() != y.has_value()) return false;
    if (x && (x->entry != y->entry || x->exit != y->exit)) return false;
  }
  return true;
}

Board from_scenario(const std::vector<Platoon>& platoons,
                    std::shared_ptr<const IntersectionLayout> layout) {
  constexpr int kMaxPlatoons = Board::kMaxRows / 2;
  if (static_cast<int>(platoons.size()) > kMaxPlatoons) {
    throw std::invalid_argument("from_scenario: " + std::to_string(platoons.size()) +
                                " platoons exceed the " + std::to_string(kMaxPlatoons) +
                                "-platoon limit");
  }
  Board b(std::move(layout));
  for (std::size_t i = 0; i < platoons.size(); ++i) {
    const int row = static_cast<int>(i);
    b.set_kind(row, RowKind::New);
    b.set_row_platoon(row, platoons[i]);
    for (const AreaOccupancy& occ : project_occupancy(platoons[i], b.layout())) {
      const int a = b.layout().area_index(occ.area);
      b.set_cell(row, a, Interval{occ.t_entry, occ.t_exit});
    }
  }
  return b;
}

Board overlay(const Board& resolved, const Board& fresh) {
  if (resolved.area_count() != fresh.area_count() ||
      resolved.layout().id != fresh.layout().id) {
    throw std::invalid_argument("overlay: boards use different layouts");
  }
  if (!conflicts(resolved).empty()) {
    throw std::invalid_argument("overlay: resolved board still has conflicts");
  }
  const int total = resolved.occupied_rows() + fresh.occupied_rows();
  if (total > Board::kMaxRows) {
    throw std::invalid_argument("overlay: " + std::to_string(total) + " occupied rows exceed " +
                                std::to_string(Board::kMaxRows));
  }
  Board out(fresh.layout_ptr());
  int row = 0;
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (!resolved.row_occupied(r)) continue;
    out.set_kind(row, RowKind::Residual);
    out.set_row_platoon(row, resolved.row_platoon(r));
    for (int a = 0; a < out.area_count(); ++a) out.set_cell(row, a, resolved.cell(r, a));
    ++row;
  }
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (!fresh.row_occupied(r)) continue;
    out.set_kind(row, RowKind::New);
    out.set_row_platoon(row, fresh.row_platoon(r));
    for (int a = 0; a < out.area_count(); ++a) out.set_cell(row, a, fresh.cell(r, a));
    ++row;
  }
  return out;
}

std::vector<AreaConflict> conflicts(const Board& b) {
  // positive-measure overlap; a nanosecond of slack keeps exactly-touching
  // schedules touching under float rebasing
  std::vector<AreaConflict> out;
  for (int a = 0; a < b.area_count(); ++a) {
    for (int i = 0; i < Board::kMaxRows; ++i) {
      const auto& ci = b.cell(i, a);
      if (!ci) continue;
      for (int j = i + 1; j < Board::kMaxRows; ++j) {
        const auto& cj = b.cell(j, a);
        if (!cj) continue;
        if (ci->entry < cj->exit - kTimeEps && cj->entry < ci->exit - kTimeEps) {
          out.push_back({b.layout().areas[a].id, i, j});
        }
      }
    }
  }
  return out;
}

MaskX legal_actions(const Board& b, const RewardParams& params) {
  MaskX mask = MaskX::Constant(Board::kActionCount, false);
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (b.kind(r) != RowKind::New) continue;
    const auto max_exit = b.row_max_exit(r);
    if (!max_exit) continue;  // empty trajectory (right turn): nothing to schedule
    for (int a = 1; a <= Board::kMaxMoves; ++a) {
      if (*max_exit + Board::kMoveSeconds * a <= params.t_max_s + kTimeEps) {
        mask[action_id({r, a})] = true;
      }
    }
  }
  return mask;
}

Board apply(const Board& b, Action act, const RewardParams& params) {
  if (act.row < 0 || act.row >= Board::kMaxRows || act.moves < 1 ||
      act.moves > Board::kMaxMoves) {
    throw std::invalid_argument("apply: action out of range");
  }
  if (b.kind(act.row) == RowKind::Residual) {
    throw std::invalid_argument("apply: row " + std::to_string(act.row) +
                                " is residual and cannot be rescheduled");
  }
  if (b.kind(act.row) == RowKind::Empty || b.row_empty(act.row)) {
    throw std::invalid_argument("apply: row " + std::to_string(act.row) + " has no occupancy");
  }
  if (*b.row_max_exit(act.row) + Board::kMoveSeconds * act.moves > params.t_max_s + kTimeEps) {
    throw std::invalid_argument("apply: delay would push row " + std::to_string(act.row) +
                                " past t_max");
  }
  Board out = b;
  out.shift_row(act.row, Board::kMoveSeconds * act.moves);
  out.set_step_count(b.step_count() + 1);
  return out;
}

std::optional<EpisodeOutcome> evaluate(const Board& b, const RewardParams& params) {
  const double t_cross = b.max_exit();
  if (t_cross > params.t_max_s + kTimeEps) {
    return EpisodeOutcome{Status::FailTime, t_cross, b.step_count(), params.fail_time_reward};
  }
  if (conflicts(b).empty()) {
    const double reward = params.alpha * (1.0 - t_cross / params.t_max_s) +
                          (1.0 - params.alpha) * (1.0 - double(b.step_count()) / params.s_max);
    return EpisodeOutcome{Status::Solved, t_cross, b.step_count(), reward};
  }
  if (b.step_count() > params.s_max) {
    return EpisodeOutcome{Status::FailSteps, t_cross, b.step_count(), params.fail_step_reward};
  }
  return std::nullopt;
}

EpisodeOutcome dead_end_outcome(const Board& b, const RewardParams& params) {
  const double t_cross = b.max_exit();
  if (t_cross > params.t_max_s + kTimeEps) {
    return {Status::FailTime, t_cross, b.step_count(), params.fail_time_reward};
  }
  return {Status::FailSteps, t_cross, b.step_count(), params.fail_step_reward};
}

VecX encode(const Board& b, const RewardParams& params) {
  const int m = b.area_count();
  VecX out(encoded_size(b.layout()));
  int k = 0;
  for (int r = 0; r < Board::kMaxRows; ++r) {
    for (int a = 0; a < m; ++a) {
      if (const auto& c = b.cell(r, a)) {
        out[k++] = c->entry / params.t_max_s;
        out[k++] = c->exit / params.t_max_s;
      } else {
        out[k++] = -1.0;
        out[k++] = -1.0;
      }
    }
  }
  for (int r = 0; r < Board::kMaxRows; ++r) {
    switch (b.kind(r)) {
      case RowKind::Empty: out[k++] = 0.0; break;
      case RowKind::New: out[k++] = 0.5; break;
      case RowKind::Residual: out[k++] = 1.0; break;
    }
  }
  return out;
}

int encoded_size(const IntersectionLayout& layout) {
  return 2 * Board::kMaxRows * static_cast<int>(layout.areas.size()) + Board::kMaxRows;
}

Board clip_to_future(const Board& b, double elapsed_s) {
  Board out = b;
  for (int r = 0; r < Board::kMaxRows; ++r) {
    bool any = false;
    for (int a = 0; a < b.area_count(); ++a) {
      if (const auto& c = b.cell(r, a)) {
        if (c->exit - elapsed_s <= kTimeEps) {
          out.set_cell(r, a, std::nullopt);
        } else {
          out.set_cell(r, a,
                       Interval{std::max(0.0, c->entry - elapsed_s), c->exit - elapsed_s});
          any = true;
        }
      }
    }
    if (!any && out.row_occupied(r)) {
      out.set_kind(r, RowKind::Empty);
      out.set_row_platoon(r, std::nullopt);
      out.set_row_delay(r, 0.0);
    }
  }
  return out;
}

std::uint64_t fingerprint(const Board& b) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a 64
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  for (int r = 0; r < Board::kMaxRows; ++r) {
    mix(static_cast<std::uint64_t>(b.kind(r)));
    for (int a = 0; a < b.area_count(); ++a) {
      if (const auto& c = b.cell(r, a)) {
        mix(static_cast<std::uint64_t>(std::llround(c->entry * 10.0)) * 2 + 1);
        mix(static_cast<std::uint64_t>(std::llround(c->exit * 10.0)));
      } else {
        mix(0);
      }
    }
  }
  return h;
}

std::string to_grid_string(const Board& b) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "row kind      ";
  for (int a = 0; a < b.area_count(); ++a) {
    os << std::setw(12) << b.layout().areas[a].id;
  }
  os << '\n';
  for (int r = 0; r < Board::kMaxRows; ++r) {
    if (!b.row_occupied(r)) continue;
    os << std::setw(3) << r << ' ';
    switch (b.kind(r)) {
      case RowKind::Empty: os << "empty   "; break;
      case RowKind::New: os << "new     "; break;
      case RowKind::Residual: os << "residual"; break;
    }
    os << "  ";
    for (int a = 0; a < b.area_count(); ++a) {
      if (const auto& c = b.cell(r, a)) {
        std::ostringstream cell;
        cell << std::fixed << std::setprecision(1) << c->entry << '-' << c->exit;
        os << std::setw(12) << cell.str();
      } else {
        os << std::setw(12) << '.';
      }
    }
    os << '\n';
  }
  os << "steps: " << b.step_count();
  return os.str();
}

}  // namespace pnmcts
