#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "pnmcts/board.hpp"
#include "pnmcts/geometry.hpp"

namespace pnmcts {

/// A set of approaching platoons at one intersection, optionally on top of
/// a residual board still being executed.
struct Scenario {
  std::vector<Platoon> platoons;
  std::optional<Board> residual;
};

/// Initial board for a scenario: projected platoons, overlaid on the
/// residual when present.
Board scenario_board(const Scenario& s, std::shared_ptr<const IntersectionLayout> layout);

std::string board_to_json(const Board& b);
Board board_from_json(const std::string& text, std::shared_ptr<const IntersectionLayout> layout);

/// Scenario-set files: {"layout": id, "scenarios": [{platoons, residual?}]}.
void write_scenarios(const std::filesystem::path& path, const std::vector<Scenario>& scenarios,
                     const IntersectionLayout& layout);
std::vector<Scenario> read_scenarios(const std::filesystem::path& path,
                                     std::shared_ptr<const IntersectionLayout> layout);

/// Single-scenario file, as written by hand or by the demo bundle.
Scenario read_scenario(const std::filesystem::path& path,
                       std::shared_ptr<const IntersectionLayout> layout);

}  // namespace pnmcts
