#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vitcn/errors.hpp"
#include "vitcn/rng.hpp"

namespace vitcn {

inline constexpr int64_t kPanelSide = 96;
inline constexpr int64_t kPanelPixels = kPanelSide * kPanelSide;

// Grayscale panel, 0 = black, 255 = white; model input is value / 255.
using Raster = std::array<uint8_t, kPanelPixels>;

enum class PuzzleConfig : uint8_t { Center = 0, Grid2x2 = 1 };

std::string puzzle_config_name(PuzzleConfig c);
PuzzleConfig puzzle_config_from_name(const std::string& name); // "center" | "grid2"

// Ordered by vertex count so progression rules have a natural step.
enum class ShapeKind : uint8_t { Triangle = 0, Square = 1, Pentagon = 2, Hexagon = 3, Circle = 4 };

enum class Attribute : uint8_t { Shape = 0, Size = 1, Color = 2 };

enum class RuleKind : uint8_t { Constant = 0, Progression = 1, DistributeThree = 2 };

struct AttributeRule {
    RuleKind kind = RuleKind::Constant;
    int8_t step = 0; // +/-1 or +/-2, progression only
    bool operator==(const AttributeRule&) const = default;
};

// One rule per attribute, applied row-wise across the 3x3 matrix.
struct RuleSpec {
    AttributeRule shape, size, color;
    const AttributeRule& by(Attribute a) const;
    bool operator==(const RuleSpec&) const = default;
};

// Attribute value ranges (inclusive). Shapes use their ordinal.
int attribute_lo(Attribute a);
int attribute_hi(Attribute a);

struct Entity {
    ShapeKind shape = ShapeKind::Circle;
    uint8_t size_level = 1;  // radius = 8*level px (Center), 4*level px (grid cells)
    uint8_t color_level = 1; // fill byte = 255 - 51*level, darker = higher
    uint8_t slot = 0;        // grid cell, row-major; 0 for Center
    bool operator==(const Entity&) const = default;

    int value(Attribute a) const;
    void set_value(Attribute a, int v);
};

struct PanelSpec {
    PuzzleConfig config = PuzzleConfig::Center;
    std::vector<Entity> entities;
    bool operator==(const PanelSpec&) const = default;

    void validate() const; // levels in range, slots valid and distinct, radii fit
};

struct RpmProblem {
    PuzzleConfig config = PuzzleConfig::Center;
    uint64_t seed = 0;
    uint8_t answer_index = 0;
    RuleSpec rules;
    std::array<PanelSpec, 9> matrix;     // row-major, cell 8 is the hidden answer
    std::array<PanelSpec, 8> candidates; // candidates[answer_index] == matrix[8]
    std::array<Raster, 16> rasters;      // 8 context panels then 8 candidates
    bool operator==(const RpmProblem&) const = default;
};

// True iff every row of the 3x3 matrix satisfies every per-attribute rule.
// A panel's attribute value is well-defined only when all its entities agree;
// a row with an ill-defined value never satisfies a rule.
bool rule_check(std::span<const PanelSpec> matrix, const RuleSpec& rules);

// Deterministic scan conversion: white background, 1px black outline, flat
// gray fill. Identical specs yield byte-identical rasters on any platform
// (the geometry tests are integer-only).
Raster render(const PanelSpec& panel);

// Samples rules and a consistent 3x3 matrix, synthesizes 7 distractors by
// perturbing 1-2 attributes of the answer, and verifies with rule_check that
// only the answer completes the matrix. Same seed, same problem, bit for bit.
RpmProblem sample_problem(uint64_t seed, PuzzleConfig config);

// Number of candidates that satisfy the problem's rules when placed in the
// missing cell; 1 for every sound problem.
int count_rule_satisfying_candidates(const RpmProblem& problem);

} // namespace vitcn
