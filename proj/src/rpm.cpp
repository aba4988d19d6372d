#include "vitcn/rpm.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace vitcn {

std::string puzzle_config_name(PuzzleConfig c) {
    return c == PuzzleConfig::Center ? "center" : "grid2";
}

PuzzleConfig puzzle_config_from_name(const std::string& name) {
    if (name == "center") return PuzzleConfig::Center;
    if (name == "grid2") return PuzzleConfig::Grid2x2;
    throw config_error("unknown configuration '" + name + "' (expected center or grid2)");
}

const AttributeRule& RuleSpec::by(Attribute a) const {
    switch (a) {
        case Attribute::Shape: return shape;
        case Attribute::Size: return size;
        default: return color;
    }
}

int attribute_lo(Attribute a) { return a == Attribute::Shape ? 0 : 1; }
int attribute_hi(Attribute a) { return a == Attribute::Shape ? 4 : 4; }

int Entity::value(Attribute a) const {
    switch (a) {
        case Attribute::Shape: return static_cast<int>(shape);
        case Attribute::Size: return size_level;
        default: return color_level;
    }
}

void Entity::set_value(Attribute a, int v) {
    switch (a) {
        case Attribute::Shape: shape = static_cast<ShapeKind>(v); break;
        case Attribute::Size: size_level = static_cast<uint8_t>(v); break;
        default: color_level = static_cast<uint8_t>(v); break;
    }
}

namespace {

int cell_side(PuzzleConfig c) { return c == PuzzleConfig::Center ? 96 : 48; }
int radius_unit(PuzzleConfig c) { return c == PuzzleConfig::Center ? 8 : 4; }
int slot_count(PuzzleConfig c) { return c == PuzzleConfig::Center ? 1 : 4; }

} // namespace

void PanelSpec::validate() const {
    if (entities.empty()) return; // a blank panel is legal
    std::vector<bool> used(static_cast<size_t>(slot_count(config)), false);
    for (const Entity& e : entities) {
        for (Attribute a : {Attribute::Shape, Attribute::Size, Attribute::Color}) {
            const int v = e.value(a);
            if (v < attribute_lo(a) || v > attribute_hi(a))
                throw contract_error("panel entity attribute " + std::to_string(int(a)) +
                                     " value " + std::to_string(v) + " out of range");
        }
        if (e.slot >= used.size()) throw contract_error("panel entity slot out of range");
        if (used[e.slot]) throw contract_error("panel entities share a slot");
        used[e.slot] = true;
        const int radius = radius_unit(config) * e.size_level;
        if (radius > cell_side(config) / 2 - 2)
            throw contract_error("panel entity radius " + std::to_string(radius) +
                                 " does not fit its cell");
    }
}

// ---- rule oracle -------------------------------------------------------------

namespace {

// Panel-level attribute value; defined only when all entities agree.
std::optional<int> panel_value(const PanelSpec& panel, Attribute a) {
    if (panel.entities.empty()) return std::nullopt;
    const int v = panel.entities.front().value(a);
    for (const Entity& e : panel.entities)
        if (e.value(a) != v) return std::nullopt;
    return v;
}

bool row_values(std::span<const PanelSpec> matrix, int row, Attribute a, std::array<int, 3>& out) {
    for (int c = 0; c < 3; ++c) {
        const std::optional<int> v = panel_value(matrix[static_cast<size_t>(row * 3 + c)], a);
        if (!v) return false;
        out[static_cast<size_t>(c)] = *v;
    }
    return true;
}

std::array<int, 3> sorted3(std::array<int, 3> v) {
    std::sort(v.begin(), v.end());
    return v;
}

} // namespace

bool rule_check(std::span<const PanelSpec> matrix, const RuleSpec& rules) {
    if (matrix.size() != 9) throw contract_error("rule_check expects a complete 3x3 matrix");
    for (Attribute a : {Attribute::Shape, Attribute::Size, Attribute::Color}) {
        const AttributeRule& rule = rules.by(a);
        std::array<std::array<int, 3>, 3> rows{};
        for (int r = 0; r < 3; ++r)
            if (!row_values(matrix, r, a, rows[static_cast<size_t>(r)])) return false;

        switch (rule.kind) {
            case RuleKind::Constant:
                for (const auto& row : rows)
                    if (row[0] != row[1] || row[1] != row[2]) return false;
                break;
            case RuleKind::Progression:
                for (const auto& row : rows)
                    if (row[1] - row[0] != rule.step || row[2] - row[1] != rule.step) return false;
                break;
            case RuleKind::DistributeThree: {
                const std::array<int, 3> base = sorted3(rows[0]);
                if (base[0] == base[1] || base[1] == base[2]) return false; // needs 3 distinct
                for (const auto& row : rows)
                    if (sorted3(row) != base) return false;
                break;
            }
        }
    }
    return true;
}

// ---- rasterization ------------------------------------------------------------
//
// All geometry tests run on 64-bit integers. A pixel's sample point is its
// center; coordinates are scaled by 8192 sub-units per pixel, and polygon
// vertex directions come from a rounded 4096-scale unit table, which makes the
// rendering independent of libm rounding.

namespace {

constexpr int kVertexScale = 4096;

struct ScaledPoint {
    int64_t x, y;
};

// cos/sin table entries for the regular polygon vertices, rounded once.
std::vector<ScaledPoint> polygon_directions(int n, double start_angle) {
    std::vector<ScaledPoint> dirs(static_cast<size_t>(n));
    for (int k = 0; k < n; ++k) {
        const double theta = start_angle + 2.0 * 3.14159265358979323846 * k / n;
        dirs[static_cast<size_t>(k)] = {
            static_cast<int64_t>(std::llround(kVertexScale * std::cos(theta))),
            static_cast<int64_t>(std::llround(kVertexScale * std::sin(theta)))};
    }
    return dirs;
}

const std::vector<ScaledPoint>& shape_directions(ShapeKind s) {
    static const std::vector<ScaledPoint> tri = polygon_directions(3, -1.5707963267948966);
    static const std::vector<ScaledPoint> sqr = polygon_directions(4, -0.7853981633974483);
    static const std::vector<ScaledPoint> pen = polygon_directions(5, -1.5707963267948966);
    static const std::vector<ScaledPoint> hex = polygon_directions(6, -1.5707963267948966);
    switch (s) {
        case ShapeKind::Triangle: return tri;
        case ShapeKind::Square: return sqr;
        case ShapeKind::Pentagon: return pen;
        default: return hex;
    }
}

// Point-in-shape at circumradius r, with the pixel sample point given in
// doubled pixel coordinates (2j+1, 2i+1) and the center in doubled pixels.
bool inside_shape(ShapeKind shape, int64_t px2, int64_t py2, int64_t cx2, int64_t cy2,
                  int64_t r) {
    if (r <= 0) return false;
    if (shape == ShapeKind::Circle) {
        const int64_t dx = px2 - cx2, dy = py2 - cy2;
        return dx * dx + dy * dy <= (2 * r) * (2 * r);
    }
    const auto& dirs = shape_directions(shape);
    const int n = static_cast<int>(dirs.size());
    // 1/8192-pixel units: point = doubled * 4096, vertex = center + 2*r*dir.
    const int64_t px = px2 * kVertexScale, py = py2 * kVertexScale;
    const int64_t cx = cx2 * kVertexScale, cy = cy2 * kVertexScale;
    int neg = 0, pos = 0;
    for (int k = 0; k < n; ++k) {
        const int64_t ax = cx + 2 * r * dirs[static_cast<size_t>(k)].x;
        const int64_t ay = cy + 2 * r * dirs[static_cast<size_t>(k)].y;
        const int64_t bx = cx + 2 * r * dirs[static_cast<size_t>((k + 1) % n)].x;
        const int64_t by = cy + 2 * r * dirs[static_cast<size_t>((k + 1) % n)].y;
        const int64_t cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
        if (cross > 0) ++pos;
        if (cross < 0) ++neg;
    }
    return pos == 0 || neg == 0; // convex: inside iff on one side of every edge
}

} // namespace

Raster render(const PanelSpec& panel) {
    panel.validate();
    Raster out;
    out.fill(255);
    const int side = cell_side(panel.config);
    const int unit = radius_unit(panel.config);
    for (const Entity& e : panel.entities) {
        const int cell_row = panel.config == PuzzleConfig::Center ? 0 : e.slot / 2;
        const int cell_col = panel.config == PuzzleConfig::Center ? 0 : e.slot % 2;
        const int64_t cx2 = 2 * (cell_col * side + side / 2);
        const int64_t cy2 = 2 * (cell_row * side + side / 2);
        const int64_t r = unit * e.size_level;
        const uint8_t fill = static_cast<uint8_t>(255 - 51 * e.color_level);

        const int y0 = cell_row * side, x0 = cell_col * side;
        for (int i = y0; i < y0 + side; ++i) {
            for (int j = x0; j < x0 + side; ++j) {
                const int64_t px2 = 2 * j + 1, py2 = 2 * i + 1;
                if (!inside_shape(e.shape, px2, py2, cx2, cy2, r)) continue;
                const bool interior = inside_shape(e.shape, px2, py2, cx2, cy2, r - 1);
                out[static_cast<size_t>(i * kPanelSide + j)] = interior ? fill : 0;
            }
        }
    }
    return out;
}

// ---- generation ---------------------------------------------------------------
//
// Draw order (fixed so a seed pins the whole problem): rules for shape, size,
// color; occupied slots; the nine panels row by row; the answer position; then
// the seven distractors in order.

namespace {

AttributeRule sample_rule(Attribute a, Rng& rng) {
    AttributeRule rule;
    rule.kind = static_cast<RuleKind>(rng.uniform_int(0, 2));
    if (rule.kind == RuleKind::Progression) {
        // Steps that keep a full row inside the attribute range.
        const int span = attribute_hi(a) - attribute_lo(a);
        std::vector<int> steps = {1, -1};
        if (span >= 4) {
            steps.push_back(2);
            steps.push_back(-2);
        }
        rule.step = static_cast<int8_t>(steps[static_cast<size_t>(
            rng.uniform_int(0, static_cast<int64_t>(steps.size()) - 1))]);
    }
    return rule;
}

std::vector<int> range_values(Attribute a) {
    std::vector<int> v;
    for (int x = attribute_lo(a); x <= attribute_hi(a); ++x) v.push_back(x);
    return v;
}

// Values for one row under one attribute rule.
std::array<int, 3> sample_row_values(Attribute a, const AttributeRule& rule,
                                     const std::array<int, 3>& dist_set, Rng& rng) {
    switch (rule.kind) {
        case RuleKind::Constant: {
            const int v = static_cast<int>(rng.uniform_int(attribute_lo(a), attribute_hi(a)));
            return {v, v, v};
        }
        case RuleKind::Progression: {
            const int step = rule.step;
            const int lo = attribute_lo(a) + (step < 0 ? -2 * step : 0);
            const int hi = attribute_hi(a) - (step > 0 ? 2 * step : 0);
            const int start = static_cast<int>(rng.uniform_int(lo, hi));
            return {start, start + step, start + 2 * step};
        }
        default: {
            std::array<int, 3> row = dist_set;
            // Fisher-Yates over three elements.
            for (int i = 2; i > 0; --i)
                std::swap(row[static_cast<size_t>(i)],
                          row[static_cast<size_t>(rng.uniform_int(0, i))]);
            return row;
        }
    }
}

PanelSpec make_panel(PuzzleConfig config, const std::vector<uint8_t>& slots, int shape_v,
                     int size_v, int color_v) {
    PanelSpec panel;
    panel.config = config;
    for (uint8_t slot : slots) {
        Entity e;
        e.shape = static_cast<ShapeKind>(shape_v);
        e.size_level = static_cast<uint8_t>(size_v);
        e.color_level = static_cast<uint8_t>(color_v);
        e.slot = slot;
        panel.entities.push_back(e);
    }
    return panel;
}

// 1-2 attribute perturbation of the answer panel.
PanelSpec perturb_answer(const PanelSpec& answer, Rng& rng) {
    PanelSpec candidate = answer;
    std::vector<Attribute> attrs = {Attribute::Shape, Attribute::Size, Attribute::Color};
    rng.shuffle(attrs);
    const int count = static_cast<int>(rng.uniform_int(1, 2));
    for (int k = 0; k < count; ++k) {
        const Attribute a = attrs[static_cast<size_t>(k)];
        const int current = candidate.entities.front().value(a);
        int next = current;
        while (next == current)
            next = static_cast<int>(rng.uniform_int(attribute_lo(a), attribute_hi(a)));
        for (Entity& e : candidate.entities) e.set_value(a, next);
    }
    return candidate;
}

} // namespace

int count_rule_satisfying_candidates(const RpmProblem& problem) {
    int hits = 0;
    std::array<PanelSpec, 9> work = problem.matrix;
    for (const PanelSpec& candidate : problem.candidates) {
        work[8] = candidate;
        if (rule_check(work, problem.rules)) ++hits;
    }
    return hits;
}

RpmProblem sample_problem(uint64_t seed, PuzzleConfig config) {
    Rng rng(seed);
    RpmProblem problem;
    problem.config = config;
    problem.seed = seed;

    problem.rules.shape = sample_rule(Attribute::Shape, rng);
    problem.rules.size = sample_rule(Attribute::Size, rng);
    problem.rules.color = sample_rule(Attribute::Color, rng);

    // Occupied slots are drawn once and shared by every panel of the problem.
    std::vector<uint8_t> slots;
    if (config == PuzzleConfig::Center) {
        slots = {0};
    } else {
        std::vector<uint8_t> all = {0, 1, 2, 3};
        rng.shuffle(all);
        const int count = static_cast<int>(rng.uniform_int(1, 4));
        slots.assign(all.begin(), all.begin() + count);
        std::sort(slots.begin(), slots.end());
    }

    // Distribute-three keeps one value set for the whole matrix.
    std::array<std::array<int, 3>, 3> dist_sets{};
    for (Attribute a : {Attribute::Shape, Attribute::Size, Attribute::Color}) {
        if (problem.rules.by(a).kind != RuleKind::DistributeThree) continue;
        std::vector<int> values = range_values(a);
        rng.shuffle(values);
        dist_sets[static_cast<size_t>(a)] = {values[0], values[1], values[2]};
    }

    for (int r = 0; r < 3; ++r) {
        std::array<std::array<int, 3>, 3> row_vals{}; // [attribute][column]
        for (Attribute a : {Attribute::Shape, Attribute::Size, Attribute::Color})
            row_vals[static_cast<size_t>(a)] = sample_row_values(
                a, problem.rules.by(a), dist_sets[static_cast<size_t>(a)], rng);
        for (int c = 0; c < 3; ++c)
            problem.matrix[static_cast<size_t>(r * 3 + c)] =
                make_panel(config, slots, row_vals[0][static_cast<size_t>(c)],
                           row_vals[1][static_cast<size_t>(c)],
                           row_vals[2][static_cast<size_t>(c)]);
    }
    if (!rule_check(problem.matrix, problem.rules))
        throw generation_error("sampled matrix violates its own rules");

    const PanelSpec& answer = problem.matrix[8];
    problem.answer_index = static_cast<uint8_t>(rng.uniform_int(0, 7));

    std::vector<PanelSpec> distractors;
    std::array<PanelSpec, 9> work = problem.matrix;
    while (distractors.size() < 7) {
        int attempts = 0;
        for (;;) {
            if (++attempts > 100)
                throw generation_error("could not synthesize a distinct failing distractor in "
                                       "100 attempts (seed " + std::to_string(seed) + ")");
            PanelSpec candidate = perturb_answer(answer, rng);
            work[8] = candidate;
            if (rule_check(work, problem.rules)) continue; // would be a second valid answer
            const bool duplicate =
                candidate == answer ||
                std::find(distractors.begin(), distractors.end(), candidate) != distractors.end();
            if (duplicate) continue;
            distractors.push_back(std::move(candidate));
            break;
        }
    }

    size_t next_distractor = 0;
    for (int a = 0; a < 8; ++a) {
        problem.candidates[static_cast<size_t>(a)] =
            a == problem.answer_index ? answer : distractors[next_distractor++];
    }

    for (int p = 0; p < 8; ++p)
        problem.rasters[static_cast<size_t>(p)] = render(problem.matrix[static_cast<size_t>(p)]);
    for (int a = 0; a < 8; ++a)
        problem.rasters[static_cast<size_t>(8 + a)] =
            render(problem.candidates[static_cast<size_t>(a)]);

    if (count_rule_satisfying_candidates(problem) != 1)
        throw generation_error("generated problem does not have a unique answer");
    return problem;
}

} // namespace vitcn
