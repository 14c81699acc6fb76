#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptrm/rng.hpp"

namespace ptrm {

enum class PuzzleType { sudoku4, sudoku6, maze };

std::string to_string(PuzzleType type);
PuzzleType parse_puzzle_type(const std::string& s);

/// Unified token vocabulary shared by every puzzle family.
namespace vocab {
inline constexpr int kPad = 0;
inline constexpr int kBlank = 1;
inline constexpr int kDigitBase = 1;  // digit d (1..6) -> token d + 1
inline constexpr int kMaxDigit = 6;
inline constexpr int kWall = 8;
inline constexpr int kOpen = 9;
inline constexpr int kStart = 10;
inline constexpr int kGoal = 11;
inline constexpr int kPath = 12;
inline constexpr int kSize = 13;

inline int digit_token(int d) { return kDigitBase + d; }
inline int token_digit(int t) { return t - kDigitBase; }
nlohmann::json spec_json();
}  // namespace vocab

struct PuzzleInstance {
  PuzzleType type = PuzzleType::sudoku4;
  int rows = 0;
  int cols = 0;
  std::vector<int> x;       // input tokens, padded to the dataset's L
  std::vector<int> y;       // solved tokens, padded the same way
  std::string id;
  // Cells filled by the canonical solve, in order. Not serialized.
  std::vector<int> solve_order;

  std::size_t cells() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  bool operator==(const PuzzleInstance&) const = default;
};

void to_json(nlohmann::json& j, const PuzzleInstance& p);
void from_json(const nlohmann::json& j, PuzzleInstance& p);

// --- Sudoku -----------------------------------------------------------------

/// Digit grid, row-major, 0 = empty.
using DigitGrid = std::vector<int>;

/// Exhaustive backtracking in row-major cell order with ascending digits.
/// Returns up to `limit` solutions (0 = unlimited) in that deterministic order.
std::vector<DigitGrid> solve_sudoku(const DigitGrid& grid, int box_rows, int box_cols,
                                    std::size_t limit = 0);

/// Solution count capped at `limit`.
std::size_t count_sudoku_solutions(const DigitGrid& grid, int box_rows, int box_cols,
                                   std::size_t limit);

bool sudoku_is_valid_solution(const DigitGrid& grid, int box_rows, int box_cols);

struct GivensRange {
  int min = 0;
  int max = 0;
};

/// size 4 uses 2x2 boxes, size 6 uses 2x3 boxes.
PuzzleInstance gen_sudoku(int size, GivensRange givens, CounterRng& rng);

int sudoku_box_rows(int size);
int sudoku_box_cols(int size);

// --- Maze -------------------------------------------------------------------

/// Perfect maze by randomized depth-first carving; y marks the unique path.
PuzzleInstance gen_maze(int rows, int cols, CounterRng& rng);

/// Breadth-first search from START to GOAL over non-wall cells. Returns the
/// cell indices of the shortest path including both endpoints, or nothing if
/// the goal is unreachable.
std::optional<std::vector<int>> solve_maze(const std::vector<int>& tokens, int rows, int cols);

// --- Augmentation -----------------------------------------------------------

/// Element e: rotate clockwise by 90*(e mod 4), then mirror left-right if e >= 4.
std::vector<int> dihedral_transform(const std::vector<int>& grid, int rows, int cols, int element);

/// Index in the transformed grid that cell (r, c) moves to.
int dihedral_target(int n, int r, int c, int element);

/// Composition: applying `a` then `b` equals applying the returned element.
int dihedral_compose(int a, int b);
int dihedral_inverse(int e);

/// Dihedral elements that map a puzzle of this type onto a valid puzzle of
/// the same type. 6x6 Sudoku boxes are 2x3, so quarter turns are excluded.
std::vector<int> allowed_dihedral_elements(PuzzleType type);

/// Applies a dihedral element to x, y and the solve order of a square puzzle.
PuzzleInstance transform_instance(const PuzzleInstance& p, int element);

/// Replaces x by the grid after `prefix` steps of the canonical solve order.
PuzzleInstance trajectory_prefix(const PuzzleInstance& p, std::size_t prefix);

/// Uniform prefix length in [0, steps].
PuzzleInstance trajectory_sample(const PuzzleInstance& p, CounterRng& rng);

// --- Datasets ---------------------------------------------------------------

struct DatasetSpec {
  int sudoku4 = 0;  // training instances per type; val and golden come on top
  int sudoku6 = 0;
  int maze = 0;
  int val_per_type = 0;
  int golden_per_type = 0;
  int augmentation = 1;
  std::uint64_t seed = 0;
  GivensRange sudoku4_givens{6, 10};
  GivensRange sudoku6_givens{14, 22};
  int maze_size = 7;
  int seq_len = 0;  // 0 = largest grid among requested types

  void validate() const;
};

void to_json(nlohmann::json& j, const DatasetSpec& s);
void from_json(const nlohmann::json& j, DatasetSpec& s);

struct Dataset {
  std::vector<PuzzleInstance> train;
  std::vector<PuzzleInstance> val;
  std::vector<PuzzleInstance> golden;
  DatasetSpec spec;
  int seq_len = 0;

  nlohmann::json manifest() const;
};

inline constexpr const char* kGeneratorVersion = "ptrm-gen/1";

/// Canonical content key: minimum over allowed dihedral images of (x, y).
std::vector<int> canonical_key(const PuzzleInstance& p);

Dataset build_dataset(const DatasetSpec& spec);

/// Appends PAD to x and y up to seq_len.
void pad_instance(PuzzleInstance& p, int seq_len);

void write_dataset(const Dataset& data, const std::filesystem::path& dir);
std::vector<PuzzleInstance> read_split(const std::filesystem::path& path);
nlohmann::json read_manifest(const std::filesystem::path& dir);

/// Exact answer check over non-pad cells.
bool answer_correct(const std::vector<int>& predicted, const std::vector<int>& truth);

}  // namespace ptrm
