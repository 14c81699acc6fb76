#include "ptrm/puzzles.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>

#include "ptrm/tensor.hpp"

namespace ptrm {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

template <typename Seq>
void shuffle(Seq& seq, CounterRng& rng) {
  for (std::size_t i = seq.size(); i > 1; --i) std::swap(seq[i - 1], seq[rng.below(i)]);
}

struct SudokuShape {
  int box_rows;
  int box_cols;
  int n;
};

SudokuShape check_sudoku(const DigitGrid& grid, int box_rows, int box_cols) {
  require(box_rows >= 1 && box_cols >= 1, "sudoku: box dimensions must be positive");
  const int n = box_rows * box_cols;
  require(grid.size() == static_cast<std::size_t>(n * n),
          "sudoku: grid has " + std::to_string(grid.size()) + " cells, expected " + std::to_string(n * n));
  for (int v : grid) require(v >= 0 && v <= n, "sudoku: digit " + std::to_string(v) + " out of range");
  return {box_rows, box_cols, n};
}

bool placement_ok(const DigitGrid& g, const SudokuShape& s, int cell, int d) {
  const int r = cell / s.n, c = cell % s.n;
  for (int k = 0; k < s.n; ++k) {
    if (k != c && g[r * s.n + k] == d) return false;
    if (k != r && g[k * s.n + c] == d) return false;
  }
  const int br = (r / s.box_rows) * s.box_rows, bc = (c / s.box_cols) * s.box_cols;
  for (int i = br; i < br + s.box_rows; ++i)
    for (int j = bc; j < bc + s.box_cols; ++j)
      if ((i != r || j != c) && g[i * s.n + j] == d) return false;
  return true;
}

// Row-major backtracking. `digit_order` lets the generator randomize the
// search; the solver uses ascending order.
template <typename OnSolution>
bool backtrack(DigitGrid& g, const SudokuShape& s, const std::vector<int>& blanks, std::size_t pos,
               const std::vector<std::vector<int>>* digit_order, OnSolution& on_solution) {
  if (pos == blanks.size()) return on_solution(g);
  const int cell = blanks[pos];
  for (int k = 0; k < s.n; ++k) {
    const int d = digit_order ? (*digit_order)[pos][static_cast<std::size_t>(k)] : k + 1;
    if (!placement_ok(g, s, cell, d)) continue;
    g[cell] = d;
    if (backtrack(g, s, blanks, pos + 1, digit_order, on_solution)) {
      g[cell] = 0;
      return true;
    }
    g[cell] = 0;
  }
  return false;
}

bool givens_consistent(const DigitGrid& g, const SudokuShape& s) {
  for (int cell = 0; cell < s.n * s.n; ++cell)
    if (g[cell] != 0 && !placement_ok(g, s, cell, g[cell])) return false;
  return true;
}

std::vector<int> blank_cells(const DigitGrid& g) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(g.size()); ++i)
    if (g[i] == 0) out.push_back(i);
  return out;
}

std::string hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

}  // namespace

std::string to_string(PuzzleType type) {
  switch (type) {
    case PuzzleType::sudoku4: return "sudoku4";
    case PuzzleType::sudoku6: return "sudoku6";
    case PuzzleType::maze: return "maze";
  }
  return "?";
}

PuzzleType parse_puzzle_type(const std::string& s) {
  if (s == "sudoku4") return PuzzleType::sudoku4;
  if (s == "sudoku6") return PuzzleType::sudoku6;
  if (s == "maze") return PuzzleType::maze;
  throw ContractViolation("unknown puzzle type '" + s + "'");
}

nlohmann::json vocab::spec_json() {
  nlohmann::json digits = nlohmann::json::object();
  for (int d = 1; d <= kMaxDigit; ++d) digits[std::to_string(d)] = digit_token(d);
  return {{"PAD", kPad},   {"BLANK", kBlank}, {"digits", digits}, {"WALL", kWall},
          {"OPEN", kOpen}, {"START", kStart}, {"GOAL", kGoal},    {"PATH", kPath},
          {"V", kSize}};
}

void to_json(nlohmann::json& j, const PuzzleInstance& p) {
  j = nlohmann::json{{"id", p.id},     {"type", to_string(p.type)}, {"rows", p.rows},
                     {"cols", p.cols}, {"x", p.x},                  {"y", p.y}};
}

void from_json(const nlohmann::json& j, PuzzleInstance& p) {
  p.id = j.at("id").get<std::string>();
  p.type = parse_puzzle_type(j.at("type").get<std::string>());
  p.rows = j.at("rows").get<int>();
  p.cols = j.at("cols").get<int>();
  p.x = j.at("x").get<std::vector<int>>();
  p.y = j.at("y").get<std::vector<int>>();
  p.solve_order.clear();
  require(p.x.size() == p.y.size(), "puzzle " + p.id + ": x and y lengths differ");
  require(p.x.size() >= p.cells(), "puzzle " + p.id + ": token arrays shorter than the grid");
}

// --- Sudoku -------------------------------------------------------------------

std::vector<DigitGrid> solve_sudoku(const DigitGrid& grid, int box_rows, int box_cols,
                                    std::size_t limit) {
  const SudokuShape s = check_sudoku(grid, box_rows, box_cols);
  std::vector<DigitGrid> out;
  if (!givens_consistent(grid, s)) return out;
  DigitGrid g = grid;
  const auto blanks = blank_cells(g);
  auto collect = [&](const DigitGrid& solved) {
    out.push_back(solved);
    return limit != 0 && out.size() >= limit;
  };
  backtrack(g, s, blanks, 0, nullptr, collect);
  return out;
}

std::size_t count_sudoku_solutions(const DigitGrid& grid, int box_rows, int box_cols,
                                   std::size_t limit) {
  const SudokuShape s = check_sudoku(grid, box_rows, box_cols);
  if (!givens_consistent(grid, s)) return 0;
  DigitGrid g = grid;
  const auto blanks = blank_cells(g);
  std::size_t count = 0;
  auto tally = [&](const DigitGrid&) { return limit != 0 && ++count >= limit; };
  backtrack(g, s, blanks, 0, nullptr, tally);
  return count;
}

bool sudoku_is_valid_solution(const DigitGrid& grid, int box_rows, int box_cols) {
  const SudokuShape s = check_sudoku(grid, box_rows, box_cols);
  for (int v : grid)
    if (v == 0) return false;
  return givens_consistent(grid, s);
}

int sudoku_box_rows(int size) {
  require(size == 4 || size == 6, "sudoku size must be 4 or 6");
  return 2;
}

int sudoku_box_cols(int size) {
  require(size == 4 || size == 6, "sudoku size must be 4 or 6");
  return size == 4 ? 2 : 3;
}

PuzzleInstance gen_sudoku(int size, GivensRange givens, CounterRng& rng) {
  const int br = sudoku_box_rows(size), bc = sudoku_box_cols(size);
  const int cells = size * size;
  // Fewest givens that can pin down a unique grid: 4 for 4x4, 8 for 6x6.
  const int floor_givens = size == 4 ? 4 : 8;
  require(givens.min <= givens.max && givens.max <= cells && givens.min >= floor_givens,
          "gen_sudoku: infeasible givens range [" + std::to_string(givens.min) + "," +
              std::to_string(givens.max) + "] for " + std::to_string(size) + "x" + std::to_string(size));
  const SudokuShape s{br, bc, size};
  for (int attempt = 0; attempt < 200; ++attempt) {
    // Random complete grid.
    DigitGrid solution(static_cast<std::size_t>(cells), 0);
    std::vector<int> all_cells(static_cast<std::size_t>(cells));
    std::iota(all_cells.begin(), all_cells.end(), 0);
    std::vector<std::vector<int>> orders(static_cast<std::size_t>(cells));
    for (auto& o : orders) {
      o.resize(static_cast<std::size_t>(size));
      std::iota(o.begin(), o.end(), 1);
      shuffle(o, rng);
    }
    auto keep = [&](const DigitGrid& g) {
      solution = g;
      return true;
    };
    DigitGrid scratch(static_cast<std::size_t>(cells), 0);
    backtrack(scratch, s, all_cells, 0, &orders, keep);

    const int target = givens.min + static_cast<int>(rng.below(static_cast<std::uint64_t>(givens.max - givens.min + 1)));
    DigitGrid puzzle = solution;
    std::vector<int> removal = all_cells;
    shuffle(removal, rng);
    int count = cells;
    for (int cell : removal) {
      if (count <= target) break;
      const int saved = puzzle[cell];
      puzzle[cell] = 0;
      if (count_sudoku_solutions(puzzle, br, bc, 2) == 1) {
        --count;
      } else {
        puzzle[cell] = saved;
      }
    }
    if (count < givens.min || count > givens.max) continue;

    PuzzleInstance p;
    p.type = size == 4 ? PuzzleType::sudoku4 : PuzzleType::sudoku6;
    p.rows = p.cols = size;
    p.x.resize(static_cast<std::size_t>(cells));
    p.y.resize(static_cast<std::size_t>(cells));
    for (int i = 0; i < cells; ++i) {
      p.x[i] = puzzle[i] == 0 ? vocab::kBlank : vocab::digit_token(puzzle[i]);
      p.y[i] = vocab::digit_token(solution[i]);
    }
    p.solve_order = blank_cells(puzzle);
    return p;
  }
  throw ContractViolation("gen_sudoku: could not reach givens range [" + std::to_string(givens.min) +
                          "," + std::to_string(givens.max) + "]");
}

// --- Maze -------------------------------------------------------------------

PuzzleInstance gen_maze(int rows, int cols, CounterRng& rng) {
  require(rows >= 5 && cols >= 5 && rows % 2 == 1 && cols % 2 == 1,
          "gen_maze: rows and cols must be odd and >= 5");
  std::vector<int> grid(static_cast<std::size_t>(rows * cols), vocab::kWall);
  const int cr = (rows - 1) / 2, cc = (cols - 1) / 2;  // lattice of carvable cells
  auto at = [cols](int r, int c) { return r * cols + c; };
  std::vector<char> visited(static_cast<std::size_t>(cr * cc), 0);
  std::vector<std::pair<int, int>> stack{{0, 0}};
  visited[0] = 1;
  grid[at(1, 1)] = vocab::kOpen;
  const int dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
  while (!stack.empty()) {
    auto [r, c] = stack.back();
    std::vector<int> options;
    for (int k = 0; k < 4; ++k) {
      const int nr = r + dr[k], nc = c + dc[k];
      if (nr >= 0 && nr < cr && nc >= 0 && nc < cc && !visited[nr * cc + nc]) options.push_back(k);
    }
    if (options.empty()) {
      stack.pop_back();
      continue;
    }
    const int k = options[rng.below(options.size())];
    const int nr = r + dr[k], nc = c + dc[k];
    visited[nr * cc + nc] = 1;
    grid[at(2 * r + 1 + dr[k], 2 * c + 1 + dc[k])] = vocab::kOpen;
    grid[at(2 * nr + 1, 2 * nc + 1)] = vocab::kOpen;
    stack.emplace_back(nr, nc);
  }
  // Distinct lattice cells for start and goal.
  const auto lattice = static_cast<std::uint64_t>(cr * cc);
  const auto s = rng.below(lattice);
  auto g = rng.below(lattice - 1);
  if (g >= s) ++g;
  const int start = at(2 * static_cast<int>(s / cc) + 1, 2 * static_cast<int>(s % cc) + 1);
  const int goal = at(2 * static_cast<int>(g / cc) + 1, 2 * static_cast<int>(g % cc) + 1);
  grid[start] = vocab::kStart;
  grid[goal] = vocab::kGoal;

  PuzzleInstance p;
  p.type = PuzzleType::maze;
  p.rows = rows;
  p.cols = cols;
  p.x = grid;
  p.y = grid;
  const auto path = solve_maze(grid, rows, cols);
  require(path.has_value() && path->size() >= 2, "gen_maze: generated maze has no path");
  for (std::size_t i = 1; i + 1 < path->size(); ++i) {
    p.y[(*path)[i]] = vocab::kPath;
    p.solve_order.push_back((*path)[i]);
  }
  return p;
}

std::optional<std::vector<int>> solve_maze(const std::vector<int>& tokens, int rows, int cols) {
  require(rows >= 1 && cols >= 1 && tokens.size() >= static_cast<std::size_t>(rows * cols),
          "solve_maze: token array smaller than grid");
  const int cells = rows * cols;
  int start = -1, goal = -1;
  for (int i = 0; i < cells; ++i) {
    if (tokens[i] == vocab::kStart) start = i;
    if (tokens[i] == vocab::kGoal) goal = i;
  }
  require(start >= 0, "solve_maze: no START cell");
  if (goal < 0) goal = start;  // degenerate: start doubles as goal
  std::vector<int> parent(static_cast<std::size_t>(cells), -2);
  std::deque<int> queue{start};
  parent[start] = -1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (u == goal) break;
    const int r = u / cols, c = u % cols;
    const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
    for (const auto& nb : nbr) {
      if (nb[0] < 0 || nb[0] >= rows || nb[1] < 0 || nb[1] >= cols) continue;
      const int v = nb[0] * cols + nb[1];
      if (tokens[v] == vocab::kWall || tokens[v] == vocab::kPad || parent[v] != -2) continue;
      parent[v] = u;
      queue.push_back(v);
    }
  }
  if (parent[goal] == -2) return std::nullopt;
  std::vector<int> path;
  for (int v = goal; v != -1; v = parent[v]) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

// --- Augmentation -----------------------------------------------------------

int dihedral_target(int n, int r, int c, int element) {
  require(element >= 0 && element < 8, "dihedral element must be in [0,8)");
  // A clockwise quarter turn moves (r, c) to (c, n-1-r).
  for (int k = 0; k < element % 4; ++k) {
    const int nr = c, nc = n - 1 - r;
    r = nr;
    c = nc;
  }
  if (element >= 4) c = n - 1 - c;
  return r * n + c;
}

std::vector<int> dihedral_transform(const std::vector<int>& grid, int rows, int cols, int element) {
  require(rows == cols, "dihedral_transform: grid must be square");
  require(grid.size() == static_cast<std::size_t>(rows * cols), "dihedral_transform: size mismatch");
  std::vector<int> out(grid.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[dihedral_target(rows, r, c, element)] = grid[r * cols + c];
  return out;
}

int dihedral_compose(int a, int b) {
  // Identify the composite by its action on a 3x3 probe with distinct labels.
  std::vector<int> probe(9);
  std::iota(probe.begin(), probe.end(), 0);
  const auto composed = dihedral_transform(dihedral_transform(probe, 3, 3, a), 3, 3, b);
  for (int e = 0; e < 8; ++e)
    if (dihedral_transform(probe, 3, 3, e) == composed) return e;
  throw ContractViolation("dihedral_compose: composition left the group");
}

int dihedral_inverse(int e) {
  for (int f = 0; f < 8; ++f)
    if (dihedral_compose(e, f) == 0) return f;
  throw ContractViolation("dihedral_inverse: no inverse");
}

std::vector<int> allowed_dihedral_elements(PuzzleType type) {
  if (type == PuzzleType::sudoku6) return {0, 2, 4, 6};
  return {0, 1, 2, 3, 4, 5, 6, 7};
}

PuzzleInstance transform_instance(const PuzzleInstance& p, int element) {
  require(p.rows == p.cols, "transform_instance: puzzle grid must be square");
  PuzzleInstance out = p;
  const auto cells = p.cells();
  std::vector<int> gx(p.x.begin(), p.x.begin() + static_cast<std::ptrdiff_t>(cells));
  std::vector<int> gy(p.y.begin(), p.y.begin() + static_cast<std::ptrdiff_t>(cells));
  gx = dihedral_transform(gx, p.rows, p.cols, element);
  gy = dihedral_transform(gy, p.rows, p.cols, element);
  std::copy(gx.begin(), gx.end(), out.x.begin());
  std::copy(gy.begin(), gy.end(), out.y.begin());
  for (auto& cell : out.solve_order) cell = dihedral_target(p.rows, cell / p.cols, cell % p.cols, element);
  return out;
}

PuzzleInstance trajectory_prefix(const PuzzleInstance& p, std::size_t prefix) {
  require(prefix <= p.solve_order.size(), "trajectory_prefix: prefix longer than solve order");
  PuzzleInstance out = p;
  for (std::size_t i = 0; i < prefix; ++i) {
    const int cell = p.solve_order[i];
    out.x[cell] = p.type == PuzzleType::maze ? vocab::kPath : p.y[cell];
  }
  return out;
}

PuzzleInstance trajectory_sample(const PuzzleInstance& p, CounterRng& rng) {
  return trajectory_prefix(p, rng.below(p.solve_order.size() + 1));
}

// --- Datasets ---------------------------------------------------------------

void DatasetSpec::validate() const {
  require(sudoku4 >= 0 && sudoku6 >= 0 && maze >= 0, "dataset counts must be non-negative");
  require(sudoku4 + sudoku6 + maze > 0, "dataset must request at least one puzzle");
  require(val_per_type >= 0 && golden_per_type >= 0, "split sizes must be non-negative");
  require(augmentation >= 1, "augmentation factor must be >= 1");
  require(maze_size >= 5 && maze_size % 2 == 1, "maze_size must be odd and >= 5");
}

void to_json(nlohmann::json& j, const DatasetSpec& s) {
  j = nlohmann::json{{"sudoku4", s.sudoku4},
                     {"sudoku6", s.sudoku6},
                     {"maze", s.maze},
                     {"val_per_type", s.val_per_type},
                     {"golden_per_type", s.golden_per_type},
                     {"augmentation", s.augmentation},
                     {"seed", s.seed},
                     {"sudoku4_givens", {s.sudoku4_givens.min, s.sudoku4_givens.max}},
                     {"sudoku6_givens", {s.sudoku6_givens.min, s.sudoku6_givens.max}},
                     {"maze_size", s.maze_size},
                     {"seq_len", s.seq_len}};
}

void from_json(const nlohmann::json& j, DatasetSpec& s) {
  DatasetSpec d;
  s.sudoku4 = j.value("sudoku4", d.sudoku4);
  s.sudoku6 = j.value("sudoku6", d.sudoku6);
  s.maze = j.value("maze", d.maze);
  s.val_per_type = j.value("val_per_type", d.val_per_type);
  s.golden_per_type = j.value("golden_per_type", d.golden_per_type);
  s.augmentation = j.value("augmentation", d.augmentation);
  s.seed = j.value("seed", d.seed);
  auto range = [&j](const char* key, GivensRange fallback) {
    if (!j.contains(key)) return fallback;
    const auto v = j.at(key).get<std::vector<int>>();
    require(v.size() == 2, std::string(key) + " must be [min, max]");
    return GivensRange{v[0], v[1]};
  };
  s.sudoku4_givens = range("sudoku4_givens", d.sudoku4_givens);
  s.sudoku6_givens = range("sudoku6_givens", d.sudoku6_givens);
  s.maze_size = j.value("maze_size", d.maze_size);
  s.seq_len = j.value("seq_len", d.seq_len);
}

nlohmann::json Dataset::manifest() const {
  auto counts = [](const std::vector<PuzzleInstance>& split) {
    nlohmann::json c = nlohmann::json::object();
    for (const auto& p : split) {
      const auto key = to_string(p.type);
      c[key] = c.value(key, 0) + 1;
    }
    return c;
  };
  return {{"generator_version", kGeneratorVersion},
          {"vocab", vocab::spec_json()},
          {"V", vocab::kSize},
          {"L", seq_len},
          {"splits",
           {{"train", {{"count", train.size()}, {"per_type", counts(train)}}},
            {"val", {{"count", val.size()}, {"per_type", counts(val)}}},
            {"golden", {{"count", golden.size()}, {"per_type", counts(golden)}}}}},
          {"spec", spec}};
}

std::vector<int> canonical_key(const PuzzleInstance& p) {
  const auto cells = p.cells();
  std::vector<int> best;
  std::vector<int> elements{0};
  if (p.rows == p.cols) elements = allowed_dihedral_elements(p.type);
  for (int e : elements) {
    std::vector<int> gx(p.x.begin(), p.x.begin() + static_cast<std::ptrdiff_t>(cells));
    std::vector<int> gy(p.y.begin(), p.y.begin() + static_cast<std::ptrdiff_t>(cells));
    if (e != 0) {
      gx = dihedral_transform(gx, p.rows, p.cols, e);
      gy = dihedral_transform(gy, p.rows, p.cols, e);
    }
    std::vector<int> key{static_cast<int>(p.type), p.rows, p.cols};
    key.insert(key.end(), gx.begin(), gx.end());
    key.insert(key.end(), gy.begin(), gy.end());
    if (best.empty() || key < best) best = std::move(key);
  }
  return best;
}

void pad_instance(PuzzleInstance& p, int seq_len) {
  require(static_cast<int>(p.x.size()) <= seq_len,
          "pad_instance: puzzle " + p.id + " longer than seq_len " + std::to_string(seq_len));
  p.x.resize(static_cast<std::size_t>(seq_len), vocab::kPad);
  p.y.resize(static_cast<std::size_t>(seq_len), vocab::kPad);
}

Dataset build_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset data;
  data.spec = spec;
  struct TypeRequest {
    PuzzleType type;
    int count;
  };
  const std::vector<TypeRequest> requests{{PuzzleType::sudoku4, spec.sudoku4},
                                          {PuzzleType::sudoku6, spec.sudoku6},
                                          {PuzzleType::maze, spec.maze}};
  int seq_len = spec.seq_len;
  if (seq_len == 0) {
    for (const auto& r : requests) {
      if (r.count == 0) continue;
      const int cells = r.type == PuzzleType::sudoku4   ? 16
                        : r.type == PuzzleType::sudoku6 ? 36
                                                        : spec.maze_size * spec.maze_size;
      seq_len = std::max(seq_len, cells);
    }
  }
  data.seq_len = seq_len;

  std::set<std::vector<int>> seen;
  for (const auto& req : requests) {
    if (req.count == 0) continue;
    const auto type_id = static_cast<std::uint64_t>(req.type);
    // Held-out instances come first and are generated on top of the
    // requested training count.
    const int total = req.count + spec.val_per_type + spec.golden_per_type;
    std::vector<PuzzleInstance> raw;
    for (int index = 0; index < total; ++index) {
      // Duplicates (up to symmetry) are regenerated with the next attempt.
      for (std::uint64_t attempt = 0;; ++attempt) {
        require(attempt < 10000, "build_dataset: could not find enough distinct " + to_string(req.type) +
                                     " puzzles; lower the count or widen the givens range");
        CounterRng rng{spec.seed, type_id, static_cast<std::uint64_t>(index), attempt};
        PuzzleInstance p = req.type == PuzzleType::sudoku4   ? gen_sudoku(4, spec.sudoku4_givens, rng)
                           : req.type == PuzzleType::sudoku6 ? gen_sudoku(6, spec.sudoku6_givens, rng)
                                                             : gen_maze(spec.maze_size, spec.maze_size, rng);
        if (!seen.insert(canonical_key(p)).second) continue;
        p.id = to_string(req.type) + "-" + hex(spec.seed) + "-" + std::to_string(index);
        raw.push_back(std::move(p));
        break;
      }
    }
    std::size_t i = 0;
    for (; i < static_cast<std::size_t>(spec.val_per_type); ++i) data.val.push_back(raw[i]);
    for (; i < static_cast<std::size_t>(spec.val_per_type + spec.golden_per_type); ++i)
      data.golden.push_back(raw[i]);
    const auto elements = allowed_dihedral_elements(req.type);
    for (; i < raw.size(); ++i) {
      data.train.push_back(raw[i]);
      for (int copy = 1; copy < spec.augmentation; ++copy) {
        CounterRng rng{spec.seed, 0xA06ull, type_id, static_cast<std::uint64_t>(i),
                       static_cast<std::uint64_t>(copy)};
        PuzzleInstance aug = trajectory_sample(raw[i], rng);
        if (aug.rows == aug.cols) aug = transform_instance(aug, elements[rng.below(elements.size())]);
        aug.id = raw[i].id + "#" + std::to_string(copy);
        data.train.push_back(std::move(aug));
      }
    }
  }
  for (auto* split : {&data.train, &data.val, &data.golden})
    for (auto& p : *split) pad_instance(p, seq_len);
  return data;
}

namespace {

void write_jsonl(const std::vector<PuzzleInstance>& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& p : split) out << nlohmann::json(p).dump() << '\n';
}

}  // namespace

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_jsonl(data.train, dir / "train.jsonl");
  write_jsonl(data.val, dir / "val.jsonl");
  write_jsonl(data.golden, dir / "golden.jsonl");
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << data.manifest().dump(2) << '\n';
}

std::vector<PuzzleInstance> read_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<PuzzleInstance> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line).get<PuzzleInstance>());
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("cannot read " + (dir / "manifest.json").string());
  return nlohmann::json::parse(in);
}

bool answer_correct(const std::vector<int>& predicted, const std::vector<int>& truth) {
  require(predicted.size() == truth.size(), "answer_correct: length mismatch");
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth[i] != vocab::kPad && predicted[i] != truth[i]) return false;
  return true;
}

}  // namespace ptrm
