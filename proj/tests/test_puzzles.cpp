#include <doctest.h>

#include <algorithm>
#include <array>
#include <deque>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ptrm/puzzles.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ptrm;
using namespace ptrm::testing;
using ptrm::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("puzzles") {
  TEST_CASE("vocabulary is dense with pad at zero") {
    std::set<int> ids{vocab::kPad, vocab::kBlank, vocab::kWall, vocab::kOpen, vocab::kStart, vocab::kGoal, vocab::kPath};
    for (int d = 1; d <= vocab::kMaxDigit; ++d) ids.insert(vocab::digit_token(d));
    CHECK(ids.size() == std::size_t(vocab::kSize));
    CHECK(*ids.begin() == 0);
    CHECK(*ids.rbegin() == vocab::kSize - 1);
  }

  TEST_CASE("empty 4x4 grid has 288 solutions") {
    const auto sols = solve_sudoku(DigitGrid(16, 0), 2, 2);
    CHECK(sols.size() == 288);
    std::set<DigitGrid> distinct(sols.begin(), sols.end());
    CHECK(distinct.size() == 288);
    for (const auto& s : sols) CHECK(sudoku_is_valid_solution(s, 2, 2));

    CHECK(ptrm::testing::enumerate_4x4_solutions() == 288);
  }

  TEST_CASE("solver edge cases") {
    const auto solved = solve_sudoku(DigitGrid(16, 0), 2, 2, 1).front();
    const auto again = solve_sudoku(solved, 2, 2);
    REQUIRE(again.size() == 1);
    CHECK(again.front() == solved);
    DigitGrid clash(16, 0);
    clash[0] = clash[1] = 3;
    CHECK(solve_sudoku(clash, 2, 2).empty());
    CHECK(count_sudoku_solutions(DigitGrid(16, 0), 2, 2, 2) == 2);
    CHECK_THROWS_AS(solve_sudoku(DigitGrid(15, 0), 2, 2), ContractViolation);
    CHECK_THROWS_AS(solve_sudoku(DigitGrid(16, 5), 2, 2), ContractViolation);
  }

  TEST_CASE("1000 generated 4x4 puzzles each have exactly one solution") {
    for (std::uint64_t i = 0; i < 1000; ++i) {
      CounterRng rng{99, i};
      const auto p = gen_sudoku(4, {6, 10}, rng);
      const auto g = digits_of(p.x, 16);
      const auto givens = std::count_if(g.begin(), g.end(), [](int v) { return v != 0; });
      REQUIRE(givens >= 6);
      REQUIRE(givens <= 10);
      REQUIRE(count_solutions(g, 2, 2, 2) == 1);
      REQUIRE(count_sudoku_solutions(g, 2, 2, 2) == 1);
      const auto y = digits_of(p.y, 16);
      REQUIRE(rows_cols_boxes_ok(y, 2, 2));
      for (int c = 0; c < 16; ++c)
        if (g[c]) REQUIRE(g[c] == y[c]);
    }
  }

  TEST_CASE("6x6 puzzles are unique with 2x3 boxes") {
    for (std::uint64_t i = 0; i < 30; ++i) {
      CounterRng rng{98, i};
      const auto p = gen_sudoku(6, {14, 22}, rng);
      CHECK(count_solutions(digits_of(p.x, 36), 2, 3, 2) == 1);
      CHECK(rows_cols_boxes_ok(digits_of(p.y, 36), 2, 3));
    }
  }

  TEST_CASE("generator examples") {
    CounterRng a{5}, b{5};
    CHECK(gen_sudoku(4, {6, 10}, a) == gen_sudoku(4, {6, 10}, b));
    CounterRng full{6};
    const auto p = gen_sudoku(4, {16, 16}, full);
    CHECK(p.x == p.y);
    CounterRng bad{7};
    CHECK_THROWS_AS(gen_sudoku(4, {1, 2}, bad), ContractViolation);
    CHECK_THROWS_AS(gen_sudoku(5, {6, 10}, bad), ContractViolation);
  }

  TEST_CASE("maze paths agree with an independent BFS") {
    for (std::uint64_t i = 0; i < 200; ++i) {
      CounterRng rng{77, i};
      const int size = 5 + 2 * int(i % 3);
      const auto m = gen_maze(size, size, rng);
      const auto oracle = bfs_path(m.x, size, size);
      REQUIRE(oracle.has_value());
      const auto lib = solve_maze(m.x, size, size);
      REQUIRE(lib.has_value());
      CHECK(*lib == *oracle);
      CHECK(m.x[oracle->front()] == vocab::kStart);
      CHECK(m.x[oracle->back()] == vocab::kGoal);
      std::set<int> marked;
      for (int c = 0; c < size * size; ++c)
        if (m.y[c] == vocab::kPath) marked.insert(c);
      CHECK(marked == std::set<int>(oracle->begin() + 1, oracle->end() - 1));
      for (std::size_t k = 1; k < oracle->size(); ++k) {
        const int u = (*oracle)[k - 1], v = (*oracle)[k];
        CHECK(std::abs(u / size - v / size) + std::abs(u % size - v % size) == 1);
      }
      // A perfect maze is a tree: open cells = edges + 1 on the doubled lattice.
      const auto open = std::count_if(m.x.begin(), m.x.end(), [](int t) { return t != vocab::kWall; });
      const int lattice = (size / 2) * (size / 2);
      CHECK(open == 2 * lattice - 1);
    }
    CHECK_THROWS_AS([] { CounterRng r{1}; gen_maze(6, 7, r); }(), ContractViolation);
  }

  TEST_CASE("dihedral action examples") {
    const std::vector<int> g{1, 2, 3, 4};
    CHECK(dihedral_transform(g, 2, 2, 0) == g);
    CHECK(dihedral_transform(g, 2, 2, 1) == std::vector<int>{3, 1, 4, 2});
    CHECK(dihedral_transform(g, 2, 2, 4) == std::vector<int>{2, 1, 4, 3});
    CHECK_THROWS_AS(dihedral_transform(std::vector<int>(6), 2, 3, 1), ContractViolation);
  }

  TEST_CASE("dihedral group table on a labelled 3x3 grid") {
    std::vector<int> g(9);
    std::iota(g.begin(), g.end(), 0);
    std::vector<std::vector<int>> images;
    for (int e = 0; e < 8; ++e) images.push_back(dihedral_transform(g, 3, 3, e));
    CHECK(std::set<std::vector<int>>(images.begin(), images.end()).size() == 8);
    for (int a = 0; a < 8; ++a) {
      bool has_inverse = false;
      for (int b = 0; b < 8; ++b) {
        const auto ab = dihedral_transform(images[a], 3, 3, b);
        const auto it = std::find(images.begin(), images.end(), ab);
        REQUIRE(it != images.end());
        CHECK(int(it - images.begin()) == dihedral_compose(a, b));
        has_inverse = has_inverse || ab == g;
        if (ab == g) CHECK(dihedral_inverse(a) == b);
      }
      CHECK(has_inverse);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) CHECK(images[a][dihedral_target(3, r, c, a)] == g[r * 3 + c]);
    }
  }

  TEST_CASE("allowed elements keep puzzles valid") {
    CHECK(allowed_dihedral_elements(PuzzleType::sudoku4).size() == 8);
    CHECK(allowed_dihedral_elements(PuzzleType::sudoku6) == std::vector<int>{0, 2, 4, 6});
    for (std::uint64_t i = 0; i < 10; ++i) {
      CounterRng rng{55, i};
      const auto p6 = gen_sudoku(6, {14, 22}, rng);
      for (int e : allowed_dihedral_elements(PuzzleType::sudoku6)) {
        const auto t = transform_instance(p6, e);
        CHECK(rows_cols_boxes_ok(digits_of(t.y, 36), 2, 3));
        CHECK(count_solutions(digits_of(t.x, 36), 2, 3, 2) == 1);
      }
      const auto m = gen_maze(7, 7, rng);
      for (int e = 0; e < 8; ++e) {
        const auto t = transform_instance(m, e);
        const auto path = bfs_path(t.x, 7, 7);
        REQUIRE(path.has_value());
        CHECK(std::count(t.y.begin(), t.y.end(), vocab::kPath) == std::ptrdiff_t(path->size() - 2));
      }
    }
  }

  TEST_CASE("property: trajectory samples never contradict the solution") {
    for (std::uint64_t i = 0; i < 300; ++i) {
      CounterRng rng{66, i};
      const auto p = i % 3 == 0 ? gen_maze(7, 7, rng) : gen_sudoku(i % 3 == 1 ? 4 : 6, i % 3 == 1 ? GivensRange{6, 10} : GivensRange{14, 22}, rng);
      CHECK(trajectory_prefix(p, 0).x == p.x);
      CHECK(trajectory_prefix(p, p.solve_order.size()).x == p.y);
      const auto s = trajectory_sample(p, rng);
      CHECK(s.y == p.y);
      for (std::size_t c = 0; c < p.cells(); ++c) {
        const bool filled = s.x[c] != vocab::kBlank && s.x[c] != vocab::kOpen;
        if (filled) REQUIRE(s.x[c] == p.y[c]);
        if (p.x[c] != vocab::kBlank && p.x[c] != vocab::kOpen) REQUIRE(s.x[c] == p.x[c]);
      }
    }
  }

  TEST_CASE("dataset splits, augmentation and determinism") {
    DatasetSpec spec;
    spec.sudoku4 = 100;
    spec.maze = 10;
    spec.val_per_type = 20;
    spec.golden_per_type = 10;
    spec.augmentation = 10;
    spec.seed = 4;
    const auto data = build_dataset(spec);
    CHECK(data.train.size() == 1100);
    CHECK(data.val.size() == 40);
    CHECK(data.golden.size() == 20);
    CHECK(data.seq_len == 49);
    for (const auto* split : {&data.train, &data.val, &data.golden})
      for (const auto& p : *split) CHECK(p.x.size() == 49);

    std::set<std::string> held_ids;
    std::set<std::vector<int>> held_keys;
    for (const auto* split : {&data.val, &data.golden})
      for (const auto& p : *split) {
        held_ids.insert(p.id);
        held_keys.insert(canonical_key(p));
      }
    for (const auto& p : data.train) {
      if (p.id.find('#') != std::string::npos) continue;
      CHECK(held_ids.count(p.id) == 0);
      CHECK(held_keys.count(canonical_key(p)) == 0);
    }
    // First copy of each group is the raw instance.
    CHECK(data.train[0].id.find('#') == std::string::npos);
    CHECK(data.train[1].id == data.train[0].id + "#1");

    TempDir a("ds-a"), b("ds-b");
    write_dataset(data, a.path());
    write_dataset(build_dataset(spec), b.path());
    for (const char* f : {"train.jsonl", "val.jsonl", "golden.jsonl", "manifest.json"})
      CHECK(slurp(a / f) == slurp(b / f));
    const auto manifest = read_manifest(a.path());
    for (const char* split : {"train", "val", "golden"}) {
      const auto text = slurp(a / (std::string(split) + ".jsonl"));
      CHECK(manifest["splits"][split]["count"].get<std::size_t>() ==
            std::size_t(std::count(text.begin(), text.end(), '\n')));
    }
    const auto back = read_split(a / "val.jsonl");
    REQUIRE(back.size() == data.val.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
      CHECK(back[i].id == data.val[i].id);
      CHECK(back[i].x == data.val[i].x);
      CHECK(back[i].y == data.val[i].y);
    }
  }

  TEST_CASE("augmentation factor 1 keeps raw instances; other seeds give disjoint ids") {
    DatasetSpec spec;
    spec.sudoku4 = 50;
    spec.val_per_type = 5;
    spec.seed = 1;
    const auto one = build_dataset(spec);
    CHECK(one.train.size() == 50);
    for (const auto& p : one.train) CHECK(p.id.find('#') == std::string::npos);
    spec.seed = 2;
    const auto two = build_dataset(spec);
    std::set<std::string> ids;
    for (const auto& p : one.train) ids.insert(p.id);
    for (const auto& p : two.train) CHECK(ids.count(p.id) == 0);
  }

  TEST_CASE("answer check ignores pad cells only") {
    CHECK(answer_correct({2, 3, 5}, {2, 3, 0}));
    CHECK_FALSE(answer_correct({2, 4, 0}, {2, 3, 0}));
    CHECK_THROWS_AS(answer_correct({1}, {1, 2}), ContractViolation);
  }
}
