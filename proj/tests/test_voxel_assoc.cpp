#include <algorithm>
#include <random>
#include <set>
#include <stdexcept>

#include "csmapping/rng.hpp"
#include "csmapping/voxel_assoc.hpp"
#include "doctest.h"

using namespace csmap;

namespace {

GridSpec small_grid(int n = 16, double res = 1.0) {
  GridSpec g;
  g.resolution = res;
  g.width = g.height = n;
  return g;
}

std::vector<CellIndex> block(int x0, int y0, int x1, int y1) {
  std::vector<CellIndex> cells;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) cells.push_back({x, y});
  return cells;
}

}  // namespace

TEST_CASE("accumulate_frame bookkeeping") {
  VoxelObservationMap m(small_grid(), 2);

  SUBCASE("empty detections mark region as background") {
    m.accumulate_frame({}, block(0, 0, 4, 1));
    CHECK(m.total_background() == 10);
    CHECK(m.total_foreground() == 0);
  }

  SUBCASE("foreground plus background increments add up") {
    Detection det;
    det.polyline = Polyline2D{{0.5, 0.5}, {2.5, 0.5}};  // 3 cells
    det.class_id = 1;
    m.accumulate_frame({det}, block(0, 0, 4, 1));
    CHECK(m.total_foreground() == 3);
    CHECK(m.total_background() == 7);
  }

  SUBCASE("detection outside the observed region") {
    Detection det;
    det.polyline = Polyline2D{{10.5, 10.5}, {12.5, 10.5}};
    det.class_id = 2;
    m.accumulate_frame({det}, block(0, 0, 4, 1));
    CHECK(m.total_foreground() == 3);
    CHECK(m.total_background() == 10);
    CHECK(m.count({10, 10}, 2) == 1);
  }

  SUBCASE("class out of range throws") {
    Detection det;
    det.polyline = Polyline2D{{0.5, 0.5}, {2.5, 0.5}};
    det.class_id = 3;
    CHECK_THROWS_AS(m.accumulate_frame({det}, {}), std::invalid_argument);
  }
}

TEST_CASE("accumulation is order independent") {
  auto rng = make_rng(13);
  std::uniform_real_distribution<double> u(0.5, 14.5);
  std::vector<std::vector<Detection>> frames;
  std::vector<std::vector<CellIndex>> regions;
  for (int f = 0; f < 6; ++f) {
    Detection det;
    det.polyline = Polyline2D{{u(rng), u(rng)}, {u(rng), u(rng)}};
    det.class_id = 1 + (f % 2);
    frames.push_back({det});
    regions.push_back(block(2, 2, 9, 9));
  }
  VoxelObservationMap fwd(small_grid(), 2), rev(small_grid(), 2);
  for (std::size_t f = 0; f < frames.size(); ++f) fwd.accumulate_frame(frames[f], regions[f]);
  for (std::size_t f = frames.size(); f-- > 0;) rev.accumulate_frame(frames[f], regions[f]);
  CHECK(fwd.cells() == rev.cells());
}

TEST_CASE("binarize rule and monotonicity") {
  VoxelObservationMap m(small_grid(), 1);
  Detection det;
  det.polyline = Polyline2D{{3.5, 3.2}, {3.5, 3.8}};  // single cell (3,3)
  det.class_id = 1;
  // fg=3, bg=5 on cell (3,3)
  for (int i = 0; i < 3; ++i) m.accumulate_frame({det}, {});
  for (int i = 0; i < 5; ++i) m.accumulate_frame({}, {CellIndex{3, 3}});

  auto sets = m.binarize(0.5);
  REQUIRE(sets.size() == 1);
  CHECK(sets[0].size() == 1);  // 3 > 2.5

  // fg=2, bg=5: not assigned.
  VoxelObservationMap m2(small_grid(), 1);
  for (int i = 0; i < 2; ++i) m2.accumulate_frame({det}, {});
  for (int i = 0; i < 5; ++i) m2.accumulate_frame({}, {CellIndex{3, 3}});
  CHECK(m2.binarize(0.5)[0].empty());

  // bg=0, fg=1: assigned by strict inequality.
  VoxelObservationMap m3(small_grid(), 1);
  m3.accumulate_frame({det}, {});
  CHECK(m3.binarize(0.5)[0].size() == 1);

  // Raising alpha never adds cells.
  const auto lo = m.binarize(0.3);
  const auto hi = m.binarize(0.9);
  CHECK(hi[0].size() <= lo[0].size());

  CHECK_THROWS_AS(m.binarize(0.0), std::invalid_argument);
  CHECK_THROWS_AS(m.binarize(1.0), std::invalid_argument);
}

TEST_CASE("extract_instances components and size threshold") {
  const GridSpec g = small_grid();
  SUBCASE("single blob") {
    auto inst = extract_instances({block(2, 2, 6, 5)}, g);
    REQUIRE(inst.size() == 1);
    CHECK(inst[0].cells.size() == 20);
  }
  SUBCASE("two separated blobs") {
    auto cells = block(0, 0, 2, 2);
    const auto more = block(6, 6, 8, 8);
    cells.insert(cells.end(), more.begin(), more.end());
    auto inst = extract_instances({cells}, g);
    CHECK(inst.size() == 2);
  }
  SUBCASE("tiny blob dropped") {
    auto inst = extract_instances({block(0, 0, 2, 0)}, g);  // 3 cells < 4
    CHECK(inst.empty());
  }
  SUBCASE("diagonal cells stay connected under 8-connectivity") {
    std::vector<CellIndex> diag{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
    auto inst = extract_instances({diag}, g);
    REQUIRE(inst.size() == 1);
    CHECK(inst[0].cells.size() == 4);
  }
}

TEST_CASE("clip_to_cells") {
  const GridSpec g = small_grid();
  const auto cells = block(2, 2, 9, 4);

  SUBCASE("fully inside returned whole") {
    const Polyline2D line{{2.5, 3.5}, {8.5, 3.5}};
    const auto pieces = clip_to_cells(line, cells, g);
    REQUIRE(pieces.size() == 1);
    CHECK(arc_length(pieces[0]) == doctest::Approx(6.0));
    CHECK(pieces[0].vertices.front().x == doctest::Approx(2.5));
    CHECK(pieces[0].vertices.back().x == doctest::Approx(8.5));
  }

  SUBCASE("leave and re-enter splits in two") {
    // Region y in [2,5); line dips below it in the middle.
    Polyline2D line{{2.5, 3.5}, {5.0, 3.5}, {5.0, 0.5}, {6.0, 0.5}, {6.0, 3.5}, {9.0, 3.5}};
    const auto pieces = clip_to_cells(line, cells, g);
    REQUIRE(pieces.size() == 2);
    // Crossing points appear at the region boundary y=2.
    CHECK(pieces[0].vertices.back().y == doctest::Approx(2.0));
    CHECK(pieces[1].vertices.front().y == doctest::Approx(2.0));
  }

  SUBCASE("fully outside yields nothing") {
    const Polyline2D line{{0.5, 10.5}, {9.5, 10.5}};
    CHECK(clip_to_cells(line, cells, g).empty());
  }

  SUBCASE("short fragments are suppressed") {
    // Only ~1 m inside: below the 2 x resolution threshold.
    const Polyline2D line{{1.2, 3.5}, {3.0, 3.5}};
    CHECK(clip_to_cells(line, cells, g).empty());
  }
}

TEST_CASE("clipped segments rasterize inside the instance cell set") {
  auto rng = make_rng(17);
  const GridSpec g = small_grid(32, 0.5);
  const auto cells = block(10, 8, 25, 14);
  std::set<std::uint64_t> cellset;
  for (const auto& c : cells) cellset.insert(VoxelObservationMap::key(c));
  std::uniform_real_distribution<double> u(0.5, 15.5);
  for (int trial = 0; trial < 8; ++trial) {
    Polyline2D line{{u(rng), u(rng)}, {u(rng), u(rng)}, {u(rng), u(rng)}};
    for (const auto& piece : clip_to_cells(line, cells, g)) {
      for (const auto& c : rasterize_polyline(piece, g)) {
        // Rasterized supercover may brush one conservative cell outside at
        // the crossing boundary; the interior must be covered.
        const bool in = cellset.count(VoxelObservationMap::key(c)) > 0;
        const bool edge_adjacent =
            cellset.count(VoxelObservationMap::key({c.x + 1, c.y})) ||
            cellset.count(VoxelObservationMap::key({c.x - 1, c.y})) ||
            cellset.count(VoxelObservationMap::key({c.x, c.y + 1})) ||
            cellset.count(VoxelObservationMap::key({c.x, c.y - 1}));
        CHECK((in || edge_adjacent));
      }
    }
  }
}

TEST_CASE("clip_observations filters by class") {
  const GridSpec g = small_grid();
  LandmarkInstance inst;
  inst.class_id = 2;
  inst.cells = block(2, 2, 9, 4);
  Detection match;
  match.polyline = Polyline2D{{2.5, 3.5}, {8.5, 3.5}};
  match.class_id = 2;
  Detection other = match;
  other.class_id = 1;
  clip_observations(inst, {match, other}, g);
  CHECK(inst.observations.size() == 1);
  CHECK(inst.observations[0].class_id == 2);
}
