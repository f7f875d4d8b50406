#include <gtest/gtest.h>

#include "support.hpp"
#include "vanguard/geometry.hpp"

using namespace vanguard::geometry;

TEST(Iou, IdenticalBoxes) {
  const Box a{0.1, 0.1, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
}

TEST(Iou, CornerOverlapNinth) {
  EXPECT_NEAR(iou({0, 0, 1, 1}, {2.0 / 3, 2.0 / 3, 1, 1}), 1.0 / 9, 1e-12);
}

TEST(Iou, Disjoint) { EXPECT_EQ(iou({0, 0, 0.1, 0.1}, {0.5, 0.5, 0.6, 0.6}), 0.0); }

TEST(Iou, DegenerateBoxesGiveZero) {
  const Box line{0.2, 0.2, 0.2, 0.8};
  EXPECT_EQ(iou(line, line), 0.0);
  EXPECT_EQ(iou(line, {0, 0, 1, 1}), 0.0);
  const Box point{0.5, 0.5, 0.5, 0.5};
  EXPECT_EQ(giou(point, point), 0.0);
}

TEST(Giou, Identity) { EXPECT_DOUBLE_EQ(giou({0.2, 0.3, 0.6, 0.9}, {0.2, 0.3, 0.6, 0.9}), 1.0); }

TEST(Giou, OppositeCorners) {
  EXPECT_NEAR(giou({0, 0, 1.0 / 3, 1.0 / 3}, {2.0 / 3, 2.0 / 3, 1, 1}), -7.0 / 9, 1e-12);
}

TEST(Giou, TouchingHalves) { EXPECT_NEAR(giou({0, 0, 0.5, 1}, {0.5, 0, 1, 1}), 0.0, 1e-12); }

TEST(Bins, Corners) {
  EXPECT_EQ(to_bins({0, 0, 1, 1}), BinBox::make(0, 0, 1000, 1000));
  const auto b = from_bins(BinBox::make(1000, 1000, 1000, 1000));
  EXPECT_EQ(b.x1, 1.0);
  EXPECT_EQ(b.y2, 1.0);
}

TEST(Bins, ManBoxFromFigure) {
  EXPECT_EQ(to_bins({0.247, 0.318, 0.448, 0.853}), BinBox::make(247, 318, 448, 853));
}

TEST(Bins, HalfRoundsUp) {
  // 0.0625 and 0.1875 are exact in binary, so the products are exact halves.
  EXPECT_EQ(to_bins({0.0625, 0, 0.1875, 1}).v[0], 63);
  EXPECT_EQ(to_bins({0.0625, 0, 0.1875, 1}).v[2], 188);
}

TEST(Bins, OutOfRangeThrows) {
  EXPECT_THROW(BinBox::make(0, 0, 1001, 5), std::out_of_range);
  EXPECT_THROW(BinBox::make(-1, 0, 10, 5), std::out_of_range);
  BinBox raw;
  raw.v = {0, 0, 2000, 10};
  EXPECT_THROW(from_bins(raw), std::out_of_range);
}

TEST(Bins, RoundTripWithinHalfBin) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    const Box b = vt::random_box(rng, 0.0);
    const Box r = from_bins(to_bins(b));
    ASSERT_LE(std::abs(r.x1 - b.x1), 5e-4 + 1e-12);
    ASSERT_LE(std::abs(r.y1 - b.y1), 5e-4 + 1e-12);
    ASSERT_LE(std::abs(r.x2 - b.x2), 5e-4 + 1e-12);
    ASSERT_LE(std::abs(r.y2 - b.y2), 5e-4 + 1e-12);
  }
}

TEST(AreaFraction, Examples) {
  EXPECT_DOUBLE_EQ(area_fraction({0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(area_fraction({0, 0, 0.5, 0.5}), 0.25);
  EXPECT_NEAR(area_fraction({0.1, 0.1, 0.9, 0.7}), 0.48, 1e-12);
}

TEST(Box, MakeRejectsInverted) {
  EXPECT_THROW(Box::make(0.5, 0, 0.4, 1), std::invalid_argument);
  EXPECT_THROW(Box::make(0, 0, 1.2, 1), std::invalid_argument);
}

TEST(IouProperties, BoundsAndSymmetry) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5000; ++i) {
    const Box a = vt::random_box(rng), b = vt::random_box(rng);
    const double ab = iou(a, b), g = giou(a, b);
    ASSERT_GE(ab, 0.0);
    ASSERT_LE(ab, 1.0);
    ASSERT_LE(g, ab + 1e-15);
    ASSERT_GT(g, -1.0);
    ASSERT_EQ(ab, iou(b, a));
    ASSERT_EQ(g, giou(b, a));
    ASSERT_NEAR(giou(a, a), 1.0, 1e-15);
  }
}

TEST(LabelMatch, Examples) {
  EXPECT_TRUE(label_match("man", "man in white shirt"));
  EXPECT_TRUE(label_match("man in white shirt", "man"));
  EXPECT_TRUE(label_match("car", "car"));
  EXPECT_TRUE(label_match(" Car ", "car"));
  EXPECT_FALSE(label_match("ladder", "wall"));
}

namespace {
Candidate cand(std::size_t q, Box b, double conf) { return {q, {"man", b, conf}}; }
}  // namespace

TEST(GreedyDedup, OverlappingSecondBoxSkipped) {
  const Box a{0.1, 0.1, 0.5, 0.9};
  const Box a2{0.1, 0.1, 0.5, 0.86};  // IoU with a = 0.95
  ASSERT_GT(iou(a, a2), 0.9 - 1e-9);
  const Box b{0.6, 0.1, 0.9, 0.9};
  const std::vector<Candidate> c = {cand(0, a, 0.9), cand(0, a2, 0.8), cand(1, a2, 0.8), cand(1, b, 0.6)};
  const auto out = greedy_dedup(c, 2);
  ASSERT_EQ(out.pairs.size(), 2u);
  EXPECT_EQ(out.pairs[0], (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(out.pairs[1], (std::pair<std::size_t, std::size_t>{1, 3}));
  EXPECT_TRUE(out.unmatched.empty());
}

TEST(GreedyDedup, SingleCandidate) {
  const std::vector<Candidate> c = {cand(0, {0, 0, 0.2, 0.2}, 0.5)};
  const auto out = greedy_dedup(c, 1);
  ASSERT_EQ(out.pairs.size(), 1u);
}

TEST(GreedyDedup, IdenticalBoxesOnlyOneAssigned) {
  const Box a{0.2, 0.2, 0.4, 0.4};
  const std::vector<Candidate> c = {cand(0, a, 0.7), cand(1, a, 0.8), cand(2, a, 0.6)};
  const auto out = greedy_dedup(c, 3);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0].first, 1u);
  EXPECT_EQ(out.unmatched, (std::vector<std::size_t>{0, 2}));
}

TEST(GreedyDedup, TiesKeepInputOrder) {
  const Box a{0.2, 0.2, 0.4, 0.4};
  const std::vector<Candidate> c = {cand(1, a, 0.5), cand(0, a, 0.5)};
  const auto out = greedy_dedup(c, 2);
  ASSERT_EQ(out.pairs.size(), 1u);
  EXPECT_EQ(out.pairs[0], (std::pair<std::size_t, std::size_t>{1, 0}));
}

TEST(GreedyDedup, RandomInvariants) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 500; ++t) {
    const std::size_t nq = 1 + vanguard::uniform_index(rng, 5);
    std::vector<Candidate> c;
    const std::size_t n = vanguard::uniform_index(rng, 12);
    for (std::size_t i = 0; i < n; ++i) {
      c.push_back(cand(vanguard::uniform_index(rng, nq), vt::random_small_box(rng), vt::unit(rng)));
    }
    const auto out = greedy_dedup(c, nq);
    std::set<std::size_t> dets, queries;
    for (auto [q, d] : out.pairs) {
      ASSERT_TRUE(dets.insert(d).second);
      ASSERT_TRUE(queries.insert(q).second);
      ASSERT_EQ(c[d].query, q);
    }
    ASSERT_EQ(out.pairs.size() + out.unmatched.size(), nq);
    for (std::size_t i = 0; i < out.pairs.size(); ++i) {
      for (std::size_t j = i + 1; j < out.pairs.size(); ++j) {
        ASSERT_LE(iou(c[out.pairs[i].second].detection.box, c[out.pairs[j].second].detection.box), 0.5);
      }
    }
  }
}

TEST(GreedyBestMatch, IdenticalSets) {
  const std::vector<Box> b = {{0, 0, 0.3, 0.3}, {0.5, 0.5, 0.9, 0.9}};
  const auto m = greedy_best_match(b, b);
  ASSERT_EQ(m.assignment.pairs.size(), 2u);
  EXPECT_DOUBLE_EQ(m.ious[0], 1.0);
  EXPECT_DOUBLE_EQ(m.ious[1], 1.0);
}

TEST(GreedyBestMatch, PicksHigherIou) {
  const Box p{0.0, 0.0, 0.5, 0.5};
  const Box g1{0.0, 0.0, 0.5, 0.3};    // IoU 0.6
  const Box g2{0.4, 0.0, 0.9, 0.5};    // IoU small
  ASSERT_NEAR(iou(p, g1), 0.6, 1e-12);
  const auto m = greedy_best_match(std::vector<Box>{p}, std::vector<Box>{g1, g2});
  ASSERT_EQ(m.assignment.pairs.size(), 1u);
  EXPECT_EQ(m.assignment.pairs[0].second, 0u);
  EXPECT_EQ(m.unmatched_gts, (std::vector<std::size_t>{1}));
}

TEST(GreedyBestMatch, DisjointSetsNoMatch) {
  const auto m = greedy_best_match(std::vector<Box>{{0, 0, 0.1, 0.1}}, std::vector<Box>{{0.5, 0.5, 0.6, 0.6}});
  EXPECT_TRUE(m.assignment.pairs.empty());
}

// Greedy does not maximize the number of matched pairs: P1 takes G1 (0.95),
// leaving P2 (which only overlaps G1) unmatched, although P1-G2 + P2-G1 would
// match both.
TEST(GreedyBestMatch, DoesNotMaximizeMatchCount) {
  const Box g1{0.0, 0.0, 0.4, 0.4};
  const Box p1{0.0, 0.0, 0.4, 0.38};      // IoU with g1 = 0.95
  const Box g2{0.36, 0.0, 0.76, 0.4};     // touches p1 slightly
  const Box p2{0.0, 0.3, 0.2, 0.5};       // overlaps g1 only
  ASSERT_GT(iou(p1, g2), 0.0);
  ASSERT_GT(iou(p2, g1), 0.0);
  ASSERT_EQ(iou(p2, g2), 0.0);
  const auto m = greedy_best_match(std::vector<Box>{p1, p2}, std::vector<Box>{g1, g2});
  EXPECT_EQ(m.assignment.pairs.size(), 1u);
}

TEST(GreedyBestMatch, AgreesWithLexicographicBruteForce) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 300; ++t) {
    std::vector<Box> p(vanguard::uniform_index(rng, 6)), g(vanguard::uniform_index(rng, 6));
    for (auto& b : p) b = vt::random_small_box(rng);
    for (auto& b : g) b = vt::random_small_box(rng);
    auto got = greedy_best_match(p, g).assignment.pairs;
    std::sort(got.begin(), got.end());
    ASSERT_EQ(got, vt::brute_best_match(p, g)) << "instance " << t;
  }
}

TEST(Hungarian, Examples) {
  auto r = hungarian({{0, 1}, {1, 0}});
  EXPECT_EQ(r.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}}));
  EXPECT_EQ(r.total_cost, 0.0);
  r = hungarian({{4, 1}, {2, 3}});
  EXPECT_EQ(r.pairs, (std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}}));
  EXPECT_EQ(r.total_cost, 3.0);
  r = hungarian({{7}});
  EXPECT_EQ(r.pairs.size(), 1u);
  EXPECT_EQ(r.total_cost, 7.0);
  EXPECT_TRUE(hungarian({}).pairs.empty());
}

TEST(Hungarian, Rectangular) {
  const auto r = hungarian({{5, 1, 9}, {2, 8, 0}});
  EXPECT_EQ(r.total_cost, 1.0);
  const auto t = hungarian({{5, 2}, {1, 8}, {9, 0}});
  EXPECT_EQ(t.pairs.size(), 2u);
  EXPECT_EQ(t.total_cost, 1.0);
}

TEST(Hungarian, RejectsBadInput) {
  EXPECT_THROW(hungarian({{1, 2}, {3}}), std::invalid_argument);
  EXPECT_THROW(hungarian({{std::nan("")}}), std::invalid_argument);
}

TEST(Hungarian, MatchesPermutationBruteForce) {
  std::mt19937_64 rng(13);
  for (int t = 0; t < 400; ++t) {
    const std::size_t r = 1 + vanguard::uniform_index(rng, 6), c = 1 + vanguard::uniform_index(rng, 6);
    std::vector<std::vector<double>> cost(r, std::vector<double>(c));
    for (auto& row : cost) {
      for (auto& x : row) x = t % 2 ? static_cast<double>(vanguard::uniform_index(rng, 5)) : vt::unit(rng) * 10;
    }
    const auto h = hungarian(cost);
    ASSERT_EQ(h.pairs.size(), std::min(r, c));
    double total = 0.0;
    std::set<std::size_t> rows, cols;
    for (auto [i, j] : h.pairs) {
      total += cost[i][j];
      ASSERT_TRUE(rows.insert(i).second);
      ASSERT_TRUE(cols.insert(j).second);
    }
    ASSERT_NEAR(total, h.total_cost, 1e-9);
    ASSERT_NEAR(h.total_cost, vt::brute_min_cost(cost), 1e-9);
  }
}
