#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "alignlab/errors.hpp"
#include "alignlab/synthgen.hpp"
#include "oracles.hpp"

using namespace alignlab;

namespace {

BitMatrix bits(std::initializer_list<std::initializer_list<int>> rows) {
  BitMatrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (auto row : rows) {
    Index j = 0;
    for (int v : row) m(i, j++) = static_cast<std::uint8_t>(v);
    ++i;
  }
  return m;
}

std::size_t popcount(const BitVector& v) { return static_cast<std::size_t>(v.cast<int>().sum()); }

GenConfig small(std::size_t r, std::size_t u, LabelFn fn = LabelFn::MajorityTiebreak) {
  GenConfig c;
  c.n_train = 512;
  c.n_val = 128;
  c.n_test = 128;
  c.redundant = r;
  c.unique = u;
  c.label_fn = fn;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("component shapes and determinism") {
  GenConfig c;
  Rng a(5);
  Rng b(5);
  const auto x = sample_components(c, 4, a);
  const auto y = sample_components(c, 4, b);
  CHECK(x.x_r.rows() == 4);
  CHECK(x.x_r.cols() == 8);
  CHECK(x.x_u1.cols() == 4);
  CHECK(x.x_u2.cols() == 4);
  CHECK(x.x_r == y.x_r);
  CHECK(x.x_u1 == y.x_u1);
  CHECK(x.x_u2 == y.x_u2);
  Rng e(1);
  CHECK_THROWS_AS(sample_components(c, 0, e), EmptyDatasetError);
}

TEST_CASE("components are fair coins") {
  GenConfig c;
  Rng rng(17);
  const auto x = sample_components(c, 10000, rng);
  for (const BitMatrix* m : {&x.x_r, &x.x_u1, &x.x_u2}) {
    for (Index j = 0; j < m->cols(); ++j) {
      const double mean = m->col(j).cast<double>().mean();
      CHECK(mean >= 0.45);
      CHECK(mean <= 0.55);
    }
  }
}

TEST_CASE("prefix masks") {
  auto m = build_masks(8, 0, 8, 4);
  CHECK(popcount(m.m_r) == 8);
  CHECK(popcount(m.m_u1) == 0);
  CHECK(popcount(m.m_u2) == 0);

  m = build_masks(0, 8, 8, 4);
  CHECK(popcount(m.m_u1) == 4);
  CHECK(popcount(m.m_u2) == 4);

  m = build_masks(5, 3, 8, 4);
  CHECK(popcount(m.m_r) == 5);
  CHECK(popcount(m.m_u1) == 2);
  CHECK(popcount(m.m_u2) == 1);
  // prefix ones
  CHECK(m.m_u1(0) == 1);
  CHECK(m.m_u1(1) == 1);
  CHECK(m.m_u1(2) == 0);
  CHECK(m.m_r(4) == 1);
  CHECK(m.m_r(5) == 0);

  CHECK_THROWS_AS(build_masks(9, 0, 8, 4), ConfigError);
  CHECK_THROWS_AS(build_masks(0, 10, 8, 4), ConfigError);
}

TEST_CASE("mask budget always equals the task-feature count") {
  for (std::size_t u = 0; u <= 8; ++u) CHECK(build_masks(8 - u, u, 8, 4).selected() == 8);
}

TEST_CASE("OR labels with one unique bit") {
  // U=1: the single unique bit sits in x_u1. Redundant block all zero.
  const TaskMasks masks = build_masks(0, 1, 2, 2);
  BitComponents comp{bits({{0, 0}, {0, 0}}), bits({{1, 0}, {0, 0}}), bits({{0, 0}, {0, 1}})};
  const auto y = compute_labels(comp, masks, LabelFn::Or);
  CHECK(y(0) == 1);  // u1 = 1 drives y
  CHECK(y(1) == 0);  // x2's bit is not selected, so x2 alone cannot make y = 1
}

TEST_CASE("OR labels with two unique bits") {
  const TaskMasks masks = build_masks(0, 2, 2, 2);
  BitComponents comp{bits({{0, 0}}), bits({{0, 1}}), bits({{0, 1}})};
  CHECK(compute_labels(comp, masks, LabelFn::Or)(0) == 0);
  comp.x_u2 = bits({{1, 0}});
  CHECK(compute_labels(comp, masks, LabelFn::Or)(0) == 1);
}

TEST_CASE("majority unanimity and tie-break") {
  const TaskMasks masks = build_masks(2, 2, 4, 2);
  BitComponents comp{bits({{0, 0, 1, 1}, {1, 1, 0, 0}, {1, 0, 0, 0}, {0, 1, 0, 0}}),
                     bits({{0, 1}, {1, 0}, {0, 0}, {0, 0}}), bits({{0, 1}, {1, 0}, {1, 0}, {1, 0}})};
  const auto y = compute_labels(comp, masks, LabelFn::MajorityTiebreak);
  CHECK(y(0) == 0);  // all selected bits 0
  CHECK(y(1) == 1);  // all selected bits 1
  CHECK(y(2) == 1);  // 2 of 4, first selected bit is 1
  CHECK(y(3) == 0);  // 2 of 4, first selected bit is 0
}

TEST_CASE("parity labels") {
  const TaskMasks masks = build_masks(3, 0, 3, 1);
  BitComponents comp{bits({{1, 1, 0}, {1, 1, 1}}), bits({{1}, {0}}), bits({{0}, {1}})};
  const auto y = compute_labels(comp, masks, LabelFn::Parity);
  CHECK(y(0) == 0);
  CHECK(y(1) == 1);
}

TEST_CASE("no selected bits is rejected") {
  TaskMasks masks = build_masks(0, 0, 8, 4);
  GenConfig c;
  Rng rng(2);
  CHECK_THROWS_AS(compute_labels(sample_components(c, 3, rng), masks, LabelFn::Or), ConfigError);
}

TEST_CASE("labels depend on selected bits only") {
  for (std::size_t u : {0u, 3u, 8u}) {
    GenConfig c = small(8 - u, u);
    const TaskMasks masks = build_masks(c.redundant, c.unique, c.redundant_dim, c.unique_dim);
    Rng rng(u + 100);
    auto comp = sample_components(c, 1000, rng);
    const auto y = compute_labels(comp, masks, c.label_fn);
    Rng pick(7);
    for (int t = 0; t < 1000; ++t) {
      const Index row = static_cast<Index>(pick.below(1000));
      // pick an unselected position among the three blocks
      std::vector<std::pair<BitMatrix*, Index>> free;
      for (Index j = 0; j < 8; ++j)
        if (!masks.m_r(j)) free.emplace_back(&comp.x_r, j);
      for (Index j = 0; j < 4; ++j) {
        if (!masks.m_u1(j)) free.emplace_back(&comp.x_u1, j);
        if (!masks.m_u2(j)) free.emplace_back(&comp.x_u2, j);
      }
      const auto [block, col] = free[pick.below(free.size())];
      (*block)(row, col) ^= 1;
      const auto y2 = compute_labels(comp, masks, c.label_fn);
      REQUIRE(y2 == y);
      (*block)(row, col) ^= 1;
    }
  }
}

TEST_CASE("majority label marginal matches exact enumeration") {
  GenConfig c;
  c.n_train = 20000;
  c.n_val = 1;
  c.n_test = 1;
  c.seed = 3;
  const auto ds = generate_dataset(c);
  const double p = oracle::majority_marginal(8);
  const double mean = ds.train.y.mean();
  CHECK(mean >= 0.45);
  CHECK(mean <= 0.55);
  // 5 sigma of a binomial proportion
  CHECK(std::abs(mean - p) < 5.0 * std::sqrt(p * (1 - p) / 20000.0));
}

TEST_CASE("dataset layout at full redundancy") {
  const auto ds = generate_dataset(small(8, 0));
  CHECK(ds.train.x1.cols() == 12);
  CHECK(ds.train.x2.cols() == 12);
  CHECK(ds.train.x1.leftCols(8) == ds.train.x2.leftCols(8));
  CHECK(ds.train.x1.rightCols(4) != ds.train.x2.rightCols(4));
  // y is the majority of the redundant block with the first-bit tie-break
  for (Index i = 0; i < ds.train.rows(); ++i) {
    const double s = ds.train.x1.row(i).head(8).sum();
    const double expected = s > 4 ? 1.0 : (s < 4 ? 0.0 : ds.train.x1(i, 0));
    REQUIRE(ds.train.y(i) == expected);
  }
  CHECK(ds.d_phi == 0);
}

TEST_CASE("same seed, same dataset; splits differ") {
  const auto a = generate_dataset(small(4, 4));
  const auto b = generate_dataset(small(4, 4));
  CHECK(a.train.x1 == b.train.x1);
  CHECK(a.test.x2 == b.test.x2);
  CHECK(a.val.y == b.val.y);
  CHECK(a.val.x1 != a.test.x1);
  auto c = small(4, 4);
  c.seed = 12;
  CHECK(generate_dataset(c).train.x1 != a.train.x1);
}

TEST_CASE("config validation") {
  GenConfig c = small(8, 1);
  CHECK_THROWS_AS(c.validate(), ConfigError);  // 9 task features with budget 8
  c = small(8, 0);
  c.n_train = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("csv export") {
  const auto path = std::filesystem::temp_directory_path() / "alignlab_synth.csv";
  auto c = small(6, 2);
  c.n_train = 3;
  c.n_val = 2;
  c.n_test = 1;
  const auto ds = generate_dataset(c);
  export_dataset_csv(ds, path);
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("split,x1_0,", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
  CHECK(std::filesystem::exists(path.string() + ".meta"));
  std::filesystem::remove(path);
  std::filesystem::remove(path.string() + ".meta");
}
