#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "alignlab/errors.hpp"
#include "alignlab/synthgen.hpp"
#include "alignlab/tinynet.hpp"
#include "oracles.hpp"

using namespace alignlab;

namespace {

// Continuous inputs so no pre-activation sits on the ReLU kink.
MatrixXd gaussian_batch(Index n, std::uint64_t seed) { return Rng(seed).gaussian(n, 12); }

VectorXd coin_labels(Index n, std::uint64_t seed) {
  Rng rng(seed);
  VectorXd y(n);
  for (Index i = 0; i < n; ++i) y(i) = rng.bit();
  return y;
}

// Logits recomputed by explicit loops over the documented layout.
VectorXd naive_logits(const Mlp& m, const MatrixXd& x) {
  VectorXd out(x.rows());
  for (Index s = 0; s < x.rows(); ++s) {
    VectorXd h = x.row(s).transpose();
    for (std::size_t l = 0; l < m.depth(); ++l) {
      VectorXd next(m.width());
      for (Index o = 0; o < m.width(); ++o) {
        double acc = m.bias(l)(o);
        for (Index i = 0; i < h.size(); ++i) acc += m.weight(l)(o, i) * h(i);
        next(o) = acc > 0 ? acc : 0;
      }
      h = next;
    }
    double logit = m.head_bias();
    for (Index i = 0; i < h.size(); ++i) logit += m.head_weight()(0, i) * h(i);
    out(s) = logit;
  }
  return out;
}

}  // namespace

TEST_CASE("parameter layout") {
  const Mlp m(12, 3);
  CHECK(m.parameter_count() == (12 * 12 + 12) + 2 * (12 * 12 + 12) + 12 + 1);
  CHECK(m.weight_offset(0) == 0);
  CHECK(m.bias_offset(0) == 144);
  CHECK(m.weight_offset(1) == 156);
  CHECK(m.head_offset() == 3 * 156);
  CHECK_THROWS_AS(Mlp(12, 0), Error);
  CHECK_THROWS_AS(Mlp(12, 11), Error);
}

TEST_CASE("init ranges and determinism") {
  const Mlp m = init_mlp(12, 4, 5);
  CHECK(m == init_mlp(12, 4, 5));
  CHECK_FALSE(m == init_mlp(12, 4, 6));
  const double he = std::sqrt(6.0 / 12.0);
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(m.weight(l).cwiseAbs().maxCoeff() <= he);
    CHECK(m.bias(l).isZero());
  }
  CHECK(m.head_weight().cwiseAbs().maxCoeff() <= std::sqrt(3.0 / 12.0));
  CHECK(m.head_bias() == 0.0);
}

TEST_CASE("forward matches explicit loops") {
  Mlp m = init_mlp(12, 3, 9);
  m.parameters() += Rng(2).gaussian(m.parameter_count(), 1) * 0.1;
  const MatrixXd x = gaussian_batch(20, 4);
  const auto fwd = forward_activations(m, x);
  CHECK(fwd.activations.size() == 3);
  CHECK(fwd.activations.back().cols() == 12);
  CHECK((fwd.logits - naive_logits(m, x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("loss is mean binary cross-entropy") {
  Mlp m = init_mlp(12, 2, 1);
  m.parameters() += Rng(3).gaussian(m.parameter_count(), 1) * 0.3;
  const MatrixXd x = gaussian_batch(30, 5);
  const VectorXd y = coin_labels(30, 6);
  const VectorXd z = naive_logits(m, x);
  double expected = 0;
  for (Index i = 0; i < 30; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-z(i)));
    expected -= y(i) * std::log(p) + (1 - y(i)) * std::log(1 - p);
  }
  CHECK(loss(m, x, y) == doctest::Approx(expected / 30).epsilon(1e-12));
}

TEST_CASE("gradient matches central differences") {
  for (std::size_t depth : {1u, 5u, 10u}) {
    for (std::uint64_t batch = 0; batch < 10; ++batch) {
      // Jitter away from the zero-bias init: a dead unit feeding exact zeros
      // downstream would sit on the rectifier kink, where differences are one-sided.
      Mlp m = init_mlp(12, depth, 100 + batch);
      m.parameters() += Rng(400 + batch).gaussian(m.parameter_count(), 1) * 0.1;
      const MatrixXd x = gaussian_batch(16, 200 + batch);
      const VectorXd y = coin_labels(16, 300 + batch);
      const VectorXd g = grad_loss(m, x, y);
      Mlp probe = m;
      const VectorXd fd = oracle::finite_difference(
          [&](const VectorXd& p) {
            probe.parameters() = p;
            return loss(probe, x, y);
          },
          m.parameters());
      const double rel = (g - fd).norm() / std::max(1e-12, g.norm() + fd.norm());
      CHECK(rel < 1e-4);
    }
  }
}

TEST_CASE("training learns a full-redundancy majority task") {
  GenConfig c;
  c.n_train = 4096;
  c.n_val = 1024;
  c.n_test = 1024;
  c.seed = 1;
  const auto ds = generate_dataset(c);
  TrainConfig tc;
  tc.epochs = 60;
  tc.seed = 4;
  const auto r = train_model(init_mlp(12, 1, 3), ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, tc);
  CHECK(r.history.size() == 60);
  CHECK(r.best_val_acc >= 0.95);
  CHECK(evaluate_accuracy(r.model, ds.test.x1, ds.test.y) >= 0.95);
  // the returned model is the checkpoint of the best epoch
  CHECK(evaluate_accuracy(r.model, ds.val.x1, ds.val.y) == r.best_val_acc);
  CHECK(r.history[r.best_epoch - 1].val_acc == r.best_val_acc);
  for (std::size_t e = 0; e + 1 < r.best_epoch; ++e) CHECK(r.history[e].val_acc < r.best_val_acc);

  const auto again = train_model(init_mlp(12, 1, 3), ds.train.x1, ds.train.y, ds.val.x1, ds.val.y, tc);
  CHECK(again.model == r.model);
}

TEST_CASE("divergence is reported") {
  const MatrixXd x = gaussian_batch(64, 1);
  const VectorXd y = coin_labels(64, 2);
  TrainConfig tc;
  tc.learning_rate = 1e300;
  tc.epochs = 5;
  CHECK_THROWS_AS(train_model(init_mlp(12, 2, 1), x, y, x, y, tc), DivergedTrainingError);
}

TEST_CASE("weight decay shrinks parameters without a gradient signal") {
  // zero inputs and balanced labels leave only the head bias gradient
  const MatrixXd x = MatrixXd::Zero(8, 12);
  VectorXd y(8);
  y << 0, 1, 0, 1, 0, 1, 0, 1;
  const Mlp init = init_mlp(12, 1, 5);
  TrainConfig tc;
  tc.epochs = 3;
  tc.weight_decay = 0.1;
  tc.learning_rate = 0.1;
  const auto r = train_model(init, x, y, x, y, tc);
  // best epoch is the first one (accuracy is flat), after one AdamW step
  const double factor = 1.0 - 0.1 * 0.1;
  CHECK((r.model.weight(0) - init.weight(0) * factor).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("save and load") {
  const Mlp m = init_mlp(12, 3, 8);
  const auto path = std::filesystem::temp_directory_path() / "alignlab_mlp.bin";
  m.save(path);
  CHECK(Mlp::load(path) == m);
  std::filesystem::remove(path);
}
