#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "helpers.hpp"
#include "kdaif/distill.hpp"
#include "kdaif/error.hpp"
#include "kdaif/objective.hpp"
#include "kdaif/optimize.hpp"

using namespace kdaif;
using test::mlp;

namespace {

Model fit_logistic(const DatasetBundle& b) {
  const MlpSpec s = mlp({b.dim, b.num_classes});
  const MlpLosses losses = supervised_losses(s, b.train);
  return Model{s, minimize_newton(EmpiricalRisk(losses, 1e-3), init_params(s, 0)).params};
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("blobs are deterministic and well formed") {
    const DatasetBundle a = gen_blobs(test::small_blobs(1));
    const DatasetBundle b = gen_blobs(test::small_blobs(1));
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != gen_blobs(test::small_blobs(2)).fingerprint());
    a.validate();
    CHECK(a.train.size() + a.val.size() + a.test.size() == 120);
    CHECK(a.val.size() * 4 <= a.train.size());
    CHECK(a.noise_mask.size() == a.train.size());
    CHECK(std::none_of(a.noise_mask.begin(), a.noise_mask.end(), [](bool f) { return f; }));
  }

  TEST_CASE("well separated blobs are almost perfectly classified") {
    const DatasetBundle b = gen_blobs(test::small_blobs(3, 10.0));
    const Model m = fit_logistic(b);
    CHECK(metrics(m, b.train).accuracy >= 0.99);
  }

  TEST_CASE("coincident means leave a classifier near chance") {
    BlobsParams p = test::small_blobs(4, 0.0);
    p.per_class = 200;
    const DatasetBundle b = gen_blobs(p);
    const Model m = fit_logistic(b);
    CHECK(std::abs(metrics(m, b.test).accuracy - 1.0 / 3.0) <= 0.15);
  }

  TEST_CASE("two moons") {
    const DatasetBundle b = gen_two_moons(401, 0.05, 5);
    CHECK(b.num_classes == 2);
    CHECK(b.dim == 2);
    std::map<std::size_t, std::size_t> count;
    for (const auto* split : {&b.train, &b.val, &b.test}) {
      for (const auto& z : *split) ++count[z.y];
    }
    CHECK(count[0] + count[1] == 401);
    CHECK(std::max(count[0], count[1]) - std::min(count[0], count[1]) <= 1);
    TrainConfig c;
    c.lr_student = 0.2;
    c.max_steps = 3000;
    c.repeats = 1;
    c.l2_reg = 0.0;
    const DistillationRun r = train_supervised(make_model(mlp({2, 16, 2}), 1), b, c);
    CHECK(metrics(r.student, b.train).accuracy >= 0.99);
  }

  TEST_CASE("noise injection") {
    BlobsParams p = test::small_blobs(6);
    p.per_class = 100;
    const DatasetBundle clean = gen_blobs(p);
    const DatasetBundle noisy = inject_noise(clean, NoiseSpec{0.2, 7});
    const std::size_t n = clean.train.size();
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(noisy.train[i].x == clean.train[i].x);
      CHECK(noisy.train[i].y < clean.num_classes);
      CHECK(noisy.noise_mask[i] == (noisy.train[i].y != clean.train[i].y));
      flipped += noisy.noise_mask[i] ? 1 : 0;
    }
    CHECK(flipped == static_cast<std::size_t>(std::lround(0.2 * n)));
    CHECK(noisy.val == clean.val);
    CHECK(noisy.test == clean.test);
    CHECK(inject_noise(clean, NoiseSpec{0.0, 7}).train == clean.train);
    CHECK(inject_noise(clean, NoiseSpec{0.2, 7}).train == noisy.train);
    CHECK_THROWS_AS(inject_noise(clean, NoiseSpec{1.0, 7}), InputError);

    DatasetBundle one = clean;
    one.num_classes = 1;
    for (auto& z : one.train) z.y = 0;
    CHECK_THROWS_AS(inject_noise(one, NoiseSpec{0.1, 1}), InputError);
  }

  TEST_CASE("validation shift only moves validation features") {
    const DatasetBundle b = gen_blobs(test::small_blobs(8));
    const std::vector<double> shift{1.5, -0.5};
    const DatasetBundle s = shift_validation(b, shift);
    CHECK(s.train == b.train);
    CHECK(s.test == b.test);
    for (std::size_t i = 0; i < b.val.size(); ++i) {
      CHECK(s.val[i].y == b.val[i].y);
      CHECK(s.val[i].x[0] == b.val[i].x[0] + 1.5);
      CHECK(s.val[i].x[1] == b.val[i].x[1] - 0.5);
    }
    CHECK_THROWS_AS(shift_validation(b, std::vector<double>{1.0}), InputError);
  }

  TEST_CASE("metrics") {
    const MlpSpec s = mlp({1, 2});
    // Logits (x, -x): class 0 whenever x > 0.
    const Model m{s, ParamVector(std::vector<double>{1.0, -1.0, 0.0, 0.0})};
    const std::vector<LabeledExample> split{{{2.0}, 0}, {{-1.0}, 0}, {{-3.0}, 1}, {{0.5}, 1}};
    const SplitMetrics r = metrics(m, split);
    CHECK(r.accuracy == 0.5);
    double expect = 0.0;
    for (const auto& z : split) expect += loss_ce(z.y, forward(m, z.x));
    CHECK(r.mean_loss == doctest::Approx(expect / 4.0).epsilon(1e-15));
  }

  TEST_CASE("csv and bundle round trips are exact") {
    const auto dir = test::scratch_dir("data_roundtrip");
    const DatasetBundle b = inject_noise(gen_blobs(test::small_blobs(9)), NoiseSpec{0.1, 2});
    write_examples_csv(dir / "x.csv", b.train, b.dim);
    CHECK(read_examples_csv(dir / "x.csv") == b.train);
    write_bundle(b, dir / "bundle");
    const DatasetBundle r = read_bundle(dir / "bundle");
    CHECK(r.train == b.train);
    CHECK(r.val == b.val);
    CHECK(r.test == b.test);
    CHECK(r.noise_mask == b.noise_mask);
    CHECK(r.num_classes == b.num_classes);
    CHECK(r.fingerprint() == b.fingerprint());
    CHECK_THROWS_AS(read_bundle(dir / "missing"), InputError);
  }

  TEST_CASE("validation size is capped at a quarter of the training set") {
    BlobsParams p = test::small_blobs(10);
    p.split = SplitFractions{0.4, 0.2};
    const DatasetBundle b = gen_blobs(p);
    CHECK(b.val.size() * 4 <= b.train.size());
    CHECK(b.train.size() + b.val.size() + b.test.size() == 120);
    DatasetBundle big = b;
    big.val.insert(big.val.end(), b.train.begin(), b.train.end());
    CHECK_THROWS_AS(big.validate(), InputError);
  }
}
