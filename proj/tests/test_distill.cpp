#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "helpers.hpp"
#include "kdaif/distill.hpp"
#include "kdaif/error.hpp"

using namespace kdaif;
using test::mlp;

namespace {

struct Setup {
  DatasetBundle data;
  Model teacher;
  Model student;
  TrainConfig config;
};

Setup setup(std::uint64_t seed = 1, double noise = 0.1) {
  BlobsParams p = test::small_blobs(seed, 3.0);
  p.per_class = 50;
  Setup s;
  s.data = inject_noise(gen_blobs(p), NoiseSpec{noise, seed});
  s.teacher = make_model(mlp({2, 6, 3}), seed + 100);
  s.student = make_model(mlp({2, 3}), seed);
  s.config.max_steps = 20;
  s.config.repeats = 3;
  s.config.batch_size = 16;
  s.config.seed = seed;
  return s;
}

KdaifOptions options(Mechanism m, bool unit = false) {
  KdaifOptions o;
  o.mechanism.id = m;
  o.force_unit_weights = unit;
  return o;
}

DistillationRun run_kdaif(const Setup& s, const KdaifOptions& o) {
  return train_kdaif(s.teacher, s.student, s.data, s.config, o);
}

}  // namespace

TEST_SUITE("distill") {
  TEST_CASE("mechanism names round trip") {
    for (auto m : {Mechanism::kd_baseline, Mechanism::m1_student_only, Mechanism::m2_teacher_only,
                   Mechanism::m3_both, Mechanism::m4_both_history}) {
      CHECK(parse_mechanism(mechanism_name(m)) == m);
    }
    CHECK_THROWS_AS(parse_mechanism("m5"), InputError);
    MechanismSpec spec;
    spec.history_decay = 0.0;
    CHECK_THROWS_AS(spec.validate(), InputError);
    spec.history_decay = 1.0;
    CHECK_NOTHROW(spec.validate());
  }

  TEST_CASE("vanilla distillation with alpha = 1 is supervised training") {
    Setup s = setup();
    s.config.alpha = 1.0;
    const auto kd = train_vanilla_kd(s.teacher, s.student, s.data, s.config);
    const auto sup = train_supervised(s.student, s.data, s.config);
    CHECK(kd.student.params == sup.student.params);
  }

  TEST_CASE("online distillation with alpha = 1 trains the teacher on labels alone") {
    Setup s = setup();
    s.config.alpha = 1.0;
    const auto a = train_online_kd(s.teacher, s.student, s.data, s.config);
    const auto b = train_online_kd(s.teacher, make_model(s.student.spec, 99), s.data, s.config);
    CHECK(a.teacher.params == b.teacher.params);
  }

  TEST_CASE("unit weights reduce the mechanisms to plain distillation") {
    const Setup s = setup();
    const auto online = train_online_kd(s.teacher, s.student, s.data, s.config);
    const auto vanilla = train_vanilla_kd(s.teacher, s.student, s.data, s.config);
    CHECK(run_kdaif(s, options(Mechanism::m3_both, true)).student.params == online.student.params);
    CHECK(run_kdaif(s, options(Mechanism::m3_both, true)).teacher.params == online.teacher.params);
    CHECK(run_kdaif(s, options(Mechanism::kd_baseline)).student.params == online.student.params);
    CHECK(run_kdaif(s, options(Mechanism::m1_student_only, true)).student.params == vanilla.student.params);
    const auto unit = run_kdaif(s, options(Mechanism::m3_both, true));
    REQUIRE(unit.influence.size() == s.config.repeats);
    for (double w : unit.influence[0].weights) CHECK(w == 1.0);
  }

  TEST_CASE("history smoothing reductions") {
    Setup s = setup();
    SUBCASE("a single outer iteration has no history") {
      s.config.repeats = 1;
      auto o = options(Mechanism::m4_both_history);
      o.mechanism.history_decay = 0.9;
      CHECK(run_kdaif(s, o).student.params == run_kdaif(s, options(Mechanism::m3_both)).student.params);
    }
    SUBCASE("vanishing decay") {
      auto o = options(Mechanism::m4_both_history);
      o.mechanism.history_decay = 1e-300;
      const auto a = run_kdaif(s, o);
      const auto b = run_kdaif(s, options(Mechanism::m3_both));
      CHECK(a.student.params == b.student.params);
    }
  }

  TEST_CASE("runs are deterministic and independent of the thread count") {
    const Setup s = setup(2);
    auto o = options(Mechanism::m3_both);
    const auto a = run_kdaif(s, o);
    o.jobs = 4;
    const auto b = run_kdaif(s, o);
    CHECK(a.student.params == b.student.params);
    CHECK(a.teacher.params == b.teacher.params);
    REQUIRE(a.influence.size() == b.influence.size());
    CHECK(a.influence.back().weights == b.influence.back().weights);
    CHECK(a.metrics.size() == s.config.repeats);
    CHECK(a.metrics.back().step == s.config.repeats * s.config.max_steps);
  }

  TEST_CASE("influence weights lie in the open interval (0, 2)") {
    const Setup s = setup(3, 0.2);
    for (const auto& r : run_kdaif(s, options(Mechanism::m3_both)).influence) {
      for (double w : r.weights) {
        CHECK(w > 0.0);
        CHECK(w < 2.0);
      }
    }
  }

  TEST_CASE("input errors") {
    Setup s = setup();
    Setup overlap = s;
    overlap.data.val[0].x = overlap.data.train[0].x;
    CHECK_THROWS_AS(run_kdaif(overlap, options(Mechanism::m3_both)), InputError);
    Setup noval = s;
    noval.data.val.clear();
    CHECK_THROWS_AS(run_kdaif(noval, options(Mechanism::m3_both)), InputError);
    Setup wrong = s;
    wrong.student = make_model(mlp({2, 4}), 0);
    CHECK_THROWS_AS(train_online_kd(wrong.teacher, wrong.student, wrong.data, wrong.config), InputError);
  }

  TEST_CASE("divergence is reported with the iteration") {
    Setup s = setup();
    s.config.divergence_threshold = 1e-3;
    try {
      (void)train_online_kd(s.teacher, s.student, s.data, s.config);
      FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
      CHECK(std::string(e.what()).find("outer iteration 0") != std::string::npos);
    }
  }

  TEST_CASE("a step with zero learning rate leaves the parameters unchanged") {
    const Setup s = setup();
    const std::size_t idx[] = {0, 1, 2, 3};
    ParamVector th = s.student.params;
    sgd_step(th, student_losses(s.student.spec, &s.teacher, s.data.train, 0.6, idx), {}, 1e-3, 0.0);
    CHECK(th == s.student.params);
    ParamVector tt = s.teacher.params;
    sgd_step(tt, teacher_losses(s.teacher.spec, s.student, s.data.train, 0.6, idx), {}, 1e-3, 0.0);
    CHECK(tt == s.teacher.params);
    Setup bad = s;
    bad.config.lr_student = 0.0;
    CHECK_THROWS_AS(train_online_kd(bad.teacher, bad.student, bad.data, bad.config), InputError);
  }

  TEST_CASE("self-distillation lowers the loss on a fixed batch") {
    const Setup s = setup();
    const std::size_t idx[] = {0, 1, 2, 3, 4, 5, 6, 7};
    const MlpSpec spec = mlp({2, 6, 3});
    const Model self = make_model(spec, 8);
    ParamVector th = self.params;
    const MlpLosses batch = student_losses(spec, &self, s.data.train, 0.0, idx);
    const double before = EmpiricalRisk(batch).value(th.span());
    sgd_step(th, batch, {}, 0.0, 1e-2);
    CHECK(EmpiricalRisk(batch).value(th.span()) <= before);
  }

  TEST_CASE("distillation from a trained teacher is competitive with supervised training") {
    Setup s = setup(4, 0.0);
    BlobsParams p = test::small_blobs(4, 3.0);
    p.per_class = 400;
    s.data = gen_blobs(p);
    s.config.max_steps = 200;
    s.config.warmup_steps = 2000;
    const auto sup = train_supervised(s.student, s.data, s.config);
    const auto kd = train_vanilla_kd(s.teacher, s.student, s.data, s.config);
    const double kd_acc = metrics(kd.student, s.data.test).accuracy;
    const double sup_acc = metrics(sup.student, s.data.test).accuracy;
    CAPTURE(metrics(kd.teacher, s.data.test).accuracy);
    CHECK(kd_acc >= sup_acc - 0.02);
  }

  TEST_CASE("the student moves toward a frozen teacher") {
    Setup s = setup(5, 0.0);
    s.config.alpha = 0.0;
    const auto r = train_vanilla_kd(s.teacher, s.student, s.data, s.config);
    double before = 0.0, after = 0.0;
    for (const auto& z : s.data.train) {
      before += loss_kd(z.x, r.teacher, s.student);
      after += loss_kd(z.x, r.teacher, r.student);
    }
    CHECK(after < before);
  }

  TEST_CASE("pseudo-labels") {
    const MlpSpec t = mlp({2, 3});
    const Model zero{t, ParamVector(t.param_count(), 0.0)};
    const std::vector<std::vector<double>> xs{{1.0, 2.0}, {-3.0, 0.5}};
    for (const auto& q : pseudo_label(zero, xs)) {
      for (double v : q.p) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    }
    const Model m = make_model(t, 3);
    const auto qs = pseudo_label(m, xs);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      CHECK(qs[i].is_valid());
      const auto l = logits(t, m.params, xs[i]);
      CHECK(qs[i].argmax() == static_cast<std::size_t>(std::max_element(l.begin(), l.end()) - l.begin()));
    }
  }

  TEST_CASE("labeled pools are class balanced") {
    BlobsParams p = test::small_blobs(6);
    p.per_class = 60;
    const DatasetBundle b = gen_blobs(p);
    const auto pools = make_pools(b, 30, 1);
    CHECK(pools.labeled.size() == 30);
    CHECK(pools.unlabeled.size() == b.train.size() - 30);
    std::map<std::size_t, std::size_t> count;
    for (const auto& z : pools.labeled) ++count[z.y];
    for (std::size_t c = 0; c < 3; ++c) CHECK(count[c] == 10);
    CHECK_THROWS_AS(make_pools(b, 0, 1), InputError);
    CHECK_THROWS_AS(make_pools(b, b.train.size() + 1, 1), InputError);
  }

  TEST_CASE("semi-supervised pipeline") {
    Setup s = setup(7, 0.0);
    SUBCASE("an empty unlabeled pool still trains") {
      const auto pools = make_pools(s.data, s.data.train.size(), 1);
      CHECK(pools.unlabeled.empty());
      const auto r = train_semi_supervised(s.teacher, s.student, pools, s.data, s.config,
                                           options(Mechanism::m3_both));
      CHECK(r.metrics.size() == s.config.repeats);
    }
    SUBCASE("unit weights are exactly one") {
      const auto pools = make_pools(s.data, 30, 1);
      const auto r = train_semi_supervised(s.teacher, s.student, pools, s.data, s.config,
                                           options(Mechanism::m3_both, true));
      for (const auto& rep : r.influence) {
        for (double w : rep.weights) CHECK(w == 1.0);
      }
    }
    SUBCASE("weights cover both pools") {
      const auto pools = make_pools(s.data, 30, 1);
      const auto r = train_semi_supervised(s.teacher, s.student, pools, s.data, s.config,
                                           options(Mechanism::m3_both));
      REQUIRE_FALSE(r.influence.empty());
      CHECK(r.influence.back().weights.size() == s.data.train.size());
    }
  }

  TEST_CASE("the sampler visits every index once per epoch") {
    MinibatchSampler sampler(10, 4, 3);
    std::vector<std::size_t> seen;
    for (int k = 0; k < 5; ++k) {
      const auto b = sampler.next();
      seen.insert(seen.end(), b.begin(), b.end());
    }
    std::vector<std::size_t> epoch(seen.begin(), seen.begin() + 10);
    std::sort(epoch.begin(), epoch.end());
    for (std::size_t i = 0; i < 10; ++i) CHECK(epoch[i] == i);
    CHECK_THROWS_AS(MinibatchSampler(0, 4, 1), InputError);
  }
}
