#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "kdaif/error.hpp"
#include "kdaif/objective.hpp"
#include "kdaif/optimize.hpp"

using namespace kdaif;
using test::mlp;

TEST_SUITE("objective") {
  TEST_CASE("builders reproduce the model-level losses") {
    const MlpSpec s = mlp({3, 5, 4});
    const MlpSpec t = mlp({3, 7, 4});
    const Model student{s, ParamVector(test::random_vector(s.param_count(), 3))};
    const Model teacher{t, ParamVector(test::random_vector(t.param_count(), 4))};
    const auto data = test::random_examples(12, 3, 4, 9);
    for (double alpha : {0.0, 0.3, 0.6, 1.0}) {
      const MlpLosses ls = student_losses(s, &teacher, data, alpha);
      const MlpLosses lt = teacher_losses(t, student, data, alpha);
      for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(ls.loss(i, student.params.span()) ==
              doctest::Approx(loss_student(data[i], student, teacher, alpha)).epsilon(1e-12));
        CHECK(lt.loss(i, teacher.params.span()) ==
              doctest::Approx(loss_teacher(data[i], teacher, student, alpha)).epsilon(1e-12));
      }
    }
    const std::size_t idx[] = {5, 1};
    const MlpLosses sub = supervised_losses(s, data, idx);
    CHECK(sub.size() == 2);
    CHECK(sub.loss(0, student.params.span()) == doctest::Approx(loss_ce(data[5].y, forward(student, data[5].x))));
    CHECK_THROWS_AS(student_losses(s, nullptr, data, 0.5), InputError);
  }

  TEST_CASE("weighted risk is (1/N) sum w_i l_i plus the regularizer") {
    const MlpSpec s = mlp({2, 3, 3});
    const auto data = test::random_examples(6, 2, 3, 1);
    const MlpLosses losses = supervised_losses(s, data);
    const ParamVector th(test::random_vector(s.param_count(), 7));
    const std::vector<double> w{0.0, 0.5, 1.0, 1.5, 2.0, 0.25};
    const double l2 = 0.01;
    const EmpiricalRisk risk(losses, l2, w);
    double expect = 0.0;
    for (std::size_t i = 0; i < 6; ++i) expect += w[i] * losses.loss(i, th.span());
    expect = expect / 6.0 + 0.5 * l2 * th.norm() * th.norm();
    CHECK(risk.value(th.span()) == doctest::Approx(expect).epsilon(1e-12));
  }

  TEST_CASE("zero weights leave only the regularizer gradient") {
    const MlpSpec s = mlp({2, 4, 3});
    const auto data = test::random_examples(5, 2, 3, 2);
    const MlpLosses losses = supervised_losses(s, data);
    const ParamVector th(test::random_vector(s.param_count(), 8));
    const EmpiricalRisk risk(losses, 0.1, std::vector<double>(5, 0.0));
    const ParamVector g = risk.gradient(th.span());
    for (std::size_t k = 0; k < th.size(); ++k) CHECK(g[k] == doctest::Approx(0.1 * th[k]).epsilon(1e-15));
  }

  TEST_CASE("scaling all weights keeps the gradient direction") {
    const MlpSpec s = mlp({2, 4, 3});
    const auto data = test::random_examples(8, 2, 3, 3);
    const MlpLosses losses = supervised_losses(s, data);
    const ParamVector th(test::random_vector(s.param_count(), 9));
    std::vector<double> w = test::random_vector(8, 4);
    for (auto& v : w) v = std::abs(v);
    std::vector<double> w3 = w;
    for (auto& v : w3) v *= 3.0;
    const ParamVector g1 = EmpiricalRisk(losses, 0.0, w).gradient(th.span());
    const ParamVector g3 = EmpiricalRisk(losses, 0.0, w3).gradient(th.span());
    for (std::size_t k = 0; k < th.size(); ++k) {
      CHECK(g1[k] / g1.norm() == doctest::Approx(g3[k] / g3.norm()).epsilon(1e-12));
    }
  }

  TEST_CASE("non-finite gradients name the offending layer") {
    const MlpSpec s = mlp({2, 3, 3});
    const auto data = test::random_examples(3, 2, 3, 5);
    const MlpLosses losses = supervised_losses(s, data);
    ParamVector th(test::random_vector(s.param_count(), 1));
    const auto layers = s.layers();
    th[layers[1].weight_offset] = std::numeric_limits<double>::quiet_NaN();
    try {
      (void)EmpiricalRisk(losses).gradient(th.span());
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(e.layer() >= 0);
      CHECK(e.layer() <= 1);
    }
  }

  TEST_CASE("converged damped logistic regression is stationary") {
    BlobsParams p = test::small_blobs(3);
    const DatasetBundle b = gen_blobs(p);
    const MlpSpec s = mlp({2, 3});
    const MlpLosses losses = supervised_losses(s, b.train);
    const EmpiricalRisk risk(losses, 1e-3);
    const FitResult fit = minimize_newton(risk, init_params(s, 0));
    CHECK(fit.converged);
    CHECK(risk.gradient(fit.params.span()).norm() < 1e-6);
  }

  TEST_CASE("weights must align with the examples") {
    const MlpSpec s = mlp({2, 3});
    const auto data = test::random_examples(4, 2, 3, 5);
    const MlpLosses losses = supervised_losses(s, data);
    CHECK_THROWS_AS(EmpiricalRisk(losses, 0.0, std::vector<double>(3, 1.0)), InputError);
  }

  TEST_CASE("families over the same spec append") {
    const MlpSpec s = mlp({2, 3});
    const auto data = test::random_examples(4, 2, 3, 5);
    MlpLosses a = supervised_losses(s, std::span(data).first(2));
    const MlpLosses b = supervised_losses(s, std::span(data).last(2));
    a.append(b);
    CHECK(a.size() == 4);
    CHECK(a.fingerprint() == supervised_losses(s, data).fingerprint());
  }
}
