#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "kdaif/error.hpp"
#include "kdaif/io.hpp"

using namespace kdaif;
using test::mlp;

TEST_SUITE("io") {
  TEST_CASE("parameter files round trip exactly") {
    const auto dir = test::scratch_dir("io_params");
    const MlpSpec s = mlp({3, 5, 2});
    const ParamVector p(test::random_vector(s.param_count(), 1));
    write_params(dir / "p.bin", s, p);
    CHECK(read_params(dir / "p.bin", s) == p);
    CHECK_THROWS_AS(read_params(dir / "p.bin", mlp({3, 4, 2})), InputError);
    CHECK_THROWS_AS(read_params(dir / "missing.bin", s), InputError);
    std::filesystem::resize_file(dir / "p.bin", std::filesystem::file_size(dir / "p.bin") - 3);
    CHECK_THROWS_AS(read_params(dir / "p.bin", s), InputError);
  }

  TEST_CASE("spec and config json round trip") {
    const MlpSpec s = mlp({4, 7, 3}, Activation::relu);
    CHECK(spec_from_json(to_json(s)) == s);
    TrainConfig c;
    c.alpha = 0.3;
    c.seed = 12345678901234ULL;
    c.warmup_steps = 17;
    const TrainConfig r = train_config_from_json(to_json(c));
    CHECK(r.alpha == c.alpha);
    CHECK(r.seed == c.seed);
    CHECK(r.warmup_steps == 17);
    CHECK(r.repeats == c.repeats);
  }

  TEST_CASE("influence reports round trip") {
    InfluenceReport rep;
    rep.phi = test::random_vector(12, 4);
    assign_weights(rep);
    rep.meta.solver_iterations = 9;
    const InfluenceReport back = influence_from_json(to_json(rep));
    for (std::size_t i = 0; i < rep.phi.size(); ++i) {
      CHECK(std::abs(back.phi[i] - rep.phi[i]) <= 1e-12 * std::max(1.0, std::abs(rep.phi[i])));
      CHECK(std::abs(back.weights[i] - rep.weights[i]) <= 1e-12);
    }
    CHECK(back.meta.solver_iterations == 9);
    rep.phi[0] = std::nan("");
    CHECK_THROWS_AS(to_json(rep), NumericError);
  }

  TEST_CASE("influence csv and number lists") {
    const auto dir = test::scratch_dir("io_csv");
    InfluenceReport rep;
    rep.phi = {1.0, -1.0, 0.0};
    assign_weights(rep);
    write_influence_csv(dir / "i.csv", rep);
    std::ifstream in(dir / "i.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "index,phi,phi_norm,weight,epsilon");
    std::ofstream(dir / "n.txt") << "loss\n0.5\n\n1.25\n3\n";
    CHECK(read_numbers(dir / "n.txt") == std::vector<double>{0.5, 1.25, 3.0});
  }

  TEST_CASE("run directories are complete and append-only") {
    const auto dir = test::scratch_dir("io_run");
    BlobsParams p = test::small_blobs(2);
    const DatasetBundle b = inject_noise(gen_blobs(p), NoiseSpec{0.1, 1});
    TrainConfig c;
    c.max_steps = 5;
    c.repeats = 2;
    KdaifOptions o;
    const auto run = train_kdaif(make_model(mlp({2, 4, 3}), 1), make_model(mlp({2, 3}), 0), b, c, o);
    RunInfo info;
    info.mode = "kdaif";
    info.mechanism = "m3";
    info.solver = "dense";
    info.data_fingerprint = b.fingerprint();
    info.teacher_spec = run.teacher.spec;
    info.student_spec = run.student.spec;
    info.config = c;
    write_run(dir / "run", info, run, b.noise_mask);
    for (const char* f : {"config.json", "metrics.csv", "influence_iter_0.json", "influence_iter_1.json",
                          "final_params.bin", "teacher_params.bin", "noise_mask.csv"}) {
      CHECK_MESSAGE(std::filesystem::exists(dir / "run" / f), f);
    }
    const RunInfo back = run_info_from_json(read_json(dir / "run" / "config.json"));
    CHECK(back.mode == "kdaif");
    CHECK(back.data_fingerprint == b.fingerprint());
    CHECK(back.student_spec == info.student_spec);
    CHECK(read_params(dir / "run" / "final_params.bin", info.student_spec) == run.student.params);
    CHECK_THROWS_AS(write_run(dir / "run", info, run), InputError);
  }
}
