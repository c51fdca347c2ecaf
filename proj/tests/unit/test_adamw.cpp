#include <doctest.h>

#include "oracles.hpp"
#include "scot/adamw.hpp"

using namespace scot;

TEST_CASE("one AdamW step by hand") {
  std::vector<double> theta{1.0}, g{1.0}, m{0.0}, v{0.0};
  adamw_update<double>(theta, g, m, v, 1, AdamWConfig{}, 1e-4);
  CHECK(theta[0] == doctest::Approx(1 - 1e-4 * (1 / (1 + 1e-8)) - 1e-6).epsilon(1e-15));
  CHECK(theta[0] == doctest::Approx(0.999899).epsilon(1e-9));
}

TEST_CASE("zero gradient only decays") {
  std::vector<double> theta{2.0, -3.0}, g{0.0, 0.0}, m{0.0, 0.0}, v{0.0, 0.0};
  adamw_update<double>(theta, g, m, v, 1, AdamWConfig{}, 1e-3);
  CHECK(theta[0] == doctest::Approx(2.0 * (1 - 1e-3 * 0.01)).epsilon(1e-15));
  CHECK(theta[1] == doctest::Approx(-3.0 * (1 - 1e-3 * 0.01)).epsilon(1e-15));
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
  Rng rng(1);
  auto p = testing::random_params<float>({4, 5, 6}, 0.0, rng);
  const auto before = p;
  auto state = AdamWState<float>::zeros_like(p.w);
  AdamWConfig cfg;
  cfg.weight_decay = 0;
  adamw_step(p, CombinerTensors<float>::zeros(p.dims), state, cfg, 1e-3);
  CHECK(p.same_values(before));
  CHECK(state.step == 1);
  CHECK(p.version == before.version + 1);
}

TEST_CASE("identical runs give identical trajectories") {
  Rng rng(2);
  const auto start = testing::random_params<float>({4, 5, 6}, 0.0, rng);
  const auto grads = testing::random_params<float>({4, 5, 6}, 0.0, rng).w;
  auto run = [&] {
    auto p = start;
    auto s = AdamWState<float>::zeros_like(p.w);
    for (int i = 0; i < 10; ++i) adamw_step(p, grads, s, AdamWConfig{}, 1e-2);
    return std::make_pair(p, s);
  };
  const auto a = run(), b = run();
  CHECK(a.first.same_values(b.first));
  CHECK(a.second == b.second);
}

TEST_CASE("shape mismatch") {
  Rng rng(3);
  auto p = testing::random_params<float>({4, 5, 6}, 0.0, rng);
  auto state = AdamWState<float>::zeros_like(p.w);
  CHECK_THROWS_WITH_AS(adamw_step(p, CombinerTensors<float>::zeros({4, 5, 7}), state, AdamWConfig{}, 1e-3),
                       doctest::Contains("ShapeMismatch"), Error);
  AdamWState<float> empty;
  CHECK_THROWS_AS(adamw_step(p, CombinerTensors<float>::zeros(p.dims), empty, AdamWConfig{}, 1e-3), Error);
}
