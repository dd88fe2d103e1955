#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include "retinexdual/errors.hpp"
#include "retinexdual/gssm.hpp"
#include "retinexdual/selective_scan.hpp"
#include "support.hpp"

using namespace retinexdual;

namespace {

struct ScanInputs {
  torch::Tensor u, delta, a, b, c, d;
};

ScanInputs random_inputs(std::int64_t batch, std::int64_t length, std::int64_t channels, std::int64_t states,
                         torch::Dtype dtype, std::uint64_t seed) {
  torch::manual_seed(seed);
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  ScanInputs in;
  in.u = torch::randn({batch, length, channels}, opts);
  in.delta = torch::rand({batch, length, channels}, opts) * 0.5 + 0.01;
  in.a = -torch::rand({channels, states}, opts) * 2.0 - 0.05;
  in.b = torch::randn({batch, length, states}, opts);
  in.c = torch::randn({batch, length, states}, opts);
  in.d = torch::randn({channels}, opts);
  for (auto* t : {&in.u, &in.delta, &in.a, &in.b, &in.c, &in.d}) *t = t->to(dtype);
  return in;
}

double oracle_error(const ScanInputs& in) {
  auto y = selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d);
  const auto batch = in.u.size(0), length = in.u.size(1), channels = in.u.size(2), states = in.a.size(1);
  double worst = 0.0;
  for (std::int64_t i = 0; i < batch; ++i) {
    auto ref = testing::reference_scan(length, channels, states, testing::to_vector(in.u[i]),
                                       testing::to_vector(in.delta[i]), testing::to_vector(in.a),
                                       testing::to_vector(in.b[i]), testing::to_vector(in.c[i]),
                                       testing::to_vector(in.d));
    auto got = testing::to_vector(y[i]);
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(ref[k] - got[k]));
  }
  return worst;
}

}  // namespace

TEST_CASE("scan matches the loop reference in float64") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = random_inputs(2, 37 + static_cast<std::int64_t>(seed) * 7, 5, 6, torch::kFloat64, seed);
    CHECK(oracle_error(in) < 1e-10);
  }
}

TEST_CASE("scan matches the loop reference in float32") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto in = random_inputs(1, 128, 8, 16, torch::kFloat32, 100 + seed);
    CHECK(oracle_error(in) < 1e-6);
  }
}

TEST_CASE("unbatched input returns an unbatched result") {
  auto in = random_inputs(1, 9, 3, 4, torch::kFloat64, 3);
  auto y = selective_scan(in.u[0], in.delta[0], in.a, in.b[0], in.c[0], in.d);
  CHECK(y.sizes() == torch::IntArrayRef({9, 3}));
  CHECK(torch::equal(y, selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d)[0]));
}

TEST_CASE("scan backward agrees with finite differences") {
  auto in = random_inputs(2, 12, 3, 4, torch::kFloat64, 5);
  std::vector<torch::Tensor> vars{in.u, in.delta, in.a, in.b, in.c, in.d};
  for (auto& v : vars) v.requires_grad_(true);
  auto f = [&] { return testing::probe(selective_scan(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5])); };
  auto result = testing::check_gradients(f, vars, 64);
  CHECK(result.max_error < 1e-6);
}

TEST_CASE("with grad and without grad give the same values") {
  auto in = random_inputs(1, 20, 4, 4, torch::kFloat32, 9);
  auto plain = selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d);
  auto u = in.u.clone().requires_grad_(true);
  auto tracked = selective_scan(u, in.delta, in.a, in.b, in.c, in.d);
  CHECK(torch::equal(plain, tracked.detach()));
}

TEST_CASE("decay stays inside the unit interval for positive steps") {
  auto delta = torch::rand({64, 8}, torch::kFloat64) * 10 + 1e-4;
  auto a = -torch::exp(torch::randn({8, 16}, torch::kFloat64));
  auto decay = zoh_decay(delta, a);
  CHECK(decay.abs().max().item<double>() < 1.0);
  CHECK(decay.min().item<double>() >= 0.0);
}

TEST_CASE("zero input keeps every state at zero") {
  auto in = random_inputs(1, 16, 3, 4, torch::kFloat64, 1);
  auto y = selective_scan(torch::zeros_like(in.u), in.delta, in.a, in.b, in.c, in.d);
  CHECK(y.abs().max().item<double>() == 0.0);
}

TEST_CASE("mixed dtypes are rejected") {
  auto in = random_inputs(1, 4, 2, 2, torch::kFloat64, 2);
  CHECK_THROWS_AS(selective_scan(in.u.to(torch::kFloat32), in.delta, in.a, in.b, in.c, in.d), ShapeError);
}

TEST_CASE("non-finite values are reported with their position") {
  auto in = random_inputs(1, 8, 2, 2, torch::kFloat64, 4);
  in.u[0][5][1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(selective_scan(in.u, in.delta, in.a, in.b, in.c, in.d), NumericalError);
}

TEST_CASE("attentive scan initial state matrix follows the S4D ladder") {
  AttentiveScan ase(6, 4);
  auto a = ase->a();
  for (std::int64_t n = 0; n < 4; ++n) CHECK(a[0][n].item<double>() == doctest::Approx(-(n + 1.0)).epsilon(1e-6));
  auto proj = ase->project(torch::randn({1, 10, 6}));
  CHECK(proj.delta.min().item<double>() > 0.0);
}
