#include <cmath>
#include <filesystem>
#include <random>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "platesym/dihedral.hpp"
#include "platesym/models.hpp"

using namespace platesym;
namespace d4 = platesym::dihedral;
using models::ModelSpec;
using models::Task;
using models::Variant;
using platesym::testing::random_values;

namespace {

// Independent count from the block recipe: kernels sized to the full
// incoming length, per-channel bias, LN scale/shift in blocks 2-5, then the
// dense and output layers, plus 8 omega per group-structured layer.
std::size_t count_oracle(Variant v, std::size_t c, std::size_t h, std::size_t out) {
  const std::size_t lens[5] = {158, 79, 40, 20, 10};
  const std::size_t group = v == Variant::ordinary ? 1 : 8;
  std::size_t n = c * 16 * lens[0] + c;
  for (int b = 1; b < 5; ++b) n += c * c * group * lens[b] + 3 * c;
  n += h * c * 5 + h + out * h + out;
  if (v == Variant::approximate) n += 8 * 6;
  return n;
}

std::vector<double> locate(const models::Model& m, const std::vector<double>& v, std::size_t batch) {
  return m.predict(v, batch);
}

double worst_equivariance(const models::Model& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = random_values(16 * 158, rng);
    const auto ref = locate(m, v, 1);
    const double norm = std::hypot(ref[0], ref[1]);
    for (auto g : d4::all_elements()) {
      const auto moved = locate(m, d4::act_on_adjacency(g, v, 158), 1);
      const auto want = d4::act_on_vector(g, {ref[0], ref[1]});
      worst = std::max(worst, std::hypot(moved[0] - want[0], moved[1] - want[1]) / norm);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("halving schedule") {
  std::size_t len = 158;
  const std::size_t want[] = {79, 40, 20, 10, 5};
  for (std::size_t w : want) {
    const auto b = models::halving_block(len);
    CHECK(b.kernel == len);
    CHECK(b.out_len == w);
    CHECK(b.out_len == (len + 1) / 2);
    len = b.out_len;
  }
  for (std::size_t l = 2; l < 400; ++l) CHECK(models::halving_block(l).out_len == (l + 1) / 2);
  models::Model m(ModelSpec::desk_scale(Variant::exact, Task::locate));
  CHECK(m.blocks().back().out_len == 5);
}

TEST_CASE("parameter counts against the arithmetic oracle") {
  for (auto v : {Variant::ordinary, Variant::exact, Variant::approximate}) {
    for (auto t : {Task::locate, Task::detect}) {
      for (auto spec : {ModelSpec::full_scale(v, t), ModelSpec::desk_scale(v, t)}) {
        models::Model m(spec);
        CHECK(m.parameter_count() ==
              count_oracle(v, spec.channel_widths[0], spec.channel_widths[5], spec.output_size()));
      }
    }
  }
  const auto ord = models::Model(ModelSpec::full_scale(Variant::ordinary, Task::locate)).parameter_count();
  const auto eq = models::Model(ModelSpec::full_scale(Variant::exact, Task::locate)).parameter_count();
  const auto ap = models::Model(ModelSpec::full_scale(Variant::approximate, Task::locate)).parameter_count();
  CHECK(std::abs(static_cast<double>(ord) - 371000.0) <= 0.1 * 371000.0);
  CHECK(std::abs(static_cast<double>(eq) - 366000.0) <= 0.1 * 366000.0);
  CHECK(ap - eq == 48);
  CHECK(eq == 356434);
  CHECK(ord == 366026);
}

TEST_CASE("invalid specs are rejected") {
  auto s = ModelSpec::desk_scale(Variant::exact, Task::locate);
  s.channel_widths[2] = 3;
  CHECK_THROWS_AS(models::Model{s}, std::invalid_argument);
  s = ModelSpec::desk_scale(Variant::exact, Task::locate);
  s.channel_widths[0] = 0;
  CHECK_THROWS_AS(models::Model{s}, std::invalid_argument);
  s = ModelSpec::desk_scale(Variant::exact, Task::locate);
  s.input_length = 1;
  CHECK_THROWS_AS(models::Model{s}, std::invalid_argument);

  models::Model m(ModelSpec::desk_scale(Variant::exact, Task::locate));
  CHECK_THROWS_AS(m.predict(std::vector<double>(16 * 100), 1), std::invalid_argument);
  ad::Graph g;
  ad::Rng rng(0);
  CHECK_THROWS_AS(m.forward(g, g.constant({1, 4, 4, 100}, std::vector<double>(1600)), models::Mode::eval, rng),
                  std::invalid_argument);
  CHECK_THROWS(models::parse_variant("circular"));
  CHECK(models::parse_variant("approx") == Variant::approximate);
}

TEST_CASE("full-model equivariance") {
  auto spec = ModelSpec::desk_scale(Variant::exact, Task::locate);
  spec.seed = 11;
  models::Model exact(spec);
  CHECK(worst_equivariance(exact, 1) <= 1e-8);

  spec.include_diagonal = true;
  CHECK(worst_equivariance(models::Model(spec), 2) <= 1e-8);

  auto ospec = ModelSpec::desk_scale(Variant::ordinary, Task::locate);
  ospec.seed = 11;
  CHECK(worst_equivariance(models::Model(ospec), 1) > 1e-2);
}

TEST_CASE("detector logits are invariant") {
  auto spec = ModelSpec::desk_scale(Variant::exact, Task::detect);
  spec.seed = 3;
  models::Model m(spec);
  std::mt19937_64 rng(4);
  const auto v = random_values(2 * 16 * 158, rng);
  const auto ref = m.predict(v, 2);
  for (auto g : d4::all_elements()) {
    const auto moved = m.predict(d4::act_on_adjacency(g, v, 158), 2);
    for (int i = 0; i < 2; ++i) CHECK(moved[i] == doctest::Approx(ref[i]).epsilon(1e-10));
  }
}

TEST_CASE("approximate model at zero omega reproduces the exact model bitwise") {
  for (auto t : {Task::locate, Task::detect}) {
    auto se = ModelSpec::desk_scale(Variant::exact, t);
    auto sa = ModelSpec::desk_scale(Variant::approximate, t);
    se.seed = sa.seed = 21;
    models::Model exact(se), approx(sa);
    for (std::size_t i = 0; i < exact.parameters().size(); ++i)
      CHECK(exact.parameters()[i].value() == approx.parameters()[i].value());
    CHECK(approx.symmetry_parameters().size() == 6);
    std::mt19937_64 rng(5);
    const auto v = random_values(3 * 16 * 158, rng);
    CHECK(exact.predict(v, 3) == approx.predict(v, 3));
  }
}

TEST_CASE("bias-free exact locator maps zero to zero") {
  auto spec = ModelSpec::desk_scale(Variant::exact, Task::locate);
  spec.use_bias = false;
  models::Model m(spec);
  const auto out = m.predict(std::vector<double>(16 * 158, 0.0), 1);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
}

TEST_CASE("eval is deterministic and train mode applies dropout") {
  models::Model m(ModelSpec::desk_scale(Variant::exact, Task::locate));
  std::mt19937_64 rng(6);
  const auto v = random_values(2 * 16 * 158, rng);
  CHECK(m.predict(v, 2) == m.predict(v, 2));

  ad::Graph g;
  ad::Rng r1(1), r2(2);
  auto x = g.constant({2, 4, 4, 158}, v);
  auto a = m.forward(g, x, models::Mode::train, r1);
  auto b = m.forward(g, x, models::Mode::train, r2);
  CHECK(std::vector<double>(a.value().begin(), a.value().end()) !=
        std::vector<double>(b.value().begin(), b.value().end()));
}

TEST_CASE("model gradients match finite differences on parameters") {
  auto spec = ModelSpec::desk_scale(Variant::approximate, Task::locate);
  spec.channel_widths = {2, 2, 2, 2, 2, 4};
  spec.input_length = 20;
  spec.dropout = 0.0;
  spec.seed = 9;
  models::Model m(spec);
  std::mt19937_64 rng(10);
  // Move omega away from the symmetric point so its gradient is generic.
  for (auto* p : m.symmetry_parameters())
    for (auto& v : const_cast<ad::Parameter*>(p)->value()) v = std::normal_distribution<double>(0, 0.5)(rng);
  const auto input = random_values(16 * 20, rng);
  auto forward = [&](ad::Graph& g) {
    ad::Rng r(0);
    auto y = m.forward(g, g.constant({1, 4, 4, 20}, input), models::Mode::eval, r);
    return ad::sum(ad::mul(y, y));
  };
  auto loss = [&]() {
    ad::Graph g;
    return forward(g).item();
  };
  m.zero_grad();
  {
    ad::Graph g;
    g.backward(forward(g));
  }
  double worst = 0.0;
  for (auto& p : m.parameters()) {
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p.value()[i];
      p.value()[i] = orig + 1e-6;
      const double up = loss();
      p.value()[i] = orig - 1e-6;
      const double down = loss();
      p.value()[i] = orig;
      const double fd = (up - down) / 2e-6;
      diff += (fd - p.grad()[i]) * (fd - p.grad()[i]);
      norm += fd * fd;
    }
    worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-6));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("checkpoint round trip") {
  auto spec = ModelSpec::desk_scale(Variant::approximate, Task::detect);
  spec.seed = 77;
  models::Model m(spec);
  m.parameters()[0].value()[3] = 0.123456789;
  ad::Rng rng(99);
  rng.discard(17);
  const auto path = std::filesystem::temp_directory_path() / "platesym_test.ckpt";
  models::save_checkpoint(path, m, rng, {{"epoch", 4}});
  const auto ck = models::read_checkpoint(path);
  CHECK(ck.meta.at("epoch") == 4);
  ad::Rng back;
  std::istringstream(ck.rng_state) >> back;
  CHECK(back == rng);
  auto loaded = models::load_model(ck);
  CHECK(loaded.spec().variant == Variant::approximate);
  for (std::size_t i = 0; i < m.parameters().size(); ++i)
    CHECK(loaded.parameters()[i].value() == m.parameters()[i].value());

  std::ofstream(path, std::ios::binary) << "NOTACKPT";
  CHECK_THROWS_AS(models::read_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
}
