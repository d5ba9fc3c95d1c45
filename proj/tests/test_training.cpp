#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "platesym/dihedral.hpp"
#include "platesym/training.hpp"

using namespace platesym;
using namespace platesym::training;
namespace d4 = platesym::dihedral;
using platesym::testing::grad_check;

namespace {

// Intersection of the two squares computed from their extents.
double rect_overlap_oracle(signals::Point a, signals::Point b, double side) {
  double area = 1.0;
  for (int k = 0; k < 2; ++k) {
    const double lo = std::max(a[k], b[k]) - side / 2, hi = std::min(a[k], b[k]) + side / 2;
    area *= std::max(0.0, hi - lo);
  }
  return area;
}

double loss_oracle(signals::Point p, signals::Point x) {
  const double d2 = (p[0] - x[0]) * (p[0] - x[0]) + (p[1] - x[1]) * (p[1] - x[1]);
  return std::max(d2, 3.35 * 3.35) * (1.0 - rect_overlap_oracle(p, x, 40.0) / 1600.0);
}

// Offset whose components stay clear of the clamp radius and the square edges.
signals::Point smooth_offset(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> inside(3.0, 37.0), outside(43.0, 120.0);
  std::bernoulli_distribution coin(0.5);
  signals::Point d{};
  for (auto& c : d) c = (coin(rng) ? inside(rng) : outside(rng)) * (coin(rng) ? 1.0 : -1.0);
  return d;
}

signals::TaskSet toy_locator_set(std::size_t groups, std::size_t views, std::mt19937_64& rng) {
  signals::TaskSet set;
  set.time_len = 4;
  std::uniform_real_distribution<double> pos(-150.0, 150.0);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double x = pos(rng), y = pos(rng);
    for (std::size_t v = 0; v < views; ++v) {
      set.targets.push_back(x);
      set.targets.push_back(y);
      set.group.push_back(gi);
    }
  }
  set.inputs.assign(set.count() * signals::kPairs * set.time_len, 0.0);
  return set;
}

struct SmallProblem {
  signals::TaskSet train, test;
};

SmallProblem small_locator_problem() {
  signals::SynthConfig cfg;
  cfg.plate.grid_points = 7;
  cfg.plate.baselines = 2;
  cfg.sym = {};
  cfg.seed = 3;
  const auto ds = signals::synthesize_dataset(cfg);
  const auto sp = signals::split(ds.size(), 0.8, cfg.seed);
  return {signals::localization_set(ds, sp.train), signals::localization_set(ds, sp.test)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("locate_loss examples against the rectangle oracle") {
  CHECK(locate_loss({12.0, -7.0}, {12.0, -7.0}) == 0.0);
  CHECK(locate_loss({100.0, 0.0}, {0.0, 0.0}) == doctest::Approx(10000.0).epsilon(1e-12));
  CHECK(rect_overlap_oracle({100.0, 0.0}, {0.0, 0.0}, 40.0) == 0.0);
  CHECK(std::abs(locate_loss({2.0, 0.0}, {0.0, 0.0}) - 11.2225 * 0.05) < 1e-6);
  CHECK(rect_overlap_oracle({2.0, 0.0}, {0.0, 0.0}, 40.0) / 1600.0 == doctest::Approx(0.95));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-200.0, 200.0), near(-45.0, 45.0);
  for (int i = 0; i < 500; ++i) {
    const signals::Point x{u(rng), u(rng)};
    const signals::Point p{x[0] + near(rng), x[1] + near(rng)};
    CHECK(locate_loss(p, x) == doctest::Approx(loss_oracle(p, x)).epsilon(1e-12));
    CHECK(locate_loss(p, x) >= 0.0);
  }
}

TEST_CASE("locate_loss is zero only on coincidence") {
  CHECK(locate_loss({0.0, 0.0}, {0.0, 0.0}) == 0.0);
  CHECK(locate_loss({1e-3, 0.0}, {0.0, 0.0}) > 0.0);
  CHECK(locate_loss({0.0, 1.0}, {0.0, 0.0}) > 0.0);
}

TEST_CASE("locate_loss is co-invariant under D4") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-175.0, 175.0);
  for (int i = 0; i < 100; ++i) {
    const signals::Point p{u(rng), u(rng)}, x{u(rng), u(rng)};
    const double ref = locate_loss(p, x);
    for (auto g : d4::all_elements()) {
      CHECK(locate_loss(d4::act_on_point(g, p), d4::act_on_point(g, x)) == ref);
    }
  }
}

TEST_CASE("iou overlap is a monotone map of the face overlap") {
  LocateLossConfig iou;
  iou.overlap = Overlap::iou;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-45.0, 45.0);
  for (int i = 0; i < 200; ++i) {
    const double dx = u(rng), dy = u(rng);
    const double f = overlap_fraction(dx, dy), j = overlap_fraction(dx, dy, iou);
    CHECK(j == doctest::Approx(f / (2.0 - f)).epsilon(1e-12));
  }
}

TEST_CASE("locate_loss gradient matches finite differences") {
  for (LocateLossConfig cfg : {LocateLossConfig{}, LocateLossConfig{6.70, 40.0, Overlap::iou}}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed);
      const std::size_t batch = 6;
      std::vector<double> target(2 * batch), pred(2 * batch);
      std::uniform_real_distribution<double> u(-150.0, 150.0);
      for (std::size_t b = 0; b < batch; ++b) {
        const auto d = smooth_offset(rng);
        target[2 * b] = u(rng);
        target[2 * b + 1] = u(rng);
        pred[2 * b] = target[2 * b] + d[0];
        pred[2 * b + 1] = target[2 * b + 1] + d[1];
      }
      auto f = [&](ad::Graph& g, const std::vector<ad::Tensor>& in) {
        return testing::probe(g, locate_loss(in[0], target, cfg), seed);
      };
      CHECK(grad_check(f, {{batch, 2}}, {pred}, 1e-5).max_rel_error < 1e-4);
    }
  }
}

TEST_CASE("locate_loss gradient is zero inside the clamp only through the overlap") {
  // Inside the clamp the distance term is constant; the overlap term remains.
  ad::Graph g;
  auto p = g.variable({1, 2}, {1.0, 0.0});
  std::vector<double> t{0.0, 0.0};
  g.backward(ad::sum(locate_loss(p, t)));
  const double c2 = 3.35 * 3.35;
  CHECK(p.grad()[0] == doctest::Approx(c2 * 40.0 / 1600.0));
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("detect_loss examples") {
  CHECK(detect_loss(0.0, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(detect_loss(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(detect_loss(20.0, 1.0) < 1e-8);
  CHECK(detect_loss(20.0, 1.0) > 0.0);
  CHECK(std::isfinite(detect_loss(-800.0, 1.0)));
  CHECK(detect_loss(-800.0, 1.0) == doctest::Approx(800.0));

  signals::TaskSet set;
  set.time_len = 1;
  set.targets = {0.0, 1.0, 1.0, 0.0};
  set.group = {0, 1, 2, 3};
  const std::vector<double> zeros(4, 0.0);
  CHECK(detector_metrics(zeros, set).perplexity == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(detector_metrics(zeros, set, true).perplexity == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("detect_loss gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    auto z = testing::random_values(8, rng, 3.0);
    std::vector<double> labels(8);
    std::bernoulli_distribution coin(0.5);
    for (auto& l : labels) l = coin(rng) ? 1.0 : 0.0;
    auto f = [&](ad::Graph& g, const std::vector<ad::Tensor>& in) {
      return testing::probe(g, detect_loss(in[0], labels), seed);
    };
    CHECK(grad_check(f, {{8, 1}}, {z}).max_rel_error < 1e-5);
  }
  ad::Graph g;
  auto z = g.variable({1, 1}, {0.0});
  std::vector<double> bad{0.5};
  CHECK_THROWS_AS(detect_loss(z, bad), std::invalid_argument);
}

TEST_CASE("detector scores survive a monotone relabelling of the logits") {
  std::mt19937_64 rng(4);
  signals::TaskSet set;
  set.time_len = 1;
  std::vector<double> logits;
  std::bernoulli_distribution coin(0.5);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (std::size_t i = 0; i < 200; ++i) {
    set.targets.push_back(coin(rng) ? 1.0 : 0.0);
    set.group.push_back(i);
    logits.push_back(nd(rng));
  }
  std::vector<double> cubed(logits), stretched(logits);
  for (auto& z : cubed) z = z * z * z;
  for (auto& z : stretched) z = 3.0 * z + std::tanh(z);
  const double acc = detector_metrics(logits, set).accuracy;
  CHECK(detector_metrics(cubed, set).accuracy == acc);
  CHECK(detector_metrics(stretched, set).accuracy == acc);
}

TEST_CASE("detector averages views per group") {
  signals::TaskSet set;
  set.time_len = 1;
  set.targets = {1.0, 1.0, 1.0};
  set.group = {0, 0, 0};
  // Mean probability ~0.345, mean logit ~0.667: the two rules disagree.
  const std::vector<double> logits{10.0, -4.0, -4.0};
  CHECK(detector_metrics(logits, set).count == 1);
  CHECK(detector_metrics(logits, set).accuracy == 0.0);
  CHECK(detector_metrics(logits, set, true).accuracy == 1.0);
  const double p = (1 / (1 + std::exp(-10.0)) + 2 / (1 + std::exp(4.0))) / 3;
  CHECK(detector_metrics(logits, set).bce == doctest::Approx(-std::log(p)).epsilon(1e-12));
}

TEST_CASE("OneCycle schedule") {
  const auto s = OneCycle::for_task(models::Task::locate, 1000);
  CHECK(s.ramp_epochs() == 200);
  CHECK(s.lr_at(0) == doctest::Approx(1e-5).epsilon(1e-12));
  CHECK(s.lr_at(200) == doctest::Approx(2.5e-3).epsilon(1e-12));
  CHECK(std::abs(s.lr_at(999) - 1e-3) <= std::abs(s.lr_at(998) - s.lr_at(999)) + 1e-15);
  CHECK(s.lr_at(999) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK_THROWS_AS(s.lr_at(1000), std::out_of_range);
  CHECK(OneCycle::for_task(models::Task::detect, 1000).lr_at(999) == doctest::Approx(1e-7).epsilon(1e-9));

  for (auto d : {Descent::cosine, Descent::linear}) {
    auto t = s;
    t.descent = d;
    for (std::size_t e = 1; e < 200; ++e) CHECK(t.lr_at(e) >= t.lr_at(e - 1));
    for (std::size_t e = 201; e < 1000; ++e) CHECK(t.lr_at(e) <= t.lr_at(e - 1));
  }
  auto lin = s;
  lin.descent = Descent::linear;
  CHECK(lin.lr_at(600) == doctest::Approx(2.5e-3 - 0.5 * (2.5e-3 - 1e-3)).epsilon(1e-3));
}

TEST_CASE("Adam matches a hand-stepped scalar reference") {
  // Quadratic toy f(p) = 0.5 a (p - c)^2.
  const double a = 3.0, c = -1.5, lr = 0.05;
  const AdamConfig cfg{0.9, 0.999, 1e-8, 1e-2};
  std::vector<ad::Parameter> params{ad::Parameter("p", {1}, {2.0})};
  Adam adam(params, cfg);
  double p = 2.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 25; ++t) {
    const double g = a * (p - c);
    params[0].zero_grad();
    params[0].grad().assign(1, a * (params[0].value()[0] - c));
    adam.step(params, lr);

    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    p = p * (1 - lr * 1e-2) - lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(params[0].value()[0] == doctest::Approx(p).epsilon(1e-13));
  }
  CHECK(adam.steps() == 25);
  CHECK(std::abs(p - c) < std::abs(2.0 - c));
}

TEST_CASE("Adam decays a zero-gradient parameter by the decay factor") {
  std::vector<ad::Parameter> params{ad::Parameter("w", {3}, {1.0, -2.0, 0.5})};
  params[0].zero_grad();
  Adam adam(params, {0.9, 0.999, 1e-8, 1e-3});
  const double lr = 0.1;
  auto expect = params[0].value();
  for (int i = 0; i < 5; ++i) {
    adam.step(params, lr);
    for (auto& e : expect) e *= 1.0 - lr * 1e-3;
    for (std::size_t k = 0; k < 3; ++k) CHECK(params[0].value()[k] == expect[k]);
  }
}

TEST_CASE("locator metrics on synthetic predictors") {
  std::mt19937_64 rng(2);
  const auto set = toy_locator_set(40, 6, rng);
  const auto perfect = locator_metrics(set.targets, set);
  CHECK(perfect.count == 40);
  CHECK(perfect.mde == 0.0);
  CHECK(perfect.rmse == 0.0);
  CHECK(perfect.var == 0.0);

  auto shifted = set.targets;
  for (std::size_t i = 0; i < set.count(); ++i) shifted[2 * i] += 2.0;
  const auto m = locator_metrics(shifted, set);
  CHECK(m.mde == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.var == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.rmse == doctest::Approx(std::sqrt(0.561125)).epsilon(1e-9));
  CHECK(std::abs(m.rmse - 0.749) < 1e-3);

  // Views scattered symmetrically about the truth average back onto it.
  auto spread = set.targets;
  for (std::size_t i = 0; i < set.count(); ++i) spread[2 * i + 1] += (i % 2 ? 7.0 : -7.0);
  CHECK(locator_metrics(spread, set).mde == doctest::Approx(0.0).epsilon(1e-12));

  signals::TaskSet empty;
  CHECK_THROWS_AS(locator_metrics({}, empty), std::invalid_argument);
}

TEST_CASE("window mapping and ablation plumbing") {
  const auto w = signals::window_samples(0.16, 0.24);
  CHECK(w.first == static_cast<std::size_t>(std::floor(0.16 / 0.4 * 192)) - 34);
  CHECK(w.last == static_cast<std::size_t>(std::floor(0.24 / 0.4 * 192)) - 34);
  CHECK(ablation_windows().size() == 4);
  CHECK(ablation_windows()[0].label() == "0.07-0.40");

  std::mt19937_64 rng(8);
  signals::TaskSet set;
  set.time_len = 158;
  set.inputs = testing::random_values(3 * signals::kPairs * 158, rng);
  set.targets.assign(6, 0.0);
  set.group = {0, 1, 2};
  CHECK(windowed(set, {0.07, 0.40}).inputs == set.inputs);
  const auto cut = windowed(set, {0.16, 0.24});
  for (std::size_t r = 0; r < 3 * signals::kPairs; ++r) {
    for (std::size_t t = 0; t < 158; ++t) {
      const double expect = (t >= 42 && t < 81) ? set.inputs[r * 158 + t] : 0.0;
      CHECK(cut.inputs[r * 158 + t] == expect);
    }
  }
  CHECK_THROWS(windowed(set, {0.07, 0.55}));
}

TEST_CASE("training loop: frozen model, divergence and checkpoints") {
  const auto prob = small_locator_problem();
  auto spec = models::ModelSpec::desk_scale(models::Variant::exact, models::Task::locate);
  spec.seed = 1;

  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    models::Model model(spec);
    std::vector<std::vector<double>> before;
    for (const auto& p : model.parameters()) before.push_back(p.value());
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.schedule = OneCycle::for_task(spec.task, 1);
    cfg.schedule.lr_init = cfg.schedule.lr_peak = cfg.schedule.lr_final = 0.0;
    const auto res = train(model, prob.train, prob.test, cfg);
    CHECK(res.history.size() == 1);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(model.parameters()[i].value() == before[i]);
  }

  SUBCASE("non-finite loss aborts") {
    models::Model model(spec);
    auto poisoned = prob.train;
    poisoned.inputs[5] = std::nan("");
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.schedule = OneCycle::for_task(spec.task, 2);
    CHECK_THROWS_AS(train(model, poisoned, prob.test, cfg), DivergenceError);
  }

  SUBCASE("checkpoint cadence and history records") {
    const auto dir = std::filesystem::temp_directory_path() / "platesym_train_ckpt";
    std::filesystem::remove_all(dir);
    models::Model model(spec);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.schedule = OneCycle::for_task(spec.task, 3);
    cfg.checkpoint_every = 2;
    cfg.checkpoint_dir = dir;
    cfg.history_path = dir / "history.jsonl";
    std::filesystem::create_directories(dir);
    const auto res = train(model, prob.train, prob.test, cfg);
    CHECK(std::filesystem::exists(dir / "epoch_0002.ckpt"));
    CHECK(std::filesystem::exists(dir / "epoch_0003.ckpt"));
    CHECK_FALSE(std::filesystem::exists(dir / "epoch_0001.ckpt"));
    std::ifstream hist(cfg.history_path);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line)) {
      const auto rec = nlohmann::json::parse(line);
      CHECK(rec["epoch"] == lines);
      for (auto key : {"lr", "train_loss", "test_loss", "test_rmse", "test_mde"}) CHECK(rec.contains(key));
      ++lines;
    }
    CHECK(lines == 3);
    CHECK(res.final_metrics.contains("gap"));
    const auto ck = models::read_checkpoint(dir / "epoch_0003.ckpt");
    CHECK(ck.meta["epoch"] == 3);
    std::filesystem::remove_all(dir);
  }

  SUBCASE("mismatched schedule or set shape is rejected") {
    models::Model model(spec);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.schedule = OneCycle::for_task(spec.task, 3);
    CHECK_THROWS_AS(train(model, prob.train, prob.test, cfg), std::invalid_argument);
    cfg.schedule = OneCycle::for_task(spec.task, 2);
    signals::TaskSet empty;
    CHECK_THROWS_AS(train(model, empty, prob.test, cfg), std::invalid_argument);
  }
}

TEST_CASE("training is deterministic") {
  const auto prob = small_locator_problem();
  auto spec = models::ModelSpec::desk_scale(models::Variant::exact, models::Task::locate);
  spec.seed = 2;
  const auto dir = std::filesystem::temp_directory_path() / "platesym_train_det";
  std::filesystem::create_directories(dir);
  auto run = [&](const std::filesystem::path& hist) {
    models::Model model(spec);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 7;
    cfg.schedule = OneCycle::for_task(spec.task, cfg.epochs);
    cfg.history_path = hist;
    train(model, prob.train, prob.test, cfg);
  };
  run(dir / "a.jsonl");
  run(dir / "b.jsonl");
  CHECK_FALSE(slurp(dir / "a.jsonl").empty());
  CHECK(slurp(dir / "a.jsonl") == slurp(dir / "b.jsonl"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("train loss of the exact model falls over the first 20 epochs") {
  signals::SynthConfig sc;
  sc.plate.grid_points = 11;
  sc.plate.baselines = 1;
  sc.sym = {};
  sc.seed = 3;
  const auto ds = signals::synthesize_dataset(sc);
  const auto sp = signals::split(ds.size(), 0.8, sc.seed);
  const auto train_set = signals::localization_set(ds, sp.train), test_set = signals::localization_set(ds, sp.test);

  auto spec = models::ModelSpec::desk_scale(models::Variant::exact, models::Task::locate);
  spec.seed = 2;
  models::Model model(spec);
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.seed = 7;
  cfg.eval_every = 20;
  cfg.schedule = OneCycle::for_task(spec.task, cfg.epochs);
  const auto res = train(model, train_set, test_set, cfg);

  // Five-epoch moving average of the mini-batch train loss.
  std::vector<double> loss;
  for (const auto& rec : res.history) loss.push_back(rec["train_loss"].get<double>());
  std::vector<double> smooth;
  for (std::size_t e = 4; e < loss.size(); ++e) {
    smooth.push_back((loss[e - 4] + loss[e - 3] + loss[e - 2] + loss[e - 1] + loss[e]) / 5);
  }
  for (std::size_t e = 1; e < smooth.size(); ++e) {
    INFO("epoch " << e + 4 << ": " << smooth[e] << " after " << smooth[e - 1]);
    CHECK(smooth[e] <= smooth[e - 1]);
  }
  CHECK(loss.back() < 0.2 * loss.front());
}
