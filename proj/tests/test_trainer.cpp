#include "doctest.h"

#include <cmath>
#include <fstream>
#include <random>

#include "apnet/checkpoint.hpp"
#include "apnet/error.hpp"
#include "apnet/trainer.hpp"
#include "json.hpp"
#include "test_util.hpp"
#include "toy.hpp"

using namespace apnet;
using namespace apnet::train;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("apnet_test_trainer_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<std::uint8_t> file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Full-size features, narrow towers: realistic shapes at a fraction of the cost.
nn::ApnetConfig small_config() {
  nn::ApnetConfig cfg;
  for (auto* r : {&cfg.asp, &cfg.psp}) {
    r->channels = 8;
    r->kernel_sizes = {3, 5};
    r->dilations = {{1, 3}, {1, 3}};
  }
  return cfg;
}

TrainConfig small_train(int epochs) {
  TrainConfig t;
  t.batch_size = 2;
  t.segment_samples = 1600;
  t.epochs = epochs;
  t.seed = 99;
  t.checkpoint_every = 5;
  t.learning_rate = 1e-3;
  return t;
}

std::vector<dsp::Waveform> corpus() {
  return {testutil::wave(testutil::tone(4000, 220.0, 16000, 0.4)),
          testutil::wave(testutil::random_signal(3000, 5, 0.3)), testutil::wave(testutil::tone(1000, 500.0, 16000))};
}

nn::ModelWeights<float> scalar_weight(float value, float grad) {
  nn::ModelWeights<float> w;
  ad::DiffTensor<float> t({1}, std::vector<float>{value});
  t.grad = {grad};
  w.tensors.emplace("w", std::move(t));
  return w;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  const TrainConfig cfg;
  CHECK(lr_schedule(cfg, 0) == 0.0002);
  CHECK(lr_schedule(cfg, 1) == doctest::Approx(0.0001998).epsilon(1e-12));
  CHECK(lr_schedule(cfg, 1000) == doctest::Approx(0.0002 * std::pow(0.999, 1000)).epsilon(1e-12));
  CHECK(lr_schedule(cfg, 1000) / 0.0002 == doctest::Approx(0.3677).epsilon(1e-3));
  CHECK_THROWS_AS(lr_schedule(cfg, -1), Error);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK_NOTHROW(t.validate(80));
  t.segment_samples = 8001;
  CHECK_THROWS_AS(t.validate(80), Error);
  t = TrainConfig{};
  t.lr_decay = 1.5;
  CHECK_THROWS_AS(t.validate(80), Error);
  t = TrainConfig{};
  t.beta2 = 1.0;
  CHECK_THROWS_AS(t.validate(80), Error);
  t = TrainConfig{};
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(80), Error);
}

TEST_CASE("adamw_step") {
  TrainConfig cfg;
  cfg.weight_decay = 0.0;

  SUBCASE("zero gradient and no decay leaves weights unchanged") {
    auto w = scalar_weight(0.37f, 0.0f);
    auto s = OptimizerState::zeros_like(w);
    adamw_step(w, s, cfg, 1e-3);
    CHECK(w.at("w").values[0] == 0.37f);
    CHECK(s.step == 1);
  }
  SUBCASE("first step moves by lr * sign(g) up to the epsilon factor") {
    for (const float g : {2.5f, -0.125f}) {
      auto w = scalar_weight(0.5f, g);
      auto s = OptimizerState::zeros_like(w);
      const double lr = 1e-3;
      adamw_step(w, s, cfg, lr);
      // m_hat = g and v_hat = g^2 after bias correction.
      const double expected = 0.5 - lr * g / (std::abs(static_cast<double>(g)) + cfg.adam_eps);
      CHECK(w.at("w").values[0] == static_cast<float>(expected));
      CHECK(s.m.at("w").values[0] == doctest::Approx((1 - 0.8) * g).epsilon(1e-6));
      CHECK(s.v.at("w").values[0] == doctest::Approx((1 - 0.99) * g * g).epsilon(1e-6));
    }
  }
  SUBCASE("decoupled decay shrinks by (1 - lr * lambda)") {
    cfg.weight_decay = 0.01;
    auto w = scalar_weight(0.8f, 0.0f);
    auto s = OptimizerState::zeros_like(w);
    adamw_step(w, s, cfg, 0.5);
    CHECK(w.at("w").values[0] == static_cast<float>(0.8f * (1.0 - 0.5 * 0.01)));
  }
  SUBCASE("non-finite gradient aborts without touching any weight") {
    auto w = scalar_weight(0.1f, 1.0f);
    ad::DiffTensor<float> bad({2}, std::vector<float>{1.0f, 2.0f});
    bad.grad = {0.0f, std::nanf("")};
    w.tensors.emplace("layer.bad", bad);
    auto s = OptimizerState::zeros_like(w);
    try {
      adamw_step(w, s, cfg, 1e-3);
      FAIL("expected a numeric error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Numeric);
      CHECK(std::string(e.what()).find("layer.bad") != std::string::npos);
    }
    CHECK(w.at("w").values[0] == 0.1f);
    CHECK(s.step == 0);
  }
}

TEST_CASE("sample_segment") {
  const auto setup = loss::LossSetup::make(dsp::StftConfig{}, dsp::MelConfig{});
  std::mt19937_64 rng(1);
  SUBCASE("short clip is zero-padded") {
    const auto clip = testutil::wave(testutil::random_signal(500, 2));
    const Segment s = sample_segment(clip, 8000, setup, rng);
    CHECK(s.start == 0);
    REQUIRE(s.wave.size() == 8000);
    CHECK(std::equal(clip.samples.begin(), clip.samples.end(), s.wave.samples.begin()));
    CHECK(std::all_of(s.wave.samples.begin() + 500, s.wave.samples.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("8000 samples give 100 mel frames at frame-aligned starts") {
    const auto clip = testutil::wave(testutil::random_signal(20000, 3));
    for (int i = 0; i < 20; ++i) {
      const Segment s = sample_segment(clip, 8000, setup, rng);
      CHECK(s.mel.rows == 100);
      CHECK(s.mel.cols == 80);
      CHECK(s.start % 80 == 0);
      CHECK(s.start + 8000 <= 20000);
      CHECK(s.wave.samples[0] == clip.samples[s.start]);
    }
  }
  SUBCASE("seeded choice is reproducible") {
    const auto clip = testutil::wave(testutil::random_signal(50000, 4));
    std::mt19937_64 a(7), b(7);
    for (int i = 0; i < 10; ++i) CHECK(sample_segment(clip, 8000, setup, a).start == sample_segment(clip, 8000, setup, b).start);
  }
}

TEST_CASE("training writes logs and checkpoints deterministically") {
  const auto cfg = small_config();
  const auto tc = small_train(5);  // 2 steps per epoch over 3 clips
  const auto dir_a = scratch("det_a");
  const auto dir_b = scratch("det_b");
  TrainOptions oa, ob;
  oa.out_dir = dir_a;
  ob.out_dir = dir_b;
  const auto ra = train::train(corpus(), cfg, tc, loss::LossWeights{}, oa);
  const auto rb = train::train(corpus(), cfg, tc, loss::LossWeights{}, ob);
  CHECK(ra.steps_per_epoch == 2);
  CHECK(ra.steps == 10);
  REQUIRE(std::filesystem::exists(dir_a / "step_00000010.apnt"));
  CHECK(std::filesystem::exists(dir_a / "step_00000005.apnt"));
  CHECK(std::filesystem::exists(dir_a / "final.apnt"));
  CHECK(file_bytes(dir_a / "step_00000010.apnt") == file_bytes(dir_b / "step_00000010.apnt"));
  for (std::size_t i = 0; i < ra.history.size(); ++i)
    CHECK(ra.history[i].report.l_g_total == rb.history[i].report.l_g_total);

  std::ifstream log(dir_a / "train_log.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"L_A", "L_IP", "L_GD", "L_PTD", "L_P", "L_C", "L_R", "L_I", "L_S", "L_Mel", "L_G_total",
                          "step", "epoch", "lr", "wall_ms"})
      CHECK(j.contains(k));
    ++lines;
    CHECK(j["step"].get<int>() == lines);
    CHECK(j["epoch"].get<int>() == (lines - 1) / 2);
  }
  CHECK(lines == 10);

  const auto ck = io::load_checkpoint(dir_a / "final.apnt");
  CHECK(ck.step == 10);
  CHECK(ck.epoch == 5);
  REQUIRE(ck.optimizer);
  CHECK(ck.optimizer->step == 10);
  for (const auto& [name, t] : ra.weights.tensors) CHECK(ck.weights.at(name).values == t.values);
}

TEST_CASE("resuming reproduces the uninterrupted trajectory") {
  const auto cfg = small_config();
  auto tc = small_train(6);
  const auto dir = scratch("resume");
  TrainOptions o;
  o.out_dir = dir;
  const auto full = train::train(corpus(), cfg, tc, loss::LossWeights{}, o);

  const auto mid = io::load_checkpoint(dir / "step_00000005.apnt");
  const auto dir2 = scratch("resume2");
  TrainOptions o2;
  o2.out_dir = dir2;
  o2.resume = &mid;
  const auto resumed = train::train(corpus(), cfg, tc, loss::LossWeights{}, o2);
  CHECK(resumed.steps == 12);
  REQUIRE(resumed.history.size() == 7);
  for (std::size_t i = 0; i < 7; ++i)
    CHECK(resumed.history[i].report.l_g_total == full.history[5 + i].report.l_g_total);
  for (const auto& [name, t] : full.weights.tensors) CHECK(resumed.weights.at(name).values == t.values);

  auto other = cfg;
  other.asp.channels = 4;
  CHECK_THROWS_AS(train::train(corpus(), other, tc, loss::LossWeights{}, o2), Error);
}

TEST_CASE("zero epochs writes the initial model") {
  const auto cfg = small_config();
  const auto dir = scratch("zero");
  TrainOptions o;
  o.out_dir = dir;
  const auto r = train::train(corpus(), cfg, small_train(0), loss::LossWeights{}, o);
  CHECK(r.steps == 0);
  const auto ck = io::load_checkpoint(dir / "final.apnt");
  const auto init = nn::init_weights(cfg, 99);
  for (const auto& [name, t] : init.tensors) CHECK(ck.weights.at(name).values == t.values);
}

TEST_CASE("training reduces the amplitude and mel losses") {
  const auto cfg = small_config();
  auto tc = small_train(40);
  tc.batch_size = 1;
  const std::vector<dsp::Waveform> one = {testutil::wave(testutil::tone(1600, 300.0, 16000, 0.4))};
  const auto r = train::train(one, cfg, tc, loss::LossWeights{});
  REQUIRE(r.history.size() == 40);
  CHECK(r.history.back().report.l_a < r.history.front().report.l_a);
  CHECK(r.history.back().report.l_mel < r.history.front().report.l_mel);
}

TEST_CASE("startup and numeric errors") {
  const auto cfg = small_config();
  CHECK_THROWS_AS(train::train({}, cfg, small_train(1), loss::LossWeights{}), Error);
  CHECK_THROWS_AS(train::train({testutil::wave(testutil::tone(100, 1.0, 16000), 22050)}, cfg, small_train(1),
                        loss::LossWeights{}),
                  Error);

  const auto dir = scratch("halt");
  auto tc = small_train(5);
  tc.learning_rate = 1e30;
  tc.weight_decay = 0.0;
  TrainOptions o;
  o.out_dir = dir;
  try {
    train::train(corpus(), cfg, tc, loss::LossWeights{}, o);
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
  }
  CHECK(std::filesystem::exists(dir / "halt.apnt"));
  CHECK_NOTHROW(io::load_checkpoint(dir / "halt.apnt"));
}
