#include "doctest.h"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "apnet/error.hpp"
#include "apnet/grad_check.hpp"
#include "apnet/losses.hpp"
#include "apnet/model.hpp"
#include "test_util.hpp"
#include "toy.hpp"

using namespace apnet;
using namespace apnet::nn;
using ad::DiffTensor;
using ad::Graph;
using ad::Var;
using testutil::kPi;

namespace {

DiffTensor<double> random_tensor(ad::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  DiffTensor<double> t(std::move(shape));
  for (double& v : t.values) v = dist(rng);
  return t;
}

ModelWeights<double> zero_weights(const ApnetConfig& cfg) {
  ModelWeights<double> w;
  for (const auto& [name, shape] : weight_shapes(cfg)) w.tensors.emplace(name, DiffTensor<double>(shape));
  return w;
}

// Weights for one subresblock under `prefix`.
void add_sub_weights(ModelWeights<double>& w, const std::string& prefix, std::size_t c, std::size_t k,
                     std::uint64_t seed, double scale) {
  w.tensors[prefix + ".dconv.weight"] = random_tensor({c, c, k}, seed, scale);
  w.tensors[prefix + ".dconv.bias"] = random_tensor({c}, seed + 1, scale);
  w.tensors[prefix + ".conv.weight"] = random_tensor({c, c, k}, seed + 2, scale);
  w.tensors[prefix + ".conv.bias"] = random_tensor({c}, seed + 3, scale);
}

double lrelu(double v, double slope) { return v >= 0 ? v : slope * v; }

}  // namespace

TEST_CASE("subresblock with zero weights is the identity") {
  ModelWeights<double> w;
  add_sub_weights(w, "s", 3, 5, 1, 0.0);
  Graph<double> g;
  const auto b = bind_constants(g, w);
  const DiffTensor<double> x = random_tensor({3, 7}, 2);
  const Var out = subresblock_forward(g, g.constant(x), b, "s", 5, 3, 0.1);
  CHECK(g.value(out) == x.values);
}

TEST_CASE("subresblock keeps its input shape over the kernel and dilation grid") {
  for (int k : {3, 7, 11}) {
    for (int d : {1, 3, 5}) {
      ModelWeights<double> w;
      add_sub_weights(w, "s", 4, static_cast<std::size_t>(k), 10 + k * d, 0.3);
      Graph<double> g;
      const auto b = bind_constants(g, w);
      const Var out = subresblock_forward(g, g.constant(random_tensor({4, 6}, 3)), b, "s", k, d, 0.1);
      CHECK(g.shape(out) == ad::Shape{4, 6});
    }
  }
}

TEST_CASE("subresblock rejects a kernel that does not match its weights") {
  ModelWeights<double> w;
  add_sub_weights(w, "s", 2, 3, 1, 0.1);
  Graph<double> g;
  const auto b = bind_constants(g, w);
  CHECK_THROWS_AS(subresblock_forward(g, g.constant(random_tensor({2, 4}, 2)), b, "s", 5, 1, 0.1), Error);
  ModelWeights<double> w3;
  add_sub_weights(w3, "s", 3, 3, 1, 0.1);
  Graph<double> g3;
  const auto b3 = bind_constants(g3, w3);
  CHECK_THROWS_AS(subresblock_forward(g3, g3.constant(random_tensor({2, 4}, 2)), b3, "s", 3, 1, 0.1), Error);
}

TEST_CASE("subresblock input gradient matches finite differences") {
  ModelWeights<double> w;
  add_sub_weights(w, "s", 3, 3, 5, 0.5);
  DiffTensor<double> x = random_tensor({3, 5}, 6);
  const auto report = ad::grad_check(
      [&](Graph<double>& g, Var xv) {
        const auto b = bind_constants(g, w);
        return g.mean_all(subresblock_forward(g, xv, b, "s", 3, 2, 0.1));
      },
      x, 1e-5, 1e-6);
  CHECK(report.passed);
  CHECK(report.checked > 0);
}

TEST_CASE("resnet structural identities") {
  ResNetConfig one;
  one.channels = 3;
  one.kernel_sizes = {3};
  one.dilations = {{1, 2}};
  ModelWeights<double> w;
  add_sub_weights(w, "r.block0.sub0", 3, 3, 20, 0.4);
  add_sub_weights(w, "r.block0.sub1", 3, 3, 30, 0.4);
  const DiffTensor<double> x = random_tensor({3, 6}, 4);

  SUBCASE("a single block equals LReLU of that block") {
    Graph<double> g;
    const auto b = bind_constants(g, w);
    const Var xv = g.constant(x);
    const Var out = resnet_forward(g, xv, one, b, "r");
    Var h = subresblock_forward(g, xv, b, "r.block0.sub0", 3, 1, 0.1);
    h = g.leaky_relu(subresblock_forward(g, h, b, "r.block0.sub1", 3, 2, 0.1), 0.1);
    CHECK(g.value(out) == g.value(h));
  }

  SUBCASE("zero weights give LReLU of the input") {
    ResNetConfig three;
    three.channels = 3;
    ApnetConfig full;
    full.asp = three;
    ModelWeights<double> zero;
    for (const auto& [name, shape] : weight_shapes(full))
      if (name.rfind("asp.block", 0) == 0) zero.tensors.emplace(name, DiffTensor<double>(shape));
    Graph<double> g;
    const auto b = bind_constants(g, zero);
    const Var out = resnet_forward(g, g.constant(x), three, b, "asp");
    const auto& v = g.value(out);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == doctest::Approx(lrelu(x.values[i], 0.1)).epsilon(1e-14));
  }

  SUBCASE("block order does not matter") {
    ResNetConfig two;
    two.channels = 3;
    two.kernel_sizes = {3, 5};
    two.dilations = {{1, 2}, {3, 1}};
    ResNetConfig swapped = two;
    std::swap(swapped.kernel_sizes[0], swapped.kernel_sizes[1]);
    std::swap(swapped.dilations[0], swapped.dilations[1]);
    ModelWeights<double> a, b;
    add_sub_weights(a, "r.block0.sub0", 3, 3, 40, 0.4);
    add_sub_weights(a, "r.block0.sub1", 3, 3, 50, 0.4);
    add_sub_weights(a, "r.block1.sub0", 3, 5, 60, 0.4);
    add_sub_weights(a, "r.block1.sub1", 3, 5, 70, 0.4);
    for (const auto& [name, t] : a.tensors) {
      std::string renamed = name;
      renamed[7] = name[7] == '0' ? '1' : '0';
      b.tensors[renamed] = t;
    }
    Graph<double> g;
    const auto ba = bind_constants(g, a);
    const auto bb = bind_constants(g, b);
    const Var xv = g.constant(x);
    const auto& va = g.value(resnet_forward(g, xv, two, ba, "r"));
    const auto& vb = g.value(resnet_forward(g, xv, swapped, bb, "r"));
    for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == doctest::Approx(vb[i]).epsilon(1e-14));
  }
}

TEST_CASE("config validation") {
  ApnetConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.spec_bins = 512;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.asp.kernel_sizes = {3, 6, 11};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.psp.dilations = {{1, 3, 5}, {1, 3}, {1, 3, 5}};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.psp.kernel_sizes = {3, 7};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.asp.channels = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.mel_dim = 64;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("init_weights is deterministic and matches the configuration") {
  const ApnetConfig cfg;
  const auto a = init_weights(cfg, 7);
  const auto b = init_weights(cfg, 7);
  const auto c = init_weights(cfg, 8);
  const auto shapes = weight_shapes(cfg);
  REQUIRE(a.tensors.size() == shapes.size());
  bool differs = false;
  double sum = 0.0, sumsq = 0.0;
  std::size_t n = 0;
  for (const auto& [name, shape] : shapes) {
    const auto& t = a.at(name);
    CHECK(t.shape == shape);
    CHECK(t.values == b.at(name).values);
    if (t.values != c.at(name).values) differs = true;
    const bool bias = name.size() > 5 && name.substr(name.size() - 5) == ".bias";
    if (bias) {
      CHECK(std::all_of(t.values.begin(), t.values.end(), [](float v) { return v == 0.0f; }));
    } else {
      for (float v : t.values) {
        sum += v;
        sumsq += double(v) * v;
        ++n;
      }
    }
  }
  CHECK(differs);
  const double mean = sum / n;
  const double sd = std::sqrt(sumsq / n - mean * mean);
  CHECK(std::abs(mean) < 1e-4);
  CHECK(sd == doctest::Approx(0.01).epsilon(0.01));
  // Two 32-channel towers plus 513-channel output layers.
  CHECK(shapes.at("asp.output.weight") == ad::Shape{513, 32, 7});
  CHECK(shapes.at("psp.output_imag.weight") == ad::Shape{513, 32, 7});
  CHECK(shapes.at("asp.input.weight") == ad::Shape{32, 80, 7});
  CHECK(shapes.at("psp.block2.sub2.dconv.weight") == ad::Shape{32, 32, 11});
}

TEST_CASE("asp output shape and zero-weight closed form") {
  const ApnetConfig cfg;
  const dsp::Matrix mel = testutil::random_matrix(6, 80, 3, -5.0, 1.0);
  {
    const auto w = init_weights(cfg, 1);
    Graph<float> g;
    const auto b = bind_constants(g, w);
    const Var out = asp_forward(g, mel_input(g, mel), b, cfg);
    CHECK(g.shape(out) == ad::Shape{513, 6});
  }
  auto w = zero_weights(cfg);
  for (std::size_t o = 0; o < 513; ++o) w.at("asp.output.bias").values[o] = 0.01 * static_cast<double>(o);
  Graph<double> g;
  const auto b = bind_constants(g, w);
  const Var out = asp_forward(g, mel_input(g, mel), b, cfg);
  const auto& v = g.value(out);
  for (std::size_t o = 0; o < 513; ++o)
    for (std::size_t f = 0; f < 6; ++f) CHECK(v[o * 6 + f] == 0.01 * static_cast<double>(o));
}

TEST_CASE("psp output range, scale invariance and zero-weight closed form") {
  const ApnetConfig cfg = testutil::toy_config(4);
  const dsp::Matrix mel = testutil::random_matrix(9, 2, 5, -3.0, 1.0);

  auto w = testutil::random_weights<double>(cfg, 11, 0.8);
  Graph<double> g;
  const auto b = bind_constants(g, w);
  const Var m = mel_input(g, mel);
  const PhaseHeads h = psp_forward(g, m, b, cfg);
  for (double p : g.value(h.phase)) {
    CHECK(p > -kPi);
    CHECK(p <= kPi);
  }

  // Scaling both head layers by c scales (R~, I~) by c.
  auto scaled = w;
  for (const char* head : {"psp.output_real", "psp.output_imag"})
    for (const char* part : {".weight", ".bias"})
      for (auto& v : scaled.at(std::string(head) + part).values) v *= 3.7;
  Graph<double> g2;
  const auto b2 = bind_constants(g2, scaled);
  const PhaseHeads h2 = psp_forward(g2, mel_input(g2, mel), b2, cfg);
  const auto& p1 = g.value(h.phase);
  const auto& p2 = g2.value(h2.phase);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p2[i] == doctest::Approx(p1[i]).epsilon(1e-12));

  auto zero = zero_weights(cfg);
  std::fill(zero.at("psp.output_real.bias").values.begin(), zero.at("psp.output_real.bias").values.end(), 1.0);
  Graph<double> g3;
  const auto b3 = bind_constants(g3, zero);
  const PhaseHeads h3 = psp_forward(g3, mel_input(g3, mel), b3, cfg);
  for (double p : g3.value(h3.phase)) CHECK(p == 0.0);
}

TEST_CASE("reconstruct_spectrum") {
  SUBCASE("unit phasor at zero log amplitude and phase") {
    Graph<double> g;
    const Var zero = g.constant({3, 4}, std::vector<double>(12, 0.0));
    const Spectrum s = reconstruct_spectrum(g, zero, zero);
    for (double v : g.value(s.real)) CHECK(v == 1.0);
    for (double v : g.value(s.imag)) CHECK(v == 0.0);
  }
  SUBCASE("inverse of log_amplitude and phase_spectrum") {
    const dsp::Matrix la = testutil::random_matrix(5, 9, 1, -4.0, 2.0);
    const dsp::Matrix ph = testutil::random_matrix(5, 9, 2, -3.1, 3.1);
    Graph<double> g;
    const Var a = g.constant({5, 9}, la.data);
    const Var p = g.constant({5, 9}, ph.data);
    const Spectrum s = reconstruct_spectrum(g, a, p);
    dsp::ComplexSpectrum cs;
    cs.real = dsp::Matrix(5, 9);
    cs.imag = dsp::Matrix(5, 9);
    cs.real.data = g.value(s.real);
    cs.imag.data = g.value(s.imag);
    const auto la2 = dsp::log_amplitude(cs);
    const auto ph2 = dsp::phase_spectrum(cs);
    for (std::size_t i = 0; i < la.data.size(); ++i) {
      CHECK(la2.data[i] == doctest::Approx(la.data[i]).epsilon(1e-12));
      CHECK(ph2.data[i] == doctest::Approx(ph.data[i]).epsilon(1e-12));
      CHECK(std::hypot(cs.real.data[i], cs.imag.data[i]) ==
            doctest::Approx(std::exp(la.data[i])).epsilon(1e-6));
    }
  }
  SUBCASE("shape mismatch") {
    Graph<double> g;
    CHECK_THROWS_AS(reconstruct_spectrum(g, g.constant({2, 3}, std::vector<double>(6)),
                                         g.constant({3, 2}, std::vector<double>(6))),
                    Error);
  }
}

TEST_CASE("asp gradient on a two-frame input") {
  const ApnetConfig cfg = testutil::toy_config(4);
  auto w = testutil::random_weights<double>(cfg, 21, 0.5);
  const DiffTensor<double> mel0 = random_tensor({2, 2}, 22, 2.0);
  const DiffTensor<double> r = random_tensor({5, 2}, 23);
  auto build_with = [&](DiffTensor<double>& mel) {
    return [&](Graph<double>& g) {
      const auto b = bind_parameters(g, w);
      const Var out = asp_forward(g, g.parameter(mel), b, cfg);
      return g.sum_all(g.mul(out, g.constant(r)));
    };
  };
  DiffTensor<double> mel = mel0;
  auto rep = ad::grad_check_param(build_with(mel), mel, 1e-3, 1e-4);
  CHECK(rep.passed);
  for (auto& [name, t] : w.tensors) {
    if (name.rfind("asp.", 0) != 0) continue;
    DiffTensor<double> m2 = mel0;
    const auto wr = ad::grad_check_param(build_with(m2), t, 1e-3, 1e-4);
    INFO(name << " rel " << wr.max_rel_error);
    CHECK(wr.passed);
    CHECK(wr.checked > 0);
  }
}

TEST_CASE("generator loss gradient with respect to every weight tensor") {
  const ApnetConfig cfg = testutil::toy_config(4);
  const auto setup = loss::LossSetup::make(cfg.stft, cfg.mel);
  const auto target = loss::natural_targets(testutil::random_signal(8, 31), setup);
  REQUIRE(target.frames() == 4);
  const loss::LossWeights lw;
  for (const double step : {1e-3, 1e-5}) {
    auto w = testutil::random_weights<double>(cfg, 32, 0.4);
    if (step == 1e-3) {
      // Keeps (R~, I~) away from the origin where the phase's third derivative defeats the coarse stencil.
      for (auto& v : w.at("psp.output_real.weight").values) v *= 0.25;
      for (auto& v : w.at("psp.output_imag.weight").values) v *= 0.25;
      for (auto& v : w.at("psp.output_real.bias").values) v = 1.0;
    }
    auto build = [&](Graph<double>& g) {
      const auto b = bind_parameters(g, w);
      const Prediction p = forward(g, mel_input(g, target.mel), b, cfg);
      return loss::generator_loss(g, p.log_amp, p.phase, target, setup, lw).total;
    };
    std::size_t skipped = 0, checked = 0;
    for (auto& [name, t] : w.tensors) {
      const auto rep = ad::grad_check_param(build, t, step, step == 1e-3 ? 1e-4 : 1e-6);
      INFO("h " << step << " " << name << " rel " << rep.max_rel_error << " at " << rep.worst_index);
      CHECK(rep.passed);
      skipped += rep.skipped;
      checked += rep.checked;
    }
    CHECK(checked > 0);
    CHECK(skipped * 10 <= checked);
  }
}

TEST_CASE("synthesize output length and frame-level graph") {
  const ApnetConfig cfg;
  const auto w = init_weights(cfg, 3);
  const dsp::Matrix mel = testutil::random_matrix(25, 80, 4, -8.0, 0.0);
  FrameLevelReport rep;
  const auto x = synthesize(mel, w, cfg, 0, &rep);
  CHECK(x.samples.size() == 25u * 80u);
  CHECK(x.sample_rate == 16000);
  CHECK(x.all_finite());
  CHECK(rep.ok);
  CHECK(rep.istft_nodes == 1);
  CHECK(rep.max_time_extent == 25);
  CHECK(rep.nodes_checked > 100);
  CHECK(synthesize(mel, w, cfg, 1234).samples.size() == 1234u);
  CHECK_THROWS_AS(synthesize(dsp::Matrix(0, 80), w, cfg), Error);
  CHECK_THROWS_AS(synthesize(dsp::Matrix(4, 79), w, cfg), Error);
}

TEST_CASE("frame-level inspection flags a sample-rate tensor") {
  Graph<float> g;
  const Var m = g.constant({2, 4}, std::vector<float>(8, 0.0f));
  g.mark_time_axis(m, 1);
  const Var wide = g.constant({2, 9}, std::vector<float>(18, 0.0f));
  g.mark_time_axis(wide, 1);
  const Var re = g.constant({4, 5}, std::vector<float>(20, 0.0f));
  g.istft(re, re, dsp::StftConfig{16000, 8, 2, 8, dsp::WindowKind::Hann}, 8);
  const auto rep = inspect_frame_level(g, 4);
  CHECK_FALSE(rep.ok);
  CHECK(rep.max_time_extent == 9);
}

TEST_CASE("network stage time grows linearly in the frame count") {
  const ApnetConfig cfg;
  const auto w = init_weights(cfg, 5);
  auto best_time = [&](std::size_t frames) {
    const dsp::Matrix mel = testutil::random_matrix(frames, 80, frames, -8.0, 0.0);
    double best = 1e30;
    for (int rep = 0; rep < 3; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)synthesize(mel, w, cfg);
      best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
  };
  const double t1 = best_time(100);
  const double t2 = best_time(200);
  INFO("F=100: " << t1 << " s, F=200: " << t2 << " s");
  CHECK(t2 / t1 > 2.0 * 0.7);
  CHECK(t2 / t1 < 2.0 * 1.3);
}
