#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "apnet/apnet.h"
#include "wav_util.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "apnet_test_capi" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct SettingsHandle {
  apnet_settings* s = nullptr;
  SettingsHandle() { REQUIRE(apnet_settings_new(&s) == APNET_OK); }
  ~SettingsHandle() { apnet_settings_free(s); }
  void set(const char* a) { REQUIRE_MESSAGE(apnet_settings_set(s, a) == APNET_OK, apnet_last_error()); }
};

/// Narrow, shallow model so training runs in well under a second per step.
void small_model(SettingsHandle& h) {
  h.set("model.channels=4");
  h.set("model.kernel_sizes=[3]");
  h.set("model.dilations=[[1]]");
  h.set("train.batch_size=1");
  h.set("train.segment_samples=1600");
  h.set("train.checkpoint_every=0");
}

std::vector<std::string> lines;
void collect(const char* line, void*) { lines.emplace_back(line); }

}  // namespace

TEST_CASE("settings handle") {
  CHECK(std::string(apnet_version()).size() > 0);
  SettingsHandle h;
  CHECK(apnet_settings_validate(h.s) == APNET_OK);
  CHECK(std::string(apnet_last_error()).empty());
  CHECK(apnet_settings_set(h.s, "model.width=3") == APNET_ERR_USAGE);
  CHECK(std::string(apnet_last_error()).find("unknown setting 'model.width'") != std::string::npos);
  CHECK(apnet_settings_set(h.s, "stft.frame_shift=77") == APNET_OK);
  CHECK(apnet_settings_validate(h.s) == APNET_ERR_USAGE);
  h.set("stft.frame_shift=80");
  h.set("mel.num_mels=40");

  size_t needed = 0;
  REQUIRE(apnet_settings_text(h.s, nullptr, 0, &needed) == APNET_OK);
  std::string text(needed, '\0');
  REQUIRE(apnet_settings_text(h.s, text.data(), text.size(), &needed) == APNET_OK);
  text.resize(needed - 1);
  CHECK(text.find("num_mels = 40") != std::string::npos);
  char tiny[4];
  REQUIRE(apnet_settings_text(h.s, tiny, sizeof tiny, &needed) == APNET_OK);
  CHECK(std::strlen(tiny) == 3);

  const auto dir = scratch("settings");
  std::ofstream(dir / "a.cfg") << text;
  SettingsHandle other;
  REQUIRE(apnet_settings_load(other.s, (dir / "a.cfg").string().c_str()) == APNET_OK);
  CHECK(apnet_settings_load(other.s, (dir / "none.cfg").string().c_str()) == APNET_ERR_DATA);
  CHECK(apnet_settings_new(nullptr) == APNET_ERR_USAGE);
  CHECK(apnet_settings_set(nullptr, "a.b=1") == APNET_ERR_USAGE);
}

TEST_CASE("last error is per thread") {
  SettingsHandle h;
  CHECK(apnet_settings_set(h.s, "nope.key=1") == APNET_ERR_USAGE);
  std::string seen_in_thread = "unset";
  std::thread([&] { seen_in_thread = apnet_last_error(); }).join();
  CHECK(seen_in_thread.empty());
  CHECK(std::string(apnet_last_error()).find("nope.key") != std::string::npos);
}

TEST_CASE("analyze and copy synthesis") {
  const auto dir = scratch("analyze");
  const auto x = testutil::harmonic_clip(16000);
  testutil::write_pcm16(dir / "in.wav", x);
  SettingsHandle h;
  size_t frames = 0;
  REQUIRE(apnet_analyze(h.s, (dir / "in.wav").string().c_str(), (dir / "feat").string().c_str(), &frames) == APNET_OK);
  CHECK(frames == 200);
  for (const char* f : {"mel.apf", "logamp.apf", "phase.apf"}) CHECK(fs::exists(dir / "feat" / f));

  size_t samples = 0;
  double snr = 0;
  int has_snr = 0;
  REQUIRE(apnet_copysynth(h.s, (dir / "in.wav").string().c_str(), (dir / "a.wav").string().c_str(), &samples, &snr,
                          &has_snr) == APNET_OK);
  CHECK(samples == 16000);
  CHECK(has_snr == 1);
  CHECK(snr >= 60.0);
  REQUIRE(apnet_copysynth(h.s, (dir / "feat").string().c_str(), (dir / "b.wav").string().c_str(), &samples, &snr,
                          &has_snr) == APNET_OK);
  CHECK(has_snr == 0);
  CHECK(testutil::read_file(dir / "a.wav") == testutil::read_file(dir / "b.wav"));

  testutil::write_pcm16(dir / "stereo.wav", x, 16000, 2);
  CHECK(apnet_analyze(h.s, (dir / "stereo.wav").string().c_str(), (dir / "s").string().c_str(), &frames) ==
        APNET_ERR_DATA);
  CHECK(std::string(apnet_last_error()).find("channels") != std::string::npos);
}

TEST_CASE("train, load, synthesize, evaluate and bench") {
  const auto dir = scratch("train");
  fs::create_directories(dir / "corpus");
  const auto x = testutil::harmonic_clip(8000);
  testutil::write_pcm16(dir / "corpus" / "clip.wav", x);
  SettingsHandle h;
  small_model(h);
  h.set("train.epochs=4");
  lines.clear();
  long long steps = 0;
  REQUIRE_MESSAGE(apnet_train(h.s, (dir / "corpus").string().c_str(), (dir / "out").string().c_str(), nullptr,
                              nullptr, collect, nullptr, &steps) == APNET_OK,
                  apnet_last_error());
  CHECK(steps == 4);
  REQUIRE(lines.size() == 4);
  CHECK(lines[0].find("\"median_L_A\"") != std::string::npos);

  apnet_model* m = nullptr;
  REQUIRE(apnet_model_load((dir / "out" / "final.apnt").string().c_str(), &m) == APNET_OK);
  size_t needed = 0;
  REQUIRE(apnet_model_info(m, nullptr, 0, &needed) == APNET_OK);
  std::string info(needed, '\0');
  REQUIRE(apnet_model_info(m, info.data(), info.size(), &needed) == APNET_OK);
  CHECK(info.find("\"step\":4") != std::string::npos);

  std::vector<double> mel(10 * 80, -4.0);
  std::vector<double> out(800);
  size_t written = 0;
  REQUIRE(apnet_synthesize_mel(m, mel.data(), 10, 80, out.data(), out.size(), &written) == APNET_OK);
  CHECK(written == 800);
  CHECK(apnet_synthesize_mel(m, mel.data(), 10, 80, out.data(), 799, &written) == APNET_ERR_USAGE);
  CHECK(apnet_synthesize_mel(m, mel.data(), 10, 79, out.data(), out.size(), &written) == APNET_ERR_DATA);

  int ok = 0;
  size_t extent = 0, nodes = 0;
  REQUIRE(apnet_frame_level_check(m, 37, &ok, &extent, &nodes) == APNET_OK);
  CHECK(ok == 1);
  CHECK(extent == 37);
  CHECK(nodes > 10);

  size_t frames = 0, samples = 0;
  const auto wav = (dir / "corpus" / "clip.wav").string();
  REQUIRE(apnet_synthesize(m, h.s, wav.c_str(), (dir / "syn.wav").string().c_str(), &frames, &samples) == APNET_OK);
  CHECK(frames == 100);
  CHECK(samples == 8000);
  SettingsHandle other;
  other.set("mel.f_max=7000");
  CHECK(apnet_synthesize(m, other.s, wav.c_str(), (dir / "x.wav").string().c_str(), &frames, &samples) ==
        APNET_ERR_USAGE);
  CHECK(std::string(apnet_last_error()).find("mel.f_max") != std::string::npos);

  lines.clear();
  size_t evaluated = 0, skipped = 0;
  const auto jsonl = (dir / "e.jsonl").string();
  REQUIRE(apnet_eval(h.s, (dir / "corpus").string().c_str(), nullptr, m, 1, jsonl.c_str(), collect, nullptr, nullptr,
                     &evaluated, &skipped) == APNET_OK);
  CHECK(evaluated == 1);
  CHECK(skipped == 0);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] == "clip_id,snr_db,las_rmse_db,mcd_db,consistency_gap,rtf");
  CHECK(lines[1].rfind("clip,", 0) == 0);
  CHECK(lines[1].back() != ',');  // rtf present in checkpoint mode
  CHECK(lines[2].rfind("mean,", 0) == 0);
  CHECK(testutil::read_file(jsonl).find("\"clip_id\":\"clip\"") != std::string::npos);
  CHECK(apnet_eval(h.s, (dir / "corpus").string().c_str(), (dir / "corpus").string().c_str(), m, 1, nullptr, nullptr,
                   nullptr, nullptr, &evaluated, &skipped) == APNET_ERR_USAGE);

  const int counts[] = {1, 2};
  double rtf[2] = {0, 0}, wall[2] = {0, 0};
  REQUIRE(apnet_bench(m, 1.0, counts, 2, 0, rtf, wall) == APNET_OK);
  CHECK(rtf[0] > 0);
  CHECK(rtf[1] > 0);
  CHECK(rtf[0] == doctest::Approx(wall[0]));
  apnet_model_free(m);

  std::ofstream(dir / "bad.apnt") << "XXXXjunk";
  CHECK(apnet_model_load((dir / "bad.apnt").string().c_str(), &m) == APNET_ERR_DATA);
  CHECK(m == nullptr);
}

TEST_CASE("compare and numeric errors") {
  SettingsHandle h;
  auto x = testutil::harmonic_clip(4000);
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> noise(-0.01, 0.01);
  for (double& v : x) v += noise(rng);  // keeps every bin above the log floor
  std::vector<double> half(x);
  for (double& v : half) v *= 0.5;
  double snr = 0, las = 0, mcd = 0;
  REQUIRE(apnet_compare(h.s, x.data(), x.data(), x.size(), &snr, &las, &mcd) == APNET_OK);
  CHECK(snr == 120.0);
  CHECK(las == 0.0);
  CHECK(mcd == 0.0);
  REQUIRE(apnet_compare(h.s, x.data(), half.data(), x.size(), &snr, &las, &mcd) == APNET_OK);
  CHECK(las == doctest::Approx(6.0206).epsilon(1e-4));

  const auto dir = scratch("numeric");
  fs::create_directories(dir / "corpus");
  testutil::write_pcm16(dir / "corpus" / "c.wav", testutil::harmonic_clip(3200));
  small_model(h);
  h.set("train.learning_rate=1e30");
  h.set("train.weight_decay=0");
  h.set("train.epochs=5");
  long long steps = 0;
  CHECK(apnet_train(h.s, (dir / "corpus").string().c_str(), (dir / "out").string().c_str(), nullptr, nullptr, nullptr,
                    nullptr, &steps) == APNET_ERR_NUMERIC);
  CHECK(fs::exists(dir / "out" / "halt.apnt"));
  CHECK(apnet_train(h.s, (dir / "empty").string().c_str(), (dir / "out").string().c_str(), nullptr, nullptr, nullptr,
                    nullptr, &steps) == APNET_ERR_DATA);
}
