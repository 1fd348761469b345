#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <random>

#include "ospg/audio.hpp"

using namespace ospg;
using namespace ospg::audio;

namespace {

std::vector<std::complex<double>> naive_dft(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> acc = 0;
    for (std::size_t t = 0; t < n; ++t)
      acc += x[t] * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t) / static_cast<double>(n));
    out[k] = acc;
  }
  return out;
}

AudioSignal sine(double hz, int n, double amp = 0.5, int rate = 16000) {
  AudioSignal s;
  s.sample_rate = rate;
  s.samples.resize(n);
  for (int i = 0; i < n; ++i) s.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / rate));
  return s;
}

}  // namespace

TEST_CASE("framing examples") {
  FrontendConfig cfg;
  AudioSignal s;
  s.samples.assign(1600, 0.1f);
  CHECK(frame_count(1600, 400, 160) == 8);
  CHECK(frame_and_window(s, cfg).size() == 8u * 400u);

  s.samples.assign(400, 0.1f);
  CHECK(frame_and_window(s, cfg).size() == 400u);

  s.samples.assign(1600, 0.0f);
  for (float v : frame_and_window(s, cfg)) CHECK(v == 0.0f);

  s.samples.assign(399, 0.1f);
  CHECK_THROWS_AS(frame_and_window(s, cfg), ValueError);
}

TEST_CASE("frame count law") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const int frame_len = 1 + static_cast<int>(rng() % 64);
    const int hop = 1 + static_cast<int>(rng() % 32);
    const std::size_t len = frame_len + rng() % 300;
    CHECK(frame_count(len, frame_len, hop) == static_cast<int>((len - frame_len) / hop) + 1);
  }
}

TEST_CASE("frames are Hann windowed") {
  FrontendConfig cfg;
  cfg.frame_len = 8;
  cfg.frame_hop = 8;
  cfg.fft_size = 8;
  AudioSignal s;
  s.samples.assign(8, 1.0f);
  auto f = frame_and_window(s, cfg);
  CHECK(f[0] == doctest::Approx(0.0).epsilon(1e-6));
  for (int i = 0; i < 8; ++i) CHECK(f[i] >= 0.0f);
  // periodic Hann: symmetric about N/2
  CHECK(f[4] == doctest::Approx(1.0));
  CHECK(f[3] == doctest::Approx(f[5]));
}

TEST_CASE("fft matches the naive DFT") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int n = 1; n <= 256; n *= 2) {
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    std::vector<std::complex<double>> fast(x.begin(), x.end());
    fft(fast);
    auto ref = naive_dft(x);
    double worst = 0;
    for (int k = 0; k < n; ++k) worst = std::max(worst, std::abs(fast[k] - ref[k]));
    CAPTURE(n);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("power spectrum examples") {
  const int n = 512;
  // Bin-center sine: bin 32 of 512 at 16 kHz is 1000 Hz, frame without window.
  std::vector<float> frame(n);
  for (int i = 0; i < n; ++i) frame[i] = static_cast<float>(std::sin(2 * std::numbers::pi * 32 * i / n));
  auto p = power_spectrum(frame, n, n);
  REQUIRE(p.size() == static_cast<std::size_t>(n / 2 + 1));
  double total = 0;
  for (double v : p) total += v;
  CHECK(p[32] / total >= 0.9);

  std::vector<float> zeros(n, 0.0f);
  for (double v : power_spectrum(zeros, n, n)) CHECK(v == 0.0);

  // Parseval on random frames, zero-padded 300 → 512.
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<float> x(300);
    double energy = 0;
    for (auto& v : x) {
      v = static_cast<float>(u(rng));
      energy += static_cast<double>(v) * v;
    }
    auto half = power_spectrum(x, 300, n);
    double full = half[0] + half[n / 2];
    for (int k = 1; k < n / 2; ++k) full += 2 * half[k];
    CHECK(full / n == doctest::Approx(energy).epsilon(1e-4));
  }
}

TEST_CASE("log_mel examples") {
  FrontendConfig cfg;
  AudioSignal silence;
  silence.samples.assign(16000, 0.0f);
  auto m = log_mel(silence, cfg);
  CHECK(m.n_mels == 80);
  CHECK(m.n_frames == frame_count(16000, 400, 160));
  for (float v : m.frames) CHECK(v == doctest::Approx(cfg.log_floor).epsilon(1e-6));

  auto bank = mel_filterbank(cfg);
  int nearest = 0;
  for (int b = 1; b < bank.n_mels; ++b)
    if (std::abs(bank.center_hz[b] - 1000.0) < std::abs(bank.center_hz[nearest] - 1000.0)) nearest = b;
  auto tone = log_mel(sine(1000.0, 16000), cfg);
  for (int f = 0; f < tone.n_frames; ++f) {
    int best = 0;
    for (int b = 1; b < tone.n_mels; ++b)
      if (tone.at(f, b) > tone.at(f, best)) best = b;
    CHECK(best == nearest);
  }

  AudioSignal wrong = sine(440, 8000, 0.5, 8000);
  CHECK_THROWS_AS(log_mel(wrong, cfg), ValueError);
}

TEST_CASE("filterbank partition") {
  FrontendConfig cfg;
  auto bank = mel_filterbank(cfg);
  const double bin_hz = static_cast<double>(cfg.sample_rate) / cfg.fft_size;
  for (double w : bank.weights) CHECK(w >= 0.0);
  // Interior bins: the outermost half-triangles cover only part of the range.
  for (int k = 0; k < bank.n_bins; ++k) {
    const double hz = k * bin_hz;
    if (hz <= bank.center_hz.front() || hz >= bank.center_hz.back()) continue;
    double total = 0;
    for (int b = 0; b < bank.n_mels; ++b) total += bank.weight(b, k);
    CAPTURE(k);
    CHECK(total > 0.0);
    CHECK(total <= 1.0001);
  }
}

TEST_CASE("scaling the waveform never lowers a log-mel cell") {
  FrontendConfig cfg;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0, 0.1);
  AudioSignal s;
  s.samples.resize(4000);
  for (auto& v : s.samples) v = static_cast<float>(g(rng));
  auto base = log_mel(s, cfg);
  for (float c : {1.5f, 2.0f, 4.0f}) {
    AudioSignal louder = s;
    for (auto& v : louder.samples) v *= c;
    auto m = log_mel(louder, cfg);
    for (std::size_t i = 0; i < m.frames.size(); ++i) CHECK(m.frames[i] >= base.frames[i]);
  }
}

TEST_CASE("wav and raw float round trips") {
  auto dir = std::filesystem::temp_directory_path() / "ospg_audio_test";
  std::filesystem::create_directories(dir);
  auto s = sine(300, 1000);
  write_wav(dir / "a.wav", s);
  auto w = read_audio(dir / "a.wav");
  REQUIRE(w.samples.size() == s.samples.size());
  for (std::size_t i = 0; i < s.samples.size(); ++i) CHECK(w.samples[i] == doctest::Approx(s.samples[i]).epsilon(1e-4));
  write_raw_f32(dir / "a.f32", s);
  CHECK(read_audio(dir / "a.f32").samples == s.samples);
  CHECK_THROWS_AS(read_audio(dir / "a.mp3"), IoError);
  CHECK_THROWS_AS(read_audio(dir / "missing.wav"), IoError);
  std::filesystem::remove_all(dir);
}
