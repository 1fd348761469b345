#include "ospg/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>

namespace ospg::audio {

void FrontendConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("frontend: sample_rate must be positive");
  if (frame_len < 1 || frame_hop < 1) throw ConfigError("frontend: frame_len and frame_hop must be >= 1");
  if (fft_size < 2 || !std::has_single_bit(static_cast<unsigned>(fft_size))) {
    throw ConfigError("frontend: fft_size must be a power of two, got " + std::to_string(fft_size));
  }
  if (frame_len > fft_size) throw ConfigError("frontend: frame_len exceeds fft_size");
  if (n_mels < 1) throw ConfigError("frontend: n_mels must be >= 1");
  if (!(0.0 <= f_min && f_min < f_max && f_max <= sample_rate / 2.0)) {
    throw ConfigError("frontend: need 0 <= f_min < f_max <= sample_rate/2");
  }
}

int frame_count(std::size_t len, int frame_len, int hop) {
  if (len < static_cast<std::size_t>(frame_len)) return 0;
  return static_cast<int>((len - frame_len) / hop) + 1;
}

std::vector<float> frame_and_window(const AudioSignal& signal, const FrontendConfig& cfg) {
  const int n = frame_count(signal.samples.size(), cfg.frame_len, cfg.frame_hop);
  if (n == 0) {
    throw ValueError("frame_and_window: signal of " + std::to_string(signal.samples.size()) +
                     " samples is shorter than one frame (" + std::to_string(cfg.frame_len) + ")");
  }
  std::vector<double> window(cfg.frame_len);
  for (int i = 0; i < cfg.frame_len; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / cfg.frame_len);
  }
  std::vector<float> frames(static_cast<std::size_t>(n) * cfg.frame_len);
  for (int f = 0; f < n; ++f) {
    const float* src = signal.samples.data() + static_cast<std::size_t>(f) * cfg.frame_hop;
    float* dst = frames.data() + static_cast<std::size_t>(f) * cfg.frame_len;
    for (int i = 0; i < cfg.frame_len; ++i) dst[i] = static_cast<float>(src[i] * window[i]);
  }
  return frames;
}

void fft(std::span<std::complex<double>> values) {
  const std::size_t n = values.size();
  if (n == 0 || !std::has_single_bit(n)) throw ValueError("fft: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(values[i], values[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> step(std::cos(angle), std::sin(angle));
    for (std::size_t start = 0; start < n; start += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const auto even = values[start + k];
        const auto odd = values[start + k + len / 2] * w;
        values[start + k] = even + odd;
        values[start + k + len / 2] = even - odd;
        w *= step;
      }
    }
  }
}

std::vector<double> power_spectrum(std::span<const float> frames, int frame_len, int fft_size) {
  if (frame_len > fft_size) throw ValueError("power_spectrum: frame_len exceeds fft_size");
  const std::size_t n_frames = frames.size() / frame_len;
  const int bins = fft_size / 2 + 1;
  std::vector<double> out(n_frames * bins);
  std::vector<std::complex<double>> buf(fft_size);
  for (std::size_t f = 0; f < n_frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    for (int i = 0; i < frame_len; ++i) buf[i] = frames[f * frame_len + i];
    fft(buf);
    for (int k = 0; k < bins; ++k) out[f * bins + k] = std::norm(buf[k]);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(const FrontendConfig& cfg) {
  cfg.validate();
  MelFilterbank fb;
  fb.n_mels = cfg.n_mels;
  fb.n_bins = cfg.fft_size / 2 + 1;
  fb.weights.assign(static_cast<std::size_t>(fb.n_mels) * fb.n_bins, 0.0);
  const double lo = hz_to_mel(cfg.f_min);
  const double hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));
  for (int b = 0; b < cfg.n_mels; ++b) {
    const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
    fb.center_hz.push_back(center);
    for (int k = 0; k < fb.n_bins; ++k) {
      const double hz = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
      const double rise = (hz - left) / (center - left);
      const double fall = (right - hz) / (right - center);
      fb.weights[static_cast<std::size_t>(b) * fb.n_bins + k] = std::max(0.0, std::min(rise, fall));
    }
  }
  return fb;
}

MelSpectrogram log_mel(const AudioSignal& signal, const FrontendConfig& cfg) {
  cfg.validate();
  if (signal.sample_rate != cfg.sample_rate) {
    throw ValueError("log_mel: signal sample rate " + std::to_string(signal.sample_rate) +
                     " Hz does not match frontend rate " + std::to_string(cfg.sample_rate) + " Hz");
  }
  for (float s : signal.samples) {
    if (!std::isfinite(s)) throw ValueError("log_mel: non-finite sample");
  }
  const auto frames = frame_and_window(signal, cfg);
  const int n_frames = static_cast<int>(frames.size() / cfg.frame_len);
  const auto power = power_spectrum(frames, cfg.frame_len, cfg.fft_size);
  const auto fb = mel_filterbank(cfg);
  const double floor = std::exp(cfg.log_floor);
  MelSpectrogram mel{{}, n_frames, cfg.n_mels, cfg.frame_hop, cfg.frame_len};
  mel.frames.resize(static_cast<std::size_t>(n_frames) * cfg.n_mels);
  for (int f = 0; f < n_frames; ++f) {
    const double* row = power.data() + static_cast<std::size_t>(f) * fb.n_bins;
    for (int b = 0; b < cfg.n_mels; ++b) {
      double energy = 0.0;
      const double* w = fb.weights.data() + static_cast<std::size_t>(b) * fb.n_bins;
      for (int k = 0; k < fb.n_bins; ++k) energy += w[k] * row[k];
      mel.frames[static_cast<std::size_t>(f) * cfg.n_mels + b] =
          static_cast<float>(std::log(std::max(energy, floor)));
    }
  }
  return mel;
}

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}
void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v));
  out.push_back(static_cast<unsigned char>(v >> 8));
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open audio file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write audio file " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace

AudioSignal read_audio(const std::filesystem::path& path, int raw_sample_rate) {
  const auto bytes = slurp(path);
  AudioSignal signal;
  if (path.extension() == ".wav") {
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0 ||
        std::memcmp(bytes.data() + 12, "fmt ", 4) != 0 || std::memcmp(bytes.data() + 36, "data", 4) != 0) {
      throw IoError("not a canonical 44-byte-header WAVE file: " + path.string());
    }
    const auto format = read_u16(bytes.data() + 20);
    const auto channels = read_u16(bytes.data() + 22);
    const auto bits = read_u16(bytes.data() + 34);
    if (format != 1 || channels != 1 || bits != 16) {
      throw IoError("unsupported WAVE encoding in " + path.string() + " (need mono 16-bit PCM)");
    }
    signal.sample_rate = static_cast<int>(read_u32(bytes.data() + 24));
    const std::size_t data_len = std::min<std::size_t>(read_u32(bytes.data() + 40), bytes.size() - 44);
    signal.samples.resize(data_len / 2);
    for (std::size_t i = 0; i < signal.samples.size(); ++i) {
      const auto raw = static_cast<std::int16_t>(read_u16(bytes.data() + 44 + 2 * i));
      signal.samples[i] = static_cast<float>(raw) / 32768.0f;
    }
  } else if (path.extension() == ".f32") {
    if (bytes.size() % 4 != 0) throw IoError("raw float32 file size not a multiple of 4: " + path.string());
    signal.sample_rate = raw_sample_rate;
    signal.samples.resize(bytes.size() / 4);
    for (std::size_t i = 0; i < signal.samples.size(); ++i) {
      signal.samples[i] = std::bit_cast<float>(read_u32(bytes.data() + 4 * i));
    }
  } else {
    throw IoError("unknown audio extension '" + path.extension().string() + "' (expected .wav or .f32)");
  }
  return signal;
}

void write_wav(const std::filesystem::path& path, const AudioSignal& signal) {
  const auto data_len = static_cast<std::uint32_t>(signal.samples.size() * 2);
  std::vector<unsigned char> out;
  out.reserve(44 + data_len);
  for (char c : std::string_view("RIFF")) out.push_back(static_cast<unsigned char>(c));
  put_u32(out, 36 + data_len);
  for (char c : std::string_view("WAVEfmt ")) out.push_back(static_cast<unsigned char>(c));
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(signal.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  for (char c : std::string_view("data")) out.push_back(static_cast<unsigned char>(c));
  put_u32(out, data_len);
  for (float s : signal.samples) {
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0f, 32767.0f / 32768.0f) * 32768.0f));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  dump(path, out);
}

void write_raw_f32(const std::filesystem::path& path, const AudioSignal& signal) {
  std::vector<unsigned char> out;
  out.reserve(signal.samples.size() * 4);
  for (float s : signal.samples) put_u32(out, std::bit_cast<std::uint32_t>(s));
  dump(path, out);
}

}  // namespace ospg::audio
