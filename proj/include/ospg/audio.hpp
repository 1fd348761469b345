#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <vector>

#include "ospg/tensor.hpp"

namespace ospg::audio {

struct AudioSignal {
  std::vector<float> samples;
  int sample_rate = 16000;

  double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

struct FrontendConfig {
  int sample_rate = 16000;
  int frame_len = 400;
  int frame_hop = 160;
  int fft_size = 512;
  int n_mels = 80;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = -23.025850929940457;  // ln(1e-10)

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

// Row-major frames × n_mels matrix of natural-log mel energies.
struct MelSpectrogram {
  std::vector<float> frames;
  int n_frames = 0;
  int n_mels = 0;
  int frame_hop = 0;
  int frame_len = 0;

  float at(int frame, int band) const { return frames[static_cast<std::size_t>(frame) * n_mels + band]; }
  num::Tensor<float> to_tensor() const { return num::Tensor<float>({n_frames, n_mels}, frames); }
};

// floor((len − frame_len)/hop) + 1, or 0 when the signal is shorter than a frame.
int frame_count(std::size_t len, int frame_len, int hop);

// Hann-windowed frames, row-major [frame_count × frame_len].
std::vector<float> frame_and_window(const AudioSignal& signal, const FrontendConfig& cfg);

// In-place iterative radix-2 transform; size must be a power of two.
void fft(std::span<std::complex<double>> values);

// |DFT|² of each zero-padded frame: [n_frames × (fft_size/2 + 1)].
std::vector<double> power_spectrum(std::span<const float> frames, int frame_len, int fft_size);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
  int n_mels = 0;
  int n_bins = 0;
  std::vector<double> weights;       // [n_mels × n_bins]
  std::vector<double> center_hz;     // per band

  double weight(int band, int bin) const { return weights[static_cast<std::size_t>(band) * n_bins + bin]; }
};

// Triangular filters equally spaced on the mel scale between f_min and f_max.
MelFilterbank mel_filterbank(const FrontendConfig& cfg);

MelSpectrogram log_mel(const AudioSignal& signal, const FrontendConfig& cfg);

// Waveform files: 16-bit PCM mono with a canonical 44-byte RIFF header
// (".wav"), or raw little-endian float32 samples (".f32").
AudioSignal read_audio(const std::filesystem::path& path, int raw_sample_rate = 16000);
void write_wav(const std::filesystem::path& path, const AudioSignal& signal);
void write_raw_f32(const std::filesystem::path& path, const AudioSignal& signal);

}  // namespace ospg::audio
