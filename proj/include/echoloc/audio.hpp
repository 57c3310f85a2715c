// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "echoloc/propagation.hpp"
#include "echoloc/types.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>

namespace echoloc {

struct AudioClip {
    Eigen::ArrayXd samples;  // mono, amplitudes in [-1, 1]
    double sample_rate = 16000.0;
};

struct Spectrogram {
    // [frames x bins], log magnitude in dB floored at -80.
    Eigen::MatrixXd values;
    int window_length = 512;
    int frame_hop = 160;
    double sample_rate = 16000.0;

    Eigen::Index frames() const { return values.rows(); }
    Eigen::Index bins() const { return values.cols(); }
};

inline constexpr double kLogFloorDb = -80.0;
inline constexpr double kLogGuard = 1e-10;

enum class WavEncoding { Pcm16, Float32 };

AudioClip read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioClip& clip,
               WavEncoding encoding = WavEncoding::Pcm16);

/// Removes DC offset, then scales so max |sample| = 10^(target_db / 20).
AudioClip peak_normalize(const AudioClip& clip, double target_db);

/// Integrated loudness per ITU-R BS.1770-4 (K-weighting, 400 ms blocks with
/// 75% overlap, -70 LUFS absolute gate then -10 LU relative gate).
/// nullopt means everything fell below the gate.
std::optional<double> measure_lufs(const AudioClip& clip);

/// Single scalar gain toward the target, re-measured up to 3 times because
/// gating is level dependent. Throws on below-gate input or if the gain
/// would push the peak past full scale.
AudioClip loudness_normalize(const AudioClip& clip, double target_lufs);

/// Full linear convolution (len a + len b - 1) via FFT overlap-add.
Eigen::ArrayXd convolve_full(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b);

/// Reverb render: full convolution, then one documented anti-clip gain so the
/// peak stays at or below 10^(-1/20). The applied gain is reported through
/// `applied_gain` for reversibility.
AudioClip convolve(const AudioClip& dry, const ImpulseResponse& ir,
                   double* applied_gain = nullptr);

/// Hann-windowed STFT; frames = 1 + floor((len - window) / hop).
Spectrogram stft(const AudioClip& clip, int window_length = 512, int hop = 160);

// Binary spectrogram container: magic "ELSPEC1", then little-endian uint32
// frames and bins, then row-major float32 values.
void write_spectrogram(const std::string& path, const Spectrogram& spec);
Spectrogram read_spectrogram(const std::string& path);

}  // namespace echoloc
