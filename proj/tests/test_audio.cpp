// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "echoloc/audio.hpp"
#include "echoloc/rng.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>

using namespace echoloc;

namespace {

AudioClip noise_clip(int len, double amplitude, std::uint64_t seed,
                     double fs = 16000.0) {
    AudioClip c;
    c.sample_rate = fs;
    c.samples.resize(len);
    RandomStream rng(seed);
    for (int i = 0; i < len; ++i)
        c.samples[i] = amplitude * (2.0 * rng.next_double() - 1.0);
    return c;
}

// O(n*m) time-domain convolution, the FFT oracle.
Eigen::ArrayXd direct_convolve(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(a.size() + b.size() - 1);
    for (Eigen::Index i = 0; i < a.size(); ++i)
        for (Eigen::Index j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
    return out;
}

// O(n^2) reference DFT for STFT verification.
std::vector<std::complex<double>> direct_dft(const Eigen::ArrayXd& x) {
    const auto n = x.size();
    std::vector<std::complex<double>> out(static_cast<size_t>(n));
    for (Eigen::Index k = 0; k < n; ++k) {
        std::complex<double> acc = 0.0;
        for (Eigen::Index t = 0; t < n; ++t)
            acc += x[t] * std::exp(std::complex<double>(
                              0.0, -2.0 * std::numbers::pi * k * t / n));
        out[static_cast<size_t>(k)] = acc;
    }
    return out;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("WAV PCM16 round trip is integer exact") {
    TempFile f("test_pcm16.wav");
    AudioClip c;
    c.sample_rate = 16000;
    c.samples.resize(1000);
    RandomStream rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto q = static_cast<int>(rng.next_below(65536)) - 32768;
        c.samples[i] = q / 32768.0;
    }
    write_wav(f.path, c, WavEncoding::Pcm16);
    AudioClip back = read_wav(f.path);
    REQUIRE(back.samples.size() == 1000);
    CHECK(back.sample_rate == 16000);
    for (int i = 0; i < 1000; ++i) CHECK(back.samples[i] == c.samples[i]);
}

TEST_CASE("PCM16 scaling convention") {
    TempFile f("test_pcm16_scale.wav");
    AudioClip c;
    c.samples.resize(2);
    c.samples << -1.0, 32767.0 / 32768.0;
    write_wav(f.path, c, WavEncoding::Pcm16);
    AudioClip back = read_wav(f.path);
    CHECK(back.samples[0] == -1.0);
    CHECK(back.samples[1] == 32767.0 / 32768.0);

    SUBCASE("over full scale is a clipping error") {
        c.samples[1] = 1.0;  // would quantize to +32768, out of range
        CHECK_THROWS_AS(write_wav(f.path, c, WavEncoding::Pcm16), UserError);
    }
}

TEST_CASE("WAV float32 round trip") {
    TempFile f("test_f32.wav");
    AudioClip c = noise_clip(500, 0.9, 2);
    write_wav(f.path, c, WavEncoding::Float32);
    AudioClip back = read_wav(f.path);
    REQUIRE(back.samples.size() == 500);
    for (int i = 0; i < 500; ++i)
        CHECK(back.samples[i] ==
              doctest::Approx(c.samples[i]).epsilon(1e-7));
}

TEST_CASE("WAV reader rejects unsupported input") {
    SUBCASE("24-bit PCM") {
        TempFile f("test_24bit.wav");
        // Hand-built header: PCM, 1 channel, 24 bits per sample.
        std::ofstream os(f.path, std::ios::binary);
        auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](std::uint16_t v) { os.write(reinterpret_cast<char*>(&v), 2); };
        os.write("RIFF", 4); u32(36 + 6); os.write("WAVE", 4);
        os.write("fmt ", 4); u32(16); u16(1); u16(1); u32(16000);
        u32(16000 * 3); u16(3); u16(24);
        os.write("data", 4); u32(6); u32(0); u16(0);
        os.close();
        CHECK_THROWS_AS(read_wav(f.path), ParseError);
    }
    SUBCASE("stereo") {
        TempFile f("test_stereo.wav");
        std::ofstream os(f.path, std::ios::binary);
        auto u32 = [&](std::uint32_t v) { os.write(reinterpret_cast<char*>(&v), 4); };
        auto u16 = [&](std::uint16_t v) { os.write(reinterpret_cast<char*>(&v), 2); };
        os.write("RIFF", 4); u32(36 + 8); os.write("WAVE", 4);
        os.write("fmt ", 4); u32(16); u16(1); u16(2); u32(16000);
        u32(16000 * 4); u16(4); u16(16);
        os.write("data", 4); u32(8); u32(0); u32(0);
        os.close();
        CHECK_THROWS_AS(read_wav(f.path), ParseError);
    }
    SUBCASE("truncated file") {
        TempFile f("test_trunc.wav");
        std::ofstream os(f.path, std::ios::binary);
        os.write("RIFF\x10\x00\x00\x00WA", 10);
        os.close();
        CHECK_THROWS_AS(read_wav(f.path), ParseError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(read_wav("no_such.wav"), UserError);
    }
}

TEST_CASE("peak normalize") {
    SUBCASE("peak 0.5 to -1 dB") {
        AudioClip c = noise_clip(1000, 1.0, 3);
        c.samples *= 0.5 / c.samples.abs().maxCoeff();
        AudioClip out = peak_normalize(c, -1.0);
        CHECK(out.samples.abs().maxCoeff() ==
              doctest::Approx(std::pow(10.0, -1.0 / 20.0)).epsilon(1e-9));
    }
    SUBCASE("idempotent at fixed target") {
        AudioClip c = noise_clip(1000, 0.7, 4);
        AudioClip once = peak_normalize(c, -1.0);
        AudioClip twice = peak_normalize(once, -1.0);
        for (int i = 0; i < 1000; ++i)
            CHECK(twice.samples[i] == doctest::Approx(once.samples[i]).epsilon(1e-12));
    }
    SUBCASE("constant clip degenerates after DC removal") {
        AudioClip c;
        c.samples = Eigen::ArrayXd::Constant(100, 0.3);
        CHECK_THROWS_AS(peak_normalize(c, -1.0), UserError);
    }
    SUBCASE("mean is removed") {
        AudioClip c = noise_clip(1000, 0.4, 5);
        c.samples += 0.2;
        AudioClip out = peak_normalize(c, -1.0);
        CHECK(std::abs(out.samples.mean()) < 1e-9);
    }
}

TEST_CASE("LUFS measurement") {
    SUBCASE("silence is below the gate") {
        AudioClip c;
        c.sample_rate = 48000;
        c.samples = Eigen::ArrayXd::Zero(48000);
        CHECK(!measure_lufs(c).has_value());
    }
    SUBCASE("997 Hz full-scale sine reads -3.01 LUFS at 48 kHz") {
        // Reference value from the BS.1770 definition: the -0.691 offset is
        // chosen so a full-scale 997 Hz sine reads 10*log10(1/2) LUFS.
        AudioClip c;
        c.sample_rate = 48000;
        c.samples.resize(96000);
        for (int i = 0; i < 96000; ++i)
            c.samples[i] = std::sin(2.0 * std::numbers::pi * 997.0 * i / 48000.0);
        auto lufs = measure_lufs(c);
        REQUIRE(lufs.has_value());
        CHECK(*lufs == doctest::Approx(-3.01).epsilon(0.0333));  // +-0.1 LU
    }
    SUBCASE("997 Hz sine at 16 kHz matches the same reference") {
        AudioClip c;
        c.sample_rate = 16000;
        c.samples.resize(32000);
        for (int i = 0; i < 32000; ++i)
            c.samples[i] = std::sin(2.0 * std::numbers::pi * 997.0 * i / 16000.0);
        auto lufs = measure_lufs(c);
        REQUIRE(lufs.has_value());
        CHECK(*lufs == doctest::Approx(-3.01).epsilon(0.0333));
    }
    SUBCASE("clip shorter than one block is an error") {
        AudioClip c;
        c.sample_rate = 48000;
        c.samples = Eigen::ArrayXd::Ones(1000);
        CHECK_THROWS_AS(measure_lufs(c), UserError);
    }
    SUBCASE("unsupported sample rate") {
        AudioClip c;
        c.sample_rate = 22050;
        c.samples = Eigen::ArrayXd::Ones(22050);
        CHECK_THROWS_AS(measure_lufs(c), UserError);
    }
}

TEST_CASE("loudness normalization fixpoint") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        AudioClip c = noise_clip(16000, 0.02 + 0.03 * double(seed + 1), 50 + seed);
        AudioClip out = loudness_normalize(c, -20.0);
        auto lufs = measure_lufs(out);
        REQUIRE(lufs.has_value());
        CHECK(*lufs == doctest::Approx(-20.0).epsilon(0.005));  // +-0.1 LU
    }
    SUBCASE("gain near unity when already at target") {
        AudioClip c = noise_clip(16000, 0.1, 60);
        AudioClip at_target = loudness_normalize(c, -18.0);
        AudioClip again = loudness_normalize(at_target, -18.0);
        CHECK((again.samples - at_target.samples).abs().maxCoeff() < 1e-3);
    }
    SUBCASE("clipping guard") {
        AudioClip c = noise_clip(16000, 0.95, 61);
        CHECK_THROWS_AS(loudness_normalize(c, -1.0), UserError);
    }
}

TEST_CASE("FFT convolution equals the direct oracle") {
    RandomStream rng(8);
    for (int trial = 0; trial < 25; ++trial) {
        const int na = 16 + static_cast<int>(rng.next_below(1000));
        const int nb = 4 + static_cast<int>(rng.next_below(300));
        Eigen::ArrayXd a(na), b(nb);
        for (int i = 0; i < na; ++i) a[i] = rng.uniform(-1, 1);
        for (int i = 0; i < nb; ++i) b[i] = rng.uniform(-1, 1);
        const Eigen::ArrayXd fast = convolve_full(a, b);
        const Eigen::ArrayXd slow = direct_convolve(a, b);
        REQUIRE(fast.size() == slow.size());
        CHECK((fast - slow).abs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("convolution identities") {
    AudioClip dry = noise_clip(1000, 0.5, 9);
    SUBCASE("unit impulse is identity") {
        Eigen::ArrayXd delta = Eigen::ArrayXd::Zero(64);
        delta[0] = 1.0;
        const Eigen::ArrayXd out = convolve_full(dry.samples, delta);
        for (int i = 0; i < 1000; ++i)
            CHECK(out[i] == doctest::Approx(dry.samples[i]).epsilon(1e-9));
    }
    SUBCASE("delayed impulse shifts") {
        Eigen::ArrayXd delta = Eigen::ArrayXd::Zero(64);
        delta[17] = 1.0;
        const Eigen::ArrayXd out = convolve_full(dry.samples, delta);
        for (int i = 0; i < 1000; ++i)
            CHECK(out[i + 17] == doctest::Approx(dry.samples[i]).epsilon(1e-9));
    }
    SUBCASE("linearity") {
        AudioClip other = noise_clip(1000, 0.5, 10);
        Eigen::ArrayXd ir(128);
        RandomStream rng(11);
        for (int i = 0; i < 128; ++i) ir[i] = rng.uniform(-0.1, 0.1);
        const Eigen::ArrayXd lhs = convolve_full(dry.samples + other.samples, ir);
        const Eigen::ArrayXd rhs =
            convolve_full(dry.samples, ir) + convolve_full(other.samples, ir);
        CHECK((lhs - rhs).abs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("reverb render applies one documented anti-clip gain") {
    AudioClip dry = noise_clip(4000, 0.9, 12);
    ImpulseResponse ir;
    ir.sample_rate = 16000;
    ir.samples = Eigen::ArrayXd::Zero(400);
    ir.samples[0] = 1.0;
    ir.samples[100] = 0.8;
    ir.samples[399] = 0.5;
    double gain = 0.0;
    AudioClip wet = convolve(dry, ir, &gain);
    CHECK(wet.samples.size() == 4000 + 400 - 1);
    CHECK(wet.samples.abs().maxCoeff() <=
          std::pow(10.0, -1.0 / 20.0) * (1 + 1e-12));
    // The gain reverses exactly to the raw convolution.
    const Eigen::ArrayXd raw = convolve_full(dry.samples, ir.samples);
    CHECK(((wet.samples / gain) - raw).abs().maxCoeff() < 1e-9);

    SUBCASE("sample-rate mismatch") {
        ir.sample_rate = 48000;
        CHECK_THROWS_AS(convolve(dry, ir), UserError);
    }
}

TEST_CASE("STFT") {
    SUBCASE("frame count formula") {
        for (int len : {512, 513, 800, 4096, 16000}) {
            for (int hop : {128, 160, 512}) {
                AudioClip c = noise_clip(len, 0.5, 13);
                Spectrogram s = stft(c, 512, hop);
                CHECK(s.frames() == 1 + (len - 512) / hop);
                CHECK(s.bins() == 257);
            }
        }
    }
    SUBCASE("sine at a bin center peaks at that bin") {
        const double fs = 16000.0;
        const int window = 512;
        const double f = 40.0 * fs / window;  // exactly bin 40
        AudioClip c;
        c.sample_rate = fs;
        c.samples.resize(4096);
        for (int i = 0; i < 4096; ++i)
            c.samples[i] = std::sin(2.0 * std::numbers::pi * f * i / fs);
        Spectrogram s = stft(c, window, 160);
        for (Eigen::Index fr = 0; fr < s.frames(); ++fr) {
            Eigen::Index best = 0;
            s.values.row(fr).maxCoeff(&best);
            CHECK(best == 40);
        }
    }
    SUBCASE("silence sits at the floor") {
        AudioClip c;
        c.samples = Eigen::ArrayXd::Zero(1024);
        Spectrogram s = stft(c, 512, 160);
        CHECK((s.values.array() == kLogFloorDb).all());
    }
    SUBCASE("magnitudes match a direct DFT of the windowed frame") {
        const int window = 64;
        AudioClip c = noise_clip(256, 0.8, 14);
        Spectrogram s = stft(c, window, 32);
        // Reference: Hann-window the first frame by hand, direct DFT.
        Eigen::ArrayXd frame(window);
        for (int i = 0; i < window; ++i)
            frame[i] = c.samples[i] *
                       0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / window));
        auto dft = direct_dft(frame);
        // Parseval identity validates the reference itself.
        double freq_energy = 0.0;
        for (const auto& v : dft) freq_energy += std::norm(v);
        CHECK(freq_energy / window ==
              doctest::Approx(frame.square().sum()).epsilon(1e-9));
        for (int k = 0; k <= window / 2; ++k) {
            const double expected = std::max(
                kLogFloorDb, 20.0 * std::log10(std::abs(dft[k]) + kLogGuard));
            CHECK(s.values(0, k) == doctest::Approx(expected).epsilon(1e-9));
        }
    }
    SUBCASE("input validation") {
        AudioClip c = noise_clip(100, 0.5, 15);
        CHECK_THROWS_AS(stft(c, 512, 160), UserError);   // too short
        AudioClip d = noise_clip(2048, 0.5, 16);
        CHECK_THROWS_AS(stft(d, 500, 160), UserError);   // not a power of two
        CHECK_THROWS_AS(stft(d, 512, 1024), UserError);  // hop > window
    }
}

TEST_CASE("spectrogram file round trip") {
    TempFile f("test_spec.bin");
    AudioClip c = noise_clip(4096, 0.6, 17);
    Spectrogram s = stft(c, 512, 160);
    write_spectrogram(f.path, s);
    Spectrogram back = read_spectrogram(f.path);
    REQUIRE(back.frames() == s.frames());
    REQUIRE(back.bins() == s.bins());
    // Stored as float32.
    CHECK((back.values - s.values).cwiseAbs().maxCoeff() < 1e-4);

    SUBCASE("bad magic") {
        std::ofstream os(f.path, std::ios::binary);
        os << "NOTSPEC garbage";
        os.close();
        CHECK_THROWS_AS(read_spectrogram(f.path), ParseError);
    }
}
