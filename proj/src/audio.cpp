// SPDX-License-Identifier: Apache-2.0
#include "echoloc/audio.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <vector>

namespace echoloc {

// ---- WAV I/O ----------------------------------------------------------------

namespace {

template <typename T>
void put_le(std::string& out, T value) {
    for (size_t i = 0; i < sizeof(T); ++i)
        out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& data;
    size_t pos = 0;

    void require(size_t n) const {
        if (pos + n > data.size()) throw ParseError("truncated WAV file");
    }
    std::uint32_t u32() {
        require(4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i)
            v = (v << 8) | static_cast<unsigned char>(data[pos + i]);
        pos += 4;
        return v;
    }
    std::uint16_t u16() {
        require(2);
        auto v = static_cast<std::uint16_t>(
            static_cast<unsigned char>(data[pos]) |
            (static_cast<unsigned char>(data[pos + 1]) << 8));
        pos += 2;
        return v;
    }
    std::string tag() {
        require(4);
        std::string t = data.substr(pos, 4);
        pos += 4;
        return t;
    }
};

}  // namespace

AudioClip read_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open WAV file: " + path);
    std::string data((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    ByteReader r{data};
    if (r.tag() != "RIFF") throw ParseError("not a RIFF file: " + path);
    r.u32();  // riff size
    if (r.tag() != "WAVE") throw ParseError("not a WAVE file: " + path);

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::string payload;
    while (r.pos + 8 <= data.size()) {
        const std::string chunk = r.tag();
        const std::uint32_t size = r.u32();
        r.require(size);
        if (chunk == "fmt ") {
            ByteReader f{data, r.pos};
            format = f.u16();
            channels = f.u16();
            rate = f.u32();
            f.u32();  // byte rate
            f.u16();  // block align
            bits = f.u16();
            have_fmt = true;
        } else if (chunk == "data") {
            payload = data.substr(r.pos, size);
        }
        r.pos += size + (size % 2);  // chunks are word aligned
    }
    if (!have_fmt) throw ParseError("WAV file missing fmt chunk");
    if (channels != 1)
        throw ParseError("only mono WAV is supported (got " +
                         std::to_string(channels) + " channels)");

    AudioClip clip;
    clip.sample_rate = rate;
    if (format == 1 && bits == 16) {
        const size_t n = payload.size() / 2;
        clip.samples.resize(static_cast<Eigen::Index>(n));
        for (size_t i = 0; i < n; ++i) {
            const auto lo = static_cast<unsigned char>(payload[2 * i]);
            const auto hi = static_cast<unsigned char>(payload[2 * i + 1]);
            const auto v = static_cast<std::int16_t>(lo | (hi << 8));
            clip.samples[static_cast<Eigen::Index>(i)] = v / 32768.0;
        }
    } else if (format == 3 && bits == 32) {
        const size_t n = payload.size() / 4;
        clip.samples.resize(static_cast<Eigen::Index>(n));
        for (size_t i = 0; i < n; ++i) {
            float f;
            std::memcpy(&f, payload.data() + 4 * i, 4);
            clip.samples[static_cast<Eigen::Index>(i)] = f;
        }
    } else {
        throw ParseError("unsupported WAV encoding (format " +
                         std::to_string(format) + ", " + std::to_string(bits) +
                         " bit)");
    }
    return clip;
}

void write_wav(const std::string& path, const AudioClip& clip,
               WavEncoding encoding) {
    const auto n = static_cast<std::uint32_t>(clip.samples.size());
    const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
    const std::uint16_t fmt = encoding == WavEncoding::Pcm16 ? 1 : 3;
    const std::uint32_t rate = static_cast<std::uint32_t>(clip.sample_rate);
    const std::uint32_t data_size = n * (bits / 8);

    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_le<std::uint32_t>(out, 36 + data_size);
    out += "WAVE";
    out += "fmt ";
    put_le<std::uint32_t>(out, 16);
    put_le<std::uint16_t>(out, fmt);
    put_le<std::uint16_t>(out, 1);  // mono
    put_le<std::uint32_t>(out, rate);
    put_le<std::uint32_t>(out, rate * (bits / 8u));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(bits / 8));
    put_le<std::uint16_t>(out, bits);
    out += "data";
    put_le<std::uint32_t>(out, data_size);

    if (encoding == WavEncoding::Pcm16) {
        for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
            const long long q = std::llround(clip.samples[i] * 32768.0);
            if (q > 32767 || q < -32768)
                throw UserError("sample would clip in PCM16 export");
            put_le<std::int16_t>(out, static_cast<std::int16_t>(q));
        }
    } else {
        for (Eigen::Index i = 0; i < clip.samples.size(); ++i) {
            const auto f = static_cast<float>(clip.samples[i]);
            std::uint32_t raw;
            std::memcpy(&raw, &f, 4);
            put_le<std::uint32_t>(out, raw);
        }
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw UserError("cannot write WAV file: " + path);
    os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

// ---- normalization -----------------------------------------------------------

AudioClip peak_normalize(const AudioClip& clip, double target_db) {
    if (clip.samples.size() == 0) throw UserError("empty clip");
    AudioClip out = clip;
    out.samples -= out.samples.mean();
    const double peak = out.samples.abs().maxCoeff();
    if (peak < 1e-15)
        throw UserError("clip is silent after DC removal; cannot normalize");
    out.samples *= std::pow(10.0, target_db / 20.0) / peak;
    return out;
}

// ---- BS.1770 loudness ---------------------------------------------------------

namespace {

struct Biquad {
    double b0, b1, b2, a1, a2;

    void apply(Eigen::ArrayXd& x) const {
        double z1 = 0.0, z2 = 0.0;  // direct form II transposed
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double in = x[i];
            const double out = b0 * in + z1;
            z1 = b1 * in - a1 * out + z2;
            z2 = b2 * in - a2 * out;
            x[i] = out;
        }
    }
};

// K-weighting designed from the analog prototype so the standard's 48 kHz
// coefficients are reproduced and other rates stay consistent.
Biquad k_shelf(double fs) {
    const double fc = 1681.9744509555319;
    const double gain_db = 3.99984385397;
    const double q = 0.7071752369554196;
    const double k = std::tan(std::numbers::pi * fc / fs);
    const double vh = std::pow(10.0, gain_db / 20.0);
    const double vb = std::pow(vh, 0.4996667741545416);
    const double a0 = 1.0 + k / q + k * k;
    return Biquad{(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0,
                  (vh - vb * k / q + k * k) / a0, 2.0 * (k * k - 1.0) / a0,
                  (1.0 - k / q + k * k) / a0};
}

Biquad k_highpass(double fs) {
    const double fc = 38.13547087602444;
    const double q = 0.5003270373238773;
    const double k = std::tan(std::numbers::pi * fc / fs);
    const double a0 = 1.0 + k / q + k * k;
    return Biquad{1.0, -2.0, 1.0, 2.0 * (k * k - 1.0) / a0,
                  (1.0 - k / q + k * k) / a0};
}

constexpr double kLoudnessOffset = -0.691;
constexpr double kAbsoluteGate = -70.0;

std::vector<double> gated_block_powers(const AudioClip& clip) {
    const double fs = clip.sample_rate;
    if (fs != 16000.0 && fs != 44100.0 && fs != 48000.0)
        throw UserError("loudness is defined for 16/44.1/48 kHz clips");
    const auto block = static_cast<Eigen::Index>(std::llround(0.4 * fs));
    const auto hop = block / 4;  // 75% overlap
    if (clip.samples.size() < block)
        throw UserError("clip shorter than one 400 ms loudness block");

    Eigen::ArrayXd x = clip.samples;
    k_shelf(fs).apply(x);
    k_highpass(fs).apply(x);

    std::vector<double> powers;
    for (Eigen::Index start = 0; start + block <= x.size(); start += hop)
        powers.push_back(x.segment(start, block).square().mean());
    return powers;
}

double power_to_lufs(double power) {
    return kLoudnessOffset + 10.0 * std::log10(power);
}

}  // namespace

std::optional<double> measure_lufs(const AudioClip& clip) {
    const std::vector<double> powers = gated_block_powers(clip);

    double sum = 0.0;
    int count = 0;
    for (double p : powers) {
        if (p > 0.0 && power_to_lufs(p) > kAbsoluteGate) {
            sum += p;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;

    const double relative_gate = power_to_lufs(sum / count) - 10.0;
    sum = 0.0;
    count = 0;
    for (double p : powers) {
        if (p <= 0.0) continue;
        const double l = power_to_lufs(p);
        if (l > kAbsoluteGate && l > relative_gate) {
            sum += p;
            ++count;
        }
    }
    if (count == 0) return std::nullopt;
    return power_to_lufs(sum / count);
}

AudioClip loudness_normalize(const AudioClip& clip, double target_lufs) {
    AudioClip out = clip;
    for (int iteration = 0; iteration < 3; ++iteration) {
        const auto measured = measure_lufs(out);
        if (!measured)
            throw UserError("clip is below the loudness gate; cannot normalize");
        const double delta = target_lufs - *measured;
        if (std::abs(delta) <= 0.1) return out;
        const double gain = std::pow(10.0, delta / 20.0);
        if (out.samples.abs().maxCoeff() * gain > 1.0)
            throw UserError("loudness target would clip the clip");
        out.samples *= gain;
    }
    return out;
}

// ---- convolution ---------------------------------------------------------------

namespace {

Eigen::Index next_pow2(Eigen::Index n) {
    Eigen::Index p = 1;
    while (p < n) p <<= 1;
    return p;
}

}  // namespace

Eigen::ArrayXd convolve_full(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
    const Eigen::Index na = a.size();
    const Eigen::Index nb = b.size();
    if (na == 0 || nb == 0) return Eigen::ArrayXd();
    const Eigen::Index out_len = na + nb - 1;

    // Overlap-add with the shorter sequence as the kernel.
    const Eigen::ArrayXd& kernel = (nb <= na) ? b : a;
    const Eigen::ArrayXd& signal = (nb <= na) ? a : b;
    const Eigen::Index nk = kernel.size();
    const Eigen::Index fft_len = next_pow2(std::max<Eigen::Index>(4 * nk, 4096));
    const Eigen::Index chunk = fft_len - nk + 1;

    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> kernel_spec;
    {
        std::vector<double> padded(static_cast<size_t>(fft_len), 0.0);
        for (Eigen::Index i = 0; i < nk; ++i) padded[static_cast<size_t>(i)] = kernel[i];
        fft.fwd(kernel_spec, padded);
    }

    Eigen::ArrayXd out = Eigen::ArrayXd::Zero(out_len);
    std::vector<double> block(static_cast<size_t>(fft_len));
    std::vector<std::complex<double>> spec;
    std::vector<double> time;
    for (Eigen::Index start = 0; start < signal.size(); start += chunk) {
        const Eigen::Index len = std::min(chunk, signal.size() - start);
        std::fill(block.begin(), block.end(), 0.0);
        for (Eigen::Index i = 0; i < len; ++i)
            block[static_cast<size_t>(i)] = signal[start + i];
        fft.fwd(spec, block);
        for (size_t i = 0; i < spec.size(); ++i) spec[i] *= kernel_spec[i];
        fft.inv(time, spec);
        const Eigen::Index tail = std::min<Eigen::Index>(fft_len, out_len - start);
        for (Eigen::Index i = 0; i < tail; ++i)
            out[start + i] += time[static_cast<size_t>(i)];
    }
    return out;
}

AudioClip convolve(const AudioClip& dry, const ImpulseResponse& ir,
                   double* applied_gain) {
    if (dry.sample_rate != ir.sample_rate)
        throw UserError("sample-rate mismatch between dry clip and RIR");
    AudioClip out;
    out.sample_rate = dry.sample_rate;
    out.samples = convolve_full(dry.samples, ir.samples);
    const double peak = out.samples.size() ? out.samples.abs().maxCoeff() : 0.0;
    const double limit = std::pow(10.0, -1.0 / 20.0);
    const double gain = (peak > limit) ? limit / peak : 1.0;
    out.samples *= gain;
    if (applied_gain) *applied_gain = gain;
    return out;
}

// ---- STFT ------------------------------------------------------------------------

Spectrogram stft(const AudioClip& clip, int window_length, int hop) {
    if (window_length <= 0 || (window_length & (window_length - 1)) != 0)
        throw UserError("window length must be a power of two");
    if (hop <= 0 || hop > window_length)
        throw UserError("hop must be in [1, window_length]");
    if (clip.samples.size() < window_length)
        throw UserError("clip shorter than one STFT window");

    const Eigen::Index frames =
        1 + (clip.samples.size() - window_length) / hop;
    const Eigen::Index bins = window_length / 2 + 1;

    Eigen::ArrayXd window(window_length);
    for (int n = 0; n < window_length; ++n) {
        window[n] =
            0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / window_length);
    }

    Spectrogram spec;
    spec.window_length = window_length;
    spec.frame_hop = hop;
    spec.sample_rate = clip.sample_rate;
    spec.values.resize(frames, bins);

    Eigen::FFT<double> fft;
    std::vector<double> frame(static_cast<size_t>(window_length));
    std::vector<std::complex<double>> out;
    for (Eigen::Index f = 0; f < frames; ++f) {
        for (int n = 0; n < window_length; ++n)
            frame[static_cast<size_t>(n)] = clip.samples[f * hop + n] * window[n];
        fft.fwd(out, frame);
        for (Eigen::Index b = 0; b < bins; ++b) {
            const double mag = std::abs(out[static_cast<size_t>(b)]);
            spec.values(f, b) =
                std::max(kLogFloorDb, 20.0 * std::log10(mag + kLogGuard));
        }
    }
    return spec;
}

// ---- spectrogram container ---------------------------------------------------------

void write_spectrogram(const std::string& path, const Spectrogram& spec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw UserError("cannot write spectrogram file: " + path);
    out.write("ELSPEC1", 7);
    const auto frames = static_cast<std::uint32_t>(spec.values.rows());
    const auto bins = static_cast<std::uint32_t>(spec.values.cols());
    std::string header;
    put_le(header, frames);
    put_le(header, bins);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (Eigen::Index f = 0; f < spec.values.rows(); ++f) {
        for (Eigen::Index b = 0; b < spec.values.cols(); ++b) {
            const auto v = static_cast<float>(spec.values(f, b));
            out.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
}

Spectrogram read_spectrogram(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open spectrogram file: " + path);
    char magic[7];
    if (!in.read(magic, 7) || std::string(magic, 7) != "ELSPEC1")
        throw ParseError("bad spectrogram magic in " + path);
    std::uint32_t frames = 0, bins = 0;
    unsigned char dims[8];
    if (!in.read(reinterpret_cast<char*>(dims), 8))
        throw ParseError("truncated spectrogram header in " + path);
    for (int i = 3; i >= 0; --i) frames = (frames << 8) | dims[i];
    for (int i = 7; i >= 4; --i) bins = (bins << 8) | dims[i];
    Spectrogram spec;
    spec.values.resize(frames, bins);
    for (std::uint32_t f = 0; f < frames; ++f) {
        for (std::uint32_t b = 0; b < bins; ++b) {
            float v;
            if (!in.read(reinterpret_cast<char*>(&v), 4))
                throw ParseError("truncated spectrogram data in " + path);
            spec.values(f, b) = v;
        }
    }
    return spec;
}

}  // namespace echoloc
