#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include "dnsv/errors.hpp"
#include "dnsv/wav.hpp"

namespace dnsv {

// Per-utterance frame x dim matrix of log mel-filterbank energies.
struct FeatureMatrix {
    std::string utt_id;
    std::size_t num_frames = 0;
    std::size_t dim = 0;
    std::vector<double> values;  // row-major, num_frames x dim
    double frame_shift_ms = 10.0;
    bool vad_mask_applied = false;
    bool cmn_applied = false;

    double& at(std::size_t t, std::size_t d) { return values[t * dim + d]; }
    double at(std::size_t t, std::size_t d) const { return values[t * dim + d]; }
    const double* row(std::size_t t) const { return values.data() + t * dim; }
};

struct FeatureConfig {
    double frame_len_ms = 25.0;
    double hop_ms = 10.0;
    int n_mels = 64;
    double floor_value = 1e-10;   // energy floor; keeps the log finite
    bool apply_vad = true;
    double vad_offset = 0.0;      // relative to mean log-energy
    bool apply_cmn = true;
    int cmn_window = 300;         // frames; 3 s at 10 ms hop
};

namespace dsp {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 Cooley-Tukey. Length must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    if (n < 2) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = a[i + k];
                const auto v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

inline std::vector<double> hamming_window(std::size_t n) {
    std::vector<double> w(n);
    if (n == 1) {
        w[0] = 1.0;
        return w;
    }
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                      static_cast<double>(n - 1));
    return w;
}

inline double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

// Triangular mel filterbank on FFT bin center frequencies, spanning 0..Nyquist.
// One row per filter, n_fft/2 + 1 columns.
struct MelFilterbank {
    int n_mels = 0;
    std::size_t n_bins = 0;
    std::vector<double> weights;           // n_mels x n_bins
    std::vector<double> center_freqs_hz;   // peak frequency of each filter

    double weight(int m, std::size_t k) const { return weights[static_cast<std::size_t>(m) * n_bins + k]; }
};

inline MelFilterbank make_mel_filterbank(int n_mels, int sample_rate, std::size_t n_fft) {
    MelFilterbank fb;
    fb.n_mels = n_mels;
    fb.n_bins = n_fft / 2 + 1;
    fb.weights.assign(static_cast<std::size_t>(n_mels) * fb.n_bins, 0.0);
    fb.center_freqs_hz.resize(static_cast<std::size_t>(n_mels));

    const double nyquist = sample_rate / 2.0;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(nyquist);
    std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
        edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                          static_cast<double>(n_mels + 1));

    for (int m = 0; m < n_mels; ++m) {
        const double f_lo = edges[static_cast<std::size_t>(m)];
        const double f_c = edges[static_cast<std::size_t>(m) + 1];
        const double f_hi = edges[static_cast<std::size_t>(m) + 2];
        fb.center_freqs_hz[static_cast<std::size_t>(m)] = f_c;
        for (std::size_t k = 0; k < fb.n_bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate / static_cast<double>(n_fft);
            double w = 0.0;
            if (f > f_lo && f < f_hi)
                w = (f <= f_c) ? (f - f_lo) / (f_c - f_lo) : (f_hi - f) / (f_hi - f_c);
            fb.weights[static_cast<std::size_t>(m) * fb.n_bins + k] = w;
        }
    }
    return fb;
}

}  // namespace dsp

// Slices the waveform into overlapping frames and applies a Hamming window.
// Frame count is floor((N - win) / hop) + 1; no padding of the tail.
inline std::vector<std::vector<double>> frame_signal(const Waveform& w, double frame_len_ms,
                                                     double hop_ms) {
    if (w.sample_rate <= 0) throw ConfigError("sample_rate must be positive");
    if (hop_ms <= 0.0 || frame_len_ms < hop_ms)
        throw ConfigError("require frame_len_ms >= hop_ms > 0");
    const std::size_t win =
        static_cast<std::size_t>(std::lround(frame_len_ms * w.sample_rate / 1000.0));
    const std::size_t hop = static_cast<std::size_t>(std::lround(hop_ms * w.sample_rate / 1000.0));
    if (win == 0 || hop == 0) throw ConfigError("frame or hop rounds to zero samples");
    if (w.samples.size() < win)
        throw UtteranceTooShort("signal has " + std::to_string(w.samples.size()) +
                                " samples, shorter than one " + std::to_string(win) +
                                "-sample frame");

    const std::size_t n_frames = (w.samples.size() - win) / hop + 1;
    const auto window = dsp::hamming_window(win);
    std::vector<std::vector<double>> frames(n_frames);
    for (std::size_t t = 0; t < n_frames; ++t) {
        frames[t].resize(win);
        const std::size_t off = t * hop;
        for (std::size_t i = 0; i < win; ++i)
            frames[t][i] = static_cast<double>(w.samples[off + i]) * window[i];
    }
    return frames;
}

// Log mel-filterbank energies: entry (t, m) = ln(max(floor, melbank_m . |FFT(frame_t)|^2)).
inline FeatureMatrix log_mel(const std::vector<std::vector<double>>& frames, int n_mels,
                             int sample_rate, double floor_value,
                             const std::string& utt_id = {}) {
    if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
    if (floor_value <= 0.0) throw ConfigError("floor_value must be > 0");
    if (frames.empty()) throw UtteranceTooShort("no frames");

    const std::size_t win = frames[0].size();
    for (const auto& fr : frames)
        if (fr.size() != win) throw ConfigError("frames must share one window length");
    const std::size_t n_fft = dsp::next_pow2(win);
    const auto fb = dsp::make_mel_filterbank(n_mels, sample_rate, n_fft);

    FeatureMatrix f;
    f.utt_id = utt_id;
    f.num_frames = frames.size();
    f.dim = static_cast<std::size_t>(n_mels);
    f.values.resize(f.num_frames * f.dim);

    std::vector<std::complex<double>> buf(n_fft);
    std::vector<double> power(fb.n_bins);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
        for (std::size_t i = 0; i < frames[t].size(); ++i) buf[i] = frames[t][i];
        dsp::fft(buf);
        for (std::size_t k = 0; k < fb.n_bins; ++k) power[k] = std::norm(buf[k]);
        for (int m = 0; m < n_mels; ++m) {
            double e = 0.0;
            for (std::size_t k = 0; k < fb.n_bins; ++k) e += fb.weight(m, k) * power[k];
            f.at(t, static_cast<std::size_t>(m)) = std::log(std::max(floor_value, e));
        }
    }
    return f;
}

// Per-frame log-energy of a log-mel matrix: ln(sum_m exp(f_tm)), computed stably.
inline std::vector<double> frame_log_energy(const FeatureMatrix& f) {
    std::vector<double> e(f.num_frames);
    for (std::size_t t = 0; t < f.num_frames; ++t) {
        double mx = f.at(t, 0);
        for (std::size_t m = 1; m < f.dim; ++m) mx = std::max(mx, f.at(t, m));
        double s = 0.0;
        for (std::size_t m = 0; m < f.dim; ++m) s += std::exp(f.at(t, m) - mx);
        e[t] = mx + std::log(s);
    }
    return e;
}

// Keeps frame t iff its log-energy strictly exceeds mean + offset. Never
// returns an empty selection: if everything is rejected, the single
// highest-energy frame (first of ties) is kept.
inline std::vector<bool> energy_vad(const std::vector<double>& log_energy,
                                    double threshold_offset) {
    if (log_energy.empty()) throw UtteranceTooShort("VAD on empty energy sequence");
    const double mean =
        std::accumulate(log_energy.begin(), log_energy.end(), 0.0) /
        static_cast<double>(log_energy.size());
    std::vector<bool> keep(log_energy.size(), false);
    bool any = false;
    for (std::size_t t = 0; t < log_energy.size(); ++t) {
        keep[t] = log_energy[t] > mean + threshold_offset;
        any = any || keep[t];
    }
    if (!any) {
        const auto best = std::distance(log_energy.begin(),
                                        std::max_element(log_energy.begin(), log_energy.end()));
        keep[static_cast<std::size_t>(best)] = true;
    }
    return keep;
}

inline FeatureMatrix apply_vad(const FeatureMatrix& f, double threshold_offset) {
    const auto keep = energy_vad(frame_log_energy(f), threshold_offset);
    FeatureMatrix out;
    out.utt_id = f.utt_id;
    out.dim = f.dim;
    out.frame_shift_ms = f.frame_shift_ms;
    out.cmn_applied = f.cmn_applied;
    out.vad_mask_applied = true;
    for (std::size_t t = 0; t < f.num_frames; ++t)
        if (keep[t]) out.values.insert(out.values.end(), f.row(t), f.row(t) + f.dim);
    out.num_frames = out.values.size() / f.dim;
    return out;
}

// Subtracts, per dimension, the mean of a centered window (truncated at the
// utterance edges). Window covers floor((W-1)/2) frames before and
// floor(W/2) after. A window covering all frames reduces to global CMN.
inline FeatureMatrix sliding_cmn(const FeatureMatrix& f, int window_frames) {
    if (window_frames < 1) throw ConfigError("cmn window must be >= 1 frame");
    const std::size_t T = f.num_frames;
    const std::size_t D = f.dim;
    const std::size_t before = static_cast<std::size_t>((window_frames - 1) / 2);
    const std::size_t after = static_cast<std::size_t>(window_frames / 2);

    // prefix[t] = sum of rows 0..t-1
    std::vector<double> prefix((T + 1) * D, 0.0);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < D; ++d)
            prefix[(t + 1) * D + d] = prefix[t * D + d] + f.at(t, d);

    FeatureMatrix out = f;
    out.cmn_applied = true;
    for (std::size_t t = 0; t < T; ++t) {
        const std::size_t lo = t >= before ? t - before : 0;
        const std::size_t hi = std::min(T - 1, t + after);
        const double inv_n = 1.0 / static_cast<double>(hi - lo + 1);
        for (std::size_t d = 0; d < D; ++d) {
            const double mean = (prefix[(hi + 1) * D + d] - prefix[lo * D + d]) * inv_n;
            out.at(t, d) = f.at(t, d) - mean;
        }
    }
    return out;
}

// Full front-end: framing + windowing, log-mel, energy VAD, sliding CMN.
inline FeatureMatrix compute_features(const Waveform& w, const FeatureConfig& cfg,
                                      const std::string& utt_id) {
    const auto frames = frame_signal(w, cfg.frame_len_ms, cfg.hop_ms);
    FeatureMatrix f = log_mel(frames, cfg.n_mels, w.sample_rate, cfg.floor_value, utt_id);
    f.frame_shift_ms = cfg.hop_ms;
    if (cfg.apply_vad) f = apply_vad(f, cfg.vad_offset);
    if (cfg.apply_cmn) f = sliding_cmn(f, cfg.cmn_window);
    return f;
}

}  // namespace dnsv
