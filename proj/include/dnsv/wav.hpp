#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "dnsv/binio.hpp"
#include "dnsv/errors.hpp"

namespace dnsv {

struct Waveform {
    std::vector<std::int16_t> samples;  // mono PCM16
    int sample_rate = 0;                // Hz, > 0
};

namespace detail {

inline std::uint16_t read_u16(std::istream& is) {
    std::uint16_t v = 0;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated stream reading u16");
    return v;
}

}  // namespace detail

// Reads a RIFF/WAVE file containing 16-bit integer PCM. Multi-channel input
// is reduced to channel 0. Unknown chunks are skipped.
inline Waveform read_wav(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open WAV file: " + path);

    char tag[4];
    if (!is.read(tag, 4) || std::string(tag, 4) != "RIFF") throw IoError("not a RIFF file: " + path);
    (void)read_u32(is);  // RIFF payload size, unused
    if (!is.read(tag, 4) || std::string(tag, 4) != "WAVE") throw IoError("not a WAVE file: " + path);

    int channels = 0;
    int sample_rate = 0;
    int bits = 0;
    bool fmt_seen = false;
    Waveform w;
    bool data_seen = false;

    while (is.read(tag, 4)) {
        const std::uint32_t chunk_size = read_u32(is);
        const std::string id(tag, 4);
        if (id == "fmt ") {
            if (chunk_size < 16) throw IoError("malformed fmt chunk: " + path);
            const std::uint16_t audio_format = detail::read_u16(is);
            channels = detail::read_u16(is);
            sample_rate = static_cast<int>(read_u32(is));
            (void)read_u32(is);          // byte rate
            (void)detail::read_u16(is);  // block align
            bits = detail::read_u16(is);
            if (chunk_size > 16) is.seekg(chunk_size - 16, std::ios::cur);
            if (audio_format != 1) throw IoError("unsupported WAV encoding (want PCM): " + path);
            if (bits != 16) throw IoError("unsupported WAV sample width (want 16-bit): " + path);
            if (channels < 1 || sample_rate <= 0) throw IoError("malformed fmt chunk: " + path);
            fmt_seen = true;
        } else if (id == "data") {
            if (!fmt_seen) throw IoError("data chunk before fmt chunk: " + path);
            const std::size_t n_values = chunk_size / 2;
            std::vector<std::int16_t> raw(n_values);
            if (n_values > 0 &&
                !is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n_values * 2)))
                throw IoError("truncated data chunk: " + path);
            const std::size_t n_frames = n_values / static_cast<std::size_t>(channels);
            w.samples.resize(n_frames);
            for (std::size_t i = 0; i < n_frames; ++i)
                w.samples[i] = raw[i * static_cast<std::size_t>(channels)];
            data_seen = true;
            if (chunk_size % 2 == 1) is.seekg(1, std::ios::cur);  // chunks are word-aligned
        } else {
            is.seekg(chunk_size + (chunk_size % 2), std::ios::cur);
        }
    }
    if (!fmt_seen || !data_seen) throw IoError("missing fmt/data chunk: " + path);
    w.sample_rate = sample_rate;
    return w;
}

// Writes mono PCM16. Used by tooling and tests to synthesize inputs.
inline void write_wav(const std::string& path, const Waveform& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write WAV file: " + path);
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * 2);
    os.write("RIFF", 4);
    write_u32(os, 36 + data_bytes);
    os.write("WAVE", 4);
    os.write("fmt ", 4);
    write_u32(os, 16);
    const std::uint16_t pcm = 1, mono = 1, bits = 16, block = 2;
    os.write(reinterpret_cast<const char*>(&pcm), 2);
    os.write(reinterpret_cast<const char*>(&mono), 2);
    write_u32(os, static_cast<std::uint32_t>(w.sample_rate));
    write_u32(os, static_cast<std::uint32_t>(w.sample_rate * 2));
    os.write(reinterpret_cast<const char*>(&block), 2);
    os.write(reinterpret_cast<const char*>(&bits), 2);
    os.write("data", 4);
    write_u32(os, data_bytes);
    os.write(reinterpret_cast<const char*>(w.samples.data()), data_bytes);
    if (!os) throw IoError("failed writing WAV file: " + path);
}

}  // namespace dnsv
