#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dnsv/binio.hpp"
#include "dnsv/errors.hpp"
#include "dnsv/features.hpp"

namespace dnsv {

// Feature file, text form:
//   #feat v1 dim=<D>
//   <utt_id> <T>
//   ... T lines of D space-separated values ...
// Binary form starts with the magic "FEATB1", then per utterance:
//   u32 id length, id bytes, u32 T, u32 D, T*D little-endian float64.

inline constexpr char kFeatureBinaryMagic[] = "FEATB1";

inline void save_features_text(const std::string& path, const std::vector<FeatureMatrix>& feats) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write feature file: " + path);
    if (feats.empty()) throw IoError("refusing to write empty feature file: " + path);
    os << "#feat v1 dim=" << feats.front().dim << "\n";
    for (const auto& f : feats) {
        if (f.dim != feats.front().dim) throw IoError("inconsistent feature dims in " + path);
        os << f.utt_id << " " << f.num_frames << "\n";
        for (std::size_t t = 0; t < f.num_frames; ++t) {
            for (std::size_t d = 0; d < f.dim; ++d) {
                if (d) os << ' ';
                os << format_double(f.at(t, d));
            }
            os << '\n';
        }
    }
    if (!os) throw IoError("failed writing feature file: " + path);
}

inline void save_features_binary(const std::string& path, const std::vector<FeatureMatrix>& feats) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write feature file: " + path);
    os.write(kFeatureBinaryMagic, 6);
    for (const auto& f : feats) {
        write_string(os, f.utt_id);
        write_u32(os, static_cast<std::uint32_t>(f.num_frames));
        write_u32(os, static_cast<std::uint32_t>(f.dim));
        os.write(reinterpret_cast<const char*>(f.values.data()),
                 static_cast<std::streamsize>(f.values.size() * sizeof(double)));
    }
    if (!os) throw IoError("failed writing feature file: " + path);
}

inline void save_features(const std::string& path, const std::vector<FeatureMatrix>& feats,
                          bool binary) {
    if (binary)
        save_features_binary(path, feats);
    else
        save_features_text(path, feats);
}

inline std::vector<FeatureMatrix> load_features(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw IoError("cannot open feature file: " + path);
    char magic[6] = {};
    probe.read(magic, 6);
    const bool binary = probe.gcount() == 6 && std::string(magic, 6) == kFeatureBinaryMagic;

    std::vector<FeatureMatrix> feats;
    if (binary) {
        std::ifstream is(path, std::ios::binary);
        is.seekg(6);
        while (true) {
            if (is.peek() == EOF) break;
            FeatureMatrix f;
            f.utt_id = read_string(is);
            f.num_frames = read_u32(is);
            f.dim = read_u32(is);
            f.values.resize(f.num_frames * f.dim);
            if (!is.read(reinterpret_cast<char*>(f.values.data()),
                         static_cast<std::streamsize>(f.values.size() * sizeof(double))))
                throw IoError("truncated feature file: " + path);
            feats.push_back(std::move(f));
        }
        return feats;
    }

    std::ifstream is(path);
    std::string header;
    if (!std::getline(is, header)) throw IoError("empty feature file: " + path);
    std::size_t dim = 0;
    {
        std::istringstream hs(header);
        std::string tag, ver, dimfield;
        hs >> tag >> dimfield;
        if (tag != "#feat" || dimfield.rfind("v1", 0) != 0) {
            // header layout: "#feat v1 dim=<D>"
            throw IoError("bad feature file header: " + header);
        }
        std::string dimspec;
        hs >> dimspec;
        if (dimspec.rfind("dim=", 0) != 0) throw IoError("bad feature file header: " + header);
        dim = static_cast<std::size_t>(std::stoul(dimspec.substr(4)));
    }
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        FeatureMatrix f;
        f.dim = dim;
        if (!(ls >> f.utt_id >> f.num_frames)) throw IoError("bad utterance header line: " + line);
        f.values.resize(f.num_frames * dim);
        for (std::size_t t = 0; t < f.num_frames; ++t) {
            if (!std::getline(is, line)) throw IoError("truncated feature block for " + f.utt_id);
            std::istringstream vs(line);
            for (std::size_t d = 0; d < dim; ++d)
                if (!(vs >> f.values[t * dim + d]))
                    throw IoError("bad feature row for " + f.utt_id);
        }
        feats.push_back(std::move(f));
    }
    return feats;
}

// Labels file: one "<utt_id> <speaker>" pair per line.
inline std::vector<std::pair<std::string, std::string>> load_utt2spk(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open labels file: " + path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string utt, spk;
    while (is >> utt >> spk) pairs.emplace_back(utt, spk);
    return pairs;
}

inline void save_utt2spk(const std::string& path,
                         const std::vector<std::pair<std::string, std::string>>& pairs) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write labels file: " + path);
    for (const auto& [utt, spk] : pairs) os << utt << ' ' << spk << '\n';
    if (!os) throw IoError("failed writing labels file: " + path);
}

}  // namespace dnsv
