#include "cmr/data.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "cmr/errors.hpp"

namespace cmr {

void SyntheticSpec::validate() const {
    if (num_pairs < 2) throw ConfigError("synthetic spec needs at least two pairs");
    if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
    if (noise < 0.0) throw ConfigError("noise must be non-negative");
    if (num_experts < 1 || tokens_per_expert < 1)
        throw ConfigError("synthetic spec needs at least one expert token");
    if (text_len_min < 1 || text_len_max < text_len_min)
        throw ConfigError("bad text length range");
    if (vocab_size <= TextInput::kReserved)
        throw ConfigError("vocab_size must exceed reserved ids");
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    // fixed per-expert linear maps latent -> token block
    std::size_t block = spec.tokens_per_expert * spec.d_in;
    std::vector<std::vector<double>> maps(spec.num_experts);
    double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (auto& m : maps) {
        m.resize(block * spec.latent_dim);
        for (auto& x : m) x = rng.normal(0.0, scale);
    }
    Dataset ds;
    std::size_t id_space = spec.vocab_size - TextInput::kReserved;
    for (std::size_t i = 0; i < spec.num_pairs; ++i) {
        std::vector<double> z(spec.latent_dim);
        for (auto& x : z) x = rng.normal();
        VisualInput vin;
        for (std::size_t e = 0; e < spec.num_experts; ++e) {
            Tensor rows = Tensor::zeros({spec.tokens_per_expert, spec.d_in});
            for (std::size_t r = 0; r < block; ++r) {
                double s = 0.0;
                for (std::size_t l = 0; l < spec.latent_dim; ++l)
                    s += maps[e][r * spec.latent_dim + l] * z[l];
                rows.data[r] = s + spec.noise * rng.normal();
            }
            vin.expert_rows.push_back(std::move(rows));
        }
        ds.videos.push_back(std::move(vin));
        // caption: thermometer code of the latent. token j reports whether
        // component (j mod latent_dim) exceeds a threshold that moves with the
        // pass index, so every binary token id recurs across many samples and
        // the pooled caption varies smoothly with z
        std::size_t len = spec.text_len_min +
                          rng.index(spec.text_len_max - spec.text_len_min + 1);
        std::size_t passes = (len + spec.latent_dim - 1) / spec.latent_dim;
        std::vector<std::size_t> content(len);
        for (std::size_t j = 0; j < len; ++j) {
            double comp = z[j % spec.latent_dim];
            std::size_t pass = j / spec.latent_dim;
            double thr = passes > 1
                             ? -1.5 + 3.0 * static_cast<double>(pass) /
                                          static_cast<double>(passes - 1)
                             : 0.0;
            std::size_t code = j * 2 + (comp > thr ? 1 : 0);
            if (code >= id_space) {  // small vocab: fold via hash instead
                std::uint64_t h = splitmix(static_cast<std::uint64_t>(code) + 7ull);
                code = static_cast<std::size_t>(h % id_space);
            }
            content[j] = TextInput::kReserved + code;
        }
        ds.texts.push_back(TextInput::make(content));
    }
    return ds;
}

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(const std::vector<unsigned char>& buf, std::size_t off) {
    return static_cast<std::uint32_t>(buf[off]) |
           (static_cast<std::uint32_t>(buf[off + 1]) << 8) |
           (static_cast<std::uint32_t>(buf[off + 2]) << 16) |
           (static_cast<std::uint32_t>(buf[off + 3]) << 24);
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureFile& f) {
    if (f.dtype != 1 && f.dtype != 2) throw ConfigError("unknown feature file dtype");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os.write("HITF", 4);
    std::uint8_t ver = 1;
    os.write(reinterpret_cast<const char*>(&ver), 1);
    os.write(reinterpret_cast<const char*>(&f.dtype), 1);
    put_u32(os, static_cast<std::uint32_t>(f.dims.size()));
    std::size_t n = 1;
    for (auto d : f.dims) {
        put_u32(os, static_cast<std::uint32_t>(d));
        n *= d;
    }
    if (f.dtype == 1) {
        if (f.f64.size() != n) throw ParseError("payload length does not match dims");
        os.write(reinterpret_cast<const char*>(f.f64.data()),
                 static_cast<std::streamsize>(n * 8));
    } else {
        if (f.u32.size() != n) throw ParseError("payload length does not match dims");
        os.write(reinterpret_cast<const char*>(f.u32.data()),
                 static_cast<std::streamsize>(n * 4));
    }
    if (!os) throw ParseError("short write to " + path);
}

FeatureFile load_feature_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    auto fail = [&](std::size_t off, const std::string& msg) -> ParseError {
        return ParseError(path + ": " + msg + " at byte offset " + std::to_string(off));
    };
    if (buf.size() < 4 || std::memcmp(buf.data(), "HITF", 4) != 0)
        throw fail(0, "bad magic (expected HITF)");
    if (buf.size() < 10) throw fail(buf.size(), "truncated header");
    std::uint8_t ver = buf[4], dtype = buf[5];
    if (ver != 1) throw fail(4, "unsupported version " + std::to_string(ver));
    if (dtype != 1 && dtype != 2)
        throw fail(5, "unknown dtype " + std::to_string(dtype));
    std::uint32_t ndims = get_u32(buf, 6);
    if (ndims == 0 || ndims > 8) throw fail(6, "implausible ndims " + std::to_string(ndims));
    std::size_t off = 10;
    if (buf.size() < off + 4ull * ndims) throw fail(buf.size(), "truncated extents");
    FeatureFile f;
    f.dtype = dtype;
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < ndims; ++i) {
        std::uint32_t e = get_u32(buf, off);
        off += 4;
        if (e == 0) throw fail(off - 4, "zero extent");
        if (n > (std::size_t(1) << 40) / e) throw fail(off - 4, "dim overflow");
        n *= e;
        f.dims.push_back(e);
    }
    std::size_t elem = dtype == 1 ? 8 : 4;
    std::size_t expect = off + n * elem;
    if (buf.size() != expect)
        throw fail(buf.size(), "payload size mismatch: expected " + std::to_string(expect) +
                                   " bytes total, got " + std::to_string(buf.size()));
    if (dtype == 1) {
        f.f64.resize(n);
        std::memcpy(f.f64.data(), buf.data() + off, n * 8);
    } else {
        f.u32.resize(n);
        std::memcpy(f.u32.data(), buf.data() + off, n * 4);
    }
    return f;
}

void write_dataset(const Dataset& ds, const SyntheticSpec& spec, const std::string& dir) {
    std::size_t n = ds.size();
    std::size_t seq = spec.num_experts * spec.tokens_per_expert;
    FeatureFile vf;
    vf.dtype = 1;
    vf.dims = {n, seq, spec.d_in};
    vf.f64.reserve(n * seq * spec.d_in);
    for (const auto& v : ds.videos)
        for (const auto& rows : v.expert_rows)
            vf.f64.insert(vf.f64.end(), rows.data.begin(), rows.data.end());
    write_feature_file(dir + "/videos.hitf", vf);

    std::size_t max_len = 0;
    for (const auto& t : ds.texts) max_len = std::max(max_len, t.ids.size());
    FeatureFile tf;
    tf.dtype = 2;
    tf.dims = {n, max_len};
    tf.u32.assign(n * max_len, TextInput::kPad);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < ds.texts[i].ids.size(); ++j)
            tf.u32[i * max_len + j] = static_cast<std::uint32_t>(ds.texts[i].ids[j]);
    write_feature_file(dir + "/texts.hitf", tf);
}

Dataset load_dataset(const std::string& dir, std::size_t num_experts,
                     std::size_t tokens_per_expert) {
    FeatureFile vf = load_feature_file(dir + "/videos.hitf");
    FeatureFile tf = load_feature_file(dir + "/texts.hitf");
    if (vf.dtype != 1 || vf.dims.size() != 3)
        throw ParseError(dir + "/videos.hitf: expected f64 with dims [N, seq, d_in]");
    if (tf.dtype != 2 || tf.dims.size() != 2)
        throw ParseError(dir + "/texts.hitf: expected u32 with dims [N, max_len]");
    std::size_t n = vf.dims[0], seq = vf.dims[1], d_in = vf.dims[2];
    if (tf.dims[0] != n)
        throw ParseError("videos.hitf and texts.hitf disagree on pair count");
    if (seq != num_experts * tokens_per_expert)
        throw ParseError("videos.hitf sequence length " + std::to_string(seq) +
                         " does not match num_experts*tokens_per_expert");
    std::size_t max_len = tf.dims[1];
    Dataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        VisualInput vin;
        for (std::size_t e = 0; e < num_experts; ++e) {
            Tensor rows = Tensor::zeros({tokens_per_expert, d_in});
            std::size_t base = (i * seq + e * tokens_per_expert) * d_in;
            std::copy(vf.f64.begin() + base, vf.f64.begin() + base + tokens_per_expert * d_in,
                      rows.data.begin());
            vin.expert_rows.push_back(std::move(rows));
        }
        ds.videos.push_back(std::move(vin));
        TextInput tin;
        for (std::size_t j = 0; j < max_len; ++j) {
            std::uint32_t id = tf.u32[i * max_len + j];
            if (id == TextInput::kPad && j > 0) break;
            tin.ids.push_back(id);
        }
        if (tin.ids.size() < 2 || tin.ids.front() != TextInput::kCls ||
            tin.ids.back() != TextInput::kEnd)
            throw ParseError("texts.hitf row " + std::to_string(i) +
                             " is not CLS ... END framed");
        ds.texts.push_back(std::move(tin));
    }
    return ds;
}

}  // namespace cmr
