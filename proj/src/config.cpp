#include "cmr/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "cmr/errors.hpp"

namespace cmr {

void RunConfig::validate() const {
    if (batch < 2) throw ConfigError("batch must be >= 2");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (temperature <= 0.0) throw ConfigError("temperature must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0,1)");
    if (bank_size_video > 0 && bank_size_video % batch != 0)
        throw ConfigError("batch (" + std::to_string(batch) +
                          ") must divide bank-size-video (" +
                          std::to_string(bank_size_video) + ")");
    if (bank_size_text > 0 && bank_size_text % batch != 0)
        throw ConfigError("batch must divide bank-size-text");
    if ((bank_size_video == 0) != (bank_size_text == 0))
        throw ConfigError("bank sizes must be both zero (no MCC) or both positive");
    if (hidden % video_heads != 0 || hidden % text_heads != 0)
        throw ConfigError("hidden must be divisible by the head counts");
    if (loss != "infonce" && loss != "triplet")
        throw ConfigError("loss must be infonce or triplet");
    if (key_source != "momentum" && key_source != "query")
        throw ConfigError("key-source must be momentum or query");
    aggregation_from_string(aggregation);
    if (text_len_max + 2 > max_seq)
        throw ConfigError("text-len-max + CLS/END exceeds max-seq");
    resolve_levels();
    if (data == "synthetic") synthetic_spec().validate();
}

std::vector<LevelTap> RunConfig::resolve_levels() const {
    std::vector<LevelTap> out;
    std::stringstream ss(levels);
    std::string item;
    auto parse_layer = [&](const std::string& s, std::size_t depth) -> std::size_t {
        if (s == "last") return depth;
        std::size_t v;
        try {
            v = std::stoul(s);
        } catch (...) {
            throw ConfigError("bad level tap '" + s + "'");
        }
        if (v < 1 || v > depth)
            throw ConfigError("level tap " + s + " out of range 1.." + std::to_string(depth));
        return v;
    };
    while (std::getline(ss, item, ',')) {
        auto colon = item.find(':');
        if (colon == std::string::npos)
            throw ConfigError("levels entries must look like text_layer:video_layer");
        out.push_back({parse_layer(item.substr(0, colon), text_layers),
                       parse_layer(item.substr(colon + 1), video_layers)});
    }
    if (out.empty()) throw ConfigError("levels list is empty");
    return out;
}

SyntheticSpec RunConfig::synthetic_spec() const {
    SyntheticSpec s;
    s.num_pairs = pairs;
    s.latent_dim = latent;
    s.noise = noise;
    s.num_experts = experts;
    s.tokens_per_expert = tokens_per_expert;
    s.d_in = d_in;
    s.text_len_min = text_len_min;
    s.text_len_max = text_len_max;
    s.vocab_size = vocab;
    return s;
}

namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string RunConfig::canonical() const {
    std::ostringstream os;
    os << "seed=" << seed << "\nbatch=" << batch << "\nepochs=" << epochs
       << "\nlr=" << fmt(lr) << "\nweight-decay=" << fmt(weight_decay)
       << "\ntemperature=" << fmt(temperature) << "\nalpha=" << fmt(alpha)
       << "\nbeta=" << fmt(beta) << "\nmomentum=" << fmt(momentum)
       << "\nbank-size-video=" << bank_size_video
       << "\nbank-size-text=" << bank_size_text << "\nhidden=" << hidden
       << "\nvideo-layers=" << video_layers << "\nvideo-heads=" << video_heads
       << "\ntext-layers=" << text_layers << "\ntext-heads=" << text_heads
       << "\nintermediate=" << intermediate << "\nvocab=" << vocab
       << "\nmax-seq=" << max_seq << "\nproj-hidden=" << proj_hidden
       << "\nout-dim=" << out_dim << "\nlevels=" << levels
       << "\naggregation=" << aggregation << "\nloss=" << loss
       << "\nmargin=" << fmt(margin) << "\nkey-source=" << key_source
       << "\ndata=" << data << "\npairs=" << pairs << "\nlatent=" << latent
       << "\nnoise=" << fmt(noise) << "\nexperts=" << experts
       << "\ntokens-per-expert=" << tokens_per_expert << "\nd-in=" << d_in
       << "\ntext-len-min=" << text_len_min << "\ntext-len-max=" << text_len_max
       << "\n";
    return os.str();
}

std::uint64_t RunConfig::hash() const {
    // FNV-1a
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : canonical()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(text);
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(ss, line)) {
        ++lineno;
        auto hashpos = line.find('#');
        if (hashpos != std::string::npos) line = line.substr(0, hashpos);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), path);
}

void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
    auto as_u64 = [](const std::string& k, const std::string& v) -> std::uint64_t {
        try {
            return std::stoull(v);
        } catch (...) {
            throw ConfigError("bad integer for " + k + ": '" + v + "'");
        }
    };
    auto as_f = [](const std::string& k, const std::string& v) -> double {
        try {
            return std::stod(v);
        } catch (...) {
            throw ConfigError("bad number for " + k + ": '" + v + "'");
        }
    };
    for (const auto& [k, v] : kv) {
        if (k == "seed") cfg.seed = as_u64(k, v);
        else if (k == "batch") cfg.batch = as_u64(k, v);
        else if (k == "epochs") cfg.epochs = as_u64(k, v);
        else if (k == "lr") cfg.lr = as_f(k, v);
        else if (k == "weight-decay") cfg.weight_decay = as_f(k, v);
        else if (k == "temperature") cfg.temperature = as_f(k, v);
        else if (k == "alpha") cfg.alpha = as_f(k, v);
        else if (k == "beta") cfg.beta = as_f(k, v);
        else if (k == "momentum") cfg.momentum = as_f(k, v);
        else if (k == "bank-size-video") cfg.bank_size_video = as_u64(k, v);
        else if (k == "bank-size-text") cfg.bank_size_text = as_u64(k, v);
        else if (k == "hidden") cfg.hidden = as_u64(k, v);
        else if (k == "video-layers") cfg.video_layers = as_u64(k, v);
        else if (k == "video-heads") cfg.video_heads = as_u64(k, v);
        else if (k == "text-layers") cfg.text_layers = as_u64(k, v);
        else if (k == "text-heads") cfg.text_heads = as_u64(k, v);
        else if (k == "intermediate") cfg.intermediate = as_u64(k, v);
        else if (k == "vocab") cfg.vocab = as_u64(k, v);
        else if (k == "max-seq") cfg.max_seq = as_u64(k, v);
        else if (k == "proj-hidden") cfg.proj_hidden = as_u64(k, v);
        else if (k == "out-dim") cfg.out_dim = as_u64(k, v);
        else if (k == "levels") cfg.levels = v;
        else if (k == "aggregation") cfg.aggregation = v;
        else if (k == "loss") cfg.loss = v;
        else if (k == "margin") cfg.margin = as_f(k, v);
        else if (k == "key-source") cfg.key_source = v;
        else if (k == "data") cfg.data = v;
        else if (k == "pairs") cfg.pairs = as_u64(k, v);
        else if (k == "latent") cfg.latent = as_u64(k, v);
        else if (k == "noise") cfg.noise = as_f(k, v);
        else if (k == "experts") cfg.experts = as_u64(k, v);
        else if (k == "tokens-per-expert") cfg.tokens_per_expert = as_u64(k, v);
        else if (k == "d-in") cfg.d_in = as_u64(k, v);
        else if (k == "text-len-min") cfg.text_len_min = as_u64(k, v);
        else if (k == "text-len-max") cfg.text_len_max = as_u64(k, v);
        else throw ConfigError("unknown config key: " + k);
    }
}

}  // namespace cmr
