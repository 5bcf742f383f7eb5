#include "cmr/train.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <ostream>
#include <sstream>

#include "cmr/errors.hpp"

namespace cmr {

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg), model_((cfg.validate(), cfg)), rng_(cfg.seed),
      opt_({cfg.lr, cfg.weight_decay}) {
    if (cfg_.data == "synthetic")
        data_ = generate_synthetic(cfg_.synthetic_spec(), cfg_.seed);
    else
        data_ = load_dataset(cfg_.data, cfg_.experts, cfg_.tokens_per_expert);
    if (data_.size() < cfg_.batch)
        throw ConfigError("dataset smaller than one batch");
    model_.init(rng_);
    if (mcc_enabled()) {
        for (std::size_t l = 0; l < model_.num_levels(); ++l) {
            banks_v_.emplace_back(cfg_.bank_size_video, cfg_.out_dim);
            banks_t_.emplace_back(cfg_.bank_size_text, cfg_.out_dim);
        }
        for (auto& b : banks_v_) b.init_random(rng_);
        for (auto& b : banks_t_) b.init_random(rng_);
    }
}

std::vector<std::size_t> Trainer::train_indices() const {
    std::size_t n = data_.size();
    std::size_t held = n / 4;  // held-out split: last 25% by index
    std::vector<std::size_t> idx(n - held);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
}

std::vector<std::size_t> Trainer::heldout_indices() const {
    std::size_t n = data_.size();
    std::size_t held = n / 4;
    std::vector<std::size_t> idx(held);
    for (std::size_t i = 0; i < held; ++i) idx[i] = n - held + i;
    return idx;
}

StepRecord Trainer::train_step(const std::vector<std::size_t>& batch_indices,
                               bool record_extras) {
    std::size_t b = batch_indices.size();
    if (b < 2) throw InputError("train_step needs batch >= 2");
    std::vector<VisualInput> vbatch;
    std::vector<TextInput> tbatch;
    for (auto i : batch_indices) {
        vbatch.push_back(data_.videos.at(i));
        tbatch.push_back(data_.texts.at(i));
    }

    Tape tape;
    // (1) query forwards, both modalities, all levels
    auto vq = model_.embed_videos(&tape, Role::Query, vbatch, /*training=*/true);
    auto tq = model_.embed_texts(&tape, Role::Query, tbatch, /*training=*/true);
    // (2) key forwards, no recording
    Role key_role = cfg_.key_source == "momentum" ? Role::Key : Role::Query;
    auto vk = model_.embed_videos(nullptr, key_role, vbatch, /*training=*/true);
    auto tk = model_.embed_texts(nullptr, key_role, tbatch, /*training=*/true);

    std::size_t levels = model_.num_levels();
    // (3)+(4) similarity rows against pre-step snapshots, loss assembly
    std::vector<Tensor> vsnaps, tsnaps;
    for (std::size_t l = 0; l < levels; ++l) {
        vsnaps.push_back(mcc_enabled() ? banks_v_[l].snapshot()
                                       : Tensor::zeros({0, cfg_.out_dim}));
        tsnaps.push_back(mcc_enabled() ? banks_t_[l].snapshot()
                                       : Tensor::zeros({0, cfg_.out_dim}));
    }
    std::vector<Tensor> per_level;
    for (std::size_t l = 0; l < levels; ++l) {
        if (cfg_.loss == "infonce") {
            per_level.push_back(level_loss(&tape, vq[l], tq[l], vk[l], tk[l], vsnaps[l],
                                           tsnaps[l], cfg_.temperature));
        } else {
            Tensor h1 = triplet_level_loss(&tape, vq[l], tk[l], cfg_.margin);
            Tensor h2 = triplet_level_loss(&tape, tq[l], vk[l], cfg_.margin);
            per_level.push_back(ops::scale(&tape, ops::add(&tape, h1, h2), 0.5));
        }
    }
    LossWeights w{cfg_.alpha, cfg_.beta, cfg_.temperature};
    Tensor total = levels == 1 ? ops::scale(&tape, per_level[0], cfg_.alpha)
                               : total_loss(&tape, per_level[0], per_level[1], w);
    for (std::size_t l = 2; l < levels; ++l)
        total = ops::add(&tape, total, per_level[l]);

    // (5) backward + optimizer on query parameters only
    opt_.zero_grads(model_.query_store());
    tape.backward(total);
    // parameters the configured levels never tap (e.g. deeper layers when only
    // layer 1 is matched) have gradient identically zero; materialize that so
    // the optimizer precondition holds
    for (const auto& name : model_.query_store().names()) {
        Parameter& p = model_.query_store().get(name);
        if (p.trainable && !p.has_grad()) p.grad.assign(p.value.data.size(), 0.0);
    }
    opt_.step(model_.query_store());
    // (6) momentum mirror
    model_.mirror().momentum_update();
    // (7) enqueue the key batch
    if (mcc_enabled()) {
        for (std::size_t l = 0; l < levels; ++l) {
            banks_v_[l].enqueue(vk[l]);
            banks_t_[l].enqueue(tk[l]);
        }
    }

    StepRecord rec;
    rec.step = ++step_;
    for (const auto& t : per_level) rec.level_losses.push_back(t.scalar());
    rec.total = total.scalar();
    if (record_extras) {
        StepRecord::Extras ex;
        auto strip = [](const std::vector<std::vector<Tensor>>& e) {
            std::vector<std::vector<std::vector<double>>> out;
            for (const auto& lvl : e) {
                out.emplace_back();
                for (const auto& v : lvl) out.back().push_back(v.data);
            }
            return out;
        };
        ex.vq = strip(vq);
        ex.tq = strip(tq);
        ex.vk = strip(vk);
        ex.tk = strip(tk);
        ex.video_bank_snapshots = vsnaps;
        ex.text_bank_snapshots = tsnaps;
        rec.extras = std::move(ex);
    }
    return rec;
}

std::pair<RetrievalReport, RetrievalReport> Trainer::evaluate(
    const std::vector<std::size_t>& indices) const {
    std::vector<VisualInput> vs;
    std::vector<TextInput> ts;
    for (auto i : indices) {
        vs.push_back(data_.videos.at(i));
        ts.push_back(data_.texts.at(i));
    }
    auto vidx = model_.index_videos(vs);
    auto tidx = model_.index_texts(ts);
    auto v2t_ranks = rank_queries(vidx, tidx);
    auto t2v_ranks = rank_queries(tidx, vidx);
    RetrievalReport v2t = metrics(v2t_ranks, "v2t");
    RetrievalReport t2v = metrics(t2v_ranks, "t2v");
    finalize_rsum(v2t, t2v);
    return {v2t, t2v};
}

std::string format_step_line(const StepRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "step=%ld L1=%.17g L2=%.17g L=%.17g", r.step, r.l1(),
                  r.l2(), r.total);
    return buf;
}

std::pair<RetrievalReport, RetrievalReport> Trainer::run_training(
    std::ostream& history, const std::string& checkpoint_path,
    const std::string& resume_from) {
    if (!resume_from.empty()) load_checkpoint(resume_from);
    auto train_idx = train_indices();
    std::size_t steps_per_epoch = train_idx.size() / cfg_.batch;
    if (steps_per_epoch == 0) throw ConfigError("training split smaller than one batch");
    std::pair<RetrievalReport, RetrievalReport> last;
    for (std::size_t e = epoch_; e < cfg_.epochs; ++e) {
        std::vector<std::size_t> order = train_idx;
        rng_.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t s = 0; s < steps_per_epoch; ++s) {
            std::vector<std::size_t> batch(order.begin() + s * cfg_.batch,
                                           order.begin() + (s + 1) * cfg_.batch);
            StepRecord rec = train_step(batch);
            loss_sum += rec.total;
            history << format_step_line(rec) << "\n";
        }
        epoch_mean_losses_.push_back(loss_sum / static_cast<double>(steps_per_epoch));
        epoch_ = e + 1;
        last = evaluate(heldout_indices());
        history << format_report_line(last.first) << "\n"
                << format_report_line(last.second) << "\n";
        history.flush();
        if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path);
    }
    return last;
}

// ---- checkpoint serialization -------------------------------------------

namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ParseError("checkpoint truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_str(std::istream& is) {
    std::uint64_t n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw ParseError("checkpoint truncated");
    return s;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
    put_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * 8));
}

std::vector<double> get_doubles(std::istream& is) {
    std::uint64_t n = get_u64(is);
    std::vector<double> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 8));
    if (!is) throw ParseError("checkpoint truncated");
    return v;
}

void put_store(std::ostream& os, const ParamStore& store) {
    put_u64(os, store.names().size());
    for (const auto& name : store.names()) {
        const Parameter& p = store.get(name);
        put_str(os, name);
        put_u64(os, p.value.shape.size());
        for (auto d : p.value.shape) put_u64(os, d);
        put_doubles(os, p.value.data);
    }
}

void get_store(std::istream& is, ParamStore& store) {
    std::uint64_t n = get_u64(is);
    if (n != store.names().size())
        throw ParseError("checkpoint parameter count mismatch");
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string name = get_str(is);
        Parameter& p = store.get(name);
        std::uint64_t nd = get_u64(is);
        std::vector<std::size_t> shape(nd);
        for (auto& d : shape) d = get_u64(is);
        if (shape != p.value.shape)
            throw ParseError("checkpoint shape mismatch for " + name);
        p.value.data = get_doubles(is);
        if (p.value.data.size() != p.value.size())
            throw ParseError("checkpoint payload mismatch for " + name);
    }
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open checkpoint " + path + " for writing");
    os.write("HITC", 4);
    std::uint8_t ver = 1;
    os.write(reinterpret_cast<char*>(&ver), 1);
    put_u64(os, cfg_.hash());
    put_str(os, cfg_.canonical());
    put_u64(os, static_cast<std::uint64_t>(step_));
    put_u64(os, epoch_);
    put_str(os, rng_.save_state());
    put_store(os, model_.query_store());
    put_store(os, model_.key_store());
    put_u64(os, static_cast<std::uint64_t>(opt_.step_count()));
    const auto& slots = const_cast<AdamW&>(opt_).slots();
    put_u64(os, slots.size());
    for (const auto& [name, slot] : slots) {
        put_str(os, name);
        put_doubles(os, slot.m);
        put_doubles(os, slot.v);
    }
    auto put_banks = [&](const std::vector<MemoryBank>& banks) {
        put_u64(os, banks.size());
        for (const auto& b : banks) {
            put_u64(os, b.capacity());
            put_u64(os, b.dim());
            put_u64(os, b.cursor());
            put_doubles(os, b.raw());
        }
    };
    put_banks(banks_v_);
    put_banks(banks_t_);
    put_u64(os, epoch_mean_losses_.size());
    for (double v : epoch_mean_losses_) put_doubles(os, {v});
    if (!os) throw ParseError("short write to checkpoint " + path);
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HITC", 4) != 0)
        throw ParseError(path + ": bad checkpoint magic at byte offset 0");
    std::uint8_t ver;
    is.read(reinterpret_cast<char*>(&ver), 1);
    if (ver != 1) throw ParseError(path + ": unsupported checkpoint version");
    std::uint64_t hash = get_u64(is);
    get_str(is);  // embedded config text, informational
    if (hash != cfg_.hash())
        throw ConfigError("checkpoint config hash does not match the active config");
    step_ = static_cast<long>(get_u64(is));
    epoch_ = get_u64(is);
    rng_.restore_state(get_str(is));
    get_store(is, model_.query_store());
    get_store(is, model_.key_store());
    opt_.step_ref() = static_cast<long>(get_u64(is));
    opt_.slots().clear();
    std::uint64_t nslots = get_u64(is);
    for (std::uint64_t i = 0; i < nslots; ++i) {
        std::string name = get_str(is);
        AdamW::Slot slot;
        slot.m = get_doubles(is);
        slot.v = get_doubles(is);
        opt_.slots().emplace(std::move(name), std::move(slot));
    }
    auto get_banks = [&](std::vector<MemoryBank>& banks) {
        std::uint64_t n = get_u64(is);
        if (n != banks.size()) throw ParseError("checkpoint bank count mismatch");
        for (auto& b : banks) {
            std::uint64_t cap = get_u64(is), dim = get_u64(is), cur = get_u64(is);
            if (cap != b.capacity() || dim != b.dim())
                throw ParseError("checkpoint bank geometry mismatch");
            b.raw() = get_doubles(is);
            b.set_cursor(cur);
        }
    };
    get_banks(banks_v_);
    get_banks(banks_t_);
    epoch_mean_losses_.clear();
    std::uint64_t nl = get_u64(is);
    for (std::uint64_t i = 0; i < nl; ++i) epoch_mean_losses_.push_back(get_doubles(is).at(0));
}

// ---- ablation runner -----------------------------------------------------

void run_ablation(const RunConfig& base, const std::string& axis, std::ostream& out) {
    struct Variant {
        std::string value;
        RunConfig cfg;
    };
    std::vector<Variant> variants;
    auto with = [&](const std::string& value, auto&& mutate) {
        RunConfig c = base;
        mutate(c);
        variants.push_back({value, std::move(c)});
    };
    if (axis == "bank_size") {
        for (std::size_t k : {std::size_t(0), std::size_t(32), std::size_t(64),
                              std::size_t(128), std::size_t(256), std::size_t(512)})
            with(std::to_string(k), [&](RunConfig& c) {
                c.bank_size_video = k;
                c.bank_size_text = k;
            });
    } else if (axis == "levels") {
        with("feature", [](RunConfig& c) { c.levels = "1:1"; });
        with("semantic", [](RunConfig& c) { c.levels = "last:last"; });
        with("both", [](RunConfig& c) { c.levels = "1:1,last:last"; });
    } else if (axis == "aggregation") {
        // cls is text-only framing, not applicable to expert token streams
        with("mean", [](RunConfig& c) { c.aggregation = "mean"; });
        with("max", [](RunConfig& c) { c.aggregation = "max"; });
    } else if (axis == "loss") {
        with("infonce", [](RunConfig& c) { c.loss = "infonce"; });
        with("triplet", [](RunConfig& c) { c.loss = "triplet"; });
    } else if (axis == "temperature") {
        for (double g : {0.0007, 0.007, 0.07, 0.7, 7.0})
            with(std::to_string(g), [&](RunConfig& c) { c.temperature = g; });
    } else if (axis == "key_encoder_source") {
        with("momentum", [](RunConfig& c) { c.key_source = "momentum"; });
        with("query", [](RunConfig& c) { c.key_source = "query"; });
    } else {
        throw ConfigError("unknown ablation axis: " + axis +
                          " (expected bank_size|levels|aggregation|loss|temperature|"
                          "key_encoder_source)");
    }
    for (const auto& v : variants) {
        Trainer trainer(v.cfg);
        std::ostringstream sink;
        auto [v2t, t2v] = trainer.run_training(sink);
        char buf[512];
        std::snprintf(buf, sizeof(buf),
                      "axis=%s value=%s r1_v2t=%.10g r5_v2t=%.10g r10_v2t=%.10g "
                      "medr_v2t=%.10g r1_t2v=%.10g r5_t2v=%.10g r10_t2v=%.10g "
                      "medr_t2v=%.10g rsum=%.10g",
                      axis.c_str(), v.value.c_str(), v2t.r1, v2t.r5, v2t.r10, v2t.medr,
                      t2v.r1, t2v.r5, t2v.r10, t2v.medr, v2t.rsum);
        out << buf << "\n";
        out.flush();
    }
}

}  // namespace cmr
