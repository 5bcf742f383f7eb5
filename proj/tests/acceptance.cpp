// Acceptance suite: ten end-to-end criteria, one pass/fail line each.
// Exit code = number of failed criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "cmr/train.hpp"

using namespace cmr;

namespace {

int failures = 0;

void report(int idx, const std::string& name, bool ok, const std::string& detail) {
    std::printf("criterion %2d %-28s %s  %s\n", idx, name.c_str(), ok ? "PASS" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

RunConfig tiny_config() {
    RunConfig c;
    c.batch = 4;
    c.epochs = 1;
    c.bank_size_video = 8;
    c.bank_size_text = 8;
    c.hidden = 16;
    c.video_layers = 1;
    c.video_heads = 2;
    c.text_layers = 1;
    c.text_heads = 2;
    c.intermediate = 16;
    c.vocab = 64;
    c.max_seq = 16;
    c.proj_hidden = 16;
    c.out_dim = 8;
    c.pairs = 8;
    c.latent = 4;
    c.experts = 2;
    c.tokens_per_expert = 2;
    c.d_in = 6;
    c.text_len_min = 4;
    c.text_len_max = 6;
    return c;
}

RunConfig small_config() {
    // mid-size config for harness-level checks that need several epochs
    RunConfig c = tiny_config();
    c.pairs = 32;
    c.batch = 8;
    c.epochs = 2;
    c.video_layers = 2;
    c.text_layers = 2;
    return c;
}

// forward pass of one training step without any state mutation beyond BN
// running buffers (restored by the caller when purity matters)
Tensor forward_total(Trainer& tr, Tape* tape, const std::vector<std::size_t>& batch) {
    Model& m = tr.model();
    const RunConfig& cfg = tr.config();
    std::vector<VisualInput> vb;
    std::vector<TextInput> tb;
    for (auto i : batch) {
        vb.push_back(tr.dataset().videos.at(i));
        tb.push_back(tr.dataset().texts.at(i));
    }
    auto vq = m.embed_videos(tape, Role::Query, vb, true);
    auto tq = m.embed_texts(tape, Role::Query, tb, true);
    auto vk = m.embed_videos(nullptr, Role::Key, vb, true);
    auto tk = m.embed_texts(nullptr, Role::Key, tb, true);
    std::size_t levels = m.num_levels();
    std::vector<Tensor> per_level;
    for (std::size_t l = 0; l < levels; ++l) {
        Tensor vs = tr.mcc_enabled() ? tr.video_bank(l).snapshot()
                                     : Tensor::zeros({0, cfg.out_dim});
        Tensor ts = tr.mcc_enabled() ? tr.text_bank(l).snapshot()
                                     : Tensor::zeros({0, cfg.out_dim});
        per_level.push_back(
            level_loss(tape, vq[l], tq[l], vk[l], tk[l], vs, ts, cfg.temperature));
    }
    LossWeights w{cfg.alpha, cfg.beta, cfg.temperature};
    return total_loss(tape, per_level[0], per_level[1], w);
}

double infonce_ref(const std::vector<double>& row, double gamma) {
    double mx = *std::max_element(row.begin(), row.end()) / gamma;
    double z = 0.0;
    for (double s : row) z += std::exp(s / gamma - mx);
    return -(row[0] / gamma - mx - std::log(z));
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() /
            (std::string(name) + "_" + std::to_string(::getpid())))
        .string();
}

// --- criterion 1: gradient integrity --------------------------------------

void criterion1() {
    auto t0 = std::chrono::steady_clock::now();
    Trainer tr(tiny_config());
    std::vector<std::size_t> batch = {0, 1, 2, 3};

    Tape tape;
    Tensor loss = forward_total(tr, &tape, batch);
    tr.model().query_store().zero_grads();
    tape.backward(loss);

    // snapshot the BN running buffers so finite-difference evals stay pure
    std::vector<std::pair<std::string, std::vector<double>>> buffers;
    for (ParamStore* st : {&tr.model().query_store(), &tr.model().key_store()})
        for (const auto& n : st->names())
            if (!st->get(n).trainable) buffers.push_back({n, st->get(n).value.data});
    auto restore = [&]() {
        std::size_t i = 0;
        for (ParamStore* st : {&tr.model().query_store(), &tr.model().key_store()})
            for (const auto& n : st->names())
                if (!st->get(n).trainable) st->get(n).value.data = buffers[i++].second;
    };

    // 50 randomly sampled query parameters; per parameter, check the element
    // carrying the largest gradient (best signal-to-noise for central FD)
    std::vector<std::string> names;
    double gmax = 0.0;
    for (const auto& n : tr.model().query_store().names()) {
        const Parameter& p = tr.model().query_store().get(n);
        if (!p.trainable) continue;
        names.push_back(n);
        for (double g : p.grad) gmax = std::max(gmax, std::abs(g));
    }
    Rng pick(123);
    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    for (int s = 0; s < 50; ++s) {
        Parameter& p = tr.model().query_store().get(names[pick.index(names.size())]);
        std::size_t best = 0;
        for (std::size_t i = 1; i < p.grad.size(); ++i)
            if (std::abs(p.grad[i]) > std::abs(p.grad[best])) best = i;
        double keep = p.value.data[best];
        p.value.data[best] = keep + h;
        double up = forward_total(tr, nullptr, batch).scalar();
        p.value.data[best] = keep - h;
        double dn = forward_total(tr, nullptr, batch).scalar();
        p.value.data[best] = keep;
        restore();
        double numeric = (up - dn) / (2 * h);
        double analytic = p.grad[best];
        // relative to the coordinate, floored at the overall gradient scale:
        // central FD cannot certify 1e-4 relative accuracy on coordinates
        // whose true gradient sits at roundoff (e.g. biases nulled by BN)
        double rel = std::abs(numeric - analytic) /
                     std::max({std::abs(numeric), std::abs(analytic), 1e-4 * gmax});
        worst = std::max(worst, rel);
        ++checked;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char d[160];
    std::snprintf(d, sizeof(d), "(50 params, worst rel err %.3g < 1e-4, %.1fs < 60s)", worst,
                  secs);
    report(1, "gradient integrity", checked == 50 && worst < 1e-4 && secs < 60.0, d);
}

// --- criterion 2: momentum algebra -----------------------------------------

void criterion2() {
    Trainer tr(tiny_config());
    MomentumMirror& mir = tr.model().mirror();
    ParamStore& q = tr.model().query_store();
    ParamStore& k = tr.model().key_store();
    Rng rng(31);
    double m = mir.coefficient();

    auto dist = [&](const std::string& n) {
        double s = 0;
        const auto& a = q.get(n).value.data;
        const auto& b = k.get(n).value.data;
        for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
        return std::sqrt(s);
    };

    double worst = 0.0;
    for (int round = 0; round < 10; ++round) {
        // scripted query update
        for (const auto& n : q.names()) {
            Parameter& p = q.get(n);
            if (!p.trainable) continue;
            for (auto& x : p.value.data) x += 0.01 * rng.normal();
        }
        std::vector<double> before;
        for (const auto& n : q.names())
            if (q.get(n).trainable) before.push_back(dist(n));
        mir.momentum_update();
        std::size_t i = 0;
        for (const auto& n : q.names()) {
            if (!q.get(n).trainable) continue;
            double want = m * before[i++];
            double err = std::abs(dist(n) - want) / std::max(1.0, want);
            worst = std::max(worst, err);
        }
    }

    // m = 0: exact copy
    mir.set_coefficient(0.0);
    mir.momentum_update();
    bool copy_exact = true;
    for (const auto& n : q.names())
        if (q.get(n).trainable) copy_exact &= k.get(n).value.data == q.get(n).value.data;

    // fixed point: equal stores stay bit-identical under the blend
    mir.set_coefficient(0.5);
    mir.init_key_from_query();
    mir.momentum_update();
    bool fixed_exact = true;
    for (const auto& n : q.names())
        if (q.get(n).trainable) fixed_exact &= k.get(n).value.data == q.get(n).value.data;

    char d[160];
    std::snprintf(d, sizeof(d),
                  "(10 rounds, worst |dk' - m*dk| %.3g < 1e-12; copy %s, fixed point %s)",
                  worst, copy_exact ? "exact" : "BROKEN", fixed_exact ? "exact" : "BROKEN");
    report(2, "momentum algebra", worst < 1e-12 && copy_exact && fixed_exact, d);
}

// --- criterion 3: key isolation --------------------------------------------

void criterion3() {
    RunConfig c = tiny_config();
    Trainer tr(c);
    ParamStore& k = tr.model().key_store();
    ParamStore& q = tr.model().query_store();
    std::vector<std::vector<double>> key_before;
    for (const auto& n : k.names()) key_before.push_back(k.get(n).value.data);
    tr.train_step({0, 1, 2, 3});

    bool bit_ok = true, no_grads = true;
    std::size_t i = 0;
    for (const auto& n : k.names()) {
        const Parameter& kp = k.get(n);
        no_grads &= !kp.has_grad();
        if (kp.trainable) {
            // the sole permitted write is the momentum blend after the
            // optimizer step; recompute it from the recorded pre-step keys
            const Parameter& qp = q.get(n);
            for (std::size_t j = 0; j < kp.value.data.size(); ++j) {
                double expect =
                    c.momentum * key_before[i][j] + (1.0 - c.momentum) * qp.value.data[j];
                bit_ok &= kp.value.data[j] == expect;
            }
        }
        ++i;
    }
    report(3, "key isolation", bit_ok && no_grads,
           bit_ok ? "(key params bit-equal to the momentum blend; no key grad buffers)"
                  : "(key parameters were modified outside the momentum blend)");
}

// --- criterion 4: bank semantics --------------------------------------------

void criterion4() {
    const std::size_t cap = 64, dim = 16;
    MemoryBank bank(cap, dim);
    Rng rng(77);
    bank.init_random(rng);
    std::vector<std::vector<double>> oracle(cap, std::vector<double>(dim));
    {
        Tensor s = bank.snapshot();
        for (std::size_t i = 0; i < cap; ++i)
            for (std::size_t j = 0; j < dim; ++j) oracle[i][j] = s.at(i, j);
    }
    std::size_t cur = 0;
    bool replay_ok = true, norm_ok = true, isolation_ok = true;
    Rng data(78);
    for (int step = 0; step < 1000; ++step) {
        std::size_t b = 1 + data.index(8);
        std::vector<Tensor> batch;
        for (std::size_t x = 0; x < b; ++x) {
            Tensor v = Tensor::zeros({dim});
            double n = 0;
            for (auto& e : v.data) {
                e = data.normal();
                n += e * e;
            }
            n = std::sqrt(n);
            for (auto& e : v.data) e /= n;
            batch.push_back(std::move(v));
        }
        Tensor before = bank.snapshot();
        bank.enqueue(batch);
        isolation_ok &= before.data != bank.snapshot().data;  // snapshot detached
        for (const auto& v : batch) {
            oracle[cur] = v.data;
            cur = (cur + 1) % cap;
        }
        Tensor snap = bank.snapshot();
        for (std::size_t i = 0; i < cap; ++i) {
            double n = 0;
            for (std::size_t j = 0; j < dim; ++j) {
                replay_ok &= snap.at(i, j) == oracle[i][j];
                n += snap.at(i, j) * snap.at(i, j);
            }
            norm_ok &= std::abs(std::sqrt(n) - 1.0) < 1e-9;
        }
    }
    char d[160];
    std::snprintf(d, sizeof(d), "(1000 steps: replay %s, rows unit-norm %s, snapshots %s)",
                  replay_ok ? "exact" : "DIVERGED", norm_ok ? "within 1e-9" : "BROKEN",
                  isolation_ok ? "isolated" : "ALIASED");
    report(4, "bank semantics", replay_ok && norm_ok && isolation_ok, d);
}

// --- criterion 5: loss oracle -----------------------------------------------

void criterion5() {
    RunConfig c = tiny_config();
    c.pairs = 16;
    Trainer tr(c);
    auto idx = tr.train_indices();
    Rng order(5);
    double worst = 0.0;
    for (int s = 0; s < 50; ++s) {
        std::vector<std::size_t> batch;
        for (std::size_t i = 0; i < c.batch; ++i) batch.push_back(idx[order.index(idx.size())]);
        StepRecord rec = tr.train_step(batch, /*record_extras=*/true);
        const auto& ex = *rec.extras;
        double total = 0.0;
        for (std::size_t l = 0; l < rec.level_losses.size(); ++l) {
            double acc = 0.0;
            const Tensor& vbank = ex.video_bank_snapshots[l];
            const Tensor& tbank = ex.text_bank_snapshots[l];
            for (std::size_t i = 0; i < c.batch; ++i) {
                std::vector<double> row_vt, row_tv;
                double pos = 0;
                for (std::size_t j = 0; j < c.out_dim; ++j)
                    pos += ex.vq[l][i][j] * ex.tk[l][i][j];
                row_vt.push_back(pos);
                for (std::size_t r = 0; r < tbank.rows(); ++r) {
                    double v = 0;
                    for (std::size_t j = 0; j < c.out_dim; ++j)
                        v += tbank.at(r, j) * ex.vq[l][i][j];
                    row_vt.push_back(v);
                }
                pos = 0;
                for (std::size_t j = 0; j < c.out_dim; ++j)
                    pos += ex.tq[l][i][j] * ex.vk[l][i][j];
                row_tv.push_back(pos);
                for (std::size_t r = 0; r < vbank.rows(); ++r) {
                    double v = 0;
                    for (std::size_t j = 0; j < c.out_dim; ++j)
                        v += vbank.at(r, j) * ex.tq[l][i][j];
                    row_tv.push_back(v);
                }
                acc += infonce_ref(row_vt, c.temperature) + infonce_ref(row_tv, c.temperature);
            }
            double recomputed = acc / static_cast<double>(c.batch);
            worst = std::max(worst, std::abs(recomputed - rec.level_losses[l]));
            total += (l == 0 ? c.alpha : c.beta) * recomputed;
        }
        worst = std::max(worst, std::abs(total - rec.total));
    }
    // scalar spot oracle: s+ = 1, negatives [0, 0], temperature 1
    double spot = infonce(nullptr, Tensor::vec({1.0, 0.0, 0.0}), 1.0).scalar();
    double spot_err = std::abs(spot - 0.55144471393205);
    char d[160];
    std::snprintf(d, sizeof(d), "(50 steps, worst |L - recomputed| %.3g < 1e-10; spot %.3g < 1e-6)",
                  worst, spot_err);
    report(5, "loss oracle", worst < 1e-10 && spot_err < 1e-6, d);
}

// --- criterion 6: metric oracle ---------------------------------------------

void criterion6() {
    Rng rng(6);
    bool exact = true, monotone = true, rsum_ok = true;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<LevelEmbedding> q(50), g(50);
        for (int i = 0; i < 50; ++i)
            for (auto* side : {&q[i], &g[i]})
                for (int l = 0; l < 2; ++l) {
                    std::vector<double> v(8);
                    double n = 0;
                    for (auto& x : v) {
                        x = rng.normal();
                        n += x * x;
                    }
                    n = std::sqrt(n);
                    for (auto& x : v) x /= n;
                    side->levels.push_back(std::move(v));
                }
        auto fast = rank_queries(q, g);
        // brute force: stable sort by (score desc, index asc)
        for (std::size_t i = 0; i < 50; ++i) {
            std::vector<std::pair<double, std::size_t>> scored;
            for (std::size_t j = 0; j < 50; ++j)
                scored.push_back({fuse_similarity(q[i], g[j]), j});
            std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return a.second < b.second;
            });
            std::size_t want = 0;
            for (std::size_t pos = 0; pos < 50; ++pos)
                if (scored[pos].second == i) want = pos + 1;
            exact &= fast[i] == want;
        }
        RetrievalReport a = metrics(fast, "v2t");
        monotone &= a.r1 <= a.r5 && a.r5 <= a.r10;
        RetrievalReport b = metrics(fast, "t2v");
        finalize_rsum(a, b);
        rsum_ok &= a.rsum == b.rsum &&
                   std::abs(a.rsum - (a.r1 + a.r5 + a.r10 + b.r1 + b.r5 + b.r10)) == 0.0;
    }
    char d[160];
    std::snprintf(d, sizeof(d), "(100 matrices 50x50: ranks %s, R@K monotone %s, rsum %s)",
                  exact ? "exact" : "WRONG", monotone ? "yes" : "NO", rsum_ok ? "ok" : "BROKEN");
    report(6, "metric oracle", exact && monotone && rsum_ok, d);
}

// --- criterion 7: dual-stream accounting ------------------------------------

void criterion7() {
    RunConfig c = tiny_config();
    c.pairs = 64;
    Trainer tr(c);
    std::vector<std::size_t> all(64);
    for (std::size_t i = 0; i < 64; ++i) all[i] = i;
    ModalEncoder::reset_forward_count();
    tr.evaluate(all);
    long n = ModalEncoder::forward_count;
    char d[96];
    std::snprintf(d, sizeof(d), "(64x64 evaluation used %ld encoder forwards, expected 128)", n);
    report(7, "dual-stream accounting", n == 128, d);
}

// --- criterion 8: end-to-end learnability -----------------------------------

void criterion8() {
    auto t0 = std::chrono::steady_clock::now();
    RunConfig c;  // pinned defaults: 128 pairs, latent 16, noise 0.05, seed 7,
                  // batch 32, 20 epochs, K=512
    Trainer tr(c);
    std::ostringstream hist;
    auto [hv2t, ht2v] = tr.run_training(hist);
    auto [tv2t, tt2v] = tr.evaluate(tr.train_indices());
    auto losses = tr.epoch_mean_losses();
    double drop = (losses.front() - losses.back()) / losses.front();
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool ok = tv2t.r1 >= 80.0 && tt2v.r1 >= 80.0 && hv2t.r1 >= 60.0 && ht2v.r1 >= 60.0 &&
              drop >= 0.5 && secs < 300.0;
    char d[200];
    std::snprintf(d, sizeof(d),
                  "(train R@1 %.1f/%.1f >= 80, held %.1f/%.1f >= 60, loss drop %.0f%% >= 50%%, "
                  "%.0fs < 300s)",
                  tv2t.r1, tt2v.r1, hv2t.r1, ht2v.r1, 100.0 * drop, secs);
    report(8, "end-to-end learnability", ok, d);
}

// --- criterion 9: ablation harness ------------------------------------------

void criterion9() {
    RunConfig base = small_config();
    auto rows_of = [&](const std::string& axis) {
        std::ostringstream out;
        run_ablation(base, axis, out);
        std::vector<std::string> rows;
        std::istringstream in(out.str());
        for (std::string line; std::getline(in, line);) rows.push_back(line);
        return rows;
    };
    auto temp = rows_of("temperature");
    auto bank = rows_of("bank_size");
    bool ok = temp.size() == 5 && bank.size() == 6;
    for (const auto& r : temp) ok &= r.find("axis=temperature") == 0;
    for (const auto& r : bank) ok &= r.find("axis=bank_size") == 0;
    char d[96];
    std::snprintf(d, sizeof(d), "(temperature rows %zu/5, bank_size rows %zu/6)", temp.size(),
                  bank.size());
    report(9, "ablation harness", ok, d);
    // directional observations are reported, not asserted:
    for (const auto& r : temp) std::printf("    %s\n", r.c_str());
    for (const auto& r : bank) std::printf("    %s\n", r.c_str());
}

// --- criterion 10: determinism & checkpointing ------------------------------

// the trainer flushes history once per epoch just before saving the epoch
// checkpoint, so the file observed at the second flush holds the epoch-1
// state: exactly what an interrupted run leaves behind
struct MidRunCapture : std::stringbuf {
    std::string live, copy;
    int syncs = 0;
    int sync() override {
        if (++syncs == 2)
            std::filesystem::copy_file(live, copy,
                                       std::filesystem::copy_options::overwrite_existing);
        return 0;
    }
};

void criterion10() {
    RunConfig c = small_config();
    c.epochs = 3;

    std::ostringstream h1, h2;
    Trainer a(c), b(c);
    a.run_training(h1);
    b.run_training(h2);
    bool identical = h1.str() == h2.str() && !h1.str().empty();

    std::string live = temp_path("cmr_acc_live"), copy = temp_path("cmr_acc_copy");
    MidRunCapture buf;
    buf.live = live;
    buf.copy = copy;
    std::ostream full(&buf);
    Trainer u(c);
    u.run_training(full, live);

    Trainer resumed(c);
    std::ostringstream tail;
    resumed.run_training(tail, "", copy);
    std::string whole = buf.str();
    bool resume_ok = whole == h1.str() && whole.size() > tail.str().size() &&
                     whole.substr(whole.size() - tail.str().size()) == tail.str();
    std::filesystem::remove(live);
    std::filesystem::remove(copy);

    char d[160];
    std::snprintf(d, sizeof(d), "(identical reruns %s; resumed tail byte-identical %s)",
                  identical ? "yes" : "NO", resume_ok ? "yes" : "NO");
    report(10, "determinism & checkpointing", identical && resume_ok, d);
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    std::printf("%s (%d/10 criteria passed)\n", failures == 0 ? "ACCEPTANCE PASS" : "ACCEPTANCE FAIL",
                10 - failures);
    return failures;
}
