#pragma once

#include <iosfwd>
#include <optional>

#include "cmr/loss.hpp"
#include "cmr/model.hpp"
#include "cmr/optim.hpp"

namespace cmr {

struct StepRecord {
    long step = 0;
    std::vector<double> level_losses;  // one per configured level
    double total = 0.0;
    double l1() const { return level_losses.empty() ? 0.0 : level_losses[0]; }
    double l2() const { return level_losses.size() < 2 ? 0.0 : level_losses[1]; }

    // populated when record_extras is requested: everything needed to
    // recompute the loss independently
    struct Extras {
        // [level][instance] embedding values
        std::vector<std::vector<std::vector<double>>> vq, tq, vk, tk;
        std::vector<Tensor> video_bank_snapshots, text_bank_snapshots;  // per level
    };
    std::optional<Extras> extras;
};

class Trainer {
public:
    explicit Trainer(const RunConfig& cfg);

    StepRecord train_step(const std::vector<std::size_t>& batch_indices,
                          bool record_extras = false);

    // query-encoder dual-stream evaluation over the given pair indices
    std::pair<RetrievalReport, RetrievalReport> evaluate(
        const std::vector<std::size_t>& indices) const;

    // history lines are appended to `history`; returns final held-out reports
    std::pair<RetrievalReport, RetrievalReport> run_training(
        std::ostream& history, const std::string& checkpoint_path = "",
        const std::string& resume_from = "");

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

    const RunConfig& config() const { return cfg_; }
    Model& model() { return model_; }
    const Dataset& dataset() const { return data_; }
    std::vector<std::size_t> train_indices() const;
    std::vector<std::size_t> heldout_indices() const;
    MemoryBank& video_bank(std::size_t level) { return banks_v_[level]; }
    MemoryBank& text_bank(std::size_t level) { return banks_t_[level]; }
    bool mcc_enabled() const { return cfg_.bank_size_video > 0; }
    long global_step() const { return step_; }
    std::size_t completed_epochs() const { return epoch_; }
    Rng& rng() { return rng_; }
    AdamW& optimizer() { return opt_; }

    std::vector<double> epoch_mean_losses() const { return epoch_mean_losses_; }

private:
    RunConfig cfg_;
    Dataset data_;
    Model model_;
    Rng rng_;
    AdamW opt_;
    std::vector<MemoryBank> banks_v_, banks_t_;
    long step_ = 0;
    std::size_t epoch_ = 0;
    std::vector<double> epoch_mean_losses_;
};

// One training+eval run per axis value over a shared seed; writes one
// comparison row per value.
void run_ablation(const RunConfig& base, const std::string& axis, std::ostream& out);

std::string format_step_line(const StepRecord& r);

}  // namespace cmr
