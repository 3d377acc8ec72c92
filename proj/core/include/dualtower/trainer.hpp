#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dualtower/checkpoint.hpp"
#include "dualtower/config.hpp"
#include "dualtower/data.hpp"
#include "dualtower/encoder.hpp"

namespace dualtower {

enum class Stage { One, Two };

struct TrainingSchedule {
    Stage stage = Stage::One;
    double peak_lr = 1e-4;
    std::size_t warmup_steps = 5000;
    std::size_t total_steps = 0;
    std::size_t batch_size = 0;
    double weight_decay = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;  // ViT profile; the ResNet profile uses 0.999
    double eps = 1e-6;    // ViT profile; the ResNet profile uses 1e-8
    std::set<std::string> frozen_groups;

    void validate() const;
    TrainingSchedule& with_resnet_adam_profile();

    static TrainingSchedule stage_one_defaults();
    static TrainingSchedule stage_two_defaults();
};

// Linear warmup to peak, then cosine decay to zero at total_steps.
double lr_at_step(std::size_t step, const TrainingSchedule& schedule);

struct OptimizerState {
    std::map<std::string, Tensor> m;
    std::map<std::string, Tensor> v;
    std::size_t step = 0;
};

// Bias-corrected Adam with decoupled weight decay. Parameters without a
// gradient entry (frozen groups) are untouched; logit_scale is clamped after
// the update. Throws on a non-finite gradient, naming the tensor.
void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                OptimizerState& state, double lr, const TrainingSchedule& schedule);

// Wrapping, reshuffled-per-epoch view over curated records; tokenizes and
// augments on the way out.
class BatchStream {
public:
    struct Item {
        TokenSequence tokens;
        Image image;
    };

    BatchStream(std::vector<ImageTextRecord> records, ByteVocab vocab, AugmentConfig augment,
                std::size_t max_text_length, std::uint64_t seed);

    std::vector<Item> next_batch(std::size_t n);
    std::size_t epochs_completed() const { return epochs_; }
    std::size_t corpus_size() const { return records_.size(); }

private:
    void reshuffle();

    std::vector<ImageTextRecord> records_;
    ByteVocab vocab_;
    AugmentConfig augment_;
    std::size_t max_text_length_;
    Rng order_rng_;
    Rng augment_rng_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::size_t epochs_ = 0;
};

struct MetricsRow {
    std::size_t step;
    double lr;
    double loss;
    double exp_logit_scale;
};

struct RunStageOptions {
    std::string out_dir;
    std::size_t checkpoint_interval = 0;  // steps between bundles; 0 = exit only
    std::size_t num_workers = 1;
};

struct RunStageResult {
    std::string checkpoint_dir;
    std::string metrics_path;
    std::vector<MetricsRow> metrics;
    std::size_t epochs_completed = 0;
};

// Raised on a non-finite loss or gradient; whatever periodic checkpoint was
// last written is left in place.
struct TrainingAborted : std::runtime_error {
    TrainingAborted(const std::string& msg, std::string last_checkpoint)
        : std::runtime_error(msg), last_checkpoint(std::move(last_checkpoint)) {}
    std::string last_checkpoint;
};

// All stochasticity (data order, augmentation) lives in the stream, which the
// caller seeds; the loop itself is deterministic.
RunStageResult run_stage(TwoTowerModel& model, BatchStream& stream,
                         const TrainingSchedule& schedule, OptimizerState& optimizer,
                         const RunStageOptions& options);

void save_training_checkpoint(const TwoTowerModel& model, const OptimizerState& optimizer,
                              const std::string& dir);
// Moments for every current parameter; zeros where the bundle has none.
OptimizerState load_optimizer_state(const std::string& dir, const TwoTowerModel& model);

struct ResumedTrainer {
    TwoTowerModel model;
    OptimizerState optimizer;
    TrainingSchedule schedule;
};

// Stage boundary: moments carry over for parameters that trained in stage
// one, newly unfrozen parameters start at zero, and the step counter and lr
// schedule restart.
ResumedTrainer switch_stage(const std::string& stage_one_checkpoint,
                            TrainingSchedule stage_two_schedule);

// ---------------------------------------------------------------------------
// run configuration file (key=value)

struct TrainingRunConfig {
    ModelConfig model;
    TrainingSchedule stage1 = TrainingSchedule::stage_one_defaults();
    TrainingSchedule stage2 = TrainingSchedule::stage_two_defaults();
    std::vector<std::string> data_shards;
    std::size_t num_workers = 1;
    std::size_t checkpoint_interval = 0;
};

TrainingRunConfig training_config_from_kv(const KeyValueFile& kv);
void training_config_to_kv(const TrainingRunConfig& cfg, KeyValueFile& kv);
TrainingRunConfig load_training_config(const std::string& path);

}  // namespace dualtower
