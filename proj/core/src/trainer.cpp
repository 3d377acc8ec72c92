#include "dualtower/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dualtower/contrastive.hpp"

namespace dualtower {

namespace fs = std::filesystem;

void TrainingSchedule::validate() const {
    if (warmup_steps > total_steps) {
        throw ContractViolation("schedule: warmup_steps must not exceed total_steps");
    }
    if (stage == Stage::One && frozen_groups.count("image_tower") == 0) {
        throw ContractViolation("schedule: stage one must freeze the image tower");
    }
    if (stage == Stage::Two && !frozen_groups.empty()) {
        throw ContractViolation("schedule: stage two must not freeze anything");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && eps > 0.0)) {
        throw ContractViolation("schedule: Adam constants out of range");
    }
}

TrainingSchedule& TrainingSchedule::with_resnet_adam_profile() {
    beta2 = 0.999;
    eps = 1e-8;
    return *this;
}

TrainingSchedule TrainingSchedule::stage_one_defaults() {
    TrainingSchedule s;
    s.stage = Stage::One;
    s.peak_lr = 1e-4;
    s.warmup_steps = 5000;
    s.frozen_groups = {"image_tower"};
    return s;
}

TrainingSchedule TrainingSchedule::stage_two_defaults() {
    TrainingSchedule s;
    s.stage = Stage::Two;
    s.peak_lr = 2e-5;
    s.warmup_steps = 500;
    s.frozen_groups.clear();
    return s;
}

double lr_at_step(std::size_t step, const TrainingSchedule& schedule) {
    if (step > schedule.total_steps) {
        throw ContractViolation("lr_at_step: step beyond total_steps");
    }
    if (step < schedule.warmup_steps) {
        return schedule.peak_lr * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    }
    const std::size_t span = schedule.total_steps - schedule.warmup_steps;
    if (span == 0) {
        return schedule.peak_lr;
    }
    const double progress =
        static_cast<double>(step - schedule.warmup_steps) / static_cast<double>(span);
    return schedule.peak_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

void adamw_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                OptimizerState& state, double lr, const TrainingSchedule& schedule) {
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(schedule.beta1, t);
    const double bc2 = 1.0 - std::pow(schedule.beta2, t);

    for (NamedTensor& p : params.items()) {
        const auto git = grads.find(p.name);
        if (git == grads.end()) {
            continue;  // frozen or absent from this step's graph
        }
        const Tensor& g = git->second;
        if (!g.same_shape(p.value)) {
            throw ContractViolation("adamw: gradient shape mismatch for " + p.name);
        }
        if (!g.all_finite()) {
            throw TrainingAborted("non-finite gradient in tensor " + p.name, "");
        }
        Tensor& m = state.m.try_emplace(p.name, Tensor::zeros_like(p.value)).first->second;
        Tensor& v = state.v.try_emplace(p.name, Tensor::zeros_like(p.value)).first->second;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            m[i] = schedule.beta1 * m[i] + (1.0 - schedule.beta1) * g[i];
            v[i] = schedule.beta2 * v[i] + (1.0 - schedule.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.value[i] -= lr * (mhat / (std::sqrt(vhat) + schedule.eps) +
                                schedule.weight_decay * p.value[i]);
        }
    }
    if (params.has("logit_scale")) {
        Tensor& ls = params.get("logit_scale");
        ls = clamp_temperature(ls);
    }
}

// ---------------------------------------------------------------------------
// data stream

BatchStream::BatchStream(std::vector<ImageTextRecord> records, ByteVocab vocab,
                         AugmentConfig augment, std::size_t max_text_length,
                         std::uint64_t seed)
    : records_(std::move(records)),
      vocab_(vocab),
      augment_(augment),
      max_text_length_(max_text_length),
      order_rng_(Rng(seed).derive("batch-order")),
      augment_rng_(Rng(seed).derive("augment")) {
    if (records_.empty()) {
        throw ContractViolation("batch stream: empty corpus");
    }
    order_.resize(records_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) {
        order_[i] = i;
    }
    reshuffle();
}

void BatchStream::reshuffle() {
    // Fisher-Yates with our own rng for cross-platform determinism
    for (std::size_t i = order_.size(); i > 1; --i) {
        std::swap(order_[i - 1], order_[order_rng_.index(i)]);
    }
    cursor_ = 0;
}

std::vector<BatchStream::Item> BatchStream::next_batch(std::size_t n) {
    std::vector<Item> batch;
    batch.reserve(n);
    while (batch.size() < n) {
        if (cursor_ == order_.size()) {
            ++epochs_;
            reshuffle();
        }
        const ImageTextRecord& r = records_[order_[cursor_++]];
        Item item;
        item.tokens = tokenize(r.caption, vocab_, max_text_length_);
        item.image = augment_image(r.image, augment_, augment_rng_);
        batch.push_back(std::move(item));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// training loop

namespace {

std::vector<NamedTensor> optimizer_extras(const OptimizerState& opt) {
    std::vector<NamedTensor> extras;
    extras.push_back({"optim.step",
                      Tensor::scalar(static_cast<double>(opt.step))});
    for (const auto& [name, t] : opt.m) {
        extras.push_back({"optim.m." + name, t});
    }
    for (const auto& [name, t] : opt.v) {
        extras.push_back({"optim.v." + name, t});
    }
    return extras;
}

}  // namespace

void save_training_checkpoint(const TwoTowerModel& model, const OptimizerState& optimizer,
                              const std::string& dir) {
    save_checkpoint(model, dir, optimizer_extras(optimizer));
}

OptimizerState load_optimizer_state(const std::string& dir, const TwoTowerModel& model) {
    OptimizerState opt;
    for (const NamedTensor& e : load_checkpoint_extras(dir, "optim.")) {
        if (e.name == "optim.step") {
            opt.step = static_cast<std::size_t>(e.value[0]);
        } else if (e.name.starts_with("optim.m.")) {
            opt.m.emplace(e.name.substr(8), e.value);
        } else if (e.name.starts_with("optim.v.")) {
            opt.v.emplace(e.name.substr(8), e.value);
        }
    }
    for (const NamedTensor& p : model.params.items()) {
        opt.m.try_emplace(p.name, Tensor::zeros_like(p.value));
        opt.v.try_emplace(p.name, Tensor::zeros_like(p.value));
    }
    return opt;
}

RunStageResult run_stage(TwoTowerModel& model, BatchStream& stream,
                         const TrainingSchedule& schedule, OptimizerState& optimizer,
                         const RunStageOptions& options) {
    schedule.validate();
    if (schedule.batch_size == 0 || options.num_workers == 0 ||
        schedule.batch_size % options.num_workers != 0) {
        throw ContractViolation("run_stage: batch_size must divide evenly across workers");
    }

    fs::create_directories(options.out_dir);
    const std::string ckpt_dir = options.out_dir + "/checkpoint";
    const std::string metrics_path = options.out_dir + "/metrics.tsv";

    // stage one must leave batch-norm running statistics untouched
    const bool image_frozen = schedule.frozen_groups.count("image_tower") != 0;
    for (auto& [name, state] : model.bn_states) {
        state.update_stats = !image_frozen;
    }

    std::ofstream metrics(metrics_path, std::ios::binary);
    if (!metrics) {
        throw std::runtime_error("cannot write metrics log: " + metrics_path);
    }

    RunStageResult result;
    result.checkpoint_dir = ckpt_dir;
    result.metrics_path = metrics_path;

    const std::size_t shard_size = schedule.batch_size / options.num_workers;
    std::string last_checkpoint;

    for (std::size_t step = 0; step < schedule.total_steps; ++step) {
        const double lr = lr_at_step(step, schedule);
        const std::vector<BatchStream::Item> batch = stream.next_batch(schedule.batch_size);

        Graph g;
        ModelBinding binding = bind_model(g, model, schedule.frozen_groups, true);

        // simulated workers: each shard is encoded independently (per-worker
        // batch-norm statistics), then gathered in worker order
        std::vector<Tensor> image_parts, text_parts;
        image_parts.reserve(options.num_workers);
        text_parts.reserve(options.num_workers);
        for (std::size_t w = 0; w < options.num_workers; ++w) {
            std::vector<Image> images;
            std::vector<TokenSequence> texts;
            images.reserve(shard_size);
            texts.reserve(shard_size);
            for (std::size_t i = 0; i < shard_size; ++i) {
                images.push_back(batch[w * shard_size + i].image);
                texts.push_back(batch[w * shard_size + i].tokens);
            }
            image_parts.push_back(encode_images_node(binding, images));
            text_parts.push_back(encode_texts_node(binding, texts));
        }
        const Tensor image_rows =
            image_parts.size() == 1 ? image_parts[0] : g.concat_rows(image_parts);
        const Tensor text_rows =
            text_parts.size() == 1 ? text_parts[0] : g.concat_rows(text_parts);

        const Tensor loss =
            contrastive_loss(g, image_rows, text_rows, binding.node("logit_scale"));
        if (!std::isfinite(loss[0])) {
            throw TrainingAborted("non-finite loss at step " + std::to_string(step),
                                  last_checkpoint);
        }

        GradientMap grads = g.backward(loss);
        std::map<std::string, Tensor> named;
        for (const auto& [name, node] : binding.nodes) {
            if (node.node_id.has_value()) {
                const auto it = grads.find(*node.node_id);
                if (it != grads.end()) {
                    named.emplace(name, std::move(it->second));
                }
            }
        }
        try {
            adamw_step(model.params, named, optimizer, lr, schedule);
        } catch (const TrainingAborted& e) {
            throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step),
                                  last_checkpoint);
        }

        MetricsRow row{step, lr, loss[0], std::exp(model.logit_scale_log())};
        result.metrics.push_back(row);
        char line[128];
        std::snprintf(line, sizeof(line), "%zu\t%.10e\t%.10e\t%.10e\n", row.step, row.lr,
                      row.loss, row.exp_logit_scale);
        metrics << line;

        if (options.checkpoint_interval != 0 &&
            (step + 1) % options.checkpoint_interval == 0 &&
            step + 1 != schedule.total_steps) {
            save_training_checkpoint(model, optimizer, ckpt_dir);
            last_checkpoint = ckpt_dir;
        }
    }

    metrics.close();
    save_training_checkpoint(model, optimizer, ckpt_dir);
    result.epochs_completed = stream.epochs_completed();
    return result;
}

ResumedTrainer switch_stage(const std::string& stage_one_checkpoint,
                            TrainingSchedule stage_two_schedule) {
    if (stage_two_schedule.stage != Stage::Two) {
        throw ContractViolation("switch_stage: schedule must be a stage-two schedule");
    }
    stage_two_schedule.validate();
    ResumedTrainer resumed{load_checkpoint_model(stage_one_checkpoint),
                           OptimizerState{},
                           std::move(stage_two_schedule)};
    resumed.optimizer = load_optimizer_state(stage_one_checkpoint, resumed.model);
    resumed.optimizer.step = 0;  // fresh bias correction and lr schedule
    return resumed;
}

// ---------------------------------------------------------------------------
// run configuration

namespace {

std::set<std::string> parse_groups(const std::string& csv) {
    std::set<std::string> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
        std::size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) {
            comma = csv.size();
        }
        const std::string item = csv.substr(pos, comma - pos);
        if (!item.empty()) {
            out.insert(item);
        }
        pos = comma + 1;
    }
    return out;
}

std::string groups_to_csv(const std::set<std::string>& groups) {
    std::string out;
    for (const std::string& g : groups) {
        if (!out.empty()) {
            out += ',';
        }
        out += g;
    }
    return out;
}

TrainingSchedule schedule_from_kv(const KeyValueFile& kv, const std::string& prefix,
                                  TrainingSchedule base) {
    base.peak_lr = kv.get_double_or(prefix + "peak_lr", base.peak_lr);
    base.warmup_steps = kv.get_u64_or(prefix + "warmup_steps", base.warmup_steps);
    base.total_steps = kv.get_u64_or(prefix + "total_steps", base.total_steps);
    base.batch_size = kv.get_u64_or(prefix + "batch_size", base.batch_size);
    base.weight_decay = kv.get_double_or(prefix + "weight_decay", base.weight_decay);
    base.beta1 = kv.get_double_or(prefix + "beta1", base.beta1);
    base.beta2 = kv.get_double_or(prefix + "beta2", base.beta2);
    base.eps = kv.get_double_or(prefix + "eps", base.eps);
    if (kv.has(prefix + "frozen_groups")) {
        base.frozen_groups = parse_groups(kv.get(prefix + "frozen_groups"));
    }
    if (kv.get_or(prefix + "adam_profile", "vit") == "resnet") {
        base.with_resnet_adam_profile();
    }
    return base;
}

void schedule_to_kv(const TrainingSchedule& s, const std::string& prefix, KeyValueFile& kv) {
    kv.set(prefix + "stage", s.stage == Stage::One ? "1" : "2");
    kv.set_double(prefix + "peak_lr", s.peak_lr);
    kv.set_u64(prefix + "warmup_steps", s.warmup_steps);
    kv.set_u64(prefix + "total_steps", s.total_steps);
    kv.set_u64(prefix + "batch_size", s.batch_size);
    kv.set_double(prefix + "weight_decay", s.weight_decay);
    kv.set_double(prefix + "beta1", s.beta1);
    kv.set_double(prefix + "beta2", s.beta2);
    kv.set_double(prefix + "eps", s.eps);
    kv.set(prefix + "frozen_groups", groups_to_csv(s.frozen_groups));
}

}  // namespace

TrainingRunConfig training_config_from_kv(const KeyValueFile& kv) {
    TrainingRunConfig cfg;
    if (kv.has("image.kind")) {
        cfg.model.image = encoder_config_from_kv(kv, "image.");
    }
    if (kv.has("text.kind")) {
        cfg.model.text = encoder_config_from_kv(kv, "text.");
    }
    cfg.model.validate();
    cfg.stage1 = schedule_from_kv(kv, "stage1.", TrainingSchedule::stage_one_defaults());
    cfg.stage2 = schedule_from_kv(kv, "stage2.", TrainingSchedule::stage_two_defaults());
    cfg.data_shards = kv.get_all("data.shard");
    cfg.num_workers = kv.get_u64_or("train.num_workers", 1);
    cfg.checkpoint_interval = kv.get_u64_or("train.checkpoint_interval", 0);
    return cfg;
}

void training_config_to_kv(const TrainingRunConfig& cfg, KeyValueFile& kv) {
    encoder_config_to_kv(kv, "image.", cfg.model.image);
    encoder_config_to_kv(kv, "text.", cfg.model.text);
    schedule_to_kv(cfg.stage1, "stage1.", kv);
    schedule_to_kv(cfg.stage2, "stage2.", kv);
    for (const std::string& s : cfg.data_shards) {
        kv.set("data.shard", s);
    }
    kv.set_u64("train.num_workers", cfg.num_workers);
    kv.set_u64("train.checkpoint_interval", cfg.checkpoint_interval);
}

TrainingRunConfig load_training_config(const std::string& path) {
    return training_config_from_kv(KeyValueFile::parse_file(path));
}

}  // namespace dualtower
