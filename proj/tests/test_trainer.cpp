#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dualtower/contrastive.hpp"
#include "dualtower/trainer.hpp"
#include "support/synthetic.hpp"

using namespace dualtower;
namespace ts = dualtower::testsupport;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

bool tower_unchanged(const TwoTowerModel& before, const TwoTowerModel& after,
                     const std::string& group) {
    for (std::size_t i = 0; i < before.params.count(); ++i) {
        const NamedTensor& p = before.params.items()[i];
        if (parameter_group(p.name) != group) {
            continue;
        }
        if (!bitwise_equal(p.value, after.params.items()[i].value)) {
            return false;
        }
    }
    return true;
}

TrainingSchedule quick_stage_one(std::size_t steps, std::size_t batch) {
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = steps;
    s.batch_size = batch;
    s.warmup_steps = std::min<std::size_t>(2, steps);
    s.peak_lr = 5e-3;
    return s;
}

TrainingSchedule quick_stage_two(std::size_t steps, std::size_t batch) {
    TrainingSchedule s = TrainingSchedule::stage_two_defaults();
    s.total_steps = steps;
    s.batch_size = batch;
    s.warmup_steps = std::min<std::size_t>(2, steps);
    s.peak_lr = 1e-3;
    return s;
}

}  // namespace

TEST_CASE("lr schedule hits the documented anchor points") {
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 20000;
    s.batch_size = 8;
    CHECK(lr_at_step(0, s) == 0.0);
    CHECK(lr_at_step(5000, s) == doctest::Approx(1e-4).epsilon(1e-12));  // peak at warmup end
    CHECK(lr_at_step(20000, s) == doctest::Approx(0.0).scale(1.0).epsilon(1e-18));
    const std::size_t mid = 5000 + (20000 - 5000) / 2;
    CHECK(lr_at_step(mid, s) == doctest::Approx(0.5e-4).epsilon(1e-9));
    CHECK_THROWS_AS(lr_at_step(20001, s), ContractViolation);
}

TEST_CASE("lr schedule is continuous at warmup and non-increasing after") {
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1000;
    s.batch_size = 8;
    s.warmup_steps = 100;
    s.peak_lr = 3e-3;
    const double before = lr_at_step(99, s);
    const double at = lr_at_step(100, s);
    CHECK(std::fabs(at - before) <= s.peak_lr / 100.0 * 1.01);
    double prev = at;
    for (std::size_t step = 101; step <= 1000; ++step) {
        const double lr = lr_at_step(step, s);
        CHECK(lr <= prev + 1e-18);
        prev = lr;
    }
}

TEST_CASE("schedule invariants are enforced") {
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 10;
    s.batch_size = 4;
    s.warmup_steps = 11;
    CHECK_THROWS_AS(s.validate(), ContractViolation);

    s.warmup_steps = 2;
    s.frozen_groups.clear();  // stage one must freeze the image tower
    CHECK_THROWS_AS(s.validate(), ContractViolation);

    TrainingSchedule two = TrainingSchedule::stage_two_defaults();
    two.total_steps = 10;
    two.batch_size = 4;
    two.warmup_steps = 2;
    two.frozen_groups = {"text_tower"};
    CHECK_THROWS_AS(two.validate(), ContractViolation);
}

TEST_CASE("adamw decay-only update shrinks the parameter multiplicatively") {
    ParamStore params;
    params.add("w", Tensor({2}, {1.0, -3.0}));
    OptimizerState state;
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1;
    s.batch_size = 1;
    s.weight_decay = 1e-3;
    const double lr = 0.5;
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor({2}, {0.0, 0.0}));
    adamw_step(params, grads, state, lr, s);
    CHECK(params.get("w")[0] == doctest::Approx(1.0 * (1.0 - lr * 1e-3)).epsilon(1e-15));
    CHECK(params.get("w")[1] == doctest::Approx(-3.0 * (1.0 - lr * 1e-3)).epsilon(1e-15));
}

TEST_CASE("adamw single-scalar step matches the hand computation") {
    ParamStore params;
    params.add("w", Tensor({1}, {0.0}));
    OptimizerState state;
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1;
    s.batch_size = 1;
    s.weight_decay = 0.0;
    const double lr = 1e-2;
    std::map<std::string, Tensor> grads;
    grads.emplace("w", Tensor({1}, {1.0}));
    adamw_step(params, grads, state, lr, s);
    // bias-corrected m-hat = 1, v-hat = 1: update is -lr / (1 + eps)
    const double expected = -lr * (1.0 / (1.0 + s.eps));
    CHECK(params.get("w")[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(state.step == 1);
}

TEST_CASE("parameters without gradients stay bitwise unchanged") {
    ParamStore params;
    params.add("image.stem.weight", Tensor({3}, {0.25, -0.5, 0.125}));
    params.add("text.token_embedding", Tensor({2}, {1.0, 2.0}));
    const Tensor frozen_before = params.get("image.stem.weight");
    OptimizerState state;
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1;
    s.batch_size = 1;
    std::map<std::string, Tensor> grads;
    grads.emplace("text.token_embedding", Tensor({2}, {0.1, -0.2}));
    adamw_step(params, grads, state, 1e-3, s);
    CHECK(bitwise_equal(params.get("image.stem.weight"), frozen_before));
    CHECK_FALSE(bitwise_equal(params.get("text.token_embedding"), Tensor({2}, {1.0, 2.0})));
}

TEST_CASE("adamw clamps the temperature after the update") {
    ParamStore params;
    params.add("logit_scale", Tensor({1}, {std::log(90.0)}));
    OptimizerState state;
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1;
    s.batch_size = 1;
    s.weight_decay = 0.0;
    std::map<std::string, Tensor> grads;
    grads.emplace("logit_scale", Tensor({1}, {-1.0}));  // pushes the scale up
    adamw_step(params, grads, state, 1.0, s);
    CHECK(std::exp(params.get("logit_scale")[0]) <= 100.0);
}

TEST_CASE("non-finite gradients abort the step naming the tensor") {
    ParamStore params;
    params.add("text.blocks.0.attn.wq", Tensor({2}, {1.0, 1.0}));
    OptimizerState state;
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.total_steps = 1;
    s.batch_size = 1;
    std::map<std::string, Tensor> grads;
    grads.emplace("text.blocks.0.attn.wq",
                  Tensor({2}, {std::numeric_limits<double>::infinity(), 0.0}));
    try {
        adamw_step(params, grads, state, 1e-3, s);
        FAIL("expected TrainingAborted");
    } catch (const TrainingAborted& e) {
        CHECK(std::string(e.what()).find("text.blocks.0.attn.wq") != std::string::npos);
    }
}

TEST_CASE("batch stream wraps epochs deterministically") {
    ts::SyntheticSpec spec;
    spec.pairs = 8;
    spec.image_size = 16;
    const auto records = ts::make_synthetic_corpus(spec);
    const ByteVocab vocab;
    AugmentConfig aug;
    aug.resolution = 16;
    BatchStream a(records, vocab, aug, 24, 5);
    BatchStream b(records, vocab, aug, 24, 5);
    for (int i = 0; i < 6; ++i) {
        const auto batch_a = a.next_batch(4);
        const auto batch_b = b.next_batch(4);
        REQUIRE(batch_a.size() == 4);
        for (std::size_t j = 0; j < 4; ++j) {
            CHECK(batch_a[j].tokens.ids == batch_b[j].tokens.ids);
            CHECK(std::memcmp(batch_a[j].image.rgb.data(), batch_b[j].image.rgb.data(),
                              batch_a[j].image.rgb.size() * 4) == 0);
        }
    }
    CHECK(a.epochs_completed() == 2);  // 24 items over a corpus of 8
}

TEST_CASE("stage one freezes the image tower while the text tower learns") {
    for (const bool conv : {false, true}) {
        CAPTURE(conv);
        const ModelConfig cfg = conv ? ts::tiny_conv_config() : ts::tiny_config();
        ts::SyntheticSpec spec;
        spec.pairs = 16;
        const auto records = ts::make_synthetic_corpus(spec);
        const std::string out = ts::fresh_temp_dir(conv ? "s1conv" : "s1patch");

        TwoTowerModel model = init_model(cfg, 3, InitSource::random());
        const TwoTowerModel before = model;
        Tensor bn_mean_before, bn_var_before;
        if (conv) {
            bn_mean_before = model.bn_state("image.bn1").running_mean;
            bn_var_before = model.bn_state("image.bn1").running_var;
        }

        const ByteVocab vocab{cfg.text.vocab_size};
        AugmentConfig aug;
        aug.resolution = cfg.image.resolution;
        BatchStream stream(records, vocab, aug, cfg.text.max_text_length, 3);
        OptimizerState opt;
        RunStageOptions options;
        options.out_dir = out;
        run_stage(model, stream, quick_stage_one(3, 4), opt, options);

        CHECK(tower_unchanged(before, model, "image_tower"));
        CHECK_FALSE(tower_unchanged(before, model, "text_tower"));
        if (conv) {
            CHECK(bitwise_equal(model.bn_state("image.bn1").running_mean, bn_mean_before));
            CHECK(bitwise_equal(model.bn_state("image.bn1").running_var, bn_var_before));
        }
    }
}

TEST_CASE("stage two resumes from the checkpoint and unfreezes the image tower") {
    const ModelConfig cfg = ts::tiny_config();
    ts::SyntheticSpec spec;
    spec.pairs = 16;
    const auto records = ts::make_synthetic_corpus(spec);
    const std::string out1 = ts::fresh_temp_dir("stage1");

    const ts::QuickTrainResult stage1 =
        ts::quick_train(cfg, records, quick_stage_one(3, 4), 11, out1);

    ResumedTrainer resumed = switch_stage(stage1.stage.checkpoint_dir, quick_stage_two(3, 4));

    // no-op resume: model equals checkpoint content
    for (std::size_t i = 0; i < resumed.model.params.count(); ++i) {
        CHECK(bitwise_equal(resumed.model.params.items()[i].value,
                            stage1.model.params.items()[i].value));
    }
    // newly unfrozen parameters start with zero moments; trained ones carry over
    const Tensor& image_m = resumed.optimizer.m.at("image.patch_projection");
    bool image_tower_zero = true;
    for (const auto& [name, t] : resumed.optimizer.m) {
        if (parameter_group(name) == "image_tower") {
            for (std::size_t i = 0; i < t.size(); ++i) {
                image_tower_zero = image_tower_zero && t[i] == 0.0;
            }
        }
    }
    CHECK(image_tower_zero);
    (void)image_m;
    double text_m_norm = 0.0;
    for (const double v : resumed.optimizer.m.at("text.token_embedding").data()) {
        text_m_norm += std::fabs(v);
    }
    CHECK(text_m_norm > 0.0);
    CHECK(resumed.optimizer.step == 0);
    CHECK(resumed.schedule.peak_lr == doctest::Approx(1e-3));

    const TwoTowerModel before = resumed.model;
    const ByteVocab vocab{cfg.text.vocab_size};
    AugmentConfig aug;
    aug.resolution = cfg.image.resolution;
    BatchStream stream(records, vocab, aug, cfg.text.max_text_length, 12);
    RunStageOptions options;
    options.out_dir = ts::fresh_temp_dir("stage2");
    run_stage(resumed.model, stream, resumed.schedule, resumed.optimizer, options);
    CHECK_FALSE(tower_unchanged(before, resumed.model, "image_tower"));
}

TEST_CASE("stage two defaults follow the reduced learning rate") {
    const TrainingSchedule s = TrainingSchedule::stage_two_defaults();
    CHECK(s.peak_lr == doctest::Approx(2e-5));
    CHECK(s.frozen_groups.empty());
}

TEST_CASE("identical seeds give bitwise identical loss sequences") {
    const ModelConfig cfg = ts::tiny_config();
    ts::SyntheticSpec spec;
    spec.pairs = 16;
    const auto records = ts::make_synthetic_corpus(spec);

    const ts::QuickTrainResult a =
        ts::quick_train(cfg, records, quick_stage_one(4, 4), 21, ts::fresh_temp_dir("da"));
    const ts::QuickTrainResult b =
        ts::quick_train(cfg, records, quick_stage_one(4, 4), 21, ts::fresh_temp_dir("db"));
    REQUIRE(a.stage.metrics.size() == b.stage.metrics.size());
    for (std::size_t i = 0; i < a.stage.metrics.size(); ++i) {
        CHECK(std::memcmp(&a.stage.metrics[i].loss, &b.stage.metrics[i].loss, 8) == 0);
    }
}

TEST_CASE("multi-worker gather inside the trainer stays deterministic") {
    const ModelConfig cfg = ts::tiny_config();
    ts::SyntheticSpec spec;
    spec.pairs = 16;
    const auto records = ts::make_synthetic_corpus(spec);
    const ts::QuickTrainResult a = ts::quick_train(cfg, records, quick_stage_one(3, 8), 31,
                                                   ts::fresh_temp_dir("w1"), 1);
    const ts::QuickTrainResult b = ts::quick_train(cfg, records, quick_stage_one(3, 8), 31,
                                                   ts::fresh_temp_dir("w4"), 4);
    // same rows, same loss regardless of worker sharding (patch tower has no
    // cross-item coupling)
    for (std::size_t i = 0; i < a.stage.metrics.size(); ++i) {
        CHECK(a.stage.metrics[i].loss ==
              doctest::Approx(b.stage.metrics[i].loss).epsilon(1e-12));
    }
}

TEST_CASE("a non-finite loss aborts the run") {
    const ModelConfig cfg = ts::tiny_config();
    ts::SyntheticSpec spec;
    spec.pairs = 8;
    const auto records = ts::make_synthetic_corpus(spec);
    TwoTowerModel model = init_model(cfg, 5, InitSource::random());
    model.params.get("text.token_embedding")[0] = std::numeric_limits<double>::quiet_NaN();

    const ByteVocab vocab{cfg.text.vocab_size};
    AugmentConfig aug;
    aug.resolution = cfg.image.resolution;
    BatchStream stream(records, vocab, aug, cfg.text.max_text_length, 5);
    OptimizerState opt;
    RunStageOptions options;
    options.out_dir = ts::fresh_temp_dir("abort");
    CHECK_THROWS_AS(run_stage(model, stream, quick_stage_one(3, 4), opt, options),
                    TrainingAborted);
    // the broken state must not have been checkpointed
    CHECK_FALSE(std::filesystem::exists(options.out_dir + "/checkpoint/manifest.txt"));
}

TEST_CASE("metrics log lines carry step, lr, loss and temperature") {
    const ModelConfig cfg = ts::tiny_config();
    ts::SyntheticSpec spec;
    spec.pairs = 8;
    const auto records = ts::make_synthetic_corpus(spec);
    const ts::QuickTrainResult r =
        ts::quick_train(cfg, records, quick_stage_one(2, 4), 41, ts::fresh_temp_dir("log"));
    std::ifstream in(r.stage.metrics_path);
    REQUIRE(in.good());
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        std::size_t step;
        double lr, loss, scale;
        REQUIRE(std::sscanf(line.c_str(), "%zu\t%lf\t%lf\t%lf", &step, &lr, &loss, &scale) ==
                4);
        CHECK(step == rows);
        CHECK(scale <= 100.0);
        ++rows;
    }
    CHECK(rows == 2);
}

TEST_CASE("training config file round trips") {
    TrainingRunConfig cfg;
    cfg.model = ts::tiny_conv_config();
    cfg.stage1.total_steps = 42;
    cfg.stage1.batch_size = 16;
    cfg.stage1.peak_lr = 3e-3;
    cfg.stage2.total_steps = 17;
    cfg.stage2.batch_size = 8;
    cfg.data_shards = {"a.dtsh", "b.dtsh"};
    cfg.num_workers = 2;
    cfg.checkpoint_interval = 10;

    KeyValueFile kv;
    training_config_to_kv(cfg, kv);
    const TrainingRunConfig back = training_config_from_kv(KeyValueFile::parse_string(kv.to_string()));
    CHECK(back.model.image.kind == EncoderKind::ConvNet);
    CHECK(back.stage1.total_steps == 42);
    CHECK(back.stage1.peak_lr == doctest::Approx(3e-3));
    CHECK(back.stage1.frozen_groups.count("image_tower") == 1);
    CHECK(back.stage2.total_steps == 17);
    CHECK(back.stage2.frozen_groups.empty());
    CHECK(back.data_shards == cfg.data_shards);
    CHECK(back.num_workers == 2);
    CHECK(back.checkpoint_interval == 10);
}

TEST_CASE("resnet adam profile switches the constants") {
    TrainingSchedule s = TrainingSchedule::stage_one_defaults();
    s.with_resnet_adam_profile();
    CHECK(s.beta2 == doctest::Approx(0.999));
    CHECK(s.eps == doctest::Approx(1e-8));
}
