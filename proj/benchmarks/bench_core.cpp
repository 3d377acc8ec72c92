#include <benchmark/benchmark.h>

#include "dualtower/contrastive.hpp"
#include "dualtower/data.hpp"
#include "dualtower/encoder.hpp"
#include "dualtower/evaluation.hpp"
#include "dualtower/rng.hpp"
#include "dualtower/trainer.hpp"

using namespace dualtower;

namespace {

ModelConfig bench_config(std::size_t width) {
    ModelConfig cfg;
    cfg.text.layers = 2;
    cfg.text.width = width;
    cfg.text.heads = 4;
    cfg.text.max_text_length = 50;
    cfg.text.embed_dim = 32;
    cfg.image.kind = EncoderKind::PatchTransformer;
    cfg.image.layers = 2;
    cfg.image.width = width;
    cfg.image.heads = 4;
    cfg.image.patch_size = 8;
    cfg.image.resolution = 32;
    cfg.image.embed_dim = 32;
    return cfg;
}

Image random_image(std::size_t res, Rng& rng) {
    Image img = Image::filled(res, res, 0.0f);
    for (float& v : img.rgb) {
        v = static_cast<float>(rng.uniform());
    }
    return img;
}

void BM_EncodeText(benchmark::State& state) {
    const TwoTowerModel model =
        init_model(bench_config(static_cast<std::size_t>(state.range(0))), 1,
                   InitSource::random());
    const ByteVocab vocab;
    const TokenSequence seq =
        tokenize("a medium length caption used for throughput measurement", vocab, 50);
    for (auto _ : state) {
        benchmark::DoNotOptimize(encode_text(model, seq));
    }
}
BENCHMARK(BM_EncodeText)->Arg(64)->Arg(128);

void BM_EncodeImage(benchmark::State& state) {
    const TwoTowerModel model =
        init_model(bench_config(static_cast<std::size_t>(state.range(0))), 1,
                   InitSource::random());
    Rng rng(2);
    const Image img = random_image(32, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(encode_image(model, img));
    }
}
BENCHMARK(BM_EncodeImage)->Arg(64)->Arg(128);

void BM_ContrastiveLossBackward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    Tensor image({n, 32}), text({n, 32});
    for (Tensor* t : {&image, &text}) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < 32; ++j) {
                t->at(i, j) = rng.normal();
                s += t->at(i, j) * t->at(i, j);
            }
            for (std::size_t j = 0; j < 32; ++j) {
                t->at(i, j) /= std::sqrt(s);
            }
        }
    }
    for (auto _ : state) {
        Graph g;
        const Tensor li = g.leaf(image);
        const Tensor lt = g.leaf(text);
        const Tensor scale = g.leaf(Tensor::scalar(std::log(50.0)));
        const Tensor loss = contrastive_loss(g, li, lt, scale);
        benchmark::DoNotOptimize(g.backward(loss));
    }
}
BENCHMARK(BM_ContrastiveLossBackward)->Arg(32)->Arg(128);

void BM_AdamWStep(benchmark::State& state) {
    TwoTowerModel model = init_model(bench_config(64), 4, InitSource::random());
    TrainingSchedule schedule = TrainingSchedule::stage_two_defaults();
    schedule.total_steps = 1;
    schedule.batch_size = 1;
    Rng rng(5);
    std::map<std::string, Tensor> grads;
    for (const NamedTensor& p : model.params.items()) {
        Tensor g = Tensor::zeros_like(p.value);
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] = rng.normal(0.0, 1e-3);
        }
        grads.emplace(p.name, std::move(g));
    }
    OptimizerState opt;
    for (auto _ : state) {
        adamw_step(model.params, grads, opt, 1e-4, schedule);
    }
}
BENCHMARK(BM_AdamWStep);

void BM_AugmentImage(benchmark::State& state) {
    Rng fill(6);
    const Image img = random_image(48, fill);
    AugmentConfig cfg;
    cfg.resolution = 32;
    Rng rng(7);
    for (auto _ : state) {
        benchmark::DoNotOptimize(augment_image(img, cfg, rng));
    }
}
BENCHMARK(BM_AugmentImage);

void BM_RetrievalEval(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Rng rng(8);
    Tensor image({n, 32}), text({n, 32});
    for (Tensor* t : {&image, &text}) {
        for (std::size_t i = 0; i < t->size(); ++i) {
            (*t)[i] = rng.normal();
        }
    }
    GoldMap gold;
    for (std::size_t i = 0; i < n; ++i) {
        gold[i].insert(i);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            retrieval_eval(image, text, gold, RetrievalDirection::TextToImage));
    }
}
BENCHMARK(BM_RetrievalEval)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
