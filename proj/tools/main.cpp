// dualtower command-line driver: curate, pretrain, eval, zeroshot, bench.

#include <CLI11.hpp>

#include "dualtower/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"two-tower contrastive pretraining workbench"};
    app.require_subcommand(1);

    dualtower::cli::CurateOptions curate;
    CLI::App* c = app.add_subcommand("curate", "filter raw shards into a training shard");
    c->add_option("--input", curate.inputs, "input shard file (repeatable)")->required();
    c->add_option("--blacklist", curate.blacklist_path, "blacklist file, one pattern per line");
    c->add_option("--config", curate.config_path, "filter.* overrides (key=value file)");
    c->add_option("--out", curate.out_dir, "output directory")->required();

    dualtower::cli::PretrainOptions pretrain;
    CLI::App* p = app.add_subcommand("pretrain", "run one pretraining stage");
    p->add_option("--config", pretrain.config_path, "training config (key=value file)")
        ->required();
    p->add_option("--stage", pretrain.stage, "pretraining stage")
        ->check(CLI::Range(1, 2))
        ->required();
    p->add_option("--resume", pretrain.resume, "checkpoint bundle to resume from");
    p->add_option("--out", pretrain.out_dir, "output directory")->required();
    p->add_option("--seed", pretrain.seed, "master random seed");

    dualtower::cli::EvalOptions eval;
    CLI::App* e = app.add_subcommand("eval", "retrieval evaluation on a shard");
    e->add_option("--checkpoint", eval.checkpoint, "checkpoint bundle")->required();
    e->add_option("--data", eval.data_shard, "evaluation shard")->required();
    e->add_option("--gold", eval.gold_path, "gold pairs file (text_id<TAB>image_id)")
        ->required();
    e->add_option("--direction", eval.direction, "t2i, i2t or both");
    e->add_option("--out", eval.out_dir, "output directory")->required();

    dualtower::cli::ZeroShotOptions zeroshot;
    CLI::App* z = app.add_subcommand("zeroshot", "zero-shot classification with prompts");
    z->add_option("--checkpoint", zeroshot.checkpoint, "checkpoint bundle")->required();
    z->add_option("--data", zeroshot.data_shard, "labeled shard (source tag = class)")
        ->required();
    z->add_option("--classes", zeroshot.classes_path, "class names, one per line")
        ->required();
    z->add_option("--prompts", zeroshot.prompts_path, "prompt templates with a {} slot")
        ->required();
    z->add_option("--variants", zeroshot.variants_path,
                  "optional class<TAB>alternative label file for the ablation");
    z->add_option("--out", zeroshot.out_dir, "output directory")->required();

    dualtower::cli::BenchOptions bench;
    CLI::App* b = app.add_subcommand("bench", "inference latency measurement");
    b->add_option("--checkpoint", bench.checkpoint, "checkpoint bundle")->required();
    b->add_option("--component", bench.component, "vision or text");
    b->add_option("--iterations", bench.iterations, "timed iterations (default 100)");
    b->add_option("--batch-size", bench.batch_size, "batch per iteration (default 1)");
    b->add_option("--warmup", bench.warmup_iters, "untimed warmup iterations");
    b->add_option("--seed", bench.seed, "seed for the fixed random input");
    b->add_option("--out", bench.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : 2;  // usage problems exit 2
    }

    if (c->parsed()) {
        return dualtower::cli::cmd_curate(curate);
    }
    if (p->parsed()) {
        return dualtower::cli::cmd_pretrain(pretrain);
    }
    if (e->parsed()) {
        return dualtower::cli::cmd_eval(eval);
    }
    if (z->parsed()) {
        return dualtower::cli::cmd_zeroshot(zeroshot);
    }
    if (b->parsed()) {
        return dualtower::cli::cmd_bench(bench);
    }
    return 2;
}
