#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dualtower::cli {

// Exit codes shared by every subcommand: 0 success, 1 runtime failure,
// 2 usage error. Commands write only under their --out directory.

struct CurateOptions {
    std::vector<std::string> inputs;
    std::string blacklist_path;  // optional; missing file is an error when set
    std::string config_path;     // optional filter.* overrides
    std::string out_dir;
};

struct CurateSummary {
    std::size_t kept = 0;
    std::size_t rejected_low_score = 0;
    std::size_t rejected_blacklisted = 0;
    std::size_t rejected_too_short = 0;
    std::size_t rejected_too_long = 0;
    std::string output_shard;
};

CurateSummary run_curate(const CurateOptions& options);
int cmd_curate(const CurateOptions& options);

struct PretrainOptions {
    std::string config_path;
    int stage = 1;
    std::string resume;  // checkpoint bundle; required for stage 2
    std::string out_dir;
    std::uint64_t seed = 0;
};

int cmd_pretrain(const PretrainOptions& options);

struct EvalOptions {
    std::string checkpoint;
    std::string data_shard;
    std::string gold_path;           // lines "query_id<TAB>candidate_id" (t2i orientation)
    std::string direction = "both";  // t2i | i2t | both
    std::string out_dir;
};

int cmd_eval(const EvalOptions& options);

struct ZeroShotOptions {
    std::string checkpoint;
    std::string data_shard;     // record source tags carry the class names
    std::string classes_path;   // one class name per line
    std::string prompts_path;   // one template per line, each with a {} slot
    std::string variants_path;  // optional "class<TAB>alternative" pairs
    std::string out_dir;
};

int cmd_zeroshot(const ZeroShotOptions& options);

struct BenchOptions {
    std::string checkpoint;
    std::string component = "vision";  // vision | text
    std::size_t iterations = 100;
    std::size_t batch_size = 1;
    std::size_t warmup_iters = 10;
    std::uint64_t seed = 0;
    std::string out_dir;
};

struct LatencyReport {
    std::string component;
    std::size_t iterations = 0;
    std::size_t batch_size = 0;
    double mean_ms = 0.0;
    double std_ms = 0.0;
    std::vector<double> samples_ms;  // per-iteration, per-sample milliseconds
};

LatencyReport run_bench(const BenchOptions& options);
int cmd_bench(const BenchOptions& options);

}  // namespace dualtower::cli
