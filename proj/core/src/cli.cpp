#include "dualtower/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "dualtower/checkpoint.hpp"
#include "dualtower/contrastive.hpp"
#include "dualtower/evaluation.hpp"
#include "dualtower/trainer.hpp"

namespace dualtower::cli {

namespace fs = std::filesystem;

namespace {

void require_out_dir(const std::string& out_dir) {
    if (out_dir.empty()) {
        throw std::runtime_error("an --out directory is required");
    }
    fs::create_directories(out_dir);
}

int fail(const char* command, const std::exception& e) {
    std::fprintf(stderr, "%s: %s\n", command, e.what());
    return 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// curate

CurateSummary run_curate(const CurateOptions& options) {
    require_out_dir(options.out_dir);
    if (options.inputs.empty()) {
        throw std::runtime_error("curate needs at least one --input shard");
    }
    FilterConfig filter;
    if (!options.config_path.empty()) {
        const KeyValueFile kv = KeyValueFile::parse_file(options.config_path);
        filter.min_chars = kv.get_u64_or("filter.min_chars", filter.min_chars);
        filter.max_chars = kv.get_u64_or("filter.max_chars", filter.max_chars);
        filter.score_threshold =
            kv.get_double_or("filter.score_threshold", filter.score_threshold);
    }
    if (!options.blacklist_path.empty()) {
        filter.blacklist = load_blacklist(options.blacklist_path);
    }

    CurateSummary summary;
    std::vector<ImageTextRecord> kept;
    for (const std::string& input : options.inputs) {
        for (ImageTextRecord& record : read_shard(input)) {
            const auto verdict = filter_record(record, filter);
            if (!verdict.has_value()) {
                kept.push_back(std::move(record));
                continue;
            }
            switch (*verdict) {
                case RejectReason::LowScore:
                    ++summary.rejected_low_score;
                    break;
                case RejectReason::Blacklisted:
                    ++summary.rejected_blacklisted;
                    break;
                case RejectReason::TooShort:
                    ++summary.rejected_too_short;
                    break;
                case RejectReason::TooLong:
                    ++summary.rejected_too_long;
                    break;
            }
        }
    }
    summary.kept = kept.size();
    summary.output_shard = options.out_dir + "/curated.dtsh";
    write_shard(kept, summary.output_shard);
    return summary;
}

int cmd_curate(const CurateOptions& options) {
    try {
        const CurateSummary s = run_curate(options);
        std::printf("kept=%zu\n", s.kept);
        std::printf("rejected.LowScore=%zu\n", s.rejected_low_score);
        std::printf("rejected.Blacklisted=%zu\n", s.rejected_blacklisted);
        std::printf("rejected.TooShort=%zu\n", s.rejected_too_short);
        std::printf("rejected.TooLong=%zu\n", s.rejected_too_long);
        std::printf("output=%s\n", s.output_shard.c_str());
        return 0;
    } catch (const std::exception& e) {
        return fail("curate", e);
    }
}

// ---------------------------------------------------------------------------
// pretrain

int cmd_pretrain(const PretrainOptions& options) {
    if (options.stage != 1 && options.stage != 2) {
        std::fprintf(stderr, "pretrain: --stage must be 1 or 2\n");
        return 2;
    }
    if (options.stage == 2 && options.resume.empty()) {
        std::fprintf(stderr, "pretrain: --stage 2 requires --resume <stage-1 checkpoint>\n");
        return 2;
    }
    try {
        require_out_dir(options.out_dir);
        const TrainingRunConfig cfg = load_training_config(options.config_path);
        if (cfg.data_shards.empty()) {
            throw std::runtime_error("config names no data.shard entries");
        }
        std::vector<ImageTextRecord> records;
        for (const std::string& shard : cfg.data_shards) {
            for (ImageTextRecord& r : read_shard(shard)) {
                records.push_back(std::move(r));
            }
        }

        TwoTowerModel model;
        OptimizerState optimizer;
        TrainingSchedule schedule;
        if (options.stage == 1) {
            schedule = cfg.stage1;
            model = options.resume.empty()
                        ? init_model(cfg.model, options.seed, InitSource::random())
                        : load_checkpoint_model(options.resume);
        } else {
            ResumedTrainer resumed = switch_stage(options.resume, cfg.stage2);
            model = std::move(resumed.model);
            optimizer = std::move(resumed.optimizer);
            schedule = std::move(resumed.schedule);
        }

        const ByteVocab vocab{model.config.text.vocab_size};
        AugmentConfig augment;
        augment.resolution = model.config.image.resolution;
        BatchStream stream(std::move(records), vocab, augment,
                           model.config.text.max_text_length, options.seed);

        RunStageOptions run;
        run.out_dir = options.out_dir;
        run.checkpoint_interval = cfg.checkpoint_interval;
        run.num_workers = cfg.num_workers;
        const RunStageResult result = run_stage(model, stream, schedule, optimizer, run);

        std::printf("checkpoint=%s\n", result.checkpoint_dir.c_str());
        std::printf("metrics=%s\n", result.metrics_path.c_str());
        std::printf("steps=%zu epochs=%zu final_loss=%.6f\n", result.metrics.size(),
                    result.epochs_completed,
                    result.metrics.empty() ? 0.0 : result.metrics.back().loss);
        return 0;
    } catch (const std::exception& e) {
        return fail("pretrain", e);
    }
}

// ---------------------------------------------------------------------------
// eval

namespace {

struct CorpusEmbeddings {
    Tensor image;  // [N, embed_dim]
    Tensor text;   // [N, embed_dim]
};

CorpusEmbeddings embed_corpus(const TwoTowerModel& model,
                              const std::vector<ImageTextRecord>& records) {
    if (records.empty()) {
        throw std::runtime_error("evaluation shard is empty");
    }
    const ByteVocab vocab{model.config.text.vocab_size};
    const std::size_t dim = model.config.text.embed_dim;
    const std::size_t res = model.config.image.resolution;
    CorpusEmbeddings out;
    out.image = Tensor({records.size(), dim});
    out.text = Tensor({records.size(), dim});
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Image resized = records[i].image.height == res && records[i].image.width == res
                                  ? records[i].image
                                  : resize_bilinear(records[i].image, res, res);
        const Tensor ie = encode_image(model, resized);
        const Tensor te = encode_text(
            model, tokenize(records[i].caption, vocab, model.config.text.max_text_length));
        std::copy(ie.data().begin(), ie.data().end(), out.image.data().begin() + i * dim);
        std::copy(te.data().begin(), te.data().end(), out.text.data().begin() + i * dim);
    }
    return out;
}

GoldMap invert_gold(const GoldMap& gold) {
    GoldMap inverse;
    for (const auto& [query, candidates] : gold) {
        for (const std::size_t c : candidates) {
            inverse[c].insert(query);
        }
    }
    return inverse;
}

void require_gold_coverage(const GoldMap& gold, std::size_t n_queries, const char* what) {
    std::string missing;
    for (std::size_t q = 0; q < n_queries; ++q) {
        const auto it = gold.find(q);
        if (it == gold.end() || it->second.empty()) {
            if (!missing.empty()) {
                missing += ", ";
            }
            missing += std::to_string(q);
        }
    }
    if (!missing.empty()) {
        throw std::runtime_error(std::string("gold file names no candidates for ") + what +
                                 " ids: " + missing);
    }
}

}  // namespace

int cmd_eval(const EvalOptions& options) {
    try {
        require_out_dir(options.out_dir);
        if (options.direction != "t2i" && options.direction != "i2t" &&
            options.direction != "both") {
            throw std::runtime_error("--direction must be t2i, i2t or both");
        }
        const TwoTowerModel model = load_checkpoint_model(options.checkpoint);
        const std::vector<ImageTextRecord> records = read_shard(options.data_shard);
        const GoldMap gold_t2i = load_gold_pairs(options.gold_path);
        const CorpusEmbeddings embs = embed_corpus(model, records);

        if (options.direction == "t2i" || options.direction == "both") {
            require_gold_coverage(gold_t2i, records.size(), "text query");
            const RetrievalReport report = retrieval_eval(
                embs.image, embs.text, gold_t2i, RetrievalDirection::TextToImage);
            const std::string path = options.out_dir + "/retrieval_t2i.tsv";
            write_retrieval_report(report, path);
            std::printf("t2i\tMR=%s\t%s\n", display_fraction(report.mean_recall).c_str(),
                        path.c_str());
        }
        if (options.direction == "i2t" || options.direction == "both") {
            const GoldMap gold_i2t = invert_gold(gold_t2i);
            require_gold_coverage(gold_i2t, records.size(), "image query");
            const RetrievalReport report = retrieval_eval(
                embs.image, embs.text, gold_i2t, RetrievalDirection::ImageToText);
            const std::string path = options.out_dir + "/retrieval_i2t.tsv";
            write_retrieval_report(report, path);
            std::printf("i2t\tMR=%s\t%s\n", display_fraction(report.mean_recall).c_str(),
                        path.c_str());
        }
        return 0;
    } catch (const std::exception& e) {
        return fail("eval", e);
    }
}

// ---------------------------------------------------------------------------
// zeroshot

namespace {

std::vector<std::string> read_lines(const std::string& path, const char* what) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error(std::string("cannot open ") + what + ": " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        lines.push_back(line);
    }
    return lines;
}

std::map<std::string, std::string> read_variant_map(const std::string& path) {
    std::map<std::string, std::string> variants;
    for (const std::string& line : read_lines(path, "variants file")) {
        const std::size_t tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("variants line has no tab: '" + line + "'");
        }
        variants[line.substr(0, tab)] = line.substr(tab + 1);
    }
    return variants;
}

}  // namespace

int cmd_zeroshot(const ZeroShotOptions& options) {
    try {
        require_out_dir(options.out_dir);
        const TwoTowerModel model = load_checkpoint_model(options.checkpoint);
        const std::vector<std::string> class_names =
            read_lines(options.classes_path, "classes file");
        const std::vector<std::string> templates =
            read_lines(options.prompts_path, "prompts file");
        if (class_names.empty() || templates.empty()) {
            throw std::runtime_error("classes and prompts files must be non-empty");
        }

        std::vector<ClassPromptSet> classes;
        std::map<std::string, std::size_t> class_index;
        for (const std::string& name : class_names) {
            class_index.emplace(name, classes.size());
            classes.push_back({name, templates});
        }

        const std::vector<ImageTextRecord> records = read_shard(options.data_shard);
        const std::size_t res = model.config.image.resolution;
        std::vector<Image> images;
        std::vector<std::size_t> labels;
        for (const ImageTextRecord& r : records) {
            const auto it = class_index.find(r.source);
            if (it == class_index.end()) {
                throw std::runtime_error("record source tag '" + r.source +
                                         "' is not a known class");
            }
            labels.push_back(it->second);
            images.push_back(r.image.height == res && r.image.width == res
                                 ? r.image
                                 : resize_bilinear(r.image, res, res));
        }
        if (images.empty()) {
            throw std::runtime_error("zero-shot shard is empty");
        }

        const Tensor class_embs = build_class_embeddings(classes, model);
        const std::vector<std::size_t> preds = classify_images(images, class_embs, model);
        const double acc = accuracy(preds, labels);

        std::vector<std::size_t> counts(classes.size(), 0);
        for (const std::size_t l : labels) {
            ++counts[l];
        }
        const bool every_class_covered =
            std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });

        const std::string report_path = options.out_dir + "/zeroshot.tsv";
        {
            std::ofstream out(report_path, std::ios::binary);
            if (!out) {
                throw std::runtime_error("cannot write report: " + report_path);
            }
            out << "metric\tvalue\n";
            out << "accuracy\t" << display_fraction(acc) << '\n';
            if (every_class_covered) {
                out << "mean_per_class\t"
                    << display_fraction(
                           mean_per_class_accuracy(preds, labels, classes.size()))
                    << '\n';
            }
        }
        std::printf("accuracy=%s classes=%zu images=%zu report=%s\n",
                    display_fraction(acc).c_str(), classes.size(), images.size(),
                    report_path.c_str());

        if (!options.variants_path.empty()) {
            const auto variants = read_variant_map(options.variants_path);
            const AblationReport ab =
                negation_ablation(images, labels, classes, variants, model);
            const std::string ab_path = options.out_dir + "/ablation.tsv";
            std::ofstream out(ab_path, std::ios::binary);
            if (!out) {
                throw std::runtime_error("cannot write report: " + ab_path);
            }
            out << "metric\tvalue\n";
            out << "accuracy_base\t" << display_fraction(ab.accuracy_base) << '\n';
            out << "accuracy_variant\t" << display_fraction(ab.accuracy_variant) << '\n';
            out << "delta\t" << display_fraction(ab.delta) << '\n';
            std::printf("ablation base=%s variant=%s delta=%s report=%s\n",
                        display_fraction(ab.accuracy_base).c_str(),
                        display_fraction(ab.accuracy_variant).c_str(),
                        display_fraction(ab.delta).c_str(), ab_path.c_str());
        }
        return 0;
    } catch (const std::exception& e) {
        return fail("zeroshot", e);
    }
}

// ---------------------------------------------------------------------------
// bench

LatencyReport run_bench(const BenchOptions& options) {
    if (options.component != "vision" && options.component != "text") {
        throw std::runtime_error("--component must be vision or text");
    }
    if (options.iterations == 0 || options.batch_size == 0) {
        throw std::runtime_error("iterations and batch size must be positive");
    }
    const TwoTowerModel model = load_checkpoint_model(options.checkpoint);
    Rng rng = Rng(options.seed).derive("bench-input");

    // fixed random inputs, generated once and reused across iterations
    std::vector<Image> images;
    std::vector<TokenSequence> texts;
    if (options.component == "vision") {
        const std::size_t res = model.config.image.resolution;
        for (std::size_t i = 0; i < options.batch_size; ++i) {
            Image img = Image::filled(res, res, 0.0f);
            for (float& v : img.rgb) {
                v = static_cast<float>(rng.uniform());
            }
            images.push_back(std::move(img));
        }
    } else {
        const ByteVocab vocab{model.config.text.vocab_size};
        const std::size_t len = model.config.text.max_text_length;
        for (std::size_t i = 0; i < options.batch_size; ++i) {
            std::string bytes(len - 2, 'a');
            for (char& c : bytes) {
                c = static_cast<char>('a' + rng.index(26));
            }
            texts.push_back(tokenize(bytes, vocab, len));
        }
    }

    const auto run_once = [&] {
        if (options.component == "vision") {
            for (const Image& img : images) {
                encode_image(model, img);
            }
        } else {
            for (const TokenSequence& seq : texts) {
                encode_text(model, seq);
            }
        }
    };

    for (std::size_t i = 0; i < options.warmup_iters; ++i) {
        run_once();
    }

    LatencyReport report;
    report.component = options.component;
    report.iterations = options.iterations;
    report.batch_size = options.batch_size;
    report.samples_ms.reserve(options.iterations);
    using clock = std::chrono::steady_clock;
    for (std::size_t i = 0; i < options.iterations; ++i) {
        const auto t0 = clock::now();
        run_once();
        const auto t1 = clock::now();
        const double ms =
            std::chrono::duration<double, std::milli>(t1 - t0).count() /
            static_cast<double>(options.batch_size);
        report.samples_ms.push_back(ms);
    }

    double sum = 0.0;
    for (const double s : report.samples_ms) {
        sum += s;
    }
    report.mean_ms = sum / static_cast<double>(report.samples_ms.size());
    double var = 0.0;
    for (const double s : report.samples_ms) {
        var += (s - report.mean_ms) * (s - report.mean_ms);
    }
    // population std: a single sample reports 0
    report.std_ms = std::sqrt(var / static_cast<double>(report.samples_ms.size()));
    return report;
}

int cmd_bench(const BenchOptions& options) {
    try {
        require_out_dir(options.out_dir);
        const LatencyReport report = run_bench(options);
        const std::string path = options.out_dir + "/bench_" + report.component + ".tsv";
        std::ofstream out(path, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write report: " + path);
        }
        char line[160];
        out << "component\titerations\tbatch_size\tmean_ms\tstd_ms\n";
        std::snprintf(line, sizeof(line), "%s\t%zu\t%zu\t%.4f\t%.4f\n",
                      report.component.c_str(), report.iterations, report.batch_size,
                      report.mean_ms, report.std_ms);
        out << line;
        out << "iteration\tms_per_sample\n";
        for (std::size_t i = 0; i < report.samples_ms.size(); ++i) {
            std::snprintf(line, sizeof(line), "%zu\t%.4f\n", i, report.samples_ms[i]);
            out << line;
        }
        std::printf("%s: mean=%.4f ms std=%.4f ms over %zu iterations (batch %zu)\n",
                    report.component.c_str(), report.mean_ms, report.std_ms,
                    report.iterations, report.batch_size);
        return 0;
    } catch (const std::exception& e) {
        return fail("bench", e);
    }
}

}  // namespace dualtower::cli
