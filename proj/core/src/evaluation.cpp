#include "dualtower/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace dualtower {

const char* direction_name(RetrievalDirection d) {
    return d == RetrievalDirection::TextToImage ? "text_to_image" : "image_to_text";
}

RetrievalReport retrieval_eval(const Tensor& image_embs, const Tensor& text_embs,
                               const GoldMap& gold, RetrievalDirection direction) {
    if (image_embs.rank() != 2 || text_embs.rank() != 2 ||
        image_embs.dim(1) != text_embs.dim(1)) {
        throw ContractViolation("retrieval_eval: embedding matrices must share embed_dim");
    }
    const Tensor& queries =
        direction == RetrievalDirection::TextToImage ? text_embs : image_embs;
    const Tensor& candidates =
        direction == RetrievalDirection::TextToImage ? image_embs : text_embs;
    const std::size_t nq = queries.dim(0);
    const std::size_t nc = candidates.dim(0);
    const std::size_t d = queries.dim(1);

    const std::size_t ks[3] = {1, 5, 10};
    std::size_t hits[3] = {0, 0, 0};

    std::vector<std::size_t> order(nc);
    std::vector<double> scores(nc);
    for (std::size_t q = 0; q < nq; ++q) {
        const auto git = gold.find(q);
        if (git == gold.end() || git->second.empty()) {
            throw ContractViolation("retrieval_eval: query " + std::to_string(q) +
                                    " has no gold candidates");
        }
        const double* qv = queries.data().data() + q * d;
        for (std::size_t c = 0; c < nc; ++c) {
            const double* cv = candidates.data().data() + c * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                s += qv[j] * cv[j];
            }
            scores[c] = s;
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) {
                return scores[a] > scores[b];
            }
            return a < b;
        });
        for (int k = 0; k < 3; ++k) {
            const std::size_t top = std::min(ks[k], nc);
            for (std::size_t r = 0; r < top; ++r) {
                if (git->second.count(order[r]) != 0) {
                    ++hits[k];
                    break;
                }
            }
        }
    }

    RetrievalReport report;
    report.direction = direction;
    double sum = 0.0;
    for (int k = 0; k < 3; ++k) {
        const double frac = static_cast<double>(hits[k]) / static_cast<double>(nq);
        report.recall_at[ks[k]] = frac;
        sum += frac;
    }
    report.mean_recall = sum / 3.0;
    return report;
}

std::string display_percent(double percent) {
    // half-up at the first decimal
    const double scaled = std::floor(percent * 10.0 + 0.5);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", scaled / 10.0);
    return buf;
}

std::string display_fraction(double fraction) { return display_percent(fraction * 100.0); }

void write_retrieval_report(const RetrievalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write report: " + path);
    }
    out << "direction\tR@1\tR@5\tR@10\tMR\n";
    out << direction_name(report.direction);
    for (const std::size_t k : {std::size_t{1}, std::size_t{5}, std::size_t{10}}) {
        out << '\t' << display_fraction(report.recall_at.at(k));
    }
    out << '\t' << display_fraction(report.mean_recall) << '\n';
    if (!out) {
        throw std::runtime_error("write failed: " + path);
    }
}

GoldMap load_gold_pairs(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open gold file: " + path);
    }
    GoldMap gold;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ss(line);
        std::size_t query = 0, candidate = 0;
        if (!(ss >> query >> candidate)) {
            throw std::runtime_error("bad gold line " + std::to_string(line_no) + " in " +
                                     path);
        }
        gold[query].insert(candidate);
    }
    return gold;
}

// ---------------------------------------------------------------------------
// zero-shot

std::string fill_template(const std::string& tmpl, const std::string& label) {
    const std::size_t first = tmpl.find("{}");
    if (first == std::string::npos || tmpl.find("{}", first + 1) != std::string::npos) {
        throw ContractViolation("prompt template must contain exactly one {} slot: '" +
                                tmpl + "'");
    }
    std::string out = tmpl;
    out.replace(first, 2, label);
    return out;
}

Tensor build_class_embeddings(const std::vector<ClassPromptSet>& classes,
                              const TwoTowerModel& model) {
    if (classes.empty()) {
        throw ContractViolation("build_class_embeddings: empty class list");
    }
    const ByteVocab vocab{model.config.text.vocab_size};
    const std::size_t dim = model.config.text.embed_dim;
    Tensor out({classes.size(), dim});
    for (std::size_t c = 0; c < classes.size(); ++c) {
        const ClassPromptSet& cls = classes[c];
        if (cls.templates.empty()) {
            throw ContractViolation("class '" + cls.class_name + "' has no prompt templates");
        }
        std::vector<double> mean(dim, 0.0);
        for (const std::string& tmpl : cls.templates) {
            const std::string prompt = fill_template(tmpl, cls.class_name);
            const TokenSequence seq =
                tokenize(prompt, vocab, model.config.text.max_text_length);
            const Tensor emb = encode_text(model, seq);
            for (std::size_t j = 0; j < dim; ++j) {
                mean[j] += emb[j];
            }
        }
        double norm2 = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            mean[j] /= static_cast<double>(cls.templates.size());
            norm2 += mean[j] * mean[j];
        }
        const double inv = 1.0 / std::sqrt(norm2 + 1e-12);
        for (std::size_t j = 0; j < dim; ++j) {
            out.at(c, j) = mean[j] * inv;
        }
    }
    return out;
}

std::size_t zero_shot_classify(const Tensor& image_emb, const Tensor& class_embs) {
    if (class_embs.rank() != 2 || class_embs.dim(0) == 0) {
        throw ContractViolation("zero_shot_classify: need at least one class row");
    }
    if (image_emb.size() != class_embs.dim(1)) {
        throw ContractViolation("zero_shot_classify: embedding dimension mismatch");
    }
    const std::size_t c = class_embs.dim(0);
    const std::size_t d = class_embs.dim(1);
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            s += image_emb[j] * class_embs.at(i, j);
        }
        if (s > best_score) {  // strict: ties keep the lowest index
            best_score = s;
            best = i;
        }
    }
    return best;
}

std::vector<std::size_t> classify_images(const std::vector<Image>& images,
                                         const Tensor& class_embs,
                                         const TwoTowerModel& model) {
    std::vector<std::size_t> preds;
    preds.reserve(images.size());
    for (const Image& img : images) {
        preds.push_back(zero_shot_classify(encode_image(model, img), class_embs));
    }
    return preds;
}

double accuracy(const std::vector<std::size_t>& predictions,
                const std::vector<std::size_t>& labels) {
    if (predictions.size() != labels.size() || predictions.empty()) {
        throw ContractViolation("accuracy: predictions and labels must match and be non-empty");
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        correct += predictions[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double mean_per_class_accuracy(const std::vector<std::size_t>& predictions,
                               const std::vector<std::size_t>& labels,
                               std::size_t class_count) {
    if (predictions.size() != labels.size() || class_count == 0) {
        throw ContractViolation("mean_per_class_accuracy: size mismatch");
    }
    std::vector<std::size_t> total(class_count, 0), correct(class_count, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= class_count) {
            throw ContractViolation("mean_per_class_accuracy: label out of range");
        }
        ++total[labels[i]];
        if (predictions[i] == labels[i]) {
            ++correct[labels[i]];
        }
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < class_count; ++c) {
        if (total[c] == 0) {
            throw ContractViolation("mean_per_class_accuracy: class " + std::to_string(c) +
                                    " has no examples");
        }
        sum += static_cast<double>(correct[c]) / static_cast<double>(total[c]);
    }
    return sum / static_cast<double>(class_count);
}

AblationReport negation_ablation(const std::vector<Image>& images,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<ClassPromptSet>& classes,
                                 const std::map<std::string, std::string>& label_variants,
                                 const TwoTowerModel& model) {
    if (images.size() != labels.size() || images.empty()) {
        throw ContractViolation("negation_ablation: images and labels must match");
    }
    if (label_variants.empty()) {
        throw ContractViolation("negation_ablation: empty variant map");
    }
    std::vector<ClassPromptSet> variant_classes = classes;
    for (ClassPromptSet& cls : variant_classes) {
        const auto it = label_variants.find(cls.class_name);
        if (it == label_variants.end()) {
            throw ContractViolation("negation_ablation: no variant for class '" +
                                    cls.class_name + "'");
        }
        cls.class_name = it->second;
    }

    AblationReport report;
    const Tensor base_embs = build_class_embeddings(classes, model);
    report.accuracy_base = accuracy(classify_images(images, base_embs, model), labels);
    const Tensor variant_embs = build_class_embeddings(variant_classes, model);
    report.accuracy_variant = accuracy(classify_images(images, variant_embs, model), labels);
    report.delta = report.accuracy_base - report.accuracy_variant;
    return report;
}

}  // namespace dualtower
