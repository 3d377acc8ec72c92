#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "dualtower/encoder.hpp"

namespace dualtower {

enum class RetrievalDirection { TextToImage, ImageToText };

const char* direction_name(RetrievalDirection d);

struct RetrievalReport {
    RetrievalDirection direction = RetrievalDirection::TextToImage;
    std::map<std::size_t, double> recall_at;  // keys 1, 5, 10; fractions
    double mean_recall = 0.0;                 // mean of the three fractions
};

// query index -> set of correct candidate indices
using GoldMap = std::map<std::size_t, std::set<std::size_t>>;

// Ranks candidates by dot product, descending, ties broken by ascending
// index. Recall@K counts queries with at least one gold candidate in the top
// K. Direction picks which matrix supplies the queries.
RetrievalReport retrieval_eval(const Tensor& image_embs, const Tensor& text_embs,
                               const GoldMap& gold, RetrievalDirection direction);

// Half-up to one decimal, e.g. 63.0333 -> "63.0". Display only; exact
// fractions stay internal.
std::string display_percent(double percent);
std::string display_fraction(double fraction);

void write_retrieval_report(const RetrievalReport& report, const std::string& path);

// Lines "query_id<TAB>candidate_id"; repeated query ids accumulate golds.
GoldMap load_gold_pairs(const std::string& path);

// ---------------------------------------------------------------------------
// zero-shot classification

struct ClassPromptSet {
    std::string class_name;
    std::vector<std::string> templates;  // each contains exactly one "{}" slot
};

std::string fill_template(const std::string& tmpl, const std::string& label);

// Per class: encode every filled template, average the unit vectors,
// re-normalize. Returns [C, embed_dim] unit rows.
Tensor build_class_embeddings(const std::vector<ClassPromptSet>& classes,
                              const TwoTowerModel& model);

// argmax of dot products, ties to the lowest index
std::size_t zero_shot_classify(const Tensor& image_emb, const Tensor& class_embs);

std::vector<std::size_t> classify_images(const std::vector<Image>& images,
                                         const Tensor& class_embs,
                                         const TwoTowerModel& model);

double accuracy(const std::vector<std::size_t>& predictions,
                const std::vector<std::size_t>& labels);

// Unweighted mean of per-class accuracies; every class needs at least one
// example.
double mean_per_class_accuracy(const std::vector<std::size_t>& predictions,
                               const std::vector<std::size_t>& labels,
                               std::size_t class_count);

struct AblationReport {
    double accuracy_base = 0.0;
    double accuracy_variant = 0.0;
    double delta = 0.0;  // base minus variant
};

// Re-runs zero-shot classification with every class label replaced by its
// variant wording and reports both accuracies. Purely a harness; no claim
// about the sign of the difference.
AblationReport negation_ablation(const std::vector<Image>& images,
                                 const std::vector<std::size_t>& labels,
                                 const std::vector<ClassPromptSet>& classes,
                                 const std::map<std::string, std::string>& label_variants,
                                 const TwoTowerModel& model);

}  // namespace dualtower
