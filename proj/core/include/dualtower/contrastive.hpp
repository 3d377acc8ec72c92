#pragma once

#include <vector>

#include "dualtower/graph.hpp"

namespace dualtower {

// Paired unit-norm embedding rows: image row i corresponds to text row i.
struct BatchEmbeddings {
    Tensor image;  // [N, embed_dim]
    Tensor text;   // [N, embed_dim]

    std::size_t rows() const { return image.rank() == 2 ? image.dim(0) : 0; }
    // equal row counts, matching dims, every row unit-norm within 1e-8
    void validate() const;
};

// Symmetric InfoNCE over in-batch logits. logits = exp(clamped scale) * I T^T;
// the loss averages row-target and column-target cross-entropy, mean over the
// batch. Differentiable w.r.t. both embedding matrices and logit_scale.
Tensor contrastive_loss(Graph& g, const Tensor& image_rows, const Tensor& text_rows,
                        const Tensor& logit_scale);

// The logit-level half of the loss: mean cross-entropy against the diagonal,
// over rows and over columns, averaged.
Tensor symmetric_cross_entropy(Graph& g, const Tensor& logits);

// Convenience for callers without a live graph.
double contrastive_loss_value(const BatchEmbeddings& batch, double logit_scale_log);

// Upper-bounds the temperature: exp(result) <= 100, values already below the
// bound pass through untouched. Applied after every optimizer step and inside
// loss evaluation.
double clamp_temperature(double logit_scale_log);
Tensor clamp_temperature(const Tensor& logit_scale);

// Simulated all-gather: concatenation in worker order.
BatchEmbeddings gather_global_batch(const std::vector<BatchEmbeddings>& worker_shards);

}  // namespace dualtower
