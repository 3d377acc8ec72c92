#include "dualtower/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dualtower/encoder.hpp"

namespace dualtower {

void BatchEmbeddings::validate() const {
    if (image.rank() != 2 || text.rank() != 2) {
        throw ContractViolation("batch embeddings must be [N, embed_dim] matrices");
    }
    if (image.dim(0) != text.dim(0) || image.dim(1) != text.dim(1)) {
        throw ContractViolation("batch embeddings: image " + shape_to_string(image.shape()) +
                                " vs text " + shape_to_string(text.shape()));
    }
    const auto check_rows = [](const Tensor& m, const char* side) {
        const std::size_t n = m.dim(0), d = m.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                s += m.at(i, j) * m.at(i, j);
            }
            if (std::fabs(std::sqrt(s) - 1.0) > 1e-8) {
                throw ContractViolation(std::string("batch embeddings: ") + side + " row " +
                                        std::to_string(i) + " is not unit norm");
            }
        }
    };
    check_rows(image, "image");
    check_rows(text, "text");
}

Tensor symmetric_cross_entropy(Graph& g, const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(0) != logits.dim(1)) {
        throw ContractViolation("symmetric_cross_entropy: logits must be square");
    }
    const std::size_t n = logits.dim(0);
    Tensor eye({n, n});
    for (std::size_t i = 0; i < n; ++i) {
        eye.at(i, i) = 1.0;
    }
    const Tensor diag_mask = g.constant(std::move(eye));

    // matched-pair log-probabilities along rows (image -> text) and columns
    const Tensor ce_rows =
        g.scale(g.sum_all(g.mul(g.log_softmax(logits), diag_mask)),
                -1.0 / static_cast<double>(n));
    const Tensor ce_cols =
        g.scale(g.sum_all(g.mul(g.log_softmax(g.transpose(logits)), diag_mask)),
                -1.0 / static_cast<double>(n));
    return g.scale(g.add(ce_rows, ce_cols), 0.5);
}

Tensor contrastive_loss(Graph& g, const Tensor& image_rows, const Tensor& text_rows,
                        const Tensor& logit_scale) {
    if (image_rows.rank() != 2 || text_rows.rank() != 2 ||
        image_rows.dim(0) != text_rows.dim(0) || image_rows.dim(1) != text_rows.dim(1)) {
        throw ContractViolation("contrastive_loss: embedding shapes must match");
    }
    const std::size_t n = image_rows.dim(0);
    if (n < 2) {
        throw ContractViolation("contrastive_loss: batch needs at least 2 pairs");
    }

    const Tensor scale = g.exp(g.clamp(logit_scale,
                                       -std::numeric_limits<double>::infinity(),
                                       max_logit_scale_log()));
    const Tensor logits = g.scale_by(g.matmul(image_rows, g.transpose(text_rows)), scale);
    return symmetric_cross_entropy(g, logits);
}

double contrastive_loss_value(const BatchEmbeddings& batch, double logit_scale_log) {
    batch.validate();
    Graph g;
    const Tensor image = g.constant(batch.image);
    const Tensor text = g.constant(batch.text);
    const Tensor scale = g.constant(Tensor::scalar(logit_scale_log));
    return contrastive_loss(g, image, text, scale)[0];
}

double clamp_temperature(double logit_scale_log) {
    return std::min(logit_scale_log, max_logit_scale_log());
}

Tensor clamp_temperature(const Tensor& logit_scale) {
    Tensor out = logit_scale;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = clamp_temperature(out[i]);
    }
    return out;
}

BatchEmbeddings gather_global_batch(const std::vector<BatchEmbeddings>& worker_shards) {
    if (worker_shards.empty()) {
        throw ContractViolation("gather_global_batch: no shards");
    }
    std::size_t total = 0;
    const std::size_t dim = worker_shards[0].image.rank() == 2
                                ? worker_shards[0].image.dim(1)
                                : 0;
    for (const BatchEmbeddings& s : worker_shards) {
        s.validate();
        if (s.image.dim(1) != dim) {
            throw ContractViolation("gather_global_batch: embed_dim mismatch across shards");
        }
        total += s.rows();
    }
    BatchEmbeddings out;
    out.image = Tensor({total, dim});
    out.text = Tensor({total, dim});
    std::size_t row = 0;
    for (const BatchEmbeddings& s : worker_shards) {
        std::copy(s.image.data().begin(), s.image.data().end(),
                  out.image.data().begin() + row * dim);
        std::copy(s.text.data().begin(), s.text.data().end(),
                  out.text.data().begin() + row * dim);
        row += s.rows();
    }
    return out;
}

}  // namespace dualtower
