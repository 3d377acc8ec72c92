#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dualtower/contrastive.hpp"
#include "dualtower/encoder.hpp"
#include "dualtower/rng.hpp"

using namespace dualtower;

namespace {

Tensor unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    Tensor m({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            m.at(i, j) = rng.normal();
            s += m.at(i, j) * m.at(i, j);
        }
        const double inv = 1.0 / std::sqrt(s);
        for (std::size_t j = 0; j < d; ++j) {
            m.at(i, j) *= inv;
        }
    }
    return m;
}

Tensor repeat_row(const std::vector<double>& row, std::size_t n) {
    Tensor m({n, row.size()});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < row.size(); ++j) {
            m.at(i, j) = row[j];
        }
    }
    return m;
}

}  // namespace

TEST_CASE("uniform logits give exactly ln N") {
    for (const std::size_t n : {2, 4, 8, 32}) {
        BatchEmbeddings batch;
        batch.image = repeat_row({1.0, 0.0, 0.0}, n);
        batch.text = repeat_row({0.0, 0.6, 0.8}, n);
        const double loss = contrastive_loss_value(batch, std::log(50.0));
        CHECK(std::fabs(loss - std::log(static_cast<double>(n))) <= 1e-9);
    }
}

TEST_CASE("orthonormal matched pairs at temperature 100 are almost free") {
    BatchEmbeddings batch;
    batch.image = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    batch.text = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    const double loss = contrastive_loss_value(batch, std::log(100.0));
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-40);  // ln(1 + e^-100)
}

TEST_CASE("N=2 hand instance matches an independent computation") {
    BatchEmbeddings batch;
    batch.image = Tensor({2, 2}, {1.0, 0.0, 0.0, 1.0});
    batch.text = Tensor({2, 2}, {0.6, 0.8, 0.8, -0.6});
    const double s = 10.0;
    // logits: [[6, 8], [8, -6]]
    const auto ce = [](double matched, double other) {
        const double mx = std::max(matched, other);
        return -(matched - (mx + std::log(std::exp(matched - mx) + std::exp(other - mx))));
    };
    const double rows = 0.5 * (ce(0.6 * s, 0.8 * s) + ce(-0.6 * s, 0.8 * s));
    const double cols = 0.5 * (ce(0.6 * s, 0.8 * s) + ce(-0.6 * s, 0.8 * s));
    const double expected = 0.5 * (rows + cols);
    const double loss = contrastive_loss_value(batch, std::log(s));
    CHECK(std::fabs(loss - expected) <= 1e-9);
}

TEST_CASE("loss is invariant under a simultaneous row permutation") {
    Rng rng(3);
    const std::size_t n = 6, d = 8;
    BatchEmbeddings batch;
    batch.image = unit_rows(n, d, rng);
    batch.text = unit_rows(n, d, rng);
    const double base = contrastive_loss_value(batch, std::log(10.0));

    const std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
    BatchEmbeddings shuffled;
    shuffled.image = Tensor({n, d});
    shuffled.text = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            shuffled.image.at(i, j) = batch.image.at(perm[i], j);
            shuffled.text.at(i, j) = batch.text.at(perm[i], j);
        }
    }
    const double permuted = contrastive_loss_value(shuffled, std::log(10.0));
    CHECK(std::fabs(base - permuted) <= 1e-12);
}

TEST_CASE("raising a matched logit with others fixed lowers the loss") {
    // 3x3 hand instances at the logit level
    const Tensor base({3, 3}, {2.0, 0.5, -1.0, 0.3, 1.2, 0.4, -0.2, 0.1, 0.8});
    for (std::size_t i = 0; i < 3; ++i) {
        Tensor bumped = base;
        bumped.at(i, i) += 0.5;
        Graph g1, g2;
        const double before = symmetric_cross_entropy(g1, g1.constant(base))[0];
        const double after = symmetric_cross_entropy(g2, g2.constant(bumped))[0];
        CHECK(after < before);
    }
}

TEST_CASE("gradient of the loss w.r.t. logit_scale vanishes at uniform logits") {
    Graph g;
    const Tensor image = g.constant(repeat_row({1.0, 0.0}, 4));
    const Tensor text = g.constant(repeat_row({0.0, 1.0}, 4));
    const Tensor scale = g.leaf(Tensor::scalar(std::log(5.0)));
    const Tensor loss = contrastive_loss(g, image, text, scale);
    const GradientMap grads = g.backward(loss);
    CHECK(std::fabs(grads.at(*scale.node_id)[0]) <= 1e-12);
}

TEST_CASE("loss differentiates through embeddings and scale") {
    Rng rng(9);
    Graph g;
    const Tensor image = g.leaf(unit_rows(3, 4, rng));
    const Tensor text = g.leaf(unit_rows(3, 4, rng));
    const Tensor scale = g.leaf(Tensor::scalar(std::log(10.0)));
    const Tensor loss = contrastive_loss(g, image, text, scale);
    const GradientMap grads = g.backward(loss);
    CHECK(grads.at(*image.node_id).size() == 12);
    CHECK(grads.at(*text.node_id).size() == 12);
    CHECK(grads.at(*scale.node_id).size() == 1);
}

TEST_CASE("temperature clamp bound and fixed points") {
    CHECK(std::exp(clamp_temperature(std::log(120.0))) <= 100.0);
    CHECK(std::exp(clamp_temperature(std::log(120.0))) > 99.999999);
    CHECK(clamp_temperature(std::log(50.0)) == std::log(50.0));
    const double at_bound = max_logit_scale_log();
    CHECK(clamp_temperature(at_bound) == at_bound);
    CHECK(std::exp(at_bound) <= 100.0);
}

TEST_CASE("contrastive loss contract checks") {
    Rng rng(5);
    BatchEmbeddings tiny;
    tiny.image = unit_rows(1, 4, rng);
    tiny.text = unit_rows(1, 4, rng);
    CHECK_THROWS_AS(contrastive_loss_value(tiny, 1.0), ContractViolation);

    BatchEmbeddings skewed;
    skewed.image = unit_rows(3, 4, rng);
    skewed.text = unit_rows(3, 4, rng);
    skewed.image.at(0, 0) *= 2.0;  // breaks unit norm
    CHECK_THROWS_AS(skewed.validate(), ContractViolation);
}

TEST_CASE("gather concatenates shards in worker order") {
    Rng rng(8);
    std::vector<BatchEmbeddings> shards(4);
    for (auto& s : shards) {
        s.image = unit_rows(8, 6, rng);
        s.text = unit_rows(8, 6, rng);
    }
    const BatchEmbeddings global = gather_global_batch(shards);
    CHECK(global.rows() == 32);
    for (std::size_t w = 0; w < 4; ++w) {
        for (std::size_t i = 0; i < 8; ++i) {
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(global.image.at(w * 8 + i, j) == shards[w].image.at(i, j));
                CHECK(global.text.at(w * 8 + i, j) == shards[w].text.at(i, j));
            }
        }
    }

    // single shard is the identity
    const BatchEmbeddings one = gather_global_batch({shards[0]});
    CHECK(one.rows() == 8);
    for (std::size_t i = 0; i < one.image.size(); ++i) {
        CHECK(one.image[i] == shards[0].image[i]);
    }

    // gather-then-loss equals loss on the concatenation
    BatchEmbeddings manual;
    manual.image = Tensor({32, 6});
    manual.text = Tensor({32, 6});
    for (std::size_t w = 0; w < 4; ++w) {
        std::copy(shards[w].image.data().begin(), shards[w].image.data().end(),
                  manual.image.data().begin() + w * 8 * 6);
        std::copy(shards[w].text.data().begin(), shards[w].text.data().end(),
                  manual.text.data().begin() + w * 8 * 6);
    }
    const double a = contrastive_loss_value(global, std::log(20.0));
    const double b = contrastive_loss_value(manual, std::log(20.0));
    CHECK(std::fabs(a - b) <= 1e-12);

    std::vector<BatchEmbeddings> mismatched = {shards[0]};
    BatchEmbeddings other;
    other.image = unit_rows(4, 5, rng);
    other.text = unit_rows(4, 5, rng);
    mismatched.push_back(other);
    CHECK_THROWS_AS(gather_global_batch(mismatched), ContractViolation);
}
