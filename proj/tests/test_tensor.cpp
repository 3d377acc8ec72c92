#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "dualtower/gradcheck.hpp"
#include "dualtower/graph.hpp"
#include "dualtower/rng.hpp"
#include "dualtower/tensor.hpp"
#include "support/gradtasks.hpp"
#include "support/synthetic.hpp"

using namespace dualtower;
namespace ts = dualtower::testsupport;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3});
    CHECK(t.size() == 6);
    CHECK_THROWS_AS(Tensor({2, 0}), ContractViolation);
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ContractViolation);
    const Tensor s = Tensor::scalar(4.5);
    CHECK(s.is_scalar());
    CHECK(s[0] == 4.5);
}

TEST_CASE("tensor binary format round trip") {
    const std::string dir = ts::fresh_temp_dir("tensorio");
    Rng rng(7);
    Tensor t({3, 4, 2});
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = rng.normal();
    }
    write_tensor_file(dir + "/a.dtw", t);
    const Tensor back = read_tensor_file(dir + "/a.dtw");
    CHECK(bitwise_equal(t, back));

    // f32 storage mode loses precision but keeps shape
    write_tensor_file(dir + "/b.dtw", t, TensorDtype::F32);
    const Tensor narrow = read_tensor_file(dir + "/b.dtw");
    CHECK(narrow.shape() == t.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(narrow[i] == doctest::Approx(t[i]).epsilon(1e-6));
    }
}

TEST_CASE("tensor file corruption is detected") {
    const std::string dir = ts::fresh_temp_dir("tensorbad");
    Tensor t({4}, {1, 2, 3, 4});
    const std::string path = dir + "/t.dtw";
    write_tensor_file(path, t);

    // truncate
    {
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f != nullptr);
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fclose(f);
        std::filesystem::resize_file(path, static_cast<std::uintmax_t>(size - 9));
    }
    CHECK_THROWS_AS(read_tensor_file(path), CorruptFile);

    // bad magic
    {
        write_tensor_file(path, t);
        std::FILE* f = std::fopen(path.c_str(), "rb+");
        REQUIRE(f != nullptr);
        std::fputc('X', f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(read_tensor_file(path), CorruptFile);
}

TEST_CASE("backward of sum is ones") {
    Graph g;
    const Tensor x = g.leaf(Tensor({3}, {2.0, -1.0, 7.0}));
    const Tensor loss = g.sum_all(x);
    const GradientMap grads = g.backward(loss);
    const Tensor& dx = grads.at(*x.node_id);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(dx[i] == 1.0);
    }
}

TEST_CASE("backward of sum of squares is 2x") {
    Graph g;
    const Tensor x = g.leaf(Tensor({3}, {1.0, 2.0, 3.0}));
    const Tensor loss = g.sum_all(g.mul(x, x));
    const GradientMap grads = g.backward(loss);
    const Tensor& dx = grads.at(*x.node_id);
    CHECK(dx[0] == doctest::Approx(2.0));
    CHECK(dx[1] == doctest::Approx(4.0));
    CHECK(dx[2] == doctest::Approx(6.0));
}

TEST_CASE("backward contract checks") {
    Graph g;
    const Tensor x = g.leaf(Tensor({2}, {1.0, 2.0}));
    const Tensor y = g.mul(x, x);
    CHECK_THROWS_AS(g.backward(y), ContractViolation);  // non-scalar loss
    const Tensor loss = g.sum_all(y);
    g.backward(loss);
    CHECK_THROWS_AS(g.backward(loss), ContractViolation);  // consumed
    CHECK_THROWS_AS(g.sum_all(y), ContractViolation);      // ops after backward
}

TEST_CASE("disconnected leaf receives a zero gradient") {
    Graph g;
    const Tensor x = g.leaf(Tensor({2}, {1.0, 2.0}));
    const Tensor unused = g.leaf(Tensor({3}, {5.0, 5.0, 5.0}));
    const GradientMap grads = g.backward(g.sum_all(x));
    const Tensor& du = grads.at(*unused.node_id);
    CHECK(du.shape() == unused.shape());
    for (std::size_t i = 0; i < du.size(); ++i) {
        CHECK(du[i] == 0.0);
    }
}

TEST_CASE("random five-op graph matches finite differences") {
    // matmul -> gelu -> layer_norm -> l2_normalize -> weighted mean
    Rng rng(42);
    GradCheckTask task;
    Tensor a({3, 4}), b({4, 4}), gamma({4}), beta({4});
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = rng.normal();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
    for (std::size_t i = 0; i < 4; ++i) {
        gamma[i] = 1.0 + 0.3 * rng.normal();
        beta[i] = 0.3 * rng.normal();
    }
    task.params = {{"a", a}, {"b", b}, {"gamma", gamma}, {"beta", beta}};
    Tensor w({3, 4});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    task.build = [w](Graph& g, const std::vector<Tensor>& leaves) {
        Tensor h = g.gelu(g.matmul(leaves[0], leaves[1]));
        h = g.layer_norm(h, leaves[2], leaves[3]);
        h = g.l2_normalize(h);
        return g.mean_all(g.mul(h, g.constant(w)));
    };
    const GradCheckReport report = check_gradients(task, 1e-5, 1e-4);
    INFO(report.to_string());
    CHECK(report.all_passed());
}

TEST_CASE("every op passes finite differences over seeds") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (const GradCheckTask& task : ts::make_op_tasks(seed)) {
            const GradCheckReport report = check_gradients(task, 1e-5, 1e-4);
            INFO("seed ", seed, "\n", report.to_string());
            CHECK(report.all_passed());
        }
    }
}

TEST_CASE("softmax rows are nonnegative and sum to one") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x({4, 7});
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.uniform(-30.0, 30.0);
        }
        Graph g;
        const Tensor y = g.softmax(g.constant(x));
        for (std::size_t r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 7; ++c) {
                CHECK(y.at(r, c) >= 0.0);
                sum += y.at(r, c);
            }
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("l2_normalize produces unit rows") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x({3, 6});
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = rng.normal(0.0, 2.0);
        }
        Graph g;
        const Tensor y = g.l2_normalize(g.constant(x));
        for (std::size_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < 6; ++c) {
                sum += y.at(r, c) * y.at(r, c);
            }
            CHECK(std::fabs(std::sqrt(sum) - 1.0) <= 1e-10);
        }
    }
}

TEST_CASE("batch norm against a scalar oracle on a hand-built 2-channel batch") {
    Tensor x({4, 2}, {1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0});
    BatchNormState state = BatchNormState::identity(2);
    const Tensor y = batch_norm_forward(x, state, /*training=*/true);

    const double eps = 1e-5;
    for (std::size_t j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            mean += x.at(i, j);
        }
        mean /= 4.0;
        double var = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
            var += (x.at(i, j) - mean) * (x.at(i, j) - mean);
        }
        var /= 4.0;
        for (std::size_t i = 0; i < 4; ++i) {
            const double expected = (x.at(i, j) - mean) / std::sqrt(var + eps);
            CHECK(y.at(i, j) == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("batch norm pulls running statistics toward the batch") {
    // standardized batch: per-channel mean 0, biased variance 1
    Tensor x({4, 2}, {-1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0});
    BatchNormState state = BatchNormState::identity(2);
    state.running_mean = Tensor({2}, {0.5, -0.5});
    state.running_var = Tensor({2}, {2.0, 3.0});
    const Tensor y = batch_norm_forward(x, state, true);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));  // already normalized
    }
    for (std::size_t j = 0; j < 2; ++j) {
        CHECK(std::fabs(state.running_mean[j]) < 0.5);       // moved toward 0
        CHECK(std::fabs(state.running_var[j] - 1.0) < 1.9);  // moved toward 1
    }
}

TEST_CASE("batch norm with update_stats=false leaves running stats bitwise unchanged") {
    Rng rng(3);
    Tensor x({8, 3});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.normal(2.0, 3.0);
    }
    BatchNormState state = BatchNormState::identity(3);
    state.running_mean = Tensor({3}, {0.1, 0.2, 0.3});
    state.running_var = Tensor({3}, {1.5, 0.7, 2.2});
    state.update_stats = false;
    const Tensor mean_before = state.running_mean;
    const Tensor var_before = state.running_var;
    batch_norm_forward(x, state, true);
    CHECK(bitwise_equal(state.running_mean, mean_before));
    CHECK(bitwise_equal(state.running_var, var_before));
}

TEST_CASE("batch norm eval mode normalizes with running statistics") {
    Tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0});
    BatchNormState state;
    state.running_mean = Tensor({2}, {1.0, 2.0});
    state.running_var = Tensor({2}, {4.0, 9.0});
    const Tensor y = batch_norm_forward(x, state, false);
    CHECK(y.at(0, 0) == doctest::Approx(0.0));
    CHECK(y.at(1, 0) == doctest::Approx(2.0 / std::sqrt(4.0 + 1e-5)));
    CHECK(y.at(1, 1) == doctest::Approx(2.0 / std::sqrt(9.0 + 1e-5)));
}

TEST_CASE("batch norm rejects channel mismatch") {
    Tensor x({4, 3});
    BatchNormState state = BatchNormState::identity(2);
    CHECK_THROWS_AS(batch_norm_forward(x, state, true), ContractViolation);
}

TEST_CASE("check_gradients passes a linear layer and flags a corrupted rule") {
    Rng rng(5);
    GradCheckTask linear;
    Tensor w({4, 3}), b({3}), x({2, 4});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.normal();
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    linear.params = {{"w", w}, {"b", b}};
    linear.build = [x](Graph& g, const std::vector<Tensor>& leaves) {
        return g.mean_all(g.rowwise_shift(g.matmul(g.constant(x), leaves[0]), leaves[1]));
    };
    CHECK(check_gradients(linear, 1e-5, 1e-4).all_passed());

    // negative control: a deliberately wrong derivative must be flagged
    GradCheckTask corrupted;
    corrupted.params = {{"x", Tensor({3}, {0.7, -1.2, 2.1})}};
    corrupted.build = [](Graph& g, const std::vector<Tensor>& leaves) {
        return g.sum_all(g.map_unary(
            leaves[0], [](double v) { return v * v; },
            [](double v) { return 3.0 * v; }));  // should be 2v
    };
    const GradCheckReport report = check_gradients(corrupted, 1e-5, 1e-4);
    CHECK_FALSE(report.all_passed());
}

TEST_CASE("check_gradients passes the full text tower at width 16") {
    ModelConfig cfg;
    cfg.text.kind = EncoderKind::TextTransformer;
    cfg.text.layers = 1;
    cfg.text.width = 16;
    cfg.text.heads = 2;
    cfg.text.vocab_size = 32;
    cfg.text.max_text_length = 8;
    cfg.text.embed_dim = 8;
    cfg.image.kind = EncoderKind::PatchTransformer;
    cfg.image.layers = 1;
    cfg.image.width = 16;
    cfg.image.heads = 2;
    cfg.image.patch_size = 8;
    cfg.image.resolution = 8;
    cfg.image.embed_dim = 8;
    auto model = std::make_shared<TwoTowerModel>(init_model(cfg, 9, InitSource::random()));

    TokenSequence seq;
    seq.ids = {1, 10, 20, 7, 2, 0, 0, 0};
    seq.mask = {1, 1, 1, 1, 1, 0, 0, 0};
    Rng rng(17);
    Tensor w({1, 8});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal();

    GradCheckTask task;
    for (const NamedTensor& p : model->params.items()) {
        if (p.name.starts_with("text")) {  // text tower + text projection
            task.params.emplace_back(p.name, p.value);
        }
    }
    task.build = [model, seq, w](Graph& g, const std::vector<Tensor>& leaves) {
        ModelBinding binding;
        binding.graph = &g;
        binding.model = model.get();
        std::size_t li = 0;
        for (const NamedTensor& p : model->params.items()) {
            binding.nodes.emplace(p.name, p.name.starts_with("text")
                                              ? leaves[li++]
                                              : g.constant(p.value));
        }
        return g.sum_all(g.mul(encode_text_node(binding, seq), g.constant(w)));
    };
    const GradCheckReport report = check_gradients(task, 1e-5, 1e-3);
    INFO(report.to_string());
    CHECK(report.all_passed());
}

TEST_CASE("clamp has pass-through gradient inside and zero outside") {
    Graph g;
    const Tensor x = g.leaf(Tensor({4}, {-2.0, -0.5, 0.5, 2.0}));
    const Tensor loss = g.sum_all(g.clamp(x, -1.0, 1.0));
    const GradientMap grads = g.backward(loss);
    const Tensor& dx = grads.at(*x.node_id);
    CHECK(dx[0] == 0.0);
    CHECK(dx[1] == 1.0);
    CHECK(dx[2] == 1.0);
    CHECK(dx[3] == 0.0);
}
