#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "dualtower/tensor.hpp"

namespace dualtower {

// Per-layer batch-norm bookkeeping. The running statistics live with the
// model and survive across steps; update_stats gates whether a training
// forward touches them at all.
struct BatchNormState {
    Tensor running_mean;  // [C]
    Tensor running_var;   // [C]
    double momentum = 0.1;
    bool update_stats = true;

    static BatchNormState identity(std::size_t channels) {
        BatchNormState s;
        s.running_mean = Tensor::zeros({channels});
        s.running_var = Tensor::full({channels}, 1.0);
        return s;
    }
};

using GradientMap = std::unordered_map<NodeId, Tensor>;

// Reverse-mode autodiff tape. Ops evaluate eagerly and record a backward
// closure; one backward() consumes the graph. A graph is confined to a single
// thread; the gradient map it returns is plain data and may move anywhere.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor leaf(const Tensor& value, bool requires_grad = true);
    Tensor constant(const Tensor& value);
    Tensor constant(Tensor&& value);

    // elementwise
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& a, double c);
    Tensor scale_by(const Tensor& a, const Tensor& scalar);  // scalar is a [1] node
    Tensor exp(const Tensor& a);
    Tensor clamp(const Tensor& a, double lo, double hi);
    Tensor gelu(const Tensor& a);
    // custom elementwise op; df must be the derivative of f
    Tensor map_unary(const Tensor& a, double (*f)(double), double (*df)(double));

    // linear algebra (2-d)
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& a);

    // structure
    Tensor reshape(const Tensor& a, std::vector<std::size_t> shape);
    Tensor concat_rows(const std::vector<Tensor>& parts);
    Tensor concat_cols(const std::vector<Tensor>& parts);
    Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len);
    Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len);
    Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);

    // broadcasting over rows of [N, C] with a [C] vector
    Tensor rowwise_scale(const Tensor& a, const Tensor& v);
    Tensor rowwise_shift(const Tensor& a, const Tensor& v);

    // reductions / normalization
    Tensor sum_all(const Tensor& a);
    Tensor mean_all(const Tensor& a);
    Tensor mean_rows(const Tensor& a);  // [N, C] -> [C]
    Tensor softmax(const Tensor& a);      // over last dim
    Tensor log_softmax(const Tensor& a);  // over last dim
    Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      double eps = 1e-5);
    Tensor l2_normalize(const Tensor& a);  // per row; eps 1e-12 under the root

    // Pure normalization against batch or running statistics; affine scale and
    // shift are separate rowwise_scale/rowwise_shift ops. Mutates state when
    // training and state.update_stats.
    Tensor batch_norm(const Tensor& x, BatchNormState& state, bool training,
                      double eps = 1e-5);

    // Runs reverse-mode accumulation from a scalar loss and consumes the
    // graph. Every requires_grad leaf appears in the map; leaves the loss
    // never touched get zeros.
    GradientMap backward(const Tensor& loss);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<NodeId> parents;
        std::function<void(Graph&, NodeId)> backprop;
        Tensor grad;  // empty until touched
        bool needs_grad = false;
        bool is_leaf = false;
    };

    NodeId push(Tensor value, std::vector<NodeId> parents,
                std::function<void(Graph&, NodeId)> backprop);
    Tensor make(Tensor value, std::vector<NodeId> parents,
                std::function<void(Graph&, NodeId)> backprop);
    NodeId require_node(const Tensor& t, const char* op) const;
    void accumulate(NodeId id, const Tensor& g);
    const Tensor& grad_of(NodeId id) const { return nodes_[id].grad; }
    void check_open(const char* op) const;

    std::vector<Node> nodes_;
    std::vector<NodeId> leaves_;
    bool consumed_ = false;
};

// Non-graph convenience used by unit tests and eval-mode callers; identical
// math to Graph::batch_norm.
Tensor batch_norm_forward(const Tensor& x, BatchNormState& state, bool training,
                          double eps = 1e-5);

}  // namespace dualtower
