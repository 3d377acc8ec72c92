#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualtower {

using NodeId = std::uint32_t;

// Contract failures (bad arguments, shape mismatches) are programming errors
// and throw this; recoverable I/O problems throw std::runtime_error subtypes.
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

struct CorruptFile : std::runtime_error {
    explicit CorruptFile(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major tensor of doubles. May carry a node id when it was produced
// by (or registered with) an autodiff Graph; plain tensors have none.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double v);
    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // 2-d accessors; the hot loops index data() directly
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool is_scalar() const { return size() == 1; }

    bool all_finite() const;

    bool requires_grad = false;
    std::optional<NodeId> node_id;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_size(const std::vector<std::size_t>& shape);
std::string shape_to_string(const std::vector<std::size_t>& shape);

// Tensor binary format, shared with checkpoint bundles:
//   magic "DTW1", u32 LE rank, rank x u64 LE dims, u8 dtype (0=f32, 1=f64),
//   raw little-endian payload.
enum class TensorDtype : std::uint8_t { F32 = 0, F64 = 1 };

void write_tensor_file(const std::string& path, const Tensor& t,
                       TensorDtype dtype = TensorDtype::F64);
Tensor read_tensor_file(const std::string& path);

}  // namespace dualtower
