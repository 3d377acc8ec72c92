#include "dualtower/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

static_assert(std::endian::native == std::endian::little,
              "tensor file I/O assumes a little-endian host");

namespace dualtower {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (const std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::string s;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) {
            s += 'x';
        }
        s += std::to_string(shape[i]);
    }
    return s;
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    for (const std::size_t d : shape_) {
        if (d == 0) {
            throw ContractViolation("tensor dimensions must be positive");
        }
    }
    data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    for (const std::size_t d : shape_) {
        if (d == 0) {
            throw ContractViolation("tensor dimensions must be positive");
        }
    }
    if (data_.size() != shape_size(shape_)) {
        throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_to_string(shape_));
    }
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) {
        x = v;
    }
    return t;
}

bool Tensor::all_finite() const {
    for (const double x : data_) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

constexpr char kTensorMagic[4] = {'D', 'T', 'W', '1'};

void write_exact(std::FILE* f, const void* buf, std::size_t n, const std::string& path) {
    if (std::fwrite(buf, 1, n, f) != n) {
        throw std::runtime_error("write failed: " + path);
    }
}

void read_exact(std::FILE* f, void* buf, std::size_t n, const std::string& path) {
    if (std::fread(buf, 1, n, f) != n) {
        throw CorruptFile("truncated tensor file: " + path);
    }
}

}  // namespace

void write_tensor_file(const std::string& path, const Tensor& t, TensorDtype dtype) {
    FilePtr f(std::fopen(path.c_str(), "wb"));
    if (!f) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    write_exact(f.get(), kTensorMagic, 4, path);
    const std::uint32_t rank = static_cast<std::uint32_t>(t.rank());
    write_exact(f.get(), &rank, sizeof(rank), path);
    for (const std::size_t d : t.shape()) {
        const std::uint64_t d64 = d;
        write_exact(f.get(), &d64, sizeof(d64), path);
    }
    const std::uint8_t tag = static_cast<std::uint8_t>(dtype);
    write_exact(f.get(), &tag, sizeof(tag), path);
    if (dtype == TensorDtype::F64) {
        write_exact(f.get(), t.data().data(), t.size() * sizeof(double), path);
    } else {
        std::vector<float> narrow(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) {
            narrow[i] = static_cast<float>(t[i]);
        }
        write_exact(f.get(), narrow.data(), narrow.size() * sizeof(float), path);
    }
    if (std::fflush(f.get()) != 0) {
        throw std::runtime_error("write failed: " + path);
    }
}

Tensor read_tensor_file(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) {
        throw std::runtime_error("cannot open: " + path);
    }
    char magic[4];
    read_exact(f.get(), magic, 4, path);
    if (std::memcmp(magic, kTensorMagic, 4) != 0) {
        throw CorruptFile("bad magic in tensor file: " + path);
    }
    std::uint32_t rank = 0;
    read_exact(f.get(), &rank, sizeof(rank), path);
    if (rank == 0 || rank > 8) {
        throw CorruptFile("implausible tensor rank in " + path);
    }
    std::vector<std::size_t> shape(rank);
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        std::uint64_t d = 0;
        read_exact(f.get(), &d, sizeof(d), path);
        if (d == 0 || d > (1ull << 32)) {
            throw CorruptFile("implausible tensor dimension in " + path);
        }
        shape[i] = static_cast<std::size_t>(d);
        total *= shape[i];
    }
    std::uint8_t tag = 0;
    read_exact(f.get(), &tag, sizeof(tag), path);
    std::vector<double> data(total);
    if (tag == static_cast<std::uint8_t>(TensorDtype::F64)) {
        read_exact(f.get(), data.data(), total * sizeof(double), path);
    } else if (tag == static_cast<std::uint8_t>(TensorDtype::F32)) {
        std::vector<float> narrow(total);
        read_exact(f.get(), narrow.data(), total * sizeof(float), path);
        for (std::size_t i = 0; i < total; ++i) {
            data[i] = static_cast<double>(narrow[i]);
        }
    } else {
        throw CorruptFile("unknown dtype tag in tensor file: " + path);
    }
    // trailing garbage means the file is not what we wrote
    char extra;
    if (std::fread(&extra, 1, 1, f.get()) != 0) {
        throw CorruptFile("trailing bytes in tensor file: " + path);
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace dualtower
