#ifndef MLMSDA_TENSOR_HPP
#define MLMSDA_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlmsda {

// Dense row-major tensor of 64-bit floats. Rank 1 = vector, rank 2 = matrix;
// scalars are rank-1 tensors of size 1. grad is empty until a backward pass
// accumulates into it; when present it always mirrors data's size.
class Tensor {
  public:
    std::vector<std::size_t> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape_)
        : shape(std::move(shape_)), data(count(shape), 0.0) {}

    Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
        : shape(std::move(shape_)), data(std::move(data_)) {
        if (count(shape) != data.size()) {
            throw std::invalid_argument("Tensor: shape/data size mismatch");
        }
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor vector_of(std::vector<double> v) {
        const std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> v) {
        return Tensor({r, c}, std::move(v));
    }

    static Tensor zeros(std::vector<std::size_t> shape_) { return Tensor(std::move(shape_)); }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return numel() == 1; }
    bool is_vector() const { return rank() == 1; }
    bool is_matrix() const { return rank() == 2; }

    std::size_t rows() const {
        require_matrix("rows");
        return shape[0];
    }
    std::size_t cols() const {
        require_matrix("cols");
        return shape[1];
    }

    double& at(std::size_t i) { return data[i]; }
    double at(std::size_t i) const { return data[i]; }
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

    double scalar_value() const {
        if (!is_scalar()) {
            throw std::invalid_argument("Tensor: scalar_value on non-scalar tensor");
        }
        return data[0];
    }

    bool all_finite() const {
        for (double v : data) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }

    void zero_grad() {
        if (!grad.empty()) grad.assign(data.size(), 0.0);
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    static std::string shape_str(const std::vector<std::size_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) out += "x";
            out += std::to_string(s[i]);
        }
        return out + "]";
    }

  private:
    void require_matrix(const char* what) const {
        if (!is_matrix()) {
            throw std::invalid_argument(std::string("Tensor: ") + what + " requires rank 2, got " +
                                        shape_str(shape));
        }
    }
};

} // namespace mlmsda

#endif // MLMSDA_TENSOR_HPP
