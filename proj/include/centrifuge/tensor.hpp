#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace centrifuge {

// Dense row-major tensor of 64-bit floats.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor vector(std::vector<double> values);
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    // 2-D views. A rank-1 tensor behaves as a single row.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double>& values() noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    const double& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    void fill(double v);
    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }
    bool all_finite() const noexcept;

    std::string shape_str() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// A trainable tensor with its gradient and momentum buffer.
struct Parameter {
    Parameter() = default;
    Parameter(std::string name, Tensor init);

    std::string name;
    Tensor value;
    Tensor grad;
    Tensor momentum_buf;
    bool trainable = true;

    void zero_grad();
    void reset_momentum();
};

struct OptimizerConfig {
    double lr = 0.025;
    double weight_decay = 1e-4;
    double momentum = 0.9;
    bool nesterov = false;

    void validate() const;
};

struct LRSchedule {
    double initial_lr = 0.025;
    std::size_t total_steps = 1;

    void validate() const;
};

// out = x * W (+ bias). x is [n x d_in], W is [d_in x d_out], bias is [d_out].
Tensor linear_forward(const Tensor& x, const Parameter& weight, const Parameter* bias = nullptr);

// Numerically stable softmax of a flat vector. Throws on non-finite input.
Tensor softmax(const Tensor& logits);

// -sum_c q_c log p_c with q = (1 - eps) onehot(target) + eps / C.
double ce_label_smoothed(const Tensor& probs, std::size_t target, double eps);

// buf = mu * buf + (grad + lambda * value); value -= lr * buf.
// With nesterov the applied direction is (grad + lambda * value) + mu * buf.
// No-op for non-trainable parameters.
void sgd_step(Parameter& p, double lr, double weight_decay, double momentum, bool nesterov = false);
void sgd_step(Parameter& p, double lr, const OptimizerConfig& cfg);

// lr(t) = lr0 * (1 + cos(pi * t / T)) / 2, t clamped to T.
double cosine_lr(std::size_t step, const LRSchedule& schedule);

} // namespace centrifuge
