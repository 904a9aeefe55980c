#include "centrifuge/tensor.hpp"

#include "centrifuge/error.hpp"
#include "kernels.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

namespace centrifuge {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

} // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_product(shape_) != data_.size()) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_str());
    }
}

Tensor Tensor::vector(std::vector<double> values) {
    const auto n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.front().size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : shape_[0];
}

std::size_t Tensor::cols() const noexcept {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? shape_[0] : data_.size() / std::max<std::size_t>(shape_[0], 1);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

Parameter::Parameter(std::string n, Tensor init)
    : name(std::move(n)), value(std::move(init)), grad(value.shape()), momentum_buf(value.shape()) {}

void Parameter::zero_grad() { grad.fill(0.0); }

void Parameter::reset_momentum() { momentum_buf.fill(0.0); }

void OptimizerConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
    if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
}

void LRSchedule::validate() const {
    if (!(initial_lr > 0.0)) throw ConfigError("initial learning rate must be positive");
    if (total_steps == 0) throw ConfigError("schedule needs at least one step");
}

Tensor linear_forward(const Tensor& x, const Parameter& weight, const Parameter* bias) {
    const Tensor& w = weight.value;
    if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
        throw DimensionError("linear: input " + x.shape_str() + " incompatible with weight " + w.shape_str());
    }
    Tensor out = Tensor::matrix(x.rows(), w.cols());
    kernels::gemm(x.data().data(), false, w.data().data(), false, out.data().data(), x.rows(), x.cols(), w.cols(),
                  false);
    if (bias != nullptr) {
        if (bias->value.size() != w.cols()) {
            throw DimensionError("linear: bias " + bias->value.shape_str() + " incompatible with weight " +
                                 w.shape_str());
        }
        for (std::size_t i = 0; i < out.rows(); ++i)
            for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias->value[j];
    }
    return out;
}

Tensor softmax(const Tensor& logits) {
    if (!logits.all_finite()) throw InputError("softmax: non-finite logits");
    Tensor out(logits.shape());
    if (logits.empty()) return out;
    const double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& v : out.values()) v /= sum;
    return out;
}

double ce_label_smoothed(const Tensor& probs, std::size_t target, double eps) {
    if (!(eps >= 0.0 && eps < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
    const std::size_t c = probs.size();
    if (target >= c) throw DimensionError("target index out of range for " + probs.shape_str());
    const double off = eps / static_cast<double>(c);
    double loss = 0.0;
    for (std::size_t i = 0; i < c; ++i) {
        const double q = (i == target ? 1.0 - eps : 0.0) + off;
        if (q != 0.0) loss -= q * std::log(probs[i]);
    }
    return loss;
}

void sgd_step(Parameter& p, double lr, double weight_decay, double momentum, bool nesterov) {
    if (!p.trainable) return;
    auto& value = p.value.values();
    const auto& grad = p.grad.values();
    auto& buf = p.momentum_buf.values();
    for (std::size_t i = 0; i < value.size(); ++i) {
        const double g = grad[i] + weight_decay * value[i];
        buf[i] = momentum * buf[i] + g;
        const double step = nesterov ? g + momentum * buf[i] : buf[i];
        value[i] -= lr * step;
    }
}

void sgd_step(Parameter& p, double lr, const OptimizerConfig& cfg) {
    sgd_step(p, lr, cfg.weight_decay, cfg.momentum, cfg.nesterov);
}

double cosine_lr(std::size_t step, const LRSchedule& schedule) {
    const std::size_t t = std::min(step, schedule.total_steps);
    if (t == schedule.total_steps) return 0.0;
    const double frac = static_cast<double>(t) / static_cast<double>(schedule.total_steps);
    return schedule.initial_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

} // namespace centrifuge
