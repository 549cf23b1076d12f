#pragma once

#include "cfisac/common.hpp"

#include <random>

namespace cfisac::nn {

enum class Activation { identity, relu, tanh };

inline const char* activation_name(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        default: return "identity";
    }
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "identity") return Activation::identity;
    throw ConfigError("unknown activation '" + s + "'");
}

/// Fully connected network with all weights in one flat vector. Layer l maps
/// widths[l] -> widths[l + 1]; its weight matrix is stored column-major,
/// followed by its bias. Batches are matrices with one sample per column.
class Mlp {
public:
    struct Tape {
        std::vector<MatX> inputs;   // input of each layer
        std::vector<MatX> outputs;  // activated output of each layer
    };

    Mlp() = default;

    Mlp(std::vector<std::size_t> widths, Activation hidden, Activation output)
        : widths_(std::move(widths)) {
        if (widths_.size() < 2) throw ConfigError("Mlp needs at least an input and an output width");
        for (auto w : widths_)
            if (w == 0) throw ConfigError("Mlp widths must be >= 1");
        acts_.assign(widths_.size() - 1, hidden);
        acts_.back() = output;
        std::size_t n = 0;
        offsets_.clear();
        for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
            offsets_.push_back(n);
            n += widths_[l] * widths_[l + 1] + widths_[l + 1];
        }
        params_ = VecX::Zero(static_cast<Eigen::Index>(n));
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every layer except the last,
    /// which uses +-final_scale.
    void initialize(std::mt19937_64& rng, double final_scale = 3e-3) {
        for (std::size_t l = 0; l < num_layers(); ++l) {
            const double bound = l + 1 == num_layers() ? final_scale : 1.0 / std::sqrt(static_cast<double>(widths_[l]));
            std::uniform_real_distribution<double> u(-bound, bound);
            const auto begin = static_cast<Eigen::Index>(offsets_[l]);
            const auto count = static_cast<Eigen::Index>(widths_[l] * widths_[l + 1] + widths_[l + 1]);
            for (Eigen::Index i = begin; i < begin + count; ++i) params_[i] = u(rng);
        }
    }

    std::size_t num_layers() const { return acts_.size(); }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    const std::vector<std::size_t>& widths() const { return widths_; }
    const std::vector<Activation>& activations() const { return acts_; }
    void set_activations(std::vector<Activation> acts) {
        if (acts.size() != acts_.size()) throw ConfigError("activation count does not match layer count");
        acts_ = std::move(acts);
    }

    VecX& params() { return params_; }
    const VecX& params() const { return params_; }

    Eigen::Map<const MatX> weight(std::size_t l) const {
        return {params_.data() + offsets_[l], static_cast<Eigen::Index>(widths_[l + 1]),
                static_cast<Eigen::Index>(widths_[l])};
    }
    Eigen::Map<const VecX> bias(std::size_t l) const {
        return {params_.data() + offsets_[l] + widths_[l] * widths_[l + 1], static_cast<Eigen::Index>(widths_[l + 1])};
    }

    MatX forward_batch(const MatX& x) const {
        MatX h = x;
        for (std::size_t l = 0; l < num_layers(); ++l) h = activate(l, layer_affine(l, h));
        return h;
    }

    VecX forward(const VecX& x) const { return forward_batch(MatX(x)).col(0); }

    MatX forward_batch(const MatX& x, Tape& tape) const {
        tape.inputs.assign(num_layers(), MatX());
        tape.outputs.assign(num_layers(), MatX());
        MatX h = x;
        for (std::size_t l = 0; l < num_layers(); ++l) {
            tape.inputs[l] = h;
            h = activate(l, layer_affine(l, h));
            tape.outputs[l] = h;
        }
        return h;
    }

    /// Back-propagates dL/d(output) through a recorded forward pass. Returns the
    /// parameter gradient; writes dL/d(input) to `grad_input` when non-null.
    VecX backward(const Tape& tape, const MatX& grad_output, MatX* grad_input = nullptr) const {
        VecX grad = VecX::Zero(params_.size());
        MatX delta = grad_output;
        for (std::size_t l = num_layers(); l-- > 0;) {
            const MatX& out = tape.outputs[l];
            switch (acts_[l]) {
                case Activation::relu: delta = delta.cwiseProduct((out.array() > 0.0).cast<double>().matrix()); break;
                case Activation::tanh: delta = delta.cwiseProduct((1.0 - out.array().square()).matrix()); break;
                case Activation::identity: break;
            }
            const auto rows = static_cast<Eigen::Index>(widths_[l + 1]);
            const auto cols = static_cast<Eigen::Index>(widths_[l]);
            Eigen::Map<MatX>(grad.data() + offsets_[l], rows, cols) = delta * tape.inputs[l].transpose();
            Eigen::Map<VecX>(grad.data() + offsets_[l] + widths_[l] * widths_[l + 1], rows) = delta.rowwise().sum();
            if (l > 0 || grad_input) delta = weight(l).transpose() * delta;
        }
        if (grad_input) *grad_input = delta;
        return grad;
    }

private:
    MatX layer_affine(std::size_t l, const MatX& h) const {
        MatX z = weight(l) * h;
        z.colwise() += bias(l);
        return z;
    }

    MatX activate(std::size_t l, MatX z) const {
        switch (acts_[l]) {
            case Activation::relu: return z.cwiseMax(0.0);
            case Activation::tanh: return z.array().tanh().matrix();
            case Activation::identity: break;
        }
        return z;
    }

    std::vector<std::size_t> widths_;
    std::vector<Activation> acts_;
    std::vector<std::size_t> offsets_;
    VecX params_;
};

/// Adam for minimisation of a loss over a flat parameter vector.
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    VecX m;
    VecX v;
    std::uint64_t t = 0;

    Adam() = default;
    Adam(double learning_rate, Eigen::Index n) : lr(learning_rate), m(VecX::Zero(n)), v(VecX::Zero(n)) {}

    void reset() {
        m.setZero();
        v.setZero();
        t = 0;
    }

    void step(VecX& params, const VecX& grad) {
        ++t;
        m = beta1 * m + (1.0 - beta1) * grad;
        v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }
};

}  // namespace cfisac::nn
