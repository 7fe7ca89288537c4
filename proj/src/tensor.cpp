#include "mpct/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace mpct {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw ShapeError("non-positive extent in shape " + format_shape(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

thread_local bool g_grad_enabled = true;

} // namespace

Tensor Tensor::zeros(const std::vector<int>& shape) {
    auto d = std::make_shared<TensorData>();
    d->shape = shape;
    d->v.assign(shape_numel(shape), 0.0);
    d->g.assign(d->v.size(), 0.0);
    return Tensor(std::move(d));
}

Tensor Tensor::full(const std::vector<int>& shape, double value) {
    Tensor t = zeros(shape);
    std::fill(t.values().begin(), t.values().end(), value);
    return t;
}

Tensor Tensor::from_vector(const std::vector<int>& shape, const std::vector<double>& values) {
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("value count " + std::to_string(values.size()) +
                         " does not fill shape " + format_shape(shape));
    }
    Tensor t = zeros(shape);
    t.values() = values;
    return t;
}

Tensor Tensor::scalar_value(double value) { return full({1}, value); }

double Tensor::scalar() const {
    if (numel() != 1) {
        throw ShapeError("scalar() on tensor of shape " + format_shape(shape()));
    }
    return d_->v[0];
}

Tensor Tensor::detach() const {
    auto d = std::make_shared<TensorData>();
    d->shape = d_->shape;
    d->v = d_->v;
    d->g.assign(d->v.size(), 0.0);
    return Tensor(std::move(d));
}

Tape::~Tape() {
    // Nodes may outlive the tape (e.g. parameters); drop the dangling link.
    for (auto& rec : records_) {
        if (rec.output) {
            rec.output->tape = nullptr;
        }
    }
    for (auto& t : watched_) {
        if (t.defined()) {
            t.node()->tape = nullptr;
        }
    }
    for (auto& t : adopted_) {
        if (t.defined()) {
            t.node()->tape = nullptr;
        }
    }
}

void Tape::watch(const Tensor& t) {
    TensorData* n = t.node();
    n->tape = this;
    n->leaf = true;
    // a fresh tape starts from a clean slate even if an earlier tape left
    // accumulated gradients behind
    std::fill(n->g.begin(), n->g.end(), 0.0);
    n->grad_touched = false;
    watched_.push_back(t);
}

void Tape::adopt(const Tensor& t) {
    TensorData* n = t.node();
    n->tape = this;
    std::fill(n->g.begin(), n->g.end(), 0.0);
    n->grad_touched = false;
    adopted_.push_back(t);
}

void Tape::record(TapeRecord rec) {
    rec.output->tape = this;
    records_.push_back(std::move(rec));
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward() needs a scalar loss, got shape " +
                         format_shape(loss.shape()));
    }
    if (loss.node()->tape != this) {
        throw ConfigError("backward() on a loss not produced by this tape");
    }
    loss.node()->g[0] = 1.0;
    loss.node()->grad_touched = true;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        if (!it->output->grad_touched) {
            continue; // dead branch: the loss never depended on this output
        }
        for (auto& in : it->inputs) {
            in->grad_touched = true;
        }
        it->backward();
    }
}

void Tape::zero_grads() {
    for (auto& rec : records_) {
        std::fill(rec.output->g.begin(), rec.output->g.end(), 0.0);
        rec.output->grad_touched = false;
    }
    for (auto& t : watched_) {
        std::fill(t.grad().begin(), t.grad().end(), 0.0);
        t.node()->grad_touched = false;
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

void ParamSet::add(const std::string& name, Tensor t) {
    if (contains(name)) {
        throw ConfigError("duplicate parameter name: " + name);
    }
    t.node()->name = name;
    items_.push_back({name, std::move(t)});
}

void ParamSet::merge(const ParamSet& other) {
    for (const auto& it : other.items_) {
        add(it.name, it.tensor);
    }
}

Tensor ParamSet::get(const std::string& name) const {
    for (const auto& it : items_) {
        if (it.name == name) {
            return it.tensor;
        }
    }
    throw ConfigError("unknown parameter name: " + name);
}

bool ParamSet::contains(const std::string& name) const {
    return std::any_of(items_.begin(), items_.end(),
                       [&](const Item& it) { return it.name == name; });
}

Tensor Gradients::by_name(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return grads[i];
        }
    }
    throw ConfigError("no gradient recorded for parameter: " + name);
}

Gradients collect_gradients(const ParamSet& params) {
    Gradients out;
    for (const auto& it : params.items()) {
        out.names.push_back(it.name);
        Tensor g = Tensor::zeros(it.tensor.shape());
        g.values() = it.tensor.grad();
        out.grads.push_back(std::move(g));
        if (!it.tensor.node()->grad_touched) {
            out.unreached.push_back(it.name);
        }
    }
    return out;
}

void check_finite(const std::vector<double>& vals, const std::string& where) {
    for (double x : vals) {
        if (!std::isfinite(x)) {
            throw NumericError("non-finite value in " + where);
        }
    }
}

} // namespace mpct
