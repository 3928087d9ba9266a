#include "diarkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace diarkit {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        // Zero-length axes are legal (an empty diarization has shape [T,0]);
        // negative ones never are.
        if (d < 0) throw DimensionError("axis lengths must be non-negative, got " +
                                        shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor basics
// ---------------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t;
    const std::size_t n = shape_numel(shape);
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(n, 0.0);
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data->begin(), t.data->end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    if (n != values.size()) {
        throw DimensionError("from_data: shape " + shape_str(shape) + " wants " +
                             std::to_string(n) + " values, got " + std::to_string(values.size()));
    }
    Tensor t;
    t.shape = std::move(shape);
    t.data = std::make_shared<std::vector<double>>(std::move(values));
    t.requires_grad = requires_grad;
    if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int Tensor::dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) {
        throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    }
    return shape[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape));
    return (*data)[0];
}

double Tensor::at2(int i, int j) const {
    return (*data)[static_cast<std::size_t>(i) * shape[1] + j];
}

double Tensor::at3(int i, int j, int k) const {
    return (*data)[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
}

void Tensor::zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detach() const {
    Tensor t;
    t.shape = shape;
    t.data = data;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : *data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Grad mode
// ---------------------------------------------------------------------------

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

// ---------------------------------------------------------------------------
// Backward walk
// ---------------------------------------------------------------------------

void Tensor::backward() const {
    if (numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(shape));
    }
    if (!requires_grad) return;
    if (!node) {
        (*grad)[0] += 1.0;  // loss is itself a leaf
        return;
    }

    // Post-order over the graph: each node appended after all of its parents,
    // so a reverse iteration visits every node exactly once, loss first.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    struct StackFrame {
        Node* n;
        std::size_t next_parent;
    };
    std::vector<StackFrame> stack;
    stack.push_back({node.get(), 0});
    visited.insert(node.get());
    while (!stack.empty()) {
        StackFrame& top = stack.back();
        if (top.next_parent < top.n->parents.size()) {
            const Tensor& parent = top.n->parents[top.next_parent++];
            Node* pn = parent.node.get();
            if (pn != nullptr && !visited.count(pn)) {
                visited.insert(pn);
                stack.push_back({pn, 0});
            }
        } else {
            topo.push_back(top.n);
            stack.pop_back();
        }
    }

    // Intermediate grads are scratch; leaves keep accumulating across calls.
    for (Node* n : topo) std::fill(n->out_grad->begin(), n->out_grad->end(), 0.0);
    (*grad)[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward) n->backward(*n);
    }
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

double Rng::uniform(double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(gen);
}

double Rng::normal(double mean, double stddev) {
    std::normal_distribution<double> dist(mean, stddev);
    return dist(gen);
}

int Rng::randint(int n) {
    std::uniform_int_distribution<int> dist(0, n - 1);
    return dist(gen);
}

std::vector<int> Rng::permutation(int n) {
    std::vector<int> p(n);
    std::iota(p.begin(), p.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> dist(0, i);
        std::swap(p[i], p[dist(gen)]);
    }
    return p;
}

Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : *t.data) v = rng.uniform(lo, hi);
    return t;
}

Tensor rand_normal(Shape shape, double mean, double stddev, Rng& rng, bool requires_grad) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : *t.data) v = rng.normal(mean, stddev);
    return t;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double step) {
    if (step <= 0.0) throw ContractError("grad_check: step must be positive");

    Tensor probe;
    probe.shape = x.shape;
    probe.data = std::make_shared<std::vector<double>>(*x.data);
    probe.requires_grad = true;
    probe.grad = std::make_shared<std::vector<double>>(probe.data->size(), 0.0);

    Tensor loss = f(probe);
    loss.backward();
    const std::vector<double> analytic = *probe.grad;

    std::vector<double> base = *x.data;
    double max_rel = 0.0;
    {
        NoGradGuard no_grad;
        for (std::size_t i = 0; i < base.size(); ++i) {
            Tensor xp;
            xp.shape = x.shape;
            xp.data = std::make_shared<std::vector<double>>(base);
            (*xp.data)[i] = base[i] + step;
            const double fp = f(xp).item();
            (*xp.data)[i] = base[i] - step;
            const double fm = f(xp).item();
            const double numeric = (fp - fm) / (2.0 * step);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return max_rel;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

std::size_t param_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.tensor.numel();
    return n;
}

void zero_grads(ParamList& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

double global_grad_norm(const ParamList& params) {
    double sum_sq = 0.0;
    for (const auto& p : params) {
        if (!p.tensor.grad) continue;
        for (double g : *p.tensor.grad) sum_sq += g * g;
    }
    return std::sqrt(sum_sq);
}

double clip_grad_norm(ParamList& params, double max_norm) {
    const double norm = global_grad_norm(params);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            if (!p.tensor.grad) continue;
            for (double& g : *p.tensor.grad) g *= scale;
        }
    }
    return norm;
}

double LrSchedule::at(int step) const {
    const int warm = std::max(1, warmup_steps);
    if (step <= 0) return 0.0;
    if (step <= warm) return peak * static_cast<double>(step) / warm;
    if (step >= total_steps) return 0.0;
    const int decay = std::max(1, total_steps - warm);
    return peak * static_cast<double>(total_steps - step) / decay;
}

void AdamOptimizer::step(ParamList& params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params[i].tensor.numel(), 0.0);
            v_[i].assign(params[i].tensor.numel(), 0.0);
        }
    }
    if (m_.size() != params.size()) {
        throw ContractError("adam: parameter list size changed between steps");
    }

    ++step_count;
    const double lr = schedule.at(step_count);
    const double bc1 = 1.0 - std::pow(beta1, step_count);
    const double bc2 = 1.0 - std::pow(beta2, step_count);

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].tensor;
        if (!t.grad) throw ContractError("adam: parameter '" + params[i].name + "' has no grad buffer");
        std::vector<double>& g = *t.grad;
        std::vector<double>& w = *t.data;
        std::vector<double>& m = m_[i];
        std::vector<double>& v = v_[i];
        for (std::size_t j = 0; j < g.size(); ++j) {
            if (!std::isfinite(g[j])) {
                throw NumericalError("non-finite gradient for parameter '" + params[i].name + "'");
            }
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

}  // namespace diarkit
