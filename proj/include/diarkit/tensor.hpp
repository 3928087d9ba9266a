#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace diarkit {

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

// Shape/axis disagreements between operands.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller violated an operation's contract (non-scalar loss, non-binary
// targets, even filter taps, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required (optimizer input, training loss).
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Shapes
// ---------------------------------------------------------------------------

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

// ---------------------------------------------------------------------------
// Tensor: dense row-major double storage with an optional grad accumulator.
// Copies are shallow (shared storage); forward ops never mutate their inputs.
// ---------------------------------------------------------------------------

struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated iff requires_grad
    bool requires_grad = false;
    std::shared_ptr<Node> node;  // producing operation; null for leaves

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return data != nullptr; }
    int rank() const { return static_cast<int>(shape.size()); }
    std::size_t numel() const { return data ? data->size() : 0; }
    // Axis length; negative axes count from the end.
    int dim(int axis) const;

    std::span<const double> values() const { return {data->data(), data->size()}; }
    std::span<double> mutable_values() { return {data->data(), data->size()}; }
    std::span<const double> grad_values() const { return {grad->data(), grad->size()}; }

    double item() const;                 // scalar tensors only
    double at(std::size_t flat) const { return (*data)[flat]; }
    double at2(int i, int j) const;      // rank-2 convenience
    double at3(int i, int j, int k) const;

    void zero_grad();
    // Runs reverse-mode accumulation from this scalar into every
    // requires_grad leaf it depends on. Repeated calls accumulate on leaves.
    void backward() const;
    // Same values, detached from the graph (no grad, no node).
    Tensor detach() const;

    bool all_finite() const;
};

// One recorded operation. parents hold the input tensors; backward reads the
// output grad buffer and accumulates into parents' grads.
struct Node {
    std::vector<Tensor> parents;
    std::shared_ptr<std::vector<double>> out_grad;
    std::function<void(Node&)> backward;
};

// Scoped "inference mode": ops built under a guard record no graph.
bool grad_enabled();
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool saved_;
};

// ---------------------------------------------------------------------------
// RNG: every random draw in the toolkit goes through one of these.
// ---------------------------------------------------------------------------

struct Rng {
    explicit Rng(std::uint64_t seed) : gen(seed) {}
    double uniform(double lo, double hi);
    double normal(double mean = 0.0, double stddev = 1.0);
    int randint(int n);  // uniform in [0, n)
    std::vector<int> permutation(int n);
    std::mt19937_64 gen;
};

Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng,
                    bool requires_grad = false);
Tensor rand_normal(Shape shape, double mean, double stddev, Rng& rng,
                   bool requires_grad = false);

// Intra-op worker count for matmul row splitting. Defaults to the
// DIARKIT_THREADS environment variable (or 1). Results are bit-identical
// for any setting: the reduction order is fixed.
int intra_op_threads();
void set_intra_op_threads(int n);

// ---------------------------------------------------------------------------
// Operations (pure; differentiable unless noted)
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
// x[..., n] + b[n]
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// Batched matrix product [..., m, k] x [..., k, n] -> [..., m, n]. Leading
// axes must match exactly or be absent on one side (shared operand).
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& x, Shape new_shape);
Tensor permute(const Tensor& x, const std::vector<int>& dims);
Tensor transpose_last2(const Tensor& x);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);
Tensor slice_lastdim(const Tensor& x, int offset, int length);
Tensor slice_axis0(const Tensor& x, int start, int length);
// rows[i] = x[indices[i]]; indices may repeat
Tensor row_gather(const Tensor& x, const std::vector<int>& indices);
// k tensors of identical shape -> [k, shape...]
Tensor stack_axis0(const std::vector<Tensor>& parts);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor gelu(const Tensor& x);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

// Normalization over the last axis, then elementwise affine with gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// One LSTM step on precomputed gate inputs. xg holds x.W + bias for every
// step, shaped [T, B, 4H] with gate order (i, f, g, o); returns [B, 2H] as
// concat(h', c') for step t.
Tensor lstm_step(const Tensor& xg, int t, const Tensor& h_prev,
                 const Tensor& c_prev, const Tensor& w_hh);

// Strided 1-D convolution over axis 0 with edge replication.
// x [L, Cin], w [K, Cin, Cout], b [Cout] -> [floor(L/stride), Cout];
// output t reads input positions t*stride + j - (K-1)/2, clamped to range.
Tensor conv1d_stride(const Tensor& x, const Tensor& w, const Tensor& b,
                     int stride);

// Sum of per-element binary cross-entropies, frame-masked and normalized by
// (sum(mask) * S). pred [T, S] in (0,1); target in {0,1}^{T x S}; mask {0,1}^T.
Tensor bce_sum_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Max over elements of |analytic - central difference| /
// max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double step = 1e-5);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct NamedParam {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t param_count(const ParamList& params);
void zero_grads(ParamList& params);
double global_grad_norm(const ParamList& params);
// Scales all grads so the global norm is at most max_norm. Returns the
// pre-clip norm.
double clip_grad_norm(ParamList& params, double max_norm);

// Linear warm-up to `peak` over warmup_steps, then linear decay to zero at
// total_steps. Steps are 1-based; lr(warmup_steps) == peak exactly.
struct LrSchedule {
    double peak = 1e-3;
    int warmup_steps = 1;
    int total_steps = 1;
    double at(int step) const;
};

struct AdamOptimizer {
    LrSchedule schedule;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int step_count = 0;

    // Bias-corrected Adam update at the scheduled learning rate. Throws
    // NumericalError naming the parameter if its gradient is not finite.
    void step(ParamList& params);

  private:
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace diarkit
