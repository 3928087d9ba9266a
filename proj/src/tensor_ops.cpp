#include "diarkit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

namespace diarkit {

// ---------------------------------------------------------------------------
// Matmul kernels. All reductions run in ascending index order so results are
// bit-identical regardless of the thread count.
// ---------------------------------------------------------------------------

namespace {
int g_intra_threads = -1;
}  // namespace

int intra_op_threads() {
    if (g_intra_threads < 1) {
        const char* env = std::getenv("DIARKIT_THREADS");
        int v = env ? std::atoi(env) : 1;
        g_intra_threads = v < 1 ? 1 : v;
    }
    return g_intra_threads;
}

void set_intra_op_threads(int n) { g_intra_threads = n < 1 ? 1 : n; }

namespace {

void parallel_rows(int rows, std::size_t flops, const std::function<void(int, int)>& body) {
    const int threads = intra_op_threads();
    if (threads <= 1 || rows < 2 * threads || flops < 1000000) {
        body(0, rows);
        return;
    }
    std::vector<std::thread> pool;
    const int per = (rows + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int lo = t * per;
        const int hi = std::min(rows, lo + per);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    parallel_rows(m, static_cast<std::size_t>(m) * k * n, [=](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            const double* ai = a + static_cast<std::size_t>(i) * k;
            double* ci = c + static_cast<std::size_t>(i) * n;
            for (int l = 0; l < k; ++l) {
                const double av = ai[l];
                const double* bl = b + static_cast<std::size_t>(l) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bl[j];
            }
        }
    });
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    parallel_rows(m, static_cast<std::size_t>(m) * k * n, [=](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            const double* ai = a + static_cast<std::size_t>(i) * k;
            double* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const double* bj = b + static_cast<std::size_t>(j) * k;
                double s = 0.0;
                for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
                ci[j] += s;
            }
        }
    });
}

// C[k,n] += A[m,k]^T * D[m,n]
void mm_tn(const double* a, const double* d, double* c, int m, int k, int n) {
    parallel_rows(k, static_cast<std::size_t>(m) * k * n, [=](int lo, int hi) {
        for (int i = lo; i < hi; ++i) {
            double* ci = c + static_cast<std::size_t>(i) * n;
            for (int l = 0; l < m; ++l) {
                const double av = a[static_cast<std::size_t>(l) * k + i];
                const double* dl = d + static_cast<std::size_t>(l) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * dl[j];
            }
        }
    });
}

bool any_requires_grad(const std::vector<Tensor>& parents) {
    for (const auto& p : parents) {
        if (p.requires_grad) return true;
    }
    return false;
}

// Allocates the output and, when grad is flowing, records the node.
Tensor make_op(Shape shape, std::vector<Tensor> parents, std::function<void(Node&)> backward) {
    const bool rg = grad_enabled() && any_requires_grad(parents);
    Tensor out = Tensor::zeros(std::move(shape), rg);
    if (rg) {
        out.node = std::make_shared<Node>();
        out.node->parents = std::move(parents);
        out.node->out_grad = out.grad;
        out.node->backward = std::move(backward);
    }
    return out;
}

double* grad_ptr(const Tensor& t) {
    return (t.requires_grad && t.grad) ? t.grad->data() : nullptr;
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) {
        s[i] = s[i + 1] * static_cast<std::size_t>(shape[i + 1]);
    }
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                             " vs " + shape_str(b.shape));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_op(a.shape, {a, b}, [](Node& n) {
        const double* og = n.out_grad->data();
        const std::size_t cnt = n.out_grad->size();
        if (double* ga = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < cnt; ++i) ga[i] += og[i];
        }
        if (double* gb = grad_ptr(n.parents[1])) {
            for (std::size_t i = 0; i < cnt; ++i) gb[i] += og[i];
        }
    });
    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = make_op(a.shape, {a, b}, [](Node& n) {
        const double* og = n.out_grad->data();
        const std::size_t cnt = n.out_grad->size();
        if (double* ga = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < cnt; ++i) ga[i] += og[i];
        }
        if (double* gb = grad_ptr(n.parents[1])) {
            for (std::size_t i = 0; i < cnt; ++i) gb[i] -= og[i];
        }
    });
    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] - pb[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = make_op(a.shape, {a, b}, [](Node& n) {
        const double* og = n.out_grad->data();
        const double* pa = n.parents[0].data->data();
        const double* pb = n.parents[1].data->data();
        const std::size_t cnt = n.out_grad->size();
        if (double* ga = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < cnt; ++i) ga[i] += og[i] * pb[i];
        }
        if (double* gb = grad_ptr(n.parents[1])) {
            for (std::size_t i = 0; i < cnt; ++i) gb[i] += og[i] * pa[i];
        }
    });
    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * pb[i];
    return out;
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_scalar(const Tensor& a, double s) {
    Tensor out = make_op(a.shape, {a}, [](Node& n) {
        const double* og = n.out_grad->data();
        if (double* ga = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.out_grad->size(); ++i) ga[i] += og[i];
        }
    });
    const double* pa = a.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + s;
    return out;
}

Tensor mul_scalar(const Tensor& a, double s) {
    Tensor out = make_op(a.shape, {a}, [s](Node& n) {
        const double* og = n.out_grad->data();
        if (double* ga = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.out_grad->size(); ++i) ga[i] += og[i] * s;
        }
    });
    const double* pa = a.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] * s;
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (b.rank() != 1 || x.rank() < 1 || x.dim(-1) != b.shape[0]) {
        throw DimensionError("add_rowvec: " + shape_str(x.shape) + " vs " + shape_str(b.shape));
    }
    const int n = b.shape[0];
    Tensor out = make_op(x.shape, {x, b}, [n](Node& nd) {
        const double* og = nd.out_grad->data();
        const std::size_t cnt = nd.out_grad->size();
        if (double* gx = grad_ptr(nd.parents[0])) {
            for (std::size_t i = 0; i < cnt; ++i) gx[i] += og[i];
        }
        if (double* gb = grad_ptr(nd.parents[1])) {
            for (std::size_t i = 0; i < cnt; ++i) gb[i % n] += og[i];
        }
    });
    const double* px = x.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = px[i] + pb[i % n];
    return out;
}

// ---------------------------------------------------------------------------
// Matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2 || b.rank() < 2) {
        throw DimensionError("matmul: operands must have rank >= 2, got " + shape_str(a.shape) +
                             " and " + shape_str(b.shape));
    }
    const int m = a.dim(-2), ka = a.dim(-1);
    const int kb = b.dim(-2), n = b.dim(-1);
    if (ka != kb) {
        throw DimensionError("matmul: inner axes disagree, " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    }
    const Shape lead_a(a.shape.begin(), a.shape.end() - 2);
    const Shape lead_b(b.shape.begin(), b.shape.end() - 2);
    bool a_batched, b_batched;
    Shape lead;
    if (lead_a == lead_b) {
        a_batched = b_batched = true;
        lead = lead_a;
    } else if (lead_b.empty()) {
        a_batched = true;
        b_batched = false;
        lead = lead_a;
    } else if (lead_a.empty()) {
        a_batched = false;
        b_batched = true;
        lead = lead_b;
    } else {
        throw DimensionError("matmul: incompatible leading axes, " + shape_str(a.shape) + " x " +
                             shape_str(b.shape));
    }
    const int batch = static_cast<int>(shape_numel(lead) / 1);

    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);

    const int k = ka;
    Tensor out = make_op(out_shape, {a, b}, [=](Node& nd) {
        const Tensor& pa = nd.parents[0];
        const Tensor& pb = nd.parents[1];
        const double* og = nd.out_grad->data();
        double* ga = grad_ptr(pa);
        double* gb = grad_ptr(pb);
        for (int bi = 0; bi < batch; ++bi) {
            const std::size_t oa = a_batched ? static_cast<std::size_t>(bi) * m * k : 0;
            const std::size_t ob = b_batched ? static_cast<std::size_t>(bi) * k * n : 0;
            const std::size_t oc = static_cast<std::size_t>(bi) * m * n;
            if (ga) mm_nt(og + oc, pb.data->data() + ob, ga + oa, m, n, k);
            if (gb) mm_tn(pa.data->data() + oa, og + oc, gb + ob, m, k, n);
        }
    });

    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (int bi = 0; bi < batch; ++bi) {
        const std::size_t oa = a_batched ? static_cast<std::size_t>(bi) * m * k : 0;
        const std::size_t ob = b_batched ? static_cast<std::size_t>(bi) * k * n : 0;
        mm_nn(pa + oa, pb + ob, po + static_cast<std::size_t>(bi) * m * n, m, k, n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape) + " as " +
                             shape_str(new_shape));
    }
    const bool rg = grad_enabled() && x.requires_grad;
    Tensor out;
    out.shape = std::move(new_shape);
    out.data = x.data;  // shared storage; forward ops never mutate inputs
    out.requires_grad = rg;
    if (rg) {
        out.grad = std::make_shared<std::vector<double>>(x.numel(), 0.0);
        out.node = std::make_shared<Node>();
        out.node->parents = {x};
        out.node->out_grad = out.grad;
        out.node->backward = [](Node& n) {
            const double* og = n.out_grad->data();
            if (double* gx = grad_ptr(n.parents[0])) {
                for (std::size_t i = 0; i < n.out_grad->size(); ++i) gx[i] += og[i];
            }
        };
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& dims) {
    const int r = x.rank();
    if (static_cast<int>(dims.size()) != r) {
        throw DimensionError("permute: need " + std::to_string(r) + " axes");
    }
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (int i = 0; i < r; ++i) {
        if (dims[i] < 0 || dims[i] >= r || seen[dims[i]]) {
            throw DimensionError("permute: invalid axis order");
        }
        seen[dims[i]] = true;
        out_shape[i] = x.shape[dims[i]];
    }

    const auto xstrides = row_major_strides(x.shape);
    // step[i] = stride in x for advancing out axis i
    std::vector<std::size_t> step(r);
    for (int i = 0; i < r; ++i) step[i] = xstrides[dims[i]];

    const auto walk = [r](const Shape& oshape, const std::vector<std::size_t>& stp,
                          const std::function<void(std::size_t, std::size_t)>& visit) {
        std::vector<int> idx(r, 0);
        std::size_t src = 0;
        const std::size_t total = shape_numel(oshape);
        for (std::size_t flat = 0; flat < total; ++flat) {
            visit(flat, src);
            for (int ax = r - 1; ax >= 0; --ax) {
                src += stp[ax];
                if (++idx[ax] < oshape[ax]) break;
                idx[ax] = 0;
                src -= stp[ax] * static_cast<std::size_t>(oshape[ax]);
            }
        }
    };

    Tensor out = make_op(out_shape, {x}, [out_shape, step, walk](Node& n) {
        const double* og = n.out_grad->data();
        if (double* gx = grad_ptr(n.parents[0])) {
            walk(out_shape, step, [&](std::size_t flat, std::size_t src) { gx[src] += og[flat]; });
        }
    });
    const double* px = x.data->data();
    double* po = out.data->data();
    walk(out_shape, step, [&](std::size_t flat, std::size_t src) { po[flat] = px[src]; });
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    std::vector<int> dims(x.rank());
    for (int i = 0; i < x.rank(); ++i) dims[i] = i;
    std::swap(dims[x.rank() - 1], dims[x.rank() - 2]);
    return permute(x, dims);
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
    if (a.rank() != b.rank() || a.rank() < 1) {
        throw DimensionError("concat_lastdim: rank mismatch");
    }
    for (int i = 0; i + 1 < a.rank(); ++i) {
        if (a.shape[i] != b.shape[i]) {
            throw DimensionError("concat_lastdim: " + shape_str(a.shape) + " vs " +
                                 shape_str(b.shape));
        }
    }
    const int na = a.dim(-1), nb = b.dim(-1);
    Shape out_shape = a.shape;
    out_shape.back() = na + nb;
    const std::size_t rows = a.numel() / na;

    Tensor out = make_op(out_shape, {a, b}, [rows, na, nb](Node& n) {
        const double* og = n.out_grad->data();
        double* ga = grad_ptr(n.parents[0]);
        double* gb = grad_ptr(n.parents[1]);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* orow = og + r * (na + nb);
            if (ga) {
                for (int i = 0; i < na; ++i) ga[r * na + i] += orow[i];
            }
            if (gb) {
                for (int i = 0; i < nb; ++i) gb[r * nb + i] += orow[na + i];
            }
        }
    });
    const double* pa = a.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(pa + r * na, pa + (r + 1) * na, po + r * (na + nb));
        std::copy(pb + r * nb, pb + (r + 1) * nb, po + r * (na + nb) + na);
    }
    return out;
}

Tensor slice_lastdim(const Tensor& x, int offset, int length) {
    const int n = x.dim(-1);
    if (offset < 0 || length <= 0 || offset + length > n) {
        throw DimensionError("slice_lastdim: [" + std::to_string(offset) + "," +
                             std::to_string(offset + length) + ") out of axis " + std::to_string(n));
    }
    Shape out_shape = x.shape;
    out_shape.back() = length;
    const std::size_t rows = x.numel() / n;

    Tensor out = make_op(out_shape, {x}, [rows, n, offset, length](Node& nd) {
        const double* og = nd.out_grad->data();
        if (double* gx = grad_ptr(nd.parents[0])) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (int i = 0; i < length; ++i) {
                    gx[r * n + offset + i] += og[r * length + i];
                }
            }
        }
    });
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy(px + r * n + offset, px + r * n + offset + length, po + r * length);
    }
    return out;
}

Tensor slice_axis0(const Tensor& x, int start, int length) {
    const int t = x.dim(0);
    if (start < 0 || length <= 0 || start + length > t) {
        throw DimensionError("slice_axis0: [" + std::to_string(start) + "," +
                             std::to_string(start + length) + ") out of axis " + std::to_string(t));
    }
    Shape out_shape = x.shape;
    out_shape[0] = length;
    const std::size_t row = x.numel() / t;

    Tensor out = make_op(out_shape, {x}, [row, start, length](Node& nd) {
        const double* og = nd.out_grad->data();
        if (double* gx = grad_ptr(nd.parents[0])) {
            const std::size_t off = static_cast<std::size_t>(start) * row;
            for (std::size_t i = 0; i < static_cast<std::size_t>(length) * row; ++i) {
                gx[off + i] += og[i];
            }
        }
    });
    std::copy(x.data->begin() + static_cast<std::size_t>(start) * row,
              x.data->begin() + static_cast<std::size_t>(start + length) * row, out.data->begin());
    return out;
}

Tensor row_gather(const Tensor& x, const std::vector<int>& indices) {
    const int t = x.dim(0);
    for (int i : indices) {
        if (i < 0 || i >= t) throw DimensionError("row_gather: index out of range");
    }
    Shape out_shape = x.shape;
    out_shape[0] = static_cast<int>(indices.size());
    const std::size_t row = x.numel() / t;

    Tensor out = make_op(out_shape, {x}, [row, indices](Node& nd) {
        const double* og = nd.out_grad->data();
        if (double* gx = grad_ptr(nd.parents[0])) {
            for (std::size_t r = 0; r < indices.size(); ++r) {
                const std::size_t src = static_cast<std::size_t>(indices[r]) * row;
                for (std::size_t i = 0; i < row; ++i) gx[src + i] += og[r * row + i];
            }
        }
    });
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy(px + static_cast<std::size_t>(indices[r]) * row,
                  px + static_cast<std::size_t>(indices[r] + 1) * row, po + r * row);
    }
    return out;
}

Tensor stack_axis0(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("stack_axis0: empty input");
    for (const auto& p : parts) check_same_shape(parts[0], p, "stack_axis0");
    Shape out_shape;
    out_shape.push_back(static_cast<int>(parts.size()));
    out_shape.insert(out_shape.end(), parts[0].shape.begin(), parts[0].shape.end());
    const std::size_t row = parts[0].numel();

    Tensor out = make_op(out_shape, parts, [row](Node& nd) {
        const double* og = nd.out_grad->data();
        for (std::size_t r = 0; r < nd.parents.size(); ++r) {
            if (double* gp = grad_ptr(nd.parents[r])) {
                for (std::size_t i = 0; i < row; ++i) gp[i] += og[r * row + i];
            }
        }
    });
    double* po = out.data->data();
    for (std::size_t r = 0; r < parts.size(); ++r) {
        std::copy(parts[r].data->begin(), parts[r].data->end(), po + r * row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x) {
    Tensor out = make_op(x.shape, {x}, nullptr);
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = 1.0 / (1.0 + std::exp(-px[i]));
    if (out.node) {
        auto saved = out.data;
        out.node->backward = [saved](Node& n) {
            const double* og = n.out_grad->data();
            const double* y = saved->data();
            if (double* gx = grad_ptr(n.parents[0])) {
                for (std::size_t i = 0; i < n.out_grad->size(); ++i) {
                    gx[i] += og[i] * y[i] * (1.0 - y[i]);
                }
            }
        };
    }
    return out;
}

Tensor tanh(const Tensor& x) {
    Tensor out = make_op(x.shape, {x}, nullptr);
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = std::tanh(px[i]);
    if (out.node) {
        auto saved = out.data;
        out.node->backward = [saved](Node& n) {
            const double* og = n.out_grad->data();
            const double* y = saved->data();
            if (double* gx = grad_ptr(n.parents[0])) {
                for (std::size_t i = 0; i < n.out_grad->size(); ++i) {
                    gx[i] += og[i] * (1.0 - y[i] * y[i]);
                }
            }
        };
    }
    return out;
}

Tensor exp(const Tensor& x) {
    Tensor out = make_op(x.shape, {x}, nullptr);
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = std::exp(px[i]);
    if (out.node) {
        auto saved = out.data;
        out.node->backward = [saved](Node& n) {
            const double* og = n.out_grad->data();
            const double* y = saved->data();
            if (double* gx = grad_ptr(n.parents[0])) {
                for (std::size_t i = 0; i < n.out_grad->size(); ++i) gx[i] += og[i] * y[i];
            }
        };
    }
    return out;
}

Tensor log(const Tensor& x) {
    Tensor out = make_op(x.shape, {x}, [](Node& n) {
        const double* og = n.out_grad->data();
        const double* px = n.parents[0].data->data();
        if (double* gx = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.out_grad->size(); ++i) gx[i] += og[i] / px[i];
        }
    });
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) po[i] = std::log(px[i]);
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = make_op(x.shape, {x}, [](Node& n) {
        const double* og = n.out_grad->data();
        const double* px = n.parents[0].data->data();
        if (double* gx = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.out_grad->size(); ++i) {
                const double v = px[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += og[i] * (cdf + v * pdf);
            }
        }
    });
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        po[i] = px[i] * 0.5 * (1.0 + std::erf(px[i] * kInvSqrt2));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

Tensor sum_all(const Tensor& x) {
    Tensor out = make_op({1}, {x}, [](Node& n) {
        const double g = (*n.out_grad)[0];
        if (double* gx = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.parents[0].numel(); ++i) gx[i] += g;
        }
    });
    double s = 0.0;
    for (double v : *x.data) s += v;
    (*out.data)[0] = s;
    return out;
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    Tensor out = make_op({1}, {x}, [inv](Node& n) {
        const double g = (*n.out_grad)[0] * inv;
        if (double* gx = grad_ptr(n.parents[0])) {
            for (std::size_t i = 0; i < n.parents[0].numel(); ++i) gx[i] += g;
        }
    });
    double s = 0.0;
    for (double v : *x.data) s += v;
    (*out.data)[0] = s * inv;
    return out;
}

// ---------------------------------------------------------------------------
// Softmax / layer norm
// ---------------------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("softmax: invalid axis");
    std::size_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.shape[i];
    for (int i = axis + 1; i < r; ++i) inner *= x.shape[i];
    const int len = x.shape[axis];

    Tensor out = make_op(x.shape, {x}, nullptr);
    const double* px = x.data->data();
    double* po = out.data->data();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            double mx = px[base];
            for (int l = 1; l < len; ++l) mx = std::max(mx, px[base + l * inner]);
            double denom = 0.0;
            for (int l = 0; l < len; ++l) {
                const double e = std::exp(px[base + l * inner] - mx);
                po[base + l * inner] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (int l = 0; l < len; ++l) po[base + l * inner] *= inv;
        }
    }
    if (out.node) {
        auto saved = out.data;
        out.node->backward = [saved, outer, inner, len](Node& n) {
            const double* og = n.out_grad->data();
            const double* y = saved->data();
            if (double* gx = grad_ptr(n.parents[0])) {
                for (std::size_t o = 0; o < outer; ++o) {
                    for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t base = o * len * inner + in;
                        double dot = 0.0;
                        for (int l = 0; l < len; ++l) {
                            dot += og[base + l * inner] * y[base + l * inner];
                        }
                        for (int l = 0; l < len; ++l) {
                            const std::size_t p = base + l * inner;
                            gx[p] += y[p] * (og[p] - dot);
                        }
                    }
                }
            }
        };
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int n = x.dim(-1);
    if (gain.shape != Shape{n} || bias.shape != Shape{n}) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
    }
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / n;

    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);

    Tensor out = make_op(x.shape, {x, gain, bias}, [mean, rstd, rows, n](Node& nd) {
        const double* og = nd.out_grad->data();
        const double* px = nd.parents[0].data->data();
        const double* pg = nd.parents[1].data->data();
        double* gx = grad_ptr(nd.parents[0]);
        double* gg = grad_ptr(nd.parents[1]);
        double* gb = grad_ptr(nd.parents[2]);
        std::vector<double> xhat(n), dxhat(n);
        for (std::size_t r = 0; r < rows; ++r) {
            const double mu = (*mean)[r];
            const double rs = (*rstd)[r];
            const double* xr = px + r * n;
            const double* ogr = og + r * n;
            double s1 = 0.0, s2 = 0.0;
            for (int i = 0; i < n; ++i) {
                xhat[i] = (xr[i] - mu) * rs;
                dxhat[i] = ogr[i] * pg[i];
                s1 += dxhat[i];
                s2 += dxhat[i] * xhat[i];
            }
            if (gx) {
                const double inv_n = 1.0 / n;
                for (int i = 0; i < n; ++i) {
                    gx[r * n + i] += rs * (dxhat[i] - inv_n * s1 - xhat[i] * inv_n * s2);
                }
            }
            if (gg) {
                for (int i = 0; i < n; ++i) gg[i] += ogr[i] * xhat[i];
            }
            if (gb) {
                for (int i = 0; i < n; ++i) gb[i] += ogr[i];
            }
        }
    });

    const double* px = x.data->data();
    const double* pg = gain.data->data();
    const double* pb = bias.data->data();
    double* po = out.data->data();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = px + r * n;
        double mu = 0.0;
        for (int i = 0; i < n; ++i) mu += xr[i];
        mu /= n;
        double var = 0.0;
        for (int i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= n;
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[r] = mu;
        (*rstd)[r] = rs;
        for (int i = 0; i < n; ++i) po[r * n + i] = (xr[i] - mu) * rs * pg[i] + pb[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// LSTM step
// ---------------------------------------------------------------------------

Tensor lstm_step(const Tensor& xg, int t, const Tensor& h_prev, const Tensor& c_prev,
                 const Tensor& w_hh) {
    if (xg.rank() != 3) throw DimensionError("lstm_step: xg must be [T,B,4H]");
    const int steps = xg.shape[0], batch = xg.shape[1], g4 = xg.shape[2];
    const int hidden = g4 / 4;
    if (g4 % 4 != 0 || t < 0 || t >= steps) throw DimensionError("lstm_step: bad gate axis or step");
    if (h_prev.shape != Shape{batch, hidden} || c_prev.shape != Shape{batch, hidden}) {
        throw DimensionError("lstm_step: state shape mismatch");
    }
    if (w_hh.shape != Shape{hidden, g4}) throw DimensionError("lstm_step: w_hh must be [H,4H]");

    const std::size_t cells = static_cast<std::size_t>(batch) * hidden;
    auto gi = std::make_shared<std::vector<double>>(cells);
    auto gf = std::make_shared<std::vector<double>>(cells);
    auto gg = std::make_shared<std::vector<double>>(cells);
    auto go = std::make_shared<std::vector<double>>(cells);
    auto tc = std::make_shared<std::vector<double>>(cells);

    Tensor out = make_op({batch, 2 * hidden}, {xg, h_prev, c_prev, w_hh},
                         [=](Node& nd) {
        const Tensor& pxg = nd.parents[0];
        const Tensor& ph = nd.parents[1];
        const Tensor& pc = nd.parents[2];
        const Tensor& pw = nd.parents[3];
        const double* og = nd.out_grad->data();
        const double* cp = pc.data->data();

        std::vector<double> dz(static_cast<std::size_t>(batch) * g4);
        double* gxg = grad_ptr(pxg);
        double* gh = grad_ptr(ph);
        double* gc = grad_ptr(pc);
        double* gw = grad_ptr(pw);

        for (int b = 0; b < batch; ++b) {
            for (int j = 0; j < hidden; ++j) {
                const std::size_t cj = static_cast<std::size_t>(b) * hidden + j;
                const double dh = og[static_cast<std::size_t>(b) * 2 * hidden + j];
                const double dc_slice = og[static_cast<std::size_t>(b) * 2 * hidden + hidden + j];
                const double iv = (*gi)[cj], fv = (*gf)[cj], gv = (*gg)[cj], ov = (*go)[cj];
                const double tcv = (*tc)[cj];
                const double do_ = dh * tcv;
                const double dc = dc_slice + dh * ov * (1.0 - tcv * tcv);
                const double di = dc * gv;
                const double dgv = dc * iv;
                const double df = dc * cp[cj];
                if (gc) gc[cj] += dc * fv;
                double* dzr = dz.data() + static_cast<std::size_t>(b) * g4;
                dzr[j] = di * iv * (1.0 - iv);
                dzr[hidden + j] = df * fv * (1.0 - fv);
                dzr[2 * hidden + j] = dgv * (1.0 - gv * gv);
                dzr[3 * hidden + j] = do_ * ov * (1.0 - ov);
            }
        }
        if (gxg) {
            double* dst = gxg + static_cast<std::size_t>(t) * batch * g4;
            for (std::size_t i = 0; i < dz.size(); ++i) dst[i] += dz[i];
        }
        if (gh) mm_nt(dz.data(), pw.data->data(), gh, batch, g4, hidden);
        if (gw) mm_tn(ph.data->data(), dz.data(), gw, batch, hidden, g4);
    });

    // forward: z = xg[t] + h_prev . w_hh; (i,f,o) sigmoid, g tanh
    std::vector<double> z(static_cast<std::size_t>(batch) * g4);
    std::copy(xg.data->begin() + static_cast<std::size_t>(t) * batch * g4,
              xg.data->begin() + static_cast<std::size_t>(t + 1) * batch * g4, z.begin());
    mm_nn(h_prev.data->data(), w_hh.data->data(), z.data(), batch, hidden, g4);

    const double* cp = c_prev.data->data();
    double* po = out.data->data();
    for (int b = 0; b < batch; ++b) {
        const double* zr = z.data() + static_cast<std::size_t>(b) * g4;
        for (int j = 0; j < hidden; ++j) {
            const std::size_t cj = static_cast<std::size_t>(b) * hidden + j;
            const double iv = 1.0 / (1.0 + std::exp(-zr[j]));
            const double fv = 1.0 / (1.0 + std::exp(-zr[hidden + j]));
            const double gv = std::tanh(zr[2 * hidden + j]);
            const double ov = 1.0 / (1.0 + std::exp(-zr[3 * hidden + j]));
            const double cv = fv * cp[cj] + iv * gv;
            const double tcv = std::tanh(cv);
            if (out.node) {
                (*gi)[cj] = iv;
                (*gf)[cj] = fv;
                (*gg)[cj] = gv;
                (*go)[cj] = ov;
                (*tc)[cj] = tcv;
            }
            po[static_cast<std::size_t>(b) * 2 * hidden + j] = ov * tcv;
            po[static_cast<std::size_t>(b) * 2 * hidden + hidden + j] = cv;
        }
    }
    if (!out.node) {
        // saved activations not needed
    }
    return out;
}

// ---------------------------------------------------------------------------
// Strided conv with edge replication
// ---------------------------------------------------------------------------

Tensor conv1d_stride(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
    if (x.rank() != 2 || w.rank() != 3 || b.rank() != 1) {
        throw DimensionError("conv1d_stride: x [L,Cin], w [K,Cin,Cout], b [Cout]");
    }
    const int len = x.shape[0], cin = x.shape[1];
    const int k = w.shape[0], cout = w.shape[2];
    if (w.shape[1] != cin || b.shape[0] != cout) {
        throw DimensionError("conv1d_stride: channel mismatch, x " + shape_str(x.shape) +
                             " w " + shape_str(w.shape));
    }
    if (stride < 1 || len < stride) {
        throw ContractError("conv1d_stride: input length " + std::to_string(len) +
                            " shorter than stride " + std::to_string(stride));
    }
    const int out_len = len / stride;
    const int half = (k - 1) / 2;

    Tensor out = make_op({out_len, cout}, {x, w, b}, [=](Node& nd) {
        const double* og = nd.out_grad->data();
        const double* px = nd.parents[0].data->data();
        const double* pw = nd.parents[1].data->data();
        double* gx = grad_ptr(nd.parents[0]);
        double* gw = grad_ptr(nd.parents[1]);
        double* gb = grad_ptr(nd.parents[2]);
        for (int t = 0; t < out_len; ++t) {
            const double* ot = og + static_cast<std::size_t>(t) * cout;
            if (gb) {
                for (int co = 0; co < cout; ++co) gb[co] += ot[co];
            }
            for (int j = 0; j < k; ++j) {
                int src = t * stride + j - half;
                src = std::clamp(src, 0, len - 1);
                const double* xr = px + static_cast<std::size_t>(src) * cin;
                const double* wr = pw + (static_cast<std::size_t>(j) * cin) * cout;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* wc = wr + static_cast<std::size_t>(ci) * cout;
                    if (gx) {
                        double s = 0.0;
                        for (int co = 0; co < cout; ++co) s += ot[co] * wc[co];
                        gx[static_cast<std::size_t>(src) * cin + ci] += s;
                    }
                    if (gw) {
                        double* gwc = gw + (static_cast<std::size_t>(j) * cin + ci) * cout;
                        const double xv = xr[ci];
                        for (int co = 0; co < cout; ++co) gwc[co] += xv * ot[co];
                    }
                }
            }
        }
    });

    const double* px = x.data->data();
    const double* pw = w.data->data();
    const double* pb = b.data->data();
    double* po = out.data->data();
    for (int t = 0; t < out_len; ++t) {
        double* ot = po + static_cast<std::size_t>(t) * cout;
        for (int co = 0; co < cout; ++co) ot[co] = pb[co];
        for (int j = 0; j < k; ++j) {
            int src = t * stride + j - half;
            src = std::clamp(src, 0, len - 1);
            const double* xr = px + static_cast<std::size_t>(src) * cin;
            const double* wr = pw + (static_cast<std::size_t>(j) * cin) * cout;
            for (int ci = 0; ci < cin; ++ci) {
                const double xv = xr[ci];
                const double* wc = wr + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) ot[co] += xv * wc[co];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Masked BCE-sum loss
// ---------------------------------------------------------------------------

namespace {
constexpr double kClamp = 1e-12;  // probability clamp for the log terms
}

Tensor bce_sum_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    if (pred.rank() != 2) throw DimensionError("bce_sum_loss: pred must be [T,S]");
    check_same_shape(pred, target, "bce_sum_loss");
    const int t_len = pred.shape[0], s_len = pred.shape[1];
    if (mask.shape != Shape{t_len}) {
        throw DimensionError("bce_sum_loss: mask must be [" + std::to_string(t_len) + "]");
    }
    const double* py = target.data->data();
    const double* pm = mask.data->data();
    double masked = 0.0;
    for (int t = 0; t < t_len; ++t) {
        if (pm[t] != 0.0 && pm[t] != 1.0) {
            throw ContractError("bce_sum_loss: mask must be binary");
        }
        masked += pm[t];
    }
    for (std::size_t i = 0; i < target.numel(); ++i) {
        if (py[i] != 0.0 && py[i] != 1.0) {
            throw ContractError("bce_sum_loss: target must be binary");
        }
    }
    if (masked == 0.0) throw ContractError("bce_sum_loss: mask selects no frames");
    const double inv = 1.0 / (masked * s_len);

    Tensor out = make_op({1}, {pred, target, mask}, [t_len, s_len, inv](Node& nd) {
        const double g = (*nd.out_grad)[0] * inv;
        const double* pp = nd.parents[0].data->data();
        const double* py = nd.parents[1].data->data();
        const double* pm = nd.parents[2].data->data();
        if (double* gp = grad_ptr(nd.parents[0])) {
            for (int t = 0; t < t_len; ++t) {
                if (pm[t] == 0.0) continue;
                for (int s = 0; s < s_len; ++s) {
                    const std::size_t i = static_cast<std::size_t>(t) * s_len + s;
                    const double p = std::clamp(pp[i], kClamp, 1.0 - kClamp);
                    gp[i] += g * (-py[i] / p + (1.0 - py[i]) / (1.0 - p));
                }
            }
        }
    });

    const double* pp = pred.data->data();
    double loss = 0.0;
    for (int t = 0; t < t_len; ++t) {
        if (pm[t] == 0.0) continue;
        for (int s = 0; s < s_len; ++s) {
            const std::size_t i = static_cast<std::size_t>(t) * s_len + s;
            const double p = std::clamp(pp[i], kClamp, 1.0 - kClamp);
            loss -= py[i] * std::log(p) + (1.0 - py[i]) * std::log(1.0 - p);
        }
    }
    (*out.data)[0] = loss * inv;
    return out;
}

}  // namespace diarkit
