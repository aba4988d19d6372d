#include "vitcn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#ifdef VITCN_USE_CBLAS
#include <cblas.h>
#endif

namespace vitcn {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

namespace {

void validate_shape(const Shape& s) {
    if (s.empty()) throw shape_error("tensor shape must have at least one dimension");
    for (int64_t d : s) {
        if (d <= 0) throw shape_error("tensor dimensions must be positive, got " + shape_str(s));
    }
}

void require_rank2(const Tensor& t, const char* what) {
    if (t.rank() != 2)
        throw shape_error(std::string(what) + " requires a rank-2 tensor, got " + shape_str(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape() != b.shape())
        throw shape_error(std::string(what) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
}

void ensure_grad(detail::TensorNode* n) {
    if (n->grad.empty()) n->grad.assign(n->data.size(), 0.0);
}

void free_grad(detail::TensorNode* n) {
    std::vector<double>().swap(n->grad);
}

thread_local Tape* g_active_tape = nullptr;

// GEMM on row-major buffers: C = alpha * op(A) * op(B) + beta * C, where
// op(A) is [m,k] and op(B) is [k,n]. lda/ldb are the leading dimensions of
// the stored (untransposed) matrices.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, double alpha,
          const double* a, int64_t lda, const double* b, int64_t ldb, double beta, double* c,
          int64_t ldc) {
#ifdef VITCN_USE_CBLAS
    static const bool init_once = [] {
        openblas_set_num_threads(1);
        return true;
    }();
    (void)init_once;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
                beta, c, static_cast<int>(ldc));
#else
    if (beta == 0.0) {
        for (int64_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    } else if (beta != 1.0) {
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j) c[i * ldc + j] *= beta;
    }
    auto a_at = [&](int64_t i, int64_t p) { return trans_a ? a[p * lda + i] : a[i * lda + p]; };
    for (int64_t i = 0; i < m; ++i) {
        double* ci = c + i * ldc;
        for (int64_t p = 0; p < k; ++p) {
            const double av = alpha * a_at(i, p);
            if (trans_b) {
                const double* bp = b + p; // column p of B
                for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j * ldb];
            } else {
                const double* bp = b + p * ldb;
                for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    }
#endif
}

} // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    validate_shape(shape);
    auto n = std::make_shared<detail::TensorNode>();
    n->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, double value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    validate_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
        throw shape_error("from_data: shape " + shape_str(shape) + " expects " +
                          std::to_string(shape_numel(shape)) + " values, got " +
                          std::to_string(values.size()));
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (numel() != 1)
        throw contract_error("item() requires a single-element tensor, got " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(int64_t r, int64_t c) const {
    require_rank2(*this, "at");
    return node_->data[static_cast<size_t>(r * dim(1) + c)];
}

std::span<double> Tensor::grad() {
    ensure_grad(node_.get());
    return node_->grad;
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty())
        throw contract_error("grad accessed before backward populated it");
    return node_->grad;
}

Tensor Tensor::clone() const {
    auto n = std::make_shared<detail::TensorNode>();
    n->shape = node_->shape;
    n->data = node_->data;
    n->requires_grad = node_->requires_grad;
    return Tensor(std::move(n));
}

// ---- Tape ------------------------------------------------------------------

Tape* active_tape() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

void record_entry(std::function<void()> fn, const Tensor& output) {
    Tape* t = g_active_tape;
    output.node()->produced_on_tape = true;
    t->entries_.push_back({std::move(fn), output.node()});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw contract_error("backward requires a scalar loss, got shape " +
                             shape_str(loss.shape()));
    if (consumed_) throw contract_error("backward called twice on the same tape");
    consumed_ = true;
    loss.node()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backward();
        // This entry produced `output`; all consumers sit later on the tape
        // and have already run, so its grad buffer is finished with.
        free_grad(it->output.get());
    }
}

void Tape::clear() {
    entries_.clear();
    consumed_ = false;
}

// ---- op helpers ------------------------------------------------------------

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
    if (!g_active_tape) return false;
    for (const Tensor* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

using NodePtr = std::shared_ptr<detail::TensorNode>;

} // namespace

// ---- matmul / transpose ----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                          shape_str(b.shape()));
    Tensor out = Tensor::zeros({m, n});
    gemm(false, false, m, n, k, 1.0, a.data().data(), k, b.data().data(), n, 0.0,
         out.data().data(), n);
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        record_entry(
            [an, bn, on, m, k, n] {
                if (on->grad.empty()) return;
                const double* dc = on->grad.data();
                if (an->requires_grad) {
                    ensure_grad(an.get()); // dA += dC * B^T
                    gemm(false, true, m, k, n, 1.0, dc, n, bn->data.data(), n, 1.0,
                         an->grad.data(), k);
                }
                if (bn->requires_grad) {
                    ensure_grad(bn.get()); // dB += A^T * dC
                    gemm(true, false, k, n, m, 1.0, an->data.data(), k, dc, n, 1.0,
                         bn->grad.data(), n);
                }
            },
            out);
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_rank2(a, "transpose");
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({n, m});
    const double* src = a.data().data();
    double* dst = out.data().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, m, n] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double* dg = on->grad.data();
                double* ag = an->grad.data();
                for (int64_t j = 0; j < n; ++j)
                    for (int64_t i = 0; i < m; ++i) ag[i * n + j] += dg[j * m + i];
            },
            out);
    }
    return out;
}

// ---- elementwise -----------------------------------------------------------

namespace {

// Shared recorder for ops with elementwise backward into each input.
void record_binary(const Tensor& a, const Tensor& b, Tensor& out, double sign_b) {
    NodePtr an = a.node(), bn = b.node(), on = out.node();
    record_entry(
        [an, bn, on, sign_b] {
            if (on->grad.empty()) return;
            const double* g = on->grad.data();
            const size_t n = on->data.size();
            if (an->requires_grad) {
                ensure_grad(an.get());
                for (size_t i = 0; i < n; ++i) an->grad[i] += g[i];
            }
            if (bn->requires_grad) {
                ensure_grad(bn.get());
                for (size_t i = 0; i < n; ++i) bn->grad[i] += sign_b * g[i];
            }
        },
        out);
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record_binary(a, b, out, 1.0);
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        record_binary(a, b, out, -1.0);
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    if (should_record({&a, &b})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), bn = b.node(), on = out.node();
        record_entry(
            [an, bn, on] {
                if (on->grad.empty()) return;
                const double* g = on->grad.data();
                const size_t n = on->data.size();
                if (an->requires_grad) {
                    ensure_grad(an.get());
                    for (size_t i = 0; i < n; ++i) an->grad[i] += g[i] * bn->data[i];
                }
                if (bn->requires_grad) {
                    ensure_grad(bn.get());
                    for (size_t i = 0; i < n; ++i) bn->grad[i] += g[i] * an->data[i];
                }
            },
            out);
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = c * pa[i];
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, c] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                for (size_t i = 0; i < on->data.size(); ++i) an->grad[i] += c * on->grad[i];
            },
            out);
    }
    return out;
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    require_rank2(a, "add_row");
    const int64_t m = a.dim(0), n = a.dim(1);
    if (row.numel() != n)
        throw shape_error("add_row: row " + shape_str(row.shape()) + " does not match columns of " +
                          shape_str(a.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    const double* pr = row.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) po[i * n + j] = pa[i * n + j] + pr[j];
    if (should_record({&a, &row})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), rn = row.node(), on = out.node();
        record_entry(
            [an, rn, on, m, n] {
                if (on->grad.empty()) return;
                const double* g = on->grad.data();
                if (an->requires_grad) {
                    ensure_grad(an.get());
                    for (int64_t i = 0; i < m * n; ++i) an->grad[i] += g[i];
                }
                if (rn->requires_grad) {
                    ensure_grad(rn.get());
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < n; ++j) rn->grad[j] += g[i * n + j];
                }
            },
            out);
    }
    return out;
}

// ---- views-by-copy ----------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
    validate_shape(shape);
    if (shape_numel(shape) != a.numel())
        throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                          shape_str(shape));
    Tensor out = Tensor::from_data(std::move(shape),
                                   std::vector<double>(a.data().begin(), a.data().end()));
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                for (size_t i = 0; i < on->data.size(); ++i) an->grad[i] += on->grad[i];
            },
            out);
    }
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: empty input list");
    const int64_t n = parts[0].rank() == 2 ? parts[0].dim(1) : -1;
    int64_t rows = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.dim(1) != n)
            throw shape_error("concat_rows: column mismatch, " + shape_str(parts[0].shape()) +
                              " vs " + shape_str(p.shape()));
        rows += p.dim(0);
    }
    Tensor out = Tensor::zeros({rows, n});
    double* po = out.data().data();
    int64_t r = 0;
    bool rec = false;
    for (const Tensor& p : parts) {
        std::memcpy(po + r * n, p.data().data(), sizeof(double) * static_cast<size_t>(p.numel()));
        r += p.dim(0);
        rec = rec || p.requires_grad();
    }
    if (g_active_tape && rec) {
        out.set_requires_grad(true);
        std::vector<NodePtr> nodes;
        std::vector<int64_t> offsets;
        int64_t off = 0;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            offsets.push_back(off);
            off += p.numel();
        }
        NodePtr on = out.node();
        record_entry(
            [nodes, offsets, on] {
                if (on->grad.empty()) return;
                const double* g = on->grad.data();
                for (size_t i = 0; i < nodes.size(); ++i) {
                    if (!nodes[i]->requires_grad) continue;
                    ensure_grad(nodes[i].get());
                    const size_t cnt = nodes[i]->data.size();
                    for (size_t j = 0; j < cnt; ++j)
                        nodes[i]->grad[j] += g[static_cast<size_t>(offsets[i]) + j];
                }
            },
            out);
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: empty input list");
    const int64_t m = parts[0].rank() == 2 ? parts[0].dim(0) : -1;
    int64_t cols = 0;
    for (const Tensor& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.dim(0) != m)
            throw shape_error("concat_cols: row mismatch, " + shape_str(parts[0].shape()) +
                              " vs " + shape_str(p.shape()));
        cols += p.dim(1);
    }
    Tensor out = Tensor::zeros({m, cols});
    double* po = out.data().data();
    int64_t c = 0;
    bool rec = false;
    for (const Tensor& p : parts) {
        const int64_t pn = p.dim(1);
        const double* pp = p.data().data();
        for (int64_t i = 0; i < m; ++i)
            std::memcpy(po + i * cols + c, pp + i * pn, sizeof(double) * static_cast<size_t>(pn));
        c += pn;
        rec = rec || p.requires_grad();
    }
    if (g_active_tape && rec) {
        out.set_requires_grad(true);
        std::vector<NodePtr> nodes;
        std::vector<int64_t> col_offsets, widths;
        int64_t off = 0;
        for (const Tensor& p : parts) {
            nodes.push_back(p.node());
            col_offsets.push_back(off);
            widths.push_back(p.dim(1));
            off += p.dim(1);
        }
        NodePtr on = out.node();
        record_entry(
            [nodes, col_offsets, widths, on, m, cols] {
                if (on->grad.empty()) return;
                const double* g = on->grad.data();
                for (size_t p = 0; p < nodes.size(); ++p) {
                    if (!nodes[p]->requires_grad) continue;
                    ensure_grad(nodes[p].get());
                    double* pg = nodes[p]->grad.data();
                    for (int64_t i = 0; i < m; ++i)
                        for (int64_t j = 0; j < widths[p]; ++j)
                            pg[i * widths[p] + j] += g[i * cols + col_offsets[p] + j];
                }
            },
            out);
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int64_t begin, int64_t count) {
    require_rank2(a, "slice_rows");
    const int64_t m = a.dim(0), n = a.dim(1);
    if (begin < 0 || count <= 0 || begin + count > m)
        throw contract_error("slice_rows: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of bounds for " +
                             shape_str(a.shape()));
    Tensor out = Tensor::zeros({count, n});
    std::memcpy(out.data().data(), a.data().data() + begin * n,
                sizeof(double) * static_cast<size_t>(count * n));
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, begin, n, count] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                double* ag = an->grad.data() + begin * n;
                for (int64_t i = 0; i < count * n; ++i) ag[i] += on->grad[i];
            },
            out);
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int64_t begin, int64_t count) {
    require_rank2(a, "slice_cols");
    const int64_t m = a.dim(0), n = a.dim(1);
    if (begin < 0 || count <= 0 || begin + count > n)
        throw contract_error("slice_cols: range [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of bounds for " +
                             shape_str(a.shape()));
    Tensor out = Tensor::zeros({m, count});
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < m; ++i)
        std::memcpy(po + i * count, pa + i * n + begin, sizeof(double) * static_cast<size_t>(count));
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, begin, m, n, count] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double* g = on->grad.data();
                double* ag = an->grad.data();
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < count; ++j) ag[i * n + begin + j] += g[i * count + j];
            },
            out);
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int64_t>& rows) {
    require_rank2(a, "gather_rows");
    const int64_t m = a.dim(0), n = a.dim(1);
    for (int64_t r : rows)
        if (r < 0 || r >= m)
            throw contract_error("gather_rows: row " + std::to_string(r) + " out of bounds for " +
                                 shape_str(a.shape()));
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), n});
    double* po = out.data().data();
    const double* pa = a.data().data();
    for (size_t i = 0; i < rows.size(); ++i)
        std::memcpy(po + i * n, pa + rows[i] * n, sizeof(double) * static_cast<size_t>(n));
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        auto idx = rows;
        record_entry(
            [an, on, idx, n] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double* g = on->grad.data();
                for (size_t i = 0; i < idx.size(); ++i)
                    for (int64_t j = 0; j < n; ++j) an->grad[idx[i] * n + j] += g[i * n + j];
            },
            out);
    }
    return out;
}

Tensor tile_rows(const Tensor& a, int64_t times) {
    require_rank2(a, "tile_rows");
    if (times <= 0) throw contract_error("tile_rows: times must be positive");
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({m * times, n});
    for (int64_t t = 0; t < times; ++t)
        std::memcpy(out.data().data() + t * m * n, a.data().data(),
                    sizeof(double) * static_cast<size_t>(m * n));
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, times, m, n] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double* g = on->grad.data();
                for (int64_t t = 0; t < times; ++t)
                    for (int64_t i = 0; i < m * n; ++i) an->grad[i] += g[t * m * n + i];
            },
            out);
    }
    return out;
}

Tensor reindex(const Tensor& a, const std::vector<int64_t>& map, Shape out_shape) {
    validate_shape(out_shape);
    if (static_cast<int64_t>(map.size()) != shape_numel(out_shape))
        throw shape_error("reindex: map size " + std::to_string(map.size()) +
                          " does not match output " + shape_str(out_shape));
    for (int64_t src : map)
        if (src < 0 || src >= a.numel())
            throw contract_error("reindex: source index " + std::to_string(src) +
                                 " out of bounds for " + shape_str(a.shape()));
    Tensor out = Tensor::zeros(std::move(out_shape));
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (size_t i = 0; i < map.size(); ++i) po[i] = pa[map[i]];
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        auto idx = map;
        record_entry(
            [an, on, idx] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                for (size_t i = 0; i < idx.size(); ++i) an->grad[idx[i]] += on->grad[i];
            },
            out);
    }
    return out;
}

// ---- reductions ------------------------------------------------------------

Tensor sum_rows(const Tensor& a) {
    require_rank2(a, "sum_rows");
    const int64_t m = a.dim(0), n = a.dim(1);
    Tensor out = Tensor::zeros({1, n});
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) po[j] += pa[i * n + j];
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, m, n] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j];
            },
            out);
    }
    return out;
}

Tensor mean_rows(const Tensor& a) { return scale(sum_rows(a), 1.0 / static_cast<double>(a.dim(0))); }

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    Tensor out = Tensor::from_data({1}, {s});
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double g = on->grad[0];
                for (size_t i = 0; i < an->data.size(); ++i) an->grad[i] += g;
            },
            out);
    }
    return out;
}

// ---- nonlinearities ---------------------------------------------------------

Tensor softmax(const Tensor& a, int64_t axis) {
    const int64_t r = a.rank();
    if (axis < 0 || axis >= r)
        throw contract_error("softmax: axis " + std::to_string(axis) + " invalid for " +
                             shape_str(a.shape()));
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < axis; ++i) outer *= a.dim(static_cast<size_t>(i));
    for (int64_t i = axis + 1; i < r; ++i) inner *= a.dim(static_cast<size_t>(i));
    const int64_t len = a.dim(static_cast<size_t>(axis));

    Tensor out = Tensor::zeros(a.shape());
    const double* pa = a.data().data();
    double* po = out.data().data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * len * inner + in;
            double mx = pa[base];
            for (int64_t i = 1; i < len; ++i) mx = std::max(mx, pa[base + i * inner]);
            double sum = 0.0;
            for (int64_t i = 0; i < len; ++i) {
                const double e = std::exp(pa[base + i * inner] - mx);
                po[base + i * inner] = e;
                sum += e;
            }
            const double inv = 1.0 / sum;
            for (int64_t i = 0; i < len; ++i) po[base + i * inner] *= inv;
        }
    }
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, outer, inner, len] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double* y = on->data.data();
                const double* g = on->grad.data();
                double* ag = an->grad.data();
                for (int64_t o = 0; o < outer; ++o) {
                    for (int64_t in = 0; in < inner; ++in) {
                        const int64_t base = o * len * inner + in;
                        double dot = 0.0;
                        for (int64_t i = 0; i < len; ++i)
                            dot += g[base + i * inner] * y[base + i * inner];
                        for (int64_t i = 0; i < len; ++i)
                            ag[base + i * inner] +=
                                y[base + i * inner] * (g[base + i * inner] - dot);
                    }
                }
            },
            out);
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw contract_error("layer_norm: eps must be positive");
    const int64_t d = x.dim(static_cast<size_t>(x.rank() - 1));
    if (gamma.numel() != d || beta.numel() != d)
        throw shape_error("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " +
                          shape_str(beta.shape()) + " do not match last dimension of " +
                          shape_str(x.shape()));
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    double* po = out.data().data();

    // Row statistics are recomputed in the backward rule, so only the output
    // is retained here.
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = px + r * d;
        double mean = 0.0;
        for (int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d); // biased estimate
        const double inv = 1.0 / std::sqrt(var + eps);
        double* orow = po + r * d;
        for (int64_t j = 0; j < d; ++j) orow[j] = pg[j] * (row[j] - mean) * inv + pb[j];
    }
    if (should_record({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        record_entry(
            [xn, gn, bn, on, rows, d, eps] {
                if (on->grad.empty()) return;
                const double* px = xn->data.data();
                const double* pg = gn->data.data();
                const double* g = on->grad.data();
                if (xn->requires_grad) ensure_grad(xn.get());
                if (gn->requires_grad) ensure_grad(gn.get());
                if (bn->requires_grad) ensure_grad(bn.get());
                std::vector<double> xhat(static_cast<size_t>(d));
                for (int64_t r = 0; r < rows; ++r) {
                    const double* row = px + r * d;
                    const double* grow = g + r * d;
                    double mean = 0.0;
                    for (int64_t j = 0; j < d; ++j) mean += row[j];
                    mean /= static_cast<double>(d);
                    double var = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double c = row[j] - mean;
                        var += c * c;
                    }
                    var /= static_cast<double>(d);
                    const double inv = 1.0 / std::sqrt(var + eps);
                    for (int64_t j = 0; j < d; ++j) xhat[j] = (row[j] - mean) * inv;

                    if (gn->requires_grad)
                        for (int64_t j = 0; j < d; ++j) gn->grad[j] += grow[j] * xhat[j];
                    if (bn->requires_grad)
                        for (int64_t j = 0; j < d; ++j) bn->grad[j] += grow[j];
                    if (xn->requires_grad) {
                        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                        for (int64_t j = 0; j < d; ++j) {
                            const double dxh = grow[j] * pg[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xhat[j];
                        }
                        const double invd = 1.0 / static_cast<double>(d);
                        double* xg = xn->grad.data() + r * d;
                        for (int64_t j = 0; j < d; ++j) {
                            const double dxh = grow[j] * pg[j];
                            xg[j] += inv * (dxh - invd * sum_dxhat - xhat[j] * invd * sum_dxhat_xhat);
                        }
                    }
                }
            },
            out);
    }
    return out;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

} // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * normal_cdf(px[i]);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        record_entry(
            [xn, on] {
                if (on->grad.empty() || !xn->requires_grad) return;
                ensure_grad(xn.get());
                for (size_t i = 0; i < xn->data.size(); ++i) {
                    const double v = xn->data[i];
                    const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                    xn->grad[i] += on->grad[i] * (normal_cdf(v) + v * pdf);
                }
            },
            out);
    }
    return out;
}

namespace {

double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Tensor softplus(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = softplus_scalar(px[i]);
    if (should_record({&x})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), on = out.node();
        record_entry(
            [xn, on] {
                if (on->grad.empty() || !xn->requires_grad) return;
                ensure_grad(xn.get());
                for (size_t i = 0; i < xn->data.size(); ++i)
                    xn->grad[i] += on->grad[i] * sigmoid_scalar(xn->data[i]);
            },
            out);
    }
    return out;
}

Tensor logsumexp(const Tensor& a) {
    const double* pa = a.data().data();
    double mx = pa[0];
    for (int64_t i = 1; i < a.numel(); ++i) mx = std::max(mx, pa[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) sum += std::exp(pa[i] - mx);
    const double v = mx + std::log(sum);
    Tensor out = Tensor::from_data({1}, {v});
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, v] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                const double g = on->grad[0];
                for (size_t i = 0; i < an->data.size(); ++i)
                    an->grad[i] += g * std::exp(an->data[i] - v);
            },
            out);
    }
    return out;
}

Tensor pick(const Tensor& a, int64_t index) {
    if (index < 0 || index >= a.numel())
        throw contract_error("pick: index " + std::to_string(index) + " out of range for " +
                             shape_str(a.shape()));
    Tensor out = Tensor::from_data({1}, {a.data()[static_cast<size_t>(index)]});
    if (should_record({&a})) {
        out.set_requires_grad(true);
        NodePtr an = a.node(), on = out.node();
        record_entry(
            [an, on, index] {
                if (on->grad.empty() || !an->requires_grad) return;
                ensure_grad(an.get());
                an->grad[static_cast<size_t>(index)] += on->grad[0];
            },
            out);
    }
    return out;
}

// ---- batch norm --------------------------------------------------------------

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        Tensor& running_mean, Tensor& running_var, double momentum, double eps) {
    require_rank2(x, "batch_norm_train");
    const int64_t b = x.dim(0), f = x.dim(1);
    if (gamma.numel() != f || beta.numel() != f || running_mean.numel() != f ||
        running_var.numel() != f)
        throw shape_error("batch_norm_train: parameter size does not match features of " +
                          shape_str(x.shape()));

    std::vector<double> mean(static_cast<size_t>(f), 0.0), var(static_cast<size_t>(f), 0.0);
    const double* px = x.data().data();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < f; ++j) mean[static_cast<size_t>(j)] += px[i * f + j];
    for (int64_t j = 0; j < f; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(b);
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < f; ++j) {
            const double c = px[i * f + j] - mean[static_cast<size_t>(j)];
            var[static_cast<size_t>(j)] += c * c;
        }
    for (int64_t j = 0; j < f; ++j) var[static_cast<size_t>(j)] /= static_cast<double>(b);

    // Fold batch statistics into the running buffers; this mutation lives
    // outside the computation graph.
    {
        std::span<double> rm = running_mean.data();
        std::span<double> rv = running_var.data();
        for (int64_t j = 0; j < f; ++j) {
            rm[static_cast<size_t>(j)] = (1.0 - momentum) * rm[static_cast<size_t>(j)] +
                                         momentum * mean[static_cast<size_t>(j)];
            rv[static_cast<size_t>(j)] = (1.0 - momentum) * rv[static_cast<size_t>(j)] +
                                         momentum * var[static_cast<size_t>(j)];
        }
    }

    Tensor out = Tensor::zeros(x.shape());
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    double* po = out.data().data();
    std::vector<double> inv(static_cast<size_t>(f));
    for (int64_t j = 0; j < f; ++j)
        inv[static_cast<size_t>(j)] = 1.0 / std::sqrt(var[static_cast<size_t>(j)] + eps);
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < f; ++j)
            po[i * f + j] = pg[j] * (px[i * f + j] - mean[static_cast<size_t>(j)]) *
                                inv[static_cast<size_t>(j)] +
                            pb[j];

    if (should_record({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        record_entry(
            [xn, gn, bn, on, b, f, mean, inv] {
                if (on->grad.empty()) return;
                const double* px = xn->data.data();
                const double* pg = gn->data.data();
                const double* g = on->grad.data();
                if (xn->requires_grad) ensure_grad(xn.get());
                if (gn->requires_grad) ensure_grad(gn.get());
                if (bn->requires_grad) ensure_grad(bn.get());
                for (int64_t j = 0; j < f; ++j) {
                    const size_t ju = static_cast<size_t>(j);
                    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0, sum_g = 0.0;
                    for (int64_t i = 0; i < b; ++i) {
                        const double xhat = (px[i * f + j] - mean[ju]) * inv[ju];
                        const double dxh = g[i * f + j] * pg[j];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat;
                        sum_g += g[i * f + j];
                        if (gn->requires_grad) gn->grad[ju] += g[i * f + j] * xhat;
                    }
                    if (bn->requires_grad) bn->grad[ju] += sum_g;
                    if (xn->requires_grad) {
                        const double invb = 1.0 / static_cast<double>(b);
                        for (int64_t i = 0; i < b; ++i) {
                            const double xhat = (px[i * f + j] - mean[ju]) * inv[ju];
                            const double dxh = g[i * f + j] * pg[j];
                            xn->grad[static_cast<size_t>(i * f + j)] +=
                                inv[ju] * (dxh - invb * sum_dxhat - xhat * invb * sum_dxhat_xhat);
                        }
                    }
                }
            },
            out);
    }
    return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Tensor& running_mean, const Tensor& running_var, double eps) {
    require_rank2(x, "batch_norm_eval");
    const int64_t b = x.dim(0), f = x.dim(1);
    if (gamma.numel() != f || beta.numel() != f || running_mean.numel() != f ||
        running_var.numel() != f)
        throw shape_error("batch_norm_eval: parameter size does not match features of " +
                          shape_str(x.shape()));
    Tensor out = Tensor::zeros(x.shape());
    const double* px = x.data().data();
    const double* pg = gamma.data().data();
    const double* pb = beta.data().data();
    const double* pm = running_mean.data().data();
    const double* pv = running_var.data().data();
    double* po = out.data().data();
    for (int64_t i = 0; i < b; ++i)
        for (int64_t j = 0; j < f; ++j)
            po[i * f + j] = pg[j] * (px[i * f + j] - pm[j]) / std::sqrt(pv[j] + eps) + pb[j];
    if (should_record({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
        NodePtr mn = running_mean.node(), vn = running_var.node();
        record_entry(
            [xn, gn, bn, mn, vn, on, b, f, eps] {
                if (on->grad.empty()) return;
                const double* px = xn->data.data();
                const double* pg = gn->data.data();
                const double* pm = mn->data.data();
                const double* pv = vn->data.data();
                const double* g = on->grad.data();
                if (xn->requires_grad) ensure_grad(xn.get());
                if (gn->requires_grad) ensure_grad(gn.get());
                if (bn->requires_grad) ensure_grad(bn.get());
                for (int64_t j = 0; j < f; ++j) {
                    const double inv = 1.0 / std::sqrt(pv[j] + eps);
                    for (int64_t i = 0; i < b; ++i) {
                        const double gij = g[i * f + j];
                        if (xn->requires_grad)
                            xn->grad[static_cast<size_t>(i * f + j)] += gij * pg[j] * inv;
                        if (gn->requires_grad)
                            gn->grad[static_cast<size_t>(j)] += gij * (px[i * f + j] - pm[j]) * inv;
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(j)] += gij;
                    }
                }
            },
            out);
    }
    return out;
}

void fill_trunc_normal(Tensor& t, Rng& rng, double std_dev) {
    for (double& v : t.data()) v = rng.trunc_normal(std_dev);
}

} // namespace vitcn
