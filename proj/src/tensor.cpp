#include "xmm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "xmm/errors.hpp"

namespace xmm {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

TensorPtr make_node(std::vector<std::size_t> shape, std::vector<double> values) {
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    return node;
}

// Wires up a result node: requires_grad propagates from parents, and the
// backward function is kept only when a gradient can ever flow.
Tensor make_op(std::vector<std::size_t> shape, std::vector<double> values,
               std::vector<TensorPtr> parents, std::function<void(TensorNode&)> backward_fn) {
    auto node = make_node(std::move(shape), std::move(values));
    bool needs = false;
    for (const auto& p : parents) needs |= p->requires_grad;
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor(node);
}

void require_rank2(const Tensor& t, const char* op) {
    if (t.shape().size() != 2)
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got shape " +
                             shape_to_string(t.shape()));
}

}  // namespace

std::string shape_to_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(n, 0.0));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    auto n = shape_numel(shape);
    auto node = make_node(std::move(shape), std::vector<double>(n, value));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::from_values(std::vector<std::size_t> shape, std::vector<double> values,
                           bool requires_grad) {
    if (shape_numel(shape) != values.size())
        throw DimensionError("from_values: " + shape_to_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    auto node = make_node(std::move(shape), std::move(values));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad) {
    auto n = shape_numel(shape);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    auto node = make_node(std::move(shape), std::move(v));
    node->requires_grad = requires_grad;
    return Tensor(node);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

void Tensor::set_requires_grad(bool flag) {
    node_->requires_grad = flag;
    if (!flag) node_->grad.clear();
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_to_string(shape()));
    return node_->values[0];
}

Tensor Tensor::clone() const {
    auto node = make_node(node_->shape, node_->values);
    node->requires_grad = node_->requires_grad;
    return Tensor(node);
}

// ---- ops -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), k2 = b.rows(), n = b.cols();
    if (k != k2)
        throw DimensionError("matmul: inner dimensions disagree, " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()));
    std::vector<double> out(m * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        const double* arow = av + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = arow[p];
            if (aip == 0.0) continue;
            const double* brow = bv + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    auto ap = a.ptr(), bp = b.ptr();
    return make_op({m, n}, std::move(out), {ap, bp}, [ap, bp, m, k, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (ap->requires_grad) {
            ap->ensure_grad();
            double* ga = ap->grad.data();
            const double* bv = bp->values.data();
            // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                double* garow = ga + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const double* brow = bv + p * n;
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    garow[p] += acc;
                }
            }
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            double* gb = bp->grad.data();
            const double* av = ap->values.data();
            // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                const double* arow = av + i * k;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = arow[p];
                    if (aip == 0.0) continue;
                    double* gbrow = gb + p * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                }
            }
        }
    });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul_nt");
    require_rank2(b, "matmul_nt");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (k != b.cols())
        throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_to_string(a.shape()) +
                             " vs " + shape_to_string(b.shape()) + "^T");
    std::vector<double> out(m * n, 0.0);
    const double* av = a.values().data();
    const double* bv = b.values().data();
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = bv + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
    auto ap = a.ptr(), bp = b.ptr();
    return make_op({m, n}, std::move(out), {ap, bp}, [ap, bp, m, k, n](TensorNode& self) {
        const double* g = self.grad.data();
        if (ap->requires_grad) {
            ap->ensure_grad();
            double* ga = ap->grad.data();
            const double* bv = bp->values.data();
            // dA = dC * B
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                double* garow = ga + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = grow[j];
                    if (gij == 0.0) continue;
                    const double* brow = bv + j * k;
                    for (std::size_t p = 0; p < k; ++p) garow[p] += gij * brow[p];
                }
            }
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            double* gb = bp->grad.data();
            const double* av = ap->values.data();
            // dB = dC^T * A
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g + i * n;
                const double* arow = av + i * k;
                for (std::size_t j = 0; j < n; ++j) {
                    const double gij = grow[j];
                    if (gij == 0.0) continue;
                    double* gbrow = gb + j * k;
                    for (std::size_t p = 0; p < k; ++p) gbrow[p] += gij * arow[p];
                }
            }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("add: shape mismatch, " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) + b.at(i);
    auto ap = a.ptr(), bp = b.ptr();
    return make_op(a.shape(), std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) ap->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) bp->grad[i] += self.grad[i];
        }
    });
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
    require_rank2(x, "add_row_bias");
    if (bias.shape().size() != 1 || bias.size() != x.cols())
        throw DimensionError("add_row_bias: bias " + shape_to_string(bias.shape()) +
                             " does not match columns of " + shape_to_string(x.shape()));
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x.at(i, j) + bias.at(j);
    auto xp = x.ptr(), bp = bias.ptr();
    return make_op({m, n}, std::move(out), {xp, bp}, [xp, bp, m, n](TensorNode& self) {
        if (xp->requires_grad) {
            xp->ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) xp->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) bp->grad[j] += self.grad[i * n + j];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError("mul: shape mismatch, " + shape_to_string(a.shape()) + " vs " +
                             shape_to_string(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.at(i) * b.at(i);
    auto ap = a.ptr(), bp = b.ptr();
    return make_op(a.shape(), std::move(out), {ap, bp}, [ap, bp](TensorNode& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                ap->grad[i] += self.grad[i] * bp->values[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                bp->grad[i] += self.grad[i] * ap->values[i];
        }
    });
}

Tensor scale(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) * c;
    auto xp = x.ptr();
    return make_op(x.shape(), std::move(out), {xp}, [xp, c](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i] * c;
    });
}

Tensor add_const(const Tensor& x, double c) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.at(i) + c;
    auto xp = x.ptr();
    return make_op(x.shape(), std::move(out), {xp}, [xp](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
    });
}

Tensor softmax_rows(const Tensor& x) {
    require_rank2(x, "softmax_rows");
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double e = std::exp(x.at(i, j) - mx);
            out[i * n + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
    }
    auto xp = x.ptr();
    auto result = make_op({m, n}, std::move(out), {xp}, [xp, m, n](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* s = self.values.data() + i * n;
            const double* g = self.grad.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += s[j] * g[j];
            double* gx = xp->grad.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) gx[j] += s[j] * (g[j] - dot);
        }
    });
    return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank2(x, "layer_norm");
    const std::size_t m = x.rows(), d = x.cols();
    if (gamma.size() != d || beta.size() != d)
        throw DimensionError("layer_norm: gamma/beta must have length " + std::to_string(d));
    std::vector<double> out(m * d);
    std::vector<double> means(m), inv_stds(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = x.at(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        means[i] = mu;
        inv_stds[i] = inv;
        for (std::size_t j = 0; j < d; ++j)
            out[i * d + j] = (x.at(i, j) - mu) * inv * gamma.at(j) + beta.at(j);
    }
    auto xp = x.ptr(), gp = gamma.ptr(), bp = beta.ptr();
    return make_op({m, d}, std::move(out), {xp, gp, bp},
                   [xp, gp, bp, m, d, means, inv_stds](TensorNode& self) {
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = self.grad.data() + i * d;
            const double* xv = xp->values.data() + i * d;
            const double mu = means[i], inv = inv_stds[i];
            if (gp->requires_grad || bp->requires_grad) {
                if (gp->requires_grad) gp->ensure_grad();
                if (bp->requires_grad) bp->ensure_grad();
                for (std::size_t j = 0; j < d; ++j) {
                    const double xhat = (xv[j] - mu) * inv;
                    if (gp->requires_grad) gp->grad[j] += g[j] * xhat;
                    if (bp->requires_grad) bp->grad[j] += g[j];
                }
            }
            if (xp->requires_grad) {
                xp->ensure_grad();
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gy = g[j] * gp->values[j];
                    const double xhat = (xv[j] - mu) * inv;
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                }
                double* gx = xp->grad.data() + i * d;
                const double dn = static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const double gy = g[j] * gp->values[j];
                    const double xhat = (xv[j] - mu) * inv;
                    gx[j] += inv * (gy - sum_gy / dn - xhat * sum_gy_xhat / dn);
                }
            }
        }
    });
}

double detail::gelu_scalar(double x) {
    const double c = std::sqrt(2.0 / M_PI);
    return 0.5 * x * (1.0 + std::tanh(c * (x + detail::kGeluCoeff * x * x * x)));
}

Tensor gelu(const Tensor& x) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_scalar(x.at(i));
    auto xp = x.ptr();
    return make_op(x.shape(), std::move(out), {xp}, [xp](TensorNode& self) {
        xp->ensure_grad();
        const double c = std::sqrt(2.0 / M_PI);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = xp->values[i];
            const double u = c * (v + detail::kGeluCoeff * v * v * v);
            const double t = std::tanh(u);
            const double du = c * (1.0 + 3.0 * detail::kGeluCoeff * v * v);
            const double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
            xp->grad[i] += self.grad[i] * d;
        }
    });
}

namespace {

// Shared core for single- and multi-row cross entropy: mean over rows of
// -log softmax(label).
Tensor cross_entropy_impl(const Tensor& logits, std::vector<std::size_t> labels,
                          std::size_t n_rows, std::size_t n_cols) {
    for (std::size_t r = 0; r < n_rows; ++r)
        if (labels[r] >= n_cols)
            throw IndexError("cross_entropy: label " + std::to_string(labels[r]) +
                             " out of range for " + std::to_string(n_cols) + " classes");
    std::vector<double> log_probs(n_rows);  // log softmax at label
    double total = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
        const double* row = logits.values().data() + r * n_cols;
        double mx = row[0];
        for (std::size_t j = 1; j < n_cols; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n_cols; ++j) z += std::exp(row[j] - mx);
        const double lp = (row[labels[r]] - mx) - std::log(z);
        log_probs[r] = lp;
        total += -lp;
    }
    total /= static_cast<double>(n_rows);
    auto lp = logits.ptr();
    return make_op({1}, {total}, {lp}, [lp, labels, n_rows, n_cols](TensorNode& self) {
        lp->ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n_rows);
        for (std::size_t r = 0; r < n_rows; ++r) {
            const double* row = lp->values.data() + r * n_cols;
            double* grow = lp->grad.data() + r * n_cols;
            double mx = row[0];
            for (std::size_t j = 1; j < n_cols; ++j) mx = std::max(mx, row[j]);
            double z = 0.0;
            for (std::size_t j = 0; j < n_cols; ++j) z += std::exp(row[j] - mx);
            for (std::size_t j = 0; j < n_cols; ++j) {
                const double p = std::exp(row[j] - mx) / z;
                grow[j] += g * (p - (j == labels[r] ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    std::size_t n_cols;
    if (logits.shape().size() == 1)
        n_cols = logits.size();
    else if (logits.shape().size() == 2 && logits.rows() == 1)
        n_cols = logits.cols();
    else
        throw DimensionError("cross_entropy: expected [C] or [1xC] logits, got " +
                             shape_to_string(logits.shape()));
    return cross_entropy_impl(logits, {label}, 1, n_cols);
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<std::size_t>& labels) {
    require_rank2(logits, "cross_entropy_rows");
    if (labels.size() != logits.rows())
        throw InputError("cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
    if (labels.empty()) throw InputError("cross_entropy_rows: empty batch");
    return cross_entropy_impl(logits, labels, logits.rows(), logits.cols());
}

Tensor gather_rows(const Tensor& x, const std::vector<std::size_t>& indices) {
    require_rank2(x, "gather_rows");
    const std::size_t n = x.cols();
    for (std::size_t idx : indices)
        if (idx >= x.rows())
            throw IndexError("gather_rows: row " + std::to_string(idx) + " out of range for " +
                             shape_to_string(x.shape()));
    std::vector<double> out(indices.size() * n);
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(x.values().data() + indices[i] * n, n, out.data() + i * n);
    auto xp = x.ptr();
    return make_op({indices.size(), n}, std::move(out), {xp}, [xp, indices, n](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* g = self.grad.data() + i * n;
            double* gx = xp->grad.data() + indices[i] * n;
            for (std::size_t j = 0; j < n; ++j) gx[j] += g[j];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_rows");
    if (begin > end || end > x.rows())
        throw IndexError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_to_string(x.shape()));
    const std::size_t n = x.cols(), m = end - begin;
    std::vector<double> out(m * n);
    std::copy_n(x.values().data() + begin * n, m * n, out.data());
    auto xp = x.ptr();
    return make_op({m, n}, std::move(out), {xp}, [xp, begin, m, n](TensorNode& self) {
        xp->ensure_grad();
        double* gx = xp->grad.data() + begin * n;
        for (std::size_t i = 0; i < m * n; ++i) gx[i] += self.grad[i];
    });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_rank2(x, "slice_cols");
    if (begin > end || end > x.cols())
        throw IndexError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_to_string(x.shape()));
    const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.values().data() + i * n + begin, w, out.data() + i * w);
    auto xp = x.ptr();
    return make_op({m, w}, std::move(out), {xp}, [xp, begin, m, n, w](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            const double* g = self.grad.data() + i * w;
            double* gx = xp->grad.data() + i * n + begin;
            for (std::size_t j = 0; j < w; ++j) gx[j] += g[j];
        }
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InputError("concat_rows: no parts");
    const std::size_t n = parts[0].cols();
    std::size_t m = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_rows");
        if (p.cols() != n) throw DimensionError("concat_rows: column mismatch");
        m += p.rows();
    }
    std::vector<double> out;
    out.reserve(m * n);
    std::vector<TensorPtr> parents;
    for (const auto& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
        parents.push_back(p.ptr());
    }
    return make_op({m, n}, std::move(out), parents, [parents, n](TensorNode& self) {
        std::size_t row = 0;
        for (const auto& p : parents) {
            const std::size_t rows = p->shape[0];
            if (p->requires_grad) {
                p->ensure_grad();
                const double* g = self.grad.data() + row * n;
                for (std::size_t i = 0; i < rows * n; ++i) p->grad[i] += g[i];
            }
            row += rows;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw InputError("concat_cols: no parts");
    const std::size_t m = parts[0].rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_rank2(p, "concat_cols");
        if (p.rows() != m) throw DimensionError("concat_cols: row mismatch");
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::vector<TensorPtr> parents;
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p.values().data() + i * w, w, out.data() + i * n + col);
        col += w;
        parents.push_back(p.ptr());
    }
    return make_op({m, n}, std::move(out), parents, [parents, m, n](TensorNode& self) {
        std::size_t col = 0;
        for (const auto& p : parents) {
            const std::size_t w = p->shape[1];
            if (p->requires_grad) {
                p->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* g = self.grad.data() + i * n + col;
                    double* gp = p->grad.data() + i * w;
                    for (std::size_t j = 0; j < w; ++j) gp[j] += g[j];
                }
            }
            col += w;
        }
    });
}

Tensor sum(const Tensor& x) {
    double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    auto xp = x.ptr();
    return make_op({1}, {total}, {xp}, [xp](TensorNode& self) {
        xp->ensure_grad();
        for (auto& g : xp->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& x) {
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, std::vector<std::size_t> shape) {
    if (shape_numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                             shape_to_string(shape));
    auto xp = x.ptr();
    return make_op(std::move(shape), x.values(), {xp}, [xp](TensorNode& self) {
        xp->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) xp->grad[i] += self.grad[i];
    });
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward: loss must be a scalar tensor");
    // Topological order over the reachable graph, children before parents.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(&loss.node(), 0);
    seen.insert(&loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (!seen.count(p) && !p->parents.empty()) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node().ensure_grad();
    loss.node().grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

void check_finite(const Tensor& t, const std::string& what) {
    for (double v : t.values())
        if (!std::isfinite(v)) throw ContractError(what + ": non-finite value encountered");
    for (double g : t.grad())
        if (!std::isfinite(g)) throw ContractError(what + ": non-finite gradient encountered");
}

}  // namespace xmm
