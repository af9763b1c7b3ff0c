#include "vispec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace vispec {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

void ensure_grad(Tensor::Node& n) {
    if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
}

thread_local bool g_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
    if (!g_grad_enabled) return false;
    for (const Tensor* t : ts)
        if (t->requires_grad()) return true;
    return false;
}

// Creates the result node; parent links are recorded only when needed.
Tensor make_result(std::vector<std::size_t> shape, std::vector<double> value,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(Tensor::Node&)> backward_fn) {
    auto n = std::make_shared<Tensor::Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (any_requires_grad(inputs)) {
        n->requires_grad = true;
        for (const Tensor* t : inputs) n->parents.push_back(t->node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

} // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_product(shape), 0.0);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_product(shape), v);
    n->shape = std::move(shape);
    return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
    if (shape_product(shape) != data.size())
        throw std::invalid_argument("Tensor::from: shape/data size mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    Tensor t(std::move(n));
    t.check_finite("Tensor::from");
    return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, RngStream& rng, double stddev) {
    auto n = std::make_shared<Node>();
    n->value.resize(shape_product(shape));
    n->shape = std::move(shape);
    for (double& v : n->value) v = rng.next_normal() * stddev;
    return Tensor(std::move(n));
}

double Tensor::item() const {
    if (node_->value.size() != 1)
        throw std::invalid_argument("Tensor::item: tensor is not scalar");
    return node_->value[0];
}

void Tensor::check_finite(const char* where) const {
    for (double v : node_->value)
        if (!std::isfinite(v))
            throw std::runtime_error(std::string(where) + ": non-finite tensor entry");
}

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    t.set_name(name);
    auto [it, inserted] = params_.insert_or_assign(name, std::move(t));
    return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
}

void ParameterStore::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty input");
    double mx = logits[0];
    for (double v : logits) {
        if (!std::isfinite(v)) throw std::invalid_argument("softmax: non-finite input");
        mx = std::max(mx, v);
    }
    std::vector<double> out(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        z += out[i];
    }
    for (double& v : out) v /= z;
    return out;
}

namespace {

// Weights are saved per (row, head) when requested: save_weights[i*heads + h].
void attention_forward_rows(const Tensor& q, const Tensor& k, const Tensor& v,
                            const std::vector<std::vector<std::int32_t>>* allowed,
                            bool scaled, std::size_t heads, std::vector<double>& out,
                            std::vector<std::vector<double>>* save_weights) {
    const std::size_t nq = q.rows(), d = q.cols(), dv = v.cols();
    if (d % heads != 0 || dv % heads != 0)
        throw std::invalid_argument("attention: dims not divisible by head count");
    const std::size_t dh = d / heads, dvh = dv / heads;
    const double sc = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    out.assign(nq * dv, 0.0);
    for (std::size_t i = 0; i < nq; ++i) {
        std::vector<std::int32_t> full;
        const std::vector<std::int32_t>* idx;
        if (allowed) {
            idx = &(*allowed)[i];
        } else {
            full.resize(k.rows());
            for (std::size_t j = 0; j < k.rows(); ++j) full[j] = static_cast<std::int32_t>(j);
            idx = &full;
        }
        if (idx->empty()) throw std::invalid_argument("attention: empty allowed set for a query row");
        for (std::size_t h = 0; h < heads; ++h) {
            std::vector<double> scores(idx->size());
            for (std::size_t a = 0; a < idx->size(); ++a) {
                double s = 0.0;
                auto qi = q.row(i);
                auto kj = k.row(static_cast<std::size_t>((*idx)[a]));
                for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) s += qi[c] * kj[c];
                scores[a] = s * sc;
            }
            std::vector<double> w = softmax(scores);
            for (std::size_t a = 0; a < idx->size(); ++a) {
                auto vj = v.row(static_cast<std::size_t>((*idx)[a]));
                for (std::size_t c = h * dvh; c < (h + 1) * dvh; ++c)
                    out[i * dv + c] += w[a] * vj[c];
            }
            if (save_weights) (*save_weights)[i * heads + h] = std::move(w);
        }
    }
}

} // namespace

Tensor plain_attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                       const std::optional<std::vector<std::vector<std::int32_t>>>& allowed,
                       bool scaled) {
    if (queries.cols() != keys.cols())
        throw std::invalid_argument("attention: query/key dim mismatch");
    if (keys.rows() != values.rows())
        throw std::invalid_argument("attention: key/value row mismatch");
    if (allowed && allowed->size() != queries.rows())
        throw std::invalid_argument("attention: mask shape mismatch");
    std::vector<double> out;
    attention_forward_rows(queries, keys, values, allowed ? &*allowed : nullptr, scaled, 1, out, nullptr);
    return Tensor::from({queries.rows(), values.cols()}, std::move(out));
}

namespace ops {

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.rows(), ka = a.cols(), kb = b.rows(), n = b.cols();
    if (ka != kb) throw std::invalid_argument("matmul: inner dimension mismatch");
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < ka; ++k) {
            const double av = a.at(i, k);
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b.at(k, j);
        }
    auto an = a.node(); auto bn = b.node();
    return make_result({m, n}, std::move(out), {&a, &b}, [an, bn, m, ka, n](Tensor::Node& self) {
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = self.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (std::size_t k = 0; k < ka; ++k)
                        an->grad[i * ka + k] += g * bn->value[k * n + j];
                }
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t k = 0; k < ka; ++k) {
                    const double av = an->value[i * ka + k];
                    if (av == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j)
                        bn->grad[k * n + j] += av * self.grad[i * n + j];
                }
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("add: shape mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(); auto bn = b.node();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Tensor::Node& self) {
        for (auto& p : {an, bn}) {
            if (!p->requires_grad) continue;
            ensure_grad(*p);
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

Tensor add_row_broadcast(const Tensor& mat, const Tensor& row) {
    const std::size_t m = mat.rows(), n = mat.cols();
    if (row.size() != n) throw std::invalid_argument("add_row_broadcast: width mismatch");
    std::vector<double> out(mat.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = mat.at(i, j) + row.data()[j];
    auto mn = mat.node(); auto rn = row.node();
    return make_result(mat.shape(), std::move(out), {&mat, &row}, [mn, rn, m, n](Tensor::Node& self) {
        if (mn->requires_grad) {
            ensure_grad(*mn);
            for (std::size_t i = 0; i < self.grad.size(); ++i) mn->grad[i] += self.grad[i];
        }
        if (rn->requires_grad) {
            ensure_grad(*rn);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) rn->grad[j] += self.grad[i * n + j];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("mul: shape mismatch");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(); auto bn = b.node();
    return make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](Tensor::Node& self) {
        if (an->requires_grad) {
            ensure_grad(*an);
            for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            ensure_grad(*bn);
            for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a.data()[i] * c;
    auto an = a.node();
    return make_result(a.shape(), std::move(out), {&a}, [an, c](Tensor::Node& self) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * c;
    });
}

Tensor tanh_op(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::tanh(a.data()[i]);
    auto an = a.node();
    return make_result(a.shape(), std::move(out), {&a}, [an](Tensor::Node& self) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            an->grad[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    });
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int32_t>& ids) {
    const std::size_t n = table.rows(), d = table.cols();
    std::vector<double> out(ids.size() * d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= n)
            throw std::invalid_argument("gather_rows: index out of range");
        auto r = table.row(static_cast<std::size_t>(ids[i]));
        std::copy(r.begin(), r.end(), out.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto tn = table.node();
    auto ids_copy = ids;
    return make_result({ids.size(), d}, std::move(out), {&table}, [tn, ids_copy, d](Tensor::Node& self) {
        if (!tn->requires_grad) return;
        ensure_grad(*tn);
        for (std::size_t i = 0; i < ids_copy.size(); ++i)
            for (std::size_t j = 0; j < d; ++j)
                tn->grad[static_cast<std::size_t>(ids_copy[i]) * d + j] += self.grad[i * d + j];
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    bool rg = false;
    for (const Tensor& p : parts) {
        if (p.cols() != d) throw std::invalid_argument("concat_rows: width mismatch");
        total += p.rows();
        rg = rg || p.requires_grad();
    }
    rg = rg && g_grad_enabled;
    std::vector<double> out;
    out.reserve(total * d);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    auto n = std::make_shared<Tensor::Node>();
    n->shape = {total, d};
    n->value = std::move(out);
    if (rg) {
        n->requires_grad = true;
        for (const Tensor& p : parts) n->parents.push_back(p.node());
        std::vector<std::shared_ptr<Tensor::Node>> pn = n->parents;
        n->backward_fn = [pn](Tensor::Node& self) {
            std::size_t off = 0;
            for (auto& p : pn) {
                if (p->requires_grad) {
                    ensure_grad(*p);
                    for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[off + i];
                }
                off += p->value.size();
            }
        };
    }
    return Tensor(std::move(n));
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t len) {
    const std::size_t d = a.cols();
    if (start + len > a.rows()) throw std::invalid_argument("slice_rows: out of range");
    std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                            a.data().begin() + static_cast<std::ptrdiff_t>((start + len) * d));
    auto an = a.node();
    return make_result({len, d}, std::move(out), {&a}, [an, start, d](Tensor::Node& self) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[start * d + i] += self.grad[i];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t m = x.rows(), n = x.cols();
    if (gain.size() != n || bias.size() != n)
        throw std::invalid_argument("layer_norm: gain/bias width mismatch");
    std::vector<double> out(x.size()), mean(m), rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double c = x.at(i, j) - mu;
            var += c * c;
        }
        var /= static_cast<double>(n);
        mean[i] = mu;
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j)
            out[i * n + j] = (x.at(i, j) - mu) * rstd[i] * gain.data()[j] + bias.data()[j];
    }
    auto xn = x.node(); auto gn = gain.node(); auto bn = bias.node();
    return make_result(x.shape(), std::move(out), {&x, &gain, &bias},
                       [xn, gn, bn, m, n, mean, rstd](Tensor::Node& self) {
        for (std::size_t i = 0; i < m; ++i) {
            // xhat_j = (x_j - mu) * rstd
            std::vector<double> xhat(n), gy(n);
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                xhat[j] = (xn->value[i * n + j] - mean[i]) * rstd[i];
                gy[j] = self.grad[i * n + j] * gn->value[j];
                sum_gy += gy[j];
                sum_gy_xhat += gy[j] * xhat[j];
            }
            if (gn->requires_grad) {
                ensure_grad(*gn);
                for (std::size_t j = 0; j < n; ++j)
                    gn->grad[j] += self.grad[i * n + j] * xhat[j];
            }
            if (bn->requires_grad) {
                ensure_grad(*bn);
                for (std::size_t j = 0; j < n; ++j) bn->grad[j] += self.grad[i * n + j];
            }
            if (xn->requires_grad) {
                ensure_grad(*xn);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t j = 0; j < n; ++j)
                    xn->grad[i * n + j] +=
                        rstd[i] * (gy[j] - inv_n * sum_gy - xhat[j] * inv_n * sum_gy_xhat);
            }
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return make_result({1}, {s}, {&a}, [an](Tensor::Node& self) {
        if (!an->requires_grad) return;
        ensure_grad(*an);
        for (double& g : an->grad) g += self.grad[0];
    });
}

Tensor attention(const Tensor& queries, const Tensor& keys, const Tensor& values,
                 const std::vector<std::vector<std::int32_t>>& allowed, bool scaled,
                 std::size_t heads) {
    if (queries.cols() != keys.cols())
        throw std::invalid_argument("attention: query/key dim mismatch");
    if (keys.rows() != values.rows())
        throw std::invalid_argument("attention: key/value row mismatch");
    if (allowed.size() != queries.rows())
        throw std::invalid_argument("attention: allowed-list count mismatch");
    const std::size_t nq = queries.rows(), d = queries.cols(), dv = values.cols();
    std::vector<std::vector<double>> weights(nq * heads);
    std::vector<double> out;
    attention_forward_rows(queries, keys, values, &allowed, scaled, heads, out, &weights);
    auto qn = queries.node(); auto kn = keys.node(); auto vn = values.node();
    auto idx = allowed;
    const std::size_t dh = d / heads, dvh = dv / heads;
    const double sc = scaled ? 1.0 / std::sqrt(static_cast<double>(dh)) : 1.0;
    return make_result({nq, dv}, std::move(out), {&queries, &keys, &values},
                       [qn, kn, vn, idx, weights, nq, d, dv, dh, dvh, heads, sc](Tensor::Node& self) {
        for (std::size_t i = 0; i < nq; ++i) {
            const auto& ids = idx[i];
            for (std::size_t h = 0; h < heads; ++h) {
                const auto& w = weights[i * heads + h];
                // dL/dw_a = grad_row(head slice) . v_a(head slice)
                std::vector<double> gw(ids.size(), 0.0);
                double gw_dot_w = 0.0;
                for (std::size_t a = 0; a < ids.size(); ++a) {
                    const std::size_t j = static_cast<std::size_t>(ids[a]);
                    for (std::size_t c = h * dvh; c < (h + 1) * dvh; ++c)
                        gw[a] += self.grad[i * dv + c] * vn->value[j * dv + c];
                    gw_dot_w += gw[a] * w[a];
                    if (vn->requires_grad) {
                        ensure_grad(*vn);
                        for (std::size_t c = h * dvh; c < (h + 1) * dvh; ++c)
                            vn->grad[j * dv + c] += w[a] * self.grad[i * dv + c];
                    }
                }
                // softmax backward: ds_a = w_a * (gw_a - gw.w)
                for (std::size_t a = 0; a < ids.size(); ++a) {
                    const double gs = w[a] * (gw[a] - gw_dot_w) * sc;
                    if (gs == 0.0) continue;
                    const std::size_t j = static_cast<std::size_t>(ids[a]);
                    if (qn->requires_grad) {
                        ensure_grad(*qn);
                        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
                            qn->grad[i * d + c] += gs * kn->value[j * d + c];
                    }
                    if (kn->requires_grad) {
                        ensure_grad(*kn);
                        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c)
                            kn->grad[j * d + c] += gs * qn->value[i * d + c];
                    }
                }
            }
        }
    });
}

Tensor cross_entropy_rows(const Tensor& logits, const Tensor& target_probs,
                          const std::vector<double>& row_weights) {
    const std::size_t m = logits.rows(), n = logits.cols();
    if (target_probs.rows() != m || target_probs.cols() != n)
        throw std::invalid_argument("cross_entropy_rows: shape mismatch");
    if (row_weights.size() != m)
        throw std::invalid_argument("cross_entropy_rows: weight count mismatch");
    double total_w = 0.0;
    for (double w : row_weights) total_w += w;
    if (total_w <= 0.0) throw std::invalid_argument("cross_entropy_rows: no active rows");

    std::vector<std::vector<double>> probs(m);
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        if (row_weights[i] == 0.0) continue;
        probs[i] = softmax(logits.row(i));
        double li = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double p = target_probs.at(i, j);
            if (p > 0.0) li -= p * std::log(std::max(probs[i][j], 1e-300));
        }
        loss += row_weights[i] * li;
    }
    loss /= total_w;
    auto ln = logits.node(); auto tn = target_probs.node();
    auto w = row_weights;
    return make_result({1}, {loss}, {&logits, &target_probs},
                       [ln, tn, w, total_w, m, n, probs](Tensor::Node& self) {
        if (!ln->requires_grad) return;
        ensure_grad(*ln);
        const double g0 = self.grad[0] / total_w;
        for (std::size_t i = 0; i < m; ++i) {
            if (w[i] == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j)
                ln->grad[i * n + j] += g0 * w[i] * (probs[i][j] - tn->value[i * n + j]);
        }
    });
}

} // namespace ops

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool NoGradGuard::grad_enabled() { return g_grad_enabled; }

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss does not depend on any trainable parameter");
    // Topological order via iterative DFS.
    std::vector<Tensor::Node*> order;
    std::unordered_set<Tensor::Node*> visited;
    std::vector<std::pair<Tensor::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Tensor::Node* p = node->parents[idx++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    // Interior nodes are scratch; leaves (parameters) accumulate across calls.
    for (Tensor::Node* n : order) {
        if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
        else if (n->grad.size() != n->value.size()) n->grad.assign(n->value.size(), 0.0);
    }
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

} // namespace vispec
