#ifndef MLMSDA_AUTODIFF_HPP
#define MLMSDA_AUTODIFF_HPP

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mlmsda/tensor.hpp"

namespace mlmsda {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid as long as the tape lives.
struct Val {
    Tape* tape = nullptr;
    std::size_t node = 0;
};

// Reverse-mode tape. Nodes are recorded in execution order, which is a
// topological order by construction; backward() walks them in reverse.
//
// Leaves bound via leaf() flush their accumulated gradient into the external
// Tensor's grad after each backward() call (repeated calls accumulate, as in
// standard SGD frameworks). Intermediate gradients are per-call scratch.
//
// Single-threaded per tape; independent tapes share no state.
class Tape {
  public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    // Binds external parameter storage. The tensor must outlive the tape.
    Val leaf(Tensor& t) {
        nodes_.push_back(Node{t, t.requires_grad ? &t : nullptr, {}, nullptr, {}});
        return Val{this, nodes_.size() - 1};
    }

    Val constant(Tensor t) {
        nodes_.push_back(Node{std::move(t), nullptr, {}, nullptr, {}});
        return Val{this, nodes_.size() - 1};
    }

    Val constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Val push(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
        for (std::size_t in : inputs) {
            if (in >= nodes_.size()) {
                throw std::invalid_argument("Tape: op input does not precede it on the tape");
            }
        }
        nodes_.push_back(Node{std::move(value), nullptr, std::move(inputs), std::move(backward), {}});
        return Val{this, nodes_.size() - 1};
    }

    const Tensor& value(std::size_t node) const { return nodes_[node].value; }
    const Tensor& value(const Val& v) const { return nodes_[v.node].value; }

    // Scratch gradient of a node, allocated zeroed on first touch.
    std::vector<double>& grads(std::size_t node) {
        Node& n = nodes_[node];
        if (n.scratch.size() != n.value.numel()) n.scratch.assign(n.value.numel(), 0.0);
        return n.scratch;
    }

    bool touched(std::size_t node) const { return !nodes_[node].scratch.empty(); }

    void backward(const Val& loss) {
        if (loss.tape != this) throw std::invalid_argument("Tape: backward on foreign value");
        if (!nodes_[loss.node].value.is_scalar()) {
            throw std::invalid_argument("Tape: backward requires a scalar loss, got shape " +
                                        Tensor::shape_str(nodes_[loss.node].value.shape));
        }
        for (Node& n : nodes_) n.scratch.clear();
        grads(loss.node)[0] = 1.0;
        for (std::size_t i = loss.node + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.scratch.empty()) continue; // not reached from the loss
            if (n.backward) n.backward(*this, i);
        }
        // Every bound leaf ends up with a populated grad; leaves the loss
        // never reached contribute zeros.
        for (Node& n : nodes_) {
            if (n.bound == nullptr) continue;
            n.bound->ensure_grad();
            for (std::size_t k = 0; k < n.scratch.size(); ++k) n.bound->grad[k] += n.scratch[k];
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor* bound;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        std::vector<double> scratch;
    };
    // deque keeps node references stable while new ops are recorded
    std::deque<Node> nodes_;
};

namespace detail {

inline void check_same_tape(const Val& a, const Val& b) {
    if (a.tape == nullptr || a.tape != b.tape) {
        throw std::invalid_argument("autodiff: operands belong to different tapes");
    }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string("autodiff: ") + op + " shape mismatch " +
                                    Tensor::shape_str(a.shape) + " vs " + Tensor::shape_str(b.shape));
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (equal shapes)
// ---------------------------------------------------------------------------

inline Val add(const Val& a, const Val& b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::check_same_shape(av, bv, "add");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
    const std::size_t ia = a.node, ib = b.node;
    return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        auto& gb = tp.grads(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

inline Val sub(const Val& a, const Val& b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::check_same_shape(av, bv, "sub");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
    const std::size_t ia = a.node, ib = b.node;
    return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        auto& gb = tp.grads(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

inline Val mul(const Val& a, const Val& b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    detail::check_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
    const std::size_t ia = a.node, ib = b.node;
    return t.push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& av2 = tp.value(ia).data;
        const auto& bv2 = tp.value(ib).data;
        auto& ga = tp.grads(ia);
        auto& gb = tp.grads(ib);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv2[i];
            gb[i] += g[i] * av2[i];
        }
    });
}

// ---------------------------------------------------------------------------
// broadcasts: scalar-tensor and row-vector bias only
// ---------------------------------------------------------------------------

inline Val scale(const Val& a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v *= c;
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia, c](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

inline Val add_scalar(const Val& a, double c) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v += c;
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

// [m x n] + bias{n}, broadcast over rows
inline Val add_rowvec(const Val& a, const Val& bias) {
    detail::check_same_tape(a, bias);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(bias);
    if (!av.is_matrix() || !bv.is_vector() || bv.numel() != av.cols()) {
        throw std::invalid_argument("autodiff: add_rowvec expects [m x n] and bias {n}, got " +
                                    Tensor::shape_str(av.shape) + " and " + Tensor::shape_str(bv.shape));
    }
    Tensor out = av;
    const std::size_t m = av.rows(), n = av.cols();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bv.data[j];
    }
    const std::size_t ia = a.node, ib = bias.node;
    return t.push(std::move(out), {ia, ib}, [ia, ib, m, n](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        auto& gb = tp.grads(ib);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                ga[i * n + j] += g[i * n + j];
                gb[j] += g[i * n + j];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// elementwise unaries
// ---------------------------------------------------------------------------

inline Val neg(const Val& a) { return scale(a, -1.0); }

inline Val relu(const Val& a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& x = tp.value(ia).data;
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] > 0.0) ga[i] += g[i];
        }
    });
}

inline Val log(const Val& a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) {
        if (!(v > 0.0)) {
            throw std::domain_error("autodiff: log of non-positive value " + std::to_string(v));
        }
        v = std::log(v);
    }
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& x = tp.value(ia).data;
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / x[i];
    });
}

inline Val exp(const Val& a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = std::exp(v);
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& y = tp.value(o).data;
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
    });
}

inline Val sigmoid(const Val& a) {
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& y = tp.value(o).data;
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    });
}

// Gradient passes only where lo <= x <= hi (zero in the clamped region).
inline Val clamp(const Val& a, double lo, double hi) {
    if (!(lo <= hi)) throw std::invalid_argument("autodiff: clamp requires lo <= hi");
    Tape& t = *a.tape;
    Tensor out = t.value(a);
    for (double& v : out.data) v = v < lo ? lo : (v > hi ? hi : v);
    const std::size_t ia = a.node;
    return t.push(std::move(out), {ia}, [ia, lo, hi](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& x = tp.value(ia).data;
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (x[i] >= lo && x[i] <= hi) ga[i] += g[i];
        }
    });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

inline Val matmul(const Val& a, const Val& b) {
    detail::check_same_tape(a, b);
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (!av.is_matrix() || !bv.is_matrix() || av.cols() != bv.rows()) {
        throw std::invalid_argument("autodiff: matmul dimension mismatch " +
                                    Tensor::shape_str(av.shape) + " x " + Tensor::shape_str(bv.shape));
    }
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av.data[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += aip * bv.data[p * n + j];
        }
    }
    const std::size_t ia = a.node, ib = b.node;
    return t.push(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o); // [m x n]
        const auto& A = tp.value(ia).data;
        const auto& B = tp.value(ib).data;
        auto& ga = tp.grads(ia); // += g . B^T
        auto& gb = tp.grads(ib); // += A^T . g
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                const double gij = g[i * n + j];
                if (gij == 0.0) continue;
                for (std::size_t p = 0; p < k; ++p) {
                    ga[i * k + p] += gij * B[p * n + j];
                    gb[p * n + j] += A[i * k + p] * gij;
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// softmax over matrix rows, max-subtracted for stability
// ---------------------------------------------------------------------------

inline Val softmax_rows(const Val& z) {
    Tape& t = *z.tape;
    const Tensor& zv = t.value(z);
    if (!zv.is_matrix()) {
        throw std::invalid_argument("autodiff: softmax_rows expects a matrix, got " +
                                    Tensor::shape_str(zv.shape));
    }
    const std::size_t b = zv.rows(), k = zv.cols();
    Tensor out({b, k});
    for (std::size_t i = 0; i < b; ++i) {
        double mx = zv.data[i * k];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, zv.data[i * k + j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double e = std::exp(zv.data[i * k + j] - mx);
            out.data[i * k + j] = e;
            denom += e;
        }
        for (std::size_t j = 0; j < k; ++j) out.data[i * k + j] /= denom;
    }
    const std::size_t iz = z.node;
    return t.push(std::move(out), {iz}, [iz, b, k](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& y = tp.value(o).data;
        auto& gz = tp.grads(iz);
        for (std::size_t i = 0; i < b; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < k; ++j) dot += g[i * k + j] * y[i * k + j];
            for (std::size_t j = 0; j < k; ++j) {
                gz[i * k + j] += y[i * k + j] * (g[i * k + j] - dot);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

inline Val sum(const Val& a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    double s = 0.0;
    for (double v : av.data) s += v;
    const std::size_t ia = a.node;
    return t.push(Tensor::scalar(s), {ia}, [ia](Tape& tp, std::size_t o) {
        const double g = tp.grads(o)[0];
        auto& ga = tp.grads(ia);
        for (double& v : ga) v += g;
    });
}

inline Val mean(const Val& a) {
    Tape& t = *a.tape;
    const std::size_t n = t.value(a).numel();
    if (n == 0) throw std::invalid_argument("autodiff: mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

// axis 0: column reduction of [m x n] -> {n}; axis 1: row reduction -> {m}
inline Val sum(const Val& a, int axis) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (!av.is_matrix() || axis < 0 || axis > 1) {
        throw std::invalid_argument("autodiff: sum axis out of range for shape " +
                                    Tensor::shape_str(av.shape));
    }
    const std::size_t m = av.rows(), n = av.cols();
    const std::size_t ia = a.node;
    if (axis == 0) {
        Tensor out({n});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) out.data[j] += av.data[i * n + j];
        }
        return t.push(std::move(out), {ia}, [ia, m, n](Tape& tp, std::size_t o) {
            const auto& g = tp.grads(o);
            auto& ga = tp.grads(ia);
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j];
            }
        });
    }
    Tensor out({m});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out.data[i] += av.data[i * n + j];
    }
    return t.push(std::move(out), {ia}, [ia, m, n](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i];
        }
    });
}

inline Val mean(const Val& a, int axis) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (!av.is_matrix() || axis < 0 || axis > 1) {
        throw std::invalid_argument("autodiff: mean axis out of range for shape " +
                                    Tensor::shape_str(av.shape));
    }
    const double denom = axis == 0 ? static_cast<double>(av.rows()) : static_cast<double>(av.cols());
    return scale(sum(a, axis), 1.0 / denom);
}

// ---------------------------------------------------------------------------
// multilinear conditioning kernel: row i of the result is vec(f_i (x) p_i),
// laid out feature-major (entry (a, c) at index a*K + c)
// ---------------------------------------------------------------------------

inline Val outer_flatten(const Val& f, const Val& p) {
    detail::check_same_tape(f, p);
    Tape& t = *f.tape;
    const Tensor& fv = t.value(f);
    const Tensor& pv = t.value(p);
    if (!fv.is_matrix() || !pv.is_matrix() || fv.rows() != pv.rows()) {
        throw std::invalid_argument("autodiff: outer_flatten batch mismatch " +
                                    Tensor::shape_str(fv.shape) + " vs " + Tensor::shape_str(pv.shape));
    }
    const std::size_t b = fv.rows(), d = fv.cols(), k = pv.cols();
    Tensor out({b, d * k});
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t a = 0; a < d; ++a) {
            const double fa = fv.data[i * d + a];
            for (std::size_t c = 0; c < k; ++c) {
                out.data[i * d * k + a * k + c] = fa * pv.data[i * k + c];
            }
        }
    }
    const std::size_t fi = f.node, pi = p.node;
    return t.push(std::move(out), {fi, pi}, [fi, pi, b, d, k](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        const auto& F = tp.value(fi).data;
        const auto& P = tp.value(pi).data;
        auto& gf = tp.grads(fi);
        auto& gp = tp.grads(pi);
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t a = 0; a < d; ++a) {
                for (std::size_t c = 0; c < k; ++c) {
                    const double gv = g[i * d * k + a * k + c];
                    gf[i * d + a] += gv * P[i * k + c];
                    gp[i * k + c] += gv * F[i * d + a];
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// gradient plumbing
// ---------------------------------------------------------------------------

inline Val stop_gradient(const Val& a) {
    Tape& t = *a.tape;
    return t.push(t.value(a), {}, nullptr);
}

// Identity forward; backward multiplies the incoming gradient by -scale.
inline Val gradient_reversal(const Val& a, double scale_factor) {
    if (scale_factor < 0.0) {
        throw std::invalid_argument("autodiff: gradient_reversal scale must be >= 0");
    }
    Tape& t = *a.tape;
    const std::size_t ia = a.node;
    return t.push(t.value(a), {ia}, [ia, scale_factor](Tape& tp, std::size_t o) {
        const auto& g = tp.grads(o);
        auto& ga = tp.grads(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] -= scale_factor * g[i];
    });
}

// Probability values are clamped to [kProbEps, 1 - kProbEps] before any log
// so confident predictions cannot produce infinities.
inline constexpr double kProbEps = 1e-7;

inline Val log_prob(const Val& p) { return log(clamp(p, kProbEps, 1.0 - kProbEps)); }

inline Val operator+(const Val& a, const Val& b) { return add(a, b); }
inline Val operator-(const Val& a, const Val& b) { return sub(a, b); }
inline Val operator*(const Val& a, const Val& b) { return mul(a, b); }
inline Val operator*(double c, const Val& a) { return scale(a, c); }
inline Val operator*(const Val& a, double c) { return scale(a, c); }
inline Val operator-(const Val& a) { return neg(a); }

} // namespace mlmsda

#endif // MLMSDA_AUTODIFF_HPP
