#include "stiformer/ops.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace stif {

namespace {

using detail::Node;

std::vector<double>& grad_of(Node& parent) { return parent.grad_buffer(); }

// ---------------------------------------------------------------------------
// Broadcasting

enum class BroadcastMode { kSame, kSuffixB, kSuffixA, kGeneral };

struct BroadcastPlan {
  Shape out;
  BroadcastMode mode = BroadcastMode::kSame;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> ia;  // only for kGeneral
  std::vector<std::size_t> ib;

  std::size_t a_at(std::size_t i) const {
    switch (mode) {
      case BroadcastMode::kSame:
      case BroadcastMode::kSuffixB: return i;
      case BroadcastMode::kSuffixA: return i % na;
      default: return ia[i];
    }
  }
  std::size_t b_at(std::size_t i) const {
    switch (mode) {
      case BroadcastMode::kSame:
      case BroadcastMode::kSuffixA: return i;
      case BroadcastMode::kSuffixB: return i % nb;
      default: return ib[i];
    }
  }
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - static_cast<std::ptrdiff_t>(small.size()));
}

std::vector<std::size_t> broadcast_index(const Shape& operand, const Shape& out) {
  const std::size_t rank = out.size();
  const std::size_t offset = rank - operand.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t stride = 1;
  for (std::size_t d = operand.size(); d-- > 0;) {
    strides[d + offset] = operand[d] == 1 ? 0 : stride;
    stride *= operand[d];
  }
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      flat += strides[d];
      if (++counter[d] < out[d]) break;
      flat -= strides[d] * out[d];
      counter[d] = 0;
    }
  }
  return index;
}

std::shared_ptr<BroadcastPlan> plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  auto plan = std::make_shared<BroadcastPlan>();
  plan->na = shape_numel(a);
  plan->nb = shape_numel(b);
  if (a == b) {
    plan->out = a;
    plan->mode = BroadcastMode::kSame;
    return plan;
  }
  if (is_suffix(b, a)) {
    plan->out = a;
    plan->mode = BroadcastMode::kSuffixB;
    return plan;
  }
  if (is_suffix(a, b)) {
    plan->out = b;
    plan->mode = BroadcastMode::kSuffixA;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    const std::size_t da = d + a.size() >= rank ? a[d + a.size() - rank] : 1;
    const std::size_t db = d + b.size() >= rank ? b[d + b.size() - rank] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " +
                       shape_str(b));
    }
    out[d] = std::max(da, db);
  }
  plan->out = out;
  plan->mode = BroadcastMode::kGeneral;
  plan->ia = broadcast_index(a, out);
  plan->ib = broadcast_index(b, out);
  return plan;
}

// fwd(a, b) -> value; bwd(a, b, out, g, ga, gb) accumulates partials scaled by g.
template <class Fwd, class Bwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  auto plan = plan_broadcast(a.shape(), b.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[plan->a_at(i)], bv[plan->b_at(i)]);
  return Tensor::make_result(plan->out, std::move(out), {a, b}, [plan, bwd](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    std::vector<double>* ga = pa.requires_grad ? &grad_of(pa) : nullptr;
    std::vector<double>* gb = pb.requires_grad ? &grad_of(pb) : nullptr;
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      const std::size_t ja = plan->a_at(i);
      const std::size_t jb = plan->b_at(i);
      double da = 0.0;
      double db = 0.0;
      bwd(pa.data[ja], pb.data[jb], self.data[i], self.grad[i], da, db);
      if (ga) (*ga)[ja] += da;
      if (gb) (*gb)[jb] += db;
    }
  });
}

// fwd(x) -> y; dydx(x, y) -> derivative.
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, Fwd fwd, Deriv dydx) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [dydx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = grad_of(p);
    for (std::size_t i = 0; i < self.data.size(); ++i) {
      g[i] += self.grad[i] * dydx(p.data[i], self.data[i]);
    }
  });
}

// ---------------------------------------------------------------------------
// GEMM kernels on contiguous row-major blocks.

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] * b[k,n]^T
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* drow = dc + i * n;
    double* arow = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
      arow[p] += acc;
    }
  }
}

// db[k,n] += a[m,k]^T * dc[m,n]
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* drow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* brow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) brow[j] += av * drow[j];
    }
  }
}

void check_finite_param(double eps, const char* what) {
  if (!(eps > 0.0) || !std::isfinite(eps)) {
    throw ParameterError(std::string(what) + " must be positive and finite");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const auto xv = x.data();
  return Tensor::make_result(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                             [](Node& self) {
                               auto& g = grad_of(*self.parents[0]);
                               for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                             });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes) {
  const Shape& in = x.shape();
  const std::size_t rank = in.size();
  if (axes.size() != rank) throw ShapeError("permute: axes rank mismatch for " + shape_str(in));
  std::vector<bool> seen(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw ShapeError("permute: invalid axes for " + shape_str(in));
    seen[a] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank - 1; d-- > 0;) in_strides[d] = in_strides[d + 1] * in[d + 1];
  Shape out(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out[d] = in[axes[d]];
    strides[d] = in_strides[axes[d]];
  }
  auto source = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t flat = 0;
  for (std::size_t i = 0; i < source->size(); ++i) {
    (*source)[i] = flat;
    for (std::size_t d = rank; d-- > 0;) {
      flat += strides[d];
      if (++counter[d] < out[d]) break;
      flat -= strides[d] * out[d];
      counter[d] = 0;
    }
  }
  const auto xv = x.data();
  std::vector<double> values(source->size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = xv[(*source)[i]];
  return Tensor::make_result(std::move(out), std::move(values), {x}, [source](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < source->size(); ++i) g[(*source)[i]] += self.grad[i];
  });
}

Tensor transpose(const Tensor& x) {
  const std::size_t rank = x.dim();
  if (rank < 2) throw ShapeError("transpose: need at least 2 axes, got " + shape_str(x.shape()));
  std::vector<std::size_t> axes(rank);
  std::iota(axes.begin(), axes.end(), std::size_t{0});
  std::swap(axes[rank - 1], axes[rank - 2]);
  return permute(x, axes);
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 1, sb.begin())) {
    throw ShapeError("concat_last: incompatible " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t wa = sa.back();
  const std::size_t wb = sb.back();
  const std::size_t rows = a.numel() / wa;
  Shape out = sa;
  out.back() = wa + wb;
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> values(rows * (wa + wb));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.begin() + r * wa, wa, values.begin() + r * (wa + wb));
    std::copy_n(bv.begin() + r * wb, wb, values.begin() + r * (wa + wb) + wa);
  }
  return Tensor::make_result(std::move(out), std::move(values), {a, b}, [rows, wa, wb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t w = wa + wb;
    if (pa.requires_grad) {
      auto& g = grad_of(pa);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < wa; ++j) g[r * wa + j] += self.grad[r * w + j];
    }
    if (pb.requires_grad) {
      auto& g = grad_of(pb);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < wb; ++j) g[r * wb + j] += self.grad[r * w + wa + j];
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double, double, double, double g, double& ga, double& gb) {
        ga = g;
        gb = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double x, double y, double, double g, double& ga, double& gb) {
        ga = g * y;
        gb = g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y, double out, double g, double& ga, double& gb) {
        ga = g / y;
        gb = -g * out / y;
      });
}

Tensor scale(const Tensor& x, double factor) {
  return unary_op(
      x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary_op(
      x, [value](double v) { return v + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return Tensor::make_result({1}, {total}, {x}, [](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const Shape& in = x.shape();
  if (axis >= in.size()) throw ShapeError("sum_axis: axis out of range for " + shape_str(in));
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  const std::size_t len = in[axis];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];

  Shape out = in;
  if (keepdim || in.size() == 1) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  const auto xv = x.data();
  std::vector<double> values(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        values[o * inner + i] += xv[(o * len + l) * inner + i];
  return Tensor::make_result(std::move(out), std::move(values), {x},
                             [outer, len, inner](Node& self) {
                               auto& g = grad_of(*self.parents[0]);
                               for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t l = 0; l < len; ++l)
                                   for (std::size_t i = 0; i < inner; ++i)
                                     g[(o * len + l) * inner + i] += self.grad[o * inner + i];
                             });
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const double len = static_cast<double>(x.size(axis));
  return scale(sum_axis(x, axis, keepdim), 1.0 / len);
}

// ---------------------------------------------------------------------------
// Matrix product

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) {
    throw ShapeError("matmul: operands need at least 2 axes, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa.back();
  const std::size_t n = sb.back();
  if (sb[sb.size() - 2] != k) {
    throw ShapeError("matmul: inner dimensions differ for " + shape_str(sa) + " and " +
                     shape_str(sb));
  }
  const Shape batch_a(sa.begin(), sa.end() - 2);
  const Shape batch_b(sb.begin(), sb.end() - 2);
  const std::size_t nba = shape_numel(batch_a);
  const std::size_t nbb = shape_numel(batch_b);
  if (nba > 1 && nbb > 1 && batch_a != batch_b) {
    throw ShapeError("matmul: batch axes differ for " + shape_str(sa) + " and " + shape_str(sb));
  }
  const std::size_t batches = std::max(nba, nbb);
  Shape out = nba >= nbb ? batch_a : batch_b;
  out.push_back(m);
  out.push_back(n);

  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> values(batches * m * n, 0.0);
  // A shared right operand folds the batch into the row count.
  const bool fold = nbb == 1;
  if (fold) {
    gemm_nn(av.data(), bv.data(), values.data(), nba * m, k, n);
  } else {
    for (std::size_t s = 0; s < batches; ++s) {
      const double* ap = av.data() + (nba == 1 ? 0 : s * m * k);
      gemm_nn(ap, bv.data() + s * k * n, values.data() + s * m * n, m, k, n);
    }
  }
  return Tensor::make_result(
      std::move(out), std::move(values), {a, b}, [=](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        const double* dc = self.grad.data();
        if (fold) {
          if (pa.requires_grad) gemm_nt(dc, pb.data.data(), grad_of(pa).data(), nba * m, k, n);
          if (pb.requires_grad) gemm_tn(pa.data.data(), dc, grad_of(pb).data(), nba * m, k, n);
          return;
        }
        for (std::size_t s = 0; s < batches; ++s) {
          const std::size_t aoff = nba == 1 ? 0 : s * m * k;
          if (pa.requires_grad) {
            gemm_nt(dc + s * m * n, pb.data.data() + s * k * n, grad_of(pa).data() + aoff, m, k, n);
          }
          if (pb.requires_grad) {
            gemm_tn(pa.data.data() + aoff, dc + s * m * n, grad_of(pb).data() + s * k * n, m, k,
                    n);
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  if (w.dim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(w.shape()));
  Tensor out = matmul(x, w);
  if (bias.defined()) {
    if (bias.dim() != 1 || bias.size(0) != w.size(1)) {
      throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                       shape_str(w.shape()));
    }
    out = add(out, bias);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / normalisation

Tensor softmax_lastaxis(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("softmax: empty last axis");
  const std::size_t width = s.back();
  const std::size_t rows = x.numel() / width;
  const auto xv = x.data();
  std::vector<double> values(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double* out = values.data() + r * width;
    const double peak = *std::max_element(in, in + width);
    double total = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      out[j] = std::exp(in[j] - peak);
      total += out[j];
    }
    for (std::size_t j = 0; j < width; ++j) out[j] /= total;
  }
  return Tensor::make_result(s, std::move(values), {x}, [rows, width](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * width;
      const double* dy = self.grad.data() + r * width;
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (dy[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_finite_param(eps, "layer_norm eps");
  const Shape& s = x.shape();
  const std::size_t width = s.back();
  if (gamma.numel() != width || beta.numel() != width) {
    throw ShapeError("layer_norm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match last axis of " + shape_str(s));
  }
  const std::size_t rows = x.numel() / width;
  const auto xv = x.data();
  const auto gv = gamma.data();
  const auto bv = beta.data();
  auto normalized = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> values(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += in[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= static_cast<double>(width);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < width; ++j) {
      const double xh = (in[j] - mu) * is;
      (*normalized)[r * width + j] = xh;
      values[r * width + j] = gv[j] * xh + bv[j];
    }
  }
  return Tensor::make_result(
      s, std::move(values), {x, gamma, beta}, [rows, width, normalized, inv_std](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const double w = static_cast<double>(width);
        std::vector<double> dxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* dy = self.grad.data() + r * width;
          const double* xh = normalized->data() + r * width;
          if (pg.requires_grad) {
            auto& gg = grad_of(pg);
            for (std::size_t j = 0; j < width; ++j) gg[j] += dy[j] * xh[j];
          }
          if (pb.requires_grad) {
            auto& gb = grad_of(pb);
            for (std::size_t j = 0; j < width; ++j) gb[j] += dy[j];
          }
          if (px.requires_grad) {
            double mean_d = 0.0;
            double mean_dx = 0.0;
            for (std::size_t j = 0; j < width; ++j) {
              dxhat[j] = dy[j] * pg.data[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xh[j];
            }
            mean_d /= w;
            mean_dx /= w;
            auto& gx = grad_of(px);
            for (std::size_t j = 0; j < width; ++j) {
              gx[r * width + j] += (*inv_std)[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Top-N masking

Tensor topn_indicator(const Tensor& scores, std::size_t n) {
  const Shape& s = scores.shape();
  if (s.size() < 2) throw ShapeError("topn: scores need at least 2 axes, got " + shape_str(s));
  const std::size_t cols = s.back();
  if (n < 1 || n > cols) {
    throw ParameterError("topn: n=" + std::to_string(n) + " outside [1, " + std::to_string(cols) +
                         "]");
  }
  const std::size_t rows = scores.numel() / cols;
  const auto sv = scores.data();
  std::vector<double> mask(sv.size(), 0.0);
  std::vector<std::size_t> order(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = sv.data() + r * cols;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n), order.end(),
                      [row](std::size_t i, std::size_t j) {
                        return row[i] > row[j] || (row[i] == row[j] && i < j);
                      });
    for (std::size_t q = 0; q < n; ++q) mask[r * cols + order[q]] = 1.0;
  }
  return Tensor::from(s, std::move(mask));
}

Tensor masked_fill(const Tensor& x, const Tensor& indicator) {
  if (!is_suffix(indicator.shape(), x.shape())) {
    throw ShapeError("masked_fill: indicator " + shape_str(indicator.shape()) +
                     " is not a trailing shape of " + shape_str(x.shape()));
  }
  const auto xv = x.data();
  auto keep = std::make_shared<std::vector<double>>(indicator.data().begin(),
                                                    indicator.data().end());
  const std::size_t period = keep->size();
  std::vector<double> values(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    values[i] = (*keep)[i % period] != 0.0 ? xv[i] : kMaskedScore;
  }
  return Tensor::make_result(x.shape(), std::move(values), {x}, [keep, period](Node& self) {
    auto& g = grad_of(*self.parents[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if ((*keep)[i % period] != 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor topn_mask_rows(const Tensor& scores, std::size_t n) {
  return masked_fill(scores, topn_indicator(scores, n));
}

}  // namespace stif
