#include "dephn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace dephn::ad {
namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("operands recorded on different tapes");
}

// Index maps for a broadcast binary op. The two common cases (equal shapes, or one
// operand matching the trailing axes of the other) avoid materializing index vectors.
struct Broadcast {
  enum class Kind { Same, RightTrailing, LeftTrailing, General };
  Kind kind = Kind::Same;
  Shape out;
  std::size_t na = 0;
  std::size_t nb = 0;
  std::vector<std::size_t> ia;
  std::vector<std::size_t> ib;

  template <class F>
  void for_each(F&& f) const {
    const std::size_t n = numel(out);
    switch (kind) {
      case Kind::Same:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        break;
      case Kind::RightTrailing:
        for (std::size_t i = 0; i < n; ++i) f(i, i, i % nb);
        break;
      case Kind::LeftTrailing:
        for (std::size_t i = 0; i < n; ++i) f(i, i % na, i);
        break;
      case Kind::General:
        for (std::size_t i = 0; i < n; ++i) f(i, ia[i], ib[i]);
        break;
    }
  }
};

Shape strip_leading_ones(const Shape& s) {
  std::size_t k = 0;
  while (k < s.size() && s[k] == 1) ++k;
  return Shape(s.begin() + static_cast<std::ptrdiff_t>(k), s.end());
}

bool is_trailing(const Shape& big, const Shape& small) {
  const Shape core = strip_leading_ones(small);
  if (core.size() > big.size() || small.size() > big.size()) return false;
  return std::equal(core.begin(), core.end(), big.end() - static_cast<std::ptrdiff_t>(core.size()));
}

std::shared_ptr<const Broadcast> plan_broadcast(const Shape& a, const Shape& b, const char* what) {
  auto plan = std::make_shared<Broadcast>();
  plan->na = numel(a);
  plan->nb = numel(b);
  if (a == b) {
    plan->kind = Broadcast::Kind::Same;
    plan->out = a;
    return plan;
  }
  if (is_trailing(a, b)) {
    plan->kind = Broadcast::Kind::RightTrailing;
    plan->out = a;
    return plan;
  }
  if (is_trailing(b, a)) {
    plan->kind = Broadcast::Kind::LeftTrailing;
    plan->out = b;
    return plan;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1), out(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) {
      throw ShapeError(std::string(what) + ": cannot broadcast " + shape_to_string(a) + " with " +
                       shape_to_string(b));
    }
    out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t acc_a = 1, acc_b = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : acc_a;
    sb[d] = pb[d] == 1 ? 0 : acc_b;
    acc_a *= pa[d];
    acc_b *= pb[d];
  }
  const std::size_t n = numel(out);
  plan->ia.resize(n);
  plan->ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t oa = 0, ob = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      oa += idx[d] * sa[d];
      ob += idx[d] * sb[d];
    }
    plan->ia[i] = oa;
    plan->ib[i] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
    }
  }
  plan->kind = Broadcast::Kind::General;
  plan->out = std::move(out);
  return plan;
}

template <class Fwd, class Bwd>
Var unary(Var x, Op op, Fwd fwd, Bwd deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  const double* xp = xv.data();
  double* op_ = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) op_[i] = fwd(xp[i]);
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), op, {px}, [px, deriv](Tape& t, std::size_t self) {
    const TapeNode& n = t.node(self);
    TapeNode& parent = t.node(px);
    if (!parent.requires_grad) return;
    const double* g = n.adjoint.data();
    const double* y = n.value.data();
    const double* xv2 = parent.value.data();
    double* dx = parent.adjoint.data();
    for (std::size_t i = 0; i < n.value.size(); ++i) dx[i] += g[i] * deriv(xv2[i], y[i]);
  });
}

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x k] += A[m x n] * B^T, B is [k x n]
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// C[k x n] += A^T * B, A is [m x k], B is [m x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Var add(Var a, Var b) {
  same_tape(a, b);
  auto plan = plan_broadcast(a.shape(), b.shape(), "add");
  Tensor out(plan->out);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] + bv[ib]; });
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->push(std::move(out), Op::Add, {pa, pb}, [pa, pb, plan](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    TapeNode& na = t.node(pa);
    TapeNode& nb = t.node(pb);
    double* da = na.requires_grad ? na.adjoint.data() : nullptr;
    double* db = nb.requires_grad ? nb.adjoint.data() : nullptr;
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (da) da[ia] += g[i];
      if (db) db[ib] += g[i];
    });
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  auto plan = plan_broadcast(a.shape(), b.shape(), "sub");
  Tensor out(plan->out);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] - bv[ib]; });
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->push(std::move(out), Op::Sub, {pa, pb}, [pa, pb, plan](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    TapeNode& na = t.node(pa);
    TapeNode& nb = t.node(pb);
    double* da = na.requires_grad ? na.adjoint.data() : nullptr;
    double* db = nb.requires_grad ? nb.adjoint.data() : nullptr;
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (da) da[ia] += g[i];
      if (db) db[ib] -= g[i];
    });
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  auto plan = plan_broadcast(a.shape(), b.shape(), "mul");
  Tensor out(plan->out);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  double* o = out.data();
  plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = av[ia] * bv[ib]; });
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->push(std::move(out), Op::Mul, {pa, pb}, [pa, pb, plan](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    TapeNode& na = t.node(pa);
    TapeNode& nb = t.node(pb);
    const double* av2 = na.value.data();
    const double* bv2 = nb.value.data();
    double* da = na.requires_grad ? na.adjoint.data() : nullptr;
    double* db = nb.requires_grad ? nb.adjoint.data() : nullptr;
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) {
      if (da) da[ia] += g[i] * bv2[ib];
      if (db) db[ib] += g[i] * av2[ia];
    });
  });
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  };
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3) throw mismatch();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t k = sa[sa.size() - 1];
  const std::size_t kb = sb[sb.size() - 2];
  const std::size_t n = sb[sb.size() - 1];
  if (k != kb) throw mismatch();

  // Mode: 0 = flat (rank-2/3 left, rank-2 right), 1 = batched, 2 = shared left.
  int mode = 0;
  std::size_t batch = 1;
  Shape out_shape;
  if (sb.size() == 2) {
    mode = 0;
    out_shape = sa;
    out_shape.back() = n;
  } else if (sa.size() == 3) {
    if (sa[0] != sb[0]) throw mismatch();
    mode = 1;
    batch = sa[0];
    out_shape = {batch, m, n};
  } else {
    mode = 2;
    batch = sb[0];
    out_shape = {batch, m, n};
  }
  const std::size_t rows = mode == 0 ? numel(sa) / k : m;

  Tensor out(out_shape, 0.0);
  const double* av = a.value().data();
  const double* bv = b.value().data();
  if (mode == 0) {
    gemm_nn(rows, k, n, av, bv, out.data());
  } else {
    const std::size_t a_step = mode == 1 ? m * k : 0;
    for (std::size_t s = 0; s < batch; ++s) {
      gemm_nn(m, k, n, av + s * a_step, bv + s * k * n, out.data() + s * m * n);
    }
  }

  const std::size_t pa = a.id, pb = b.id;
  return a.tape->push(std::move(out), Op::MatMul, {pa, pb},
                      [pa, pb, mode, batch, rows, m, k, n](Tape& t, std::size_t self) {
                        const double* g = t.node(self).adjoint.data();
                        TapeNode& na = t.node(pa);
                        TapeNode& nb = t.node(pb);
                        const double* av2 = na.value.data();
                        const double* bv2 = nb.value.data();
                        if (mode == 0) {
                          if (na.requires_grad) gemm_nt(rows, n, k, g, bv2, na.adjoint.data());
                          if (nb.requires_grad) gemm_tn(rows, k, n, av2, g, nb.adjoint.data());
                          return;
                        }
                        const std::size_t a_step = mode == 1 ? m * k : 0;
                        for (std::size_t s = 0; s < batch; ++s) {
                          const double* gs = g + s * m * n;
                          if (na.requires_grad) gemm_nt(m, n, k, gs, bv2 + s * k * n, na.adjoint.data() + s * a_step);
                          if (nb.requires_grad) gemm_tn(m, k, n, av2 + s * a_step, gs, nb.adjoint.data() + s * k * n);
                        }
                      });
}

Var concat_last(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_last: no inputs");
  Tape* tape = parts[0].tape;
  const Shape& first = parts[0].shape();
  if (first.empty()) throw ShapeError("concat_last: scalar input");
  const std::size_t outer = numel(first) / first.back();
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) throw std::invalid_argument("concat_last: operands recorded on different tapes");
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw ShapeError("concat_last: " + shape_to_string(first) + " vs " + shape_to_string(s));
    }
    widths.push_back(s.back());
    ids.push_back(p.id);
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t q = 0; q < parts.size(); ++q) {
    const double* src = parts[q].value().data();
    const std::size_t w = widths[q];
    for (std::size_t r = 0; r < outer; ++r) {
      std::copy(src + r * w, src + (r + 1) * w, out.data() + r * total + offset);
    }
    offset += w;
  }
  return tape->push(std::move(out), Op::Concat, ids, [ids, widths, outer, total](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    std::size_t off = 0;
    for (std::size_t q = 0; q < ids.size(); ++q) {
      TapeNode& p = t.node(ids[q]);
      const std::size_t w = widths[q];
      if (p.requires_grad) {
        double* d = p.adjoint.data();
        for (std::size_t r = 0; r < outer; ++r) {
          for (std::size_t j = 0; j < w; ++j) d[r * w + j] += g[r * total + off + j];
        }
      }
      off += w;
    }
  });
}

Var slice_last(Var x, std::size_t begin, std::size_t length) {
  const Shape& s = x.shape();
  if (s.empty() || begin + length > s.back()) {
    throw ShapeError("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") outside shape " + shape_to_string(s));
  }
  const std::size_t width = s.back();
  const std::size_t outer = numel(s) / width;
  Shape out_shape = s;
  out_shape.back() = length;
  Tensor out(out_shape);
  const double* src = x.value().data();
  for (std::size_t r = 0; r < outer; ++r) {
    std::copy(src + r * width + begin, src + r * width + begin + length, out.data() + r * length);
  }
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), Op::Slice, {px}, [px, begin, length, width, outer](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    double* d = t.node(px).adjoint.data();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t j = 0; j < length; ++j) d[r * width + begin + j] += g[r * length + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), Op::Reshape, {px}, [px](Tape& t, std::size_t self) {
    const Tensor& g = t.node(self).adjoint;
    double* d = t.node(px).adjoint.data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var transpose_last2(Var x) {
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose_last2: rank < 2 for shape " + shape_to_string(s));
  const std::size_t r = s[s.size() - 2];
  const std::size_t c = s[s.size() - 1];
  const std::size_t batch = numel(s) / (r * c);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  Tensor out(out_shape);
  const double* src = x.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[b * r * c + j * r + i] = src[b * r * c + i * c + j];
    }
  }
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), Op::Transpose, {px}, [px, batch, r, c](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    double* d = t.node(px).adjoint.data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) d[b * r * c + i * c + j] += g[b * r * c + j * r + i];
      }
    }
  });
}

Var sigmoid(Var x) {
  return unary(
      x, Op::Sigmoid,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary(
      x, Op::Relu, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var x) {
  return unary(
      x, Op::Tanh, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sin(Var x) {
  return unary(
      x, Op::Sin, [](double v) { return std::sin(v); }, [](double v, double) { return std::cos(v); });
}

Var cos(Var x) {
  return unary(
      x, Op::Cos, [](double v) { return std::cos(v); }, [](double v, double) { return -std::sin(v); });
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw std::domain_error("log of non-positive value " + std::to_string(v));
  }
  return unary(
      x, Op::Log, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Var exp(Var x) {
  return unary(
      x, Op::Exp, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Var abs(Var x) {
  return unary(
      x, Op::Abs, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var power(Var x, double exponent, PowOptions options) {
  const bool integral = std::floor(exponent) == exponent;
  if (!integral) {
    for (double v : x.value().values()) {
      if (v < 0.0) throw std::domain_error("power: negative base with non-integer exponent");
    }
  }
  const double cap = options.derivative_cap;
  return unary(
      x, Op::Pow, [exponent](double v) { return std::pow(v, exponent); },
      [exponent, cap](double v, double) {
        const double d = exponent * std::pow(v, exponent - 1.0);
        if (std::isnan(d)) return 0.0;
        if (!std::isfinite(d) || std::abs(d) > cap) return d > 0 ? cap : -cap;
        return d;
      });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t px = x.id;
  return x.tape->push(Tensor::scalar(s), Op::Sum, {px}, [px](Tape& t, std::size_t self) {
    const double g = t.node(self).adjoint[0];
    for (auto& d : t.node(px).adjoint.values()) d += g;
  });
}

Var sum_last(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("sum_last: scalar input");
  const std::size_t width = s.back();
  const std::size_t outer = numel(s) / width;
  Shape out_shape = s;
  out_shape.back() = 1;
  Tensor out(out_shape, 0.0);
  const double* src = x.value().data();
  for (std::size_t r = 0; r < outer; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += src[r * width + j];
    out[r] = acc;
  }
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), Op::SumLast, {px}, [px, width, outer](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    double* d = t.node(px).adjoint.data();
    for (std::size_t r = 0; r < outer; ++r) {
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += g[r];
    }
  });
}

Var mean(Var x) {
  const std::size_t n = x.value().size();
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  const std::size_t px = x.id;
  return x.tape->push(Tensor::scalar(s / static_cast<double>(n)), Op::Mean, {px}, [px, n](Tape& t, std::size_t self) {
    const double g = t.node(self).adjoint[0] / static_cast<double>(n);
    for (auto& d : t.node(px).adjoint.values()) d += g;
  });
}

Var softmax_last(Var x) {
  const Shape& s = x.shape();
  if (s.empty()) throw ShapeError("softmax_last: scalar input");
  const std::size_t width = s.back();
  const std::size_t outer = numel(s) / width;
  Tensor out(s);
  const double* src = x.value().data();
  for (std::size_t r = 0; r < outer; ++r) {
    const double* row = src + r * width;
    double* o = out.data() + r * width;
    const double mx = *std::max_element(row, row + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < width; ++j) o[j] /= z;
  }
  const std::size_t px = x.id;
  return x.tape->push(std::move(out), Op::Softmax, {px}, [px, width, outer](Tape& t, std::size_t self) {
    const TapeNode& n = t.node(self);
    const double* g = n.adjoint.data();
    const double* y = n.value.data();
    double* d = t.node(px).adjoint.data();
    for (std::size_t r = 0; r < outer; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += g[r * width + j] * y[r * width + j];
      for (std::size_t j = 0; j < width; ++j) d[r * width + j] += y[r * width + j] * (g[r * width + j] - dot);
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> rows) {
  const Shape& s = table.shape();
  if (s.size() != 2) throw ShapeError("gather_rows: table must be rank 2, got " + shape_to_string(s));
  const std::size_t vocab = s[0];
  const std::size_t width = s[1];
  Tensor out(Shape{rows.size(), width});
  const double* src = table.value().data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= vocab) {
      throw std::out_of_range("gather_rows: index " + std::to_string(rows[r]) + " outside vocabulary of size " +
                              std::to_string(vocab));
    }
    std::copy(src + rows[r] * width, src + (rows[r] + 1) * width, out.data() + r * width);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  const std::size_t px = table.id;
  return table.tape->push(std::move(out), Op::Gather, {px}, [px, idx = std::move(idx), width](Tape& t, std::size_t self) {
    const double* g = t.node(self).adjoint.data();
    double* d = t.node(px).adjoint.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t j = 0; j < width; ++j) d[idx[r] * width + j] += g[r * width + j];
    }
  });
}

Var scale(Var x, double factor) {
  return unary(
      x, Op::Scale, [factor](double v) { return factor * v; }, [factor](double, double) { return factor; });
}

Var add_scalar(Var x, double offset) {
  return unary(
      x, Op::AddScalar, [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Var stop_gradient(Var x) {
  Tape& t = *x.tape;
  Var out = t.push(x.value(), Op::StopGradient, {x.id}, {});
  t.node(out.id).requires_grad = false;
  return out;
}

Var gradient_scale(Var x, Tensor gamma) {
  for (double g : gamma.values()) {
    if (!std::isfinite(g)) throw std::invalid_argument("gradient_scale: non-finite scale");
  }
  auto plan = plan_broadcast(x.shape(), gamma.shape(), "gradient_scale");
  if (plan->out != x.shape()) {
    throw ShapeError("gradient_scale: scale " + shape_to_string(gamma.shape()) + " does not broadcast into " +
                     shape_to_string(x.shape()));
  }
  const std::size_t px = x.id;
  Var out = x.tape->push(x.value(), Op::GradientScale, {px}, [px, plan](Tape& t, std::size_t self) {
    const TapeNode& n = t.node(self);
    const double* g = n.adjoint.data();
    const double* gamma_v = n.gradient_scale.data();
    double* d = t.node(px).adjoint.data();
    plan->for_each([&](std::size_t i, std::size_t ia, std::size_t ib) { d[ia] += g[i] * gamma_v[ib]; });
  });
  x.tape->node(out.id).gradient_scale = std::move(gamma);
  return out;
}

Var binary_logloss(Var probabilities, const Tensor& labels, double clamp) {
  const Tensor& p = probabilities.value();
  if (p.size() != labels.size()) {
    throw ShapeError("binary_logloss: predictions " + shape_to_string(p.shape()) + " vs labels " +
                     shape_to_string(labels.shape()));
  }
  const std::size_t n = p.size();
  const double lo = clamp, hi = 1.0 - clamp;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(p[i], lo, hi);
    acc += labels[i] * std::log(q) + (1.0 - labels[i]) * std::log(1.0 - q);
  }
  const std::size_t px = probabilities.id;
  return probabilities.tape->push(
      Tensor::scalar(-acc / static_cast<double>(n)), Op::LogLoss, {px}, [px, labels, lo, hi, n](Tape& t, std::size_t self) {
        const double g = t.node(self).adjoint[0] / static_cast<double>(n);
        TapeNode& parent = t.node(px);
        const double* pv = parent.value.data();
        double* d = parent.adjoint.data();
        for (std::size_t i = 0; i < n; ++i) {
          const double q = pv[i];
          if (q < lo || q > hi) continue;
          d[i] += g * (q - labels[i]) / (q * (1.0 - q));
        }
      });
}

}  // namespace dephn::ad
