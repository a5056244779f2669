#include "advfas/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "advfas/errors.hpp"

namespace advfas::ad {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Tensor Tensor::column(std::span<const double> v) {
  return Tensor(v.size(), 1, std::vector<double>(v.begin(), v.end()));
}

Tensor Tensor::row(std::span<const double> v) {
  return Tensor(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

namespace {

using NodePtr = std::shared_ptr<Node>;

Tensor& grad_of(Node& n) {
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

Var make_node(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad =
      std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

std::string shape_str(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

// Nodes reachable from root through grad-carrying edges, root first, each
// node before all of its parents.
std::vector<Node*> reverse_topo(Node* root) {
  std::vector<Node*> order;
  std::unordered_set<Node*> seen{root};
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

// Elementwise op whose derivative is expressed through input and output.
template <typename Fwd, typename Deriv>
Var elementwise(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.rows(), x.cols());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  NodePtr px = x.ptr();
  return make_node(std::move(out), {px}, [px, deriv](Node& self) {
    Tensor& gx = grad_of(*px);
    const Tensor& xv = px->value;
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    }
  });
}

}  // namespace

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.size() == node_->value.size()) return node_->grad;
  return Tensor(node_->value.rows(), node_->value.cols());
}

double Var::item() const {
  if (node_->value.size() != 1) throw ShapeError("item() on non-scalar " + shape_str(*this));
  return node_->value[0];
}

void Var::backward() const {
  if (!node_) throw GraphError("backward() on an empty Var");
  if (node_->value.size() != 1) throw GraphError("backward() root must be scalar, got " + shape_str(*this));
  if (!node_->requires_grad) return;
  const auto order = reverse_topo(node_.get());
  grad_of(*node_)[0] += 1.0;
  for (Node* n : order) {
    if (n->backward && n->grad.size() == n->value.size()) n->backward(*n);
  }
}

bool Var::depends_on(const Var& other) const {
  if (!node_ || !other.node_) return false;
  if (node_ == other.node_) return true;
  if (!other.node_->requires_grad) return false;
  for (Node* n : reverse_topo(node_.get())) {
    if (n == other.node_.get()) return true;
  }
  return false;
}

Var linear(const Var& x, const Var& w, const Var& b) {
  const std::size_t batch = x.rows(), in = x.cols(), out = w.rows();
  if (w.cols() != in || b.rows() != 1 || b.cols() != out) {
    throw ShapeError("linear: x " + shape_str(x) + ", W " + shape_str(w) + ", b " + shape_str(b));
  }
  Tensor y(batch, out);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  for (std::size_t r = 0; r < batch; ++r) {
    const double* xr = &xv(r, 0);
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &wv(o, 0);
      double acc = bv[o];
      for (std::size_t i = 0; i < in; ++i) acc += xr[i] * wo[i];
      y(r, o) = acc;
    }
  }
  NodePtr px = x.ptr(), pw = w.ptr(), pb = b.ptr();
  return make_node(std::move(y), {px, pw, pb}, [px, pw, pb, batch, in, out](Node& self) {
    const Tensor& gy = self.grad;
    if (px->requires_grad) {
      Tensor& gx = grad_of(*px);
      const Tensor& wv = pw->value;
      for (std::size_t r = 0; r < batch; ++r) {
        double* gxr = &gx(r, 0);
        for (std::size_t o = 0; o < out; ++o) {
          const double d = gy(r, o);
          if (d == 0.0) continue;
          const double* wo = &wv(o, 0);
          for (std::size_t i = 0; i < in; ++i) gxr[i] += d * wo[i];
        }
      }
    }
    if (pw->requires_grad) {
      Tensor& gw = grad_of(*pw);
      const Tensor& xv = px->value;
      for (std::size_t r = 0; r < batch; ++r) {
        const double* xr = &xv(r, 0);
        for (std::size_t o = 0; o < out; ++o) {
          const double d = gy(r, o);
          if (d == 0.0) continue;
          double* gwo = &gw(o, 0);
          for (std::size_t i = 0; i < in; ++i) gwo[i] += d * xr[i];
        }
      }
    }
    if (pb->requires_grad) {
      Tensor& gb = grad_of(*pb);
      for (std::size_t r = 0; r < batch; ++r) {
        for (std::size_t o = 0; o < out; ++o) gb[o] += gy(r, o);
      }
    }
  });
}

Var relu(const Var& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return elementwise(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& x) {
  return elementwise(
      x,
      [](double v) {
        // Split on sign so exp never overflows.
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) {
      Tensor& ga = grad_of(*pa);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      Tensor& gb = grad_of(*pb);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * pa->value[i];
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_node(std::move(out), {pa, pb}, [pa, pb](Node& self) {
    for (const NodePtr& p : {pa, pb}) {
      if (!p->requires_grad) continue;
      Tensor& g = grad_of(*p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var scale(const Var& a, double k) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * a.value()[i];
  NodePtr pa = a.ptr();
  return make_node(std::move(out), {pa}, [pa, k](Node& self) {
    Tensor& g = grad_of(*pa);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

Var affine(const Var& a, double k, double c) {
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * a.value()[i] + c;
  NodePtr pa = a.ptr();
  return make_node(std::move(out), {pa}, [pa, k](Node& self) {
    Tensor& g = grad_of(*pa);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * self.grad[i];
  });
}

Var detach(const Var& a) { return Var::constant(a.value()); }

Var select_rows(std::span<const std::uint8_t> take_a, const Var& a, const Var& b) {
  require_same_shape(a, b, "select_rows");
  if (take_a.size() != a.rows()) throw ShapeError("select_rows: selector length != rows");
  const std::size_t cols = a.cols();
  Tensor out(a.rows(), cols);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const Tensor& src = take_a[r] ? a.value() : b.value();
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = src(r, c);
  }
  std::vector<std::uint8_t> sel(take_a.begin(), take_a.end());
  NodePtr pa = a.ptr(), pb = b.ptr();
  return make_node(std::move(out), {pa, pb}, [pa, pb, sel = std::move(sel), cols](Node& self) {
    for (std::size_t r = 0; r < sel.size(); ++r) {
      Node& src = sel[r] ? *pa : *pb;
      if (!src.requires_grad) continue;
      Tensor& g = grad_of(src);
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += self.grad(r, c);
    }
  });
}

Var columns(const Var& a, std::size_t first, std::size_t count) {
  if (first + count > a.cols()) throw ShapeError("columns: slice out of range");
  Tensor out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a.value()(r, first + c);
  }
  NodePtr pa = a.ptr();
  return make_node(std::move(out), {pa}, [pa, first, count](Node& self) {
    Tensor& g = grad_of(*pa);
    for (std::size_t r = 0; r < self.value.rows(); ++r) {
      for (std::size_t c = 0; c < count; ++c) g(r, first + c) += self.grad(r, c);
    }
  });
}

Var bce(const Var& p, const Var& t, double eps) {
  require_same_shape(p, t, "bce");
  Tensor out(p.rows(), p.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double pc = std::clamp(p.value()[i], eps, 1.0 - eps);
    const double ti = t.value()[i];
    out[i] = -(ti * std::log(pc) + (1.0 - ti) * std::log1p(-pc));
  }
  NodePtr pp = p.ptr(), pt = t.ptr();
  return make_node(std::move(out), {pp, pt}, [pp, pt, eps](Node& self) {
    if (pp->requires_grad) {
      Tensor& gp = grad_of(*pp);
      for (std::size_t i = 0; i < gp.size(); ++i) {
        const double pv = pp->value[i];
        // Clamped region is flat.
        if (pv < eps || pv > 1.0 - eps) continue;
        const double ti = pt->value[i];
        gp[i] += self.grad[i] * ((1.0 - ti) / (1.0 - pv) - ti / pv);
      }
    }
    if (pt->requires_grad) {
      Tensor& gt = grad_of(*pt);
      for (std::size_t i = 0; i < gt.size(); ++i) {
        const double pc = std::clamp(pp->value[i], eps, 1.0 - eps);
        gt[i] += self.grad[i] * (std::log1p(-pc) - std::log(pc));
      }
    }
  });
}

Var row_mean(const Var& a) {
  const std::size_t cols = a.cols();
  Tensor out(a.rows(), 1);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += a.value()(r, c);
    out[r] = acc / static_cast<double>(cols);
  }
  NodePtr pa = a.ptr();
  return make_node(std::move(out), {pa}, [pa, cols](Node& self) {
    Tensor& g = grad_of(*pa);
    const double inv = 1.0 / static_cast<double>(cols);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < cols; ++c) g(r, c) += self.grad[r] * inv;
    }
  });
}

Var sum(const Var& a) {
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  NodePtr pa = a.ptr();
  return make_node(Tensor::scalar(acc), {pa}, [pa](Node& self) {
    Tensor& g = grad_of(*pa);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var weighted_mean(const Var& a, std::span<const double> weights) {
  if (a.cols() != 1 || weights.size() != a.rows()) {
    throw ShapeError("weighted_mean: expected column of " + std::to_string(weights.size()) +
                     " rows, got " + shape_str(a));
  }
  double total = 0.0, acc = 0.0;
  for (std::size_t r = 0; r < weights.size(); ++r) {
    if (weights[r] == 0.0) continue;
    total += weights[r];
    acc += weights[r] * a.value()[r];
  }
  if (total == 0.0) return Var::constant(0.0);
  std::vector<double> w(weights.begin(), weights.end());
  NodePtr pa = a.ptr();
  return make_node(Tensor::scalar(acc / total), {pa}, [pa, w = std::move(w), total](Node& self) {
    Tensor& g = grad_of(*pa);
    for (std::size_t r = 0; r < w.size(); ++r) {
      if (w[r] != 0.0) g[r] += self.grad[0] * w[r] / total;
    }
  });
}

}  // namespace advfas::ad
