#include "roarbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "roarbench/error.hpp"

namespace roarbench {

namespace {

thread_local bool g_grad_enabled = true;

void check_defined(const Tensor& t, const char* what) {
  if (!t.defined()) throw InvalidInput(std::string(what) + ": undefined tensor");
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  check_defined(t, what);
  if (t.dim() != rank) {
    throw InvalidInput(std::string(what) + ": expected rank " + std::to_string(rank) +
                       ", got shape " + shape_str(t.shape()));
  }
}

std::vector<double>& ensure_grad(detail::Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

std::shared_ptr<detail::Node> node_of(const Tensor& t) { return t.node_; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (auto& in : inputs) node->parents.push_back(in.node_);
      node->backward = std::move(backward);
    }
  }
  return Tensor(std::move(node));
}

Tensor::Tensor(Shape shape, bool requires_grad)
    : Tensor(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad) {}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (auto d : shape) {
    if (d == 0) throw InvalidInput("tensor dimensions must be positive, got " + shape_str(shape));
  }
  if (values.size() != shape_numel(shape)) {
    throw InvalidInput("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
  }
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return Tensor({1}, {v}, requires_grad); }

const Shape& Tensor::shape() const {
  check_defined(*this, "shape");
  return node_->shape;
}

std::size_t Tensor::numel() const { return defined() ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const {
  check_defined(*this, "data");
  return node_->value;
}

std::span<double> Tensor::mutable_data() {
  check_defined(*this, "mutable_data");
  return node_->value;
}

bool Tensor::requires_grad() const { return defined() && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  check_defined(*this, "set_requires_grad");
  node_->requires_grad = on;
}

bool Tensor::has_grad() const { return defined() && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractViolation("tensor has no gradient; run backward() first");
  return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
  check_defined(*this, "mutable_grad");
  return ensure_grad(*node_);
}

void Tensor::zero_grad() {
  if (defined()) node_->grad.clear();
}

double Tensor::item() const {
  check_defined(*this, "item");
  if (numel() != 1) {
    throw ContractViolation("item() requires a single-element tensor, got " + shape_str(shape()));
  }
  return node_->value[0];
}

void Tensor::backward() const {
  check_defined(*this, "backward");
  if (numel() != 1) {
    throw ContractViolation("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw ContractViolation("backward() on a tensor that is not part of a gradient tape");
  }

  // Iterative post-order DFS gives a topological order with parents first.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  ensure_grad(*node_)[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& n = **it;
    if (n.backward && !n.grad.empty()) n.backward(n);
  }
}

Tensor Tensor::detach() const {
  check_defined(*this, "detach");
  return Tensor(node_->shape, node_->value, false);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace ops {

namespace {

// Row ranges of one kernel tap: output rows/cols [y0, y1) x [x0, x1) read the
// input shifted by (dy, dx); everything else is zero padding.
struct Tap {
  std::ptrdiff_t dy, dx, y0, y1, x0, x1;
};

Tap make_tap(std::size_t ky, std::size_t kx, std::size_t K, std::size_t H, std::size_t W) {
  const auto pad = static_cast<std::ptrdiff_t>(K / 2);
  const auto Hs = static_cast<std::ptrdiff_t>(H), Ws = static_cast<std::ptrdiff_t>(W);
  const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(ky) - pad, dx = static_cast<std::ptrdiff_t>(kx) - pad;
  return {dy, dx, std::max<std::ptrdiff_t>(0, -dy), std::min(Hs, Hs - dy), std::max<std::ptrdiff_t>(0, -dx),
          std::min(Ws, Ws - dx)};
}

// cols[q][p] with q = (c, ky, kx) and p = (y, x).
void im2col(const double* x, std::size_t C, std::size_t H, std::size_t W, std::size_t K, double* cols) {
  const std::size_t P = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        const Tap t = make_tap(ky, kx, K, H, W);
        double* row = cols + ((c * K + ky) * K + kx) * P;
        std::fill(row, row + P, 0.0);
        for (std::ptrdiff_t y = t.y0; y < t.y1; ++y) {
          const double* src = x + (c * H + static_cast<std::size_t>(y + t.dy)) * W + t.dx;
          double* dst = row + static_cast<std::size_t>(y) * W;
          for (std::ptrdiff_t xx = t.x0; xx < t.x1; ++xx) dst[xx] = src[xx];
        }
      }
    }
  }
}

void col2im_add(const double* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t K, double* gx) {
  const std::size_t P = H * W;
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t ky = 0; ky < K; ++ky) {
      for (std::size_t kx = 0; kx < K; ++kx) {
        const Tap t = make_tap(ky, kx, K, H, W);
        const double* row = cols + ((c * K + ky) * K + kx) * P;
        for (std::ptrdiff_t y = t.y0; y < t.y1; ++y) {
          double* dst = gx + (c * H + static_cast<std::size_t>(y + t.dy)) * W + t.dx;
          const double* src = row + static_cast<std::size_t>(y) * W;
          for (std::ptrdiff_t xx = t.x0; xx < t.x1; ++xx) dst[xx] += src[xx];
        }
      }
    }
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  // Eight independent partial sums so the loop vectorizes without reassociation flags.
  double acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  require_rank(b, 1, "conv2d bias");
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t O = w.size(0), K = w.size(2);
  if (w.size(1) != C || w.size(3) != K || K % 2 == 0 || b.size(0) != O) {
    throw InvalidInput("conv2d: incompatible shapes input " + shape_str(x.shape()) + ", weight " +
                       shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const std::size_t P = H * W, Q = C * K * K;

  const auto xv = x.data(), wv = w.data(), bv = b.data();
  std::vector<double> out(N * O * P);
  std::vector<double> cols(Q * P);
  for (std::size_t n = 0; n < N; ++n) {
    im2col(xv.data() + n * C * P, C, H, W, K, cols.data());
    for (std::size_t o = 0; o < O; ++o) {
      double* op = out.data() + (n * O + o) * P;
      std::fill(op, op + P, bv[o]);
      for (std::size_t q = 0; q < Q; ++q) {
        const double wk = wv[o * Q + q];
        const double* cp = cols.data() + q * P;
        for (std::size_t p = 0; p < P; ++p) op[p] += wk * cp[p];
      }
    }
  }

  return make_result({N, O, H, W}, std::move(out), {x, w, b}, [=](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const double* g = self.grad.data();
    const double* xin = xn.value.data();
    const double* win = wn.value.data();
    double* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
    double* gw = wn.requires_grad ? ensure_grad(wn).data() : nullptr;
    double* gb = bn.requires_grad ? ensure_grad(bn).data() : nullptr;
    std::vector<double> cols(gw ? Q * P : 0), gcols(gx ? Q * P : 0);
    for (std::size_t n = 0; n < N; ++n) {
      const double* gn = g + n * O * P;
      if (gb) {
        for (std::size_t o = 0; o < O; ++o) gb[o] += std::accumulate(gn + o * P, gn + (o + 1) * P, 0.0);
      }
      if (gw) {
        im2col(xin + n * C * P, C, H, W, K, cols.data());
        for (std::size_t o = 0; o < O; ++o) {
          for (std::size_t q = 0; q < Q; ++q) gw[o * Q + q] += dot(gn + o * P, cols.data() + q * P, P);
        }
      }
      if (gx) {
        std::fill(gcols.begin(), gcols.end(), 0.0);
        for (std::size_t o = 0; o < O; ++o) {
          const double* gp = gn + o * P;
          for (std::size_t q = 0; q < Q; ++q) {
            const double wk = win[o * Q + q];
            double* gc = gcols.data() + q * P;
            for (std::size_t p = 0; p < P; ++p) gc[p] += wk * gp[p];
          }
        }
        col2im_add(gcols.data(), C, H, W, K, gx + n * C * P);
      }
    }
  });
}

Tensor relu(const Tensor& x) {
  check_defined(x, "relu");
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& gx = ensure_grad(xn);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xn.value[i] > 0.0) gx[i] += self.grad[i];
    }
  });
}

Tensor max_pool2d(const Tensor& x, std::size_t k) {
  require_rank(x, 4, "max_pool2d");
  if (k == 0) throw InvalidInput("max_pool2d: window must be positive");
  const std::size_t N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const std::size_t Ho = H / k, Wo = W / k;
  if (Ho == 0 || Wo == 0) {
    throw InvalidInput("max_pool2d: input " + shape_str(x.shape()) + " smaller than window");
  }
  const auto xv = x.data();
  std::vector<double> out(N * C * Ho * Wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* ip = xv.data() + nc * H * W;
    for (std::size_t yo = 0; yo < Ho; ++yo) {
      for (std::size_t xo = 0; xo < Wo; ++xo) {
        std::size_t best = (yo * k) * W + xo * k;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t idx = (yo * k + dy) * W + xo * k + dx;
            if (ip[idx] > ip[best]) best = idx;
          }
        }
        const std::size_t o = (nc * Ho + yo) * Wo + xo;
        out[o] = ip[best];
        (*argmax)[o] = nc * H * W + best;
      }
    }
  }
  return make_result({N, C, Ho, Wo}, std::move(out), {x}, [argmax](detail::Node& self) {
    auto& gx = ensure_grad(*self.parents[0]);
    for (std::size_t o = 0; o < self.grad.size(); ++o) gx[(*argmax)[o]] += self.grad[o];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank(x, 4, "global_avg_pool");
  const std::size_t N = x.size(0), C = x.size(1), HW = x.size(2) * x.size(3);
  const auto xv = x.data();
  std::vector<double> out(N * C);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const double* p = xv.data() + nc * HW;
    out[nc] = std::accumulate(p, p + HW, 0.0) / static_cast<double>(HW);
  }
  return make_result({N, C}, std::move(out), {x}, [HW](detail::Node& self) {
    auto& gx = ensure_grad(*self.parents[0]);
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
      const double g = self.grad[nc] * inv;
      for (std::size_t i = 0; i < HW; ++i) gx[nc * HW + i] += g;
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  check_defined(x, "linear input");
  require_rank(w, 2, "linear weight");
  require_rank(b, 1, "linear bias");
  if (x.dim() < 2) throw InvalidInput("linear: input needs a batch axis, got " + shape_str(x.shape()));
  const std::size_t N = x.size(0), D = x.numel() / N, C = w.size(0);
  if (w.size(1) != D || b.size(0) != C) {
    throw InvalidInput("linear: incompatible shapes input " + shape_str(x.shape()) + ", weight " +
                       shape_str(w.shape()) + ", bias " + shape_str(b.shape()));
  }
  const auto xv = x.data(), wv = w.data(), bv = b.data();
  std::vector<double> out(N * C);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xr = xv.data() + n * D;
      const double* wr = wv.data() + c * D;
      out[n * C + c] = bv[c] + std::inner_product(xr, xr + D, wr, 0.0);
    }
  }
  return make_result({N, C}, std::move(out), {x, w, b}, [N, D, C](detail::Node& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    double* gx = xn.requires_grad ? ensure_grad(xn).data() : nullptr;
    double* gw = wn.requires_grad ? ensure_grad(wn).data() : nullptr;
    double* gb = bn.requires_grad ? ensure_grad(bn).data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        const double g = self.grad[n * C + c];
        if (g == 0.0) continue;
        if (gb) gb[c] += g;
        const double* xr = xn.value.data() + n * D;
        const double* wr = wn.value.data() + c * D;
        if (gw) {
          double* gwr = gw + c * D;
          for (std::size_t d = 0; d < D; ++d) gwr[d] += g * xr[d];
        }
        if (gx) {
          double* gxr = gx + n * D;
          for (std::size_t d = 0; d < D; ++d) gxr[d] += g * wr[d];
        }
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  const auto xv = x.data();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result({1}, {s}, {x}, [](detail::Node& self) {
    auto& gx = ensure_grad(*self.parents[0]);
    for (auto& g : gx) g += self.grad[0];
  });
}

Tensor pick(const Tensor& x, std::span<const int> index) {
  require_rank(x, 2, "pick");
  const std::size_t N = x.size(0), C = x.size(1);
  if (index.size() != N) throw InvalidInput("pick: index count does not match batch size");
  std::vector<std::size_t> flat(N);
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    if (index[n] < 0 || static_cast<std::size_t>(index[n]) >= C) {
      throw InvalidInput("pick: class index " + std::to_string(index[n]) + " out of range [0, " +
                         std::to_string(C) + ")");
    }
    flat[n] = n * C + static_cast<std::size_t>(index[n]);
    out[n] = x.data()[flat[n]];
  }
  return make_result({N}, std::move(out), {x}, [flat = std::move(flat)](detail::Node& self) {
    auto& gx = ensure_grad(*self.parents[0]);
    for (std::size_t n = 0; n < flat.size(); ++n) gx[flat[n]] += self.grad[n];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy");
  const std::size_t N = logits.size(0), C = logits.size(1);
  if (labels.size() != N) throw InvalidInput("softmax_cross_entropy: label count does not match batch");
  const auto z = logits.data();
  auto probs = std::make_shared<std::vector<double>>(N * C);
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= C) {
      throw InvalidInput("softmax_cross_entropy: label out of range");
    }
    const double* zr = z.data() + n * C;
    const double m = *std::max_element(zr, zr + C);
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(zr[c] - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < C; ++c) (*probs)[n * C + c] = std::exp(zr[c] - lse);
    total += lse - zr[labels[n]];
  }
  std::vector<int> y(labels.begin(), labels.end());
  return make_result({1}, {total / static_cast<double>(N)}, {logits},
                     [probs, y = std::move(y), N, C](detail::Node& self) {
                       auto& gz = ensure_grad(*self.parents[0]);
                       const double scale = self.grad[0] / static_cast<double>(N);
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t c = 0; c < C; ++c) {
                           const double target = static_cast<int>(c) == y[n] ? 1.0 : 0.0;
                           gz[n * C + c] += scale * ((*probs)[n * C + c] - target);
                         }
                       }
                     });
}

}  // namespace ops

}  // namespace roarbench
