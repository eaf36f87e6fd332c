#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "threadsumm/common.hpp"

// Reverse-mode autodiff over dense double tensors. Ops are free functions;
// when a Tape is live on this thread and an input wants gradients, the op
// registers a backward closure. Tensors are values: ops never mutate inputs.
// mutable_data() is the one escape hatch (optimizer steps, finite-difference
// probes) and gives the tensor a fresh identity, so collect any gradients
// you need before touching it.

namespace threadsumm {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, 0.0) {}

  Tensor(Shape shape, double fill)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(threadsumm::numel(shape_),
                                                    fill)),
        id_(next_id()) {}

  static Tensor from(Shape shape, std::vector<double> data) {
    if (threadsumm::numel(shape) != data.size())
      throw ShapeError("tensor: " + shape_str(shape) + " cannot hold " +
                       std::to_string(data.size()) + " values");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::make_shared<std::vector<double>>(std::move(data));
    return t;
  }

  // shares the buffer, used by reshape
  static Tensor view(Shape shape, std::shared_ptr<std::vector<double>> data) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v) { return from({1}, {v}); }

  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> d(threadsumm::numel(shape));
    for (auto& x : d) x = rng.uniform(lo, hi);
    return from(std::move(shape), std::move(d));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_->size(); }
  const std::vector<double>& values() const { return *data_; }
  std::shared_ptr<std::vector<double>> buffer() const { return data_; }

  double operator()(std::size_t i) const { return (*data_)[i]; }
  double operator()(std::size_t i, std::size_t j) const {
    return (*data_)[i * shape_[1] + j];
  }

  // copy-on-write; the result is a new value with a new id
  std::vector<double>& mutable_data() {
    if (data_.use_count() > 1)
      data_ = std::make_shared<std::vector<double>>(*data_);
    id_ = next_id();
    return *data_;
  }

  bool requires_grad() const { return requires_grad_; }
  Tensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  std::uint64_t id() const { return id_; }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  bool requires_grad_ = false;
  std::uint64_t id_ = next_id();
};

class Tape {
 public:
  using BackFn = std::function<void(const std::vector<double>&, Tape&)>;

  Tape() { stack().push_back(this); }
  ~Tape() {
    auto& s = stack();
    if (!s.empty() && s.back() == this) s.pop_back();
  }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() {
    auto& s = stack();
    return s.empty() ? nullptr : s.back();
  }

  void record(std::uint64_t out_id, BackFn fn) {
    nodes_.push_back({out_id, std::move(fn)});
  }

  void backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("tape consumed twice");
    consumed_ = true;
    if (loss.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " +
                       shape_str(loss.shape()));
    grads_[loss.id()] = {1.0};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto g = grads_.find(it->out);
      if (g == grads_.end()) continue;
      it->back(g->second, *this);
    }
  }

  void accumulate(std::uint64_t id, const std::vector<double>& g) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      grads_.emplace(id, g);
      return;
    }
    auto& acc = it->second;
    if (acc.size() != g.size())
      throw ShapeError("gradient accumulate: got " + std::to_string(g.size()) +
                       " values where an earlier contribution had " +
                       std::to_string(acc.size()));
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }

  bool has_grad(const Tensor& t) const { return grads_.count(t.id()) > 0; }

  // zero tensor when t never reached the loss
  Tensor grad(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return Tensor::zeros(t.shape());
    return Tensor::from(t.shape(), it->second);
  }

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }

  struct Node {
    std::uint64_t out;
    BackFn back;
  };
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, std::vector<double>> grads_;
  bool consumed_ = false;
};

namespace detail {

inline void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x))
      throw NumericError(std::string(op) + " produced a non-finite value");
}

inline bool track(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins)
    if (t->requires_grad()) return true;
  return false;
}

inline Tensor finish(const char* op, Shape shape, std::vector<double> data,
                     bool tracked) {
  check_finite(op, data);
  Tensor out = Tensor::from(std::move(shape), std::move(data));
  out.set_requires_grad(tracked);
  return out;
}

inline double stable_sigmoid(double v) {
  if (v >= 0) {
    double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace detail

// Supports [m,k]x[k,n], [m,k]x[k], [k]x[k,n] and [k]x[k] (dot).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() > 2 || b.rank() == 0 || b.rank() > 2)
    throw ShapeError("matmul: need rank 1 or 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const std::size_t m = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t k = a.rank() == 2 ? a.shape()[1] : a.shape()[0];
  const std::size_t kb = b.rank() == 2 ? b.shape()[0] : b.shape()[0];
  const std::size_t n = b.rank() == 2 ? b.shape()[1] : 1;
  if (k != kb)
    throw ShapeError("matmul: inner dimensions disagree, " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));

  std::vector<double> out(m * n, 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      if (ail == 0.0) continue;
      const double* brow = bv.data() + l * n;
      double* crow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
    }

  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2)
    out_shape = {m, n};
  else if (a.rank() == 2)
    out_shape = {m};
  else if (b.rank() == 2)
    out_shape = {n};
  else
    out_shape = {1};

  bool tracked = detail::track({&a, &b});
  Tensor out_t = detail::finish("matmul", out_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, b, m, k, n](const std::vector<double>& g, Tape& tape) {
          if (a.requires_grad()) {
            std::vector<double> ga(m * k, 0.0);
            const auto& bv = b.values();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                double acc = 0.0;
                const double* brow = bv.data() + l * n;
                const double* grow = g.data() + i * n;
                for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                ga[i * k + l] = acc;
              }
            tape.accumulate(a.id(), ga);
          }
          if (b.requires_grad()) {
            std::vector<double> gb(k * n, 0.0);
            const auto& av = a.values();
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                const double ail = av[i * k + l];
                if (ail == 0.0) continue;
                const double* grow = g.data() + i * n;
                double* gbrow = gb.data() + l * n;
                for (std::size_t j = 0; j < n; ++j) gbrow[j] += ail * grow[j];
              }
            tape.accumulate(b.id(), gb);
          }
        });
  }
  return out_t;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shapes disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] + b.values()[i];
  bool tracked = detail::track({&a, &b});
  Tensor out_t = detail::finish("add", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(out_t.id(),
                           [a, b](const std::vector<double>& g, Tape& tape) {
                             if (a.requires_grad()) tape.accumulate(a.id(), g);
                             if (b.requires_grad()) tape.accumulate(b.id(), g);
                           });
  }
  return out_t;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("sub: shapes disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] - b.values()[i];
  bool tracked = detail::track({&a, &b});
  Tensor out_t = detail::finish("sub", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, b](const std::vector<double>& g, Tape& tape) {
          if (a.requires_grad()) tape.accumulate(a.id(), g);
          if (b.requires_grad()) {
            std::vector<double> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
            tape.accumulate(b.id(), gb);
          }
        });
  }
  return out_t;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: shapes disagree, " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * b.values()[i];
  bool tracked = detail::track({&a, &b});
  Tensor out_t = detail::finish("mul", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, b](const std::vector<double>& g, Tape& tape) {
          if (a.requires_grad()) {
            std::vector<double> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i)
              ga[i] = g[i] * b.values()[i];
            tape.accumulate(a.id(), ga);
          }
          if (b.requires_grad()) {
            std::vector<double> gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i)
              gb[i] = g[i] * a.values()[i];
            tape.accumulate(b.id(), gb);
          }
        });
  }
  return out_t;
}

inline Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("scale", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(out_t.id(),
                           [a, c](const std::vector<double>& g, Tape& tape) {
                             std::vector<double> ga(g.size());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               ga[i] = g[i] * c;
                             tape.accumulate(a.id(), ga);
                           });
  }
  return out_t;
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("tanh", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, out_t](const std::vector<double>& g, Tape& tape) {
          std::vector<double> ga(g.size());
          const auto& y = out_t.values();
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] = g[i] * (1.0 - y[i] * y[i]);
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = detail::stable_sigmoid(a.values()[i]);
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("sigmoid", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, out_t](const std::vector<double>& g, Tape& tape) {
          std::vector<double> ga(g.size());
          const auto& y = out_t.values();
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] = g[i] * y[i] * (1.0 - y[i]);
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] > 0.0 ? a.values()[i] : 0.0;
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("relu", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(out_t.id(),
                           [a](const std::vector<double>& g, Tape& tape) {
                             std::vector<double> ga(g.size());
                             for (std::size_t i = 0; i < g.size(); ++i)
                               ga[i] = a.values()[i] > 0.0 ? g[i] : 0.0;
                             tape.accumulate(a.id(), ga);
                           });
  }
  return out_t;
}

// Inverted dropout: kept entries scale by 1/(1-rate) so the expectation is
// unchanged. Identity when not training or rate is 0.
inline Tensor dropout(const Tensor& a, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("dropout rate must be in [0, 1), got " +
                      std::to_string(rate));
  if (!training || rate == 0.0) return a;
  const double keep = 1.0 - rate;
  std::vector<double> mask(a.numel());
  for (auto& m : mask) m = rng.next_double() >= rate ? 1.0 / keep : 0.0;
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.values()[i] * mask[i];
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("dropout", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(),
        [a, mask = std::move(mask)](const std::vector<double>& g, Tape& tape) {
          std::vector<double> ga(g.size());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * mask[i];
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

inline Tensor softmax(const Tensor& a) {
  if (a.rank() != 1)
    throw ShapeError("softmax: need a vector, got " + shape_str(a.shape()));
  if (a.numel() == 0) throw ShapeError("softmax: empty input");
  const auto& v = a.values();
  double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    z += out[i];
  }
  for (auto& x : out) x /= z;
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("softmax", a.shape(), std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, out_t](const std::vector<double>& g, Tape& tape) {
          const auto& y = out_t.values();
          double dot = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
          std::vector<double> ga(g.size());
          for (std::size_t i = 0; i < g.size(); ++i)
            ga[i] = y[i] * (g[i] - dot);
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

// Window 2, stride 2; an odd trailing element is dropped. Ties route the
// gradient to the first element of the window.
inline Tensor maxpool1d(const Tensor& a) {
  if (a.rank() != 1)
    throw ShapeError("maxpool1d: need a vector, got " + shape_str(a.shape()));
  if (a.numel() < 2)
    throw ShapeError("maxpool1d: need at least 2 elements, got " +
                     shape_str(a.shape()));
  const auto& v = a.values();
  const std::size_t n = v.size() / 2;
  std::vector<double> out(n);
  std::vector<std::size_t> arg(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (v[2 * i] >= v[2 * i + 1]) {
      out[i] = v[2 * i];
      arg[i] = 2 * i;
    } else {
      out[i] = v[2 * i + 1];
      arg[i] = 2 * i + 1;
    }
  }
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("maxpool1d", {n}, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(),
        [a, arg = std::move(arg)](const std::vector<double>& g, Tape& tape) {
          std::vector<double> ga(a.numel(), 0.0);
          for (std::size_t i = 0; i < g.size(); ++i) ga[arg[i]] += g[i];
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != first.size())
      throw ShapeError("concat: rank mismatch, " + shape_str(first) + " vs " +
                       shape_str(p.shape()));
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis && p.shape()[d] != first[d])
        throw ShapeError("concat: shapes disagree off-axis, " +
                         shape_str(first) + " vs " + shape_str(p.shape()));
    out_shape[axis] += p.shape()[axis];
  }

  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  std::size_t tail = 1;
  for (std::size_t d = axis + 1; d < out_shape.size(); ++d)
    tail *= out_shape[d];

  std::vector<double> out(numel(out_shape));
  const std::size_t out_block = out_shape[axis] * tail;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t blk = p.shape()[axis] * tail;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.values().data() + o * blk, blk,
                  out.data() + o * out_block + off);
    off += blk;
  }

  bool tracked = false;
  if (Tape::active())
    for (const auto& p : parts)
      if (p.requires_grad()) tracked = true;
  Tensor out_t =
      detail::finish("concat", out_shape, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(),
        [parts, outer, tail, out_block](const std::vector<double>& g,
                                        Tape& tape) {
          std::size_t off = 0;
          for (const auto& p : parts) {
            const std::size_t pblk = p.numel() / outer;
            if (p.requires_grad()) {
              std::vector<double> gp(p.numel());
              for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(g.data() + o * out_block + off, pblk,
                            gp.data() + o * pblk);
              tape.accumulate(p.id(), gp);
            }
            off += pblk;
          }
        });
  }
  return out_t;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " +
                     shape_str(shape) + " changes element count");
  Tensor out = Tensor::view(std::move(shape), a.buffer());
  bool tracked = detail::track({&a});
  out.set_requires_grad(tracked);
  if (tracked) {
    Tape::active()->record(out.id(),
                           [a](const std::vector<double>& g, Tape& tape) {
                             tape.accumulate(a.id(), g);
                           });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2)
    throw ShapeError("transpose: need a matrix, got " + shape_str(a.shape()));
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.values()[i * n + j];
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("transpose", {n, m}, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(out_t.id(),
                           [a, m, n](const std::vector<double>& g, Tape& tape) {
                             std::vector<double> ga(m * n);
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < n; ++j)
                                 ga[i * n + j] = g[j * m + i];
                             tape.accumulate(a.id(), ga);
                           });
  }
  return out_t;
}

// Row subset of a matrix; duplicate indices accumulate on backward.
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  if (a.rank() != 2)
    throw ShapeError("gather_rows: need a matrix, got " +
                     shape_str(a.shape()));
  const std::size_t n = a.shape()[1];
  for (auto r : idx)
    if (r >= a.shape()[0])
      throw ShapeError("gather_rows: row " + std::to_string(r) +
                       " out of range for " + shape_str(a.shape()));
  std::vector<double> out(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a.values().data() + idx[r] * n, n, out.data() + r * n);
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("gather_rows", {idx.size(), n},
                                std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [a, idx, n](const std::vector<double>& g, Tape& tape) {
          std::vector<double> ga(a.numel(), 0.0);
          for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < n; ++c)
              ga[idx[r] * n + c] += g[r * n + c];
          tape.accumulate(a.id(), ga);
        });
  }
  return out_t;
}

// Vectors of equal length stacked as matrix rows.
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw ShapeError("stack_rows: no inputs");
  const std::size_t n = rows[0].numel();
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != n)
      throw ShapeError("stack_rows: need equal-length vectors, got " +
                       shape_str(rows[0].shape()) + " and " +
                       shape_str(r.shape()));
  }
  std::vector<double> out(rows.size() * n);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(rows[i].values().data(), n, out.data() + i * n);
  bool tracked = false;
  if (Tape::active())
    for (const auto& r : rows)
      if (r.requires_grad()) tracked = true;
  Tensor out_t =
      detail::finish("stack_rows", {rows.size(), n}, std::move(out), tracked);
  if (tracked) {
    Tape::active()->record(
        out_t.id(), [rows, n](const std::vector<double>& g, Tape& tape) {
          for (std::size_t i = 0; i < rows.size(); ++i) {
            if (!rows[i].requires_grad()) continue;
            std::vector<double> gr(g.data() + i * n, g.data() + (i + 1) * n);
            tape.accumulate(rows[i].id(), gr);
          }
        });
  }
  return out_t;
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  bool tracked = detail::track({&a});
  Tensor out_t = detail::finish("sum", {1}, {s}, tracked);
  if (tracked) {
    Tape::active()->record(out_t.id(),
                           [a](const std::vector<double>& g, Tape& tape) {
                             std::vector<double> ga(a.numel(), g[0]);
                             tape.accumulate(a.id(), ga);
                           });
  }
  return out_t;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Central finite differences against the tape. forward() must be a pure
// re-runnable function of the listed parameters returning a scalar loss.
template <typename Forward>
GradCheckResult gradient_check(
    const std::vector<std::pair<std::string, Tensor*>>& params,
    Forward&& forward, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    for (auto& [name, t] : params) t->set_requires_grad(true);
    Tape tape;
    Tensor loss = forward();
    tape.backward(loss);
    for (auto& [name, t] : params)
      analytic.push_back(tape.grad(*t).values());
  }
  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor* t = params[pi].second;
    for (std::size_t i = 0; i < t->numel(); ++i) {
      const double orig = t->values()[i];
      t->mutable_data()[i] = orig + h;
      const double fp = forward().values()[0];
      t->mutable_data()[i] = orig - h;
      const double fm = forward().values()[0];
      t->mutable_data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double rel =
          std::abs(analytic[pi][i] - fd) / std::max(1.0, std::abs(fd));
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = params[pi].first;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace threadsumm
