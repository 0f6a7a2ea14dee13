#include "ficl/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

#include "ficl/error.hpp"

namespace ficl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
  }
}

ConstMap as_mat(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.rows()),
                  static_cast<Eigen::Index>(t.cols()));
}

ConstMap as_mat(std::span<const double> d, std::size_t r, std::size_t c) {
  return ConstMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

MutMap as_mut(std::vector<double>& d, std::size_t r, std::size_t c) {
  return MutMap(d.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

Tensor checked(Shape shape, std::vector<double> data, const char* op) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite output");
  }
  return Tensor(std::move(shape), std::move(data));
}

double gelu_value(double x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(kC * (x + 0.044715 * x * x * x)));
}

double gelu_grad(double x) {
  constexpr double kC = 0.7978845608028654;
  const double u = kC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = kC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

Tensor softmax_impl(const Tensor& x, bool causal, const char* op) {
  const std::size_t r = x.rows(), c = x.cols();
  const std::size_t shift = causal ? (c >= r ? c - r : 0) : 0;
  if (causal && c < r) throw DimensionError(std::string(op) + ": more rows than columns");
  std::vector<double> out(x.size(), 0.0);
  auto in = x.data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t limit = causal ? i + shift + 1 : c;
    const double* row = in.data() + i * c;
    double* o = out.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < limit; ++j) mx = std::max(mx, row[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < limit; ++j) o[j] /= total;
  }
  Tensor y = checked(x.shape(), std::move(out), op);
  return Tape::record(y, {&x}, [y, r, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    auto p = y.data();
    auto& dx = *gi[0];
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += p[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
  std::size_t n = 1;
  for (auto e : shape_) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape_));
    n *= e;
  }
  if (n != data.size()) {
    throw DimensionError("shape " + shape_str(shape_) + " does not match " +
                         std::to_string(data.size()) + " elements");
  }
  data_ = std::make_shared<const std::vector<double>>(std::move(data));
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::identity(std::size_t n) {
  std::vector<double> d(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(d));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 0;
  return shape_.size() == 1 ? 1 : size() / shape_.back();
}

std::size_t Tensor::cols() const { return shape_.empty() ? 0 : shape_.back(); }

std::span<const double> Tensor::data() const {
  if (!data_) return {};
  return {data_->data(), data_->size()};
}

std::span<const double> Tensor::row(std::size_t r) const {
  if (r >= rows()) throw IndexError("row " + std::to_string(r) + " out of range");
  return data().subspan(r * cols(), cols());
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar " + shape_str(shape_));
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = 0;
  t.requires_grad_ = false;
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.data().size_bytes()) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---- Tape -----------------------------------------------------------------

const Tensor* GradientMap::find(const Tensor& leaf) const {
  if (!leaf.tracked() || leaf.tape() != tape_) return nullptr;
  auto it = grads_.find(leaf.node_);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor Tape::watch(const Tensor& leaf) {
  if (leaf.empty()) throw UsageError("cannot watch an empty tensor");
  Tensor t = leaf.detached();
  Node n;
  n.shape = t.shape();
  n.leaf = true;
  nodes_.push_back(std::move(n));
  t.tape_ = this;
  t.node_ = nodes_.size() - 1;
  t.requires_grad_ = true;
  return t;
}

Tensor Tape::push(Tensor out, std::vector<std::size_t> inputs, BackwardFn fn) {
  Node n;
  n.inputs = std::move(inputs);
  n.backward = std::move(fn);
  n.shape = out.shape();
  nodes_.push_back(std::move(n));
  out.tape_ = this;
  out.node_ = nodes_.size() - 1;
  out.requires_grad_ = true;
  return out;
}

Tensor Tape::record(Tensor out, std::initializer_list<const Tensor*> inputs, BackwardFn fn) {
  Tape* tape = nullptr;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Tensor* in : inputs) {
    if (in->tracked()) {
      if (tape != nullptr && tape != in->tape()) throw UsageError("inputs recorded on different tapes");
      tape = in->tape();
      ids.push_back(in->node_);
    } else {
      ids.push_back(kUntracked);
    }
  }
  if (tape == nullptr) return out;
  return tape->push(std::move(out), std::move(ids), std::move(fn));
}

Tensor Tape::record(Tensor out, std::span<const Tensor> inputs, BackwardFn fn) {
  Tape* tape = nullptr;
  std::vector<std::size_t> ids;
  ids.reserve(inputs.size());
  for (const Tensor& in : inputs) {
    if (in.tracked()) {
      if (tape != nullptr && tape != in.tape()) throw UsageError("inputs recorded on different tapes");
      tape = in.tape();
      ids.push_back(in.node_);
    } else {
      ids.push_back(kUntracked);
    }
  }
  if (tape == nullptr) return out;
  return tape->push(std::move(out), std::move(ids), std::move(fn));
}

GradientMap Tape::backward(const Tensor& loss) const {
  if (!loss.tracked() || loss.tape() != this) throw UsageError("backward: loss is not recorded on this tape");
  if (loss.size() != 1) throw UsageError("backward: loss must be a scalar");

  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss.node_] = {1.0};
  std::vector<std::vector<double>*> slots;
  for (std::size_t i = loss.node_ + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || node.leaf) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      const std::size_t in = node.inputs[j];
      if (in == kUntracked) continue;
      if (grads[in].empty()) {
        std::size_t n = 1;
        for (auto e : nodes_[in].shape) n *= e;
        grads[in].assign(n, 0.0);
      }
      slots[j] = &grads[in];
    }
    node.backward(grads[i], slots);
  }

  GradientMap out;
  out.tape_ = this;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf && !grads[i].empty()) {
      out.grads_.emplace(i, Tensor(nodes_[i].shape, std::move(grads[i])));
    }
  }
  return out;
}

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  as_mut(out, m, n).noalias() = as_mat(a) * as_mat(b);
  Tensor c = checked({m, n}, std::move(out), "matmul");
  Tensor av = a.detached(), bv = b.detached();
  return Tape::record(c, {&a, &b}, [av, bv, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    auto dc = as_mat(g, m, n);
    if (gi[0]) as_mut(*gi[0], m, k).noalias() += dc * as_mat(bv).transpose();
    if (gi[1]) as_mut(*gi[1], k, n).noalias() += as_mat(av).transpose() * dc;
  });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  std::vector<double> out(m * n);
  as_mut(out, m, n).noalias() = as_mat(a) * as_mat(b).transpose();
  Tensor c = checked({m, n}, std::move(out), "matmul_nt");
  Tensor av = a.detached(), bv = b.detached();
  return Tape::record(c, {&a, &b}, [av, bv, m, k, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    auto dc = as_mat(g, m, n);
    if (gi[0]) as_mut(*gi[0], m, k).noalias() += dc * as_mat(bv);
    if (gi[1]) as_mut(*gi[1], n, k).noalias() += dc.transpose() * as_mat(av);
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  as_mut(out, n, m) = as_mat(a).transpose();
  Tensor t({n, m}, std::move(out));
  return Tape::record(t, {&a}, [m, n](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    as_mut(*gi[0], m, n) += as_mat(g, n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor c = checked(a.shape(), std::move(out), "add");
  return Tape::record(c, {&a, &b}, [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (auto* d : gi) {
      if (!d) continue;
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& v) {
  const std::size_t d = a.cols();
  if (v.size() != d) {
    throw DimensionError("add_row: vector of " + std::to_string(v.size()) + " for last dimension " +
                         std::to_string(d));
  }
  const std::size_t r = a.rows();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = a[i * d + j] + v[j];
  Tensor c = checked(a.shape(), std::move(out), "add_row");
  return Tape::record(c, {&a, &v}, [r, d](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    if (gi[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += g[i * d + j];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  Tensor c = checked(a.shape(), std::move(out), "scale");
  return Tape::record(c, {&a}, [s](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * s;
  });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a[i]);
  Tensor c = checked(a.shape(), std::move(out), "gelu");
  Tensor av = a.detached();
  return Tape::record(c, {&a}, [av](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * gelu_grad(av[i]);
  });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  Tensor c = checked({1}, {total}, "sum");
  return Tape::record(c, {&a}, [](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (auto& v : *gi[0]) v += g[0];
  });
}

Tensor softmax_rows(const Tensor& x) { return softmax_impl(x, false, "softmax_rows"); }

Tensor causal_softmax_rows(const Tensor& x) { return softmax_impl(x, true, "causal_softmax_rows"); }

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  const std::size_t d = x.cols();
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layer_norm: gain/bias length must equal last dimension " + std::to_string(d));
  }
  const std::size_t r = x.rows();
  std::vector<double> xhat(x.size()), out(x.size()), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[i * d + j] = (row[j] - mean) * inv_std[i];
      out[i * d + j] = xhat[i * d + j] * gain[j] + bias[j];
    }
  }
  Tensor y = checked(x.shape(), std::move(out), "layer_norm");
  Tensor gv = gain.detached();
  return Tape::record(
      y, {&x, &gain, &bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), gv, r, d](
          std::span<const double> g, std::span<std::vector<double>* const> gi) {
        if (gi[1]) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gi[1])[j] += g[i * d + j] * xhat[i * d + j];
        }
        if (gi[2]) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < d; ++j) (*gi[2])[j] += g[i * d + j];
        }
        if (gi[0]) {
          const double dd = static_cast<double>(d);
          for (std::size_t i = 0; i < r; ++i) {
            double mean_g = 0.0, mean_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[i * d + j] * gv[j];
              mean_g += gh;
              mean_gx += gh * xhat[i * d + j];
            }
            mean_g /= dd;
            mean_gx /= dd;
            for (std::size_t j = 0; j < d; ++j) {
              const double gh = g[i * d + j] * gv[j];
              (*gi[0])[i * d + j] += inv_std[i] * (gh - mean_g - xhat[i * d + j] * mean_gx);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_matrix(logits, "cross_entropy");
  const std::size_t t = logits.rows(), v = logits.cols();
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " rows");
  }
  for (int id : targets) {
    if (id < 0 || static_cast<std::size_t>(id) >= v) {
      throw IndexError("cross_entropy: target " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(v));
    }
  }
  std::vector<double> probs(logits.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    const double* row = logits.data().data() + i * v;
    const double mx = *std::max_element(row, row + v);
    double total = 0.0;
    for (std::size_t j = 0; j < v; ++j) total += std::exp(row[j] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(row[j] - lse);
    loss += lse - row[targets[i]];
  }
  loss /= static_cast<double>(t);
  Tensor c = checked({1}, {loss}, "cross_entropy");
  std::vector<int> tg(targets.begin(), targets.end());
  return Tape::record(c, {&logits}, [probs = std::move(probs), tg = std::move(tg), t, v](
                                        std::span<const double> g, std::span<std::vector<double>* const> gi) {
    const double s = g[0] / static_cast<double>(t);
    auto& d = *gi[0];
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < v; ++j) d[i * v + j] += s * probs[i * v + j];
      d[i * v + static_cast<std::size_t>(tg[i])] -= s;
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t start, std::size_t count) {
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || start + count > r) {
    throw IndexError("slice_rows: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(r) + " rows");
  }
  auto src = x.data().subspan(start * c, count * c);
  Tensor y({count, c}, {src.begin(), src.end()});
  return Tape::record(y, {&x}, [start, c](std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[start * c + i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_matrix(x, "slice_cols");
  const std::size_t r = x.rows(), c = x.cols();
  if (count == 0 || start + count > c) {
    throw IndexError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + count) +
                     ") outside " + std::to_string(c) + " columns");
  }
  std::vector<double> out(r * count);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = x[i * c + start + j];
  Tensor y({r, count}, std::move(out));
  return Tape::record(y, {&x}, [r, c, start, count](std::span<const double> g,
                                                   std::span<std::vector<double>* const> gi) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) (*gi[0])[i * c + start + j] += g[i * count + j];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_rows: no parts");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw DimensionError("concat_rows: column count mismatch");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  Tensor y({total, c}, std::move(out));
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) sizes.push_back(p.size());
  return Tape::record(y, parts, [offsets = std::move(offsets), sizes = std::move(sizes)](
                                    std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (std::size_t k = 0; k < gi.size(); ++k) {
      if (!gi[k]) continue;
      for (std::size_t i = 0; i < sizes[k]; ++i) (*gi[k])[i] += g[offsets[k] + i];
    }
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no parts");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths, offsets;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row count mismatch");
    offsets.push_back(total);
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  for (std::size_t k = 0; k < parts.size(); ++k)
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out[i * total + offsets[k] + j] = parts[k][i * widths[k] + j];
  Tensor y({r, total}, std::move(out));
  return Tape::record(y, parts, [r, total, widths = std::move(widths), offsets = std::move(offsets)](
                                    std::span<const double> g, std::span<std::vector<double>* const> gi) {
    for (std::size_t k = 0; k < gi.size(); ++k) {
      if (!gi[k]) continue;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < widths[k]; ++j) (*gi[k])[i * widths[k] + j] += g[i * total + offsets[k] + j];
    }
  });
}

Tensor gather_rows(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "gather_rows");
  if (ids.empty()) throw UsageError("gather_rows: no ids");
  const std::size_t n = table.rows(), c = table.cols();
  std::vector<double> out;
  out.reserve(ids.size() * c);
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= n) {
      throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " + std::to_string(n));
    }
    auto r = table.row(static_cast<std::size_t>(id));
    out.insert(out.end(), r.begin(), r.end());
  }
  Tensor y({ids.size(), c}, std::move(out));
  std::vector<int> idv(ids.begin(), ids.end());
  return Tape::record(y, {&table}, [idv = std::move(idv), c](std::span<const double> g,
                                                            std::span<std::vector<double>* const> gi) {
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) (*gi[0])[static_cast<std::size_t>(idv[i]) * c + j] += g[i * c + j];
  });
}

}  // namespace ficl
