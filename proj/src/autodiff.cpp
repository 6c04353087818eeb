#include "mimicd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "mimicd/errors.hpp"
#include "mimicd/kernels.hpp"

namespace mimicd::ad {

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ValidationError(std::string(op) + ": shape mismatch " + shape_str(a) +
                        " vs " + shape_str(b));
}

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2)
    throw ValidationError(std::string(op) + ": expected a matrix, got " +
                          shape_str(t.shape()));
}

}  // namespace

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != product(shape_))
    throw ValidationError("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
}

std::size_t Tensor::rows() const {
  if (shape_.size() == 1) return 1;
  return shape_.empty() ? 1 : shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.size() == 1 ? shape_[0] : shape_[1];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::identical(const Tensor& other) const {
  return shape_ == other.shape_ &&
         (data_.empty() || std::memcmp(data_.data(), other.data_.data(),
                                       data_.size() * sizeof(double)) == 0);
}

// ---------------------------------------------------------------- ParamStore

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  Parameter p;
  p.name = name;
  p.grad = Tensor(init.shape());
  p.first_moment = Tensor(init.shape());
  p.second_moment = Tensor(init.shape());
  p.value = std::move(init);
  index_.emplace(name, params_.size());
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError("unknown parameter: " + name);
  return params_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.grad.fill(0.0);
}

bool ParamStore::identical(const ParamStore& other, bool include_optimizer) const {
  if (params_.size() != other.params_.size()) return false;
  if (include_optimizer && step_ != other.step_) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || !a.value.identical(b.value)) return false;
    if (include_optimizer && (!a.first_moment.identical(b.first_moment) ||
                              !a.second_moment.identical(b.second_moment)))
      return false;
  }
  return true;
}

void adamw_step(std::span<ParamStore* const> stores, const AdamWConfig& hyper) {
  for (ParamStore* store : stores) {
    const std::int64_t t = store->step_count() + 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (Parameter& p : store->params()) {
      if (p.grad.shape() != p.value.shape())
        shape_mismatch("adamw_step", p.value.shape(), p.grad.shape());
      double* w = p.value.data();
      double* m = p.first_moment.data();
      double* v = p.second_moment.data();
      const double* g = p.grad.data();
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= hyper.lr * hyper.weight_decay * w[i];
        const double denom = std::sqrt(vhat) + hyper.eps;
        // zero gradient with eps = 0 would otherwise give 0/0
        if (mhat != 0.0) w[i] -= hyper.lr * mhat / denom;
      }
    }
    store->set_step_count(t);
  }
}

void adamw_step(ParamStore& store, const AdamWConfig& hyper) {
  ParamStore* one[] = {&store};
  adamw_step(std::span<ParamStore* const>(one), hyper);
}

namespace {
constexpr char kStoreMagic[8] = {'M', 'I', 'M', 'I', 'C', 'D', 'P', 'S'};
constexpr int kStoreVersion = 1;

void write_raw(std::ostream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

void read_raw(std::istream& in, Tensor& t, const std::string& what) {
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!in) throw ParseError("parameter store truncated while reading " + what);
}
}  // namespace

void write_store(std::ostream& out, const ParamStore& store) {
  nlohmann::json header;
  header["format_version"] = kStoreVersion;
  header["step"] = store.step_count();
  auto& manifest = header["params"] = nlohmann::json::array();
  for (const auto& p : store.params())
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape()}});
  const std::string text = header.dump();
  const std::uint64_t len = text.size();
  out.write(kStoreMagic, sizeof(kStoreMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : store.params()) write_raw(out, p.value);
  for (const auto& p : store.params()) write_raw(out, p.first_moment);
  for (const auto& p : store.params()) write_raw(out, p.second_moment);
  if (!out) throw std::runtime_error("failed to write parameter store");
}

ParamStore read_store(std::istream& in) {
  char magic[sizeof(kStoreMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kStoreMagic, sizeof(magic)) != 0)
    throw ParseError("not a parameter store (bad magic)");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw ParseError("parameter store header length invalid");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("parameter store header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("parameter store header: ") + e.what());
  }
  const int version = header.value("format_version", -1);
  if (version != kStoreVersion)
    throw VersionError("parameter store format_version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(kStoreVersion) + ")");
  ParamStore store;
  for (const auto& entry : header.at("params")) {
    Shape shape = entry.at("shape").get<Shape>();
    store.add(entry.at("name").get<std::string>(), Tensor(shape));
  }
  for (auto& p : store.params()) read_raw(in, p.value, p.name);
  for (auto& p : store.params()) read_raw(in, p.first_moment, p.name + " (m)");
  for (auto& p : store.params()) read_raw(in, p.second_moment, p.name + " (v)");
  store.set_step_count(header.at("step").get<std::int64_t>());
  return store;
}

// --------------------------------------------------------------------- Graph

Var Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&, Node&)> bw,
                const char* op) {
  if (check_finite_ && !value.all_finite())
    throw NumericError(std::string("non-finite value produced by ") + op);
  Node n;
  n.value = std::move(value);
  n.needs_grad = record_ && needs_grad;
  if (n.needs_grad) n.backward = std::move(bw);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Var Graph::constant(Tensor value) { return push(std::move(value), false, nullptr, "constant"); }

Var Graph::param(Parameter& p) {
  Var v = push(p.value, true, nullptr, "param");
  nodes_.back().param = &p;
  return v;
}

Var Graph::param(const Parameter& p) {
  if (record_) throw ValidationError("const parameter " + p.name + " used on a recording graph");
  return push(p.value, false, nullptr, "param");
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& w = value(b);
  require_matrix("matmul", x);
  require_matrix("matmul", w);
  if (x.cols() != w.rows()) shape_mismatch("matmul", x.shape(), w.shape());
  const std::size_t m = x.rows(), k = x.cols(), n = w.cols();
  Tensor out = Tensor::matrix(m, n);
  kernels::gemm(x.data(), w.data(), out.data(), m, k, n, false);
  return push(std::move(out), needs(a) || needs(b),
              [a, b, m, k, n](Graph& g, Node& self) {
                if (g.needs(a)) {
                  const Tensor& w = g.value(b);
                  std::vector<double> wt(k * n);
                  kernels::transpose(w.data(), wt.data(), k, n);
                  kernels::gemm(self.grad.data(), wt.data(), g.grad_buffer(a).data(), m,
                                n, k, true);
                }
                if (g.needs(b))
                  kernels::gemm_tn(g.value(a).data(), self.grad.data(),
                                   g.grad_buffer(b).data(), m, k, n, true);
              },
              "matmul");
}

Var Graph::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_mismatch("add", x.shape(), y.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += y[i];
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, Node& self) {
                for (Var v : {a, b}) {
                  if (!g.needs(v)) continue;
                  Tensor& gb = g.grad_buffer(v);
                  for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] += self.grad[i];
                }
              },
              "add");
}

Var Graph::sub(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  if (x.shape() != y.shape()) shape_mismatch("sub", x.shape(), y.shape());
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= y[i];
  return push(std::move(out), needs(a) || needs(b),
              [a, b](Graph& g, Node& self) {
                if (g.needs(a)) {
                  Tensor& ga = g.grad_buffer(a);
                  for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
                }
                if (g.needs(b)) {
                  Tensor& gb = g.grad_buffer(b);
                  for (std::size_t i = 0; i < gb.numel(); ++i) gb[i] -= self.grad[i];
                }
              },
              "sub");
}

Var Graph::add_row(Var a, Var row) {
  const Tensor& x = value(a);
  const Tensor& r = value(row);
  require_matrix("add_row", x);
  if (r.numel() != x.cols() || r.rows() != 1) shape_mismatch("add_row", x.shape(), r.shape());
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += r[j];
  return push(std::move(out), needs(a) || needs(row),
              [a, row, m, n](Graph& g, Node& self) {
                if (g.needs(a)) {
                  Tensor& ga = g.grad_buffer(a);
                  for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
                }
                if (g.needs(row)) {
                  Tensor& gr = g.grad_buffer(row);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) gr[j] += self.grad[i * n + j];
                }
              },
              "add_row");
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Var Graph::gelu(Var a) {
  const Tensor& x = value(a);
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return push(std::move(out), needs(a),
              [a](Graph& g, Node& self) {
                const Tensor& x = g.value(a);
                Tensor& ga = g.grad_buffer(a);
                for (std::size_t i = 0; i < x.numel(); ++i) {
                  const double v = x[i];
                  const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
                  const double d = 0.5 * (1.0 + t) +
                                   0.5 * v * (1.0 - t * t) * kGeluC *
                                       (1.0 + 3.0 * kGeluA * v * v);
                  ga[i] += self.grad[i] * d;
                }
              },
              "gelu");
}

Var Graph::layer_norm(Var a) {
  const Tensor& x = value(a);
  require_matrix("layer_norm", x);
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out(x.shape());
  std::vector<double> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = x.data() + i * n;
    double* y = out.data() + i * n;
    const auto [lo, hi] = std::minmax_element(row, row + n);
    if (*lo == *hi) {
      // exact zeros for constant rows, no cancellation noise
      inv_std[i] = 1.0 / std::sqrt(kLayerNormEps);
      std::fill(y, y + n, 0.0);
      continue;
    }
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < n; ++j) y[j] = (row[j] - mean) * inv_std[i];
  }
  return push(std::move(out), needs(a),
              [a, m, n, inv_std = std::move(inv_std)](Graph& g, Node& self) {
                Tensor& ga = g.grad_buffer(a);
                for (std::size_t i = 0; i < m; ++i) {
                  const double* y = self.value.data() + i * n;
                  const double* gy = self.grad.data() + i * n;
                  double mg = 0.0, mgy = 0.0;
                  for (std::size_t j = 0; j < n; ++j) {
                    mg += gy[j];
                    mgy += gy[j] * y[j];
                  }
                  mg /= static_cast<double>(n);
                  mgy /= static_cast<double>(n);
                  for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += inv_std[i] * (gy[j] - mg - y[j] * mgy);
                }
              },
              "layer_norm");
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t m = value(parts[0]).rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool any = false;
  for (Var p : parts) {
    const Tensor& t = value(p);
    require_matrix("concat_cols", t);
    if (t.rows() != m) shape_mismatch("concat_cols", value(parts[0]).shape(), t.shape());
    widths.push_back(t.cols());
    total += t.cols();
    any = any || needs(p);
  }
  Tensor out = Tensor::matrix(m, total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& t = value(parts[k]);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(t.data() + i * widths[k], widths[k], out.data() + i * total + offset);
    offset += widths[k];
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), any,
              [ids, widths, m, total](Graph& g, Node& self) {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < ids.size(); ++k) {
                  if (g.needs(ids[k])) {
                    Tensor& gp = g.grad_buffer(ids[k]);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < widths[k]; ++j)
                        gp[i * widths[k] + j] += self.grad[i * total + offset + j];
                  }
                  offset += widths[k];
                }
              },
              "concat_cols");
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = value(a);
  require_matrix("slice_cols", x);
  if (begin >= end || end > x.cols())
    throw ValidationError("slice_cols: range [" + std::to_string(begin) + ", " +
                          std::to_string(end) + ") invalid for " + shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols(), w = end - begin;
  Tensor out = Tensor::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data() + i * n + begin, w, out.data() + i * w);
  return push(std::move(out), needs(a),
              [a, m, n, w, begin](Graph& g, Node& self) {
                Tensor& ga = g.grad_buffer(a);
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += self.grad[i * w + j];
              },
              "slice_cols");
}

Var Graph::mean_square(Var a) {
  const Tensor& x = value(a);
  if (x.numel() == 0) throw ValidationError("mean_square: empty tensor");
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x[i] * x[i];
  const double n = static_cast<double>(x.numel());
  return push(Tensor::scalar(s / n), needs(a),
              [a, n](Graph& g, Node& self) {
                const Tensor& x = g.value(a);
                Tensor& ga = g.grad_buffer(a);
                const double k = 2.0 * self.grad[0] / n;
                for (std::size_t i = 0; i < x.numel(); ++i) ga[i] += k * x[i];
              },
              "mean_square");
}

Var Graph::scale(Var a, double s) {
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  return push(std::move(out), needs(a),
              [a, s](Graph& g, Node& self) {
                Tensor& ga = g.grad_buffer(a);
                for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += s * self.grad[i];
              },
              "scale");
}

Var Graph::scale_rows(Var a, std::span<const double> s) {
  const Tensor& x = value(a);
  require_matrix("scale_rows", x);
  if (s.size() != x.rows())
    throw ValidationError("scale_rows: " + std::to_string(s.size()) + " factors for " +
                          shape_str(x.shape()));
  const std::size_t m = x.rows(), n = x.cols();
  Tensor out = x;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] *= s[i];
  std::vector<double> factors(s.begin(), s.end());
  return push(std::move(out), needs(a),
              [a, m, n, factors = std::move(factors)](Graph& g, Node& self) {
                Tensor& ga = g.grad_buffer(a);
                for (std::size_t i = 0; i < m; ++i)
                  for (std::size_t j = 0; j < n; ++j)
                    ga[i * n + j] += factors[i] * self.grad[i * n + j];
              },
              "scale_rows");
}

void Graph::backward(Var loss) {
  if (!record_) throw ValidationError("backward on a graph built without recording");
  Node& root = node(loss);
  if (root.value.numel() != 1)
    throw ValidationError("backward requires a scalar loss, got " +
                          shape_str(root.value.shape()));
  if (!root.needs_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.numel() == 0) continue;
    if (n.param) {
      Tensor& pg = n.param->grad;
      for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += n.grad[i];
    } else if (n.backward) {
      n.backward(*this, n);
    }
  }
}

}  // namespace mimicd::ad
