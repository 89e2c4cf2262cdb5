#include "semiseg/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "semiseg/errors.hpp"
#include "semiseg/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace semiseg {

int intraop_threads() {
  static int cached = [] {
    const char* env = std::getenv("SEMISEG_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (!end || *end != '\0' || v < 1 || v > 64)
      throw ConfigError("SEMISEG_THREADS must be an integer in [1,64]");
    return static_cast<int>(v);
  }();
  return cached;
}

namespace {

#ifdef _OPENMP
#define SEMISEG_PAR_FOR(nthreads) _Pragma("omp parallel for num_threads(nthreads) if (nthreads > 1)")
#endif

template <class S>
void conv_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Tensor<S>& y, int k,
                  int threads) {
  const int64_t Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int64_t Co = y.shape[0];
  const int64_t plane = H * W;
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t co = 0; co < Co; ++co) {
    S* yp = y.ptr() + co * plane;
    const S bias = b.data[static_cast<size_t>(co)];
    for (int64_t i = 0; i < plane; ++i) yp[i] = bias;
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const S* xp = x.ptr() + ci * plane;
      if (k == 1) {
        const S wv = w.data[static_cast<size_t>(co * Ci + ci)];
        for (int64_t i = 0; i < plane; ++i) yp[i] += wv * xp[i];
        continue;
      }
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const S wv = w.data[static_cast<size_t>(((co * Ci + ci) * 3 + ky) * 3 + kx)];
          const int64_t dy = ky - 1, dx = kx - 1;
          const int64_t ylo = std::max<int64_t>(0, -dy), yhi = std::min<int64_t>(H, H - dy);
          const int64_t xlo = std::max<int64_t>(0, -dx), xhi = std::min<int64_t>(W, W - dx);
          for (int64_t yy = ylo; yy < yhi; ++yy) {
            S* dst = yp + yy * W;
            const S* src = xp + (yy + dy) * W + dx;
            for (int64_t xx = xlo; xx < xhi; ++xx) dst[xx] += wv * src[xx];
          }
        }
    }
  }
}

template <class S>
void conv_backward_data(const Tensor<S>& w, const Tensor<S>& gy, Tensor<S>& gx, int k, int threads) {
  const int64_t Ci = gx.shape[0], H = gx.shape[1], W = gx.shape[2];
  const int64_t Co = gy.shape[0];
  const int64_t plane = H * W;
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t ci = 0; ci < Ci; ++ci) {
    S* gxp = gx.ptr() + ci * plane;
    for (int64_t co = 0; co < Co; ++co) {
      const S* gyp = gy.ptr() + co * plane;
      if (k == 1) {
        const S wv = w.data[static_cast<size_t>(co * Ci + ci)];
        for (int64_t i = 0; i < plane; ++i) gxp[i] += wv * gyp[i];
        continue;
      }
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const S wv = w.data[static_cast<size_t>(((co * Ci + ci) * 3 + ky) * 3 + kx)];
          const int64_t dy = ky - 1, dx = kx - 1;
          const int64_t ylo = std::max<int64_t>(0, -dy), yhi = std::min<int64_t>(H, H - dy);
          const int64_t xlo = std::max<int64_t>(0, -dx), xhi = std::min<int64_t>(W, W - dx);
          for (int64_t yy = ylo; yy < yhi; ++yy) {
            const S* src = gyp + yy * W;
            S* dst = gxp + (yy + dy) * W + dx;
            for (int64_t xx = xlo; xx < xhi; ++xx) dst[xx] += wv * src[xx];
          }
        }
    }
  }
}

template <class S>
void conv_backward_params(const Tensor<S>& x, const Tensor<S>& gy, Tensor<S>& gw, Tensor<S>& gb, int k,
                          int threads) {
  const int64_t Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int64_t Co = gy.shape[0];
  const int64_t plane = H * W;
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t co = 0; co < Co; ++co) {
    const S* gyp = gy.ptr() + co * plane;
    double bacc = 0;
    for (int64_t i = 0; i < plane; ++i) bacc += static_cast<double>(gyp[i]);
    gb.data[static_cast<size_t>(co)] += static_cast<S>(bacc);
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const S* xp = x.ptr() + ci * plane;
      if (k == 1) {
        double acc = 0;
        for (int64_t i = 0; i < plane; ++i) acc += static_cast<double>(gyp[i]) * xp[i];
        gw.data[static_cast<size_t>(co * Ci + ci)] += static_cast<S>(acc);
        continue;
      }
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int64_t dy = ky - 1, dx = kx - 1;
          const int64_t ylo = std::max<int64_t>(0, -dy), yhi = std::min<int64_t>(H, H - dy);
          const int64_t xlo = std::max<int64_t>(0, -dx), xhi = std::min<int64_t>(W, W - dx);
          double acc = 0;
          for (int64_t yy = ylo; yy < yhi; ++yy) {
            const S* gr = gyp + yy * W;
            const S* xr = xp + (yy + dy) * W + dx;
            for (int64_t xx = xlo; xx < xhi; ++xx) acc += static_cast<double>(gr[xx]) * xr[xx];
          }
          gw.data[static_cast<size_t>(((co * Ci + ci) * 3 + ky) * 3 + kx)] += static_cast<S>(acc);
        }
    }
  }
}

template <class S>
void tconv_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, Tensor<S>& y, int threads) {
  const int64_t Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int64_t Co = y.shape[0], Ho = y.shape[1], Wo = y.shape[2];
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t co = 0; co < Co; ++co) {
    S* yp = y.ptr() + co * Ho * Wo;
    const S bias = b.data[static_cast<size_t>(co)];
    for (int64_t i = 0; i < Ho * Wo; ++i) yp[i] = bias;
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const S* xp = x.ptr() + ci * H * W;
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx) {
          const S wv = w.data[static_cast<size_t>(((co * Ci + ci) * 2 + ky) * 2 + kx)];
          for (int64_t yy = 0; yy < H; ++yy) {
            S* orow = yp + (2 * yy + ky) * Wo + kx;
            const S* irow = xp + yy * W;
            for (int64_t xx = 0; xx < W; ++xx) orow[2 * xx] += wv * irow[xx];
          }
        }
    }
  }
}

template <class S>
void tconv_backward_data(const Tensor<S>& w, const Tensor<S>& gy, Tensor<S>& gx, int threads) {
  const int64_t Ci = gx.shape[0], H = gx.shape[1], W = gx.shape[2];
  const int64_t Co = gy.shape[0], Wo = gy.shape[2];
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t ci = 0; ci < Ci; ++ci) {
    S* gxp = gx.ptr() + ci * H * W;
    for (int64_t co = 0; co < Co; ++co) {
      const S* gyp = gy.ptr() + co * gy.shape[1] * Wo;
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx) {
          const S wv = w.data[static_cast<size_t>(((co * Ci + ci) * 2 + ky) * 2 + kx)];
          for (int64_t yy = 0; yy < H; ++yy) {
            S* dst = gxp + yy * W;
            const S* src = gyp + (2 * yy + ky) * Wo + kx;
            for (int64_t xx = 0; xx < W; ++xx) dst[xx] += wv * src[2 * xx];
          }
        }
    }
  }
}

template <class S>
void tconv_backward_params(const Tensor<S>& x, const Tensor<S>& gy, Tensor<S>& gw, Tensor<S>& gb,
                           int threads) {
  const int64_t Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int64_t Co = gy.shape[0], Wo = gy.shape[2];
  (void)threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(threads) if (threads > 1)
#endif
  for (int64_t co = 0; co < Co; ++co) {
    const S* gyp = gy.ptr() + co * gy.shape[1] * Wo;
    double bacc = 0;
    for (int64_t i = 0; i < gy.shape[1] * Wo; ++i) bacc += static_cast<double>(gyp[i]);
    gb.data[static_cast<size_t>(co)] += static_cast<S>(bacc);
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const S* xp = x.ptr() + ci * H * W;
      for (int ky = 0; ky < 2; ++ky)
        for (int kx = 0; kx < 2; ++kx) {
          double acc = 0;
          for (int64_t yy = 0; yy < H; ++yy) {
            const S* irow = xp + yy * W;
            const S* grow = gyp + (2 * yy + ky) * Wo + kx;
            for (int64_t xx = 0; xx < W; ++xx) acc += static_cast<double>(irow[xx]) * grow[2 * xx];
          }
          gw.data[static_cast<size_t>(((co * Ci + ci) * 2 + ky) * 2 + kx)] += static_cast<S>(acc);
        }
    }
  }
}

}  // namespace

template <class S>
int Graph<S>::add_node(NodeT<S> nd) {
  if (node_by_name_.count(nd.name)) throw ConfigError("duplicate node name: " + nd.name);
  int id = static_cast<int>(nodes_.size());
  node_by_name_[nd.name] = id;
  nodes_.push_back(std::move(nd));
  plan_cache_.clear();
  return id;
}

template <class S>
int Graph<S>::new_param(const std::string& name, Shape shape) {
  if (param_by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
  int id = static_cast<int>(params_.size());
  param_by_name_[name] = id;
  ParamT<S> p;
  p.name = name;
  p.value = Tensor<S>(shape);
  p.grad = Tensor<S>(std::move(shape));
  params_.push_back(std::move(p));
  return id;
}

template <class S>
int Graph<S>::add_input(const std::string& name, Shape shape) {
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Input;
  nd.value = Tensor<S>(std::move(shape));
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::conv(const std::string& name, int in_node, int out_ch, int ksize) {
  if (ksize != 1 && ksize != 3) throw ConfigError("conv supports ksize 1 or 3");
  const auto& src = node(in_node);
  if (src.value.rank() != 3) throw ShapeError("conv input must be (C,H,W)");
  int64_t ci = src.value.shape[0];
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Conv;
  nd.in = {in_node};
  nd.ksize = ksize;
  nd.weight = new_param(name + ".weight", {out_ch, ci, ksize, ksize});
  nd.bias = new_param(name + ".bias", {out_ch});
  nd.value = Tensor<S>({out_ch, src.value.shape[1], src.value.shape[2]});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::tconv(const std::string& name, int in_node, int out_ch) {
  const auto& src = node(in_node);
  if (src.value.rank() != 3) throw ShapeError("tconv input must be (C,H,W)");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::TConv;
  nd.in = {in_node};
  nd.weight = new_param(name + ".weight", {out_ch, src.value.shape[0], 2, 2});
  nd.bias = new_param(name + ".bias", {out_ch});
  nd.value = Tensor<S>({out_ch, src.value.shape[1] * 2, src.value.shape[2] * 2});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::maxpool(const std::string& name, int in_node) {
  const auto& src = node(in_node);
  if (src.value.rank() != 3) throw ShapeError("maxpool input must be (C,H,W)");
  if (src.value.shape[1] % 2 || src.value.shape[2] % 2)
    throw ShapeError("maxpool needs even H and W at node " + name);
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::MaxPool;
  nd.in = {in_node};
  nd.value = Tensor<S>({src.value.shape[0], src.value.shape[1] / 2, src.value.shape[2] / 2});
  nd.route.resize(static_cast<size_t>(nd.value.numel()));
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::relu(const std::string& name, int in_node) {
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Relu;
  nd.in = {in_node};
  nd.value = Tensor<S>(node(in_node).value.shape);
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::sigmoid(const std::string& name, int in_node) {
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Sigmoid;
  nd.in = {in_node};
  nd.value = Tensor<S>(node(in_node).value.shape);
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::softmax(const std::string& name, int in_node) {
  const auto& src = node(in_node);
  if (src.value.rank() != 3) throw ShapeError("softmax input must be (C,H,W)");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Softmax;
  nd.in = {in_node};
  nd.value = Tensor<S>(src.value.shape);
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::concat(const std::string& name, int a, int b) {
  const auto& na = node(a);
  const auto& nb = node(b);
  if (na.value.rank() != 3 || nb.value.rank() != 3 || na.value.shape[1] != nb.value.shape[1] ||
      na.value.shape[2] != nb.value.shape[2])
    throw ShapeError("concat operands must share H,W at node " + name);
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Concat;
  nd.in = {a, b};
  nd.value = Tensor<S>({na.value.shape[0] + nb.value.shape[0], na.value.shape[1], na.value.shape[2]});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::add(const std::string& name, int a, int b) {
  if (!node(a).value.same_shape(node(b).value)) throw ShapeError("add operands must match at node " + name);
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::Add;
  nd.in = {a, b};
  nd.value = Tensor<S>(node(a).value.shape);
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::loss_l1(const std::string& name, int pred, int target) {
  if (!node(pred).value.same_shape(node(target).value)) throw ShapeError("l1 operands must match");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::LossL1;
  nd.in = {pred, target};
  nd.value = Tensor<S>({1});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::loss_ce(const std::string& name, int pred, int target, Reduction red) {
  const auto& np = node(pred);
  if (np.value.rank() != 3 || !np.value.same_shape(node(target).value))
    throw ShapeError("cross-entropy operands must be matching (L,H,W)");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::LossCE;
  nd.in = {pred, target};
  nd.reduction = red;
  nd.value = Tensor<S>({1});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::loss_dice(const std::string& name, int pred, int target) {
  const auto& np = node(pred);
  if (np.value.rank() != 3 || !np.value.same_shape(node(target).value))
    throw ShapeError("dice operands must be matching (L,H,W)");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::LossDice;
  nd.in = {pred, target};
  nd.value = Tensor<S>({1});
  return add_node(std::move(nd));
}

template <class S>
int Graph<S>::loss_mse(const std::string& name, int pred, int target) {
  if (!node(pred).value.same_shape(node(target).value)) throw ShapeError("mse operands must match");
  NodeT<S> nd;
  nd.name = name;
  nd.op = Op::LossMSE;
  nd.in = {pred, target};
  nd.value = Tensor<S>({1});
  return add_node(std::move(nd));
}

template <class S>
void Graph<S>::init_params(uint64_t seed) {
  for (auto& p : params_) {
    bool is_bias = p.name.size() >= 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0;
    if (is_bias) {
      p.value.fill(S(0));
      continue;
    }
    // weight (Co,Ci,k,k): fan_in = Ci*k*k
    const Shape& sh = p.value.shape;
    double fan_in = static_cast<double>(sh[1]) * static_cast<double>(sh[2]) * static_cast<double>(sh[3]);
    double stddev = std::sqrt(2.0 / fan_in);
    RandomStream rs(derive_seed(seed, "init/" + p.name));
    for (auto& v : p.value.data) v = static_cast<S>(rs.normal(0.0, stddev));
  }
}

template <class S>
void Graph<S>::set_input(const std::string& name, const Tensor<S>& v) {
  int id = require_node(name);
  NodeT<S>& nd = nodes_[static_cast<size_t>(id)];
  if (nd.op != Op::Input) throw ConfigError("set_input target is not an input: " + name);
  if (!nd.value.same_shape(v))
    throw ShapeError("input " + name + " expects " + shape_str(nd.value.shape) + ", got " + shape_str(v.shape));
  nd.value = v;
  nd.input_set = true;
  forwarded_target_ = -1;
}

template <class S>
const std::vector<int>& Graph<S>::plan_for(int target) {
  auto it = plan_cache_.find(target);
  if (it != plan_cache_.end()) return it->second;
  std::vector<char> seen(nodes_.size(), 0);
  std::vector<int> stack{target};
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    if (seen[static_cast<size_t>(id)]) continue;
    seen[static_cast<size_t>(id)] = 1;
    for (int i : nodes_[static_cast<size_t>(id)].in) stack.push_back(i);
  }
  std::vector<int> plan;
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (seen[i]) plan.push_back(static_cast<int>(i));  // ids ascend in creation order = topo order
  return plan_cache_.emplace(target, std::move(plan)).first->second;
}

template <class S>
void Graph<S>::check_finite(const NodeT<S>& nd) const {
  if (!nd.value.all_finite()) throw TrainingError("non-finite values after node '" + nd.name + "'");
}

template <class S>
void Graph<S>::forward_to(int target) {
  if (target < 0 || target >= node_count()) throw ConfigError("forward_to: bad node id");
  for (int id : plan_for(target)) {
    NodeT<S>& nd = nodes_[static_cast<size_t>(id)];
    forward_node(nd);
    check_finite(nd);
  }
  forwarded_target_ = target;
}

template <class S>
void Graph<S>::forward_node(NodeT<S>& nd) {
  switch (nd.op) {
    case Op::Input:
      if (!nd.input_set) throw TrainingError("input '" + nd.name + "' used before set_input");
      return;
    case Op::Conv: {
      conv_forward(nodes_[static_cast<size_t>(nd.in[0])].value, params_[static_cast<size_t>(nd.weight)].value,
                   params_[static_cast<size_t>(nd.bias)].value, nd.value, nd.ksize, threads_);
      return;
    }
    case Op::TConv: {
      tconv_forward(nodes_[static_cast<size_t>(nd.in[0])].value, params_[static_cast<size_t>(nd.weight)].value,
                    params_[static_cast<size_t>(nd.bias)].value, nd.value, threads_);
      return;
    }
    case Op::MaxPool: {
      const Tensor<S>& x = nodes_[static_cast<size_t>(nd.in[0])].value;
      const int64_t C = x.shape[0], H = x.shape[1], W = x.shape[2];
      const int64_t Ho = H / 2, Wo = W / 2;
      for (int64_t c = 0; c < C; ++c)
        for (int64_t y = 0; y < Ho; ++y)
          for (int64_t x2 = 0; x2 < Wo; ++x2) {
            int64_t base = (c * H + 2 * y) * W + 2 * x2;
            // scan order fixed; ties keep the first maximum
            int64_t best = base;
            S bv = x.data[static_cast<size_t>(base)];
            const int64_t cand[3] = {base + 1, base + W, base + W + 1};
            for (int64_t idx : cand) {
              S v = x.data[static_cast<size_t>(idx)];
              if (v > bv) {
                bv = v;
                best = idx;
              }
            }
            int64_t o = (c * Ho + y) * Wo + x2;
            nd.value.data[static_cast<size_t>(o)] = bv;
            nd.route[static_cast<size_t>(o)] = static_cast<int32_t>(best);
          }
      return;
    }
    case Op::Relu: {
      const Tensor<S>& x = nodes_[static_cast<size_t>(nd.in[0])].value;
      for (size_t i = 0; i < x.data.size(); ++i) nd.value.data[i] = x.data[i] > S(0) ? x.data[i] : S(0);
      return;
    }
    case Op::Sigmoid: {
      const Tensor<S>& x = nodes_[static_cast<size_t>(nd.in[0])].value;
      for (size_t i = 0; i < x.data.size(); ++i)
        nd.value.data[i] = static_cast<S>(1.0 / (1.0 + std::exp(-static_cast<double>(x.data[i]))));
      return;
    }
    case Op::Softmax: {
      const Tensor<S>& x = nodes_[static_cast<size_t>(nd.in[0])].value;
      const int64_t L = x.shape[0], plane = x.shape[1] * x.shape[2];
      for (int64_t n = 0; n < plane; ++n) {
        double mx = -1e300;
        for (int64_t c = 0; c < L; ++c) mx = std::max(mx, static_cast<double>(x.data[static_cast<size_t>(c * plane + n)]));
        double sum = 0;
        for (int64_t c = 0; c < L; ++c) {
          double e = std::exp(static_cast<double>(x.data[static_cast<size_t>(c * plane + n)]) - mx);
          nd.value.data[static_cast<size_t>(c * plane + n)] = static_cast<S>(e);
          sum += e;
        }
        for (int64_t c = 0; c < L; ++c)
          nd.value.data[static_cast<size_t>(c * plane + n)] =
              static_cast<S>(static_cast<double>(nd.value.data[static_cast<size_t>(c * plane + n)]) / sum);
      }
      return;
    }
    case Op::Concat: {
      const Tensor<S>& a = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& b = nodes_[static_cast<size_t>(nd.in[1])].value;
      std::copy(a.data.begin(), a.data.end(), nd.value.data.begin());
      std::copy(b.data.begin(), b.data.end(), nd.value.data.begin() + static_cast<int64_t>(a.data.size()));
      return;
    }
    case Op::Add: {
      const Tensor<S>& a = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& b = nodes_[static_cast<size_t>(nd.in[1])].value;
      for (size_t i = 0; i < a.data.size(); ++i) nd.value.data[i] = a.data[i] + b.data[i];
      return;
    }
    case Op::LossL1: {
      const Tensor<S>& p = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double acc = 0;
      for (size_t i = 0; i < p.data.size(); ++i) acc += std::abs(static_cast<double>(p.data[i]) - t.data[i]);
      nd.value.data[0] = static_cast<S>(acc / static_cast<double>(p.numel()));
      return;
    }
    case Op::LossCE: {
      const Tensor<S>& p = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double acc = 0;
      for (size_t i = 0; i < p.data.size(); ++i) {
        double tv = t.data[i];
        if (tv != 0.0) acc -= tv * std::log(std::max(static_cast<double>(p.data[i]), kCeClamp));
      }
      if (nd.reduction == Reduction::Mean) acc /= static_cast<double>(p.shape[1] * p.shape[2]);
      nd.value.data[0] = static_cast<S>(acc);
      return;
    }
    case Op::LossDice: {
      const Tensor<S>& p = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      const int64_t L = p.shape[0], plane = p.shape[1] * p.shape[2];
      double mean = 0;
      for (int64_t c = 0; c < L; ++c) {
        double inter = 0, sp = 0, st = 0;
        for (int64_t n = 0; n < plane; ++n) {
          double pv = p.data[static_cast<size_t>(c * plane + n)];
          double tv = t.data[static_cast<size_t>(c * plane + n)];
          inter += pv * tv;
          sp += pv;
          st += tv;
        }
        mean += (2.0 * inter + kDiceEps) / (sp + st + kDiceEps);
      }
      nd.value.data[0] = static_cast<S>(1.0 - mean / static_cast<double>(L));
      return;
    }
    case Op::LossMSE: {
      const Tensor<S>& p = nodes_[static_cast<size_t>(nd.in[0])].value;
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double acc = 0;
      for (size_t i = 0; i < p.data.size(); ++i) {
        double d = static_cast<double>(p.data[i]) - t.data[i];
        acc += d * d;
      }
      nd.value.data[0] = static_cast<S>(acc / static_cast<double>(p.numel()));
      return;
    }
  }
  throw ConfigError("unhandled op in forward");
}

template <class S>
void Graph<S>::backward(int loss_node, double scale) {
  if (forwarded_target_ != loss_node)
    throw TrainingError("backward requires a preceding forward_to on the same loss node");
  const NodeT<S>& ln = node(loss_node);
  if (ln.op != Op::LossL1 && ln.op != Op::LossCE && ln.op != Op::LossDice && ln.op != Op::LossMSE)
    throw ConfigError("backward target must be a loss node");
  const std::vector<int>& plan = plan_for(loss_node);
  for (int id : plan) {
    NodeT<S>& nd = nodes_[static_cast<size_t>(id)];
    if (nd.grad.shape != nd.value.shape)
      nd.grad = Tensor<S>(nd.value.shape);
    else
      nd.grad.fill(S(0));
  }
  nodes_[static_cast<size_t>(loss_node)].grad.data[0] = static_cast<S>(scale);
  for (auto it = plan.rbegin(); it != plan.rend(); ++it) backward_node(nodes_[static_cast<size_t>(*it)]);
  for (const auto& [pname, delta] : grad_faults_) {
    ParamT<S>* p = find_param(pname);
    if (!p) throw ConfigError("grad fault targets unknown parameter: " + pname);
    p->grad.data[0] += static_cast<S>(delta);
  }
}

template <class S>
void Graph<S>::backward_node(NodeT<S>& nd) {
  switch (nd.op) {
    case Op::Input:
      return;
    case Op::Conv: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      conv_backward_data(params_[static_cast<size_t>(nd.weight)].value, nd.grad, src.grad, nd.ksize, threads_);
      conv_backward_params(src.value, nd.grad, params_[static_cast<size_t>(nd.weight)].grad,
                           params_[static_cast<size_t>(nd.bias)].grad, nd.ksize, threads_);
      return;
    }
    case Op::TConv: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      tconv_backward_data(params_[static_cast<size_t>(nd.weight)].value, nd.grad, src.grad, threads_);
      tconv_backward_params(src.value, nd.grad, params_[static_cast<size_t>(nd.weight)].grad,
                            params_[static_cast<size_t>(nd.bias)].grad, threads_);
      return;
    }
    case Op::MaxPool: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      for (size_t i = 0; i < nd.route.size(); ++i)
        src.grad.data[static_cast<size_t>(nd.route[i])] += nd.grad.data[i];
      return;
    }
    case Op::Relu: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      for (size_t i = 0; i < nd.grad.data.size(); ++i)
        if (src.value.data[i] > S(0)) src.grad.data[i] += nd.grad.data[i];
      return;
    }
    case Op::Sigmoid: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      for (size_t i = 0; i < nd.grad.data.size(); ++i) {
        double s = nd.value.data[i];
        src.grad.data[i] += static_cast<S>(s * (1.0 - s) * static_cast<double>(nd.grad.data[i]));
      }
      return;
    }
    case Op::Softmax: {
      NodeT<S>& src = nodes_[static_cast<size_t>(nd.in[0])];
      const int64_t L = nd.value.shape[0], plane = nd.value.shape[1] * nd.value.shape[2];
      for (int64_t n = 0; n < plane; ++n) {
        double dot = 0;
        for (int64_t c = 0; c < L; ++c) {
          size_t i = static_cast<size_t>(c * plane + n);
          dot += static_cast<double>(nd.grad.data[i]) * nd.value.data[i];
        }
        for (int64_t c = 0; c < L; ++c) {
          size_t i = static_cast<size_t>(c * plane + n);
          src.grad.data[i] += static_cast<S>(static_cast<double>(nd.value.data[i]) *
                                             (static_cast<double>(nd.grad.data[i]) - dot));
        }
      }
      return;
    }
    case Op::Concat: {
      NodeT<S>& a = nodes_[static_cast<size_t>(nd.in[0])];
      NodeT<S>& b = nodes_[static_cast<size_t>(nd.in[1])];
      size_t na = a.value.data.size();
      for (size_t i = 0; i < na; ++i) a.grad.data[i] += nd.grad.data[i];
      for (size_t i = 0; i < b.value.data.size(); ++i) b.grad.data[i] += nd.grad.data[na + i];
      return;
    }
    case Op::Add: {
      NodeT<S>& a = nodes_[static_cast<size_t>(nd.in[0])];
      NodeT<S>& b = nodes_[static_cast<size_t>(nd.in[1])];
      for (size_t i = 0; i < nd.grad.data.size(); ++i) {
        a.grad.data[i] += nd.grad.data[i];
        b.grad.data[i] += nd.grad.data[i];
      }
      return;
    }
    case Op::LossL1: {
      NodeT<S>& p = nodes_[static_cast<size_t>(nd.in[0])];
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double g = static_cast<double>(nd.grad.data[0]) / static_cast<double>(p.value.numel());
      for (size_t i = 0; i < p.value.data.size(); ++i) {
        double d = static_cast<double>(p.value.data[i]) - t.data[i];
        if (d > 0)
          p.grad.data[i] += static_cast<S>(g);
        else if (d < 0)
          p.grad.data[i] -= static_cast<S>(g);
      }
      return;
    }
    case Op::LossCE: {
      NodeT<S>& p = nodes_[static_cast<size_t>(nd.in[0])];
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double norm = nd.reduction == Reduction::Mean
                        ? 1.0 / static_cast<double>(p.value.shape[1] * p.value.shape[2])
                        : 1.0;
      double g = static_cast<double>(nd.grad.data[0]) * norm;
      for (size_t i = 0; i < p.value.data.size(); ++i) {
        double tv = t.data[i];
        double pv = p.value.data[i];
        if (tv != 0.0 && pv > kCeClamp) p.grad.data[i] -= static_cast<S>(g * tv / pv);
      }
      return;
    }
    case Op::LossDice: {
      NodeT<S>& p = nodes_[static_cast<size_t>(nd.in[0])];
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      const int64_t L = p.value.shape[0], plane = p.value.shape[1] * p.value.shape[2];
      double g = static_cast<double>(nd.grad.data[0]) / static_cast<double>(L);
      for (int64_t c = 0; c < L; ++c) {
        double inter = 0, sp = 0, st = 0;
        for (int64_t n = 0; n < plane; ++n) {
          size_t i = static_cast<size_t>(c * plane + n);
          inter += static_cast<double>(p.value.data[i]) * t.data[i];
          sp += p.value.data[i];
          st += t.data[i];
        }
        double denom = sp + st + kDiceEps;
        double num = 2.0 * inter + kDiceEps;
        for (int64_t n = 0; n < plane; ++n) {
          size_t i = static_cast<size_t>(c * plane + n);
          double dd = (2.0 * t.data[i] * denom - num) / (denom * denom);
          p.grad.data[i] -= static_cast<S>(g * dd);
        }
      }
      return;
    }
    case Op::LossMSE: {
      NodeT<S>& p = nodes_[static_cast<size_t>(nd.in[0])];
      const Tensor<S>& t = nodes_[static_cast<size_t>(nd.in[1])].value;
      double g = 2.0 * static_cast<double>(nd.grad.data[0]) / static_cast<double>(p.value.numel());
      for (size_t i = 0; i < p.value.data.size(); ++i)
        p.grad.data[i] += static_cast<S>(g * (static_cast<double>(p.value.data[i]) - t.data[i]));
      return;
    }
  }
  throw ConfigError("unhandled op in backward");
}

template <class S>
void Graph<S>::zero_grad() {
  for (auto& p : params_) p.grad.fill(S(0));
}

template <class S>
double Graph<S>::value_of(int id) const {
  const NodeT<S>& nd = node(id);
  if (nd.value.numel() != 1) throw ConfigError("value_of expects a scalar node: " + nd.name);
  return static_cast<double>(nd.value.data[0]);
}

template <class S>
const Tensor<S>& Graph<S>::tensor_of(int id) const {
  return node(id).value;
}

template <class S>
int Graph<S>::node_id(const std::string& name) const {
  auto it = node_by_name_.find(name);
  return it == node_by_name_.end() ? -1 : it->second;
}

template <class S>
int Graph<S>::require_node(const std::string& name) const {
  int id = node_id(name);
  if (id < 0) throw ConfigError("no node named '" + name + "'");
  return id;
}

template <class S>
ParamT<S>* Graph<S>::find_param(const std::string& name) {
  auto it = param_by_name_.find(name);
  return it == param_by_name_.end() ? nullptr : &params_[static_cast<size_t>(it->second)];
}

template <class S>
int64_t Graph<S>::total_param_scalars() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <class S>
std::vector<Tensor<S>> Graph<S>::snapshot_params() const {
  std::vector<Tensor<S>> snap;
  snap.reserve(params_.size());
  for (const auto& p : params_) snap.push_back(p.value);
  return snap;
}

template <class S>
void Graph<S>::restore_params(const std::vector<Tensor<S>>& snap) {
  if (snap.size() != params_.size()) throw ConfigError("parameter snapshot size mismatch");
  for (size_t i = 0; i < snap.size(); ++i) {
    if (snap[i].shape != params_[i].value.shape) throw ShapeError("parameter snapshot shape mismatch");
    params_[i].value = snap[i];
  }
  forwarded_target_ = -1;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace semiseg
