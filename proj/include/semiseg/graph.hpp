#pragma once

// Small reverse-mode autodiff graph with the fixed op set needed for the
// encoder-decoder models: 3x3/1x1 same-padding conv, 2x2 stride-2
// transpose conv, 2x2 max pool, relu, sigmoid, channel softmax, concat,
// add, and scalar loss nodes (L1, cross-entropy, soft Dice, MSE).
// Tensors are (C,H,W); shapes are fixed at construction. Values are
// checked for finiteness after every op. Gradients accumulate across
// backward() calls until zero_grad(), which makes mean-over-batch
// gradients a matter of calling backward(loss, 1.0/batch).

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "semiseg/tensor.hpp"

namespace semiseg {

enum class Op {
  Input,
  Conv,
  TConv,
  MaxPool,
  Relu,
  Sigmoid,
  Softmax,
  Concat,
  Add,
  LossL1,
  LossCE,
  LossDice,
  LossMSE,
};

enum class Reduction { Mean, Sum };

inline constexpr double kCeClamp = 1e-12;
inline constexpr double kDiceEps = 1e-6;

template <class S>
struct ParamT {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;
};

template <class S>
struct NodeT {
  std::string name;
  Op op = Op::Input;
  std::vector<int> in;
  int weight = -1;
  int bias = -1;
  int ksize = 3;
  Reduction reduction = Reduction::Mean;
  bool input_set = false;
  Tensor<S> value;
  Tensor<S> grad;
  std::vector<int32_t> route;  // max pool argmax, flat indices into input
};

// number of threads for element-disjoint intra-op loops; reads
// SEMISEG_THREADS once (default 1); results are identical for any value
int intraop_threads();

template <class S>
class Graph {
 public:
  int add_input(const std::string& name, Shape shape);
  int conv(const std::string& name, int in_node, int out_ch, int ksize = 3);
  int tconv(const std::string& name, int in_node, int out_ch);
  int maxpool(const std::string& name, int in_node);
  int relu(const std::string& name, int in_node);
  int sigmoid(const std::string& name, int in_node);
  int softmax(const std::string& name, int in_node);
  int concat(const std::string& name, int a, int b);
  int add(const std::string& name, int a, int b);
  int loss_l1(const std::string& name, int pred, int target);
  int loss_ce(const std::string& name, int pred, int target, Reduction red = Reduction::Mean);
  int loss_dice(const std::string& name, int pred, int target);
  int loss_mse(const std::string& name, int pred, int target);

  // seeded Kaiming fan-in init; each parameter's draws depend only on
  // (seed, parameter name), biases are zero
  void init_params(uint64_t seed);

  void set_input(const std::string& name, const Tensor<S>& v);
  void forward_to(int node);
  // accumulates scale * d(loss)/d(param) into param grads; requires the
  // preceding forward_to to have targeted the same loss node
  void backward(int loss_node, double scale = 1.0);
  void zero_grad();

  double value_of(int node) const;
  const Tensor<S>& tensor_of(int node) const;

  int node_id(const std::string& name) const;
  int require_node(const std::string& name) const;
  const NodeT<S>& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  std::vector<ParamT<S>>& params() { return params_; }
  const std::vector<ParamT<S>>& params() const { return params_; }
  ParamT<S>* find_param(const std::string& name);
  int64_t total_param_scalars() const;

  std::vector<Tensor<S>> snapshot_params() const;
  void restore_params(const std::vector<Tensor<S>>& snap);

  // test hook: after every backward, add delta to the named parameter's
  // first gradient element (used to prove the checker localizes faults)
  void inject_grad_fault(const std::string& param_name, double delta) { grad_faults_[param_name] = delta; }

 private:
  int add_node(NodeT<S> nd);
  int new_param(const std::string& name, Shape shape);
  const std::vector<int>& plan_for(int target);
  void forward_node(NodeT<S>& nd);
  void backward_node(NodeT<S>& nd);
  void check_finite(const NodeT<S>& nd) const;

  std::vector<NodeT<S>> nodes_;
  std::vector<ParamT<S>> params_;
  std::unordered_map<std::string, int> node_by_name_;
  std::unordered_map<std::string, int> param_by_name_;
  std::unordered_map<int, std::vector<int>> plan_cache_;
  std::map<std::string, double> grad_faults_;
  int forwarded_target_ = -1;
  int threads_ = 1;

 public:
  Graph() : threads_(intraop_threads()) {}
};

template <class S, class T>
Tensor<S> tensor_cast(const Tensor<T>& t) {
  Tensor<S> out(t.shape);
  for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<S>(t.data[i]);
  return out;
}

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace semiseg
