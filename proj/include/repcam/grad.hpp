#pragma once
//
// Reverse-mode differentiation over the tensor primitives.
//
// A Tape records every primitive application in creation order, which is a
// topological order, so backward() is a single reverse sweep. Each record
// keeps a forward closure so the tape can be replayed and a backward closure
// computing vector-Jacobian products for its inputs.
//

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "repcam/tensor.hpp"

namespace repcam {

using NodeId = std::size_t;

template <class T>
class Tape {
 public:
  using Inputs = std::span<const Tensor<T>* const>;
  using ForwardFn = std::function<Tensor<T>(Inputs)>;
  // Returns one gradient per input; an empty tensor means "no contribution".
  using BackwardFn =
      std::function<std::vector<Tensor<T>>(Inputs, const Tensor<T>& out, const Tensor<T>& grad)>;

  NodeId leaf(Tensor<T> value, bool requires_grad = true) {
    nodes_.push_back(Node{"leaf", std::move(value), {}, nullptr, nullptr, requires_grad});
    return nodes_.size() - 1;
  }

  NodeId record(std::string op, std::vector<NodeId> inputs, ForwardFn forward,
                BackwardFn backward) {
    std::vector<const Tensor<T>*> in;
    in.reserve(inputs.size());
    bool needs = false;
    for (NodeId id : inputs) {
      detail::require(id < nodes_.size(), "tape: unknown input node");
      in.push_back(&nodes_[id].value);
      needs = needs || nodes_[id].requires_grad;
    }
    Tensor<T> out = forward(in);
    nodes_.push_back(Node{std::move(op), std::move(out), std::move(inputs), std::move(forward),
                          std::move(backward), needs});
    return nodes_.size() - 1;
  }

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id).value; }
  const std::string& op(NodeId id) const { return nodes_.at(id).op; }
  bool requires_grad(NodeId id) const { return nodes_.at(id).requires_grad; }
  bool is_leaf(NodeId id) const { return !nodes_.at(id).forward; }
  std::size_t size() const { return nodes_.size(); }

  // Re-executes every recorded op from the leaf values.
  std::vector<Tensor<T>> replay() const {
    std::vector<Tensor<T>> values;
    values.reserve(nodes_.size());
    for (const auto& node : nodes_) {
      if (!node.forward) {
        values.push_back(node.value);
        continue;
      }
      std::vector<const Tensor<T>*> in;
      for (NodeId id : node.inputs) in.push_back(&values[id]);
      values.push_back(node.forward(in));
    }
    return values;
  }

  // Gradients of a scalar node with respect to every node that requires them.
  std::vector<Tensor<T>> backward(NodeId loss) const {
    detail::require(loss < nodes_.size(), "backward: unknown loss node");
    detail::require(nodes_[loss].value.shape() == Shape4{1, 1, 1, 1},
                    "backward: loss must be scalar, got " + nodes_[loss].value.shape().str());
    std::vector<Tensor<T>> grads(nodes_.size());
    grads[loss] = Tensor<T>({1, 1, 1, 1}, T{1});
    for (std::size_t i = loss + 1; i-- > 0;) {
      const Node& node = nodes_[i];
      if (grads[i].empty() || !node.backward || !node.requires_grad) continue;
      std::vector<const Tensor<T>*> in;
      for (NodeId id : node.inputs) in.push_back(&nodes_[id].value);
      auto contribs = node.backward(in, node.value, grads[i]);
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const NodeId target = node.inputs[k];
        if (k >= contribs.size() || contribs[k].empty() || !nodes_[target].requires_grad) continue;
        if (grads[target].empty()) {
          grads[target] = std::move(contribs[k]);
        } else {
          add_inplace(grads[target], contribs[k]);
        }
      }
    }
    // Nodes unreached by the sweep get explicit zeros so shapes always match.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (grads[i].empty() && nodes_[i].requires_grad) grads[i] = Tensor<T>(nodes_[i].value.shape());
    }
    return grads;
  }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    std::vector<NodeId> inputs;
    ForwardFn forward;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

namespace ad {

template <class T>
NodeId add(Tape<T>& t, NodeId a, NodeId b) {
  return t.record(
      "add", {a, b}, [](auto in) { return repcam::add(*in[0], *in[1]); },
      [](auto, const Tensor<T>&, const Tensor<T>& g) { return std::vector<Tensor<T>>{g, g}; });
}

template <class T>
NodeId sub(Tape<T>& t, NodeId a, NodeId b) {
  return t.record(
      "sub", {a, b}, [](auto in) { return repcam::sub(*in[0], *in[1]); },
      [](auto, const Tensor<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{g, repcam::mul_scalar(g, T{-1})};
      });
}

template <class T>
NodeId mul_scalar(Tape<T>& t, NodeId a, T s) {
  return t.record(
      "mul_scalar", {a}, [s](auto in) { return repcam::mul_scalar(*in[0], s); },
      [s](auto, const Tensor<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{repcam::mul_scalar(g, s)};
      });
}

// Derivative taken as 0 at exactly 0.
template <class T>
NodeId relu(Tape<T>& t, NodeId a) {
  return t.record(
      "relu", {a}, [](auto in) { return repcam::relu(*in[0]); },
      [](auto in, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T> d(g.shape());
        const auto x = in[0]->data();
        for (std::size_t i = 0; i < x.size(); ++i) d.data()[i] = x[i] > T{0} ? g.data()[i] : T{0};
        return std::vector<Tensor<T>>{std::move(d)};
      });
}

template <class T>
NodeId sum(Tape<T>& t, NodeId a) {
  return t.record(
      "sum", {a}, [](auto in) { return Tensor<T>({1, 1, 1, 1}, repcam::sum(*in[0])); },
      [](auto in, const Tensor<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{Tensor<T>(in[0]->shape(), g.data()[0])};
      });
}

// Mean absolute error; subgradient sign(0) = 0.
template <class T>
NodeId l1_loss(Tape<T>& t, NodeId pred, NodeId target) {
  return t.record(
      "l1_loss", {pred, target},
      [](auto in) {
        detail::check_same(in[0]->shape(), in[1]->shape(), "l1_loss");
        T acc{0};
        for (std::size_t i = 0; i < in[0]->numel(); ++i)
          acc += std::abs(in[0]->data()[i] - in[1]->data()[i]);
        return Tensor<T>({1, 1, 1, 1}, acc / static_cast<T>(in[0]->numel()));
      },
      [](auto in, const Tensor<T>&, const Tensor<T>& g) {
        const T scale = g.data()[0] / static_cast<T>(in[0]->numel());
        Tensor<T> dp(in[0]->shape());
        for (std::size_t i = 0; i < dp.numel(); ++i) {
          const T r = in[0]->data()[i] - in[1]->data()[i];
          dp.data()[i] = r > T{0} ? scale : (r < T{0} ? -scale : T{0});
        }
        return std::vector<Tensor<T>>{dp, repcam::mul_scalar(dp, T{-1})};
      });
}

// Convolution with weight node (C1,C2,K,K) and bias node (1,C1,1,1).
template <class T>
NodeId conv2d(Tape<T>& t, NodeId x, NodeId weight, NodeId bias, std::size_t padding,
              std::vector<T> pad_values = {}) {
  return t.record(
      "conv2d", {x, weight, bias},
      [padding, pad_values](auto in) {
        return repcam::conv2d(*in[0], ConvKernel<T>(*in[1], *in[2]), padding,
                              std::span<const T>(pad_values));
      },
      [padding, pad_values, &t, x, weight, bias](auto in, const Tensor<T>&, const Tensor<T>& g) {
        const bool want_in = t.requires_grad(x);
        const bool want_params = t.requires_grad(weight) || t.requires_grad(bias);
        auto grads = repcam::conv2d_backward(*in[0], ConvKernel<T>(*in[1], *in[2]), padding,
                                             std::span<const T>(pad_values), g, want_in,
                                             want_params);
        return std::vector<Tensor<T>>{std::move(grads.input), std::move(grads.weight),
                                      std::move(grads.bias)};
      });
}

template <class T>
NodeId pad(Tape<T>& t, NodeId x, std::size_t p) {
  return t.record(
      "pad", {x}, [p](auto in) { return repcam::pad(*in[0], p); },
      [p](auto in, const Tensor<T>&, const Tensor<T>& g) {
        const auto& s = in[0]->shape();
        return std::vector<Tensor<T>>{repcam::crop(g, p, p, s.h, s.w)};
      });
}

template <class T>
NodeId pixel_shuffle(Tape<T>& t, NodeId x, std::size_t r) {
  return t.record(
      "pixel_shuffle", {x}, [r](auto in) { return repcam::pixel_shuffle(*in[0], r); },
      [r](auto, const Tensor<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{repcam::pixel_unshuffle(g, r)};
      });
}

template <class T>
NodeId bicubic_resize(Tape<T>& t, NodeId x, Scale s) {
  return t.record(
      "bicubic_resize", {x}, [s](auto in) { return repcam::bicubic_resize(*in[0], s); },
      [s](auto in, const Tensor<T>&, const Tensor<T>& g) {
        return std::vector<Tensor<T>>{repcam::bicubic_resize_adjoint(g, in[0]->shape(), s)};
      });
}

template <class T>
NodeId concat_channels(Tape<T>& t, std::vector<NodeId> parts) {
  return t.record(
      "concat_channels", parts,
      [](auto in) {
        std::vector<Tensor<T>> v;
        for (const auto* p : in) v.push_back(*p);
        return repcam::concat_channels<T>(v);
      },
      [](auto in, const Tensor<T>&, const Tensor<T>& g) {
        std::vector<Tensor<T>> out;
        std::size_t c0 = 0;
        for (const auto* p : in) {
          const auto& s = p->shape();
          Tensor<T> part(s);
          for (std::size_t n = 0; n < s.n; ++n)
            std::copy_n(g.plane_ptr(n, c0), s.c * s.plane(), part.plane_ptr(n, 0));
          c0 += s.c;
          out.push_back(std::move(part));
        }
        return out;
      });
}

}  // namespace ad

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates near a kink of f
};

// Compares the tape gradient of f at `at` with central differences. `f`
// records a scalar loss on the tape given the input leaf.
//
// Coordinates whose eps-neighbourhood contains a kink are excluded. A kink
// shows up either as disagreement between the central differences at eps and
// eps/2 (exact for piecewise-quadratic f otherwise), or as a one-sided jump
// that does not grow linearly with the step.
template <class F>
GradCheckReport finite_diff_check(F&& f, const Tensor<double>& at, double eps = 1e-3) {
  std::vector<double> analytic;
  double f0 = 0.0;
  {
    Tape<double> tape;
    const NodeId x = tape.leaf(at);
    const NodeId loss = f(tape, x);
    f0 = tape.value(loss).data()[0];
    const auto grads = tape.backward(loss);
    analytic = grads[x].vec();
  }
  Tensor<double> probe = at;
  auto eval_at = [&](std::size_t i, double delta) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + delta;
    Tape<double> tape;
    const NodeId x = tape.leaf(probe, false);
    const double v = tape.value(f(tape, x)).data()[0];
    probe.data()[i] = orig;
    return v;
  };
  GradCheckReport report;
  for (std::size_t i = 0; i < at.numel(); ++i) {
    const double fp = eval_at(i, eps);
    const double fm = eval_at(i, -eps);
    const double fp_half = eval_at(i, eps / 2);
    const double fm_half = eval_at(i, -eps / 2);
    const double fp2 = eval_at(i, 2 * eps);
    const double fm2 = eval_at(i, -2 * eps);

    const double central = (fp - fm) / (2.0 * eps);
    const double central_half = (fp_half - fm_half) / eps;
    const double jump = (fp - f0) / eps - (f0 - fm) / eps;
    const double jump2 = (fp2 - f0) / (2 * eps) - (f0 - fm2) / (2 * eps);
    const double scale = std::max(std::abs(central), 1e-8);
    const bool richardson_kink = std::abs(central - central_half) > 1e-6 * scale + 1e-10;
    const bool point_kink = std::abs(jump) > 1e-10 + 1e-6 * scale &&
                            std::abs(jump2 - 2.0 * jump) > 0.5 * std::abs(jump);
    if (richardson_kink || point_kink) {
      ++report.skipped;
      continue;
    }
    const double rel = std::abs(analytic[i] - central) / scale;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.checked;
  }
  return report;
}

}  // namespace repcam
