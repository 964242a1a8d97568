// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metatransfer/error.hpp"
#include "metatransfer/ops.hpp"

namespace metatransfer {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::shape_mismatch,
                std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.values();
  const auto s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw Error(ErrorCode::invalid_argument, "variable " + std::to_string(v.id) +
                                                 " is not on this tape");
  }
  return nodes_[v.id];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor value, bool trainable) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = trainable;
  return push(std::move(n));
}

Var Tape::affine(Var x, Var W, Var b) {
  Node n;
  n.op = Op::affine;
  n.value = ops::affine(node(x).value, node(W).value, node(b).value);
  n.in[0] = x.id;
  n.in[1] = W.id;
  n.in[2] = b.id;
  n.requires_grad = node(x).requires_grad || node(W).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::linear(Var x, Var W) {
  Node n;
  n.op = Op::linear;
  n.value = ops::linear(node(x).value, node(W).value);
  n.in[0] = x.id;
  n.in[1] = W.id;
  n.requires_grad = node(x).requires_grad || node(W).requires_grad;
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_same(va, vb, "add");
  Node n;
  n.op = Op::add;
  n.value = va;
  accumulate(n.value, vb);
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  require_same(va, vb, "mul");
  Node n;
  n.op = Op::mul;
  n.value = va;
  auto out = n.value.values();
  const auto rhs = vb.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= rhs[i];
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::scale(Var a, double factor) {
  Node n;
  n.op = Op::scale;
  n.value = node(a).value;
  for (auto& v : n.value.values()) v *= factor;
  n.factor = factor;
  n.in[0] = a.id;
  n.requires_grad = node(a).requires_grad;
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  Node n;
  n.op = Op::tanh;
  n.value = ops::tanh(node(x).value);
  n.in[0] = x.id;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n;
  n.op = Op::relu;
  n.value = ops::relu(node(x).value);
  n.in[0] = x.id;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::sigmoid(Var x) {
  Node n;
  n.op = Op::sigmoid;
  n.value = ops::sigmoid(node(x).value);
  n.in[0] = x.id;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const Tensor& va = node(a).value;
  const Tensor& vb = node(b).value;
  if (va.rows() != vb.rows()) {
    throw Error(ErrorCode::shape_mismatch,
                "concat_cols: " + va.shape().str() + " vs " + vb.shape().str());
  }
  Node n;
  n.op = Op::concat_cols;
  n.value = Tensor(va.rows(), va.cols() + vb.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    auto dst = n.value.row(r);
    std::copy(va.row(r).begin(), va.row(r).end(), dst.begin());
    std::copy(vb.row(r).begin(), vb.row(r).end(), dst.begin() + va.cols());
  }
  n.in[0] = a.id;
  n.in[1] = b.id;
  n.requires_grad = node(a).requires_grad || node(b).requires_grad;
  return push(std::move(n));
}

Var Tape::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& vx = node(x).value;
  if (begin + count > vx.cols()) {
    throw Error(ErrorCode::shape_mismatch, "slice_cols past end of " + vx.shape().str());
  }
  Node n;
  n.op = Op::slice_cols;
  n.value = Tensor(vx.rows(), count);
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    const auto src = vx.row(r);
    std::copy(src.begin() + begin, src.begin() + begin + count, n.value.row(r).begin());
  }
  n.begin = begin;
  n.in[0] = x.id;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::softmax(Var logits) {
  Node n;
  n.op = Op::softmax;
  n.value = ops::softmax(node(logits).value);
  n.in[0] = logits.id;
  n.requires_grad = node(logits).requires_grad;
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  Node n;
  n.op = Op::sum;
  double total = 0.0;
  for (double v : node(x).value.values()) total += v;
  n.value = Tensor(1, 1, total);
  n.in[0] = x.id;
  n.requires_grad = node(x).requires_grad;
  return push(std::move(n));
}

Var Tape::grouped_xent(Var scores, std::span<const std::size_t> offsets,
                       std::span<const std::size_t> labels) {
  const Tensor& s = node(scores).value;
  if (s.cols() != 1) {
    throw Error(ErrorCode::shape_mismatch, "grouped_xent expects a score column, got " +
                                               s.shape().str());
  }
  if (labels.empty()) throw Error(ErrorCode::empty_batch, "grouped_xent over zero groups");
  if (offsets.size() != labels.size() + 1 || offsets.back() != s.rows()) {
    throw Error(ErrorCode::shape_mismatch, "grouped_xent offsets do not cover the scores");
  }
  Node n;
  n.op = Op::grouped_xent;
  n.aux = Tensor(s.rows(), 1);
  double total = 0.0;
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const std::size_t lo = offsets[g];
    const std::size_t hi = offsets[g + 1];
    if (labels[g] >= hi - lo) {
      throw Error(ErrorCode::label_out_of_range,
                  "label " + std::to_string(labels[g]) + " with " + std::to_string(hi - lo) +
                      " candidates");
    }
    double mx = s[lo];
    for (std::size_t r = lo; r < hi; ++r) mx = std::max(mx, s[r]);
    double z = 0.0;
    for (std::size_t r = lo; r < hi; ++r) {
      n.aux[r] = std::exp(s[r] - mx);
      z += n.aux[r];
    }
    for (std::size_t r = lo; r < hi; ++r) n.aux[r] /= z;
    total += mx + std::log(z) - s[lo + labels[g]];
  }
  n.value = Tensor(1, 1, total / static_cast<double>(labels.size()));
  n.offsets.assign(offsets.begin(), offsets.end());
  n.labels.assign(labels.begin(), labels.end());
  n.in[0] = scores.id;
  n.requires_grad = node(scores).requires_grad;
  return push(std::move(n));
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

Tensor Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!has_backward_ || !n.requires_grad || n.grad.size() == 0) {
    return Tensor(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root) {
  if (empty()) throw Error(ErrorCode::backward_without_forward, "tape is empty");
  const Tensor& v = node(root).value;
  if (v.size() != 1) {
    throw Error(ErrorCode::shape_mismatch,
                "backward without seed needs a scalar root, got " + v.shape().str());
  }
  backward(root, Tensor(1, 1, 1.0));
}

void Tape::backward(Var root, const Tensor& seed) {
  if (empty()) throw Error(ErrorCode::backward_without_forward, "tape is empty");
  require_same(node(root).value, seed, "backward seed");
  for (auto& n : nodes_) n.grad = Tensor();
  has_backward_ = true;
  if (!nodes_[root.id].requires_grad) return;
  grad_slot(root.id) = seed;
  for (std::size_t id = root.id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (n.op == Op::leaf || !n.requires_grad || n.grad.size() == 0) continue;
    propagate(id);
  }
}

void Tape::propagate(std::size_t id) {
  // Copy out what we need: grad_slot may reallocate other nodes' grads but
  // never the vector itself, so references into nodes_ stay valid.
  Node& n = nodes_[id];
  const Tensor& g = n.grad;
  auto wants = [&](std::size_t k) { return nodes_[n.in[k]].requires_grad; };

  switch (n.op) {
    case Op::leaf:
      break;
    case Op::affine:
    case Op::linear: {
      const Tensor& x = nodes_[n.in[0]].value;
      const Tensor& W = nodes_[n.in[1]].value;
      const std::size_t rows = x.rows(), in = x.cols(), out = W.rows();
      if (wants(0)) {
        Tensor& dx = grad_slot(n.in[0]);
        for (std::size_t r = 0; r < rows; ++r) {
          auto dxr = dx.row(r);
          const auto gr = g.row(r);
          for (std::size_t o = 0; o < out; ++o) {
            const double go = gr[o];
            if (go == 0.0) continue;
            const auto wo = W.row(o);
            for (std::size_t i = 0; i < in; ++i) dxr[i] += go * wo[i];
          }
        }
      }
      if (wants(1)) {
        Tensor& dW = grad_slot(n.in[1]);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto xr = x.row(r);
          const auto gr = g.row(r);
          for (std::size_t o = 0; o < out; ++o) {
            const double go = gr[o];
            if (go == 0.0) continue;
            auto dwo = dW.row(o);
            for (std::size_t i = 0; i < in; ++i) dwo[i] += go * xr[i];
          }
        }
      }
      if (n.op == Op::affine && wants(2)) {
        Tensor& db = grad_slot(n.in[2]);
        for (std::size_t r = 0; r < rows; ++r) {
          const auto gr = g.row(r);
          for (std::size_t o = 0; o < out; ++o) db[o] += gr[o];
        }
      }
      break;
    }
    case Op::add:
      if (wants(0)) accumulate(grad_slot(n.in[0]), g);
      if (wants(1)) accumulate(grad_slot(n.in[1]), g);
      break;
    case Op::mul: {
      const Tensor& a = nodes_[n.in[0]].value;
      const Tensor& b = nodes_[n.in[1]].value;
      if (wants(0)) {
        auto da = grad_slot(n.in[0]).values();
        for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * b[i];
      }
      if (wants(1)) {
        auto db = grad_slot(n.in[1]).values();
        for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * a[i];
      }
      break;
    }
    case Op::scale: {
      auto da = grad_slot(n.in[0]).values();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * n.factor;
      break;
    }
    case Op::tanh: {
      auto dx = grad_slot(n.in[0]).values();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::relu: {
      const Tensor& x = nodes_[n.in[0]].value;
      auto dx = grad_slot(n.in[0]).values();
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (x[i] > 0.0) dx[i] += g[i];
      }
      break;
    }
    case Op::sigmoid: {
      auto dx = grad_slot(n.in[0]).values();
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case Op::concat_cols: {
      const std::size_t left = nodes_[n.in[0]].value.cols();
      const std::size_t right = nodes_[n.in[1]].value.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto gr = g.row(r);
        if (wants(0)) {
          auto d = grad_slot(n.in[0]).row(r);
          for (std::size_t i = 0; i < left; ++i) d[i] += gr[i];
        }
        if (wants(1)) {
          auto d = grad_slot(n.in[1]).row(r);
          for (std::size_t i = 0; i < right; ++i) d[i] += gr[left + i];
        }
      }
      break;
    }
    case Op::slice_cols: {
      Tensor& dx = grad_slot(n.in[0]);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto d = dx.row(r);
        const auto gr = g.row(r);
        for (std::size_t i = 0; i < gr.size(); ++i) d[n.begin + i] += gr[i];
      }
      break;
    }
    case Op::softmax: {
      Tensor& dx = grad_slot(n.in[0]);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto p = n.value.row(r);
        const auto gr = g.row(r);
        double inner = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) inner += gr[i] * p[i];
        auto d = dx.row(r);
        for (std::size_t i = 0; i < p.size(); ++i) d[i] += p[i] * (gr[i] - inner);
      }
      break;
    }
    case Op::sum: {
      auto dx = grad_slot(n.in[0]).values();
      for (auto& v : dx) v += g[0];
      break;
    }
    case Op::grouped_xent: {
      Tensor& ds = grad_slot(n.in[0]);
      const double w = g[0] / static_cast<double>(n.labels.size());
      for (std::size_t grp = 0; grp < n.labels.size(); ++grp) {
        const std::size_t lo = n.offsets[grp];
        const std::size_t hi = n.offsets[grp + 1];
        for (std::size_t r = lo; r < hi; ++r) {
          const double target = (r == lo + n.labels[grp]) ? 1.0 : 0.0;
          ds[r] += w * (n.aux[r] - target);
        }
      }
      break;
    }
  }
}

}  // namespace metatransfer
