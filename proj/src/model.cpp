// Copyright (C) 2026 The metatransfer Authors
// SPDX-License-Identifier: Apache-2.0

#include "metatransfer/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metatransfer/error.hpp"
#include "metatransfer/ops.hpp"

namespace metatransfer {

void MultiChoiceInstance::validate() const {
  if (context.rows() != 1) {
    throw Error(ErrorCode::shape_mismatch, "context must be a row vector, got " +
                                               context.shape().str());
  }
  if (candidates.rows() < 2) {
    throw Error(ErrorCode::invalid_argument, "an instance needs at least two candidates");
  }
  if (candidates.cols() != context.cols()) {
    throw Error(ErrorCode::shape_mismatch, "candidate features " + candidates.shape().str() +
                                               " vs context " + context.shape().str());
  }
  if (label >= candidates.rows()) {
    throw Error(ErrorCode::label_out_of_range,
                "label " + std::to_string(label) + " with " +
                    std::to_string(candidates.rows()) + " candidates");
  }
  if (!context.all_finite() || !candidates.all_finite()) {
    throw Error(ErrorCode::invalid_argument, "non-finite instance features");
  }
}

std::string_view to_string(AdapterVariant v) {
  return v == AdapterVariant::literal ? "literal" : "residual_outside";
}

AdapterVariant adapter_variant_from_string(std::string_view s) {
  if (s == "residual_outside") return AdapterVariant::residual_outside;
  if (s == "literal") return AdapterVariant::literal;
  throw Error(ErrorCode::invalid_argument, "unknown adapter variant " + std::string(s));
}

void ModelShape::validate() const {
  if (feature_dim == 0 || hidden == 0 || adapter_dim == 0) {
    throw Error(ErrorCode::invalid_argument, "model dimensions must be positive");
  }
  if (adapter_variant == AdapterVariant::residual_outside && adapter_dim >= hidden) {
    throw Error(ErrorCode::invalid_argument, "adapter bottleneck must be smaller than hidden");
  }
  if (adapter_variant == AdapterVariant::literal && adapter_dim != hidden) {
    throw Error(ErrorCode::invalid_argument, "literal adapter wiring requires adapter_dim == hidden");
  }
}

ModelParams::ModelParams(ModelShape shape, ParamSet params)
    : shape_(shape), params_(std::move(params)) {
  shape_.validate();
  index_groups();
}

void ModelParams::index_groups() {
  const std::size_t H = shape_.hidden, d = shape_.adapter_dim, F = shape_.feature_dim;
  auto idx = [&](const std::string& name, Shape expected) {
    const std::size_t i = params_.index(name);
    require_shape(params_.value(i), expected, name.c_str());
    return i;
  };
  input_ = {idx("encoder.input.W", {H, 2 * F}), idx("encoder.input.b", {1, H})};
  layers_.clear();
  adapters_.clear();
  for (std::size_t l = 0; l < shape_.layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    layers_.push_back({idx(p + ".W", {H, H}), idx(p + ".b", {1, H})});
    const std::string a = "adapter" + std::to_string(l);
    adapters_.push_back({idx(a + ".down.W", {d, H}), idx(a + ".down.b", {1, d}),
                         idx(a + ".up.W", {H, d}), idx(a + ".up.b", {1, H})});
  }
  head_ = {idx("head.W1", {H, H}), idx("head.b1", {1, H}), idx("head.W2", {1, H})};
}

ModelParams ModelParams::init(const ModelShape& shape, Rng& rng) {
  shape.validate();
  const std::size_t H = shape.hidden, d = shape.adapter_dim, F = shape.feature_dim;
  auto gaussian = [&](std::size_t rows, std::size_t cols, double scale) {
    Tensor t(rows, cols);
    for (auto& v : t.values()) v = scale * rng.normal();
    return t;
  };
  const double g = shape.backbone_gain;
  ParamSet p;
  p.add("encoder.input.W", GroupRole::backbone, gaussian(H, 2 * F, g / std::sqrt(2.0 * F)));
  p.add("encoder.input.b", GroupRole::backbone, Tensor(1, H));
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const std::string name = "encoder.layer" + std::to_string(l);
    p.add(name + ".W", GroupRole::backbone, gaussian(H, H, g / std::sqrt(double(H))));
    p.add(name + ".b", GroupRole::backbone, gaussian(1, H, 0.1));
  }
  for (std::size_t l = 0; l < shape.layers; ++l) {
    const std::string name = "adapter" + std::to_string(l);
    p.add(name + ".down.W", GroupRole::adapter, gaussian(d, H, 1.0 / std::sqrt(double(H))));
    p.add(name + ".down.b", GroupRole::adapter, Tensor(1, d));
    // Zero up-projection: every adapter starts as the identity.
    p.add(name + ".up.W", GroupRole::adapter, Tensor(H, d));
    p.add(name + ".up.b", GroupRole::adapter, Tensor(1, H));
  }
  p.add("head.W1", GroupRole::head, gaussian(H, H, 1.0 / std::sqrt(double(H))));
  p.add("head.b1", GroupRole::head, Tensor(1, H));
  p.add("head.W2", GroupRole::head, gaussian(1, H, 1.0 / std::sqrt(double(H))));
  return ModelParams(shape, std::move(p));
}

FreezeMask adapter_mask(const ModelParams& model, bool with_head) {
  if (with_head) return FreezeMask::only(model.params(), {GroupRole::adapter, GroupRole::head});
  return FreezeMask::only(model.params(), {GroupRole::adapter});
}

FreezeMask last_layer_mask(const ModelParams& model, bool with_head) {
  FreezeMask mask = with_head ? FreezeMask::only(model.params(), {GroupRole::head})
                              : FreezeMask(model.params().size());
  if (model.shape().layers == 0) {
    mask.set(model.input().W, true);
    mask.set(model.input().b, true);
  } else {
    const auto last = model.layer(model.shape().layers - 1);
    mask.set(last.W, true);
    mask.set(last.b, true);
  }
  return mask;
}

FreezeMask full_mask(const ModelParams& model) {
  return FreezeMask(model.params().size(), true);
}

Tensor adapter_forward(const Tensor& h, const AdapterWeights& adapter, AdapterVariant variant) {
  if (h.cols() != adapter.down_W.cols() || adapter.up_W.rows() != h.cols()) {
    throw Error(ErrorCode::shape_mismatch, "adapter does not fit hidden state " + h.shape().str());
  }
  const Tensor inner = ops::relu(ops::affine(h, adapter.down_W, adapter.down_b));
  if (variant == AdapterVariant::literal) {
    require_shape(inner, h.shape(), "literal adapter");
    Tensor sum = inner;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += h[i];
    return ops::affine(sum, adapter.up_W, adapter.up_b);
  }
  Tensor out = ops::affine(inner, adapter.up_W, adapter.up_b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += h[i];
  return out;
}

namespace {

Tensor input_rows(std::span<const MultiChoiceInstance> batch, std::size_t F,
                  std::vector<std::size_t>& offsets, std::vector<std::size_t>& labels) {
  std::size_t rows = 0;
  offsets.assign(1, 0);
  labels.clear();
  for (const auto& inst : batch) {
    inst.validate();
    if (inst.context.cols() != F) {
      throw Error(ErrorCode::shape_mismatch, "instance feature dim " +
                                                 std::to_string(inst.context.cols()) +
                                                 " vs model " + std::to_string(F));
    }
    rows += inst.num_candidates();
    offsets.push_back(rows);
    labels.push_back(inst.label);
  }
  Tensor X(rows, 2 * F);
  std::size_t r = 0;
  for (const auto& inst : batch) {
    for (std::size_t i = 0; i < inst.num_candidates(); ++i, ++r) {
      auto dst = X.row(r);
      std::copy(inst.context.values().begin(), inst.context.values().end(), dst.begin());
      const auto cand = inst.candidates.row(i);
      std::copy(cand.begin(), cand.end(), dst.begin() + F);
    }
  }
  return X;
}

// Hidden states before the head, one row per input row.
Var record_encoder(Tape& tape, Var x, const ModelParams& model, const std::vector<Var>& v) {
  const auto in = model.input();
  Var h = tape.affine(x, v[in.W], v[in.b]);
  for (std::size_t l = 0; l < model.shape().layers; ++l) {
    const auto layer = model.layer(l);
    h = tape.tanh(tape.affine(h, v[layer.W], v[layer.b]));
    const auto a = model.adapter(l);
    Var inner = tape.relu(tape.affine(h, v[a.down_W], v[a.down_b]));
    if (model.shape().adapter_variant == AdapterVariant::literal) {
      h = tape.affine(tape.add(inner, h), v[a.up_W], v[a.up_b]);
    } else {
      h = tape.add(tape.affine(inner, v[a.up_W], v[a.up_b]), h);
    }
  }
  return h;
}

Var record_head(Tape& tape, Var h, const ModelParams& model, const std::vector<Var>& v) {
  const auto hd = model.head();
  return tape.linear(tape.tanh(tape.affine(h, v[hd.W1], v[hd.b1])), v[hd.W2]);
}

std::vector<Var> bind(Tape& tape, const ModelParams& model, const FreezeMask* mask) {
  const ParamSet& p = model.params();
  if (mask != nullptr && mask->size() != p.size()) {
    throw Error(ErrorCode::shape_mismatch, "freeze mask does not cover the parameter groups");
  }
  std::vector<Var> vars;
  vars.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    vars.push_back(tape.parameter(p.value(i), mask != nullptr && mask->trainable(i)));
  }
  return vars;
}

}  // namespace

Tensor encode(const MultiChoiceInstance& instance, std::size_t i, const ModelParams& model) {
  instance.validate();
  if (i >= instance.num_candidates()) {
    throw Error(ErrorCode::invalid_argument, "candidate index " + std::to_string(i) +
                                                 " out of range");
  }
  const std::size_t F = model.shape().feature_dim;
  Tensor x(1, 2 * F);
  std::copy(instance.context.values().begin(), instance.context.values().end(),
            x.values().begin());
  const auto cand = instance.candidates.row(i);
  std::copy(cand.begin(), cand.end(), x.values().begin() + F);
  Tape tape;
  Var in = tape.constant(std::move(x));
  const auto vars = bind(tape, model, nullptr);
  return tape.value(record_encoder(tape, in, model, vars));
}

namespace {

// Scores column for a batch without keeping gradients.
Tensor batch_scores(std::span<const MultiChoiceInstance> batch, const ModelParams& model,
                    std::vector<std::size_t>& offsets) {
  std::vector<std::size_t> labels;
  Tape tape;
  Var x = tape.constant(input_rows(batch, model.shape().feature_dim, offsets, labels));
  const auto vars = bind(tape, model, nullptr);
  return tape.value(record_head(tape, record_encoder(tape, x, model, vars), model, vars));
}

}  // namespace

Tensor score_candidates(const MultiChoiceInstance& instance, const ModelParams& model) {
  std::vector<std::size_t> offsets;
  const Tensor scores = batch_scores({&instance, 1}, model, offsets);
  Tensor logits(1, scores.rows());
  for (std::size_t i = 0; i < scores.rows(); ++i) logits[i] = scores[i];
  return ops::softmax(logits);
}

std::size_t predict(const MultiChoiceInstance& instance, const ModelParams& model) {
  return predict({&instance, 1}, model).front();
}

std::vector<std::size_t> predict(std::span<const MultiChoiceInstance> batch,
                                 const ModelParams& model) {
  if (batch.empty()) return {};
  std::vector<std::size_t> offsets;
  const Tensor scores = batch_scores(batch, model, offsets);
  std::vector<std::size_t> out;
  out.reserve(batch.size());
  for (std::size_t g = 0; g + 1 < offsets.size(); ++g) {
    std::size_t best = offsets[g];
    for (std::size_t r = offsets[g] + 1; r < offsets[g + 1]; ++r) {
      if (scores[r] > scores[best]) best = r;
    }
    out.push_back(best - offsets[g]);
  }
  return out;
}

LossAndGrad batch_loss(std::span<const MultiChoiceInstance> batch, const ModelParams& model,
                       const FreezeMask& mask) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "batch_loss on an empty batch");
  Tape tape;
  std::vector<Var> vars;
  std::vector<std::size_t> offsets, labels;
  Var x = tape.constant(input_rows(batch, model.shape().feature_dim, offsets, labels));
  vars = bind(tape, model, &mask);
  Var scores = record_head(tape, record_encoder(tape, x, model, vars), model, vars);
  Var loss = tape.grouped_xent(scores, offsets, labels);
  tape.backward(loss);
  LossAndGrad out;
  out.loss = tape.value(loss)[0];
  out.grads.grads.reserve(vars.size());
  for (Var v : vars) out.grads.grads.push_back(tape.grad(v));
  return out;
}

double batch_loss_value(std::span<const MultiChoiceInstance> batch, const ModelParams& model) {
  if (batch.empty()) throw Error(ErrorCode::empty_batch, "batch_loss on an empty batch");
  std::vector<std::size_t> offsets, labels;
  Tape tape;
  Var x = tape.constant(input_rows(batch, model.shape().feature_dim, offsets, labels));
  const auto vars = bind(tape, model, nullptr);
  Var scores = record_head(tape, record_encoder(tape, x, model, vars), model, vars);
  return tape.value(tape.grouped_xent(scores, offsets, labels))[0];
}

}  // namespace metatransfer
