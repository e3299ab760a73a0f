// Copyright (C) 2026 the cscfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal deterministic tensor engine: dense NCHW tensors plus a gradient
// tape for reverse-mode differentiation over the fixed operator set defined
// in ops.hpp / conv.hpp. One tape records one forward pass and is swept once.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "cscfuse/common.hpp"

namespace cscfuse {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

inline void check_shapes_match(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

template <class S>
class Tape;

template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(shape), data_(std::make_shared<std::vector<S>>(shape.size(), S(0))) {}

  Tensor(int n, int c, int h, int w) : Tensor(Shape{n, c, h, w}) {}

  static Tensor full(Shape shape, S value) {
    Tensor t(shape);
    for (auto& v : *t.data_) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> values) {
    if (values.size() != shape.size()) {
      throw ShapeError("Tensor::from: data length " + std::to_string(values.size()) +
                       " does not match shape " + shape.str());
    }
    Tensor t;
    t.shape_ = shape;
    t.data_ = std::make_shared<std::vector<S>>(std::move(values));
    return t;
  }

  static Tensor scalar(S value) { return full(Shape{1, 1, 1, 1}, value); }

  static Tensor uniform(Shape shape, Rng& rng, S lo, S hi) {
    Tensor t(shape);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : *t.data_) v = static_cast<S>(dist(rng));
    return t;
  }

  bool defined() const { return data_ != nullptr; }
  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_ ? data_->size() : 0; }

  S* data() { return data_->data(); }
  const S* data() const { return data_->data(); }
  std::vector<S>& values() { return *data_; }
  const std::vector<S>& values() const { return *data_; }

  S& at(int n, int c, int i, int j) {
    return (*data_)[offset(n, c, i, j)];
  }
  S at(int n, int c, int i, int j) const {
    return (*data_)[offset(n, c, i, j)];
  }

  std::size_t offset(int n, int c, int i, int j) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + i) * shape_.w + j;
  }

  // Value of a 1-element tensor.
  S item() const {
    if (size() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_.str());
    return (*data_)[0];
  }

  bool all_finite() const {
    for (S v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // --- gradient participation -------------------------------------------

  bool tracked() const { return grad_ != nullptr; }
  bool live() const { return grad_ != nullptr && tape_ != nullptr; }
  Tape<S>* tape() const { return tape_; }

  std::vector<S>& grad() {
    if (!grad_) throw std::logic_error("grad(): tensor has no gradient buffer");
    return *grad_;
  }
  const std::vector<S>& grad() const {
    if (!grad_) throw std::logic_error("grad(): tensor has no gradient buffer");
    return *grad_;
  }

  void require_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<S>>(size(), S(0));
  }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  // Same data, no tape / gradient participation.
  Tensor detached() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = data_;
    return t;
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<S>>(*data_);
    return t;
  }

  // Used by operations to register their output on a tape.
  void bind_to(Tape<S>* tape) {
    require_grad();
    tape_ = tape;
  }

  // Shares the same buffers under a different shape (size must match).
  Tensor reshaped(Shape s) const {
    if (s.size() != size()) throw ShapeError("reshaped: size mismatch");
    Tensor t = *this;
    t.shape_ = s;
    return t;
  }

 private:
  template <class T>
  friend class Tape;

  Shape shape_{};
  std::shared_ptr<std::vector<S>> data_;
  std::shared_ptr<std::vector<S>> grad_;
  Tape<S>* tape_ = nullptr;
};

// Records executed operations; backward() replays them exactly once in
// reverse execution order. Gradients accumulate additively at fan-out.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Binds a leaf (parameter or input) to this tape. The returned view shares
  // data and gradient storage with the original tensor.
  Tensor<S> watch(Tensor<S>& leaf) {
    leaf.require_grad();
    Tensor<S> view = leaf;
    view.tape_ = this;
    return view;
  }

  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Single reverse sweep seeded with d loss / d loss = 1.
  void backward(Tensor<S>& loss) {
    if (loss.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " + loss.shape().str());
    }
    if (loss.tape() != this) {
      throw std::logic_error("backward: loss was not recorded on this tape");
    }
    if (swept_) throw std::logic_error("backward: tape already swept");
    swept_ = true;
    loss.grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool swept_ = false;
};

// Tape propagation rule shared by all operations: the output lives on the
// tape of whichever input is live; two different live tapes are an error.
template <class S>
Tape<S>* joint_tape(std::initializer_list<const Tensor<S>*> inputs) {
  Tape<S>* tape = nullptr;
  for (const Tensor<S>* t : inputs) {
    if (!t->live()) continue;
    if (tape && tape != t->tape()) {
      throw std::logic_error("operation inputs belong to different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

}  // namespace cscfuse
