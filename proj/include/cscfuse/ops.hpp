// Copyright (C) 2026 the cscfuse authors
// SPDX-License-Identifier: Apache-2.0
//
// The fixed differentiable operator set, part 1: elementwise ops,
// activations, reductions, batch normalization, softmax over a set.
// Convolution and the spatial filters live in conv.hpp.

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cscfuse/tensor.hpp"

namespace cscfuse {

enum class Mode { Train, Eval };

namespace detail {

template <class S>
Tensor<S> make_output(Shape shape, Tape<S>* tape) {
  Tensor<S> out(shape);
  if (tape) out.bind_to(tape);
  return out;
}

template <class S>
void check_channel_param(const Tensor<S>& x, const Tensor<S>& p, const char* op) {
  const Shape ps = p.shape();
  if (ps.n != 1 || ps.h != 1 || ps.w != 1 || ps.c != x.shape().c) {
    throw ShapeError(std::string(op) + ": per-channel parameter must be (1," +
                     std::to_string(x.shape().c) + ",1,1), got " + ps.str());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check_shapes_match(a.shape(), b.shape(), "add");
  Tape<S>* tape = joint_tape<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (tape) {
    tape->record([a, b, out]() mutable {
      const std::size_t n = out.size();
      if (a.live()) {
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i];
      }
      if (b.live()) {
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check_shapes_match(a.shape(), b.shape(), "sub");
  Tape<S>* tape = joint_tape<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (tape) {
    tape->record([a, b, out]() mutable {
      const std::size_t n = out.size();
      if (a.live()) {
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i];
      }
      if (b.live()) {
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] -= out.grad()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_shapes_match(a.shape(), b.shape(), "mul");
  Tape<S>* tape = joint_tape<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (tape) {
    tape->record([a, b, out]() mutable {
      const std::size_t n = out.size();
      if (a.live()) {
        for (std::size_t i = 0; i < n; ++i) a.grad()[i] += out.grad()[i] * b.data()[i];
      }
      if (b.live()) {
        for (std::size_t i = 0; i < n; ++i) b.grad()[i] += out.grad()[i] * a.data()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> divide(const Tensor<S>& a, const Tensor<S>& b) {
  check_shapes_match(a.shape(), b.shape(), "divide");
  Tape<S>* tape = joint_tape<S>({&a, &b});
  Tensor<S> out = detail::make_output<S>(a.shape(), tape);
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
  if (tape) {
    tape->record([a, b, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) {
        const S bi = b.data()[i];
        const S g = out.grad()[i];
        if (a.live()) a.grad()[i] += g / bi;
        if (b.live()) b.grad()[i] -= g * a.data()[i] / (bi * bi);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// scalar broadcasts

template <class S>
Tensor<S> add_scalar(const Tensor<S>& x, S v) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + v;
  if (tape) {
    tape->record([x, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> mul_scalar(const Tensor<S>& x, S v) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * v;
  if (tape) {
    tape->record([x, out, v]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += out.grad()[i] * v;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise unary

template <class S>
Tensor<S> exp_elem(const Tensor<S>& x) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::exp(x.data()[i]);
  if (tape) {
    tape->record([x, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += out.grad()[i] * out.data()[i];
    });
  }
  return out;
}

// |x| with subgradient 0 at the origin.
template <class S>
Tensor<S> abs_elem(const Tensor<S>& x) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::abs(x.data()[i]);
  if (tape) {
    tape->record([x, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) {
        const S xi = x.data()[i];
        if (xi > S(0)) {
          x.grad()[i] += out.grad()[i];
        } else if (xi < S(0)) {
          x.grad()[i] -= out.grad()[i];
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > S(0) ? x.data()[i] : S(0);
  if (tape) {
    tape->record([x, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) {
        if (x.data()[i] > S(0)) x.grad()[i] += out.grad()[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) {
    const S xi = x.data()[i];
    out.data()[i] = xi >= S(0) ? S(1) / (S(1) + std::exp(-xi))
                               : std::exp(xi) / (S(1) + std::exp(xi));
  }
  if (tape) {
    tape->record([x, out]() mutable {
      const std::size_t n = out.size();
      for (std::size_t i = 0; i < n; ++i) {
        const S y = out.data()[i];
        x.grad()[i] += out.grad()[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// parametric activations

// slope is per-channel, shape (1,c,1,1).
template <class S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope) {
  detail::check_channel_param(x, slope, "prelu");
  Tape<S>* tape = joint_tape<S>({&x, &slope});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const S a = slope.data()[c];
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const S xi = x.data()[base + i];
        out.data()[base + i] = xi >= S(0) ? xi : a * xi;
      }
    }
  }
  if (tape) {
    tape->record([x, slope, out]() mutable {
      const Shape s = x.shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const S a = slope.data()[c];
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          double gslope = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const S xi = x.data()[base + i];
            const S g = out.grad()[base + i];
            if (xi >= S(0)) {
              if (x.live()) x.grad()[base + i] += g;
            } else {
              if (x.live()) x.grad()[base + i] += a * g;
              gslope += static_cast<double>(g) * static_cast<double>(xi);
            }
          }
          if (slope.live()) slope.grad()[c] += static_cast<S>(gslope);
        }
      }
    });
  }
  return out;
}

template <class S>
S softplus(S r) {
  if (r > S(20)) return r;
  if (r < S(-20)) return std::exp(r);
  return std::log1p(std::exp(r));
}

template <class S>
S softplus_inverse(S gamma) {
  // r with softplus(r) == gamma, gamma > 0
  if (gamma > S(20)) return gamma;
  return std::log(std::expm1(gamma));
}

template <class S>
S sigmoid_scalar(S r) {
  return r >= S(0) ? S(1) / (S(1) + std::exp(-r)) : std::exp(r) / (S(1) + std::exp(r));
}

// Soft shrinkage thresholding sign(x)*ReLU(|x| - gamma) with the per-channel
// threshold parameterized as gamma = softplus(raw) to keep it nonnegative.
template <class S>
Tensor<S> sst(const Tensor<S>& x, const Tensor<S>& raw_threshold) {
  detail::check_channel_param(x, raw_threshold, "sst");
  Tape<S>* tape = joint_tape<S>({&x, &raw_threshold});
  Tensor<S> out = detail::make_output<S>(x.shape(), tape);
  const Shape s = x.shape();
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const S gamma = softplus(raw_threshold.data()[c]);
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const S xi = x.data()[base + i];
        const S mag = std::abs(xi) - gamma;
        out.data()[base + i] = mag > S(0) ? (xi > S(0) ? mag : -mag) : S(0);
      }
    }
  }
  if (tape) {
    tape->record([x, raw_threshold, out]() mutable {
      const Shape s = x.shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int n = 0; n < s.n; ++n) {
        for (int c = 0; c < s.c; ++c) {
          const S raw = raw_threshold.data()[c];
          const S gamma = softplus(raw);
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          double graw = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const S xi = x.data()[base + i];
            if (std::abs(xi) <= gamma) continue;
            const S g = out.grad()[base + i];
            if (x.live()) x.grad()[base + i] += g;
            graw -= static_cast<double>(g) * (xi > S(0) ? 1.0 : -1.0);
          }
          if (raw_threshold.live()) {
            raw_threshold.grad()[c] += static_cast<S>(graw) * sigmoid_scalar(raw);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  Tape<S>* tape = joint_tape<S>({&x});
  double acc = 0.0;
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x.data()[i]);
  Tensor<S> out = detail::make_output<S>(Shape{1, 1, 1, 1}, tape);
  out.data()[0] = static_cast<S>(acc);
  if (tape) {
    tape->record([x, out]() mutable {
      const S g = out.grad()[0];
      const std::size_t n = x.size();
      for (std::size_t i = 0; i < n; ++i) x.grad()[i] += g;
    });
  }
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  return mul_scalar(sum(x), S(1) / static_cast<S>(x.size()));
}

// Non-traced reduction used by metrics and oracles.
template <class S>
double sum_values(const Tensor<S>& x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x.data()[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// channel structure

template <class S>
Tensor<S> select_channel(const Tensor<S>& x, int channel) {
  const Shape s = x.shape();
  if (channel < 0 || channel >= s.c) {
    throw ShapeError("select_channel: channel " + std::to_string(channel) + " out of range for " + s.str());
  }
  Tape<S>* tape = joint_tape<S>({&x});
  Tensor<S> out = detail::make_output<S>(Shape{s.n, 1, s.h, s.w}, tape);
  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  for (int n = 0; n < s.n; ++n) {
    const std::size_t src = (static_cast<std::size_t>(n) * s.c + channel) * plane;
    std::copy_n(x.data() + src, plane, out.data() + static_cast<std::size_t>(n) * plane);
  }
  if (tape) {
    tape->record([x, out, channel]() mutable {
      const Shape s = x.shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t src = (static_cast<std::size_t>(n) * s.c + channel) * plane;
        const std::size_t dst = static_cast<std::size_t>(n) * plane;
        for (std::size_t i = 0; i < plane; ++i) x.grad()[src + i] += out.grad()[dst + i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: empty input list");
  const Shape first = parts.front().shape();
  int total_c = 0;
  Tape<S>* tape = nullptr;
  for (const auto& p : parts) {
    const Shape ps = p.shape();
    if (ps.n != first.n || ps.h != first.h || ps.w != first.w) {
      throw ShapeError("concat_channels: incompatible shapes " + first.str() + " vs " + ps.str());
    }
    total_c += ps.c;
    Tape<S>* pt = joint_tape<S>({&p});
    if (pt) {
      if (tape && tape != pt) throw std::logic_error("concat_channels: mixed tapes");
      tape = pt;
    }
  }
  Tensor<S> out = detail::make_output<S>(Shape{first.n, total_c, first.h, first.w}, tape);
  const std::size_t plane = static_cast<std::size_t>(first.h) * first.w;
  int c0 = 0;
  for (const auto& p : parts) {
    const int pc = p.shape().c;
    for (int n = 0; n < first.n; ++n) {
      for (int c = 0; c < pc; ++c) {
        std::copy_n(p.data() + (static_cast<std::size_t>(n) * pc + c) * plane, plane,
                    out.data() + (static_cast<std::size_t>(n) * total_c + c0 + c) * plane);
      }
    }
    c0 += pc;
  }
  if (tape) {
    tape->record([parts, out, total_c]() mutable {
      const Shape s = parts.front().shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      int c0 = 0;
      for (auto& p : parts) {
        const int pc = p.shape().c;
        if (p.live()) {
          for (int n = 0; n < s.n; ++n) {
            for (int c = 0; c < pc; ++c) {
              const std::size_t src = (static_cast<std::size_t>(n) * total_c + c0 + c) * plane;
              const std::size_t dst = (static_cast<std::size_t>(n) * pc + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) p.grad()[dst + i] += out.grad()[src + i];
            }
          }
        }
        c0 += pc;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch normalization

template <class S>
struct BnState {
  Tensor<S> gamma;  // (1,c,1,1)
  Tensor<S> beta;   // (1,c,1,1)
  std::shared_ptr<std::vector<S>> running_mean;
  std::shared_ptr<std::vector<S>> running_var;
  S eps = S(1e-5);
  S momentum = S(0.1);

  static BnState make(int channels) {
    BnState st;
    st.gamma = Tensor<S>::full(Shape{1, channels, 1, 1}, S(1));
    st.beta = Tensor<S>(Shape{1, channels, 1, 1});
    st.running_mean = std::make_shared<std::vector<S>>(channels, S(0));
    st.running_var = std::make_shared<std::vector<S>>(channels, S(1));
    return st;
  }

  int channels() const { return gamma.shape().c; }

  BnState watched(Tape<S>& tape) {
    BnState st = *this;
    st.gamma = tape.watch(gamma);
    st.beta = tape.watch(beta);
    return st;
  }
};

// Train mode normalizes by batch statistics (biased variance) and updates the
// running estimates; eval mode normalizes by the running estimates. The
// running-statistics update is a side effect outside differentiation.
template <class S>
Tensor<S> batch_norm(const Tensor<S>& x, BnState<S>& state, Mode mode) {
  const Shape s = x.shape();
  if (s.c != state.channels()) {
    throw ShapeError("batch_norm: channel count " + std::to_string(s.c) + " does not match state " +
                     std::to_string(state.channels()));
  }
  Tape<S>* tape = joint_tape<S>({&x, &state.gamma, &state.beta});
  Tensor<S> out = detail::make_output<S>(s, tape);

  const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
  const std::size_t m = static_cast<std::size_t>(s.n) * plane;
  std::vector<S> mean_c(s.c), invstd_c(s.c);

  if (mode == Mode::Train) {
    for (int c = 0; c < s.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(x.data()[base + i]);
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(x.data()[base + i]) - mu;
          vacc += d * d;
        }
      }
      const double var = vacc / static_cast<double>(m);
      mean_c[c] = static_cast<S>(mu);
      invstd_c[c] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(state.eps)));
      const double unbiased = m > 1 ? vacc / static_cast<double>(m - 1) : var;
      (*state.running_mean)[c] =
          (S(1) - state.momentum) * (*state.running_mean)[c] + state.momentum * static_cast<S>(mu);
      (*state.running_var)[c] =
          (S(1) - state.momentum) * (*state.running_var)[c] + state.momentum * static_cast<S>(unbiased);
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean_c[c] = (*state.running_mean)[c];
      invstd_c[c] = S(1) / std::sqrt((*state.running_var)[c] + state.eps);
    }
  }

  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const S g = state.gamma.data()[c];
      const S b = state.beta.data()[c];
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        out.data()[base + i] = g * (x.data()[base + i] - mean_c[c]) * invstd_c[c] + b;
      }
    }
  }

  if (tape) {
    Tensor<S> gamma = state.gamma;
    Tensor<S> beta = state.beta;
    tape->record([x, gamma, beta, out, mean_c, invstd_c, mode, m]() mutable {
      const Shape s = x.shape();
      const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
      for (int c = 0; c < s.c; ++c) {
        const S mu = mean_c[c];
        const S istd = invstd_c[c];
        const S g = gamma.data()[c];
        double gsum = 0.0, gxhat = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double go = static_cast<double>(out.grad()[base + i]);
            gsum += go;
            gxhat += go * static_cast<double>((x.data()[base + i] - mu) * istd);
          }
        }
        if (gamma.live()) gamma.grad()[c] += static_cast<S>(gxhat);
        if (beta.live()) beta.grad()[c] += static_cast<S>(gsum);
        if (x.live()) {
          if (mode == Mode::Train) {
            const double inv_m = 1.0 / static_cast<double>(m);
            for (int n = 0; n < s.n; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                const double xhat = static_cast<double>((x.data()[base + i] - mu) * istd);
                const double go = static_cast<double>(out.grad()[base + i]);
                x.grad()[base + i] += static_cast<S>(
                    static_cast<double>(g) * static_cast<double>(istd) *
                    (go - gsum * inv_m - xhat * gxhat * inv_m));
              }
            }
          } else {
            for (int n = 0; n < s.n; ++n) {
              const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * plane;
              for (std::size_t i = 0; i < plane; ++i) {
                x.grad()[base + i] += out.grad()[base + i] * g * istd;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax across a set of equally-shaped tensors, position-wise

template <class S>
std::vector<Tensor<S>> softmax_over_set(const std::vector<Tensor<S>>& xs) {
  if (xs.empty()) throw ShapeError("softmax_over_set: empty input list");
  const Shape s = xs.front().shape();
  Tape<S>* tape = nullptr;
  for (const auto& x : xs) {
    check_shapes_match(s, x.shape(), "softmax_over_set");
    Tape<S>* t = joint_tape<S>({&x});
    if (t) {
      if (tape && tape != t) throw std::logic_error("softmax_over_set: mixed tapes");
      tape = t;
    }
  }
  const std::size_t n = s.size();
  const std::size_t k = xs.size();
  std::vector<Tensor<S>> outs;
  outs.reserve(k);
  for (std::size_t j = 0; j < k; ++j) outs.push_back(detail::make_output<S>(s, tape));
  std::vector<double> e(k);
  for (std::size_t i = 0; i < n; ++i) {
    double m = static_cast<double>(xs[0].data()[i]);
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, static_cast<double>(xs[j].data()[i]));
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(xs[j].data()[i]) - m);
      total += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) outs[j].data()[i] = static_cast<S>(e[j] / total);
  }
  if (tape) {
    tape->record([xs, outs]() mutable {
      const std::size_t n = outs[0].size();
      const std::size_t k = xs.size();
      for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          dot += static_cast<double>(outs[j].grad()[i]) * static_cast<double>(outs[j].data()[i]);
        }
        for (std::size_t j = 0; j < k; ++j) {
          if (!xs[j].live()) continue;
          xs[j].grad()[i] += static_cast<S>(static_cast<double>(outs[j].data()[i]) *
                                            (static_cast<double>(outs[j].grad()[i]) - dot));
        }
      }
    });
  }
  return outs;
}

}  // namespace cscfuse
