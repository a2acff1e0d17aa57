#pragma once

// Small conditional MLP used for both the one-step generator and the fake
// score network.  Input is [point (2) | class embedding | sinusoidal time
// features]; output is a 2-d x-prediction (denoised point / generated point).
//
// Parameters live in one flat vector (embedding table first, then each
// layer's weight and bias) so optimizer state, EMA shadows, checkpoints and
// network-to-network copies all operate on plain spans.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sfd/common.hpp"
#include "sfd/rng.hpp"
#include "sfd/tape.hpp"
#include "sfd/tensor.hpp"

namespace sfd {

struct MlpArch {
  int num_classes = 4;
  int class_embed_dim = 8;
  int time_embed_dim = 16;  // even: sin/cos pairs
  std::vector<int> hidden{128, 128, 128};

  bool operator==(const MlpArch&) const = default;

  int in_dim() const { return 2 + class_embed_dim + time_embed_dim; }

  void validate() const {
    require(num_classes >= 1, "MlpArch: need at least one class");
    require(class_embed_dim >= 1, "MlpArch: class_embed_dim must be positive");
    require(time_embed_dim >= 2 && time_embed_dim % 2 == 0,
            cat("MlpArch: time_embed_dim must be even and >= 2, got ", time_embed_dim));
    require(!hidden.empty(), "MlpArch: need at least one hidden layer");
    for (int h : hidden) {
      require(h >= 1, "MlpArch: hidden widths must be positive");
    }
  }

  std::size_t param_count() const {
    std::size_t n = static_cast<std::size_t>(num_classes) * class_embed_dim;
    int prev = in_dim();
    for (int h : hidden) {
      n += static_cast<std::size_t>(prev) * h + h;
      prev = h;
    }
    n += static_cast<std::size_t>(prev) * 2 + 2;
    return n;
  }
};

class CondMlp {
 public:
  // Leaves of one network lifted onto a tape; order matches the flat layout.
  struct Lifted {
    std::vector<ad::Var> leaves;
  };

  explicit CondMlp(MlpArch arch) : arch_(std::move(arch)) {
    arch_.validate();
    params_.assign(arch_.param_count(), 0.0);
  }

  // Seeded initialization: embeddings standard normal, weights N(0, 1/fan_in),
  // biases zero.
  static CondMlp init(MlpArch arch, Rng& rng) {
    CondMlp net(std::move(arch));
    std::size_t off = 0;
    for (int i = 0; i < net.arch_.num_classes * net.arch_.class_embed_dim; ++i) {
      net.params_[off++] = rng.normal();
    }
    int prev = net.arch_.in_dim();
    for (std::size_t layer = 0; layer <= net.arch_.hidden.size(); ++layer) {
      const int out = net.out_width(layer);
      const double std_dev = 1.0 / std::sqrt(static_cast<double>(prev));
      for (int i = 0; i < prev * out; ++i) {
        net.params_[off++] = rng.normal() * std_dev;
      }
      off += static_cast<std::size_t>(out);  // biases stay zero
      prev = out;
    }
    require(off == net.params_.size(), "CondMlp::init: layout mismatch");
    return net;
  }

  const MlpArch& arch() const { return arch_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  void set_params(std::span<const double> p) {
    require(p.size() == params_.size(),
            cat("CondMlp::set_params: ", p.size(), " values for ", params_.size(), " parameters"));
    std::copy(p.begin(), p.end(), params_.begin());
  }

  // Creates one leaf per parameter block on the tape.  trainable=false turns
  // the whole network into constants (no gradient accumulation).
  Lifted lift(ad::Tape& tape, bool trainable) const {
    Lifted lv;
    std::size_t off = 0;
    lv.leaves.push_back(tape.leaf(block(off, arch_.num_classes, arch_.class_embed_dim), trainable));
    int prev = arch_.in_dim();
    for (std::size_t layer = 0; layer <= arch_.hidden.size(); ++layer) {
      const int out = out_width(layer);
      lv.leaves.push_back(tape.leaf(block(off, prev, out), trainable));
      lv.leaves.push_back(tape.leaf(block(off, 1, out), trainable));
      prev = out;
    }
    return lv;
  }

  // x-prediction for a batch: points is B x 2 (tape var so gradients can flow
  // through the input), one class id and one timestep per row.  Timesteps are
  // embedded as sin/cos features of t / total_steps.
  ad::Var forward(ad::Tape& tape, const Lifted& lv, ad::Var points, const std::vector<int>& classes,
                  const std::vector<int>& ts, int total_steps) const {
    const int b = tape.rows(points);
    require(tape.cols(points) == 2, cat("CondMlp::forward: points must be Bx2, got ", tape.rows(points), "x",
                                        tape.cols(points)));
    require(static_cast<int>(classes.size()) == b && static_cast<int>(ts.size()) == b,
            cat("CondMlp::forward: batch ", b, " with ", classes.size(), " classes and ", ts.size(), " timesteps"));
    for (int c : classes) {
      require(c >= 0 && c < arch_.num_classes, cat("CondMlp::forward: class ", c, " outside [0, ",
                                                   arch_.num_classes, ")"));
    }
    ad::Var emb = tape.gather_rows(lv.leaves[0], classes);
    ad::Var timef = tape.constant(time_features(ts, total_steps));
    ad::Var h = tape.concat_cols({points, emb, timef});
    for (std::size_t layer = 0; layer <= arch_.hidden.size(); ++layer) {
      h = tape.add_rowvec(tape.matmul(h, lv.leaves[1 + 2 * layer]), lv.leaves[2 + 2 * layer]);
      if (layer < arch_.hidden.size()) {
        h = tape.silu(h);
      }
    }
    return h;
  }

  // Value-only forward on a scratch tape.
  Tensor forward_values(const Tensor& points, const std::vector<int>& classes, const std::vector<int>& ts,
                        int total_steps) const {
    ad::Tape tape;
    const Lifted lv = lift(tape, false);
    return tape.to_tensor(forward(tape, lv, tape.constant(points), classes, ts, total_steps));
  }

  // Flat gradient (same layout as params()) after a backward pass.
  std::vector<double> gather_grad(const ad::Tape& tape, const Lifted& lv) const {
    std::vector<double> g;
    g.reserve(params_.size());
    for (ad::Var v : lv.leaves) {
      const Tensor t = tape.grad_tensor(v);
      g.insert(g.end(), t.flat().begin(), t.flat().end());
    }
    require(g.size() == params_.size(), "CondMlp::gather_grad: layout mismatch");
    return g;
  }

  Tensor time_features(const std::vector<int>& ts, int total_steps) const {
    require(total_steps >= 1, "CondMlp::time_features: total_steps must be positive");
    Tensor f(static_cast<int>(ts.size()), arch_.time_embed_dim);
    for (std::size_t r = 0; r < ts.size(); ++r) {
      const double tau = static_cast<double>(ts[r]) / static_cast<double>(total_steps);
      for (int i = 0; i < arch_.time_embed_dim / 2; ++i) {
        const double angle = std::numbers::pi * tau * static_cast<double>(1 << i);
        f.at(static_cast<int>(r), 2 * i) = std::sin(angle);
        f.at(static_cast<int>(r), 2 * i + 1) = std::cos(angle);
      }
    }
    return f;
  }

 private:
  int out_width(std::size_t layer) const {
    return layer < arch_.hidden.size() ? arch_.hidden[layer] : 2;
  }

  // Copies the next rows x cols block out of the flat vector, advancing off.
  Tensor block(std::size_t& off, int rows, int cols) const {
    Tensor t(rows, cols, std::vector<double>(params_.begin() + static_cast<std::ptrdiff_t>(off),
                                             params_.begin() + static_cast<std::ptrdiff_t>(off) +
                                                 static_cast<std::ptrdiff_t>(rows) * cols));
    off += static_cast<std::size_t>(rows) * cols;
    return t;
  }

  MlpArch arch_;
  std::vector<double> params_;
};

// Exponential moving average of a parameter vector:
// shadow <- decay * shadow + (1 - decay) * params.
inline void ema_update(std::span<double> shadow, std::span<const double> params, double decay) {
  require(shadow.size() == params.size(), "ema_update: size mismatch");
  require(decay >= 0.0 && decay < 1.0, cat("ema_update: decay must be in [0, 1), got ", decay));
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    shadow[i] = decay * shadow[i] + (1.0 - decay) * params[i];
  }
}

}  // namespace sfd
