#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "rnode/rng.hpp"
#include "rnode/tensor.hpp"

namespace rnode {

// Affine map x -> x W + b with W of shape (in, out) and b of shape (out).
struct Linear {
  Tensor weight;
  Tensor bias;

  std::size_t in_width() const { return weight.rows(); }
  std::size_t out_width() const { return weight.cols(); }
  std::size_t param_count() const { return weight.numel() + bias.numel(); }
};

inline Linear make_linear(std::size_t in, std::size_t out, Rng& rng) {
  if (in == 0 || out == 0) {
    throw ContractError("make_linear: widths must be positive");
  }
  const double k = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> w(in * out);
  for (auto& v : w) v = rng.uniform(-k, k);
  Linear l;
  l.weight = Tensor::from_data({in, out}, std::move(w), /*requires_grad=*/true);
  l.bias = Tensor::zeros({out}, /*requires_grad=*/true);
  return l;
}

inline Tensor linear(const Linear& l, const Tensor& x) {
  return add(matmul(x, l.weight), l.bias);
}

// Feed-forward stack: tanh after every layer except the last, which stays
// linear.
struct Mlp {
  std::vector<Linear> layers;

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
  }
};

inline Mlp make_mlp(std::size_t in, const std::vector<std::size_t>& hidden,
                    std::size_t out, Rng& rng) {
  Mlp m;
  std::size_t prev = in;
  for (std::size_t w : hidden) {
    m.layers.push_back(make_linear(prev, w, rng));
    prev = w;
  }
  m.layers.push_back(make_linear(prev, out, rng));
  return m;
}

inline Tensor mlp_forward(const Mlp& m, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    h = linear(m.layers[i], h);
    if (i + 1 < m.layers.size()) h = tanh(h);
  }
  return h;
}

// Inverted dropout: kept activations are rescaled by 1/(1-rate) so that
// inference needs no correction. Only used during training.
inline Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ContractError("dropout: rate must be in [0, 1)");
  const double keep = 1.0 - rate;
  std::vector<double> mask(x.numel());
  for (auto& v : mask) v = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  return mul(x, Tensor::from_data(x.shape(), std::move(mask)));
}

}  // namespace rnode
