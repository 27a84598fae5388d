#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "rnode/rng.hpp"
#include "rnode/tensor.hpp"

namespace rnode {

enum class CellKind { Vanilla, Gru, Lstm };

inline std::size_t gate_count(CellKind k) {
  switch (k) {
    case CellKind::Vanilla: return 1;
    case CellKind::Gru: return 3;
    case CellKind::Lstm: return 4;
  }
  return 0;
}

inline const char* cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::Vanilla: return "vanilla";
    case CellKind::Gru: return "gru";
    case CellKind::Lstm: return "lstm";
  }
  return "?";
}

// Single-step recurrent update parameters. Gate order is fixed:
// Vanilla {h}; GRU {update, reset, candidate}; LSTM {input, forget, cell,
// output}. Each gate has w_in (in x hid), w_hid (hid x hid) and bias (hid),
// giving gates*(in+hid+1)*hid trainable scalars.
struct CellParams {
  CellKind kind = CellKind::Vanilla;
  std::size_t input_width = 0;
  std::size_t hidden_width = 0;
  std::vector<Tensor> w_in;
  std::vector<Tensor> w_hid;
  std::vector<Tensor> bias;
};

inline CellParams make_cell(CellKind kind, std::size_t input_width,
                            std::size_t hidden_width, Rng& rng) {
  if (input_width == 0 || hidden_width == 0) {
    throw ContractError("make_cell: input and hidden widths must be >= 1");
  }
  CellParams cell;
  cell.kind = kind;
  cell.input_width = input_width;
  cell.hidden_width = hidden_width;
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden_width));
  const std::size_t gates = gate_count(kind);
  for (std::size_t g = 0; g < gates; ++g) {
    std::vector<double> wi(input_width * hidden_width);
    std::vector<double> wh(hidden_width * hidden_width);
    for (auto& v : wi) v = rng.uniform(-k, k);
    for (auto& v : wh) v = rng.uniform(-k, k);
    cell.w_in.push_back(
        Tensor::from_data({input_width, hidden_width}, std::move(wi), true));
    cell.w_hid.push_back(
        Tensor::from_data({hidden_width, hidden_width}, std::move(wh), true));
    // LSTM forget gate (index 1) starts open.
    const double b0 = (kind == CellKind::Lstm && g == 1) ? 1.0 : 0.0;
    cell.bias.push_back(Tensor::full({hidden_width}, b0, true));
  }
  return cell;
}

inline std::size_t param_count(const CellParams& cell) {
  std::size_t n = 0;
  for (const auto& t : cell.w_in) n += t.numel();
  for (const auto& t : cell.w_hid) n += t.numel();
  for (const auto& t : cell.bias) n += t.numel();
  return n;
}

struct CellOutput {
  Tensor h;
  std::optional<Tensor> c;  // LSTM only
};

namespace detail {

inline Tensor gate_preact(const CellParams& cell, std::size_t g,
                          const Tensor& x, const Tensor& h) {
  return add(add(matmul(x, cell.w_in[g]), matmul(h, cell.w_hid[g])),
             cell.bias[g]);
}

}  // namespace detail

// One recurrent update. x is (batch, input_width), h_prev is
// (batch, hidden_width); c_prev must be present exactly when kind == Lstm.
inline CellOutput cell_step(const CellParams& cell, const Tensor& h_prev,
                            const Tensor& x,
                            const std::optional<Tensor>& c_prev = std::nullopt) {
  if (x.ndim() != 2 || x.cols() != cell.input_width) {
    throw ShapeError("cell_step: input " + detail::shape_str(x.shape()) +
                     " does not match input width " +
                     std::to_string(cell.input_width));
  }
  if (h_prev.ndim() != 2 || h_prev.cols() != cell.hidden_width ||
      h_prev.rows() != x.rows()) {
    throw ShapeError("cell_step: hidden state " +
                     detail::shape_str(h_prev.shape()) +
                     " does not match hidden width " +
                     std::to_string(cell.hidden_width) + " and batch " +
                     std::to_string(x.rows()));
  }
  if (cell.kind == CellKind::Lstm && !c_prev.has_value()) {
    throw ContractError("cell_step: LSTM requires c_prev");
  }
  if (cell.kind != CellKind::Lstm && c_prev.has_value()) {
    throw ContractError("cell_step: c_prev is only valid for LSTM");
  }

  switch (cell.kind) {
    case CellKind::Vanilla: {
      return {tanh(detail::gate_preact(cell, 0, x, h_prev)), std::nullopt};
    }
    case CellKind::Gru: {
      const Tensor z = sigmoid(detail::gate_preact(cell, 0, x, h_prev));
      const Tensor r = sigmoid(detail::gate_preact(cell, 1, x, h_prev));
      const Tensor n = tanh(add(
          add(matmul(x, cell.w_in[2]), matmul(mul(r, h_prev), cell.w_hid[2])),
          cell.bias[2]));
      // h = (1-z)*h_prev + z*n, so a closed update gate keeps the state.
      return {add(h_prev, mul(z, sub(n, h_prev))), std::nullopt};
    }
    case CellKind::Lstm: {
      const Tensor i = sigmoid(detail::gate_preact(cell, 0, x, h_prev));
      const Tensor f = sigmoid(detail::gate_preact(cell, 1, x, h_prev));
      const Tensor g = tanh(detail::gate_preact(cell, 2, x, h_prev));
      const Tensor o = sigmoid(detail::gate_preact(cell, 3, x, h_prev));
      const Tensor c = add(mul(f, *c_prev), mul(i, g));
      return {mul(o, tanh(c)), c};
    }
  }
  throw ContractError("cell_step: unknown cell kind");
}

}  // namespace rnode
