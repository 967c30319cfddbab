#pragma once

#include <functional>
#include <string>
#include <vector>

#include "asrtra/autodiff.hpp"
#include "helpers.hpp"

namespace asrtra::testing {

using ad::Tape;
using ad::TensorPtr;

struct PrimitiveCase {
  const char* name;
  std::function<TensorPtr(Tape&, const TensorPtr&)> op;
  std::size_t rows, cols;
  double lo = -2.0, hi = 2.0;
};

inline TensorPtr fixed(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  return random_const(rng, r, c);
}

/// Every differentiable tape operation, each wrapped into a scalar readout.
inline std::vector<PrimitiveCase> primitive_cases() {
  return {
      {"matmul_left", [](Tape& t, const TensorPtr& x) { return t.matmul(x, fixed(4, 3, 1)); }, 2, 4},
      {"matmul_right", [](Tape& t, const TensorPtr& x) { return t.matmul(fixed(2, 4, 2), x); }, 4, 3},
      {"matmul_nt", [](Tape& t, const TensorPtr& x) { return t.matmul_nt(x, fixed(3, 4, 3)); }, 2, 4},
      {"matmul_nt_self", [](Tape& t, const TensorPtr& x) { return t.matmul_nt(x, x); }, 3, 4},
      {"add", [](Tape& t, const TensorPtr& x) { return t.add(x, t.mul(x, x)); }, 2, 3},
      {"sub", [](Tape& t, const TensorPtr& x) { return t.sub(fixed(2, 3, 4), t.mul(x, x)); }, 2, 3},
      {"mul", [](Tape& t, const TensorPtr& x) { return t.mul(x, fixed(2, 3, 5)); }, 2, 3},
      {"add_row", [](Tape& t, const TensorPtr& x) { return t.mul(t.add_row(fixed(3, 4, 6), x), fixed(3, 4, 7)); }, 1, 4},
      {"scale", [](Tape& t, const TensorPtr& x) { return t.scale(t.mul(x, x), -1.7); }, 2, 3},
      {"scale_by", [](Tape& t, const TensorPtr& x) { return t.scale_by(fixed(2, 3, 8), t.sum(t.mul(x, x))); }, 1, 2},
      {"exp", [](Tape& t, const TensorPtr& x) { return t.exp(x); }, 2, 3},
      {"gelu", [](Tape& t, const TensorPtr& x) { return t.gelu(x); }, 2, 3},
      {"softmax_rows", [](Tape& t, const TensorPtr& x) { return t.softmax_rows(x); }, 3, 5},
      {"softmax_causal", [](Tape& t, const TensorPtr& x) { return t.softmax_rows(x, 0); }, 4, 4},
      {"log_softmax_rows", [](Tape& t, const TensorPtr& x) { return t.log_softmax_rows(x); }, 3, 5},
      {"normalize_rows", [](Tape& t, const TensorPtr& x) { return t.normalize_rows(x); }, 3, 4},
      {"mean_rows", [](Tape& t, const TensorPtr& x) { return t.mean_rows(t.mul(x, x)); }, 3, 4},
      {"mean", [](Tape& t, const TensorPtr& x) { return t.mean(t.mul(x, x)); }, 3, 4},
      {"pick", [](Tape& t, const TensorPtr& x) {
         const std::vector<std::size_t> r{0, 1, 1}, c{2, 0, 3};
         return t.pick(t.log_softmax_rows(x), r, c);
       }, 2, 4},
      {"gather_rows", [](Tape& t, const TensorPtr& x) {
         const std::vector<int> ids{2, 0, 2, 1};
         return t.mul(t.gather_rows(x, ids), fixed(4, 3, 9));
       }, 3, 3},
      {"concat_rows", [](Tape& t, const TensorPtr& x) { return t.mul(t.concat_rows({x, t.exp(x)}), fixed(4, 3, 10)); }, 2, 3},
      {"concat_cols", [](Tape& t, const TensorPtr& x) { return t.mul(t.concat_cols({x, t.exp(x)}), fixed(2, 6, 12)); }, 2, 3},
      {"slice_cols", [](Tape& t, const TensorPtr& x) { return t.slice_cols(t.exp(x), 1, 2); }, 3, 4},
      {"layer_norm_input", [](Tape& t, const TensorPtr& x) {
         return t.layer_norm(x, ad::constant({4}, {1.0, -0.5, 2.0, 0.7}), ad::constant({4}, {0.1, 0.0, -0.3, 0.2}));
       }, 3, 4},
      {"layer_norm_gain", [](Tape& t, const TensorPtr& x) {
         return t.layer_norm(fixed(3, 4, 13), x, ad::constant({1, 4}, {0.1, 0.0, -0.3, 0.2}));
       }, 1, 4},
      {"layer_norm_bias", [](Tape& t, const TensorPtr& x) {
         return t.layer_norm(fixed(3, 4, 14), ad::constant({1, 4}, {1.0, -0.5, 2.0, 0.7}), x);
       }, 1, 4},
      {"linear_combination", [](Tape& t, const TensorPtr& x) {
         const std::vector<double> c{0.5, -1.5};
         return t.linear_combination({t.sum(t.exp(x)), t.sum(t.mul(x, x))}, c);
       }, 2, 3},
      {"slice_rows", [](Tape& t, const TensorPtr& x) { return t.slice_rows(t.exp(x), 1, 2); }, 4, 3},
  };
}

inline double check_primitive(const PrimitiveCase& c, std::uint64_t seed, double step = 1e-5) {
  Rng rng(seed);
  auto x = random_param(rng, c.rows, c.cols, c.lo, c.hi);
  return ad::grad_check([&](Tape& t, const TensorPtr& v) { return readout(t, c.op(t, v)); }, x, step);
}

}  // namespace asrtra::testing
