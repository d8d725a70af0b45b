#pragma once

#include <cstdint>
#include <vector>

#include "imt/corpus.hpp"
#include "imt/tensor.hpp"

namespace imt::vq {

/// n tables of K codewords each; table j quantizes columns
/// [j * sub_dim, (j + 1) * sub_dim) of a D-vector.
struct CodebookSet {
  int n = 1;
  int K = 2;
  std::int64_t sub_dim = 0;
  std::vector<Tensor> tables;  // each [K, sub_dim]
  double beta = 0.25;

  std::int64_t dim() const { return n * sub_dim; }
};

/// Uniform init in [-1/K, 1/K]. Throws IndivisibleDim unless n divides D.
CodebookSet codebook_init(int n, int K, std::int64_t dim, std::uint64_t seed, double beta = 0.25);

struct Quantized {
  data::IdMatrix indices;  // [B, n]
  Tensor zq;               // [B, D], differentiable w.r.t. the tables
};

/// Nearest codeword per chunk (squared Euclidean, lowest index on ties).
Quantized quantize_decomposed(const CodebookSet& cb, const Tensor& z);

/// Forward value of `zq`, gradient routed to `z` unchanged.
Tensor straight_through(const Tensor& z, const Tensor& zq);

struct DvqOutput {
  Tensor zq_st;
  Tensor codebook_loss;    // batch mean of ||sg(z) - zq||^2
  Tensor commitment_loss;  // beta * batch mean of ||z - sg(zq)||^2
  data::IdMatrix indices;
};

DvqOutput dvq_forward(const CodebookSet& cb, const Tensor& z);

/// Every representable vector, index tuples in lexicographic order (K^n rows).
std::vector<std::vector<double>> enumerate_reconstructions(const CodebookSet& cb);

/// Counts how often each codeword is selected.
class UsageTracker {
 public:
  UsageTracker(int n, int K);
  void record(const data::IdMatrix& indices);
  /// Fraction of the n * K codewords selected at least once.
  double fraction_used() const;
  void reset();

 private:
  int n_, K_;
  std::vector<std::int64_t> counts_;
};

}  // namespace imt::vq
