#include "imt/dvq.hpp"

#include <algorithm>
#include <random>

#include "imt/error.hpp"

namespace imt::vq {

CodebookSet codebook_init(int n, int K, std::int64_t dim, std::uint64_t seed, double beta) {
  if (n < 1 || dim < 1 || dim % n != 0) {
    throw Error(ErrorCode::IndivisibleDim, std::to_string(n) + " tables do not divide D=" + std::to_string(dim));
  }
  if (K < 2) throw Error(ErrorCode::InvalidArgument, "codebooks need K >= 2");
  if (!(beta >= 0.0)) throw Error(ErrorCode::InvalidArgument, "commitment weight must be >= 0");
  CodebookSet cb;
  cb.n = n;
  cb.K = K;
  cb.sub_dim = dim / n;
  cb.beta = beta;
  std::mt19937_64 rng(seed);
  for (int j = 0; j < n; ++j) {
    auto t = Tensor::uniform({K, cb.sub_dim}, -1.0 / K, 1.0 / K, rng);
    t.set_requires_grad(true);
    cb.tables.push_back(std::move(t));
  }
  return cb;
}

Quantized quantize_decomposed(const CodebookSet& cb, const Tensor& z) {
  if (z.rank() != 2 || z.dim(1) != cb.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "z " + shape_string(z.shape()) + " vs codebook dim " + std::to_string(cb.dim()));
  }
  const auto b = z.dim(0), dims = z.dim(1), sd = cb.sub_dim;
  const auto zv = z.values();
  Quantized out;
  out.indices.resize(b, cb.n);
  std::vector<Tensor> parts;
  for (int j = 0; j < cb.n; ++j) {
    const auto table = cb.tables[static_cast<std::size_t>(j)].values();
    for (std::int64_t i = 0; i < b; ++i) {
      const double* chunk = zv.data() + i * dims + j * sd;
      int best = 0;
      double best_d = 0.0;
      for (int k = 0; k < cb.K; ++k) {
        double dist = 0.0;
        for (std::int64_t c = 0; c < sd; ++c) {
          const double diff = chunk[c] - table[static_cast<std::size_t>(k * sd + c)];
          dist += diff * diff;
        }
        if (k == 0 || dist < best_d) {
          best = k;
          best_d = dist;
        }
      }
      out.indices(i, j) = best;
    }
    std::vector<std::int32_t> ids(static_cast<std::size_t>(b));
    for (std::int64_t i = 0; i < b; ++i) ids[static_cast<std::size_t>(i)] = out.indices(i, j);
    parts.push_back(embedding_lookup(cb.tables[static_cast<std::size_t>(j)], ids, {b}));
  }
  out.zq = cb.n == 1 ? parts.front() : concat(parts, 1);
  return out;
}

Tensor straight_through(const Tensor& z, const Tensor& zq) {
  if (z.shape() != zq.shape()) throw Error(ErrorCode::ShapeMismatch, "straight-through operands differ in shape");
  Tensor out(zq.shape(), std::vector<double>(zq.values().begin(), zq.values().end()));
  if (autograd::should_record({&z})) {
    autograd::record(out, {z}, [z](const std::vector<double>& g) { autograd::accumulate(z, g); });
  }
  return out;
}

DvqOutput dvq_forward(const CodebookSet& cb, const Tensor& z) {
  auto q = quantize_decomposed(cb, z);
  DvqOutput out;
  auto to_codes = sub(z.detach(), q.zq);
  out.codebook_loss = mean(sum(mul(to_codes, to_codes), 1));
  auto to_encoder = sub(z, q.zq.detach());
  out.commitment_loss = scale(mean(sum(mul(to_encoder, to_encoder), 1)), cb.beta);
  out.zq_st = straight_through(z, q.zq);
  out.indices = std::move(q.indices);
  return out;
}

std::vector<std::vector<double>> enumerate_reconstructions(const CodebookSet& cb) {
  std::vector<std::vector<double>> out;
  std::vector<int> idx(static_cast<std::size_t>(cb.n), 0);
  while (true) {
    std::vector<double> v;
    v.reserve(static_cast<std::size_t>(cb.dim()));
    for (int j = 0; j < cb.n; ++j) {
      const auto t = cb.tables[static_cast<std::size_t>(j)].values();
      const auto row = t.subspan(static_cast<std::size_t>(idx[static_cast<std::size_t>(j)] * cb.sub_dim),
                                 static_cast<std::size_t>(cb.sub_dim));
      v.insert(v.end(), row.begin(), row.end());
    }
    out.push_back(std::move(v));
    int j = cb.n - 1;
    while (j >= 0 && ++idx[static_cast<std::size_t>(j)] == cb.K) idx[static_cast<std::size_t>(j--)] = 0;
    if (j < 0) break;
  }
  return out;
}

UsageTracker::UsageTracker(int n, int K) : n_(n), K_(K), counts_(static_cast<std::size_t>(n * K), 0) {}

void UsageTracker::record(const data::IdMatrix& indices) {
  if (indices.cols() != n_) throw Error(ErrorCode::ShapeMismatch, "index matrix has wrong table count");
  for (Eigen::Index i = 0; i < indices.rows(); ++i)
    for (int j = 0; j < n_; ++j) {
      const auto k = indices(i, j);
      if (k < 0 || k >= K_) throw Error(ErrorCode::IndexOutOfRange, "codeword index " + std::to_string(k));
      ++counts_[static_cast<std::size_t>(j * K_ + k)];
    }
}

double UsageTracker::fraction_used() const {
  const auto used = std::count_if(counts_.begin(), counts_.end(), [](std::int64_t c) { return c > 0; });
  return static_cast<double>(used) / static_cast<double>(counts_.size());
}

void UsageTracker::reset() { std::fill(counts_.begin(), counts_.end(), 0); }

}  // namespace imt::vq
