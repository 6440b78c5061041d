#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "timepfn/common.hpp"
#include "timepfn/config.hpp"
#include "timepfn/gp.hpp"
#include "timepfn/io_util.hpp"
#include "timepfn/kernels.hpp"
#include "timepfn/rng.hpp"

namespace timepfn {

enum class SeriesMode : std::uint8_t { Correlated = 0, Independent = 1 };

struct LmcConfig {
  int variates = 160;        // N
  int length = 1024;         // T
  double weibull_shape = 1.5;
  double weibull_scale = 8.0;
  double dirichlet_min = 0.1;
  double dirichlet_max = 5.0;
  int min_latents = 1;       // m
  int max_compositions = 5;  // J
  bool independent_mode = false;
  KernelBankConfig bank;

  void validate() {
    if (variates < 1) throw Error("LmcConfig: variates must be >= 1");
    if (length < 2) throw Error("LmcConfig: length must be >= 2");
    if (!(weibull_shape > 0) || !(weibull_scale > 0))
      throw Error("LmcConfig: Weibull parameters must be positive");
    if (!(dirichlet_min > 0) || dirichlet_min > dirichlet_max)
      throw Error("LmcConfig: need 0 < dirichlet_min <= dirichlet_max");
    if (min_latents < 1) throw Error("LmcConfig: min_latents must be >= 1");
    if (max_compositions < 1) throw Error("LmcConfig: max_compositions must be >= 1");
    min_latents = std::min(min_latents, variates);
  }

  static LmcConfig from_config(const ConfigMap& cfg) {
    LmcConfig c;
    const std::string s = "lmc";
    c.variates = static_cast<int>(cfg.get_int(s, "variates", c.variates));
    c.length = static_cast<int>(cfg.get_int(s, "length", c.length));
    c.weibull_shape = cfg.get_real(s, "weibull_shape", c.weibull_shape);
    c.weibull_scale = cfg.get_real(s, "weibull_scale", c.weibull_scale);
    c.dirichlet_min = cfg.get_real(s, "dirichlet_min", c.dirichlet_min);
    c.dirichlet_max = cfg.get_real(s, "dirichlet_max", c.dirichlet_max);
    c.min_latents = static_cast<int>(cfg.get_int(s, "min_latents", c.min_latents));
    c.max_compositions = static_cast<int>(cfg.get_int(s, "max_compositions", c.max_compositions));
    c.bank = KernelBankConfig::from_config(cfg);
    return c;
  }
};

// One synthetic multivariate series. Latents are carried in memory for
// replay/verification; only values, mode and L are persisted.
template <typename Scalar>
struct SeriesBlock {
  Matrix<Scalar> values;          // T x N
  SeriesMode mode = SeriesMode::Correlated;
  int num_latents = 0;            // L
  Matrix<Scalar> mixing_weights;  // N x L, empty in Independent mode
  Matrix<Scalar> latents;         // T x L
  std::uint64_t global_seed = 0;
  std::int64_t series_index = 0;
};

// L ~ round(Weibull(shape, scale)) clamped to [m, N].
inline int draw_latent_count(const LmcConfig& cfg, RngStream& rng) {
  const double w = rng.weibull(cfg.weibull_shape, cfg.weibull_scale);
  auto L = static_cast<long long>(std::llround(w));
  L = std::max<long long>(L, cfg.min_latents);
  L = std::min<long long>(L, cfg.variates);
  return static_cast<int>(L);
}

// Symmetric Dirichlet(d) row via normalized Gamma(d, 1) draws. If every
// gamma underflows to zero, resample up to 8 times, then fall back to the
// uniform row.
inline Vector<double> draw_mixing_row(double d, int L, RngStream& rng) {
  if (!(d > 0) || L < 1) throw Error("draw_mixing_row: need d > 0, L >= 1");
  Vector<double> row(L);
  for (int attempt = 0; attempt < 8; ++attempt) {
    double sum = 0.0;
    for (int i = 0; i < L; ++i) {
      row[i] = rng.gamma(d);
      sum += row[i];
    }
    if (sum > 0.0 && std::isfinite(sum)) {
      row /= sum;
      return row;
    }
  }
  row.setConstant(1.0 / L);
  return row;
}

namespace detail {

// Latent j of series s uses a stream derived from (seed, s, j), so draws are
// identical no matter how work is scheduled across threads.
constexpr std::uint64_t kSeriesTag = 0x5e;
constexpr std::uint64_t kLatentTag = 0x17;

template <typename Scalar>
Vector<Scalar> draw_latent_with_retries(const LmcConfig& cfg, std::uint64_t seed,
                                        std::int64_t series_index, int latent_index) {
  RngStream rng = RngStream::derive(
      seed, {kLatentTag, static_cast<std::uint64_t>(series_index),
             static_cast<std::uint64_t>(latent_index)});
  for (int attempt = 0;; ++attempt) {
    KernelExpr expr =
        sample_kernel_expr(rng, cfg.max_compositions, cfg.length, cfg.bank);
    try {
      return sample_latent<Scalar>(expr, cfg.length, rng).values;
    } catch (const FactorizationFailed&) {
      if (attempt >= 4) throw;
    }
  }
}

}  // namespace detail

// Algorithm: draw L and the Dirichlet concentration, then L latent GP
// realizations, then one convex mixing row per channel; channel i is
// sum_j w[i][j] * latent_j. Independent mode short-circuits to channel i =
// latent i with L = N.
template <typename Scalar>
SeriesBlock<Scalar> generate_series(const LmcConfig& cfg, std::uint64_t seed,
                                    std::int64_t series_index) {
  const int N = cfg.variates;
  const Index T = cfg.length;
  SeriesBlock<Scalar> block;
  block.global_seed = seed;
  block.series_index = series_index;

  RngStream series_rng = RngStream::derive(
      seed, {detail::kSeriesTag, static_cast<std::uint64_t>(series_index)});

  if (cfg.independent_mode) {
    block.mode = SeriesMode::Independent;
    block.num_latents = N;
    block.latents.resize(T, N);
    for (int j = 0; j < N; ++j)
      block.latents.col(j) =
          detail::draw_latent_with_retries<Scalar>(cfg, seed, series_index, j);
    block.values = block.latents;
    return block;
  }

  block.mode = SeriesMode::Correlated;
  const int L = draw_latent_count(cfg, series_rng);
  const double d = series_rng.uniform(cfg.dirichlet_min, cfg.dirichlet_max);
  block.num_latents = L;
  block.latents.resize(T, L);
  for (int j = 0; j < L; ++j)
    block.latents.col(j) =
        detail::draw_latent_with_retries<Scalar>(cfg, seed, series_index, j);
  block.mixing_weights.resize(N, L);
  for (int i = 0; i < N; ++i)
    block.mixing_weights.row(i) =
        draw_mixing_row(d, L, series_rng).transpose().template cast<Scalar>();
  block.values.noalias() = block.latents * block.mixing_weights.transpose();
  return block;
}

// Emits count_correlated correlated blocks followed by
// round(independent_ratio * count_correlated) independent ones, in series
// index order regardless of worker count. Generation fans out in chunks;
// the sink always runs on the calling thread in index order.
template <typename Scalar>
std::int64_t generate_corpus(
    const LmcConfig& base_cfg, std::int64_t count_correlated,
    double independent_ratio, std::uint64_t global_seed, int workers,
    const std::function<void(SeriesBlock<Scalar>&&)>& sink) {
  if (count_correlated < 0) throw Error("generate_corpus: negative count");
  if (independent_ratio < 0 || independent_ratio > 1)
    throw Error("generate_corpus: independent_ratio must be in [0,1]");
  LmcConfig cfg = base_cfg;
  cfg.validate();
  const auto count_independent = static_cast<std::int64_t>(
      std::llround(independent_ratio * static_cast<double>(count_correlated)));
  const std::int64_t total = count_correlated + count_independent;

  const std::int64_t chunk = std::max<std::int64_t>(std::max(workers, 1) * 4, 16);
  std::vector<SeriesBlock<Scalar>> buffer;
  for (std::int64_t begin = 0; begin < total; begin += chunk) {
    const std::int64_t end = std::min(begin + chunk, total);
    buffer.resize(end - begin);
    parallel_for(static_cast<std::size_t>(end - begin), workers, [&](std::size_t k) {
      const std::int64_t idx = begin + static_cast<std::int64_t>(k);
      LmcConfig series_cfg = cfg;
      series_cfg.independent_mode = idx >= count_correlated;
      buffer[k] = generate_series<Scalar>(series_cfg, global_seed, idx);
    });
    for (auto& block : buffer) sink(std::move(block));
  }
  return total;
}

}  // namespace timepfn
