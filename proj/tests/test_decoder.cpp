#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "test_util.hpp"
#include "tqd/decoder.hpp"
#include "tqd/errors.hpp"
#include "tqd/grad_check.hpp"
#include "tqd/losses.hpp"
#include "tqd/metrics.hpp"

using namespace tqd;
using tqd::testing::Dense;
using tqd::testing::gaussian_tensor;
using tqd::testing::probe;
using tqd::testing::random_tensor;
using tqd::testing::to_dense;

namespace {

Tensor identity(std::size_t d) {
  Tensor t = Tensor::zeros({d, d}, true);
  for (std::size_t i = 0; i < d; ++i) t.mutable_data()[i * d + i] = 1.0;
  return t;
}

AttentionParams identity_attention(std::size_t d) {
  AttentionParams p;
  p.wq = identity(d);
  p.wk = identity(d);
  p.wv = identity(d);
  p.wo = identity(d);
  p.bq = p.bk = p.bv = p.bo = Tensor::zeros({d}, true);
  return p;
}

DecoderLayerParams identity_layer(std::size_t d) {
  DecoderLayerParams p;
  p.self_attn = identity_attention(d);
  p.cross_attn = identity_attention(d);
  p.ff1_w = Tensor::zeros({d, 2 * d}, true);
  p.ff1_b = Tensor::zeros({2 * d}, true);
  p.ff2_w = Tensor::zeros({2 * d, d}, true);
  p.ff2_b = Tensor::zeros({d}, true);
  p.ln1_g = p.ln2_g = p.ln3_g = Tensor::full({d}, 1.0, true);
  p.ln1_b = p.ln2_b = p.ln3_b = Tensor::zeros({d}, true);
  return p;
}

// softmax(q k^T / sqrt(dh)) v per head on column blocks, heads concatenated.
Dense dense_attention(const Dense& q, const Dense& k, const Dense& v, std::size_t heads) {
  const std::size_t d = q[0].size(), dh = d / heads;
  Dense out(q.size(), std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      std::vector<double> s(k.size());
      for (std::size_t j = 0; j < k.size(); ++j) {
        double dot = 0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(double(dh));
      }
      const double m = *std::max_element(s.begin(), s.end());
      double z = 0;
      for (double& x : s) z += (x = std::exp(x - m));
      for (std::size_t j = 0; j < k.size(); ++j)
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) out[i][c] += s[j] / z * v[j][c];
    }
  }
  return out;
}

Dense dense_add(Dense a, const Dense& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

Dense dense_ln(Dense a) {
  for (auto& row : a) {
    const double mu = std::accumulate(row.begin(), row.end(), 0.0) / row.size();
    double var = 0;
    for (double x : row) var += (x - mu) * (x - mu);
    var /= row.size();
    for (double& x : row) x = (x - mu) / std::sqrt(var + 1e-5);
  }
  return a;
}

QueryBank bank_with(const QueryBank& base, const Tensor& embeddings) {
  QueryBank b = base;
  b.embeddings = embeddings;
  return b;
}

}  // namespace

TEST_CASE("init_queries variance and determinism") {
  const QueryBank five = init_queries(64, 64, 5.0, 42);
  double mean = 0, sq = 0;
  for (double v : five.embeddings.data()) mean += v;
  mean /= 4096.0;
  for (double v : five.embeddings.data()) sq += (v - mean) * (v - mean);
  const double var = sq / 4095.0;
  CHECK(std::abs(var - 5.0) < 0.5);
  CHECK(std::abs(mean) < 0.1);

  const QueryBank one = init_queries(64, 64, 1.0, 43);
  double sq1 = 0;
  for (double v : one.embeddings.data()) sq1 += v * v;
  CHECK(std::abs(sq1 / 4096.0 - 1.0) < 0.1);

  const QueryBank again = init_queries(64, 64, 5.0, 42);
  CHECK(again.embeddings.to_vector() == five.embeddings.to_vector());
  CHECK(five.embeddings.requires_grad());
  CHECK_FALSE(five.pos_encoding.requires_grad());

  CHECK_THROWS_AS(init_queries(4, 8, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(init_queries(4, 8, -1.0, 1), ConfigError);

  const QueryBank learned = init_queries(4, 8, 1.0, 1, PeKind::kLearned);
  CHECK(learned.pos_encoding.requires_grad());
}

TEST_CASE("sinusoidal_pe") {
  const Tensor pe = sinusoidal_pe(4, 8);
  for (std::size_t j = 0; j < 8; ++j) CHECK(pe(0, j) == (j % 2 == 0 ? 0.0 : 1.0));
  for (double v : sinusoidal_pe(50, 16).data()) CHECK(std::abs(v) <= 1.0);

  // Written from the formula with a different loop structure.
  for (std::size_t p = 0; p < 4; ++p) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double expo = double(j - j % 2) / 8.0;
      const double arg = double(p) * std::exp(-expo * std::log(10000.0));
      const double ref = j % 2 == 0 ? std::sin(arg) : std::cos(arg);
      CHECK(std::abs(pe(p, j) - ref) < 1e-12);
    }
  }
  CHECK_THROWS_AS(sinusoidal_pe(4, 7), ConfigError);
  CHECK(sinusoidal_pe(3, 6).to_vector() == sinusoidal_pe(3, 6).to_vector());
}

TEST_CASE("multi_head_attention small cases") {
  std::mt19937_64 rng(5);
  const AttentionParams params = AttentionParams::init(8, rng);

  const auto single = multi_head_attention(random_tensor({3, 8}, rng), random_tensor({1, 8}, rng),
                                           params, 4);
  for (std::size_t i = 0; i < 3; ++i) CHECK(single.weights(i, 0) == doctest::Approx(1.0));

  const Tensor row = random_tensor({1, 8}, rng);
  const Tensor same = concat({row, row, row}, 0);
  const auto out = multi_head_attention(same, random_tensor({5, 8}, rng), params, 2);
  for (std::size_t i = 1; i < 3; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(out.output(i, j) == out.output(0, j));

  CHECK_THROWS_AS(multi_head_attention(same, random_tensor({5, 8}, rng), params, 3),
                  DimensionError);
  CHECK_THROWS_AS(multi_head_attention(same, random_tensor({5, 6}, rng), params, 2),
                  DimensionError);
}

TEST_CASE("multi_head_attention with identity projections matches dense oracle") {
  std::mt19937_64 rng(9);
  const Tensor q = random_tensor({2, 4}, rng);
  const Tensor kv = random_tensor({3, 4}, rng);
  const auto res = multi_head_attention(q, kv, identity_attention(4), 1);
  const Dense expect = dense_attention(to_dense(q), to_dense(kv), to_dense(kv), 1);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(res.output(i, j) - expect[i][j]) < 1e-12);
}

TEST_CASE("single identity layer matches dense forward oracle") {
  const std::size_t k = 3, d = 4, l = 5;
  std::mt19937_64 rng(17);
  QueryBank bank = init_queries(k, d, 1.0, 3);
  const Tensor memory = random_tensor({l, d}, rng);
  const std::vector<DecoderLayerParams> layers{identity_layer(d)};
  DecoderOptions opts;
  opts.heads = 2;
  opts.dropout = 0.0;
  const auto out = decoder_forward(bank, memory, layers, opts, true, 1);

  const Dense x0 = to_dense(bank.embeddings), pe = to_dense(bank.pos_encoding);
  const Dense mem = to_dense(memory);
  const Dense q0 = dense_add(x0, pe);
  const Dense x1 = dense_ln(dense_add(x0, dense_attention(q0, q0, x0, 2)));
  const Dense x2 = dense_ln(dense_add(x1, dense_attention(dense_add(x1, pe), mem, mem, 2)));
  const Dense x3 = dense_ln(x2);  // zero feed-forward

  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) CHECK(std::abs(out.features(i, j) - x3[i][j]) < 1e-10);
}

TEST_CASE("decoder forward contracts") {
  std::mt19937_64 rng(1);
  const QueryBank bank = init_queries(8, 16, 5.0, 2);
  std::vector<DecoderLayerParams> layers;
  for (int n = 0; n < 2; ++n) layers.push_back(DecoderLayerParams::init(16, 32, rng));
  const Tensor memory = random_tensor({6, 16}, rng);
  DecoderOptions opts;

  const auto a = decoder_forward(bank, memory, layers, opts, false, 1);
  const auto b = decoder_forward(bank, memory, layers, opts, false, 99);
  CHECK(a.features.to_vector() == b.features.to_vector());
  CHECK(a.trace.layers() == 2);
  CHECK(a.trace.cross_out.size() == 2);
  CHECK(a.trace.self_weights.size() == 2);
  CHECK(a.trace.cross_weights.size() == 2);

  // Dropout only in training mode, reproducible per seed.
  const auto t1 = decoder_forward(bank, memory, layers, opts, true, 7);
  const auto t2 = decoder_forward(bank, memory, layers, opts, true, 7);
  CHECK(t1.features.to_vector() == t2.features.to_vector());
  CHECK(t1.features.to_vector() != a.features.to_vector());

  for (const auto* list : {&a.trace.self_weights, &a.trace.cross_weights}) {
    for (const Tensor& w : *list) {
      for (std::size_t i = 0; i < w.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < w.cols(); ++j) {
          CHECK(w(i, j) >= 0.0);
          s += w(i, j);
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
  CHECK(a.trace.cross_weights[0].cols() == 6);

  CHECK_THROWS_AS(decoder_forward(bank, Tensor::zeros({0, 16}), layers, opts, false, 1), DataError);
  CHECK_THROWS_AS(decoder_forward(bank, random_tensor({6, 8}, rng), layers, opts, false, 1),
                  DimensionError);
  CHECK_THROWS_AS(decoder_forward(bank, memory, std::span<const DecoderLayerParams>{}, opts,
                                  false, 1),
                  ConfigError);
}

TEST_CASE("permuting memory rows permutes cross weights and keeps output") {
  std::mt19937_64 rng(4);
  const QueryBank bank = init_queries(4, 8, 5.0, 8);
  std::vector<DecoderLayerParams> layers;
  for (int n = 0; n < 2; ++n) layers.push_back(DecoderLayerParams::init(8, 16, rng));
  const Tensor memory = random_tensor({5, 8}, rng);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<Tensor> rows;
  for (std::size_t p : perm) rows.push_back(slice(memory, 0, p, p + 1));
  const Tensor permuted = concat(rows, 0);

  DecoderOptions opts;
  opts.heads = 2;
  const auto a = decoder_forward(bank, memory, layers, opts, false, 0);
  const auto b = decoder_forward(bank, permuted, layers, opts, false, 0);
  for (std::size_t i = 0; i < a.features.size(); ++i)
    CHECK(std::abs(a.features(i) - b.features(i)) < 1e-12);
  for (std::size_t n = 0; n < 2; ++n) {
    const Tensor& wa = a.trace.cross_weights[n];
    const Tensor& wb = b.trace.cross_weights[n];
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(wb(i, j) - wa(i, perm[j])) < 1e-12);
  }
}

TEST_CASE("scaling gaussian queries raises gram-softmax diagonality") {
  const std::vector<double> scales{1.0, 1.5, 2.0, 3.0};
  std::vector<double> avg(scales.size(), 0.0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor q = gaussian_tensor({8, 16}, rng, 0.3);
    for (std::size_t s = 0; s < scales.size(); ++s) {
      avg[s] += diagonality(gram_softmax(scale(q, scales[s]))) / 100.0;
    }
  }
  for (std::size_t s = 1; s < scales.size(); ++s) CHECK(avg[s] > avg[s - 1]);
}

TEST_CASE("decoder output gradient wrt query embeddings") {
  std::mt19937_64 rng(12);
  const QueryBank bank = init_queries(3, 8, 5.0, 21);
  std::vector<DecoderLayerParams> layers;
  for (int n = 0; n < 2; ++n) layers.push_back(DecoderLayerParams::init(8, 16, rng));
  const Tensor memory = random_tensor({4, 8}, rng);
  DecoderOptions opts;
  opts.heads = 2;
  Tensor x = bank.embeddings.detach();
  x = Tensor::from(x.shape(), x.to_vector(), true);
  for (bool training : {false, true}) {
    const auto r = grad_check(
        [&](const Tensor& v) {
          return probe(decoder_forward(bank_with(bank, v), memory, layers, opts, training, 5)
                           .features,
                       77);
        },
        x, 1e-5, 1e-4);
    CHECK(r.passed);
  }
}
