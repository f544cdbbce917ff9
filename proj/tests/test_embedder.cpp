#include <doctest.h>

#include "gradient_check.hpp"
#include "support.hpp"
#include "verisieve/embedder.hpp"

using namespace verisieve;
using verisieve::testing::Rng;

namespace {

/// Forward pass by explicit loops, independent of the Eigen expressions.
Vector oracle_embed(const EmbedderModel<double>& m, const Vector& x) {
  const Eigen::Index h = m.W1.rows(), p = m.W1.cols(), d = m.W2.rows();
  std::vector<long double> hidden(static_cast<std::size_t>(h));
  for (Eigen::Index i = 0; i < h; ++i) {
    long double s = m.b1(i);
    for (Eigen::Index j = 0; j < p; ++j) s += static_cast<long double>(m.W1(i, j)) * x(j);
    hidden[i] = s > 0 ? s : 0;
  }
  std::vector<long double> out(static_cast<std::size_t>(d));
  long double norm2 = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    long double s = m.b2(i);
    for (Eigen::Index j = 0; j < h; ++j) s += static_cast<long double>(m.W2(i, j)) * hidden[j];
    out[i] = s;
    norm2 += s * s;
  }
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = static_cast<double>(out[i] / std::sqrt(norm2));
  return v;
}

}  // namespace

TEST_CASE("embed closed forms and oracle") {
  SUBCASE("zero weights give normalize(b2)") {
    auto m = EmbedderModel<double>::zeros(6, 5, 4);
    m.b2 << 3.0, 0.0, 4.0, 0.0;
    const Vector out = embed(m, Vector::Ones(6));
    CHECK(out(0) == doctest::Approx(0.6));
    CHECK(out(2) == doctest::Approx(0.8));
  }
  SUBCASE("identity-like weights pass nonnegative input through") {
    auto m = EmbedderModel<double>::zeros(5, 5, 5);
    m.W1.setIdentity();
    m.W2.setIdentity();
    m.W2 *= 2.0;
    const Vector x = (Vector(5) << 0.5, 0.0, 1.5, 2.0, 0.1).finished();
    CHECK((embed(m, x) - normalize(Vector(m.W2 * m.W1 * x))).cwiseAbs().maxCoeff() <= 1e-15);
  }
  SUBCASE("seeded model matches the loop oracle") {
    Rng rng(11);
    const auto m = init_embedder<double>(32, 64, 128, 5);
    for (int i = 0; i < 20; ++i) {
      const Vector x = rng.gaussian(32);
      const Vector out = embed(m, x);
      CHECK((out - oracle_embed(m, x)).cwiseAbs().maxCoeff() <= 1e-10);
      CHECK(std::abs(out.norm() - 1.0) <= 1e-9);
    }
  }
  SUBCASE("zero pre-normalization output is an error") {
    const auto m = EmbedderModel<double>::zeros(3, 2, 2);
    CHECK_THROWS_AS(embed(m, Vector::Ones(3)), Error);
  }
}

TEST_CASE("triplet_loss closed forms") {
  Rng rng(12);
  const auto m = init_embedder<double>(8, 6, 4, 3);

  SUBCASE("coinciding triplets cost m * margin") {
    TripletBatch<double> batch;
    batch.margin = 0.3;
    for (int i = 0; i < 7; ++i) {
      const Vector x = rng.gaussian(8);
      batch.anchors.push_back(x);
      batch.positives.push_back(x);
      batch.negatives.push_back(x);
    }
    CHECK(triplet_loss(m, batch) == doctest::Approx(7 * 0.3).epsilon(1e-14));
  }
  SUBCASE("hinge floor") {
    auto sep = EmbedderModel<double>::zeros(2, 2, 2);
    sep.W1.setIdentity();
    sep.W2.setIdentity();
    TripletBatch<double> batch;
    batch.margin = 0.2;
    batch.anchors = {Vector::Unit(2, 0)};
    batch.positives = {Vector::Unit(2, 0)};
    batch.negatives = {Vector::Unit(2, 1)};  // squared distance 2 >= margin
    CHECK(triplet_loss(sep, batch) == 0.0);
    const auto g = triplet_loss_gradient(sep, batch);
    CHECK(g.W1.isZero(0.0));
    CHECK(g.W2.isZero(0.0));
    CHECK(g.b1.isZero(0.0));
    CHECK(g.b2.isZero(0.0));
  }
  SUBCASE("per-term recomputation oracle") {
    TripletBatch<double> batch;
    batch.margin = 0.8;
    for (int i = 0; i < 8; ++i) {
      batch.anchors.push_back(rng.gaussian(8));
      batch.positives.push_back(rng.gaussian(8));
      batch.negatives.push_back(rng.gaussian(8));
    }
    long double expect = 0;
    for (int i = 0; i < 8; ++i) {
      const Vector a = oracle_embed(m, batch.anchors[i]);
      const Vector p = oracle_embed(m, batch.positives[i]);
      const Vector n = oracle_embed(m, batch.negatives[i]);
      const long double dp = testing::oracle_distance(a, p), dn = testing::oracle_distance(a, n);
      expect += std::max(0.0L, dp * dp - dn * dn + batch.margin);
    }
    CHECK(std::abs(triplet_loss(m, batch) - expect) <= 1e-10);
    CHECK(triplet_loss(m, batch) >= 0.0);
  }
  SUBCASE("invalid batches") {
    TripletBatch<double> empty;
    CHECK_THROWS_AS(triplet_loss(m, empty), Error);
    TripletBatch<double> ragged;
    ragged.anchors = {Vector::Zero(8)};
    CHECK_THROWS_AS(triplet_loss(m, ragged), Error);
  }
}

TEST_CASE("analytic gradient matches central finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    CAPTURE(seed);
    const auto fixture = testing::make_gradient_fixture(seed);
    const auto report = testing::check_gradient(fixture);
    for (const auto& block : report.blocks) {
      CAPTURE(block.name);
      CHECK(block.checked > 0);
      CHECK(block.worst_relative_error < 1e-4);
    }
  }
}

TEST_CASE("gradient is linear in the batch sum") {
  const auto f = testing::make_gradient_fixture(99);
  auto doubled = f.batch;
  doubled.anchors.insert(doubled.anchors.end(), f.batch.anchors.begin(), f.batch.anchors.end());
  doubled.positives.insert(doubled.positives.end(), f.batch.positives.begin(), f.batch.positives.end());
  doubled.negatives.insert(doubled.negatives.end(), f.batch.negatives.begin(), f.batch.negatives.end());
  const auto once = triplet_loss_gradient(f.model, f.batch);
  const auto twice = triplet_loss_gradient(f.model, doubled);
  // doubling is exact in binary floating point, but the second half is
  // accumulated onto the first half's partial sums, so allow rounding
  CHECK((twice.W1 - 2.0 * once.W1).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((twice.b1 - 2.0 * once.b1).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((twice.W2 - 2.0 * once.W2).cwiseAbs().maxCoeff() <= 1e-14);
  CHECK((twice.b2 - 2.0 * once.b2).cwiseAbs().maxCoeff() <= 1e-14);
}

TEST_CASE("synthetic identities") {
  SyntheticIdentitySpec spec;
  spec.num_identities = 10;
  spec.samples_per_identity = 20;
  spec.input_dim = 32;
  spec.intra_noise = 0.05;
  spec.seed = 2024;

  SUBCASE("deterministic") {
    const auto a = generate_synthetic_identities<double>(spec);
    const auto b = generate_synthetic_identities<double>(spec);
    REQUIRE(a.size() == 200);
    CHECK(a.labels == b.labels);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.inputs[i] == b.inputs[i]);
  }
  SUBCASE("zero noise collapses each identity") {
    spec.intra_noise = 0.0;
    const auto data = generate_synthetic_identities<double>(spec);
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(data.inputs[i] == data.centroids[data.labels[i]]);
  }
  SUBCASE("sample means sit within 3 sigma / sqrt(n) of the centroid") {
    const auto data = generate_synthetic_identities<double>(spec);
    const double bound = 3.0 * spec.intra_noise / std::sqrt(20.0);
    std::size_t outside = 0, total = 0;
    for (int id = 0; id < spec.num_identities; ++id) {
      CHECK(std::abs(data.centroids[id].norm() - 1.0) <= 1e-12);
      Vector mean = Vector::Zero(32);
      for (std::size_t i = 0; i < data.size(); ++i)
        if (data.labels[i] == id) mean += data.inputs[i];
      mean /= 20.0;
      const Vector dev = (mean - data.centroids[id]).cwiseAbs();
      outside += static_cast<std::size_t>((dev.array() > bound).count());
      total += 32;
    }
    // a 3-sigma band misses about 0.27% of coordinates; 320 coordinates here
    CHECK(outside <= 3);
  }
  SUBCASE("invalid specs") {
    spec.num_identities = 1;
    CHECK_THROWS_AS(generate_synthetic_identities<double>(spec), Error);
  }
}

TEST_CASE("train_embedder configuration and determinism") {
  SyntheticIdentitySpec spec;
  spec.num_identities = 4;
  spec.samples_per_identity = 6;
  spec.input_dim = 8;
  spec.seed = 3;
  const auto data = generate_synthetic_identities<double>(spec);
  TrainConfig config;
  config.epochs = 5;
  config.hidden_dim = 8;
  config.embedding_dim = 6;
  config.seed = 77;

  SUBCASE("zero learning rate leaves the initial parameters") {
    config.learning_rate = 0.0;
    const auto r = train_embedder(data, config);
    CHECK(r.model == init_embedder<double>(8, 8, 6, 77));
    CHECK(r.loss_history.size() == 5);
  }
  SUBCASE("bit-for-bit reproducible") {
    const auto a = train_embedder(data, config);
    const auto b = train_embedder(data, config);
    CHECK(a.loss_history == b.loss_history);
    CHECK(a.model == b.model);
  }
  SUBCASE("bad configs") {
    config.batch_size = 0;
    CHECK_THROWS_AS(train_embedder(data, config), Error);
    config.batch_size = 4;
    config.learning_rate = -0.1;
    CHECK_THROWS_AS(train_embedder(data, config), Error);
  }
  SUBCASE("needs two identities with two samples") {
    LabeledDataset<double> tiny;
    tiny.inputs = {Vector::Ones(8), Vector::Ones(8), Vector::Zero(8)};
    tiny.labels = {0, 0, 1};
    CHECK_THROWS_AS(train_embedder(tiny, config), Error);
  }
}

TEST_CASE("training separates the synthetic benchmark") {
  const auto split = testing::make_benchmark_split(2024);
  const auto result = train_embedder(split.train, testing::benchmark_config(2024));
  REQUIRE(result.loss_history.size() == 200);
  CHECK(result.loss_history.back() < result.loss_history.front());
  CHECK(result.model.all_finite());
  const auto rates = testing::separation(result.model, split.held_out);
  CHECK(rates.intra_below >= 0.95);
  CHECK(rates.inter_above >= 0.95);
}
