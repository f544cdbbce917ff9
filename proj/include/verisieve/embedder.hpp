#ifndef VERISIEVE_EMBEDDER_HPP
#define VERISIEVE_EMBEDDER_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "verisieve/embedding.hpp"

namespace verisieve {

/// One-hidden-layer embedder: f(x) = normalize(W2 * relu(W1 * x + b1) + b2).
/// The same layout doubles as the gradient bundle of the triplet loss.
template <typename Scalar>
struct EmbedderModel {
  using MatrixType = SquareMatrix<Scalar>;
  using VectorType = Embedding<Scalar>;

  MatrixType W1;  // hidden x input
  VectorType b1;
  MatrixType W2;  // embedding x hidden
  VectorType b2;

  Eigen::Index input_dim() const { return W1.cols(); }
  Eigen::Index hidden_dim() const { return W1.rows(); }
  Eigen::Index embedding_dim() const { return W2.rows(); }

  static EmbedderModel zeros(Eigen::Index input, Eigen::Index hidden, Eigen::Index embedding) {
    return {MatrixType::Zero(hidden, input), VectorType::Zero(hidden),
            MatrixType::Zero(embedding, hidden), VectorType::Zero(embedding)};
  }

  EmbedderModel& operator+=(const EmbedderModel& o) {
    W1 += o.W1;
    b1 += o.b1;
    W2 += o.W2;
    b2 += o.b2;
    return *this;
  }

  EmbedderModel& operator*=(Scalar s) {
    W1 *= s;
    b1 *= s;
    W2 *= s;
    b2 *= s;
    return *this;
  }

  bool all_finite() const {
    return W1.allFinite() && b1.allFinite() && W2.allFinite() && b2.allFinite();
  }

  friend bool operator==(const EmbedderModel& a, const EmbedderModel& b) {
    auto same = [](const auto& x, const auto& y) {
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return same(a.W1, b.W1) && same(a.b1, b.b1) && same(a.W2, b.W2) && same(a.b2, b.b2);
  }
};

template <typename Scalar>
using EmbedderGradient = EmbedderModel<Scalar>;

/// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer.
template <typename Scalar>
EmbedderModel<Scalar> init_embedder(Eigen::Index input, Eigen::Index hidden, Eigen::Index embedding,
                                    std::uint64_t seed) {
  if (input < 1 || hidden < 1 || embedding < 1) {
    throw Error(ErrorCode::InvalidArgument, "embedder dimensions must be >= 1");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0u};
  std::mt19937_64 rng(seq);
  auto fill = [&rng](auto& m, Eigen::Index fan_in) {
    const Scalar bound = Scalar(1) / std::sqrt(Scalar(fan_in));
    std::uniform_real_distribution<Scalar> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
  };
  auto model = EmbedderModel<Scalar>::zeros(input, hidden, embedding);
  fill(model.W1, input);
  fill(model.b1, input);
  fill(model.W2, hidden);
  fill(model.b2, hidden);
  return model;
}

namespace detail {

template <typename Scalar>
struct ForwardPass {
  Embedding<Scalar> pre_activation;  // W1 x + b1
  Embedding<Scalar> hidden;          // relu(pre_activation)
  Scalar raw_norm;                   // |W2 h + b2|
  Embedding<Scalar> output;          // normalized
};

template <typename Scalar>
ForwardPass<Scalar> forward(const EmbedderModel<Scalar>& model, const Embedding<Scalar>& input) {
  require_same_dimension(input.size(), model.input_dim(), "embed");
  if (!input.allFinite()) throw Error(ErrorCode::NonFiniteValue, "embed: non-finite input");
  ForwardPass<Scalar> f;
  f.pre_activation = model.W1 * input + model.b1;
  f.hidden = f.pre_activation.cwiseMax(Scalar(0));
  const Embedding<Scalar> raw = model.W2 * f.hidden + model.b2;
  f.raw_norm = raw.norm();
  f.output = normalize(raw);
  return f;
}

/// Accumulates d(loss)/d(params) given d(loss)/d(output) for one forward pass.
template <typename Scalar>
void backward(const EmbedderModel<Scalar>& model, const Embedding<Scalar>& input,
              const ForwardPass<Scalar>& f, const Embedding<Scalar>& grad_output,
              EmbedderGradient<Scalar>& grad) {
  // d normalize(y) / dy = (I - f f') / |y|
  const Embedding<Scalar> grad_raw =
      (grad_output - f.output * f.output.dot(grad_output)) / f.raw_norm;
  grad.W2.noalias() += grad_raw * f.hidden.transpose();
  grad.b2 += grad_raw;
  const Embedding<Scalar> grad_pre =
      (model.W2.transpose() * grad_raw).cwiseProduct(
          (f.pre_activation.array() > Scalar(0)).matrix().template cast<Scalar>());
  grad.W1.noalias() += grad_pre * input.transpose();
  grad.b1 += grad_pre;
}

}  // namespace detail

template <typename Scalar, typename Derived>
Embedding<Scalar> embed(const EmbedderModel<Scalar>& model, const Eigen::MatrixBase<Derived>& input) {
  return detail::forward(model, Embedding<Scalar>(input)).output;
}

template <typename Scalar>
struct TripletBatch {
  std::vector<Embedding<Scalar>> anchors;
  std::vector<Embedding<Scalar>> positives;
  std::vector<Embedding<Scalar>> negatives;
  Scalar margin = Scalar(0.2);

  std::size_t size() const { return anchors.size(); }

  void validate() const {
    if (anchors.empty()) throw Error(ErrorCode::InvalidArgument, "triplet batch is empty");
    if (positives.size() != anchors.size() || negatives.size() != anchors.size()) {
      throw Error(ErrorCode::InvalidArgument, "triplet batch lists differ in length");
    }
    if (!(margin > Scalar(0))) throw Error(ErrorCode::InvalidArgument, "margin must be positive");
  }
};

/// Loss and gradient from a single set of forward passes.
template <typename Scalar>
struct TripletObjective {
  Scalar loss = Scalar(0);
  EmbedderGradient<Scalar> gradient;
  std::size_t active_terms = 0;
};

/// J = sum_i max(0, |f(A)-f(P)|^2 - |f(A)-f(N)|^2 + margin). A term whose
/// hinge argument is exactly zero is inactive and contributes no gradient.
template <typename Scalar>
TripletObjective<Scalar> triplet_objective(const EmbedderModel<Scalar>& model,
                                           const TripletBatch<Scalar>& batch,
                                           bool with_gradient = true) {
  batch.validate();
  TripletObjective<Scalar> out;
  if (with_gradient) {
    out.gradient = EmbedderModel<Scalar>::zeros(model.input_dim(), model.hidden_dim(),
                                                model.embedding_dim());
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto fa = detail::forward(model, batch.anchors[i]);
    const auto fp = detail::forward(model, batch.positives[i]);
    const auto fn = detail::forward(model, batch.negatives[i]);
    const Scalar arg = (fa.output - fp.output).squaredNorm() -
                       (fa.output - fn.output).squaredNorm() + batch.margin;
    if (!(arg > Scalar(0))) continue;
    out.loss += arg;
    ++out.active_terms;
    if (!with_gradient) continue;
    const Embedding<Scalar> g_anchor = Scalar(2) * (fn.output - fp.output);
    const Embedding<Scalar> g_positive = Scalar(2) * (fp.output - fa.output);
    const Embedding<Scalar> g_negative = Scalar(2) * (fa.output - fn.output);
    detail::backward(model, batch.anchors[i], fa, g_anchor, out.gradient);
    detail::backward(model, batch.positives[i], fp, g_positive, out.gradient);
    detail::backward(model, batch.negatives[i], fn, g_negative, out.gradient);
  }
  return out;
}

template <typename Scalar>
Scalar triplet_loss(const EmbedderModel<Scalar>& model, const TripletBatch<Scalar>& batch) {
  return triplet_objective(model, batch, false).loss;
}

template <typename Scalar>
EmbedderGradient<Scalar> triplet_loss_gradient(const EmbedderModel<Scalar>& model,
                                               const TripletBatch<Scalar>& batch) {
  return triplet_objective(model, batch, true).gradient;
}

struct SyntheticIdentitySpec {
  int num_identities = 10;
  int samples_per_identity = 20;
  Eigen::Index input_dim = 32;
  double intra_noise = 0.05;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct LabeledDataset {
  std::vector<Embedding<Scalar>> inputs;
  std::vector<int> labels;
  /// Per-identity centroids; empty for datasets not produced by the generator.
  std::vector<Embedding<Scalar>> centroids;

  std::size_t size() const { return inputs.size(); }
};

/// Identity label as written to files: "id" followed by a zero-padded index.
inline std::string identity_label(int index) {
  std::string digits = std::to_string(index);
  if (digits.size() < 4) digits.insert(0, 4 - digits.size(), '0');
  return "id" + digits;
}

/// Each identity gets a seeded random unit centroid; its samples are the
/// centroid plus isotropic Gaussian noise. Output is grouped by identity.
template <typename Scalar>
LabeledDataset<Scalar> generate_synthetic_identities(const SyntheticIdentitySpec& spec) {
  if (spec.num_identities < 2 || spec.samples_per_identity < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "synthetic spec needs >= 2 identities and >= 2 samples per identity");
  }
  if (spec.input_dim < 1 || !(spec.intra_noise >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "synthetic spec has invalid dimension or noise");
  }
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed),
                    static_cast<std::uint32_t>(spec.seed >> 32), 7u};
  std::mt19937_64 rng(seq);
  std::normal_distribution<Scalar> gauss(Scalar(0), Scalar(1));
  auto draw = [&](Eigen::Index n) {
    Embedding<Scalar> v(n);
    for (Eigen::Index k = 0; k < n; ++k) v(k) = gauss(rng);
    return v;
  };

  LabeledDataset<Scalar> data;
  for (int id = 0; id < spec.num_identities; ++id) {
    Embedding<Scalar> c = draw(spec.input_dim);
    while (c.norm() == Scalar(0)) c = draw(spec.input_dim);
    data.centroids.push_back(c / c.norm());
  }
  const auto noise = static_cast<Scalar>(spec.intra_noise);
  for (int id = 0; id < spec.num_identities; ++id) {
    for (int s = 0; s < spec.samples_per_identity; ++s) {
      data.inputs.push_back(data.centroids[id] + noise * draw(spec.input_dim));
      data.labels.push_back(id);
    }
  }
  return data;
}

struct TrainConfig {
  int epochs = 200;
  double learning_rate = 0.05;
  int batch_size = 32;
  double margin = 0.2;
  Eigen::Index hidden_dim = 64;
  Eigen::Index embedding_dim = kDefaultDimension;
  std::uint64_t seed = 0;
};

template <typename Scalar>
struct TrainResult {
  EmbedderModel<Scalar> model;
  /// Mean per-triplet loss of each epoch, measured before each step.
  std::vector<Scalar> loss_history;
};

/// Plain gradient descent on uniformly drawn valid triplets. An epoch is
/// ceil(n / batch_size) steps; each step descends the batch-mean loss.
template <typename Scalar>
TrainResult<Scalar> train_embedder(const LabeledDataset<Scalar>& data, const TrainConfig& config) {
  if (config.batch_size < 1) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate)) {
    throw Error(ErrorCode::InvalidArgument, "learning_rate must be finite and >= 0");
  }
  if (config.epochs < 0) throw Error(ErrorCode::InvalidArgument, "epochs must be >= 0");
  if (data.inputs.size() != data.labels.size() || data.inputs.empty()) {
    throw Error(ErrorCode::InvalidArgument, "dataset inputs and labels differ in length");
  }

  // by_identity[k] lists sample indices of the k-th distinct label
  std::vector<int> distinct;
  for (int l : data.labels)
    if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
  std::vector<std::vector<std::size_t>> by_identity(distinct.size());
  for (std::size_t i = 0; i < data.labels.size(); ++i) {
    const auto k = std::find(distinct.begin(), distinct.end(), data.labels[i]) - distinct.begin();
    by_identity[static_cast<std::size_t>(k)].push_back(i);
  }
  std::size_t usable = 0;
  for (const auto& members : by_identity) usable += members.size() >= 2 ? 1 : 0;
  if (usable < 2) {
    throw Error(ErrorCode::InsufficientSamples,
                "training needs >= 2 identities with >= 2 samples each");
  }

  TrainResult<Scalar> result;
  result.model = init_embedder<Scalar>(data.inputs.front().size(), config.hidden_dim,
                                       config.embedding_dim, config.seed);
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                    static_cast<std::uint32_t>(config.seed >> 32), 1u};
  std::mt19937_64 rng(seq);
  auto pick = [&rng](std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  };

  const std::size_t steps =
      (data.size() + static_cast<std::size_t>(config.batch_size) - 1) / config.batch_size;
  const auto lr = static_cast<Scalar>(config.learning_rate);
  TripletBatch<Scalar> batch;
  batch.margin = static_cast<Scalar>(config.margin);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Scalar epoch_loss(0);
    std::size_t epoch_terms = 0;
    for (std::size_t step = 0; step < steps; ++step) {
      batch.anchors.clear();
      batch.positives.clear();
      batch.negatives.clear();
      for (int t = 0; t < config.batch_size; ++t) {
        std::size_t a_id = pick(by_identity.size());
        while (by_identity[a_id].size() < 2) a_id = pick(by_identity.size());
        const auto& members = by_identity[a_id];
        const std::size_t a = pick(members.size());
        std::size_t p = pick(members.size() - 1);
        if (p >= a) ++p;
        std::size_t n_id = pick(by_identity.size() - 1);
        if (n_id >= a_id) ++n_id;
        const auto& others = by_identity[n_id];
        batch.anchors.push_back(data.inputs[members[a]]);
        batch.positives.push_back(data.inputs[members[p]]);
        batch.negatives.push_back(data.inputs[others[pick(others.size())]]);
      }
      auto objective = triplet_objective(result.model, batch, true);
      epoch_loss += objective.loss;
      epoch_terms += batch.size();
      objective.gradient *= -lr / Scalar(batch.size());
      result.model += objective.gradient;
    }
    result.loss_history.push_back(epoch_loss / Scalar(epoch_terms));
  }
  return result;
}

}  // namespace verisieve

#endif  // VERISIEVE_EMBEDDER_HPP
