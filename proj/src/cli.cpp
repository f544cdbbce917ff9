#include "verisieve/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "verisieve/candidate.hpp"
#include "verisieve/embedder.hpp"
#include "verisieve/io.hpp"
#include "verisieve/service.hpp"

namespace verisieve {

namespace {

using io::json;

/// Bad flag values or combinations detected after parsing; exits with kExitUsage.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("not a number: '" + item + "'");
    }
  }
  return values;
}

struct GlobalOptions {
  std::string gallery;
  double threshold = kDefaultThreshold;
  std::string mode = "threshold";
  std::uint64_t seed = 0;
  std::string output;
  bool json = false;
  bool no_normalize = false;
};

class Cli {
 public:
  Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args);

 private:
  void build();

  io::ImportOptions import_options() const { return {!g_.no_normalize}; }
  bool threshold_given() const { return app_.count("--threshold") > 0; }
  bool mode_given() const { return app_.count("--mode") > 0; }

  std::string gallery_path() const {
    if (!g_.gallery.empty()) return g_.gallery;
    if (const char* env = std::getenv("VERISIEVE_GALLERY"); env && *env) return env;
    throw UsageError("no gallery: pass --gallery or set VERISIEVE_GALLERY");
  }

  Gallery open_gallery() const {
    Gallery g = io::load_gallery(gallery_path());
    if (threshold_given()) g.set_threshold(g_.threshold);
    if (mode_given()) g.set_mode(parse_mode(g_.mode));
    return g;
  }

  Vector probe() const {
    if (!vector_.empty()) {
      const auto values = parse_list(vector_);
      Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
      return g_.no_normalize ? v : normalize(v);
    }
    if (probe_path_.empty()) throw UsageError("give --probe or --vector");
    const auto rows = io::import_embeddings(probe_path_, import_options());
    if (rows.empty()) throw Error(ErrorCode::InvalidArgument, "probe file is empty");
    return rows.front().embedding;
  }

  std::vector<LabeledEmbedding> load(const std::string& path, bool normalize_rows = true) const {
    io::ImportOptions opts = import_options();
    opts.normalize_on_ingest = opts.normalize_on_ingest && normalize_rows;
    return io::import_embeddings(path, opts);
  }

  static std::vector<Vector> values_of(const std::vector<LabeledEmbedding>& rows) {
    std::vector<Vector> v;
    v.reserve(rows.size());
    for (const auto& r : rows) v.push_back(r.embedding);
    return v;
  }

  void emit_json(const json& doc) const { out_ << doc.dump(2) << '\n'; }

  int cmd_enroll();
  int cmd_verify();
  int cmd_scan();
  int cmd_reciprocal();
  int cmd_evaluate();
  int cmd_rank();
  int cmd_attack();
  int cmd_train();
  int cmd_synth();
  int cmd_covariance();
  int cmd_sweep();
  int cmd_serve();

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"verisieve: face-embedding verification and bypass evaluation", "verisieve"};
  GlobalOptions g_;

  std::string id_, input_, probe_path_, vector_;
  std::string anchors_, candidates_, reference_, genuine_, impostor_, thresholds_, model_path_;
  std::string bind_ = "127.0.0.1:8080";
  double ridge_ = 1e-3, slack_ = 0.05, step_ = 0.1, lr_ = 0.05, margin_ = 0.2, noise_ = 0.05;
  double sweep_from_ = 0.1, sweep_to_ = 1.5;
  int sweep_steps_ = 15, restarts_ = 8, max_iters_ = 500, epochs_ = 200, batch_ = 32;
  int identities_ = 10, samples_ = 20;
  Eigen::Index input_dim_ = 32, hidden_ = 64, dim_ = kDefaultDimension;
  bool squared_md_ = false, blackbox_ = false;
  std::map<const CLI::App*, int (Cli::*)()> handlers_;
};

void Cli::build() {
  app_.require_subcommand(1);
  app_.fallthrough();
  app_.add_option("--gallery", g_.gallery, "gallery JSON file (default: $VERISIEVE_GALLERY)");
  app_.add_option("--threshold", g_.threshold, "decision threshold")->check(CLI::PositiveNumber);
  app_.add_option("--mode", g_.mode, "verification mode")
      ->check(CLI::IsMember({"threshold", "exclusive"}));
  app_.add_option("--seed", g_.seed, "random seed");
  app_.add_option("--output", g_.output, "output path");
  app_.add_flag("--json", g_.json, "machine-readable output");
  app_.add_flag("--no-normalize", g_.no_normalize, "keep imported embeddings unnormalized");

  auto sub = [this](const char* name, const char* help, int (Cli::*fn)()) {
    CLI::App* s = app_.add_subcommand(name, help);
    handlers_[s] = fn;
    return s;
  };
  auto probe_opts = [this](CLI::App* s) {
    s->add_option("--probe", probe_path_, "probe embedding file (first row is used)");
    s->add_option("--vector", vector_, "probe as comma-separated values");
  };

  auto* enroll = sub("enroll", "enroll embeddings into a gallery", &Cli::cmd_enroll);
  enroll->add_option("--input", input_, "embedding file (.csv, .emb)")->required();
  enroll->add_option("--id", id_, "enroll every row under this id (default: per-row ids)");
  enroll->add_option("--dimension", dim_, "dimension of a newly created gallery");

  auto* verify = sub("verify", "verify a probe against a claimed identity", &Cli::cmd_verify);
  verify->add_option("--id", id_, "claimed identity")->required();
  probe_opts(verify);

  probe_opts(sub("scan", "list identities within the threshold of a probe", &Cli::cmd_scan));

  auto* reciprocal = sub("reciprocal", "forward scan plus reverse verification", &Cli::cmd_reciprocal);
  reciprocal->add_option("--id", id_, "user identity")->required();
  probe_opts(reciprocal);

  auto* evaluate = sub("evaluate", "FN/MD report for candidate embeddings", &Cli::cmd_evaluate);
  evaluate->add_option("--anchors", anchors_, "user anchor embeddings")->required();
  evaluate->add_option("--candidates", candidates_, "candidate embeddings")->required();
  evaluate->add_option("--reference", reference_, "user reference set for the covariance")
      ->required();
  evaluate->add_option("--ridge", ridge_, "ridge fraction");
  evaluate->add_flag("--squared-md", squared_md_, "report squared Mahalanobis distance");

  auto* rank = sub("rank", "filter and order evaluation records", &Cli::cmd_rank);
  rank->add_option("--input", input_, "evaluation records JSON")->required();

  auto* attack = sub("attack", "constrained embedding-space candidate search", &Cli::cmd_attack);
  attack->add_option("--anchors", anchors_, "user anchor embeddings")->required();
  attack->add_option("--reference", reference_, "user reference set")->required();
  attack->add_option("--ridge", ridge_, "ridge fraction");
  attack->add_option("--slack", slack_, "constraint slack below the threshold");
  attack->add_option("--restarts", restarts_, "number of seeded restarts");
  attack->add_option("--max-iters", max_iters_, "iterations per restart");
  attack->add_option("--step", step_, "initial ascent step");

  auto* train = sub("train", "train the embedder with triplet loss", &Cli::cmd_train);
  train->add_option("--input", input_, "labeled raw inputs (id = identity)")->required();
  train->add_option("--epochs", epochs_, "epochs");
  train->add_option("--lr", lr_, "learning rate");
  train->add_option("--batch-size", batch_, "triplets per step");
  train->add_option("--margin", margin_, "triplet margin");
  train->add_option("--hidden", hidden_, "hidden width");
  train->add_option("--dim", dim_, "embedding dimension");

  auto* synth = sub("synth", "generate a synthetic identity dataset", &Cli::cmd_synth);
  synth->add_option("--identities", identities_, "number of identities");
  synth->add_option("--samples", samples_, "samples per identity");
  synth->add_option("--input-dim", input_dim_, "raw input dimension");
  synth->add_option("--noise", noise_, "intra-identity noise sigma");
  synth->add_option("--model", model_path_, "embed samples through this checkpoint");

  auto* covariance = sub("covariance", "estimate a covariance model", &Cli::cmd_covariance);
  covariance->add_option("--input", input_, "reference embeddings")->required();
  covariance->add_option("--ridge", ridge_, "ridge fraction");

  auto* sweep = sub("sweep", "FAR/FRR over a threshold grid", &Cli::cmd_sweep);
  sweep->add_option("--genuine", genuine_, "genuine probes (id = claimed identity)")->required();
  sweep->add_option("--impostor", impostor_, "impostor probes (id = claimed identity)")->required();
  sweep->add_option("--thresholds", thresholds_, "comma-separated ascending thresholds");
  sweep->add_option("--from", sweep_from_, "grid start");
  sweep->add_option("--to", sweep_to_, "grid end");
  sweep->add_option("--steps", sweep_steps_, "grid points");

  auto* serve = sub("serve", "run the JSON verification service", &Cli::cmd_serve);
  serve->add_option("--bind", bind_, "host:port");
  serve->add_flag("--blackbox", blackbox_, "hide distances from /verify");
}

int Cli::run(const std::vector<std::string>& args) {
  build();
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app_.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out_ << app_.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err_ << "error: " << e.what() << "\n\n" << app_.help();
    return kExitUsage;
  }

  for (const auto& [sub, fn] : handlers_) {
    if (!sub->parsed()) continue;
    try {
      return (this->*fn)();
    } catch (const UsageError& e) {
      err_ << "error: " << e.what() << "\n\n" << sub->help();
      return kExitUsage;
    } catch (const Error& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitDomainError;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitDomainError;
    }
  }
  err_ << app_.help();
  return kExitUsage;
}

int Cli::cmd_enroll() {
  const auto rows = load(input_);
  const std::string path = g_.output.empty() ? gallery_path() : g_.output;
  const std::string source = g_.gallery.empty() ? gallery_path() : g_.gallery;

  std::optional<Gallery> gallery;
  if (std::filesystem::exists(source)) {
    gallery = open_gallery();
  } else {
    const Eigen::Index d = rows.empty() ? dim_ : rows.front().embedding.size();
    gallery.emplace(d, g_.threshold, parse_mode(g_.mode));
  }

  // group rows by identity, preserving first appearance
  std::vector<std::pair<std::string, std::vector<Vector>>> groups;
  for (const auto& r : rows) {
    const std::string& id = id_.empty() ? r.id : id_;
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == id; });
    if (it == groups.end()) {
      groups.emplace_back(id, std::vector<Vector>{});
      it = std::prev(groups.end());
    }
    it->second.push_back(r.embedding);
  }
  if (groups.empty()) throw Error(ErrorCode::EmptyEnrollment, "input has no embeddings");
  for (auto& [id, embeddings] : groups) gallery->enroll(id, std::move(embeddings));
  io::save_gallery(*gallery, path);

  if (g_.json) {
    emit_json({{"enrolled", groups.size()}, {"identities", gallery->size()}, {"gallery", path}});
  } else {
    out_ << "enrolled " << groups.size() << " identities; gallery now holds " << gallery->size()
         << '\n';
  }
  return kExitOk;
}

int Cli::cmd_verify() {
  const Gallery gallery = open_gallery();
  const auto decision = gallery.verify(id_, probe());
  if (g_.json) {
    emit_json(io::decision_to_json(decision));
  } else {
    out_ << (decision.accepted ? "ACCEPT " : "REJECT ") << fixed6(decision.distance) << '\n';
  }
  return kExitOk;
}

int Cli::cmd_scan() {
  const Gallery gallery = open_gallery();
  const auto hits = scan_gallery(gallery, probe());
  if (g_.json) {
    json arr = json::array();
    for (const auto& h : hits) arr.push_back({{"id", h.id}, {"distance", h.distance}});
    emit_json({{"hits", arr}});
  } else {
    for (const auto& h : hits) out_ << h.id << ' ' << fixed6(h.distance) << '\n';
  }
  return kExitOk;
}

int Cli::cmd_reciprocal() {
  const Gallery gallery = open_gallery();
  const auto hits = reciprocal_scan(gallery, id_, probe());
  if (g_.json) {
    json arr = json::array();
    for (const auto& h : hits) {
      arr.push_back({{"id", h.id},
                     {"forward_distance", h.forward_distance},
                     {"reverse_accepted", h.reverse_accepted}});
    }
    emit_json({{"hits", arr}});
  } else {
    for (const auto& h : hits) {
      out_ << h.id << ' ' << fixed6(h.forward_distance) << ' '
           << (h.reverse_accepted ? "ACCEPT" : "REJECT") << '\n';
    }
  }
  return kExitOk;
}

int Cli::cmd_evaluate() {
  const auto anchors = load(anchors_);
  const auto candidates = load(candidates_);
  const auto reference = values_of(load(reference_));
  const auto model = estimate_covariance(reference, ridge_);
  std::vector<CandidateEvaluation> rows;
  for (const auto& c : candidates) {
    rows.push_back(evaluate_candidate(c.id, c.embedding, anchors, model, g_.threshold, reference,
                                      {squared_md_}));
  }
  if (!g_.output.empty()) io::write_file(g_.output, io::evaluations_to_json(rows).dump(2) + "\n");
  if (g_.json) {
    emit_json(io::evaluations_to_json(rows));
  } else {
    out_ << render_evaluation_table(rows, g_.threshold);
  }
  return kExitOk;
}

int Cli::cmd_rank() {
  json doc;
  try {
    doc = json::parse(io::read_file(input_));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, std::string("evaluation records: ") + e.what());
  }
  const auto ranked = rank_candidates(io::evaluations_from_json(doc), g_.threshold);
  if (!g_.output.empty()) io::write_file(g_.output, io::evaluations_to_json(ranked).dump(2) + "\n");
  if (g_.json) {
    emit_json(io::evaluations_to_json(ranked));
  } else {
    out_ << render_evaluation_table(ranked, g_.threshold);
  }
  return kExitOk;
}

int Cli::cmd_attack() {
  const auto anchors = values_of(load(anchors_));
  const auto reference = values_of(load(reference_));
  AttackSearchProblem problem{anchors, estimate_covariance(reference, ridge_)};
  problem.tau = g_.threshold;
  problem.slack = slack_;
  problem.restarts = restarts_;
  problem.max_iters = max_iters_;
  problem.step_size = step_;
  problem.seed = g_.seed;
  const auto result = attack_search(problem);

  if (!g_.output.empty()) {
    io::export_embeddings(g_.output, {{"attack", result.embedding}}, io::format_for_path(g_.output));
  }
  if (g_.json) {
    emit_json({{"embedding", io::vector_to_json(result.embedding)},
               {"evaluation", io::evaluation_to_json(result.evaluation)},
               {"iterations_used", result.iterations_used},
               {"objective", result.objective},
               {"best_restart", result.best_restart}});
  } else {
    out_ << render_evaluation_table({result.evaluation}, g_.threshold);
    out_ << "iterations " << result.iterations_used << ", restart " << result.best_restart << '\n';
  }
  return kExitOk;
}

int Cli::cmd_train() {
  const auto rows = load(input_, false);
  LabeledDataset<double> data;
  std::vector<std::string> names;
  for (const auto& r : rows) {
    auto it = std::find(names.begin(), names.end(), r.id);
    if (it == names.end()) it = names.insert(names.end(), r.id);
    data.inputs.push_back(r.embedding);
    data.labels.push_back(static_cast<int>(it - names.begin()));
  }
  TrainConfig config;
  config.epochs = epochs_;
  config.learning_rate = lr_;
  config.batch_size = batch_;
  config.margin = margin_;
  config.hidden_dim = hidden_;
  config.embedding_dim = dim_;
  config.seed = g_.seed;
  const auto result = train_embedder(data, config);
  if (!g_.output.empty()) io::save_checkpoint(result.model, g_.output);

  if (g_.json) {
    emit_json({{"loss_history", result.loss_history}, {"checkpoint", g_.output}});
  } else {
    for (std::size_t e = 0; e < result.loss_history.size(); ++e) {
      out_ << "epoch " << (e + 1) << " loss " << fixed6(result.loss_history[e]) << '\n';
    }
  }
  return kExitOk;
}

int Cli::cmd_synth() {
  SyntheticIdentitySpec spec;
  spec.num_identities = identities_;
  spec.samples_per_identity = samples_;
  spec.input_dim = input_dim_;
  spec.intra_noise = noise_;
  spec.seed = g_.seed;
  const auto data = generate_synthetic_identities<double>(spec);

  std::optional<EmbedderModel<double>> model;
  if (!model_path_.empty()) model = io::load_checkpoint(model_path_);
  std::vector<LabeledEmbedding> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    rows.push_back({identity_label(data.labels[i]),
                    model ? embed(*model, data.inputs[i]) : data.inputs[i]});
  }
  if (g_.output.empty()) {
    out_ << io::encode_embeddings_csv(rows);
  } else {
    io::export_embeddings(g_.output, rows, io::format_for_path(g_.output));
    if (!g_.json) out_ << "wrote " << rows.size() << " rows to " << g_.output << '\n';
  }
  if (g_.json && !g_.output.empty()) emit_json({{"rows", rows.size()}, {"output", g_.output}});
  return kExitOk;
}

int Cli::cmd_covariance() {
  const auto samples = values_of(load(input_));
  const auto model = estimate_covariance(samples, ridge_);
  if (!g_.output.empty()) io::write_file(g_.output, io::covariance_to_json(model).dump() + "\n");
  if (g_.json) {
    emit_json(io::covariance_to_json(model));
  } else {
    const Eigen::SelfAdjointEigenSolver<Matrix> eig(model.covariance(), Eigen::EigenvaluesOnly);
    out_ << "samples " << model.sample_count() << ", dimension " << model.dimension() << ", ridge "
         << model.ridge() << ", eigenvalues [" << eig.eigenvalues().minCoeff() << ", "
         << eig.eigenvalues().maxCoeff() << "]\n";
  }
  return kExitOk;
}

int Cli::cmd_sweep() {
  const Gallery gallery = open_gallery();
  auto pairs = [this](const std::string& path) {
    std::vector<std::pair<Vector, std::string>> out;
    for (auto& r : load(path)) out.emplace_back(std::move(r.embedding), std::move(r.id));
    return out;
  };
  std::vector<double> grid;
  if (!thresholds_.empty()) {
    grid = parse_list(thresholds_);
  } else {
    if (sweep_steps_ < 2) throw UsageError("--steps must be >= 2");
    for (int i = 0; i < sweep_steps_; ++i) {
      grid.push_back(sweep_from_ + (sweep_to_ - sweep_from_) * i / (sweep_steps_ - 1));
    }
  }
  const auto curve = sweep_threshold(gallery, pairs(genuine_), pairs(impostor_), grid);
  if (g_.json) {
    json arr = json::array();
    for (const auto& p : curve) arr.push_back({{"threshold", p.threshold}, {"far", p.far}, {"frr", p.frr}});
    emit_json(arr);
  } else {
    out_ << "threshold FAR FRR\n";
    for (const auto& p : curve) {
      out_ << fixed6(p.threshold) << ' ' << fixed6(p.far) << ' ' << fixed6(p.frr) << '\n';
    }
  }
  return kExitOk;
}

int Cli::cmd_serve() {
  Gallery gallery = open_gallery();
  const auto colon = bind_.rfind(':');
  if (colon == std::string::npos) throw UsageError("--bind expects host:port");
  const std::string host = bind_.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(bind_.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--bind expects host:port");
  }
  VerificationService service(gallery, {blackbox_});
  out_ << "serving " << gallery.size() << " identities on " << bind_
       << (blackbox_ ? " (blackbox)" : "") << std::endl;
  if (!service.listen(host, port)) throw Error(ErrorCode::Io, "cannot bind " + bind_);
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Cli cli(out, err);
  return cli.run(args);
}

}  // namespace verisieve
