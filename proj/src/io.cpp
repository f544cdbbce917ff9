#include "verisieve/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace verisieve::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw Error(ErrorCode::TruncatedPayload, std::string("truncated embedding payload (") + what +
                                                   ": need " + std::to_string(n) + " bytes, have " +
                                                   std::to_string(remaining()) + ")");
    }
  }

  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    const auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void finish_row(Vector& v, const ImportOptions& options, std::size_t row) {
  if (!v.allFinite()) {
    throw Error(ErrorCode::NonFiniteValue, "non-finite value in embedding row " + std::to_string(row));
  }
  if (options.normalize_on_ingest) v = normalize(v);
}

std::string auto_id(std::size_t index, std::size_t count) {
  const std::size_t width = std::to_string(count > 0 ? count - 1 : 0).size();
  std::string s = std::to_string(index);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return s;
}

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::MalformedDocument, what);
}

template <typename Fn>
auto guarded(const char* what, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    malformed(std::string(what) + ": " + e.what());
  }
}

SquareMatrix<double> matrix_from_json(const json& rows, Eigen::Index expect_rows,
                                      Eigen::Index expect_cols) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != expect_rows) {
    malformed("matrix has wrong row count");
  }
  SquareMatrix<double> m(expect_rows, expect_cols);
  for (Eigen::Index i = 0; i < expect_rows; ++i) {
    const Vector row = vector_from_json(rows[static_cast<std::size_t>(i)]);
    if (row.size() != expect_cols) malformed("matrix has wrong column count");
    m.row(i) = row.transpose();
  }
  return m;
}

json matrix_to_json(const SquareMatrix<double>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

}  // namespace

EmbeddingFormat format_for_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".emb" || ext == ".bin" ? EmbeddingFormat::Binary : EmbeddingFormat::Csv;
}

std::string encode_embeddings_binary(const std::vector<LabeledEmbedding>& rows, bool with_ids) {
  const Eigen::Index d = rows.empty() ? 0 : rows.front().embedding.size();
  std::string out(kEmbeddingMagic);
  out.push_back(static_cast<char>(with_ids ? 1 : 0));
  put_u32(out, static_cast<std::uint32_t>(d));
  put_u64(out, rows.size());
  for (const auto& row : rows) {
    detail::require_same_dimension(row.embedding.size(), d, "export_embeddings");
    if (with_ids) {
      put_u32(out, static_cast<std::uint32_t>(row.id.size()));
      out += row.id;
    }
    for (Eigen::Index k = 0; k < d; ++k) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(row.embedding(k))));
    }
  }
  return out;
}

std::vector<LabeledEmbedding> decode_embeddings_binary(std::string_view bytes,
                                                       const ImportOptions& options) {
  ByteReader in(bytes);
  if (in.remaining() < kEmbeddingMagic.size() ||
      bytes.substr(0, kEmbeddingMagic.size()) != kEmbeddingMagic) {
    throw Error(ErrorCode::MagicMismatch, "not an EMB1 embedding file (magic mismatch)");
  }
  in.take(kEmbeddingMagic.size(), "magic");
  const auto flags = in.uint(1, "header");
  if (flags > 1) malformed("EMB1 flag byte must be 0 or 1");
  const bool with_ids = flags == 1;
  const auto d = static_cast<Eigen::Index>(in.uint(4, "header"));
  const std::uint64_t count = in.uint(8, "header");
  if (count > 0 && d == 0) malformed("EMB1 file has rows of dimension 0");

  if (!with_ids && in.remaining() / (4 * std::max<std::uint64_t>(d, 1)) < count) {
    in.need(count * 4 * static_cast<std::uint64_t>(d), "payload");
  }

  std::vector<LabeledEmbedding> rows;
  rows.reserve(with_ids ? 0 : count);
  for (std::uint64_t r = 0; r < count; ++r) {
    LabeledEmbedding row;
    if (with_ids) {
      const auto len = in.uint(4, "id length");
      row.id = std::string(in.take(len, "id"));
    } else {
      row.id = auto_id(r, count);
    }
    row.embedding.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      row.embedding(k) = std::bit_cast<float>(static_cast<std::uint32_t>(in.uint(4, "values")));
    }
    finish_row(row.embedding, options, r);
    rows.push_back(std::move(row));
  }
  if (in.remaining() != 0) {
    malformed("EMB1 payload has " + std::to_string(in.remaining()) + " trailing bytes");
  }
  return rows;
}

std::string encode_embeddings_csv(const std::vector<LabeledEmbedding>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.id;
    for (Eigen::Index k = 0; k < row.embedding.size(); ++k) {
      out += ',';
      out += format_double(row.embedding(k));
    }
    out += '\n';
  }
  return out;
}

std::vector<LabeledEmbedding> decode_embeddings_csv(std::string_view text,
                                                    const ImportOptions& options) {
  std::vector<std::pair<std::string, Vector>> parsed;
  std::vector<bool> explicit_id;
  Eigen::Index d = -1;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    const auto fields = split_commas(line);
    double probe = 0.0;
    if (line_no == 1 && (fields.size() < 2 || !parse_double(fields[1], probe))) continue;  // header
    if (fields.size() < 2) malformed("CSV line " + std::to_string(line_no) + " has no values");

    Vector v(static_cast<Eigen::Index>(fields.size() - 1));
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double value = 0.0;
      if (!parse_double(fields[k], value)) {
        malformed("CSV line " + std::to_string(line_no) + ": bad number '" +
                  std::string(fields[k]) + "'");
      }
      v(static_cast<Eigen::Index>(k - 1)) = value;
    }
    if (d < 0) d = v.size();
    if (v.size() != d) {
      throw Error(ErrorCode::InconsistentDimension,
                  "CSV line " + std::to_string(line_no) + " has dimension " +
                      std::to_string(v.size()) + ", expected " + std::to_string(d));
    }
    std::string id(fields[0]);
    while (!id.empty() && (id.back() == ' ' || id.back() == '\t')) id.pop_back();
    while (!id.empty() && (id.front() == ' ' || id.front() == '\t')) id.erase(0, 1);
    explicit_id.push_back(!id.empty());
    parsed.emplace_back(std::move(id), std::move(v));
  }

  std::vector<LabeledEmbedding> rows;
  rows.reserve(parsed.size());
  for (std::size_t r = 0; r < parsed.size(); ++r) {
    LabeledEmbedding row{explicit_id[r] ? std::move(parsed[r].first) : auto_id(r, parsed.size()),
                         std::move(parsed[r].second)};
    finish_row(row.embedding, options, r);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for reading");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "' for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error(ErrorCode::Io, "write to '" + path.string() + "' failed");
}

std::vector<LabeledEmbedding> import_embeddings(const std::filesystem::path& path,
                                                EmbeddingFormat format,
                                                const ImportOptions& options) {
  const std::string contents = read_file(path);
  return format == EmbeddingFormat::Binary ? decode_embeddings_binary(contents, options)
                                           : decode_embeddings_csv(contents, options);
}

std::vector<LabeledEmbedding> import_embeddings(const std::filesystem::path& path,
                                                const ImportOptions& options) {
  return import_embeddings(path, format_for_path(path), options);
}

void export_embeddings(const std::filesystem::path& path, const std::vector<LabeledEmbedding>& rows,
                       EmbeddingFormat format) {
  if (format == EmbeddingFormat::Binary) {
    const bool with_ids =
        std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.id.empty(); });
    write_file(path, encode_embeddings_binary(rows, with_ids));
  } else {
    write_file(path, encode_embeddings_csv(rows));
  }
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) arr.push_back(v(k));
  return arr;
}

Vector vector_from_json(const json& doc) {
  if (!doc.is_array()) malformed("expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(doc.size()));
  for (std::size_t k = 0; k < doc.size(); ++k) {
    if (!doc[k].is_number()) malformed("expected an array of numbers");
    v(static_cast<Eigen::Index>(k)) = doc[k].get<double>();
  }
  return v;
}

json gallery_to_json(const Gallery& gallery) {
  json records = json::array();
  for (const auto& r : gallery.records()) {
    json embeddings = json::array();
    for (const auto& e : r.embeddings) embeddings.push_back(vector_to_json(e));
    records.push_back({{"id", r.id}, {"embeddings", std::move(embeddings)},
                       {"enrolled_at", r.enrolled_at}});
  }
  return {{"version", kGalleryVersion},
          {"dimension", gallery.dimension()},
          {"threshold", gallery.threshold()},
          {"mode", std::string(to_string(gallery.mode()))},
          {"records", std::move(records)}};
}

Gallery gallery_from_json(const json& doc) {
  return guarded("gallery document", [&] {
    if (!doc.is_object()) malformed("gallery document must be an object");
    const int version = doc.at("version").get<int>();
    if (version != kGalleryVersion) {
      throw Error(ErrorCode::UnsupportedVersion,
                  "unsupported gallery version " + std::to_string(version));
    }
    Gallery g(doc.at("dimension").get<Eigen::Index>(), doc.at("threshold").get<double>(),
              parse_mode(doc.at("mode").get<std::string>()));
    for (const auto& r : doc.at("records")) {
      std::vector<Vector> embeddings;
      for (const auto& e : r.at("embeddings")) embeddings.push_back(vector_from_json(e));
      g.enroll(r.at("id").get<std::string>(), std::move(embeddings),
               r.at("enrolled_at").get<std::int64_t>());
    }
    return g;
  });
}

void save_gallery(const Gallery& gallery, const std::filesystem::path& path) {
  write_file(path, gallery_to_json(gallery).dump(2) + "\n");
}

Gallery load_gallery(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    malformed("gallery '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return gallery_from_json(doc);
}

json checkpoint_to_json(const EmbedderModel<double>& model) {
  return {{"version", kCheckpointVersion},
          {"kind", "embedder"},
          {"input_dim", model.input_dim()},
          {"hidden_dim", model.hidden_dim()},
          {"embedding_dim", model.embedding_dim()},
          {"W1", matrix_to_json(model.W1)},
          {"b1", vector_to_json(model.b1)},
          {"W2", matrix_to_json(model.W2)},
          {"b2", vector_to_json(model.b2)}};
}

EmbedderModel<double> checkpoint_from_json(const json& doc) {
  return guarded("checkpoint", [&] {
    if (doc.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::UnsupportedVersion, "unsupported checkpoint version");
    }
    if (doc.at("kind").get<std::string>() != "embedder") malformed("checkpoint kind is not embedder");
    const auto p = doc.at("input_dim").get<Eigen::Index>();
    const auto h = doc.at("hidden_dim").get<Eigen::Index>();
    const auto d = doc.at("embedding_dim").get<Eigen::Index>();
    EmbedderModel<double> m;
    m.W1 = matrix_from_json(doc.at("W1"), h, p);
    m.b1 = vector_from_json(doc.at("b1"));
    m.W2 = matrix_from_json(doc.at("W2"), d, h);
    m.b2 = vector_from_json(doc.at("b2"));
    if (m.b1.size() != h || m.b2.size() != d) malformed("checkpoint bias has wrong length");
    if (!m.all_finite()) throw Error(ErrorCode::NonFiniteValue, "checkpoint has non-finite weights");
    return m;
  });
}

void save_checkpoint(const EmbedderModel<double>& model, const std::filesystem::path& path) {
  write_file(path, checkpoint_to_json(model).dump() + "\n");
}

EmbedderModel<double> load_checkpoint(const std::filesystem::path& path) {
  return guarded("checkpoint", [&] { return checkpoint_from_json(json::parse(read_file(path))); });
}

json covariance_to_json(const CovarianceModelD& model) {
  return {{"dimension", model.dimension()},
          {"sample_count", model.sample_count()},
          {"ridge", model.ridge()},
          {"mean", vector_to_json(model.mean())},
          {"covariance", matrix_to_json(model.covariance())}};
}

CovarianceModelD covariance_from_json(const json& doc) {
  return guarded("covariance model", [&] {
    const auto d = doc.at("dimension").get<Eigen::Index>();
    return CovarianceModelD(vector_from_json(doc.at("mean")),
                            matrix_from_json(doc.at("covariance"), d, d),
                            doc.at("ridge").get<double>(), doc.at("sample_count").get<Eigen::Index>());
  });
}

json evaluation_to_json(const CandidateEvaluation& e) {
  json fn = json::array();
  for (const auto& [anchor, d] : e.fn_distances) fn.push_back({{"anchor", anchor}, {"distance", d}});
  json doc = {{"candidate_label", e.candidate_label},
              {"fn_distances", std::move(fn)},
              {"md", e.md},
              {"md_mean_pairwise", nullptr},
              {"passes_all_anchors", e.passes_all_anchors},
              {"passes_any_anchor", e.passes_any_anchor}};
  if (e.md_mean_pairwise) doc["md_mean_pairwise"] = *e.md_mean_pairwise;
  return doc;
}

CandidateEvaluation evaluation_from_json(const json& doc) {
  return guarded("evaluation record", [&] {
    CandidateEvaluation e;
    e.candidate_label = doc.at("candidate_label").get<std::string>();
    for (const auto& fn : doc.at("fn_distances")) {
      e.fn_distances.emplace_back(fn.at("anchor").get<std::string>(), fn.at("distance").get<double>());
    }
    e.md = doc.at("md").get<double>();
    if (doc.contains("md_mean_pairwise") && !doc["md_mean_pairwise"].is_null()) {
      e.md_mean_pairwise = doc["md_mean_pairwise"].get<double>();
    }
    e.passes_all_anchors = doc.at("passes_all_anchors").get<bool>();
    e.passes_any_anchor = doc.at("passes_any_anchor").get<bool>();
    return e;
  });
}

json evaluations_to_json(const std::vector<CandidateEvaluation>& rows) {
  json arr = json::array();
  for (const auto& e : rows) arr.push_back(evaluation_to_json(e));
  return arr;
}

std::vector<CandidateEvaluation> evaluations_from_json(const json& doc) {
  if (!doc.is_array()) malformed("evaluation records must be a JSON array");
  std::vector<CandidateEvaluation> rows;
  for (const auto& e : doc) rows.push_back(evaluation_from_json(e));
  return rows;
}

json decision_to_json(const VerificationDecision& d, bool include_distance) {
  json doc = {{"accepted", d.accepted},
              {"threshold", d.threshold_used},
              {"mode", std::string(to_string(d.mode))}};
  if (include_distance) doc["distance"] = d.distance;
  if (d.nearest_id && include_distance) doc["nearest_id"] = *d.nearest_id;
  return doc;
}

}  // namespace verisieve::io
