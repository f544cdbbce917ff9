#ifndef VERISIEVE_IO_HPP
#define VERISIEVE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "verisieve/candidate.hpp"
#include "verisieve/embedder.hpp"
#include "verisieve/embedding.hpp"
#include "verisieve/gallery.hpp"

namespace verisieve::io {

using json = nlohmann::json;

inline constexpr int kGalleryVersion = 1;
inline constexpr int kCheckpointVersion = 1;

// EMB1 layout, all integers little-endian:
//   bytes 0-3   magic "EMB1"
//   byte  4     flags: 0 = no ids, 1 = each row preceded by an id
//   bytes 5-8   dimension (u32)
//   bytes 9-16  count (u64)
//   rows        [u32 id length, UTF-8 id bytes]? then dimension IEEE-754 f32 values
inline constexpr std::string_view kEmbeddingMagic = "EMB1";
inline constexpr std::size_t kEmbeddingHeaderSize = 17;

enum class EmbeddingFormat { Binary, Csv };

/// ".emb" and ".bin" are binary; anything else is CSV.
EmbeddingFormat format_for_path(const std::filesystem::path& path);

struct ImportOptions {
  bool normalize_on_ingest = true;
};

std::string encode_embeddings_binary(const std::vector<LabeledEmbedding>& rows, bool with_ids);
std::vector<LabeledEmbedding> decode_embeddings_binary(std::string_view bytes,
                                                       const ImportOptions& options = {});

std::string encode_embeddings_csv(const std::vector<LabeledEmbedding>& rows);
std::vector<LabeledEmbedding> decode_embeddings_csv(std::string_view text,
                                                    const ImportOptions& options = {});

std::vector<LabeledEmbedding> import_embeddings(const std::filesystem::path& path,
                                                EmbeddingFormat format,
                                                const ImportOptions& options = {});
std::vector<LabeledEmbedding> import_embeddings(const std::filesystem::path& path,
                                                const ImportOptions& options = {});

/// Binary export carries ids unless every id is empty.
void export_embeddings(const std::filesystem::path& path, const std::vector<LabeledEmbedding>& rows,
                       EmbeddingFormat format);

json gallery_to_json(const Gallery& gallery);
Gallery gallery_from_json(const json& doc);
void save_gallery(const Gallery& gallery, const std::filesystem::path& path);
Gallery load_gallery(const std::filesystem::path& path);

json checkpoint_to_json(const EmbedderModel<double>& model);
EmbedderModel<double> checkpoint_from_json(const json& doc);
void save_checkpoint(const EmbedderModel<double>& model, const std::filesystem::path& path);
EmbedderModel<double> load_checkpoint(const std::filesystem::path& path);

json covariance_to_json(const CovarianceModelD& model);
CovarianceModelD covariance_from_json(const json& doc);

json evaluation_to_json(const CandidateEvaluation& e);
CandidateEvaluation evaluation_from_json(const json& doc);
json evaluations_to_json(const std::vector<CandidateEvaluation>& rows);
std::vector<CandidateEvaluation> evaluations_from_json(const json& doc);

json decision_to_json(const VerificationDecision& d, bool include_distance = true);

json vector_to_json(const Vector& v);
/// Throws MalformedDocument for non-arrays or non-numeric entries.
Vector vector_from_json(const json& doc);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace verisieve::io

#endif  // VERISIEVE_IO_HPP
