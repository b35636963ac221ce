#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "uiim/autodiff.hpp"
#include "uiim/corpus.hpp"
#include "uiim/rng.hpp"

namespace uiim {

/// Case-folded token inventory with PAD = 0 and UNK = 1.
class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocab();
  /// Tokens in first-occurrence order over the given conversations.
  static Vocab build(const Corpus& corpus);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  /// Index of the case-folded token, UNK when absent.
  std::size_t id(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  void add(const std::string& folded);
  std::vector<std::string> tokens_;
  std::map<std::string, std::size_t> index_;
};

std::string fold_case(const std::string& token);

/// Learnable |V| x d_w word vectors. Row PAD stays zero.
struct EmbeddingTable {
  Parameter table;

  std::size_t dim() const { return table.value.cols(); }
  std::size_t rows() const { return table.value.rows(); }
  /// Re-zeroes the PAD row of the values and its gradient.
  void freeze_pad();
};

/// Random table: every non-PAD row uniform in (-0.1, 0.1).
EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, Rng& rng);

/// Reads "token v1 ... vd" lines with an optional leading "count dim" header.
/// Vocabulary tokens found in the file copy its vector; the rest are drawn
/// uniform in (-0.1, 0.1). Throws CorpusError on unreadable files or lines of
/// inconsistent dimension.
EmbeddingTable load_pretrained_embeddings(const std::filesystem::path& path, const Vocab& vocab, Rng& rng);

/// l x d_w rows copied from the table. Throws ShapeError on out-of-range ids.
Tensor embed_words(const EmbeddingTable& table, const std::vector<std::size_t>& token_ids);

/// POS tag inventory; index 0 is the unknown tag.
class PosInventory {
 public:
  static constexpr std::size_t kUnknown = 0;
  static inline const std::string kUnknownTag = "<unk-pos>";

  PosInventory();
  /// Sorted tags seen in the corpus plus the unknown tag.
  static PosInventory build(const Corpus& corpus);
  static PosInventory from_tags(const std::vector<std::string>& tags);

  std::size_t size() const { return tags_.size(); }
  std::size_t id(const std::string& tag) const;
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  std::vector<std::string> tags_;
  std::map<std::string, std::size_t> index_;
};

/// l x d_p one-hot rows; unknown tags hit the unknown column.
Tensor pos_onehot(const PosInventory& inventory, const std::vector<std::string>& tags);

/// Punctuation presence flags followed by a one-hot utterance-length bucket.
struct StatisticsSchema {
  std::vector<std::string> punctuation{".", ",", "?", "!", "-", "...", "\"", ";"};
  std::size_t bucket_width = 5;
  std::size_t bucket_count = 4;  // last bucket is open-ended

  std::size_t dim() const { return punctuation.size() + bucket_count; }
  std::size_t bucket(std::size_t length) const;
};

std::vector<double> statistics_vector(const StatisticsSchema& schema, const std::vector<std::string>& tokens);

/// Index form of one utterance, ready for batched featurization on a tape.
/// Empty utterances become a single PAD token tagged unknown.
struct EncodedUtterance {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> pos_ids;
  std::vector<double> stats;
  std::size_t label = 0;

  std::size_t length() const { return token_ids.size(); }
};

struct EncodedConversation {
  std::string id;
  std::vector<EncodedUtterance> utterances;
};

EncodedUtterance encode_utterance(const Utterance& utterance, const Vocab& vocab, const PosInventory& inventory,
                                  const StatisticsSchema& schema, const LabelSet& labels);
std::vector<EncodedConversation> encode_corpus(const Corpus& corpus, const Vocab& vocab,
                                               const PosInventory& inventory, const StatisticsSchema& schema,
                                               const LabelSet& labels);

/// The per-utterance feature triple: words l x d_w, pos l x d_p, stats d_s.
struct FeatureBundle {
  Tensor words;
  Tensor pos;
  Tensor stats;
};

FeatureBundle build_feature_bundle(const Utterance& utterance, const Vocab& vocab, const EmbeddingTable& table,
                                   const PosInventory& inventory, const StatisticsSchema& schema);

}  // namespace uiim
