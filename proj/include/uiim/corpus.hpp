#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace uiim {

struct Utterance {
  std::string speaker;
  std::vector<std::string> tokens;
  std::vector<std::string> pos;
  std::string label;

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string id;
  std::vector<Utterance> utterances;

  bool operator==(const Conversation&) const = default;
};

using Corpus = std::vector<Conversation>;

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered dialog act label inventory.
class LabelSet {
 public:
  LabelSet() = default;
  LabelSet(std::string name, std::vector<std::string> labels);

  /// "synthetic-4", "mrda-5" or "swda-42".
  static LabelSet builtin(const std::string& name);
  /// One label per line; blank lines ignored. The name is the file stem.
  static LabelSet load(const std::filesystem::path& path);
  /// A builtin name or a path to a label file.
  static LabelSet resolve(const std::string& name_or_path);
  void save(const std::filesystem::path& path) const;

  const std::string& name() const { return name_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::size_t size() const { return labels_.size(); }
  bool contains(const std::string& label) const { return index_.count(label) != 0; }
  /// Throws CorpusError for unknown labels.
  std::size_t index(const std::string& label) const;
  const std::string& label(std::size_t i) const { return labels_.at(i); }

 private:
  std::string name_;
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;

  static SplitManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// Throws CorpusError if the splits overlap or name ids missing from `corpus`.
  void validate(const Corpus& corpus) const;

  bool operator==(const SplitManifest&) const = default;
};

/// Conversations of `corpus` listed in `ids`, in manifest order.
Corpus select(const Corpus& corpus, const std::vector<std::string>& ids);

/// Reads the canonical JSONL format, one conversation per line. Errors name the
/// offending line number.
Corpus load_corpus(const std::filesystem::path& path, const LabelSet& labels);
Corpus parse_corpus(const std::string& text, const LabelSet& labels);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
std::string serialize_corpus(const Corpus& corpus);

/// Soft comparison of a manifest against the published split sizes of the
/// SwDA and MRDA releases. Returns warnings; empty when counts match or the
/// label set is not one of those corpora.
std::vector<std::string> check_reference_split_counts(const LabelSet& labels, const SplitManifest& splits);

// ---------------------------------------------------------------------------
// Synthetic corpus: four cue-aligned classes a model can learn from
// punctuation, length and word identity.

struct SyntheticCorpus {
  Corpus corpus;
  SplitManifest splits;
};

inline const std::vector<std::string> kSyntheticAckWords{"ok", "yes", "sure", "right"};

/// Ground-truth rule: "?"-final is question, "!"-final is exclaim, at most two
/// tokens opening with an acknowledgement word is ack, anything else is state.
std::string synthetic_label(const std::vector<std::string>& tokens);

/// Throws std::invalid_argument if num_conversations < 10.
SyntheticCorpus generate_synthetic(std::size_t num_conversations, std::uint64_t seed);

}  // namespace uiim
