#include "uiim/corpus.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "uiim/rng.hpp"

namespace uiim {

using nlohmann::ordered_json;

namespace {

const std::vector<std::string>& swda_labels() {
  static const std::vector<std::string> labels{
    "sd", "b",   "sv",    "aa",  "%",    "ba",     "qy",  "x",        "ny", "fc", "qw",     "nn", "bk", "h",
    "qy^d", "fo_o_fw_\"_by_bc", "bh", "^q", "bf", "na", "ad", "^2", "b^m", "qo", "qh", "^h", "ar", "ng",
    "br", "no", "fp", "qrr", "arp_nd", "t3", "oo_co_cc", "t1", "bd", "aap_am", "^g", "qw^d", "fa", "ft"};
  return labels;
}

const std::vector<std::string>& mrda_labels() {
  static const std::vector<std::string> labels{"s", "q", "f", "b", "d"};
  return labels;
}

const std::vector<std::string>& synthetic_labels() {
  static const std::vector<std::string> labels{"question", "exclaim", "ack", "state"};
  return labels;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusError("cannot write " + path.string());
  out << text;
}

}  // namespace

// ---------------------------------------------------------------------------

LabelSet::LabelSet(std::string name, std::vector<std::string> labels)
    : name_(std::move(name)), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i)
    if (!index_.emplace(labels_[i], i).second) throw CorpusError("duplicate label '" + labels_[i] + "'");
}

LabelSet LabelSet::builtin(const std::string& name) {
  if (name == "synthetic-4") return LabelSet(name, synthetic_labels());
  if (name == "mrda-5") return LabelSet(name, mrda_labels());
  if (name == "swda-42") return LabelSet(name, swda_labels());
  throw CorpusError("unknown builtin label set '" + name + "'");
}

LabelSet LabelSet::load(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) labels.push_back(line);
  }
  return LabelSet(path.stem().string(), std::move(labels));
}

LabelSet LabelSet::resolve(const std::string& name_or_path) {
  if (name_or_path == "synthetic-4" || name_or_path == "mrda-5" || name_or_path == "swda-42")
    return builtin(name_or_path);
  return load(name_or_path);
}

void LabelSet::save(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& l : labels_) text += l + "\n";
  write_file(path, text);
}

std::size_t LabelSet::index(const std::string& label) const {
  auto it = index_.find(label);
  if (it == index_.end()) throw CorpusError("label '" + label + "' not in label set " + name_);
  return it->second;
}

// ---------------------------------------------------------------------------

SplitManifest SplitManifest::load(const std::filesystem::path& path) {
  SplitManifest m;
  try {
    const auto j = ordered_json::parse(read_file(path));
    m.train = j.at("train").get<std::vector<std::string>>();
    m.validation = j.at("validation").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw CorpusError("malformed split manifest " + path.string() + ": " + e.what());
  }
  return m;
}

void SplitManifest::save(const std::filesystem::path& path) const {
  ordered_json j;
  j["train"] = train;
  j["validation"] = validation;
  j["test"] = test;
  write_file(path, j.dump(1) + "\n");
}

void SplitManifest::validate(const Corpus& corpus) const {
  std::set<std::string> known;
  for (const auto& c : corpus) known.insert(c.id);
  std::set<std::string> seen;
  for (const auto* split : {&train, &validation, &test})
    for (const auto& id : *split) {
      if (!known.count(id)) throw CorpusError("split manifest names unknown conversation '" + id + "'");
      if (!seen.insert(id).second) throw CorpusError("conversation '" + id + "' appears in more than one split");
    }
}

Corpus select(const Corpus& corpus, const std::vector<std::string>& ids) {
  std::map<std::string, const Conversation*> by_id;
  for (const auto& c : corpus) by_id[c.id] = &c;
  Corpus out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw CorpusError("unknown conversation '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

Corpus parse_corpus(const std::string& text, const LabelSet& labels) {
  Corpus corpus;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    Conversation conv;
    try {
      const auto j = ordered_json::parse(line);
      conv.id = j.at("id").get<std::string>();
      for (const auto& u : j.at("utterances")) {
        Utterance utt;
        utt.speaker = u.at("speaker").get<std::string>();
        utt.tokens = u.at("tokens").get<std::vector<std::string>>();
        utt.pos = u.at("pos").get<std::vector<std::string>>();
        utt.label = u.at("label").get<std::string>();
        conv.utterances.push_back(std::move(utt));
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(where + "malformed conversation: " + e.what());
    }
    if (conv.utterances.empty()) throw CorpusError(where + "conversation '" + conv.id + "' has no utterances");
    for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
      const auto& u = conv.utterances[i];
      if (u.tokens.size() != u.pos.size())
        throw CorpusError(where + "utterance " + std::to_string(i) + " has " + std::to_string(u.tokens.size()) +
                          " tokens but " + std::to_string(u.pos.size()) + " POS tags");
      if (!labels.contains(u.label))
        throw CorpusError(where + "unknown label '" + u.label + "' (label set " + labels.name() + ")");
    }
    corpus.push_back(std::move(conv));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, const LabelSet& labels) {
  return parse_corpus(read_file(path), labels);
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& conv : corpus) {
    ordered_json j;
    j["id"] = conv.id;
    j["utterances"] = ordered_json::array();
    for (const auto& u : conv.utterances) {
      ordered_json ju;
      ju["speaker"] = u.speaker;
      ju["tokens"] = u.tokens;
      ju["pos"] = u.pos;
      ju["label"] = u.label;
      j["utterances"].push_back(std::move(ju));
    }
    out += j.dump() + "\n";
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file(path, serialize_corpus(corpus));
}

std::vector<std::string> check_reference_split_counts(const LabelSet& labels, const SplitManifest& splits) {
  struct Expected {
    std::size_t train, validation, test;
  };
  Expected e{};
  if (labels.name() == "swda-42")
    e = {1003, 112, 19};
  else if (labels.name() == "mrda-5")
    e = {51, 11, 11};
  else
    return {};
  std::vector<std::string> warnings;
  auto check = [&](const char* split, std::size_t got, std::size_t want) {
    if (got != want)
      warnings.push_back(labels.name() + " " + split + " split has " + std::to_string(got) +
                         " conversations; the reference release has " + std::to_string(want));
  };
  check("train", splits.train.size(), e.train);
  check("validation", splits.validation.size(), e.validation);
  check("test", splits.test.size(), e.test);
  return warnings;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct ToyLexicon {
  // (token, tag) by word class.
  std::vector<std::string> pronouns, verbs, nouns, adjectives, interjections;
};

// 200 words: 10 pronouns, 60 verbs, 80 nouns, 40 adjectives, 10 interjections
// (including the four acknowledgement words).
const ToyLexicon& lexicon() {
  static const ToyLexicon lex = [] {
    ToyLexicon l;
    const char* onsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
    const char* vowels[] = {"a", "e", "i", "o", "u"};
    std::vector<std::string> syllables;
    for (const char* o : onsets)
      for (const char* v : vowels) syllables.push_back(std::string(o) + v);
    // Deterministic distinct pseudo-words: two syllables plus a class suffix.
    auto make = [&](std::size_t count, const std::string& suffix, std::size_t offset) {
      std::vector<std::string> words;
      std::set<std::string> seen;
      const std::size_t pairs = syllables.size() * syllables.size();
      for (std::size_t k = 0; words.size() < count; ++k) {
        const std::size_t idx = (offset + k * 37) % pairs;
        std::string w = syllables[idx / syllables.size()] + syllables[idx % syllables.size()] + suffix;
        if (seen.insert(w).second) words.push_back(std::move(w));
      }
      return words;
    };
    l.pronouns = {"i", "you", "he", "she", "we", "they", "it", "this", "that", "someone"};
    l.verbs = make(60, "s", 0);
    l.nouns = make(80, "o", 3);
    l.adjectives = make(40, "y", 5);
    l.interjections = {"ok", "yes", "sure", "right", "well", "oh", "um", "uh", "wow", "hmm"};
    return l;
  }();
  return lex;
}

struct Token {
  std::string text;
  std::string tag;
};

// Toy inventory: PRP, VB, NN, JJ, UH, PUNCT.
std::vector<Token> body(Rng& rng, std::size_t words) {
  const ToyLexicon& lex = lexicon();
  std::vector<Token> out;
  // Cycle through a loose subject-verb-object pattern with random fillers.
  for (std::size_t i = 0; i < words; ++i) {
    const std::size_t slot = (i + rng.index(2)) % 5;
    switch (slot) {
      case 0: out.push_back({lex.pronouns[rng.index(lex.pronouns.size())], "PRP"}); break;
      case 1: out.push_back({lex.verbs[rng.index(lex.verbs.size())], "VB"}); break;
      case 2: out.push_back({lex.adjectives[rng.index(lex.adjectives.size())], "JJ"}); break;
      case 3: out.push_back({lex.nouns[rng.index(lex.nouns.size())], "NN"}); break;
      default:
        // Interjections other than the acknowledgement words, so a short body
        // cannot accidentally look like an acknowledgement.
        out.push_back({lex.interjections[4 + rng.index(lex.interjections.size() - 4)], "UH"});
        break;
    }
    if (i + 1 < words && words > 4 && rng.bernoulli(0.08)) out.push_back({",", "PUNCT"});
  }
  return out;
}

std::vector<Token> utterance_for(const std::string& label, Rng& rng) {
  std::vector<Token> toks;
  if (label == "question") {
    toks = body(rng, 2 + rng.index(9));
    toks.push_back({"?", "PUNCT"});
  } else if (label == "exclaim") {
    toks = body(rng, 1 + rng.index(10));
    toks.push_back({"!", "PUNCT"});
  } else if (label == "ack") {
    toks.push_back({kSyntheticAckWords[rng.index(kSyntheticAckWords.size())], "UH"});
    if (rng.bernoulli(0.6)) toks.push_back({".", "PUNCT"});
  } else {
    toks = body(rng, 3 + rng.index(10));
    const double r = rng.uniform();
    if (r < 0.7)
      toks.push_back({".", "PUNCT"});
    else if (r < 0.8)
      toks.push_back({"...", "PUNCT"});
    // otherwise no final punctuation
  }
  return toks;
}

}  // namespace

std::string synthetic_label(const std::vector<std::string>& tokens) {
  if (!tokens.empty() && tokens.back() == "?") return "question";
  if (!tokens.empty() && tokens.back() == "!") return "exclaim";
  if (!tokens.empty() && tokens.size() <= 2) {
    const bool has_ack = std::any_of(tokens.begin(), tokens.end(), [](const std::string& t) {
      return std::find(kSyntheticAckWords.begin(), kSyntheticAckWords.end(), t) != kSyntheticAckWords.end();
    });
    if (has_ack) return "ack";
  }
  return "state";
}

SyntheticCorpus generate_synthetic(std::size_t num_conversations, std::uint64_t seed) {
  if (num_conversations < 10) throw std::invalid_argument("synthetic corpus needs at least 10 conversations");
  Rng rng(seed);
  std::vector<std::size_t> lengths(num_conversations);
  std::size_t total = 0;
  for (auto& n : lengths) total += (n = 3 + rng.index(6));

  // Deal labels from a shuffled deck with equal counts per class.
  std::vector<std::string> deck;
  deck.reserve(total);
  for (std::size_t i = 0; i < total; ++i) deck.push_back(synthetic_labels()[i % synthetic_labels().size()]);
  rng.shuffle(deck);

  SyntheticCorpus out;
  std::size_t next = 0;
  for (std::size_t c = 0; c < num_conversations; ++c) {
    Conversation conv;
    char id[32];
    std::snprintf(id, sizeof id, "synth-%04zu", c);
    conv.id = id;
    for (std::size_t u = 0; u < lengths[c]; ++u) {
      Utterance utt;
      utt.speaker = (u % 2 == 0) ? "A" : "B";
      utt.label = deck[next++];
      for (auto& t : utterance_for(utt.label, rng)) {
        utt.tokens.push_back(std::move(t.text));
        utt.pos.push_back(std::move(t.tag));
      }
      conv.utterances.push_back(std::move(utt));
    }
    out.corpus.push_back(std::move(conv));
  }

  std::vector<std::string> ids;
  for (const auto& c : out.corpus) ids.push_back(c.id);
  rng.shuffle(ids);
  const std::size_t n_train = num_conversations * 8 / 10;
  const std::size_t n_val = num_conversations / 10;
  out.splits.train.assign(ids.begin(), ids.begin() + static_cast<long>(n_train));
  out.splits.validation.assign(ids.begin() + static_cast<long>(n_train),
                               ids.begin() + static_cast<long>(n_train + n_val));
  out.splits.test.assign(ids.begin() + static_cast<long>(n_train + n_val), ids.end());
  return out;
}

}  // namespace uiim
