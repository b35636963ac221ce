#include "uiim/features.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace uiim {

std::string fold_case(const std::string& token) {
  std::string out = token;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// ---------------------------------------------------------------------------

Vocab::Vocab() {
  add("<pad>");
  add("<unk>");
}

void Vocab::add(const std::string& folded) {
  if (index_.emplace(folded, tokens_.size()).second) tokens_.push_back(folded);
}

Vocab Vocab::build(const Corpus& corpus) {
  Vocab v;
  for (const auto& conv : corpus)
    for (const auto& utt : conv.utterances)
      for (const auto& tok : utt.tokens) v.add(fold_case(tok));
  return v;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
    throw CorpusError("vocabulary must start with <pad> and <unk>");
  for (std::size_t i = 2; i < tokens.size(); ++i) v.add(tokens[i]);
  if (v.size() != tokens.size()) throw CorpusError("vocabulary contains duplicate tokens");
  return v;
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = index_.find(fold_case(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocab::contains(const std::string& token) const { return index_.count(fold_case(token)) != 0; }

// ---------------------------------------------------------------------------

void EmbeddingTable::freeze_pad() {
  const std::size_t d = dim();
  std::fill_n(table.value.data() + Vocab::kPad * d, d, 0.0);
  std::fill_n(table.grad.data() + Vocab::kPad * d, d, 0.0);
}

EmbeddingTable random_embeddings(const Vocab& vocab, std::size_t dim, Rng& rng) {
  if (dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  EmbeddingTable t{Parameter("embedding", Tensor(Shape{vocab.size(), dim}))};
  for (std::size_t r = 0; r < vocab.size(); ++r)
    for (std::size_t c = 0; c < dim; ++c) t.table.value.at(r, c) = rng.uniform(-0.1, 0.1);
  t.freeze_pad();
  return t;
}

EmbeddingTable load_pretrained_embeddings(const std::filesystem::path& path, const Vocab& vocab, Rng& rng) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot read embeddings file " + path.string());
  std::map<std::size_t, std::vector<double>> found;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> fields;
    for (std::string f; ls >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2 &&
        std::all_of(fields[0].begin(), fields[0].end(), ::isdigit) &&
        std::all_of(fields[1].begin(), fields[1].end(), ::isdigit))
      continue;  // "count dim" header
    const std::size_t d = fields.size() - 1;
    if (d == 0) throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": missing vector values");
    if (dim == 0) dim = d;
    if (d != dim)
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": vector has " + std::to_string(d) +
                        " values, expected " + std::to_string(dim));
    if (!vocab.contains(fields[0])) continue;
    const std::size_t id = vocab.id(fields[0]);
    if (id == Vocab::kPad || found.count(id)) continue;
    std::vector<double> v(d);
    try {
      for (std::size_t i = 0; i < d; ++i) v[i] = std::stod(fields[i + 1]);
    } catch (const std::exception&) {
      throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
    found.emplace(id, std::move(v));
  }
  if (dim == 0) throw CorpusError("embeddings file " + path.string() + " contains no vectors");
  EmbeddingTable t = random_embeddings(vocab, dim, rng);
  for (const auto& [id, v] : found) std::copy(v.begin(), v.end(), t.table.value.data() + id * dim);
  t.freeze_pad();
  return t;
}

Tensor embed_words(const EmbeddingTable& table, const std::vector<std::size_t>& token_ids) {
  const std::size_t d = table.dim();
  Tensor out(Shape{token_ids.size(), d});
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    if (token_ids[i] >= table.rows())
      throw ShapeError("embed_words: token id " + std::to_string(token_ids[i]) + " out of range for " +
                       std::to_string(table.rows()) + " rows");
    std::copy_n(table.table.value.data() + token_ids[i] * d, d, out.data() + i * d);
  }
  return out;
}

// ---------------------------------------------------------------------------

PosInventory::PosInventory() {
  tags_.push_back(kUnknownTag);
  index_[kUnknownTag] = kUnknown;
}

PosInventory PosInventory::build(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& conv : corpus)
    for (const auto& utt : conv.utterances) seen.insert(utt.pos.begin(), utt.pos.end());
  seen.erase(kUnknownTag);
  PosInventory inv;
  for (const auto& tag : seen) {
    inv.index_[tag] = inv.tags_.size();
    inv.tags_.push_back(tag);
  }
  return inv;
}

PosInventory PosInventory::from_tags(const std::vector<std::string>& tags) {
  if (tags.empty() || tags[0] != kUnknownTag) throw CorpusError("POS inventory must start with " + kUnknownTag);
  PosInventory inv;
  for (std::size_t i = 1; i < tags.size(); ++i) {
    if (!inv.index_.emplace(tags[i], inv.tags_.size()).second)
      throw CorpusError("POS inventory contains duplicate tag " + tags[i]);
    inv.tags_.push_back(tags[i]);
  }
  return inv;
}

std::size_t PosInventory::id(const std::string& tag) const {
  auto it = index_.find(tag);
  return it == index_.end() ? kUnknown : it->second;
}

Tensor pos_onehot(const PosInventory& inventory, const std::vector<std::string>& tags) {
  Tensor out(Shape{tags.size(), inventory.size()});
  for (std::size_t i = 0; i < tags.size(); ++i) out.at(i, inventory.id(tags[i])) = 1.0;
  return out;
}

// ---------------------------------------------------------------------------

std::size_t StatisticsSchema::bucket(std::size_t length) const {
  return std::min(length / bucket_width, bucket_count - 1);
}

std::vector<double> statistics_vector(const StatisticsSchema& schema, const std::vector<std::string>& tokens) {
  std::vector<double> v(schema.dim(), 0.0);
  for (std::size_t k = 0; k < schema.punctuation.size(); ++k)
    if (std::find(tokens.begin(), tokens.end(), schema.punctuation[k]) != tokens.end()) v[k] = 1.0;
  v[schema.punctuation.size() + schema.bucket(tokens.size())] = 1.0;
  return v;
}

// ---------------------------------------------------------------------------

EncodedUtterance encode_utterance(const Utterance& utterance, const Vocab& vocab, const PosInventory& inventory,
                                  const StatisticsSchema& schema, const LabelSet& labels) {
  EncodedUtterance e;
  if (utterance.tokens.empty()) {
    e.token_ids = {Vocab::kPad};
    e.pos_ids = {PosInventory::kUnknown};
  } else {
    for (const auto& t : utterance.tokens) e.token_ids.push_back(vocab.id(t));
    for (const auto& p : utterance.pos) e.pos_ids.push_back(inventory.id(p));
    e.pos_ids.resize(e.token_ids.size(), PosInventory::kUnknown);
  }
  e.stats = statistics_vector(schema, utterance.tokens);
  e.label = labels.index(utterance.label);
  return e;
}

std::vector<EncodedConversation> encode_corpus(const Corpus& corpus, const Vocab& vocab,
                                               const PosInventory& inventory, const StatisticsSchema& schema,
                                               const LabelSet& labels) {
  std::vector<EncodedConversation> out;
  out.reserve(corpus.size());
  for (const auto& conv : corpus) {
    EncodedConversation ec{conv.id, {}};
    for (const auto& utt : conv.utterances)
      ec.utterances.push_back(encode_utterance(utt, vocab, inventory, schema, labels));
    out.push_back(std::move(ec));
  }
  return out;
}

FeatureBundle build_feature_bundle(const Utterance& utterance, const Vocab& vocab, const EmbeddingTable& table,
                                   const PosInventory& inventory, const StatisticsSchema& schema) {
  FeatureBundle b;
  const auto stats = statistics_vector(schema, utterance.tokens);
  b.stats = Tensor(Shape{stats.size()}, stats);
  if (utterance.tokens.empty()) {
    b.words = embed_words(table, {Vocab::kPad});
    b.pos = Tensor(Shape{1, inventory.size()});
    b.pos.at(0, PosInventory::kUnknown) = 1.0;
    return b;
  }
  std::vector<std::size_t> ids;
  for (const auto& t : utterance.tokens) ids.push_back(vocab.id(t));
  b.words = embed_words(table, ids);
  std::vector<std::string> tags = utterance.pos;
  tags.resize(utterance.tokens.size(), PosInventory::kUnknownTag);
  b.pos = pos_onehot(inventory, tags);
  return b;
}

}  // namespace uiim
