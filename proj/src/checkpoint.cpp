#include "uiim/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace uiim {

namespace {

constexpr const char* kMagic = "uiim-checkpoint";
constexpr int kVersion = 1;

void write_doubles(std::ostream& out, const Tensor& t) {
  for (double v : t.values()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_doubles(std::istream& in, Tensor& t) {
  for (double& v : t.values()) {
    unsigned char bytes[8];
    if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint truncated in tensor data");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    v = std::bit_cast<double>(bits);
  }
}

std::string next_line(std::istream& in, const char* what) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError(std::string("checkpoint truncated before ") + what);
  return line;
}

void write_list(std::ostream& out, const std::vector<std::string>& items) {
  for (const auto& s : items) {
    if (s.find('\n') != std::string::npos) throw CheckpointError("cannot store entry containing a newline");
    out << s << '\n';
  }
}

std::vector<std::string> read_list(std::istream& in, std::size_t count, const char* what) {
  std::vector<std::string> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) items.push_back(next_line(in, what));
  return items;
}

std::size_t parse_count(std::istringstream& header, const char* what) {
  std::size_t n = 0;
  if (!(header >> n)) throw CheckpointError(std::string("malformed ") + what + " header");
  return n;
}

void expect_keyword(std::istringstream& header, const std::string& keyword) {
  std::string word;
  header >> word;
  if (word != keyword) throw CheckpointError("expected '" + keyword + "' section, found '" + word + "'");
}

struct Header {
  ModelConfig config;
  LabelSet labels;
  std::vector<std::string> vocab;
  std::vector<std::string> pos;
};

Header read_header(std::istream& in) {
  Header h;
  {
    std::istringstream magic(next_line(in, "header"));
    std::string word;
    int version = 0;
    magic >> word >> version;
    if (word != kMagic) throw CheckpointError("not a checkpoint file");
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  h.config = parse_config_line(next_line(in, "config"));
  {
    std::istringstream ls(next_line(in, "labels"));
    expect_keyword(ls, "labels");
    std::string name;
    ls >> name;
    const std::size_t n = parse_count(ls, "labels");
    h.labels = LabelSet(name, read_list(in, n, "labels"));
  }
  {
    std::istringstream ls(next_line(in, "vocab"));
    expect_keyword(ls, "vocab");
    h.vocab = read_list(in, parse_count(ls, "vocab"), "vocab");
  }
  {
    std::istringstream ls(next_line(in, "pos"));
    expect_keyword(ls, "pos");
    h.pos = read_list(in, parse_count(ls, "pos"), "pos");
  }
  return h;
}

void read_parameters(std::istream& in, UiimModel& model) {
  std::istringstream ls(next_line(in, "params"));
  expect_keyword(ls, "params");
  const std::size_t count = parse_count(ls, "params");
  std::map<std::string, Parameter*> wanted;
  for (Parameter* p : model.parameters()) wanted[p->name] = p;
  if (count != wanted.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                          std::to_string(wanted.size()));
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream ts(next_line(in, "tensor header"));
    std::string name;
    std::size_t rank = 0;
    ts >> name >> rank;
    if (!ts || rank > 3) throw CheckpointError("malformed tensor header for '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape)
      if (!(ts >> d)) throw CheckpointError("malformed shape for '" + name + "'");
    auto it = wanted.find(name);
    if (it == wanted.end()) throw CheckpointError("unexpected tensor '" + name + "'");
    Parameter& p = *it->second;
    if (shape != p.value.shape())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                            shape_string(p.value.shape()));
    read_doubles(in, p.value);
    if (in.get() != '\n') throw CheckpointError("corrupt tensor terminator after '" + name + "'");
    wanted.erase(it);
  }
  if (next_line(in, "end marker") != "end") throw CheckpointError("missing end marker");
}

}  // namespace

std::string config_line(const ModelConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << "config d_w=" << c.d_w << " d_p=" << c.d_p << " d_s=" << c.d_s << " d_h=" << c.d_h
     << " lstm_hidden=" << c.lstm_hidden << " heads=" << c.heads << " num_classes=" << c.num_classes
     << " dropout=" << c.dropout << " mlp_hidden=" << c.mlp_hidden << " variant=" << to_string(c.variant);
  return os.str();
}

ModelConfig parse_config_line(const std::string& line) {
  std::istringstream ls(line);
  expect_keyword(ls, "config");
  std::map<std::string, std::string> kv;
  for (std::string item; ls >> item;) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed config entry '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError(std::string("config is missing ") + key);
    return it->second;
  };
  ModelConfig c;
  try {
    c.d_w = std::stoul(get("d_w"));
    c.d_p = std::stoul(get("d_p"));
    c.d_s = std::stoul(get("d_s"));
    c.d_h = std::stoul(get("d_h"));
    c.lstm_hidden = std::stoul(get("lstm_hidden"));
    c.heads = std::stoul(get("heads"));
    c.num_classes = std::stoul(get("num_classes"));
    c.dropout = std::stod(get("dropout"));
    c.mlp_hidden = std::stoul(get("mlp_hidden"));
    c.variant = parse_variant(get("variant"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("malformed config value: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Classifier& classifier) {
  if (!classifier.model) throw CheckpointError("classifier has no model");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out << kMagic << ' ' << kVersion << '\n';
    out << config_line(classifier.model->config()) << '\n';
    out << "labels " << classifier.labels.name() << ' ' << classifier.labels.size() << '\n';
    write_list(out, classifier.labels.labels());
    out << "vocab " << classifier.vocab.size() << '\n';
    write_list(out, classifier.vocab.tokens());
    out << "pos " << classifier.pos.size() << '\n';
    write_list(out, classifier.pos.tags());
    const auto params = classifier.model->parameters();
    out << "params " << params.size() << '\n';
    for (const Parameter* p : params) {
      out << p->name << ' ' << p->value.rank();
      for (auto d : p->value.shape()) out << ' ' << d;
      out << '\n';
      write_doubles(out, p->value);
      out << '\n';
    }
    out << "end\n";
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Classifier load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  Header h = read_header(in);
  Classifier c;
  try {
    c.vocab = Vocab::from_tokens(h.vocab);
    c.pos = PosInventory::from_tags(h.pos);
  } catch (const CorpusError& e) {
    throw CheckpointError(e.what());
  }
  c.labels = std::move(h.labels);
  if (h.config.d_p != c.pos.size() || h.config.num_classes != c.labels.size() || h.config.d_s != c.schema.dim())
    throw CheckpointError("config dimensions disagree with stored inventories");
  Rng rng(0);
  try {
    c.model = std::make_unique<UiimModel>(h.config, c.vocab.size(), rng);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid stored config: ") + e.what());
  }
  read_parameters(in, *c.model);
  return c;
}

void restore_parameters(const std::filesystem::path& path, UiimModel& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  Header h = read_header(in);
  if (!(h.config == model.config()))
    throw CheckpointError("checkpoint config '" + config_line(h.config) + "' does not match model '" +
                          config_line(model.config()) + "'");
  read_parameters(in, model);
}

}  // namespace uiim
