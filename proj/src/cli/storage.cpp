#include "relocl/cli/storage.hpp"

#include <cstring>
#include <fstream>
#include <sstream>
#include <system_error>
#include <unistd.h>

namespace relocl::cli {

using nlohmann::json;
namespace fs = std::filesystem;

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw std::runtime_error("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw std::runtime_error("write to '" + tmp.string() + "' failed");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace {

json catalog_json(const graph::EntityCatalog& c) {
  auto entities = [](const std::vector<graph::Entity>& es) {
    json a = json::array();
    for (const auto& e : es) a.push_back({{"id", e.id}, {"name", e.name}});
    return a;
  };
  return {{"objects", entities(c.objects())}, {"locations", entities(c.locations())}, {"root", c.root_location()}};
}

graph::CatalogPtr catalog_from_json(const json& j) {
  auto entities = [](const json& a) {
    std::vector<graph::Entity> out;
    for (const auto& e : a) out.push_back({e.at("id").get<std::string>(), e.at("name").get<std::string>()});
    return out;
  };
  try {
    return std::make_shared<const graph::EntityCatalog>(entities(j.at("objects")), entities(j.at("locations")),
                                                        j.at("root").get<int>());
  } catch (const graph::GraphError& e) {
    throw DataError(std::string("bad catalog: ") + e.what());
  }
}

sim::Split parse_split(const std::string& s) {
  if (s == "train") return sim::Split::Train;
  if (s == "test") return sim::Split::Test;
  throw DataError("unknown split '" + s + "'");
}

}  // namespace

std::string dataset_to_jsonl(const sim::TaskDataset& ds) {
  if (!ds.catalog) throw DataError("dataset has no catalog");
  const auto& cat = *ds.catalog;
  std::string out;
  json header = {{"format", "relocl-snapshots"},
                 {"version", 1},
                 {"task", ds.task},
                 {"household", ds.household},
                 {"interval", ds.interval},
                 {"first_day", ds.first_day},
                 {"days", ds.day_count()},
                 {"catalog", catalog_json(cat)},
                 {"activity_fires", ds.activity_fires},
                 {"skipped_moves", ds.skipped_moves}};
  out += header.dump() + "\n";
  for (int d = 0; d < ds.day_count(); ++d) {
    const char* split = sim::to_string(ds.split_of_day(d));
    for (const auto& s : ds.day(d)) {
      json parents = json::array();
      for (auto p : s.parent) parents.push_back(p == graph::kNoParent ? std::string() : cat.node_id(p));
      json rec = {{"t", s.time.minutes}, {"day", s.time.day()}, {"parents", std::move(parents)}, {"split", split}};
      out += rec.dump() + "\n";
    }
  }
  return out;
}

sim::TaskDataset dataset_from_jsonl(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError(source + ":" + std::to_string(line_no) + ": " + what);
  };
  auto next_record = [&](json& out) {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      out = json::parse(line, nullptr, false);
      if (out.is_discarded() || !out.is_object()) throw fail("not a JSON object");
      return true;
    }
    return false;
  };

  sim::TaskDataset ds;
  json rec;
  int declared_days = 0;
  if (!next_record(rec)) throw DataError(source + ": empty snapshot stream");
  try {
    if (rec.value("format", std::string()) != "relocl-snapshots") throw fail("missing snapshot stream header");
    if (rec.at("version").get<int>() != 1) throw fail("unsupported stream version " + rec.at("version").dump());
    ds.task = rec.at("task").get<int>();
    ds.household = rec.at("household").get<std::string>();
    ds.interval = rec.at("interval").get<int>();
    ds.first_day = rec.at("first_day").get<int>();
    declared_days = rec.at("days").get<int>();
    ds.catalog = catalog_from_json(rec.at("catalog"));
    ds.activity_fires = rec.at("activity_fires").get<std::vector<int>>();
    ds.skipped_moves = rec.at("skipped_moves").get<std::size_t>();
  } catch (const json::exception& e) {
    throw fail(std::string("bad header: ") + e.what());
  } catch (const DataError& e) {
    if (std::string(e.what()).rfind(source, 0) == 0) throw;
    throw fail(e.what());
  }
  if (ds.interval < 1 || 1440 % ds.interval != 0) throw fail("interval must divide 1440");
  const auto& cat = *ds.catalog;

  std::int64_t current_day = -1;
  while (next_record(rec)) {
    graph::GraphSnapshot s;
    s.task = ds.task;
    s.catalog = ds.catalog;
    std::int64_t day = 0;
    sim::Split split{};
    try {
      s.time.minutes = rec.at("t").get<std::int64_t>();
      day = rec.at("day").get<std::int64_t>();
      split = parse_split(rec.at("split").get<std::string>());
      const auto& parents = rec.at("parents");
      if (!parents.is_array() || static_cast<int>(parents.size()) != cat.object_count()) {
        throw fail("expected " + std::to_string(cat.object_count()) + " parents");
      }
      for (const auto& p : parents) {
        const auto id = p.get<std::string>();
        if (id.empty()) {
          s.parent.push_back(graph::kNoParent);
          continue;
        }
        auto node = cat.find_node(id);
        if (!node) throw fail("unknown entity id '" + id + "'");
        s.parent.push_back(*node);
      }
    } catch (const json::exception& e) {
      throw fail(std::string("bad snapshot record: ") + e.what());
    } catch (const DataError& e) {
      if (std::string(e.what()).rfind(source, 0) == 0) throw;
      throw fail(e.what());
    }
    if (day != s.time.day()) throw fail("day field does not match t");
    if (!ds.snapshots.empty() && !(ds.snapshots.back().time < s.time)) throw fail("snapshots are not strictly time-ordered");
    const auto violations = graph::validate_snapshot(s);
    if (!violations.empty()) throw fail("invalid snapshot: " + violations.front().message);
    if (day != current_day) {
      if (current_day >= 0 && day != current_day + 1) throw fail("missing day between " + std::to_string(current_day) +
                                                                  " and " + std::to_string(day));
      if (current_day < 0 && day != ds.first_day) throw fail("first snapshot is not on first_day");
      current_day = day;
      ds.day_start.push_back(ds.snapshots.size());
      ds.day_split.push_back(split);
    } else if (ds.day_split.back() != split) {
      throw fail("split changes within a day");
    }
    ds.snapshots.push_back(std::move(s));
  }
  if (ds.day_count() != declared_days) {
    throw DataError(source + ": header declares " + std::to_string(declared_days) + " days but the stream holds " +
                    std::to_string(ds.day_count()));
  }
  return ds;
}

void save_dataset(const fs::path& path, const sim::TaskDataset& ds) { write_atomic(path, dataset_to_jsonl(ds)); }

sim::TaskDataset load_dataset(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  return dataset_from_jsonl(in, path.filename().string());
}

namespace {

constexpr char kMagic[8] = {'R', 'E', 'L', 'O', 'C', 'L', 'C', 'K'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Writer {
 public:
  template <typename T>
  void pod(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    bytes_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
  void size(std::size_t n) { pod(static_cast<std::uint64_t>(n)); }

  template <typename S>
  void matrix(const num::Matrix<S>& m) {
    pod(static_cast<std::int64_t>(m.rows()));
    pod(static_cast<std::int64_t>(m.cols()));
    raw(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()));
  }
  template <typename S>
  void vector(const num::Vector<S>& v) {
    size(static_cast<std::size_t>(v.size()));
    raw(v.data(), sizeof(S) * static_cast<std::size_t>(v.size()));
  }
  void snapshot(const graph::GraphSnapshot& s) {
    pod(static_cast<std::int32_t>(s.task));
    pod(static_cast<std::int64_t>(s.time.minutes));
    size(s.parent.size());
    for (auto p : s.parent) pod(static_cast<std::int32_t>(p));
  }

  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t n, std::string source) : p_(data), end_(data + n), source_(std::move(source)) {}

  template <typename T>
  T pod() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return v;
  }
  void raw(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_, n);
    p_ += n;
  }
  std::size_t size(std::size_t limit) {
    const auto n = pod<std::uint64_t>();
    if (n > limit) throw DataError(source_ + ": implausible length in checkpoint payload");
    return static_cast<std::size_t>(n);
  }
  template <typename S>
  num::Matrix<S> matrix() {
    const auto r = pod<std::int64_t>();
    const auto c = pod<std::int64_t>();
    if (r < 0 || c < 0 || (r > 0 && static_cast<std::uint64_t>(c) > remaining() / sizeof(S) / static_cast<std::uint64_t>(r))) {
      throw DataError(source_ + ": bad tensor shape in checkpoint payload");
    }
    num::Matrix<S> m(r, c);
    raw(m.data(), sizeof(S) * static_cast<std::size_t>(m.size()));
    return m;
  }
  template <typename S>
  num::Vector<S> vector() {
    const auto n = size(remaining() / sizeof(S));
    num::Vector<S> v(static_cast<Eigen::Index>(n));
    raw(v.data(), sizeof(S) * n);
    return v;
  }
  graph::GraphSnapshot snapshot(const graph::CatalogPtr& catalog) {
    graph::GraphSnapshot s;
    s.task = pod<std::int32_t>();
    s.time.minutes = pod<std::int64_t>();
    const auto n = size(remaining() / sizeof(std::int32_t));
    if (static_cast<int>(n) != catalog->object_count()) throw DataError(source_ + ": snapshot size does not match catalog");
    s.parent.resize(n);
    for (auto& p : s.parent) p = pod<std::int32_t>();
    s.catalog = catalog;
    return s;
  }
  [[nodiscard]] std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw DataError(source_ + ": truncated checkpoint payload");
  }
  const char* p_;
  const char* end_;
  std::string source_;
};

json model_json(const model::ModelConfig& m) {
  return {{"embedding_dim", m.embedding_dim},
          {"rounds", m.rounds},
          {"hidden_dim", m.hidden_dim},
          {"tau", m.move_threshold},
          {"delta", m.horizon_minutes}};
}

model::ModelConfig model_from_json(const json& j) {
  model::ModelConfig m;
  m.embedding_dim = j.at("embedding_dim").get<int>();
  m.rounds = j.at("rounds").get<int>();
  m.hidden_dim = j.at("hidden_dim").get<int>();
  m.move_threshold = j.at("tau").get<double>();
  m.horizon_minutes = j.at("delta").get<int>();
  return m;
}

json training_json(const exp::TrainingConfig& t) {
  return {{"epochs", t.epochs},       {"batch_size", t.batch_size},        {"learning_rate", t.learning_rate},
          {"delta", t.delta},         {"lambda", t.hyper.lambda},          {"beta", t.hyper.beta},
          {"seed", t.seed},           {"strategy", exp::to_string(t.strategy)}};
}

exp::TrainingConfig training_from_json(const json& j) {
  exp::TrainingConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.batch_size = j.at("batch_size").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.delta = j.at("delta").get<int>();
  t.hyper.lambda = j.at("lambda").get<double>();
  t.hyper.beta = j.at("beta").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.strategy = exp::parse_strategy(j.at("strategy").get<std::string>());
  return t;
}

json counts_json(const exp::OutcomeCounts& c) {
  return {{"moved_correct", c.moved_correct},
          {"moved_wrong", c.moved_wrong},
          {"moved_missed", c.moved_missed},
          {"unmoved_correct", c.unmoved_correct},
          {"unmoved_wrong", c.unmoved_wrong}};
}

exp::OutcomeCounts counts_from_json(const json& j) {
  exp::OutcomeCounts c;
  c.moved_correct = j.at("moved_correct").get<std::size_t>();
  c.moved_wrong = j.at("moved_wrong").get<std::size_t>();
  c.moved_missed = j.at("moved_missed").get<std::size_t>();
  c.unmoved_correct = j.at("unmoved_correct").get<std::size_t>();
  c.unmoved_wrong = j.at("unmoved_wrong").get<std::size_t>();
  return c;
}

template <typename S>
void write_tensors(Writer& w, const std::vector<num::Matrix<S>>& ts) {
  w.size(ts.size());
  for (const auto& t : ts) w.matrix(t);
}

template <typename S>
std::vector<num::Matrix<S>> read_tensors(Reader& r) {
  const auto n = r.size(r.remaining());
  std::vector<num::Matrix<S>> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(r.template matrix<S>());
  return out;
}

void write_pairs(Writer& w, const std::vector<cl::SnapshotPair>& pairs) {
  w.size(pairs.size());
  for (const auto& p : pairs) {
    w.snapshot(p.input);
    w.snapshot(p.target);
  }
}

std::vector<cl::SnapshotPair> read_pairs(Reader& r, const graph::CatalogPtr& catalog) {
  const auto n = r.size(r.remaining());
  std::vector<cl::SnapshotPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto input = r.snapshot(catalog);
    auto target = r.snapshot(catalog);
    out.push_back({std::move(input), std::move(target)});
  }
  return out;
}

struct Header {
  std::uint32_t version = 0;
  json manifest;
  const char* payload = nullptr;
  std::size_t payload_size = 0;
};

Header parse_header(const std::string& bytes, const std::string& source, bool verify_checksum) {
  Reader r(bytes.data(), bytes.size(), source);
  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw DataError(source + ": not a checkpoint file");
  Header h;
  h.version = r.pod<std::uint32_t>();
  if (h.version != kCheckpointVersion) {
    throw DataError(source + ": checkpoint version " + std::to_string(h.version) + " is not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const auto manifest_size = r.size(r.remaining());
  std::string manifest(manifest_size, '\0');
  r.raw(manifest.data(), manifest_size);
  h.manifest = json::parse(manifest, nullptr, false);
  if (h.manifest.is_discarded()) throw DataError(source + ": corrupt checkpoint manifest");
  h.payload_size = r.size(r.remaining());
  h.payload = bytes.data() + (bytes.size() - r.remaining());
  if (r.remaining() != h.payload_size + sizeof(std::uint64_t)) throw DataError(source + ": truncated checkpoint");
  if (verify_checksum) {
    const std::size_t body = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, sizeof stored);
    if (stored != fnv1a(bytes.data(), body)) throw DataError(source + ": checkpoint checksum mismatch");
  }
  return h;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& c) {
  const auto& s = c.state;
  if (!s.catalog) throw std::runtime_error("checkpoint: state has no catalog");

  json params = json::array();
  for (std::size_t i = 0; i < s.params.size(); ++i) {
    params.push_back({{"name", s.params.name(i)}, {"rows", s.params[i].rows()}, {"cols", s.params[i].cols()}});
  }
  std::ostringstream rng;
  rng << s.rng;
  json ledger = json::array();
  for (const auto& l : s.ledger) {
    ledger.push_back({{"session", l.session},
                      {"samples", l.samples},
                      {"steps", l.steps},
                      {"cpu_seconds", l.cpu_seconds},
                      {"buffer_size", l.buffer_size}});
  }
  json retention = json::array();
  for (const auto& row : c.retention.rows) {
    json r = json::array();
    for (const auto& m : row) r.push_back({{"dataset", m.dataset}, {"pairs", m.pairs}, {"counts", counts_json(m.counts)}});
    retention.push_back(std::move(r));
  }
  const auto& h = s.optimizer.hyper;
  json manifest = {{"format", "relocl-checkpoint"},
                   {"strategy", exp::to_string(s.strategy)},
                   {"session", s.session},
                   {"seed", s.seed},
                   {"model", model_json(s.model)},
                   {"training", training_json(c.training)},
                   {"catalog", catalog_json(*s.catalog)},
                   {"parameters", params},
                   {"optimizer", {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"epsilon", h.epsilon}, {"step", s.optimizer.step}}},
                   {"rng", rng.str()},
                   {"has_anchor", s.anchor.has_value()},
                   {"has_buffer", s.buffer.has_value()},
                   {"feature_means", s.feature_means.size()},
                   {"seen_sessions", s.seen.size()},
                   {"ledger", ledger},
                   {"retention", retention}};

  Writer p;
  write_tensors(p, s.params.values());
  write_tensors(p, s.optimizer.first_moment);
  write_tensors(p, s.optimizer.second_moment);
  if (s.anchor) {
    write_tensors(p, s.anchor->theta_prev.values());
    p.vector(s.anchor->fisher.values);
  }
  if (s.buffer) {
    const auto& b = *s.buffer;
    p.size(b.dataset_sizes.size());
    for (auto n : b.dataset_sizes) p.size(n);
    p.size(b.retained.size());
    for (auto n : b.retained) p.size(n);
    p.size(b.entries.size());
    for (const auto& e : b.entries) {
      p.pod(static_cast<std::int32_t>(e.session));
      p.size(e.index);
      p.pod(e.distance);
      p.snapshot(e.sample.input);
      p.snapshot(e.sample.target);
    }
  }
  for (const auto& m : s.feature_means) {
    p.vector(m.c);
    p.size(m.node_count);
    p.size(m.edge_count);
    p.size(m.time_count);
  }
  for (const auto& d : s.seen) write_pairs(p, d);

  const std::string manifest_text = manifest.dump();
  Writer out;
  out.raw(kMagic, sizeof kMagic);
  out.pod(kCheckpointVersion);
  out.size(manifest_text.size());
  out.raw(manifest_text.data(), manifest_text.size());
  out.size(p.bytes().size());
  out.raw(p.bytes().data(), p.bytes().size());
  out.pod(fnv1a(out.bytes().data(), out.bytes().size()));
  return std::move(out.bytes());
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  const auto h = parse_header(bytes, source, true);
  const auto& m = h.manifest;
  Checkpoint c;
  auto& s = c.state;
  Reader r(h.payload, h.payload_size, source);
  try {
    if (m.at("format").get<std::string>() != "relocl-checkpoint") throw DataError(source + ": wrong manifest format");
    s.strategy = exp::parse_strategy(m.at("strategy").get<std::string>());
    s.session = m.at("session").get<int>();
    s.seed = m.at("seed").get<std::uint64_t>();
    s.model = model_from_json(m.at("model"));
    c.training = training_from_json(m.at("training"));
    s.catalog = catalog_from_json(m.at("catalog"));

    auto values = read_tensors<exp::Real>(r);
    const auto& names = m.at("parameters");
    if (names.size() != values.size()) throw DataError(source + ": parameter manifest does not match payload");
    for (std::size_t i = 0; i < values.size(); ++i) {
      const auto& d = names[i];
      if (d.at("rows").get<Eigen::Index>() != values[i].rows() || d.at("cols").get<Eigen::Index>() != values[i].cols()) {
        throw DataError(source + ": shape of parameter '" + d.at("name").get<std::string>() + "' does not match");
      }
      s.params.add(d.at("name").get<std::string>(), std::move(values[i]));
    }

    const auto& o = m.at("optimizer");
    s.optimizer.hyper = {o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                         o.at("epsilon").get<double>()};
    s.optimizer.step = o.at("step").get<std::uint64_t>();
    s.optimizer.first_moment = read_tensors<exp::Real>(r);
    s.optimizer.second_moment = read_tensors<exp::Real>(r);

    std::istringstream rng(m.at("rng").get<std::string>());
    rng >> s.rng;
    if (rng.fail()) throw DataError(source + ": corrupt RNG state");

    if (m.at("has_anchor").get<bool>()) {
      cl::ConsolidationAnchor<exp::Real> a;
      auto theta = read_tensors<exp::Real>(r);
      if (theta.size() != s.params.size()) throw DataError(source + ": anchor does not match parameters");
      for (std::size_t i = 0; i < theta.size(); ++i) a.theta_prev.add(s.params.name(i), std::move(theta[i]));
      a.fisher.values = r.vector<exp::Real>();
      a.check();
      s.anchor = std::move(a);
    }
    if (m.at("has_buffer").get<bool>()) {
      cl::MemoryBuffer b;
      const auto limit = r.remaining();
      b.dataset_sizes.resize(r.size(limit));
      for (auto& n : b.dataset_sizes) n = r.size(std::numeric_limits<std::size_t>::max());
      b.retained.resize(r.size(limit));
      for (auto& n : b.retained) n = r.size(std::numeric_limits<std::size_t>::max());
      const auto entries = r.size(limit);
      b.entries.reserve(entries);
      for (std::size_t i = 0; i < entries; ++i) {
        cl::BufferEntry e;
        e.session = r.pod<std::int32_t>();
        e.index = r.size(std::numeric_limits<std::size_t>::max());
        e.distance = r.pod<double>();
        e.sample.input = r.snapshot(s.catalog);
        e.sample.target = r.snapshot(s.catalog);
        b.entries.push_back(std::move(e));
      }
      s.buffer = std::move(b);
    }
    const auto means = m.at("feature_means").get<std::size_t>();
    for (std::size_t i = 0; i < means; ++i) {
      cl::MeanFeatureVector<exp::Real> f;
      f.c = r.vector<exp::Real>();
      f.node_count = r.size(std::numeric_limits<std::size_t>::max());
      f.edge_count = r.size(std::numeric_limits<std::size_t>::max());
      f.time_count = r.size(std::numeric_limits<std::size_t>::max());
      s.feature_means.push_back(std::move(f));
    }
    const auto seen = m.at("seen_sessions").get<std::size_t>();
    for (std::size_t i = 0; i < seen; ++i) s.seen.push_back(read_pairs(r, s.catalog));

    for (const auto& l : m.at("ledger")) {
      exp::SessionLedger x;
      x.session = l.at("session").get<int>();
      x.samples = l.at("samples").get<std::size_t>();
      x.steps = l.at("steps").get<std::size_t>();
      x.cpu_seconds = l.at("cpu_seconds").get<double>();
      x.buffer_size = l.at("buffer_size").get<std::size_t>();
      s.ledger.push_back(x);
    }
    for (const auto& row : m.at("retention")) {
      std::vector<exp::MetricsReport> out;
      for (const auto& cell : row) {
        out.push_back({cell.at("dataset").get<std::string>(), cell.at("pairs").get<std::size_t>(),
                       counts_from_json(cell.at("counts"))});
      }
      c.retention.rows.push_back(std::move(out));
    }
  } catch (const json::exception& e) {
    throw DataError(source + ": bad checkpoint manifest: " + e.what());
  } catch (const exp::ExperimentError& e) {
    throw DataError(source + ": " + e.what());
  } catch (const cl::CLError& e) {
    throw DataError(source + ": " + e.what());
  }
  if (r.remaining() != 0) throw DataError(source + ": trailing bytes in checkpoint payload");
  return c;
}

void save_checkpoint(const fs::path& path, const Checkpoint& c) { write_atomic(path, encode_checkpoint(c)); }

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_file(path), path.filename().string()); }

json checkpoint_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_header(bytes, path.filename().string(), true).manifest;
}

}  // namespace relocl::cli
