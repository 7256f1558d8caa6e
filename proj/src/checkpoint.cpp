#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "slidegcd/pipeline.hpp"

namespace slidegcd {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

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
  template <class V>
  void put(V v) {
    char buf[sizeof(V)];
    std::memcpy(buf, &v, sizeof(V));
    out_.append(buf, sizeof(V));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void put_floats(std::span<const float> xs) {
    out_.append(reinterpret_cast<const char*>(xs.data()), xs.size() * sizeof(float));
  }
  void raw(const std::string& s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, std::size_t begin, std::size_t end, std::string what)
      : bytes_(bytes), pos_(begin), end_(end), what_(std::move(what)) {}

  template <class V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string() { return get_bytes(get<std::uint32_t>()); }
  void get_floats(std::span<float> xs) {
    need(xs.size() * sizeof(float));
    std::memcpy(xs.data(), bytes_.data() + pos_, xs.size() * sizeof(float));
    pos_ += xs.size() * sizeof(float);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) {
      throw FormatError("checkpoint: truncated " + what_ + " at offset " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::size_t pos_;
  std::size_t end_;
  std::string what_;
};

std::string encode_params(Model& m) {
  Writer w;
  std::uint32_t count = 0;
  m.params.visit_all([&](const std::string&, Matrix<float>&) { ++count; });
  w.put(count);
  m.params.visit_all([&](const std::string& name, Matrix<float>& mat) {
    w.put_string(name);
    w.put<std::uint64_t>(mat.rows());
    w.put<std::uint64_t>(mat.cols());
    w.put_floats(mat.storage());
  });
  return std::move(w.str());
}

std::string encode_buffer(const NodeBuffer& b) {
  Writer w;
  w.put<std::uint64_t>(b.next_counter());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.num_classes()));
  for (int c = 0; c < b.num_classes(); ++c) {
    const auto& q = b.sub_queue(c);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(q.size()));
    for (const auto& e : q) {
      w.put<std::int32_t>(e.label);
      w.put<std::uint64_t>(e.counter);
      w.put_floats(e.embedding);
    }
  }
  return std::move(w.str());
}

std::string encode_log(const std::vector<LogRecord>& log) {
  std::string text = log_header() + "\n";
  for (const auto& r : log) text += format_log_record(r) + "\n";
  return text;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Model model = ckpt.model;  // visit_all needs mutable access
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("config", model.config.to_json().dump());
  {
    Writer meta;
    meta.put<std::uint64_t>(model.patch_dim);
    sections.emplace_back("meta", std::move(meta.str()));
  }
  sections.emplace_back("params", encode_params(model));
  sections.emplace_back("buffer", encode_buffer(model.buffer));
  sections.emplace_back("log", encode_log(ckpt.log));

  Writer w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.put(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.put_string(name);
    w.put<std::uint64_t>(payload.size());
    w.raw(payload);
  }
  const std::uint64_t sum = fnv1a(w.str().data(), w.str().size());
  w.put(sum);
  return std::move(w.str());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 + 4 + 4 + 8) throw FormatError("checkpoint: file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic (expected SGCK)");
  }
  const std::size_t body_end = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body_end, 8);
  if (stored != fnv1a(bytes.data(), body_end)) {
    throw FormatError("checkpoint: checksum mismatch (file corrupted)");
  }
  Reader r(bytes, 4, body_end, "header");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  std::map<std::string, std::pair<std::size_t, std::size_t>> sections;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    const auto len = r.get<std::uint64_t>();
    const std::size_t begin = r.pos();
    r.get_bytes(len);
    sections[name] = {begin, begin + len};
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after sections");
  auto section = [&](const std::string& name) {
    auto it = sections.find(name);
    if (it == sections.end()) throw FormatError("checkpoint: missing section '" + name + "'");
    return Reader(bytes, it->second.first, it->second.second, name + " section");
  };

  TrainConfig config;
  {
    section("config");
    const auto& [b, e] = sections["config"];
    try {
      config = TrainConfig::from_json(nlohmann::json::parse(bytes.substr(b, e - b)));
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("checkpoint: config section is not JSON: ") + ex.what());
    }
  }
  auto meta = section("meta");
  const auto patch_dim = meta.get<std::uint64_t>();

  Checkpoint ckpt;
  ckpt.model = init_model(config, patch_dim);
  Model& m = ckpt.model;

  auto pr = section("params");
  std::map<std::string, Matrix<float>> loaded;
  const auto n_params = pr.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_params; ++i) {
    const std::string name = pr.get_string();
    const auto rows = pr.get<std::uint64_t>();
    const auto cols = pr.get<std::uint64_t>();
    Matrix<float> mat(rows, cols);
    pr.get_floats(mat.storage());
    loaded[name] = std::move(mat);
  }
  m.params.visit_all([&](const std::string& name, Matrix<float>& dst) {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw FormatError("checkpoint: missing parameter '" + name + "'");
    if (!it->second.same_shape(dst)) {
      throw FormatError("checkpoint: parameter '" + name + "' has shape " +
                        it->second.shape_str() + ", config implies " + dst.shape_str());
    }
    dst = std::move(it->second);
  });

  auto br = section("buffer");
  const auto next_counter = br.get<std::uint64_t>();
  const auto classes = br.get<std::uint32_t>();
  std::vector<std::vector<BufferEntry>> queues(classes);
  for (auto& q : queues) {
    const auto n = br.get<std::uint32_t>();
    if (n > m.buffer.per_class_capacity()) {
      throw FormatError("checkpoint: sub-queue larger than its capacity");
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      BufferEntry e;
      e.label = br.get<std::int32_t>();
      e.counter = br.get<std::uint64_t>();
      e.embedding.resize(m.buffer.dim());
      br.get_floats(e.embedding);
      q.push_back(std::move(e));
    }
  }
  m.buffer.restore(std::move(queues), next_counter);

  const auto& [lb, le] = sections.at("log");
  std::istringstream log(bytes.substr(lb, le - lb));
  std::string line;
  std::getline(log, line);
  while (std::getline(log, line)) {
    if (!line.empty()) ckpt.log.push_back(parse_log_record(line));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace slidegcd
