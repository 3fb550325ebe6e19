#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "swapwm/toy_clip.hpp"

namespace swapwm {

// Layout: magic | u32 version | u64 len + config text | u32 count | arrays | u64 FNV-1a of all prior bytes.
// Array: u32 len + name | u32 rank | u64 dims[rank] | float64 payload (little-endian, row-major).
inline constexpr char kCheckpointMagic[8] = {'S', 'W', 'A', 'P', 'W', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

inline std::uint64_t fnv1a(const char* data, std::size_t n) {
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
  void pod(T v) {
    v = byteswap_if_big(v);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  void matrix(const std::string& name, const Eigen::MatrixXd& m) {
    str(name);
    pod<std::uint32_t>(2);
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
    pod<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) pod<double>(m(r, c));
  }
  void vector(const std::string& name, const Eigen::VectorXd& v) {
    str(name);
    pod<std::uint32_t>(1);
    pod<std::uint64_t>(static_cast<std::uint64_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) pod<double>(v(i));
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, std::size_t n) : p_(data), end_(data + n) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, p_, sizeof(T));
    p_ += sizeof(T);
    return byteswap_if_big(v);
  }
  std::string str() {
    auto n = pod<std::uint32_t>();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  struct Array {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
  };
  Array array() {
    Array a;
    a.name = str();
    auto rank = pod<std::uint32_t>();
    if (rank < 1 || rank > 2) throw CheckpointCorruptError("bad array rank for '" + a.name + "'");
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      a.dims.push_back(pod<std::uint64_t>());
      count *= a.dims.back();
    }
    if (count > static_cast<std::uint64_t>(end_ - p_) / sizeof(double))
      throw CheckpointCorruptError("array '" + a.name + "' exceeds file size");
    a.values.resize(count);
    for (auto& v : a.values) v = pod<double>();
    return a;
  }
  bool done() const { return p_ == end_; }

 private:
  void need(std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n) throw CheckpointCorruptError("truncated checkpoint");
  }
  const char* p_;
  const char* end_;
};

inline std::string join(const std::vector<std::string>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + v[i];
  return s;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& t : split(s, ',')) out.push_back(std::stoi(t));
  return out;
}

inline std::string ints_to_string(const std::vector<int>& v) {
  std::vector<std::string> s;
  for (int i : v) s.push_back(std::to_string(i));
  return join(s, ',');
}

inline std::string exact(double v) {
  std::ostringstream o;
  o.precision(17);
  o << v;
  return o.str();
}

}  // namespace detail

inline std::string config_record(const ModelConfig& c) {
  std::ostringstream o;
  o << "input_dim=" << c.input_dim << "\n"
    << "token_dim=" << c.token_dim << "\n"
    << "feature_dim=" << c.feature_dim << "\n"
    << "image_hidden=" << detail::ints_to_string(c.image_hidden) << "\n"
    << "text_hidden=" << detail::ints_to_string(c.text_hidden) << "\n"
    << "prompt_len_visual=" << c.prompt_len_visual << "\n"
    << "prompt_len_text=" << c.prompt_len_text << "\n"
    << "temperature=" << detail::exact(c.temperature) << "\n"
    << "cone=" << detail::exact(c.cone) << "\n"
    << "attention_scale=" << detail::exact(c.attention_scale) << "\n"
    << "rng_seed=" << c.rng_seed << "\n";
  return o.str();
}

inline std::vector<char> serialize_checkpoint(const DualEncoderModel& m, const PromptParams& p,
                                              std::uint32_t format_version = kCheckpointVersion) {
  detail::Writer w;
  w.raw(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod<std::uint32_t>(format_version);
  std::string cfg = config_record(m.config);
  cfg += "original_classes=" + detail::join(m.vocab.original, ',') + "\n";
  w.pod<std::uint64_t>(cfg.size());
  w.raw(cfg.data(), cfg.size());

  std::uint32_t count = static_cast<std::uint32_t>(2 * (m.image.layers.size() + m.text.layers.size()) +
                                                   m.vocab.names().size() + 2 + p.context.size());
  w.pod<std::uint32_t>(count);
  auto mlp = [&w](const std::string& prefix, const Mlp& net) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      w.matrix(prefix + "/" + std::to_string(l) + "/W", net.layers[l].W);
      w.vector(prefix + "/" + std::to_string(l) + "/b", net.layers[l].b);
    }
  };
  mlp("image", m.image);
  mlp("text", m.text);
  for (const auto& name : m.vocab.names()) w.vector("vocab/" + name, m.vocab.embedding(name));
  w.matrix("prompt/visual", p.visual);
  w.matrix("prompt/text", p.text);
  for (const auto& [k, v] : p.context) w.vector("context/" + k, v);

  std::string& buf = w.buffer();
  std::uint64_t h = detail::fnv1a(buf.data(), buf.size());
  w.pod<std::uint64_t>(h);
  return {buf.begin(), buf.end()};
}

inline std::pair<DualEncoderModel, PromptParams> deserialize_checkpoint(const std::vector<char>& bytes) {
  constexpr std::size_t header = sizeof(kCheckpointMagic) + sizeof(std::uint32_t);
  if (bytes.size() < header + sizeof(std::uint64_t) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw CheckpointCorruptError("not a swapwm checkpoint (bad magic)");
  detail::Reader head(bytes.data() + sizeof(kCheckpointMagic), sizeof(std::uint32_t));
  auto version = head.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  const std::size_t body = bytes.size() - sizeof(std::uint64_t);
  detail::Reader tail(bytes.data() + body, sizeof(std::uint64_t));
  if (tail.pod<std::uint64_t>() != detail::fnv1a(bytes.data(), body))
    throw CheckpointCorruptError("checkpoint checksum mismatch");

  detail::Reader r(bytes.data() + header, body - header);
  auto cfg_len = r.pod<std::uint64_t>();
  if (cfg_len > body) throw CheckpointCorruptError("config record exceeds file size");
  std::string cfg_text(static_cast<std::size_t>(cfg_len), '\0');
  for (auto& ch : cfg_text) ch = static_cast<char>(r.pod<std::uint8_t>());

  std::map<std::string, std::string> kv;
  for (const auto& line : detail::split(cfg_text, '\n')) {
    auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointCorruptError("malformed config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&kv](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw CheckpointCorruptError("config record missing key " + k);
    return it->second;
  };

  DualEncoderModel m;
  ModelConfig& c = m.config;
  try {
    c.input_dim = std::stoi(get("input_dim"));
    c.token_dim = std::stoi(get("token_dim"));
    c.feature_dim = std::stoi(get("feature_dim"));
    c.image_hidden = detail::parse_ints(get("image_hidden"));
    c.text_hidden = detail::parse_ints(get("text_hidden"));
    c.prompt_len_visual = std::stoi(get("prompt_len_visual"));
    c.prompt_len_text = std::stoi(get("prompt_len_text"));
    c.temperature = std::stod(get("temperature"));
    c.cone = std::stod(get("cone"));
    c.attention_scale = std::stod(get("attention_scale"));
    c.rng_seed = std::stoull(get("rng_seed"));
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const CheckpointError*>(&e)) throw;
    throw CheckpointCorruptError(std::string("bad config value: ") + e.what());
  }

  auto to_matrix = [](const detail::Reader::Array& a) {
    if (a.dims.size() != 2) throw CheckpointCorruptError("expected matrix for '" + a.name + "'");
    Eigen::MatrixXd mat(static_cast<Eigen::Index>(a.dims[0]), static_cast<Eigen::Index>(a.dims[1]));
    std::size_t i = 0;
    for (Eigen::Index rr = 0; rr < mat.rows(); ++rr)
      for (Eigen::Index cc = 0; cc < mat.cols(); ++cc) mat(rr, cc) = a.values[i++];
    return mat;
  };
  auto to_vector = [](const detail::Reader::Array& a) {
    if (a.dims.size() != 1) throw CheckpointCorruptError("expected vector for '" + a.name + "'");
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(a.values.data(), static_cast<Eigen::Index>(a.values.size())));
  };

  PromptParams p;
  auto count = r.pod<std::uint32_t>();
  const std::size_t n_image = c.image_hidden.size() + 1, n_text = c.text_hidden.size() + 1;
  m.image.layers.resize(n_image);
  m.text.layers.resize(n_text);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto a = r.array();
    auto parts = detail::split(a.name, '/');
    if (parts.size() == 3 && (parts[0] == "image" || parts[0] == "text")) {
      auto& layers = parts[0] == "image" ? m.image.layers : m.text.layers;
      std::size_t l = std::stoul(parts[1]);
      if (l >= layers.size()) throw CheckpointCorruptError("layer index out of range in '" + a.name + "'");
      if (parts[2] == "W") layers[l].W = to_matrix(a);
      else if (parts[2] == "b") layers[l].b = to_vector(a);
      else throw CheckpointCorruptError("unknown array '" + a.name + "'");
    } else if (a.name.rfind("vocab/", 0) == 0) {
      m.vocab.add(a.name.substr(6), to_vector(a));
    } else if (a.name == "prompt/visual") {
      p.visual = to_matrix(a);
    } else if (a.name == "prompt/text") {
      p.text = to_matrix(a);
    } else if (a.name.rfind("context/", 0) == 0) {
      p.context[a.name.substr(8)] = to_vector(a);
    } else {
      throw CheckpointCorruptError("unknown array '" + a.name + "'");
    }
  }
  if (!r.done()) throw CheckpointCorruptError("trailing bytes after arrays");
  m.vocab.original = detail::split(get("original_classes"), ',');
  for (const auto& name : m.vocab.original)
    if (!m.vocab.contains(name)) throw CheckpointCorruptError("original class without embedding: " + name);
  return {std::move(m), std::move(p)};
}

inline void save_checkpoint(const DualEncoderModel& m, const PromptParams& p, const std::string& path,
                            std::uint32_t format_version = kCheckpointVersion) {
  auto bytes = serialize_checkpoint(m, p, format_version);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed: " + path);
}

inline std::pair<DualEncoderModel, PromptParams> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace swapwm
