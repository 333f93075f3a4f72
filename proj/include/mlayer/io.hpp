#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlayer/model.hpp"

namespace mlayer {

/// File contents that do not match the expected on-disk format. Carries the
/// byte offset at which the problem was detected.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Shortest text that still round-trips a double exactly: 17 significant
/// digits.
inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Writes content to a temporary file in the destination directory and
/// renames it into place, so readers never observe a partial file.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  fs::path dir = path.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("atomic_write: cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw std::runtime_error("atomic_write: write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

// Minimal SHA-1, enough for content hashes. Not used for anything
// security-sensitive.
class Sha1 {
 public:
  void update(const unsigned char* data, std::size_t len) {
    total_ += len;
    while (len > 0) {
      std::size_t take = std::min<std::size_t>(64 - fill_, len);
      std::memcpy(buffer_ + fill_, data, take);
      fill_ += take;
      data += take;
      len -= take;
      if (fill_ == 64) {
        process(buffer_);
        fill_ = 0;
      }
    }
  }

  std::string hex_digest() {
    unsigned char pad[72] = {0x80};
    std::uint64_t bits = total_ * 8;
    std::size_t pad_len = (fill_ < 56) ? 56 - fill_ : 120 - fill_;
    unsigned char len_be[8];
    for (int i = 0; i < 8; ++i) len_be[i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update_raw(pad, pad_len);
    update_raw(len_be, 8);
    char out[41];
    for (int i = 0; i < 5; ++i)
      std::snprintf(out + 8 * i, 9, "%08x", h_[i]);
    return std::string(out, 40);
  }

 private:
  void update_raw(const unsigned char* data, std::size_t len) {
    while (len > 0) {
      std::size_t take = std::min<std::size_t>(64 - fill_, len);
      std::memcpy(buffer_ + fill_, data, take);
      fill_ += take;
      data += take;
      len -= take;
      if (fill_ == 64) {
        process(buffer_);
        fill_ = 0;
      }
    }
  }

  static std::uint32_t rol(std::uint32_t v, int s) { return (v << s) | (v >> (32 - s)); }

  void process(const unsigned char* block) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(block[4 * i]) << 24) | (std::uint32_t(block[4 * i + 1]) << 16) |
             (std::uint32_t(block[4 * i + 2]) << 8) | std::uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 80; ++i)
      w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20) {
        f = (b & c) | (~b & d);
        k = 0x5a827999;
      } else if (i < 40) {
        f = b ^ c ^ d;
        k = 0x6ed9eba1;
      } else if (i < 60) {
        f = (b & c) | (b & d) | (c & d);
        k = 0x8f1bbcdc;
      } else {
        f = b ^ c ^ d;
        k = 0xca62c1d6;
      }
      std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d;
      d = c;
      c = rol(b, 30);
      b = a;
      a = t;
    }
    h_[0] += a;
    h_[1] += b;
    h_[2] += c;
    h_[3] += d;
    h_[4] += e;
  }

  std::uint32_t h_[5] = {0x67452301, 0xefcdab89, 0x98badcfe, 0x10325476, 0xc3d2e1f0};
  unsigned char buffer_[64];
  std::size_t fill_ = 0;
  std::uint64_t total_ = 0;
};

}  // namespace detail

/// Hash of a byte string in git's blob format ("blob <len>\0" + content),
/// so `git hash-object <file>` reproduces it.
inline std::string git_blob_sha1(const std::string& content) {
  detail::Sha1 sha;
  std::string header = "blob " + std::to_string(content.size());
  sha.update(reinterpret_cast<const unsigned char*>(header.data()), header.size() + 1);
  sha.update(reinterpret_cast<const unsigned char*>(content.data()), content.size());
  return sha.hex_digest();
}

inline std::string file_sha1(const std::filesystem::path& path) {
  return git_blob_sha1(read_file(path));
}

namespace detail {

/// Tiny JSON emitter with explicit key order and %.17g floats, used for
/// every artifact whose bytes must be reproducible.
class JsonWriter {
 public:
  std::string str() const { return out_; }
  void begin_object() {
    comma();
    out_ += '{';
    first_ = true;
  }
  void end_object() { out_ += '}'; first_ = false; }
  void begin_array() {
    comma();
    out_ += '[';
    first_ = true;
  }
  void end_array() { out_ += ']'; first_ = false; }
  void key(const std::string& k) {
    comma();
    quote(k);
    out_ += ':';
    first_ = true;  // suppress comma before the value
  }
  void value(double v) {
    comma();
    out_ += format_double(v);
  }
  void value(long long v) {
    comma();
    out_ += std::to_string(v);
  }
  void value(int v) { value(static_cast<long long>(v)); }
  void value(const std::string& s) {
    comma();
    quote(s);
  }
  void value_array(const std::vector<double>& a) {
    comma();
    out_ += '[';
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i) out_ += ',';
      out_ += format_double(a[i]);
    }
    out_ += ']';
  }
  void value_array(const std::vector<int>& a) {
    comma();
    out_ += '[';
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (i) out_ += ',';
      out_ += std::to_string(a[i]);
    }
    out_ += ']';
  }

 private:
  void comma() {
    if (!first_) out_ += ',';
    first_ = false;
  }
  void quote(const std::string& s) {
    out_ += '"';
    for (char c : s) {
      switch (c) {
        case '"': out_ += "\\\""; break;
        case '\\': out_ += "\\\\"; break;
        case '\n': out_ += "\\n"; break;
        case '\t': out_ += "\\t"; break;
        default: out_ += c;
      }
    }
    out_ += '"';
  }
  std::string out_;
  bool first_ = true;
};

inline void write_tensor(JsonWriter& w, const std::string& name,
                         const std::vector<int>& shape, const std::vector<double>& data) {
  w.key(name);
  w.begin_object();
  w.key("shape");
  w.value_array(shape);
  w.key("data");
  w.value_array(data);
  w.end_object();
}

}  // namespace detail

/// Location of one compiled-polynomial monomial inside exp(M): the block
/// offset plus the cell within the block, and the readout scale that
/// recovers the monomial from that cell.
struct TermCell {
  int block_offset = 0;
  int row = 0;
  int col = 0;
  double scale = 1.0;  // coefficient times (block size - 1)!
};

inline std::string model_to_json(const MLayerParams& params,
                                 const std::vector<TermCell>* term_cells = nullptr) {
  const Dims& d = params.dims;
  detail::JsonWriter w;
  w.begin_object();
  w.key("version");
  w.value(1);
  w.key("dims");
  w.begin_object();
  w.key("p"); w.value(d.p);
  w.key("d"); w.value(d.d);
  w.key("n"); w.value(d.n);
  w.key("h"); w.value(d.h);
  w.end_object();
  w.key("tensors");
  w.begin_object();
  detail::write_tensor(w, "U", {d.d, d.p}, params.u.data());
  detail::write_tensor(w, "u0", {d.d}, params.u0);
  std::vector<double> t_flat;
  t_flat.reserve(static_cast<std::size_t>(d.d) * d.n * d.n);
  for (const auto& m : params.t) t_flat.insert(t_flat.end(), m.data().begin(), m.data().end());
  detail::write_tensor(w, "T", {d.d, d.n, d.n}, t_flat);
  detail::write_tensor(w, "B", {d.n, d.n}, params.b.data());
  std::vector<double> s_flat;
  s_flat.reserve(static_cast<std::size_t>(d.h) * d.n * d.n);
  for (const auto& m : params.s) s_flat.insert(s_flat.end(), m.data().begin(), m.data().end());
  detail::write_tensor(w, "S", {d.h, d.n, d.n}, s_flat);
  detail::write_tensor(w, "V", {d.h}, params.v);
  w.end_object();
  if (term_cells) {
    w.key("term_cells");
    w.begin_array();
    for (const TermCell& c : *term_cells) {
      w.begin_object();
      w.key("offset"); w.value(c.block_offset);
      w.key("row"); w.value(c.row);
      w.key("col"); w.value(c.col);
      w.key("scale"); w.value(c.scale);
      w.end_object();
    }
    w.end_array();
  }
  w.end_object();
  std::string s = w.str();
  s += '\n';
  return s;
}

inline void save_model(const MLayerParams& params, const std::filesystem::path& path,
                       const std::vector<TermCell>* term_cells = nullptr) {
  atomic_write(path, model_to_json(params, term_cells));
}

namespace detail {

inline std::vector<double> read_tensor(const nlohmann::json& tensors, const std::string& name,
                                       const std::vector<int>& expected_shape) {
  if (!tensors.contains(name))
    throw FormatError("model json: missing tensor " + name, 0);
  const auto& t = tensors.at(name);
  std::vector<int> shape = t.at("shape").get<std::vector<int>>();
  if (shape != expected_shape)
    throw FormatError("model json: tensor " + name + " has unexpected shape", 0);
  std::vector<double> data = t.at("data").get<std::vector<double>>();
  std::size_t expected = 1;
  for (int s : expected_shape) expected *= static_cast<std::size_t>(s);
  if (data.size() != expected)
    throw FormatError("model json: tensor " + name + " has wrong element count", 0);
  return data;
}

}  // namespace detail

inline MLayerParams model_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.at("version").get<int>() != 1)
    throw FormatError("model json: unsupported version", 0);
  Dims dims;
  dims.p = j.at("dims").at("p").get<int>();
  dims.d = j.at("dims").at("d").get<int>();
  dims.n = j.at("dims").at("n").get<int>();
  dims.h = j.at("dims").at("h").get<int>();
  dims.validate();
  const auto& tensors = j.at("tensors");
  MLayerParams p = MLayerParams::zeros(dims);
  p.u = Matrix(dims.d, dims.p, detail::read_tensor(tensors, "U", {dims.d, dims.p}));
  p.u0 = detail::read_tensor(tensors, "u0", {dims.d});
  std::vector<double> t_flat = detail::read_tensor(tensors, "T", {dims.d, dims.n, dims.n});
  const std::size_t nn = static_cast<std::size_t>(dims.n) * dims.n;
  for (int a = 0; a < dims.d; ++a)
    p.t[a] = Matrix(dims.n, dims.n,
                    std::vector<double>(t_flat.begin() + a * nn, t_flat.begin() + (a + 1) * nn));
  p.b = Matrix(dims.n, dims.n, detail::read_tensor(tensors, "B", {dims.n, dims.n}));
  std::vector<double> s_flat = detail::read_tensor(tensors, "S", {dims.h, dims.n, dims.n});
  for (int m = 0; m < dims.h; ++m)
    p.s[m] = Matrix(dims.n, dims.n,
                    std::vector<double>(s_flat.begin() + m * nn, s_flat.begin() + (m + 1) * nn));
  p.v = detail::read_tensor(tensors, "V", {dims.h});
  return p;
}

inline MLayerParams load_model(const std::filesystem::path& path) {
  return model_from_json(read_file(path));
}

inline std::optional<std::vector<TermCell>> load_term_cells(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path));
  if (!j.contains("term_cells")) return std::nullopt;
  std::vector<TermCell> cells;
  for (const auto& c : j.at("term_cells")) {
    TermCell cell;
    cell.block_offset = c.at("offset").get<int>();
    cell.row = c.at("row").get<int>();
    cell.col = c.at("col").get<int>();
    cell.scale = c.at("scale").get<double>();
    cells.push_back(cell);
  }
  return cells;
}

/// A record of how an artifact was produced, written beside it.
struct RunManifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;  // paths; hashes computed at write time
  std::string timestamp_utc;
};

inline void write_manifest(const RunManifest& m, const std::filesystem::path& path) {
  detail::JsonWriter w;
  w.begin_object();
  w.key("command");
  w.value(m.command);
  w.key("seed");
  w.value(static_cast<long long>(m.seed));
  w.key("config");
  w.begin_object();
  for (const auto& [k, v] : m.config) {
    w.key(k);
    w.value(v);
  }
  w.end_object();
  w.key("inputs");
  w.begin_array();
  for (const auto& p : m.inputs) w.value(p);
  w.end_array();
  w.key("outputs");
  w.begin_array();
  for (const auto& p : m.outputs) {
    w.begin_object();
    w.key("path");
    w.value(p);
    w.key("sha1");
    w.value(std::filesystem::exists(p) ? file_sha1(p) : std::string("missing"));
    w.end_object();
  }
  w.end_array();
  w.key("timestamp_utc");
  w.value(m.timestamp_utc);
  w.end_object();
  atomic_write(path, w.str() + "\n");
}

}  // namespace mlayer
