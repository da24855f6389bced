#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "tgqn/core/param_store.hpp"
#include "tgqn/pipeline/config.hpp"

namespace tgqn::pipeline {

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MetricHistoryEntry {
  long long step = 0;
  double l1 = 0, l2 = 0, ssim = 0;
};

// Checkpoint layout (little-endian):
//   u32 manifest length, manifest text (config snapshot, global step, sigma,
//   metric history)
//   u32 tensor count, then per tensor:
//     u32 name length, UTF-8 name, dtype byte (1 = f32, 2 = f64),
//     u8 rank, u32 dims[rank], payload
//   u32 CRC32 of everything before it
template <typename T>
struct Checkpoint {
  RunConfig config;
  long long global_step = 0;
  double sigma = 0;
  std::vector<MetricHistoryEntry> history;
  ParamStore<T> params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename T>
constexpr std::uint8_t dtype_byte() {
  return sizeof(T) == 4 ? 1 : 2;
}

struct Reader {
  const std::uint8_t* p;
  std::size_t left;

  void need(std::size_t n) const {
    if (left < n) throw IntegrityError("checkpoint: truncated record");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    const std::uint8_t v = *p;
    ++p;
    --left;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

inline std::string history_text(const std::vector<MetricHistoryEntry>& h) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (i) os << ";";
    os << h[i].step << ":" << h[i].l1 << ":" << h[i].l2 << ":" << h[i].ssim;
  }
  return os.str();
}

inline std::vector<MetricHistoryEntry> parse_history(const std::string& text) {
  std::vector<MetricHistoryEntry> out;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    if (item.empty()) continue;
    MetricHistoryEntry e;
    if (std::sscanf(item.c_str(), "%lld:%lf:%lf:%lf", &e.step, &e.l1, &e.l2,
                    &e.ssim) != 4)
      throw IntegrityError("checkpoint: bad metric history entry: " + item);
    out.push_back(e);
  }
  return out;
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ck) {
  std::ostringstream manifest;
  manifest.precision(17);
  for (const auto& key : config_keys())
    manifest << "config." << key << "=" << config_get(ck.config, key) << "\n";
  manifest << "global_step=" << ck.global_step << "\n";
  manifest << "sigma=" << ck.sigma << "\n";
  manifest << "metric_history=" << detail::history_text(ck.history) << "\n";
  const std::string mtext = manifest.str();

  std::string out;
  detail::put_u32(out, static_cast<std::uint32_t>(mtext.size()));
  out += mtext;
  detail::put_u32(out, static_cast<std::uint32_t>(ck.params.count()));
  for (const auto& [name, tensor] : ck.params) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(detail::dtype_byte<T>()));
    out.push_back(static_cast<char>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i)
      detail::put_u32(out, static_cast<std::uint32_t>(tensor.dim(i)));
    const std::size_t bytes = tensor.size() * sizeof(T);
    const std::size_t base = out.size();
    out.resize(base + bytes);
    std::memcpy(out.data() + base, tensor.data(), bytes);
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(out.data()),
            static_cast<uInt>(out.size())));
  detail::put_u32(out, crc);
  return out;
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw std::runtime_error("checkpoint '" + path + "': cannot open for write");
  const std::string bytes = encode_checkpoint(ck);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("checkpoint '" + path + "': write failed");
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw IntegrityError("checkpoint: file too small");
  const std::size_t body = bytes.size() - 4;
  const auto want_crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(bytes.data()),
            static_cast<uInt>(body)));
  detail::Reader tail{reinterpret_cast<const std::uint8_t*>(bytes.data()) + body,
                      4};
  if (tail.u32() != want_crc)
    throw IntegrityError("checkpoint: CRC32 mismatch (corrupt or truncated)");

  detail::Reader r{reinterpret_cast<const std::uint8_t*>(bytes.data()), body};
  const std::uint32_t mlen = r.u32();
  const std::string manifest = r.str(mlen);

  Checkpoint<T> ck;
  std::istringstream ms(manifest);
  std::string line;
  while (std::getline(ms, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IntegrityError("checkpoint: bad manifest line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key.rfind("config.", 0) == 0)
      config_set(ck.config, key.substr(7), value);
    else if (key == "global_step")
      ck.global_step = std::stoll(value);
    else if (key == "sigma")
      ck.sigma = std::stod(value);
    else if (key == "metric_history")
      ck.history = detail::parse_history(value);
    else
      throw IntegrityError("checkpoint: unknown manifest key: " + key);
  }

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype != detail::dtype_byte<T>())
      throw IntegrityError("checkpoint: dtype mismatch for tensor " + name);
    const std::uint8_t rank = r.u8();
    std::vector<int> dims;
    for (int d = 0; d < rank; ++d) dims.push_back(static_cast<int>(r.u32()));
    Tensor<T> t(dims);
    const std::size_t bytes_n = t.size() * sizeof(T);
    r.need(bytes_n);
    std::memcpy(t.data(), r.p, bytes_n);
    r.p += bytes_n;
    r.left -= bytes_n;
    ck.params.add(name, std::move(t));
  }
  if (r.left != 0) throw IntegrityError("checkpoint: trailing bytes");
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint '" + path + "': cannot open");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  try {
    return decode_checkpoint<T>(bytes);
  } catch (const IntegrityError& e) {
    throw IntegrityError(std::string(e.what()) + " [" + path + "]");
  }
}

// Field-level diff over the architecture-determining keys.
inline void validate_checkpoint_config(const RunConfig& loaded,
                                       const RunConfig& active) {
  std::ostringstream diff;
  for (const auto& key : model_shape_keys()) {
    const std::string a = config_get(loaded, key);
    const std::string b = config_get(active, key);
    if (a != b)
      diff << "  " << key << ": checkpoint=" << a << " active=" << b << "\n";
  }
  const std::string d = diff.str();
  if (!d.empty())
    throw ConfigMismatchError("checkpoint/config mismatch:\n" + d);
}

}  // namespace tgqn::pipeline
