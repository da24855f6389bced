#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tgqn/scene/scene_forge.hpp"

namespace tgqn::scene {

// Shard container for posed image sets. Layout (little-endian):
//   magic "TGQN", version byte 0x01
//   u32 header length, then header text ("key=value" lines)
//   per scene: poses float32 [V,5] as (x, y, z, yaw, pitch),
//              images uint8 [V,H,W,3] with value = round(255 * v)
struct ShardHeader {
  int image_size = 0;
  int views_per_scene = 0;
  int num_scenes = 0;
  CameraMode camera_mode = CameraMode::kRing;
  std::int64_t seed = 0;
};

struct StoredScene {
  std::vector<PoseSpec> poses;
  std::vector<std::uint8_t> pixels;  // V*H*W*3
};

struct Shard {
  ShardHeader header;
  std::vector<StoredScene> scenes;

  Frame frame(int scene, int view) const {
    const int hw = header.image_size;
    Frame f({hw, hw, 3});
    const std::size_t stride = static_cast<std::size_t>(hw) * hw * 3;
    const std::uint8_t* src = scenes[scene].pixels.data() + view * stride;
    for (std::size_t i = 0; i < stride; ++i)
      f[i] = static_cast<float>(src[i]) / 255.0f;
    return f;
  }
};

inline std::uint8_t quantize_pixel(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

namespace detail {

constexpr char kMagic[4] = {'T', 'G', 'Q', 'N'};
constexpr std::uint8_t kVersion = 0x01;

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Cursor {
  const std::uint8_t* p;
  std::size_t left;
  const std::string& path;

  void need(std::size_t n, const char* what) const {
    if (left < n)
      throw std::runtime_error("shard '" + path + "': truncated " + what);
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    p += 4;
    left -= 4;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

inline std::string header_text(const ShardHeader& h) {
  std::ostringstream os;
  os << "image_size=" << h.image_size << "\n"
     << "views_per_scene=" << h.views_per_scene << "\n"
     << "num_scenes=" << h.num_scenes << "\n"
     << "camera_mode=" << camera_mode_name(h.camera_mode) << "\n"
     << "seed=" << h.seed << "\n";
  return os.str();
}

inline ShardHeader parse_header(const std::string& text,
                                const std::string& path) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("shard '" + path + "': bad header line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  for (const char* key :
       {"image_size", "views_per_scene", "num_scenes", "camera_mode", "seed"})
    if (!kv.count(key))
      throw std::runtime_error("shard '" + path + "': header missing " +
                               std::string(key));
  ShardHeader h;
  h.image_size = std::stoi(kv["image_size"]);
  h.views_per_scene = std::stoi(kv["views_per_scene"]);
  h.num_scenes = std::stoi(kv["num_scenes"]);
  h.camera_mode = camera_mode_from(kv["camera_mode"]);
  h.seed = std::stoll(kv["seed"]);
  return h;
}

}  // namespace detail

inline std::string encode_shard(const Shard& shard) {
  std::string out;
  out.append(detail::kMagic, 4);
  out.push_back(static_cast<char>(detail::kVersion));
  const std::string header = detail::header_text(shard.header);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  const ShardHeader& h = shard.header;
  const std::size_t img_bytes =
      static_cast<std::size_t>(h.views_per_scene) * h.image_size * h.image_size * 3;
  for (const auto& scene : shard.scenes) {
    if (static_cast<int>(scene.poses.size()) != h.views_per_scene ||
        scene.pixels.size() != img_bytes)
      throw std::runtime_error("shard: scene record does not match header");
    for (const auto& p : scene.poses) {
      detail::put_f32(out, static_cast<float>(p.position.x));
      detail::put_f32(out, static_cast<float>(p.position.y));
      detail::put_f32(out, static_cast<float>(p.position.z));
      detail::put_f32(out, static_cast<float>(p.yaw));
      detail::put_f32(out, static_cast<float>(p.pitch));
    }
    out.append(reinterpret_cast<const char*>(scene.pixels.data()),
               scene.pixels.size());
  }
  return out;
}

inline void write_shard(const Shard& shard, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("shard '" + path + "': cannot open for write");
  const std::string bytes = encode_shard(shard);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("shard '" + path + "': write failed");
}

inline Shard read_shard(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("shard '" + path + "': cannot open");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  detail::Cursor cur{reinterpret_cast<const std::uint8_t*>(bytes.data()),
                     bytes.size(), path};
  cur.need(5, "magic");
  if (std::memcmp(cur.p, detail::kMagic, 4) != 0)
    throw std::runtime_error("shard '" + path + "': bad magic");
  if (cur.p[4] != detail::kVersion)
    throw std::runtime_error("shard '" + path + "': unsupported version");
  cur.p += 5;
  cur.left -= 5;
  const std::uint32_t header_len = cur.u32();
  cur.need(header_len, "header");
  const std::string header_txt(reinterpret_cast<const char*>(cur.p), header_len);
  cur.p += header_len;
  cur.left -= header_len;

  Shard shard;
  shard.header = detail::parse_header(header_txt, path);
  const ShardHeader& h = shard.header;
  const std::size_t img_bytes =
      static_cast<std::size_t>(h.views_per_scene) * h.image_size * h.image_size * 3;
  for (int s = 0; s < h.num_scenes; ++s) {
    StoredScene scene;
    scene.poses.resize(static_cast<std::size_t>(h.views_per_scene));
    for (auto& p : scene.poses) {
      p.position.x = cur.f32();
      p.position.y = cur.f32();
      p.position.z = cur.f32();
      p.yaw = cur.f32();
      p.pitch = cur.f32();
    }
    cur.need(img_bytes, "image block");
    scene.pixels.assign(cur.p, cur.p + img_bytes);
    cur.p += img_bytes;
    cur.left -= img_bytes;
    shard.scenes.push_back(std::move(scene));
  }
  if (cur.left != 0)
    throw std::runtime_error("shard '" + path + "': trailing bytes");
  return shard;
}

// Renders and stores a full dataset; pure function of (seed, config).
inline Shard generate_dataset(int num_scenes, int views_per_scene,
                              CameraMode camera_mode, std::int64_t seed,
                              int image_size,
                              const GeneratorConfig& cfg = {},
                              const RenderOptions& opts = {}) {
  if (num_scenes < 1 || views_per_scene < 1 || image_size < 1)
    throw std::invalid_argument("generate_dataset: bad counts");
  Shard shard;
  shard.header = {image_size, views_per_scene, num_scenes, camera_mode, seed};
  const Rng base(static_cast<std::uint64_t>(seed));
  for (int s = 0; s < num_scenes; ++s) {
    Rng scene_rng = base.derive("dataset-scene").derive(static_cast<std::uint64_t>(s));
    const std::int64_t scene_seed =
        static_cast<std::int64_t>(scene_rng.bits() >> 1);
    const SceneSpec scene = sample_scene(scene_seed, cfg);
    StoredScene rec;
    const std::size_t frame_bytes =
        static_cast<std::size_t>(image_size) * image_size * 3;
    rec.pixels.reserve(frame_bytes * static_cast<std::size_t>(views_per_scene));
    for (int v = 0; v < views_per_scene; ++v) {
      Rng pose_rng = scene_rng.derive("pose").derive(static_cast<std::uint64_t>(v));
      const std::int64_t pose_seed =
          static_cast<std::int64_t>(pose_rng.bits() >> 1);
      const PoseSpec pose = sample_pose(pose_seed, scene, camera_mode, cfg);
      rec.poses.push_back(pose);
      const Frame f = render_view(scene, pose, image_size, opts);
      for (std::size_t i = 0; i < f.size(); ++i)
        rec.pixels.push_back(quantize_pixel(f[i]));
    }
    shard.scenes.push_back(std::move(rec));
  }
  return shard;
}

inline void generate_dataset_file(int num_scenes, int views_per_scene,
                                  CameraMode camera_mode, std::int64_t seed,
                                  int image_size, const std::string& out_path,
                                  const GeneratorConfig& cfg = {},
                                  const RenderOptions& opts = {}) {
  write_shard(generate_dataset(num_scenes, views_per_scene, camera_mode, seed,
                               image_size, cfg, opts),
              out_path);
}

}  // namespace tgqn::scene
