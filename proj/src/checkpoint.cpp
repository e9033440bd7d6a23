#include "stnerf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "stnerf/error.hpp"
#include "stnerf/json_util.hpp"

namespace stnerf {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'T', 'N', 'E', 'R', 'F', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end, std::string source)
      : bytes_(bytes), end_(end), source_(std::move(source)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (end_ - pos_ < n) throw ParseError(source_ + ": truncated checkpoint while reading " + what);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string source_;
};

json network_shape(const MlpParams<float>& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"in", l.in()}, {"out", l.out()}, {"activation", static_cast<int>(l.activation)}});
  }
  return {{"input_width", m.input_width}, {"skips", m.skip_layers}, {"layers", layers}};
}

MlpParams<float> network_from_shape(const json& j, const std::string& source) {
  MlpParams<float> m;
  m.input_width = json_field<int>(j, "input_width", source);
  m.skip_layers = json_field<std::vector<int>>(j, "skips", source);
  for (const auto& l : json_field<json>(j, "layers", source)) {
    DenseLayer<float> d;
    const int in = json_field<int>(l, "in", source);
    const int out = json_field<int>(l, "out", source);
    const int act = json_field<int>(l, "activation", source);
    if (in <= 0 || out <= 0 || act < 0 || act > 3) throw ParseError(source + ": invalid layer shape in entity table");
    d.activation = static_cast<Activation>(act);
    d.weight.resize(out, in);
    d.bias.assign(out, 0.0f);
    m.layers.push_back(std::move(d));
  }
  try {
    m.validate();
  } catch (const ShapeError& e) {
    throw ParseError(source + ": entity table shapes do not chain (" + e.what() + ")");
  }
  return m;
}

}  // namespace

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) {
  std::uint64_t h = 14695981039346656037ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

int SceneModel::layer_index(int entity_id) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].entity_id == entity_id) return static_cast<int>(i);
  return -1;
}

const StNerfParams<float>& SceneModel::layer(int entity_id) const {
  const int i = layer_index(entity_id);
  if (i < 0) throw InvalidInput("scene has no layer " + std::to_string(entity_id));
  return layers[i];
}

const BoundingBoxTrack& SceneModel::track(int entity_id) const {
  const int i = layer_index(entity_id);
  if (i < 0) throw InvalidInput("scene has no layer " + std::to_string(entity_id));
  return tracks[i];
}

void SceneModel::validate() const {
  if (layers.size() != tracks.size()) throw InvalidInput("scene: layer and box track counts differ");
  if (num_frames < 1) throw InvalidInput("scene: frame count must be at least 1");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (tracks[i].entity_id != layers[i].entity_id) throw InvalidInput("scene: box track order differs from layers");
    if (static_cast<int>(tracks[i].boxes.size()) != num_frames) {
      throw InvalidInput("scene: box track of entity " + std::to_string(tracks[i].entity_id) +
                         ": frame count mismatch");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (layers[j].entity_id == layers[i].entity_id) {
        throw InvalidInput("scene: duplicate layer id " + std::to_string(layers[i].entity_id));
      }
    }
  }
}

json field_config_to_json(const FieldConfig& c) {
  return {{"encoding",
           {{"position", c.encoding.num_frequencies_position},
            {"direction", c.encoding.num_frequencies_direction},
            {"time", c.encoding.num_frequencies_time},
            {"include_input", c.encoding.include_input}}},
          {"deform_hidden", c.deform_hidden},
          {"deform_skips", c.deform_skips},
          {"trunk_hidden", c.trunk_hidden},
          {"trunk_skips", c.trunk_skips},
          {"color_hidden", c.color_hidden},
          {"use_deform", c.use_deform},
          {"time_in_radiance", c.time_in_radiance},
          {"share_coarse_fine", c.share_coarse_fine}};
}

FieldConfig field_config_from_json(const json& j, const std::string& source) {
  FieldConfig c;
  const json e = json_field<json>(j, "encoding", source);
  c.encoding.num_frequencies_position = json_field<int>(e, "position", source);
  c.encoding.num_frequencies_direction = json_field<int>(e, "direction", source);
  c.encoding.num_frequencies_time = json_field<int>(e, "time", source);
  c.encoding.include_input = json_field<bool>(e, "include_input", source);
  c.deform_hidden = json_field<std::vector<int>>(j, "deform_hidden", source);
  c.deform_skips = json_field<std::vector<int>>(j, "deform_skips", source);
  c.trunk_hidden = json_field<std::vector<int>>(j, "trunk_hidden", source);
  c.trunk_skips = json_field<std::vector<int>>(j, "trunk_skips", source);
  c.color_hidden = json_field<int>(j, "color_hidden", source);
  c.use_deform = json_field<bool>(j, "use_deform", source);
  c.time_in_radiance = json_field<bool>(j, "time_in_radiance", source);
  c.share_coarse_fine = json_field<bool>(j, "share_coarse_fine", source);
  if (c.trunk_hidden.empty()) throw ParseError(source + ": field 'trunk_hidden' must not be empty");
  return c;
}

std::vector<std::uint8_t> encode_checkpoint(const SceneModel& scene) {
  scene.validate();
  json entities = json::array();
  for (std::size_t i = 0; i < scene.layers.size(); ++i) {
    const auto& l = scene.layers[i];
    json nets = json::array();
    for (const auto* m : l.networks()) nets.push_back(network_shape(*m));
    entities.push_back({{"id", l.entity_id},
                        {"config", field_config_to_json(l.config)},
                        {"track", scene.tracks[i].entity_id},
                        {"networks", nets}});
  }
  const json header = {{"num_frames", scene.num_frames},
                       {"fps", scene.fps},
                       {"cameras", cameras_to_json(scene.cameras)},
                       {"boxes", boxes_to_json(scene.tracks)},
                       {"entities", entities},
                       {"metadata", scene.metadata}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& l : scene.layers) {
    for (const auto* m : l.networks()) {
      for (const auto& layer : m->layers) {
        for (float v : layer.weight.storage()) put(out, v);
        for (float v : layer.bias) put(out, v);
      }
    }
  }
  put(out, fnv1a(out.data(), out.size()));
  return out;
}

SceneModel decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 8 + 4 + 8 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw ParseError(source + ": not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + body, 8);
  if (stored != fnv1a(bytes.data(), body)) throw ParseError(source + ": checksum mismatch");

  Reader in(bytes, body, source);
  in.take(8, "magic");
  const auto version = in.get<std::uint32_t>("version");
  if (version != kVersion) throw ParseError(source + ": unsupported checkpoint version " + std::to_string(version));
  const auto length = in.get<std::uint64_t>("header length");
  const auto* text = in.take(length, "header");
  json header;
  try {
    header = json::parse(text, text + length);
  } catch (const json::exception& e) {
    throw ParseError(source + ": header is not valid JSON (" + e.what() + ")");
  }

  SceneModel scene;
  scene.num_frames = json_field<int>(header, "num_frames", source);
  scene.fps = json_field<double>(header, "fps", source);
  scene.cameras = cameras_from_json(json_field<json>(header, "cameras", source), source);
  scene.tracks = boxes_from_json(json_field<json>(header, "boxes", source), source);
  scene.metadata = json_field<json>(header, "metadata", source);
  for (const auto& e : json_field<json>(header, "entities", source)) {
    StNerfParams<float> p;
    p.entity_id = json_field<int>(e, "id", source);
    p.config = field_config_from_json(json_field<json>(e, "config", source), source);
    auto nets = p.networks();
    const auto shapes = json_field<json>(e, "networks", source);
    if (shapes.size() != nets.size()) {
      throw ParseError(source + ": entity " + std::to_string(p.entity_id) + " lists the wrong number of networks");
    }
    for (std::size_t k = 0; k < nets.size(); ++k) *nets[k] = network_from_shape(shapes[k], source);
    scene.layers.push_back(std::move(p));
  }
  for (auto& l : scene.layers) {
    for (auto* m : l.networks()) {
      for (auto& layer : m->layers) {
        for (float& v : layer.weight.storage()) v = in.get<float>("parameters");
        for (float& v : layer.bias) v = in.get<float>("parameters");
      }
    }
  }
  if (in.position() != body) throw ParseError(source + ": trailing bytes after parameter blobs");
  try {
    scene.validate();
  } catch (const InvalidInput& e) {
    throw ParseError(source + ": " + e.what());
  }
  return scene;
}

void save_checkpoint(const SceneModel& scene, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(scene);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path.string());
}

SceneModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, path.string());
}

}  // namespace stnerf
