#include "ddtrl/data_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "ddtrl/error.hpp"
#include "json.hpp"

namespace ddtrl {

using nlohmann::json;

// ------------------------------------------------------------------ files

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string fnv1a_hex(const std::string& text) {
  return fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ------------------------------------------------------------------ MNIST

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t offset, const char* what) {
  if (offset + 4 > b.size()) {
    std::ostringstream os;
    os << what << ": truncated at offset " << b.size() << " (header needs " << offset + 4 << " bytes)";
    throw FormatError(os.str());
  }
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

}  // namespace

DigitPool parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels) {
  const std::uint32_t img_magic = read_be32(images, 0, "images");
  if (img_magic != kIdxImageMagic) {
    std::ostringstream os;
    os << "images: wrong magic 0x" << std::hex << std::setw(8) << std::setfill('0') << img_magic
       << " at offset 0 (expected 0x00000803)";
    throw FormatError(os.str());
  }
  const std::uint32_t lbl_magic = read_be32(labels, 0, "labels");
  if (lbl_magic != kIdxLabelMagic) {
    std::ostringstream os;
    os << "labels: wrong magic 0x" << std::hex << std::setw(8) << std::setfill('0') << lbl_magic
       << " at offset 0 (expected 0x00000801)";
    throw FormatError(os.str());
  }
  const std::uint32_t n_images = read_be32(images, 4, "images");
  const std::uint32_t rows = read_be32(images, 8, "images");
  const std::uint32_t cols = read_be32(images, 12, "images");
  const std::uint32_t n_labels = read_be32(labels, 4, "labels");
  if (rows != kDigitSide || cols != kDigitSide) {
    std::ostringstream os;
    os << "images: unsupported image size " << rows << "x" << cols << " at offset 8 (expected 28x28)";
    throw FormatError(os.str());
  }
  if (n_images != n_labels) {
    std::ostringstream os;
    os << "count mismatch: " << n_images << " images (offset 4) vs " << n_labels << " labels (offset 4)";
    throw FormatError(os.str());
  }
  const std::uint64_t img_bytes = 16 + std::uint64_t{n_images} * kDigitPixels;
  const std::uint64_t lbl_bytes = 8 + std::uint64_t{n_labels};
  if (images.size() < img_bytes) {
    std::ostringstream os;
    os << "images: truncated at offset " << images.size() << " (expected " << img_bytes << " bytes)";
    throw FormatError(os.str());
  }
  if (labels.size() < lbl_bytes) {
    std::ostringstream os;
    os << "labels: truncated at offset " << labels.size() << " (expected " << lbl_bytes << " bytes)";
    throw FormatError(os.str());
  }
  if (images.size() > img_bytes) {
    std::ostringstream os;
    os << "images: count mismatch, " << images.size() - img_bytes << " trailing bytes at offset " << img_bytes;
    throw FormatError(os.str());
  }
  if (labels.size() > lbl_bytes) {
    std::ostringstream os;
    os << "labels: count mismatch, " << labels.size() - lbl_bytes << " trailing bytes at offset " << lbl_bytes;
    throw FormatError(os.str());
  }
  DigitPool pool;
  pool.source = DigitPool::Source::MnistIdx;
  for (std::uint32_t k = 0; k < n_images; ++k) {
    const std::uint8_t label = labels[8 + k];
    if (label > 9) {
      std::ostringstream os;
      os << "labels: invalid label " << int{label} << " at offset " << 8 + k;
      throw FormatError(os.str());
    }
    Observation img(kDigitPixels);
    const std::uint8_t* src = images.data() + 16 + std::size_t{k} * kDigitPixels;
    for (std::size_t p = 0; p < kDigitPixels; ++p) img[p] = normalize_pixel(src[p]);
    pool.images[label].push_back(make_observation(std::move(img)));
  }
  return pool;
}

DigitPool load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_file_bytes(images);
  const auto lbl = read_file_bytes(labels);
  try {
    return parse_mnist_idx(img, lbl);
  } catch (const FormatError& e) {
    throw FormatError(images.string() + " / " + labels.string() + ": " + e.what());
  }
}

std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_mnist_idx(
    std::span<const std::vector<std::uint8_t>> images, std::span<const std::uint8_t> labels) {
  if (images.size() != labels.size()) throw ConfigError("encode_mnist_idx: image/label count mismatch");
  std::vector<std::uint8_t> img, lbl;
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(images.size()));
  put_be32(img, kDigitSide);
  put_be32(img, kDigitSide);
  for (const auto& im : images) {
    if (im.size() != kDigitPixels) throw ShapeError("encode_mnist_idx: images must be 28x28");
    img.insert(img.end(), im.begin(), im.end());
  }
  put_be32(lbl, kIdxLabelMagic);
  put_be32(lbl, static_cast<std::uint32_t>(labels.size()));
  lbl.insert(lbl.end(), labels.begin(), labels.end());
  return {std::move(img), std::move(lbl)};
}

// --------------------------------------------------------------- glyphs

namespace {

// Segment boxes (row0, row1, col0, col1), inclusive, on the 28x28 canvas.
struct Box {
  int r0, r1, c0, c1;
};
constexpr Box kSegments[7] = {
    {4, 5, 8, 19},     // a: top
    {4, 14, 18, 19},   // b: upper right
    {13, 23, 18, 19},  // c: lower right
    {22, 23, 8, 19},   // d: bottom
    {13, 23, 8, 9},    // e: lower left
    {4, 14, 8, 9},     // f: upper left
    {13, 14, 8, 19},   // g: middle
};
// bit k set = segment k lit, for digits 0..9
constexpr unsigned kDigitSegments[10] = {0x3F, 0x06, 0x5B, 0x4F, 0x66, 0x6D, 0x7D, 0x07, 0x7F, 0x6F};

void draw_glyph(int digit, int dy, int dx, Observation& img) {
  for (int s = 0; s < 7; ++s) {
    if (!(kDigitSegments[digit] & (1u << s))) continue;
    const Box& b = kSegments[s];
    for (int r = b.r0 + dy; r <= b.r1 + dy; ++r)
      for (int c = b.c0 + dx; c <= b.c1 + dx; ++c)
        if (r >= 0 && r < static_cast<int>(kDigitSide) && c >= 0 && c < static_cast<int>(kDigitSide))
          img[static_cast<std::size_t>(r) * kDigitSide + static_cast<std::size_t>(c)] = 1.0f;
  }
}

}  // namespace

Observation glyph_template(int digit) {
  if (digit < 0 || digit > 9) throw ConfigError("digit must be in 0..9");
  Observation img(kDigitPixels, 0.0f);
  draw_glyph(digit, 0, 0, img);
  return img;
}

DigitPool synthetic_glyphs(const std::vector<int>& digit_set, std::size_t variants_per_digit, std::mt19937_64& rng) {
  DigitPool pool;
  pool.source = DigitPool::Source::Synthetic;
  std::uniform_int_distribution<int> shift(-1, 1);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int d : digit_set) {
    if (d < 0 || d > 9) throw ConfigError("digit must be in 0..9");
    for (std::size_t v = 0; v < variants_per_digit; ++v) {
      Observation img(kDigitPixels, 0.0f);
      const int dy = shift(rng), dx = shift(rng);
      draw_glyph(d, dy, dx, img);
      for (float& p : img) p = static_cast<float>(std::clamp(static_cast<double>(p) + noise(rng), 0.0, 1.0));
      pool.images[static_cast<std::size_t>(d)].push_back(make_observation(std::move(img)));
    }
  }
  return pool;
}

// ------------------------------------------------------------ model JSON

namespace {

json shape_to_json(const InputShape& s) {
  if (s.is_image) return {{"kind", "image"}, {"channels", s.channels}, {"height", s.height}, {"width", s.width}};
  return {{"kind", "flat"}, {"size", s.size()}};
}

InputShape shape_from_json(const json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "flat") return InputShape::flat(j.at("size").get<std::size_t>());
  if (kind == "image")
    return InputShape::image(j.at("channels").get<std::size_t>(), j.at("height").get<std::size_t>(),
                             j.at("width").get<std::size_t>());
  throw FormatError("unknown input shape kind '" + kind + "'");
}

json spec_to_json(const TreeSpec& s) {
  json leaf;
  if (s.leaf_kind.type == LeafKind::Type::CRL)
    leaf = {{"type", "crl"}, {"rewards", s.leaf_kind.rewards}};
  else
    leaf = {{"type", "il"}, {"r_min", s.leaf_kind.rewards[0]}, {"r_max", s.leaf_kind.rewards[1]}};
  return {{"depth", s.depth},
          {"input_shape", shape_to_json(s.input)},
          {"node_kind", to_string(s.node_kind)},
          {"leaf_kind", leaf},
          {"temperature", s.temperature},
          {"conv",
           {{"kernel", s.conv.kernel},
            {"stride", s.conv.stride},
            {"out_channels", s.conv.out_channels},
            {"negative_slope", s.conv.negative_slope}}}};
}

TreeSpec spec_from_json(const json& j) {
  TreeSpec s;
  s.depth = j.at("depth").get<std::size_t>();
  s.input = shape_from_json(j.at("input_shape"));
  const auto nk = j.at("node_kind").get<std::string>();
  if (nk == "simple")
    s.node_kind = NodeKind::Simple;
  else if (nk == "sophisticated")
    s.node_kind = NodeKind::Sophisticated;
  else
    throw FormatError("unknown node_kind '" + nk + "'");
  const auto& lk = j.at("leaf_kind");
  const auto type = lk.at("type").get<std::string>();
  if (type == "crl")
    s.leaf_kind = LeafKind::crl(lk.at("rewards").get<std::vector<double>>());
  else if (type == "il")
    s.leaf_kind = LeafKind::il(lk.at("r_min").get<double>(), lk.at("r_max").get<double>());
  else
    throw FormatError("unknown leaf kind '" + type + "'");
  s.temperature = j.at("temperature").get<double>();
  const auto& cv = j.at("conv");
  s.conv.kernel = cv.at("kernel").get<std::size_t>();
  s.conv.stride = cv.at("stride").get<std::size_t>();
  s.conv.out_channels = cv.at("out_channels").get<std::size_t>();
  s.conv.negative_slope = cv.at("negative_slope").get<double>();
  return s;
}

}  // namespace

std::string model_to_json(const RewardDDT& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes())
    nodes.push_back(
        {{"conv_kernel", n.conv_kernel}, {"conv_bias", n.conv_bias}, {"weights", n.weights}, {"bias", n.bias}});
  json leaves = json::array();
  for (const auto& l : tree.leaves()) leaves.push_back({{"logits", l.logits}});
  json doc = {{"version", kModelFormatVersion},
              {"spec", spec_to_json(tree.spec())},
              {"internal_nodes", nodes},
              {"leaves", leaves}};
  return doc.dump(1) + "\n";
}

RewardDDT model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("model JSON does not parse: ") + e.what());
  }
  try {
    if (!doc.is_object() || !doc.contains("version")) throw FormatError("model JSON has no 'version' field");
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion)
      throw FormatError("unsupported model format version " + std::to_string(version) + " (this reader handles " +
                        std::to_string(kModelFormatVersion) + ")");
    TreeSpec spec = spec_from_json(doc.at("spec"));
    std::vector<InternalNodeParams> nodes;
    for (const auto& jn : doc.at("internal_nodes")) {
      InternalNodeParams n;
      n.conv_kernel = jn.at("conv_kernel").get<std::vector<double>>();
      n.conv_bias = jn.at("conv_bias").get<std::vector<double>>();
      n.weights = jn.at("weights").get<std::vector<double>>();
      n.bias = jn.at("bias").get<double>();
      nodes.push_back(std::move(n));
    }
    std::vector<LeafParams> leaves;
    for (const auto& jl : doc.at("leaves")) leaves.push_back({jl.at("logits").get<std::vector<double>>()});
    return RewardDDT(std::move(spec), std::move(nodes), std::move(leaves));
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed model JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model: ") + e.what());
  }
}

void save_model(const RewardDDT& tree, const std::filesystem::path& path) { write_text_file(path, model_to_json(tree)); }

RewardDDT load_model(const std::filesystem::path& path) {
  try {
    return model_from_json(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string adam_state_to_json(const AdamState& s) {
  json doc = {{"version", kModelFormatVersion},
              {"lr", s.config.lr},
              {"beta1", s.config.beta1},
              {"beta2", s.config.beta2},
              {"eps", s.config.eps},
              {"weight_decay", s.config.weight_decay},
              {"t", s.t},
              {"m", s.m},
              {"v", s.v}};
  return doc.dump() + "\n";
}

AdamState adam_state_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("version").get<int>() != kModelFormatVersion) throw FormatError("unsupported adam_state version");
    AdamState s;
    s.config = {doc.at("lr").get<double>(), doc.at("beta1").get<double>(), doc.at("beta2").get<double>(),
                doc.at("eps").get<double>(), doc.at("weight_decay").get<double>()};
    s.t = doc.at("t").get<std::uint64_t>();
    s.m = doc.at("m").get<std::vector<double>>();
    s.v = doc.at("v").get<std::vector<double>>();
    if (s.m.size() != s.v.size()) throw FormatError("adam_state moment lengths differ");
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed adam_state JSON: ") + e.what());
  }
}

void save_checkpoint(const RewardDDT& tree, const AdamState& adam, const std::filesystem::path& model_path) {
  save_model(tree, model_path);
  auto sidecar = model_path;
  sidecar.replace_extension(".adam_state.json");
  write_text_file(sidecar, adam_state_to_json(adam));
}

// --------------------------------------------------------- dataset (DDTP)

namespace {

class Writer {
 public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    // little-endian on disk
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    bytes.insert(bytes.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes_(b) {}
  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) {
      std::ostringstream os;
      os << "dataset truncated at offset " << bytes_.size() << " while reading " << what;
      throw FormatError(os.str());
    }
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void put_trajectory(Writer& w, const Trajectory& t, std::size_t dim) {
  if (t.true_rewards.size() != t.states.size())
    throw ConfigError("dataset trajectories must carry one true reward per state");
  w.put(static_cast<std::uint32_t>(t.states.size()));
  for (double r : t.true_rewards) w.put(r);
  for (const auto& s : t.states) {
    if (s->size() != dim) throw ShapeError("dataset observation has the wrong dimension");
    for (float v : *s) w.put(v);
  }
}

Trajectory get_trajectory(Reader& r, std::size_t dim) {
  Trajectory t;
  const auto n = r.get<std::uint32_t>("state count");
  t.true_rewards.reserve(n);
  for (std::uint32_t k = 0; k < n; ++k) t.true_rewards.push_back(r.get<double>("true reward"));
  for (std::uint32_t k = 0; k < n; ++k) {
    Observation obs(dim);
    for (auto& v : obs) v = r.get<float>("observation");
    t.states.push_back(make_observation(std::move(obs)));
  }
  return t;
}

}  // namespace

std::vector<std::uint8_t> encode_dataset(const PreferenceDataset& ds) {
  const auto& p = ds.provenance;
  const json manifest = {{"counts", {{"train", ds.train.size()}, {"validation", ds.validation.size()}}},
                         {"observation_shape", shape_to_json(p.observation_shape)},
                         {"labeler", p.labeler},
                         {"seed", p.seed},
                         {"environment", p.environment},
                         {"env_detail", p.env_detail},
                         {"trajectory_length", p.trajectory_length},
                         {"requested", {{"train", p.train_count}, {"validation", p.validation_count}}}};
  const std::string text = manifest.dump();
  Writer w;
  w.put_bytes("DDTP", 4);
  w.put(kDatasetFormatVersion);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  const std::size_t dim = p.observation_shape.size();
  for (const auto* split : {&ds.train, &ds.validation})
    for (const auto& pair : *split) {
      put_trajectory(w, pair.worse, dim);
      put_trajectory(w, pair.better, dim);
    }
  w.put(crc32_of(w.bytes));
  return std::move(w.bytes);
}

PreferenceDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "DDTP", 4) != 0) throw FormatError("not a DDTP dataset: wrong magic at offset 0");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kDatasetFormatVersion)
    throw FormatError("unsupported dataset format version " + std::to_string(version) + " (this reader handles " +
                      std::to_string(kDatasetFormatVersion) + ")");
  if (bytes.size() < 4 + 2 + 4 + 4) throw FormatError("dataset truncated at offset " + std::to_string(bytes.size()));
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.subspan(bytes.size() - 4));
  if (crc32_of(body) != tail.get<std::uint32_t>("crc"))
    throw FormatError("dataset checksum mismatch (CRC32 at offset " + std::to_string(bytes.size() - 4) + ")");

  Reader br(body);
  br.take(6, "header");
  const auto mlen = br.get<std::uint32_t>("manifest length");
  const auto mbytes = br.take(mlen, "manifest");
  PreferenceDataset ds;
  std::size_t n_train = 0, n_val = 0;
  try {
    const json m = json::parse(mbytes.begin(), mbytes.end());
    auto& p = ds.provenance;
    n_train = m.at("counts").at("train").get<std::size_t>();
    n_val = m.at("counts").at("validation").get<std::size_t>();
    p.observation_shape = shape_from_json(m.at("observation_shape"));
    p.labeler = m.at("labeler").get<std::string>();
    p.seed = m.at("seed").get<std::uint64_t>();
    p.environment = m.at("environment").get<std::string>();
    p.env_detail = m.at("env_detail").get<std::string>();
    p.trajectory_length = m.at("trajectory_length").get<std::size_t>();
    p.train_count = m.at("requested").at("train").get<std::size_t>();
    p.validation_count = m.at("requested").at("validation").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed dataset manifest: ") + e.what());
  }
  const std::size_t dim = ds.provenance.observation_shape.size();
  for (auto [split, count] : {std::pair{&ds.train, n_train}, std::pair{&ds.validation, n_val}}) {
    split->reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      Trajectory worse = get_trajectory(br, dim);
      Trajectory better = get_trajectory(br, dim);
      split->push_back({std::move(worse), std::move(better)});
    }
  }
  if (br.pos() != body.size())
    throw FormatError("dataset has " + std::to_string(body.size() - br.pos()) + " unexpected bytes at offset " +
                      std::to_string(br.pos()));
  return ds;
}

void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& path) {
  write_file_bytes(path, encode_dataset(ds));
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return decode_dataset(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// --------------------------------------------------------- gridworld JSON

std::string mdp_to_json(const GridworldMDP& mdp) {
  json doc = {{"version", 1},
              {"rows", mdp.rows()},
              {"cols", mdp.cols()},
              {"success_prob", mdp.success_prob()},
              {"digits", mdp.digits()},
              {"image_indices", mdp.image_indices()},
              {"pool", to_string(mdp.pool().source)}};
  return doc.dump() + "\n";
}

GridworldMDP mdp_from_json(const std::string& text, std::shared_ptr<const DigitPool> pool) {
  try {
    const json doc = json::parse(text);
    if (doc.at("version").get<int>() != 1) throw FormatError("unsupported gridworld JSON version");
    const std::size_t rows = doc.contains("rows") ? doc.at("rows").get<std::size_t>() : doc.at("size").get<std::size_t>();
    const std::size_t cols = doc.contains("cols") ? doc.at("cols").get<std::size_t>() : rows;
    return GridworldMDP(rows, cols, doc.at("digits").get<std::vector<int>>(),
                        doc.at("image_indices").get<std::vector<std::size_t>>(), std::move(pool),
                        doc.at("success_prob").get<double>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed gridworld JSON: ") + e.what());
  }
}

// ----------------------------------------------------------- CSV and PGM

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

void append_csv_row(const std::filesystem::path& path, const std::vector<std::string>& header,
                    const std::vector<std::string>& row) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open for appending: " + path.string());
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out << (k ? "," : "") << cells[k];
    out << "\n";
  };
  if (fresh) line(header);
  line(row);
  if (!out) throw IoError("write failed: " + path.string());
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_acc_soft,val_acc_argmax,penalty_value,wall_ms\n";
  for (const auto& m : metrics)
    os << m.epoch << "," << format_double(m.train_loss) << "," << format_double(m.val_loss) << ","
       << format_double(m.val_acc_soft) << "," << format_double(m.val_acc_argmax) << ","
       << format_double(m.penalty_value) << "," << format_double(m.wall_ms) << "\n";
  write_text_file(path, os.str());
}

void append_eval_csv(const std::filesystem::path& path, const EvalRow& row) {
  append_csv_row(path, {"run_id", "env", "reward_mode", "seed", "mean", "std", "iqm", "pct_of_optimal"},
                 {row.run_id, row.env, row.reward_mode, std::to_string(row.seed), format_double(row.mean),
                  format_double(row.std), format_double(row.iqm), format_double(row.pct_of_optimal)});
}

std::vector<std::uint8_t> encode_pgm(std::size_t rows, std::size_t cols, std::span<const double> values, double lo,
                                     double hi) {
  if (values.size() != rows * cols) throw ShapeError("PGM: value count does not match rows x cols");
  const std::string header = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const double span = hi - lo;
  for (double v : values) {
    const double t = span > 0.0 ? (v - lo) / span : 0.5;
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0)));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values,
               double lo, double hi) {
  write_file_bytes(path, encode_pgm(rows, cols, values, lo, hi));
}

}  // namespace ddtrl
