/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "mlim/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mlim/error.hpp"
#include "mlim/rng.hpp"

namespace mlim {

namespace {

constexpr std::array<std::string_view, kShapeCount> kShapeNames = {"circle", "square", "triangle"};
constexpr std::array<std::string_view, kColorCount> kColorNames = {
    "red", "green", "blue", "yellow", "purple", "orange", "white", "gray"};
constexpr std::array<std::string_view, kSizeCount> kSizeNames = {"small", "medium", "large"};

constexpr std::array<std::array<uint8_t, 3>, kColorCount> kColorRgb = {{
    {255, 0, 0},
    {0, 160, 0},
    {0, 0, 255},
    {255, 255, 0},
    {128, 0, 128},
    {255, 128, 0},
    {255, 255, 255},
    {128, 128, 128},
}};

template <typename E, size_t N>
E parse_enum(std::string_view name, const std::array<std::string_view, N>& names, const char* what) {
  for (size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<E>(i);
  }
  throw FormatError(std::string("unknown ") + what + ": " + std::string(name));
}

std::string item_file_name(const char* prefix, size_t index, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06zu%s.ppm", prefix, index, suffix);
  return buf;
}

}  // namespace

std::string_view name_of(ShapeKind s) { return kShapeNames[static_cast<size_t>(s)]; }
std::string_view name_of(Color c) { return kColorNames[static_cast<size_t>(c)]; }
std::string_view name_of(SizeClass s) { return kSizeNames[static_cast<size_t>(s)]; }
ShapeKind parse_shape(std::string_view name) { return parse_enum<ShapeKind>(name, kShapeNames, "shape"); }
Color parse_color(std::string_view name) { return parse_enum<Color>(name, kColorNames, "color"); }
SizeClass parse_size(std::string_view name) { return parse_enum<SizeClass>(name, kSizeNames, "size"); }

std::array<uint8_t, 3> rgb_of(Color c) { return kColorRgb[static_cast<size_t>(c)]; }

int radius_of(SizeClass s) {
  switch (s) {
    case SizeClass::kSmall:
      return 8;
    case SizeClass::kMedium:
      return 12;
    case SizeClass::kLarge:
      return 16;
  }
  return 8;
}

bool scene_is_valid(const SceneSpec& spec, int side) {
  const int r = radius_of(spec.size);
  return spec.fg_color != spec.bg_color && spec.center_x - r >= 0 && spec.center_y - r >= 0 &&
         spec.center_x + r <= side - 1 && spec.center_y + r <= side - 1;
}

void validate_scene(const SceneSpec& spec, int side) {
  if (spec.fg_color == spec.bg_color) {
    throw ConfigError("scene foreground and background colors are both " +
                      std::string(name_of(spec.fg_color)));
  }
  if (!scene_is_valid(spec, side)) {
    std::ostringstream os;
    os << "scene out of bounds: " << name_of(spec.size) << " " << name_of(spec.shape) << " at ("
       << spec.center_x << "," << spec.center_y << ") in a " << side << "x" << side << " image";
    throw ConfigError(os.str());
  }
}

bool shape_contains(const SceneSpec& spec, int x, int y) {
  const int r = radius_of(spec.size);
  const int dx = x - spec.center_x;
  const int dy = y - spec.center_y;
  switch (spec.shape) {
    case ShapeKind::kCircle:
      return dx * dx + dy * dy <= r * r;
    case ShapeKind::kSquare:
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case ShapeKind::kTriangle:
      // Apex at (cx, cy - r), base on row cy + r spanning [cx - r, cx + r].
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
  }
  return false;
}

ImageTensor::ImageTensor(int height, int width, double fill)
    : height_(height), width_(width),
      pixels_(Matrix::Constant(static_cast<Eigen::Index>(height) * width, 3, fill)) {}

ImageTensor ImageTensor::from_bytes(int height, int width, const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(height) * static_cast<size_t>(width) * 3) {
    throw ShapeError("image byte count does not match dimensions");
  }
  ImageTensor img(height, width);
  double* out = img.pixels_.data();
  for (size_t i = 0; i < rgb.size(); ++i) out[i] = static_cast<double>(rgb[i]) / 255.0;
  return img;
}

bool ImageTensor::operator==(const ImageTensor& other) const {
  return height_ == other.height_ && width_ == other.width_ && pixels_ == other.pixels_;
}

std::vector<uint8_t> render_scene_bytes(const SceneSpec& spec, int side) {
  validate_scene(spec, side);
  const auto fg = rgb_of(spec.fg_color);
  const auto bg = rgb_of(spec.bg_color);
  std::vector<uint8_t> out(static_cast<size_t>(side) * side * 3);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const auto& c = shape_contains(spec, x, y) ? fg : bg;
      const size_t at = (static_cast<size_t>(y) * side + x) * 3;
      out[at] = c[0];
      out[at + 1] = c[1];
      out[at + 2] = c[2];
    }
  }
  return out;
}

ImageTensor generate_scene(const SceneSpec& spec, int side) {
  return ImageTensor::from_bytes(side, side, render_scene_bytes(spec, side));
}

std::vector<uint8_t> to_bytes(const ImageTensor& image) {
  const Matrix& px = image.pixels();
  std::vector<uint8_t> out(static_cast<size_t>(px.size()));
  for (Eigen::Index i = 0; i < px.size(); ++i) {
    const double v = std::clamp(px.data()[i], 0.0, 1.0);
    out[static_cast<size_t>(i)] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocab::Vocab() {
  tokens_ = {"[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]", "a", "on", "background"};
  for (auto s : kSizeNames) tokens_.emplace_back(s);
  for (auto c : kColorNames) tokens_.emplace_back(c);
  for (auto s : kShapeNames) tokens_.emplace_back(s);
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

int Vocab::id(std::string_view token) const {
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  return kUnk;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

TokenSequence caption_of(const SceneSpec& spec) {
  const Vocab& v = Vocab::standard();
  return {v.id("a"),  v.id(name_of(spec.size)), v.id(name_of(spec.fg_color)), v.id(name_of(spec.shape)),
          v.id("on"), v.id("a"),                 v.id(name_of(spec.bg_color)), v.id("background")};
}

SceneSpec sample_scene(uint64_t seed, int side) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.shape = static_cast<ShapeKind>(rng.below(kShapeCount));
  spec.fg_color = static_cast<Color>(rng.below(kColorCount));
  do {
    spec.bg_color = static_cast<Color>(rng.below(kColorCount));
  } while (spec.bg_color == spec.fg_color);
  spec.size = static_cast<SizeClass>(rng.below(kSizeCount));
  if (2 * radius_of(spec.size) + 1 > side) throw ConfigError("image too small for the largest shape");
  do {
    spec.center_x = static_cast<int>(rng.below(static_cast<uint64_t>(side)));
    spec.center_y = static_cast<int>(rng.below(static_cast<uint64_t>(side)));
  } while (!scene_is_valid(spec, side));
  return spec;
}

std::vector<CorpusItem> sample_corpus(size_t n, uint64_t seed, int side) {
  if (n == 0) throw ConfigError("corpus size must be at least 1");
  std::vector<CorpusItem> items;
  items.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    CorpusItem item;
    item.spec = sample_scene(derive_seed(seed, static_cast<uint64_t>(Stream::kCorpus), i), side);
    item.tokens = caption_of(item.spec);
    item.image = item_file_name("", i, "");
    items.push_back(std::move(item));
  }
  return items;
}

nlohmann::json scene_to_json(const SceneSpec& spec) {
  return nlohmann::json{{"shape", name_of(spec.shape)},
                        {"fg_color", name_of(spec.fg_color)},
                        {"bg_color", name_of(spec.bg_color)},
                        {"size", name_of(spec.size)},
                        {"center", {spec.center_x, spec.center_y}},
                        {"seed", spec.seed}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    SceneSpec spec;
    spec.shape = parse_shape(j.at("shape").get<std::string>());
    spec.fg_color = parse_color(j.at("fg_color").get<std::string>());
    spec.bg_color = parse_color(j.at("bg_color").get<std::string>());
    spec.size = parse_size(j.at("size").get<std::string>());
    spec.center_x = j.at("center").at(0).get<int>();
    spec.center_y = j.at("center").at(1).get<int>();
    spec.seed = j.at("seed").get<uint64_t>();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed scene spec: ") + e.what());
  }
}

nlohmann::json item_to_json(const CorpusItem& item) {
  return nlohmann::json{{"image", item.image}, {"tokens", item.tokens}, {"spec", scene_to_json(item.spec)}};
}

CorpusItem item_from_json(const nlohmann::json& j) {
  try {
    CorpusItem item;
    item.image = j.at("image").get<std::string>();
    item.tokens = j.at("tokens").get<TokenSequence>();
    item.spec = scene_from_json(j.at("spec"));
    const int vocab = Vocab::standard().size();
    for (int id : item.tokens) {
      if (id < 0 || id >= vocab) throw FormatError("token id out of range in manifest: " + std::to_string(id));
    }
    return item;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed corpus item: ") + e.what());
  }
}

std::vector<CorpusItem> generate_corpus(size_t n, uint64_t seed, const std::filesystem::path& out_dir,
                                        int side) {
  auto items = sample_corpus(n, seed, side);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  std::ofstream manifest(out_dir / "manifest.jsonl", std::ios::binary | std::ios::trunc);
  if (!manifest) throw Error("cannot write corpus manifest in " + out_dir.string());
  for (const auto& item : items) {
    save_image(generate_scene(item.spec, side), out_dir / item.image);
    manifest << item_to_json(item).dump() << '\n';
  }
  if (!manifest) throw Error("failed writing " + (out_dir / "manifest.jsonl").string());
  return items;
}

std::vector<CorpusItem> load_manifest(const std::filesystem::path& corpus_dir) {
  const auto path = corpus_dir / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus manifest " + path.string());
  std::vector<CorpusItem> items;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      items.push_back(item_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (items.empty()) throw FormatError("empty corpus manifest " + path.string());
  return items;
}

// ---------------------------------------------------------------------------

int match_label(const SceneSpec& a, const SceneSpec& b) {
  return a.shape == b.shape && a.fg_color == b.fg_color ? 1 : 0;
}

std::vector<PairExample> generate_pairs(size_t n, uint64_t seed, double match_fraction, int side) {
  if (!(match_fraction > 0.0 && match_fraction < 1.0)) {
    throw ConfigError("match_fraction must lie strictly between 0 and 1");
  }
  const auto n_match = static_cast<size_t>(std::llround(static_cast<double>(n) * match_fraction));
  std::vector<int> labels(n, 0);
  for (size_t i = 0; i < n_match && i < n; ++i) labels[i] = 1;
  Rng order(derive_seed(seed, Stream::kPairs));
  order.shuffle(std::span<int>(labels));

  std::vector<PairExample> pairs;
  pairs.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    const uint64_t pair_seed = derive_seed(seed, static_cast<uint64_t>(Stream::kPairs), i + 1);
    Rng rng(pair_seed);
    PairExample pair;
    pair.label = labels[i];
    pair.a.spec = sample_scene(rng.next_u64(), side);
    if (pair.label == 1) {
      SceneSpec b;
      do {
        b = sample_scene(rng.next_u64(), side);
        b.shape = pair.a.spec.shape;
        b.fg_color = pair.a.spec.fg_color;
      } while (!scene_is_valid(b, side) ||
               (b.size == pair.a.spec.size && b.center_x == pair.a.spec.center_x &&
                b.center_y == pair.a.spec.center_y && b.bg_color == pair.a.spec.bg_color));
      pair.b.spec = b;
    } else {
      do {
        pair.b.spec = sample_scene(rng.next_u64(), side);
      } while (match_label(pair.a.spec, pair.b.spec) == 1);
    }
    pair.a.tokens = caption_of(pair.a.spec);
    pair.b.tokens = caption_of(pair.b.spec);
    pair.a.image = item_file_name("pair_", i, "_a");
    pair.b.image = item_file_name("pair_", i, "_b");
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void write_pairs(const std::vector<PairExample>& pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write pair file " + path.string());
  for (const auto& p : pairs) {
    out << nlohmann::json{{"a", item_to_json(p.a)}, {"b", item_to_json(p.b)}, {"label", p.label}}.dump()
        << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<PairExample> read_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open pair file " + path.string());
  std::vector<PairExample> pairs;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PairExample p;
      p.a = item_from_json(j.at("a"));
      p.b = item_from_json(j.at("b"));
      p.label = j.at("label").get<int>();
      if (p.label != 0 && p.label != 1) throw FormatError("pair label must be 0 or 1");
      pairs.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_header_token(std::istream& in, const std::filesystem::path& path) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  throw FormatError("truncated PPM header in " + path.string());
}

int parse_header_int(const std::string& tok, const std::filesystem::path& path) {
  int v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw FormatError("malformed PPM header value '" + tok + "' in " + path.string());
    v = v * 10 + (c - '0');
    if (v > 1 << 20) throw FormatError("PPM dimension too large in " + path.string());
  }
  return v;
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  if (next_header_token(in, path) != "P6") throw FormatError("not a binary P6 PPM: " + path.string());
  const int width = parse_header_int(next_header_token(in, path), path);
  const int height = parse_header_int(next_header_token(in, path), path);
  const int maxval = parse_header_int(next_header_token(in, path), path);
  if (maxval != 255) throw FormatError("unsupported PPM maxval " + std::to_string(maxval) + " in " + path.string());
  if (width <= 0 || height <= 0) throw FormatError("empty PPM image " + path.string());
  std::vector<uint8_t> bytes(static_cast<size_t>(width) * static_cast<size_t>(height) * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<size_t>(in.gcount()) != bytes.size()) {
    throw FormatError("truncated PPM payload in " + path.string() + ": expected " +
                      std::to_string(bytes.size()) + " bytes, got " + std::to_string(in.gcount()));
  }
  return ImageTensor::from_bytes(height, width, bytes);
}

void save_image(const ImageTensor& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write image " + path.string());
  out << "P6\n" << image.width() << " " << image.height() << "\n255\n";
  const auto bytes = to_bytes(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing image " + path.string());
}

}  // namespace mlim
