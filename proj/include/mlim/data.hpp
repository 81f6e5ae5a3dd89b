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

// Synthetic single-object image/caption corpus, the closed caption
// vocabulary, the pair-matching downstream dataset and their file formats.

#ifndef MLIM_DATA_HPP_
#define MLIM_DATA_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "mlim/params.hpp"
#include <nlohmann/json.hpp>

namespace mlim {

inline constexpr int kImageSide = 64;
inline constexpr int kMaxTextLen = 16;

enum class ShapeKind { kCircle, kSquare, kTriangle };
enum class Color { kRed, kGreen, kBlue, kYellow, kPurple, kOrange, kWhite, kGray };
enum class SizeClass { kSmall, kMedium, kLarge };

inline constexpr int kShapeCount = 3;
inline constexpr int kColorCount = 8;
inline constexpr int kSizeCount = 3;

std::string_view name_of(ShapeKind s);
std::string_view name_of(Color c);
std::string_view name_of(SizeClass s);
ShapeKind parse_shape(std::string_view name);
Color parse_color(std::string_view name);
SizeClass parse_size(std::string_view name);

std::array<uint8_t, 3> rgb_of(Color c);
// Radius in pixels: small 8, medium 12, large 16.
int radius_of(SizeClass s);

struct SceneSpec {
  ShapeKind shape = ShapeKind::kCircle;
  Color fg_color = Color::kRed;
  Color bg_color = Color::kWhite;
  SizeClass size = SizeClass::kSmall;
  int center_x = 0;
  int center_y = 0;
  uint64_t seed = 0;

  bool operator==(const SceneSpec&) const = default;
};

// Throws ConfigError when the shape leaves the image or fg == bg.
void validate_scene(const SceneSpec& spec, int side = kImageSide);
bool scene_is_valid(const SceneSpec& spec, int side = kImageSide);
// Pixel membership, tested at integer pixel coordinates.
bool shape_contains(const SceneSpec& spec, int x, int y);

// H x W x 3 intensities in [0, 1], stored as H*W rows (row-major pixels) of
// 3 channels. That layout is what the image embedder consumes directly.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(int height, int width, double fill = 0.0);

  static ImageTensor from_bytes(int height, int width, const std::vector<uint8_t>& rgb);

  int height() const { return height_; }
  int width() const { return width_; }
  double& at(int y, int x, int c) { return pixels_(static_cast<Eigen::Index>(y) * width_ + x, c); }
  double at(int y, int x, int c) const {
    return pixels_(static_cast<Eigen::Index>(y) * width_ + x, c);
  }
  const Matrix& pixels() const { return pixels_; }
  Matrix& pixels() { return pixels_; }

  bool operator==(const ImageTensor& other) const;

 private:
  int height_ = 0;
  int width_ = 0;
  Matrix pixels_;
};

ImageTensor generate_scene(const SceneSpec& spec, int side = kImageSide);
std::vector<uint8_t> render_scene_bytes(const SceneSpec& spec, int side = kImageSide);

using TokenSequence = std::vector<int>;

// Closed vocabulary: five specials at fixed ids followed by the caption words.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kUnk = 4;

  static const Vocab& standard();

  int size() const { return static_cast<int>(tokens_.size()); }
  // Unknown words map to [UNK].
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  static bool is_special(int id) { return id >= 0 && id <= kUnk; }

 private:
  Vocab();
  std::vector<std::string> tokens_;
};

// "a <size> <fg_color> <shape> on a <bg_color> background"
TokenSequence caption_of(const SceneSpec& spec);

// Uniform scene sampling; centers that put the shape out of bounds are
// rejected and redrawn.
SceneSpec sample_scene(uint64_t seed, int side = kImageSide);

struct CorpusItem {
  std::string image;  // file name relative to the corpus directory
  TokenSequence tokens;
  SceneSpec spec;
};

// In-memory corpus; item i is a pure function of (seed, i).
std::vector<CorpusItem> sample_corpus(size_t n, uint64_t seed, int side = kImageSide);

// Writes n P6 images and manifest.jsonl into out_dir and returns the items.
std::vector<CorpusItem> generate_corpus(size_t n, uint64_t seed, const std::filesystem::path& out_dir,
                                        int side = kImageSide);
std::vector<CorpusItem> load_manifest(const std::filesystem::path& corpus_dir);

nlohmann::json scene_to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json item_to_json(const CorpusItem& item);
CorpusItem item_from_json(const nlohmann::json& j);

struct PairExample {
  CorpusItem a;
  CorpusItem b;
  int label = 0;  // 1 = match
};

// Match iff same shape and same foreground color.
int match_label(const SceneSpec& a, const SceneSpec& b);

// round(n * match_fraction) matched pairs in shuffled order. Matched pairs
// differ in at least one of size, center and background; mismatched pairs
// differ in shape or foreground color.
std::vector<PairExample> generate_pairs(size_t n, uint64_t seed, double match_fraction,
                                        int side = kImageSide);

void write_pairs(const std::vector<PairExample>& pairs, const std::filesystem::path& path);
std::vector<PairExample> read_pairs(const std::filesystem::path& path);

// Binary PPM (P6, maxval 255). Loading maps bytes to [0, 1] by v / 255.
ImageTensor load_image(const std::filesystem::path& path);
void save_image(const ImageTensor& image, const std::filesystem::path& path);
std::vector<uint8_t> to_bytes(const ImageTensor& image);

}  // namespace mlim

#endif  // MLIM_DATA_HPP_
