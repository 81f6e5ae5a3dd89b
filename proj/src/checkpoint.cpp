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

#include "mlim/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "mlim/error.hpp"

namespace mlim {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;

constexpr const char* kMoment1 = "adam.m/";
constexpr const char* kMoment2 = "adam.v/";

size_t element_size(Dtype d) { return d == Dtype::kF32 ? 4 : 8; }

void append_tensor(std::vector<char>& payload, const Matrix& m, Dtype dtype) {
  const size_t n = static_cast<size_t>(m.size());
  const size_t at = payload.size();
  payload.resize(at + n * element_size(dtype));
  if (dtype == Dtype::kF32) {
    for (size_t i = 0; i < n; ++i) {
      const auto f = static_cast<float>(m.data()[i]);
      std::memcpy(payload.data() + at + i * 4, &f, 4);
    }
  } else {
    std::memcpy(payload.data() + at, m.data(), n * 8);
  }
}

}  // namespace

void save_checkpoint(const ParamStore& params, const AdamState* optimizer, const json& config,
                     const std::filesystem::path& path, Dtype dtype) {
  std::vector<char> payload;
  json tensors = json::array();
  auto add = [&](const std::string& name, const Matrix& m) {
    const size_t offset = payload.size();
    append_tensor(payload, m, dtype);
    tensors.push_back({{"name", name},
                       {"shape", {m.rows(), m.cols()}},
                       {"offset", offset},
                       {"nbytes", payload.size() - offset}});
  };
  for (size_t i = 0; i < params.size(); ++i) add(params.names()[i], params.value(i));
  if (optimizer != nullptr) {
    for (size_t i = 0; i < optimizer->m.size(); ++i) add(kMoment1 + optimizer->m.names()[i], optimizer->m.value(i));
    for (size_t i = 0; i < optimizer->v.size(); ++i) add(kMoment2 + optimizer->v.names()[i], optimizer->v.value(i));
  }
  json header = {{"format_version", kCheckpointVersion},
                 {"dtype", dtype == Dtype::kF32 ? "f32" : "f64"},
                 {"tensors", tensors},
                 {"payload_bytes", payload.size()},
                 {"optimizer_step", optimizer != nullptr ? json(optimizer->step) : json(nullptr)},
                 {"config", config}};
  const std::string text = header.dump();
  const uint64_t header_len = text.size();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 8) throw FormatError(where + " is truncated (no header length)");
  uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data(), 8);
  if (header_len > bytes.size() - 8) throw FormatError(where + " is truncated inside the header");

  json header;
  try {
    header = json::parse(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const json::exception& e) {
    throw FormatError(where + " has a corrupt header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw FormatError(where + " has format version " + std::to_string(version) + ", expected " +
                        std::to_string(kCheckpointVersion));
    }
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype == "f32") {
      ckpt.dtype = Dtype::kF32;
    } else if (dtype == "f64") {
      ckpt.dtype = Dtype::kF64;
    } else {
      throw FormatError(where + " has unsupported dtype " + dtype);
    }
    const size_t payload_bytes = header.at("payload_bytes").get<size_t>();
    const size_t payload_start = 8 + header_len;
    if (bytes.size() - payload_start != payload_bytes) {
      throw FormatError(where + " payload is " + std::to_string(bytes.size() - payload_start) +
                        " bytes, header declares " + std::to_string(payload_bytes) + " (truncated or corrupt)");
    }
    const char* payload = bytes.data() + payload_start;
    const size_t es = element_size(ckpt.dtype);

    ParamStore m, v;
    size_t expected_offset = 0;
    for (const auto& t : header.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const size_t offset = t.at("offset").get<size_t>();
      const size_t nbytes = t.at("nbytes").get<size_t>();
      if (rows < 0 || cols < 0 || offset != expected_offset ||
          nbytes != static_cast<size_t>(rows * cols) * es || offset + nbytes > payload_bytes) {
        throw FormatError(where + " has inconsistent offsets for tensor " + name);
      }
      expected_offset += nbytes;
      Matrix value(rows, cols);
      if (ckpt.dtype == Dtype::kF32) {
        for (Eigen::Index i = 0; i < value.size(); ++i) {
          float f;
          std::memcpy(&f, payload + offset + static_cast<size_t>(i) * 4, 4);
          value.data()[i] = f;
        }
      } else {
        std::memcpy(value.data(), payload + offset, nbytes);
      }
      if (name.starts_with(kMoment1)) {
        m.add(name.substr(std::strlen(kMoment1)), std::move(value));
      } else if (name.starts_with(kMoment2)) {
        v.add(name.substr(std::strlen(kMoment2)), std::move(value));
      } else {
        ckpt.params.add(name, std::move(value));
      }
    }
    if (expected_offset != payload_bytes) throw FormatError(where + " tensors do not tile the payload");
    if (!header.at("optimizer_step").is_null()) {
      if (!m.same_layout(v)) throw FormatError(where + " has mismatched optimizer moments");
      ckpt.optimizer = AdamState{std::move(m), std::move(v), header.at("optimizer_step").get<int64_t>()};
    }
    ckpt.config = header.at("config");
  } catch (const json::exception& e) {
    throw FormatError(where + " header is missing fields: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(where + ": " + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ParamStore& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  for (size_t i = 0; i < expected.size(); ++i) {
    const std::string& name = expected.names()[i];
    if (!ckpt.params.contains(name)) throw ShapeError("checkpoint " + path.string() + " lacks parameter " + name);
    const Matrix& got = ckpt.params.at(name);
    const Matrix& want = expected.value(i);
    if (got.rows() != want.rows() || got.cols() != want.cols()) {
      throw ShapeError("checkpoint parameter " + name + " has shape " + std::to_string(got.rows()) + "x" +
                       std::to_string(got.cols()) + ", model expects " + std::to_string(want.rows()) + "x" +
                       std::to_string(want.cols()));
    }
  }
  if (ckpt.params.size() != expected.size()) {
    throw ShapeError("checkpoint " + path.string() + " has parameters the model does not define");
  }
  return ckpt;
}

}  // namespace mlim
