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

#include "mlim/params.hpp"

#include <cstring>

#include "mlim/error.hpp"

namespace mlim {

Matrix& ParamStore::add(const std::string& name, Matrix value) {
  if (index_.count(name) != 0) {
    throw ConfigError("duplicate parameter name: " + name);
  }
  index_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

bool ParamStore::contains(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

const Matrix& ParamStore::at(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return values_[it->second];
}

Matrix& ParamStore::at(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return values_[it->second];
}

size_t ParamStore::scalar_count(std::string_view prefix) const {
  size_t total = 0;
  for (size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].starts_with(prefix)) total += static_cast<size_t>(values_[i].size());
  }
  return total;
}

ParamStore ParamStore::zeros_like(const std::function<bool(const std::string&)>& keep) const {
  ParamStore out;
  for (size_t i = 0; i < names_.size(); ++i) {
    if (keep && !keep(names_[i])) continue;
    out.add(names_[i], Matrix::Zero(values_[i].rows(), values_[i].cols()));
  }
  return out;
}

void ParamStore::set_zero() {
  for (auto& v : values_) v.setZero();
}

void ParamStore::add_scaled(const ParamStore& other, double scale) {
  for (size_t i = 0; i < names_.size(); ++i) {
    values_[i] += scale * other.at(names_[i]);
  }
}

void ParamStore::scale(double factor) {
  for (auto& v : values_) v *= factor;
}

double ParamStore::squared_norm() const {
  double total = 0.0;
  for (const auto& v : values_) total += v.squaredNorm();
  return total;
}

bool ParamStore::all_finite() const {
  for (const auto& v : values_) {
    if (!v.allFinite()) return false;
  }
  return true;
}

namespace {

void fnv_bytes(uint64_t& h, const void* data, size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
}

}  // namespace

uint64_t ParamStore::fingerprint() const {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (size_t i = 0; i < names_.size(); ++i) {
    fnv_bytes(h, names_[i].data(), names_[i].size());
    const int64_t shape[2] = {values_[i].rows(), values_[i].cols()};
    fnv_bytes(h, shape, sizeof(shape));
    fnv_bytes(h, values_[i].data(), sizeof(double) * static_cast<size_t>(values_[i].size()));
  }
  return h;
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (names_ != other.names_) return false;
  for (size_t i = 0; i < names_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() ||
        values_[i].cols() != other.values_[i].cols()) {
      return false;
    }
  }
  return true;
}

}  // namespace mlim
